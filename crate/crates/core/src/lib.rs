//! A small, self-contained CNN segmentation lab.
//!
//! The crate bundles a reverse-mode autodiff engine over 4-D tensors, the
//! layers a U-net needs, positional-encoding input channels, synthetic test
//! degradations, dataset handling, training and the experiment drivers that
//! compare networks with and without positional channels.

pub mod data;
pub mod degrade;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod posenc;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
