//! Datasets: PGM files, JSON-lines manifests, normalization statistics,
//! the synthetic generator and training-set summaries.

mod manifest;
pub mod pgm;
mod stats;
mod synth;

pub use manifest::{Dataset, DatasetManifest, ManifestEntry, Split};
pub use pgm::{read_mask, read_pgm, write_mask, write_pgm, BitDepth};
pub use stats::{averaged_mask, Histogram, NormStats};
pub use synth::{Appearance, SynthConfig};
