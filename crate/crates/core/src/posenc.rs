//! Positional-encoding input channels.
//!
//! Two planes are appended to the normalized intensity channel:
//! `I1(i, j) = lambda * i / (W - 1)` along x and `I2(i, j) = lambda * j / (H - 1)`
//! along y, so both span `[0, lambda]`. The planes depend only on
//! `(W, H, lambda)`: they are anchored to the image frame, not its content,
//! and are never normalized or degraded.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeConfig {
    pub lambda: f64,
    pub enabled: bool,
}

impl PeConfig {
    pub const OFF: PeConfig = PeConfig {
        lambda: 0.0,
        enabled: false,
    };

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(
                "pe",
                format!("lambda must be positive, got {lambda}"),
            ));
        }
        Ok(PeConfig {
            lambda,
            enabled: true,
        })
    }

    /// Input channels a network needs for this setting.
    pub fn channels(&self) -> usize {
        if self.enabled {
            3
        } else {
            1
        }
    }

    /// `off` or the lambda value, as used in config files and CSV rows.
    pub fn label(&self) -> String {
        if self.enabled {
            format!("{}", self.lambda)
        } else {
            "off".to_string()
        }
    }
}

impl std::str::FromStr for PeConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" | "none" => Ok(PeConfig::OFF),
            v => {
                let l: f64 = v.parse().map_err(|_| {
                    Error::invalid("pe", format!("expected `off` or a number, got `{v}`"))
                })?;
                PeConfig::with_lambda(l)
            }
        }
    }
}

/// The x- and y-coordinate planes, each `(1, 1, H, W)`.
pub fn encode_position(width: usize, height: usize, lambda: f64) -> Result<(Tensor, Tensor)> {
    if width < 2 || height < 2 {
        return Err(Error::invalid(
            "encode_position",
            format!("extent must be at least 2x2, got {width}x{height}"),
        ));
    }
    let xs: Vec<f64> = (0..width)
        .map(|i| lambda * i as f64 / (width - 1) as f64)
        .collect();
    let mut i1 = Vec::with_capacity(width * height);
    let mut i2 = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = lambda * j as f64 / (height - 1) as f64;
        i1.extend_from_slice(&xs);
        i2.extend(std::iter::repeat_n(y, width));
    }
    let shape = Shape::new(1, 1, height, width);
    Ok((Tensor::from_parts(shape, i1), Tensor::from_parts(shape, i2)))
}

/// Builds the network input from a `(N, 1, H, W)` batch of normalized
/// intensities: passthrough when PE is off, `[I0, I1, I2]` otherwise.
pub fn augment(image: &Tensor, cfg: &PeConfig) -> Result<Tensor> {
    let s = image.shape();
    if s.c() != 1 {
        return Err(Error::shape(
            "augment",
            format!("expected one channel, got {s}"),
        ));
    }
    if !cfg.enabled {
        return Ok(image.clone());
    }
    let (i1, i2) = encode_position(s.w(), s.h(), cfg.lambda)?;
    let plane = s.plane();
    let mut out = Vec::with_capacity(3 * s.numel());
    for n in 0..s.n() {
        out.extend_from_slice(&image.data()[n * plane..(n + 1) * plane]);
        out.extend_from_slice(i1.data());
        out.extend_from_slice(i2.data());
    }
    Ok(Tensor::from_parts(Shape::new(s.n(), 3, s.h(), s.w()), out))
}
