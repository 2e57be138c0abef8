//! Turns raw samples into network inputs: degrade the raw intensities,
//! normalize with training statistics, then append positional channels.

use crate::data::NormStats;
use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::image::{Mask, Sample};
use crate::posenc::{augment, PeConfig};
use crate::tensor::{Shape, Tensor};

/// Network-ready inputs `(N, C, H, W)` with their ground-truth masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub inputs: Tensor,
    pub masks: Vec<Mask>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Inputs and flattened targets of the samples at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<u8>) {
        let s = self.inputs.shape();
        let per = s.c() * s.plane();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut targets = Vec::with_capacity(indices.len() * s.plane());
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
            targets.extend_from_slice(&self.masks[i].data);
        }
        (
            Tensor::from_parts(Shape::new(indices.len(), s.c(), s.h(), s.w()), data),
            targets,
        )
    }
}

/// Prepares `samples`. When `degradation` is given, sample `i` is degraded
/// with the noise stream of `(seed, i)` and its mask transformed to match.
pub fn prepare(
    samples: &[Sample],
    stats: &NormStats,
    pe: &PeConfig,
    degradation: Option<(&DegradationSpec, u64)>,
) -> Result<Prepared> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("prepare", "no samples"))?;
    let (w, h) = (first.image.width, first.image.height);
    let mut data = Vec::with_capacity(samples.len() * w * h);
    let mut masks = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.image.width != w || s.image.height != h {
            return Err(Error::shape(
                "prepare",
                format!("sample `{}` differs in extent", s.id),
            ));
        }
        let (img, mask) = match degradation {
            Some((spec, seed)) => (
                spec.apply(&s.image, seed, i as u64)?,
                spec.apply_mask(&s.mask)?,
            ),
            None => (s.image.clone(), s.mask.clone()),
        };
        data.extend(stats.normalize(&img).data);
        masks.push(mask);
    }
    let intensity = Tensor::from_parts(Shape::new(samples.len(), 1, h, w), data);
    Ok(Prepared {
        inputs: augment(&intensity, pe)?,
        masks,
    })
}
