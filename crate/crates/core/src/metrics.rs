//! Dice overlap and prediction.

use crate::error::{Error, Result};
use crate::image::{Mask, NUM_CLASSES};
use crate::models::Network;
use crate::pipeline::Prepared;
use crate::tensor::Tensor;

/// Dice of a class absent from both prediction and ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptyClass {
    /// Perfect agreement on absence: Dice 1.
    #[default]
    One,
    /// Leave the class out of the foreground mean.
    Skip,
}

/// Dice of one prediction against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceEntry {
    /// Classes `1..K`; `None` for a skipped empty class.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the non-skipped foreground classes.
    pub mean: f64,
}

/// Per-class Dice `2|P∩G| / (|P|+|G|)` over foreground classes `1..K`.
pub fn dice(pred: &Mask, gt: &Mask, classes: usize, empty: EmptyClass) -> Result<DiceEntry> {
    if !pred.same_extent(gt) {
        return Err(Error::shape(
            "dice",
            format!(
                "{}x{} vs {}x{}",
                pred.width, pred.height, gt.width, gt.height
            ),
        ));
    }
    let mut inter = vec![0usize; classes];
    let mut p_count = vec![0usize; classes];
    let mut g_count = vec![0usize; classes];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p as usize, g as usize);
        if p >= classes || g >= classes {
            return Err(Error::invalid(
                "dice",
                format!("class index {} >= {classes}", p.max(g)),
            ));
        }
        p_count[p] += 1;
        g_count[g] += 1;
        if p == g {
            inter[p] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (1..classes)
        .map(|c| {
            let denom = p_count[c] + g_count[c];
            if denom == 0 {
                match empty {
                    EmptyClass::One => Some(1.0),
                    EmptyClass::Skip => None,
                }
            } else {
                Some(2.0 * inter[c] as f64 / denom as f64)
            }
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(DiceEntry { per_class, mean })
}

/// Dice of a set of predictions: per-sample entries and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceReport {
    pub samples: Vec<DiceEntry>,
    /// Mean over samples of each foreground class (skipped entries ignored).
    pub per_class: Vec<f64>,
    /// Mean over samples of the per-sample foreground mean.
    pub mean: f64,
}

impl DiceReport {
    pub fn evaluate(preds: &[Mask], gts: &[Mask], empty: EmptyClass) -> Result<Self> {
        if preds.len() != gts.len() || preds.is_empty() {
            return Err(Error::invalid(
                "dice",
                format!(
                    "{} predictions for {} ground truths",
                    preds.len(),
                    gts.len()
                ),
            ));
        }
        let samples = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| dice(p, g, NUM_CLASSES, empty))
            .collect::<Result<Vec<_>>>()?;
        let per_class = (0..NUM_CLASSES - 1)
            .map(|c| {
                let v: Vec<f64> = samples.iter().filter_map(|s| s.per_class[c]).collect();
                if v.is_empty() {
                    1.0
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect();
        let mean = samples.iter().map(|s| s.mean).sum::<f64>() / samples.len() as f64;
        Ok(DiceReport {
            samples,
            per_class,
            mean,
        })
    }
}

/// Per-pixel argmax over the class axis, ties to the lowest class.
pub fn argmax_masks(logits: &Tensor) -> Vec<Mask> {
    let s = logits.shape();
    let (k, plane) = (s.c(), s.plane());
    let d = logits.data();
    (0..s.n())
        .map(|n| {
            let data = (0..plane)
                .map(|px| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(n * k + c) * plane + px] > d[(n * k + best) * plane + px] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            Mask {
                width: s.w(),
                height: s.h(),
                data,
            }
        })
        .collect()
}

/// Largest batch pushed through the network at once during inference.
pub const EVAL_CHUNK: usize = 16;

/// Eval-mode segmentation of every input.
pub fn predict(net: &mut Network, inputs: &Tensor) -> Result<Vec<Mask>> {
    predict_chunked(net, inputs, EVAL_CHUNK)
}

pub fn predict_chunked(net: &mut Network, inputs: &Tensor, chunk: usize) -> Result<Vec<Mask>> {
    let n = inputs.shape().n();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let logits = net.infer(&inputs.slice_batch(start..end)?)?;
        out.extend(argmax_masks(&logits));
        start = end;
    }
    Ok(out)
}

/// Anything that segments prepared inputs; lets fixed baselines share the
/// evaluation path of trained networks.
pub trait Segmenter {
    fn segment(&mut self, data: &Prepared) -> Result<Vec<Mask>>;
}

impl Segmenter for Network {
    fn segment(&mut self, data: &Prepared) -> Result<Vec<Mask>> {
        predict(self, &data.inputs)
    }
}

/// Predicts the same mask for every input.
pub struct ConstantMask(pub Mask);

impl Segmenter for ConstantMask {
    fn segment(&mut self, data: &Prepared) -> Result<Vec<Mask>> {
        Ok(vec![self.0.clone(); data.len()])
    }
}

pub fn evaluate(
    model: &mut dyn Segmenter,
    data: &Prepared,
    empty: EmptyClass,
) -> Result<DiceReport> {
    let preds = model.segment(data)?;
    DiceReport::evaluate(&preds, &data.masks, empty)
}
