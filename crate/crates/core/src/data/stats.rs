//! Training-set statistics: intensity normalization, the averaged-mask
//! baseline and intensity histograms.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::{Image, Mask, Sample, NUM_CLASSES};

/// Mean and standard deviation of every training pixel.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn compute(train: &[Sample]) -> Result<Self> {
        let count: usize = train.iter().map(|s| s.image.data.len()).sum();
        if count == 0 {
            return Err(Error::invalid("norm_stats", "empty training split"));
        }
        let n = count as f64;
        let mean = train.iter().flat_map(|s| &s.image.data).sum::<f64>() / n;
        let var = train
            .iter()
            .flat_map(|s| &s.image.data)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        if !(var > 0.0) {
            return Err(Error::invalid(
                "norm_stats",
                "training pixels have zero variance",
            ));
        }
        Ok(NormStats {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn normalize(&self, img: &Image) -> Image {
        Image {
            data: img
                .data
                .iter()
                .map(|v| (v - self.mean) / self.std)
                .collect(),
            ..*img
        }
    }
}

/// Most frequent training class at every pixel, ties to the lower class.
pub fn averaged_mask(train: &[Sample]) -> Result<Mask> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("averaged_mask", "empty training split"))?;
    let (w, h) = (first.mask.width, first.mask.height);
    let mut counts = vec![[0u32; NUM_CLASSES]; w * h];
    for s in train {
        if !s.mask.same_extent(&first.mask) {
            return Err(Error::shape(
                "averaged_mask",
                format!("sample `{}` has a different extent", s.id),
            ));
        }
        for (c, &m) in counts.iter_mut().zip(&s.mask.data) {
            c[m as usize] += 1;
        }
    }
    let data = counts
        .iter()
        .map(|c| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if c[k] > c[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Mask::new(w, h, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]` of the pixels; the top edge is
    /// closed. A constant input lands entirely in the first bin.
    pub fn of<'a>(pixels: impl Iterator<Item = &'a f64> + Clone, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("histogram", "need at least one bin"));
        }
        let (lo, hi) = pixels
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let mut counts = vec![0u64; bins];
        if lo > hi {
            return Ok(Histogram {
                lo: 0.0,
                hi: 0.0,
                counts,
            });
        }
        let width = (hi - lo) / bins as f64;
        for &v in pixels {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (a, b) = self.edges(i);
            let _ = writeln!(s, "{i},{a},{b},{c}");
        }
        s
    }

    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, m) = (640.0, 360.0, 40.0);
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bw = (w - 2.0 * m) / self.counts.len() as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
            w / 2.0,
            crate::experiments::plot::escape(title)
        );
        for (i, &c) in self.counts.iter().enumerate() {
            let bh = (h - 2.0 * m) * c as f64 / max;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
                m + bw * i as f64,
                h - m - bh,
                bw,
                bh
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{m}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            h - m + 15.0,
            self.lo,
            w - m,
            h - m + 15.0,
            self.hi
        );
        s.push_str("</svg>\n");
        s
    }
}
