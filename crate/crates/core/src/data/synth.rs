//! Synthetic position-anchored segmentation data.
//!
//! Each image has a noisy background, two elliptical organs jittered around
//! a left and a right anchor (classes 1 and 2) and a small dim disc near
//! a third anchor (class 3). With [`Appearance::Identical`] the two organs
//! share one intensity distribution, so only their absolute position tells
//! them apart; [`Appearance::Distinct`] gives the right organ a darker fill.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::pgm::{write_mask, write_pgm, BitDepth};
use crate::error::{Error, Result};
use crate::image::{Image, Mask, Sample};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Appearance {
    #[default]
    Identical,
    Distinct,
}

impl std::str::FromStr for Appearance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identical" => Ok(Appearance::Identical),
            "distinct" => Ok(Appearance::Distinct),
            other => Err(Error::invalid(
                "appearance",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Centres of the class-1 (left) and class-2 (right) organs.
    pub anchors: [(f64, f64); 2],
    /// Centre of the class-3 disc.
    pub disc_anchor: (f64, f64),
    pub jitter: f64,
    /// Range of the organ semi-axes, pixels.
    pub organ_radius: (f64, f64),
    pub disc_radius: f64,
    pub appearance: Appearance,
    pub background_level: f64,
    pub organ_level: f64,
    /// Fill of the class-2 organ in `distinct` mode.
    pub distinct_level: f64,
    pub disc_level: f64,
    pub pixel_noise: f64,
    pub texture_amplitude: f64,
    /// Peak amplitude of the smooth background bumps; 0 leaves the
    /// background flat.
    pub clutter: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            anchors: [(20.0, 32.0), (44.0, 32.0)],
            disc_anchor: (32.0, 10.0),
            jitter: 3.0,
            organ_radius: (7.0, 9.0),
            disc_radius: 4.0,
            appearance: Appearance::Identical,
            background_level: 0.2,
            organ_level: 0.7,
            distinct_level: 0.45,
            disc_level: 0.6,
            pixel_noise: 0.02,
            texture_amplitude: 0.04,
            clutter: 0.0,
            train: 200,
            val: 40,
            test: 80,
            seed: 0,
        }
    }
}

const SYNTH_TAG: u64 = 0x5359_4e54;
const CLUTTER_TAG: u64 = 0x434c_5554;
const CLUTTER_BUMPS: usize = 6;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        let inside = |(x, y): (f64, f64), r: f64| {
            let reach = r + self.jitter;
            x - reach >= 0.0 && x + reach <= w - 1.0 && y - reach >= 0.0 && y + reach <= h - 1.0
        };
        for a in self.anchors {
            if !inside(a, self.organ_radius.1) {
                return Err(Error::invalid(
                    "synth",
                    format!("organ anchor {a:?} +/- jitter and radius leaves the {w}x{h} frame"),
                ));
            }
        }
        if !inside(self.disc_anchor, self.disc_radius) {
            return Err(Error::invalid(
                "synth",
                format!(
                    "disc anchor {:?} +/- jitter and radius leaves the frame",
                    self.disc_anchor
                ),
            ));
        }
        if self.organ_radius.0 <= 0.0 || self.organ_radius.0 > self.organ_radius.1 {
            return Err(Error::invalid(
                "synth",
                "organ radius range must be positive and ordered",
            ));
        }
        if self.train == 0 {
            return Err(Error::invalid("synth", "need at least one training sample"));
        }
        Ok(())
    }

    fn jittered(&self, anchor: (f64, f64), rng: &mut SplitMix64) -> (f64, f64) {
        let r = self.jitter * rng.uniform().sqrt();
        let t = std::f64::consts::TAU * rng.uniform();
        (anchor.0 + r * t.cos(), anchor.1 + r * t.sin())
    }

    /// Adds Gaussian bumps of random sign, width and position to the
    /// background.
    fn add_clutter(&self, img: &mut Image, split: Split, index: usize) {
        let mut rng = SplitMix64::derive(
            self.seed,
            &[SYNTH_TAG, split as u64, index as u64, CLUTTER_TAG],
        );
        let (w, h) = (img.width, img.height);
        for _ in 0..CLUTTER_BUMPS {
            let (cx, cy) = (rng.uniform() * w as f64, rng.uniform() * h as f64);
            let s = rng.uniform_range(3.0, 8.0);
            let a = self.clutter * rng.uniform_range(-1.0, 1.0);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let v = img.get(x, y) + a * (-d2 / (2.0 * s * s)).exp();
                    img.set(x, y, v);
                }
            }
        }
    }

    /// Sample `index` of `split`; each sample has its own random stream.
    pub fn sample(&self, split: Split, index: usize) -> Sample {
        let mut rng = SplitMix64::derive(self.seed, &[SYNTH_TAG, split as u64, index as u64]);
        let (w, h) = (self.width, self.height);
        let mut img = Image::filled(w, h, self.background_level);
        if self.clutter > 0.0 {
            self.add_clutter(&mut img, split, index);
        }
        let mut mask = Mask::background(w, h);

        let levels = match self.appearance {
            Appearance::Identical => [self.organ_level, self.organ_level],
            Appearance::Distinct => [self.organ_level, self.distinct_level],
        };
        for (k, &anchor) in self.anchors.iter().enumerate() {
            let (cx, cy) = self.jittered(anchor, &mut rng);
            let rx = rng.uniform_range(self.organ_radius.0, self.organ_radius.1);
            let ry = rng.uniform_range(self.organ_radius.0, self.organ_radius.1);
            let period = rng.uniform_range(5.0, 8.0);
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            let angle = rng.uniform_range(0.0, std::f64::consts::PI);
            let (dx, dy) = (angle.cos(), angle.sin());
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                    if u * u + v * v <= 1.0 {
                        let along = x as f64 * dx + y as f64 * dy;
                        let texture = self.texture_amplitude
                            * (std::f64::consts::TAU * along / period + phase).sin();
                        img.set(x, y, levels[k] + texture);
                        mask.set(x, y, k as u8 + 1);
                    }
                }
            }
        }
        let (cx, cy) = self.jittered(self.disc_anchor, &mut rng);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 - cx, y as f64 - cy);
                if u * u + v * v <= self.disc_radius * self.disc_radius {
                    img.set(x, y, self.disc_level);
                    mask.set(x, y, 3);
                }
            }
        }
        for v in img.data.iter_mut() {
            *v = (*v + self.pixel_noise * rng.normal()).clamp(0.0, 1.0);
        }
        Sample {
            id: format!("{}_{index:04}", split.name()),
            image: img,
            mask,
        }
    }

    /// All samples, train then val then test.
    pub fn generate(&self) -> Result<Vec<(Split, Sample)>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.train + self.val + self.test);
        for (split, n) in [
            (Split::Train, self.train),
            (Split::Val, self.val),
            (Split::Test, self.test),
        ] {
            out.extend((0..n).map(|i| (split, self.sample(split, i))));
        }
        Ok(out)
    }

    /// Writes images (16-bit PGM), masks (8-bit PGM) and `manifest.jsonl`
    /// under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let samples = self.generate()?;
        let mut entries = Vec::with_capacity(samples.len());
        for (split, s) in &samples {
            let image = Path::new("images").join(format!("{}.pgm", s.id));
            let mask = Path::new("masks").join(format!("{}.pgm", s.id));
            write_pgm(&s.image, dir.join(&image), BitDepth::Sixteen)?;
            write_mask(&s.mask, dir.join(&mask))?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                image,
                mask,
                split: *split,
            });
        }
        let manifest = DatasetManifest {
            entries,
            root: dir.to_path_buf(),
        };
        manifest.validate()?;
        manifest.save(dir.join("manifest.jsonl"))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train: 6,
            val: 2,
            test: 3,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    fn centroid_x(mask: &Mask, class: u8) -> f64 {
        let xs: Vec<f64> = (0..mask.height)
            .flat_map(|y| (0..mask.width).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.get(x, y) == class)
            .map(|(x, _)| x as f64)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn every_mask_has_all_classes_in_order() {
        for (_, s) in small().generate().unwrap() {
            for c in 0..4u8 {
                assert!(s.mask.data.contains(&c), "{} lacks class {c}", s.id);
            }
            assert!(centroid_x(&s.mask, 1) < centroid_x(&s.mask, 2));
            assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(small().generate().unwrap(), small().generate().unwrap());
        let other = SynthConfig {
            seed: 43,
            ..small()
        };
        assert_ne!(small().generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn splits_are_disjoint() {
        let samples = small().generate().unwrap();
        let ids: std::collections::HashSet<_> = samples.iter().map(|(_, s)| s.id.clone()).collect();
        assert_eq!(ids.len(), samples.len());
        // images differ across splits even at equal index
        assert_ne!(samples[0].1.image, samples[6].1.image);
    }

    #[test]
    fn geometry_overflow_rejected() {
        let cfg = SynthConfig {
            anchors: [(5.0, 32.0), (44.0, 32.0)],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }

    #[test]
    fn distinct_mode_separates_organ_intensity() {
        let cfg = SynthConfig {
            appearance: Appearance::Distinct,
            ..small()
        };
        let s = cfg.sample(Split::Train, 0);
        let mean = |c: u8| {
            let v: Vec<f64> = s
                .image
                .data
                .iter()
                .zip(&s.mask.data)
                .filter(|(_, &m)| m == c)
                .map(|(p, _)| *p)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(1) - mean(2) > 0.15);
    }
}
