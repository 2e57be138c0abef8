//! Test-time image degradations applied to raw intensities in `[0, 1]`:
//! additive Gaussian noise, Gaussian blur, Poisson shot noise and a
//! horizontal shift. Results are clipped back into `[0, 1]`.
//!
//! Degradation happens before intensity normalization and before the
//! positional channels are appended.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::rng::SplitMix64;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum DegradationKind {
    Clean,
    GaussianNoise,
    GaussianBlur,
    ShotNoise,
    ShiftX,
}

impl DegradationKind {
    pub const ROBUSTNESS: [DegradationKind; 3] = [
        DegradationKind::GaussianNoise,
        DegradationKind::GaussianBlur,
        DegradationKind::ShotNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Clean => "clean",
            DegradationKind::GaussianNoise => "gaussian_noise",
            DegradationKind::GaussianBlur => "gaussian_blur",
            DegradationKind::ShotNoise => "shot_noise",
            DegradationKind::ShiftX => "shift_x",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for DegradationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean" => DegradationKind::Clean,
            "gaussian_noise" => DegradationKind::GaussianNoise,
            "gaussian_blur" => DegradationKind::GaussianBlur,
            "shot_noise" => DegradationKind::ShotNoise,
            "shift_x" => DegradationKind::ShiftX,
            other => {
                return Err(Error::invalid(
                    "degradation",
                    format!("unknown kind `{other}`"),
                ))
            }
        })
    }
}

impl std::fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One degradation and its severity parameter: `sigma_n` (intensity units)
/// for Gaussian noise, `sigma_b` (pixels) for blur, photons per unit
/// intensity `c` for shot noise, pixels `k` for a shift.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub param: f64,
}

impl DegradationSpec {
    pub const CLEAN: DegradationSpec = DegradationSpec {
        kind: DegradationKind::Clean,
        param: 0.0,
    };

    pub fn new(kind: DegradationKind, param: f64) -> Result<Self> {
        let ok = match kind {
            DegradationKind::Clean => true,
            DegradationKind::GaussianNoise | DegradationKind::GaussianBlur => {
                param >= 0.0 && param.is_finite()
            }
            DegradationKind::ShotNoise => param > 0.0 && param.is_finite(),
            DegradationKind::ShiftX => param.fract() == 0.0 && param.is_finite(),
        };
        if !ok {
            return Err(Error::invalid(
                "degradation",
                format!("invalid parameter {param} for {kind}"),
            ));
        }
        Ok(DegradationSpec { kind, param })
    }

    /// Applies the degradation to sample `index` of a corpus. The noise
    /// stream is derived from `(seed, index, kind, param)`.
    pub fn apply(&self, img: &Image, seed: u64, index: u64) -> Result<Image> {
        let mut rng = SplitMix64::derive(seed, &[index, self.kind.tag(), self.param.to_bits()]);
        match self.kind {
            DegradationKind::Clean => Ok(img.clone()),
            DegradationKind::GaussianNoise => gaussian_noise(img, self.param, &mut rng),
            DegradationKind::GaussianBlur => gaussian_blur(img, self.param),
            DegradationKind::ShotNoise => shot_noise(img, self.param, &mut rng),
            DegradationKind::ShiftX => shift_x(img, self.param as i64, 0.0),
        }
    }

    /// The mask that goes with a degraded image: shifted along with a
    /// shift, unchanged otherwise.
    pub fn apply_mask(&self, mask: &Mask) -> Result<Mask> {
        match self.kind {
            DegradationKind::ShiftX => shift_mask_x(mask, self.param as i64),
            _ => Ok(mask.clone()),
        }
    }
}

/// Per-kind severity lists, ordered mildest to harshest.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeverityGrid {
    pub gaussian_noise: Vec<f64>,
    pub gaussian_blur: Vec<f64>,
    pub shot_noise: Vec<f64>,
}

impl Default for SeverityGrid {
    fn default() -> Self {
        SeverityGrid {
            gaussian_noise: vec![0.04, 0.08, 0.12, 0.15, 0.18],
            gaussian_blur: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            // small c is harsh: Var = x / c
            shot_noise: vec![250.0, 100.0, 50.0, 30.0, 15.0],
        }
    }
}

impl SeverityGrid {
    /// Blur sigmas equal to the noise grid, `{0.04, ..., 0.18}` pixels.
    pub const LITERAL_BLUR: [f64; 5] = [0.04, 0.08, 0.12, 0.15, 0.18];

    pub fn levels(&self, kind: DegradationKind) -> &[f64] {
        match kind {
            DegradationKind::GaussianNoise => &self.gaussian_noise,
            DegradationKind::GaussianBlur => &self.gaussian_blur,
            DegradationKind::ShotNoise => &self.shot_noise,
            DegradationKind::Clean | DegradationKind::ShiftX => &[],
        }
    }

    pub fn specs(&self, kind: DegradationKind) -> Result<Vec<DegradationSpec>> {
        self.levels(kind)
            .iter()
            .map(|&p| DegradationSpec::new(kind, p))
            .collect()
    }

    pub fn total(&self) -> usize {
        self.gaussian_noise.len() + self.gaussian_blur.len() + self.shot_noise.len()
    }
}

/// `clip(img + eps, 0, 1)` with `eps ~ N(0, sigma^2)` per pixel.
pub fn gaussian_noise(img: &Image, sigma: f64, rng: &mut SplitMix64) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(
            "gaussian_noise",
            format!("sigma must be >= 0, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let data = img
        .data
        .iter()
        .map(|&v| (v + sigma * rng.normal()).clamp(0.0, 1.0))
        .collect();
    Ok(Image { data, ..*img })
}

/// `clip(Poisson(c * img) / c, 0, 1)` per pixel.
pub fn shot_noise(img: &Image, c: f64, rng: &mut SplitMix64) -> Result<Image> {
    if !(c > 0.0) {
        return Err(Error::invalid(
            "shot_noise",
            format!("c must be > 0, got {c}"),
        ));
    }
    let data = img
        .data
        .iter()
        .map(|&v| (rng.poisson(c * v) as f64 / c).clamp(0.0, 1.0))
        .collect();
    Ok(Image { data, ..*img })
}

/// Normalized discrete Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index into `0..len` without repeating the edge, folding as many
/// times as needed for radii wider than the image.
fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < len as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect borders. `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(
            "gaussian_blur",
            format!("sigma must be >= 0, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * row[reflect_index(x as i64 + t as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * tmp[reflect_index(y as i64 + t as i64 - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Image {
        width: w,
        height: h,
        data: out,
    })
}

fn shift_rows<T: Copy>(data: &[T], width: usize, k: i64, fill: T) -> Vec<T> {
    let mut out = vec![fill; data.len()];
    for (src, dst) in data.chunks(width).zip(out.chunks_mut(width)) {
        for (x, v) in src.iter().enumerate() {
            let nx = x as i64 + k;
            if (0..width as i64).contains(&nx) {
                dst[nx as usize] = *v;
            }
        }
    }
    out
}

fn check_shift(k: i64, width: usize) -> Result<()> {
    if k.unsigned_abs() as usize >= width {
        return Err(Error::invalid(
            "shift_x",
            format!("|k| = {} must be below width {width}", k.abs()),
        ));
    }
    Ok(())
}

/// Translates content `k` pixels along x (positive = right); vacated
/// columns take `fill`.
pub fn shift_x(img: &Image, k: i64, fill: f64) -> Result<Image> {
    check_shift(k, img.width)?;
    Ok(Image {
        data: shift_rows(&img.data, img.width, k, fill),
        ..*img
    })
}

/// Mask counterpart of [`shift_x`]; vacated columns become background.
pub fn shift_mask_x(mask: &Mask, k: i64) -> Result<Mask> {
    check_shift(k, mask.width)?;
    Ok(Mask {
        width: mask.width,
        height: mask.height,
        data: shift_rows(&mask.data, mask.width, k, 0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|i| (i % 17) as f64 / 16.0).collect()).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = ramp(9, 7);
        assert_eq!(
            gaussian_noise(&img, 0.0, &mut SplitMix64::new(1)).unwrap(),
            img
        );
        assert!(gaussian_noise(&img, -0.1, &mut SplitMix64::new(1)).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let img = ramp(16, 16);
        let a = DegradationSpec::new(DegradationKind::GaussianNoise, 0.08).unwrap();
        assert_eq!(a.apply(&img, 3, 5).unwrap(), a.apply(&img, 3, 5).unwrap());
        assert_ne!(a.apply(&img, 3, 5).unwrap(), a.apply(&img, 3, 6).unwrap());
        let s = DegradationSpec::new(DegradationKind::ShotNoise, 30.0).unwrap();
        assert_eq!(s.apply(&img, 3, 5).unwrap(), s.apply(&img, 3, 5).unwrap());
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let img = ramp(32, 32);
        for spec in [
            DegradationSpec::new(DegradationKind::GaussianNoise, 0.5).unwrap(),
            DegradationSpec::new(DegradationKind::ShotNoise, 2.0).unwrap(),
            DegradationSpec::new(DegradationKind::GaussianBlur, 2.0).unwrap(),
        ] {
            let out = spec.apply(&img, 1, 0).unwrap();
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)), "{spec:?}");
        }
    }

    #[test]
    fn shot_noise_keeps_black_black() {
        let img = Image::filled(20, 20, 0.0);
        let out = shot_noise(&img, 15.0, &mut SplitMix64::new(4)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        assert!(shot_noise(&img, 0.0, &mut SplitMix64::new(4)).is_err());
    }

    #[test]
    fn shot_noise_variance_shrinks_with_c() {
        let img = Image::filled(200, 200, 0.5);
        let var = |c: f64| {
            let out = shot_noise(&img, c, &mut SplitMix64::new(8)).unwrap();
            let m = out.data.iter().sum::<f64>() / out.data.len() as f64;
            out.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / out.data.len() as f64
        };
        let grid = SeverityGrid::default();
        let vs: Vec<f64> = grid.shot_noise.iter().map(|&c| var(c)).collect();
        assert!(vs.windows(2).all(|w| w[0] < w[1]), "{vs:?}");
    }

    #[test]
    fn blur_constant_and_identity() {
        let c = Image::filled(12, 9, 0.37);
        let b = gaussian_blur(&c, 2.0).unwrap();
        assert!(b.data.iter().all(|v| (v - 0.37).abs() < 1e-12));
        let img = ramp(12, 9);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn blur_impulse() {
        let mut img = Image::filled(21, 21, 0.0);
        img.set(10, 10, 1.0);
        let out = gaussian_blur(&img, 1.0).unwrap();
        // discrete kernel, radius 3: w0 = 1 / sum_{i=-3..3} exp(-i^2/2)
        let z: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let w0 = 1.0 / z;
        assert!((out.get(10, 10) - w0 * w0).abs() < 1e-15);
        assert!((out.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_commutes_with_mirroring() {
        let img = ramp(13, 8);
        for sigma in [0.5, 1.0, 3.0, 6.0] {
            let a = gaussian_blur(&img.mirrored(), sigma).unwrap();
            let b = gaussian_blur(&img, sigma).unwrap().mirrored();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_row() {
        let img = Image::new(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(
            shift_x(&img, 2, 0.0).unwrap().data,
            vec![0.0, 0.0, 0.1, 0.2]
        );
        assert_eq!(
            shift_x(&img, -1, 0.0).unwrap().data,
            vec![0.2, 0.3, 0.4, 0.0]
        );
        assert_eq!(shift_x(&img, 0, 0.0).unwrap(), img);
        assert!(shift_x(&img, 4, 0.0).is_err());
        assert!(shift_x(&img, -4, 0.0).is_err());
    }

    #[test]
    fn shift_and_back_restores_interior() {
        let img = ramp(10, 3);
        let k = 3;
        let back = shift_x(&shift_x(&img, k, 0.0).unwrap(), -k, 0.0).unwrap();
        for y in 0..3 {
            for x in 0..10 - k as usize {
                assert_eq!(back.get(x, y), img.get(x, y));
            }
        }
    }

    #[test]
    fn mask_follows_image_shift() {
        let mask = Mask::new(4, 1, vec![1, 2, 3, 1]).unwrap();
        let spec = DegradationSpec::new(DegradationKind::ShiftX, 1.0).unwrap();
        assert_eq!(spec.apply_mask(&mask).unwrap().data, vec![0, 1, 2, 3]);
        let noise = DegradationSpec::new(DegradationKind::GaussianNoise, 0.1).unwrap();
        assert_eq!(noise.apply_mask(&mask).unwrap(), mask);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DegradationSpec::new(DegradationKind::ShotNoise, 0.0).is_err());
        assert!(DegradationSpec::new(DegradationKind::GaussianBlur, -1.0).is_err());
        assert!(DegradationSpec::new(DegradationKind::ShiftX, 1.5).is_err());
    }
}
