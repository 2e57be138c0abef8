//! Oracles and suites shared by the integration tests and the acceptance
//! report.
#![allow(dead_code)]

use seglab::degrade::{gaussian_noise, shot_noise};
use seglab::gradcheck;
use seglab::image::{Image, Mask};
use seglab::metrics::{dice, EmptyClass};
use seglab::nn::{conv2d, ConvSpec, PaddingMode};
use seglab::posenc::encode_position;
use seglab::rng::SplitMix64;
use seglab::{Shape, Tape, Tensor};

/// Worst finite-difference result over `seeds`: (case name, seed, rel err).
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> (String, u64, f64) {
    let mut worst = (String::new(), 0, 0.0);
    for seed in seeds {
        for (name, r) in gradcheck::suite(seed).expect("suite runs") {
            if r.rel_err >= worst.2 || !r.rel_err.is_finite() {
                worst = (name, seed, r.rel_err);
            }
        }
    }
    worst
}

fn random(shape: Shape, rng: &mut SplitMix64) -> Tensor {
    let v = (0..shape.numel())
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    Tensor::from_vec(shape, v).unwrap()
}

pub fn conv(x: &Tensor, w: &Tensor, spec: ConvSpec) -> Tensor {
    let mut t = Tape::new();
    let b = Tensor::zeros(Shape::new(1, w.shape().n(), 1, 1));
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b));
    let y = conv2d(&mut t, xv, wv, bv, spec).unwrap();
    t.value(y).clone()
}

/// Translates `x` by `(dx, dy)`, filling vacated cells from `rng`.
fn translate(x: &Tensor, dx: usize, dy: usize, rng: &mut SplitMix64) -> Tensor {
    let s = x.shape();
    let mut out = random(s, rng);
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y in dy..s.h() {
                for xx in dx..s.w() {
                    let i = out.index(n, c, y, xx);
                    out.data_mut()[i] = x.at(n, c, y - dy, xx - dx);
                }
            }
        }
    }
    out
}

/// One shift-equivariance case of an unpadded convolution; returns the
/// number of compared output values, or a description of the first
/// mismatch.
pub fn shift_case(seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix64::new(seed);
    let k = [1, 3, 5][rng.below(3)];
    let (c_in, c_out) = (1 + rng.below(3), 1 + rng.below(3));
    let (h, w) = (k + 4 + rng.below(8), k + 4 + rng.below(8));
    let (dx, dy) = (rng.below(4), rng.below(4));
    let x = random(Shape::new(1, c_in, h, w), &mut rng);
    let wt = random(Shape::new(c_out, c_in, k, k), &mut rng);
    let spec = ConvSpec::same(0, PaddingMode::None);
    let y = conv(&x, &wt, spec);
    let ys = conv(&translate(&x, dx, dy, &mut rng), &wt, spec);
    let s = y.shape();
    let mut compared = 0;
    for c in 0..c_out {
        for i in dy..s.h() {
            for j in dx..s.w() {
                let (a, b) = (ys.at(0, c, i, j), y.at(0, c, i - dy, j - dx));
                if a.to_bits() != b.to_bits() {
                    return Err(format!(
                        "seed {seed} k={k} shift ({dx},{dy}) at ({c},{i},{j}): {a} vs {b}"
                    ));
                }
                compared += 1;
            }
        }
    }
    Ok(compared)
}

/// Zero, reflect and unpadded convolutions agree bit-exactly on output
/// pixels at least `ceil(k/2)` from the border.
pub fn interior_case(seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix64::new(seed);
    let k = [3, 5][rng.below(2)];
    let p = k / 2;
    let (h, w) = (2 * k + 2 + rng.below(6), 2 * k + 2 + rng.below(6));
    let x = random(Shape::new(2, 2, h, w), &mut rng);
    let wt = random(Shape::new(3, 2, k, k), &mut rng);
    let none = conv(&x, &wt, ConvSpec::same(0, PaddingMode::None));
    let margin = k.div_ceil(2);
    let mut compared = 0;
    for mode in [PaddingMode::Zero, PaddingMode::Reflect] {
        let y = conv(&x, &wt, ConvSpec::same(p, mode));
        for n in 0..2 {
            for c in 0..3 {
                for i in margin..h - margin {
                    for j in margin..w - margin {
                        let (a, b) = (y.at(n, c, i, j), none.at(n, c, i - p, j - p));
                        if a.to_bits() != b.to_bits() {
                            return Err(format!(
                                "seed {seed} {mode} at ({n},{c},{i},{j}): {a} vs {b}"
                            ));
                        }
                        compared += 1;
                    }
                }
            }
        }
    }
    Ok(compared)
}

/// Largest deviation of the coordinate planes from `lambda * i / (W - 1)`
/// and `lambda * j / (H - 1)`, in units of `lambda * EPSILON`, and whether
/// the endpoints are exactly 0 and `lambda`.
pub fn pe_case(w: usize, h: usize, lambda: f64) -> (f64, bool) {
    let (i1, i2) = encode_position(w, h, lambda).unwrap();
    let mut worst = 0.0f64;
    for j in 0..h {
        for i in 0..w {
            let ex = lambda * (i as f64 / (w - 1) as f64);
            let ey = lambda * (j as f64 / (h - 1) as f64);
            worst = worst
                .max((i1.at(0, 0, j, i) - ex).abs())
                .max((i2.at(0, 0, j, i) - ey).abs());
        }
    }
    let ends = (0..h).all(|j| i1.at(0, 0, j, 0) == 0.0 && i1.at(0, 0, j, w - 1) == lambda)
        && (0..w).all(|i| i2.at(0, 0, 0, i) == 0.0 && i2.at(0, 0, h - 1, i) == lambda);
    (worst / (lambda * f64::EPSILON), ends)
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Sample (mean, variance) of Gaussian noise of `sigma` and of shot noise
/// of `c` over a 1000x1000 image at 0.5.
pub fn degradation_moments(sigma: f64, c: f64) -> ((f64, f64), (f64, f64)) {
    let img = Image::filled(1000, 1000, 0.5);
    let g = gaussian_noise(&img, sigma, &mut SplitMix64::new(11)).unwrap();
    let s = shot_noise(&img, c, &mut SplitMix64::new(12)).unwrap();
    (mean_var(&g.data), mean_var(&s.data))
}

/// Per-class Dice by explicit pixel counting, `None` when the class is
/// absent from both masks.
pub fn dice_oracle(pred: &[u8], gt: &[u8], classes: u8) -> Vec<Option<f64>> {
    (1..classes)
        .map(|c| {
            let mut tp = 0usize;
            let mut in_p = 0usize;
            let mut in_g = 0usize;
            for i in 0..pred.len() {
                if pred[i] == c {
                    in_p += 1;
                }
                if gt[i] == c {
                    in_g += 1;
                }
                if pred[i] == c && gt[i] == c {
                    tp += 1;
                }
            }
            (in_p + in_g > 0).then(|| 2.0 * tp as f64 / (in_p + in_g) as f64)
        })
        .collect()
}

fn random_mask(rng: &mut SplitMix64, allowed: &[u8]) -> Mask {
    let data = (0..64).map(|_| allowed[rng.below(allowed.len())]).collect();
    Mask::new(8, 8, data).unwrap()
}

/// 100 random 8x8 pairs over 4 classes, a share of them with classes
/// missing from one or both masks; returns the number of mismatches.
pub fn dice_oracle_mismatches() -> usize {
    let mut rng = SplitMix64::new(2024);
    let palettes: [&[u8]; 5] = [&[0, 1, 2, 3], &[0, 1, 2, 3], &[0, 1], &[0, 2, 3], &[0]];
    let mut bad = 0;
    for _ in 0..100 {
        let (pa, ga) = (palettes[rng.below(5)], palettes[rng.below(5)]);
        let p = random_mask(&mut rng, pa);
        let g = random_mask(&mut rng, ga);
        let oracle = dice_oracle(&p.data, &g.data, 4);
        let one: Vec<f64> = oracle.iter().map(|d| d.unwrap_or(1.0)).collect();
        let skip: Vec<f64> = oracle.iter().flatten().copied().collect();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                1.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let a = dice(&p, &g, 4, EmptyClass::One).unwrap();
        let b = dice(&p, &g, 4, EmptyClass::Skip).unwrap();
        let a_ok = a.per_class.iter().map(|d| d.unwrap()).collect::<Vec<_>>() == one
            && a.mean == mean(&one);
        let b_ok = b.per_class == oracle && b.mean == mean(&skip);
        if !(a_ok && b_ok) {
            bad += 1;
        }
    }
    bad
}
