//! Batch normalization over `(N, H, W)` per channel.

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Affine parameters and running statistics of one batch-norm layer.
/// `gamma`/`beta` are `(1, C, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::per_channel(vec![1.0; channels]),
            beta: Tensor::per_channel(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Running statistics plus the constants that govern them; the part of a
/// batch-norm layer that the forward pass mutates.
#[derive(Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a mut [f64],
    pub var: &'a mut [f64],
    pub momentum: f64,
    pub eps: f64,
}

struct TrainRule {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct EvalRule {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn channel_iter(s: Shape) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> {
    let plane = s.plane();
    let c = s.c();
    (0..s.n() * c).map(move |i| (i % c, i * plane..(i + 1) * plane))
}

fn affine_grads(
    g: &Tensor,
    xhat: &[f64],
    s: Shape,
    needs: &[bool],
) -> (Option<Tensor>, Option<Tensor>) {
    let mut dgamma = vec![0.0; s.c()];
    let mut dbeta = vec![0.0; s.c()];
    if needs[1] || needs[2] {
        for (c, r) in channel_iter(s) {
            for (gv, xv) in g.data()[r.clone()].iter().zip(&xhat[r]) {
                dgamma[c] += gv * xv;
                dbeta[c] += gv;
            }
        }
    }
    (
        needs[1].then(|| Tensor::per_channel(dgamma)),
        needs[2].then(|| Tensor::per_channel(dbeta)),
    )
}

impl Backward for TrainRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let gamma = inputs[1].data();
        let m = (s.n() * s.plane()) as f64;
        let (dgamma, dbeta) = affine_grads(g, &self.xhat, s, &[true, true, true]);
        let dx = needs[0].then(|| {
            let (sum_g, sum_gx) = (
                dbeta.as_ref().unwrap().data(),
                dgamma.as_ref().unwrap().data(),
            );
            let mut dx = Vec::with_capacity(s.numel());
            for (c, r) in channel_iter(s) {
                let k = gamma[c] * self.inv_std[c] / m;
                let (sg, sgx) = (sum_g[c], sum_gx[c]);
                dx.extend(
                    g.data()[r.clone()]
                        .iter()
                        .zip(&self.xhat[r])
                        .map(|(gv, xv)| k * (m * gv - sg - xv * sgx)),
                );
            }
            Tensor::from_parts(s, dx)
        });
        vec![dx, dgamma.filter(|_| needs[1]), dbeta.filter(|_| needs[2])]
    }
}

impl Backward for EvalRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let gamma = inputs[1].data();
        let (dgamma, dbeta) = affine_grads(g, &self.xhat, s, needs);
        let dx = needs[0].then(|| {
            let mut dx = g.clone();
            let d = dx.data_mut();
            for (c, r) in channel_iter(s) {
                let k = gamma[c] * self.inv_std[c];
                d[r].iter_mut().for_each(|v| *v *= k);
            }
            dx
        });
        vec![dx, dgamma, dbeta]
    }
}

/// Normalizes `x` per channel. Train mode uses biased batch statistics and
/// folds them into `stats` as `running = (1 - momentum) * running + momentum * batch`;
/// eval mode uses the running statistics unchanged.
pub fn batchnorm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: RunningStats<'_>,
    mode: BnMode,
) -> Result<Var> {
    let s = tape.value(x).shape();
    let c = s.c();
    if tape.value(gamma).shape() != Shape::new(1, c, 1, 1)
        || tape.value(beta).shape() != Shape::new(1, c, 1, 1)
        || stats.mean.len() != c
        || stats.var.len() != c
    {
        return Err(Error::shape(
            "batchnorm",
            format!("parameters do not match input {s}"),
        ));
    }
    let m = s.n() * s.plane();
    let xd = tape.value(x).data();

    let (mean, var) = match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(Error::invalid(
                    "batchnorm",
                    format!("train mode needs at least 2 values per channel, input {s}"),
                ));
            }
            let mut mean = vec![0.0; c];
            for (ch, r) in channel_iter(s) {
                mean[ch] += xd[r].iter().sum::<f64>();
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0; c];
            for (ch, r) in channel_iter(s) {
                var[ch] += xd[r].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let mo = stats.momentum;
            for ch in 0..c {
                stats.mean[ch] = (1.0 - mo) * stats.mean[ch] + mo * mean[ch];
                stats.var[ch] = (1.0 - mo) * stats.var[ch] + mo * var[ch];
            }
            (mean, var)
        }
        BnMode::Eval => (stats.mean.to_vec(), stats.var.to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(s.numel());
    let mut out = Vec::with_capacity(s.numel());
    let (gd, bd) = (tape.value(gamma).data(), tape.value(beta).data());
    for (ch, r) in channel_iter(s) {
        let (mu, is, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
        for &xv in &xd[r] {
            let xh = (xv - mu) * is;
            xhat.push(xh);
            out.push(ga * xh + be);
        }
    }
    let out = Tensor::from_parts(s, out);
    match mode {
        BnMode::Train => tape.record(out, &[x, gamma, beta], TrainRule { xhat, inv_std }),
        BnMode::Eval => tape.record(out, &[x, gamma, beta], EvalRule { xhat, inv_std }),
    }
}
