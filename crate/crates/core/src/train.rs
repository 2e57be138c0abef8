//! Adam and the training loop.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EmptyClass};
use crate::models::Network;
use crate::nn::{softmax_cross_entropy, BnMode};
use crate::pipeline::Prepared;
use crate::rng::SplitMix64;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// is non-finite or mismatched.
    pub fn update(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("`{name}`: {} vs {}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    BestVal,
    Last,
}

impl std::str::FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best-val" => Ok(Selection::BestVal),
            "last" => Ok(Selection::Last),
            other => Err(Error::invalid(
                "selection",
                format!("unknown rule `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
    pub selection: Selection,
    pub empty_class: EmptyMode,
}

/// Serializable mirror of [`EmptyClass`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyMode {
    #[default]
    One,
    Skip,
}

impl From<EmptyMode> for EmptyClass {
    fn from(m: EmptyMode) -> Self {
        match m {
            EmptyMode::One => EmptyClass::One,
            EmptyMode::Skip => EmptyClass::Skip,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 20,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
            selection: Selection::BestVal,
            empty_class: EmptyMode::One,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the returned network.
    pub selected_epoch: usize,
}

const SHUFFLE_TAG: u64 = 0x5348_5546;

/// Per-epoch log as CSV, preceded by a `#` line with the Adam constants.
pub fn log_csv(log: &[EpochLog], adam: &AdamConfig) -> String {
    let mut s = format!(
        "# adam lr={} beta1={} beta2={} eps={}\nepoch,train_loss,val_dice,wall_seconds\n",
        adam.lr, adam.beta1, adam.beta2, adam.eps
    );
    for e in log {
        s.push_str(&format!(
            "{},{},{},{:.3}\n",
            e.epoch, e.train_loss, e.val_dice, e.wall_seconds
        ));
    }
    s
}

/// One optimization step on the given batch; returns the batch loss.
pub fn train_step(
    net: &mut Network,
    adam: &mut AdamState,
    inputs: Tensor,
    targets: &[u8],
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(inputs);
    let (logits, leaves) = net.forward(&mut tape, x, BnMode::Train, true)?;
    let loss = softmax_cross_entropy(&mut tape, logits, targets)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = leaves
        .iter()
        .map(|&v| {
            grads
                .take(v)
                .expect("every parameter is a differentiable leaf")
        })
        .collect();
    drop(tape);
    adam.update(&mut net.parameters_mut(), &grads)?;
    Ok(value)
}

/// Trains `net` on `train`, scoring `val` after every epoch, and returns the
/// network chosen by `cfg.selection`.
pub fn train(
    mut net: Network,
    train: &Prepared,
    val: &Prepared,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("train", "empty training split"));
    }
    if val.is_empty() {
        return Err(Error::invalid("train", "empty validation split"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid(
            "train",
            "epochs and batch size must be positive",
        ));
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let started = Instant::now();
    let n = train.len();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            SplitMix64::derive(cfg.seed, &[SHUFFLE_TAG, epoch as u64]).shuffle(&mut order);
        }
        let mut total = 0.0;
        // final partial batch is kept
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (inputs, targets) = train.gather(idx);
            let loss = train_step(&mut net, &mut adam, inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            total += loss * idx.len() as f64;
        }
        let val_dice = evaluate(&mut net, val, cfg.empty_class.into())?.mean;
        log.push(EpochLog {
            epoch,
            train_loss: total / n as f64,
            val_dice,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if cfg.selection == Selection::BestVal
            && best.as_ref().is_none_or(|(d, _, _)| val_dice > *d)
        {
            best = Some((val_dice, epoch, net.clone()));
        }
    }
    let (network, selected_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net, cfg.epochs),
    };
    Ok(TrainOutcome {
        network,
        log,
        selected_epoch,
    })
}
