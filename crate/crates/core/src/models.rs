//! The two segmentation networks: a four-stage U-net and a four-layer CNN
//! with a 7x7 receptive field. Every 3x3 convolution is followed by batch
//! normalization and ReLU; the 1x1 score layer has neither.
//!
//! Channel widths are the reference widths times a multiplier `w`, so
//! `w = 1` gives the full U-net (64, 128, 256, 512, 512 encoder channels)
//! and `w = 1/8` the desk-scale variant.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::NUM_CLASSES;
use crate::nn::{
    batchnorm, concat_channels, conv2d, maxpool2, upsample_bilinear2, BatchNormParams, BnMode,
    ConvParams, ConvSpec, PaddingMode, RunningStats,
};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    UNet,
    SmallCnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::UNet => "unet",
            Architecture::SmallCnn => "small",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Architecture::UNet),
            "small" | "smallcnn" => Ok(Architecture::SmallCnn),
            other => Err(Error::invalid(
                "architecture",
                format!("unknown model `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub arch: Architecture,
    pub in_channels: usize,
    pub classes: usize,
    pub width: f64,
    pub padding: PaddingMode,
}

impl NetConfig {
    pub fn unet(in_channels: usize, width: f64, padding: PaddingMode) -> Self {
        NetConfig {
            arch: Architecture::UNet,
            in_channels,
            classes: NUM_CLASSES,
            width,
            padding,
        }
    }

    pub fn small_cnn(in_channels: usize, width: f64, padding: PaddingMode) -> Self {
        NetConfig {
            arch: Architecture::SmallCnn,
            ..NetConfig::unet(in_channels, width, padding)
        }
    }

    fn scaled(&self, reference: usize) -> usize {
        ((reference as f64 * self.width).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::invalid(
                "model",
                format!("in_channels must be 1 or 3, got {}", self.in_channels),
            ));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model", "need at least two classes"));
        }
        if !(self.width > 0.0) {
            return Err(Error::invalid("model", "width multiplier must be positive"));
        }
        if self.padding == PaddingMode::None {
            // every 3x3 layer pads by one to preserve extent
            return Err(Error::invalid(
                "model",
                "networks need zero or reflect padding",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub conv: ConvParams,
    pub bn: Option<BatchNormParams>,
}

impl ConvLayer {
    fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        padding: PaddingMode,
        bn: bool,
    ) -> Self {
        ConvLayer {
            name: name.to_string(),
            conv: ConvParams {
                weight: Tensor::zeros(Shape::new(c_out, c_in, k, k)),
                bias: Tensor::zeros(Shape::new(1, c_out, 1, 1)),
                spec: ConvSpec::same(k / 2, padding),
            },
            bn: bn.then(|| BatchNormParams::new(c_out)),
        }
    }
}

/// Parameter leaves of one layer as registered on a tape.
struct LayerVars {
    weight: Var,
    bias: Var,
    gamma: Option<Var>,
    beta: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub layers: Vec<ConvLayer>,
}

/// Encoder stage names and reference widths.
const UNET_ENCODER: [(&str, usize); 5] = [
    ("conv1", 64),
    ("conv2", 128),
    ("conv3", 256),
    ("conv4", 512),
    ("conv5", 512),
];
/// Decoder stage names and reference widths.
const UNET_DECODER: [(&str, usize); 4] =
    [("conv6", 256), ("conv7", 128), ("conv8", 64), ("conv9", 64)];

pub fn build_unet(config: NetConfig) -> Result<Network> {
    config.validate()?;
    let p = config.padding;
    let mut layers = Vec::new();
    let mut c_in = config.in_channels;
    let mut skips = Vec::new();
    for (name, reference) in UNET_ENCODER {
        let c = config.scaled(reference);
        layers.push(ConvLayer::new(&format!("{name}_1"), c_in, c, 3, p, true));
        layers.push(ConvLayer::new(&format!("{name}_2"), c, c, 3, p, true));
        skips.push(c);
        c_in = c;
    }
    skips.pop();
    for ((name, reference), skip) in UNET_DECODER.into_iter().zip(skips.into_iter().rev()) {
        let c = config.scaled(reference);
        layers.push(ConvLayer::new(
            &format!("{name}_1"),
            c_in + skip,
            c,
            3,
            p,
            true,
        ));
        layers.push(ConvLayer::new(&format!("{name}_2"), c, c, 3, p, true));
        c_in = c;
    }
    layers.push(ConvLayer::new("score", c_in, config.classes, 1, p, false));
    Ok(Network {
        config: NetConfig {
            arch: Architecture::UNet,
            ..config
        },
        layers,
    })
}

pub fn build_smallcnn(config: NetConfig) -> Result<Network> {
    config.validate()?;
    let p = config.padding;
    let c = config.scaled(64);
    let layers = vec![
        ConvLayer::new("conv1", config.in_channels, c, 3, p, true),
        ConvLayer::new("conv2", c, c, 3, p, true),
        ConvLayer::new("conv3", c, c, 3, p, true),
        ConvLayer::new("score", c, config.classes, 1, p, false),
    ];
    Ok(Network {
        config: NetConfig {
            arch: Architecture::SmallCnn,
            ..config
        },
        layers,
    })
}

impl Network {
    pub fn build(config: NetConfig) -> Result<Self> {
        match config.arch {
            Architecture::UNet => build_unet(config),
            Architecture::SmallCnn => build_smallcnn(config),
        }
    }

    /// Builds and He-initializes.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Network::build(config)?;
        net.init_weights(seed);
        Ok(net)
    }

    /// Conv weights `~ N(0, 2 / fan_in)`, biases 0, batch-norm `gamma = 1`,
    /// `beta = 0`, running statistics reset.
    pub fn init_weights(&mut self, seed: u64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let s = layer.conv.weight.shape();
            let fan_in = (s.c() * s.h() * s.w()) as f64;
            let std = (2.0 / fan_in).sqrt();
            let mut rng = SplitMix64::derive(seed, &[0x494e_4954, i as u64]);
            for v in layer.conv.weight.data_mut() {
                *v = std * rng.normal();
            }
            layer.conv.bias = Tensor::zeros(layer.conv.bias.shape());
            if let Some(bn) = layer.bn.as_mut() {
                *bn = BatchNormParams::new(bn.channels());
            }
        }
    }

    /// Receptive field of a score-layer pixel along one axis. For the U-net
    /// this follows the deepest path and ignores the bilinear taps.
    pub fn receptive_field(&self) -> usize {
        match self.config.arch {
            Architecture::SmallCnn => {
                self.layers
                    .iter()
                    .map(|l| l.conv.kernel() - 1)
                    .sum::<usize>()
                    + 1
            }
            Architecture::UNet => {
                let (mut rf, mut jump) = (1usize, 1usize);
                for stage in 0..5 {
                    rf += 2 * 2 * jump;
                    if stage < 4 {
                        rf += jump;
                        jump *= 2;
                    }
                }
                for _ in 0..4 {
                    jump /= 2;
                    rf += 2 * 2 * jump;
                }
                rf
            }
        }
    }

    /// Number of trainable scalars (conv weights and biases, batch-norm
    /// gamma and beta).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.conv.weight.len()
                    + l.conv.bias.len()
                    + l.bn.as_ref().map_or(0, |b| 2 * b.channels())
            })
            .sum()
    }

    /// Trainable tensors in canonical order: per layer weight, bias, then
    /// gamma and beta when the layer has batch norm.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((format!("{}.weight", l.name), &mut l.conv.weight));
            out.push((format!("{}.bias", l.name), &mut l.conv.bias));
            if let Some(bn) = l.bn.as_mut() {
                out.push((format!("{}.bn.gamma", l.name), &mut bn.gamma));
                out.push((format!("{}.bn.beta", l.name), &mut bn.beta));
            }
        }
        out
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerVars> {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        self.layers
            .iter()
            .map(|l| LayerVars {
                weight: reg(&l.conv.weight),
                bias: reg(&l.conv.bias),
                gamma: l.bn.as_ref().map(|b| reg(&b.gamma)),
                beta: l.bn.as_ref().map(|b| reg(&b.beta)),
            })
            .collect()
    }

    fn apply_layer(
        &mut self,
        idx: usize,
        vars: &LayerVars,
        tape: &mut Tape,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let layer = &mut self.layers[idx];
        let y = conv2d(tape, x, vars.weight, vars.bias, layer.conv.spec)?;
        match (layer.bn.as_mut(), vars.gamma, vars.beta) {
            (Some(bn), Some(g), Some(b)) => {
                let stats = RunningStats {
                    mean: &mut bn.running_mean,
                    var: &mut bn.running_var,
                    momentum: bn.momentum,
                    eps: bn.eps,
                };
                let z = batchnorm(tape, y, g, b, stats, mode)?;
                tape.relu(z)
            }
            _ => Ok(y),
        }
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c() != self.config.in_channels {
            return Err(Error::shape(
                "model",
                format!(
                    "expects {} input channels, got {s}",
                    self.config.in_channels
                ),
            ));
        }
        if self.config.arch == Architecture::UNet
            && (!s.h().is_multiple_of(16) || !s.w().is_multiple_of(16) || s.h() == 0 || s.w() == 0)
        {
            return Err(Error::shape(
                "unet",
                format!("extent must be a positive multiple of 16, got {s}"),
            ));
        }
        Ok(())
    }

    /// Records the forward pass and returns the logits plus the parameter
    /// leaves in [`Network::parameters_mut`] order. In train mode batch-norm
    /// running statistics are updated.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: BnMode,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x).shape())?;
        let vars = self.register(tape, trainable);
        let logits = match self.config.arch {
            Architecture::SmallCnn => {
                let mut h = x;
                for (i, v) in vars.iter().enumerate() {
                    h = self.apply_layer(i, v, tape, h, mode)?;
                }
                h
            }
            Architecture::UNet => {
                let mut h = x;
                let mut skips = Vec::new();
                for stage in 0..5 {
                    h = self.apply_layer(2 * stage, &vars[2 * stage], tape, h, mode)?;
                    h = self.apply_layer(2 * stage + 1, &vars[2 * stage + 1], tape, h, mode)?;
                    if stage < 4 {
                        skips.push(h);
                        h = maxpool2(tape, h)?;
                    }
                }
                for stage in 0..4 {
                    let up = upsample_bilinear2(tape, h)?;
                    let skip = skips.pop().expect("one skip per decoder stage");
                    h = concat_channels(tape, skip, up)?;
                    let i = 10 + 2 * stage;
                    h = self.apply_layer(i, &vars[i], tape, h, mode)?;
                    h = self.apply_layer(i + 1, &vars[i + 1], tape, h, mode)?;
                }
                self.apply_layer(18, &vars[18], tape, h, mode)?
            }
        };
        let mut leaves = Vec::new();
        for v in vars {
            leaves.push(v.weight);
            leaves.push(v.bias);
            leaves.extend(v.gamma);
            leaves.extend(v.beta);
        }
        Ok((logits, leaves))
    }

    /// Eval-mode logits for a batch.
    pub fn infer(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (y, _) = self.forward(&mut tape, xv, BnMode::Eval, false)?;
        Ok(tape.value(y).clone())
    }

    // ---- checkpoints --------------------------------------------------------

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{}.weight", l.name), l.conv.weight.clone()));
            out.push((format!("{}.bias", l.name), l.conv.bias.clone()));
            if let Some(bn) = &l.bn {
                out.push((format!("{}.bn.gamma", l.name), bn.gamma.clone()));
                out.push((format!("{}.bn.beta", l.name), bn.beta.clone()));
                out.push((
                    format!("{}.bn.running_mean", l.name),
                    Tensor::per_channel(bn.running_mean.clone()),
                ));
                out.push((
                    format!("{}.bn.running_var", l.name),
                    Tensor::per_channel(bn.running_var.clone()),
                ));
            }
        }
        out
    }

    /// Writes a text manifest at `path` and the tensor blob at
    /// `path` + `.bin` (little-endian `f64`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bin = blob_path(path);
        let c = &self.config;
        let mut manifest = String::from("seglab-checkpoint 1\n");
        let _ = writeln!(
            manifest,
            "config arch={} in_channels={} classes={} width={} padding={}",
            c.arch.name(),
            c.in_channels,
            c.classes,
            c.width,
            c.padding
        );
        if let Some(bn) = self.layers.iter().find_map(|l| l.bn.as_ref()) {
            let _ = writeln!(
                manifest,
                "batchnorm momentum={} eps={}",
                bn.momentum, bn.eps
            );
        }
        let _ = writeln!(
            manifest,
            "blob {}",
            bin.file_name()
                .map(|f| f.to_string_lossy())
                .unwrap_or_default()
        );
        let mut blob = Vec::new();
        for (name, t) in self.named_tensors() {
            let [n, ch, h, w] = t.shape().0;
            let _ = writeln!(
                manifest,
                "tensor {name} {n},{ch},{h},{w} f64 {}",
                blob.len()
            );
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, manifest).map_err(|e| Error::io(path, e))?;
        fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut lines = text.lines();
        if lines.next() != Some("seglab-checkpoint 1") {
            return Err(bad("missing `seglab-checkpoint 1` header".into()));
        }
        let mut config = None;
        let mut bn_consts = None;
        let mut blob = None;
        let mut tensors = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("config") => {
                    let kv = key_values(parts);
                    let get = |k: &str| {
                        kv.iter()
                            .find(|(a, _)| a == k)
                            .map(|(_, v)| v.as_str())
                            .ok_or_else(|| bad(format!("config lacks `{k}`")))
                    };
                    let parse_num = |k: &str| -> Result<usize> {
                        get(k)?.parse().map_err(|_| bad(format!("bad `{k}`")))
                    };
                    config = Some(NetConfig {
                        arch: get("arch")?.parse()?,
                        in_channels: parse_num("in_channels")?,
                        classes: parse_num("classes")?,
                        width: get("width")?.parse().map_err(|_| bad("bad width".into()))?,
                        padding: get("padding")?.parse()?,
                    });
                }
                Some("batchnorm") => {
                    let kv = key_values(parts);
                    let get = |k: &str| -> Result<f64> {
                        kv.iter()
                            .find(|(a, _)| a == k)
                            .and_then(|(_, v)| v.parse().ok())
                            .ok_or_else(|| bad(format!("batchnorm lacks `{k}`")))
                    };
                    bn_consts = Some((get("momentum")?, get("eps")?));
                }
                Some("blob") => blob = parts.next().map(str::to_string),
                Some("tensor") => {
                    let fields: Vec<&str> = parts.collect();
                    let [name, shape, dtype, offset] = fields[..] else {
                        return Err(bad(format!("malformed tensor line `{line}`")));
                    };
                    if dtype != "f64" {
                        return Err(bad(format!("unsupported dtype `{dtype}`")));
                    }
                    let dims: Vec<usize> = shape
                        .split(',')
                        .map(|d| d.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(format!("bad shape `{shape}`")))?;
                    let [n, c, h, w] = dims[..] else {
                        return Err(bad(format!("shape `{shape}` is not 4-D")));
                    };
                    let offset: usize = offset
                        .parse()
                        .map_err(|_| bad(format!("bad offset `{offset}`")))?;
                    tensors.push((name.to_string(), Shape::new(n, c, h, w), offset));
                }
                Some(other) => return Err(bad(format!("unknown record `{other}`"))),
                None => {}
            }
        }
        let config = config.ok_or_else(|| bad("no config line".into()))?;
        let bin = match blob {
            Some(name) => path.with_file_name(name),
            None => blob_path(path),
        };
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut net = Network::build(config)?;
        let read = |name: &str, shape: Shape| -> Result<Tensor> {
            let (_, s, off) = tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if *s != shape {
                return Err(bad(format!(
                    "tensor `{name}` has shape {s}, model expects {shape}"
                )));
            }
            let end = off + 8 * shape.numel();
            let raw = bytes
                .get(*off..end)
                .ok_or_else(|| bad(format!("tensor `{name}` runs past the blob")))?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::from_vec(shape, data)
        };
        for l in &mut net.layers {
            l.conv.weight = read(&format!("{}.weight", l.name), l.conv.weight.shape())?;
            l.conv.bias = read(&format!("{}.bias", l.name), l.conv.bias.shape())?;
            if let Some(bn) = l.bn.as_mut() {
                let cs = bn.gamma.shape();
                bn.gamma = read(&format!("{}.bn.gamma", l.name), cs)?;
                bn.beta = read(&format!("{}.bn.beta", l.name), cs)?;
                bn.running_mean = read(&format!("{}.bn.running_mean", l.name), cs)?.into_vec();
                bn.running_var = read(&format!("{}.bn.running_var", l.name), cs)?.into_vec();
                if let Some((m, e)) = bn_consts {
                    bn.momentum = m;
                    bn.eps = e;
                }
            }
        }
        Ok(net)
    }
}

fn key_values<'a>(parts: impl Iterator<Item = &'a str>) -> Vec<(String, String)> {
    parts
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unet_channel_plan() {
        let net = build_unet(NetConfig::unet(3, 1.0, PaddingMode::Zero)).unwrap();
        let plan: Vec<(String, usize, usize)> = net
            .layers
            .iter()
            .map(|l| (l.name.clone(), l.conv.in_channels(), l.conv.out_channels()))
            .collect();
        let expect = [
            ("conv1_1", 3, 64),
            ("conv1_2", 64, 64),
            ("conv2_1", 64, 128),
            ("conv2_2", 128, 128),
            ("conv3_1", 128, 256),
            ("conv3_2", 256, 256),
            ("conv4_1", 256, 512),
            ("conv4_2", 512, 512),
            ("conv5_1", 512, 512),
            ("conv5_2", 512, 512),
            ("conv6_1", 1024, 256),
            ("conv6_2", 256, 256),
            ("conv7_1", 512, 128),
            ("conv7_2", 128, 128),
            ("conv8_1", 256, 64),
            ("conv8_2", 64, 64),
            ("conv9_1", 128, 64),
            ("conv9_2", 64, 64),
            ("score", 64, 4),
        ];
        assert_eq!(plan.len(), expect.len());
        for (got, want) in plan.iter().zip(expect) {
            assert_eq!((got.0.as_str(), got.1, got.2), want);
        }
        assert!(net.layers.last().unwrap().bn.is_none());
        assert_eq!(net.layers.last().unwrap().conv.kernel(), 1);
    }

    #[test]
    fn smallcnn_receptive_field() {
        let net = build_smallcnn(NetConfig::small_cnn(1, 1.0 / 8.0, PaddingMode::Zero)).unwrap();
        assert_eq!(net.receptive_field(), 7);
        assert_eq!(net.layers.len(), 4);
    }

    #[test]
    fn unet_rejects_bad_extent() {
        let mut net = Network::new(NetConfig::unet(1, 1.0 / 16.0, PaddingMode::Zero), 0).unwrap();
        assert!(net.infer(&Tensor::zeros(Shape::new(1, 1, 24, 32))).is_err());
        assert!(net.infer(&Tensor::zeros(Shape::new(1, 3, 32, 32))).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let cfg = NetConfig::unet(3, 0.125, PaddingMode::Reflect);
        let a = Network::new(cfg, 7).unwrap();
        let b = Network::new(cfg, 7).unwrap();
        let c = Network::new(cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in &a.layers {
            assert!(l.conv.bias.data().iter().all(|&v| v == 0.0));
            if let Some(bn) = &l.bn {
                assert!(bn.gamma.data().iter().all(|&v| v == 1.0));
                assert!(bn.beta.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(build_unet(NetConfig::unet(2, 1.0, PaddingMode::Zero)).is_err());
        assert!(build_unet(NetConfig::unet(1, 0.0, PaddingMode::Zero)).is_err());
        assert!(build_smallcnn(NetConfig::small_cnn(1, 1.0, PaddingMode::None)).is_err());
    }
}
