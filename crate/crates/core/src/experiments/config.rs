//! `key = value` experiment configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma separated. Unknown keys are errors carrying the line number.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Appearance, SynthConfig};
use crate::degrade::{DegradationKind, SeverityGrid};
use crate::error::{Error, Result};
use crate::metrics::EmptyClass;
use crate::models::Architecture;
use crate::nn::PaddingMode;
use crate::posenc::PeConfig;
use crate::train::{EmptyMode, Selection, TrainConfig};

/// Where samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated in memory.
    Synth(SynthConfig),
    /// A JSON-lines manifest on disk.
    Manifest(PathBuf),
}

/// Training-subset size for the reduced-data experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsetSize {
    Full,
    Count(usize),
}

impl SubsetSize {
    pub fn resolve(self, full: usize) -> usize {
        match self {
            SubsetSize::Full => full,
            SubsetSize::Count(n) => n,
        }
    }
}

impl FromStr for SubsetSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(SubsetSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(SubsetSize::Count(n)),
            _ => Err(Error::invalid("subset_sizes", format!("bad size `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Architecture for `train`/`eval`; runners fix their own.
    pub arch: Architecture,
    pub width: f64,
    /// Padding for single-model commands and the standard, reduced and
    /// shift runners; the padding runner always compares zero and reflect.
    pub padding: PaddingMode,
    /// The lambda sweep of the standard and reduced-data runners.
    pub pe_sweep: Vec<PeConfig>,
    /// The single PE setting of the small-model, padding and shift runners.
    pub pe_on: PeConfig,
    /// PE setting of single-model commands.
    pub pe: PeConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub kinds: Vec<DegradationKind>,
    pub grid: SeverityGrid,
    /// Seed of the test-time degradation noise, shared by every model.
    pub degrade_seed: u64,
    pub subset_sizes: Vec<SubsetSize>,
    pub shifts: Vec<i64>,
    /// Write checkpoints and training logs of every trained model.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synth(SynthConfig::default()),
            arch: Architecture::UNet,
            width: 0.125,
            padding: PaddingMode::Zero,
            pe_sweep: vec![PeConfig::OFF, pe(1.0), pe(10.0), pe(256.0)],
            pe_on: pe(256.0),
            pe: PeConfig::OFF,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            kinds: DegradationKind::ROBUSTNESS.to_vec(),
            grid: SeverityGrid::default(),
            degrade_seed: 0,
            subset_sizes: vec![
                SubsetSize::Full,
                SubsetSize::Count(10),
                SubsetSize::Count(5),
            ],
            shifts: (0..=16).collect(),
            save_models: true,
        }
    }
}

fn pe(lambda: f64) -> PeConfig {
    PeConfig {
        lambda,
        enabled: true,
    }
}

fn list<T: FromStr<Err = E>, E>(
    v: &str,
    f: impl Fn(E) -> String,
) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(&f))
        .collect()
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn nums<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    list(v, |_| format!("cannot parse list `{v}`"))
}

fn bool_value(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

/// Splits a config text into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (line, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v).map_err(|msg| Error::Config { line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // manifest paths are relative to the config file
        if let DataSource::Manifest(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn synth_mut(&mut self) -> std::result::Result<&mut SynthConfig, String> {
        match &mut self.data {
            DataSource::Synth(s) => Ok(s),
            DataSource::Manifest(_) => Err("synth.* keys conflict with `data`".into()),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let err = |e: Error| e.to_string();
        match key {
            "data" => self.data = DataSource::Manifest(PathBuf::from(v)),
            "arch" => self.arch = v.parse().map_err(err)?,
            "width" => self.width = num(v)?,
            "padding" => self.padding = v.parse().map_err(err)?,
            "pe" | "pe.lambda" => self.pe = v.parse().map_err(err)?,
            "pe_sweep" => self.pe_sweep = list(v, err)?,
            "pe_on" => {
                self.pe_on = v.parse().map_err(err)?;
                if !self.pe_on.enabled {
                    return Err("pe_on must be a lambda value".into());
                }
            }
            "epochs" => self.train.epochs = num(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "lr" => self.train.adam.lr = num(v)?,
            "beta1" => self.train.adam.beta1 = num(v)?,
            "beta2" => self.train.adam.beta2 = num(v)?,
            "adam_eps" => self.train.adam.eps = num(v)?,
            "shuffle" => self.train.shuffle = bool_value(v)?,
            "selection" => self.train.selection = v.parse::<Selection>().map_err(err)?,
            "empty_class" => {
                self.train.empty_class = match v {
                    "one" => EmptyMode::One,
                    "skip" => EmptyMode::Skip,
                    _ => return Err(format!("empty_class must be one or skip, got `{v}`")),
                }
            }
            "seed" => self.seeds = vec![num(v)?],
            "seeds" => self.seeds = nums(v)?,
            "kinds" => self.kinds = list(v, err)?,
            "noise_levels" => self.grid.gaussian_noise = nums(v)?,
            "blur_levels" => self.grid.gaussian_blur = nums(v)?,
            "shot_levels" => self.grid.shot_noise = nums(v)?,
            "blur_grid" => {
                self.grid.gaussian_blur = match v {
                    "default" => SeverityGrid::default().gaussian_blur,
                    "literal" => SeverityGrid::LITERAL_BLUR.to_vec(),
                    _ => return Err(format!("blur_grid must be default or literal, got `{v}`")),
                }
            }
            "degrade_seed" => self.degrade_seed = num(v)?,
            "subset_sizes" => self.subset_sizes = list(v, err)?,
            "shifts" => self.shifts = nums(v)?,
            "save_models" => self.save_models = bool_value(v)?,
            "synth.width" => self.synth_mut()?.width = num(v)?,
            "synth.height" => self.synth_mut()?.height = num(v)?,
            "synth.appearance" => {
                self.synth_mut()?.appearance = v.parse::<Appearance>().map_err(err)?
            }
            "synth.jitter" => self.synth_mut()?.jitter = num(v)?,
            "synth.train" => self.synth_mut()?.train = num(v)?,
            "synth.val" => self.synth_mut()?.val = num(v)?,
            "synth.test" => self.synth_mut()?.test = num(v)?,
            "synth.seed" => self.synth_mut()?.seed = num(v)?,
            "synth.pixel_noise" => self.synth_mut()?.pixel_noise = num(v)?,
            "synth.background_level" => self.synth_mut()?.background_level = num(v)?,
            "synth.organ_level" => self.synth_mut()?.organ_level = num(v)?,
            "synth.distinct_level" => self.synth_mut()?.distinct_level = num(v)?,
            "synth.disc_level" => self.synth_mut()?.disc_level = num(v)?,
            "synth.disc_radius" => self.synth_mut()?.disc_radius = num(v)?,
            "synth.texture" => self.synth_mut()?.texture_amplitude = num(v)?,
            "synth.clutter" => self.synth_mut()?.clutter = num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("config", msg));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.pe_sweep.is_empty() {
            return bad("pe_sweep must not be empty".into());
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad(format!("width must be positive, got {}", self.width));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.padding == PaddingMode::None {
            return bad("padding none cannot keep the U-net's skip extents aligned".into());
        }
        for kind in &self.kinds {
            if !DegradationKind::ROBUSTNESS.contains(kind) {
                return bad(format!("kind {kind} is not a robustness degradation"));
            }
            self.grid.specs(*kind)?;
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    pub fn empty_class(&self) -> EmptyClass {
        self.train.empty_class.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_desk_scale() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train.epochs, 30);
        assert_eq!(c.train.batch_size, 20);
        assert_eq!(c.width, 0.125);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        let labels: Vec<String> = c.pe_sweep.iter().map(|p| p.label()).collect();
        assert_eq!(labels, ["off", "1", "10", "256"]);
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# desk run\nepochs = 5\nseeds=3,4\npe_sweep = off, 10\nsynth.appearance = distinct\nblur_grid = literal\nsubset_sizes = full,7\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.pe_sweep.len(), 2);
        assert_eq!(c.grid.gaussian_blur, SeverityGrid::LITERAL_BLUR.to_vec());
        assert_eq!(c.subset_sizes, vec![SubsetSize::Full, SubsetSize::Count(7)]);
        match c.data {
            DataSource::Synth(s) => assert_eq!(s.appearance, Appearance::Distinct),
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("epochs = 3\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("epochs = three\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("no equals sign\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert!(ExperimentConfig::parse("seeds = \n").is_err());
    }
}
