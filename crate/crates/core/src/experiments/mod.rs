//! Experiment drivers: train grids of networks and tabulate their test Dice
//! on clean, degraded and shifted inputs.
//!
//! A [`Lab`] owns the dataset and every network it has trained, keyed by
//! [`ModelKey`], so runners that need the same model share one training.

pub mod config;
pub mod plot;
mod table;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{DataSource, ExperimentConfig, SubsetSize};
pub use table::{emit_plot, Row, Table};

use crate::data::{averaged_mask, Dataset, DatasetManifest, NormStats, Split};
use crate::degrade::{DegradationKind, DegradationSpec};
use crate::error::{Error, Result};
use crate::image::Sample;
use crate::metrics::{evaluate, ConstantMask, Segmenter};
use crate::models::{Architecture, NetConfig, Network};
use crate::nn::PaddingMode;
use crate::pipeline::prepare;
use crate::posenc::PeConfig;
use crate::rng::SplitMix64;
use crate::train::{log_csv, train, EpochLog, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Standard,
    SmallModel,
    ReducedData,
    Padding,
    Shift,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Standard => "standard",
            ExperimentKind::SmallModel => "small",
            ExperimentKind::ReducedData => "reduced",
            ExperimentKind::Padding => "padding",
            ExperimentKind::Shift => "shift",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => ExperimentKind::Standard,
            "small" | "small-model" => ExperimentKind::SmallModel,
            "reduced" | "reduced-data" => ExperimentKind::ReducedData,
            "padding" => ExperimentKind::Padding,
            "shift" => ExperimentKind::Shift,
            other => {
                return Err(Error::invalid(
                    "experiment",
                    format!("unknown experiment `{other}`"),
                ))
            }
        })
    }
}

/// Identity of one trained network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelKey {
    pub arch: Architecture,
    pub padding: PaddingMode,
    /// `to_bits` of lambda, `None` without PE.
    lambda_bits: Option<u64>,
    pub train_size: usize,
    pub seed: u64,
}

impl ModelKey {
    pub fn new(
        arch: Architecture,
        padding: PaddingMode,
        pe: PeConfig,
        train_size: usize,
        seed: u64,
    ) -> Self {
        ModelKey {
            arch,
            padding,
            lambda_bits: pe.enabled.then(|| pe.lambda.to_bits()),
            train_size,
            seed,
        }
    }

    pub fn pe(&self) -> PeConfig {
        match self.lambda_bits {
            Some(b) => PeConfig {
                lambda: f64::from_bits(b),
                enabled: true,
            },
            None => PeConfig::OFF,
        }
    }

    /// File stem for checkpoints and logs.
    pub fn name(&self) -> String {
        format!(
            "{}-{}-pe{}-n{}-seed{}",
            self.arch.name(),
            self.padding.name(),
            self.pe().label(),
            self.train_size,
            self.seed
        )
    }
}

/// A trained network with the statistics its inputs are normalized by.
#[derive(Clone, Debug)]
pub struct Trained {
    pub network: Network,
    pub stats: NormStats,
    pub log: Vec<EpochLog>,
    pub selected_epoch: usize,
}

/// Sidecar of a saved checkpoint recording how its inputs are built.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunInfo {
    pub pe: PeConfig,
    pub norm: NormStats,
    pub train_size: usize,
    pub seed: u64,
    pub selected_epoch: usize,
}

impl RunInfo {
    /// `<stem>.run.json` next to checkpoint `<stem>.ckpt`.
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("run.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Label of a PE setting in result tables: `pe-off`, `pe-10`, ...
pub fn pe_label(pe: &PeConfig) -> String {
    format!("pe-{}", pe.label())
}

const SUBSET_TAG: u64 = 0x5355_4253;

pub struct Lab {
    pub cfg: ExperimentConfig,
    pub data: Dataset,
    /// Checkpoints and training logs go under `<dir>/models` when set.
    pub model_dir: Option<PathBuf>,
    /// Report each training on stderr.
    pub verbose: bool,
    models: HashMap<ModelKey, Trained>,
    clean: HashMap<ModelKey, f64>,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = load_data(&cfg.data)?;
        Ok(Lab {
            cfg,
            data,
            model_dir: None,
            verbose: false,
            models: HashMap::new(),
            clean: HashMap::new(),
        })
    }

    pub fn full_size(&self) -> usize {
        self.data.train.len()
    }

    /// Key of a network trained on the full training split.
    pub fn key(
        &self,
        arch: Architecture,
        padding: PaddingMode,
        pe: PeConfig,
        seed: u64,
    ) -> ModelKey {
        ModelKey::new(arch, padding, pe, self.full_size(), seed)
    }

    /// The training samples of a run: the whole split, or a seeded random
    /// subset of it kept in split order.
    pub fn training_subset(&self, size: usize, seed: u64) -> Result<Vec<Sample>> {
        let full = self.full_size();
        if size > full {
            return Err(Error::invalid(
                "subset",
                format!("subset of {size} from a training split of {full}"),
            ));
        }
        if size == full {
            return Ok(self.data.train.clone());
        }
        let mut idx: Vec<usize> = (0..full).collect();
        SplitMix64::derive(seed, &[SUBSET_TAG, size as u64]).shuffle(&mut idx);
        let mut chosen = idx[..size].to_vec();
        chosen.sort_unstable();
        Ok(chosen
            .into_iter()
            .map(|i| self.data.train[i].clone())
            .collect())
    }

    pub fn net_config(&self, arch: Architecture, padding: PaddingMode, pe: &PeConfig) -> NetConfig {
        match arch {
            Architecture::UNet => NetConfig::unet(pe.channels(), self.cfg.width, padding),
            Architecture::SmallCnn => NetConfig::small_cnn(pe.channels(), self.cfg.width, padding),
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.cfg.train.clone()
        }
    }

    /// The network for `key`, training it on first use.
    pub fn model(&mut self, key: ModelKey) -> Result<&mut Trained> {
        if !self.models.contains_key(&key) {
            let trained = self.train_model(&key)?;
            self.models.insert(key, trained);
        }
        Ok(self.models.get_mut(&key).expect("inserted above"))
    }

    fn train_model(&self, key: &ModelKey) -> Result<Trained> {
        let pe = key.pe();
        let samples = self.training_subset(key.train_size, key.seed)?;
        let stats = NormStats::compute(&samples)?;
        let train_set = prepare(&samples, &stats, &pe, None)?;
        let val_set = prepare(&self.data.val, &stats, &pe, None)?;
        let net = Network::new(self.net_config(key.arch, key.padding, &pe), key.seed)?;
        let started = std::time::Instant::now();
        let cfg = self.train_config(key.seed);
        let out = train(net, &train_set, &val_set, &cfg)?;
        if self.verbose {
            eprintln!(
                "trained {} in {:.1}s, selected epoch {} (val dice {:.4})",
                key.name(),
                started.elapsed().as_secs_f64(),
                out.selected_epoch,
                out.log[out.selected_epoch - 1].val_dice
            );
        }
        if let Some(dir) = &self.model_dir {
            let dir = dir.join("models");
            let ckpt = dir.join(format!("{}.ckpt", key.name()));
            out.network.save(&ckpt)?;
            RunInfo {
                pe,
                norm: stats,
                train_size: key.train_size,
                seed: key.seed,
                selected_epoch: out.selected_epoch,
            }
            .save(&RunInfo::path_for(&ckpt))?;
            let log = dir.join(format!("{}.log.csv", key.name()));
            fs::write(&log, log_csv(&out.log, &cfg.adam)).map_err(|e| Error::io(&log, e))?;
        }
        Ok(Trained {
            network: out.network,
            stats,
            log: out.log,
            selected_epoch: out.selected_epoch,
        })
    }

    /// Mean test Dice of `key`'s network on inputs degraded by `spec`.
    pub fn evaluate(&mut self, key: ModelKey, spec: &DegradationSpec) -> Result<f64> {
        let clean = spec.kind == DegradationKind::Clean;
        if clean {
            if let Some(&d) = self.clean.get(&key) {
                return Ok(d);
            }
        }
        let (seed, empty) = (self.cfg.degrade_seed, self.cfg.empty_class());
        let test = std::mem::take(&mut self.data.test);
        let result: Result<f64> = (|| {
            let model = self.model(key)?;
            let data = prepare(&test, &model.stats, &key.pe(), Some((spec, seed)))?;
            Ok(evaluate(&mut model.network, &data, empty)?.mean)
        })();
        self.data.test = test;
        let d = result?;
        if clean {
            self.clean.insert(key, d);
        }
        Ok(d)
    }

    /// Mean test Dice of the averaged training mask on inputs degraded by
    /// `spec`, scored through the same path as a network.
    pub fn evaluate_baseline(&self, spec: &DegradationSpec) -> Result<f64> {
        let mut baseline = ConstantMask(averaged_mask(&self.data.train)?);
        let stats = NormStats::compute(&self.data.train)?;
        let data = prepare(
            &self.data.test,
            &stats,
            &PeConfig::OFF,
            Some((spec, self.cfg.degrade_seed)),
        )?;
        let model: &mut dyn Segmenter = &mut baseline;
        Ok(evaluate(model, &data, self.cfg.empty_class())?.mean)
    }

    /// Dice-versus-severity tables, one per configured degradation kind.
    /// Each configuration is a label and the model key for a given seed;
    /// `None` keys denote the averaged-mask baseline.
    fn robustness(
        &mut self,
        configs: &[(String, Box<dyn Fn(u64) -> Option<ModelKey>>)],
    ) -> Result<Vec<Table>> {
        let seeds = self.cfg.seeds.clone();
        let mut tables = Vec::new();
        for kind in self.cfg.kinds.clone() {
            let mut t = Table::new(kind.name(), "level", &seeds);
            let mut specs = vec![DegradationSpec::CLEAN];
            specs.extend(self.cfg.grid.specs(kind)?);
            for (label, key_of) in configs {
                for (level, spec) in specs.iter().enumerate() {
                    let per_seed = seeds
                        .iter()
                        .map(|&s| match key_of(s) {
                            Some(k) => self.evaluate(k, spec),
                            None => self.evaluate_baseline(spec),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    t.rows.push(Row {
                        config: label.clone(),
                        kind: spec.kind.name().to_string(),
                        x: level as i64,
                        param: if level == 0 { 0.0 } else { spec.param },
                        per_seed,
                    });
                }
            }
            tables.push(t);
        }
        Ok(tables)
    }

    /// Clean test Dice of every configuration, one row each.
    fn clean_table(
        &mut self,
        configs: &[(String, Box<dyn Fn(u64) -> Option<ModelKey>>)],
    ) -> Result<Table> {
        let seeds = self.cfg.seeds.clone();
        let mut t = Table::new("clean", "level", &seeds);
        for (label, key_of) in configs {
            let per_seed = seeds
                .iter()
                .map(|&s| match key_of(s) {
                    Some(k) => self.evaluate(k, &DegradationSpec::CLEAN),
                    None => self.evaluate_baseline(&DegradationSpec::CLEAN),
                })
                .collect::<Result<Vec<_>>>()?;
            t.rows.push(Row {
                config: label.clone(),
                kind: "clean".into(),
                x: 0,
                param: 0.0,
                per_seed,
            });
        }
        Ok(t)
    }

    /// U-net for every PE setting of the lambda sweep.
    pub fn run_standard(&mut self) -> Result<Vec<Table>> {
        let (padding, full) = (self.cfg.padding, self.full_size());
        let configs = self
            .cfg
            .pe_sweep
            .iter()
            .map(|&pe| unet_config(pe_label(&pe), padding, pe, full))
            .collect::<Vec<_>>();
        let mut tables = vec![self.clean_table(&configs)?];
        tables.extend(self.robustness(&configs)?);
        Ok(tables)
    }

    /// Small CNN without and with PE, next to the averaged-mask baseline.
    pub fn run_small_model(&mut self) -> Result<Vec<Table>> {
        let (padding, full, on) = (self.cfg.padding, self.full_size(), self.cfg.pe_on);
        let small = |pe: PeConfig| -> (String, Box<dyn Fn(u64) -> Option<ModelKey>>) {
            (
                format!("small-{}", pe_label(&pe)),
                Box::new(move |s| {
                    Some(ModelKey::new(Architecture::SmallCnn, padding, pe, full, s))
                }),
            )
        };
        let configs = vec![
            small(PeConfig::OFF),
            small(on),
            (
                "baseline".to_string(),
                Box::new(|_| None) as Box<dyn Fn(u64) -> Option<ModelKey>>,
            ),
        ];
        let mut tables = vec![self.clean_table(&configs)?];
        tables.extend(self.robustness(&configs)?);
        Ok(tables)
    }

    /// Clean Dice of U-nets trained on training subsets of each configured
    /// size, without and with PE.
    pub fn run_reduced_data(&mut self) -> Result<Vec<Table>> {
        let seeds = self.cfg.seeds.clone();
        let full = self.full_size();
        let sizes: Vec<usize> = self
            .cfg
            .subset_sizes
            .iter()
            .map(|s| s.resolve(full))
            .collect();
        if let Some(&n) = sizes.iter().find(|&&n| n > full) {
            return Err(Error::invalid(
                "reduced_data",
                format!("subset of {n} from a training split of {full}"),
            ));
        }
        let mut t = Table::new("clean_by_size", "train_size", &seeds);
        for pe in [PeConfig::OFF, self.cfg.pe_on] {
            for &n in &sizes {
                let per_seed = seeds
                    .iter()
                    .map(|&s| {
                        let key = ModelKey::new(Architecture::UNet, self.cfg.padding, pe, n, s);
                        self.evaluate(key, &DegradationSpec::CLEAN)
                    })
                    .collect::<Result<Vec<_>>>()?;
                t.rows.push(Row {
                    config: pe_label(&pe),
                    kind: "clean".into(),
                    x: n as i64,
                    param: 0.0,
                    per_seed,
                });
            }
        }
        Ok(vec![t])
    }

    /// Zero and reflect padding, each without and with PE.
    pub fn run_padding(&mut self) -> Result<Vec<Table>> {
        let (full, on) = (self.full_size(), self.cfg.pe_on);
        let mut configs = Vec::new();
        for padding in [PaddingMode::Zero, PaddingMode::Reflect] {
            for pe in [PeConfig::OFF, on] {
                configs.push(unet_config(
                    format!("{}-{}", padding.name(), pe_label(&pe)),
                    padding,
                    pe,
                    full,
                ));
            }
        }
        let mut tables = vec![self.clean_table(&configs)?];
        tables.extend(self.robustness(&configs)?);
        Ok(tables)
    }

    /// Dice of U-nets without and with PE on test inputs shifted along x.
    pub fn run_shift(&mut self) -> Result<Vec<Table>> {
        let seeds = self.cfg.seeds.clone();
        let (padding, on) = (self.cfg.padding, self.cfg.pe_on);
        let mut t = Table::new("shift", "shift", &seeds);
        for pe in [PeConfig::OFF, on] {
            for &dx in &self.cfg.shifts.clone() {
                let spec = DegradationSpec::new(DegradationKind::ShiftX, dx as f64)?;
                let per_seed = seeds
                    .iter()
                    .map(|&s| {
                        let key = self.key(Architecture::UNet, padding, pe, s);
                        self.evaluate(key, &spec)
                    })
                    .collect::<Result<Vec<_>>>()?;
                t.rows.push(Row {
                    config: pe_label(&pe),
                    kind: spec.kind.name().into(),
                    x: dx,
                    param: dx as f64,
                    per_seed,
                });
            }
        }
        Ok(vec![t])
    }

    pub fn run(&mut self, kind: ExperimentKind) -> Result<Vec<Table>> {
        match kind {
            ExperimentKind::Standard => self.run_standard(),
            ExperimentKind::SmallModel => self.run_small_model(),
            ExperimentKind::ReducedData => self.run_reduced_data(),
            ExperimentKind::Padding => self.run_padding(),
            ExperimentKind::Shift => self.run_shift(),
        }
    }
}

fn unet_config(
    label: String,
    padding: PaddingMode,
    pe: PeConfig,
    full: usize,
) -> (String, Box<dyn Fn(u64) -> Option<ModelKey>>) {
    (
        label,
        Box::new(move |s| Some(ModelKey::new(Architecture::UNet, padding, pe, full, s))),
    )
}

/// Loads a manifest or generates the synthetic dataset in memory.
pub fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Manifest(path) => DatasetManifest::load(path)?.load_dataset(),
        DataSource::Synth(cfg) => {
            let mut d = Dataset::default();
            for (split, s) in cfg.generate()? {
                match split {
                    Split::Train => d.train.push(s),
                    Split::Val => d.val.push(s),
                    Split::Test => d.test.push(s),
                }
            }
            d.check_extents()?;
            Ok(d)
        }
    }
}

/// Writes `<experiment>_<table>.csv` and, for tables with more than one x
/// position, a matching `.svg` plot. Returns the written paths.
pub fn write_tables(
    dir: &Path,
    experiment: ExperimentKind,
    tables: &[Table],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for t in tables {
        let stem = format!("{}_{}", experiment.name(), t.name);
        let csv = t.to_csv()?;
        let path = dir.join(format!("{stem}.csv"));
        fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        let xs: std::collections::HashSet<i64> = t.rows.iter().map(|r| r.x).collect();
        if xs.len() > 1 {
            let svg = emit_plot(&csv, &format!("{} / {}", experiment.name(), t.name))?;
            let path = dir.join(format!("{stem}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
