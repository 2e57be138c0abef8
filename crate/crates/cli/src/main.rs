//! `seglab` command line: synthetic data, degradation corpora, single-model
//! training and evaluation, dataset summaries and the experiment runners.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seglab::data::{averaged_mask, write_mask, write_pgm, BitDepth, Histogram, NormStats, Split};
use seglab::degrade::{DegradationKind, DegradationSpec};
use seglab::experiments::{
    load_data, write_tables, DataSource, ExperimentConfig, ExperimentKind, Lab, RunInfo,
};
use seglab::metrics::{evaluate, ConstantMask, DiceReport, Segmenter};
use seglab::models::Network;
use seglab::pipeline::prepare;
use seglab::posenc::PeConfig;
use seglab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "seglab",
    version,
    about = "Positional-encoding segmentation lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (seed list for experiments, generator
    /// seed for gen-synth, noise seed for degrade and eval).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as PGM files plus a manifest.
    GenSynth(Common),
    /// Write degraded copies of the test split for every configured
    /// severity, with a manifest recording kind, severity and seed.
    Degrade(Common),
    /// Train one network with the configured arch, padding and PE.
    Train(Common),
    /// Score a checkpoint on the clean and degraded test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Score the averaged training mask on the clean and degraded test split.
    Baseline(Common),
    /// Histogram of normalized training intensities.
    Hist {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Run an experiment: standard, small, reduced, padding or shift.
    Exp {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let msg = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            return fail("usage", msg);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))?;
    println!("{}", path.display());
    Ok(())
}

/// Every configured degradation of the robustness grid, clean first.
fn grid(cfg: &ExperimentConfig) -> Result<Vec<(usize, DegradationSpec)>> {
    let mut out = vec![(0, DegradationSpec::CLEAN)];
    for kind in &cfg.kinds {
        for (i, s) in cfg.grid.specs(*kind)?.into_iter().enumerate() {
            out.push((i + 1, s));
        }
    }
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth(c) => gen_synth(&c),
        Command::Degrade(c) => degrade(&c),
        Command::Train(c) => train(&c),
        Command::Eval { common, model } => eval(&common, &model),
        Command::Baseline(c) => baseline(&c),
        Command::Hist { common, bins } => hist(&common, bins),
        Command::Exp { kind, common } => experiment(&kind, &common),
    }
}

fn gen_synth(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let DataSource::Synth(mut synth) = cfg.data else {
        return Err(Error::Config {
            line: 0,
            msg: "gen-synth needs a synthetic data source, not `data`".into(),
        });
    };
    if let Some(s) = c.seed {
        synth.seed = s;
    }
    mkdir(&c.out)?;
    let manifest = synth.write(&c.out)?;
    println!(
        "{} ({} samples)",
        c.out.join("manifest.jsonl").display(),
        manifest.entries.len()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct DegradedEntry {
    id: String,
    source: String,
    image: PathBuf,
    mask: PathBuf,
    split: Split,
    kind: DegradationKind,
    level: usize,
    severity: f64,
    seed: u64,
}

fn degrade(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let seed = c.seed.unwrap_or(cfg.degrade_seed);
    let data = load_data(&cfg.data)?;
    mkdir(&c.out)?;
    let mut lines = String::new();
    for (level, spec) in grid(&cfg)? {
        let sub = format!("{}_{level}", spec.kind.name());
        for dir in ["images", "masks"] {
            mkdir(&c.out.join(&sub).join(dir))?;
        }
        for (i, s) in data.test.iter().enumerate() {
            let image = Path::new(&sub).join("images").join(format!("{}.pgm", s.id));
            let mask = Path::new(&sub).join("masks").join(format!("{}.pgm", s.id));
            write_pgm(
                &spec.apply(&s.image, seed, i as u64)?,
                c.out.join(&image),
                BitDepth::Sixteen,
            )?;
            write_mask(&spec.apply_mask(&s.mask)?, c.out.join(&mask))?;
            let entry = DegradedEntry {
                id: format!("{sub}_{}", s.id),
                source: s.id.clone(),
                image,
                mask,
                split: Split::Test,
                kind: spec.kind,
                level,
                severity: spec.param,
                seed,
            };
            lines.push_str(&serde_json::to_string(&entry)?);
            lines.push('\n');
        }
    }
    write(&c.out.join("manifest.jsonl"), &lines)
}

fn train(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let seed = cfg.seeds[0];
    let (arch, padding, pe) = (cfg.arch, cfg.padding, cfg.pe);
    let mut lab = Lab::new(cfg)?;
    lab.model_dir = Some(c.out.clone());
    lab.verbose = true;
    let key = lab.key(arch, padding, pe, seed);
    lab.model(key)?;
    println!(
        "{}",
        c.out
            .join("models")
            .join(format!("{}.ckpt", key.name()))
            .display()
    );
    Ok(())
}

fn report_csv(rows: &[(usize, DegradationSpec, DiceReport)]) -> String {
    let mut s = String::from(
        "# dice: mean over foreground classes, then over test samples\n\
         kind,level,param,dice_mean,dice_class1,dice_class2,dice_class3\n",
    );
    for (level, spec, r) in rows {
        let classes: Vec<String> = r.per_class.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!(
            "{},{level},{},{},{}\n",
            spec.kind.name(),
            spec.param,
            r.mean,
            classes.join(",")
        ));
    }
    s
}

fn score(
    cfg: &ExperimentConfig,
    seed: u64,
    model: &mut dyn Segmenter,
    stats: &NormStats,
    pe: &PeConfig,
) -> Result<Vec<(usize, DegradationSpec, DiceReport)>> {
    let data = load_data(&cfg.data)?;
    let mut rows = Vec::new();
    for (level, spec) in grid(cfg)? {
        let prepared = prepare(&data.test, stats, pe, Some((&spec, seed)))?;
        rows.push((level, spec, evaluate(model, &prepared, cfg.empty_class())?));
    }
    Ok(rows)
}

fn eval(c: &Common, model: &Path) -> Result<()> {
    let cfg = config(c)?;
    let seed = c.seed.unwrap_or(cfg.degrade_seed);
    let mut net = Network::load(model)?;
    let info = RunInfo::load(&RunInfo::path_for(model))?;
    let rows = score(&cfg, seed, &mut net, &info.norm, &info.pe)?;
    mkdir(&c.out)?;
    write(&c.out.join("eval.csv"), &report_csv(&rows))
}

fn baseline(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let seed = c.seed.unwrap_or(cfg.degrade_seed);
    let data = load_data(&cfg.data)?;
    let mask = averaged_mask(&data.train)?;
    let stats = NormStats::compute(&data.train)?;
    mkdir(&c.out)?;
    write_mask(&mask, c.out.join("averaged_mask.pgm"))?;
    let mut model = ConstantMask(mask);
    let rows = score(&cfg, seed, &mut model, &stats, &PeConfig::OFF)?;
    write(&c.out.join("baseline.csv"), &report_csv(&rows))
}

fn hist(c: &Common, bins: usize) -> Result<()> {
    let cfg = config(c)?;
    let data = load_data(&cfg.data)?;
    let stats = NormStats::compute(&data.train)?;
    let pixels: Vec<f64> = data
        .train
        .iter()
        .flat_map(|s| stats.normalize(&s.image).data)
        .collect();
    let h = Histogram::of(pixels.iter(), bins)?;
    mkdir(&c.out)?;
    write(&c.out.join("histogram.csv"), &h.to_csv())?;
    write(
        &c.out.join("histogram.svg"),
        &h.to_svg("normalized training intensities"),
    )
}

fn experiment(kind: &str, c: &Common) -> Result<()> {
    let kind: ExperimentKind = kind.parse()?;
    let cfg = config(c)?;
    let save = cfg.save_models;
    let mut lab = Lab::new(cfg)?;
    if save {
        lab.model_dir = Some(c.out.clone());
    }
    lab.verbose = true;
    let tables = lab.run(kind)?;
    mkdir(&c.out)?;
    for path in write_tables(&c.out, kind, &tables)? {
        println!("{}", path.display());
    }
    Ok(())
}
