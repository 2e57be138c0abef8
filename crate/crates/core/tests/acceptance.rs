//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! that the lines come out in order and every criterion is attempted even
//! when an earlier one fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use seglab::degrade::{DegradationKind, DegradationSpec};
use seglab::experiments::{write_tables, ExperimentConfig, ExperimentKind, Lab, ModelKey};
use seglab::models::{Architecture, NetConfig, Network};
use seglab::nn::PaddingMode;
use seglab::posenc::PeConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pe(lambda: f64) -> PeConfig {
    PeConfig::with_lambda(lambda).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Seed-averaged test Dice of one model family under `spec`.
fn dice(
    lab: &mut Lab,
    arch: Architecture,
    padding: PaddingMode,
    pe: PeConfig,
    spec: &DegradationSpec,
) -> f64 {
    let v: Vec<f64> = SEEDS
        .iter()
        .map(|&s| {
            let key = ModelKey::new(arch, padding, pe, lab.full_size(), s);
            lab.evaluate(key, spec).unwrap()
        })
        .collect();
    mean(&v)
}

fn unet(lab: &mut Lab, padding: PaddingMode, pe: PeConfig, spec: &DegradationSpec) -> f64 {
    dice(lab, Architecture::UNet, padding, pe, spec)
}

fn gradients() -> Outcome {
    let (name, seed, worst) = common::gradient_suite(0..20);
    outcome(
        worst <= 1e-4,
        format!("worst rel err {worst:.2e} ({name}, seed {seed})"),
    )
}

fn equivariance() -> Outcome {
    let shifts: Result<Vec<usize>, String> = (0..50).map(common::shift_case).collect();
    let interior: Result<Vec<usize>, String> = (0..50).map(common::interior_case).collect();
    match (shifts, interior) {
        (Ok(a), Ok(b)) => outcome(
            true,
            format!(
                "50 shifts, {} overlap pixels; 50 interior checks, {} pixels",
                a.iter().sum::<usize>(),
                b.iter().sum::<usize>()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn pe_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut ends = true;
    for (w, h, l) in [(256, 256, 1.0), (11, 5, 10.0), (64, 64, 256.0)] {
        let (err, exact) = common::pe_case(w, h, l);
        worst = worst.max(err);
        ends &= exact;
    }
    outcome(
        worst <= 1.0 && ends,
        format!("max deviation {worst:.2} ulp(lambda), endpoints exact: {ends}"),
    )
}

fn degradation_stats() -> Outcome {
    let ((_, gv), (sm, sv)) = common::degradation_moments(0.08, 50.0);
    let gauss = (gv - 6.4e-3).abs() / 6.4e-3;
    let shot_v = (sv - 1.0e-2).abs() / 1.0e-2;
    let shot_m = (sm - 0.5).abs() / 0.5;
    outcome(
        gauss <= 0.05 && shot_v <= 0.05 && shot_m <= 0.005,
        format!("gaussian var {gv:.3e}, shot var {sv:.3e}, shot mean {sm:.5}"),
    )
}

fn dice_oracle() -> Outcome {
    let bad = common::dice_oracle_mismatches();
    outcome(bad == 0, format!("{bad} mismatches over 100 pairs"))
}

fn small_model_rescue() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.arch = Architecture::SmallCnn;
    cfg.seeds = SEEDS.to_vec();
    cfg.pe_on = pe(256.0);
    let mut lab = Lab::new(cfg).unwrap();
    lab.verbose = true;
    let on = dice(
        &mut lab,
        Architecture::SmallCnn,
        PaddingMode::Zero,
        pe(256.0),
        &DegradationSpec::CLEAN,
    );
    let off = dice(
        &mut lab,
        Architecture::SmallCnn,
        PaddingMode::Zero,
        PeConfig::OFF,
        &DegradationSpec::CLEAN,
    );
    let base = lab.evaluate_baseline(&DegradationSpec::CLEAN).unwrap();
    outcome(
        on >= base + 0.10 && on - off >= 0.15,
        format!("pe-on {on:.4}, pe-off {off:.4}, averaged mask {base:.4}"),
    )
}

fn harshest_noise(cfg: &ExperimentConfig) -> DegradationSpec {
    let specs = cfg.grid.specs(DegradationKind::GaussianNoise).unwrap();
    *specs.last().unwrap()
}

fn robustness(lab: &mut Lab) -> Outcome {
    let harsh = harshest_noise(&lab.cfg);
    let off = unet(lab, PaddingMode::Zero, PeConfig::OFF, &harsh);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for l in [1.0, 10.0, 256.0] {
        let d = unet(lab, PaddingMode::Zero, pe(l), &harsh);
        if d > best.0 {
            best = (d, l);
        }
    }
    let clean_off = unet(
        lab,
        PaddingMode::Zero,
        PeConfig::OFF,
        &DegradationSpec::CLEAN,
    );
    let clean_one = unet(lab, PaddingMode::Zero, pe(1.0), &DegradationSpec::CLEAN);
    let gap = (clean_one - clean_off).abs();
    outcome(
        best.0 - off >= 0.05 && gap <= 0.05,
        format!(
            "noise {}: best pe (lambda {}) {:.4} vs off {off:.4}; clean |pe1 - off| {gap:.4}",
            harsh.param, best.1, best.0
        ),
    )
}

fn shift(lab: &mut Lab) -> Outcome {
    let on = lab.cfg.pe_on;
    let s12 = DegradationSpec::new(DegradationKind::ShiftX, 12.0).unwrap();
    let clean_on = unet(lab, PaddingMode::Zero, on, &DegradationSpec::CLEAN);
    let shift_on = unet(lab, PaddingMode::Zero, on, &s12);
    let shift_off = unet(lab, PaddingMode::Zero, PeConfig::OFF, &s12);
    outcome(
        clean_on - shift_on >= 0.10 && shift_on < shift_off,
        format!(
            "pe-on clean {clean_on:.4}, shift 12 {shift_on:.4}; pe-off shift 12 {shift_off:.4}"
        ),
    )
}

fn padding(lab: &mut Lab) -> Outcome {
    let on = lab.cfg.pe_on;
    let clean_gap = (unet(
        lab,
        PaddingMode::Zero,
        PeConfig::OFF,
        &DegradationSpec::CLEAN,
    ) - unet(
        lab,
        PaddingMode::Reflect,
        PeConfig::OFF,
        &DegradationSpec::CLEAN,
    ))
    .abs();
    let mut worst: Option<(String, f64, f64)> = None;
    let mut failures = 0;
    let mut points = 0;
    for kind in lab.cfg.kinds.clone() {
        for spec in lab.cfg.grid.specs(kind).unwrap() {
            let gap = |lab: &mut Lab, pe: PeConfig| {
                (unet(lab, PaddingMode::Zero, pe, &spec)
                    - unet(lab, PaddingMode::Reflect, pe, &spec))
                .abs()
            };
            let (g_on, g_off) = (gap(lab, on), gap(lab, PeConfig::OFF));
            points += 1;
            if g_on > g_off {
                failures += 1;
                if worst.as_ref().is_none_or(|w| g_on - g_off > w.1 - w.2) {
                    worst = Some((format!("{} {}", kind.name(), spec.param), g_on, g_off));
                }
            }
        }
    }
    let detail = match &worst {
        Some((at, g_on, g_off)) => format!(
            "clean gap {clean_gap:.4}; pe-on gap exceeds pe-off gap at {failures}/{points} severities, worst {at}: {g_on:.4} > {g_off:.4}"
        ),
        None => format!("clean gap {clean_gap:.4}; pe-on gap <= pe-off gap at all {points} severities"),
    };
    outcome(clean_gap <= 0.05 && failures == 0, detail)
}

fn tiny_run(dir: &Path) -> ExperimentConfig {
    let text = "arch = small\nepochs = 2\nseeds = 4\npe_sweep = off, 10\npe_on = 10\n\
                kinds = gaussian_noise\nnoise_levels = 0.1\nsynth.train = 12\nsynth.val = 4\nsynth.test = 4\n";
    let cfg = ExperimentConfig::parse(text).unwrap();
    let mut lab = Lab::new(cfg.clone()).unwrap();
    lab.model_dir = Some(dir.to_path_buf());
    let tables = lab.run(ExperimentKind::SmallModel).unwrap();
    write_tables(dir, ExperimentKind::SmallModel, &tables).unwrap();
    cfg
}

/// A training log without its last column, `wall_seconds`.
fn without_wall_clock(log: &str) -> String {
    log.lines()
        .map(|l| match l.rfind(',') {
            Some(i) if !l.starts_with('#') => &l[..i],
            _ => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("models")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if !p.is_file() {
                continue;
            }
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            let mut bytes = fs::read(&p).unwrap();
            if name.ends_with(".log.csv") {
                bytes = without_wall_clock(&String::from_utf8(bytes).unwrap()).into_bytes();
            }
            out.push((name, bytes));
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    tiny_run(a.path());
    tiny_run(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let same = fa == fb;
    let ckpts = fa.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();

    let net = Network::new(NetConfig::unet(3, 0.125, PaddingMode::Reflect), 7).unwrap();
    let path = a.path().join("roundtrip.ckpt");
    net.save(&path).unwrap();
    let back = Network::load(&path).unwrap();
    let round_trip = back == net;
    outcome(
        same && ckpts > 0 && round_trip,
        format!(
            "{} files compared ({ckpts} checkpoints), identical: {same}; round trip exact: {round_trip}",
            fa.len()
        ),
    )
}

fn reference_values() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = fs::read_to_string(&readme).unwrap_or_default();
    let wanted = ["0.9673", "0.0011", "0.8124", "0.158", "0.8813", "0.9020"];
    let missing: Vec<&str> = wanted
        .iter()
        .copied()
        .filter(|v| !text.contains(v))
        .collect();
    let explained = text.contains("not reproduced");
    outcome(
        missing.is_empty() && explained,
        format!("missing values {missing:?}, marked as not reproduced: {explained}"),
    )
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome, failed: &mut usize) {
    let t = Instant::now();
    let o = f();
    let status = if o.pass { "PASS" } else { "FAIL" };
    println!(
        "{status} criterion {id:>2} {name}: {} [{:.1}s]",
        o.detail,
        t.elapsed().as_secs_f64()
    );
    if !o.pass {
        *failed += 1;
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    report(1, "gradient suite", gradients, &mut failed);
    report(2, "equivariance", equivariance, &mut failed);
    report(3, "pe exactness", pe_exactness, &mut failed);
    report(4, "degradation statistics", degradation_stats, &mut failed);
    report(5, "dice oracle", dice_oracle, &mut failed);
    report(6, "small-model pe rescue", small_model_rescue, &mut failed);

    let mut cfg = ExperimentConfig::default();
    cfg.seeds = SEEDS.to_vec();
    let mut lab = Lab::new(cfg).unwrap();
    lab.verbose = true;
    report(7, "robustness trend", || robustness(&mut lab), &mut failed);
    report(8, "shift trend", || shift(&mut lab), &mut failed);
    report(9, "padding trend", || padding(&mut lab), &mut failed);

    report(10, "determinism", determinism, &mut failed);
    report(11, "reference values", reference_values, &mut failed);
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
