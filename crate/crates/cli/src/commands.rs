//! Subcommand implementations. Each writes human-readable output to `out`
//! and its artifacts under the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use qefl_core::federation::{fine_tuned_variants, run_training, TrainingRun};
use qefl_core::metrics::{evaluate, write_metrics_csv, write_privacy_csv, Evaluation};
use qefl_core::nn::gradcheck::{gradcheck, gradcheck_with, GradcheckReport, TOLERANCE};
use qefl_core::nn::{example_loss_and_grad, QennArchitecture};
use qefl_core::privacy::{PrivacyReport, SensitivitySource};

use crate::config::RunConfig;
use crate::experiment::{prepare, test_set};
use crate::model_file;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PRIVACY_FILE: &str = "privacy.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const TABLE1_FILE: &str = "table1.csv";

#[derive(Debug)]
pub struct TrainArtifacts {
    pub run: TrainingRun,
    pub arch: QennArchitecture,
    pub dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn train_quiet(
    cfg: &RunConfig,
    parallel: bool,
    out: &mut dyn Write,
) -> Result<(TrainingRun, QennArchitecture)> {
    let prepared = prepare(cfg)?;
    let round_cfg = cfg.round_config(parallel);
    let mut io_err = None;
    let run = run_training(
        &prepared.arch,
        &prepared.initial,
        &prepared.clients,
        &prepared.test,
        &round_cfg,
        |record| {
            let mut line = record.metrics.progress_line();
            if record.outcome.empty_round {
                line.push_str(" empty_round");
            }
            if let Err(e) = writeln!(out, "{line}") {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    Ok((run, prepared.arch))
}

/// Train and write the config snapshot, metrics CSV, privacy CSV and model file.
pub fn train(
    cfg: &RunConfig,
    dir: &Path,
    parallel: bool,
    out: &mut dyn Write,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let (run, arch) = train_quiet(cfg, parallel, out)?;
    create_dir(dir)?;
    let snapshot = RunConfig {
        output_dir: dir.to_owned(),
        ..cfg.clone()
    };
    write_file(&dir.join(CONFIG_FILE), snapshot.to_toml().as_bytes())?;
    let mut metrics = Vec::new();
    write_metrics_csv(&run.metrics(), &mut metrics)?;
    write_file(&dir.join(METRICS_FILE), &metrics)?;
    let mut privacy = Vec::new();
    write_privacy_csv(&run.privacy_reports(), &mut privacy)?;
    write_file(&dir.join(PRIVACY_FILE), &privacy)?;
    write_file(
        &dir.join(MODEL_FILE),
        &model_file::encode(&arch, &run.final_params),
    )?;

    let last = run.history.last().expect("at least one round");
    writeln!(
        out,
        "final global model (after aggregation, test set): accuracy={:.6} macro_f1={:.6} loss={:.6}",
        last.metrics.accuracy, last.metrics.macro_f1, last.metrics.mean_loss
    )?;
    writeln!(out, "{}", privacy_summary_line(&last.outcome.privacy))?;
    writeln!(out, "artifacts written to {}", dir.display())?;
    Ok(TrainArtifacts {
        run,
        arch,
        dir: dir.to_owned(),
    })
}

fn privacy_summary_line(r: &PrivacyReport) -> String {
    if !r.is_bounded() {
        return "privacy: epsilon unbounded (no noise)".into();
    }
    let label = match r.source {
        SensitivitySource::ClipBound => "clip bound",
        SensitivitySource::Empirical => "empirical, not a guarantee",
    };
    format!(
        "privacy: epsilon_total={} over {} rounds (linear composition), delta={}, sensitivity {label}",
        r.epsilon_total, r.rounds_composed, r.delta
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub accuracies: Vec<f64>,
    pub test_size: usize,
}

/// Train the global model, then spawn `variants` mutated and fine-tuned
/// copies on one client's data and score each on the test set. Variants are
/// scored before privacy noise.
pub fn reproduce_table1(
    cfg: &RunConfig,
    dir: &Path,
    parallel: bool,
    out: &mut dyn Write,
) -> Result<Table1> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let round_cfg = cfg.round_config(parallel);
    let run = run_training(
        &prepared.arch,
        &prepared.initial,
        &prepared.clients,
        &prepared.test,
        &round_cfg,
        |_| {},
    )?;
    let client = &prepared.clients[cfg.table1_client];
    let variants = fine_tuned_variants(
        &prepared.arch,
        &run.final_params,
        client,
        &round_cfg,
        cfg.rounds + 1,
    )?;
    let accuracies = variants
        .iter()
        .map(|v| evaluate(&prepared.arch, &v.params, &prepared.test).map(|e| e.accuracy))
        .collect::<qefl_core::Result<Vec<_>>>()?;

    create_dir(dir)?;
    let mut csv = String::from("mutation,accuracy\n");
    writeln!(
        out,
        "Mutation ID | Accuracy  (pre-noise, test set of {})",
        prepared.test.len()
    )?;
    for (i, acc) in accuracies.iter().enumerate() {
        csv.push_str(&format!("M{},{}\n", i + 1, acc));
        writeln!(out, "M{:<10} | {:.6}", i + 1, acc)?;
    }
    write_file(&dir.join(TABLE1_FILE), csv.as_bytes())?;
    Ok(Table1 {
        accuracies,
        test_size: prepared.test.len(),
    })
}

/// Finite-difference check; `inject_fault` corrupts one gradient entry
/// so the failure path can be exercised.
pub fn gradcheck_cmd(
    seed: u64,
    draws: usize,
    inject_fault: bool,
    out: &mut dyn Write,
) -> Result<GradcheckReport> {
    let report = if inject_fault {
        gradcheck_with(seed, draws, |arch, params, x, label| {
            let mut g = example_loss_and_grad(arch, params, x, label)?.1;
            g.as_mut_slice()[0] += 1e-3;
            Ok(g)
        })?
    } else {
        gradcheck(seed, draws)?
    };
    writeln!(
        out,
        "gradcheck: {} draws, step 1e-5, tolerance {TOLERANCE:e}",
        report.draws
    )?;
    for w in &report.per_layer {
        writeln!(
            out,
            "layer {} worst: coordinate {} (draw {}) analytic={:e} numeric={:e} error={:e}",
            w.layer, w.coordinate, w.draw, w.analytic, w.numeric, w.error
        )?;
    }
    writeln!(
        out,
        "max relative error {:e}: {}",
        report.max_error,
        if report.passed() { "PASS" } else { "FAIL" }
    )?;
    Ok(report)
}

/// Train and print per-round privacy accounting. Refuses a zero noise std
/// unless `allow_unbounded` acknowledges that ε is infinite.
pub fn privacy_report(
    cfg: &RunConfig,
    allow_unbounded: bool,
    parallel: bool,
    out: &mut dyn Write,
) -> Result<Vec<PrivacyReport>> {
    cfg.validate()?;
    let sigma = if cfg.privacy_enabled {
        cfg.noise_sigma
    } else {
        0.0
    };
    if sigma == 0.0 && !allow_unbounded {
        bail!(
            "noise std is zero (noise_sigma = {}, privacy_enabled = {}): epsilon is unbounded; \
             pass --allow-unbounded to report anyway",
            cfg.noise_sigma,
            cfg.privacy_enabled
        );
    }
    let (run, _) = train_quiet(cfg, parallel, &mut std::io::sink())?;
    let reports = run.privacy_reports();
    let source = match cfg.clip_norm {
        Some(c) => format!("clip bound C = {c}"),
        None => "empirical max update norm (not a guarantee)".into(),
    };
    writeln!(out, "sensitivity source: {source}")?;
    writeln!(out, "noise std: {sigma}, delta: {}", cfg.dp_delta)?;
    writeln!(out, "round  sensitivity  epsilon_round  epsilon_total")?;
    for r in &reports {
        writeln!(
            out,
            "{:>5}  {:>11.6}  {:>13.6}  {:>13.6}",
            r.round, r.sensitivity, r.epsilon_round, r.epsilon_total
        )?;
    }
    if let Some(last) = reports.last() {
        writeln!(out, "{}", privacy_summary_line(last))?;
    }
    Ok(reports)
}

/// Score a saved model on the configured test split.
pub fn eval(cfg: &RunConfig, model: &Path, out: &mut dyn Write) -> Result<Evaluation> {
    let bytes = fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let (arch, params) =
        model_file::decode(&bytes).with_context(|| format!("decoding {}", model.display()))?;
    let test = test_set(cfg)?;
    if arch.input_dim() != test.input_dim() || arch.output_dim() != test.n_classes() {
        bail!(
            "model expects {} features / {} classes, data has {} / {}",
            arch.input_dim(),
            arch.output_dim(),
            test.input_dim(),
            test.n_classes()
        );
    }
    let e = evaluate(&arch, &params, &test)?;
    writeln!(
        out,
        "examples={} accuracy={:.6} macro_f1={:.6} loss={:.6}",
        test.len(),
        e.accuracy,
        e.macro_f1,
        e.mean_loss
    )?;
    Ok(e)
}
