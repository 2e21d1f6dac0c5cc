//! Subcommand bodies. Each writes its artifacts under `out` and returns
//! what it wrote so the binary can print a summary.

use std::fs;
use std::path::Path;

use ingsl_core::analysis::gradients::{gradient_battery, negative_control, GradientRow};
use ingsl_core::analysis::{
    lemma1_check, lemma2_check, redundancy_profile, Lemma1Config, Lemma2Config, LemmaReport,
    RedundancyPoint,
};
use ingsl_core::graph::{generate_sbm, normalize_adjacency, save_bundle, SbmSpec};
use ingsl_core::gsl::encode_structure;
use ingsl_core::tensor::{SparseVar, Tape};
use ingsl_core::{Graph64, Tensor64};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::{write_cells_csv, write_json, write_sweep_csv, Report};
use crate::runner::{run_cell, run_grid, thread_count};
use crate::CliError;

pub const REPORT_JSON: &str = "report.json";
pub const CELLS_CSV: &str = "cells.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const TIMINGS_JSON: &str = "timings.json";
pub const LEMMAS_JSON: &str = "lemmas.json";
pub const GRADCHECK_JSON: &str = "gradcheck.json";
pub const REDUNDANCY_CSV: &str = "redundancy.csv";

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Timing {
    mode: &'static str,
    r: f64,
    seed: u64,
    wall_time_s: f64,
}

fn run_and_write(cfg: ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    fs::create_dir_all(out)?;
    let runs = run_grid(&cfg, thread_count()?)?;
    let timings: Vec<Timing> = runs
        .iter()
        .map(|c| Timing {
            mode: c.cell.mode.as_str(),
            r: c.cell.r,
            seed: c.cell.seed,
            wall_time_s: c.wall_time_s,
        })
        .collect();
    let report = Report::new(cfg, runs.into_iter().map(|c| c.cell).collect());
    write_json(&out.join(REPORT_JSON), &report)?;
    write_cells_csv(&out.join(CELLS_CSV), &report.cells)?;
    write_json(&out.join(TIMINGS_JSON), &timings)?;
    Ok(report)
}

/// Runs every `(mode, r, seed)` cell of the config.
pub fn train(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Report, CliError> {
    run_and_write(load_config(config, seed)?, out)
}

/// Like [`train`] over at least two reduction levels, plus one CSV row
/// per `(mode, r)`.
pub fn sweep(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Report, CliError> {
    let cfg = load_config(config, seed)?;
    if cfg.reduction_levels.len() < 2 {
        return Err(CliError::Config(format!(
            "sweep needs at least 2 reduction levels, got {}",
            cfg.reduction_levels.len()
        )));
    }
    let report = run_and_write(cfg, out)?;
    write_sweep_csv(&out.join(SWEEP_CSV), &report.sweep_rows())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReports {
    pub lemma1: LemmaReport,
    pub lemma2: LemmaReport,
}

/// Both bound checks; fails with exit code 3 on any violation, after
/// the report has been written.
pub fn verify_lemmas(trials: usize, seed: u64, out: &Path) -> Result<LemmaReports, CliError> {
    if trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let reports = LemmaReports {
        lemma1: lemma1_check(&Lemma1Config {
            trials,
            seed,
            ..Lemma1Config::default()
        })?,
        lemma2: lemma2_check(&Lemma2Config {
            trials,
            seed,
            ..Lemma2Config::default()
        })?,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join(LEMMAS_JSON), &reports)?;
    for r in [&reports.lemma1, &reports.lemma2] {
        if !r.passed() {
            return Err(CliError::CheckFailed(format!(
                "{}: {} of {} trials violate the bound (worst slack {:e})",
                r.lemma, r.violations, r.trials, r.worst_slack
            )));
        }
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    /// One row per registered op, worst case over the trials.
    pub rows: Vec<GradientRow>,
    /// Deliberately wrong derivative; must fail.
    pub negative_control: GradientRow,
}

fn worse(a: GradientRow, b: GradientRow) -> GradientRow {
    match (a.passed, b.passed) {
        (true, false) => b,
        (false, true) => a,
        _ if b.max_rel_error > a.max_rel_error => b,
        _ => a,
    }
}

/// Finite-difference battery over seeds `seed..seed + trials`.
pub fn gradcheck(seed: u64, trials: usize, out: &Path) -> Result<GradcheckReport, CliError> {
    if trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let mut rows = gradient_battery(seed);
    for t in 1..trials as u64 {
        rows = rows
            .into_iter()
            .zip(gradient_battery(seed.wrapping_add(t)))
            .map(|(a, b)| worse(a, b))
            .collect();
    }
    let report = GradcheckReport {
        seed,
        trials,
        rows,
        negative_control: negative_control(seed),
    };
    fs::create_dir_all(out)?;
    write_json(&out.join(GRADCHECK_JSON), &report)?;
    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!("gradient mismatch in {}", failed.join(", "))));
    }
    if report.negative_control.passed {
        return Err(CliError::CheckFailed("negative control was not detected".into()));
    }
    Ok(report)
}

/// Where the profiled embeddings come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EmbeddingSource {
    /// Structure-encoder output of the first configured cell after training.
    Trained,
    /// Raw node features.
    Features,
}

pub fn structure_embeddings(g: &Graph64, params: &ingsl_core::GcnParams64) -> Result<Tensor64, CliError> {
    let tape = Tape::new();
    let a_norm = normalize_adjacency(g)?;
    let a = SparseVar::constant(&tape, &a_norm);
    let x = tape.constant(g.features().clone());
    Ok(encode_structure(&a, x, &params.lift(&tape))?.value())
}

pub fn diagnose_redundancy(
    config: Option<&Path>,
    k_values: &[usize],
    source: EmbeddingSource,
    out: &Path,
    seed: Option<u64>,
) -> Result<Vec<RedundancyPoint>, CliError> {
    let cfg = load_config(config, seed)?;
    if k_values.is_empty() {
        return Err(CliError::Config("at least one k value is required".into()));
    }
    let (mode, r, seed) = (cfg.modes[0], cfg.reduction_levels[0], cfg.seeds[0]);
    let g = cfg.graph(seed)?;
    let max_k = k_values.iter().copied().max().unwrap_or(0);
    if max_k >= g.n() {
        return Err(CliError::Config(format!("k = {max_k} must be below n = {}", g.n())));
    }
    let e = match source {
        EmbeddingSource::Features => g.features().clone(),
        EmbeddingSource::Trained => {
            let run = run_cell(&cfg, mode, r, seed)?;
            structure_embeddings(&g, &run.outcome.model.structure)?
        }
    };
    let profile = redundancy_profile(&e, k_values)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(REDUNDANCY_CSV))?;
    for p in &profile {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(profile)
}

/// Writes a synthetic graph bundle. The spec comes from `config` (an SBM
/// spec as JSON) or defaults to the desk-scale benchmark.
pub fn gen_sbm(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Graph64, CliError> {
    let mut spec = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SbmSpec>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SbmSpec::benchmark(0),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = generate_sbm(&spec)?;
    save_bundle(&g, out)?;
    Ok(g)
}
