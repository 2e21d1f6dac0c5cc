//! Cell scheduling. Cells are independent; results come back in grid
//! order whatever the thread count.

use std::time::Instant;

use ingsl_core::ingsl::{train_ingsl, PruneMode, TrainOutcome};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::report::Cell;
use crate::CliError;

pub const THREADS_ENV: &str = "INGSL_THREADS";

/// Thread cap from `INGSL_THREADS`, default 1.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
    }
}

/// Every `(mode, r, seed)` combination, modes outermost.
pub fn grid(cfg: &ExperimentConfig) -> Vec<(PruneMode, f64, u64)> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for &r in &cfg.reduction_levels {
            for &seed in &cfg.seeds {
                out.push((mode, r, seed));
            }
        }
    }
    out
}

pub struct CellRun {
    pub cell: Cell,
    pub outcome: TrainOutcome<f64>,
    pub wall_time_s: f64,
}

pub fn run_cell(cfg: &ExperimentConfig, mode: PruneMode, r: f64, seed: u64) -> Result<CellRun, CliError> {
    let start = Instant::now();
    let g = cfg.graph(seed)?;
    let outcome = train_ingsl(&g, &cfg.train_config(mode, r, seed))?;
    Ok(CellRun {
        cell: Cell::from_report(&outcome.report),
        outcome,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run_grid(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<CellRun>, CliError> {
    let cells = grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(mode, r, seed)| run_cell(cfg, mode, r, seed))
            .collect()
    })
}
