//! Report assembly and serialisation. Wall times live in a separate file
//! so the report itself is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ingsl_core::ingsl::{PruneMode, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One `(mode, r, seed)` training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: PruneMode,
    pub r: f64,
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub candidate_edges: usize,
    pub edges_final: usize,
    pub additional_pairs: usize,
    pub edge_multiple: Option<f64>,
    pub flops: u64,
}

impl Cell {
    pub fn from_report(rep: &TrainReport) -> Self {
        Self {
            mode: rep.mode,
            r: rep.r,
            seed: rep.seed,
            test_acc: rep.test_acc,
            val_acc: rep.val_acc,
            best_epoch: rep.best_epoch,
            epochs_run: rep.epochs_run,
            candidate_edges: rep.candidate_edges,
            edges_final: rep.edges_final,
            additional_pairs: rep.additional_pairs,
            edge_multiple: rep.edge_multiple,
            flops: rep.flops,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: PruneMode,
    pub r: f64,
    pub seeds: usize,
    pub mean_test_acc: f64,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std_test_acc: Option<f64>,
    pub mean_edges_final: f64,
    pub mean_edge_multiple: Option<f64>,
    pub mean_flops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    /// Keyed by `"<mode>@<r>"`.
    pub aggregates: BTreeMap<String, Aggregate>,
    pub version: String,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn aggregate_key(mode: PruneMode, r: f64) -> String {
    format!("{}@{r}", mode.as_str())
}

impl Report {
    pub fn new(config: ExperimentConfig, cells: Vec<Cell>) -> Self {
        let mut groups: BTreeMap<String, Vec<&Cell>> = BTreeMap::new();
        for c in &cells {
            groups.entry(aggregate_key(c.mode, c.r)).or_default().push(c);
        }
        let aggregates = groups
            .into_iter()
            .map(|(key, group)| {
                let acc: Vec<f64> = group.iter().map(|c| c.test_acc).collect();
                let edges: Vec<f64> = group.iter().map(|c| c.edges_final as f64).collect();
                let flops: Vec<f64> = group.iter().map(|c| c.flops as f64).collect();
                let multiples: Option<Vec<f64>> = group.iter().map(|c| c.edge_multiple).collect();
                let agg = Aggregate {
                    mode: group[0].mode,
                    r: group[0].r,
                    seeds: group.len(),
                    mean_test_acc: mean(&acc),
                    std_test_acc: sample_std(&acc),
                    mean_edges_final: mean(&edges),
                    mean_edge_multiple: multiples.map(|m| mean(&m)),
                    mean_flops: mean(&flops),
                };
                (key, agg)
            })
            .collect();
        Self {
            config,
            cells,
            aggregates,
            version: VERSION.to_string(),
        }
    }

    pub fn aggregate(&self, mode: PruneMode, r: f64) -> Option<&Aggregate> {
        self.aggregates.get(&aggregate_key(mode, r))
    }

    /// Aggregates in config order: modes outer, levels inner.
    pub fn sweep_rows(&self) -> Vec<&Aggregate> {
        let cfg = &self.config;
        cfg.modes
            .iter()
            .flat_map(|&m| cfg.reduction_levels.iter().filter_map(move |&r| self.aggregate(m, r)))
            .collect()
    }
}

#[derive(Serialize)]
struct CellRow {
    mode: &'static str,
    r: f64,
    seed: u64,
    test_acc: f64,
    edges_final: usize,
    edge_multiple: Option<f64>,
    flops: u64,
}

#[derive(Serialize)]
struct SweepRow {
    mode: &'static str,
    r: f64,
    seeds: usize,
    mean_test_acc: f64,
    std_test_acc: Option<f64>,
    mean_edges_final: f64,
    mean_edge_multiple: Option<f64>,
    mean_flops: f64,
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_cells_csv(path: &Path, cells: &[Cell]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(CellRow {
            mode: c.mode.as_str(),
            r: c.r,
            seed: c.seed,
            test_acc: c.test_acc,
            edges_final: c.edges_final,
            edge_multiple: c.edge_multiple,
            flops: c.flops,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[&Aggregate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for a in rows {
        w.serialize(SweepRow {
            mode: a.mode.as_str(),
            r: a.r,
            seeds: a.seeds,
            mean_test_acc: a.mean_test_acc,
            std_test_acc: a.std_test_acc,
            mean_edges_final: a.mean_edges_final,
            mean_edge_multiple: a.mean_edge_multiple,
            mean_flops: a.mean_flops,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(mode: PruneMode, r: f64, seed: u64, acc: f64) -> Cell {
        Cell {
            mode,
            r,
            seed,
            test_acc: acc,
            val_acc: acc,
            best_epoch: 0,
            epochs_run: 1,
            candidate_edges: 10,
            edges_final: 5,
            additional_pairs: 2,
            edge_multiple: Some(0.5),
            flops: 100,
        }
    }

    #[test]
    fn std_needs_two_seeds() {
        assert_eq!(sample_std(&[0.7]), None);
        assert!((sample_std(&[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        let rep = Report::new(
            ExperimentConfig::default(),
            vec![cell(PruneMode::Ingsl, 0.5, 0, 0.8)],
        );
        let agg = rep.aggregate(PruneMode::Ingsl, 0.5).unwrap();
        assert_eq!(agg.std_test_acc, None);
        assert_eq!(agg.mean_test_acc, 0.8);
    }

    #[test]
    fn aggregates_group_by_mode_and_level() {
        let cells = vec![
            cell(PruneMode::Ingsl, 0.3, 0, 0.6),
            cell(PruneMode::Ingsl, 0.3, 1, 0.8),
            cell(PruneMode::RandomPrune, 0.3, 0, 0.5),
        ];
        let rep = Report::new(ExperimentConfig::default(), cells);
        assert_eq!(rep.aggregates.len(), 2);
        let a = rep.aggregate(PruneMode::Ingsl, 0.3).unwrap();
        assert_eq!(a.seeds, 2);
        assert!((a.mean_test_acc - 0.7).abs() < 1e-15);
        assert!(a.std_test_acc.is_some());
        let text = serde_json::to_value(&rep).unwrap();
        for key in ["config", "cells", "aggregates", "version"] {
            assert!(text.get(key).is_some());
        }
    }

    #[test]
    fn cell_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        let mut c = cell(PruneMode::NoReduction, 0.0, 4, 0.9);
        c.edge_multiple = None;
        write_cells_csv(&path, &[c]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("mode,r,seed,test_acc,edges_final,edge_multiple,flops"));
        assert_eq!(lines.next(), Some("no_reduction,0.0,4,0.9,5,,100"));
    }
}
