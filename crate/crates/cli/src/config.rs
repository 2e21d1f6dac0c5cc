//! Experiment configuration: one JSON document, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use ingsl_core::graph::{generate_sbm, inject_structural_noise, load_bundle, mask_features, SbmSpec};
use ingsl_core::gsl::{Regularizer, Similarity};
use ingsl_core::ingsl::{PruneMode, ScorerKind, TrainConfig};
use ingsl_core::Graph64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Accepted learning-rate range.
pub const LR_RANGE: (f64, f64) = (1e-5, 5e-2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Dataset {
    /// Directory holding a graph bundle.
    Bundle(PathBuf),
    /// Synthetic graph; its seed is offset by the cell seed so every seed
    /// sees a fresh draw.
    Sbm(SbmSpec),
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::Sbm(SbmSpec::benchmark(0))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub add_ratio: f64,
    pub del_ratio: f64,
    pub feature_mask_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub k: usize,
    pub reduction_levels: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub scorer: ScorerKind,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub noise: Option<NoiseConfig>,
    pub modes: Vec<PruneMode>,
    pub hidden: usize,
    pub batch_size: Option<usize>,
    pub similarity: Similarity,
    pub regularizer: Regularizer,
    pub residual_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            dataset: Dataset::default(),
            k: base.k,
            reduction_levels: vec![base.r],
            beta: base.beta,
            lambda: base.lambda,
            scorer: base.scorer,
            lr: base.lr,
            epochs: base.epochs,
            patience: base.patience,
            seeds: vec![0],
            noise: None,
            modes: vec![PruneMode::Ingsl],
            hidden: base.hidden,
            batch_size: base.batch_size,
            similarity: base.similarity,
            regularizer: base.regularizer,
            residual_weight: base.residual_weight,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.modes.is_empty() {
            return bad("modes must not be empty".into());
        }
        if self.reduction_levels.is_empty() {
            return bad("reduction_levels must not be empty".into());
        }
        if let Some(r) = self.reduction_levels.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("reduction level {r} outside [0, 1)"));
        }
        if !(LR_RANGE.0..=LR_RANGE.1).contains(&self.lr) {
            return bad(format!(
                "learning rate {} outside [{:e}, {:e}]",
                self.lr, LR_RANGE.0, LR_RANGE.1
            ));
        }
        if let Some(noise) = &self.noise {
            for (name, v) in [
                ("add_ratio", noise.add_ratio),
                ("del_ratio", noise.del_ratio),
                ("feature_mask_ratio", noise.feature_mask_ratio),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("noise {name} = {v} must be non-negative"));
                }
            }
        }
        for &mode in &self.modes {
            self.train_config(mode, self.reduction_levels[0], self.seeds[0])
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn train_config(&self, mode: PruneMode, r: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            k: self.k,
            r,
            beta: self.beta,
            lambda: self.lambda,
            regularizer: self.regularizer,
            scorer: self.scorer,
            freeze_scorer: false,
            similarity: self.similarity,
            residual_weight: self.residual_weight,
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            mode,
            seed,
        }
    }

    /// The graph a cell with `seed` trains on, noise included.
    pub fn graph(&self, seed: u64) -> Result<Graph64, CliError> {
        let g = match &self.dataset {
            Dataset::Bundle(dir) => load_bundle(dir)?,
            Dataset::Sbm(spec) => generate_sbm(&SbmSpec {
                seed: spec.seed.wrapping_add(seed),
                ..spec.clone()
            })?,
        };
        let Some(noise) = &self.noise else {
            return Ok(g);
        };
        let g = if noise.add_ratio > 0.0 || noise.del_ratio > 0.0 {
            inject_structural_noise(&g, noise.add_ratio, noise.del_ratio, seed)?
        } else {
            g
        };
        if noise.feature_mask_ratio > 0.0 {
            Ok(mask_features(&g, noise.feature_mask_ratio, seed)?)
        } else {
            Ok(g)
        }
    }
}
