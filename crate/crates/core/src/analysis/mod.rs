//! Numerical checks of the neighbour-redundancy bounds, the redundancy
//! profile of an embedding, and the pruning cost estimate.

pub mod gradients;

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::spectral_norm;
use crate::gsl::top_k_rows;
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Slack allowed on every bound comparison.
pub const TOLERANCE: f64 = 1e-9;

/// Mean cosine similarity over all unordered pairs of rows.
pub fn avg_pairwise_similarity<T: Scalar>(vectors: &Tensor<T>) -> Result<f64> {
    if vectors.rank() != 2 {
        return Err(Error::Rank {
            op: "avg_pairwise_similarity",
            shape: vectors.shape().to_vec(),
        });
    }
    let n = vectors.rows();
    if n < 2 {
        return Err(Error::UndefinedMetric("pairwise similarity needs at least two vectors"));
    }
    let units = unit_rows(vectors)?;
    Ok(mean_pair_cosine(&units, &(0..n).collect::<Vec<_>>()))
}

fn unit_rows<T: Scalar>(vectors: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    (0..vectors.rows())
        .map(|i| {
            let row: Vec<f64> = vectors.row(i).iter().map(|x| x.to_f64_lossy()).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateRow { row: i });
            }
            Ok(row.iter().map(|x| x / norm).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_pair_cosine(units: &[Vec<f64>], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            total += dot(&units[i], &units[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Lower bound `(N·ε² − 1)/(N − 1)` on the mean pairwise cosine of `N`
/// neighbours that each have cosine at least `ε` with a common anchor.
pub fn lemma1_bound(n_neighbors: usize, eps: f64) -> Result<f64> {
    if n_neighbors < 2 {
        return Err(Error::Domain {
            op: "lemma1_bound",
            index: 0,
            value: n_neighbors as f64,
        });
    }
    let n = n_neighbors as f64;
    Ok((n * eps * eps - 1.0) / (n - 1.0))
}

/// Upper bound `2·B·‖W_c‖₂·√(1 − ε)` on the change in cross-entropy after
/// one aggregation over neighbours with cosine at least `ε` to the anchor.
pub fn lemma2_bound(b_norm: f64, wc_norm: f64, eps: f64) -> f64 {
    2.0 * b_norm * wc_norm * (1.0 - eps).max(0.0).sqrt()
}

/// Outcome of a randomized bound check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest margin by which the inequality held over all trials;
    /// negative means violated.
    pub worst_slack: f64,
    pub tolerance: f64,
    /// Sampling ranges, `[low, high]`.
    pub ranges: BTreeMap<String, [f64; 2]>,
}

impl LemmaReport {
    fn new(lemma: &str, ranges: BTreeMap<String, [f64; 2]>) -> Self {
        Self {
            lemma: lemma.into(),
            trials: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            tolerance: TOLERANCE,
            ranges,
        }
    }

    fn record(&mut self, slack: f64) {
        self.trials += 1;
        if slack < -TOLERANCE || slack.is_nan() {
            self.violations += 1;
        }
        if !(slack >= self.worst_slack) {
            self.worst_slack = slack;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Config {
    pub trials: usize,
    pub dim: (usize, usize),
    pub neighbors: (usize, usize),
    pub eps: (f64, f64),
    pub seed: u64,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Self {
            trials: 10_000,
            dim: (2, 32),
            neighbors: (2, 50),
            eps: (0.0, 0.99),
            seed: 1,
        }
    }
}

fn check_int_range(name: &str, (lo, hi): (usize, usize), min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::config(format!("{name} range [{lo}, {hi}] needs {min} <= low <= high")));
    }
    Ok(())
}

fn check_real_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(min <= lo && lo <= hi && hi <= max) {
        return Err(Error::config(format!("{name} range [{lo}, {hi}] must lie in [{min}, {max}]")));
    }
    Ok(())
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Random unit vector orthogonal to the unit vector `v` (`dim ≥ 2`).
fn random_unit_orthogonal(rng: &mut Rng, v: &[f64]) -> Vec<f64> {
    loop {
        let mut w = random_unit(rng, v.len());
        let p = dot(&w, v);
        w.iter_mut().zip(v).for_each(|(x, y)| *x -= p * y);
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-6 {
            return w.iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector `ε'·v + √(1 − ε'²)·w` with `ε'` uniform in `[eps, 1]` and
/// `w ⊥ v`, so its cosine with `v` is at least `eps`.
fn unit_near(rng: &mut Rng, v: &[f64], eps: f64) -> Vec<f64> {
    let c = uniform(rng, (eps, 1.0));
    let s = (1.0 - c * c).max(0.0).sqrt();
    let w = random_unit_orthogonal(rng, v);
    v.iter().zip(&w).map(|(a, b)| c * a + s * b).collect()
}

fn ranges(entries: &[(&str, f64, f64)]) -> BTreeMap<String, [f64; 2]> {
    entries.iter().map(|&(k, lo, hi)| (k.to_string(), [lo, hi])).collect()
}

/// Samples `N` unit vectors around a random unit anchor with cosine at
/// least `ε` each and checks the mean pairwise cosine against
/// [`lemma1_bound`].
pub fn lemma1_check(cfg: &Lemma1Config) -> Result<LemmaReport> {
    check_int_range("dim", cfg.dim, 2)?;
    check_int_range("neighbors", cfg.neighbors, 2)?;
    check_real_range("eps", cfg.eps, 0.0, 1.0)?;
    let mut report = LemmaReport::new(
        "lemma1",
        ranges(&[
            ("dim", cfg.dim.0 as f64, cfg.dim.1 as f64),
            ("neighbors", cfg.neighbors.0 as f64, cfg.neighbors.1 as f64),
            ("eps", cfg.eps.0, cfg.eps.1),
        ]),
    );
    for trial in 0..cfg.trials {
        let rng = &mut rng::stream(cfg.seed, trial as u64);
        let dim = rng.random_range(cfg.dim.0..=cfg.dim.1);
        let n = rng.random_range(cfg.neighbors.0..=cfg.neighbors.1);
        let eps = uniform(rng, cfg.eps);
        let v = random_unit(rng, dim);
        let units: Vec<Vec<f64>> = (0..n).map(|_| unit_near(rng, &v, eps)).collect();
        let flat = Tensor::from_vec(vec![n, dim], units.concat())?;
        let observed = avg_pairwise_similarity(&flat)?;
        report.record(observed - lemma1_bound(n, eps)?);
    }
    Ok(report)
}

/// How neighbour norms are drawn in [`lemma2_check`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborNorms {
    /// Anchor and neighbours share one norm `ρ ∈ (0, B]`.
    #[default]
    Shared,
    /// Every norm drawn independently from `[0, B]`.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma2Config {
    pub trials: usize,
    pub dim: (usize, usize),
    pub classes: (usize, usize),
    pub neighbors: (usize, usize),
    pub eps: (f64, f64),
    pub b_norm: (f64, f64),
    pub norms: NeighborNorms,
    pub seed: u64,
}

impl Default for Lemma2Config {
    fn default() -> Self {
        Self {
            trials: 10_000,
            dim: (2, 32),
            classes: (2, 10),
            neighbors: (1, 20),
            eps: (0.0, 0.99),
            b_norm: (0.1, 5.0),
            norms: NeighborNorms::Shared,
            seed: 1,
        }
    }
}

/// Cross-entropy of `logits` against class `label`, in f64.
pub fn cross_entropy_f64(logits: &[f64], label: usize) -> f64 {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + logits.iter().map(|z| (z - top).exp()).sum::<f64>().ln() - logits[label]
}

fn logits_of(z: &[f64], wc: &[f64], classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| z.iter().enumerate().map(|(p, &zp)| zp * wc[p * classes + c]).sum())
        .collect()
}

/// Samples an anchor `Z_i` with `‖Z_i‖ ≤ B`, neighbours with cosine at
/// least `ε` to it, convex aggregation weights over the anchor and its
/// neighbours, a classifier `W_c` and a label, then checks the loss change
/// of one aggregation step against [`lemma2_bound`].
pub fn lemma2_check(cfg: &Lemma2Config) -> Result<LemmaReport> {
    check_int_range("dim", cfg.dim, 2)?;
    check_int_range("classes", cfg.classes, 2)?;
    check_int_range("neighbors", cfg.neighbors, 1)?;
    check_real_range("eps", cfg.eps, 0.0, 1.0)?;
    check_real_range("b_norm", cfg.b_norm, f64::MIN_POSITIVE, f64::MAX)?;
    let mut report = LemmaReport::new(
        match cfg.norms {
            NeighborNorms::Shared => "lemma2",
            NeighborNorms::Independent => "lemma2_independent_norms",
        },
        ranges(&[
            ("dim", cfg.dim.0 as f64, cfg.dim.1 as f64),
            ("classes", cfg.classes.0 as f64, cfg.classes.1 as f64),
            ("neighbors", cfg.neighbors.0 as f64, cfg.neighbors.1 as f64),
            ("eps", cfg.eps.0, cfg.eps.1),
            ("b_norm", cfg.b_norm.0, cfg.b_norm.1),
        ]),
    );
    for trial in 0..cfg.trials {
        let rng = &mut rng::stream(cfg.seed, trial as u64);
        let dim = rng.random_range(cfg.dim.0..=cfg.dim.1);
        let classes = rng.random_range(cfg.classes.0..=cfg.classes.1);
        let n = rng.random_range(cfg.neighbors.0..=cfg.neighbors.1);
        let eps = uniform(rng, cfg.eps);
        let b = uniform(rng, cfg.b_norm);
        let rho = b * (1.0 - rng.random::<f64>());
        let v = random_unit(rng, dim);
        let anchor: Vec<f64> = v.iter().map(|x| rho * x).collect();
        let mut members = vec![anchor.clone()];
        for _ in 0..n {
            let u = unit_near(rng, &v, eps);
            let r = match cfg.norms {
                NeighborNorms::Shared => rho,
                NeighborNorms::Independent => rng.random_range(0.0..=b),
            };
            members.push(u.iter().map(|x| r * x).collect());
        }
        let raw: Vec<f64> = (0..members.len()).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let mut aggregated = vec![0.0; dim];
        for (m, a) in members.iter().zip(&raw) {
            aggregated.iter_mut().zip(m).for_each(|(z, x)| *z += a / total * x);
        }
        let scale = uniform(rng, (0.1, 3.0));
        let wc: Vec<f64> = (0..dim * classes)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        let label = rng.random_range(0..classes);
        let before = cross_entropy_f64(&logits_of(&anchor, &wc, classes), label);
        let after = cross_entropy_f64(&logits_of(&aggregated, &wc, classes), label);
        let wc_norm = spectral_norm(&Tensor::from_vec(vec![dim, classes], wc)?, 100);
        report.record(lemma2_bound(b, wc_norm, eps) - (after - before).abs());
    }
    Ok(report)
}

/// One row of [`redundancy_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyPoint {
    pub k: usize,
    /// Mean over nodes of the average pairwise cosine among the node's `k`
    /// nearest neighbours; absent when `k < 2`.
    pub avg_similarity: Option<f64>,
}

/// For each `k`, selects every node's `k` most cosine-similar other nodes
/// and averages [`avg_pairwise_similarity`] of that set over all nodes.
/// Zero rows carry no direction and are left out.
pub fn redundancy_profile<T: Scalar>(e: &Tensor<T>, k_values: &[usize]) -> Result<Vec<RedundancyPoint>> {
    if e.rank() != 2 {
        return Err(Error::Rank {
            op: "redundancy_profile",
            shape: e.shape().to_vec(),
        });
    }
    let live: Vec<usize> = (0..e.rows())
        .filter(|&i| e.row(i).iter().any(|&x| x != T::zero()))
        .collect();
    let units = unit_rows(&Tensor::from_rows(
        &live.iter().map(|&i| e.row(i).to_vec()).collect::<Vec<_>>(),
    )?)?;
    let n = units.len();
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::config(format!(
            "profile size k = {k} must satisfy 1 <= k < {n} non-zero rows"
        )));
    }
    let mut cos = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cos[i * n + j] = dot(&units[i], &units[j]);
        }
    }
    let cos = Tensor::from_vec(vec![n, n], cos)?;
    k_values
        .iter()
        .map(|&k| {
            let avg_similarity = if k < 2 {
                None
            } else {
                let sets = top_k_rows(&cos, k)?;
                let sum: f64 = sets.iter().map(|s| mean_pair_cosine(&units, s)).sum();
                Some(sum / n as f64)
            };
            Ok(RedundancyPoint { k, avg_similarity })
        })
        .collect()
}

/// Extra cost of the pruner over the base learner:
/// `n·d·(d + b + L·d + 1) + m·(L·r·d + d + 1)`.
///
/// Returned as a real number because `r` makes the edge term fractional.
pub fn complexity_estimate(n: u64, d: u64, m: u64, r: f64, layers: u64, batch: u64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::config(format!("reduction level {r} outside [0, 1)")));
    }
    let (n, d, m, l, b) = (n as f64, d as f64, m as f64, layers as f64, batch as f64);
    Ok(n * d * (d + b + l * d + 1.0) + m * (l * r * d + d + 1.0))
}
