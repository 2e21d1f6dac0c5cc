//! Thresholded prune-and-normalise of candidate edges.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gsl::rank_desc;
use crate::scalar::Scalar;
use crate::sparse::CsrPattern;
use crate::tensor::{SparseVar, Var};

/// Keep rule on adjusted edge scores `x`: every `x > value` survives; an
/// entry with `x == value` survives unless `tie_budget` caps how many
/// equal entries (in index order) may pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold<T> {
    pub value: T,
    pub tie_budget: Option<usize>,
}

impl<T: Scalar> Threshold<T> {
    /// Plain `x >= value`.
    pub fn at(value: T) -> Self {
        Self {
            value,
            tie_budget: None,
        }
    }

    pub fn keep_all() -> Self {
        Self::at(T::neg_infinity())
    }

    /// Ascending indices of surviving entries.
    pub fn survivors(&self, x: &[T]) -> Vec<usize> {
        let mut ties_left = self.tie_budget.unwrap_or(usize::MAX);
        let mut out = Vec::new();
        for (k, &v) in x.iter().enumerate() {
            if v > self.value {
                out.push(k);
            } else if v == self.value && ties_left > 0 {
                out.push(k);
                ties_left -= 1;
            }
        }
        out
    }
}

/// `⌈(1 − r)·m⌉`, treating products within 1e-9 of an integer as that
/// integer, clamped to `[1, m]` for `m > 0`.
pub fn survivor_count(m: usize, r: f64) -> usize {
    if m == 0 {
        return 0;
    }
    let v = (1.0 - r) * m as f64;
    let nearest = v.round();
    let c = if (v - nearest).abs() <= 1e-9 * v.max(1.0) {
        nearest
    } else {
        v.ceil()
    };
    (c as usize).clamp(1, m)
}

/// Threshold under which exactly `⌈(1 − r)·m⌉` of `x` survive: the value
/// of the `⌈(1 − r)·m⌉`-th largest entry, ties broken toward lower index.
pub fn select_threshold<T: Scalar>(x: &[T], r: f64) -> Result<Threshold<T>> {
    if x.is_empty() {
        return Err(Error::config("cannot select a threshold from no edges"));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(Error::config(format!("reduction level {r} outside [0, 1)")));
    }
    if let Some(k) = x.iter().position(|v| v.is_nan()) {
        return Err(Error::Domain {
            op: "select_threshold",
            index: k,
            value: f64::NAN,
        });
    }
    let keep = survivor_count(x.len(), r);
    let mut order: Vec<(T, usize)> = x.iter().copied().zip(0..).collect();
    order.select_nth_unstable_by(keep - 1, |&a, &b| rank_desc(a, b));
    let value = order[keep - 1].0;
    let above = x.iter().filter(|&&v| v > value).count();
    Ok(Threshold {
        value,
        tie_budget: Some(keep - above),
    })
}

/// Surviving sub-graph `S̃` of a candidate graph.
#[derive(Clone, Debug)]
pub struct Pruned<'t, T> {
    /// `sigmoid(x)` on survivors; the pattern holds survivors only.
    pub sparse: SparseVar<'t, T>,
    /// Indices into the candidate entry list.
    pub kept: Vec<usize>,
    /// Adjusted scores `x = S ⊙ w` of every candidate.
    pub scores: Var<'t, T>,
}

/// `S̃_e = sigmoid(x_e)` for survivors of `threshold`, dropped otherwise.
/// The keep/drop decision carries no gradient.
pub fn prune_scores<'t, T: Scalar>(
    candidates: &CsrPattern,
    x: Var<'t, T>,
    threshold: &Threshold<T>,
) -> Result<Pruned<'t, T>> {
    let m = candidates.nnz();
    let shape = x.shape();
    if shape != [m] {
        return Err(Error::Shape {
            op: "prune",
            left: vec![m],
            right: shape,
        });
    }
    let kept = x.with_value(|v| threshold.survivors(v.data()));
    keep_entries(candidates, x, kept)
}

/// `ψ(S ⊙ w)`: multiplies candidate similarities by diversity scores and
/// prunes.
pub fn prune<'t, T: Scalar>(
    candidates: &SparseVar<'t, T>,
    w: Var<'t, T>,
    threshold: &Threshold<T>,
) -> Result<Pruned<'t, T>> {
    let m = candidates.pattern.nnz();
    let shape = w.shape();
    if shape != [m] {
        return Err(Error::Shape {
            op: "prune",
            left: vec![m],
            right: shape,
        });
    }
    let x = candidates.values.mul(w)?;
    prune_scores(&candidates.pattern, x, threshold)
}

/// Keeps the listed candidate entries with value `sigmoid(x)`.
pub fn keep_entries<'t, T: Scalar>(
    candidates: &CsrPattern,
    x: Var<'t, T>,
    kept: Vec<usize>,
) -> Result<Pruned<'t, T>> {
    let entries: Vec<(usize, usize)> = candidates.entries().collect();
    let coords: Vec<(usize, usize)> = kept.iter().map(|&k| entries[k]).collect();
    let (pattern, slot) = CsrPattern::coalesce(candidates.n_rows(), candidates.n_cols(), &coords)?;
    debug_assert!(slot.iter().enumerate().all(|(a, &b)| a == b));
    let values = x.take(&kept)?.sigmoid();
    Ok(Pruned {
        sparse: SparseVar::new(Arc::new(pattern), values)?,
        kept,
        scores: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn threshold_examples() {
        let t = select_threshold(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_eq!(t.value, 3.0);
        assert_eq!(t.survivors(&[1.0, 2.0, 3.0, 4.0]), vec![2, 3]);
        let x = [0.3, -1.0, 2.0];
        let t = select_threshold(&x, 0.0).unwrap();
        assert_eq!(t.value, -1.0);
        assert_eq!(t.survivors(&x).len(), 3);
    }

    #[test]
    fn threshold_ties_break_toward_low_index() {
        let x = [1.0, 1.0, 1.0, 0.0];
        let t = select_threshold(&x, 0.5).unwrap();
        assert_eq!(t.survivors(&x), vec![0, 1]);
    }

    #[test]
    fn threshold_errors() {
        assert!(select_threshold::<f64>(&[], 0.1).is_err());
        assert!(select_threshold(&[1.0], 1.0).is_err());
        assert!(select_threshold(&[1.0], -0.1).is_err());
    }

    #[test]
    fn survivor_count_is_robust_to_rounding() {
        assert_eq!(survivor_count(10, 0.3), 7);
        assert_eq!(survivor_count(10, 0.7), 3);
        assert_eq!(survivor_count(7, 0.5), 4);
        assert_eq!(survivor_count(100, 1.0 - 1.0 / 100.0), 1);
        assert_eq!(survivor_count(0, 0.5), 0);
    }

    fn line_candidates(tape: &Tape<f64>, values: Vec<f64>) -> SparseVar<'_, f64> {
        let coords: Vec<_> = (0..values.len()).map(|k| (k, k + 1)).collect();
        let (p, _) = CsrPattern::square(values.len() + 1, &coords).unwrap();
        SparseVar::new(Arc::new(p), tape.constant(Tensor::vector(values))).unwrap()
    }

    #[test]
    fn keep_all_applies_sigmoid() {
        let tape = Tape::<f64>::new();
        let s = line_candidates(&tape, vec![0.0, 1.0, -2.0]);
        let w = tape.constant(Tensor::vector(vec![5.0, 1.0, 1.0]));
        let p = prune(&s, w, &Threshold::keep_all()).unwrap();
        assert_eq!(p.kept, vec![0, 1, 2]);
        let v = p.sparse.values.value();
        assert_eq!(v.data()[0], 0.5);
        assert!((v.data()[2] - 1.0 / (1.0 + 2f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_score_at_zero_threshold_is_kept_at_half() {
        let tape = Tape::<f64>::new();
        let s = line_candidates(&tape, vec![0.0, -1.0]);
        let w = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let p = prune(&s, w, &Threshold::at(0.0)).unwrap();
        assert_eq!(p.kept, vec![0]);
        assert_eq!(p.sparse.values.value().data(), &[0.5]);
        assert_eq!(p.sparse.pattern.entries().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn misaligned_scores_rejected() {
        let tape = Tape::<f64>::new();
        let s = line_candidates(&tape, vec![0.0, -1.0]);
        let w = tape.constant(Tensor::vector(vec![1.0]));
        assert!(matches!(prune(&s, w, &Threshold::keep_all()), Err(Error::Shape { .. })));
    }
}
