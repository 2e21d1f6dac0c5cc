//! Embedding-based structure learning: a structure encoder produces node
//! embeddings, each node connects to its top-K most similar nodes, and the
//! resulting candidate graph is fused with the observed adjacency.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{gcn_forward, GcnVars};
use crate::graph::{normalize_weighted, Graph};
use crate::scalar::Scalar;
use crate::sparse::CsrPattern;
use crate::tensor::{SparseVar, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    InnerProduct,
    Cosine,
}

/// Structure-encoder pass over the observed normalised adjacency.
pub fn encode_structure<'t, T: Scalar>(
    a_norm: &SparseVar<'t, T>,
    x: Var<'t, T>,
    params_s: &GcnVars<'t, T>,
) -> Result<Var<'t, T>> {
    Ok(gcn_forward(a_norm, x, params_s)?.representations)
}

/// Row-wise top-K similarity graph `S` over the embeddings `E`.
#[derive(Clone, Debug)]
pub struct CandidateGraph<'t, T> {
    /// Kept similarities; the pattern lists each row's kept columns.
    pub sparse: SparseVar<'t, T>,
    pub k: usize,
    pub embeddings: Var<'t, T>,
}

impl<'t, T: Scalar> CandidateGraph<'t, T> {
    pub fn n(&self) -> usize {
        self.sparse.n()
    }

    pub fn edge_count(&self) -> usize {
        self.sparse.pattern.nnz()
    }

    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.sparse.pattern.entries().collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.sparse.pattern.entry_rows().to_vec()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.sparse.pattern.col_indices().to_vec()
    }
}

/// Orders `(value, index)` pairs by descending value, then ascending index.
pub(crate) fn rank_desc<T: Scalar>(a: (T, usize), b: (T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// For every row of the square `scores`, the columns of its `k` largest
/// off-diagonal entries (ties toward the smaller column), ascending.
pub fn top_k_rows<T: Scalar>(scores: &Tensor<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = scores.rows();
    if k == 0 || k >= n {
        return Err(Error::config(format!("top-K needs 1 <= k < n, got k = {k}, n = {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let row = scores.row(i);
            let mut cand: Vec<(T, usize)> = (0..n).filter(|&j| j != i).map(|j| (row[j], j)).collect();
            cand.select_nth_unstable_by(k - 1, |&a, &b| rank_desc(a, b));
            let mut kept: Vec<usize> = cand[..k].iter().map(|&(_, j)| j).collect();
            kept.sort_unstable();
            kept
        })
        .collect())
}

/// Builds `S = TopK(sim(E, E))`, excluding self-pairs. Gradients reach `E`
/// only through the kept entries.
pub fn build_candidates<'t, T: Scalar>(
    e: Var<'t, T>,
    k: usize,
    similarity: Similarity,
) -> Result<CandidateGraph<'t, T>> {
    let n = e.shape()[0];
    if k == 0 || k >= n {
        return Err(Error::config(format!("candidate budget k = {k} must satisfy 1 <= k < n = {n}")));
    }
    let basis = match similarity {
        Similarity::InnerProduct => e,
        Similarity::Cosine => e.row_l2_normalize_clamped(T::of(1e-8))?,
    };
    let scores = basis.with_value(|v| v.matmul(&v.transpose()))?;
    let kept = top_k_rows(&scores, k)?;
    let coords: Vec<(usize, usize)> = kept
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
        .collect();
    let (pattern, _) = CsrPattern::square(n, &coords)?;
    let src = pattern.entry_rows().to_vec();
    let dst = pattern.col_indices().to_vec();
    let values = basis.edge_dot(basis, &src, &dst)?;
    Ok(CandidateGraph {
        sparse: SparseVar::new(Arc::new(pattern), values)?,
        k,
        embeddings: e,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    /// `½ Σ_(i,j) S_ij ‖x_i − x_j‖²`, i.e. `tr(Xᵀ L X)` for symmetric `S`.
    FeatureSmoothness,
}

/// Value of `reg` on the learned structure, or `None` when disabled.
pub fn regularizer<'t, T: Scalar>(
    reg: Regularizer,
    adj: &SparseVar<'t, T>,
    features: &Tensor<T>,
) -> Result<Option<Var<'t, T>>> {
    match reg {
        Regularizer::None => Ok(None),
        Regularizer::FeatureSmoothness => {
            let half = T::of(0.5);
            let coef: Vec<T> = adj
                .pattern
                .entries()
                .map(|(i, j)| {
                    features
                        .row(i)
                        .iter()
                        .zip(features.row(j))
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<T>()
                        * half
                })
                .collect();
            let c = adj.values.tape().constant(Tensor::vector(coef));
            Ok(Some(adj.values.mul(c)?.sum()))
        }
    }
}

/// `task + λ·reg`.
pub fn gsl_objective<'t, T: Scalar>(
    task: Var<'t, T>,
    reg: Option<Var<'t, T>>,
    lambda: T,
) -> Result<Var<'t, T>> {
    if lambda < T::zero() {
        return Err(Error::config(format!("lambda = {lambda} must be non-negative")));
    }
    match reg {
        Some(r) if lambda != T::zero() => task.add(r.scale(lambda)),
        _ => Ok(task),
    }
}

/// Normalised `A + w·S` (with self-loops). `S` may be asymmetric; degrees
/// are row sums.
pub fn fuse_with_original<'t, T: Scalar>(
    g: &Graph<T>,
    s: &SparseVar<'t, T>,
    residual_weight: T,
) -> Result<SparseVar<'t, T>> {
    if !(residual_weight >= T::zero()) {
        return Err(Error::config(format!(
            "residual weight {residual_weight} must be non-negative"
        )));
    }
    let tape = s.values.tape();
    let mut coords = g.directed_entries();
    let base = tape.constant(Tensor::ones(&[coords.len()]));
    if residual_weight == T::zero() || s.pattern.nnz() == 0 {
        return normalize_weighted(g.n(), &coords, base);
    }
    coords.extend(s.pattern.entries());
    let weights = base.concat(s.values.scale(residual_weight))?;
    normalize_weighted(g.n(), &coords, weights)
}

/// Undirected pairs stored in `pattern` (off-diagonal) that are not edges of
/// `g`.
pub fn additional_pairs<T: Scalar>(g: &Graph<T>, pattern: &CsrPattern) -> usize {
    pattern
        .entries()
        .filter(|&(i, j)| i != j && !g.has_edge(i, j))
        .map(|(i, j)| (i.min(j), i.max(j)))
        .collect::<BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Split};
    use crate::tensor::Tape;

    #[test]
    fn orthonormal_rows_tie_break_to_smallest_index() {
        let tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::eye(4));
        let s = build_candidates(e, 1, Similarity::InnerProduct).unwrap();
        assert_eq!(s.entries(), vec![(0, 1), (1, 0), (2, 0), (3, 0)]);
        assert!(s.sparse.values.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_pair_selects_each_other() {
        let tape = Tape::<f64>::new();
        let e = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 1.0, 0.0],
                vec![1.0, 1.0, 0.0],
                vec![0.1, 0.0, 0.3],
                vec![0.0, 0.2, 0.1],
            ])
            .unwrap(),
        );
        let s = build_candidates(e, 1, Similarity::InnerProduct).unwrap();
        let entries = s.entries();
        assert!(entries.contains(&(0, 1)) && entries.contains(&(1, 0)));
    }

    #[test]
    fn k_must_be_below_n() {
        let tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::<f64>::eye(3));
        assert!(build_candidates(e, 3, Similarity::InnerProduct).is_err());
        assert!(build_candidates(e, 0, Similarity::InnerProduct).is_err());
    }

    #[test]
    fn objective_arithmetic() {
        let tape = Tape::<f64>::new();
        let task = tape.constant(Tensor::scalar(0.7));
        let reg = tape.constant(Tensor::scalar(0.2));
        assert!((gsl_objective(task, Some(reg), 0.5).unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(gsl_objective(task, Some(reg), 0.0).unwrap().item(), 0.7);
        assert_eq!(gsl_objective(task, None, 0.5).unwrap().item(), 0.7);
        let zero = tape.constant(Tensor::scalar(0.0));
        assert_eq!(gsl_objective(task, Some(zero), 0.5).unwrap().item(), 0.7);
        assert!(gsl_objective(task, None, -1.0).is_err());
    }

    fn small_graph() -> Graph<f64> {
        Graph::new(
            4,
            [(0, 1), (1, 2)],
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![1.0]]).unwrap(),
            vec![0, 0, 1, 1],
            2,
            vec![Split::Train, Split::Val, Split::Test, Split::Test],
        )
        .unwrap()
    }

    #[test]
    fn zero_residual_or_empty_candidates_give_original() {
        let g = small_graph();
        let base = normalize_adjacency(&g).unwrap().to_dense();
        let tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![0.5], vec![1.5]]).unwrap());
        let s = build_candidates(e, 2, Similarity::InnerProduct).unwrap();
        let fused = fuse_with_original(&g, &s.sparse, 0.0).unwrap().detach().to_dense();
        assert_eq!(fused.max_abs_diff(&base).unwrap(), 0.0);

        let (empty, _) = CsrPattern::square(4, &[]).unwrap();
        let empty = SparseVar::new(Arc::new(empty), tape.constant(Tensor::vector(vec![]))).unwrap();
        let fused = fuse_with_original(&g, &empty, 1.0).unwrap().detach().to_dense();
        assert_eq!(fused.max_abs_diff(&base).unwrap(), 0.0);
        assert!(fuse_with_original(&g, &empty, -1.0).is_err());
    }

    #[test]
    fn smoothness_regularizer_value() {
        let g = small_graph();
        let tape = Tape::<f64>::new();
        let (p, _) = CsrPattern::square(4, &[(0, 2), (3, 1)]).unwrap();
        let adj = SparseVar::new(Arc::new(p), tape.constant(Tensor::vector(vec![2.0, 1.0]))).unwrap();
        let r = regularizer(Regularizer::FeatureSmoothness, &adj, g.features()).unwrap().unwrap();
        // ½(2·9 + 1·0)
        assert_eq!(r.item(), 9.0);
        assert!(regularizer(Regularizer::None, &adj, g.features()).unwrap().is_none());
    }

    #[test]
    fn additional_pair_count() {
        let g = small_graph();
        let (p, _) = CsrPattern::square(4, &[(0, 1), (1, 0), (0, 2), (2, 0), (3, 1)]).unwrap();
        assert_eq!(additional_pairs(&g, &p), 2);
    }
}
