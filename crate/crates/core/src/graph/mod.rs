//! Graph data model and adjacency normalisation.

mod bundle;
mod generate;
mod noise;

pub use bundle::{load_bundle, save_bundle, BundleMeta};
pub use generate::{generate_sbm, SbmSpec};
pub use noise::{inject_structural_noise, mask_features};

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{CsrPattern, SparseAdjacency};
use crate::tensor::{SparseVar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Undirected, unweighted, node-labelled graph with a fixed data split.
///
/// Each undirected edge is stored once as `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
    splits: Vec<Split>,
}

impl<T: Scalar> Graph<T> {
    /// Validates and canonicalises. Edges may come in either orientation and
    /// may repeat; self-loops are rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor<T>,
        labels: Vec<usize>,
        classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::config(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::config(format!("self-loop on node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if features.rank() != 2 || features.rows() != n {
            return Err(Error::Shape {
                op: "graph_features",
                left: vec![n],
                right: features.shape().to_vec(),
            });
        }
        if let Some(k) = features.data().iter().position(|x| x.is_nan()) {
            return Err(Error::Domain {
                op: "graph_features",
                index: k,
                value: f64::NAN,
            });
        }
        if labels.len() != n || splits.len() != n {
            return Err(Error::config(format!(
                "expected {n} labels and splits, got {} and {}",
                labels.len(),
                splits.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= classes) {
            return Err(Error::config(format!(
                "label {} of node {i} outside [0, {classes})",
                labels[i]
            )));
        }
        for s in [Split::Train, Split::Val, Split::Test] {
            if !splits.contains(&s) {
                return Err(Error::config(format!("{} mask is empty", s.as_str())));
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
            features,
            labels,
            classes,
            splits,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Node ids in `split`, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&i| self.splits[i] == split).collect()
    }

    /// Both orientations of every edge.
    pub fn directed_entries(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect()
    }

    pub(crate) fn with_edges(&self, edges: Vec<(usize, usize)>) -> Self {
        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        Self {
            edges,
            ..self.clone()
        }
    }

    pub(crate) fn with_features(&self, features: Tensor<T>) -> Self {
        Self {
            features,
            ..self.clone()
        }
    }
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily<T: Scalar>(g: &Graph<T>) -> Result<f64> {
    if g.edges.is_empty() {
        return Err(Error::UndefinedMetric("edge homophily of an empty edge set"));
    }
    let same = g
        .edges
        .iter()
        .filter(|&&(i, j)| g.labels[i] == g.labels[j])
        .count();
    Ok(same as f64 / g.edges.len() as f64)
}

/// `D^{-1/2} (M + I) D^{-1/2}` with `D_ii = 1 + Σ_j M_ij`, where `M` is the
/// matrix holding `weights[k]` at `entries[k]` (repeated entries add up).
///
/// Differentiable in `weights`. For a symmetric `M` the result is symmetric.
pub fn normalize_weighted<'t, T: Scalar>(
    n: usize,
    entries: &[(usize, usize)],
    weights: Var<'t, T>,
) -> Result<SparseVar<'t, T>> {
    let tape = weights.tape();
    weights.with_value(|w| {
        if w.rank() != 1 || w.len() != entries.len() {
            return Err(Error::Shape {
                op: "normalize_adjacency",
                left: vec![entries.len()],
                right: w.shape().to_vec(),
            });
        }
        match w.data().iter().position(|&x| !(x >= T::zero())) {
            Some(k) => Err(Error::Domain {
                op: "normalize_adjacency",
                index: k,
                value: w.data()[k].to_f64_lossy(),
            }),
            None => Ok(()),
        }
    })?;

    let mut coords = entries.to_vec();
    coords.extend((0..n).map(|i| (i, i)));
    let (pattern, slot) = CsrPattern::square(n, &coords)?;
    let rows: Vec<usize> = pattern.entry_rows().to_vec();
    let cols: Vec<usize> = pattern.col_indices().to_vec();

    let all = weights.concat(tape.constant(Tensor::ones(&[n])))?;
    let merged = all.scatter_add(&slot, pattern.nnz())?;
    let degree = merged.scatter_add(&rows, n)?;
    let inv_sqrt = degree.powf(T::of(-0.5))?;
    let values = merged
        .mul(inv_sqrt.take(&rows)?)?
        .mul(inv_sqrt.take(&cols)?)?;
    SparseVar::new(Arc::new(pattern), values)
}

/// Normalised adjacency with self-loops of an unweighted graph.
pub fn normalize_adjacency<T: Scalar>(g: &Graph<T>) -> Result<SparseAdjacency<T>> {
    let entries = g.directed_entries();
    normalize_edges(g.n(), &entries, &vec![T::one(); entries.len()])
}

/// Untaped [`normalize_weighted`].
pub fn normalize_edges<T: Scalar>(
    n: usize,
    entries: &[(usize, usize)],
    weights: &[T],
) -> Result<SparseAdjacency<T>> {
    let tape = Tape::new();
    let w = tape.constant(Tensor::vector(weights.to_vec()));
    Ok(normalize_weighted(n, entries, w)?.detach())
}
