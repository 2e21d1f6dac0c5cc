//! Graph structure learning with a diversity-guided, mutual-information
//! trained edge pruner.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a define-by-run tape for reverse-mode
//!   differentiation and a finite-difference gradient checker.
//! - [`sparse`]: compressed-row sparsity patterns shared by every adjacency.
//! - [`graph`]: the graph data model, bundle I/O, normalisation, synthetic
//!   graphs and noise injection.
//! - [`gnn`]: the GCN backbone, losses, metrics and the Adam optimiser.
//! - [`gsl`]: the embedding-based structure learner (encoder, top-K
//!   candidates, residual fusion).
//! - [`ingsl`]: diversity scoring, thresholded pruning, the contrastive
//!   mutual-information objective and the joint training loop.
//! - [`analysis`]: numerical checks of the neighbour-redundancy bounds,
//!   the redundancy profile and the cost estimator.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what training and
//! verification use.

// `!(x >= 0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Fallible `add`/`sub`/`mul` cannot be the operator traits.
#![allow(clippy::should_implement_trait)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod gsl;
pub mod ingsl;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type Var64<'t> = tensor::Var<'t, f64>;
pub type Graph64 = graph::Graph<f64>;
pub type SparseAdjacency64 = sparse::SparseAdjacency<f64>;
pub type GcnParams64 = gnn::GcnParams<f64>;
pub type DiversityScorer64 = ingsl::DiversityScorer<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = graph::Graph<f32>;
