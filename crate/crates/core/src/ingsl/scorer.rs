use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::glorot;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Bilinear,
    Mlp,
}

/// Learnable per-edge diversity score `w_ij = f(E_i, E_j)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DiversityScorer<T> {
    /// `E_i W₁ E_jᵀ`
    Bilinear { weight: Tensor<T> },
    /// `[E_i ‖ E_j] → h (ReLU) → 1`, no biases
    Mlp { hidden: Tensor<T>, output: Tensor<T> },
}

impl<T: Scalar> DiversityScorer<T> {
    /// Bilinear starts at `W₁ = I`, so the initial score is the plain inner
    /// product; the MLP starts Glorot-uniform.
    pub fn init(kind: ScorerKind, h: usize, rng: &mut Rng) -> Self {
        match kind {
            ScorerKind::Bilinear => Self::Bilinear {
                weight: Tensor::eye(h),
            },
            ScorerKind::Mlp => Self::Mlp {
                hidden: glorot(2 * h, h, rng),
                output: glorot(h, 1, rng),
            },
        }
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            Self::Bilinear { .. } => ScorerKind::Bilinear,
            Self::Mlp { .. } => ScorerKind::Mlp,
        }
    }

    /// Checks the parameter shapes against the embedding width `h`.
    pub fn validate(&self, h: usize) -> Result<()> {
        let check = |t: &Tensor<T>, want: [usize; 2]| {
            if t.shape() != want {
                return Err(Error::Shape {
                    op: "diversity_scorer",
                    left: want.to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        match self {
            Self::Bilinear { weight } => check(weight, [h, h]),
            Self::Mlp { hidden, output } => {
                check(hidden, [2 * h, h])?;
                check(output, [h, 1])
            }
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Bilinear { weight } => vec![weight],
            Self::Mlp { hidden, output } => vec![hidden, output],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Bilinear { weight } => vec![weight],
            Self::Mlp { hidden, output } => vec![hidden, output],
        }
    }

    pub fn lift<'t>(&self, tape: &'t Tape<T>) -> ScorerVars<'t, T> {
        match self {
            Self::Bilinear { weight } => ScorerVars::Bilinear(tape.leaf(weight.clone())),
            Self::Mlp { hidden, output } => {
                ScorerVars::Mlp(tape.leaf(hidden.clone()), tape.leaf(output.clone()))
            }
        }
    }
}

/// [`DiversityScorer`] lifted onto a tape.
#[derive(Clone, Copy, Debug)]
pub enum ScorerVars<'t, T> {
    Bilinear(Var<'t, T>),
    Mlp(Var<'t, T>, Var<'t, T>),
}

impl<'t, T: Scalar> ScorerVars<'t, T> {
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        match *self {
            Self::Bilinear(w) => vec![w],
            Self::Mlp(a, b) => vec![a, b],
        }
    }
}

/// One score per `(src[e], dst[e])`, computed edge by edge.
pub fn diversity_scores<'t, T: Scalar>(
    e: Var<'t, T>,
    src: &[usize],
    dst: &[usize],
    scorer: &ScorerVars<'t, T>,
) -> Result<Var<'t, T>> {
    if src.len() != dst.len() {
        return Err(Error::Shape {
            op: "diversity_scores",
            left: vec![src.len()],
            right: vec![dst.len()],
        });
    }
    match *scorer {
        ScorerVars::Bilinear(w) => e.matmul(w)?.edge_dot(e, src, dst),
        ScorerVars::Mlp(hidden, output) => {
            let pair = e.gather_rows(src)?.concat_cols(e.gather_rows(dst)?)?;
            pair.matmul(hidden)?
                .relu()
                .matmul(output)?
                .reshape(&[src.len()])
        }
    }
}
