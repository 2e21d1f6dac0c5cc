//! Softmax (InfoNCE-style) estimate of the mutual information between the
//! representations on the pruned and the full candidate graph.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Norm floor used when taking cosines; all-zero rows (common after ReLU)
/// get cosine 0 with everything instead of an error.
pub const COSINE_FLOOR: f64 = 1e-8;

/// `size` distinct node ids drawn uniformly from `0..n`, ascending.
pub fn sample_batch(n: usize, size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::config("negative batch must hold at least one node"));
    }
    if size > n {
        return Err(Error::config(format!("negative batch of {size} exceeds {n} nodes")));
    }
    let mut batch = index::sample(rng, n, size).into_vec();
    batch.sort_unstable();
    Ok(batch)
}

/// `−(1/n) Σ_i log[exp(cos(Z̃_i, Z_i)) / Σ_{j ∈ 𝓑 ∪ {i}} exp(cos(Z̃_i, Z_j))]`.
///
/// The anchor's own positive always sits in its denominator, so every term
/// is non-negative.
pub fn mi_loss<'t, T: Scalar>(
    z_tilde: Var<'t, T>,
    z: Var<'t, T>,
    batch: &[usize],
) -> Result<Var<'t, T>> {
    let (a, b) = (z_tilde.shape(), z.shape());
    if a.len() != 2 || a != b {
        return Err(Error::Shape {
            op: "mi_loss",
            left: a,
            right: b,
        });
    }
    let n = a[0];
    if batch.is_empty() {
        return Err(Error::config("negative batch must hold at least one node"));
    }
    if batch.len() > n {
        return Err(Error::config(format!(
            "negative batch of {} exceeds {n} nodes",
            batch.len()
        )));
    }
    let floor = T::of(COSINE_FLOOR);
    let zt = z_tilde.row_l2_normalize_clamped(floor)?;
    let zn = z.row_l2_normalize_clamped(floor)?;
    let anchors: Vec<usize> = (0..n).collect();
    let positive = zt.edge_dot(zn, &anchors, &anchors)?;

    let mut in_batch = vec![false; n];
    for &j in batch {
        if j >= n {
            return Err(Error::config(format!("batch node {j} out of range for {n} nodes")));
        }
        if std::mem::replace(&mut in_batch[j], true) {
            return Err(Error::config(format!("batch node {j} repeated")));
        }
    }
    let outside = Tensor::vector(
        in_batch
            .iter()
            .map(|&inside| if inside { T::zero() } else { T::one() })
            .collect(),
    );
    let negatives = zt.matmul(zn.gather_rows(batch)?.transpose()?)?;
    let denominator = negatives
        .exp()
        .row_sum()?
        .add(positive.exp().mul(z.tape().constant(outside))?)?;
    Ok(denominator.log()?.sub(positive)?.mean())
}

/// `l_gsl + β·l_mi`; `β = 0` returns `l_gsl` itself.
pub fn total_loss<'t, T: Scalar>(l_gsl: Var<'t, T>, l_mi: Var<'t, T>, beta: T) -> Result<Var<'t, T>> {
    if !(beta >= T::zero() && beta <= T::one()) {
        return Err(Error::config(format!("beta = {beta} outside [0, 1]")));
    }
    if beta == T::zero() {
        return Ok(l_gsl);
    }
    l_gsl.add(l_mi.scale(beta))
}
