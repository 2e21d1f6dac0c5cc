use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stochastic block model with noisy one-hot block features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmSpec {
    /// The desk-scale benchmark: 4 blocks of 50, `p_in = 0.1`,
    /// `p_out = 0.01`, unit feature noise.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            block_sizes: vec![50; 4],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 4,
            feature_noise: 1.0,
            seed,
        }
    }
}

pub fn generate_sbm<T: Scalar>(spec: &SbmSpec) -> Result<Graph<T>> {
    if spec.block_sizes.is_empty() {
        return Err(Error::config("stochastic block model needs at least one block"));
    }
    if spec.block_sizes.contains(&0) {
        return Err(Error::config("block sizes must be positive"));
    }
    for (name, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
        }
    }
    if spec.feature_dim == 0 {
        return Err(Error::config("feature_dim must be positive"));
    }
    if !(spec.feature_noise >= 0.0) {
        return Err(Error::config("feature_noise must be non-negative"));
    }

    let mut rng = rng::seeded(spec.seed);
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            // draw unconditionally so the stream does not depend on p
            let u: f64 = rng.random();
            if u < p {
                edges.push((i, j));
            }
        }
    }

    let d = spec.feature_dim;
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for k in 0..d {
            let base = if k == y % d { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(T::of(base + spec.feature_noise * z));
        }
    }

    let mut splits = vec![Split::Test; n];
    let mut start = 0;
    for &size in &spec.block_sizes {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let take = (size / 10).max(1);
        for &i in &members[..take.min(size)] {
            splits[i] = Split::Train;
        }
        for &i in members.iter().skip(take).take(take) {
            splits[i] = Split::Val;
        }
        start += size;
    }

    Graph::new(
        n,
        edges,
        Tensor::from_vec(vec![n, d], data)?,
        labels,
        spec.block_sizes.len(),
        splits,
    )
}
