//! Random structural and feature corruption.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Removes `⌊del_ratio·m⌋` existing edges and adds `⌊add_ratio·m⌋` pairs
/// that were not edges of `g`, both uniformly at random.
pub fn inject_structural_noise<T: Scalar>(
    g: &Graph<T>,
    add_ratio: f64,
    del_ratio: f64,
    seed: u64,
) -> Result<Graph<T>> {
    if !(add_ratio >= 0.0) || !(0.0..=1.0).contains(&del_ratio) {
        return Err(Error::config(format!(
            "noise ratios out of range: add {add_ratio}, del {del_ratio}"
        )));
    }
    let m = g.edge_count();
    let n = g.n();
    let n_del = (del_ratio * m as f64).floor() as usize;
    let n_add = (add_ratio * m as f64).floor() as usize;
    let available = n * n.saturating_sub(1) / 2 - m;
    if n_add > available {
        return Err(Error::Capacity {
            requested: n_add,
            available,
        });
    }

    let mut rng = rng::seeded(seed);
    let mut dropped = vec![false; m];
    for k in index::sample(&mut rng, m, n_del) {
        dropped[k] = true;
    }
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(&e, _)| e)
        .collect();

    if n_add > 0 {
        if available <= 4 * n_add {
            let complement: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| !g.has_edge(i, j))
                .collect();
            edges.extend(
                index::sample(&mut rng, complement.len(), n_add)
                    .into_iter()
                    .map(|k| complement[k]),
            );
        } else {
            let mut added = HashSet::with_capacity(n_add);
            let mut order = Vec::with_capacity(n_add);
            while order.len() < n_add {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let e = (i.min(j), i.max(j));
                if i != j && !g.has_edge(i, j) && added.insert(e) {
                    order.push(e);
                }
            }
            edges.extend(order);
        }
    }
    Ok(g.with_edges(edges))
}

/// Zeroes `⌊mask_ratio·n·d⌋` uniformly chosen feature entries.
pub fn mask_features<T: Scalar>(g: &Graph<T>, mask_ratio: f64, seed: u64) -> Result<Graph<T>> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::config(format!("mask ratio {mask_ratio} outside [0, 1]")));
    }
    let mut features = g.features().clone();
    let total = features.len();
    let count = (mask_ratio * total as f64).floor() as usize;
    let mut rng = rng::seeded(seed);
    for k in index::sample(&mut rng, total, count) {
        features.data_mut()[k] = T::zero();
    }
    Ok(g.with_features(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmSpec, Split};
    use crate::tensor::Tensor;

    fn ring(n: usize) -> Graph<f64> {
        let mut splits = vec![Split::Test; n];
        splits[0] = Split::Train;
        splits[1] = Split::Val;
        Graph::new(
            n,
            (0..n).map(|i| (i, (i + 1) % n)),
            Tensor::ones(&[n, 10]),
            vec![0; n],
            1,
            splits,
        )
        .unwrap()
    }

    #[test]
    fn zero_ratios_are_identity() {
        let g = ring(20);
        assert_eq!(inject_structural_noise(&g, 0.0, 0.0, 3).unwrap(), g);
        assert_eq!(mask_features(&g, 0.0, 3).unwrap(), g);
    }

    #[test]
    fn full_deletion_empties_graph() {
        let g = ring(20);
        assert_eq!(inject_structural_noise(&g, 0.0, 1.0, 3).unwrap().edge_count(), 0);
    }

    #[test]
    fn add_and_delete_quarter_keeps_count() {
        let g = ring(100);
        let h = inject_structural_noise(&g, 0.25, 0.25, 11).unwrap();
        assert_eq!(h.edge_count(), 100);
        let kept = h.edges().iter().filter(|&&(i, j)| g.has_edge(i, j)).count();
        assert_eq!(kept, 75);
        let added = h.edge_count() - kept;
        assert_eq!(added, 25);
    }

    #[test]
    fn dense_complement_path_and_capacity() {
        let g = ring(5);
        // 10 pairs, 5 edges, 5 free
        let h = inject_structural_noise(&g, 1.0, 0.0, 2).unwrap();
        assert_eq!(h.edge_count(), 10);
        assert!(matches!(
            inject_structural_noise(&g, 1.2, 0.0, 2),
            Err(Error::Capacity { requested: 6, available: 5 })
        ));
    }

    #[test]
    fn feature_mask_counts() {
        let g = ring(10);
        let h = mask_features(&g, 0.5, 4).unwrap();
        assert_eq!(h.features().data().iter().filter(|&&x| x == 0.0).count(), 50);
        let h = mask_features(&g, 1.0, 4).unwrap();
        assert!(h.features().data().iter().all(|&x| x == 0.0));
        assert!(mask_features(&g, 1.5, 4).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let g: Graph<f64> = generate_sbm(&SbmSpec::benchmark(1)).unwrap();
        let a = inject_structural_noise(&g, 0.3, 0.3, 5).unwrap();
        let b = inject_structural_noise(&g, 0.3, 0.3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(mask_features(&g, 0.3, 5).unwrap(), mask_features(&g, 0.3, 5).unwrap());
    }
}
