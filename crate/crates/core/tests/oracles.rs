//! Library results against independent brute-force and dense computations.

use std::sync::Arc;

use ingsl_core::analysis::{avg_pairwise_similarity, complexity_estimate, lemma1_bound};
use ingsl_core::gnn::{accuracy, flops_estimate, gcn_forward, task_loss, GcnParams, TrainState};
use ingsl_core::graph::{normalize_adjacency, normalize_edges, Graph, Split};
use ingsl_core::gsl::{build_candidates, fuse_with_original, Similarity};
use ingsl_core::ingsl::{
    diversity_scores, mi_loss, prune, sample_batch, select_threshold, DiversityScorer, ScorerVars,
    Threshold,
};
use ingsl_core::rng;
use ingsl_core::sparse::CsrPattern;
use ingsl_core::tensor::{SparseVar, Tape, Tensor};
use rand::Rng as _;

type Dense = Vec<Vec<f64>>;

fn random(seed: u64, rows: usize, cols: usize) -> Dense {
    let mut r = rng::seeded(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

fn tensor(m: &Dense) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

fn dense(t: &Tensor<f64>) -> Dense {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn max_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_graph(seed: u64, n: usize, p: f64, d: usize, classes: usize) -> Graph<f64> {
    let mut r = rng::seeded(seed);
    let mut edges = vec![];
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let features = tensor(&random(seed + 1, n, d));
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let splits = (0..n)
        .map(|i| match i % 3 {
            0 => Split::Train,
            1 => Split::Val,
            _ => Split::Test,
        })
        .collect();
    Graph::new(n, edges, features, labels, classes, splits).unwrap()
}

/// `D^{-1/2}(A + I)D^{-1/2}` from the dense matrix.
fn dense_normalize(a: &Dense) -> Dense {
    let n = a.len();
    let mut m = a.clone();
    for i in 0..n {
        m[i][i] += 1.0;
    }
    let deg: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| m[i][j] / (deg[i].sqrt() * deg[j].sqrt())).collect())
        .collect()
}

fn adjacency(g: &Graph<f64>) -> Dense {
    let mut a = vec![vec![0.0; g.n()]; g.n()];
    for &(i, j) in g.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    a
}

#[test]
fn normalized_adjacency_matches_dense() {
    for seed in 0..5 {
        let g = random_graph(seed, 12, 0.3, 3, 3);
        let want = dense_normalize(&adjacency(&g));
        let got = dense(&normalize_adjacency(&g).unwrap().to_dense());
        assert!(max_diff(&got, &want) < 1e-12);
    }
}

#[test]
fn weighted_normalization_matches_dense() {
    let entries = [(0, 1), (1, 0), (2, 3), (3, 2), (0, 0), (1, 3)];
    let weights = [0.5, 0.5, 2.0, 2.0, 1.5, 0.25];
    let mut a = vec![vec![0.0; 4]; 4];
    for (&(i, j), &w) in entries.iter().zip(&weights) {
        a[i][j] += w;
    }
    let got = dense(&normalize_edges(4, &entries, &weights).unwrap().to_dense());
    assert!(max_diff(&got, &dense_normalize(&a)) < 1e-12);
}

#[test]
fn gcn_forward_matches_dense() {
    let g = random_graph(3, 8, 0.4, 3, 2);
    let a = dense_normalize(&adjacency(&g));
    let x = dense(g.features());
    let params = GcnParams::init(&[3, 5, 4], Some(2), &mut rng::seeded(9)).unwrap();

    let mut z = x.clone();
    for w in &params.layers {
        z = mm(&mm(&a, &z), &dense(w));
        z.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
    }
    let logits = mm(&z, &dense(params.classifier.as_ref().unwrap()));

    let tape = Tape::<f64>::new();
    let adj = SparseVar::constant(&tape, &normalize_adjacency(&g).unwrap());
    let out = gcn_forward(&adj, tape.constant(g.features().clone()), &params.lift(&tape)).unwrap();
    assert!(max_diff(&dense(&out.representations.value()), &z) < 1e-12);
    assert!(max_diff(&dense(&out.logits.unwrap().value()), &logits) < 1e-12);
}

#[test]
fn cross_entropy_matches_naive() {
    let logits = random(4, 5, 3);
    let labels = [2, 0, 1, 1, 0];
    let mask = [0, 1, 2, 3, 4];
    let want = mask
        .iter()
        .map(|&i| {
            let row: &Vec<f64> = &logits[i];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[labels[i]].exp() / z).ln()
        })
        .sum::<f64>()
        / 5.0;
    let tape = Tape::<f64>::new();
    let got = task_loss(tape.constant(tensor(&logits)), &labels, &mask).unwrap().item();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn uniform_logits_cost_log_classes() {
    let tape = Tape::<f64>::new();
    let l = task_loss(tape.constant(Tensor::zeros(&[3, 5])), &[0, 4, 2], &[0, 1, 2]).unwrap();
    assert!((l.item() - 5f64.ln()).abs() < 1e-15);
    let mut margin = Tensor::zeros(&[1, 3]);
    margin.data_mut()[1] = 1000.0;
    let l = task_loss(tape.constant(margin), &[1], &[0]).unwrap();
    assert!(l.item() < 1e-6);
}

#[test]
fn accuracy_matches_enumeration() {
    let logits = random(5, 20, 4);
    let labels: Vec<usize> = (0..20).map(|i| (i * 7) % 4).collect();
    let mask: Vec<usize> = (0..20).step_by(2).collect();
    let hits = mask
        .iter()
        .filter(|&&i| {
            let row = &logits[i];
            let best = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[i]
        })
        .count();
    let got = accuracy(&tensor(&logits), &labels, &mask).unwrap();
    assert_eq!(got, hits as f64 / mask.len() as f64);
    // constant logits pick class 0 for every node
    let flat = Tensor::<f64>::zeros(&[20, 4]);
    let zeros = mask.iter().filter(|&&i| labels[i] == 0).count();
    assert_eq!(accuracy(&flat, &labels, &mask).unwrap(), zeros as f64 / mask.len() as f64);
}

#[test]
fn adam_single_step_and_reference() {
    let p0 = Tensor::<f64>::vector(vec![0.5, -1.0, 2.0]);
    let g = Tensor::vector(vec![0.1, -3.0, 0.0]);
    let mut st = TrainState::new(vec![p0.clone()]);
    st.adam_step(std::slice::from_ref(&g), 0.01).unwrap();
    // first bias-corrected step moves by lr·sign(g) up to ε
    let want = [0.5 - 0.01 * 0.1 / (0.1 + 1e-8), -1.0 + 0.01 * 3.0 / (3.0 + 1e-8), 2.0];
    for (a, b) in st.params[0].data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }

    // independent two-step reference
    let g2 = Tensor::vector(vec![-0.2, 1.0, 0.5]);
    st.adam_step(std::slice::from_ref(&g2), 0.01).unwrap();
    let (mut p, mut m, mut v) = (p0.data().to_vec(), vec![0.0; 3], vec![0.0; 3]);
    for (t, grad) in [g.data(), g2.data()].iter().enumerate() {
        let t = t as i32 + 1;
        for k in 0..3 {
            m[k] = 0.9 * m[k] + 0.1 * grad[k];
            v[k] = 0.999 * v[k] + 0.001 * grad[k] * grad[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            p[k] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (a, b) in st.params[0].data().iter().zip(&p) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(st.step(), 2);
}

/// Full sort of every row's off-diagonal scores.
fn brute_topk(e: &Dense, k: usize) -> Vec<Vec<usize>> {
    let n = e.len();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (e[i].iter().zip(&e[j]).map(|(a, b)| a * b).sum(), j))
                .collect();
            cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut kept: Vec<usize> = cand[..k].iter().map(|c| c.1).collect();
            kept.sort();
            kept
        })
        .collect()
}

#[test]
fn topk_matches_full_sort() {
    for (seed, n) in [(1, 12), (2, 20), (3, 30)] {
        let e = random(seed, n, 4);
        for k in 1..n {
            let tape = Tape::<f64>::new();
            let c = build_candidates(tape.constant(tensor(&e)), k, Similarity::InnerProduct).unwrap();
            let want = brute_topk(&e, k);
            let entries = c.entries();
            for (i, cols) in want.iter().enumerate() {
                let got: Vec<usize> = entries.iter().filter(|p| p.0 == i).map(|p| p.1).collect();
                assert_eq!(&got, cols, "n={n} k={k} row {i}");
                for &j in cols {
                    let dot: f64 = e[i].iter().zip(&e[j]).map(|(a, b)| a * b).sum();
                    let slot = c.sparse.pattern.find(i, j).unwrap();
                    assert!((c.sparse.values.value().data()[slot] - dot).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn topk_tie_break_and_duplicates() {
    let tape = Tape::<f64>::new();
    let c = build_candidates(tape.constant(Tensor::eye(4)), 1, Similarity::InnerProduct).unwrap();
    assert_eq!(c.entries(), vec![(0, 1), (1, 0), (2, 0), (3, 0)]);
    let e = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![0.1, 0.0], vec![0.0, 0.3]]).unwrap();
    let c = build_candidates(tape.constant(e), 1, Similarity::InnerProduct).unwrap();
    let entries = c.entries();
    assert!(entries.contains(&(0, 1)) && entries.contains(&(1, 0)));
    assert!(build_candidates(tape.constant(Tensor::<f64>::eye(3)), 3, Similarity::InnerProduct).is_err());
}

#[test]
fn encoder_with_zero_features_is_zero() {
    let g = random_graph(8, 8, 0.3, 3, 2);
    let tape = Tape::<f64>::new();
    let adj = SparseVar::constant(&tape, &normalize_adjacency(&g).unwrap());
    let p = GcnParams::init(&[3, 4, 4], None, &mut rng::seeded(1)).unwrap();
    let out = gcn_forward(&adj, tape.constant(Tensor::zeros(&[8, 3])), &p.lift(&tape)).unwrap();
    assert!(out.representations.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fusion_matches_dense() {
    let g = random_graph(6, 5, 0.4, 2, 2);
    let coords = [(0, 2), (1, 4), (3, 0), (4, 1), (2, 2)];
    let vals = [0.7, 1.3, 0.2, 0.9, 0.5];
    let (p, slot) = CsrPattern::square(5, &coords).unwrap();
    let mut ordered = vec![0.0; p.nnz()];
    for (k, &s) in slot.iter().enumerate() {
        ordered[s] += vals[k];
    }
    let tape = Tape::<f64>::new();
    let s = SparseVar::new(Arc::new(p), tape.constant(Tensor::vector(ordered))).unwrap();
    let w = 0.6;
    let fused = fuse_with_original(&g, &s, w).unwrap().detach();
    let mut a = adjacency(&g);
    for (&(i, j), &v) in coords.iter().zip(&vals) {
        a[i][j] += w * v;
    }
    assert!(max_diff(&dense(&fused.to_dense()), &dense_normalize(&a)) < 1e-12);

    let plain = dense(&normalize_adjacency(&g).unwrap().to_dense());
    assert_eq!(dense(&fuse_with_original(&g, &s, 0.0).unwrap().detach().to_dense()), plain);
}

#[test]
fn bilinear_scores_match_dense() {
    let e = random(11, 6, 3);
    let w1 = random(12, 3, 3);
    let full = mm(&mm(&e, &w1), &transpose(&e));
    let src = [0, 1, 2, 3, 4, 5, 0, 5];
    let dst = [1, 2, 3, 4, 5, 0, 3, 2];
    let tape = Tape::<f64>::new();
    let scorer = DiversityScorer::Bilinear { weight: tensor(&w1) };
    let w = diversity_scores(tape.constant(tensor(&e)), &src, &dst, &scorer.lift(&tape)).unwrap();
    for (k, (&i, &j)) in src.iter().zip(&dst).enumerate() {
        assert!((w.value().data()[k] - full[i][j]).abs() < 1e-12);
    }
}

#[test]
fn mlp_scores_match_loop() {
    let e = random(13, 5, 2);
    let hidden = random(14, 4, 2);
    let output = random(15, 2, 1);
    let tape = Tape::<f64>::new();
    let vars = ScorerVars::Mlp(tape.constant(tensor(&hidden)), tape.constant(tensor(&output)));
    let w = diversity_scores(tape.constant(tensor(&e)), &[0, 3], &[4, 1], &vars).unwrap();
    for (k, (i, j)) in [(0, 4), (3, 1)].into_iter().enumerate() {
        let input: Vec<f64> = e[i].iter().chain(&e[j]).copied().collect();
        let h: Vec<f64> = (0..2)
            .map(|c| input.iter().enumerate().map(|(p, x)| x * hidden[p][c]).sum::<f64>().max(0.0))
            .collect();
        let want: f64 = h.iter().zip(&output).map(|(a, b)| a * b[0]).sum();
        assert!((w.value().data()[k] - want).abs() < 1e-12);
    }
}

#[test]
fn threshold_matches_full_sort() {
    let mut r = rng::seeded(21);
    let x: Vec<f64> = (0..1000).map(|_| r.random_range(-5.0..5.0)).collect();
    let t = select_threshold(&x, 0.3).unwrap();
    let mut sorted = x.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert_eq!(t.value, sorted[699]);
    assert_eq!(t.survivors(&x).len(), 700);
    assert_eq!(x.iter().filter(|&&v| v >= t.value).count(), 700);
}

#[test]
fn prune_matches_direct_scan() {
    let mut r = rng::seeded(31);
    let mut coords = vec![];
    while coords.len() < 50 {
        let (i, j) = (r.random_range(0..12), r.random_range(0..12));
        if i != j && !coords.contains(&(i, j)) {
            coords.push((i, j));
        }
    }
    let (p, _) = CsrPattern::square(12, &coords).unwrap();
    let entries: Vec<_> = p.entries().collect();
    let s_vals: Vec<f64> = (0..50).map(|_| r.random_range(0.0..2.0)).collect();
    let w_vals: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
    let eps = 0.1;
    let tape = Tape::<f64>::new();
    let s = SparseVar::new(Arc::new(p), tape.constant(Tensor::vector(s_vals.clone()))).unwrap();
    let out = prune(&s, tape.constant(Tensor::vector(w_vals.clone())), &Threshold::at(eps)).unwrap();
    let want: Vec<(usize, usize)> = (0..50)
        .filter(|&e| s_vals[e] * w_vals[e] >= eps)
        .map(|e| entries[e])
        .collect();
    assert_eq!(out.sparse.pattern.entries().collect::<Vec<_>>(), want);
    for (&k, &v) in out.kept.iter().zip(out.sparse.values.value().data()) {
        let x: f64 = s_vals[k] * w_vals[k];
        assert!((v - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15);
        assert!(v > 0.0 && v < 1.0);
    }
}

/// Per-anchor loop over `𝓑 ∪ {i}`.
fn naive_mi(zt: &Dense, z: &Dense, batch: &[usize]) -> f64 {
    let cos = |a: &Vec<f64>, b: &Vec<f64>| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let n = zt.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut set: Vec<usize> = batch.to_vec();
        if !set.contains(&i) {
            set.push(i);
        }
        let denom: f64 = set.iter().map(|&j| cos(&zt[i], &z[j]).exp()).sum();
        total -= (cos(&zt[i], &z[i]).exp() / denom).ln();
    }
    total / n as f64
}

#[test]
fn mi_loss_matches_naive_loop() {
    let zt = random(41, 10, 4);
    let z = random(42, 10, 4);
    let batch = sample_batch(10, 5, &mut rng::seeded(43)).unwrap();
    let tape = Tape::<f64>::new();
    let got = mi_loss(tape.constant(tensor(&zt)), tape.constant(tensor(&z)), &batch).unwrap();
    assert!((got.item() - naive_mi(&zt, &z, &batch)).abs() < 1e-12);
}

#[test]
fn pairwise_similarity_matches_pair_loop() {
    let v = random(51, 8, 3);
    let mut total = 0.0;
    for i in 0..8 {
        for j in i + 1..8 {
            let d: f64 = v[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum();
            let ni = v[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nj = v[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            total += d / (ni * nj);
        }
    }
    let want = total / 28.0;
    assert!((avg_pairwise_similarity(&tensor(&v)).unwrap() - want).abs() < 1e-12);
}

#[test]
fn closed_form_values() {
    assert!((lemma1_bound(10, 0.9).unwrap() - 0.788_888_888_888_888_9).abs() < 1e-15);
    assert_eq!(complexity_estimate(100, 8, 500, 0.5, 2, 50).unwrap(), 68_500.0);
    // 2·m·d_l + 2·n·d_{l−1}·d_l over [16 → 8 → 4], m = 40, n = 10
    assert_eq!(flops_estimate(40, &[16, 8, 4], 10), 640 + 2560 + 320 + 640);
    assert_eq!(flops_estimate(0, &[16, 8, 4], 10), 2560 + 640);
}
