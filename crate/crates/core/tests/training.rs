use ingsl_core::gnn::{gcn_forward, task_loss, GcnParams, TrainState};
use ingsl_core::graph::{generate_sbm, normalize_adjacency, Graph, SbmSpec, Split};
use ingsl_core::gsl::{build_candidates, encode_structure, fuse_with_original, Similarity};
use ingsl_core::ingsl::{train_ingsl, PruneMode, TrainConfig};
use ingsl_core::rng;
use ingsl_core::tensor::{SparseVar, Tape, Tensor};

fn graph(seed: u64) -> Graph<f64> {
    let spec = SbmSpec {
        block_sizes: vec![12, 12, 12],
        p_in: 0.3,
        p_out: 0.03,
        feature_dim: 5,
        feature_noise: 1.0,
        seed,
    };
    generate_sbm(&spec).unwrap()
}

/// Plain embedding-based GSL where each candidate edge is reweighted by
/// `sigmoid(S_ij · E_i·E_j)`, trained with the same initialisation streams.
fn base_gsl_losses(g: &Graph<f64>, cfg: &TrainConfig) -> Vec<f64> {
    let dims = [g.feature_dim(), cfg.hidden, cfg.hidden];
    let s = GcnParams::init(&dims, None, &mut rng::stream(cfg.seed, 0)).unwrap();
    let t = GcnParams::init(&dims, Some(g.classes()), &mut rng::stream(cfg.seed, 1)).unwrap();
    let split = s.tensors().len();
    let flat: Vec<Tensor<f64>> = s.tensors().into_iter().chain(t.tensors()).cloned().collect();
    let mut state = TrainState::new(flat);
    let a_norm = normalize_adjacency(g).unwrap();
    let train = g.split_nodes(Split::Train);
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        let (mut s, mut t) = (s.clone(), t.clone());
        for (slot, p) in s.tensors_mut().into_iter().zip(&state.params[..split]) {
            *slot = p.clone();
        }
        for (slot, p) in t.tensors_mut().into_iter().zip(&state.params[split..]) {
            *slot = p.clone();
        }
        let tape = Tape::<f64>::new();
        let x = tape.constant(g.features().clone());
        let a = SparseVar::constant(&tape, &a_norm);
        let (sv, tv) = (s.lift(&tape), t.lift(&tape));
        let e = encode_structure(&a, x, &sv).unwrap();
        let cand = build_candidates(e, cfg.k, Similarity::InnerProduct).unwrap();
        let w = e.edge_dot(e, &cand.sources(), &cand.targets()).unwrap();
        let values = cand.sparse.values.mul(w).unwrap().sigmoid();
        let learned = SparseVar::new(cand.sparse.pattern.clone(), values).unwrap();
        let fused = fuse_with_original(g, &learned, 1.0).unwrap();
        let logits = gcn_forward(&fused, x, &tv).unwrap().logits.unwrap();
        let loss = task_loss(logits, g.labels(), &train).unwrap();
        losses.push(loss.item());
        tape.backward(loss).unwrap();
        let grads: Vec<Tensor<f64>> = sv
            .vars()
            .into_iter()
            .chain(tv.vars())
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect();
        state.adam_step(&grads, cfg.lr).unwrap();
    }
    losses
}

#[test]
fn unpruned_ingsl_matches_sigmoid_reweighted_gsl() {
    let g = graph(3);
    let cfg = TrainConfig {
        hidden: 6,
        k: 5,
        r: 0.0,
        beta: 0.0,
        freeze_scorer: true,
        epochs: 25,
        patience: 1000,
        mode: PruneMode::Ingsl,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = train_ingsl(&g, &cfg).unwrap();
    let want = base_gsl_losses(&g, &cfg);
    assert_eq!(out.report.history.len(), want.len());
    for (h, w) in out.report.history.iter().zip(&want) {
        assert!((h.loss - w).abs() < 1e-10, "epoch {}: {} vs {w}", h.epoch, h.loss);
        assert!(h.mi_loss.is_none());
    }
    assert_eq!(out.report.edges_final, out.report.candidate_edges);
}

#[test]
fn reports_are_reproducible_and_bounded() {
    let g = graph(4);
    for mode in [PruneMode::Ingsl, PruneMode::RandomPrune] {
        let cfg = TrainConfig {
            hidden: 8,
            k: 6,
            epochs: 20,
            mode,
            seed: 2,
            ..TrainConfig::default()
        };
        let a = train_ingsl(&g, &cfg).unwrap().report;
        let b = train_ingsl(&g, &cfg).unwrap().report;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!((0.0..=1.0).contains(&a.test_acc));
        assert!(a.edges_final <= a.candidate_edges);
        assert!(a.best_epoch < a.epochs_run);
    }
}

#[test]
fn single_surviving_edge_run_completes() {
    let g = graph(5);
    let m = 36 * 4;
    let cfg = TrainConfig {
        hidden: 4,
        k: 4,
        r: 1.0 - 1.0 / m as f64,
        epochs: 5,
        mode: PruneMode::RandomPrune,
        ..TrainConfig::default()
    };
    let rep = train_ingsl(&g, &cfg).unwrap().report;
    assert_eq!(rep.candidate_edges, m);
    assert_eq!(rep.edges_final, 1);
}

#[test]
fn early_stopping_respects_patience() {
    let g = graph(6);
    let cfg = TrainConfig {
        hidden: 4,
        k: 4,
        epochs: 200,
        patience: 3,
        mode: PruneMode::SimilarityOnly,
        ..TrainConfig::default()
    };
    let rep = train_ingsl(&g, &cfg).unwrap().report;
    assert!(rep.epochs_run <= rep.best_epoch + 4);
    let best = rep.history.iter().map(|h| h.val_acc).fold(0.0, f64::max);
    assert_eq!(rep.val_acc, best);
    assert_eq!(rep.history.iter().position(|h| h.val_acc == best), Some(rep.best_epoch));
}
