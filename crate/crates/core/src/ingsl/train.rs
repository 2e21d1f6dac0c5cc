//! Joint training of the structure encoder, the diversity scorer and the
//! task GCN.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::mi::{mi_loss, sample_batch, total_loss};
use super::prune::{keep_entries, prune, prune_scores, select_threshold, survivor_count, Pruned};
use super::scorer::{diversity_scores, DiversityScorer, ScorerKind};
use crate::error::{Error, Result};
use crate::gnn::{accuracy, flops_estimate, gcn_forward, task_loss, GcnParams, TrainState};
use crate::graph::{normalize_adjacency, Graph, Split};
use crate::gsl::{
    additional_pairs, build_candidates, encode_structure, fuse_with_original, gsl_objective,
    regularizer, Regularizer, Similarity,
};
use crate::rng;
use crate::scalar::Scalar;
use crate::sparse::SparseAdjacency;
use crate::tensor::{SparseVar, Tape, Tensor, Var};

/// How the candidate graph is reduced before the task GCN sees it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Diversity-scored thresholding plus the MI objective.
    #[default]
    Ingsl,
    /// Keep the top `(1 − r)` fraction of raw similarities, sigmoid-weighted.
    SimilarityOnly,
    /// Keep a uniformly random `(1 − r)` fraction, sigmoid-weighted.
    RandomPrune,
    /// Use the raw candidate graph (plain embedding-based GSL).
    NoReduction,
}

impl PruneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ingsl => "ingsl",
            Self::SimilarityOnly => "similarity_only",
            Self::RandomPrune => "random_prune",
            Self::NoReduction => "no_reduction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub k: usize,
    pub r: f64,
    pub beta: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub scorer: ScorerKind,
    pub freeze_scorer: bool,
    pub similarity: Similarity,
    pub residual_weight: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Negative-batch size; `None` means `min(n, 256)`.
    pub batch_size: Option<usize>,
    pub mode: PruneMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            k: 30,
            r: 0.5,
            beta: 0.5,
            lambda: 0.0,
            regularizer: Regularizer::None,
            scorer: ScorerKind::Bilinear,
            freeze_scorer: false,
            similarity: Similarity::InnerProduct,
            residual_weight: 1.0,
            lr: 1e-2,
            epochs: 300,
            patience: 50,
            batch_size: None,
            mode: PruneMode::Ingsl,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.k == 0 {
            return bad("candidate budget k must be positive".into());
        }
        if !(0.0..1.0).contains(&self.r) {
            return bad(format!("reduction level {} outside [0, 1)", self.r));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta = {} outside [0, 1]", self.beta));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda = {} must be non-negative", self.lambda));
        }
        if !(self.residual_weight >= 0.0) || !self.residual_weight.is_finite() {
            return bad(format!("residual weight {} must be non-negative", self.residual_weight));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == Some(0) {
            return bad("negative batch must hold at least one node".into());
        }
        Ok(())
    }

    fn uses_scorer(&self) -> bool {
        self.mode == PruneMode::Ingsl
    }

    fn uses_mi(&self) -> bool {
        self.mode == PruneMode::Ingsl && self.beta > 0.0
    }
}

/// Trained parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel<T> {
    /// Structure encoder producing the embeddings `E`.
    pub structure: GcnParams<T>,
    /// Task GCN with its classifier, shared by both MI branches.
    pub task: GcnParams<T>,
    pub scorer: Option<DiversityScorer<T>>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn init(g: &Graph<T>, config: &TrainConfig) -> Result<Self> {
        let dims = [g.feature_dim(), config.hidden, config.hidden];
        let structure = GcnParams::init(&dims, None, &mut rng::stream(config.seed, 0))?;
        let task = GcnParams::init(&dims, Some(g.classes()), &mut rng::stream(config.seed, 1))?;
        let scorer = config
            .uses_scorer()
            .then(|| DiversityScorer::init(config.scorer, config.hidden, &mut rng::stream(config.seed, 2)));
        Ok(Self {
            structure,
            task,
            scorer,
        })
    }

    fn trainable(&self, freeze_scorer: bool) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = self.structure.tensors().into_iter().cloned().collect();
        out.extend(self.task.tensors().into_iter().cloned());
        if let (Some(s), false) = (&self.scorer, freeze_scorer) {
            out.extend(s.tensors().into_iter().cloned());
        }
        out
    }

    fn load(&mut self, flat: &[Tensor<T>], freeze_scorer: bool) {
        let mut it = flat.iter();
        let mut slots = self.structure.tensors_mut();
        slots.extend(self.task.tensors_mut());
        if let (Some(s), false) = (&mut self.scorer, freeze_scorer) {
            slots.extend(s.tensors_mut());
        }
        for slot in slots {
            *slot = it.next().expect("parameter count").clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub task_loss: f64,
    pub mi_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: f64,
    pub kept_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: PruneMode,
    pub r: f64,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Stored entries of the candidate graph `S`.
    pub candidate_edges: usize,
    /// Stored entries of the learned structure `S̃` at the best epoch.
    pub edges_final: usize,
    /// Node pairs of `S̃` that are not edges of the input graph.
    pub additional_pairs: usize,
    /// `additional_pairs / |E|`; absent for an edgeless input.
    pub edge_multiple: Option<f64>,
    /// Task-GCN multiply-adds on the fused adjacency at the best epoch.
    pub flops: u64,
    pub history: Vec<EpochRecord>,
}

/// Output of [`train_ingsl`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters as they were at the best-validation epoch.
    pub model: TrainedModel<T>,
    pub structure: SparseAdjacency<T>,
    pub report: TrainReport,
}

/// One forward pass of the whole pipeline.
pub struct Forward<'t, T> {
    pub loss: Var<'t, T>,
    pub task_loss: Var<'t, T>,
    pub mi_loss: Option<Var<'t, T>>,
    pub logits: Var<'t, T>,
    pub candidate_edges: usize,
    pub learned: SparseVar<'t, T>,
    pub fused: SparseVar<'t, T>,
}

/// Per-epoch randomness: the negative batch and the random-prune subset.
pub struct EpochDraws {
    pub batch: Option<Vec<usize>>,
    pub random_keep: Option<Vec<usize>>,
}

/// Runs the pipeline once on `tape` with the parameters lifted as leaves.
/// Returns the forward results plus the lifted trainable leaves in the
/// order used by the optimiser.
pub fn forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    g: &Graph<T>,
    a_norm: &SparseAdjacency<T>,
    model: &TrainedModel<T>,
    config: &TrainConfig,
    draws: &mut dyn FnMut(usize) -> Result<EpochDraws>,
) -> Result<(Forward<'t, T>, Vec<Var<'t, T>>)> {
    let x = tape.constant(g.features().clone());
    let a = SparseVar::constant(tape, a_norm);
    let s_vars = model.structure.lift(tape);
    let t_vars = model.task.lift(tape);
    let scorer_vars = model.scorer.as_ref().map(|s| s.lift(tape));

    let e = encode_structure(&a, x, &s_vars)?;
    let cand = build_candidates(e, config.k, config.similarity)?;
    let m = cand.edge_count();
    let d = draws(m)?;

    let learned = match config.mode {
        PruneMode::NoReduction => cand.sparse.clone(),
        PruneMode::SimilarityOnly => {
            let x = cand.sparse.values;
            let thr = x.with_value(|v| select_threshold(v.data(), config.r))?;
            prune_scores(&cand.sparse.pattern, x, &thr)?.sparse
        }
        PruneMode::RandomPrune => {
            let kept = d.random_keep.clone().ok_or(Error::State("random subset not drawn"))?;
            keep_entries(&cand.sparse.pattern, cand.sparse.values, kept)?.sparse
        }
        PruneMode::Ingsl => {
            let sv = scorer_vars.as_ref().ok_or(Error::State("diversity scorer missing"))?;
            let w = diversity_scores(e, &cand.sources(), &cand.targets(), sv)?;
            let x = cand.sparse.values.mul(w)?;
            let thr = x.with_value(|v| select_threshold(v.data(), config.r))?;
            let Pruned { sparse, .. } = prune(&cand.sparse, w, &thr)?;
            sparse
        }
    };

    let rw = T::of(config.residual_weight);
    let fused = fuse_with_original(g, &learned, rw)?;
    let out = gcn_forward(&fused, x, &t_vars)?;
    let logits = out.logits.ok_or(Error::State("task GCN has no classifier"))?;
    let train = g.split_nodes(Split::Train);
    let task = task_loss(logits, g.labels(), &train)?;
    let reg = regularizer(config.regularizer, &fused, g.features())?;
    let l_gsl = gsl_objective(task, reg, T::of(config.lambda))?;

    let (loss, mi) = match (&d.batch, config.uses_mi()) {
        (Some(batch), true) => {
            let full = fuse_with_original(g, &cand.sparse, rw)?;
            let z = gcn_forward(&full, x, &t_vars)?
                .logits
                .ok_or(Error::State("task GCN has no classifier"))?;
            let l_mi = mi_loss(logits, z, batch)?;
            (total_loss(l_gsl, l_mi, T::of(config.beta))?, Some(l_mi))
        }
        _ => (l_gsl, None),
    };

    let mut leaves = s_vars.vars();
    leaves.extend(t_vars.vars());
    if let (Some(sv), false) = (&scorer_vars, config.freeze_scorer) {
        leaves.extend(sv.vars());
    }
    Ok((
        Forward {
            loss,
            task_loss: task,
            mi_loss: mi,
            logits,
            candidate_edges: m,
            learned,
            fused,
        },
        leaves,
    ))
}

struct Best<T> {
    epoch: usize,
    val_acc: f64,
    test_acc: f64,
    model: TrainedModel<T>,
    structure: SparseAdjacency<T>,
    fused_nnz: usize,
}

/// Trains every parameter set jointly with Adam, tracking the epoch with
/// the best validation accuracy (first one wins ties) and stopping after
/// `patience` epochs without improvement.
pub fn train_ingsl<T: Scalar>(g: &Graph<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let n = g.n();
    if config.k >= n {
        return Err(Error::config(format!(
            "candidate budget k = {} must be below n = {n}",
            config.k
        )));
    }
    let a_norm = normalize_adjacency(g)?;
    let mut model = TrainedModel::init(g, config)?;
    let mut state = TrainState::new(model.trainable(config.freeze_scorer));
    let lr = T::of(config.lr);
    let batch_size = config.batch_size.unwrap_or(n.min(256));
    if batch_size > n {
        return Err(Error::config(format!("negative batch of {batch_size} exceeds {n} nodes")));
    }
    let mut batch_rng = rng::stream(config.seed, 3);
    let mut prune_rng = rng::stream(config.seed, 4);
    let val = g.split_nodes(Split::Val);
    let test = g.split_nodes(Split::Test);
    let train = g.split_nodes(Split::Train);
    let dims = [g.feature_dim(), config.hidden, config.hidden, g.classes()];

    let mut history = Vec::new();
    let mut best: Option<Best<T>> = None;
    let mut candidate_edges = 0;

    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let mut draws = |m: usize| -> Result<EpochDraws> {
            let batch = if config.uses_mi() {
                Some(sample_batch(n, batch_size, &mut batch_rng)?)
            } else {
                None
            };
            let random_keep = if config.mode == PruneMode::RandomPrune {
                let mut keep = index::sample(&mut prune_rng, m, survivor_count(m, config.r)).into_vec();
                keep.sort_unstable();
                Some(keep)
            } else {
                None
            };
            Ok(EpochDraws { batch, random_keep })
        };
        let (fwd, leaves) = forward(&tape, g, &a_norm, &model, config, &mut draws)?;
        let loss = fwd.loss.item().to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        candidate_edges = fwd.candidate_edges;
        let logits = fwd.logits.value();
        let val_acc = accuracy(&logits, g.labels(), &val)?;
        history.push(EpochRecord {
            epoch,
            loss,
            task_loss: fwd.task_loss.item().to_f64_lossy(),
            mi_loss: fwd.mi_loss.map(|v| v.item().to_f64_lossy()),
            train_acc: accuracy(&logits, g.labels(), &train)?,
            val_acc,
            kept_edges: fwd.learned.pattern.nnz(),
        });
        if best.as_ref().is_none_or(|b| val_acc > b.val_acc) {
            best = Some(Best {
                epoch,
                val_acc,
                test_acc: accuracy(&logits, g.labels(), &test)?,
                model: model.clone(),
                structure: fwd.learned.detach(),
                fused_nnz: fwd.fused.pattern.nnz(),
            });
        }

        tape.backward(fwd.loss)?;
        let grads: Vec<Tensor<T>> = leaves
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect();
        state.adam_step(&grads, lr).map_err(|e| match e {
            Error::Numeric(_) => Error::Diverged { epoch },
            other => other,
        })?;
        model.load(&state.params, config.freeze_scorer);

        let best_epoch = best.as_ref().map_or(0, |b| b.epoch);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let Best {
        epoch: best_epoch,
        val_acc,
        test_acc,
        model: best_model,
        structure,
        fused_nnz,
    } = best.expect("at least one epoch ran");
    let extra = additional_pairs(g, structure.pattern());
    let edge_multiple = (g.edge_count() > 0).then(|| extra as f64 / g.edge_count() as f64);
    let report = TrainReport {
        mode: config.mode,
        r: config.r,
        seed: config.seed,
        epochs_run: history.len(),
        best_epoch,
        val_acc,
        test_acc,
        candidate_edges,
        edges_final: structure.nnz(),
        additional_pairs: extra,
        edge_multiple,
        flops: flops_estimate(fused_nnz as u64, &dims[..3], n as u64)
            + 2 * n as u64 * (config.hidden * g.classes()) as u64,
        history,
    };
    Ok(TrainOutcome {
        model: best_model,
        structure,
        report,
    })
}
