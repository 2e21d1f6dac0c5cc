//! Registered finite-difference battery covering every differentiable
//! operation, plus a deliberately broken primitive as a negative control.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gnn::{gcn_forward, task_loss, GcnVars};
use crate::graph::{normalize_weighted, Graph, Split};
use crate::gsl::{build_candidates, fuse_with_original, gsl_objective, regularizer, Regularizer, Similarity};
use crate::ingsl::{diversity_scores, mi_loss, prune, select_threshold, total_loss, ScorerVars};
use crate::rng::{self, Rng};
use crate::sparse::CsrPattern;
use crate::tensor::{gradient_check, SparseVar, Tape, Tensor, Var};

/// Pass mark on the worst relative error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const GRADIENT_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub op: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Set when the case could not be evaluated at all.
    pub error: Option<String>,
}

type Case = fn(&mut Rng) -> Result<crate::tensor::GradCheck>;

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..len).map(|_| rng.random_range(lo..hi)).collect())
        .expect("shape and data agree")
}

/// Values in `±[0.1, 1]`, away from the ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape and data agree")
}

/// `Σ out ⊙ r`: reduces any output to a scalar with non-trivial weights.
fn weighted<'t>(out: Var<'t, f64>, r: &Tensor<f64>) -> Result<Var<'t, f64>> {
    let r = out.tape().constant(r.clone().reshape(out.shape())?);
    Ok(out.mul(r)?.sum())
}

fn check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<crate::tensor::GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    gradient_check(f, inputs, GRADIENT_STEP)
}

fn small_graph(rng: &mut Rng) -> Graph<f64> {
    let edges = vec![(0, 1), (0, 3), (1, 2), (2, 5), (3, 4), (4, 5), (1, 4)];
    let features = uniform(rng, &[6, 3], -1.0, 1.0);
    let labels = vec![0, 1, 2, 0, 1, 2];
    let splits = vec![
        Split::Train,
        Split::Train,
        Split::Val,
        Split::Test,
        Split::Train,
        Split::Test,
    ];
    Graph::new(6, edges, features, labels, 3, splits).expect("valid fixture")
}

fn gcn_vars<'t>(p: &[Var<'t, f64>]) -> GcnVars<'t, f64> {
    GcnVars {
        layers: p[..p.len() - 1].to_vec(),
        classifier: Some(p[p.len() - 1]),
    }
}

fn case_matmul(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[4, 2], -1.0, 1.0);
    check(
        move |_, v| weighted(v[0].matmul(v[1])?, &r),
        &[uniform(rng, &[4, 3], -1.0, 1.0), uniform(rng, &[3, 2], -1.0, 1.0)],
    )
}

fn case_transpose(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[3, 4], -1.0, 1.0);
    check(move |_, v| weighted(v[0].transpose()?, &r), &[uniform(rng, &[4, 3], -1.0, 1.0)])
}

fn case_elementwise(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[3, 3], -1.0, 1.0);
    check(
        move |_, v| {
            let y = v[0].add(v[1])?.mul(v[0].sub(v[1])?)?.add_scalar(0.3).scale(-1.7);
            weighted(y, &r)
        },
        &[uniform(rng, &[3, 3], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
    )
}

fn case_relu(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[12], -1.0, 1.0);
    check(move |_, v| weighted(v[0].relu(), &r), &[away_from_zero(rng, &[12])])
}

fn case_sigmoid(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[10], -1.0, 1.0);
    check(move |_, v| weighted(v[0].sigmoid(), &r), &[uniform(rng, &[10], -4.0, 4.0)])
}

fn case_exp_log(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[8], -1.0, 1.0);
    check(
        move |_, v| weighted(v[0].exp().add(v[1].log()?)?, &r),
        &[uniform(rng, &[8], -2.0, 2.0), uniform(rng, &[8], 0.5, 2.0)],
    )
}

fn case_powf(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[8], -1.0, 1.0);
    check(move |_, v| weighted(v[0].powf(-0.5)?, &r), &[uniform(rng, &[8], 0.5, 3.0)])
}

fn case_row_normalize(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[5, 3], -1.0, 1.0);
    check(
        move |_, v| weighted(v[0].row_l2_normalize()?.add(v[0].row_l2_normalize_clamped(1e-8)?)?, &r),
        &[uniform(rng, &[5, 3], -1.0, 1.0)],
    )
}

fn case_reductions(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[4], -1.0, 1.0);
    check(
        move |_, v| weighted(v[0].row_sum()?, &r)?.add(v[0].mean()),
        &[uniform(rng, &[4, 3], -1.0, 1.0)],
    )
}

fn case_indexing(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[4, 2], -1.0, 1.0);
    let q = uniform(rng, &[5], -1.0, 1.0);
    check(
        move |_, v| {
            let rows = weighted(v[0].gather_rows(&[2, 0, 2, 1])?, &r)?;
            let scattered = v[1].take(&[3, 0, 0, 2, 1])?.scatter_add(&[4, 4, 1, 0, 2], 5)?;
            rows.add(weighted(scattered, &q)?)
        },
        &[uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)],
    )
}

fn case_edge_dot(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[5], -1.0, 1.0);
    check(
        move |_, v| weighted(v[0].edge_dot(v[1], &[0, 1, 3, 3, 2], &[2, 2, 0, 1, 1])?, &r),
        &[uniform(rng, &[4, 3], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
    )
}

fn case_concat_reshape(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[3, 5], -1.0, 1.0);
    let q = uniform(rng, &[12], -1.0, 1.0);
    check(
        move |_, v| {
            let wide = weighted(v[0].concat_cols(v[1])?, &r)?;
            let flat = v[0].reshape(&[6])?.concat(v[1].reshape(&[9])?.take(&[0, 1, 2, 3, 4, 5])?)?;
            wide.add(weighted(flat, &q)?)
        },
        &[uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
    )
}

fn case_cross_entropy(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    check(
        |_, v| v[0].cross_entropy(&[0, 2, 1, 1, 0], &[0, 1, 3, 4]),
        &[uniform(rng, &[5, 3], -2.0, 2.0)],
    )
}

fn case_spmm(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let (pattern, _) = CsrPattern::square(5, &[(0, 1), (0, 4), (1, 1), (2, 0), (3, 2), (3, 4), (4, 3)])?;
    let pattern = Arc::new(pattern);
    let r = uniform(rng, &[5, 2], -1.0, 1.0);
    check(
        move |_, v| weighted(SparseVar::new(pattern.clone(), v[0])?.matmul(v[1])?, &r),
        &[uniform(rng, &[7], -1.0, 1.0), uniform(rng, &[5, 2], -1.0, 1.0)],
    )
}

fn case_normalize_weighted(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let entries = vec![(0, 1), (1, 0), (1, 2), (2, 1), (0, 3), (3, 0), (2, 2)];
    let r = uniform(rng, &[4, 2], -1.0, 1.0);
    let x = uniform(rng, &[4, 2], -1.0, 1.0);
    check(
        move |tape, v| {
            let a = normalize_weighted(4, &entries, v[0])?;
            weighted(a.matmul(tape.constant(x.clone()))?, &r)
        },
        &[uniform(rng, &[7], 0.2, 2.0)],
    )
}

fn case_gcn_forward(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let g = small_graph(rng);
    let entries = g.directed_entries();
    let labels = g.labels().to_vec();
    let train = g.split_nodes(Split::Train);
    let m = entries.len();
    check(
        move |_, v| {
            let adj = normalize_weighted(6, &entries, v[0])?;
            let out = gcn_forward(&adj, v[1], &gcn_vars(&v[2..]))?;
            task_loss(out.logits.expect("classifier"), &labels, &train)
        },
        &[
            uniform(rng, &[m], 0.3, 1.5),
            uniform(rng, &[6, 3], -1.0, 1.0),
            uniform(rng, &[3, 4], -1.0, 1.0),
            uniform(rng, &[4, 4], -1.0, 1.0),
            uniform(rng, &[4, 3], -1.0, 1.0),
        ],
    )
}

fn case_candidates(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[8 * 3], -1.0, 1.0);
    let q = uniform(rng, &[8 * 3], -1.0, 1.0);
    check(
        move |_, v| {
            let inner = build_candidates(v[0], 3, Similarity::InnerProduct)?;
            let cos = build_candidates(v[0], 3, Similarity::Cosine)?;
            weighted(inner.sparse.values, &r)?.add(weighted(cos.sparse.values, &q)?)
        },
        &[uniform(rng, &[8, 3], -1.0, 1.0)],
    )
}

fn case_fusion(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let g = small_graph(rng);
    let (pattern, _) = CsrPattern::square(6, &[(0, 2), (2, 0), (5, 1), (3, 5), (4, 0)])?;
    let pattern = Arc::new(pattern);
    let r = uniform(rng, &[6, 3], -1.0, 1.0);
    let x = g.features().clone();
    check(
        move |tape, v| {
            let s = SparseVar::new(pattern.clone(), v[0])?;
            let fused = fuse_with_original(&g, &s, 0.7)?;
            weighted(fused.matmul(tape.constant(x.clone()))?, &r)
        },
        &[uniform(rng, &[5], 0.1, 2.0)],
    )
}

fn case_regularizer(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let (pattern, _) = CsrPattern::square(4, &[(0, 1), (1, 3), (2, 0), (3, 2)])?;
    let pattern = Arc::new(pattern);
    let features = uniform(rng, &[4, 2], -1.0, 1.0);
    check(
        move |_, v| {
            let adj = SparseVar::new(pattern.clone(), v[0])?;
            let reg = regularizer(Regularizer::FeatureSmoothness, &adj, &features)?;
            gsl_objective(v[1].sum(), reg, 0.6)
        },
        &[uniform(rng, &[4], 0.1, 2.0), uniform(rng, &[2], -1.0, 1.0)],
    )
}

fn case_bilinear_scorer(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[6], -1.0, 1.0);
    check(
        move |_, v| {
            let w = diversity_scores(v[0], &[0, 1, 2, 5, 4, 3], &[1, 2, 0, 3, 5, 4], &ScorerVars::Bilinear(v[1]))?;
            weighted(w, &r)
        },
        &[uniform(rng, &[6, 4], -1.0, 1.0), uniform(rng, &[4, 4], -1.0, 1.0)],
    )
}

fn case_mlp_scorer(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let r = uniform(rng, &[5], -1.0, 1.0);
    check(
        move |_, v| {
            let w = diversity_scores(v[0], &[0, 1, 2, 4, 3], &[1, 2, 0, 3, 4], &ScorerVars::Mlp(v[1], v[2]))?;
            weighted(w, &r)
        },
        &[
            uniform(rng, &[5, 3], -1.0, 1.0),
            uniform(rng, &[6, 3], -1.0, 1.0),
            uniform(rng, &[3, 1], -1.0, 1.0),
        ],
    )
}

fn case_prune(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let coords = [(0, 1), (0, 2), (1, 3), (2, 0), (2, 3), (3, 1), (3, 4), (4, 0)];
    let (pattern, _) = CsrPattern::square(5, &coords)?;
    let pattern = Arc::new(pattern);
    let r = uniform(rng, &[8], -1.0, 1.0);
    check(
        move |_, v| {
            let s = SparseVar::new(pattern.clone(), v[0])?;
            let x = v[0].mul(v[1])?;
            let thr = x.with_value(|t| select_threshold(t.data(), 0.4))?;
            let p = prune(&s, v[1], &thr)?;
            let rk = Tensor::vector(p.kept.iter().map(|&k| r.data()[k]).collect());
            weighted(p.sparse.values, &rk)
        },
        &[uniform(rng, &[8], 0.1, 2.0), uniform(rng, &[8], -1.5, 1.5)],
    )
}

fn case_mi_loss(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    check(
        |_, v| mi_loss(v[0], v[1], &[0, 2, 3, 5]),
        &[uniform(rng, &[6, 3], -1.0, 1.0), uniform(rng, &[6, 3], -1.0, 1.0)],
    )
}

/// The whole pruned pipeline differentiated with respect to `W₁` and the
/// embeddings, holding the task GCN fixed.
fn case_total_loss(rng: &mut Rng) -> Result<crate::tensor::GradCheck> {
    let g = small_graph(rng);
    let task = [
        uniform(rng, &[3, 4], -1.0, 1.0),
        uniform(rng, &[4, 4], -1.0, 1.0),
        uniform(rng, &[4, 3], -1.0, 1.0),
    ];
    check(
        move |tape, v| {
            let e = v[0];
            let cand = build_candidates(e, 2, Similarity::InnerProduct)?;
            let w = diversity_scores(e, &cand.sources(), &cand.targets(), &ScorerVars::Bilinear(v[1]))?;
            let x = cand.sparse.values.mul(w)?;
            let thr = x.with_value(|t| select_threshold(t.data(), 0.3))?;
            let pruned = prune(&cand.sparse, w, &thr)?;
            let t_vars = gcn_vars(&task.iter().map(|t| tape.constant(t.clone())).collect::<Vec<_>>());
            let xf = tape.constant(g.features().clone());
            let z_tilde = gcn_forward(&fuse_with_original(&g, &pruned.sparse, 1.0)?, xf, &t_vars)?
                .logits
                .expect("classifier");
            let z = gcn_forward(&fuse_with_original(&g, &cand.sparse, 1.0)?, xf, &t_vars)?
                .logits
                .expect("classifier");
            let l_task = task_loss(z_tilde, g.labels(), &g.split_nodes(Split::Train))?;
            let l_gsl = gsl_objective(l_task, None, 0.0)?;
            total_loss(l_gsl, mi_loss(z_tilde, z, &[1, 3, 4])?, 0.5)
        },
        &[uniform(rng, &[6, 4], 0.0, 1.0), uniform(rng, &[4, 4], -1.0, 1.0)],
    )
}

const CASES: &[(&str, Case)] = &[
    ("matmul", case_matmul),
    ("transpose", case_transpose),
    ("add_sub_mul_scale", case_elementwise),
    ("relu", case_relu),
    ("sigmoid", case_sigmoid),
    ("exp_log", case_exp_log),
    ("powf", case_powf),
    ("row_l2_normalize", case_row_normalize),
    ("sum_mean_row_sum", case_reductions),
    ("gather_take_scatter", case_indexing),
    ("edge_dot", case_edge_dot),
    ("concat_reshape", case_concat_reshape),
    ("cross_entropy", case_cross_entropy),
    ("sparse_matmul", case_spmm),
    ("normalize_adjacency_edge_values", case_normalize_weighted),
    ("gcn_forward", case_gcn_forward),
    ("topk_candidates", case_candidates),
    ("fuse_with_original", case_fusion),
    ("smoothness_regularizer", case_regularizer),
    ("bilinear_scorer", case_bilinear_scorer),
    ("mlp_scorer", case_mlp_scorer),
    ("prune", case_prune),
    ("mi_loss", case_mi_loss),
    ("total_loss_wrt_w1", case_total_loss),
];

/// Names of the registered operations, in report order.
pub fn registered_ops() -> Vec<&'static str> {
    CASES.iter().map(|(name, _)| *name).collect()
}

fn row(op: &str, result: Result<crate::tensor::GradCheck>) -> GradientRow {
    match result {
        Ok(c) => GradientRow {
            op: op.into(),
            coordinates: c.coordinates,
            max_rel_error: c.max_rel_error,
            passed: c.max_rel_error < GRADIENT_TOLERANCE,
            error: None,
        },
        Err(e) => GradientRow {
            op: op.into(),
            coordinates: 0,
            max_rel_error: f64::INFINITY,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every registered case; inputs are drawn from `(seed, case index)`.
pub fn gradient_battery(seed: u64) -> Vec<GradientRow> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, (name, case))| row(name, case(&mut rng::stream(seed, i as u64))))
        .collect()
}

/// A primitive `sin` registered with a wrong derivative (`1.5·cos`). The
/// returned row must come out failed.
pub fn negative_control(seed: u64) -> GradientRow {
    let mut rng = rng::stream(seed, u64::MAX);
    let x = uniform(&mut rng, &[6], -1.0, 1.0);
    row(
        "negative_control_sin",
        check(|_, v| Ok(v[0].map_custom(f64::sin, |x, _| 1.5 * x.cos()).sum()), &[x]),
    )
}
