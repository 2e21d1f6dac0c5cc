//! GCN backbone, classification loss and metrics, Adam, and cost estimates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Rng as SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{SparseVar, Tape, Tensor, Var};

/// Weights of a stack of GCN layers, optionally followed by a linear
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams<T> {
    pub layers: Vec<Tensor<T>>,
    pub classifier: Option<Tensor<T>>,
}

/// Glorot-uniform `[fan_in × fan_out]` matrix.
pub fn glorot<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(vec![fan_in, fan_out], data).expect("glorot shape")
}

impl<T: Scalar> GcnParams<T> {
    /// `dims = [d_in, d_1, …, d_L]`; a classifier `[d_L × classes]` is added
    /// when `classes` is given.
    pub fn init(dims: &[usize], classes: Option<usize>, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("a GCN needs at least one layer"));
        }
        let layers = dims.windows(2).map(|w| glorot(w[0], w[1], rng)).collect();
        let classifier = classes.map(|c| glorot(dims[dims.len() - 1], c, rng));
        let p = Self { layers, classifier };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("a GCN needs at least one layer"));
        }
        for w in self.layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Shape {
                    op: "gcn_params",
                    left: w[0].shape().to_vec(),
                    right: w[1].shape().to_vec(),
                });
            }
        }
        if let Some(c) = &self.classifier {
            let last = self.layers.last().expect("non-empty");
            if last.cols() != c.rows() {
                return Err(Error::Shape {
                    op: "gcn_params",
                    left: last.shape().to_vec(),
                    right: c.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").cols()
    }

    /// Flat list of matrices, layers first then classifier.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().chain(self.classifier.as_ref()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().chain(self.classifier.as_mut()).collect()
    }

    /// Lifts every matrix onto `tape` as a trainable leaf.
    pub fn lift<'t>(&self, tape: &'t Tape<T>) -> GcnVars<'t, T> {
        GcnVars {
            layers: self.layers.iter().map(|w| tape.leaf(w.clone())).collect(),
            classifier: self.classifier.as_ref().map(|w| tape.leaf(w.clone())),
        }
    }
}

/// [`GcnParams`] lifted onto a tape.
#[derive(Clone, Debug)]
pub struct GcnVars<'t, T> {
    pub layers: Vec<Var<'t, T>>,
    pub classifier: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> GcnVars<'t, T> {
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        self.layers.iter().chain(self.classifier.as_ref()).copied().collect()
    }

    /// Gradients in the order of [`GcnParams::tensors`]; zero where the
    /// loss does not depend on a matrix.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars()
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

/// Output of [`gcn_forward`].
pub struct GcnOutput<'t, T> {
    pub representations: Var<'t, T>,
    pub logits: Option<Var<'t, T>>,
}

/// `Z⁽ˡ⁾ = ReLU(Â Z⁽ˡ⁻¹⁾ W⁽ˡ⁾)` for every layer, then `logits = Z W_c`
/// with no further activation.
pub fn gcn_forward<'t, T: Scalar>(
    adj: &SparseVar<'t, T>,
    x: Var<'t, T>,
    params: &GcnVars<'t, T>,
) -> Result<GcnOutput<'t, T>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] != adj.n() {
        return Err(Error::Shape {
            op: "gcn_forward",
            left: vec![adj.n(), adj.pattern.n_cols()],
            right: shape,
        });
    }
    let mut z = x;
    for &w in &params.layers {
        z = adj.matmul(z)?.matmul(w)?.relu();
    }
    let logits = params.classifier.map(|wc| z.matmul(wc)).transpose()?;
    Ok(GcnOutput {
        representations: z,
        logits,
    })
}

/// Mean cross-entropy over the nodes in `mask`.
pub fn task_loss<'t, T: Scalar>(
    logits: Var<'t, T>,
    labels: &[usize],
    mask: &[usize],
) -> Result<Var<'t, T>> {
    if mask.is_empty() {
        return Err(Error::config("task loss over an empty mask"));
    }
    logits.cross_entropy(labels, mask)
}

/// Fraction of `mask` whose arg-max logit equals the label; ties go to the
/// smallest class index.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::config("accuracy over an empty mask"));
    }
    let correct = mask
        .iter()
        .filter(|&&i| argmax(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Parameters plus Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: Vec<Tensor<T>>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: Vec<Tensor<T>>) -> Self {
        let zeros = |p: &Vec<Tensor<T>>| p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros(&params),
            second: zeros(&params),
            params,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
    pub fn adam_step(&mut self, grads: &[Tensor<T>], lr: T) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: vec![self.params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| x.is_nan()) {
                return Err(Error::Numeric("NaN gradient".into()));
            }
        }
        self.step += 1;
        let (b1, b2, eps) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPS));
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for k in 0..self.params.len() {
            let g = grads[k].data();
            let m = self.first[k].data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
            }
            let v = self.second[k].data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            }
            let (m, v) = (self.first[k].data(), self.second[k].data());
            for (i, p) in self.params[k].data_mut().iter_mut().enumerate() {
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiply-add count of an `L`-layer GCN pass:
/// `Σ_l 2·m·d_l + Σ_l 2·n·d_{l-1}·d_l`, with `layer_dims = [d_0, …, d_L]`.
pub fn flops_estimate(edge_count: u64, layer_dims: &[usize], n: u64) -> u64 {
    layer_dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0] as u64, w[1] as u64);
            2 * edge_count * d_out + 2 * n * d_in * d_out
        })
        .sum()
}

/// Largest singular value by power iteration on `WᵀW`: at least `min_iters`
/// steps, then until the Rayleigh quotient stops moving (relative 1e-15).
pub fn spectral_norm<T: Scalar>(w: &Tensor<T>, min_iters: usize) -> f64 {
    let (r, c) = (w.rows(), w.cols());
    if w.data().iter().all(|&x| x == T::zero()) {
        return 0.0;
    }
    let a: Vec<f64> = w.data().iter().map(|x| x.to_f64_lossy()).collect();
    let mut gram = vec![0.0; c * c];
    for i in 0..r {
        for p in 0..c {
            let aip = a[i * c + p];
            for q in 0..c {
                gram[p * c + q] += aip * a[i * c + q];
            }
        }
    }
    // fixed irregular start so the result is deterministic
    let mut v: Vec<f64> = (0..c).map(|k| 1.0 + 0.37 * ((k as f64) * 1.3 + 0.5).sin()).collect();
    let mut lambda = 0.0f64;
    for it in 0..10_000 {
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let gv: Vec<f64> = (0..c)
            .map(|p| (0..c).map(|q| gram[p * c + q] * v[q]).sum())
            .collect();
        let next: f64 = v.iter().zip(&gv).map(|(a, b)| a * b).sum();
        let settled = (next - lambda).abs() <= 1e-15 * next.abs();
        lambda = next;
        v = gv;
        if it + 1 >= min_iters && settled {
            break;
        }
        if v.iter().all(|&x| x == 0.0) {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sparse::SparseAdjacency;

    #[test]
    fn identity_aggregation_one_identity_layer_is_relu() {
        let tape = Tape::<f64>::new();
        let adj = SparseVar::constant(&tape, &SparseAdjacency::identity(3));
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![-0.5, 0.5], vec![0.0, 3.0]]).unwrap();
        let params = GcnParams {
            layers: vec![Tensor::eye(2)],
            classifier: None,
        };
        let vars = params.lift(&tape);
        let out = gcn_forward(&adj, tape.constant(x.clone()), &vars).unwrap();
        assert_eq!(out.representations.value(), x.map(|v: f64| v.max(0.0)));
        assert!(out.logits.is_none());
    }

    #[test]
    fn zero_features_give_zero_outputs() {
        let tape = Tape::<f64>::new();
        let mut r = rng::seeded(1);
        let params = GcnParams::<f64>::init(&[3, 4, 4], Some(2), &mut r).unwrap();
        let adj = SparseVar::constant(&tape, &SparseAdjacency::identity(5));
        let out = gcn_forward(&adj, tape.constant(Tensor::zeros(&[5, 3])), &params.lift(&tape)).unwrap();
        assert!(out.representations.value().data().iter().all(|&v| v == 0.0));
        assert!(out.logits.unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_shape_errors() {
        let tape = Tape::<f64>::new();
        let mut r = rng::seeded(1);
        let params = GcnParams::<f64>::init(&[3, 4], None, &mut r).unwrap();
        let adj = SparseVar::constant(&tape, &SparseAdjacency::identity(5));
        assert!(gcn_forward(&adj, tape.constant(Tensor::zeros(&[4, 3])), &params.lift(&tape)).is_err());
        assert!(gcn_forward(&adj, tape.constant(Tensor::zeros(&[5, 2])), &params.lift(&tape)).is_err());
        let bad = GcnParams::<f64> {
            layers: vec![Tensor::zeros(&[3, 4]), Tensor::zeros(&[5, 2])],
            classifier: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn task_loss_limits() {
        let tape = Tape::<f64>::new();
        let uniform = tape.constant(Tensor::zeros(&[2, 5]));
        let l = task_loss(uniform, &[1, 4], &[0, 1]).unwrap();
        assert!((l.item() - 5f64.ln()).abs() < 1e-15);
        let mut z = Tensor::zeros(&[1, 3]);
        z.data_mut()[2] = 1000.0;
        let l = task_loss(tape.constant(z), &[2], &[0]).unwrap();
        assert!(l.item() < 1e-6 && l.item() >= 0.0);
        assert!(task_loss(uniform, &[1, 4], &[]).is_err());
    }

    #[test]
    fn accuracy_tie_break_and_onehot() {
        let labels = [0, 2, 1, 2];
        let mut onehot = Tensor::zeros(&[4, 3]);
        for (i, &y) in labels.iter().enumerate() {
            onehot.data_mut()[i * 3 + y] = 1.0;
        }
        assert_eq!(accuracy(&onehot, &labels, &[0, 1, 2, 3]).unwrap(), 1.0);
        let constant = Tensor::full(&[4, 3], 0.3);
        assert_eq!(accuracy(&constant, &labels, &[0, 1, 2, 3]).unwrap(), 0.25);
        assert!(accuracy(&constant, &labels, &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_and_nan() {
        let p = Tensor::vector(vec![1.0, -2.0]);
        let mut s = TrainState::new(vec![p.clone()]);
        s.adam_step(&[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(s.params[0], p);
        assert_eq!(s.step(), 1);
        assert!(s.adam_step(&[Tensor::vector(vec![f64::NAN, 0.0])], 0.1).is_err());
        assert!(s.adam_step(&[Tensor::zeros(&[3])], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut s = TrainState::new(vec![Tensor::vector(vec![0.0, 0.0, 0.0])]);
        s.adam_step(&[Tensor::vector(vec![0.5, -3.0, 1e-3])], 0.01).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        for (&p, g) in s.params[0].data().iter().zip([0.5f64, -3.0, 1e-3]) {
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-15, "{p} vs {expect}");
        }
    }

    #[test]
    fn flops_estimate_properties() {
        let dims = [16, 8, 4];
        let dense = 2 * 10 * (16 * 8 + 8 * 4);
        assert_eq!(flops_estimate(0, &dims, 10), dense as u64);
        assert!(flops_estimate(50, &dims, 10) < flops_estimate(100, &dims, 10));
        assert_eq!(flops_estimate(100, &dims, 10) - flops_estimate(50, &dims, 10), 2 * 50 * 12);
    }

    #[test]
    fn spectral_norm_of_diagonal_and_zero() {
        let w = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, -5.0], vec![0.0, 0.0]]).unwrap();
        assert!((spectral_norm(&w, 100) - 5.0).abs() < 1e-8);
        assert_eq!(spectral_norm(&Tensor::<f64>::zeros(&[2, 2]), 100), 0.0);
    }
}
