use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrPattern;

use super::{matmul_into, Tensor};

/// Backward rule of a node, with operands referenced by node index.
pub(crate) enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    Scale(usize, T),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Powf(usize, T),
    /// Row normalisation dividing by `max(‖x_i‖, floor)`.
    RowNormalize(usize, T),
    Sum(usize),
    RowSum(usize),
    GatherRows(usize, Rc<[usize]>),
    Take(usize, Rc<[usize]>),
    ScatterAdd(usize, Rc<[usize]>),
    EdgeDot(usize, usize, Rc<[usize]>, Rc<[usize]>),
    SpMM(Arc<CsrPattern>, usize, usize),
    ConcatCols(usize, usize),
    Concat(usize, usize),
    Reshape(usize),
    CrossEntropy(usize, Rc<[usize]>, Rc<[usize]>),
    /// Element-wise map with a caller-supplied derivative `d(x, y)`.
    Custom(usize, Rc<dyn Fn(T, T) -> T>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
    pub(crate) grad: Option<Tensor<T>>,
}

/// Define-by-run computation record.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    backward_done: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{})", self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes replayed by the backward sweep.
    pub visited: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, false, Op::Leaf)
    }

    pub(crate) fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Clears every stored gradient so that `backward` may run again.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
        self.backward_done.set(false);
    }

    /// Propagates d`loss`/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<BackwardStats> {
        {
            let nodes = self.nodes.borrow();
            let v = &nodes[loss.id].value;
            if !v.is_scalar() {
                return Err(Error::Rank {
                    op: "backward",
                    shape: v.shape().to_vec(),
                });
            }
        }
        if self.backward_done.get() {
            return Err(Error::State("backward called twice without zero_grad"));
        }
        self.backward_done.set(true);
        self.nodes.borrow_mut()[loss.id].grad = Some(Tensor::scalar(T::one()));

        let mut visited = 0;
        for k in (0..=loss.id).rev() {
            visited += 1;
            let contributions = {
                let nodes = self.nodes.borrow();
                let node = &nodes[k];
                match (&node.grad, node.requires_grad) {
                    (Some(g), true) => backward_rule(&nodes, k, g),
                    _ => continue,
                }
            };
            let mut nodes = self.nodes.borrow_mut();
            for (target, delta) in contributions {
                if !nodes[target].requires_grad {
                    continue;
                }
                match &mut nodes[target].grad {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                            *a += *d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(BackwardStats { visited })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn item(&self) -> T {
        self.with_value(Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Accumulated gradient after [`Tape::backward`]; `None` when the node
    /// does not influence the loss or does not require a gradient.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// Copy of this value as a new constant (stop-gradient).
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }
}

fn zeros_like<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(t.shape())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

fn backward_rule<T: Scalar>(nodes: &[Node<T>], k: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let out = &nodes[k].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[k].op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, kk, m) = (av.rows(), av.cols(), bv.cols());
            let mut ga = vec![T::zero(); n * kk];
            matmul_into(g.data(), bv.transpose().data(), &mut ga, n, m, kk);
            let mut gb = vec![T::zero(); kk * m];
            matmul_into(av.transpose().data(), g.data(), &mut gb, kk, n, m);
            vec![
                (*a, Tensor::from_vec(vec![n, kk], ga).expect("shape")),
                (*b, Tensor::from_vec(vec![kk, m], gb).expect("shape")),
            ]
        }
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => vec![
            (*a, zip_map(g, val(*b), |x, y| x * y)),
            (*b, zip_map(g, val(*a), |x, y| x * y)),
        ],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Scale(a, c) => {
            let c = *c;
            vec![(*a, g.map(|x| x * c))]
        }
        Op::Relu(a) => vec![(
            *a,
            zip_map(g, val(*a), |gi, x| if x > T::zero() { gi } else { T::zero() }),
        )],
        Op::Sigmoid(a) => vec![(*a, zip_map(g, out, |gi, y| gi * y * (T::one() - y)))],
        Op::Exp(a) => vec![(*a, zip_map(g, out, |gi, y| gi * y))],
        Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gi, x| gi / x))],
        Op::Powf(a, p) => {
            let p = *p;
            vec![(*a, zip_map(g, val(*a), |gi, x| gi * p * x.powf(p - T::one())))]
        }
        Op::RowNormalize(a, floor) => {
            let x = val(*a);
            let norms = x.row_norms();
            let c = x.cols();
            let mut dx = zeros_like(x);
            for (i, &nrm) in norms.iter().enumerate() {
                let y = out.row(i);
                let gi = g.row(i);
                let row = &mut dx.data_mut()[i * c..(i + 1) * c];
                if nrm < *floor {
                    for j in 0..c {
                        row[j] = gi[j] / *floor;
                    }
                    continue;
                }
                let dot: T = y.iter().zip(gi).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    row[j] = (gi[j] - y[j] * dot) / nrm;
                }
            }
            vec![(*a, dx)]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::RowSum(a) => {
            let x = val(*a);
            let c = x.cols();
            let mut dx = zeros_like(x);
            for (i, chunk) in dx.data_mut().chunks_mut(c).enumerate() {
                chunk.fill(g.data()[i]);
            }
            vec![(*a, dx)]
        }
        Op::GatherRows(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut dx = zeros_like(x);
            for (e, &r) in idx.iter().enumerate() {
                for j in 0..c {
                    dx.data_mut()[r * c + j] += g.data()[e * c + j];
                }
            }
            vec![(*a, dx)]
        }
        Op::Take(a, idx) => {
            let mut dx = zeros_like(val(*a));
            for (e, &r) in idx.iter().enumerate() {
                dx.data_mut()[r] += g.data()[e];
            }
            vec![(*a, dx)]
        }
        Op::ScatterAdd(a, idx) => {
            let data = idx.iter().map(|&r| g.data()[r]).collect();
            vec![(*a, Tensor::vector(data))]
        }
        Op::EdgeDot(a, b, src, dst) => {
            let (av, bv) = (val(*a), val(*b));
            let c = av.cols();
            let mut da = zeros_like(av);
            let mut db = zeros_like(bv);
            for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                let ge = g.data()[e];
                for j in 0..c {
                    da.data_mut()[s * c + j] += ge * bv.data()[d * c + j];
                    db.data_mut()[d * c + j] += ge * av.data()[s * c + j];
                }
            }
            vec![(*a, da), (*b, db)]
        }
        Op::SpMM(pattern, values, x) => {
            let (vv, xv) = (val(*values), val(*x));
            let c = xv.cols();
            let mut dv = zeros_like(vv);
            let mut dx = zeros_like(xv);
            for (e, (r, col)) in pattern.entries().enumerate() {
                let grow = &g.data()[r * c..(r + 1) * c];
                let xrow = &xv.data()[col * c..(col + 1) * c];
                dv.data_mut()[e] = grow.iter().zip(xrow).map(|(&p, &q)| p * q).sum();
                let ve = vv.data()[e];
                for j in 0..c {
                    dx.data_mut()[col * c + j] += ve * grow[j];
                }
            }
            vec![(*values, dv), (*x, dx)]
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let rows = g.rows();
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for i in 0..rows {
                let r = g.row(i);
                ga.extend_from_slice(&r[..ca]);
                gb.extend_from_slice(&r[ca..]);
            }
            vec![
                (*a, Tensor::from_vec(vec![rows, ca], ga).expect("shape")),
                (*b, Tensor::from_vec(vec![rows, cb], gb).expect("shape")),
            ]
        }
        Op::Concat(a, b) => {
            let la = val(*a).len();
            vec![
                (*a, Tensor::vector(g.data()[..la].to_vec())),
                (*b, Tensor::vector(g.data()[la..].to_vec())),
            ]
        }
        Op::Reshape(a) => vec![(
            *a,
            g.clone().reshape(val(*a).shape().to_vec()).expect("same numel"),
        )],
        Op::CrossEntropy(a, labels, rows) => {
            let logits = val(*a);
            let c = logits.cols();
            let scale = g.item() / T::of_usize(rows.len());
            let mut dx = zeros_like(logits);
            for &i in rows.iter() {
                let z = logits.row(i);
                let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
                let denom: T = z.iter().map(|&v| (v - mx).exp()).sum();
                for j in 0..c {
                    let p = (z[j] - mx).exp() / denom;
                    let y = if j == labels[i] { T::one() } else { T::zero() };
                    dx.data_mut()[i * c + j] += scale * (p - y);
                }
            }
            vec![(*a, dx)]
        }
        Op::Custom(a, d) => {
            let x = val(*a);
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(out.data()))
                .map(|(&gi, (&xi, &yi))| gi * d(xi, yi))
                .collect();
            vec![(*a, Tensor::from_vec(x.shape().to_vec(), data).expect("shape"))]
        }
    }
}
