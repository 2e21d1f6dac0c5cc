//! Forward constructors for every taped operation.

use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{CsrPattern, SparseAdjacency};

use super::tape::{Op, Tape};
use super::{matmul_into, Tensor, Var};

const NORM_FLOOR: f64 = 1e-12;

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().position(|&i| i >= bound) {
        Some(p) => Err(Error::Domain {
            op,
            index: p,
            value: idx[p] as f64,
        }),
        None => Ok(()),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn binary(self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn same_shape(self, other: Var<'t, T>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(shape_err(op, &a, &b));
        }
        Ok(())
    }

    fn zip(self, other: Var<'t, T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let nodes = self.tape.nodes();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(shape_err("matmul", a.shape(), b.shape()));
            }
            let (n, k, m) = (a.rows(), a.cols(), b.cols());
            let mut out = vec![T::zero(); n * m];
            matmul_into(a.data(), b.data(), &mut out, n, k, m);
            Tensor::from_vec(vec![n, m], out)?
        };
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 2 {
                return Err(Error::Rank {
                    op: "transpose",
                    shape: v.shape().to_vec(),
                });
            }
            Ok(v.transpose())
        })?;
        Ok(self.unary(value, Op::Transpose(self.id)))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "add")?;
        let value = self.zip(other, |a, b| a + b);
        Ok(self.binary(other, value, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "sub")?;
        let value = self.zip(other, |a, b| a - b);
        Ok(self.binary(other, value, Op::Sub(self.id, other.id)))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "mul")?;
        let value = self.zip(other, |a, b| a * b);
        Ok(self.binary(other, value, Op::Mul(self.id, other.id)))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(|x| x + c));
        self.unary(value, Op::AddScalar(self.id))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(|x| x * c));
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn relu(self) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(|x| if x > T::zero() { x } else { T::zero() }));
        self.unary(value, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(sigmoid));
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(T::exp));
        self.unary(value, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if let Some(p) = v.data().iter().position(|&x| !(x > T::zero())) {
                return Err(Error::Domain {
                    op: "log",
                    index: p,
                    value: v.data()[p].to_f64_lossy(),
                });
            }
            Ok(v.map(T::ln))
        })?;
        Ok(self.unary(value, Op::Log(self.id)))
    }

    /// `x^p` element-wise; inputs must be positive unless `p` is a
    /// non-negative integer.
    pub fn powf(self, p: T) -> Result<Var<'t, T>> {
        let integral = p >= T::zero() && p.fract() == T::zero();
        let value = self.with_value(|v| {
            if !integral {
                if let Some(k) = v.data().iter().position(|&x| !(x > T::zero())) {
                    return Err(Error::Domain {
                        op: "powf",
                        index: k,
                        value: v.data()[k].to_f64_lossy(),
                    });
                }
            }
            Ok(v.map(|x| x.powf(p)))
        })?;
        Ok(self.unary(value, Op::Powf(self.id, p)))
    }

    /// Scales each row of a matrix to unit Euclidean norm; rows with norm
    /// below 1e-12 are an error.
    pub fn row_l2_normalize(self) -> Result<Var<'t, T>> {
        self.normalize_rows(T::of(NORM_FLOOR), true)
    }

    /// Divides each row by `max(‖x_i‖, floor)`, so near-zero rows shrink
    /// toward zero instead of failing.
    pub fn row_l2_normalize_clamped(self, floor: T) -> Result<Var<'t, T>> {
        self.normalize_rows(floor, false)
    }

    fn normalize_rows(self, floor: T, strict: bool) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 2 {
                return Err(Error::Rank {
                    op: "row_l2_normalize",
                    shape: v.shape().to_vec(),
                });
            }
            let c = v.cols();
            let norms = v.row_norms();
            let mut out = v.clone();
            for (i, &nrm) in norms.iter().enumerate() {
                if !(nrm >= floor) && (strict || nrm.is_nan()) {
                    return Err(Error::DegenerateRow { row: i });
                }
                let d = nrm.max(floor);
                for x in &mut out.data_mut()[i * c..(i + 1) * c] {
                    *x /= d;
                }
            }
            Ok(out)
        })?;
        Ok(self.unary(value, Op::RowNormalize(self.id, floor)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let value = self.with_value(|v| Tensor::scalar(v.data().iter().copied().sum()));
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.with_value(Tensor::len);
        self.sum().scale(T::one() / T::of_usize(n.max(1)))
    }

    /// Sums each row of a matrix into a vector.
    pub fn row_sum(self) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 2 {
                return Err(Error::Rank {
                    op: "row_sum",
                    shape: v.shape().to_vec(),
                });
            }
            Ok(Tensor::vector(
                (0..v.rows()).map(|i| v.row(i).iter().copied().sum()).collect(),
            ))
        })?;
        Ok(self.unary(value, Op::RowSum(self.id)))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 2 {
                return Err(Error::Rank {
                    op: "gather_rows",
                    shape: v.shape().to_vec(),
                });
            }
            check_index("gather_rows", idx, v.rows())?;
            let data = idx.iter().flat_map(|&r| v.row(r).iter().copied()).collect();
            Tensor::from_vec(vec![idx.len(), v.cols()], data)
        })?;
        Ok(self.unary(value, Op::GatherRows(self.id, idx.into())))
    }

    /// Selects entries of a vector.
    pub fn take(self, idx: &[usize]) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 1 {
                return Err(Error::Rank {
                    op: "take",
                    shape: v.shape().to_vec(),
                });
            }
            check_index("take", idx, v.len())?;
            Ok(Tensor::vector(idx.iter().map(|&i| v.data()[i]).collect()))
        })?;
        Ok(self.unary(value, Op::Take(self.id, idx.into())))
    }

    /// `out[idx[e]] += self[e]` into a vector of length `n`.
    pub fn scatter_add(self, idx: &[usize], n: usize) -> Result<Var<'t, T>> {
        let value = self.with_value(|v| {
            if v.rank() != 1 || v.len() != idx.len() {
                return Err(shape_err("scatter_add", v.shape(), &[idx.len()]));
            }
            check_index("scatter_add", idx, n)?;
            let mut out = vec![T::zero(); n];
            for (&x, &i) in v.data().iter().zip(idx) {
                out[i] += x;
            }
            Ok(Tensor::vector(out))
        })?;
        Ok(self.unary(value, Op::ScatterAdd(self.id, idx.into())))
    }

    /// `out[e] = self[src[e]] · other[dst[e]]` for each index pair, never
    /// materialising the full `n×n` product.
    pub fn edge_dot(self, other: Var<'t, T>, src: &[usize], dst: &[usize]) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() || src.len() != dst.len() {
                return Err(shape_err("edge_dot", a.shape(), b.shape()));
            }
            check_index("edge_dot", src, a.rows())?;
            check_index("edge_dot", dst, b.rows())?;
            Tensor::vector(
                src.iter()
                    .zip(dst)
                    .map(|(&s, &d)| a.row(s).iter().zip(b.row(d)).map(|(&x, &y)| x * y).sum())
                    .collect(),
            )
        };
        Ok(self.binary(
            other,
            value,
            Op::EdgeDot(self.id, other.id, src.into(), dst.into()),
        ))
    }

    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
                return Err(shape_err("concat_cols", a.shape(), b.shape()));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            Tensor::from_vec(vec![a.rows(), a.cols() + b.cols()], data)?
        };
        Ok(self.binary(other, value, Op::ConcatCols(self.id, other.id)))
    }

    /// Concatenates two vectors.
    pub fn concat(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 1 || b.rank() != 1 {
                return Err(shape_err("concat", a.shape(), b.shape()));
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::vector(data)
        };
        Ok(self.binary(other, value, Op::Concat(self.id, other.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().reshape(shape.to_vec())?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    /// Mean over `rows` of `-log softmax(self[i])[labels[i]]`, using the
    /// log-sum-exp shift. `labels` is indexed by row, so it has one entry
    /// per row of `self`.
    pub fn cross_entropy(self, labels: &[usize], rows: &[usize]) -> Result<Var<'t, T>> {
        if rows.is_empty() {
            return Err(Error::config("cross_entropy over an empty mask"));
        }
        let value = self.with_value(|v| {
            if v.rank() != 2 || labels.len() != v.rows() {
                return Err(shape_err("cross_entropy", v.shape(), &[labels.len()]));
            }
            check_index("cross_entropy", rows, v.rows())?;
            check_index("cross_entropy", labels, v.cols())?;
            let mut total = T::zero();
            for &i in rows {
                total += log_sum_exp(v.row(i)) - v.row(i)[labels[i]];
            }
            Ok(Tensor::scalar(total / T::of_usize(rows.len())))
        })?;
        Ok(self.unary(
            value,
            Op::CrossEntropy(self.id, labels.into(), rows.into()),
        ))
    }

    /// Element-wise map `f` with derivative `df(x, f(x))`. Exposed so that
    /// callers can register their own primitives with the gradient checker.
    pub fn map_custom(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let value = self.with_value(|v| v.map(f));
        self.unary(value, Op::Custom(self.id, Rc::new(df)))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    mx + z.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

/// Sparse matrix whose values live on a tape.
#[derive(Clone, Debug)]
pub struct SparseVar<'t, T> {
    pub pattern: Arc<CsrPattern>,
    pub values: Var<'t, T>,
}

impl<'t, T: Scalar> SparseVar<'t, T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Var<'t, T>) -> Result<Self> {
        let shape = values.shape();
        if shape != [pattern.nnz()] {
            return Err(shape_err("sparse_var", &[pattern.nnz()], &shape));
        }
        Ok(Self { pattern, values })
    }

    /// Lifts a plain sparse matrix onto `tape` as constants.
    pub fn constant(tape: &'t Tape<T>, adj: &SparseAdjacency<T>) -> Self {
        Self {
            pattern: adj.pattern().clone(),
            values: tape.constant(Tensor::vector(adj.values().to_vec())),
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.n_rows()
    }

    pub fn detach(&self) -> SparseAdjacency<T> {
        SparseAdjacency::new(self.pattern.clone(), self.values.value().into_data())
            .expect("pattern and values agree")
    }

    /// Sparse-dense product `self · x`; differentiable in both the edge
    /// values and `x`.
    pub fn matmul(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = x.tape.nodes();
            let (vv, xv) = (&nodes[self.values.id].value, &nodes[x.id].value);
            if xv.rank() != 2 || xv.rows() != self.pattern.n_cols() {
                return Err(shape_err(
                    "spmm",
                    &[self.pattern.n_rows(), self.pattern.n_cols()],
                    xv.shape(),
                ));
            }
            let c = xv.cols();
            let mut out = vec![T::zero(); self.pattern.n_rows() * c];
            for (e, (r, col)) in self.pattern.entries().enumerate() {
                let w = vv.data()[e];
                let xrow = xv.row(col);
                for (o, &xj) in out[r * c..(r + 1) * c].iter_mut().zip(xrow) {
                    *o += w * xj;
                }
            }
            Tensor::from_vec(vec![self.pattern.n_rows(), c], out)?
        };
        Ok(self.values.binary(
            x,
            value,
            Op::SpMM(self.pattern.clone(), self.values.id, x.id),
        ))
    }
}
