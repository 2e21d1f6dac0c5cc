use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with the given step.
///
/// `f` is re-run on a fresh tape for every perturbation, so it must be a
/// pure function of its inputs.
pub fn gradient_check<T, F>(f: F, inputs: &[Tensor<T>], step: T) -> Result<GradCheck>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if !(step > T::of(1e-8) && step < T::of(1e-3)) {
        return Err(Error::config(format!("gradient-check step {step} outside (1e-8, 1e-3)")));
    }

    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let eval = |perturbed: &[Tensor<T>]| -> Result<T> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        if !v.is_scalar() {
            return Err(Error::Rank {
                op: "gradient_check",
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let two = T::of(2.0);
    for (which, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let x0 = input.data()[k];
            work[which].data_mut()[k] = x0 + step;
            let plus = eval(&work)?;
            work[which].data_mut()[k] = x0 - step;
            let minus = eval(&work)?;
            work[which].data_mut()[k] = x0;

            let numeric = (plus - minus) / (two * step);
            let a = analytic[which].data()[k];
            let err = ((a - numeric).abs() / numeric.abs().max(T::one())).to_f64_lossy();
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_input = which;
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
