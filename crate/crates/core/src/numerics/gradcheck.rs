//! Finite-difference verification of reverse-mode gradients.
//!
//! Central differences assume the objective is smooth at the probe point.
//! Objectives built from GELU, layer norm, softmax and sigmoid are; ReLU
//! kinks are only hit with probability zero for random inputs.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A scalar-valued computation that can be evaluated at any precision.
pub trait Objective {
    fn evaluate<S: Scalar>(&self, tape: &Tape<S>, params: &[Var]) -> Result<Var>;
}

impl<O: Objective> Objective for &O {
    fn evaluate<S: Scalar>(&self, tape: &Tape<S>, params: &[Var]) -> Result<Var> {
        (**self).evaluate(tape, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Reverse-mode gradient of `objective` at `params`.
pub fn analytic_gradient<F: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<F>],
) -> Result<Vec<Tensor<F>>> {
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = objective.evaluate(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Shape(
            "gradient check needs a scalar objective".into(),
        ));
    }
    let grads = tape.backward(out);
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect())
}

fn value_at<S: Scalar>(objective: &impl Objective, params: &[Tensor<S>]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = objective.evaluate(&tape, &vars)?;
    Ok(tape.scalar(out).as_f64())
}

/// Central-difference gradient, evaluated in scalar type `S`.
/// Finite-difference formula for the first derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    #[default]
    Central2,
    /// Five-point central difference, error `O(h⁴)`.
    Central4,
    /// Seven-point central difference, error `O(h⁶)`.
    Central6,
}

impl Stencil {
    /// `(offset in units of h, weight)`; the sum is divided by `h`.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central2 => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::Central4 => &[
                (2.0, -1.0 / 12.0),
                (1.0, 8.0 / 12.0),
                (-1.0, -8.0 / 12.0),
                (-2.0, 1.0 / 12.0),
            ],
            Stencil::Central6 => &[
                (3.0, 1.0 / 60.0),
                (2.0, -9.0 / 60.0),
                (1.0, 45.0 / 60.0),
                (-1.0, -45.0 / 60.0),
                (-2.0, 9.0 / 60.0),
                (-3.0, -1.0 / 60.0),
            ],
        }
    }
}

/// Central-difference gradient of `objective`, evaluated in `S`.
pub fn numeric_gradient<S: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<S>],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    numeric_gradient_with(objective, params, h, Stencil::Central2)
}

pub fn numeric_gradient_with<S: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<S>],
    h: f64,
    stencil: Stencil,
) -> Result<Vec<Vec<f64>>> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut g = Vec::with_capacity(params[t].len());
        for i in 0..params[t].len() {
            let orig = params[t].data()[i];
            let mut acc = 0.0;
            for &(offset, weight) in stencil.taps() {
                work[t].data_mut()[i] = S::of(orig.as_f64() + offset * h);
                acc += weight * value_at(objective, &work)?;
            }
            work[t].data_mut()[i] = orig;
            g.push(acc / h);
        }
        out.push(g);
    }
    Ok(out)
}

fn compare<F: Scalar>(analytic: &[Tensor<F>], numeric: &[Vec<f64>]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&av, &nv)) in a.data().iter().zip(n).enumerate() {
            report.coordinates += 1;
            let e = relative_error(av.as_f64(), nv);
            if e > report.max_rel_error || !e.is_finite() {
                report.max_rel_error = e;
                report.worst = (t, i);
                report.analytic = av.as_f64();
                report.numeric = nv;
            }
        }
    }
    report
}

/// Compares the reverse-mode gradient against central differences, both in `F`.
pub fn grad_check<F: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<F>],
    h: f64,
) -> Result<GradCheckReport> {
    grad_check_with(objective, params, h, Stencil::Central2)
}

pub fn grad_check_with<F: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<F>],
    h: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient(objective, params)?;
    let numeric = numeric_gradient_with(objective, params, h, stencil)?;
    Ok(compare(&analytic, &numeric))
}

/// Reverse-mode gradient in `F` against central differences of the same
/// objective evaluated in `f64`.
pub fn grad_check_against_f64<F: Scalar>(
    objective: &impl Objective,
    params: &[Tensor<F>],
    h: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient(objective, params)?;
    let wide: Vec<Tensor<f64>> = params.iter().map(Tensor::cast).collect();
    let numeric = numeric_gradient_with(objective, &wide, h, stencil)?;
    Ok(compare(&analytic, &numeric))
}
