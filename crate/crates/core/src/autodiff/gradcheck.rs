//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Smallest denominator used for the relative error.
pub const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coordinates
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`; NaN on either side maps to infinity.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Compares the tape gradient of scalar `f` with `(f(x+h) - f(x-h)) / 2h`
/// for every coordinate of every input.
///
/// Passes iff the largest relative error is below `tol`. Errors raised by
/// `f` itself are returned.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut coordinates = Vec::new();
    let mut perturbed = inputs.to_vec();
    for (input, grads) in analytic.iter().enumerate() {
        for (index, &a) in grads.iter().enumerate() {
            let orig = inputs[input].data()[index];
            perturbed[input].data_mut()[index] = orig + h;
            let plus = eval(&f, &perturbed)?;
            perturbed[input].data_mut()[index] = orig - h;
            let minus = eval(&f, &perturbed)?;
            perturbed[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            coordinates.push(CoordinateCheck {
                input,
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < tol,
        max_rel_error,
        tol,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let report = grad_check(
            |t, x| {
                let sq = t.mul(x[0], x[0])?;
                t.sum(sq, 0)
            },
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        let a: Vec<f64> = report.coordinates.iter().map(|c| c.analytic).collect();
        assert_eq!(a, vec![2.0, 4.0]);
        for c in &report.coordinates {
            assert!((c.numeric - c.analytic).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_backward_rule_fails() {
        // Forward computes x^2, backward claims the derivative is x.
        let report = grad_check(
            |t, x| {
                let v: Vec<f64> = t.value(x[0]).iter().map(|a| a * a).collect();
                let y = t.custom(
                    &[x[0]],
                    Tensor::vector(v),
                    Box::new(|dy, xs, _| vec![dy.iter().zip(xs[0]).map(|(d, a)| d * a).collect()]),
                );
                t.sum(y, 0)
            },
            &[Tensor::vector(vec![1.5, -0.5])],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn nan_is_a_failure() {
        assert_eq!(relative_error(f64::NAN, 1.0), f64::INFINITY);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
