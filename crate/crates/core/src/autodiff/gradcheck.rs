use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all coordinates.
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Checks a scalar function of a single tensor at `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), step)
}

/// Checks a scalar function of several tensors. Every input is perturbed one
/// coordinate at a time with step `step`.
pub fn grad_check_many<F>(f: F, points: &[Tensor<f64>], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if points.iter().any(|p| !p.all_finite()) {
        return Err(Error::NonFinite { op: "grad_check input" });
    }
    let eval = |inputs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(points)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut shifted = points.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..points[k].len() {
            let x = points[k].data()[i];
            shifted[k].data_mut()[i] = x + step;
            let (t, _, o) = eval(&shifted)?;
            let plus = t.value(o).item();
            shifted[k].data_mut()[i] = x - step;
            let (t, _, o) = eval(&shifted)?;
            let minus = t.value(o).item();
            shifted[k].data_mut()[i] = x;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (k, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
