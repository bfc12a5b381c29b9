//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Coordinates checked per parameter tensor by [`grad_check`].
pub const DEFAULT_COORDS_PER_PARAM: usize = 64;

/// Max over sampled coordinates of `|analytic − fd| / max(1, |fd|)`, where
/// `fd` is the central difference with step `eps`.
///
/// `f` must build a scalar loss from the given parameter vars and be
/// deterministic (no dropout, no sampling).
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, eps, DEFAULT_COORDS_PER_PARAM)
}

pub fn grad_check_with<F>(f: F, params: &[Tensor], eps: f64, max_coords: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::Numerical("loss is not finite".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(&tape, v)).collect();
    drop(tape);

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        if !grad.is_finite() {
            return Err(Error::Numerical(format!(
                "analytic gradient of parameter {p} is not finite"
            )));
        }
        for coord in sample_coords(params[p].len(), max_coords) {
            let orig = work[p].data()[coord];
            work[p].data_mut()[coord] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[coord] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[coord] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[coord] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Evenly strided coordinates, always including the first and last.
fn sample_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    if max < 2 {
        return (0..max).collect();
    }
    (0..max).map(|k| k * (len - 1) / (max - 1)).collect()
}
