use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let y = f(&mut tape, v)?;
    let out = tape.value(y).data();
    if out.len() != 1 {
        return Err(Error::InvalidConfig("gradient check needs a scalar function".into()));
    }
    if !out[0].is_finite() {
        return Err(Error::NonFiniteEvaluation);
    }
    Ok(out[0])
}

/// Largest relative discrepancy between the autodiff gradient of `f` at `x`
/// and central finite differences with the given step, measured as
/// `|ad − fd| / max(1, |fd|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let y = f(&mut tape, v)?;
    if !tape.value(y).data().iter().all(|d| d.is_finite()) {
        return Err(Error::NonFiniteEvaluation);
    }
    tape.backward(y)?;
    let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
