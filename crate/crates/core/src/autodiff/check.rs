use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Magnitude below which [`grad_check`] compares absolute rather than relative error.
pub const ABSOLUTE_FALLBACK: f64 = 1e-6;

/// Worst disagreement between the reverse-mode gradient of a scalar function
/// and central differences, over every coordinate of `point`.
///
/// `f` builds the function on a fresh tape from the input variable and must
/// return a `1 × 1` output. Each coordinate reports
/// `|analytic − numeric| / max(|analytic|, |numeric|)`, or the plain absolute
/// difference when both magnitudes are below [`ABSOLUTE_FALLBACK`].
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let out = f(&mut tape, x)?;
    scalar_of(&tape, out)?;
    let analytic = tape.backward(out).get_or_zeros(x);

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.data().len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < ABSOLUTE_FALLBACK {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64> {
    let t = tape.value(out);
    if t.shape() != [1, 1] {
        return Err(Error::usage(format!("grad_check needs a scalar output, got {:?}", t.shape())));
    }
    let v = t.item();
    if !v.is_finite() {
        return Err(Error::numerical(format!("function value {v} is not finite")));
    }
    Ok(v)
}
