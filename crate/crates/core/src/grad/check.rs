use super::{GradError, Result, Tape, Value};

/// Central-difference gradient of a tape-built scalar function.
pub fn numeric_gradient<F>(f: &F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Value) -> Result<Value>,
{
    let eval = |x: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(x.to_vec())?;
        let out = f(&mut tape, v).map_err(|e| GradError::Undefined(e.to_string()))?;
        tape.payload(out)
            .as_scalar()
            .ok_or(GradError::NonScalarOutput(tape.payload(out).len()))
    };
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let up = eval(&x)?;
        x[i] = point[i] - step;
        let down = eval(&x)?;
        x[i] = point[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest coordinate-wise `|analytic - numeric| / max(1, |analytic|)`
/// between the tape gradient of `f` at `point` and central differences.
///
/// `f` receives the point as one trainable vector leaf.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Value) -> Result<Value>,
{
    if !(step > 0.0) {
        return Err(GradError::Domain {
            op: "grad_check",
            detail: format!("step must be positive, got {step}"),
        });
    }
    let mut tape = Tape::new();
    let x = tape.param(point.to_vec())?;
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(x).expect("point is a trainable leaf").as_slice();
    let numeric = numeric_gradient(&f, point, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}
