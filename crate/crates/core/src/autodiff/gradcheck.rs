use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`. The function is evaluated
/// twice at `point` first; differing outputs mean it is not deterministic
/// (e.g. an unfrozen RNG) and the check is refused.
pub fn check_gradient<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |x: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input("x", x.clone(), false)?;
        let out = f(&mut g, v)?;
        g.value(out)
            .item()
            .ok_or_else(|| Error::invalid("function output is not scalar"))
    };

    let mut g = Graph::new();
    let x = g.input("x", point.clone(), true)?;
    let out = f(&mut g, x)?;
    let y0 = g
        .value(out)
        .item()
        .ok_or_else(|| Error::invalid("function output is not scalar"))?;
    if eval(point)?.to_bits() != y0.to_bits() || eval(point)?.to_bits() != y0.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let grads = g.backward(out)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
