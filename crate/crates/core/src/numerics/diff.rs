use crate::error::{Error, Result};
use crate::numerics::params::ParamVector;

/// A scalar loss of a flat parameter vector together with its derivative
/// rule. Implementations carry their own data (features, targets); the
/// chain rule is hand-derived per model family, which stays exact because
/// the families shipped here are small and fixed.
pub trait DifferentiableLoss {
    fn value(&self, params: &[f64]) -> f64;

    /// Accumulate `scale · ∇loss(params)` into `out` (`out.len() ==
    /// params.len()`).
    fn accumulate_gradient(&self, params: &[f64], scale: f64, out: &mut [f64]);

    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; params.len()];
        self.accumulate_gradient(params, 1.0, &mut out);
        out
    }
}

/// Gradient of `loss` at `params`, with the same layout as `params`.
///
/// Checks that the loss value and every gradient entry are finite; a
/// non-finite gradient entry is reported with the name of the parameter
/// segment it falls in.
pub fn gradient(loss: &dyn DifferentiableLoss, params: &ParamVector) -> Result<ParamVector> {
    let value = loss.value(params.values());
    if !value.is_finite() {
        return Err(Error::numerical("loss value", "non-finite"));
    }
    let g = loss.gradient(params.values());
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            format!("gradient segment '{}'", params.segment_of(i)),
            format!("non-finite entry at flat position {i}"),
        ));
    }
    ParamVector::new(g, params.layout().to_vec())
}

/// Central finite-difference gradient of `loss`, for checking hand-derived
/// rules. Uses only `value`, never `accumulate_gradient`, so it is an
/// independent probe of the derivative path.
pub fn finite_difference_gradient(
    loss: &dyn DifferentiableLoss,
    params: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut g = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = loss.value(&p);
        p[i] = orig - h;
        let minus = loss.value(&p);
        p[i] = orig;
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}
