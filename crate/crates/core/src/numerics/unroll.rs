//! Unrolled SGD and hypergradients through it.
//!
//! A trace records T parameter-update steps θ_t = θ_{t−1} − lr·scale·Σ_j
//! w_j·∇ℓ_{b_j}(θ_{t−1}), where on "weighted" steps the per-example weights
//! w come from a weight vector q over the loss's example set. The
//! hypergradient of an outer loss L(θ_T) with respect to q is computed by
//! reverse accumulation over the recorded steps:
//!
//!   v_T = ∇L(θ_T)
//!   ∂L/∂q_i += −lr·scale·(∇ℓ_i(θ_{t−1}) · v_t)   for i in step t's batch
//!   v_{t−1} = v_t − lr·scale·(Σ_j w_j H_{b_j}(θ_{t−1})) v_t
//!
//! Both the Hessian-vector product and the per-example directional
//! derivatives come from one dual-number pass per step, so the result is
//! exact (up to rounding), not a finite-difference approximation.

use crate::error::{Error, Result};
use crate::numerics::diff::DifferentiableLoss;
use crate::numerics::dual::{Dual, Scalar};
use crate::numerics::params::ParamVector;

/// Per-example loss family over a fixed example set.
///
/// `weights` aligns with `batch`; implementations must skip examples whose
/// weight is exactly zero in the `f64` path, so zero-weight examples leave
/// bit-identical parameters. The dual path must still evaluate every batch
/// example when `per_example_jvp` is requested, because ∂/∂q_i does not
/// vanish at q_i = 0.
pub trait ExampleLoss {
    fn param_count(&self) -> usize;
    fn example_count(&self) -> usize;

    /// Σ_j weights[j] · ℓ_{batch[j]}(params).
    fn batch_value(&self, params: &[f64], batch: &[usize], weights: &[f64]) -> f64;

    /// Accumulate `scale · Σ_j weights[j] · ∇ℓ_{batch[j]}(params)` into `out`.
    fn accumulate_batch_gradient(
        &self,
        params: &[f64],
        batch: &[usize],
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    );

    /// Dual-number version of [`accumulate_batch_gradient`]. When
    /// `per_example_jvp` is given (aligned with `batch`), also writes the
    /// tangent of each example's unweighted, unscaled loss, which equals
    /// `∇ℓ_{batch[j]}(primal) · tangent`.
    fn accumulate_batch_gradient_dual(
        &self,
        params: &[Dual],
        batch: &[usize],
        weights: &[f64],
        scale: f64,
        out: &mut [Dual],
        per_example_jvp: Option<&mut [f64]>,
    );
}

/// One planned/recorded SGD step.
pub struct TraceStep<'a> {
    pub loss: &'a dyn ExampleLoss,
    pub batch: Vec<usize>,
    pub lr: f64,
    pub scale: f64,
    /// Whether the weight vector q applies to this step's examples.
    pub weighted: bool,
}

impl std::fmt::Debug for TraceStep<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceStep")
            .field("batch", &self.batch)
            .field("lr", &self.lr)
            .field("scale", &self.scale)
            .field("weighted", &self.weighted)
            .finish_non_exhaustive()
    }
}

/// Result of unrolling a step plan from initial parameters: the step
/// descriptors plus every parameter iterate. Replaying the same plan from
/// the same inputs reproduces the iterates bit for bit.
#[derive(Debug)]
pub struct UnrolledTrace<'a> {
    initial: ParamVector,
    steps: Vec<TraceStep<'a>>,
    iterates: Vec<Vec<f64>>,
}

impl<'a> UnrolledTrace<'a> {
    pub fn initial(&self) -> &ParamVector {
        &self.initial
    }

    pub fn steps(&self) -> &[TraceStep<'a>] {
        &self.steps
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Parameters after step `t` (0-based).
    pub fn iterate(&self, t: usize) -> &[f64] {
        &self.iterates[t]
    }

    pub fn final_params(&self) -> ParamVector {
        let values = self
            .iterates
            .last()
            .cloned()
            .unwrap_or_else(|| self.initial.values().to_vec());
        ParamVector::new(values, self.initial.layout().to_vec())
            .expect("iterates are finite by construction")
    }
}

fn step_weights(step: &TraceStep, q: Option<&[f64]>) -> Vec<f64> {
    match (step.weighted, q) {
        (true, Some(q)) => step.batch.iter().map(|&i| q[i]).collect(),
        _ => vec![1.0; step.batch.len()],
    }
}

fn validate_plan(initial: &ParamVector, steps: &[TraceStep], q: Option<&[f64]>) -> Result<()> {
    for (t, step) in steps.iter().enumerate() {
        if step.loss.param_count() != initial.len() {
            return Err(Error::contract(format!(
                "step {t}: loss expects {} params, got {}",
                step.loss.param_count(),
                initial.len()
            )));
        }
        if let Some(&bad) = step.batch.iter().find(|&&i| i >= step.loss.example_count()) {
            return Err(Error::contract(format!(
                "step {t}: batch index {bad} out of range for {} examples",
                step.loss.example_count()
            )));
        }
        if step.weighted {
            let q = q.ok_or_else(|| {
                Error::contract(format!("step {t} is weighted but no weights were given"))
            })?;
            if q.len() != step.loss.example_count() {
                return Err(Error::contract(format!(
                    "step {t}: {} weights for {} examples",
                    q.len(),
                    step.loss.example_count()
                )));
            }
        }
    }
    Ok(())
}

/// Run the step plan from `initial`, recording every iterate.
pub fn unroll<'a>(
    initial: &ParamVector,
    steps: Vec<TraceStep<'a>>,
    q: Option<&[f64]>,
) -> Result<UnrolledTrace<'a>> {
    validate_plan(initial, &steps, q)?;
    let mut params = initial.values().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut iterates = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let w = step_weights(step, q);
        grad.iter_mut().for_each(|g| *g = 0.0);
        step.loss
            .accumulate_batch_gradient(&params, &step.batch, &w, step.scale, &mut grad);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step.lr * g;
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("segment '{}'", initial.segment_of(i)),
                format!("non-finite parameter after step {t}"),
            ));
        }
        iterates.push(params.clone());
    }
    Ok(UnrolledTrace {
        initial: initial.clone(),
        steps,
        iterates,
    })
}

/// ∂ outer(θ_T) / ∂q for the weight vector `q` the trace was unrolled with.
///
/// Entries for examples that never appear in any weighted step's batch are
/// exactly zero. Errors if `q`'s length does not match the trace or if a
/// non-finite value appears during reverse accumulation.
pub fn hypergradient(
    outer: &dyn DifferentiableLoss,
    trace: &UnrolledTrace,
    q: &[f64],
) -> Result<Vec<f64>> {
    for (t, step) in trace.steps.iter().enumerate() {
        if step.weighted && q.len() != step.loss.example_count() {
            return Err(Error::contract(format!(
                "step {t}: {} weights for {} examples",
                q.len(),
                step.loss.example_count()
            )));
        }
    }
    let final_values = trace
        .iterates
        .last()
        .map(|v| v.as_slice())
        .unwrap_or_else(|| trace.initial.values());
    let mut v = outer.gradient(final_values);
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numerical(
            format!("outer gradient segment '{}'", trace.initial.segment_of(i)),
            "non-finite entry",
        ));
    }
    let mut gq = vec![0.0; q.len()];
    let p = trace.initial.len();
    let mut dual_params = vec![Dual::ZERO; p];
    let mut dual_grad = vec![Dual::ZERO; p];
    for t in (0..trace.steps.len()).rev() {
        let step = &trace.steps[t];
        let prev = if t == 0 {
            trace.initial.values()
        } else {
            &trace.iterates[t - 1]
        };
        let w = step_weights(step, Some(q));
        for k in 0..p {
            dual_params[k] = Dual::new(prev[k], v[k]);
            dual_grad[k] = Dual::ZERO;
        }
        if step.weighted {
            let mut jvp = vec![0.0; step.batch.len()];
            step.loss.accumulate_batch_gradient_dual(
                &dual_params,
                &step.batch,
                &w,
                step.scale,
                &mut dual_grad,
                Some(&mut jvp),
            );
            for (j, &i) in step.batch.iter().enumerate() {
                gq[i] -= step.lr * step.scale * jvp[j];
            }
        } else {
            step.loss.accumulate_batch_gradient_dual(
                &dual_params,
                &step.batch,
                &w,
                step.scale,
                &mut dual_grad,
                None,
            );
        }
        for k in 0..p {
            v[k] -= step.lr * dual_grad[k].dv;
        }
        if v.iter().any(|x| !x.is_finite()) || gq.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(
                "hypergradient reverse pass",
                format!("non-finite value at step {t}"),
            ));
        }
    }
    Ok(gq)
}
