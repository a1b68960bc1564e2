//! Fine-stage refinement: greedy discovery of each next domain by
//! optimizing per-example weights against a cycle-consistency loss, with
//! gradients taken through the unrolled self-training steps.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::self_train;
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{
    predict, sharpen_labels, ClassifierParams, ClassifierSpec, CrossEntropyLoss, OptimizerConfig,
    SquaredErrorLoss,
};
use crate::numerics::{
    hypergradient, unroll, DenseMatrix, DifferentiableLoss, ExampleLoss, ParamVector, TraceStep,
};
use crate::report::write_atomic;
use crate::score::ScoredPool;
use crate::seed;

/// How the per-example weights start out at each refinement iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QInit {
    /// Descending linear ramp over the coarse order of the remaining pool.
    #[default]
    Ramp,
    /// The coarse scorer's raw values (clamped at zero).
    RawScores,
}

/// The loss the cycle is measured with after returning to the anchor.
///
/// Cross-entropy is the classical choice but keeps paying the weight
/// updates for raw confidence growth on anchor examples the model already
/// gets right; the squared-error (Brier) form caps that reward while
/// penalizing disagreement just as hard, which keeps the weight gradient
/// focused on whether the cycle *preserves* the anchor's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CycleLoss {
    #[default]
    CrossEntropy,
    SquaredError,
}

impl CycleLoss {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cross_entropy" => Ok(Self::CrossEntropy),
            "squared_error" => Ok(Self::SquaredError),
            other => Err(Error::contract(format!(
                "unknown cycle loss {other:?}; expected cross_entropy or squared_error"
            ))),
        }
    }
}

/// Hyperparameters of the fine stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Unrolled self-training steps per forward and per backward pass.
    pub t_steps: usize,
    /// Weight-update epochs per discovered domain.
    pub epochs: usize,
    /// Minibatch size inside the unrolled passes.
    pub batch_size: usize,
    /// Step size of the unrolled parameter updates.
    pub lr_theta: f64,
    /// Step size of the weight updates.
    pub lr_q: f64,
    pub q_init: QInit,
    /// Loss measuring the cycled model against the frozen anchor labels.
    pub cycle_loss: CycleLoss,
    /// Optimizer for the self-training that advances the model from one
    /// discovered domain to the next.
    pub step_opt: OptimizerConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            t_steps: 10,
            epochs: 30,
            batch_size: 128,
            lr_theta: 0.001,
            lr_q: 0.001,
            q_init: QInit::Ramp,
            cycle_loss: CycleLoss::default(),
            step_opt: OptimizerConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::contract("t_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        for (name, v) in [("lr_theta", self.lr_theta), ("lr_q", self.lr_q)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        self.step_opt.validate()
    }
}

/// One iteration's working set: the current model, the remaining pool in
/// coarse order with its weights, and the anchor domain the cycle returns to.
#[derive(Debug, Clone)]
pub struct RefinementState {
    params: ClassifierParams,
    pool: UnlabeledSet,
    remaining: Vec<usize>,
    q: Vec<f64>,
    anchor: LabeledSet,
    chunk_size: usize,
}

impl RefinementState {
    pub fn new(
        params: ClassifierParams,
        pool: UnlabeledSet,
        remaining: Vec<usize>,
        q: Vec<f64>,
        anchor: LabeledSet,
        chunk_size: usize,
    ) -> Result<Self> {
        params.params().check_finite()?;
        if pool.feature_dim() != params.spec().input_dim
            || anchor.feature_dim() != params.spec().input_dim
        {
            return Err(Error::contract("pool/anchor feature width differs from the model's"));
        }
        if anchor.is_empty() {
            return Err(Error::contract("anchor set must be non-empty"));
        }
        if remaining.is_empty() {
            return Err(Error::contract("remaining pool must be non-empty"));
        }
        let mut seen = HashSet::new();
        for &i in &remaining {
            if i >= pool.len() || !seen.insert(i) {
                return Err(Error::contract(format!(
                    "remaining index {i} repeated or out of range for pool of {}",
                    pool.len()
                )));
            }
        }
        if q.len() != remaining.len() {
            return Err(Error::contract(format!(
                "{} weights for {} remaining examples",
                q.len(),
                remaining.len()
            )));
        }
        if let Some(bad) = q.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::contract(format!(
                "weights must be finite and nonnegative, got {bad}"
            )));
        }
        if chunk_size == 0 || chunk_size > remaining.len() {
            return Err(Error::contract(format!(
                "chunk of {chunk_size} from {} remaining examples",
                remaining.len()
            )));
        }
        Ok(Self {
            params,
            pool,
            remaining,
            q,
            anchor,
            chunk_size,
        })
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn pool(&self) -> &UnlabeledSet {
        &self.pool
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn anchor(&self) -> &LabeledSet {
        &self.anchor
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }
}

/// Outcome of one domain search.
#[derive(Debug, Clone)]
pub struct DomainSearch {
    /// The chosen pool indices (global), highest weight first.
    pub selected: Vec<usize>,
    /// Final weights aligned with the state's remaining list.
    pub q: Vec<f64>,
    /// Cycle loss after each epoch's forward+backward pass.
    pub cycle_losses: Vec<f64>,
}

/// Fixed minibatch schedule for one epoch of the cycle pass.
struct CyclePlan {
    fwd_batches: Vec<Vec<usize>>,
    bwd_batches: Vec<Vec<usize>>,
    lr_theta: f64,
}

/// Runs one epoch's cycle: unrolled weighted self-training forward on the
/// remaining pool (targets frozen from θ_m), then unrolled self-training
/// back on the anchor (targets frozen from the adapted parameters), and
/// evaluates the anchor loss against θ_m's targets. Returns that loss and,
/// when asked, its gradient with respect to the weights.
#[allow(clippy::too_many_arguments)]
fn cycle_pass(
    spec: &ClassifierSpec,
    theta_m: &ParamVector,
    fwd_features: &DenseMatrix,
    fwd_targets: &[usize],
    q: &[f64],
    anchor_features: &DenseMatrix,
    outer_targets: &[usize],
    plan: &CyclePlan,
    cycle_loss: CycleLoss,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let fwd_loss = CrossEntropyLoss::new(spec, fwd_features, fwd_targets)?;
    let fwd_trace = unroll(theta_m, weighted_steps(&fwd_loss, plan), Some(q))?;
    let adapted = ClassifierParams::from_values(
        spec.clone(),
        fwd_trace.final_params().values().to_vec(),
    )?;
    drop(fwd_trace);
    let bwd_targets = sharpen_labels(&predict(&adapted, anchor_features)?);
    let bwd_loss = CrossEntropyLoss::new(spec, anchor_features, &bwd_targets)?;
    let mut steps = weighted_steps(&fwd_loss, plan);
    for b in &plan.bwd_batches {
        steps.push(TraceStep {
            loss: &bwd_loss,
            batch: b.clone(),
            lr: plan.lr_theta,
            scale: 1.0 / b.len() as f64,
            weighted: false,
        });
    }
    let trace = unroll(theta_m, steps, Some(q))?;
    let ce;
    let se;
    let outer: &dyn DifferentiableLoss = match cycle_loss {
        CycleLoss::CrossEntropy => {
            ce = CrossEntropyLoss::new(spec, anchor_features, outer_targets)?;
            &ce
        }
        CycleLoss::SquaredError => {
            se = SquaredErrorLoss::new(spec, anchor_features, outer_targets)?;
            &se
        }
    };
    let cycled = trace.final_params();
    let loss_value = outer.value(cycled.values());
    let grad = if want_grad {
        hypergradient(outer, &trace, q)?
    } else {
        Vec::new()
    };
    Ok((loss_value, grad))
}

fn weighted_steps<'a>(loss: &'a dyn ExampleLoss, plan: &CyclePlan) -> Vec<TraceStep<'a>> {
    plan.fwd_batches
        .iter()
        .map(|b| TraceStep {
            loss,
            batch: b.clone(),
            lr: plan.lr_theta,
            scale: 1.0 / b.len() as f64,
            weighted: true,
        })
        .collect()
}

fn sample_batch(rng: &mut rand_chacha::ChaCha8Rng, n: usize, batch_size: usize) -> Vec<usize> {
    let k = batch_size.min(n);
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Searches the remaining pool for the next domain: repeatedly runs the
/// forward/backward cycle, moves the weights down their hypergradient with
/// clamping at zero, and returns the chunk with the largest final weights
/// (ties toward the smaller pool index). Only the cycle hyperparameters of
/// `hyper` are read here; `q_init` and `step_opt` drive the surrounding
/// sequence loop.
pub fn find_next_domain(
    state: &RefinementState,
    hyper: &RefineConfig,
    seed_value: u64,
) -> Result<DomainSearch> {
    hyper.validate()?;
    let (t_steps, batch_size) = (hyper.t_steps, hyper.batch_size);
    let (lr_theta, lr_q) = (hyper.lr_theta, hyper.lr_q);
    let spec = state.params.spec();
    let theta_m = state.params.params();
    let fwd_features = state.pool.features().gather_rows(&state.remaining)?;
    let fwd_targets = sharpen_labels(&predict(&state.params, &fwd_features)?);
    let outer_targets = sharpen_labels(&predict(&state.params, state.anchor.features())?);
    let n = state.remaining.len();
    let mut q = state.q.clone();
    let mut cycle_losses = Vec::with_capacity(hyper.epochs);
    for e in 0..hyper.epochs {
        let mut rng = seed::rng(seed::derive_idx(seed_value, "epoch", e as u64));
        let plan = CyclePlan {
            fwd_batches: (0..t_steps).map(|_| sample_batch(&mut rng, n, batch_size)).collect(),
            bwd_batches: (0..t_steps)
                .map(|_| sample_batch(&mut rng, state.anchor.len(), batch_size))
                .collect(),
            lr_theta,
        };
        let (loss_value, grad) = cycle_pass(
            spec,
            theta_m,
            &fwd_features,
            &fwd_targets,
            &q,
            state.anchor.features(),
            &outer_targets,
            &plan,
            hyper.cycle_loss,
            lr_q != 0.0,
        )?;
        cycle_losses.push(loss_value);
        if lr_q != 0.0 {
            for (qi, gi) in q.iter_mut().zip(&grad) {
                *qi = (*qi - lr_q * gi).max(0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        q[b].partial_cmp(&q[a])
            .unwrap()
            .then(state.remaining[a].cmp(&state.remaining[b]))
    });
    let selected: Vec<usize> = order[..state.chunk_size]
        .iter()
        .map(|&j| state.remaining[j])
        .collect();
    Ok(DomainSearch {
        selected,
        q,
        cycle_losses,
    })
}

/// Result of refining a whole coarse ordering.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// All pool indices, source side first: the refined sequence.
    pub sequence: Vec<usize>,
    /// The same sequence split into the discovered domains.
    pub chunks: Vec<Vec<usize>>,
    /// Per-iteration, per-epoch cycle losses.
    pub cycle_losses: Vec<Vec<f64>>,
    /// The model after self-training through every discovered domain.
    pub final_params: ClassifierParams,
}

/// Refines a coarse ordering into a fine domain sequence: for each of the
/// M−1 domains, re-initializes weights over the remaining pool, searches for
/// the chunk that minimizes the cycle loss, pseudo-labels it with the
/// current model, self-trains onto it, and removes it from the pool.
pub fn refine_sequence(
    source_params: &ClassifierParams,
    source: &LabeledSet,
    scored: &ScoredPool,
    m_domains: usize,
    hyper: &RefineConfig,
    seed_value: u64,
) -> Result<RefineOutcome> {
    hyper.validate()?;
    if m_domains < 2 {
        return Err(Error::contract(format!(
            "refinement needs at least 2 domains, got {m_domains}"
        )));
    }
    let n = scored.len();
    let num_chunks = m_domains - 1;
    if n < num_chunks {
        return Err(Error::contract(format!(
            "pool of {n} cannot form {num_chunks} chunks"
        )));
    }
    let base_chunk = n / num_chunks;
    let mut remaining = scored.descending_order();
    let mut params = source_params.clone();
    let mut anchor = source.clone();
    let mut chunks = Vec::with_capacity(num_chunks);
    let mut cycle_losses = Vec::with_capacity(num_chunks);
    for m in 0..num_chunks {
        let n_rem = remaining.len();
        let chunk_size = if m + 1 == num_chunks { n_rem } else { base_chunk };
        let q_init: Vec<f64> = match hyper.q_init {
            QInit::Ramp => ramp(n_rem),
            QInit::RawScores => remaining
                .iter()
                .map(|&i| scored.scores()[i].max(0.0))
                .collect(),
        };
        let state = RefinementState::new(
            params.clone(),
            scored.pool().clone(),
            remaining.clone(),
            q_init,
            anchor.clone(),
            chunk_size,
        )?;
        let search = find_next_domain(
            &state,
            hyper,
            seed::derive_idx(seed_value, "refine-step", m as u64),
        )?;
        let chunk_set = scored.pool().subset(&search.selected)?;
        let labels = sharpen_labels(&predict(&params, chunk_set.features())?);
        anchor = LabeledSet::new(chunk_set.features().clone(), labels)?;
        params = self_train(
            &params,
            &chunk_set,
            1.0,
            &hyper.step_opt,
            seed::derive_idx(seed_value, "refine-train", m as u64),
        )?;
        let taken: HashSet<usize> = search.selected.iter().copied().collect();
        remaining.retain(|i| !taken.contains(i));
        cycle_losses.push(search.cycle_losses);
        chunks.push(search.selected);
    }
    let sequence: Vec<usize> = chunks.iter().flatten().copied().collect();
    debug_assert_eq!(
        {
            let mut s = sequence.clone();
            s.sort_unstable();
            s
        },
        (0..n).collect::<Vec<_>>()
    );
    Ok(RefineOutcome {
        sequence,
        chunks,
        cycle_losses,
        final_params: params,
    })
}

/// Descending linear ramp from 1 to 0 over `n` positions.
fn ramp(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|j| (n - 1 - j) as f64 / (n - 1) as f64).collect()
}

/// Newline-delimited example ids, source side first.
pub fn sequence_to_string(sequence: &[usize]) -> String {
    let mut out = String::new();
    for i in sequence {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out
}

pub fn export_sequence(path: &Path, sequence: &[usize]) -> Result<()> {
    write_atomic(path, &sequence_to_string(sequence))
}

pub fn sequence_from_str(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            l.trim().parse::<usize>().map_err(|e| {
                Error::format(ln as u64, format!("bad example id {l:?}: {e}"))
            })
        })
        .collect()
}
