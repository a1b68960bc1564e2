//! Loss objects binding a model family to a dataset. They implement the
//! numerics traits so the same objects drive plain training, unrolled
//! weighted training, and hypergradients.

use super::mlp::{bce_logit, softmax_brier, softmax_ce, Arch};
use super::{ClassifierSpec, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DifferentiableLoss, Dual, ExampleLoss, Scalar};

fn check_classifier_data(
    spec: &ClassifierSpec,
    features: &DenseMatrix,
    targets: &[usize],
) -> Result<Arch> {
    let arch = spec.arch();
    if features.cols() != arch.input_dim() {
        return Err(Error::contract(format!(
            "features have {} columns, classifier expects {}",
            features.cols(),
            arch.input_dim()
        )));
    }
    if targets.len() != features.rows() {
        return Err(Error::contract(format!(
            "{} targets for {} examples",
            targets.len(),
            features.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= spec.num_classes) {
        return Err(Error::contract(format!(
            "target class {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(arch)
}

/// Cross-entropy of a classifier against fixed integer targets (true
/// labels or frozen pseudo-labels).
///
/// As a [`DifferentiableLoss`] it is the mean over the whole example set;
/// as an [`ExampleLoss`] it exposes per-example terms and lets the caller
/// apply batch weights and scaling.
pub struct CrossEntropyLoss<'a> {
    arch: Arch,
    features: &'a DenseMatrix,
    targets: &'a [usize],
}

impl<'a> CrossEntropyLoss<'a> {
    pub fn new(
        spec: &ClassifierSpec,
        features: &'a DenseMatrix,
        targets: &'a [usize],
    ) -> Result<Self> {
        let arch = check_classifier_data(spec, features, targets)?;
        Ok(Self {
            arch,
            features,
            targets,
        })
    }

    fn example_loss<S: Scalar>(&self, params: &[S], i: usize, acts: &mut Vec<Vec<S>>) -> (S, Vec<S>) {
        self.arch.forward(params, self.features.row(i), acts);
        softmax_ce(acts.last().unwrap(), self.targets[i])
    }
}

impl DifferentiableLoss for CrossEntropyLoss<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        let n = self.features.rows();
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut total = 0.0;
        for i in 0..n {
            total += self.example_loss(params, i, &mut acts).0;
        }
        total / n as f64
    }

    fn accumulate_gradient(&self, params: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.features.rows();
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let per = scale / n as f64;
        for i in 0..n {
            let (_, dlogits) = self.example_loss(params, i, &mut acts);
            self.arch.backward(params, &acts, dlogits, per, out);
        }
    }
}

impl ExampleLoss for CrossEntropyLoss<'_> {
    fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn example_count(&self) -> usize {
        self.features.rows()
    }

    fn batch_value(&self, params: &[f64], batch: &[usize], weights: &[f64]) -> f64 {
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut total = 0.0;
        for (&i, &w) in batch.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            total += w * self.example_loss(params, i, &mut acts).0;
        }
        total
    }

    fn accumulate_batch_gradient(
        &self,
        params: &[f64],
        batch: &[usize],
        weights: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let mut acts: Vec<Vec<f64>> = Vec::new();
        for (&i, &w) in batch.iter().zip(weights) {
            // Zero-weight examples are skipped outright so they cannot
            // perturb the update even at the last bit.
            if w == 0.0 {
                continue;
            }
            let (_, dlogits) = self.example_loss(params, i, &mut acts);
            self.arch.backward(params, &acts, dlogits, scale * w, out);
        }
    }

    fn accumulate_batch_gradient_dual(
        &self,
        params: &[Dual],
        batch: &[usize],
        weights: &[f64],
        scale: f64,
        out: &mut [Dual],
        per_example_jvp: Option<&mut [f64]>,
    ) {
        let mut acts: Vec<Vec<Dual>> = Vec::new();
        match per_example_jvp {
            Some(jvp) => {
                // Every example is evaluated here: the loss tangent ∇ℓ_i·v
                // is needed even where the weight is zero.
                for (j, (&i, &w)) in batch.iter().zip(weights).enumerate() {
                    let (loss, dlogits) = self.example_loss(params, i, &mut acts);
                    jvp[j] = loss.dv;
                    if w != 0.0 {
                        self.arch
                            .backward(params, &acts, dlogits, Dual::constant(scale * w), out);
                    }
                }
            }
            None => {
                for (&i, &w) in batch.iter().zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    let (_, dlogits) = self.example_loss(params, i, &mut acts);
                    self.arch
                        .backward(params, &acts, dlogits, Dual::constant(scale * w), out);
                }
            }
        }
    }
}

/// Mean squared error between the classifier's softmax probabilities and
/// one-hot targets. Bounded in [0, 2] per example, and the downhill pull
/// toward ever-higher confidence on already-correct examples saturates
/// instead of persisting as it does under cross-entropy, which makes this
/// the safer objective when a loss is minimized *indirectly* through
/// unrolled training steps and raw confidence growth must not pay.
pub struct SquaredErrorLoss<'a> {
    arch: Arch,
    features: &'a DenseMatrix,
    targets: &'a [usize],
}

impl<'a> SquaredErrorLoss<'a> {
    pub fn new(
        spec: &ClassifierSpec,
        features: &'a DenseMatrix,
        targets: &'a [usize],
    ) -> Result<Self> {
        let arch = check_classifier_data(spec, features, targets)?;
        Ok(Self {
            arch,
            features,
            targets,
        })
    }

    fn example_loss(&self, params: &[f64], i: usize, acts: &mut Vec<Vec<f64>>) -> (f64, Vec<f64>) {
        self.arch.forward(params, self.features.row(i), acts);
        softmax_brier(acts.last().unwrap(), self.targets[i])
    }
}

impl DifferentiableLoss for SquaredErrorLoss<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        let n = self.features.rows();
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut total = 0.0;
        for i in 0..n {
            total += self.example_loss(params, i, &mut acts).0;
        }
        total / n as f64
    }

    fn accumulate_gradient(&self, params: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.features.rows();
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let per = scale / n as f64;
        for i in 0..n {
            let (_, dlogits) = self.example_loss(params, i, &mut acts);
            self.arch.backward(params, &acts, dlogits, per, out);
        }
    }
}

/// Balanced source-vs-target binary cross-entropy: the mean of the two
/// per-set mean terms, so both sets weigh equally regardless of size and
/// the zero-parameter loss is ln 2.
pub struct DiscriminatorBce<'a> {
    arch: Arch,
    source: &'a DenseMatrix,
    target: &'a DenseMatrix,
}

impl<'a> DiscriminatorBce<'a> {
    pub fn new(
        spec: &DiscriminatorSpec,
        source: &'a DenseMatrix,
        target: &'a DenseMatrix,
    ) -> Result<Self> {
        let arch = spec.arch();
        if source.cols() != arch.input_dim() || target.cols() != arch.input_dim() {
            return Err(Error::contract(format!(
                "discriminator expects {} features, got source {} / target {}",
                arch.input_dim(),
                source.cols(),
                target.cols()
            )));
        }
        if source.rows() == 0 || target.rows() == 0 {
            return Err(Error::contract("discriminator needs non-empty sets"));
        }
        Ok(Self {
            arch,
            source,
            target,
        })
    }

    /// Loss over explicit row batches, each side averaged over its batch
    /// and halved; the SGD estimator of the full objective.
    pub fn batch_value(&self, params: &[f64], src_batch: &[usize], tgt_batch: &[usize]) -> f64 {
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut total = 0.0;
        for &i in src_batch {
            self.arch.forward(params, self.source.row(i), &mut acts);
            total += 0.5 * bce_logit(acts.last().unwrap()[0], true).0 / src_batch.len() as f64;
        }
        for &i in tgt_batch {
            self.arch.forward(params, self.target.row(i), &mut acts);
            total += 0.5 * bce_logit(acts.last().unwrap()[0], false).0 / tgt_batch.len() as f64;
        }
        total
    }

    /// Accumulates `scale · ∇(batch loss)` into `out`.
    pub fn accumulate_batch_gradient(
        &self,
        params: &[f64],
        src_batch: &[usize],
        tgt_batch: &[usize],
        scale: f64,
        out: &mut [f64],
    ) {
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let s_scale = 0.5 * scale / src_batch.len() as f64;
        for &i in src_batch {
            self.arch.forward(params, self.source.row(i), &mut acts);
            let (_, dz) = bce_logit(acts.last().unwrap()[0], true);
            self.arch.backward(params, &acts, vec![dz], s_scale, out);
        }
        let t_scale = 0.5 * scale / tgt_batch.len() as f64;
        for &i in tgt_batch {
            self.arch.forward(params, self.target.row(i), &mut acts);
            let (_, dz) = bce_logit(acts.last().unwrap()[0], false);
            self.arch.backward(params, &acts, vec![dz], t_scale, out);
        }
    }
}

impl DifferentiableLoss for DiscriminatorBce<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        let src: Vec<usize> = (0..self.source.rows()).collect();
        let tgt: Vec<usize> = (0..self.target.rows()).collect();
        self.batch_value(params, &src, &tgt)
    }

    fn accumulate_gradient(&self, params: &[f64], scale: f64, out: &mut [f64]) {
        let src: Vec<usize> = (0..self.source.rows()).collect();
        let tgt: Vec<usize> = (0..self.target.rows()).collect();
        self.accumulate_batch_gradient(params, &src, &tgt, scale, out);
    }
}
