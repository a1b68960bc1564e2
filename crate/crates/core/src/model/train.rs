//! Plain mini-batch SGD training for the classifier and discriminator
//! families. One update rule everywhere keeps the unrolled refinement math
//! exact.

use super::losses::{CrossEntropyLoss, DiscriminatorBce};
use super::{ClassifierParams, ClassifierSpec, DiscriminatorParams, DiscriminatorSpec};
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DifferentiableLoss, ExampleLoss};
use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Mini-batch SGD settings: fixed learning rate, optional L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 20,
            batch_size: 32,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::contract(format!("bad learning rate {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::contract(format!(
                "bad weight decay {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Shared SGD loop over a cross-entropy objective with optional
/// per-example weights. Each batch applies `θ ← θ − lr·(∇ + wd·θ)` with the
/// gradient scaled by 1/|batch|, an unbiased estimate of the mean (or of
/// the 1/N-normalized weighted sum when weights are given).
pub(crate) fn sgd_cross_entropy(
    spec: &ClassifierSpec,
    features: &DenseMatrix,
    targets: &[usize],
    weights: Option<&[f64]>,
    init: &[f64],
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<Vec<f64>> {
    opt.validate()?;
    let loss = CrossEntropyLoss::new(spec, features, targets)?;
    if let Some(q) = weights {
        if q.len() != features.rows() {
            return Err(Error::contract(format!(
                "{} weights for {} examples",
                q.len(),
                features.rows()
            )));
        }
    }
    let n = features.rows();
    let mut params = init.to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed_value);
    for _ in 0..opt.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opt.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w: Vec<f64> = match weights {
                Some(q) => batch.iter().map(|&i| q[i]).collect(),
                None => vec![1.0; batch.len()],
            };
            loss.accumulate_batch_gradient(&params, batch, &w, 1.0 / batch.len() as f64, &mut grad);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= opt.lr * (g + opt.weight_decay * *p);
            }
        }
    }
    Ok(params)
}

/// Trains a fresh classifier on labeled data; returns the parameters and
/// the final mean training loss.
pub fn train_supervised(
    spec: &ClassifierSpec,
    data: &LabeledSet,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<(ClassifierParams, f64)> {
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut seen = vec![false; spec.num_classes];
    for &l in data.labels() {
        if l >= spec.num_classes {
            return Err(Error::contract(format!(
                "label {l} out of range for {} classes",
                spec.num_classes
            )));
        }
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::contract(
            "degenerate-labels: training data contains fewer than 2 distinct classes",
        ));
    }
    let init = spec.init(seed::derive(seed_value, "classifier-init"))?;
    let trained = sgd_cross_entropy(
        spec,
        data.features(),
        data.labels(),
        None,
        init.params().values(),
        opt,
        seed::derive(seed_value, "classifier-sgd"),
    )?;
    let final_loss = CrossEntropyLoss::new(spec, data.features(), data.labels())?.value(&trained);
    let params = ClassifierParams::from_values(spec.clone(), trained)?;
    Ok((params, final_loss))
}

/// Mean cross-entropy of a trained classifier on a labeled set.
pub fn mean_cross_entropy(params: &ClassifierParams, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let loss = CrossEntropyLoss::new(params.spec(), data.features(), data.labels())?;
    Ok(loss.value(params.params().values()))
}

fn cyclic_batch(order: &[usize], start: usize, count: usize) -> Vec<usize> {
    let n = order.len();
    (0..count).map(|k| order[(start + k) % n]).collect()
}

/// Trains (or, given `init`, fine-tunes) a source-vs-target discriminator
/// with the balanced binary cross-entropy: source labeled 1, target 0,
/// per-set means. Each SGD batch pairs a slice of each set, cycling the
/// smaller set.
pub fn train_discriminator(
    source: &UnlabeledSet,
    target: &UnlabeledSet,
    opt: &OptimizerConfig,
    init: Option<&DiscriminatorParams>,
    seed_value: u64,
) -> Result<DiscriminatorParams> {
    opt.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::contract("discriminator needs non-empty sets"));
    }
    if source.feature_dim() != target.feature_dim() {
        return Err(Error::contract(format!(
            "source has {} features, target {}",
            source.feature_dim(),
            target.feature_dim()
        )));
    }
    let spec = match init {
        Some(p) => p.spec().clone(),
        None => DiscriminatorSpec::default_for(source.feature_dim())?,
    };
    if spec.input_dim != source.feature_dim() {
        return Err(Error::contract(format!(
            "discriminator expects {} features, data has {}",
            spec.input_dim,
            source.feature_dim()
        )));
    }
    let mut params = match init {
        Some(p) => p.params().values().to_vec(),
        None => spec
            .init(seed::derive(seed_value, "discriminator-init"))?
            .params()
            .values()
            .to_vec(),
    };
    let loss = DiscriminatorBce::new(&spec, source.features(), target.features())?;
    let (ns, nt) = (source.len(), target.len());
    let mut src_order: Vec<usize> = (0..ns).collect();
    let mut tgt_order: Vec<usize> = (0..nt).collect();
    let mut grad = vec![0.0; params.len()];
    let mut rng = seed::rng(seed::derive(seed_value, "discriminator-sgd"));
    let batches_per_epoch = ns.max(nt).div_ceil(opt.batch_size);
    for _ in 0..opt.epochs {
        src_order.shuffle(&mut rng);
        tgt_order.shuffle(&mut rng);
        for b in 0..batches_per_epoch {
            let sb = cyclic_batch(&src_order, b * opt.batch_size, opt.batch_size.min(ns));
            let tb = cyclic_batch(&tgt_order, b * opt.batch_size, opt.batch_size.min(nt));
            grad.iter_mut().for_each(|g| *g = 0.0);
            loss.accumulate_batch_gradient(&params, &sb, &tb, 1.0, &mut grad);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= opt.lr * (g + opt.weight_decay * *p);
            }
        }
    }
    DiscriminatorParams::from_values(spec, params)
}

/// Full-set balanced binary cross-entropy of a discriminator.
pub fn discriminator_loss(
    params: &DiscriminatorParams,
    source: &UnlabeledSet,
    target: &UnlabeledSet,
) -> Result<f64> {
    let loss = DiscriminatorBce::new(params.spec(), source.features(), target.features())?;
    Ok(loss.value(params.params().values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_rotated_gaussians;
    use crate::model::{confidence, discriminator_scores, predict, sharpen_labels, Activation};

    fn separable_gaussians(seed: u64) -> LabeledSet {
        gen_rotated_gaussians(2, 200, 2, 60.0, 0.1, seed)
            .unwrap()
            .source
    }

    fn train_accuracy(params: &ClassifierParams, data: &LabeledSet) -> f64 {
        let pred = predict(params, data.features()).unwrap();
        let hits = sharpen_labels(&pred)
            .iter()
            .zip(data.labels())
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_classes_are_fit_to_high_accuracy() {
        let data = separable_gaussians(1);
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let (params, final_loss) =
            train_supervised(&spec, &data, &OptimizerConfig::default(), 0).unwrap();
        assert!(train_accuracy(&params, &data) >= 0.99);
        assert!(final_loss < 0.3, "final loss {final_loss}");
        assert!(final_loss > 0.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = separable_gaussians(2);
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let (a, la) = train_supervised(&spec, &data, &OptimizerConfig::default(), 9).unwrap();
        let (b, lb) = train_supervised(&spec, &data, &OptimizerConfig::default(), 9).unwrap();
        assert_eq!(a.params().values(), b.params().values());
        assert_eq!(la, lb);
        let (c, _) = train_supervised(&spec, &data, &OptimizerConfig::default(), 10).unwrap();
        assert_ne!(a.params().values(), c.params().values());
    }

    #[test]
    fn degenerate_and_invalid_datasets_are_rejected() {
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let empty = LabeledSet::new(DenseMatrix::zeros(0, 2), vec![]).unwrap();
        assert!(train_supervised(&spec, &empty, &OptimizerConfig::default(), 0).is_err());

        let single = LabeledSet::new(DenseMatrix::zeros(4, 2), vec![1, 1, 1, 1]).unwrap();
        let err = train_supervised(&spec, &single, &OptimizerConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("degenerate-labels"), "{err}");

        let out_of_range = LabeledSet::new(DenseMatrix::zeros(2, 2), vec![0, 2]).unwrap();
        assert!(train_supervised(&spec, &out_of_range, &OptimizerConfig::default(), 0).is_err());
    }

    #[test]
    fn zero_lr_training_returns_the_initialization() {
        let data = separable_gaussians(3);
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let opt = OptimizerConfig {
            lr: 0.0,
            ..OptimizerConfig::default()
        };
        let (params, _) = train_supervised(&spec, &data, &opt, 5).unwrap();
        let init = spec.init(seed::derive(5, "classifier-init")).unwrap();
        assert_eq!(params.params().values(), init.params().values());
    }

    #[test]
    fn zero_initialized_discriminator_loss_is_ln_2() {
        let spec = DiscriminatorSpec::default_for(1).unwrap();
        let params = spec.zeros().unwrap();
        let s = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap());
        let t = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![-2.0, -3.0]).unwrap());
        let loss = discriminator_loss(&params, &s, &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn separable_sets_are_discriminated_confidently() {
        let s = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap());
        let t = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![-2.0, -3.0]).unwrap());
        let opt = OptimizerConfig {
            lr: 0.5,
            epochs: 200,
            ..OptimizerConfig::default()
        };
        let params = train_discriminator(&s, &t, &opt, None, 0).unwrap();
        let on_source = discriminator_scores(&params, s.features()).unwrap();
        let on_target = discriminator_scores(&params, t.features()).unwrap();
        assert!(on_source.iter().all(|&p| p > 0.9), "{on_source:?}");
        assert!(on_target.iter().all(|&p| p < 0.1), "{on_target:?}");
    }

    #[test]
    fn identical_sets_score_near_half() {
        let data = separable_gaussians(4).to_unlabeled();
        let opt = OptimizerConfig {
            lr: 0.5,
            epochs: 50,
            ..OptimizerConfig::default()
        };
        let params = train_discriminator(&data, &data, &opt, None, 1).unwrap();
        let scores = discriminator_scores(&params, data.features()).unwrap();
        let mean_dev: f64 =
            scores.iter().map(|&p| (p - 0.5).abs()).sum::<f64>() / scores.len() as f64;
        assert!(mean_dev < 0.1, "mean deviation {mean_dev}");
    }

    #[test]
    fn fine_tuning_continues_from_the_given_parameters() {
        let s = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap());
        let t = UnlabeledSet::new(DenseMatrix::from_vec(2, 1, vec![-2.0, -3.0]).unwrap());
        let opt = OptimizerConfig {
            lr: 0.2,
            epochs: 30,
            ..OptimizerConfig::default()
        };
        let first = train_discriminator(&s, &t, &opt, None, 3).unwrap();
        let loss_first = discriminator_loss(&first, &s, &t).unwrap();
        let second = train_discriminator(&s, &t, &opt, Some(&first), 4).unwrap();
        let loss_second = discriminator_loss(&second, &s, &t).unwrap();
        assert!(loss_second <= loss_first + 1e-9);

        let zero_epochs = OptimizerConfig {
            epochs: 0,
            ..opt
        };
        let frozen = train_discriminator(&s, &t, &zero_epochs, Some(&first), 5).unwrap();
        assert_eq!(frozen.params().values(), first.params().values());
    }

    #[test]
    fn discriminator_rejects_mismatched_dimensions() {
        let s = UnlabeledSet::new(DenseMatrix::zeros(2, 1));
        let t = UnlabeledSet::new(DenseMatrix::zeros(2, 2));
        assert!(train_discriminator(&s, &t, &OptimizerConfig::default(), None, 0).is_err());
    }

    #[test]
    fn confidence_and_prediction_utilities_hold_on_trained_model() {
        let data = separable_gaussians(6);
        let spec = ClassifierSpec::new(2, vec![8], 2, Activation::Tanh).unwrap();
        let (params, _) = train_supervised(&spec, &data, &OptimizerConfig::default(), 2).unwrap();
        let pred = predict(&params, data.features()).unwrap();
        for c in confidence(&pred) {
            assert!((0.5..=1.0).contains(&c));
        }
    }
}
