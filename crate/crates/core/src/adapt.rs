//! Self-training: pseudo-labeling with confidence filtering, per-example
//! weighted variants, and the gradual walk along a domain sequence.

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{
    confidence, predict, sgd_cross_entropy, sharpen_labels, ClassifierParams, OptimizerConfig,
};
use crate::numerics::DenseMatrix;
use crate::seed;

/// A pool pseudo-labeled by a frozen teacher, with the confidence filter's
/// verdict per example.
#[derive(Debug, Clone)]
pub struct PseudoLabeledSet {
    features: DenseMatrix,
    pseudo_labels: Vec<usize>,
    num_classes: usize,
    kept_mask: Vec<bool>,
    teacher_confidence: Vec<f64>,
}

impl PseudoLabeledSet {
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    /// Argmax class per example (ties toward the smallest index).
    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    /// The same labels as one-hot rows.
    pub fn pseudo_labels_onehot(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.pseudo_labels.len(), self.num_classes);
        for (i, &c) in self.pseudo_labels.iter().enumerate() {
            m.set(i, c, 1.0);
        }
        m
    }

    pub fn kept_mask(&self) -> &[bool] {
        &self.kept_mask
    }

    pub fn teacher_confidence(&self) -> &[f64] {
        &self.teacher_confidence
    }

    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.kept_mask.iter().filter(|&&k| k).count()
    }

    /// Indices that survived the confidence filter, in pool order.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.kept_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| if k { Some(i) } else { None })
            .collect()
    }

    /// The kept examples as a labeled set under their pseudo-labels.
    pub fn kept_set(&self) -> Result<LabeledSet> {
        let idx = self.kept_indices();
        LabeledSet::new(
            self.features.gather_rows(&idx)?,
            idx.iter().map(|&i| self.pseudo_labels[i]).collect(),
        )
    }
}

/// Labels a pool once with the frozen teacher and marks the top
/// ceil(keep_frac·n) examples by teacher confidence (ties broken toward the
/// smaller example index).
pub fn pseudo_label(
    teacher: &ClassifierParams,
    pool: &UnlabeledSet,
    keep_frac: f64,
) -> Result<PseudoLabeledSet> {
    if pool.is_empty() {
        return Err(Error::contract("cannot pseudo-label an empty pool"));
    }
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::contract(format!(
            "keep_frac must lie in (0, 1], got {keep_frac}"
        )));
    }
    let pred = predict(teacher, pool.features())?;
    let pseudo_labels = sharpen_labels(&pred);
    let teacher_confidence = confidence(&pred);
    let n = pool.len();
    let keep = (keep_frac * n as f64).ceil() as usize;
    let keep = keep.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        teacher_confidence[b]
            .partial_cmp(&teacher_confidence[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept_mask = vec![false; n];
    for &i in order.iter().take(keep) {
        kept_mask[i] = true;
    }
    Ok(PseudoLabeledSet {
        features: pool.features().clone(),
        pseudo_labels,
        num_classes: teacher.spec().num_classes,
        kept_mask,
        teacher_confidence,
    })
}

/// One round of self-training: pseudo-label the pool with the frozen
/// teacher, drop the least confident examples, and fine-tune a student
/// initialized at the teacher on the kept set.
pub fn self_train(
    teacher: &ClassifierParams,
    pool: &UnlabeledSet,
    keep_frac: f64,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<ClassifierParams> {
    let pls = pseudo_label(teacher, pool, keep_frac)?;
    let kept = pls.kept_set()?;
    if kept.is_empty() {
        return Err(Error::contract("confidence filter kept no examples"));
    }
    let trained = sgd_cross_entropy(
        teacher.spec(),
        kept.features(),
        kept.labels(),
        None,
        teacher.params().values(),
        opt,
        seed::derive(seed_value, "self-train"),
    )?;
    ClassifierParams::from_values(teacher.spec().clone(), trained)
}

/// Weighted self-training ST(θ, q): every pool example enters the loss
/// scaled by its weight, with no confidence filter; the objective is
/// (1/N)·Σ q_i·ℓ_i over the whole pool.
pub fn weighted_self_train(
    teacher: &ClassifierParams,
    pool: &UnlabeledSet,
    q: &[f64],
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<ClassifierParams> {
    if q.len() != pool.len() {
        return Err(Error::contract(format!(
            "{} weights for {} pooled examples",
            q.len(),
            pool.len()
        )));
    }
    if let Some(bad) = q.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::contract(format!("weights must be nonnegative, got {bad}")));
    }
    let pls = pseudo_label(teacher, pool, 1.0)?;
    let trained = sgd_cross_entropy(
        teacher.spec(),
        pls.features(),
        pls.pseudo_labels(),
        Some(q),
        teacher.params().values(),
        opt,
        seed::derive(seed_value, "weighted-self-train"),
    )?;
    ClassifierParams::from_values(teacher.spec().clone(), trained)
}

/// One entry of the gradual walk's log.
#[derive(Debug, Clone, PartialEq)]
pub struct GradualStep {
    /// 1-based step number along the walk (the target is the last step).
    pub step: usize,
    /// Examples self-trained on at this step (before filtering).
    pub domain_size: usize,
    /// Accuracy on the held-out target labels, when provided.
    pub target_accuracy: Option<f64>,
}

/// Gradual self-training: folds [`self_train`] over the given chunks of the
/// pool (source side first) and finally over the target set. Target labels,
/// when given, are used only to log per-step accuracy.
///
/// Step m (1-based, target last) trains with seed
/// `seed::derive_idx(seed_value, "gda-step", m)`.
pub fn gradual_self_train(
    source_params: &ClassifierParams,
    pool: &UnlabeledSet,
    chunks: &[Vec<usize>],
    target: &UnlabeledSet,
    eval_target: Option<&LabeledSet>,
    keep_frac: f64,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<(ClassifierParams, Vec<GradualStep>)> {
    let mut params = source_params.clone();
    let mut log = Vec::with_capacity(chunks.len() + 1);
    let mut step = 0usize;
    for chunk in chunks {
        step += 1;
        let domain = pool.subset(chunk)?;
        params = self_train(
            &params,
            &domain,
            keep_frac,
            opt,
            seed::derive_idx(seed_value, "gda-step", step as u64),
        )?;
        log.push(GradualStep {
            step,
            domain_size: domain.len(),
            target_accuracy: eval_accuracy(&params, eval_target)?,
        });
    }
    step += 1;
    params = self_train(
        &params,
        target,
        keep_frac,
        opt,
        seed::derive_idx(seed_value, "gda-step", step as u64),
    )?;
    log.push(GradualStep {
        step,
        domain_size: target.len(),
        target_accuracy: eval_accuracy(&params, eval_target)?,
    });
    Ok((params, log))
}

fn eval_accuracy(
    params: &ClassifierParams,
    eval_target: Option<&LabeledSet>,
) -> Result<Option<f64>> {
    match eval_target {
        Some(t) => Ok(Some(crate::pipeline::evaluate_accuracy(params, t)?)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_rotated_gaussians;
    use crate::model::{train_supervised, ClassifierSpec};
    use crate::pipeline::evaluate_accuracy;

    fn teacher_and_pool(seed_value: u64) -> (ClassifierParams, LabeledSet, LabeledSet) {
        // Same-distribution train/held-out splits on separable clusters.
        let train = gen_rotated_gaussians(2, 200, 2, 60.0, 0.15, seed_value)
            .unwrap()
            .source;
        let held = gen_rotated_gaussians(2, 200, 2, 60.0, 0.15, seed_value + 500)
            .unwrap()
            .source;
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let (params, _) =
            train_supervised(&spec, &train, &OptimizerConfig::default(), seed_value).unwrap();
        (params, train, held)
    }

    #[test]
    fn zero_lr_self_training_returns_the_teacher() {
        let (teacher, train, _) = teacher_and_pool(1);
        let opt = OptimizerConfig {
            lr: 0.0,
            ..OptimizerConfig::default()
        };
        let student = self_train(&teacher, &train.to_unlabeled(), 0.9, &opt, 7).unwrap();
        assert_eq!(student.params().values(), teacher.params().values());
    }

    #[test]
    fn self_training_on_own_distribution_preserves_accuracy() {
        let (teacher, train, held) = teacher_and_pool(2);
        let student = self_train(
            &teacher,
            &train.to_unlabeled(),
            0.9,
            &OptimizerConfig::default(),
            3,
        )
        .unwrap();
        let before = evaluate_accuracy(&teacher, &held).unwrap();
        let after = evaluate_accuracy(&student, &held).unwrap();
        assert!(after >= before - 0.01, "teacher {before}, student {after}");
    }

    #[test]
    fn small_shift_within_margin_is_absorbed() {
        // Teacher boundary near 0 on one feature; clusters at ±1 shifted by
        // +0.3 stay on their own side, so every pseudo-label is correct and
        // the student must classify the shifted clusters perfectly.
        let spec = ClassifierSpec::new(1, vec![], 2, crate::model::Activation::Relu).unwrap();
        let base = LabeledSet::new(
            DenseMatrix::from_vec(4, 1, vec![-1.0, -0.9, 1.0, 0.9]).unwrap(),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let (teacher, _) = train_supervised(
            &spec,
            &base,
            &OptimizerConfig {
                epochs: 200,
                ..OptimizerConfig::default()
            },
            5,
        )
        .unwrap();
        let shifted = DenseMatrix::from_vec(4, 1, vec![-0.7, -0.6, 1.3, 1.2]).unwrap();
        let student = self_train(
            &teacher,
            &UnlabeledSet::new(shifted.clone()),
            1.0,
            &OptimizerConfig::default(),
            11,
        )
        .unwrap();
        let truth = LabeledSet::new(shifted, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(evaluate_accuracy(&student, &truth).unwrap(), 1.0);
    }

    #[test]
    fn keep_frac_one_keeps_everything() {
        let (teacher, train, _) = teacher_and_pool(3);
        let pls = pseudo_label(&teacher, &train.to_unlabeled(), 1.0).unwrap();
        assert!(pls.kept_mask().iter().all(|&k| k));
        assert_eq!(pls.kept_count(), train.len());
    }

    #[test]
    fn confidence_filter_keeps_ceil_fraction_with_index_tie_break() {
        let (teacher, train, _) = teacher_and_pool(4);
        let pls = pseudo_label(&teacher, &train.to_unlabeled(), 0.33).unwrap();
        assert_eq!(pls.kept_count(), (0.33f64 * train.len() as f64).ceil() as usize);
        // Every kept example is at least as confident as every dropped one.
        let kept_min = pls
            .kept_indices()
            .iter()
            .map(|&i| pls.teacher_confidence()[i])
            .fold(f64::INFINITY, f64::min);
        for (i, &k) in pls.kept_mask().iter().enumerate() {
            if !k {
                assert!(pls.teacher_confidence()[i] <= kept_min + 1e-15);
            }
        }
    }

    #[test]
    fn all_zero_weights_leave_parameters_untouched() {
        let (teacher, train, _) = teacher_and_pool(5);
        let pool = train.to_unlabeled();
        let q = vec![0.0; pool.len()];
        let student =
            weighted_self_train(&teacher, &pool, &q, &OptimizerConfig::default(), 9).unwrap();
        assert_eq!(student.params().values(), teacher.params().values());
    }

    #[test]
    fn indicator_weights_match_restricted_self_training() {
        // q = 1_A over a 10-point pool, full-batch steps. The weighted
        // objective is (1/N)·Σ_A ℓ; training on A alone averages (1/|A|)·Σ_A,
        // so scaling the restricted run's lr by |A|/N aligns the updates.
        let (teacher, train, _) = teacher_and_pool(6);
        let idx: Vec<usize> = (0..10).collect();
        let pool = train.to_unlabeled().subset(&idx).unwrap();
        let a: Vec<usize> = vec![1, 3, 4, 8];
        let mut q = vec![0.0; 10];
        for &i in &a {
            q[i] = 1.0;
        }
        let opt_w = OptimizerConfig {
            lr: 0.2,
            epochs: 13,
            batch_size: 10,
            weight_decay: 0.0,
        };
        let weighted = weighted_self_train(&teacher, &pool, &q, &opt_w, 17).unwrap();

        let restricted = pool.subset(&a).unwrap();
        let opt_p = OptimizerConfig {
            lr: 0.2 * a.len() as f64 / 10.0,
            batch_size: a.len(),
            ..opt_w
        };
        let direct = self_train(&teacher, &restricted, 1.0, &opt_p, 17).unwrap();
        for (x, y) in weighted
            .params()
            .values()
            .iter()
            .zip(direct.params().values())
        {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn doubling_weights_and_halving_lr_is_bit_identical() {
        let (teacher, train, _) = teacher_and_pool(7);
        let pool = train.to_unlabeled();
        let q: Vec<f64> = (0..pool.len()).map(|i| (i % 5) as f64 / 4.0).collect();
        let q2: Vec<f64> = q.iter().map(|v| v * 2.0).collect();
        let opt = OptimizerConfig {
            lr: 0.08,
            epochs: 3,
            ..OptimizerConfig::default()
        };
        let half = OptimizerConfig { lr: 0.04, ..opt };
        let a = weighted_self_train(&teacher, &pool, &q, &opt, 23).unwrap();
        let b = weighted_self_train(&teacher, &pool, &q2, &half, 23).unwrap();
        assert_eq!(a.params().values(), b.params().values());
    }

    #[test]
    fn negative_weights_are_rejected() {
        let (teacher, train, _) = teacher_and_pool(8);
        let pool = train.to_unlabeled();
        let mut q = vec![1.0; pool.len()];
        q[3] = -0.01;
        assert!(weighted_self_train(&teacher, &pool, &q, &OptimizerConfig::default(), 0).is_err());
    }

    #[test]
    fn empty_chunk_list_reduces_to_plain_target_self_training() {
        let (teacher, train, _) = teacher_and_pool(9);
        let stream = gen_rotated_gaussians(2, 100, 4, 80.0, 0.15, 77).unwrap();
        let pool = stream.intermediate;
        let target = stream.target.to_unlabeled();
        let (walked, log) = gradual_self_train(
            &teacher,
            &pool,
            &[],
            &target,
            Some(&train),
            0.9,
            &OptimizerConfig::default(),
            31,
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        let direct = self_train(
            &teacher,
            &target,
            0.9,
            &OptimizerConfig::default(),
            seed::derive_idx(31, "gda-step", 1),
        )
        .unwrap();
        assert_eq!(walked.params().values(), direct.params().values());
    }
}
