//! Dataset types and sources: labeled/unlabeled pools, gradually shifting
//! synthetic streams with ground-truth shift indices, IDX image ingestion
//! with rotation transforms, and the case-study perturbations (subsampling,
//! index noise, outlier domains).

mod idx;
mod stream_csv;
mod synth;

pub use idx::{load_idx_images, rotate_images};
pub use stream_csv::{stream_from_csv, stream_to_csv};
pub use synth::{gen_rotated_gaussians, gen_rotated_moons, perturb_stream, Perturbation};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use serde::{Deserialize, Serialize};

/// Feature rows with one integer class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: DenseMatrix,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::contract(format!(
                "label count {} does not match {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn inferred_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Drops the labels (the features are cloned; labels are not carried).
    pub fn to_unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet::new(self.features.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels)
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; num_classes];
        for &l in &self.labels {
            if l < num_classes {
                counts[l] += 1;
            }
        }
        counts
    }
}

/// Feature rows with no labels. Scoring and refinement code only ever sees
/// this type, so ground-truth shift indices cannot leak into discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    features: DenseMatrix,
}

impl UnlabeledSet {
    pub fn new(features: DenseMatrix) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self::new(self.features.gather_rows(indices)?))
    }
}

/// How a stream was produced; kept with the stream so perturbations that
/// synthesize extra domains can re-enter the same generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    RotatedGaussians {
        num_classes: usize,
        points_per_domain: usize,
        num_domains: usize,
        total_angle: f64,
        noise_sd: f64,
    },
    RotatedMoons {
        points_per_domain: usize,
        num_domains: usize,
        total_angle: f64,
        noise_sd: f64,
    },
    /// Loaded from files; cannot be re-entered to synthesize more domains.
    External,
}

/// A source → intermediates → target stream. The intermediate pool is
/// unlabeled by type; its true shift indices and class labels are stored
/// alongside strictly for evaluation, metrics, and stratified perturbation,
/// and are never passed to scoring or refinement.
#[derive(Debug, Clone)]
pub struct ShiftStream {
    pub source: LabeledSet,
    /// Labels present for evaluation only.
    pub target: LabeledSet,
    pub intermediate: UnlabeledSet,
    /// Per-intermediate-example generating parameter (e.g. rotation angle),
    /// monotone along the shift.
    pub truth_index: Vec<f64>,
    /// Per-intermediate-example true class, for metrics only.
    pub intermediate_labels: Vec<usize>,
    pub spec: GeneratorSpec,
    pub seed: u64,
}

impl ShiftStream {
    /// Checks the cross-field size invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.intermediate.len();
        if self.truth_index.len() != n || self.intermediate_labels.len() != n {
            return Err(Error::contract(format!(
                "stream bookkeeping out of sync: {} intermediate rows, {} truth indices, {} labels",
                n,
                self.truth_index.len(),
                self.intermediate_labels.len()
            )));
        }
        if let Some(i) = self.truth_index.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite truth index at example {i}"
            )));
        }
        Ok(())
    }

    /// The intermediate pool's true classes as a labeled set, for
    /// evaluation-side bookkeeping only.
    pub fn intermediate_truth(&self) -> Result<LabeledSet> {
        LabeledSet::new(
            self.intermediate.features().clone(),
            self.intermediate_labels.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_set_rejects_mismatched_labels() {
        let m = DenseMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(LabeledSet::new(m, vec![0]).is_err());
    }

    #[test]
    fn subset_picks_rows_and_labels_together() {
        let m = DenseMatrix::from_vec(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let set = LabeledSet::new(m, vec![7, 8, 9]).unwrap();
        let sub = set.subset(&[2, 0]).unwrap();
        assert_eq!(sub.labels(), &[9, 7]);
        assert_eq!(sub.features().row(0), &[4.0, 5.0]);
        assert_eq!(sub.features().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn class_counts_ignore_out_of_range() {
        let m = DenseMatrix::zeros(4, 1);
        let set = LabeledSet::new(m, vec![0, 1, 1, 5]).unwrap();
        assert_eq!(set.class_counts(2), vec![1, 2]);
    }
}
