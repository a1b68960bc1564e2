//! End-to-end orchestration: ordering a pool into domains, walking them
//! gradually, and the evaluation metrics and generalization bound reported
//! for a run.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{gradual_self_train, GradualStep};
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{
    predict, sharpen_labels, train_discriminator, train_supervised, Activation, ClassifierParams,
    ClassifierSpec, OptimizerConfig,
};
use crate::refine::{refine_sequence, RefineConfig};
use crate::report::write_atomic;
use crate::score::{
    default_progressive_rounds, score_confidence_iterative, score_discriminator, score_manifold,
    score_progressive, ScoredPool,
};
use crate::seed;

/// An ordered partition of a pool into domains, source side first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSequence {
    chunks: Vec<Vec<usize>>,
    pool_len: usize,
    method_tag: String,
}

impl DomainSequence {
    /// Builds a sequence after checking the chunks partition `0..pool_len`.
    pub fn new(
        chunks: Vec<Vec<usize>>,
        pool_len: usize,
        method_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pool_len);
        let total: usize = chunks.iter().map(|c| c.len()).sum();
        if total != pool_len {
            return Err(Error::contract(format!(
                "chunks hold {total} indices for a pool of {pool_len}"
            )));
        }
        for &i in chunks.iter().flatten() {
            if i >= pool_len || !seen.insert(i) {
                return Err(Error::contract(format!(
                    "index {i} repeated or out of range for pool of {pool_len}"
                )));
            }
        }
        Ok(Self {
            chunks,
            pool_len,
            method_tag: method_tag.into(),
        })
    }

    pub fn chunks(&self) -> &[Vec<usize>] {
        &self.chunks
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn pool_len(&self) -> usize {
        self.pool_len
    }

    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    /// All indices in walk order (chunk by chunk).
    pub fn flattened(&self) -> Vec<usize> {
        self.chunks.iter().flatten().copied().collect()
    }

    /// One line per chunk, comma-separated example ids.
    pub fn to_string_repr(&self) -> String {
        let mut out = String::new();
        for chunk in &self.chunks {
            let line: Vec<String> = chunk.iter().map(|i| i.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_string_repr())
    }

    pub fn parse(text: &str, pool_len: usize, method_tag: impl Into<String>) -> Result<Self> {
        let mut chunks = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Vec<usize> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|e| {
                        Error::format(ln as u64, format!("bad example id {tok:?}: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            chunks.push(chunk);
        }
        Self::new(chunks, pool_len, method_tag)
    }
}

/// Sorts pool indices by score descending (ties toward the smaller index)
/// and splits them into `num_domains` chunks of floor(N/num_domains), with
/// the remainder appended to the final, target-side chunk.
pub fn sort_and_chunk(scored: &ScoredPool, num_domains: usize) -> Result<DomainSequence> {
    let order = scored.descending_order();
    let chunks = chunk_order(&order, num_domains)?;
    DomainSequence::new(chunks, scored.len(), scored.scorer_id())
}

/// Splits an explicit ordering by the same size policy as [`sort_and_chunk`].
pub fn chunk_order(order: &[usize], num_domains: usize) -> Result<Vec<Vec<usize>>> {
    let n = order.len();
    if num_domains == 0 {
        return Err(Error::contract("need at least one domain"));
    }
    if num_domains > n {
        return Err(Error::contract(format!(
            "{num_domains} domains for a pool of {n}"
        )));
    }
    let base = n / num_domains;
    let mut chunks = Vec::with_capacity(num_domains);
    for m in 0..num_domains {
        let start = m * base;
        let end = if m + 1 == num_domains { n } else { start + base };
        chunks.push(order[start..end].to_vec());
    }
    Ok(chunks)
}

/// Which coarse scorer drives the ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Confidence,
    Manifold,
    Discriminator,
    #[default]
    Progressive,
}

impl ScorerChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Confidence => "confidence",
            Self::Manifold => "manifold",
            Self::Discriminator => "discriminator",
            Self::Progressive => "progressive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "manifold" => Ok(Self::Manifold),
            "discriminator" => Ok(Self::Discriminator),
            "progressive" => Ok(Self::Progressive),
            other => Err(Error::contract(format!(
                "unknown scorer {other:?}; expected confidence|manifold|discriminator|progressive"
            ))),
        }
    }

    pub const ALL: [ScorerChoice; 4] = [
        Self::Confidence,
        Self::Manifold,
        Self::Discriminator,
        Self::Progressive,
    ];
}

/// Algorithm-level knobs shared by the ordering pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdolConfig {
    /// Classifier topology for the internally trained source model.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Budget for training the source model.
    pub source_opt: OptimizerConfig,
    /// Budget for scorer-internal training (self-training rounds,
    /// discriminator fits).
    pub scorer_opt: OptimizerConfig,
    pub refine: RefineConfig,
    /// Embedding width for the manifold scorer.
    pub embed_dim: usize,
    /// Progressive rounds; `None` picks twice the domain count, clamped to
    /// what the pool can feed.
    pub progressive_rounds: Option<usize>,
}

impl Default for IdolConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            activation: Activation::Relu,
            source_opt: OptimizerConfig::default(),
            scorer_opt: OptimizerConfig::default(),
            refine: RefineConfig::default(),
            embed_dim: 2,
            progressive_rounds: None,
        }
    }
}

impl IdolConfig {
    pub fn validate(&self) -> Result<()> {
        self.source_opt.validate()?;
        self.scorer_opt.validate()?;
        self.refine.validate()?;
        if self.embed_dim == 0 {
            return Err(Error::contract("embed_dim must be at least 1"));
        }
        Ok(())
    }

    pub fn classifier_spec(&self, input_dim: usize, num_classes: usize) -> Result<ClassifierSpec> {
        ClassifierSpec::new(input_dim, self.hidden_dims.clone(), num_classes, self.activation)
    }
}

/// Runs the chosen coarse scorer. Seed tags: "idol-confidence",
/// "idol-discriminator", "idol-progressive".
pub fn run_scorer(
    scorer: ScorerChoice,
    source_params: &ClassifierParams,
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    num_domains: usize,
    config: &IdolConfig,
    seed_value: u64,
) -> Result<ScoredPool> {
    match scorer {
        ScorerChoice::Confidence => score_confidence_iterative(
            source_params,
            pool,
            // The round formula needs at least 3 domains; a 1-chunk run
            // still scores with the smallest valid round count.
            (num_domains + 1).max(3),
            &config.scorer_opt,
            seed::derive(seed_value, "idol-confidence"),
        ),
        ScorerChoice::Manifold => {
            score_manifold(source_params, source, target, pool, config.embed_dim)
        }
        ScorerChoice::Discriminator => {
            let phi = train_discriminator(
                &source.to_unlabeled(),
                target,
                &config.scorer_opt,
                None,
                seed::derive(seed_value, "idol-discriminator"),
            )?;
            score_discriminator(&phi, pool)
        }
        ScorerChoice::Progressive => {
            let k = config
                .progressive_rounds
                .unwrap_or_else(|| default_progressive_rounds(num_domains, pool.len()));
            score_progressive(
                source,
                target,
                pool,
                k,
                &config.scorer_opt,
                seed::derive(seed_value, "idol-progressive"),
            )
        }
    }
}

/// The whole ordering pipeline with an already-trained source model:
/// coarse scoring, sort, optional refinement, chunking.
#[allow(clippy::too_many_arguments)]
pub fn idol_with_params(
    source_params: &ClassifierParams,
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    num_domains: usize,
    scorer: ScorerChoice,
    refine: bool,
    config: &IdolConfig,
    seed_value: u64,
) -> Result<DomainSequence> {
    config.validate()?;
    if source.is_empty() || target.is_empty() || pool.is_empty() {
        return Err(Error::contract("source, target, and pool must be non-empty"));
    }
    if num_domains == 0 || num_domains > pool.len() {
        return Err(Error::contract(format!(
            "{num_domains} domains for a pool of {}",
            pool.len()
        )));
    }
    let scored = run_scorer(
        scorer,
        source_params,
        source,
        target,
        pool,
        num_domains,
        config,
        seed_value,
    )?;
    if refine {
        let outcome = refine_sequence(
            source_params,
            source,
            &scored,
            num_domains + 1,
            &config.refine,
            seed::derive(seed_value, "idol-refine"),
        )?;
        DomainSequence::new(
            outcome.chunks,
            pool.len(),
            format!("{}+refined", scorer.name()),
        )
    } else {
        sort_and_chunk(&scored, num_domains)
    }
}

/// [`idol_with_params`] plus source-model training, for callers starting
/// from raw sets. The source model trains with seed tag "idol-source".
#[allow(clippy::too_many_arguments)]
pub fn idol(
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    num_domains: usize,
    scorer: ScorerChoice,
    refine: bool,
    config: &IdolConfig,
    seed_value: u64,
) -> Result<DomainSequence> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::contract("source set must be non-empty"));
    }
    let spec = config.classifier_spec(source.feature_dim(), source.inferred_classes())?;
    let (params, _) = train_supervised(
        &spec,
        source,
        &config.source_opt,
        seed::derive(seed_value, "idol-source"),
    )?;
    idol_with_params(
        &params, source, target, pool, num_domains, scorer, refine, config, seed_value,
    )
}

/// Walks a domain sequence by gradual self-training, finishing on the
/// target. Target labels, when given, only feed the per-step accuracy log.
#[allow(clippy::too_many_arguments)]
pub fn run_gda(
    source_params: &ClassifierParams,
    pool: &UnlabeledSet,
    sequence: &DomainSequence,
    target: &UnlabeledSet,
    eval_target: Option<&LabeledSet>,
    keep_frac: f64,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<(ClassifierParams, Vec<GradualStep>)> {
    if sequence.pool_len() != pool.len() {
        return Err(Error::contract(format!(
            "sequence covers a pool of {}, got {}",
            sequence.pool_len(),
            pool.len()
        )));
    }
    gradual_self_train(
        source_params,
        pool,
        sequence.chunks(),
        target,
        eval_target,
        keep_frac,
        opt,
        seed_value,
    )
}

/// Fraction of examples whose argmax prediction matches the label.
pub fn evaluate_accuracy(params: &ClassifierParams, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate accuracy on an empty set"));
    }
    let pred = predict(params, data.features())?;
    let hard = sharpen_labels(&pred);
    let correct = hard
        .iter()
        .zip(data.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Spearman and Pearson correlation between a discovered ordering and the
/// per-example ground-truth index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlations {
    pub spearman: f64,
    pub pearson: f64,
}

/// Correlates each example's position in `order` with its true index.
/// Spearman uses average ranks for ties; Pearson works on the raw values.
pub fn rank_correlations(order: &[usize], truth: &[f64]) -> Result<Correlations> {
    let n = truth.len();
    if order.len() != n {
        return Err(Error::contract(format!(
            "ordering of {} for {} truth values",
            order.len(),
            n
        )));
    }
    let mut position = vec![usize::MAX; n];
    for (pos, &i) in order.iter().enumerate() {
        if i >= n || position[i] != usize::MAX {
            return Err(Error::contract(format!(
                "ordering is not a permutation: index {i} repeated or out of range"
            )));
        }
        position[i] = pos;
    }
    let pos_real: Vec<f64> = position.iter().map(|&p| p as f64).collect();
    let spearman = pearson(&average_ranks(&pos_real), &average_ranks(truth))?;
    let pearson = pearson(&pos_real, truth)?;
    Ok(Correlations { spearman, pearson })
}

/// Spearman rank correlation between the flattened chunk order and the
/// ground-truth index of every pooled example.
pub fn sequence_correlation(sequence: &DomainSequence, truth: &[f64]) -> Result<f64> {
    Ok(rank_correlations(&sequence.flattened(), truth)?.spearman)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut s = 0;
    while s < order.len() {
        let mut e = s;
        while e + 1 < order.len() && v[order[e + 1]] == v[order[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for &i in &order[s..=e] {
            ranks[i] = avg;
        }
        s = e + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::numerical(
            "correlation",
            "zero variance in one of the sequences",
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Average over chunks of (largest class count)/(smallest class count)
/// under the true labels. A chunk missing a class entirely contributes ∞
/// and logs a warning.
pub fn class_balance_ratio(
    sequence: &DomainSequence,
    labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    if labels.len() != sequence.pool_len() {
        return Err(Error::contract(format!(
            "{} labels for a pool of {}",
            labels.len(),
            sequence.pool_len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::contract("class balance needs at least 2 classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::contract(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    let mut total = 0.0;
    for (m, chunk) in sequence.chunks().iter().enumerate() {
        let mut counts = vec![0usize; num_classes];
        for &i in chunk {
            counts[labels[i]] += 1;
        }
        let max = *counts.iter().max().expect("at least one class") as f64;
        let min = *counts.iter().min().expect("at least one class") as f64;
        if min == 0.0 {
            log::warn!("chunk {m} is missing at least one class entirely; ratio is infinite");
            total = f64::INFINITY;
        } else {
            total += max / min;
        }
    }
    Ok(total / sequence.num_chunks() as f64)
}

/// Inputs of the generalization bound for a gradual walk.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// Population loss of the source model.
    pub source_loss: f64,
    /// Bound on the data norm.
    pub data_bound: f64,
    /// Bound on the classifier norm.
    pub norm_bound: f64,
    /// Per-step distribution shift.
    pub per_step_shift: f64,
    /// Number of self-training steps.
    pub num_steps: usize,
    /// Unlabeled examples available per step.
    pub samples_per_domain: usize,
    /// Failure probability.
    pub delta: f64,
}

/// Evaluates the loss bound β^{M+1}·(L0 + (4BR + √(2·ln(2M/δ)))/√n) with
/// β = 2/(1−ρR), for per-step shift ρ, norm bound R, data bound B, source
/// loss L0, M steps, n samples per domain, and failure probability δ.
pub fn theory_bound(t: &TheoryInputs) -> Result<f64> {
    for (name, v) in [
        ("source_loss", t.source_loss),
        ("data_bound", t.data_bound),
        ("norm_bound", t.norm_bound),
        ("per_step_shift", t.per_step_shift),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::contract(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    if !(t.delta > 0.0 && t.delta < 1.0) {
        return Err(Error::contract(format!(
            "delta must lie in (0, 1), got {}",
            t.delta
        )));
    }
    if t.num_steps < 1 || t.samples_per_domain < 1 {
        return Err(Error::contract(
            "num_steps and samples_per_domain must be at least 1",
        ));
    }
    let rho_r = t.per_step_shift * t.norm_bound;
    if rho_r >= 1.0 {
        return Err(Error::assumption(format!(
            "gradual shift assumption violated: per-step shift times norm bound is {rho_r}, which must stay below 1"
        )));
    }
    let beta = 2.0 / (1.0 - rho_r);
    let m = t.num_steps as f64;
    let n = t.samples_per_domain as f64;
    let sampling = (4.0 * t.data_bound * t.norm_bound + (2.0 * (2.0 * m / t.delta).ln()).sqrt())
        / n.sqrt();
    Ok(beta.powi(t.num_steps as i32 + 1) * (t.source_loss + sampling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_rotated_gaussians;
    use crate::numerics::DenseMatrix;
    use crate::score::ExampleProvenance;

    fn scored_from(q: Vec<f64>) -> ScoredPool {
        let n = q.len();
        let pool = UnlabeledSet::new(DenseMatrix::zeros(n, 2));
        let provenance = vec![ExampleProvenance { round: None, rank: 0 }; n];
        ScoredPool::new(pool, q, "test", provenance).unwrap()
    }

    #[test]
    fn chunking_follows_the_hand_example() {
        let scored = scored_from(vec![0.9, 0.1, 0.5, 0.7]);
        let seq = sort_and_chunk(&scored, 2).unwrap();
        assert_eq!(seq.chunks(), &[vec![0, 3], vec![2, 1]]);
    }

    #[test]
    fn remainder_goes_to_the_target_side_chunk() {
        let scored = scored_from((0..7).map(|i| -(i as f64)).collect());
        let seq = sort_and_chunk(&scored, 3).unwrap();
        let sizes: Vec<usize> = seq.chunks().iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert_eq!(seq.flattened(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn one_domain_is_the_sorted_pool() {
        let scored = scored_from(vec![0.2, 0.8, 0.5]);
        let seq = sort_and_chunk(&scored, 1).unwrap();
        assert_eq!(seq.chunks(), &[vec![1, 2, 0]]);
    }

    #[test]
    fn more_domains_than_examples_is_rejected() {
        let scored = scored_from(vec![0.2, 0.8]);
        assert!(sort_and_chunk(&scored, 3).is_err());
    }

    #[test]
    fn equal_scores_break_ties_by_index() {
        let scored = scored_from(vec![0.5, 0.5, 0.5, 0.5]);
        let seq = sort_and_chunk(&scored, 2).unwrap();
        assert_eq!(seq.chunks(), &[vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn sequence_files_round_trip() {
        let seq = DomainSequence::new(vec![vec![2, 0], vec![1, 3, 4]], 5, "test").unwrap();
        let text = seq.to_string_repr();
        assert_eq!(text, "2,0\n1,3,4\n");
        let back = DomainSequence::parse(&text, 5, "test").unwrap();
        assert_eq!(back, seq);
        assert!(DomainSequence::parse("0,1\n1,2\n", 4, "t").is_err());
        assert!(DomainSequence::parse("0,1\n", 4, "t").is_err());
    }

    #[test]
    fn spearman_hand_values() {
        let truth = vec![1.0, 2.0, 3.0, 4.0];
        let identity = rank_correlations(&[0, 1, 2, 3], &truth).unwrap();
        assert!((identity.spearman - 1.0).abs() < 1e-12);
        assert!((identity.pearson - 1.0).abs() < 1e-12);
        let reversed = rank_correlations(&[3, 2, 1, 0], &truth).unwrap();
        assert!((reversed.spearman + 1.0).abs() < 1e-12);
        let swapped = rank_correlations(&[1, 0, 2, 3], &truth).unwrap();
        assert!((swapped.spearman - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_invariant_to_monotone_truth_relabeling() {
        let truth = vec![0.1, 0.4, 0.4, 0.9, 1.5, 2.0];
        let order = vec![2, 0, 1, 4, 3, 5];
        let base = rank_correlations(&order, &truth).unwrap().spearman;
        for transform in [|x: f64| x.exp(), |x: f64| 3.0 * x + 7.0, |x: f64| x.powi(3)] {
            let mapped: Vec<f64> = truth.iter().map(|&x| transform(x)).collect();
            let got = rank_correlations(&order, &mapped).unwrap().spearman;
            assert!((got - base).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_in_truth_use_average_ranks() {
        // Equal truth values make exchanged positions irrelevant.
        let truth = vec![1.0, 1.0, 2.0, 3.0];
        let a = rank_correlations(&[0, 1, 2, 3], &truth).unwrap().spearman;
        let b = rank_correlations(&[1, 0, 2, 3], &truth).unwrap().spearman;
        assert!((a - b).abs() < 1e-12);
        assert!(a < 1.0);
    }

    #[test]
    fn correlation_rejects_non_permutations() {
        assert!(rank_correlations(&[0, 0, 1], &[1.0, 2.0, 3.0]).is_err());
        assert!(rank_correlations(&[0, 1], &[1.0, 2.0, 3.0]).is_err());
        assert!(rank_correlations(&[0, 1, 2], &[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn class_balance_hand_values() {
        let seq = DomainSequence::new(vec![vec![0, 1], vec![2, 3]], 4, "t").unwrap();
        let balanced = class_balance_ratio(&seq, &[0, 1, 0, 1], 2).unwrap();
        assert!((balanced - 1.0).abs() < 1e-12);

        let seq1 = DomainSequence::new(vec![vec![0, 1, 2, 3]], 4, "t").unwrap();
        let skewed = class_balance_ratio(&seq1, &[0, 0, 0, 1], 2).unwrap();
        assert!((skewed - 3.0).abs() < 1e-12);

        let missing = class_balance_ratio(&seq, &[0, 0, 0, 1], 2).unwrap();
        assert!(missing.is_infinite());
    }

    #[test]
    fn bound_matches_the_closed_form_hand_value() {
        let t = TheoryInputs {
            source_loss: 0.0,
            data_bound: 0.0,
            norm_bound: 1.0,
            per_step_shift: 0.0,
            num_steps: 1,
            samples_per_domain: 10_000,
            delta: 0.5,
        };
        let expect = 4.0 * (2.0 * 4.0f64.ln()).sqrt() / 100.0;
        assert!((theory_bound(&t).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn bound_rejects_violated_shift_assumption() {
        let t = TheoryInputs {
            source_loss: 0.1,
            data_bound: 1.0,
            norm_bound: 2.0,
            per_step_shift: 0.5,
            num_steps: 3,
            samples_per_domain: 100,
            delta: 0.1,
        };
        let err = theory_bound(&t).unwrap_err();
        assert!(err.to_string().contains("gradual shift assumption violated"));
    }

    #[test]
    fn bound_grows_with_shift_and_steps() {
        let base = TheoryInputs {
            source_loss: 0.2,
            data_bound: 1.0,
            norm_bound: 0.8,
            per_step_shift: 0.0,
            num_steps: 1,
            samples_per_domain: 500,
            delta: 0.05,
        };
        let mut prev_rho = 0.0;
        for i in 0..10 {
            let rho = 0.1 * i as f64 / 8.0 / 0.8;
            let mut t = base;
            t.per_step_shift = rho;
            let b = theory_bound(&t).unwrap();
            if i > 0 {
                assert!(b > prev_rho);
            }
            prev_rho = b;
        }
        let mut prev_m = 0.0;
        for m in 1..=10 {
            let mut t = base;
            t.num_steps = m;
            let b = theory_bound(&t).unwrap();
            if m > 1 {
                assert!(b > prev_m);
            }
            prev_m = b;
        }
    }

    #[test]
    fn sampling_term_vanishes_with_infinite_data() {
        let t = TheoryInputs {
            source_loss: 0.3,
            data_bound: 1.0,
            norm_bound: 0.5,
            per_step_shift: 0.4,
            num_steps: 3,
            samples_per_domain: 1_000_000_000_000,
            delta: 0.1,
        };
        let beta: f64 = 2.0 / (1.0 - 0.4 * 0.5);
        let limit = beta.powi(4) * 0.3;
        let bound = theory_bound(&t).unwrap();
        assert!(bound >= limit);
        assert!(bound - limit < 1e-3, "residual sampling term {}", bound - limit);
    }

    #[test]
    fn accuracy_memorizes_a_tiny_set() {
        let data = LabeledSet::new(
            DenseMatrix::from_vec(3, 2, vec![0.0, 1.0, 1.0, 0.0, -1.0, -1.0]).unwrap(),
            vec![0, 1, 0],
        )
        .unwrap();
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let opt = OptimizerConfig {
            lr: 0.5,
            epochs: 300,
            ..OptimizerConfig::default()
        };
        let (params, _) = train_supervised(&spec, &data, &opt, 3).unwrap();
        assert_eq!(evaluate_accuracy(&params, &data).unwrap(), 1.0);
    }

    #[test]
    fn untrained_model_is_chance_level_on_balanced_data() {
        let n = 10_000;
        let mut rng = seed::rng(404);
        use rand::Rng;
        let feats: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = LabeledSet::new(DenseMatrix::from_vec(n, 2, feats).unwrap(), labels).unwrap();
        let params = ClassifierSpec::default_for(2, 2).unwrap().init(77).unwrap();
        let acc = evaluate_accuracy(&params, &data).unwrap();
        assert!((acc - 0.5).abs() < 0.02, "accuracy {acc}");
    }

    #[test]
    fn accuracy_rejects_empty_sets() {
        let params = ClassifierSpec::default_for(2, 2).unwrap().init(1).unwrap();
        let empty = LabeledSet::new(DenseMatrix::zeros(0, 2), vec![]).unwrap();
        assert!(evaluate_accuracy(&params, &empty).is_err());
    }

    fn small_stream() -> crate::data::ShiftStream {
        gen_rotated_gaussians(2, 20, 4, 80.0, 0.2, 31).unwrap()
    }

    #[test]
    fn idol_without_refinement_composes_scorer_and_chunker() {
        let stream = small_stream();
        let config = IdolConfig {
            scorer_opt: OptimizerConfig {
                epochs: 5,
                ..OptimizerConfig::default()
            },
            ..IdolConfig::default()
        };
        let target = stream.target.to_unlabeled();
        let seq = idol(
            &stream.source,
            &target,
            &stream.intermediate,
            3,
            ScorerChoice::Discriminator,
            false,
            &config,
            7,
        )
        .unwrap();

        let phi = train_discriminator(
            &stream.source.to_unlabeled(),
            &target,
            &config.scorer_opt,
            None,
            seed::derive(7, "idol-discriminator"),
        )
        .unwrap();
        let scored = score_discriminator(&phi, &stream.intermediate).unwrap();
        let direct = sort_and_chunk(&scored, 3).unwrap();
        assert_eq!(seq.chunks(), direct.chunks());
        assert_eq!(seq.method_tag(), "discriminator");
    }

    #[test]
    fn idol_single_domain_is_one_chunk_for_every_scorer() {
        let stream = small_stream();
        let config = IdolConfig {
            scorer_opt: OptimizerConfig {
                epochs: 3,
                ..OptimizerConfig::default()
            },
            ..IdolConfig::default()
        };
        let target = stream.target.to_unlabeled();
        for scorer in ScorerChoice::ALL {
            let seq = idol(
                &stream.source,
                &target,
                &stream.intermediate,
                1,
                scorer,
                false,
                &config,
                7,
            )
            .unwrap();
            assert_eq!(seq.num_chunks(), 1, "{}", scorer.name());
            assert_eq!(seq.chunks()[0].len(), stream.intermediate.len());
        }
    }

    #[test]
    fn idol_refined_output_partitions_the_pool() {
        let stream = small_stream();
        let config = IdolConfig {
            scorer_opt: OptimizerConfig {
                epochs: 3,
                ..OptimizerConfig::default()
            },
            refine: RefineConfig {
                t_steps: 2,
                epochs: 2,
                batch_size: 16,
                lr_theta: 0.05,
                lr_q: 0.05,
                ..RefineConfig::default()
            },
            ..IdolConfig::default()
        };
        let target = stream.target.to_unlabeled();
        let seq = idol(
            &stream.source,
            &target,
            &stream.intermediate,
            3,
            ScorerChoice::Manifold,
            true,
            &config,
            11,
        )
        .unwrap();
        assert_eq!(seq.method_tag(), "manifold+refined");
        assert_eq!(seq.num_chunks(), 3);
        let mut flat = seq.flattened();
        flat.sort_unstable();
        assert_eq!(flat, (0..stream.intermediate.len()).collect::<Vec<_>>());
    }

    #[test]
    fn gda_walk_logs_every_step() {
        let stream = small_stream();
        let spec = ClassifierSpec::default_for(2, 2).unwrap();
        let (params, _) =
            train_supervised(&spec, &stream.source, &OptimizerConfig::default(), 3).unwrap();
        let scored = scored_from(stream.truth_index.iter().map(|v| -v).collect());
        let scored = ScoredPool::new(
            stream.intermediate.clone(),
            scored.scores().to_vec(),
            "truth",
            scored.provenance().to_vec(),
        )
        .unwrap();
        let seq = sort_and_chunk(&scored, 3).unwrap();
        let target = stream.target.to_unlabeled();
        let (final_params, log) = run_gda(
            &params,
            &stream.intermediate,
            &seq,
            &target,
            Some(&stream.target),
            0.9,
            &OptimizerConfig::default(),
            13,
        )
        .unwrap();
        assert_eq!(log.len(), 4);
        assert!(log.iter().all(|s| s.target_accuracy.is_some()));
        let direct = evaluate_accuracy(&final_params, &stream.target).unwrap();
        assert_eq!(direct, log.last().unwrap().target_accuracy.unwrap());
    }
}
