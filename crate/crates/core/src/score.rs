//! Coarse scoring: four interchangeable ways to assign each pooled example
//! a score q where higher means closer to the source domain.

use std::path::Path;

use crate::adapt::self_train;
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{
    confidence, discriminator_scores, penultimate_activations, predict, train_discriminator,
    ClassifierParams, DiscriminatorParams, OptimizerConfig,
};
use crate::numerics::{pca_fit, DenseMatrix};
use crate::report::{fmt_g6, write_atomic};
use crate::seed;

/// Where an example's score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleProvenance {
    /// 1-based round that assigned the score; `None` for single-shot scorers
    /// and for progressive leftovers.
    pub round: Option<usize>,
    /// Position in the ranking that selected the example (0 = top).
    pub rank: usize,
}

/// A pool with one score per example plus the metadata proving how each
/// score was assigned.
#[derive(Debug, Clone)]
pub struct ScoredPool {
    pool: UnlabeledSet,
    q: Vec<f64>,
    scorer_id: String,
    provenance: Vec<ExampleProvenance>,
}

impl ScoredPool {
    pub fn new(
        pool: UnlabeledSet,
        q: Vec<f64>,
        scorer_id: impl Into<String>,
        provenance: Vec<ExampleProvenance>,
    ) -> Result<Self> {
        if q.len() != pool.len() || provenance.len() != pool.len() {
            return Err(Error::contract(format!(
                "{} scores and {} provenance entries for {} pooled examples",
                q.len(),
                provenance.len(),
                pool.len()
            )));
        }
        if let Some(bad) = q.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite score {bad}")));
        }
        Ok(Self {
            pool,
            q,
            scorer_id: scorer_id.into(),
            provenance,
        })
    }

    pub fn pool(&self) -> &UnlabeledSet {
        &self.pool
    }

    pub fn scores(&self) -> &[f64] {
        &self.q
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    pub fn provenance(&self) -> &[ExampleProvenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Pool indices sorted by score descending, ties toward the smaller
    /// index: the canonical source-to-target ordering.
    pub fn descending_order(&self) -> Vec<usize> {
        descending_order(&self.q)
    }

    /// CSV rows `(example_id, score, scorer_id, round)`; the round column is
    /// empty for scores not tied to a round.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("example_id,score,scorer_id,round\n");
        for i in 0..self.q.len() {
            let round = match self.provenance[i].round {
                Some(r) => r.to_string(),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                i,
                fmt_g6(self.q[i]),
                self.scorer_id,
                round
            ));
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv_string())
    }
}

/// Argsort descending with ascending-index tie-break.
pub(crate) fn descending_order(q: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Wraps an explicit source-to-target ordering as a scored pool: the
/// example ranked r (0 = most source-like) gets score (n-r)/n, so sorting
/// the scores reproduces `order` exactly.
pub fn scored_from_order(
    pool: &UnlabeledSet,
    order: &[usize],
    scorer_id: impl Into<String>,
) -> Result<ScoredPool> {
    let n = pool.len();
    if order.len() != n {
        return Err(Error::contract(format!(
            "ordering of {} entries for {} pooled examples",
            order.len(),
            n
        )));
    }
    let mut q = vec![f64::NAN; n];
    let mut provenance = vec![ExampleProvenance { round: None, rank: 0 }; n];
    for (rank, &idx) in order.iter().enumerate() {
        if idx >= n || !q[idx].is_nan() {
            return Err(Error::contract(format!(
                "ordering must be a permutation of 0..{n}, offending entry {idx}"
            )));
        }
        q[idx] = (n - rank) as f64 / n as f64;
        provenance[idx].rank = rank;
    }
    ScoredPool::new(pool.clone(), q, scorer_id, provenance)
}

/// Reads a score CSV written by [`ScoredPool::export_csv`] back onto its
/// pool. Every pool index must appear exactly once.
pub fn scored_from_csv(path: &Path, pool: &UnlabeledSet) -> Result<ScoredPool> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format(0, format!("score csv open failed: {e}")))?;
    let n = pool.len();
    let mut q = vec![f64::NAN; n];
    let mut provenance = vec![ExampleProvenance { round: None, rank: 0 }; n];
    let mut scorer_id: Option<String> = None;
    let mut seen = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(line as u64 + 2, format!("{e}")))?;
        if record.len() != 4 {
            return Err(Error::format(
                line as u64 + 2,
                format!("expected 4 columns (example_id,score,scorer_id,round), got {}", record.len()),
            ));
        }
        let idx: usize = record[0]
            .parse()
            .map_err(|e| Error::format(line as u64 + 2, format!("bad example_id: {e}")))?;
        let score: f64 = record[1]
            .parse()
            .map_err(|e| Error::format(line as u64 + 2, format!("bad score: {e}")))?;
        if idx >= n || !q[idx].is_nan() {
            return Err(Error::format(
                line as u64 + 2,
                format!("example_id must cover 0..{n} exactly once, offending id {idx}"),
            ));
        }
        match &scorer_id {
            None => scorer_id = Some(record[2].to_string()),
            Some(id) if id != &record[2] => {
                return Err(Error::format(
                    line as u64 + 2,
                    format!("mixed scorer_id values: {} and {}", id, &record[2]),
                ));
            }
            Some(_) => {}
        }
        let round = if record[3].is_empty() {
            None
        } else {
            Some(record[3].parse::<usize>().map_err(|e| {
                Error::format(line as u64 + 2, format!("bad round: {e}"))
            })?)
        };
        q[idx] = score;
        provenance[idx] = ExampleProvenance { round, rank: 0 };
        seen += 1;
    }
    if seen != n {
        return Err(Error::format(
            0,
            format!("score csv covers {seen} of {n} pooled examples"),
        ));
    }
    // Ranks are not persisted in the CSV; reconstruct them from the scores.
    for (rank, &idx) in descending_order(&q).iter().enumerate() {
        provenance[idx].rank = rank;
    }
    let scorer_id = scorer_id.unwrap_or_else(|| "unknown".to_string());
    ScoredPool::new(pool.clone(), q, scorer_id, provenance)
}

/// Iterative confidence scoring: M−1 rounds of selecting the most confident
/// remaining examples under the current model, scoring round m as
/// (M−1−m)/(M−2), and self-training on the selection.
pub fn score_confidence_iterative(
    source_params: &ClassifierParams,
    pool: &UnlabeledSet,
    m_domains: usize,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<ScoredPool> {
    if m_domains < 3 {
        return Err(Error::contract(format!(
            "confidence scoring needs at least 3 domains, got {m_domains}"
        )));
    }
    let rounds = m_domains - 1;
    let n = pool.len();
    if n < rounds {
        return Err(Error::contract(format!(
            "pool of {n} cannot fill {rounds} scoring rounds"
        )));
    }
    let per_round = n / rounds;
    let mut q = vec![0.0; n];
    let mut provenance = vec![
        ExampleProvenance {
            round: None,
            rank: 0,
        };
        n
    ];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut params = source_params.clone();
    for m in 1..=rounds {
        let count = if m == rounds { remaining.len() } else { per_round };
        let subset = pool.subset(&remaining)?;
        let conf = confidence(&predict(&params, subset.features())?);
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            conf[b]
                .partial_cmp(&conf[a])
                .unwrap()
                .then(remaining[a].cmp(&remaining[b]))
        });
        let score = (m_domains - 1 - m) as f64 / (m_domains - 2) as f64;
        let selected: Vec<usize> = order[..count].iter().map(|&j| remaining[j]).collect();
        for (rank, &i) in selected.iter().enumerate() {
            q[i] = score;
            provenance[i] = ExampleProvenance {
                round: Some(m),
                rank,
            };
        }
        remaining = order[count..].iter().map(|&j| remaining[j]).collect();
        if m < rounds {
            // The model after the final round is never consulted again.
            params = self_train(
                &params,
                &pool.subset(&selected)?,
                1.0,
                opt,
                seed::derive_idx(seed_value, "confidence-round", m as u64),
            )?;
        }
    }
    ScoredPool::new(pool.clone(), q, "confidence", provenance)
}

/// Maps a feature matrix to low-dimensional coordinates, rows aligned.
pub trait Embedding {
    fn embed(&self, features: &DenseMatrix) -> Result<DenseMatrix>;
    fn name(&self) -> &str;
}

/// Principal-component projection onto the top `dim` directions.
#[derive(Debug, Clone, Copy)]
pub struct PcaEmbedding {
    pub dim: usize,
}

impl Embedding for PcaEmbedding {
    fn embed(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if self.dim == 0 || self.dim > features.cols() {
            return Err(Error::contract(format!(
                "embedding dimension {} outside 1..={}",
                self.dim,
                features.cols()
            )));
        }
        let pca = pca_fit(features, self.dim)?;
        pca.transform(features)
    }

    fn name(&self) -> &str {
        "pca"
    }
}

const DISTANCE_EPS: f64 = 1e-8;

/// Manifold distance-ratio scoring with the default principal-component
/// embedding of the classifier's penultimate activations.
pub fn score_manifold(
    source_params: &ClassifierParams,
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    embed_dim: usize,
) -> Result<ScoredPool> {
    score_manifold_with(source_params, source, target, pool, &PcaEmbedding { dim: embed_dim })
}

/// Manifold scoring under any embedding: penultimate activations of
/// S ∪ T ∪ pool are embedded jointly and each pooled example is scored
/// q = (ε + nearest-target-distance)/(ε + nearest-source-distance).
pub fn score_manifold_with(
    source_params: &ClassifierParams,
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    embedding: &dyn Embedding,
) -> Result<ScoredPool> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::contract(
            "manifold scoring needs non-empty source and target sets",
        ));
    }
    if pool.is_empty() {
        return Err(Error::contract("cannot score an empty pool"));
    }
    let joint = source
        .features()
        .vstack(target.features())?
        .vstack(pool.features())?;
    let activations = penultimate_activations(source_params, &joint)?;
    let embedded = embedding.embed(&activations)?;
    let ns = source.len();
    let nt = target.len();
    let mut q = Vec::with_capacity(pool.len());
    for i in 0..pool.len() {
        let z = embedded.row(ns + nt + i);
        let d_s = nearest_distance(z, &embedded, 0, ns);
        let d_t = nearest_distance(z, &embedded, ns, ns + nt);
        q.push((DISTANCE_EPS + d_t) / (DISTANCE_EPS + d_s));
    }
    let provenance = rank_only_provenance(&q);
    ScoredPool::new(pool.clone(), q, format!("manifold-{}", embedding.name()), provenance)
}

fn nearest_distance(z: &[f64], embedded: &DenseMatrix, from: usize, to: usize) -> f64 {
    let mut best = f64::INFINITY;
    for r in from..to {
        let row = embedded.row(r);
        let d2: f64 = z
            .iter()
            .zip(row)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2 < best {
            best = d2;
        }
    }
    best.sqrt()
}

fn rank_only_provenance(q: &[f64]) -> Vec<ExampleProvenance> {
    let order = descending_order(q);
    let mut provenance = vec![
        ExampleProvenance {
            round: None,
            rank: 0,
        };
        q.len()
    ];
    for (rank, &i) in order.iter().enumerate() {
        provenance[i].rank = rank;
    }
    provenance
}

/// Scores every pooled example by the trained domain discriminator's
/// probability of being source, q = σ(g(x; φ)).
pub fn score_discriminator(phi: &DiscriminatorParams, pool: &UnlabeledSet) -> Result<ScoredPool> {
    if pool.is_empty() {
        return Err(Error::contract("cannot score an empty pool"));
    }
    let q = discriminator_scores(phi, pool.features())?;
    let provenance = rank_only_provenance(&q);
    ScoredPool::new(pool.clone(), q, "discriminator", provenance)
}

/// Progressive discriminator scoring: K rounds of fine-tuning the
/// discriminator on the growing source/target sets, absorbing the most
/// source-like remaining examples into the source side with score
/// (2K−k)/(2K) and the most target-like into the target side with score
/// k/(2K). Examples left over by rounding are scored 1/2.
pub fn score_progressive(
    source: &LabeledSet,
    target: &UnlabeledSet,
    pool: &UnlabeledSet,
    k_rounds: usize,
    opt: &OptimizerConfig,
    seed_value: u64,
) -> Result<ScoredPool> {
    if k_rounds == 0 {
        return Err(Error::contract("progressive scoring needs at least one round"));
    }
    if pool.len() < 2 * k_rounds {
        return Err(Error::contract(format!(
            "pool of {} cannot feed {} progressive rounds (needs at least {})",
            pool.len(),
            k_rounds,
            2 * k_rounds
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::contract(
            "progressive scoring needs non-empty source and target sets",
        ));
    }
    if k_rounds == 1 {
        log::warn!(
            "progressive scoring with K = 1 assigns every absorbed example 1/2; use K >= 2 for a nontrivial ordering"
        );
    }
    let n = pool.len();
    let per_side = n / (2 * k_rounds);
    let mut q = vec![0.5; n];
    let mut provenance = vec![
        ExampleProvenance {
            round: None,
            rank: 0,
        };
        n
    ];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut src_features = source.features().clone();
    let mut tgt_features = target.features().clone();
    let mut phi: Option<DiscriminatorParams> = None;
    for k in 1..=k_rounds {
        let src_set = UnlabeledSet::new(src_features.clone());
        let tgt_set = UnlabeledSet::new(tgt_features.clone());
        let trained = train_discriminator(
            &src_set,
            &tgt_set,
            opt,
            phi.as_ref(),
            seed::derive_idx(seed_value, "progressive-round", k as u64),
        )?;
        let subset = pool.subset(&remaining)?;
        let scores = discriminator_scores(&trained, subset.features())?;
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then(remaining[a].cmp(&remaining[b]))
        });
        let top_score = (2 * k_rounds - k) as f64 / (2 * k_rounds) as f64;
        let bottom_score = k as f64 / (2 * k_rounds) as f64;
        for (rank, &j) in order[..per_side].iter().enumerate() {
            let i = remaining[j];
            q[i] = top_score;
            provenance[i] = ExampleProvenance {
                round: Some(k),
                rank,
            };
            src_features = src_features.vstack(&one_row(pool.features(), i))?;
        }
        let bottom_start = order.len() - per_side;
        for (off, &j) in order[bottom_start..].iter().enumerate() {
            let i = remaining[j];
            q[i] = bottom_score;
            provenance[i] = ExampleProvenance {
                round: Some(k),
                rank: bottom_start + off,
            };
            tgt_features = tgt_features.vstack(&one_row(pool.features(), i))?;
        }
        remaining = order[per_side..bottom_start]
            .iter()
            .map(|&j| remaining[j])
            .collect();
        phi = Some(trained);
    }
    ScoredPool::new(pool.clone(), q, "progressive", provenance)
}

fn one_row(features: &DenseMatrix, i: usize) -> DenseMatrix {
    features.gather_rows(&[i]).expect("row index in range")
}

/// Default progressive round count: twice the domain count, clamped so the
/// pool can feed every round.
pub fn default_progressive_rounds(num_domains: usize, pool_len: usize) -> usize {
    (2 * num_domains.max(1)).clamp(1, (pool_len / 2).max(1))
}
