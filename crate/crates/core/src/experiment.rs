//! Batch experiment harness: runs the full method-comparison grid over a
//! seed list and assembles the report files.
//!
//! For every seed the harness materializes one shift stream and trains one
//! source model, then runs each configured method as an independent cell.
//! A failing cell is recorded with its error message and never aborts the
//! other cells. The coarse stage of each discovery method is seeded by
//! (seed, scorer) only, so a refined cell and its unrefined counterpart
//! disagree in nothing but the refinement itself.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::adapt::{self_train, GradualStep};
use crate::config::ExperimentConfig;
use crate::data::{ShiftStream, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{train_supervised, ClassifierParams, ClassifierSpec};
use crate::pipeline::{
    evaluate_accuracy, run_gda, run_scorer, sort_and_chunk, DomainSequence, ScorerChoice,
};
use crate::refine::refine_sequence;
use crate::report::{
    mean_sd, render_cell_rows, render_step_rows, render_summary_rows, render_timing_rows,
    write_atomic, CellRow, Phase, StepRow, SummaryRow, TimingRow,
};
use crate::score::{scored_from_order, ScoredPool};
use crate::seed;

/// What a method does before any walk: nothing, a one-shot self-training
/// step, or a pool ordering for gradual self-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMethod {
    /// Evaluate the source model as is.
    SourceOnly,
    /// One self-training step on the unlabeled target set.
    UdaTarget,
    /// One self-training step on the pool and target merged.
    UdaAll,
    /// Walk the pool in the order of the generating shift parameter.
    GdaTruth,
    /// Walk the pool in a seeded random order.
    GdaRandom,
    /// Walk the pool in the order discovered by a coarse scorer.
    Idol(ScorerChoice),
}

impl BaseMethod {
    fn walks_pool(self) -> bool {
        matches!(self, Self::GdaTruth | Self::GdaRandom | Self::Idol(_))
    }

    fn tag(self) -> String {
        match self {
            Self::SourceOnly => "source-only".to_string(),
            Self::UdaTarget => "uda-t".to_string(),
            Self::UdaAll => "uda-t+u".to_string(),
            Self::GdaTruth => "gda-truth".to_string(),
            Self::GdaRandom => "gda-random".to_string(),
            Self::Idol(s) => format!("idol-{}", s.name()),
        }
    }
}

/// One column of the comparison grid: a base method, optionally followed by
/// cycle-consistency refinement of its pool ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub base: BaseMethod,
    pub refined: bool,
}

impl Method {
    pub fn tag(&self) -> String {
        let mut t = self.base.tag();
        if self.refined {
            t.push_str("+refined");
        }
        t
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (bare, refined) = match s.strip_suffix("+refined") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let base = match bare {
            "source-only" => BaseMethod::SourceOnly,
            "uda-t" => BaseMethod::UdaTarget,
            "uda-t+u" => BaseMethod::UdaAll,
            "gda-truth" => BaseMethod::GdaTruth,
            "gda-random" => BaseMethod::GdaRandom,
            _ => match bare.strip_prefix("idol-") {
                Some(scorer) => BaseMethod::Idol(ScorerChoice::parse(scorer)?),
                None => {
                    return Err(Error::contract(format!(
                        "unknown method {s:?}; expected source-only, uda-t, uda-t+u, \
                         gda-truth, gda-random, or idol-<scorer>, optionally +refined"
                    )))
                }
            },
        };
        if refined && !base.walks_pool() {
            return Err(Error::contract(format!(
                "method {s:?} never orders the pool, so it cannot be refined"
            )));
        }
        Ok(Self { base, refined })
    }

    /// The full comparison grid: baselines, oracle and random orderings,
    /// and every scorer with and without refinement.
    pub fn default_grid() -> Vec<Method> {
        let mut grid = vec![
            Method { base: BaseMethod::SourceOnly, refined: false },
            Method { base: BaseMethod::UdaTarget, refined: false },
            Method { base: BaseMethod::UdaAll, refined: false },
            Method { base: BaseMethod::GdaTruth, refined: false },
            Method { base: BaseMethod::GdaRandom, refined: false },
            Method { base: BaseMethod::GdaRandom, refined: true },
        ];
        for scorer in ScorerChoice::ALL {
            grid.push(Method { base: BaseMethod::Idol(scorer), refined: false });
            grid.push(Method { base: BaseMethod::Idol(scorer), refined: true });
        }
        grid
    }
}

/// The outcome of one (method, seed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method: Method,
    pub seed: u64,
    pub steps: Vec<StepRow>,
    pub final_accuracy: Option<f64>,
    pub sequence: Option<DomainSequence>,
    pub error: Option<String>,
    pub wall_time_ms: u128,
}

impl CellOutcome {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// All cells of a run plus the hash of the config that produced them.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_sha256: String,
    pub methods: Vec<Method>,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentReport {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(CellOutcome::is_ok)
    }

    pub fn step_rows(&self) -> Vec<StepRow> {
        self.cells.iter().flat_map(|c| c.steps.iter().cloned()).collect()
    }

    pub fn cell_rows(&self) -> Vec<CellRow> {
        self.cells
            .iter()
            .map(|c| CellRow {
                method: c.method.tag(),
                seed: c.seed,
                target_accuracy: c.final_accuracy,
                error: c.error.clone(),
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.methods
            .iter()
            .map(|m| {
                let cells: Vec<&CellOutcome> =
                    self.cells.iter().filter(|c| c.method == *m).collect();
                let values: Vec<f64> = cells.iter().filter_map(|c| c.final_accuracy).collect();
                let stats = mean_sd(&values);
                SummaryRow {
                    method: m.tag(),
                    num_seeds: cells.len(),
                    num_errors: cells.iter().filter(|c| !c.is_ok()).count(),
                    mean_target_accuracy: stats.map(|s| s.0),
                    sd_target_accuracy: stats.map(|s| s.1),
                    config_sha256: self.config_sha256.clone(),
                }
            })
            .collect()
    }

    pub fn timing_rows(&self) -> Vec<TimingRow> {
        self.cells
            .iter()
            .map(|c| TimingRow {
                method: c.method.tag(),
                seed: c.seed,
                wall_time_ms: c.wall_time_ms,
            })
            .collect()
    }

    /// Writes report.csv, cells.csv, summary.csv, timing.csv, the resolved
    /// config, and one sequence file per discovery cell. Returns the paths.
    pub fn write_files(&self, out_dir: &Path, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let emit = |name: &str, text: String| -> Result<PathBuf> {
            let path = out_dir.join(name);
            write_atomic(&path, &text)?;
            Ok(path)
        };
        written.push(emit("report.csv", render_step_rows(&self.step_rows()))?);
        written.push(emit("cells.csv", render_cell_rows(&self.cell_rows()))?);
        written.push(emit("summary.csv", render_summary_rows(&self.summary_rows()))?);
        written.push(emit("timing.csv", render_timing_rows(&self.timing_rows()))?);
        written.push(emit("config.resolved.toml", config.to_canonical_toml()?)?);
        for cell in &self.cells {
            if let Some(sequence) = &cell.sequence {
                let name = format!("seq_{}_{}.txt", cell.method.tag(), cell.seed);
                written.push(emit(&name, sequence.to_string_repr())?);
            }
        }
        Ok(written)
    }
}

fn resolve_methods(config: &ExperimentConfig) -> Result<Vec<Method>> {
    let methods = match &config.methods {
        None => Method::default_grid(),
        Some(tags) => tags
            .iter()
            .map(|t| Method::parse(t))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut seen = HashSet::new();
    for m in &methods {
        if !seen.insert(m.tag()) {
            return Err(Error::contract(format!(
                "method {} listed twice; each (method, seed) cell must be unique",
                m.tag()
            )));
        }
    }
    Ok(methods)
}

/// Runs the configured grid. Per-cell failures come back inside the report;
/// only structural problems (bad config, unusable dataset) fail the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let methods = resolve_methods(config)?;
    let config_sha256 = config.sha256_hex()?;
    let mut cells = Vec::with_capacity(methods.len() * config.seeds.len());
    for &seed_value in &config.seeds {
        let prepared = prepare_seed(config, seed_value);
        match prepared {
            Ok((stream, spec, source_params)) => {
                for &method in &methods {
                    cells.push(run_cell(
                        config,
                        method,
                        seed_value,
                        &stream,
                        &spec,
                        &source_params,
                    ));
                }
            }
            Err(e) => {
                // The whole seed is unusable; record the failure on each of
                // its cells so the grid stays complete.
                let message = format!("seed setup failed: {e}");
                for &method in &methods {
                    cells.push(CellOutcome {
                        method,
                        seed: seed_value,
                        steps: Vec::new(),
                        final_accuracy: None,
                        sequence: None,
                        error: Some(message.clone()),
                        wall_time_ms: 0,
                    });
                }
            }
        }
    }
    Ok(ExperimentReport {
        config_sha256,
        methods,
        cells,
    })
}

/// Convenience wrapper: runs the grid and writes every report file into the
/// config's output directory.
pub fn run_and_write(config: &ExperimentConfig) -> Result<(ExperimentReport, Vec<PathBuf>)> {
    let report = run_experiment(config)?;
    let out_dir = config.out_dir();
    let written = report.write_files(&out_dir, config)?;
    Ok((report, written))
}

fn prepare_seed(
    config: &ExperimentConfig,
    seed_value: u64,
) -> Result<(ShiftStream, ClassifierSpec, ClassifierParams)> {
    let stream = config.dataset.load(seed::derive(seed_value, "stream"))?;
    let num_classes = stream
        .source
        .inferred_classes()
        .max(stream.target.inferred_classes());
    let spec = config
        .idol_config()
        .classifier_spec(stream.source.feature_dim(), num_classes)?;
    let (source_params, _) = train_supervised(
        &spec,
        &stream.source,
        &config.source_opt,
        seed::derive(seed_value, "source-model"),
    )?;
    Ok((stream, spec, source_params))
}

fn run_cell(
    config: &ExperimentConfig,
    method: Method,
    seed_value: u64,
    stream: &ShiftStream,
    spec: &ClassifierSpec,
    source_params: &ClassifierParams,
) -> CellOutcome {
    let start = Instant::now();
    let result = execute_cell(config, method, seed_value, stream, spec, source_params);
    let wall_time_ms = start.elapsed().as_millis();
    match result {
        Ok((steps, final_accuracy, sequence)) => CellOutcome {
            method,
            seed: seed_value,
            steps,
            final_accuracy: Some(final_accuracy),
            sequence,
            error: None,
            wall_time_ms,
        },
        Err(e) => CellOutcome {
            method,
            seed: seed_value,
            steps: Vec::new(),
            final_accuracy: None,
            sequence: None,
            error: Some(e.to_string()),
            wall_time_ms,
        },
    }
}

type CellResult = Result<(Vec<StepRow>, f64, Option<DomainSequence>)>;

fn execute_cell(
    config: &ExperimentConfig,
    method: Method,
    seed_value: u64,
    stream: &ShiftStream,
    spec: &ClassifierSpec,
    source_params: &ClassifierParams,
) -> CellResult {
    let tag = method.tag();
    let target_pool = stream.target.to_unlabeled();
    match method.base {
        BaseMethod::SourceOnly => {
            let accuracy = evaluate_accuracy(source_params, &stream.target)?;
            let steps = vec![StepRow {
                method: tag,
                seed: seed_value,
                phase: Phase::Walk,
                step: 0,
                domain_index: None,
                target_accuracy: Some(accuracy),
                cycle_loss: None,
            }];
            Ok((steps, accuracy, None))
        }
        BaseMethod::UdaTarget => {
            let params = self_train(
                source_params,
                &target_pool,
                config.keep_frac,
                &config.domain_opt,
                seed::derive(seed_value, "uda-t"),
            )?;
            let accuracy = evaluate_accuracy(&params, &stream.target)?;
            let steps = vec![StepRow {
                method: tag,
                seed: seed_value,
                phase: Phase::Walk,
                step: 1,
                domain_index: None,
                target_accuracy: Some(accuracy),
                cycle_loss: None,
            }];
            Ok((steps, accuracy, None))
        }
        BaseMethod::UdaAll => {
            let merged = UnlabeledSet::new(
                stream
                    .intermediate
                    .features()
                    .vstack(stream.target.features())?,
            );
            let params = self_train(
                source_params,
                &merged,
                config.keep_frac,
                &config.domain_opt,
                seed::derive(seed_value, "uda-t+u"),
            )?;
            let accuracy = evaluate_accuracy(&params, &stream.target)?;
            let steps = vec![StepRow {
                method: tag,
                seed: seed_value,
                phase: Phase::Walk,
                step: 1,
                domain_index: None,
                target_accuracy: Some(accuracy),
                cycle_loss: None,
            }];
            Ok((steps, accuracy, None))
        }
        BaseMethod::GdaTruth | BaseMethod::GdaRandom | BaseMethod::Idol(_) => {
            walk_cell(config, method, seed_value, stream, spec, source_params, &target_pool)
        }
    }
}

/// Orders the pool per the base method, optionally refines, then walks the
/// discovered sequence with gradual self-training.
#[allow(clippy::too_many_arguments)]
fn walk_cell(
    config: &ExperimentConfig,
    method: Method,
    seed_value: u64,
    stream: &ShiftStream,
    _spec: &ClassifierSpec,
    source_params: &ClassifierParams,
    target_pool: &UnlabeledSet,
) -> CellResult {
    let tag = method.tag();
    let pool = &stream.intermediate;
    // The coarse stage is seeded independently of the refine flag so the
    // refined cell starts from the exact ordering its counterpart walks.
    let scored: ScoredPool = match method.base {
        BaseMethod::GdaTruth => scored_from_order(pool, &truth_order(stream)?, "truth")?,
        BaseMethod::GdaRandom => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            let mut rng = seed::rng(seed::derive(seed_value, "order-random"));
            order.shuffle(&mut rng);
            scored_from_order(pool, &order, "random")?
        }
        BaseMethod::Idol(scorer) => run_scorer(
            scorer,
            source_params,
            &stream.source,
            target_pool,
            pool,
            config.num_domains,
            &config.idol_config(),
            seed::derive(seed_value, &format!("score-{}", scorer.name())),
        )?,
        _ => unreachable!("walk_cell only receives pool-walking methods"),
    };

    let mut steps = Vec::new();
    let sequence = if method.refined {
        let outcome = refine_sequence(
            source_params,
            &stream.source,
            &scored,
            config.num_domains + 1,
            &config.refinement,
            seed::derive(seed_value, &format!("refine-{}", scored.scorer_id())),
        )?;
        for (domain_index, losses) in outcome.cycle_losses.iter().enumerate() {
            for (epoch, &loss) in losses.iter().enumerate() {
                steps.push(StepRow {
                    method: tag.clone(),
                    seed: seed_value,
                    phase: Phase::Refine,
                    step: epoch + 1,
                    domain_index: Some(domain_index),
                    target_accuracy: None,
                    cycle_loss: Some(loss),
                });
            }
        }
        DomainSequence::new(
            outcome.chunks,
            pool.len(),
            format!("{}+refined", scored.scorer_id()),
        )?
    } else {
        sort_and_chunk(&scored, config.num_domains)?
    };

    let (final_params, walk) = run_gda(
        source_params,
        pool,
        &sequence,
        target_pool,
        Some(&stream.target),
        config.keep_frac,
        &config.domain_opt,
        seed::derive(seed_value, &format!("walk-{tag}")),
    )?;
    let num_chunks = sequence.num_chunks();
    for GradualStep {
        step,
        target_accuracy,
        ..
    } in walk
    {
        // The final step trains on the target set itself, not a pool chunk.
        let domain_index = if step <= num_chunks { Some(step - 1) } else { None };
        steps.push(StepRow {
            method: tag.clone(),
            seed: seed_value,
            phase: Phase::Walk,
            step,
            domain_index,
            target_accuracy,
            cycle_loss: None,
        });
    }
    let accuracy = evaluate_accuracy(&final_params, &stream.target)?;
    Ok((steps, accuracy, Some(sequence)))
}

/// Pool order by the generating shift parameter, most source-like first.
fn truth_order(stream: &ShiftStream) -> Result<Vec<usize>> {
    if stream.truth_index.len() != stream.intermediate.len() {
        return Err(Error::contract(format!(
            "{} truth indices for {} pooled examples",
            stream.truth_index.len(),
            stream.intermediate.len()
        )));
    }
    let mut order: Vec<usize> = (0..stream.truth_index.len()).collect();
    order.sort_by(|&a, &b| {
        stream.truth_index[a]
            .partial_cmp(&stream.truth_index[b])
            .expect("truth indices are finite")
            .then(a.cmp(&b))
    });
    Ok(order)
}
