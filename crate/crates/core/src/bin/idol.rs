//! Command-line front end. Each subcommand wraps one pipeline operation and
//! exchanges data through files (stream CSV, model file, score CSV, sequence
//! file, report CSVs), so stages compose:
//!
//! ```text
//! idol gen --out stream.csv
//! idol train-source --stream stream.csv --out model.bin
//! idol score --stream stream.csv --model model.bin --out scores.csv
//! idol refine --stream stream.csv --model model.bin --scores scores.csv --out seq.txt
//! idol gda --stream stream.csv --model model.bin --seq seq.txt --out walk.csv
//! idol experiment --config run.toml --out results/
//! idol bound --source-loss 0 --data-bound 1 --norm-bound 1 --per-step-shift 0.01 \
//!     --num-steps 10 --samples-per-domain 400
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idol_core::config::ExperimentConfig;
use idol_core::data::{stream_from_csv, stream_to_csv, ShiftStream};
use idol_core::error::Result;
use idol_core::experiment::run_experiment;
use idol_core::model::{train_supervised, ClassifierParams};
use idol_core::pipeline::{
    evaluate_accuracy, run_gda, run_scorer, theory_bound, DomainSequence, ScorerChoice,
    TheoryInputs,
};
use idol_core::refine::refine_sequence;
use idol_core::report::{fmt_g6, render_step_rows, write_atomic, Phase, StepRow};
use idol_core::score::scored_from_csv;
use idol_core::seed;

#[derive(Parser)]
#[command(
    name = "idol",
    version,
    about = "Discover intermediate domains in an unindexed pool and adapt a classifier across them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config fields exposed as flags. Every value set here wins over the
/// config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Number of discovered intermediate domains.
    #[arg(long, global = true)]
    num_domains: Option<usize>,
    /// Coarse scorer: confidence, manifold, discriminator, or progressive.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Apply cycle-consistency refinement after coarse scoring.
    #[arg(long, global = true, conflicts_with = "no_refine")]
    refine: bool,
    /// Disable refinement even if the config enables it.
    #[arg(long, global = true)]
    no_refine: bool,
    /// Confidence fraction kept by every self-training step.
    #[arg(long, global = true)]
    keep_frac: Option<f64>,
    /// Unrolled self-training steps per refinement pass.
    #[arg(long, global = true)]
    t_steps: Option<usize>,
    /// Refinement epochs per discovered domain.
    #[arg(long, global = true)]
    refine_epochs: Option<usize>,
    /// Minibatch size inside the unrolled refinement passes.
    #[arg(long, global = true)]
    refine_batch: Option<usize>,
    /// Step size of the unrolled parameter updates.
    #[arg(long, global = true)]
    lr_theta: Option<f64>,
    /// Step size of the refinement weight updates.
    #[arg(long, global = true)]
    lr_q: Option<f64>,
    /// Outer cycle loss: cross_entropy or squared_error.
    #[arg(long, global = true)]
    cycle_loss: Option<String>,
    /// Source-training epochs.
    #[arg(long, global = true)]
    source_epochs: Option<usize>,
    /// Source-training learning rate.
    #[arg(long, global = true)]
    source_lr: Option<f64>,
    /// Self-training epochs per walked domain.
    #[arg(long, global = true)]
    domain_epochs: Option<usize>,
    /// Self-training learning rate per walked domain.
    #[arg(long, global = true)]
    domain_lr: Option<f64>,
    /// Scorer-internal training epochs.
    #[arg(long, global = true)]
    scorer_epochs: Option<usize>,
    /// Scorer-internal learning rate.
    #[arg(long, global = true)]
    scorer_lr: Option<f64>,
    /// Embedding width for the manifold scorer.
    #[arg(long, global = true)]
    embed_dim: Option<usize>,
    /// Rounds of the progressive scorer.
    #[arg(long, global = true)]
    progressive_rounds: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.num_domains {
            config.num_domains = v;
        }
        if let Some(s) = &self.scorer {
            config.scorer = ScorerChoice::parse(s)?;
        }
        if self.refine {
            config.refine = true;
        }
        if self.no_refine {
            config.refine = false;
        }
        if let Some(v) = self.keep_frac {
            config.keep_frac = v;
        }
        if let Some(v) = self.t_steps {
            config.refinement.t_steps = v;
        }
        if let Some(v) = self.refine_epochs {
            config.refinement.epochs = v;
        }
        if let Some(v) = self.refine_batch {
            config.refinement.batch_size = v;
        }
        if let Some(v) = self.lr_theta {
            config.refinement.lr_theta = v;
        }
        if let Some(v) = self.lr_q {
            config.refinement.lr_q = v;
        }
        if let Some(s) = &self.cycle_loss {
            config.refinement.cycle_loss = idol_core::refine::CycleLoss::parse(s)?;
        }
        if let Some(v) = self.source_epochs {
            config.source_opt.epochs = v;
        }
        if let Some(v) = self.source_lr {
            config.source_opt.lr = v;
        }
        if let Some(v) = self.domain_epochs {
            config.domain_opt.epochs = v;
        }
        if let Some(v) = self.domain_lr {
            config.domain_opt.lr = v;
        }
        if let Some(v) = self.scorer_epochs {
            config.scorer_opt.epochs = v;
        }
        if let Some(v) = self.scorer_lr {
            config.scorer_opt.lr = v;
        }
        if let Some(v) = self.embed_dim {
            config.embed_dim = v;
        }
        if let Some(v) = self.progressive_rounds {
            config.progressive_rounds = Some(v);
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shift stream and write it as CSV.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the source model on a stream's labeled source split.
    TrainSource {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score the intermediate pool with one coarse scorer.
    Score {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Refine a coarse score file into a domain sequence.
    Refine {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-epoch cycle losses.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Walk a domain sequence with gradual self-training.
    Gda {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Method label recorded in the walk CSV.
        #[arg(long, default_value = "gda")]
        method: String,
        /// Per-step walk CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to save the adapted model.
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate the gradual self-training error bound.
    Bound {
        /// Population loss of the source model on the source domain.
        #[arg(long)]
        source_loss: f64,
        /// Bound on the per-example loss scale.
        #[arg(long)]
        data_bound: f64,
        /// Bound on the parameter norm.
        #[arg(long)]
        norm_bound: f64,
        /// Distribution shift per step.
        #[arg(long)]
        per_step_shift: f64,
        /// Number of gradual steps.
        #[arg(long)]
        num_steps: usize,
        /// Unlabeled examples per domain.
        #[arg(long)]
        samples_per_domain: usize,
        /// Confidence level.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Run the full method-comparison grid and write report files.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides config and IDOL_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run (repeatable; overrides the config list).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Method tags to run (repeatable; overrides the config list).
        #[arg(long = "method")]
        methods: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

fn load_stream(path: &PathBuf) -> Result<ShiftStream> {
    stream_from_csv(path)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen {
            config,
            seed,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let stream = config.dataset.load(seed::derive(seed, "stream"))?;
            stream_to_csv(&stream, &out)?;
            println!(
                "wrote stream: {} source, {} intermediate, {} target -> {}",
                stream.source.len(),
                stream.intermediate.len(),
                stream.target.len(),
                out.display()
            );
            Ok(true)
        }
        Command::TrainSource {
            stream,
            config,
            seed,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let stream = load_stream(&stream)?;
            let num_classes = stream
                .source
                .inferred_classes()
                .max(stream.target.inferred_classes());
            let spec = config
                .idol_config()
                .classifier_spec(stream.source.feature_dim(), num_classes)?;
            let (params, _) = train_supervised(
                &spec,
                &stream.source,
                &config.source_opt,
                seed::derive(seed, "source-model"),
            )?;
            let source_acc = evaluate_accuracy(&params, &stream.source)?;
            params.save(&out)?;
            println!(
                "source accuracy {}; wrote model -> {}",
                fmt_g6(source_acc),
                out.display()
            );
            Ok(true)
        }
        Command::Score {
            stream,
            model,
            config,
            seed,
            out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let stream = load_stream(&stream)?;
            let params = ClassifierParams::load(&model)?;
            let scored = run_scorer(
                config.scorer,
                &params,
                &stream.source,
                &stream.target.to_unlabeled(),
                &stream.intermediate,
                config.num_domains,
                &config.idol_config(),
                seed::derive(seed, &format!("score-{}", config.scorer.name())),
            )?;
            scored.export_csv(&out)?;
            println!(
                "scored {} examples with {} -> {}",
                scored.len(),
                scored.scorer_id(),
                out.display()
            );
            Ok(true)
        }
        Command::Refine {
            stream,
            model,
            scores,
            config,
            seed,
            out,
            losses,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let stream = load_stream(&stream)?;
            let params = ClassifierParams::load(&model)?;
            let scored = scored_from_csv(&scores, &stream.intermediate)?;
            let outcome = refine_sequence(
                &params,
                &stream.source,
                &scored,
                config.num_domains + 1,
                &config.refinement,
                seed::derive(seed, &format!("refine-{}", scored.scorer_id())),
            )?;
            let sequence = DomainSequence::new(
                outcome.chunks,
                stream.intermediate.len(),
                format!("{}+refined", scored.scorer_id()),
            )?;
            sequence.export(&out)?;
            if let Some(losses_path) = losses {
                let mut text = String::from("domain_index,epoch,cycle_loss\n");
                for (domain_index, epochs) in outcome.cycle_losses.iter().enumerate() {
                    for (epoch, &loss) in epochs.iter().enumerate() {
                        text.push_str(&format!(
                            "{},{},{}\n",
                            domain_index,
                            epoch + 1,
                            fmt_g6(loss)
                        ));
                    }
                }
                write_atomic(&losses_path, &text)?;
            }
            println!(
                "refined {} examples into {} domains -> {}",
                stream.intermediate.len(),
                sequence.num_chunks(),
                out.display()
            );
            Ok(true)
        }
        Command::Gda {
            stream,
            model,
            seq,
            config,
            seed,
            method,
            out,
            model_out,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let stream = load_stream(&stream)?;
            let params = ClassifierParams::load(&model)?;
            let text = std::fs::read_to_string(&seq)?;
            let sequence = DomainSequence::parse(&text, stream.intermediate.len(), &method)?;
            let (final_params, walk) = run_gda(
                &params,
                &stream.intermediate,
                &sequence,
                &stream.target.to_unlabeled(),
                Some(&stream.target),
                config.keep_frac,
                &config.domain_opt,
                seed::derive(seed, &format!("walk-{method}")),
            )?;
            let num_chunks = sequence.num_chunks();
            let rows: Vec<StepRow> = walk
                .iter()
                .map(|s| StepRow {
                    method: method.clone(),
                    seed,
                    phase: Phase::Walk,
                    step: s.step,
                    domain_index: if s.step <= num_chunks { Some(s.step - 1) } else { None },
                    target_accuracy: s.target_accuracy,
                    cycle_loss: None,
                })
                .collect();
            if let Some(out) = &out {
                write_atomic(out, &render_step_rows(&rows))?;
            }
            if let Some(model_out) = &model_out {
                final_params.save(model_out)?;
            }
            let accuracy = evaluate_accuracy(&final_params, &stream.target)?;
            println!("final target accuracy {}", fmt_g6(accuracy));
            Ok(true)
        }
        Command::Bound {
            source_loss,
            data_bound,
            norm_bound,
            per_step_shift,
            num_steps,
            samples_per_domain,
            delta,
        } => {
            let bound = theory_bound(&TheoryInputs {
                source_loss,
                data_bound,
                norm_bound,
                per_step_shift,
                num_steps,
                samples_per_domain,
                delta,
            })?;
            println!("{bound:.12e}");
            Ok(true)
        }
        Command::Experiment {
            config,
            out,
            seeds,
            methods,
            overrides,
        } => {
            let mut config = load_config(&config, &overrides)?;
            if !seeds.is_empty() {
                config.seeds = seeds;
            }
            if !methods.is_empty() {
                config.methods = Some(methods);
            }
            if let Some(out) = out {
                config.out_dir = Some(out);
            }
            config.validate()?;
            let report = run_experiment(&config)?;
            let out_dir = config.out_dir();
            let written = report.write_files(&out_dir, &config)?;
            for row in report.summary_rows() {
                let mean = row
                    .mean_target_accuracy
                    .map(fmt_g6)
                    .unwrap_or_else(|| "-".into());
                let sd = row
                    .sd_target_accuracy
                    .map(fmt_g6)
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<32} mean {} sd {} ({}/{} cells ok)",
                    row.method,
                    mean,
                    sd,
                    row.num_seeds - row.num_errors,
                    row.num_seeds
                );
            }
            println!("wrote {} files to {}", written.len(), out_dir.display());
            if !report.all_ok() {
                for cell in report.cells.iter().filter(|c| !c.is_ok()) {
                    eprintln!(
                        "cell {} seed {} failed: {}",
                        cell.method.tag(),
                        cell.seed,
                        cell.error.as_deref().unwrap_or("unknown")
                    );
                }
                return Ok(false);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
