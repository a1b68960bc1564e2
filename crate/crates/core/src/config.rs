//! Experiment configuration: a single TOML document describing the data,
//! the model, the method grid, and every training budget.
//!
//! Configs re-serialize to a canonical form (fixed key order, defaults
//! filled in), and reports embed the SHA-256 of that form so a result file
//! can always be traced back to the exact configuration that produced it.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_rotated_gaussians, gen_rotated_moons, stream_from_csv, ShiftStream};
use crate::error::{Error, Result};
use crate::model::{Activation, OptimizerConfig};
use crate::pipeline::{IdolConfig, ScorerChoice};
use crate::refine::RefineConfig;

/// Environment variable consulted for the default output directory.
pub const OUT_DIR_ENV: &str = "IDOL_OUT_DIR";

/// Fallback output directory when neither the config nor the environment
/// names one.
pub const DEFAULT_OUT_DIR: &str = "idol-out";

/// Where the shift stream comes from: a synthetic generator (re-seeded per
/// experiment seed) or a fixed stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
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
    Stream {
        path: PathBuf,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::RotatedGaussians {
            num_classes: 3,
            points_per_domain: 200,
            num_domains: 9,
            total_angle: 120.0,
            noise_sd: 0.25,
        }
    }
}

impl DatasetConfig {
    /// Materializes the stream. Synthetic kinds draw fresh samples from
    /// `seed_value`; a file-backed stream ignores the seed.
    pub fn load(&self, seed_value: u64) -> Result<ShiftStream> {
        match *self {
            Self::RotatedGaussians {
                num_classes,
                points_per_domain,
                num_domains,
                total_angle,
                noise_sd,
            } => gen_rotated_gaussians(
                num_classes,
                points_per_domain,
                num_domains,
                total_angle,
                noise_sd,
                seed_value,
            ),
            Self::RotatedMoons {
                points_per_domain,
                num_domains,
                total_angle,
                noise_sd,
            } => gen_rotated_moons(points_per_domain, num_domains, total_angle, noise_sd, seed_value),
            Self::Stream { ref path } => stream_from_csv(path),
        }
    }
}

/// Classifier topology shared by every method in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            activation: Activation::Relu,
        }
    }
}

/// Everything a run needs. Field defaults follow the reference
/// hyperparameters (ten unrolled steps, thirty refinement epochs, batch
/// 128, both refinement step sizes 1e-3); any field may be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Number of discovered intermediate domains (chunks of the pool).
    pub num_domains: usize,
    /// Coarse scorer used by the discovery methods when a single one is
    /// requested on the command line.
    pub scorer: ScorerChoice,
    /// Whether single-method runs apply cycle-consistency refinement.
    pub refine: bool,
    /// Confidence fraction kept by every self-training step.
    pub keep_frac: f64,
    pub seeds: Vec<u64>,
    /// Method tags to run; `None` means the full comparison grid.
    pub methods: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    /// Budget for supervised source training.
    pub source_opt: OptimizerConfig,
    /// Budget for each self-training step along a walk.
    pub domain_opt: OptimizerConfig,
    /// Budget for scorer-internal training.
    pub scorer_opt: OptimizerConfig,
    pub refinement: RefineConfig,
    /// Embedding width for the manifold scorer.
    pub embed_dim: usize,
    /// Progressive scorer rounds; `None` picks twice the domain count.
    pub progressive_rounds: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            num_domains: 8,
            scorer: ScorerChoice::Progressive,
            refine: true,
            keep_frac: 0.9,
            seeds: vec![0, 1, 2, 3, 4],
            methods: None,
            out_dir: None,
            model: ModelConfig::default(),
            source_opt: OptimizerConfig::default(),
            domain_opt: OptimizerConfig::default(),
            scorer_opt: OptimizerConfig::default(),
            refinement: RefineConfig::default(),
            embed_dim: 2,
            progressive_rounds: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| s.start as u64).unwrap_or(0);
            Error::format(offset, format!("config parse failed: {}", e.message()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialization: struct declaration order, defaults written
    /// out, independent of the key order of the parsed document.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::contract(format!("config serialization failed: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn sha256_hex(&self) -> Result<String> {
        let canonical = self.to_canonical_toml()?;
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        Ok(hex)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        crate::report::write_atomic(path.as_ref(), &self.to_canonical_toml()?)
    }

    /// Output directory: explicit config value, else `IDOL_OUT_DIR`, else
    /// `idol-out` under the working directory.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(dir) = env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from(DEFAULT_OUT_DIR)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 {
            return Err(Error::contract("num_domains must be at least 1"));
        }
        if !(self.keep_frac > 0.0 && self.keep_frac <= 1.0) {
            return Err(Error::contract(format!(
                "keep_frac must lie in (0, 1], got {}",
                self.keep_frac
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("seeds must name at least one seed"));
        }
        if self.embed_dim == 0 {
            return Err(Error::contract("embed_dim must be at least 1"));
        }
        self.source_opt.validate()?;
        self.domain_opt.validate()?;
        self.scorer_opt.validate()?;
        self.refinement.validate()?;
        Ok(())
    }

    /// The discovery-pipeline view of this config.
    pub fn idol_config(&self) -> IdolConfig {
        IdolConfig {
            hidden_dims: self.model.hidden_dims.clone(),
            activation: self.model.activation,
            source_opt: self.source_opt.clone(),
            scorer_opt: self.scorer_opt.clone(),
            refine: self.refinement.clone(),
            embed_dim: self.embed_dim,
            progressive_rounds: self.progressive_rounds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_form() {
        let config = ExperimentConfig::default();
        let text = config.to_canonical_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(back.to_canonical_toml().unwrap(), text);
    }

    #[test]
    fn partial_document_fills_defaults_and_canonicalizes() {
        let text = r#"
            seeds = [7]
            num_domains = 3

            [dataset]
            kind = "rotated_moons"
            points_per_domain = 40
            num_domains = 5
            total_angle = 90.0
            noise_sd = 0.1
        "#;
        let config = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(config.seeds, vec![7]);
        assert_eq!(config.num_domains, 3);
        assert_eq!(config.keep_frac, 0.9);
        assert_eq!(config.refinement.t_steps, 10);
        assert_eq!(config.refinement.epochs, 30);
        assert_eq!(config.refinement.batch_size, 128);
        assert_eq!(config.refinement.lr_theta, 1e-3);
        assert_eq!(config.refinement.lr_q, 1e-3);

        let canonical = config.to_canonical_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&canonical).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn key_order_does_not_change_hash() {
        let a = ExperimentConfig::from_toml_str("seeds = [1]\nnum_domains = 4\n").unwrap();
        let b = ExperimentConfig::from_toml_str("num_domains = 4\nseeds = [1]\n").unwrap();
        assert_eq!(a.sha256_hex().unwrap(), b.sha256_hex().unwrap());
    }

    #[test]
    fn semantic_change_changes_hash() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.keep_frac = 0.8;
        assert_ne!(a.sha256_hex().unwrap(), b.sha256_hex().unwrap());
    }

    #[test]
    fn rejects_bad_fields() {
        let mut config = ExperimentConfig::default();
        config.keep_frac = 0.0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.seeds.clear();
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.num_domains = 0;
        assert!(config.validate().is_err());

        assert!(ExperimentConfig::from_toml_str("keep_frac = 2.0").is_err());
        assert!(ExperimentConfig::from_toml_str("this is not toml").is_err());
    }

    #[test]
    fn dataset_load_matches_direct_generator_call() {
        let config = DatasetConfig::RotatedGaussians {
            num_classes: 2,
            points_per_domain: 30,
            num_domains: 4,
            total_angle: 60.0,
            noise_sd: 0.2,
        };
        let via_config = config.load(9).unwrap();
        let direct = gen_rotated_gaussians(2, 30, 4, 60.0, 0.2, 9).unwrap();
        assert_eq!(via_config.source.features().data(), direct.source.features().data());
        assert_eq!(via_config.truth_index, direct.truth_index);
    }

    #[test]
    fn out_dir_prefers_explicit_config_value() {
        let mut config = ExperimentConfig::default();
        config.out_dir = Some(PathBuf::from("elsewhere"));
        assert_eq!(config.out_dir(), PathBuf::from("elsewhere"));
    }
}
