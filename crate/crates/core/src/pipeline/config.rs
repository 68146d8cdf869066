use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Scheme};
use crate::rerank::{DEFAULT_CAP, DEFAULT_LAMBDAS};
use crate::sas::SasConfig;
use crate::selftrain::SelfTrainConfig;

/// Full experiment configuration, one TOML table per module. Every field has
/// a default, so an empty file is a valid config apart from `data.input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub sas: SasConfig,
    pub diffusion: DiffusionConfig,
    pub model: ModelConfig,
    pub selftrain: SelfTrainConfig,
    pub rerank: RerankConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `id,smiles,label` CSV; relative paths resolve against the config file.
    pub input: PathBuf,
    pub scheme: Scheme,
    pub n_splits: usize,
    pub seed: u64,
    /// Subset of split indices to run; all when absent.
    pub splits: Option<Vec<usize>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: PathBuf::new(),
            scheme: Scheme::RandomCvLite,
            n_splits: 5,
            seed: 0,
            splits: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Inverse cluster-frequency scaffold sampling.
    Sas,
    /// Every active scaffold with equal probability.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenoiserChoice {
    Marginal,
    Echo,
    External(String),
}

impl FromStr for DenoiserChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "marginal" => Ok(DenoiserChoice::Marginal),
            "echo" => Ok(DenoiserChoice::Echo),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(DenoiserChoice::External(cmd.to_string())),
                _ => Err(format!("unknown denoiser '{s}' (marginal, echo or external:<cmd>)")),
            },
        }
    }
}

impl fmt::Display for DenoiserChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserChoice::Marginal => write!(f, "marginal"),
            DenoiserChoice::Echo => write!(f, "echo"),
            DenoiserChoice::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

impl Serialize for DenoiserChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DenoiserChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// When false the run trains on the labeled data only.
    pub augment: bool,
    pub steps: usize,
    pub denoiser: DenoiserChoice,
    pub sampling: SamplingMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            augment: true,
            steps: crate::diffusion::DEFAULT_STEPS,
            denoiser: DenoiserChoice::Marginal,
            sampling: SamplingMode::Sas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub radius: u32,
    pub nbits: usize,
    pub l2: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            radius: 2,
            nbits: 1024,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Scaffold,
    Molecule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub enabled: bool,
    pub lambdas: Vec<f64>,
    pub cap: usize,
    pub k: usize,
    pub similarity: Similarity,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            enabled: true,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            cap: DEFAULT_CAP,
            k: 100,
            similarity: Similarity::Scaffold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluation seeds per split.
    pub seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seeds: 3 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file and resolves `data.input` against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if cfg.data.input.is_relative() && !cfg.data.input.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                cfg.data.input = dir.join(&cfg.data.input);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn split_indices(&self) -> Vec<usize> {
        self.data
            .splits
            .clone()
            .unwrap_or_else(|| (0..self.data.n_splits).collect())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.data.input.as_os_str().is_empty() {
            return bad("data.input is required".into());
        }
        if self.data.n_splits == 0 {
            return bad("data.n_splits must be positive".into());
        }
        if let Some(&s) = self.split_indices().iter().find(|&&s| s >= self.data.n_splits) {
            return bad(format!("split index {s} out of range"));
        }
        for (what, nbits) in [("sas", self.sas.nbits), ("model", self.model.nbits)] {
            if nbits < 8 || !nbits.is_power_of_two() {
                return bad(format!("{what}.nbits must be a power of two ≥ 8"));
            }
        }
        if self.sas.k_min < 2 {
            return bad("sas.k_min must be at least 2".into());
        }
        if !(self.sas.library_fraction > 0.0) {
            return bad("sas.library_fraction must be positive".into());
        }
        if self.diffusion.steps == 0 {
            return bad("diffusion.steps must be positive".into());
        }
        self.selftrain
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.rerank.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("rerank.lambdas must lie in [0, 1]".into());
        }
        if self.rerank.k == 0 || self.rerank.cap == 0 {
            return bad("rerank.k and rerank.cap must be positive".into());
        }
        if self.eval.seeds == 0 {
            return bad("eval.seeds must be positive".into());
        }
        Ok(())
    }
}
