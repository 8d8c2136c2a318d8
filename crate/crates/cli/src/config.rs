use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prosody_emph::conditioning::ConditioningConfig;
use prosody_emph::embed::{load_semantic, SemanticProvider};
use prosody_emph::predictor::{ModelConfig, TrainConfig};
use prosody_emph::prominence::ProminenceConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticSource {
    Hash,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticConfig {
    pub source: SemanticSource,
    /// Container path for `source = "file"`.
    pub path: Option<PathBuf>,
    /// Hash-embedding width; file mode takes the width from the container.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            source: SemanticSource::Hash,
            path: None,
            dim: 128,
            seed: 0,
        }
    }
}

impl SemanticConfig {
    /// Builds the provider; `dim_override` replaces the hash width (set from
    /// a checkpoint so inference matches training).
    pub fn provider(&self, dim_override: Option<usize>) -> Result<SemanticProvider> {
        match self.source {
            SemanticSource::Hash => {
                let dim = dim_override.unwrap_or(self.dim);
                if dim == 0 {
                    bail!("semantic.dim must be positive");
                }
                Ok(SemanticProvider::hash(dim, self.seed))
            }
            SemanticSource::File => {
                let path = self
                    .path
                    .as_ref()
                    .context("semantic.source = \"file\" requires semantic.path")?;
                let p = load_semantic(path)?;
                if let Some(d) = dim_override {
                    if d != p.dim() {
                        bail!("semantic container has dim {}, checkpoint expects {d}", p.dim());
                    }
                }
                Ok(p)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { tau: 0.9 }
    }
}

/// Every tunable of every subcommand. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub prominence: ProminenceConfig,
    pub write_scores: bool,
    pub semantic: SemanticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of utterances held out for validation during training.
    pub validation_fraction: f64,
    pub filter: FilterConfig,
    pub conditioning: ConditioningConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            prominence: ProminenceConfig::default(),
            write_scores: false,
            semantic: SemanticConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            validation_fraction: 0.2,
            filter: FilterConfig::default(),
            conditioning: ConditioningConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        if cfg.version != CONFIG_VERSION {
            bail!("unsupported config version {}", cfg.version);
        }
        Ok(cfg)
    }

    /// Applies `--seed` and `--tau`.
    pub fn with_overrides(mut self, seed: Option<u64>, tau: Option<f64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.conditioning.seed = s;
        }
        if let Some(t) = tau {
            self.filter.tau = t;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(anyhow::Error::msg)?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            bail!("validation_fraction must lie in [0, 1)");
        }
        if self.filter.tau.is_nan() {
            bail!("tau must be a number");
        }
        let m = &self.model;
        if m.hidden_dim == 0 || m.head_hidden == 0 || m.pos_dim == 0 {
            bail!("model dimensions must be positive");
        }
        if self.conditioning.cond_dim == 0 || self.conditioning.emph_dim == 0 {
            bail!("conditioning dimensions must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration's JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
