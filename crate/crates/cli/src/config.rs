//! Run configuration: one TOML file with per-subsystem sections, plus CLI
//! flag overrides. The merged result is what gets snapshotted next to every
//! subcommand's outputs, so a snapshot fully determines a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use vigor_core::cevae::CevaeConfig;
use vigor_core::convergence::LoopThresholds;
use vigor_core::feedback::FeedbackConfig;
use vigor_core::synth::SyntheticSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which generation backend the loop talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    LlmHttp,
    Scripted,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSettings {
    pub backend: Backend,
    /// Chat-completions endpoint for the HTTP backend.
    pub endpoint: String,
    /// Environment variable that holds the API key; the key itself is never
    /// written to any log or snapshot.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: usize,
    /// Rows per parameter-inference call.
    pub chunk_size: usize,
    /// Proposal list for the scripted backend.
    pub script_path: Option<PathBuf>,
    /// Sidecar file with the planted confounder for the oracle backend.
    pub truth_path: Option<PathBuf>,
    /// Per-round oracle noise levels; the last entry repeats.
    pub oracle_noise: Vec<f64>,
    /// Seed for proposal value sampling.
    pub sample_seed: u64,
    /// When set, request/response pairs are written here for replay.
    pub capture_dir: Option<PathBuf>,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            backend: Backend::Scripted,
            endpoint: String::from("https://open.bigmodel.cn/api/paas/v4/chat/completions"),
            api_key_env: String::from("VIGOR_API_KEY"),
            model: String::from("glm-4.5"),
            temperature: 0.7,
            timeout_secs: 120,
            max_retries: 3,
            chunk_size: 200,
            script_path: None,
            truth_path: None,
            oracle_noise: vec![0.0],
            sample_seed: 20_000,
            capture_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSettings {
    pub tau_elbo: f64,
    pub tau_rho: f64,
    pub k_max: usize,
    pub epsilon: f64,
    pub m: usize,
    /// CEVAE seeds; the information gain is averaged over them before the
    /// convergence thresholds apply.
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub holdout_fraction: f64,
    /// Train the per-seed models on worker threads.
    pub parallel: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        let t = LoopThresholds::default();
        Self {
            tau_elbo: t.tau_elbo,
            tau_rho: t.tau_rho,
            k_max: t.k_max,
            epsilon: t.epsilon,
            m: t.m,
            seeds: vec![1, 2, 3],
            split_seed: 777,
            holdout_fraction: 0.2,
            parallel: true,
        }
    }
}

impl LoopSettings {
    pub fn thresholds(&self) -> LoopThresholds {
        LoopThresholds {
            tau_elbo: self.tau_elbo,
            tau_rho: self.tau_rho,
            k_max: self.k_max,
            epsilon: self.epsilon,
            m: self.m,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationSettings {
    pub knn_k: usize,
    pub jitter_seed: u64,
    pub ate_mc_samples: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { knn_k: 3, jitter_seed: 1234, ate_mc_samples: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CevaeSettings {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub eval_mc_samples: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for CevaeSettings {
    fn default() -> Self {
        // Desk-scale defaults; `vigor-core`'s `CevaeConfig::paper_twins` holds
        // the published Twins-scale configuration (latent 5, hidden 128,
        // batch 256, lr 1e-3, beta 1).
        Self {
            latent_dim: 5,
            hidden_dim: 64,
            batch_size: 128,
            epochs: 100,
            learning_rate: 1e-3,
            kl_weight: 0.5,
            eval_mc_samples: 10,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl CevaeSettings {
    pub fn to_config(&self, seed: u64, augmented: bool) -> CevaeConfig {
        CevaeConfig {
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            kl_weight: self.kl_weight,
            seed,
            augmented,
            eval_mc_samples: self.eval_mc_samples,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub n: usize,
    pub d: usize,
    pub a_t: f64,
    pub a_y: f64,
    pub tau_star: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let s = SyntheticSpec::strong_confounding(0.0, 1);
        Self {
            n: s.n,
            d: s.d,
            a_t: s.a_t,
            a_y: s.a_y,
            tau_star: s.tau_star,
            lambda: s.lambda,
            seed: s.seed,
        }
    }
}

impl SynthSettings {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            d: self.d,
            a_t: self.a_t,
            a_y: self.a_y,
            tau_star: self.tau_star,
            lambda: self.lambda,
            seed: self.seed,
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct AppConfig {
    pub cevae: CevaeSettings,
    #[serde(rename = "loop")]
    pub loop_: LoopSettings,
    pub generator: GeneratorSettings,
    pub feedback: FeedbackConfig,
    pub validation: ValidationSettings,
    pub synth: SynthSettings,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(toml::from_str(&raw)?)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loop_
            .thresholds()
            .validate()
            .map_err(ConfigError::Invalid)?;
        self.feedback.validate().map_err(ConfigError::Invalid)?;
        if self.loop_.seeds.is_empty() {
            return Err(ConfigError::Invalid("loop.seeds must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.loop_.holdout_fraction) {
            return Err(ConfigError::Invalid("loop.holdout_fraction must be in [0,1)".into()));
        }
        if self.generator.temperature < 0.0 {
            return Err(ConfigError::Invalid("generator.temperature must be >= 0".into()));
        }
        if self.validation.knn_k == 0 {
            return Err(ConfigError::Invalid("validation.knn_k must be >= 1".into()));
        }
        Ok(())
    }

    /// Writes the merged configuration next to a subcommand's outputs.
    pub fn snapshot(&self, out_dir: &Path) -> Result<(), ConfigError> {
        let toml = toml::to_string(self)?;
        let path = out_dir.join("config_snapshot.toml");
        fs::write(&path, toml).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AppConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = AppConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.cevae.hidden_dim, cfg.cevae.hidden_dim);
        assert_eq!(back.loop_.seeds, cfg.loop_.seeds);
        assert_eq!(back.generator.temperature, cfg.generator.temperature);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: AppConfig = toml::from_str("[loop]\nk_max = 2\nseeds = [7]\n").unwrap();
        assert_eq!(cfg.loop_.k_max, 2);
        assert_eq!(cfg.loop_.seeds, vec![7]);
        assert_eq!(cfg.cevae.epochs, 100);
    }
}
