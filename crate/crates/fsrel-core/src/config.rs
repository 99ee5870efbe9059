//! Experiment configuration: one JSON document drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sgdata::{EpisodeConfig, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    Average,
    #[default]
    Reweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Learnable,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Predcls,
    Sgcls,
}

/// Model dimensions and switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_app: usize,
    pub d_vis: usize,
    pub d_ctx: usize,
    pub d_txt: usize,
    pub d_proto: usize,
    pub d_final: usize,
    pub d_hidden: usize,
    /// Prompt length L.
    pub prompt_len: usize,
    /// Length of the fixed label prompt prefix used by the metric learner.
    pub fixed_prompt_len: usize,
    /// Freeze the text-encoder pooling and MLP after init (gradients still
    /// flow through to prompt tokens and word embeddings).
    pub freeze_text_encoder: bool,
    pub metric_mode: MetricMode,
    pub prompt_mode: PromptMode,
    /// With the prototype branch disabled the aggregator sees zeros in the
    /// prototype slot and the KL loss is skipped.
    pub prototype_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_app: 32,
            d_vis: 128,
            d_ctx: 128,
            d_txt: 64,
            d_proto: 64,
            d_final: 128,
            d_hidden: 64,
            prompt_len: 24,
            fixed_prompt_len: 4,
            freeze_text_encoder: true,
            metric_mode: MetricMode::Reweight,
            prompt_mode: PromptMode::Learnable,
            prototype_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_app", self.d_app),
            ("d_vis", self.d_vis),
            ("d_ctx", self.d_ctx),
            ("d_txt", self.d_txt),
            ("d_proto", self.d_proto),
            ("d_final", self.d_final),
            ("d_hidden", self.d_hidden),
            ("prompt_len", self.prompt_len),
            ("fixed_prompt_len", self.fixed_prompt_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub relation: bool,
    pub kl: bool,
    pub object: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            relation: true,
            kl: true,
            object: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub support: u64,
    pub train: u64,
    /// Reserved; the evaluation protocol is currently deterministic.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            split: 2,
            support: 3,
            train: 4,
            eval: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n_base: usize,
    pub n_novel: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n_base: 6,
            n_novel: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            checkpoint_every: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Shot counts to evaluate.
    pub k_list: Vec<usize>,
    pub task: Task,
    /// Also write one JSON line per prediction.
    pub dump_predictions: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: vec![1, 5, 10],
            task: Task::Predcls,
            dump_predictions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Seeds,
    pub world: WorldConfig,
    pub split: SplitConfig,
    pub episode: EpisodeConfig,
    pub model: ModelConfig,
    pub loss: LossToggles,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("world.json"),
            out_dir: PathBuf::from("run"),
            seeds: Seeds::default(),
            world: WorldConfig::default(),
            split: SplitConfig::default(),
            episode: EpisodeConfig::default(),
            model: ModelConfig::default(),
            loss: LossToggles::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read config: {e}")))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.episode.support_range.0 > self.episode.support_range.1
            || self.episode.query_range.0 > self.episode.query_range.1
        {
            return Err(Error::Config("episode ranges must be ascending".into()));
        }
        if self.episode.support_range.0 == 0 || self.episode.query_range.0 == 0 {
            return Err(Error::Config("episode ranges must start at 1".into()));
        }
        if self.eval.k_list.is_empty() || self.eval.k_list.iter().any(|k| *k == 0) {
            return Err(Error::Config("k_list must contain positive shot counts".into()));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hash of the forward-pass-defining configuration: model dims/switches plus
/// the vocabularies the parameter shapes depend on. Checkpoints refuse to
/// load under a different hash unless forced.
pub fn model_config_hash(model: &ModelConfig, categories: &[String], predicates: &[String]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(model).expect("model config serializes"));
    for c in categories {
        hasher.update(c.as_bytes());
        hasher.update([0u8]);
    }
    hasher.update([1u8]);
    for p in predicates {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_semantically() {
        let cfg = ExperimentConfig::default();
        let json = cfg.to_pretty_json().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_files_use_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"model": {"d_txt": 16}}"#).unwrap();
        assert_eq!(cfg.model.d_txt, 16);
        assert_eq!(cfg.model.d_vis, 128);
        assert_eq!(cfg.model.prompt_len, 24);
    }

    #[test]
    fn hash_changes_with_model_dims_and_vocab() {
        let cats = vec!["a".to_string()];
        let preds = vec!["p".to_string()];
        let m1 = ModelConfig::default();
        let mut m2 = m1.clone();
        m2.d_txt = 32;
        assert_ne!(
            model_config_hash(&m1, &cats, &preds),
            model_config_hash(&m2, &cats, &preds)
        );
        assert_ne!(
            model_config_hash(&m1, &cats, &preds),
            model_config_hash(&m1, &cats, &["q".to_string()])
        );
    }

    #[test]
    fn zero_dim_is_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.d_txt = 0;
        assert!(cfg.validate().is_err());
    }
}
