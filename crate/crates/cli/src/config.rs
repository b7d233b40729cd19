//! Run configuration: one TOML file per run, resolved against flags and
//! `SLM_SEED`, and archived next to the run's outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sensorlm::caption::{CaptionParams, CaptionVariant, TemplatePool};
use sensorlm::data::{activity_profile, DatasetSpec};
use sensorlm::eval::{ProbeConfig, FEW_SHOT_SEEDS, FEW_SHOT_SIZES};
use sensorlm::model::ModelConfig;
use sensorlm::trainer::TrainConfig;

pub const SEED_ENV: &str = "SLM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Caption variants written by `gen-captions`.
    pub variants: Vec<CaptionVariant>,
    /// Optional template-pool file; the bundled pool is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { variants: vec![CaptionVariant::STRUCT_SEM], templates: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// One of tiny, gradcheck, s, b, l, xl.
    pub preset: String,
    /// Upper bound on framed caption length; the actual bound is the longest training caption.
    pub max_text_len: usize,
    pub dropout: f32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: "tiny".into(), max_text_len: 128, dropout: 0.0 }
    }
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize, max_text_len: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset, vocab_size, max_text_len)
            .with_context(|| format!("unknown model preset {:?}", self.preset))?;
        cfg.dropout = self.dropout;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub test_fraction: f64,
    /// Minimum token count for the vocabulary built from training captions.
    pub min_freq: usize,
    pub recall_k: Vec<usize>,
    pub few_shot_sizes: Vec<usize>,
    pub few_shot_draws: u64,
    /// Test days captioned by `eval caption`.
    pub caption_limit: usize,
    pub probe: ProbeConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.25,
            min_freq: 1,
            recall_k: vec![1, 5, 10],
            few_shot_sizes: FEW_SHOT_SIZES.to_vec(),
            few_shot_draws: FEW_SHOT_SEEDS,
            caption_limit: 32,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub days_per_class: usize,
    pub steps: u64,
    pub max_text_len: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { days_per_class: 25, steps: 60, max_text_len: 64 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; falls back to `SLM_SEED`, then 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub data: DatasetSpec,
    pub caption: CaptionParams,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

/// 1-based line of the first occurrence of `needle` in `text`.
fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

impl RunConfig {
    /// Parses and validates config text. Unknown keys and unknown class names
    /// are rejected with a line reference.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config error: {e}"))?;
        for class in &cfg.data.classes {
            if activity_profile(class).is_none() {
                match line_of(text, &format!("\"{class}\"")) {
                    Some(line) => bail!("config error at line {line}: unknown activity class {class:?}"),
                    None => bail!("config error: unknown activity class {class:?}"),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.corpus.variants.is_empty() {
            bail!("config error: corpus.variants is empty");
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            bail!("config error: eval.test_fraction must lie strictly between 0 and 1");
        }
        if self.model.max_text_len < 2 {
            bail!("config error: model.max_text_len must be at least 2");
        }
        ModelConfig::preset(&self.model.preset, 8, 8).with_context(|| format!("unknown model preset {:?}", self.model.preset))?;
        Ok(())
    }

    /// Fixes the seed (flag, then file, then `SLM_SEED`, then 0) and mirrors it into the training section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        if seed > i64::MAX as u64 {
            bail!("seed {seed} does not fit a TOML integer (max {})", i64::MAX);
        }
        self.seed = Some(seed);
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the resolved config text.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn template_pool(&self) -> Result<TemplatePool> {
        match &self.corpus.templates {
            None => Ok(TemplatePool::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading template pool {path}"))?;
                Ok(TemplatePool::parse(&text)?)
            }
        }
    }
}
