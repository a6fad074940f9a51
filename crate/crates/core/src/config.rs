//! Declarative run configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::DEFAULT_FRAMES_PER_SECOND;
use crate::decode::DecodeOptions;
use crate::error::{Error, Result};
use crate::harness::ToyCorpusSpec;
use crate::model::ModelConfig;
use crate::tokenizer::Attribution;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub frames_per_second: f64,
    pub bpe_merges: usize,
    pub attribution: Attribution,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { frames_per_second: DEFAULT_FRAMES_PER_SECOND, bpe_merges: 2000, attribution: Attribution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslateConfig {
    /// Corpus column holding the frame budget.
    pub budget_column: String,
    pub beam_size: usize,
    pub max_tokens: usize,
    pub hard_stop: bool,
    pub length_penalty: f64,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        let d = DecodeOptions::default();
        Self {
            budget_column: "src_total_frames".into(),
            beam_size: d.beam_size,
            max_tokens: d.max_tokens,
            hard_stop: d.hard_stop,
            length_penalty: d.length_penalty,
        }
    }
}

impl TranslateConfig {
    /// Decode options with a placeholder budget; the real budget is set per sentence.
    pub fn options(&self) -> DecodeOptions {
        DecodeOptions {
            budget_frames: 1,
            beam_size: self.beam_size,
            max_tokens: self.max_tokens,
            hard_stop: self.hard_stop,
            length_penalty: self.length_penalty,
        }
    }
}

/// Every stage's settings in one file. Missing sections take defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub prepare: PrepareConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub translate: TranslateConfig,
    pub toy: ToyCorpusSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section. Vocabulary sizes are filled in at training
    /// time, so they are not required here.
    pub fn validate(&self) -> Result<()> {
        if !(self.prepare.frames_per_second > 0.0) {
            return Err(Error::Config("frames_per_second must be positive".into()));
        }
        let model = ModelConfig { src_vocab: self.model.src_vocab.max(1), tgt_vocab: self.model.tgt_vocab.max(1), ..self.model.clone() };
        model.validate()?;
        self.train.validate()?;
        if !matches!(self.translate.budget_column.as_str(), "src_total_frames" | "tgt_total_frames") {
            return Err(Error::Config(format!("unknown budget column `{}`", self.translate.budget_column)));
        }
        self.translate.options().validate()?;
        self.toy.validate()
    }
}
