//! Duration-aware positional embeddings for the decoder input.
//!
//! The decoder input for a position is the token embedding plus up to three
//! sinusoidal terms from one shared table: the ordinal position, the absolute
//! cumulative duration in frames, and the quantized fraction of the frame
//! budget already used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub model_dim: usize,
    /// Number of relative-position buckets `N`; the relative index lies in `0..=N`.
    pub quantization_level: u32,
    pub max_position: usize,
    #[serde(default)]
    pub flags: PeFlags,
}

impl EmbeddingConfig {
    pub fn new(model_dim: usize, quantization_level: u32, max_position: usize) -> Self {
        Self {
            model_dim,
            quantization_level,
            max_position,
            flags: PeFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.model_dim % 2 != 0 {
            return Err(Error::Config(format!("model_dim {} must be even and positive", self.model_dim)));
        }
        if self.quantization_level == 0 {
            return Err(Error::Config("quantization_level must be at least 1".into()));
        }
        if self.max_position == 0 {
            return Err(Error::Config("max_position must be positive".into()));
        }
        Ok(())
    }
}

/// Switches for the three positional terms. Turning off `absolute` and
/// `relative` yields the plain transformer decoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeFlags {
    pub ordinal: bool,
    pub absolute: bool,
    pub relative: bool,
}

impl Default for PeFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl PeFlags {
    pub const FULL: Self = Self { ordinal: true, absolute: true, relative: true };
    pub const VANILLA: Self = Self { ordinal: true, absolute: false, relative: false };

    pub fn uses_durations(&self) -> bool {
        self.absolute || self.relative
    }
}

/// Cumulative-duration state at one decoder position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderStepState {
    pub step_index: usize,
    pub cumulative_frames: u32,
    pub total_budget_frames: u32,
}

/// Sinusoidal embedding: even dims `sin(pos / 10000^(2k/d))`, odd dims the cosine.
pub fn sinusoidal_pe(position: usize, model_dim: usize, max_position: usize) -> Result<Vec<f64>> {
    if position > max_position {
        return Err(Error::PositionOutOfRange { position, max_position });
    }
    let mut out = vec![0.0; model_dim];
    write_sinusoid(position, &mut out);
    Ok(out)
}

/// Adds `PE(position)` into `out` in place.
pub(crate) fn add_sinusoid(position: usize, out: &mut [f64]) {
    let d = out.len();
    let pos = position as f64;
    for k in 0..d / 2 {
        let angle = pos / 10000f64.powf(2.0 * k as f64 / d as f64);
        out[2 * k] += angle.sin();
        out[2 * k + 1] += angle.cos();
    }
}

fn write_sinusoid(position: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    add_sinusoid(position, out);
}

/// `floor(N * cumulative / total)` clamped to `[0, N]`, in exact integer arithmetic.
pub fn quantize_ratio(cumulative_frames: u32, total_budget_frames: u32, quantization_level: u32) -> u32 {
    let total = total_budget_frames.max(1) as u64;
    let q = quantization_level as u64 * cumulative_frames as u64 / total;
    q.min(quantization_level as u64) as u32
}

/// Positional part of the decoder input (everything except the token embedding).
pub fn positional_terms(state: &DecoderStepState, config: &EmbeddingConfig) -> Result<Vec<f64>> {
    let mut out = vec![0.0; config.model_dim];
    add_positional_terms(state, config, &mut out)?;
    Ok(out)
}

pub(crate) fn add_positional_terms(state: &DecoderStepState, config: &EmbeddingConfig, out: &mut [f64]) -> Result<()> {
    let flags = config.flags;
    let check = |p: usize| {
        if p > config.max_position {
            Err(Error::PositionOutOfRange { position: p, max_position: config.max_position })
        } else {
            Ok(p)
        }
    };
    if flags.ordinal {
        add_sinusoid(check(state.step_index)?, out);
    }
    if flags.absolute {
        add_sinusoid(check(state.cumulative_frames as usize)?, out);
    }
    if flags.relative {
        let q = quantize_ratio(state.cumulative_frames, state.total_budget_frames, config.quantization_level);
        add_sinusoid(check(q as usize)?, out);
    }
    Ok(())
}

/// `w + p^o(i) + p^a(cumulative) + p^r(q_N(cumulative / budget))`, with
/// disabled terms left out.
pub fn decoder_input(word_embedding: &[f64], state: &DecoderStepState, config: &EmbeddingConfig) -> Result<Vec<f64>> {
    if word_embedding.len() != config.model_dim {
        return Err(Error::Shape(format!(
            "word embedding has {} entries, model_dim is {}",
            word_embedding.len(),
            config.model_dim
        )));
    }
    let mut out = word_embedding.to_vec();
    add_positional_terms(state, config, &mut out)?;
    Ok(out)
}
