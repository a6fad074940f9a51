//! Budget-aware greedy and beam decoding.
//!
//! Each decoder call scores the next token and, through the duration
//! predictor, fixes the frame count of the token emitted one step earlier.
//! Those predicted frames feed the duration embeddings of later steps.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{frames_from_log_duration, DecoderPrefix, EncodedSource, Seq2Seq};
use crate::tokenizer::{TokenId, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeOptions {
    pub budget_frames: u32,
    pub beam_size: usize,
    pub max_tokens: usize,
    /// End a hypothesis with EOS as soon as a token's predicted frames
    /// would overrun the budget; that token is dropped.
    pub hard_stop: bool,
    /// Exponent `alpha` of `((5 + len) / 6)^alpha`; 0 ranks by raw log-prob.
    pub length_penalty: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { budget_frames: 1, beam_size: 1, max_tokens: 128, hard_stop: false, length_penalty: 1.0 }
    }
}

impl DecodeOptions {
    pub fn with_budget(budget_frames: u32) -> Self {
        Self { budget_frames, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_frames == 0 {
            return Err(Error::invalid("budget_frames must be at least 1"));
        }
        if self.beam_size == 0 || self.max_tokens == 0 {
            return Err(Error::invalid("beam_size and max_tokens must be at least 1"));
        }
        if !self.length_penalty.is_finite() || self.length_penalty < 0.0 {
            return Err(Error::invalid("length_penalty must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A partial or complete translation.
///
/// `frames[i]` belongs to `tokens[i]`. While a hypothesis is live its last
/// token is still waiting for the predictor, so `frames` is one shorter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub frames: Vec<u32>,
    pub cumulative_frames: u32,
    pub finished: bool,
    /// Log-prob of the hypothesis before its last token and the EOS
    /// log-prob at that point, kept so a hard stop can rewind one token.
    #[serde(skip)]
    rewind: Option<(f64, f64)>,
}

impl Hypothesis {
    fn root() -> Self {
        Self { tokens: vec![], log_prob: 0.0, frames: vec![], cumulative_frames: 0, finished: false, rewind: None }
    }

    /// Output tokens without the closing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS_ID) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Frames aligned with [`Self::content`].
    pub fn content_frames(&self) -> &[u32] {
        &self.frames[..self.content().len().min(self.frames.len())]
    }

    /// Length-penalized score used for ranking.
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / length_penalty(self.content().len(), alpha)
    }

    fn prefix(&self, budget: u32) -> DecoderPrefix {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        let mut cumulative = Vec::with_capacity(self.tokens.len() + 1);
        tokens.push(BOS_ID);
        cumulative.push(0);
        let mut acc = 0u32;
        // A pending last token has no frames yet; `step` fills its entry.
        for (i, &t) in self.tokens.iter().enumerate() {
            acc = acc.saturating_add(self.frames.get(i).copied().unwrap_or(0));
            tokens.push(t);
            cumulative.push(acc);
        }
        DecoderPrefix { tokens, cumulative, budget }
    }

    fn check(&self) {
        debug_assert_eq!(self.cumulative_frames, self.frames.iter().sum::<u32>());
        debug_assert!(!self.finished || self.tokens.last() == Some(&EOS_ID));
    }
}

/// GNMT-style penalty `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub hypothesis: Hypothesis,
    /// No hypothesis produced EOS within `max_tokens`.
    pub unfinished_warning: bool,
}

/// Best-first ordering on `key`: higher first, then smaller last token id,
/// then the lexicographically smaller sequence, then the shorter one.
fn rank_by(a: &Hypothesis, b: &Hypothesis, key: impl Fn(&Hypothesis) -> f64) -> Ordering {
    key(b)
        .partial_cmp(&key(a))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.last().cmp(&b.tokens.last()))
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
}

/// Final selection uses the length-penalized score.
fn rank(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> Ordering {
    rank_by(a, b, |h| h.score(alpha))
}

fn top_k(log_probs: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut ids: Vec<(TokenId, f64)> = log_probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i as TokenId != PAD_ID && i as TokenId != BOS_ID)
        .map(|(i, &lp)| (i as TokenId, lp))
        .collect();
    ids.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    ids.truncate(k);
    ids
}

/// Expands every live hypothesis by its best `beam_size` tokens and keeps the
/// `beam_size` candidates with the highest summed log-prob, finished or not.
pub fn beam_step(
    live: &[Hypothesis],
    finished: &[Hypothesis],
    model: &Seq2Seq,
    source: &EncodedSource,
    options: &DecodeOptions,
) -> Result<Vec<Hypothesis>> {
    if live.is_empty() {
        return Err(Error::invalid("beam_step needs at least one live hypothesis"));
    }
    let prefixes: Vec<DecoderPrefix> = live.iter().map(|h| h.prefix(options.budget_frames)).collect();
    let scores = model.step(source, &prefixes)?;
    let mut pool: Vec<Hypothesis> = finished.to_vec();
    for (h, s) in live.iter().zip(&scores) {
        let mut base = h.clone();
        if !base.tokens.is_empty() {
            let f = frames_from_log_duration(s.log_duration);
            if options.hard_stop && base.cumulative_frames as u64 + f as u64 > options.budget_frames as u64 {
                let (lp_before, eos_lp) = base.rewind.expect("pending token has a rewind point");
                let mut stopped = base.clone();
                stopped.tokens.pop();
                stopped.tokens.push(EOS_ID);
                stopped.frames.push(0);
                stopped.log_prob = lp_before + eos_lp;
                stopped.finished = true;
                stopped.rewind = None;
                stopped.check();
                pool.push(stopped);
                continue;
            }
            base.frames.push(f);
            base.cumulative_frames += f;
        }
        if base.tokens.len() >= options.max_tokens {
            // Out of room: kept as an unfinished candidate with all frames resolved.
            base.rewind = None;
            pool.push(base);
            continue;
        }
        let eos_lp = s.log_probs[EOS_ID as usize];
        for (tok, lp) in top_k(&s.log_probs, options.beam_size) {
            let mut next = base.clone();
            next.tokens.push(tok);
            next.log_prob = base.log_prob + lp;
            if tok == EOS_ID {
                next.frames.push(0);
                next.finished = true;
                next.rewind = None;
            } else {
                next.rewind = Some((base.log_prob, eos_lp));
            }
            next.check();
            pool.push(next);
        }
    }
    pool.sort_by(|a, b| rank_by(a, b, |h| h.log_prob));
    pool.truncate(options.beam_size);
    Ok(pool)
}

fn is_exhausted(h: &Hypothesis, options: &DecodeOptions) -> bool {
    !h.finished && h.tokens.len() >= options.max_tokens && h.frames.len() == h.tokens.len()
}

fn content_len(source: &[TokenId]) -> usize {
    source.iter().filter(|&&t| t != BOS_ID && t != EOS_ID && t != PAD_ID).count()
}

/// Translates one encoder input (`[BOS, ..., EOS]`, see
/// [`crate::model::wrap_source`]) under a frame budget. Greedy when
/// `beam_size` is 1.
pub fn translate_with_budget(source: &[TokenId], model: &Seq2Seq, options: &DecodeOptions) -> Result<Decoded> {
    options.validate()?;
    if content_len(source) == 0 {
        return Err(Error::invalid("empty source sentence"));
    }
    let encoded = model.encode(source)?;
    let mut beam = vec![Hypothesis::root()];
    loop {
        let (live, done): (Vec<Hypothesis>, Vec<Hypothesis>) =
            beam.into_iter().partition(|h| !h.finished && !is_exhausted(h, options));
        if live.is_empty() {
            beam = done;
            break;
        }
        beam = beam_step(&live, &done, model, &encoded, options)?;
    }
    let alpha = options.length_penalty;
    let best_finished = beam.iter().filter(|h| h.finished).min_by(|a, b| rank(a, b, alpha));
    match best_finished {
        Some(h) => Ok(Decoded { hypothesis: h.clone(), unfinished_warning: false }),
        None => {
            let h = beam.iter().min_by(|a, b| rank(a, b, alpha)).expect("beam is never empty").clone();
            log::warn!("no hypothesis reached EOS within {} tokens", options.max_tokens);
            Ok(Decoded { hypothesis: h, unfinished_warning: true })
        }
    }
}

/// Decodes many sentences in parallel; output order follows input order.
pub fn translate_batch(sources: &[(Vec<TokenId>, DecodeOptions)], model: &Seq2Seq) -> Result<Vec<Decoded>> {
    sources.par_iter().map(|(src, opts)| translate_with_budget(src, model, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(tokens: &[TokenId], log_prob: f64) -> Hypothesis {
        Hypothesis {
            tokens: tokens.to_vec(),
            log_prob,
            frames: vec![0; tokens.len()],
            cumulative_frames: 0,
            finished: true,
            rewind: None,
        }
    }

    #[test]
    fn penalty_values() {
        assert_eq!(length_penalty(1, 1.0), 1.0);
        assert!((length_penalty(7, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(length_penalty(40, 0.0), 1.0);
    }

    #[test]
    fn ties_go_to_smaller_token_id() {
        let a = h(&[9, EOS_ID], -1.0);
        let b = h(&[8, EOS_ID], -1.0);
        assert_eq!(rank(&a, &b, 0.0), Ordering::Greater);
        let c = h(&[4, 9], -1.0);
        let d = h(&[5, 8], -1.0);
        assert_eq!(rank(&c, &d, 0.0), Ordering::Greater);
    }

    #[test]
    fn top_k_skips_pad_and_bos() {
        let lp = [0.0, -0.1, -3.0, -0.5, -0.5];
        assert_eq!(top_k(&lp, 2), vec![(3, -0.5), (4, -0.5)]);
    }

    #[test]
    fn option_checks() {
        assert!(DecodeOptions::with_budget(0).validate().is_err());
        assert!(DecodeOptions { beam_size: 0, ..DecodeOptions::with_budget(5) }.validate().is_err());
        assert!(DecodeOptions::with_budget(5).validate().is_ok());
    }
}
