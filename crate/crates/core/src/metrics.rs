//! Isochrony and translation-quality metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synthesized-to-source speech length ratio.
pub fn speech_ratio(hypothesis_frames: u64, source_frames: u64) -> Result<f64> {
    if source_frames == 0 {
        return Err(Error::invalid("source duration is zero frames"));
    }
    Ok(hypothesis_frames as f64 / source_frames as f64)
}

/// Absorbs rounding in `1 - p` so ratios like `80 / 100` sit on the boundary.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Streaming speech-length-compliance counter for one tolerance `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlcAccumulator {
    p: f64,
    compliant: u64,
    total: u64,
}

impl SlcAccumulator {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("SLC tolerance {p} must lie in (0, 1)")));
        }
        Ok(Self { p, compliant: 0, total: 0 })
    }

    pub fn push(&mut self, ratio: f64) {
        self.total += 1;
        if (ratio - 1.0).abs() <= self.p + BOUNDARY_SLACK {
            self.compliant += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.compliant += other.compliant;
        self.total += other.total;
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    /// Percentage of ratios inside `[1 - p, 1 + p]`, endpoints included.
    pub fn percentage(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::invalid("SLC of an empty ratio list"));
        }
        Ok(100.0 * self.compliant as f64 / self.total as f64)
    }
}

pub fn slc(ratios: &[f64], p: f64) -> Result<f64> {
    let mut acc = SlcAccumulator::new(p)?;
    ratios.iter().for_each(|&r| acc.push(r));
    acc.percentage()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// Corpus BLEU-4 in `[0, 100]`.
    pub score: f64,
    /// Clipped n-gram precisions for n = 1..4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus-level BLEU-4 over whitespace-tokenized text, no smoothing.
/// Each hypothesis may have several references.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[Vec<R>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut possible = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::invalid("hypothesis without a reference"));
        }
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let refs: Vec<Vec<&str>> = refs.iter().map(|r| r.as_ref().split_whitespace().collect()).collect();
        hyp_len += h.len();
        // closest reference length, shorter on ties
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| ((l as i64 - h.len() as i64).abs(), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in hc {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            possible[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if possible[n] == 0 { 0.0 } else { matched[n] as f64 / possible[n] as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore { score, precisions, brevity_penalty, hypothesis_length: hyp_len, reference_length: ref_len })
}

/// One evaluated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub source_frames: u64,
    pub hypothesis_frames: u64,
    pub hypothesis: String,
    pub references: Vec<String>,
}

/// Summary emitted by the evaluate command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    #[serde(rename = "slc_0.2")]
    pub slc_02: f64,
    #[serde(rename = "slc_0.4")]
    pub slc_04: f64,
    pub mean_abs_ratio_error: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        format!(
            "n\t{}\nBLEU\t{:.2}\nSLC_0.2\t{:.2}\nSLC_0.4\t{:.2}\nmean|ratio-1|\t{:.4}\n",
            self.n, self.bleu, self.slc_02, self.slc_04, self.mean_abs_ratio_error
        )
    }
}

pub fn evaluate(records: &[EvalRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut s2 = SlcAccumulator::new(0.2)?;
    let mut s4 = SlcAccumulator::new(0.4)?;
    let mut abs_err = 0.0;
    for r in records {
        let ratio = speech_ratio(r.hypothesis_frames, r.source_frames)?;
        s2.push(ratio);
        s4.push(ratio);
        abs_err += (ratio - 1.0).abs();
    }
    let hyps: Vec<&str> = records.iter().map(|r| r.hypothesis.as_str()).collect();
    let refs: Vec<Vec<&str>> = records.iter().map(|r| r.references.iter().map(String::as_str).collect()).collect();
    Ok(MetricsReport {
        bleu: bleu(&hyps, &refs)?.score,
        slc_02: s2.percentage()?,
        slc_04: s4.percentage()?,
        mean_abs_ratio_error: abs_err / records.len() as f64,
        n: records.len(),
    })
}
