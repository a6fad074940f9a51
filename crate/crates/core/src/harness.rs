//! Baselines, a synthetic duration-annotated corpus and the ablation runner.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::CorpusRecord;
use crate::decode::DecodeOptions;
use crate::embed::PeFlags;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::Seq2Seq;
use crate::pipeline::{eval_records, requests_from_records, translate_requests};
use crate::tokenizer::{TokenId, Vocabulary, BOS_ID, LONG_ID, NORMAL_ID, PAUSE, SHORT_ID};

// ---------------------------------------------------------------------------
// Verbosity-token baseline

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbosityBucket {
    Short,
    Normal,
    Long,
}

impl VerbosityBucket {
    pub fn token_id(self) -> TokenId {
        match self {
            Self::Short => SHORT_ID,
            Self::Normal => NORMAL_ID,
            Self::Long => LONG_ID,
        }
    }
}

/// Used when the training ratios cannot be split into three groups.
pub const FALLBACK_THRESHOLDS: VerbosityThresholds = VerbosityThresholds { low: 0.95, high: 1.05 };

/// Bucket boundaries on the target/source token-count ratio. A ratio equal
/// to a boundary belongs to the lower bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbosityThresholds {
    pub low: f64,
    pub high: f64,
}

impl VerbosityThresholds {
    pub fn bucket(&self, ratio: f64) -> VerbosityBucket {
        if ratio <= self.low {
            VerbosityBucket::Short
        } else if ratio <= self.high {
            VerbosityBucket::Normal
        } else {
            VerbosityBucket::Long
        }
    }
}

/// Lower empirical terciles: the values at sorted index `ceil(n/3) - 1` and
/// `ceil(2n/3) - 1`.
pub fn bucket_thresholds(ratios: &[f64]) -> Result<VerbosityThresholds> {
    if ratios.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 ratios, got {}", ratios.len())));
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("ratios must be finite"));
    }
    let mut v = ratios.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let at = |num: usize| v[(num * n).div_ceil(3) - 1];
    let (low, high) = (at(1), at(2));
    if low == high {
        return Ok(FALLBACK_THRESHOLDS);
    }
    Ok(VerbosityThresholds { low, high })
}

/// Inserts the bucket token right after BOS (at the front if there is no BOS).
pub fn prepend_control_token(source: &[TokenId], bucket: VerbosityBucket) -> Vec<TokenId> {
    let mut out = source.to_vec();
    let at = usize::from(source.first() == Some(&BOS_ID));
    out.insert(at, bucket.token_id());
    out
}

/// Target/source ratio of word tokens (pauses and reserved tokens excluded).
pub fn token_count_ratio(record: &CorpusRecord) -> f64 {
    let words = |t: &[String]| t.iter().filter(|x| x.as_str() != PAUSE).count().max(1) as f64;
    words(&record.tgt_tokens) / words(&record.src_tokens)
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Generator settings for the toy language.
///
/// Source word `s<k>` translates to concept `c = perm(k)`, which has a short
/// surface form `t<c>` lasting `c` frames and a long form `u<c>` lasting
/// `long_factor * c` frames. The source word lasts `source_factor * c`
/// frames. Each sentence draws a verbosity `a ~ U(0, 1)` and uses the long
/// form for each word with probability `a`, so the gold target length varies
/// around the source length and only a duration-aware model can match it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusSpec {
    pub vocab_size: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub size: usize,
    pub seed: u64,
    pub max_pause_frames: u32,
    pub source_factor: u32,
    pub long_factor: u32,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            min_len: 3,
            max_len: 12,
            size: 10_000,
            seed: 13,
            max_pause_frames: 4,
            source_factor: 2,
            long_factor: 3,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy corpus: {m}")));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.source_factor == 0 || self.long_factor == 0 {
            return bad("duration factors must be positive");
        }
        Ok(())
    }

    /// Fixed source-word to concept permutation (1-based both ways).
    pub fn permutation(&self) -> Vec<u32> {
        let mut perm: Vec<u32> = (1..=self.vocab_size).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0f_7a7));
        perm
    }

    pub fn lexicon(&self) -> ToyLexicon {
        let mut frames = HashMap::new();
        for c in 1..=self.vocab_size {
            frames.insert(format!("t{c}"), c);
            frames.insert(format!("u{c}"), self.long_factor * c);
        }
        ToyLexicon { frames }
    }
}

/// Ground-truth word durations of the toy target language, standing in for
/// a synthesizer when measuring hypothesis length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyLexicon {
    frames: HashMap<String, u32>,
}

impl ToyLexicon {
    pub fn frames(&self, token: &str) -> Option<u32> {
        self.frames.get(token).copied()
    }

    /// Lexicon frames for words; pauses and unknown tokens keep `predicted`.
    pub fn synthesize(&self, tokens: &[String], predicted: &[u32]) -> u64 {
        tokens.iter().zip(predicted).map(|(t, &p)| self.frames(t).unwrap_or(p) as u64).sum()
    }
}

/// Deterministic parallel corpus for `spec`.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec) -> Result<Vec<CorpusRecord>> {
    spec.validate()?;
    let perm = spec.permutation();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let verbosity: f64 = rng.gen();
        let (mut st, mut sf, mut tt, mut tf) = (vec![], vec![], vec![], vec![]);
        let (mut src_words, mut tgt_words) = (vec![], vec![]);
        for w in 0..len {
            if w > 0 {
                st.push(PAUSE.to_string());
                sf.push(rng.gen_range(0..=spec.max_pause_frames));
                tt.push(PAUSE.to_string());
                tf.push(rng.gen_range(0..=spec.max_pause_frames));
            }
            let k = rng.gen_range(1..=spec.vocab_size);
            let c = perm[(k - 1) as usize];
            let long = rng.gen_bool(verbosity);
            let s = format!("s{k}");
            let t = if long { format!("u{c}") } else { format!("t{c}") };
            st.push(s.clone());
            sf.push(spec.source_factor * c);
            tt.push(t.clone());
            tf.push(if long { spec.long_factor * c } else { c });
            src_words.push(s);
            tgt_words.push(t);
        }
        out.push(CorpusRecord::new(
            format!("toy{}-{i:06}", spec.seed),
            src_words.join(" "),
            tgt_words.join(" "),
            st,
            sf,
            tt,
            tf,
        )?);
    }
    Ok(out)
}

/// Generates `spec.size + test_size` sentences and splits them in order.
pub fn toy_splits(spec: &ToyCorpusSpec, test_size: usize) -> Result<(Vec<CorpusRecord>, Vec<CorpusRecord>)> {
    let all = generate_toy_corpus(&ToyCorpusSpec { size: spec.size + test_size, ..spec.clone() })?;
    let mut train = all;
    let test = train.split_off(spec.size);
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Ablations

/// Model variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAbsolute,
    NoRelative,
    NoOrdinal,
    /// Plain transformer decoder input: no duration information at all.
    NoControl,
}

impl Variant {
    pub const TABLE: [Variant; 4] = [Variant::Full, Variant::NoAbsolute, Variant::NoRelative, Variant::NoOrdinal];

    pub fn flags(self) -> PeFlags {
        match self {
            Self::Full => PeFlags::FULL,
            Self::NoAbsolute => PeFlags { absolute: false, ..PeFlags::FULL },
            Self::NoRelative => PeFlags { relative: false, ..PeFlags::FULL },
            Self::NoOrdinal => PeFlags { ordinal: false, ..PeFlags::FULL },
            Self::NoControl => PeFlags::VANILLA,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAbsolute => "w/o abs PE",
            Self::NoRelative => "w/o rel PE",
            Self::NoOrdinal => "w/o original PE",
            Self::NoControl => "no control",
        }
    }
}

/// How hypothesis durations are measured.
#[derive(Debug, Clone, Copy)]
pub enum FrameSource<'a> {
    /// The decoder's own predicted frames.
    Predicted,
    /// A known lexicon (toy corpus); pauses fall back to predictions.
    Lexicon(&'a ToyLexicon),
}

/// Translates `test` under `budget_column` and scores it against the
/// source speech length.
pub fn evaluate_model(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    test: &[CorpusRecord],
    budget_column: &str,
    options: &DecodeOptions,
    frames: FrameSource<'_>,
) -> Result<MetricsReport> {
    let requests = requests_from_records(test, budget_column)?;
    let outputs = translate_requests(model, vocab, &requests, options)?;
    evaluate(&eval_records(&outputs, test, frames)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub bleu: f64,
    #[serde(rename = "slc_0.4")]
    pub slc_04: f64,
    #[serde(rename = "slc_0.2")]
    pub slc_02: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tbleu\tslc_0.4\tslc_0.2\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.2}\t{:.2}\t{:.2}", r.name, r.bleu, r.slc_04, r.slc_02);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl AblationRow {
    pub fn from_report(name: impl Into<String>, r: &MetricsReport) -> Self {
        Self { name: name.into(), bleu: r.bleu, slc_04: r.slc_04, slc_02: r.slc_02 }
    }
}

/// Evaluates each trained checkpoint on `test` and collects one row per run.
pub fn run_ablation(
    runs: &[AblationRun],
    test: &[CorpusRecord],
    budget_column: &str,
    options: &DecodeOptions,
    frames: FrameSource<'_>,
) -> Result<AblationTable> {
    if runs.is_empty() {
        return Err(Error::invalid("no ablation runs given"));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if !run.checkpoint.exists() {
            return Err(Error::Checkpoint(format!("missing checkpoint {}", run.checkpoint.display())));
        }
        let (model, vocab) = checkpoint::load(&run.checkpoint)?;
        let report = evaluate_model(&model, &vocab, test, budget_column, options, frames)?;
        log::info!("{}: BLEU {:.2} SLC_0.2 {:.2}", run.name, report.bleu, report.slc_02);
        rows.push(AblationRow::from_report(&run.name, &report));
    }
    Ok(AblationTable { rows })
}
