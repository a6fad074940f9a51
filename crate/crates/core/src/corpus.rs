//! Versioned JSONL records shared by the pipeline stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema version written on every record. Readers accept any `1.x`.
pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

fn check_version(v: &str) -> Result<()> {
    let major = v.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(SUPPORTED_MAJOR) => Ok(()),
        _ => Err(Error::Schema(format!("unsupported schema version `{v}` (expected {SUPPORTED_MAJOR}.x)"))),
    }
}

/// A record type stored one per JSONL line.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    fn version(&self) -> &str;

    /// Structural checks beyond what serde enforces.
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

fn sum(frames: &[u32]) -> u64 {
    frames.iter().map(|&f| f as u64).sum()
}

/// One parallel sentence with per-token frames on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    #[serde(default = "schema_version")]
    pub version: String,
    pub id: String,
    pub src_text: String,
    pub tgt_text: String,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    pub src_token_frames: Vec<u32>,
    pub tgt_token_frames: Vec<u32>,
    pub src_total_frames: u64,
    pub tgt_total_frames: u64,
}

impl CorpusRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        src_text: impl Into<String>,
        tgt_text: impl Into<String>,
        src_tokens: Vec<String>,
        src_token_frames: Vec<u32>,
        tgt_tokens: Vec<String>,
        tgt_token_frames: Vec<u32>,
    ) -> Result<Self> {
        let r = Self {
            version: schema_version(),
            id: id.into(),
            src_text: src_text.into(),
            tgt_text: tgt_text.into(),
            src_total_frames: sum(&src_token_frames),
            tgt_total_frames: sum(&tgt_token_frames),
            src_tokens,
            tgt_tokens,
            src_token_frames,
            tgt_token_frames,
        };
        r.validate()?;
        Ok(r)
    }

    /// Budget named by a column, e.g. `src_total_frames` for source-length
    /// control or `tgt_total_frames` for gold-target control.
    pub fn budget(&self, column: &str) -> Result<u64> {
        match column {
            "src_total_frames" => Ok(self.src_total_frames),
            "tgt_total_frames" => Ok(self.tgt_total_frames),
            other => Err(Error::Schema(format!("unknown budget column `{other}`"))),
        }
    }
}

impl JsonlRecord for CorpusRecord {
    fn version(&self) -> &str {
        &self.version
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("record `{}`: {m}", self.id)));
        if self.src_tokens.len() != self.src_token_frames.len() {
            return bad("source tokens and frames differ in length".into());
        }
        if self.tgt_tokens.len() != self.tgt_token_frames.len() {
            return bad("target tokens and frames differ in length".into());
        }
        if sum(&self.src_token_frames) != self.src_total_frames {
            return bad(format!("src_total_frames {} is not the frame sum", self.src_total_frames));
        }
        if sum(&self.tgt_token_frames) != self.tgt_total_frames {
            return bad(format!("tgt_total_frames {} is not the frame sum", self.tgt_total_frames));
        }
        Ok(())
    }
}

/// Decoder input line: a pre-tokenized source with its budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    #[serde(default = "schema_version")]
    pub version: String,
    pub id: String,
    pub src_tokens: Vec<String>,
    pub budget_frames: u64,
}

impl JsonlRecord for TranslateRequest {
    fn version(&self) -> &str {
        &self.version
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateOutput {
    #[serde(default = "schema_version")]
    pub version: String,
    pub id: String,
    pub tgt_tokens: Vec<String>,
    pub token_frames: Vec<u32>,
    pub total_frames: u64,
    /// `total_frames / budget_frames`.
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unfinished: bool,
}

impl JsonlRecord for TranslateOutput {
    fn version(&self) -> &str {
        &self.version
    }

    fn validate(&self) -> Result<()> {
        if self.tgt_tokens.len() != self.token_frames.len() || sum(&self.token_frames) != self.total_frames {
            return Err(Error::Schema(format!("hypothesis `{}`: frames do not match tokens", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhonemeEntry {
    pub label: String,
    pub frames: u32,
}

/// Synthesis-side duration sequence with the frames it should fill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustRecord {
    #[serde(default = "schema_version")]
    pub version: String,
    pub id: String,
    pub phonemes: Vec<PhonemeEntry>,
    pub budget_frames: u32,
}

impl JsonlRecord for AdjustRecord {
    fn version(&self) -> &str {
        &self.version
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustOutput {
    #[serde(default = "schema_version")]
    pub version: String,
    pub id: String,
    pub phonemes: Vec<PhonemeEntry>,
    pub budget_frames: u32,
    pub total_frames: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unmet_budget: Option<u32>,
}

impl JsonlRecord for AdjustOutput {
    fn version(&self) -> &str {
        &self.version
    }
}

/// Parses JSONL text, rejecting unknown major versions and invalid records.
pub fn parse_jsonl<T: JsonlRecord>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(line).map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        check_version(rec.version()).map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: JsonlRecord>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_jsonl(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_jsonl<T: JsonlRecord>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: JsonlRecord>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(records)?.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
