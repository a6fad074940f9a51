//! Stage implementations behind the command line: prepare, train,
//! translate, evaluate and adjust. The functions work on in-memory records;
//! `cmd_*` wrappers add file handling.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adjust::{vowel_scale, PhonemeDuration};
use crate::align::{parse_textgrid, word_durations};
use crate::checkpoint;
use crate::config::{PrepareConfig, RunConfig};
use crate::corpus::{
    read_jsonl, write_jsonl, AdjustOutput, AdjustRecord, CorpusRecord, PhonemeEntry, TranslateOutput,
    TranslateRequest, SCHEMA_VERSION,
};
use crate::decode::{translate_with_budget, DecodeOptions};
use crate::error::{Error, Result};
use crate::harness::{
    bucket_thresholds, generate_toy_corpus, prepend_control_token, token_count_ratio, FrameSource,
    VerbosityBucket,
};
use crate::metrics::{evaluate, EvalRecord, MetricsReport};
use crate::model::{wrap_source, Example, ModelConfig, Seq2Seq};
use crate::tokenizer::{
    detokenize_tokens, segment_with_pauses, train_bpe, MergeTable, TokenId, Vocabulary, UNK_ID,
};
use crate::train::{LogRow, TrainConfig, Trainer, TrainingLog};

/// Joint source/target vocabulary: reserved tokens, then corpus tokens in
/// sorted order so the ids do not depend on record order.
pub fn build_vocabulary(records: &[CorpusRecord]) -> Vocabulary {
    let tokens: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.src_tokens.iter().chain(&r.tgt_tokens))
        .map(String::as_str)
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Encoder input for a token list, with the normal control token when the
/// model is a verbosity baseline.
pub fn encoder_input(config: &ModelConfig, ids: &[TokenId]) -> Vec<TokenId> {
    let src = wrap_source(ids);
    match config.verbosity {
        Some(_) => prepend_control_token(&src, VerbosityBucket::Normal),
        None => src,
    }
}

/// Training examples. Verbosity baselines get each source tagged with the
/// bucket of its own token-count ratio.
pub fn examples_from_records(records: &[CorpusRecord], vocab: &Vocabulary, config: &ModelConfig) -> Vec<Example> {
    records
        .iter()
        .map(|r| {
            let mut src = wrap_source(&vocab.encode(&r.src_tokens));
            if let Some(t) = config.verbosity {
                src = prepend_control_token(&src, t.bucket(token_count_ratio(r)));
            }
            Example { src, tgt: vocab.encode(&r.tgt_tokens), tgt_frames: r.tgt_token_frames.clone() }
        })
        .collect()
}

/// Fills vocabulary sizes and, for a verbosity model, the thresholds.
pub fn model_config_for(base: &ModelConfig, vocab: &Vocabulary, records: &[CorpusRecord]) -> Result<ModelConfig> {
    let mut cfg = ModelConfig { src_vocab: vocab.len(), tgt_vocab: vocab.len(), ..base.clone() };
    if cfg.verbosity.is_some() {
        let ratios: Vec<f64> = records.iter().map(token_count_ratio).collect();
        cfg.verbosity = Some(bucket_thresholds(&ratios)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_on_records(
    records: &[CorpusRecord],
    vocab: &Vocabulary,
    model: &ModelConfig,
    train: &TrainConfig,
    on_log: impl FnMut(&LogRow),
) -> Result<(Seq2Seq, TrainingLog)> {
    let cfg = model_config_for(model, vocab, records)?;
    let examples = examples_from_records(records, vocab, &cfg);
    let mut trainer = Trainer::new(Seq2Seq::new(cfg)?, train.clone())?;
    let log = trainer.fit(&examples, on_log)?;
    Ok((trainer.into_model(), log))
}

pub fn requests_from_records(records: &[CorpusRecord], budget_column: &str) -> Result<Vec<TranslateRequest>> {
    records
        .iter()
        .map(|r| {
            Ok(TranslateRequest {
                version: SCHEMA_VERSION.into(),
                id: r.id.clone(),
                src_tokens: r.src_tokens.clone(),
                budget_frames: r.budget(budget_column)?,
            })
        })
        .collect()
}

/// Decodes every request in parallel; output order follows the input.
/// `options.budget_frames` is replaced by each request's budget.
pub fn translate_requests(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    requests: &[TranslateRequest],
    options: &DecodeOptions,
) -> Result<Vec<TranslateOutput>> {
    requests
        .par_iter()
        .map(|req| {
            let budget = u32::try_from(req.budget_frames.max(1))
                .map_err(|_| Error::invalid(format!("`{}`: budget too large", req.id)))?;
            let ids = vocab.encode(&req.src_tokens);
            if ids.contains(&UNK_ID) {
                log::warn!("`{}`: source has out-of-vocabulary tokens", req.id);
            }
            let opts = DecodeOptions { budget_frames: budget, ..*options };
            let out = translate_with_budget(&encoder_input(model.config(), &ids), model, &opts)?;
            let h = &out.hypothesis;
            let tgt_tokens = h.content().iter().map(|&t| vocab.token(t).map(str::to_string)).collect::<Result<Vec<_>>>()?;
            let token_frames = h.content_frames().to_vec();
            let total: u64 = token_frames.iter().map(|&f| f as u64).sum();
            Ok(TranslateOutput {
                version: SCHEMA_VERSION.into(),
                id: req.id.clone(),
                tgt_tokens,
                token_frames,
                total_frames: total,
                ratio: total as f64 / budget as f64,
                unfinished: out.unfinished_warning,
            })
        })
        .collect()
}

/// Pairs hypotheses with their corpus records by id.
pub fn eval_records(outputs: &[TranslateOutput], references: &[CorpusRecord], frames: FrameSource<'_>) -> Result<Vec<EvalRecord>> {
    let by_id: std::collections::HashMap<&str, &CorpusRecord> = references.iter().map(|r| (r.id.as_str(), r)).collect();
    outputs
        .iter()
        .map(|o| {
            let r = by_id
                .get(o.id.as_str())
                .ok_or_else(|| Error::Schema(format!("hypothesis `{}` has no reference", o.id)))?;
            let hypothesis_frames = match frames {
                FrameSource::Predicted => o.total_frames,
                FrameSource::Lexicon(lex) => lex.synthesize(&o.tgt_tokens, &o.token_frames),
            };
            Ok(EvalRecord {
                id: o.id.clone(),
                source_frames: r.src_total_frames,
                hypothesis_frames,
                hypothesis: detokenize_tokens(&o.tgt_tokens),
                references: vec![r.tgt_text.clone()],
            })
        })
        .collect()
}

pub fn adjust_records(records: &[AdjustRecord]) -> Result<Vec<AdjustOutput>> {
    records
        .iter()
        .map(|r| {
            let seq = r
                .phonemes
                .iter()
                .map(|p| PhonemeDuration::new(&p.label, p.frames))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::invalid(format!("`{}`: {e}", r.id)))?;
            let adj = vowel_scale(&seq, r.budget_frames).map_err(|e| match e {
                Error::Unadjustable(m) => Error::Unadjustable(format!("`{}`: {m}", r.id)),
                other => other,
            })?;
            Ok(AdjustOutput {
                version: SCHEMA_VERSION.into(),
                id: r.id.clone(),
                phonemes: adj.phonemes.iter().map(|p| PhonemeEntry { label: p.label.clone(), frames: p.frames }).collect(),
                budget_frames: r.budget_frames,
                total_frames: adj.total_frames,
                unmet_budget: adj.unmet.map(|u| u.achieved),
            })
        })
        .collect()
}

/// Result of preparing an aligned corpus.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub records: Vec<CorpusRecord>,
    pub vocab: Vocabulary,
    pub merges: MergeTable,
}

/// Builds a corpus from `<id>.src.TextGrid` / `<id>.tgt.TextGrid` pairs.
/// BPE merges are learned jointly on both sides' words.
pub fn prepare_textgrids(dir: &Path, config: &PrepareConfig) -> Result<Prepared> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".src.TextGrid") {
            ids.insert(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid(format!("no *.src.TextGrid files in {}", dir.display())));
    }
    let read = |p: PathBuf| -> Result<Vec<crate::align::WordDuration>> {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let tiers = parse_textgrid(&text).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
        word_durations(&tiers.words, config.frames_per_second)
    };
    let mut pairs = Vec::new();
    for id in &ids {
        let src = read(dir.join(format!("{id}.src.TextGrid")))?;
        let tgt = read(dir.join(format!("{id}.tgt.TextGrid")))?;
        pairs.push((id.clone(), src, tgt));
    }
    let words: Vec<&str> =
        pairs.iter().flat_map(|(_, s, t)| s.iter().chain(t).map(|w| w.word.as_str())).collect();
    let merges = train_bpe(&words, config.bpe_merges)?;
    let mut records = Vec::with_capacity(pairs.len());
    for (id, src, tgt) in &pairs {
        let s = segment_with_pauses(src, &merges, config.attribution)?;
        let t = segment_with_pauses(tgt, &merges, config.attribution)?;
        let text = |w: &[crate::align::WordDuration]| w.iter().map(|x| x.word.as_str()).collect::<Vec<_>>().join(" ");
        records.push(CorpusRecord::new(id, text(src), text(tgt), s.tokens, s.durations, t.tokens, t.durations)?);
    }
    let vocab = build_vocabulary(&records);
    Ok(Prepared { records, vocab, merges })
}

// ---------------------------------------------------------------------------
// File-level commands

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `train.jsonl`, `test.jsonl` and `vocab.txt` for the toy corpus.
pub fn cmd_gen_toy(config: &RunConfig, test_size: usize, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let (train, test) = crate::harness::toy_splits(&config.toy, test_size)?;
    write_jsonl(&out_dir.join("train.jsonl"), &train)?;
    write_jsonl(&out_dir.join("test.jsonl"), &test)?;
    let mut all = train;
    all.extend(test);
    build_vocabulary(&all).save(&out_dir.join("vocab.txt"))
}

/// Aligned corpus to `corpus.jsonl`, `vocab.txt` and `merges.txt`.
pub fn cmd_prepare(config: &RunConfig, textgrids: Option<&Path>, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let (records, vocab) = match textgrids {
        Some(dir) => {
            let p = prepare_textgrids(dir, &config.prepare)?;
            write_text(&out_dir.join("merges.txt"), &p.merges.to_text())?;
            (p.records, p.vocab)
        }
        None => {
            let records = generate_toy_corpus(&config.toy)?;
            let vocab = build_vocabulary(&records);
            (records, vocab)
        }
    };
    write_jsonl(&out_dir.join("corpus.jsonl"), &records)?;
    vocab.save(&out_dir.join("vocab.txt"))
}

/// Trains on a corpus and writes `model.ckpt` and `train_log.csv`.
pub fn cmd_train(config: &RunConfig, corpus: &Path, vocab: Option<&Path>, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let records: Vec<CorpusRecord> = read_jsonl(corpus)?;
    let vocab = match vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocabulary(&records),
    };
    let (model, log) = train_on_records(&records, &vocab, &config.model, &config.train, |row| {
        log::info!("step {} lr {:.2e} ce {:.4} dur {:.4}", row.step, row.lr, row.cross_entropy, row.duration);
    })?;
    checkpoint::save(&out_dir.join("model.ckpt"), &model, &vocab)?;
    write_text(&out_dir.join("train_log.csv"), &log.to_csv())
}

/// Reads either corpus records (budget taken from `budget_column`) or raw
/// translate requests, detected from the first line.
pub fn read_requests(input: &Path, budget_column: &str) -> Result<Vec<TranslateRequest>> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let value: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Schema(format!("{}: {e}", input.display())))?;
    if value.get("budget_frames").is_some() {
        read_jsonl(input)
    } else {
        requests_from_records(&read_jsonl::<CorpusRecord>(input)?, budget_column)
    }
}

pub fn cmd_translate(config: &RunConfig, checkpoint_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let (model, vocab) = checkpoint::load(checkpoint_path)?;
    let requests = read_requests(input, &config.translate.budget_column)?;
    let outputs = translate_requests(&model, &vocab, &requests, &config.translate.options())?;
    let unfinished = outputs.iter().filter(|o| o.unfinished).count();
    if unfinished > 0 {
        log::warn!("{unfinished} of {} sentences hit max_tokens without EOS", outputs.len());
    }
    write_jsonl(output, &outputs)
}

pub fn cmd_evaluate(hypotheses: &Path, references: &Path, frames: FrameSource<'_>) -> Result<MetricsReport> {
    let outputs: Vec<TranslateOutput> = read_jsonl(hypotheses)?;
    let refs: Vec<CorpusRecord> = read_jsonl(references)?;
    evaluate(&eval_records(&outputs, &refs, frames)?)
}

pub fn cmd_adjust(input: &Path, output: &Path) -> Result<usize> {
    let records: Vec<AdjustRecord> = read_jsonl(input)?;
    let out = adjust_records(&records)?;
    let unmet = out.iter().filter(|o| o.unmet_budget.is_some()).count();
    write_jsonl(output, &out)?;
    Ok(unmet)
}
