//! gen-toy -> train -> translate -> evaluate -> adjust through the same
//! entry points the CLI uses, in a temporary directory.

use isodub::config::RunConfig;
use isodub::corpus::{write_jsonl, AdjustRecord, PhonemeEntry};
use isodub::harness::FrameSource;
use isodub::pipeline;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let mut cfg = RunConfig::default();
    cfg.toy.size = 1500;
    cfg.train.steps = 300;

    pipeline::cmd_gen_toy(&cfg, 100, &root.join("toy"))?;
    pipeline::cmd_train(&cfg, &root.join("toy/train.jsonl"), Some(&root.join("toy/vocab.txt")), &root.join("run"))?;
    pipeline::cmd_translate(&cfg, &root.join("run/model.ckpt"), &root.join("toy/test.jsonl"), &root.join("hyp.jsonl"))?;
    let lex = cfg.toy.lexicon();
    let report = pipeline::cmd_evaluate(&root.join("hyp.jsonl"), &root.join("toy/test.jsonl"), FrameSource::Lexicon(&lex))?;
    print!("{}", report.to_text());

    let phones = [("HH", 6), ("AH0", 9), ("L", 5), ("OW1", 12)]
        .iter()
        .map(|&(label, frames)| PhonemeEntry { label: label.into(), frames })
        .collect();
    let req = AdjustRecord { version: "1.0".into(), id: "hello".into(), phonemes: phones, budget_frames: 40 };
    write_jsonl(&root.join("adjust.jsonl"), &[req])?;
    let unmet = pipeline::cmd_adjust(&root.join("adjust.jsonl"), &root.join("adjusted.jsonl"))?;
    print!("{}", std::fs::read_to_string(root.join("adjusted.jsonl"))?);
    println!("unmet budgets: {unmet}");
    Ok(())
}
