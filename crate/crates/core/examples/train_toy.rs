//! Trains a small duration-aware model on the synthetic corpus and prints
//! the loss curve. Pass a step count to train longer (default 400).

use isodub::harness::{toy_splits, ToyCorpusSpec};
use isodub::model::ModelConfig;
use isodub::pipeline::{build_vocabulary, train_on_records};
use isodub::train::TrainConfig;

fn main() -> isodub::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let spec = ToyCorpusSpec { size: 2000, ..ToyCorpusSpec::default() };
    let (train, _) = toy_splits(&spec, 0)?;
    let vocab = build_vocabulary(&train);
    println!("{} pairs, {} tokens in vocabulary", train.len(), vocab.len());
    let first = &train[0];
    println!("e.g. {}  ->  {}  ({} -> {} frames)", first.src_text, first.tgt_text, first.src_total_frames, first.tgt_total_frames);

    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig { steps, log_every: 50, ..TrainConfig::default() };
    let (_, log) = train_on_records(&train, &vocab, &model_cfg, &train_cfg, |r| {
        println!("step {:>5}  lr {:.2e}  ce {:.3}  dur {:.3}", r.step, r.lr, r.cross_entropy, r.duration);
    })?;
    let last = log.rows.last().expect("at least one log row");
    println!("final total loss {:.3}", last.total);
    Ok(())
}
