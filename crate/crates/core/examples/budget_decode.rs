//! Decodes one source sentence under several frame budgets, with and
//! without the hard stop.

use isodub::decode::{translate_with_budget, DecodeOptions};
use isodub::harness::{toy_splits, ToyCorpusSpec};
use isodub::model::ModelConfig;
use isodub::pipeline::{build_vocabulary, encoder_input, train_on_records};
use isodub::tokenizer::detokenize;
use isodub::train::TrainConfig;

fn main() -> isodub::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(800);
    let spec = ToyCorpusSpec { size: 3000, ..ToyCorpusSpec::default() };
    let (train, test) = toy_splits(&spec, 5)?;
    let mut all = train.clone();
    all.extend(test.iter().cloned());
    let vocab = build_vocabulary(&all);
    let (model, _) = train_on_records(&train, &vocab, &ModelConfig::default(), &TrainConfig { steps, ..TrainConfig::default() }, |_| {})?;

    let rec = &test[0];
    println!("source: {}  ({} frames)", rec.src_text, rec.src_total_frames);
    println!("gold:   {}  ({} frames)", rec.tgt_text, rec.tgt_total_frames);
    let src = encoder_input(model.config(), &vocab.encode(&rec.src_tokens));
    let base = rec.src_total_frames as u32;
    for budget in [base / 2, base, base * 3 / 2] {
        for (beam, hard_stop) in [(1, false), (4, false), (4, true)] {
            let opts = DecodeOptions { budget_frames: budget, beam_size: beam, hard_stop, ..DecodeOptions::default() };
            let out = translate_with_budget(&src, &model, &opts)?;
            let h = &out.hypothesis;
            let frames: u32 = h.content_frames().iter().sum();
            println!(
                "budget {budget:>4} beam {beam} hard_stop {hard_stop:<5} -> {frames:>4} frames  {}",
                detokenize(h.content(), &vocab)?
            );
        }
    }
    Ok(())
}
