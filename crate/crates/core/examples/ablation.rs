//! Trains the four positional-encoding variants on a small toy corpus and
//! prints the ablation table. Short runs; expect noisy numbers.

use isodub::checkpoint;
use isodub::decode::DecodeOptions;
use isodub::harness::{run_ablation, toy_splits, AblationRun, FrameSource, ToyCorpusSpec, Variant};
use isodub::model::ModelConfig;
use isodub::pipeline::{build_vocabulary, train_on_records};
use isodub::train::TrainConfig;

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let spec = ToyCorpusSpec { size: 3000, ..ToyCorpusSpec::default() };
    let (train, test) = toy_splits(&spec, 200)?;
    let mut all = train.clone();
    all.extend(test.iter().cloned());
    let vocab = build_vocabulary(&all);
    let dir = std::env::temp_dir().join("isodub-ablation-example");
    std::fs::create_dir_all(&dir)?;

    let mut runs = Vec::new();
    for v in Variant::TABLE {
        let cfg = ModelConfig { pe: v.flags(), ..ModelConfig::default() };
        let (model, _) = train_on_records(&train, &vocab, &cfg, &TrainConfig { steps, ..TrainConfig::default() }, |_| {})?;
        let path = dir.join(format!("{v:?}.ckpt"));
        checkpoint::save(&path, &model, &vocab)?;
        runs.push(AblationRun { name: v.label().into(), checkpoint: path });
    }
    let lex = spec.lexicon();
    let table = run_ablation(&runs, &test, "src_total_frames", &DecodeOptions::default(), FrameSource::Lexicon(&lex))?;
    print!("{}", table.to_tsv());
    Ok(())
}
