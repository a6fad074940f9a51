#![allow(dead_code)]

use isodub::model::{wrap_source, DurationPredictorConfig, Example, ModelConfig, TrainingBatch};

/// Small model with dropout off so forward passes are deterministic.
pub fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        src_vocab: vocab,
        tgt_vocab: vocab,
        layers_enc: 2,
        layers_dec: 2,
        heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        dropout: 0.0,
        predictor: DurationPredictorConfig { kernel_size: 3, dropout: 0.0 },
        max_position: 512,
        seed: 7,
        ..ModelConfig::default()
    }
}

pub fn examples() -> Vec<Example> {
    vec![
        Example { src: wrap_source(&[8, 4, 9, 4, 10]), tgt: vec![11, 4, 12, 4, 13], tgt_frames: vec![6, 2, 9, 0, 4] },
        Example { src: wrap_source(&[12]), tgt: vec![9], tgt_frames: vec![7] },
        Example { src: wrap_source(&[10, 4, 11]), tgt: vec![8, 4, 8, 4, 15], tgt_frames: vec![3, 1, 3, 2, 12] },
    ]
}

pub fn batch() -> TrainingBatch {
    TrainingBatch::from_examples(&examples())
}

use isodub::corpus::CorpusRecord;
use isodub::harness::{toy_splits, ToyCorpusSpec};
use isodub::model::Seq2Seq;
use isodub::pipeline::{build_vocabulary, train_on_records};
use isodub::tokenizer::Vocabulary;
use isodub::train::TrainConfig;

pub struct ToyRun {
    pub spec: ToyCorpusSpec,
    pub model: Seq2Seq,
    pub vocab: Vocabulary,
    pub test: Vec<CorpusRecord>,
}

/// A small toy language trained briefly; enough for decoding tests.
pub fn quick_toy_model(steps: usize) -> ToyRun {
    let spec = ToyCorpusSpec { vocab_size: 6, min_len: 2, max_len: 5, size: 600, seed: 5, ..ToyCorpusSpec::default() };
    let (train, test) = toy_splits(&spec, 40).unwrap();
    let vocab = build_vocabulary(&train.iter().chain(&test).cloned().collect::<Vec<_>>());
    let cfg = ModelConfig {
        model_dim: 16,
        ffn_dim: 32,
        heads: 2,
        layers_enc: 1,
        layers_dec: 1,
        seed: 5,
        ..ModelConfig::default()
    };
    let tc = TrainConfig { steps, batch_size: 16, warmup_steps: 50, seed: 5, ..TrainConfig::default() };
    let (model, _) = train_on_records(&train, &vocab, &cfg, &tc, |_| {}).unwrap();
    ToyRun { spec, model, vocab, test }
}
