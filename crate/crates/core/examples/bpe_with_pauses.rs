//! Learns BPE merges and splits word durations across subwords, with a
//! `[P]` token carrying each inter-word pause.

use isodub::align::WordDuration;
use isodub::tokenizer::{segment_with_pauses, train_bpe, Attribution};

fn main() -> isodub::Result<()> {
    let text = ["the lower the slower", "slowest and lowest", "newer and wider", "the newest widest lower"];
    let merges = train_bpe(&text, 20)?;
    println!("{} merges, first few: {:?}", merges.len(), &merges.merges()[..merges.len().min(5)]);

    let words = vec![
        WordDuration::new("the", 12, 3),
        WordDuration::new("slowest", 40, 0),
        WordDuration::new("widest", 35, 0),
    ];
    for attribution in [Attribution::FinalSubword, Attribution::Uniform] {
        let seq = segment_with_pauses(&words, &merges, attribution)?;
        println!("\n{attribution:?}: {} frames", seq.total_frames());
        for (t, d) in seq.tokens.iter().zip(&seq.durations) {
            println!("  {t:<10} {d}");
        }
    }
    Ok(())
}
