//! Shows how the decoder input combines the word embedding with ordinal,
//! absolute-duration and relative-duration positions.

use isodub::embed::{decoder_input, positional_terms, quantize_ratio, DecoderStepState, EmbeddingConfig, PeFlags};

fn main() -> isodub::Result<()> {
    let n = 5;
    println!("budget 240 frames, N = {n}");
    for cum in [0, 47, 48, 120, 239, 240, 300] {
        println!("  cumulative {cum:>3} -> bucket {}", quantize_ratio(cum, 240, n));
    }

    let mut cfg = EmbeddingConfig::new(8, n, 1024);
    let state = DecoderStepState { step_index: 3, cumulative_frames: 120, total_budget_frames: 240 };
    let word = vec![0.0; 8];
    let full = decoder_input(&word, &state, &cfg)?;
    println!("\nfull input     {:?}", round(&full));
    cfg.flags = PeFlags::VANILLA;
    println!("ordinal only   {:?}", round(&positional_terms(&state, &cfg)?));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
