//! The verbosity-token baseline: bucket training pairs by target/source
//! token ratio and tag the source; inference always asks for "normal".

use isodub::harness::{bucket_thresholds, prepend_control_token, VerbosityBucket};
use isodub::tokenizer::BOS_ID;

fn main() -> isodub::Result<()> {
    let ratios = [0.7, 0.85, 0.9, 1.0, 1.0, 1.05, 1.1, 1.3, 1.6];
    let t = bucket_thresholds(&ratios)?;
    println!("thresholds low={} high={}", t.low, t.high);
    for r in ratios {
        println!("  {r:.2} -> {:?}", t.bucket(r));
    }
    let flat = bucket_thresholds(&[1.0; 6])?;
    println!("degenerate sample falls back to ({}, {})", flat.low, flat.high);

    let src = [BOS_ID, 40, 41, 42];
    println!("inference source {:?}", prepend_control_token(&src, VerbosityBucket::Normal));
    Ok(())
}
