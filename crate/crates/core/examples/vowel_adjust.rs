//! Stretches or squeezes a phoneme sequence to a frame budget by scaling
//! vowels and silences only.

use isodub::adjust::{vowel_scale, PhonemeDuration};

fn main() -> isodub::Result<()> {
    let seq = [("HH", 6), ("AH0", 9), ("L", 5), ("OW1", 12), ("sp", 4), ("W", 7), ("ER1", 15), ("L", 6), ("D", 5)]
        .iter()
        .map(|&(l, f)| PhonemeDuration::new(l, f))
        .collect::<isodub::Result<Vec<_>>>()?;
    let total: u32 = seq.iter().map(|p| p.frames).sum();
    for budget in [total, total * 3 / 4, total * 5 / 4, 30] {
        let adj = vowel_scale(&seq, budget)?;
        let frames: Vec<String> = adj.phonemes.iter().map(|p| format!("{}:{}", p.label, p.frames)).collect();
        println!("budget {budget:>3} -> {:>3}  {}", adj.total_frames, frames.join(" "));
        if let Some(u) = adj.unmet {
            println!("    budget unreachable, got {} of {}", u.achieved, u.requested);
        }
    }
    Ok(())
}
