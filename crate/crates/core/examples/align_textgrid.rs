//! Reads a word/phone alignment and turns it into frame counts.

use isodub::align::{parse_textgrid, phone_frames, word_durations, write_textgrid, PhonemeInterval, Tier};

fn tier(name: &str, spans: &[(&str, f64, f64)]) -> Tier {
    Tier {
        name: name.into(),
        xmin: 0.0,
        xmax: spans.last().map_or(0.0, |s| s.2),
        intervals: spans.iter().map(|&(l, a, b)| PhonemeInterval::new(l, a, b)).collect(),
    }
}

fn main() -> isodub::Result<()> {
    let words = tier("words", &[("", 0.0, 0.1), ("hello", 0.1, 0.5), ("sp", 0.5, 0.65), ("world", 0.65, 1.1), ("", 1.1, 1.2)]);
    let phones = tier(
        "phones",
        &[
            ("sil", 0.0, 0.1),
            ("HH", 0.1, 0.18),
            ("AH0", 0.18, 0.3),
            ("L", 0.3, 0.38),
            ("OW1", 0.38, 0.5),
            ("sp", 0.5, 0.65),
            ("W", 0.65, 0.75),
            ("ER1", 0.75, 0.95),
            ("L", 0.95, 1.02),
            ("D", 1.02, 1.1),
            ("sil", 1.1, 1.2),
        ],
    );
    let doc = write_textgrid(&[words, phones]);
    let tiers = parse_textgrid(&doc)?;

    let fps = 80.0;
    for w in word_durations(&tiers.words, fps)? {
        println!("{:>8} {:>4} frames, then {:>3} frames of pause", w.word, w.frames, w.trailing_pause_frames);
    }
    for (p, (label, frames)) in tiers.phones.iter().zip(phone_frames(&tiers.phones, fps)?) {
        println!("{label:>4} {frames:>3} word={:?}", p.word_index);
    }
    Ok(())
}
