//! Vowel-only duration adjustment for the synthesis stage.
//!
//! Consonant frames are kept as they are; vowels and silences are scaled so
//! the phoneme sequence fills a frame budget exactly.

use serde::{Deserialize, Serialize};

use crate::align::is_silence_label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhonemeClass {
    Vowel,
    Consonant,
    Silence,
}

const ARPABET_VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

const ARPABET_CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V", "W",
    "Y", "Z", "ZH",
];

/// ARPAbet classification: stressed labels (`AA1`) and bare vowel symbols are
/// vowels, aligner silence labels are silence.
pub fn classify(label: &str) -> Result<PhonemeClass> {
    if is_silence_label(label) || label == "spn" {
        return Ok(PhonemeClass::Silence);
    }
    let upper = label.to_ascii_uppercase();
    let base = upper.trim_end_matches(|c: char| c.is_ascii_digit());
    let has_stress = base.len() < upper.len();
    if ARPABET_VOWELS.contains(&base) && (has_stress || base == upper) {
        if has_stress && !matches!(&upper[base.len()..], "0" | "1" | "2") {
            return Err(Error::UnknownPhoneme(label.to_string()));
        }
        return Ok(PhonemeClass::Vowel);
    }
    if !has_stress && ARPABET_CONSONANTS.contains(&base) {
        return Ok(PhonemeClass::Consonant);
    }
    Err(Error::UnknownPhoneme(label.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeDuration {
    pub label: String,
    pub frames: u32,
    pub class: PhonemeClass,
}

impl PhonemeDuration {
    pub fn new(label: &str, frames: u32) -> Result<Self> {
        let class = classify(label)?;
        if frames == 0 && class != PhonemeClass::Silence {
            return Err(Error::invalid(format!("phoneme `{label}` has zero frames")));
        }
        Ok(Self { label: label.to_string(), frames, class })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmetBudget {
    pub requested: u32,
    pub achieved: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub phonemes: Vec<PhonemeDuration>,
    pub total_frames: u32,
    /// Set when the one-frame vowel floor made the budget unreachable.
    pub unmet: Option<UnmetBudget>,
}

/// Scales vowels and silences by `(budget - consonants) / scalable` with
/// largest-remainder rounding, keeping each vowel at one frame or more.
pub fn vowel_scale(sequence: &[PhonemeDuration], budget_frames: u32) -> Result<Adjustment> {
    if sequence.is_empty() {
        return Err(Error::invalid("empty phoneme sequence"));
    }
    if budget_frames == 0 {
        return Err(Error::invalid("budget must be at least one frame"));
    }
    let consonants: i64 = sequence
        .iter()
        .filter(|p| p.class == PhonemeClass::Consonant)
        .map(|p| p.frames as i64)
        .sum();
    let scalable: Vec<usize> = (0..sequence.len())
        .filter(|&i| sequence[i].class != PhonemeClass::Consonant)
        .collect();
    let scalable_sum: i64 = scalable.iter().map(|&i| sequence[i].frames as i64).sum();
    let target = budget_frames as i64 - consonants;

    if scalable_sum == 0 {
        if target == 0 {
            return Ok(finish(sequence.to_vec(), budget_frames));
        }
        return Err(Error::Unadjustable(format!(
            "no vowel or silence frames to scale; consonants fill {consonants} frames, budget is {budget_frames}"
        )));
    }

    let mut out = sequence.to_vec();
    let mut clamped = vec![false; sequence.len()];
    loop {
        let fixed: i64 = scalable.iter().filter(|&&i| clamped[i]).count() as i64;
        let free: Vec<usize> = scalable.iter().copied().filter(|&i| !clamped[i]).collect();
        let free_sum: i64 = free.iter().map(|&i| sequence[i].frames as i64).sum();
        let remaining = target - fixed;
        if free_sum == 0 || remaining < 0 {
            // Everything that can shrink is at its floor.
            for &i in &scalable {
                out[i].frames = if out[i].class == PhonemeClass::Vowel { 1 } else { 0 };
            }
            break;
        }
        let s = remaining as f64 / free_sum as f64;
        let ideal: Vec<f64> = free.iter().map(|&i| sequence[i].frames as f64 * s).collect();
        let newly: Vec<usize> = free
            .iter()
            .zip(&ideal)
            .filter(|(&i, &x)| sequence[i].class == PhonemeClass::Vowel && x < 1.0)
            .map(|(&i, _)| i)
            .collect();
        if !newly.is_empty() {
            newly.iter().for_each(|&i| clamped[i] = true);
            continue;
        }
        for &i in scalable.iter().filter(|&&i| clamped[i]) {
            out[i].frames = 1;
        }
        let floors: Vec<i64> = ideal.iter().map(|x| x.floor() as i64).collect();
        let mut leftover = remaining - floors.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..free.len()).collect();
        // largest fractional part first, earlier position on ties
        order.sort_by(|&a, &b| {
            let fa = ideal[a] - floors[a] as f64;
            let fb = ideal[b] - floors[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let mut values = floors;
        for &k in &order {
            if leftover <= 0 {
                break;
            }
            values[k] += 1;
            leftover -= 1;
        }
        for (k, &i) in free.iter().enumerate() {
            out[i].frames = values[k] as u32;
        }
        break;
    }
    Ok(finish(out, budget_frames))
}

fn finish(phonemes: Vec<PhonemeDuration>, budget: u32) -> Adjustment {
    let total: u32 = phonemes.iter().map(|p| p.frames).sum();
    Adjustment {
        unmet: (total != budget).then_some(UnmetBudget { requested: budget, achieved: total }),
        phonemes,
        total_frames: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(items: &[(&str, u32)]) -> Vec<PhonemeDuration> {
        items.iter().map(|&(l, f)| PhonemeDuration::new(l, f).unwrap()).collect()
    }

    fn frames(a: &Adjustment) -> Vec<u32> {
        a.phonemes.iter().map(|p| p.frames).collect()
    }

    #[test]
    fn classes() {
        assert_eq!(classify("AA1").unwrap(), PhonemeClass::Vowel);
        assert_eq!(classify("ah0").unwrap(), PhonemeClass::Vowel);
        assert_eq!(classify("IY").unwrap(), PhonemeClass::Vowel);
        assert_eq!(classify("K").unwrap(), PhonemeClass::Consonant);
        assert_eq!(classify("sil").unwrap(), PhonemeClass::Silence);
        assert_eq!(classify("").unwrap(), PhonemeClass::Silence);
        assert!(matches!(classify("QX"), Err(Error::UnknownPhoneme(l)) if l == "QX"));
        assert!(classify("K1").is_err());
        assert!(classify("AA7").is_err());
    }

    #[test]
    fn scaling_examples() {
        let s = seq(&[("K", 10), ("AA1", 20), ("T", 10)]);
        assert_eq!(frames(&vowel_scale(&s, 60).unwrap()), vec![10, 40, 10]);
        let same = vowel_scale(&s, 40).unwrap();
        assert_eq!(frames(&same), vec![10, 20, 10]);
        assert!(same.unmet.is_none());

        let s = seq(&[("K", 10), ("AA1", 20), ("T", 10)]);
        let a = vowel_scale(&s, 21).unwrap();
        assert_eq!(frames(&a), vec![10, 1, 10]);
        assert_eq!(a.total_frames, 21);
        assert!(a.unmet.is_none());
    }

    #[test]
    fn unreachable_budget_reports() {
        let s = seq(&[("K", 10), ("AA1", 20), ("T", 10)]);
        let a = vowel_scale(&s, 15).unwrap();
        assert_eq!(frames(&a), vec![10, 1, 10]);
        assert_eq!(a.unmet, Some(UnmetBudget { requested: 15, achieved: 21 }));

        let c = seq(&[("K", 10), ("T", 5)]);
        assert!(matches!(vowel_scale(&c, 20), Err(Error::Unadjustable(_))));
        assert_eq!(frames(&vowel_scale(&c, 15).unwrap()), vec![10, 5]);
    }

    #[test]
    fn largest_remainder_hits_budget() {
        let s = seq(&[("AA1", 3), ("sil", 3), ("IY0", 3), ("S", 4)]);
        let a = vowel_scale(&s, 14).unwrap();
        assert_eq!(a.total_frames, 14);
        assert_eq!(frames(&a), vec![4, 3, 3, 4]);
    }
}
