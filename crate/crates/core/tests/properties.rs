use proptest::prelude::*;

use isodub::adjust::{vowel_scale, PhonemeClass, PhonemeDuration};
use isodub::align::WordDuration;
use isodub::corpus::{parse_jsonl, to_jsonl, CorpusRecord};
use isodub::embed::quantize_ratio;
use isodub::harness::{bucket_thresholds, VerbosityBucket};
use isodub::metrics::{bleu, SlcAccumulator};
use isodub::tokenizer::{segment_with_pauses, train_bpe, Attribution, PAUSE};

const LABELS: [&str; 8] = ["AA1", "IY0", "EH2", "K", "T", "S", "NG", "sil"];

fn phonemes() -> impl Strategy<Value = Vec<PhonemeDuration>> {
    prop::collection::vec((0..LABELS.len(), 1u32..30), 1..15)
        .prop_map(|v| v.into_iter().map(|(l, f)| PhonemeDuration::new(LABELS[l], f).unwrap()).collect())
}

proptest! {
    #[test]
    fn quantizer_stays_in_range(cum in 0u32..100_000, total in 1u32..50_000, n in 1u32..20) {
        let q = quantize_ratio(cum, total, n);
        prop_assert!(q <= n);
        prop_assert_eq!(q, ((n as f64 * cum as f64 / total as f64).floor() as u32).min(n));
    }

    #[test]
    fn adjustment_keeps_consonants_and_is_idempotent(seq in phonemes(), extra in 0u32..200) {
        let consonants: u32 = seq.iter().filter(|p| p.class == PhonemeClass::Consonant).map(|p| p.frames).sum();
        let vowels = seq.iter().filter(|p| p.class == PhonemeClass::Vowel).count() as u32;
        let has_scalable = seq.iter().any(|p| p.class != PhonemeClass::Consonant);
        let budget = (consonants + vowels + extra).max(1);
        let adj = match vowel_scale(&seq, budget) {
            Ok(a) => a,
            Err(_) => {
                prop_assert!(!has_scalable);
                return Ok(());
            }
        };
        for (a, b) in seq.iter().zip(&adj.phonemes) {
            if a.class == PhonemeClass::Consonant {
                prop_assert_eq!(a.frames, b.frames);
            }
            if a.class == PhonemeClass::Vowel {
                prop_assert!(b.frames >= 1);
            }
        }
        prop_assert_eq!(adj.total_frames, budget);
        prop_assert!(adj.unmet.is_none());
        let again = vowel_scale(&adj.phonemes, budget).unwrap();
        prop_assert_eq!(again, adj);
    }

    #[test]
    fn slc_stream_merges(ratios in prop::collection::vec(0.0f64..3.0, 1..60), split in 0usize..60) {
        let split = split.min(ratios.len());
        let mut whole = SlcAccumulator::new(0.2).unwrap();
        ratios.iter().for_each(|&r| whole.push(r));
        let (mut a, mut b) = (SlcAccumulator::new(0.2).unwrap(), SlcAccumulator::new(0.2).unwrap());
        ratios[..split].iter().for_each(|&r| a.push(r));
        ratios[split..].iter().for_each(|&r| b.push(r));
        a.merge(&b);
        prop_assert_eq!(a.percentage().unwrap(), whole.percentage().unwrap());
    }

    #[test]
    fn buckets_partition_the_ratios(ratios in prop::collection::vec(0.1f64..4.0, 3..80)) {
        let t = bucket_thresholds(&ratios).unwrap();
        prop_assert!(t.low < t.high);
        for &r in &ratios {
            let hits = [r <= t.low, r > t.low && r <= t.high, r > t.high];
            prop_assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
            let expect = [VerbosityBucket::Short, VerbosityBucket::Normal, VerbosityBucket::Long][hits.iter().position(|&h| h).unwrap()];
            prop_assert_eq!(t.bucket(r), expect);
        }
    }

    #[test]
    fn segmentation_conserves_frames(words in prop::collection::vec(("[a-e]{1,6}", 1u32..40, 0u32..10), 1..10), merges in 0usize..12) {
        let words: Vec<WordDuration> = words.into_iter().map(|(w, f, p)| WordDuration::new(w, f, p)).collect();
        let texts: Vec<&str> = words.iter().map(|w| w.word.as_str()).collect();
        let table = train_bpe(&texts, merges).unwrap();
        for attribution in [Attribution::FinalSubword, Attribution::Uniform] {
            let seq = segment_with_pauses(&words, &table, attribution).unwrap();
            let expect: u64 = words.iter().map(|w| w.frames as u64).sum::<u64>()
                + words[..words.len() - 1].iter().map(|w| w.trailing_pause_frames as u64).sum::<u64>();
            prop_assert_eq!(seq.total_frames(), expect);
            prop_assert_eq!(seq.tokens.iter().filter(|t| t.as_str() == PAUSE).count(), words.len() - 1);
        }
    }

    #[test]
    fn self_bleu_is_100(words in prop::collection::vec("[a-z]{1,5}", 4..20)) {
        let s = words.join(" ");
        let score = bleu(&[s.as_str()], &[vec![s.as_str()]]).unwrap().score;
        prop_assert!((score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_records_round_trip(frames in prop::collection::vec(0u32..500, 1..8)) {
        let tokens: Vec<String> = (0..frames.len()).map(|i| format!("w{i}")).collect();
        let r = CorpusRecord::new("x", "a", "b", tokens.clone(), frames.clone(), tokens, frames).unwrap();
        let back: Vec<CorpusRecord> = parse_jsonl(&to_jsonl(&[r.clone()]).unwrap()).unwrap();
        prop_assert_eq!(back, vec![r]);
    }
}
