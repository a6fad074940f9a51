//! Corpus BLEU and speech-length compliance on a handful of sentences.

use isodub::metrics::{bleu, evaluate, slc, EvalRecord};

fn main() -> isodub::Result<()> {
    let hyps = ["the cat sat on the mat", "a dog barked loudly", "it is raining"];
    let refs = [vec!["the cat sat on the mat"], vec!["the dog barked loudly"], vec!["it rains today"]];
    let b = bleu(&hyps, &refs)?;
    println!("BLEU {:.2}  precisions {:?}  BP {:.3}", b.score, b.precisions, b.brevity_penalty);

    let ratios = [1.0, 0.8, 1.19, 1.35, 0.55];
    println!("SLC_0.2 {:.1}  SLC_0.4 {:.1}", slc(&ratios, 0.2)?, slc(&ratios, 0.4)?);

    let records: Vec<EvalRecord> = hyps
        .iter()
        .zip(&refs)
        .zip([(100, 96), (80, 110), (120, 60)])
        .enumerate()
        .map(|(i, ((h, r), (src, hyp)))| EvalRecord {
            id: i.to_string(),
            source_frames: src,
            hypothesis_frames: hyp,
            hypothesis: h.to_string(),
            references: r.iter().map(|s| s.to_string()).collect(),
        })
        .collect();
    print!("{}", evaluate(&records)?.to_text());
    Ok(())
}
