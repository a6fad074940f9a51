//! Forced-alignment ingestion.
//!
//! Reads Praat TextGrid documents (long or short text form) as produced by
//! aligners such as MFA, and turns the `words` tier into integer-frame word
//! durations with attached inter-word pauses.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default mel-frame rate (12.5 ms hop).
pub const DEFAULT_FRAMES_PER_SECOND: f64 = 80.0;

/// Tolerance absorbing decimal-to-binary error in second values before
/// half-up rounding (e.g. `0.01875 * 80` evaluating to `1.4999999999999998`).
const ROUNDING_SLACK: f64 = 1e-9;

/// One labelled interval of an alignment tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeInterval {
    pub label: String,
    pub start: f64,
    pub end: f64,
    /// Ordinal of the owning (non-silence) word; `None` for silence.
    pub word_index: Option<usize>,
}

impl PhonemeInterval {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            label: label.into(),
            start,
            end,
            word_index: None,
        }
    }

    pub fn is_silence(&self) -> bool {
        is_silence_label(&self.label)
    }

    pub fn seconds(&self) -> f64 {
        self.end - self.start
    }
}

/// Labels aligners use for non-speech.
pub fn is_silence_label(label: &str) -> bool {
    matches!(label.trim(), "" | "sil" | "sp" | "<eps>" | "SIL" | "SP")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordDuration {
    pub word: String,
    pub frames: u32,
    pub trailing_pause_frames: u32,
}

impl WordDuration {
    pub fn new(word: impl Into<String>, frames: u32, trailing_pause_frames: u32) -> Self {
        Self {
            word: word.into(),
            frames,
            trailing_pause_frames,
        }
    }
}

/// A named interval tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub name: String,
    pub xmin: f64,
    pub xmax: f64,
    pub intervals: Vec<PhonemeInterval>,
}

/// The two tiers an aligner produces for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTiers {
    pub words: Vec<PhonemeInterval>,
    pub phones: Vec<PhonemeInterval>,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Str(String),
    Flag(String),
}

#[derive(Debug, Clone)]
struct Token {
    value: Value,
    line: usize,
}

/// Splits a TextGrid into its value stream. Keys (`xmin =`), bracketed
/// indices (`item [1]:`) and `!` comments are skipped, which makes the long
/// and short text forms produce the same stream.
fn lex(doc: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = doc.char_indices().peekable();
    let mut line = 1usize;
    while let Some((_, c)) = chars.next() {
        match c {
            '\n' => line += 1,
            '"' => {
                let start_line = line;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '"')) => {
                            if matches!(chars.peek(), Some((_, '"'))) {
                                chars.next();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some((_, ch)) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                        }
                        None => {
                            return Err(Error::TextGrid {
                                line: start_line,
                                message: "unterminated string".into(),
                            })
                        }
                    }
                }
                out.push(Token {
                    value: Value::Str(s),
                    line: start_line,
                });
            }
            '!' => {
                for (_, ch) in chars.by_ref() {
                    if ch == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            '[' => {
                for (_, ch) in chars.by_ref() {
                    if ch == '\n' {
                        line += 1;
                    }
                    if ch == ']' {
                        break;
                    }
                }
            }
            '<' => {
                let mut s = String::new();
                for (_, ch) in chars.by_ref() {
                    if ch == '>' {
                        break;
                    }
                    s.push(ch);
                }
                out.push(Token {
                    value: Value::Flag(s),
                    line,
                });
            }
            c if c.is_whitespace() => {}
            _ => {
                let mut word = String::from(c);
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_whitespace() || ch == '"' || ch == '[' || ch == '!' {
                        break;
                    }
                    word.push(ch);
                    chars.next();
                }
                if let Ok(x) = word.parse::<f64>() {
                    out.push(Token {
                        value: Value::Num(x),
                        line,
                    });
                }
            }
        }
    }
    Ok(out)
}

struct Cursor {
    tokens: Vec<Token>,
    pos: usize,
}

impl Cursor {
    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(1, |t| t.line)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::TextGrid {
            line: self.line(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Value> {
        self.tokens.get(self.pos).map(|t| &t.value)
    }

    fn num(&mut self, what: &str) -> Result<f64> {
        match self.peek() {
            Some(Value::Num(x)) => {
                let x = *x;
                self.pos += 1;
                Ok(x)
            }
            other => Err(self.err(format!("expected {what}, found {other:?}"))),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Value::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            other => Err(self.err(format!("expected {what}, found {other:?}"))),
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let x = self.num(what)?;
        if x < 0.0 || x.fract() != 0.0 {
            return Err(self.err(format!("{what} must be a non-negative integer, got {x}")));
        }
        Ok(x as usize)
    }
}

/// Parses every interval tier of a TextGrid document. Point tiers are read
/// and skipped.
pub fn parse_tiers(document: &str) -> Result<Vec<Tier>> {
    let mut cur = Cursor {
        tokens: lex(document)?,
        pos: 0,
    };
    let file_type = cur.string("file type")?;
    if file_type != "ooTextFile" {
        return Err(Error::TextGrid {
            line: 1,
            message: format!("unsupported file type `{file_type}`"),
        });
    }
    let class = cur.string("object class")?;
    if class != "TextGrid" {
        return Err(cur.err(format!("object class `{class}` is not a TextGrid")));
    }
    cur.num("xmin")?;
    cur.num("xmax")?;
    match cur.peek() {
        Some(Value::Flag(f)) if f == "exists" => cur.pos += 1,
        Some(Value::Flag(f)) if f == "absent" => return Ok(Vec::new()),
        _ => return Err(cur.err("expected tiers flag <exists>")),
    }
    let n_tiers = cur.count("tier count")?;
    let mut tiers = Vec::with_capacity(n_tiers);
    for _ in 0..n_tiers {
        let kind = cur.string("tier class")?;
        let name = cur.string("tier name")?;
        let tier_line = cur.line();
        let xmin = cur.num("tier xmin")?;
        let xmax = cur.num("tier xmax")?;
        let n = cur.count("interval count")?;
        match kind.as_str() {
            "IntervalTier" => {
                let mut intervals = Vec::with_capacity(n);
                for _ in 0..n {
                    let line = cur.line();
                    let start = cur.num("interval xmin")?;
                    let end = cur.num("interval xmax")?;
                    let label = cur.string("interval text")?;
                    if !(end > start) || start < 0.0 {
                        return Err(Error::Tier {
                            tier: name,
                            line,
                            message: format!("interval [{start}, {end}] is not increasing"),
                        });
                    }
                    if let Some(prev) = intervals.last() {
                        let prev: &PhonemeInterval = prev;
                        if start < prev.end {
                            return Err(Error::Tier {
                                tier: name,
                                line,
                                message: format!(
                                    "interval starting at {start} overlaps previous ending at {}",
                                    prev.end
                                ),
                            });
                        }
                    }
                    intervals.push(PhonemeInterval::new(label.trim(), start, end));
                }
                tiers.push(Tier {
                    name,
                    xmin,
                    xmax,
                    intervals,
                });
            }
            "TextTier" => {
                for _ in 0..n {
                    cur.num("point time")?;
                    cur.string("point mark")?;
                }
            }
            other => {
                return Err(Error::Tier {
                    tier: name,
                    line: tier_line,
                    message: format!("unknown tier class `{other}`"),
                })
            }
        }
    }
    Ok(tiers)
}

/// Parses a TextGrid and returns its `words` and `phones` tiers. Phones are
/// linked to the word interval that contains them.
pub fn parse_textgrid(document: &str) -> Result<AlignmentTiers> {
    let tiers = parse_tiers(document)?;
    let find = |name: &str| {
        tiers
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Tier {
                tier: name.to_string(),
                line: document.lines().count(),
                message: "tier not found".into(),
            })
    };
    let mut words = find("words")?.intervals.clone();
    let mut phones = find("phones")?.intervals.clone();

    let mut ordinal = 0;
    for w in &mut words {
        if !w.is_silence() {
            w.word_index = Some(ordinal);
            ordinal += 1;
        }
    }
    for p in &mut phones {
        if p.is_silence() {
            continue;
        }
        let mid = 0.5 * (p.start + p.end);
        p.word_index = words
            .iter()
            .find(|w| w.word_index.is_some() && w.start <= mid && mid < w.end)
            .and_then(|w| w.word_index);
    }
    Ok(AlignmentTiers { words, phones })
}

/// Writes tiers in the long text form. Used to build fixtures.
pub fn write_textgrid(tiers: &[Tier]) -> String {
    let xmin = tiers.iter().map(|t| t.xmin).fold(f64::INFINITY, f64::min);
    let xmax = tiers.iter().map(|t| t.xmax).fold(f64::NEG_INFINITY, f64::max);
    let (xmin, xmax) = if tiers.is_empty() { (0.0, 0.0) } else { (xmin, xmax) };
    let mut s = String::new();
    let quote = |x: &str| x.replace('"', "\"\"");
    let _ = writeln!(s, "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n");
    let _ = writeln!(s, "xmin = {xmin:?}\nxmax = {xmax:?}\ntiers? <exists>");
    let _ = writeln!(s, "size = {}\nitem []:", tiers.len());
    for (i, t) in tiers.iter().enumerate() {
        let _ = writeln!(s, "    item [{}]:", i + 1);
        let _ = writeln!(s, "        class = \"IntervalTier\"");
        let _ = writeln!(s, "        name = \"{}\"", quote(&t.name));
        let _ = writeln!(s, "        xmin = {:?}\n        xmax = {:?}", t.xmin, t.xmax);
        let _ = writeln!(s, "        intervals: size = {}", t.intervals.len());
        for (j, iv) in t.intervals.iter().enumerate() {
            let _ = writeln!(s, "        intervals [{}]:", j + 1);
            let _ = writeln!(s, "            xmin = {:?}", iv.start);
            let _ = writeln!(s, "            xmax = {:?}", iv.end);
            let _ = writeln!(s, "            text = \"{}\"", quote(&iv.label));
        }
    }
    s
}

/// Half-up rounding of a duration in seconds to whole frames.
pub fn frames_from_seconds(seconds: f64, frames_per_second: f64) -> Result<u32> {
    if !(seconds >= 0.0) || !seconds.is_finite() {
        return Err(Error::invalid(format!("duration {seconds} s is negative or not finite")));
    }
    if !(frames_per_second > 0.0) || !frames_per_second.is_finite() {
        return Err(Error::invalid(format!("frame rate {frames_per_second} must be positive")));
    }
    Ok((seconds * frames_per_second + 0.5 + ROUNDING_SLACK).floor() as u32)
}

/// Collapses a `words` tier into per-word frames. Silence between two words
/// becomes the preceding word's trailing pause; edge silence is dropped.
pub fn word_durations(words_tier: &[PhonemeInterval], frames_per_second: f64) -> Result<Vec<WordDuration>> {
    let mut out: Vec<WordDuration> = Vec::new();
    // pending silence span since the last word
    let mut gap: Option<(f64, f64)> = None;
    for iv in words_tier {
        if iv.is_silence() {
            gap = Some(match gap {
                Some((s, _)) => (s, iv.end),
                None => (iv.start, iv.end),
            });
            continue;
        }
        if let (Some(last), Some((s, e))) = (out.last_mut(), gap) {
            last.trailing_pause_frames = frames_from_seconds(e - s, frames_per_second)?;
        }
        gap = None;
        let frames = frames_from_seconds(iv.seconds(), frames_per_second)?.max(1);
        out.push(WordDuration::new(iv.label.clone(), frames, 0));
    }
    if out.is_empty() {
        return Err(Error::invalid("words tier contains no words"));
    }
    Ok(out)
}

/// Phone-tier labels with frame counts, in tier order.
pub fn phone_frames(phones_tier: &[PhonemeInterval], frames_per_second: f64) -> Result<Vec<(String, u32)>> {
    phones_tier
        .iter()
        .map(|p| Ok((p.label.clone(), frames_from_seconds(p.seconds(), frames_per_second)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HELLO_WORLD: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 1.2
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 1.2
        intervals: size = 3
        intervals [1]:
            xmin = 0.0
            xmax = 0.5
            text = "hello"
        intervals [2]:
            xmin = 0.5
            xmax = 0.7
            text = ""
        intervals [3]:
            xmin = 0.7
            xmax = 1.2
            text = "world"
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1.2
        intervals: size = 3
        intervals [1]:
            xmin = 0.0
            xmax = 0.5
            text = "HH"
        intervals [2]:
            xmin = 0.5
            xmax = 0.7
            text = "sil"
        intervals [3]:
            xmin = 0.7
            xmax = 1.2
            text = "W"
"#;

    #[test]
    fn long_form_words_tier() {
        let tiers = parse_textgrid(HELLO_WORLD).unwrap();
        let got: Vec<_> = tiers
            .words
            .iter()
            .map(|i| (i.label.as_str(), i.start, i.end))
            .collect();
        assert_eq!(got, vec![("hello", 0.0, 0.5), ("", 0.5, 0.7), ("world", 0.7, 1.2)]);
        assert_eq!(tiers.phones[0].word_index, Some(0));
        assert_eq!(tiers.phones[1].word_index, None);
        assert_eq!(tiers.phones[2].word_index, Some(1));
    }

    #[test]
    fn short_form_matches_long_form() {
        let short = "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n0\n1.2\n<exists>\n2\n\
\"IntervalTier\"\n\"words\"\n0\n1.2\n3\n0\n0.5\n\"hello\"\n0.5\n0.7\n\"\"\n0.7\n1.2\n\"world\"\n\
\"IntervalTier\"\n\"phones\"\n0\n1.2\n3\n0\n0.5\n\"HH\"\n0.5\n0.7\n\"sil\"\n0.7\n1.2\n\"W\"\n";
        assert_eq!(parse_textgrid(short).unwrap(), parse_textgrid(HELLO_WORLD).unwrap());
    }

    #[test]
    fn empty_tier() {
        let doc = write_textgrid(&[
            Tier { name: "words".into(), xmin: 0.0, xmax: 0.0, intervals: vec![] },
            Tier { name: "phones".into(), xmin: 0.0, xmax: 0.0, intervals: vec![] },
        ]);
        let tiers = parse_textgrid(&doc).unwrap();
        assert!(tiers.words.is_empty());
        assert!(tiers.phones.is_empty());
    }

    #[test]
    fn overlap_is_rejected() {
        let doc = write_textgrid(&[Tier {
            name: "words".into(),
            xmin: 0.0,
            xmax: 0.9,
            intervals: vec![PhonemeInterval::new("a", 0.0, 0.6), PhonemeInterval::new("b", 0.5, 0.9)],
        }]);
        match parse_tiers(&doc) {
            Err(Error::Tier { tier, line, .. }) => {
                assert_eq!(tier, "words");
                assert!(line > 10);
            }
            other => panic!("expected tier error, got {other:?}"),
        }
    }

    #[test]
    fn missing_tier_and_bad_header() {
        let doc = write_textgrid(&[Tier { name: "words".into(), xmin: 0.0, xmax: 1.0, intervals: vec![] }]);
        assert!(matches!(parse_textgrid(&doc), Err(Error::Tier { tier, .. }) if tier == "phones"));
        assert!(matches!(parse_tiers("hello"), Err(Error::TextGrid { .. })));
        let bad = HELLO_WORLD.replace("\"TextGrid\"", "\"Sound\"");
        assert!(matches!(parse_tiers(&bad), Err(Error::TextGrid { .. })));
    }

    #[test]
    fn frames_rounding() {
        assert_eq!(frames_from_seconds(0.5, 80.0).unwrap(), 40);
        assert_eq!(frames_from_seconds(0.0, 80.0).unwrap(), 0);
        assert_eq!(frames_from_seconds(0.01875, 80.0).unwrap(), 2);
        assert!(frames_from_seconds(-0.1, 80.0).is_err());
    }

    #[test]
    fn word_durations_from_snippet() {
        let tiers = parse_textgrid(HELLO_WORLD).unwrap();
        let words = word_durations(&tiers.words, 80.0).unwrap();
        assert_eq!(words, vec![WordDuration::new("hello", 40, 16), WordDuration::new("world", 40, 0)]);
    }

    #[test]
    fn word_duration_edge_cases() {
        let single = word_durations(&[PhonemeInterval::new("w", 0.0, 0.25)], 80.0).unwrap();
        assert_eq!(single, vec![WordDuration::new("w", 20, 0)]);

        let tiny = word_durations(&[PhonemeInterval::new("w", 0.0, 0.004)], 80.0).unwrap();
        assert_eq!(tiny[0].frames, 1);

        let edges = vec![
            PhonemeInterval::new("", 0.0, 0.3),
            PhonemeInterval::new("a", 0.3, 0.5),
            PhonemeInterval::new("sil", 0.5, 0.6),
            PhonemeInterval::new("sp", 0.6, 0.65),
            PhonemeInterval::new("b", 0.65, 0.9),
            PhonemeInterval::new("", 0.9, 1.5),
        ];
        let got = word_durations(&edges, 80.0).unwrap();
        assert_eq!(got, vec![WordDuration::new("a", 16, 12), WordDuration::new("b", 20, 0)]);

        assert!(word_durations(&[PhonemeInterval::new("", 0.0, 1.0)], 80.0).is_err());
    }
}
