//! Subword tokenization with pause tokens.
//!
//! Words are BPE-segmented with the `@@` continuation marker and a `[P]`
//! token is placed between consecutive words. Every emitted token carries a
//! frame count so the decoder can be trained on cumulative durations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::WordDuration;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAUSE: &str = "[P]";
pub const SHORT: &str = "<short>";
pub const NORMAL: &str = "<normal>";
pub const LONG: &str = "<long>";

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const PAUSE_ID: TokenId = 4;
pub const SHORT_ID: TokenId = 5;
pub const NORMAL_ID: TokenId = 6;
pub const LONG_ID: TokenId = 7;

const RESERVED: [&str; 8] = [PAD, BOS, EOS, UNK, PAUSE, SHORT, NORMAL, LONG];

/// Subword continuation marker.
pub const CONTINUATION: &str = "@@";

/// Bidirectional token map. The first eight ids are reserved and fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.add(t);
        }
        v
    }

    /// Builds a vocabulary from tokens in first-seen order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.add(t);
        }
        v
    }

    pub fn add(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::UnknownTokenId(id))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// `id\ttoken` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Schema(format!("vocabulary line {}: expected `id<TAB>token`", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Schema(format!("vocabulary line {}: bad id `{id}`", n + 1)))?;
            if id != tokens.len() {
                return Err(Error::Schema(format!("vocabulary line {}: ids must be dense, got {id}", n + 1)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Schema("vocabulary does not start with the reserved tokens".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Ok(Self { tokens, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Ordered list of symbol merges learned by [`train_bpe`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Splits one word into subword strings (without continuation markers).
    pub fn split_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols.splice(i..i + 2, [merged]);
        }
        symbols
    }

    /// Subword tokens for one word, `@@`-marked except the last.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let parts = self.split_word(word);
        let n = parts.len();
        parts
            .into_iter()
            .enumerate()
            .map(|(i, p)| if i + 1 < n { format!("{p}{CONTINUATION}") } else { p })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let merges = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| {
                l.split_once(' ')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::Schema(format!("merge line {}: expected two symbols", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_merges(merges))
    }
}

/// Learns `merges` BPE merges from whitespace-separated word streams.
/// Ties in pair frequency go to the lexicographically smallest pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], merges: usize) -> Result<MergeTable> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            if w != PAUSE {
                *word_counts.entry(w).or_default() += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(Error::invalid("cannot train BPE on an empty corpus"));
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(String::from).collect(), c))
        .collect();
    let mut table = Vec::with_capacity(merges);
    for _ in 0..merges {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let Some((best, _)) = pairs
            .into_iter()
            .fold(None::<((&str, &str), usize)>, |acc, (p, c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            })
        else {
            break;
        };
        let best = (best.0.to_string(), best.1.to_string());
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == best.0 && syms[i + 1] == best.1 {
                    let merged = format!("{}{}", best.0, best.1);
                    syms.splice(i..i + 2, [merged]);
                }
                i += 1;
            }
        }
        table.push(best);
    }
    Ok(MergeTable::from_merges(table))
}

/// How a word's frames are spread across its subwords.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// Whole duration on the final subword; interior subwords get 0.
    #[default]
    FinalSubword,
    /// Even split; the remainder goes to the trailing subwords.
    Uniform,
}

/// Token strings with per-token frames.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedTokenSequence {
    pub tokens: Vec<String>,
    pub durations: Vec<u32>,
    pub word_boundary_flags: Vec<bool>,
}

impl AnnotatedTokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_frames(&self) -> u64 {
        self.durations.iter().map(|&d| d as u64).sum()
    }

    pub fn ids(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        vocab.encode(&self.tokens)
    }
}

/// Segments words and inserts `[P]` between consecutive words, carrying the
/// preceding word's trailing pause.
pub fn segment_with_pauses(
    words: &[WordDuration],
    merges: &MergeTable,
    attribution: Attribution,
) -> Result<AnnotatedTokenSequence> {
    if words.is_empty() {
        return Err(Error::invalid("cannot segment an empty word list"));
    }
    let mut seq = AnnotatedTokenSequence::default();
    for (w_idx, word) in words.iter().enumerate() {
        if w_idx > 0 {
            seq.tokens.push(PAUSE.to_string());
            seq.durations.push(words[w_idx - 1].trailing_pause_frames);
            seq.word_boundary_flags.push(false);
        }
        let pieces = merges.segment_word(&word.word);
        let n = pieces.len() as u32;
        for (i, piece) in pieces.into_iter().enumerate() {
            let i = i as u32;
            let last = i + 1 == n;
            let frames = match attribution {
                Attribution::FinalSubword => {
                    if last {
                        word.frames
                    } else {
                        0
                    }
                }
                Attribution::Uniform => {
                    let base = word.frames / n;
                    let extra = word.frames % n;
                    base + u32::from(i >= n - extra)
                }
            };
            seq.tokens.push(piece);
            seq.durations.push(frames);
            seq.word_boundary_flags.push(last);
        }
    }
    Ok(seq)
}

/// Joins subword tokens back into text, dropping pause and control tokens.
pub fn detokenize_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue = false;
    for t in tokens {
        let t = t.as_ref();
        if t == PAUSE || RESERVED.contains(&t) {
            continue;
        }
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        match t.strip_suffix(CONTINUATION) {
            Some(stem) => {
                out.push_str(stem);
                glue = true;
            }
            None => {
                out.push_str(t);
                glue = false;
            }
        }
    }
    out
}

pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    let tokens = ids.iter().map(|&id| vocab.token(id)).collect::<Result<Vec<_>>>()?;
    Ok(detokenize_tokens(&tokens))
}

/// Whitespace-split text with `[P]` between words and no durations, used on
/// the source side where pauses carry no duration role.
pub fn segment_text(text: &str, merges: &MergeTable) -> Vec<String> {
    let mut out = Vec::new();
    for (i, w) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(PAUSE.to_string());
        }
        out.extend(merges.segment_word(w));
    }
    out
}
