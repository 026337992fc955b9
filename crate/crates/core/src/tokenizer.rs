//! WordPiece vocabulary training and greedy longest-match-first encoding.
//!
//! Text is split on whitespace into words. Inside a word every punctuation
//! character is its own segment, so it never merges with letters; segments
//! after the first one are continuation segments and are looked up with the
//! continuation prefix. Word alignment (`word_starts`, `word_index`) always
//! follows the whitespace words.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const CONTINUATION_PREFIX: &str = "##";

/// Words longer than this many characters encode to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Casing {
    Cased,
    Uncased,
}

impl FromStr for Casing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cased" => Ok(Casing::Cased),
            "uncased" => Ok(Casing::Uncased),
            other => Err(Error::Vocab(format!(
                "unknown casing '{other}' (expected cased|uncased)"
            ))),
        }
    }
}

impl fmt::Display for Casing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Casing::Cased => "cased",
            Casing::Uncased => "uncased",
        })
    }
}

/// Collapses whitespace; for uncased text also lowercases and strips accents.
pub fn normalize(text: &str, casing: Casing) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match casing {
        Casing::Cased => collapsed,
        Casing::Uncased => collapsed
            .to_lowercase()
            .nfd()
            .filter(|&c| !is_combining_mark(c))
            .collect(),
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '„' | '“' | '”' | '‚' | '‘' | '’' | '«' | '»' | '‹' | '›' | '–' | '—' | '…' | '¡' | '¿'
                | '§' | '°' | '·'
        )
}

/// Splits one whitespace word into segments; the bool marks continuation
/// segments (every segment but the first).
fn segments(word: &str) -> Vec<(&str, bool)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in word.char_indices() {
        if is_punctuation(c) {
            if start < i {
                out.push(&word[start..i]);
            }
            out.push(&word[i..i + c.len_utf8()]);
            start = i + c.len_utf8();
        }
    }
    if start < word.len() {
        out.push(&word[start..]);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, s)| (s, i > 0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    casing: Casing,
}

impl Vocabulary {
    pub const PAD_ID: u32 = 0;

    /// Builds a vocabulary from an ordered token list. `[PAD]` must be first
    /// and the other specials must be present.
    pub fn new(tokens: Vec<String>, casing: Casing) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Vocab(format!("empty token at id {i}")));
            }
            if t == CONTINUATION_PREFIX {
                return Err(Error::Vocab(format!(
                    "bare continuation prefix at id {i}"
                )));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token '{t}' at id {i}")));
            }
        }
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Vocab(format!("{PAD} must have id 0")));
        }
        for s in SPECIAL_TOKENS {
            if !index.contains_key(s) {
                return Err(Error::Vocab(format!("missing special token {s}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            casing,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn casing(&self) -> Casing {
        self.casing
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn special(&self, s: &str) -> u32 {
        self.index[s]
    }

    pub fn pad_id(&self) -> u32 {
        Self::PAD_ID
    }
    pub fn unk_id(&self) -> u32 {
        self.special(UNK)
    }
    pub fn cls_id(&self) -> u32 {
        self.special(CLS)
    }
    pub fn sep_id(&self) -> u32 {
        self.special(SEP)
    }
    pub fn mask_id(&self) -> u32 {
        self.special(MASK)
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.token(id)
            .map(|t| SPECIAL_TOKENS.contains(&t))
            .unwrap_or(false)
    }

    /// Ids of every non-special token, in id order.
    pub fn regular_ids(&self) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&id| !self.is_special(id))
            .collect()
    }

    /// BERT `vocab.txt` text: one token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// Parses `vocab.txt` text. Without an explicit casing it is inferred:
    /// the vocabulary is cased if some token changes under uncased
    /// normalization (an uppercase letter or an accent).
    pub fn from_text(text: &str, casing: Option<Casing>) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        let casing = casing.unwrap_or_else(|| {
            let cased = tokens
                .iter()
                .filter(|t| !SPECIAL_TOKENS.contains(&t.as_str()))
                .any(|t| normalize(t, Casing::Uncased) != *t);
            if cased {
                Casing::Cased
            } else {
                Casing::Uncased
            }
        });
        Self::new(tokens, casing)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, casing: Option<Casing>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, casing)
    }
}

/// Subword encoding of a text with its word alignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub word_starts: Vec<bool>,
    pub word_index: Vec<usize>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_starts.iter().filter(|&&s| s).count()
    }
}

fn continuation(s: &str) -> String {
    format!("{CONTINUATION_PREFIX}{s}")
}

/// Greedy longest-match-first split of one segment, or `None` if some
/// remainder cannot be matched.
fn match_segment(vocab: &Vocabulary, seg: &str, is_cont: bool, out: &mut Vec<u32>) -> bool {
    let bounds: Vec<usize> = seg
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(seg.len()))
        .collect();
    let mut start = 0;
    while start + 1 < bounds.len() {
        let mut found = None;
        for end in (start + 1..bounds.len()).rev() {
            let piece = &seg[bounds[start]..bounds[end]];
            let id = if start == 0 && !is_cont {
                vocab.id(piece)
            } else {
                vocab.id(&continuation(piece))
            };
            if let Some(id) = id {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => return false,
        }
    }
    true
}

/// Encodes one word; unmatchable or overlong words become a single `[UNK]`.
pub fn encode_word(vocab: &Vocabulary, word: &str) -> Vec<u32> {
    let word = normalize(word, vocab.casing());
    if word.is_empty() || word.chars().count() > MAX_WORD_CHARS {
        return vec![vocab.unk_id()];
    }
    let mut ids = Vec::new();
    for (seg, cont) in segments(&word) {
        if !match_segment(vocab, seg, cont, &mut ids) {
            return vec![vocab.unk_id()];
        }
    }
    ids
}

/// Encodes a sequence of pre-split words.
pub fn encode_words<S: AsRef<str>>(vocab: &Vocabulary, words: &[S]) -> Encoding {
    let mut enc = Encoding::default();
    for (wi, w) in words.iter().enumerate() {
        let pieces = encode_word(vocab, w.as_ref());
        for (j, id) in pieces.into_iter().enumerate() {
            enc.ids.push(id);
            enc.word_starts.push(j == 0);
            enc.word_index.push(wi);
        }
    }
    enc
}

/// Encodes text, splitting words on whitespace. Words are normalized for
/// the vocabulary's casing first.
pub fn encode(vocab: &Vocabulary, text: &str) -> Encoding {
    let words: Vec<&str> = text.split_whitespace().collect();
    encode_words(vocab, &words)
}

/// Joins tokens back into text; specials are dropped and continuation
/// pieces attach to the preceding piece.
pub fn decode(vocab: &Vocabulary, ids: &[u32]) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab.token(id).ok_or(Error::IdOutOfRange {
            id,
            size: vocab.len(),
        })?;
        if vocab.is_special(id) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}

/// Symbol sequences for one distinct segment during training.
struct TrainWord {
    symbols: Vec<String>,
    count: u64,
}

/// `a/(b·c) > d/(e·f)` on integer frequencies without rounding.
fn score_greater(pair: u64, fa: u64, fb: u64, best: (u64, u64, u64)) -> bool {
    let (bp, bfa, bfb) = best;
    let lhs = (pair as u128).checked_mul(bfa as u128 * bfb as u128);
    let rhs = (bp as u128).checked_mul(fa as u128 * fb as u128);
    match (lhs, rhs) {
        (Some(l), Some(r)) => l > r,
        _ => pair as f64 / (fa as f64 * fb as f64) > bp as f64 / (bfa as f64 * bfb as f64),
    }
}

fn merge_symbols(a: &str, b: &str) -> String {
    let mut m = a.to_owned();
    m.push_str(b.strip_prefix(CONTINUATION_PREFIX).unwrap_or(b));
    m
}

/// Trains a WordPiece vocabulary with likelihood-scored merges.
///
/// The initial inventory is every observed character plus the continuation
/// form of every character seen inside a word. Merges are then picked by
/// `freq(ab) / (freq(a)·freq(b))`, ties going to the lexicographically
/// smallest pair, until `vocab_size` entries exist or no pair is left.
pub fn train_wordpiece<I, S>(sentences: I, vocab_size: usize, casing: Casing) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<(String, bool), u64> = BTreeMap::new();
    for sentence in sentences {
        let sentence = normalize(sentence.as_ref(), casing);
        for word in sentence.split_whitespace() {
            if word.chars().count() > MAX_WORD_CHARS {
                continue;
            }
            for (seg, cont) in segments(word) {
                *counts.entry((seg.to_owned(), cont)).or_default() += 1;
            }
        }
    }

    let mut chars = BTreeSet::new();
    let mut cont_chars = BTreeSet::new();
    let mut words = Vec::with_capacity(counts.len());
    for ((seg, cont), count) in counts {
        let mut symbols = Vec::new();
        for (i, c) in seg.chars().enumerate() {
            chars.insert(c);
            if i == 0 && !cont {
                symbols.push(c.to_string());
            } else {
                cont_chars.insert(c);
                symbols.push(continuation(&c.to_string()));
            }
        }
        words.push(TrainWord { symbols, count });
    }
    if chars.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let minimum = SPECIAL_TOKENS.len() + chars.len() + cont_chars.len();
    if vocab_size < minimum {
        return Err(Error::VocabTooSmall {
            requested: vocab_size,
            minimum,
        });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(cont_chars.iter().map(|c| continuation(&c.to_string())));
    let mut present: BTreeSet<String> = tokens.iter().cloned().collect();

    while tokens.len() < vocab_size {
        let mut unit: HashMap<&str, u64> = HashMap::new();
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for w in &words {
            for s in &w.symbols {
                *unit.entry(s.as_str()).or_default() += w.count;
            }
            for win in w.symbols.windows(2) {
                *pairs.entry((win[0].as_str(), win[1].as_str())).or_default() += w.count;
            }
        }
        let mut best: Option<((&str, &str), (u64, u64, u64))> = None;
        for (&(a, b), &f) in &pairs {
            let cand = (f, unit[a], unit[b]);
            best = match best {
                None => Some(((a, b), cand)),
                Some((bp, bs)) => {
                    if score_greater(cand.0, cand.1, cand.2, bs)
                        || (!score_greater(bs.0, bs.1, bs.2, cand) && (a, b) < bp)
                    {
                        Some(((a, b), cand))
                    } else {
                        Some((bp, bs))
                    }
                }
            };
        }
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_owned(), b.to_owned());
        let merged = merge_symbols(&a, &b);
        for w in &mut words {
            if w.symbols.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(w.symbols.len());
            let mut i = 0;
            while i < w.symbols.len() {
                if i + 1 < w.symbols.len() && w.symbols[i] == a && w.symbols[i + 1] == b {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut w.symbols[i]));
                    i += 1;
                }
            }
            w.symbols = out;
        }
        if present.insert(merged.clone()) {
            tokens.push(merged);
        }
    }

    Vocabulary::new(tokens, casing)
}
