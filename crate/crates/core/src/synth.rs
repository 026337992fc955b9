//! Deterministic synthetic corpora and task datasets built from Czech-like
//! pseudo-words.
//!
//! Sentences follow a sparse successor table, so masked words are
//! predictable from their neighbours, and each sentence opens with the last
//! word of the previous one, so true continuations are recognisable.

use rand::Rng as _;

use crate::corpus::TextBlock;
use crate::seed::{self, Rng};
use crate::tasks::{DocumentRecord, PairRecord, SrlSentence, TaggedSentence};
use crate::{Error, Result};

const ONSETS: &[&str] = &[
    "b", "č", "d", "h", "ch", "k", "l", "m", "n", "p", "r", "ř", "s", "š", "t", "v", "z", "ž", "st", "pr", "kr", "tr",
];
const NUCLEI: &[&str] = &["a", "á", "e", "é", "ě", "i", "í", "o", "u", "ů", "y"];
const CODAS: &[&str] = &["", "", "", "n", "k", "s", "t", "l"];

/// `count` distinct pseudo-words of one to three syllables.
pub fn pseudo_words(count: usize, seed: u64) -> Vec<String> {
    let mut rng = seed::rng_at(seed, &[0x574f_5244]);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
            w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Sentences-per-block distribution. Every variant yields at least one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockSizes {
    Fixed(usize),
    Uniform { min: usize, max: usize },
    /// `1 + Poisson(mean - 1)`, so the expectation is `mean`.
    Poisson { mean: f64 },
}

impl BlockSizes {
    pub fn sample(&self, rng: &mut Rng) -> usize {
        match *self {
            BlockSizes::Fixed(n) => n.max(1),
            BlockSizes::Uniform { min, max } => rng.gen_range(min.max(1)..=max.max(min.max(1))),
            BlockSizes::Poisson { mean } => 1 + poisson(rng, (mean - 1.0).max(0.0)),
        }
    }
}

fn poisson(rng: &mut Rng, lambda: f64) -> usize {
    // Knuth's multiplication method; fine for the small means used here
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

/// Source shares and mean block sizes of the three-part web/news/national
/// corpus mix: block counts 49,104,507 / 450,000 / 2,625,306.
pub const SOURCE_MIXTURE: [(&str, f64, f64); 3] = [
    ("nat", 49_104_507.0, 5.61),
    ("wiki", 450_000.0, 15.48),
    ("news", 2_625_306.0, 22.47),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub blocks: usize,
    pub sizes: BlockSizes,
    /// Draw each block's source and size from [`SOURCE_MIXTURE`] instead.
    pub mixture: bool,
    pub vocabulary: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(blocks: usize, sizes: BlockSizes, seed: u64) -> Self {
        Self {
            blocks,
            sizes,
            mixture: false,
            vocabulary: 60,
            min_words: 4,
            max_words: 8,
            seed,
        }
    }
}

/// Word-level language: a word list and two successors per word.
#[derive(Debug, Clone)]
pub struct Language {
    pub words: Vec<String>,
    successors: Vec<[usize; 2]>,
}

impl Language {
    pub fn new(size: usize, seed: u64) -> Self {
        let words = pseudo_words(size, seed);
        let mut rng = seed::rng_at(seed, &[0x5355_4343]);
        let successors = (0..size)
            .map(|_| [rng.gen_range(0..size), rng.gen_range(0..size)])
            .collect();
        Self { words, successors }
    }

    /// Word indices of a sentence starting at `first`.
    pub fn sentence(&self, first: usize, len: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = vec![first];
        while out.len() < len {
            let prev = *out.last().unwrap();
            out.push(self.successors[prev][rng.gen_range(0..2)]);
        }
        out
    }

    pub fn render(&self, idx: &[usize]) -> String {
        let mut s: Vec<&str> = idx.iter().map(|&i| self.words[i].as_str()).collect();
        let last = s.pop().unwrap_or_default();
        let mut out = s.join(" ");
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(last);
        out.push('.');
        out
    }
}

pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<TextBlock>> {
    if spec.vocabulary < 2 || spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::Config("synthetic corpus needs ≥2 words and 1 ≤ min_words ≤ max_words".into()));
    }
    let lang = Language::new(spec.vocabulary, spec.seed);
    let mut rng = seed::rng_at(spec.seed, &[0x424c_4f43]);
    let total: f64 = SOURCE_MIXTURE.iter().map(|m| m.1).sum();
    let mut blocks = Vec::with_capacity(spec.blocks);
    for id in 0..spec.blocks {
        let (source, size) = if spec.mixture {
            let mut pick = rng.gen::<f64>() * total;
            let mut chosen = SOURCE_MIXTURE[2];
            for m in SOURCE_MIXTURE {
                if pick < m.1 {
                    chosen = m;
                    break;
                }
                pick -= m.1;
            }
            (chosen.0, BlockSizes::Poisson { mean: chosen.2 }.sample(&mut rng))
        } else {
            ("synth", spec.sizes.sample(&mut rng))
        };
        let mut first = rng.gen_range(0..spec.vocabulary);
        let mut sentences = Vec::with_capacity(size);
        for _ in 0..size {
            let len = rng.gen_range(spec.min_words..=spec.max_words);
            let idx = lang.sentence(first, len, &mut rng);
            first = *idx.last().unwrap();
            sentences.push(lang.render(&idx));
        }
        blocks.extend(TextBlock::new(id as u64, sentences, source));
    }
    Ok(blocks)
}

/// Blank-line-separated blocks, one sentence per line.
pub fn corpus_text(blocks: &[TextBlock]) -> String {
    let mut out = String::new();
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in &b.sentences {
            out.push_str(s);
            out.push('\n');
        }
    }
    out
}

fn pick<'a>(words: &'a [String], rng: &mut Rng) -> &'a str {
    &words[rng.gen_range(0..words.len())]
}

/// Sentences labelled `pos` or `neg`; each draws all its words from one
/// half of `words`, so a bag-of-words classifier separates them.
pub fn sentiment_set(words: &[String], count: usize, seed: u64) -> Vec<DocumentRecord> {
    let mut rng = seed::rng_at(seed, &[0x5345_4e54]);
    let (pos, neg) = words.split_at(words.len() / 2);
    (0..count)
        .map(|i| {
            let (pool, label) = if i % 2 == 0 { (pos, "pos") } else { (neg, "neg") };
            let len = rng.gen_range(4..=7);
            let text: Vec<&str> = (0..len).map(|_| pick(pool, &mut rng)).collect();
            DocumentRecord {
                text: text.join(" "),
                labels: vec![label.to_string()],
            }
        })
        .collect()
}

pub const TAGGING_TAGS: [&str; 3] = ["NOUN", "VERB", "ADJ"];

/// Sentences where each word's tag is a function of the word.
pub fn tagging_set(words: &[String], count: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = seed::rng_at(seed, &[0x5441_4753]);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(4..=9);
            let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..words.len())).collect();
            TaggedSentence {
                words: idx.iter().map(|&i| words[i].clone()).collect(),
                tags: idx.iter().map(|&i| TAGGING_TAGS[i % 3].to_string()).collect(),
            }
        })
        .collect()
}

/// BIO-tagged sentences: words with index ≡ 0 (mod 4) are person names,
/// ≡ 1 locations; entities span one or two such words.
pub fn ner_set(words: &[String], count: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = seed::rng_at(seed, &[0x4e45_5253]);
    let class = |r: usize| -> Vec<String> { words.iter().skip(r).step_by(4).cloned().collect() };
    let (per, loc, other): (Vec<String>, Vec<String>, Vec<String>) = (
        class(0),
        class(1),
        words.iter().enumerate().filter(|(i, _)| i % 4 >= 2).map(|(_, w)| w.clone()).collect(),
    );
    (0..count)
        .map(|_| {
            let mut s = TaggedSentence {
                words: Vec::new(),
                tags: Vec::new(),
            };
            let pieces = rng.gen_range(3..=6);
            for _ in 0..pieces {
                match rng.gen_range(0..4) {
                    0 | 1 => {
                        let (pool, label) = if rng.gen_bool(0.5) { (&per, "PER") } else { (&loc, "LOC") };
                        for j in 0..rng.gen_range(1..=2) {
                            s.words.push(pick(pool, &mut rng).to_string());
                            s.tags.push(format!("{}-{label}", if j == 0 { "B" } else { "I" }));
                        }
                    }
                    _ => {
                        s.words.push(pick(&other, &mut rng).to_string());
                        s.tags.push("O".into());
                    }
                }
                // an O word between pieces keeps adjacent entities apart
                s.words.push(pick(&other, &mut rng).to_string());
                s.tags.push("O".into());
            }
            s
        })
        .collect()
}

/// Sentences with one predicate word; the word before it is `ARG0`, the
/// two after it `ARG1`.
pub fn srl_set(words: &[String], count: usize, seed: u64) -> Vec<SrlSentence> {
    let mut rng = seed::rng_at(seed, &[0x5352_4c53]);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(5..=9);
            let words: Vec<String> = (0..len).map(|_| pick(words, &mut rng).to_string()).collect();
            let p = rng.gen_range(1..len - 1);
            let mut tags = vec!["O".to_string(); len];
            tags[p - 1] = "B-ARG0".into();
            tags[p + 1] = "B-ARG1".into();
            if p + 2 < len {
                tags[p + 2] = "I-ARG1".into();
            }
            SrlSentence {
                words,
                tags,
                predicate: p..p + 1,
            }
        })
        .collect()
}

/// Sentence pairs scored 0-5 by the share of words kept when `b` is built
/// from `a` by replacing some positions.
pub fn sts_set(words: &[String], count: usize, seed: u64) -> Vec<PairRecord> {
    let mut rng = seed::rng_at(seed, &[0x5354_5353]);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(4..=8);
            let a: Vec<&str> = (0..len).map(|_| pick(words, &mut rng)).collect();
            let changed = rng.gen_range(0..=len);
            let mut b = a.clone();
            for slot in b.iter_mut().take(changed) {
                *slot = pick(words, &mut rng);
            }
            let kept = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            PairRecord {
                a: a.join(" "),
                b: b.join(" "),
                target: format!("{:.4}", 5.0 * kept as f64 / len as f64),
            }
        })
        .collect()
}

/// Documents labelled `L<j>` whenever they contain topic word `words[j]`,
/// for `j < labels`.
pub fn mlc_set(words: &[String], labels: usize, count: usize, seed: u64) -> Vec<DocumentRecord> {
    let mut rng = seed::rng_at(seed, &[0x4d4c_4353]);
    let filler = &words[labels.min(words.len())..];
    (0..count)
        .map(|_| {
            let mut doc: Vec<&str> = (0..rng.gen_range(6..=12)).map(|_| pick(filler, &mut rng)).collect();
            let mut present = Vec::new();
            for (j, topic) in words.iter().enumerate().take(labels) {
                if rng.gen_bool(0.3) {
                    let at = rng.gen_range(0..=doc.len());
                    doc.insert(at, topic);
                    present.push(format!("L{j}"));
                }
            }
            DocumentRecord {
                text: doc.join(" "),
                labels: present,
            }
        })
        .collect()
}
