//! Dataset text formats.
//!
//! Token tasks: one `word<TAB>tag` per line, sentences separated by blank
//! lines. SRL sentences start with `#predicate<TAB>start<TAB>end` (0-based
//! word indices, end inclusive). Pairs: `a<TAB>b<TAB>target`. Documents:
//! `text<TAB>label,label,...`.

use std::ops::Range;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrlSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub predicate: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
    /// Score or class label as written.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub text: String,
    pub labels: Vec<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Sentences as (first line number, lines) groups.
fn sentence_blocks(text: &str) -> Vec<Vec<(usize, &str)>> {
    let mut blocks = Vec::new();
    let mut cur = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                blocks.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push((i + 1, line));
        }
    }
    if !cur.is_empty() {
        blocks.push(cur);
    }
    blocks
}

fn word_tag(line_no: usize, line: &str) -> Result<(String, String)> {
    match line.split('\t').collect::<Vec<_>>()[..] {
        [w, t] if !w.is_empty() && !t.is_empty() => Ok((w.to_string(), t.to_string())),
        _ => Err(parse_err(line_no, "expected 'word<TAB>tag'")),
    }
}

pub fn read_conll(text: &str) -> Result<Vec<TaggedSentence>> {
    sentence_blocks(text)
        .into_iter()
        .map(|lines| {
            let (words, tags) = lines
                .into_iter()
                .map(|(n, l)| word_tag(n, l))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            Ok(TaggedSentence { words, tags })
        })
        .collect()
}

pub fn write_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(&format!("{w}\t{t}\n"));
        }
    }
    out
}

pub fn read_srl(text: &str) -> Result<Vec<SrlSentence>> {
    let mut out = Vec::new();
    for lines in sentence_blocks(text) {
        let (n, header) = lines[0];
        let parts: Vec<&str> = header.split('\t').collect();
        let bounds = match parts[..] {
            ["#predicate", s, e] => s.parse::<usize>().ok().zip(e.parse::<usize>().ok()),
            _ => None,
        };
        let (start, end) = bounds.ok_or_else(|| parse_err(n, "expected '#predicate<TAB>start<TAB>end'"))?;
        let (words, tags): (Vec<String>, Vec<String>) = lines[1..]
            .iter()
            .map(|&(n, l)| word_tag(n, l))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        if start > end || end >= words.len() {
            return Err(parse_err(n, format!("predicate {start}..={end} outside a {}-word sentence", words.len())));
        }
        out.push(SrlSentence {
            words,
            tags,
            predicate: start..end + 1,
        });
    }
    Ok(out)
}

pub fn write_srl(sentences: &[SrlSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("#predicate\t{}\t{}\n", s.predicate.start, s.predicate.end - 1));
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(&format!("{w}\t{t}\n"));
        }
    }
    out
}

pub fn read_pairs(text: &str) -> Result<Vec<PairRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split('\t').collect::<Vec<_>>()[..] {
            [a, b, t] if !t.is_empty() => Ok(PairRecord {
                a: a.to_string(),
                b: b.to_string(),
                target: t.to_string(),
            }),
            _ => Err(parse_err(i + 1, "expected 'sentence_a<TAB>sentence_b<TAB>target'")),
        })
        .collect()
}

pub fn write_pairs(records: &[PairRecord]) -> String {
    records.iter().map(|r| format!("{}\t{}\t{}\n", r.a, r.b, r.target)).collect()
}

pub fn read_documents(text: &str) -> Result<Vec<DocumentRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split('\t').collect::<Vec<_>>()[..] {
            [text, labels] => Ok(DocumentRecord {
                text: text.to_string(),
                labels: labels.split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
            }),
            _ => Err(parse_err(i + 1, "expected 'text<TAB>labels'")),
        })
        .collect()
}

pub fn write_documents(records: &[DocumentRecord]) -> String {
    records.iter().map(|r| format!("{}\t{}\n", r.text, r.labels.join(","))).collect()
}
