//! Corpus ingestion, sentence segmentation and block statistics.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::tokenizer::{normalize, Casing};
use crate::{Error, Result};

/// A contiguous paragraph of sentences; NSP pairs are drawn within a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextBlock {
    pub id: u64,
    pub sentences: Vec<String>,
    pub source: String,
}

impl TextBlock {
    /// Normalizes sentences and drops the empty ones; `None` if nothing is left.
    pub fn new(id: u64, sentences: Vec<String>, source: impl Into<String>) -> Option<Self> {
        let sentences: Vec<String> = sentences
            .iter()
            .map(|s| normalize(s, Casing::Cased))
            .filter(|s| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return None;
        }
        Some(Self {
            id,
            sentences,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Runs of non-blank lines form a block, one sentence per line.
    BlankLineBlocks,
    /// Each line is a block whose sentences come from `split_sentences`.
    OneDocPerLine,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blank-line-blocks" => Ok(Self::BlankLineBlocks),
            "one-doc-per-line" => Ok(Self::OneDocPerLine),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown corpus format '{other}'"),
            }),
        }
    }
}

/// Streams blocks out of a UTF-8 text file.
pub struct BlockReader<R> {
    reader: R,
    format: CorpusFormat,
    splitter: SentenceSplitter,
    path: PathBuf,
    offset: u64,
    next_id: u64,
    source: String,
    line: Vec<u8>,
    done: bool,
}

impl<R: BufRead> BlockReader<R> {
    pub fn new(reader: R, format: CorpusFormat) -> Self {
        Self {
            reader,
            format,
            splitter: SentenceSplitter::default(),
            path: PathBuf::new(),
            offset: 0,
            next_id: 0,
            source: String::new(),
            line: Vec::new(),
            done: false,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_splitter(mut self, splitter: SentenceSplitter) -> Self {
        self.splitter = splitter;
        self
    }

    /// Reads one line; `Ok(None)` at end of input.
    fn read_line(&mut self) -> Result<Option<String>> {
        self.line.clear();
        let n = self
            .reader
            .read_until(b'\n', &mut self.line)
            .map_err(|e| Error::io(&self.path, e))?;
        if n == 0 {
            return Ok(None);
        }
        let start = self.offset;
        self.offset += n as u64;
        match std::str::from_utf8(&self.line) {
            Ok(s) => Ok(Some(s.trim_end_matches(['\n', '\r']).to_owned())),
            Err(e) => Err(Error::InvalidUtf8 {
                offset: start + e.valid_up_to() as u64,
            }),
        }
    }

    fn emit(&mut self, sentences: Vec<String>) -> Option<TextBlock> {
        let block = TextBlock::new(self.next_id, sentences, self.source.clone())?;
        self.next_id += 1;
        Some(block)
    }

    fn next_block(&mut self) -> Result<Option<TextBlock>> {
        match self.format {
            CorpusFormat::BlankLineBlocks => {
                let mut sentences = Vec::new();
                loop {
                    match self.read_line()? {
                        None => {
                            self.done = true;
                            return Ok(self.emit(sentences));
                        }
                        Some(l) if l.trim().is_empty() => {
                            if let Some(b) = self.emit(std::mem::take(&mut sentences)) {
                                return Ok(Some(b));
                            }
                        }
                        Some(l) => sentences.push(l),
                    }
                }
            }
            CorpusFormat::OneDocPerLine => loop {
                match self.read_line()? {
                    None => {
                        self.done = true;
                        return Ok(None);
                    }
                    Some(l) => {
                        let sentences = self.splitter.split(&normalize(&l, Casing::Cased));
                        if let Some(b) = self.emit(sentences) {
                            return Ok(Some(b));
                        }
                    }
                }
            },
        }
    }
}

impl<R: BufRead> Iterator for BlockReader<R> {
    type Item = Result<TextBlock>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_block() {
            Ok(Some(b)) => Some(Ok(b)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens `path` and streams its blocks in file order.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<BlockReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BlockReader::new(BufReader::new(file), format);
    reader.path = path.to_path_buf();
    Ok(reader)
}

/// Abbreviations after which a period never ends a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "č.", "čís.", "tj.", "tzv.", "např.", "atd.", "apod.", "aj.", "mj.", "resp.", "str.", "s.",
    "r.", "st.", "sv.", "odst.", "písm.", "viz.", "př.", "srov.", "tel.", "ing.", "mgr.", "bc.",
    "dr.", "mudr.", "judr.", "phdr.", "rndr.", "prof.", "doc.", "p.", "pí.", "sl.", "min.",
    "max.", "cca.", "e.g.", "i.e.", "mr.", "mrs.", "vs.", "etc.",
];

/// Rule-based sentence segmentation with an abbreviation guard list.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()))
    }
}

impl SentenceSplitter {
    pub fn new(abbreviations: impl IntoIterator<Item = String>) -> Self {
        Self {
            abbreviations: abbreviations.into_iter().map(|a| a.to_lowercase()).collect(),
        }
    }

    /// Reads a guard list, one abbreviation per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned),
        ))
    }

    fn guarded(&self, word: &str) -> bool {
        let lower = word.to_lowercase();
        if self.abbreviations.iter().any(|a| *a == lower) {
            return true;
        }
        // Single-letter initials such as "J." in "J. Novák".
        let mut chars = word.chars();
        matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
    }

    /// Splits at `.`, `!` or `?` followed by whitespace and an uppercase letter
    /// or digit, unless the word ending there is a guarded abbreviation.
    pub fn split(&self, text: &str) -> Vec<String> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for (i, w) in words.iter().enumerate() {
            current.push(w);
            let Some(next) = words.get(i + 1) else { break };
            let ends = w.ends_with(['.', '!', '?']);
            let opens = next
                .chars()
                .next()
                .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
            if ends && opens && !(w.ends_with('.') && self.guarded(w)) {
                out.push(current.join(" "));
                current.clear();
            }
        }
        if !current.is_empty() {
            out.push(current.join(" "));
        }
        out
    }
}

pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorpusStats {
    pub blocks: u64,
    pub sentences: u64,
    /// Blocks with at least one sentence; each loses its last sentence for NSP.
    pub nonempty_blocks: u64,
}

impl CorpusStats {
    pub fn from_counts(blocks: u64, sentences: u64) -> Self {
        Self {
            blocks,
            sentences,
            nonempty_blocks: blocks,
        }
    }

    pub fn add_block(&mut self, sentences: usize) {
        self.blocks += 1;
        self.sentences += sentences as u64;
        if sentences > 0 {
            self.nonempty_blocks += 1;
        }
    }

    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        CorpusStats {
            blocks: self.blocks + other.blocks,
            sentences: self.sentences + other.sentences,
            nonempty_blocks: self.nonempty_blocks + other.nonempty_blocks,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks == 0
    }

    pub fn avg_sentences_per_block(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.sentences as f64 / self.blocks as f64
        }
    }

    /// Fraction of sentences that cannot be the first half of a pair.
    pub fn unpairable_fraction(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.nonempty_blocks as f64 / self.sentences as f64
        }
    }

    /// Consecutive sentence pairs available for positives.
    pub fn consecutive_pairs(&self) -> u64 {
        self.sentences - self.nonempty_blocks
    }

    /// NSP pairs produced with one negative per positive.
    pub fn nsp_pairs(&self) -> u64 {
        2 * self.consecutive_pairs()
    }

    /// `(key, value)` rows shared by the text and JSON reports.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("blocks", self.blocks.to_string()),
            ("sentences", self.sentences.to_string()),
            ("avg_sentences_per_block", format!("{:.2}", self.avg_sentences_per_block())),
            ("unpairable_fraction", format!("{:.4}", self.unpairable_fraction())),
            ("nsp_pairs", self.nsp_pairs().to_string()),
            ("empty_corpus", self.is_empty().to_string()),
        ]
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.rows() {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

/// Single-pass statistics over a block stream.
pub fn corpus_stats<'a, I>(blocks: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a TextBlock>,
{
    let mut stats = CorpusStats::default();
    for b in blocks {
        stats.add_block(b.len());
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &[u8], format: CorpusFormat) -> Result<Vec<Vec<String>>> {
        BlockReader::new(Cursor::new(text.to_vec()), format)
            .map(|b| b.map(|b| b.sentences))
            .collect()
    }

    #[test]
    fn blank_line_blocks() {
        let blocks = read(b"a.\n\nb.\nc.\n", CorpusFormat::BlankLineBlocks).unwrap();
        assert_eq!(blocks, vec![vec!["a."], vec!["b.", "c."]]);
        assert!(read(b"", CorpusFormat::BlankLineBlocks).unwrap().is_empty());
        assert!(read(b"\n\n  \n", CorpusFormat::BlankLineBlocks).unwrap().is_empty());
    }

    #[test]
    fn one_doc_per_line_splits_sentences() {
        let blocks = read(b"Pr\xc5\xa1\xc3\xad. Venku je zima.\n\nJedna.\n", CorpusFormat::OneDocPerLine)
            .unwrap();
        assert_eq!(blocks, vec![vec!["Prší.", "Venku je zima."], vec!["Jedna."]]);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        match read(b"ok\nab\xffcd\n", CorpusFormat::BlankLineBlocks) {
            Err(Error::InvalidUtf8 { offset }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_ids_follow_file_order() {
        let blocks: Vec<TextBlock> = BlockReader::new(Cursor::new(b"x\n\ny\n\nz\n".to_vec()), CorpusFormat::BlankLineBlocks)
            .with_source("wiki")
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(blocks.iter().map(|b| b.id).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(blocks.iter().all(|b| b.source == "wiki"));
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("Prší. Venku je zima."), ["Prší.", "Venku je zima."]);
        assert!(DEFAULT_ABBREVIATIONS.contains(&"č."));
        assert_eq!(split_sentences("č. 5 je tady."), ["č. 5 je tady."]);
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("Co? Nic! 3 lidé."), ["Co?", "Nic!", "3 lidé."]);
        assert_eq!(split_sentences("Viděl jsem J. Nováka. Ano."), ["Viděl jsem J. Nováka.", "Ano."]);
        assert_eq!(split_sentences("konec. malé písmeno"), ["konec. malé písmeno"]);
    }

    #[test]
    fn custom_guard_list() {
        let s = SentenceSplitter::new(["Abc.".to_string()]);
        assert_eq!(s.split("Abc. Def."), ["Abc. Def."]);
        assert_eq!(s.split("č. 5"), ["č.", "5"]);
    }

    #[test]
    fn wiki_row_average() {
        let s = CorpusStats::from_counts(450_000, 6_964_794);
        assert_eq!(format!("{:.2}", s.avg_sentences_per_block()), "15.48");
        // Wiki and News lose ~6% and ~4% of sentences.
        assert!((s.unpairable_fraction() - 0.0646).abs() < 1e-3);
        let news = CorpusStats::from_counts(2_625_306, 58_979_893);
        assert_eq!(format!("{:.2}", news.avg_sentences_per_block()), "22.47");
        assert!((news.unpairable_fraction() - 0.0445).abs() < 1e-3);
    }

    #[test]
    fn unpairable_fraction_at_nat_average() {
        // 100 blocks averaging 5.61 sentences: 61 blocks of 6, 39 of 5.
        let blocks: Vec<TextBlock> = (0..100)
            .map(|i| {
                let k = if i < 61 { 6 } else { 5 };
                TextBlock::new(i, (0..k).map(|j| format!("S{j}.")).collect(), "nat").unwrap()
            })
            .collect();
        let s = corpus_stats(&blocks);
        assert!((s.avg_sentences_per_block() - 5.61).abs() < 1e-12);
        assert!((s.unpairable_fraction() - 0.178).abs() < 0.001);
    }

    #[test]
    fn single_sentence_block_is_fully_unpairable() {
        let b = TextBlock::new(0, vec!["Jen jedna.".into()], "x").unwrap();
        let s = corpus_stats([&b]);
        assert_eq!(s.unpairable_fraction(), 1.0);
        assert_eq!(s.nsp_pairs(), 0);
    }

    #[test]
    fn empty_corpus_flag() {
        let s = corpus_stats(std::iter::empty());
        assert!(s.is_empty());
        assert_eq!(s.avg_sentences_per_block(), 0.0);
        assert!(s.to_string().contains("empty_corpus: true"));
    }

    #[test]
    fn merge_adds_counts_and_recomputes_ratios() {
        let a = CorpusStats::from_counts(2, 10);
        let b = CorpusStats::from_counts(3, 5);
        let m = a.merge(&b);
        assert_eq!((m.blocks, m.sentences), (5, 15));
        assert_eq!(m.avg_sentences_per_block(), 3.0);
        assert_eq!(m.unpairable_fraction(), 5.0 / 15.0);
    }

    #[test]
    fn corpus_mix_pair_arithmetic() {
        let total = CorpusStats::from_counts(49_104_507, 275_314_224)
            .merge(&CorpusStats::from_counts(450_000, 6_964_794))
            .merge(&CorpusStats::from_counts(2_625_306, 58_979_893));
        assert_eq!(total.blocks, 52_179_813);
        assert_eq!(total.sentences, 341_258_911);
        assert_eq!(total.nsp_pairs(), 578_158_196);
    }

    #[test]
    fn splitter_output_rejoins_to_input() {
        let text = "Ahoj. Jak se máš? Dobře, díky! Viz str. 5 a č. 7. Konec";
        let parts = split_sentences(text);
        assert!(parts.iter().all(|p| !p.is_empty()));
        assert_eq!(parts.join(" "), text);
    }
}
