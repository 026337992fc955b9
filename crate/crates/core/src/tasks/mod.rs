//! Fine-tuning on downstream tasks: input encodings, heads and their losses,
//! training with dev-set model selection, prediction and dataset formats.
//!
//! Token-level labels attach to the first subword of each word; every other
//! position carries no target. SRL inputs append the predicate's subwords
//! after the sentence with segment 1 and the predicate's own position ids.

mod data;
mod head;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::encoder::Features;
use crate::pretrain_data::pair_layout;
use crate::tokenizer::{encode, encode_word, Vocabulary};
use crate::{Error, Result};

pub use data::{
    read_conll, read_documents, read_pairs, read_srl, write_conll, write_documents, write_pairs, write_srl,
    DocumentRecord, PairRecord, SrlSentence, TaggedSentence,
};
pub use head::{
    evaluate_dev, example_loss, finetune, predict, predict_words, EpochRecord, FinetuneHyper, FinetuneOutcome, Head,
    Prediction, TaskModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    TokenClassification,
    SequenceClassification,
    PairRegression,
    MultilabelClassification,
    SrlClassification,
}

impl TaskFamily {
    pub fn is_token_level(self) -> bool {
        matches!(self, TaskFamily::TokenClassification | TaskFamily::SrlClassification)
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "token" => TaskFamily::TokenClassification,
            "sequence" => TaskFamily::SequenceClassification,
            "pair-regression" => TaskFamily::PairRegression,
            "multilabel" => TaskFamily::MultilabelClassification,
            "srl" => TaskFamily::SrlClassification,
            other => return Err(Error::Task(format!("unknown task family '{other}'"))),
        })
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::TokenClassification => "token",
            TaskFamily::SequenceClassification => "sequence",
            TaskFamily::PairRegression => "pair-regression",
            TaskFamily::MultilabelClassification => "multilabel",
            TaskFamily::SrlClassification => "srl",
        })
    }
}

/// Dev-set measure used for model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DevMetric {
    EntityF1,
    TokenF1,
    /// Micro F1 over single-label predictions, which equals accuracy.
    MicroF1,
    MultilabelF1,
    Pearson,
}

impl FromStr for DevMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "entity-f1" => DevMetric::EntityF1,
            "token-f1" => DevMetric::TokenF1,
            "micro-f1" => DevMetric::MicroF1,
            "multilabel-f1" => DevMetric::MultilabelF1,
            "pearson" => DevMetric::Pearson,
            other => return Err(Error::Task(format!("unknown metric '{other}'"))),
        })
    }
}

impl fmt::Display for DevMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DevMetric::EntityF1 => "entity-f1",
            DevMetric::TokenF1 => "token-f1",
            DevMetric::MicroF1 => "micro-f1",
            DevMetric::MultilabelF1 => "multilabel-f1",
            DevMetric::Pearson => "pearson",
        })
    }
}

/// A task: its family, label inventory and selection metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskKind {
    pub family: TaskFamily,
    /// Empty for regression.
    pub labels: Vec<String>,
    pub metric: DevMetric,
}

impl TaskKind {
    pub fn new(family: TaskFamily, labels: Vec<String>, metric: DevMetric) -> Result<Self> {
        match family {
            TaskFamily::PairRegression if !labels.is_empty() => {
                return Err(Error::Task("regression tasks take no labels".into()))
            }
            TaskFamily::PairRegression => {}
            _ if labels.is_empty() => return Err(Error::Task(format!("{family} task needs a label inventory"))),
            _ => {}
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::Task(format!("duplicate label '{dup}'")));
        }
        if let Some(bad) = labels.iter().find(|l| l.is_empty() || l.contains(['\t', ',', '\n', ' '])) {
            return Err(Error::Task(format!("label '{bad}' contains a separator")));
        }
        Ok(Self { family, labels, metric })
    }

    /// Named task setups: `ner`, `pos`, `srl`, `sentiment`, `mlc`, `sts`.
    pub fn preset(name: &str, labels: Vec<String>) -> Result<Self> {
        use DevMetric as M;
        use TaskFamily as F;
        let (family, metric) = match name {
            "ner" => (F::TokenClassification, M::EntityF1),
            "pos" => (F::TokenClassification, M::TokenF1),
            "srl" => (F::SrlClassification, M::EntityF1),
            "sentiment" => (F::SequenceClassification, M::MicroF1),
            "mlc" => (F::MultilabelClassification, M::MultilabelF1),
            "sts" => (F::PairRegression, M::Pearson),
            other => return Err(Error::Task(format!("unknown task '{other}'"))),
        };
        Self::new(family, labels, metric)
    }

    /// Width of the head output.
    pub fn output_size(&self) -> usize {
        match self.family {
            TaskFamily::PairRegression => 1,
            _ => self.labels.len(),
        }
    }

    pub fn label_id(&self, label: &str) -> Result<u32> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Task(format!("label '{label}' is not in the inventory")))
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Per position; `None` is the ignore marker.
    Tokens(Vec<Option<u32>>),
    Class(u32),
    Score(f64),
    MultiHot(Vec<bool>),
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub features: Features,
    pub target: Target,
    /// Positions holding the first subword of a labelled word; all false
    /// for sequence-level tasks.
    pub first_subword: Vec<bool>,
}

impl TaskExample {
    /// Number of words whose first subword is in this example.
    pub fn word_count(&self) -> usize {
        self.first_subword.iter().filter(|&&f| f).count()
    }

    /// Checks the target against the task before any training.
    pub fn check(&self, kind: &TaskKind) -> Result<()> {
        let k = kind.output_size() as u32;
        let in_range = |id: u32| {
            if id < k {
                Ok(())
            } else {
                Err(Error::Task(format!("label id {id} outside an inventory of {k}")))
            }
        };
        match (&self.target, kind.family) {
            (Target::Tokens(t), f) if f.is_token_level() => {
                if t.len() != self.features.len() {
                    return Err(Error::Task("token targets differ in length from the input".into()));
                }
                for (i, id) in t.iter().enumerate() {
                    if let Some(id) = *id {
                        if !self.first_subword[i] {
                            return Err(Error::Task(format!("target at position {i} is not a first subword")));
                        }
                        in_range(id)?;
                    }
                }
                Ok(())
            }
            (Target::Class(c), TaskFamily::SequenceClassification) => in_range(*c),
            (Target::Score(s), TaskFamily::PairRegression) if s.is_finite() => Ok(()),
            (Target::MultiHot(v), TaskFamily::MultilabelClassification) if v.len() == k as usize => Ok(()),
            (Target::Unlabeled, f) if !f.is_token_level() => Ok(()),
            (t, f) => Err(Error::Task(format!("target {} does not fit a {f} task", target_name(t)))),
        }
    }
}

fn target_name(t: &Target) -> &'static str {
    match t {
        Target::Tokens(_) => "token labels",
        Target::Class(_) => "class",
        Target::Score(_) => "score",
        Target::MultiHot(v) if v.is_empty() => "empty label vector",
        Target::MultiHot(_) => "label vector",
        Target::Unlabeled => "none",
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 3 {
        return Err(Error::Task(format!("max_len {max_len} leaves no room for content")));
    }
    Ok(())
}

/// `[CLS] ids [SEP]` padded to `max_len`, single segment.
fn single_layout(vocab: &Vocabulary, ids: &[u32], max_len: usize) -> Features {
    let mut input_ids = Vec::with_capacity(max_len);
    input_ids.push(vocab.cls_id());
    input_ids.extend_from_slice(ids);
    input_ids.push(vocab.sep_id());
    let real = input_ids.len();
    input_ids.resize(max_len, vocab.pad_id());
    Features {
        input_ids,
        segment_ids: vec![0; max_len],
        position_ids: (0..max_len as u32).collect(),
        attention_mask: (0..max_len).map(|i| i < real).collect(),
    }
}

/// Encodes a labelled (or, with `labels = None`, unlabelled) word sequence.
/// Sentences longer than `max_len - 2` subwords are split at word
/// boundaries; each remainder becomes a further example.
pub fn encode_token_task<S: AsRef<str>>(
    words: &[S],
    labels: Option<&[u32]>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TaskExample>> {
    check_max_len(max_len)?;
    if let Some(l) = labels {
        if l.len() != words.len() {
            return Err(Error::Task(format!("{} words but {} labels", words.len(), l.len())));
        }
    }
    let cap = max_len - 2;
    let pieces: Vec<Vec<u32>> = words.iter().map(|w| encode_word(vocab, w.as_ref())).collect();
    if let Some(i) = pieces.iter().position(|p| p.len() > cap) {
        return Err(Error::Task(format!(
            "word {i} ('{}') has {} subwords, more than the {cap} that fit",
            words[i].as_ref(),
            pieces[i].len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let mut end = start;
        let mut used = 0;
        while end < words.len() && used + pieces[end].len() <= cap {
            used += pieces[end].len();
            end += 1;
        }
        let mut ids = Vec::with_capacity(used);
        let mut targets = vec![None];
        let mut first = vec![false];
        for w in start..end {
            for (j, &id) in pieces[w].iter().enumerate() {
                ids.push(id);
                first.push(j == 0);
                targets.push(if j == 0 { labels.map(|l| l[w]) } else { None });
            }
        }
        let features = single_layout(vocab, &ids, max_len);
        targets.resize(max_len, None);
        first.resize(max_len, false);
        out.push(TaskExample {
            features,
            target: Target::Tokens(targets),
            first_subword: first,
        });
        start = end;
    }
    Ok(out)
}

/// `[CLS] sentence [SEP] predicate [SEP]`. The appended predicate subwords
/// reuse the position ids of their occurrence in the sentence and take
/// segment 1. Sentences that do not fit lose whole words from the end.
pub fn encode_srl<S: AsRef<str>>(
    words: &[S],
    predicate: Range<usize>,
    labels: Option<&[u32]>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TaskExample> {
    if predicate.is_empty() || predicate.end > words.len() {
        return Err(Error::Task(format!(
            "predicate {}..{} is not a word range of a {}-word sentence",
            predicate.start,
            predicate.end,
            words.len()
        )));
    }
    if let Some(l) = labels {
        if l.len() != words.len() {
            return Err(Error::Task(format!("{} words but {} labels", words.len(), l.len())));
        }
    }
    let pieces: Vec<Vec<u32>> = words.iter().map(|w| encode_word(vocab, w.as_ref())).collect();
    let pred_len: usize = pieces[predicate.clone()].iter().map(Vec::len).sum();
    let budget = max_len.saturating_sub(3 + pred_len);
    let mut kept = 0;
    let mut used = 0;
    while kept < words.len() && used + pieces[kept].len() <= budget {
        used += pieces[kept].len();
        kept += 1;
    }
    if kept < predicate.end {
        return Err(Error::Task(format!(
            "predicate at words {}..{} does not fit in {max_len} positions",
            predicate.start, predicate.end
        )));
    }

    let mut input_ids = vec![vocab.cls_id()];
    let mut targets = vec![None];
    let mut first = vec![false];
    let mut pred_positions = Vec::with_capacity(pred_len);
    for (w, p) in pieces.iter().enumerate().take(kept) {
        for (j, &id) in p.iter().enumerate() {
            if predicate.contains(&w) {
                pred_positions.push((input_ids.len() as u32, id));
            }
            input_ids.push(id);
            first.push(j == 0);
            targets.push(if j == 0 { labels.map(|l| l[w]) } else { None });
        }
    }
    input_ids.push(vocab.sep_id());
    let sentence_len = input_ids.len();
    let mut position_ids: Vec<u32> = (0..sentence_len as u32).collect();
    for &(pos, id) in &pred_positions {
        input_ids.push(id);
        position_ids.push(pos);
    }
    input_ids.push(vocab.sep_id());
    position_ids.push(sentence_len as u32);
    let real = input_ids.len();
    let mut segment_ids = vec![0; sentence_len];
    segment_ids.resize(real, 1);
    segment_ids.resize(max_len, 0);
    input_ids.resize(max_len, vocab.pad_id());
    // padding is masked out; sequential ids keep it in range
    position_ids.extend(real as u32..max_len as u32);
    targets.resize(max_len, None);
    first.resize(max_len, false);
    Ok(TaskExample {
        features: Features {
            input_ids,
            segment_ids,
            position_ids,
            attention_mask: (0..max_len).map(|i| i < real).collect(),
        },
        target: Target::Tokens(targets),
        first_subword: first,
    })
}

/// `[CLS] a [SEP] b [SEP]` with the pretraining truncation rule.
pub fn encode_pair_task(a: &str, b: &str, vocab: &Vocabulary, max_len: usize, target: Target) -> Result<TaskExample> {
    if max_len < 4 {
        return Err(Error::Task(format!("max_len {max_len} leaves no room for a pair")));
    }
    let (input_ids, segment_ids, attention_mask, _) =
        pair_layout(vocab, encode(vocab, a).ids, encode(vocab, b).ids, max_len);
    Ok(TaskExample {
        features: Features {
            position_ids: (0..max_len as u32).collect(),
            input_ids,
            segment_ids,
            attention_mask,
        },
        target,
        first_subword: vec![false; max_len],
    })
}

/// `[CLS] text [SEP]`, keeping the first `max_len - 2` subwords.
pub fn encode_document(text: &str, vocab: &Vocabulary, max_len: usize, target: Target) -> Result<TaskExample> {
    check_max_len(max_len)?;
    let mut ids = encode(vocab, text).ids;
    ids.truncate(max_len - 2);
    Ok(TaskExample {
        features: single_layout(vocab, &ids, max_len),
        target,
        first_subword: vec![false; max_len],
    })
}
