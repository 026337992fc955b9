//! Reading task datasets and turning them into examples or predictions.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bertdesk::tasks::{
    self, encode_document, encode_pair_task, encode_srl, encode_token_task, DocumentRecord, PairRecord, Prediction,
    SrlSentence, TaggedSentence, TaskExample, TaskFamily, TaskKind, Target,
};
use bertdesk::tokenizer::Vocabulary;

use crate::args::TaskArg;

#[derive(Debug, Clone)]
pub enum Dataset {
    Tagged(Vec<TaggedSentence>),
    Srl(Vec<SrlSentence>),
    Pairs(Vec<PairRecord>),
    Documents(Vec<DocumentRecord>),
}

pub fn family_of(task: TaskArg) -> TaskFamily {
    match task {
        TaskArg::Ner | TaskArg::Pos => TaskFamily::TokenClassification,
        TaskArg::Srl => TaskFamily::SrlClassification,
        TaskArg::Sentiment => TaskFamily::SequenceClassification,
        TaskArg::Mlc => TaskFamily::MultilabelClassification,
        TaskArg::Sts => TaskFamily::PairRegression,
    }
}

pub fn read_dataset(family: TaskFamily, path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = match family {
        TaskFamily::TokenClassification => tasks::read_conll(&text).map(Dataset::Tagged),
        TaskFamily::SrlClassification => tasks::read_srl(&text).map(Dataset::Srl),
        TaskFamily::PairRegression => tasks::read_pairs(&text).map(Dataset::Pairs),
        TaskFamily::SequenceClassification | TaskFamily::MultilabelClassification => {
            tasks::read_documents(&text).map(Dataset::Documents)
        }
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Tagged(s) => s.len(),
            Dataset::Srl(s) => s.len(),
            Dataset::Pairs(s) => s.len(),
            Dataset::Documents(s) => s.len(),
        }
    }

    /// Every label used, sorted.
    pub fn labels(&self) -> BTreeSet<String> {
        match self {
            Dataset::Tagged(s) => s.iter().flat_map(|x| x.tags.iter().cloned()).collect(),
            Dataset::Srl(s) => s.iter().flat_map(|x| x.tags.iter().cloned()).collect(),
            Dataset::Pairs(_) => BTreeSet::new(),
            Dataset::Documents(d) => d.iter().flat_map(|x| x.labels.iter().cloned()).collect(),
        }
    }

    pub fn encode(&self, kind: &TaskKind, vocab: &Vocabulary, max_len: usize) -> Result<Vec<TaskExample>> {
        let ids = |tags: &[String]| tags.iter().map(|t| kind.label_id(t)).collect::<bertdesk::Result<Vec<u32>>>();
        let mut out = Vec::new();
        match self {
            Dataset::Tagged(s) => {
                for (i, x) in s.iter().enumerate() {
                    let labels = ids(&x.tags)?;
                    out.extend(
                        encode_token_task(&x.words, Some(&labels), vocab, max_len).with_context(|| format!("sentence {}", i + 1))?,
                    );
                }
            }
            Dataset::Srl(s) => {
                for (i, x) in s.iter().enumerate() {
                    let labels = ids(&x.tags)?;
                    out.push(
                        encode_srl(&x.words, x.predicate.clone(), Some(&labels), vocab, max_len)
                            .with_context(|| format!("sentence {}", i + 1))?,
                    );
                }
            }
            Dataset::Pairs(p) => {
                for (i, r) in p.iter().enumerate() {
                    let score: f64 = r
                        .target
                        .parse()
                        .map_err(|_| anyhow!("pair {}: score '{}' is not a number", i + 1, r.target))?;
                    out.push(encode_pair_task(&r.a, &r.b, vocab, max_len, Target::Score(score))?);
                }
            }
            Dataset::Documents(d) => {
                for (i, r) in d.iter().enumerate() {
                    let target = if kind.family == TaskFamily::MultilabelClassification {
                        let mut hot = vec![false; kind.labels.len()];
                        for l in &r.labels {
                            hot[kind.label_id(l)? as usize] = true;
                        }
                        Target::MultiHot(hot)
                    } else {
                        match &r.labels[..] {
                            [l] => Target::Class(kind.label_id(l)?),
                            _ => bail!("document {}: expected exactly one label, got {}", i + 1, r.labels.len()),
                        }
                    };
                    out.push(encode_document(&r.text, vocab, max_len, target)?);
                }
            }
        }
        Ok(out)
    }

    pub fn write(&self) -> String {
        match self {
            Dataset::Tagged(s) => tasks::write_conll(s),
            Dataset::Srl(s) => tasks::write_srl(s),
            Dataset::Pairs(p) => tasks::write_pairs(p),
            Dataset::Documents(d) => tasks::write_documents(d),
        }
    }
}

/// Applies a fine-tuned model. Returns the relabelled dataset and, for
/// multi-label models, a probability file (header `labels<TAB>a,b,...`).
pub fn predict_dataset(
    model: &tasks::TaskModel<f32>,
    data: &Dataset,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Dataset, Option<String>)> {
    let kind = &model.kind;
    let sequence_preds = |examples: Vec<TaskExample>| -> Result<Vec<Prediction>> { Ok(tasks::predict(model, &examples)?) };
    Ok(match data {
        Dataset::Tagged(s) => {
            let mut out = s.clone();
            for x in &mut out {
                x.tags = tasks::predict_words(model, &x.words, None, vocab, max_len)?;
            }
            (Dataset::Tagged(out), None)
        }
        Dataset::Srl(s) => {
            let mut out = s.clone();
            for x in &mut out {
                x.tags = tasks::predict_words(model, &x.words, Some(x.predicate.clone()), vocab, max_len)?;
            }
            (Dataset::Srl(out), None)
        }
        Dataset::Pairs(p) => {
            let examples = p
                .iter()
                .map(|r| encode_pair_task(&r.a, &r.b, vocab, max_len, Target::Unlabeled))
                .collect::<bertdesk::Result<Vec<_>>>()?;
            let mut out = p.clone();
            for (r, pred) in out.iter_mut().zip(sequence_preds(examples)?) {
                if let Prediction::Score(s) = pred {
                    r.target = format!("{s:.6}");
                }
            }
            (Dataset::Pairs(out), None)
        }
        Dataset::Documents(d) => {
            let examples = d
                .iter()
                .map(|r| encode_document(&r.text, vocab, max_len, Target::Unlabeled))
                .collect::<bertdesk::Result<Vec<_>>>()?;
            let mut out = d.clone();
            let mut scores = None;
            for (r, pred) in out.iter_mut().zip(sequence_preds(examples)?) {
                match pred {
                    Prediction::Class { label, .. } => r.labels = vec![kind.label(label).to_string()],
                    Prediction::Labels { probs, set } => {
                        r.labels = set.iter().map(|&j| kind.label(j as u32).to_string()).collect();
                        let s = scores.get_or_insert_with(|| format!("labels\t{}\n", kind.labels.join(",")));
                        let row: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
                        s.push_str(&row.join(","));
                        s.push('\n');
                    }
                    other => bail!("unexpected prediction {other:?} for a document task"),
                }
            }
            (Dataset::Documents(out), scores)
        }
    })
}

/// Parses a probability file written by `predict_dataset`.
pub fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let labels = lines
        .next()
        .and_then(|h| h.strip_prefix("labels\t"))
        .ok_or_else(|| anyhow!("{}: line 1: expected 'labels<TAB>...' header", path.display()))?
        .split(',')
        .map(String::from)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| anyhow!("{}: line {}: bad probability", path.display(), i + 2))?;
        if row.len() != labels.len() {
            bail!("{}: line {}: {} values for {} labels", path.display(), i + 2, row.len(), labels.len());
        }
        rows.push(row);
    }
    Ok((labels, rows))
}
