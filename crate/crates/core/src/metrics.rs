//! Evaluation measures: span and token F1 over BIO tags, correlations,
//! AUROC, multilabel F1 and normal-approximation confidence intervals.
//!
//! Every F1 variant is micro-averaged. A case with no positives on either
//! side reports 1.0 with `zero_support` set instead of NaN.

use std::collections::BTreeSet;
use std::fmt;

use crate::{Error, Result};

/// A labelled span with inclusive word bounds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prefix {
    B,
    I,
}

/// Splits a BIO tag; `None` for `O`.
pub fn parse_tag(tag: &str) -> Option<std::result::Result<(Prefix, &str), ()>> {
    if tag == "O" {
        return None;
    }
    let parsed = match tag.split_once('-') {
        Some(("B", label)) if !label.is_empty() => Ok((Prefix::B, label)),
        Some(("I", label)) if !label.is_empty() => Ok((Prefix::I, label)),
        _ => Err(()),
    };
    Some(parsed)
}

/// Spans of a BIO sequence. An `I-X` not continuing an `X` span opens a new
/// one, as conlleval does.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let parsed = match parse_tag(tag) {
            None => None,
            Some(Ok(p)) => Some(p),
            Some(Err(())) => return Err(Error::Metric(format!("malformed tag '{tag}' at position {i}"))),
        };
        match parsed {
            Some((Prefix::I, label)) if open.as_ref().is_some_and(|s| s.label == label) => {
                open.as_mut().unwrap().end = i;
            }
            Some((_, label)) => {
                spans.extend(open.take());
                open = Some(Span {
                    start: i,
                    end: i,
                    label: label.to_string(),
                });
            }
            None => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Removes `B-`/`I-` prefixes; `O` stays `O`.
pub fn strip_bio<S: AsRef<str>>(tags: &[S]) -> Vec<String> {
    tags.iter()
        .map(|t| {
            let t = t.as_ref();
            match parse_tag(t) {
                Some(Ok((_, label))) => label.to_string(),
                _ => t.to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagSequencePair {
    pub gold: Vec<String>,
    pub pred: Vec<String>,
}

impl TagSequencePair {
    pub fn new<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        Self {
            gold: own(gold),
            pred: own(pred),
        }
    }

    fn check(&self, i: usize) -> Result<()> {
        if self.gold.len() != self.pred.len() {
            return Err(Error::Metric(format!(
                "sequence {i}: gold has {} tags, prediction has {}",
                self.gold.len(),
                self.pred.len()
            )));
        }
        Ok(())
    }
}

/// Micro-averaged precision, recall and F1 with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Neither side had a positive item; the scores are set to 1.
    pub zero_support: bool,
}

impl F1Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        if tp + fp + fn_ == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                tp,
                fp,
                fn_,
                zero_support: true,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            tp,
            fp,
            fn_,
            zero_support: false,
        }
    }
}

/// Exact span matches across all sequences.
pub fn entity_f1(pairs: &[TagSequencePair]) -> Result<F1Score> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, pair) in pairs.iter().enumerate() {
        pair.check(i)?;
        let gold: BTreeSet<Span> = extract_spans(&pair.gold)?.into_iter().collect();
        let pred: BTreeSet<Span> = extract_spans(&pair.pred)?.into_iter().collect();
        let hit = gold.intersection(&pred).count();
        tp += hit;
        fp += pred.len() - hit;
        fn_ += gold.len() - hit;
    }
    Ok(F1Score::from_counts(tp, fp, fn_))
}

/// Per-token F1 over positions where gold or prediction is not `O`.
pub fn token_f1(pairs: &[TagSequencePair]) -> Result<F1Score> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, pair) in pairs.iter().enumerate() {
        pair.check(i)?;
        for (g, p) in pair.gold.iter().zip(&pair.pred) {
            match (g == "O", p == "O") {
                (true, true) => {}
                _ if g == p => tp += 1,
                (gold_o, pred_o) => {
                    if !pred_o {
                        fp += 1;
                    }
                    if !gold_o {
                        fn_ += 1;
                    }
                }
            }
        }
    }
    Ok(F1Score::from_counts(tp, fp, fn_))
}

/// Micro F1 over (document, label) incidences.
pub fn multilabel_f1(pred: &[BTreeSet<usize>], gold: &[BTreeSet<usize>]) -> Result<F1Score> {
    if pred.len() != gold.len() {
        return Err(Error::Metric(format!("{} predictions for {} documents", pred.len(), gold.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let hit = p.intersection(g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(F1Score::from_counts(tp, fp, fn_))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Metric("correlation needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite input".into()));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation is undefined for a constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC needs at least one positive and one negative".into()));
    }
    // Mann-Whitney U from rank sums; every term is a multiple of 1/2 so the
    // result is exact
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilabelAuroc {
    pub macro_auroc: f64,
    /// `None` where a label has only one class in the gold data.
    pub per_label: Vec<Option<f64>>,
}

impl MultilabelAuroc {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_label.len()).filter(|&i| self.per_label[i].is_none()).collect()
    }
}

/// Per-label AUROC macro-averaged over labels that have both classes.
/// `scores[d][l]` is document `d`'s score for label `l`.
pub fn multilabel_auroc(scores: &[Vec<f64>], gold: &[BTreeSet<usize>], labels: usize) -> Result<MultilabelAuroc> {
    if scores.len() != gold.len() {
        return Err(Error::Metric(format!("{} score rows for {} documents", scores.len(), gold.len())));
    }
    if let Some(row) = scores.iter().position(|r| r.len() != labels) {
        return Err(Error::Metric(format!("score row {row} has {} entries, expected {labels}", scores[row].len())));
    }
    let mut per_label = Vec::with_capacity(labels);
    for l in 0..labels {
        let col: Vec<f64> = scores.iter().map(|r| r[l]).collect();
        let truth: Vec<bool> = gold.iter().map(|g| g.contains(&l)).collect();
        let both = truth.iter().any(|&t| t) && truth.iter().any(|&t| !t);
        per_label.push(if both { Some(auroc(&col, &truth)?) } else { None });
    }
    let kept: Vec<f64> = per_label.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Metric("every label has a single class; AUROC is undefined".into()));
    }
    Ok(MultilabelAuroc {
        macro_auroc: kept.iter().sum::<f64>() / kept.len() as f64,
        per_label,
    })
}

/// A metric averaged over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    /// 95% normal-approximation half-width; absent for a single run.
    pub half_width: Option<f64>,
    pub runs: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.half_width {
            Some(h) => write!(f, "{} {:.6} ± {:.6} (runs={})", self.metric, self.value, h, self.runs),
            None => write!(f, "{} {:.6} (runs={})", self.metric, self.value, self.runs),
        }
    }
}

pub fn confidence_interval(metric: &str, values: &[f64]) -> Result<EvalReport> {
    if values.is_empty() {
        return Err(Error::Metric("no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half_width = (values.len() >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    });
    Ok(EvalReport {
        metric: metric.to_string(),
        value: mean,
        half_width,
        runs: values.len(),
    })
}
