use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use super::{encode_srl, encode_token_task, DevMetric, Target, TaskExample, TaskFamily, TaskKind};
use crate::checkpoint::Checkpoint;
use crate::encoder::{dropout_mask, encode_backward, encode_cached, truncated_normal, Mode, ParameterSet, Tensor, INIT_STD};
use crate::metrics::{entity_f1, multilabel_f1, pearson, token_f1, F1Score, TagSequencePair};
use crate::numeric::{add_row_bias, col_sum_acc, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, log_softmax, sigmoid, Scalar};
use crate::seed;
use crate::tokenizer::Vocabulary;
use crate::trainer::{adam_step, adam_update, batch_indices, example_seed, lr_schedule, OptimizerState, TrainPhase};
use crate::{Error, Result};

const HEAD_INIT_TAG: u64 = 0x4845_4144;
const HEAD_DROP_TAG: u64 = 0x4844_5250;
const MAGIC: &str = "bertdesk-task 1";
const SEPARATOR: &str = "===\n";

/// Affine output layer, H × K.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn zeros(hidden: usize, out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[hidden, out]),
            b: Tensor::zeros(&[out]),
        }
    }
}

/// Encoder plus a dropout-and-affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel<T> {
    pub kind: TaskKind,
    pub encoder: ParameterSet<T>,
    pub head: Head<T>,
    pub head_dropout: f64,
}

impl<T: Scalar> TaskModel<T> {
    /// Attaches a freshly initialised head to `encoder`.
    pub fn new(kind: TaskKind, encoder: ParameterSet<T>, head_dropout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&head_dropout) {
            return Err(Error::Task(format!("head dropout {head_dropout} outside [0, 1)")));
        }
        let mut head = Head::zeros(encoder.config.hidden_size, kind.output_size());
        let mut rng = seed::rng_at(seed, &[HEAD_INIT_TAG]);
        for v in &mut head.w.data {
            *v = T::of(truncated_normal(&mut rng) * INIT_STD);
        }
        Ok(Self {
            kind,
            encoder,
            head,
            head_dropout,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        for &v in self.head.w.data.iter().chain(&self.head.b.data) {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        let header = format!(
            "{MAGIC}\nfamily={}\nmetric={}\nlabels={}\nhead_dropout={}\nhead_bytes={}\n{SEPARATOR}",
            self.kind.family,
            self.kind.metric,
            self.kind.labels.join("\t"),
            self.head_dropout,
            blob.len()
        );
        let mut out = header.into_bytes();
        out.extend(blob);
        out.extend(Checkpoint::new(self.encoder.clone()).to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Task(format!("model file: {m}"));
        let split = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR.as_bytes())
            .ok_or_else(|| bad("missing header terminator"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a fine-tuned model file"));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let family: TaskFamily = get("family")?.parse()?;
        let metric: DevMetric = get("metric")?.parse()?;
        let labels: Vec<String> = match get("labels")? {
            "" => Vec::new(),
            l => l.split('\t').map(String::from).collect(),
        };
        let head_dropout: f64 = get("head_dropout")?.parse().map_err(|_| bad("bad head_dropout"))?;
        let head_bytes: usize = get("head_bytes")?.parse().map_err(|_| bad("bad head_bytes"))?;
        let kind = TaskKind::new(family, labels, metric)?;
        let rest = &bytes[split + SEPARATOR.len()..];
        if rest.len() < head_bytes {
            return Err(bad("head truncated"));
        }
        let encoder = Checkpoint::<T>::from_bytes(&rest[head_bytes..], None)?.params;
        let mut head = Head::zeros(encoder.config.hidden_size, kind.output_size());
        if head_bytes != 4 * (head.w.len() + head.b.len()) {
            return Err(bad("head size does not match the encoder and label inventory"));
        }
        let mut values = rest[..head_bytes]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64));
        for v in head.w.data.iter_mut().chain(head.b.data.iter_mut()) {
            *v = values.next().unwrap();
        }
        Ok(Self {
            kind,
            encoder,
            head,
            head_dropout,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Head logits for the rows picked by `positions` (token tasks) or for
    /// the pooled output.
    fn logits(&self, x: &[T], rows: usize) -> Vec<T> {
        let (h, k) = (self.encoder.config.hidden_size, self.kind.output_size());
        let mut out = vec![T::zero(); rows * k];
        gemm_acc(x, &self.head.w.data, rows, h, k, &mut out);
        add_row_bias(&mut out, &self.head.b.data);
        out
    }
}

fn gather_rows<T: Scalar>(hidden: &[T], h: usize, rows: &[usize]) -> Vec<T> {
    rows.iter().flat_map(|&r| hidden[r * h..(r + 1) * h].iter().copied()).collect()
}

/// Loss of one example: cross-entropy for classification (averaged over
/// labelled positions for token tasks), mean binary cross-entropy over
/// labels for multilabel, squared error for regression.
///
/// `seed` selects training mode with dropout. With `grads`, gradients of
/// `scale * loss` are accumulated.
pub fn example_loss<T: Scalar>(
    model: &TaskModel<T>,
    ex: &TaskExample,
    seed: Option<u64>,
    grads: Option<(&mut ParameterSet<T>, &mut Head<T>)>,
    scale: f64,
) -> Result<f64> {
    let mode = seed.map_or(Mode::Eval, |s| Mode::Train { seed: s });
    let (out, cache) = encode_cached(&model.encoder, &ex.features, mode)?;
    let (h, k) = (model.encoder.config.hidden_size, model.kind.output_size());
    let (rows, x) = match &ex.target {
        Target::Tokens(t) => {
            let rows: Vec<usize> = (0..t.len()).filter(|&i| t[i].is_some()).collect();
            let x = gather_rows(&out.hidden, h, &rows);
            (Some(rows), x)
        }
        Target::Unlabeled => return Err(Error::Task("example has no target".into())),
        _ => (None, out.pooled.clone()),
    };
    let r = x.len() / h;
    if r == 0 {
        return Ok(0.0);
    }
    let mask = seed.and_then(|s| dropout_mask::<T>(x.len(), model.head_dropout, &mut Some(seed::rng_at(s, &[HEAD_DROP_TAG]))));
    let mut xd = x;
    if let Some(m) = &mask {
        xd.iter_mut().zip(m).for_each(|(v, &keep)| *v *= keep);
    }
    let logits = model.logits(&xd, r);

    let mut dlogits = vec![T::zero(); r * k];
    let mut loss = 0.0;
    let mut cross_entropy = |row: usize, label: u32, weight: f64| {
        let lp = log_softmax(&logits[row * k..(row + 1) * k]);
        loss -= weight * lp[label as usize].as_f64();
        for (j, &l) in lp.iter().enumerate() {
            let target = if j == label as usize { 1.0 } else { 0.0 };
            dlogits[row * k + j] = T::of(weight * (l.exp().as_f64() - target));
        }
    };
    match &ex.target {
        Target::Tokens(t) => {
            let labels: Vec<u32> = t.iter().flatten().copied().collect();
            for (row, &label) in labels.iter().enumerate() {
                cross_entropy(row, label, 1.0 / r as f64);
            }
        }
        Target::Class(c) => cross_entropy(0, *c, 1.0),
        Target::Score(y) => {
            let diff = logits[0].as_f64() - y;
            loss = diff * diff;
            dlogits[0] = T::of(2.0 * diff);
        }
        Target::MultiHot(y) => {
            for (j, &yj) in y.iter().enumerate() {
                let z = logits[j].as_f64();
                let yv = if yj { 1.0 } else { 0.0 };
                loss += (z.max(0.0) - z * yv + (-z.abs()).exp().ln_1p()) / k as f64;
                dlogits[j] = T::of((sigmoid(z) - yv) / k as f64);
            }
        }
        Target::Unlabeled => unreachable!(),
    }

    if let Some((genc, ghead)) = grads {
        let s = T::of(scale);
        dlogits.iter_mut().for_each(|d| *d *= s);
        gemm_at_b_acc(&xd, &dlogits, r, h, k, &mut ghead.w.data);
        col_sum_acc(&dlogits, k, &mut ghead.b.data);
        let mut dx = vec![T::zero(); r * h];
        gemm_a_bt_acc(&dlogits, &model.head.w.data, r, k, h, &mut dx);
        if let Some(m) = &mask {
            dx.iter_mut().zip(m).for_each(|(v, &keep)| *v *= keep);
        }
        let mut d_hidden = vec![T::zero(); out.hidden.len()];
        match rows {
            Some(rows) => {
                for (i, &pos) in rows.iter().enumerate() {
                    d_hidden[pos * h..(pos + 1) * h].copy_from_slice(&dx[i * h..(i + 1) * h]);
                }
                encode_backward(&model.encoder, &cache, &d_hidden, None, genc);
            }
            None => encode_backward(&model.encoder, &cache, &d_hidden, Some(&dx), genc),
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { label: u32, probs: Vec<f64> },
    Score(f64),
    /// Per-label probabilities and the labels at or above 0.5.
    Labels { probs: Vec<f64>, set: BTreeSet<usize> },
    /// One label per first subword, in word order.
    Tags(Vec<u32>),
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best as u32
}

/// Eval-mode outputs for each example.
pub fn predict<T: Scalar>(model: &TaskModel<T>, examples: &[TaskExample]) -> Result<Vec<Prediction>> {
    let h = model.encoder.config.hidden_size;
    let k = model.kind.output_size();
    let token_level = model.kind.family.is_token_level();
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        if matches!(ex.target, Target::Tokens(_)) != token_level {
            return Err(Error::Task(format!(
                "example {i} was encoded for a different task than this {} model",
                model.kind.family
            )));
        }
        let (enc, _) = encode_cached(&model.encoder, &ex.features, Mode::Eval)?;
        if token_level {
            let rows: Vec<usize> = (0..ex.first_subword.len()).filter(|&p| ex.first_subword[p]).collect();
            let logits = model.logits(&gather_rows(&enc.hidden, h, &rows), rows.len());
            let tags = logits
                .chunks(k)
                .map(|row| argmax(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
                .collect();
            out.push(Prediction::Tags(tags));
            continue;
        }
        let logits: Vec<f64> = model.logits(&enc.pooled, 1).iter().map(|v| v.as_f64()).collect();
        out.push(match model.kind.family {
            TaskFamily::PairRegression => Prediction::Score(logits[0]),
            TaskFamily::MultilabelClassification => {
                let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
                let set = (0..k).filter(|&j| probs[j] >= 0.5).collect();
                Prediction::Labels { probs, set }
            }
            _ => {
                let probs: Vec<f64> = log_softmax(&logits).into_iter().map(f64::exp).collect();
                Prediction::Class {
                    label: argmax(&probs),
                    probs,
                }
            }
        });
    }
    Ok(out)
}

/// Tags a whole sentence, splitting and rejoining as needed. For SRL the
/// predicate range is required; words truncated away are tagged `O`.
pub fn predict_words<T: Scalar, S: AsRef<str>>(
    model: &TaskModel<T>,
    words: &[S],
    predicate: Option<Range<usize>>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<String>> {
    let examples = match (model.kind.family, predicate) {
        (TaskFamily::TokenClassification, _) => encode_token_task(words, None, vocab, max_len)?,
        (TaskFamily::SrlClassification, Some(p)) => vec![encode_srl(words, p, None, vocab, max_len)?],
        (TaskFamily::SrlClassification, None) => return Err(Error::Task("SRL prediction needs a predicate".into())),
        (f, _) => return Err(Error::Task(format!("{f} models do not tag words"))),
    };
    let mut tags = Vec::with_capacity(words.len());
    for p in predict(model, &examples)? {
        if let Prediction::Tags(t) = p {
            tags.extend(t.into_iter().map(|id| model.kind.label(id).to_string()));
        }
    }
    tags.resize(words.len(), "O".to_string());
    Ok(tags)
}

/// The task's dev metric, or `None` for an empty set or an undefined value.
pub fn evaluate_dev<T: Scalar>(model: &TaskModel<T>, dev: &[TaskExample]) -> Result<Option<f64>> {
    if dev.is_empty() {
        return Ok(None);
    }
    let preds = predict(model, dev)?;
    let kind = &model.kind;
    let value = match kind.metric {
        DevMetric::EntityF1 | DevMetric::TokenF1 => {
            let mut pairs = Vec::with_capacity(dev.len());
            for (ex, p) in dev.iter().zip(&preds) {
                let (Target::Tokens(t), Prediction::Tags(tags)) = (&ex.target, p) else {
                    return Err(Error::Task("dev example without token labels".into()));
                };
                let gold: Vec<Option<u32>> = (0..t.len()).filter(|&i| ex.first_subword[i]).map(|i| t[i]).collect();
                let (g, q): (Vec<&str>, Vec<&str>) = gold
                    .iter()
                    .zip(tags)
                    .filter_map(|(g, &q)| g.map(|g| (kind.label(g), kind.label(q))))
                    .unzip();
                pairs.push(TagSequencePair::new(&g, &q));
            }
            let score = if kind.metric == DevMetric::EntityF1 {
                entity_f1(&pairs)?
            } else {
                token_f1(&pairs)?
            };
            Some(score.f1)
        }
        DevMetric::MicroF1 => {
            let mut right = 0;
            for (ex, p) in dev.iter().zip(&preds) {
                if let (Target::Class(c), Prediction::Class { label, .. }) = (&ex.target, p) {
                    right += usize::from(c == label);
                } else {
                    return Err(Error::Task("dev example without a class".into()));
                }
            }
            let wrong = dev.len() - right;
            Some(F1Score::from_counts(right, wrong, wrong).f1)
        }
        DevMetric::MultilabelF1 => {
            let mut gold = Vec::with_capacity(dev.len());
            let mut pred = Vec::with_capacity(dev.len());
            for (ex, p) in dev.iter().zip(&preds) {
                let (Target::MultiHot(y), Prediction::Labels { set, .. }) = (&ex.target, p) else {
                    return Err(Error::Task("dev example without a label vector".into()));
                };
                gold.push((0..y.len()).filter(|&j| y[j]).collect());
                pred.push(set.clone());
            }
            Some(multilabel_f1(&pred, &gold)?.f1)
        }
        DevMetric::Pearson => {
            let mut gold = Vec::with_capacity(dev.len());
            let mut pred = Vec::with_capacity(dev.len());
            for (ex, p) in dev.iter().zip(&preds) {
                let (Target::Score(y), Prediction::Score(s)) = (&ex.target, p) else {
                    return Err(Error::Task("dev example without a score".into()));
                };
                gold.push(*y);
                pred.push(*s);
            }
            pearson(&pred, &gold).ok()
        }
    };
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Fraction of all steps spent warming up.
    pub warmup: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl FinetuneHyper {
    pub fn new(seed: u64) -> Self {
        Self {
            lr: 5e-5,
            epochs: 3,
            batch: 32,
            warmup: 0.1,
            dropout: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    /// Model after the epoch with the best dev metric, or after the last
    /// epoch when no dev metric was available.
    pub model: TaskModel<T>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains encoder and a new head with Adam under warm-up and linear decay.
/// Epochs are `ceil(n / batch)` steps over the shuffled example stream.
pub fn finetune<T: Scalar>(
    encoder: ParameterSet<T>,
    kind: TaskKind,
    train: &[TaskExample],
    dev: &[TaskExample],
    hyper: &FinetuneHyper,
) -> Result<FinetuneOutcome<T>> {
    if train.is_empty() {
        return Err(Error::Task("empty training set".into()));
    }
    if hyper.batch == 0 || hyper.epochs == 0 {
        return Err(Error::Task("batch size and epochs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&hyper.warmup) {
        return Err(Error::Task(format!("warmup fraction {} outside [0, 1]", hyper.warmup)));
    }
    for (name, set) in [("train", train), ("dev", dev)] {
        for (i, ex) in set.iter().enumerate() {
            ex.check(&kind)
                .and_then(|_| ex.features.validate(&encoder))
                .map_err(|e| Error::Task(format!("{name} example {i}: {e}")))?;
        }
    }
    let mut model = TaskModel::new(kind, encoder, hyper.dropout, hyper.seed)?;
    let steps_per_epoch = train.len().div_ceil(hyper.batch) as u64;
    let total = steps_per_epoch * hyper.epochs as u64;
    let phase = TrainPhase {
        max_len: train[0].features.len(),
        batch_size: hyper.batch,
        total_steps: total,
        base_lr: hyper.lr,
        warmup_steps: (hyper.warmup * total as f64).round() as u64,
    };
    phase.validate()?;
    let mut opt = OptimizerState::new(&model.encoder);
    let (hs, ks) = (model.head.w.shape[0], model.head.w.shape[1]);
    let mut head_m = Head::<T>::zeros(hs, ks);
    let mut head_v = Head::<T>::zeros(hs, ks);

    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, TaskModel<T>)> = None;
    for epoch in 0..hyper.epochs {
        let mut loss_sum = 0.0;
        for s in 0..steps_per_epoch {
            let step = epoch as u64 * steps_per_epoch + s;
            let batch = batch_indices(train.len(), hyper.batch, hyper.seed, 0, step);
            let mut genc = model.encoder.zeros_like();
            let mut ghead = Head::zeros(hs, ks);
            let scale = 1.0 / batch.len() as f64;
            for (pos, &i) in batch.iter().enumerate() {
                let seed = example_seed(hyper.seed, 0, step, pos);
                loss_sum += scale * example_loss(&model, &train[i], Some(seed), Some((&mut genc, &mut ghead)), scale)?;
            }
            let lr = lr_schedule(step, &phase)?;
            if ghead.w.data.iter().chain(&ghead.b.data).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient of head".into()));
            }
            adam_step(&mut model.encoder, &genc, &mut opt, lr)?;
            adam_update(&mut model.head.w.data, &ghead.w.data, &mut head_m.w.data, &mut head_v.w.data, opt.t, lr);
            adam_update(&mut model.head.b.data, &ghead.b.data, &mut head_m.b.data, &mut head_v.b.data, opt.t, lr);
        }
        let dev_metric = evaluate_dev(&model, dev)?;
        if let Some(m) = dev_metric {
            if best.as_ref().is_none_or(|b| m > b.0) {
                best = Some((m, epoch + 1, model.clone()));
            }
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / steps_per_epoch as f64,
            dev_metric,
        });
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, hyper.epochs),
    };
    Ok(FinetuneOutcome {
        model,
        epochs,
        best_epoch,
    })
}
