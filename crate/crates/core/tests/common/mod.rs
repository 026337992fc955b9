#![allow(dead_code)]

use bertdesk::encoder::{init_model, ModelConfig, ParameterSet};

/// H=8, L=2, A=2 model used for gradient checks.
pub fn check_config(embedding: usize, share: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        embedding_size: embedding,
        hidden_size: 8,
        num_layers: 2,
        num_heads: 2,
        intermediate_size: 16,
        max_positions: 16,
        type_vocab_size: 2,
        share_layers: share,
        dropout: 0.0,
    }
}

/// Init with a wider spread so the check exercises non-trivial activations.
pub fn wide_params(config: &ModelConfig, seed: u64) -> ParameterSet<f64> {
    let mut p = init_model::<f64>(config, seed).unwrap();
    let mut state = seed | 1;
    for (name, t) in p.tensors_mut() {
        for v in t.data.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            if name.ends_with("gamma") {
                *v = 1.0 + 0.4 * u;
            } else {
                *v += 0.6 * u;
            }
        }
    }
    p
}

/// Central difference at `h` refined by Richardson extrapolation with `h/2`,
/// so truncation error is O(h^4).
pub fn richardson<F: FnMut(f64) -> f64>(mut loss_at: F, h: f64) -> f64 {
    let central = |h: f64, f: &mut F| (f(h) - f(-h)) / (2.0 * h);
    let coarse = central(h, &mut loss_at);
    let fine = central(h / 2.0, &mut loss_at);
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
}

/// Compares `analytic` against finite differences of `loss` for every scalar
/// of every array, using `|a - fd| / (|a| + 1e-8)`.
pub fn check_all<L>(params: &ParameterSet<f64>, analytic: &ParameterSet<f64>, h: f64, mut loss: L) -> GradCheck
where
    L: FnMut(&ParameterSet<f64>) -> f64,
{
    let mut probe = params.clone();
    let grads: Vec<(String, Vec<f64>)> = analytic.tensors().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let mut out = GradCheck::default();
    for (ti, (name, a)) in grads.iter().enumerate() {
        for (i, &g) in a.iter().enumerate() {
            let orig = probe.tensors()[ti].1.data[i];
            let fd = richardson(
                |d| {
                    probe.tensors_mut()[ti].1.data[i] = orig + d;
                    let l = loss(&probe);
                    probe.tensors_mut()[ti].1.data[i] = orig;
                    l
                },
                h,
            );
            let rel = (g - fd).abs() / (g.abs() + 1e-8);
            out.checked += 1;
            if rel > out.worst {
                out.worst = rel;
                out.at = format!("{name}[{i}] analytic {g:e} fd {fd:e}");
            }
        }
    }
    out
}

pub struct GoldenCase {
    pub line: usize,
    pub kind: String,
    pub gold: Vec<Vec<String>>,
    pub pred: Vec<Vec<String>>,
    pub counts: (usize, usize, usize),
}

/// Hand-counted metric cases from `tests/data/metric_golden.tsv`.
pub fn golden_cases() -> Vec<GoldenCase> {
    let text = include_str!("../data/metric_golden.tsv");
    let seqs = |s: &str| -> Vec<Vec<String>> {
        s.split(" ; ")
            .map(|seq| seq.split(' ').filter(|t| !t.is_empty()).map(String::from).collect())
            .collect()
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let c: Vec<usize> = f[3].split(' ').map(|n| n.parse().unwrap()).collect();
            GoldenCase {
                line: i + 1,
                kind: f[0].to_string(),
                gold: seqs(f[1]),
                pred: seqs(f[2]),
                counts: (c[0], c[1], c[2]),
            }
        })
        .collect()
}

/// Parses a multilabel golden field: one comma list per document, `-` empty.
pub fn label_sets(docs: &[Vec<String>]) -> Vec<std::collections::BTreeSet<usize>> {
    docs.iter()
        .map(|d| {
            d.iter()
                .filter(|s| s.as_str() != "-")
                .flat_map(|s| s.split(',').map(|n| n.parse::<usize>().unwrap()))
                .collect()
        })
        .collect()
}

/// Brute-force AUROC over every positive/negative pair.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub mod heads {
    use super::{check_all, richardson, GradCheck};
    use bertdesk::encoder::{Features, ParameterSet};
    use bertdesk::tasks::{example_loss, Head, Target, TaskExample, TaskFamily, TaskKind, TaskModel};

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("B-L{i}")).collect()
    }

    fn plain(len: usize, real: usize) -> Features {
        Features {
            input_ids: (0..len as u32).map(|i| (i * 11 + 5) % 50).collect(),
            segment_ids: vec![0; len],
            position_ids: (0..len as u32).collect(),
            attention_mask: (0..len).map(|i| i < real).collect(),
        }
    }

    /// One example per head loss on the 50-token check vocabulary.
    pub fn cases() -> Vec<(&'static str, TaskKind, TaskExample)> {
        let metric = bertdesk::tasks::DevMetric::EntityF1;
        let token_targets: Vec<Option<u32>> =
            [None, Some(1), Some(2), None, Some(0), None, Some(2), None, None, None].to_vec();
        let first: Vec<bool> = token_targets.iter().map(Option::is_some).collect();
        let token = TaskExample {
            features: plain(10, 8),
            target: Target::Tokens(token_targets.clone()),
            first_subword: first.clone(),
        };
        let mut srl_features = plain(10, 9);
        // [CLS] w1..w5 [SEP] pred(w2) [SEP] pad
        srl_features.input_ids[7] = srl_features.input_ids[2];
        srl_features.position_ids[7] = 2;
        srl_features.position_ids[8] = 7;
        srl_features.segment_ids[7] = 1;
        srl_features.segment_ids[8] = 1;
        let srl_targets = vec![None, Some(0), Some(1), Some(2), Some(0), Some(1), None, None, None, None];
        let srl = TaskExample {
            features: srl_features,
            first_subword: srl_targets.iter().map(Option::is_some).collect(),
            target: Target::Tokens(srl_targets),
        };
        let mut pair_features = plain(9, 7);
        pair_features.segment_ids[4..7].fill(1);
        let single = |target| TaskExample {
            features: plain(9, 6),
            target,
            first_subword: vec![false; 9],
        };
        vec![
            ("token cross-entropy", TaskKind::new(TaskFamily::TokenClassification, labels(3), metric).unwrap(), token),
            ("srl cross-entropy", TaskKind::new(TaskFamily::SrlClassification, labels(3), metric).unwrap(), srl),
            (
                "sequence cross-entropy",
                TaskKind::new(TaskFamily::SequenceClassification, labels(3), metric).unwrap(),
                single(Target::Class(2)),
            ),
            (
                "multilabel binary cross-entropy",
                TaskKind::new(TaskFamily::MultilabelClassification, labels(4), metric).unwrap(),
                single(Target::MultiHot(vec![true, false, false, true])),
            ),
            (
                "regression squared error",
                TaskKind::new(TaskFamily::PairRegression, vec![], metric).unwrap(),
                TaskExample {
                    features: pair_features,
                    target: Target::Score(0.7),
                    first_subword: vec![false; 9],
                },
            ),
        ]
    }

    /// Widens the head like [`super::wide_params`] widens the encoder.
    pub fn model(kind: TaskKind, encoder: ParameterSet<f64>, seed: u64) -> TaskModel<f64> {
        let mut m = TaskModel::new(kind, encoder, 0.1, seed).unwrap();
        for (i, v) in m.head.w.data.iter_mut().enumerate() {
            *v += 0.5 * (((i as f64 + seed as f64) * 0.618).fract() - 0.5);
        }
        for (i, v) in m.head.b.data.iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.1;
        }
        m
    }

    /// Worst relative error over encoder and head parameters.
    pub fn check(model: &TaskModel<f64>, ex: &TaskExample, h: f64) -> GradCheck {
        let mut genc = model.encoder.zeros_like();
        let mut ghead = Head::zeros(model.head.w.shape[0], model.head.w.shape[1]);
        example_loss(model, ex, None, Some((&mut genc, &mut ghead)), 1.0).unwrap();
        let mut probe = model.clone();
        let mut out = check_all(&model.encoder, &genc, h, |p| {
            probe.encoder.clone_from(p);
            example_loss(&probe, ex, None, None, 1.0).unwrap()
        });
        let mut probe = model.clone();
        for (name, which, analytic) in [("head.w", 0, &ghead.w.data), ("head.b", 1, &ghead.b.data)] {
            for (i, &g) in analytic.iter().enumerate() {
                let set = |m: &mut TaskModel<f64>, v: f64| match which {
                    0 => m.head.w.data[i] = v,
                    _ => m.head.b.data[i] = v,
                };
                let orig = if which == 0 { model.head.w.data[i] } else { model.head.b.data[i] };
                let fd = richardson(
                    |d| {
                        set(&mut probe, orig + d);
                        let l = example_loss(&probe, ex, None, None, 1.0).unwrap();
                        set(&mut probe, orig);
                        l
                    },
                    h,
                );
                let rel = (g - fd).abs() / (g.abs() + 1e-8);
                out.checked += 1;
                if rel > out.worst {
                    out.worst = rel;
                    out.at = format!("{name}[{i}] analytic {g:e} fd {fd:e}");
                }
            }
        }
        out
    }
}
