//! Acceptance run: one line per criterion. Pass criterion numbers as
//! arguments to run a subset.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bertdesk::checkpoint::Checkpoint;
use bertdesk::corpus::{CorpusStats, TextBlock};
use bertdesk::encoder::{
    embedding_sum, forward, init_model, param_count, pretrain_gradients, pretrain_loss, Features, Mode, ModelConfig,
    ParameterSet, PretrainTargets,
};
use bertdesk::metrics::{
    auroc, confidence_interval, entity_f1, multilabel_f1, pearson, spearman, token_f1, F1Score, TagSequencePair,
};
use bertdesk::numeric::Scalar;
use bertdesk::pretrain_data::{
    apply_mlm_mask, build_examples, corpus_nsp_pairs, MaskAction, MaskPolicy, PretrainExample,
};
use bertdesk::seed;
use bertdesk::synth::{pseudo_words, sentiment_set, synth_corpus, tagging_set, BlockSizes, CorpusSpec, Language, TAGGING_TAGS};
use bertdesk::tasks::{
    encode_document, encode_srl, encode_token_task, finetune, predict_words, FinetuneHyper, Target, TaskExample,
    TaskKind,
};
use bertdesk::tokenizer::{encode_word, train_wordpiece, Casing, Vocabulary};
use bertdesk::trainer::{lr_schedule, train, Execution, PhaseData, TrainOptions, TrainPhase};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn words_of(blocks: &[TextBlock]) -> impl Iterator<Item = &str> {
    blocks.iter().flat_map(|b| b.sentences.iter().map(String::as_str))
}

fn c1_pair_count() -> Outcome {
    let mut total_pairs = 0usize;
    for i in 0..1000u64 {
        let mut rng = seed::rng_at(1, &[i]);
        let mut spec = CorpusSpec::new(rng.gen_range(2..=30), BlockSizes::Uniform { min: 1, max: 8 }, i);
        spec.vocabulary = 20;
        spec.min_words = 2;
        spec.max_words = 4;
        let blocks = synth_corpus(&spec).map_err(|e| e.to_string())?;
        let sentences: usize = blocks.iter().map(|b| b.sentences.len()).sum();
        let nonempty = blocks.iter().filter(|b| !b.sentences.is_empty()).count();
        let (pairs, dropped) = corpus_nsp_pairs(&blocks, i, 1.0);
        ensure!(dropped == 0, "corpus {i}: {dropped} negatives dropped");
        ensure!(
            pairs.len() == 2 * (sentences - nonempty),
            "corpus {i}: {} pairs, expected 2×({sentences}−{nonempty})",
            pairs.len()
        );
        total_pairs += pairs.len();
    }
    // block and sentence counts of the three corpus sources
    let rows = [(49_104_507u64, 275_314_224u64), (450_000, 6_964_794), (2_625_306, 58_979_893)];
    let stats = rows
        .iter()
        .fold(CorpusStats::default(), |acc, &(b, s)| acc.merge(&CorpusStats::from_counts(b, s)));
    let (blocks, sentences): (u64, u64) = rows.iter().fold((0, 0), |(b, s), r| (b + r.0, s + r.1));
    ensure!(2 * (sentences - blocks) == 578_158_196, "hand sum gives {}", 2 * (sentences - blocks));
    ensure!(stats.nsp_pairs() == 578_158_196, "closed form gives {}", stats.nsp_pairs());
    Ok(format!("1000 corpora, {total_pairs} pairs, closed form {}", stats.nsp_pairs()))
}

fn c2_hard_negatives() -> Outcome {
    // unique sentences so every pair can be traced to its block and index
    let sizes = [2usize, 3, 4, 5, 6, 7, 8];
    let blocks: Vec<TextBlock> = (0..2800u64)
        .map(|b| {
            let n = sizes[b as usize % sizes.len()];
            TextBlock::new(b, (0..n).map(|i| format!("b{b} s{i}.")).collect(), "synth").unwrap()
        })
        .collect();
    let mut at: HashMap<&str, (usize, usize)> = HashMap::new();
    for (bi, b) in blocks.iter().enumerate() {
        for (si, s) in b.sentences.iter().enumerate() {
            at.insert(s, (bi, si));
        }
    }
    let (pairs, dropped) = corpus_nsp_pairs(&blocks, 5, 1.0);
    ensure!(dropped == 0, "{dropped} negatives dropped");
    let (mut negatives, mut fallback, mut violations) = (0, 0, Vec::new());
    for p in pairs.iter().filter(|p| !p.is_next) {
        negatives += 1;
        let (ba, ia) = at[p.sentence_a.as_str()];
        let (bb, ib) = at[p.sentence_b.as_str()];
        let k = blocks[ba].sentences.len();
        let ok = if k == 2 {
            fallback += 1;
            bb != ba
        } else {
            bb == ba && ib != ia + 1 && ib != ia
        };
        if !ok {
            violations.push(format!("{} / {}", p.sentence_a, p.sentence_b));
        }
    }
    ensure!(negatives >= 10_000, "only {negatives} negatives");
    ensure!(violations.is_empty(), "{} violations, first {}", violations.len(), violations[0]);
    Ok(format!("{negatives} negatives ({fallback} from size-2 blocks), 0 violations"))
}

fn c3_mlm_ratios() -> Outcome {
    let words = pseudo_words(200, 3);
    let vocab = train_wordpiece(words.iter().map(String::as_str), 500, Casing::Uncased).map_err(|e| e.to_string())?;
    let regular = vocab.regular_ids();
    let policy = MaskPolicy::default();
    let mut rng = seed::rng(9);
    let (mut maskable, mut selected) = (0usize, 0usize);
    let mut counts = [0usize; 3];
    while maskable < 120_000 {
        let len = rng.gen_range(8..=160);
        let ids: Vec<u32> = (0..len).map(|_| regular[rng.gen_range(0..regular.len())]).collect();
        let mask: Vec<bool> = (0..len).map(|i| i > 0 && i + 1 < len).collect();
        let out = apply_mlm_mask(&ids, &mask, &policy, &vocab, &mut rng);
        maskable += mask.iter().filter(|&&m| m).count();
        selected += out.positions.len();
        for (&p, a) in out.positions.iter().zip(&out.actions) {
            ensure!(mask[p], "unmaskable position {p} selected");
            match a {
                MaskAction::Masked => {
                    ensure!(out.ids[p] == vocab.mask_id(), "masked position keeps id");
                    counts[0] += 1;
                }
                MaskAction::Randomized => counts[1] += 1,
                MaskAction::Kept => {
                    ensure!(out.ids[p] == ids[p], "kept position changed");
                    counts[2] += 1;
                }
            }
        }
    }
    let frac = selected as f64 / maskable as f64;
    let split: Vec<f64> = counts.iter().map(|&c| c as f64 / selected as f64).collect();
    ensure!((frac - 0.15).abs() <= 0.005, "selection {frac:.4}");
    for (got, want) in split.iter().zip([0.8, 0.1, 0.1]) {
        ensure!((got - want).abs() <= 0.01, "split {split:.4?}");
    }
    Ok(format!(
        "{maskable} maskable, selected {frac:.4}, split {:.4}/{:.4}/{:.4}",
        split[0], split[1], split[2]
    ))
}

fn within(got: usize, want: f64) -> bool {
    (got as f64 - want).abs() <= 0.05 * want
}

fn c4_param_counts() -> Outcome {
    let bert30 = param_count(&ModelConfig::bert_base(30_000)).encoder();
    let bert40 = param_count(&ModelConfig::bert_base(40_000)).embeddings;
    let albert = param_count(&ModelConfig::albert_base(40_000));
    ensure!(within(bert30, 110e6), "BERT-base/30K {bert30}");
    ensure!(within(bert40, 30e6), "40K embeddings {bert40}");
    ensure!(within(albert.encoder(), 12e6), "ALBERT-base/40K {}", albert.encoder());
    ensure!(within(albert.embeddings, 5e6), "ALBERT embeddings {}", albert.embeddings);
    // the formula agrees with an allocated model
    for share in [false, true] {
        let config = common::check_config(4, share);
        let params = init_model::<f32>(&config, 1).map_err(|e| e.to_string())?;
        let counted = param_count(&config);
        ensure!(
            params.scalar_count() == counted.total(),
            "share={share}: allocated {} vs counted {}",
            params.scalar_count(),
            counted.total()
        );
    }
    Ok(format!(
        "BERT-base/30K {bert30}, 40K emb {bert40}, ALBERT/40K {} (emb {})",
        albert.encoder(),
        albert.embeddings
    ))
}

fn check_features() -> (Features, PretrainTargets) {
    let len = 12;
    let f = Features {
        input_ids: (0..len as u32).map(|i| (i * 7 + 3) % 50).collect(),
        segment_ids: (0..len).map(|i| u32::from(i >= len / 2)).collect(),
        position_ids: (0..len as u32).collect(),
        attention_mask: (0..len).map(|i| i < 10).collect(),
    };
    let t = PretrainTargets {
        mlm_positions: vec![1, 4, 6],
        mlm_labels: vec![9, 17, 33],
        nsp_label: Some(1),
    };
    (f, t)
}

fn c5_gradients() -> Outcome {
    let (f, t) = check_features();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (e, share) in [(8, false), (8, true), (4, false), (4, true)] {
        let p = common::wide_params(&common::check_config(e, share), 5);
        let (_, grads) = pretrain_gradients(&p, &f, &t, Mode::Eval).map_err(|e| e.to_string())?;
        let r = common::check_all(&p, &grads, 2e-3, |q| {
            let out = forward(q, &f, &t.mlm_positions, Mode::Eval).unwrap();
            pretrain_loss(&out, &t.mlm_labels, t.nsp_label).unwrap().total
        });
        ensure!(r.worst < 1e-4, "encoder E={e} share={share}: {:.2e} at {}", r.worst, r.at);
        worst = worst.max(r.worst);
        checked += r.checked;
    }
    for share in [false, true] {
        let config = common::check_config(6, share);
        for (i, (name, kind, ex)) in common::heads::cases().into_iter().enumerate() {
            let model = common::heads::model(kind, common::wide_params(&config, 21 + i as u64), 3 + i as u64);
            let r = common::heads::check(&model, &ex, 2e-3);
            ensure!(r.worst < 1e-4, "{name} share={share}: {:.2e} at {}", r.worst, r.at);
            worst = worst.max(r.worst);
            checked += r.checked;
        }
    }
    Ok(format!("{checked} scalars, worst relative error {worst:.2e}"))
}

/// The pretraining run shared by the learning-signal and fine-tuning checks.
struct Pretrained {
    words: Vec<String>,
    vocab: Vocabulary,
    params: ParameterSet<f32>,
    initial_nsp: f64,
    mlm: f64,
    nsp: f64,
}

const PRETRAIN_SEED: u64 = 7;
const CORPUS_VOCABULARY: usize = 30;

fn mean_losses<T: Scalar>(params: &ParameterSet<T>, examples: &[PretrainExample]) -> (f64, f64) {
    let (mut mlm, mut nsp) = (0.0, 0.0);
    for e in examples {
        let out = forward(params, &e.features(), &e.mlm_positions, Mode::Eval).unwrap();
        let l = pretrain_loss(&out, &e.mlm_labels, Some(e.nsp_label)).unwrap();
        mlm += l.mlm;
        nsp += l.nsp;
    }
    let n = examples.len() as f64;
    (mlm / n, nsp / n)
}

fn pretrained() -> &'static Pretrained {
    static RUN: OnceLock<Pretrained> = OnceLock::new();
    RUN.get_or_init(|| {
        let s = PRETRAIN_SEED;
        let mut spec = CorpusSpec::new(10, BlockSizes::Fixed(5), s);
        spec.vocabulary = CORPUS_VOCABULARY;
        spec.min_words = 5;
        spec.max_words = 5;
        let blocks = synth_corpus(&spec).unwrap();
        let vocab = train_wordpiece(words_of(&blocks), 200, Casing::Uncased).unwrap();
        let (pairs, _) = corpus_nsp_pairs(&blocks, s, 1.0);
        let examples = build_examples(&pairs, &vocab, &MaskPolicy::default(), 48, s, 3);
        let init = init_model::<f32>(&ModelConfig::tiny(vocab.len()), s).unwrap();
        let (_, initial_nsp) = mean_losses(&init, &examples);
        let phase = TrainPhase {
            warmup_steps: 10,
            ..TrainPhase::new(48, 64, 300, 5e-3)
        };
        let out = train(&[PhaseData { phase: &phase, examples: &examples }], Checkpoint::new(init), &TrainOptions::new(s))
            .unwrap();
        let (mlm, nsp) = mean_losses(&out.state.params, &examples);
        Pretrained {
            words: Language::new(CORPUS_VOCABULARY, s).words,
            vocab,
            params: out.state.params,
            initial_nsp,
            mlm,
            nsp,
        }
    })
}

fn c6_learning_signal() -> Outcome {
    let p = pretrained();
    let ln2 = std::f64::consts::LN_2;
    let mlm_bound = 0.5 * (p.vocab.len() as f64).ln();
    ensure!((p.initial_nsp - ln2).abs() <= 0.05, "initial NSP {:.4}", p.initial_nsp);
    ensure!(p.mlm < mlm_bound, "MLM {:.4} ≥ {mlm_bound:.4}", p.mlm);
    ensure!(p.nsp < 0.6, "NSP {:.4}", p.nsp);
    Ok(format!(
        "NSP {:.4} → {:.4}, MLM {:.4} < {mlm_bound:.4} (vocab {})",
        p.initial_nsp,
        p.nsp,
        p.mlm,
        p.vocab.len()
    ))
}

fn small_pretraining(max_len: usize, seed: u64) -> (ModelConfig, Vec<PretrainExample>) {
    let blocks = synth_corpus(&CorpusSpec::new(6, BlockSizes::Uniform { min: 2, max: 5 }, seed)).unwrap();
    let vocab = train_wordpiece(words_of(&blocks), 90, Casing::Uncased).unwrap();
    let (pairs, _) = corpus_nsp_pairs(&blocks, seed, 1.0);
    let examples = build_examples(&pairs, &vocab, &MaskPolicy::default(), max_len, seed, 1);
    let config = ModelConfig {
        hidden_size: 16,
        embedding_size: 16,
        intermediate_size: 32,
        ..ModelConfig::tiny(vocab.len())
    };
    (config, examples)
}

fn run_with<T: Scalar>(
    config: &ModelConfig,
    examples: &[PretrainExample],
    phase: &TrainPhase,
    execution: Execution,
) -> ParameterSet<T> {
    let mut opts = TrainOptions::new(11);
    opts.execution = execution;
    let init = init_model::<T>(config, 3).unwrap();
    train(&[PhaseData { phase, examples }], Checkpoint::new(init), &opts).unwrap().state.params
}

fn flat<T: Scalar>(p: &ParameterSet<T>) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.data.iter().map(|v| v.as_f64())).collect()
}

fn c7_parallel() -> Outcome {
    let (config, examples) = small_pretraining(32, 1);
    let phase = TrainPhase::new(32, 8, 50, 1e-3);
    let serial64 = run_with::<f64>(&config, &examples, &phase, Execution::Serial { micro_batch: 0 });
    let serial32 = flat(&run_with::<f32>(&config, &examples, &phase, Execution::Serial { micro_batch: 0 }));
    let mut worst32: f64 = 0.0;
    for workers in 1..=4 {
        let exec = Execution::Parallel { workers, failure: None };
        let p64 = run_with::<f64>(&config, &examples, &phase, exec.clone());
        ensure!(p64.to_le_bytes() == serial64.to_le_bytes(), "W={workers}: 64-bit parameters differ");
        let p32 = flat(&run_with::<f32>(&config, &examples, &phase, exec));
        for (a, b) in serial32.iter().zip(&p32) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            worst32 = worst32.max(if a == b { 0.0 } else { rel });
        }
    }
    ensure!(worst32 < 1e-6, "32-bit relative difference {worst32:e}");
    Ok(format!("W=1..4 × 50 steps: 64-bit bitwise, 32-bit worst relative {worst32:e}"))
}

fn c8_schedule() -> Outcome {
    for (total, warmup, base) in [(100u64, 10u64, 1e-3), (1000, 10, 5e-5), (7, 3, 0.1), (10_000, 100, 2e-4)] {
        let phase = TrainPhase {
            warmup_steps: warmup,
            ..TrainPhase::new(32, 4, total, base)
        };
        let lr = |s| lr_schedule(s, &phase).unwrap();
        ensure!(lr(0) == 0.0, "lr(0) = {}", lr(0));
        ensure!(lr(warmup) == base, "lr({warmup}) = {} ≠ {base}", lr(warmup));
        ensure!(lr(total) == 0.0, "lr({total}) = {}", lr(total));
    }
    let (config, short) = small_pretraining(24, 4);
    let (_, long) = small_pretraining(40, 4);
    let p1 = TrainPhase::new(24, 5, 9, 2e-3);
    let p2 = TrainPhase::new(40, 3, 6, 1e-3);
    let phases = [PhaseData { phase: &p1, examples: &short }, PhaseData { phase: &p2, examples: &long }];
    let init = init_model::<f32>(&config, 8).unwrap();
    let opts = TrainOptions::new(5);
    let full = train(&phases, Checkpoint::new(init.clone()), &opts).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stops = [3u64, 9, 13];
    for stop in stops {
        let ckpt_dir = dir.path().join(format!("stop{stop}"));
        let mut first = opts.clone();
        first.stop_after = Some(stop);
        first.checkpoint_dir = Some(ckpt_dir.clone());
        train(&phases, Checkpoint::new(init.clone()), &first).map_err(|e| e.to_string())?;
        let saved = Checkpoint::<f32>::load(&ckpt_dir.join("interrupted.ckpt"), Some(&config)).map_err(|e| e.to_string())?;
        let rest = train(&phases, saved, &opts).map_err(|e| e.to_string())?;
        ensure!(
            rest.state.params.to_le_bytes() == full.state.params.to_le_bytes(),
            "resume after step {stop} differs"
        );
        ensure!(rest.state.optimizer == full.state.optimizer, "optimizer state after step {stop} differs");
    }
    Ok(format!("schedule endpoints exact; resume at steps {stops:?} bitwise"))
}

fn c9_srl() -> Outcome {
    let words = pseudo_words(40, 2);
    let vocab = train_wordpiece(words.iter().map(String::as_str), 220, Casing::Uncased).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        hidden_size: 16,
        embedding_size: 16,
        intermediate_size: 32,
        ..ModelConfig::tiny(vocab.len())
    };
    let params = init_model::<f64>(&config, 4).unwrap();
    let e = config.embedding_size;
    let delta: Vec<f64> = params.segment_emb.row(1).iter().zip(params.segment_emb.row(0)).map(|(a, b)| a - b).collect();
    let mut rng = seed::rng(31);
    let mut appended_total = 0;
    for case in 0..100 {
        let n = rng.gen_range(2..=12);
        let sentence: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
        let start = rng.gen_range(0..n);
        let end = rng.gen_range(start + 1..=n.min(start + 3));
        let ex = encode_srl(&sentence, start..end, None, &vocab, 64).map_err(|e| e.to_string())?;
        let f = &ex.features;
        // where the predicate's subwords sit inside the sentence
        let pieces: Vec<Vec<u32>> = sentence.iter().map(|w| encode_word(&vocab, w)).collect();
        let first = 1 + pieces[..start].iter().map(Vec::len).sum::<usize>();
        let sentence_len: usize = pieces.iter().map(Vec::len).sum();
        let pred: Vec<u32> = pieces[start..end].concat();
        let base = sentence_len + 2;
        ensure!(f.input_ids[base - 1] == vocab.sep_id(), "case {case}: no [SEP] after the sentence");
        ensure!(f.input_ids[base + pred.len()] == vocab.sep_id(), "case {case}: no closing [SEP]");
        let sums = embedding_sum(&params, f);
        let mut swapped = f.clone();
        for k in 0..pred.len() {
            swapped.segment_ids[first + k] = 1;
        }
        let swapped_sums = embedding_sum(&params, &swapped);
        for k in 0..pred.len() {
            let (i, src) = (base + k, first + k);
            appended_total += 1;
            ensure!(f.input_ids[i] == pred[k], "case {case}: appended id");
            ensure!(f.position_ids[i] as usize == f.position_ids[src] as usize, "case {case}: position id at {i}");
            ensure!(f.segment_ids[i] == 1, "case {case}: segment id at {i}");
            ensure!(sums[i * e..(i + 1) * e] == swapped_sums[src * e..(src + 1) * e], "case {case}: embedding at {i}");
            for d in 0..e {
                let diff = sums[i * e + d] - sums[src * e + d];
                ensure!((diff - delta[d]).abs() <= 1e-12, "case {case}: delta {diff} vs {}", delta[d]);
            }
        }
    }
    Ok(format!("100 sentences, {appended_total} appended subwords, all positions/segments/embeddings match"))
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// 1-based ranks, ties sharing the mean of their positions.
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn c10_metrics() -> Outcome {
    let mut rng = seed::rng(10);
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.gen_range(2..=12);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 4.0).collect();
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = common::pairwise_auroc(&scores, &labels);
        ensure!(got == want, "auroc {got} vs pairwise {want} on {scores:?} {labels:?}");
        instances += 1;
    }
    let cases = common::golden_cases();
    ensure!(cases.len() == 20, "{} golden cases", cases.len());
    for case in &cases {
        let pairs: Vec<TagSequencePair> = case.gold.iter().zip(&case.pred).map(|(g, p)| TagSequencePair::new(g, p)).collect();
        let s: F1Score = match case.kind.as_str() {
            "entity" => entity_f1(&pairs),
            "token" => token_f1(&pairs),
            _ => multilabel_f1(&common::label_sets(&case.pred), &common::label_sets(&case.gold)),
        }
        .map_err(|e| e.to_string())?;
        ensure!((s.tp, s.fp, s.fn_) == case.counts, "golden line {}: {:?} vs {:?}", case.line, (s.tp, s.fp, s.fn_), case.counts);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(3..=30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-40..40) as f64 / 8.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-40..40) as f64 / 8.0).collect();
        let (Ok(p), Ok(s)) = (pearson(&x, &y), spearman(&x, &y)) else { continue };
        worst = worst
            .max((p - oracle_pearson(&x, &y)).abs())
            .max((s - oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))).abs());
    }
    ensure!(worst <= 1e-10, "correlation differs by {worst:e}");
    let mut worst_ci: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(2..=20);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = confidence_interval("m", &v).map_err(|e| e.to_string())?;
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
        let half = 1.96 * sd / (n as f64).sqrt();
        worst_ci = worst_ci.max((r.value - mean).abs()).max((r.half_width.unwrap_or(f64::NAN) - half).abs());
    }
    ensure!(worst_ci <= 1e-12, "interval differs by {worst_ci:e}");
    Ok(format!(
        "1000 auroc exact, 20 golden cases, correlation error {worst:.1e}, interval error {worst_ci:.1e}"
    ))
}

fn split<T: Clone>(items: &[T], train: usize) -> (Vec<T>, Vec<T>) {
    (items[..train].to_vec(), items[train..].to_vec())
}

/// Fine-tuning at desk scale needs a far larger step than full-size models.
fn desk_hyper(lr: f64, epochs: usize, batch: usize) -> FinetuneHyper {
    FinetuneHyper {
        lr,
        epochs,
        batch,
        ..FinetuneHyper::new(PRETRAIN_SEED)
    }
}

fn c11_finetune() -> Outcome {
    let p = pretrained();
    let docs = sentiment_set(&p.words, 200, 11);
    let kind = TaskKind::preset("sentiment", vec!["neg".into(), "pos".into()]).map_err(|e| e.to_string())?;
    let encode = |d: &bertdesk::tasks::DocumentRecord| {
        encode_document(&d.text, &p.vocab, 16, Target::Class(kind.label_id(&d.labels[0]).unwrap())).unwrap()
    };
    let examples: Vec<TaskExample> = docs.iter().map(encode).collect();
    let (train_set, dev_set) = split(&examples, 160);
    let out = finetune(p.params.clone(), kind, &train_set, &dev_set, &desk_hyper(3e-3, 5, 16)).map_err(|e| e.to_string())?;
    let curve: Vec<f64> = out.epochs.iter().filter_map(|e| e.dev_metric).collect();
    let best = curve.iter().cloned().fold(f64::NAN, f64::max);
    ensure!(best >= 0.95, "sentiment dev F1 by epoch {curve:.3?}");

    let sentences = tagging_set(&p.words, 200, 12);
    let tags: Vec<String> = TAGGING_TAGS.iter().map(|t| t.to_string()).collect();
    let kind = TaskKind::preset("pos", tags).map_err(|e| e.to_string())?;
    let mut tagged = Vec::new();
    for s in &sentences[..160] {
        let ids: Vec<u32> = s.tags.iter().map(|t| kind.label_id(t).unwrap()).collect();
        tagged.extend(encode_token_task(&s.words, Some(&ids), &p.vocab, 16).map_err(|e| e.to_string())?);
    }
    let tagger = finetune(p.params.clone(), kind, &tagged, &[], &desk_hyper(2e-3, 5, 8)).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for s in &sentences[160..] {
        let pred = predict_words(&tagger.model, &s.words, None, &p.vocab, 16).map_err(|e| e.to_string())?;
        pairs.push(TagSequencePair::new(&s.tags, &pred));
    }
    let f1 = token_f1(&pairs).map_err(|e| e.to_string())?.f1;
    ensure!(f1 >= 0.99, "tagging token F1 {f1:.4}");
    Ok(format!("sentiment dev F1 {best:.3} (by epoch {curve:.3?}), tagging token F1 {f1:.4}"))
}

fn c12_pipeline() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let report = support::run_pipeline(a.path())?;
    support::run_pipeline(b.path())?;
    let (sa, sb) = (support::snapshot(a.path()), support::snapshot(b.path()));
    ensure!(
        sa.keys().collect::<BTreeSet<_>>() == sb.keys().collect::<BTreeSet<_>>(),
        "runs produced different file sets"
    );
    for (name, bytes) in &sa {
        ensure!(bytes == &sb[name], "{name} differs between runs");
    }
    Ok(format!("{} artifacts byte-identical; {}", sa.len(), report.lines().next().unwrap_or("")))
}

type Criterion = (u32, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 12] = [
        (1, Duration::from_secs(10), c1_pair_count),
        (2, Duration::from_secs(10), c2_hard_negatives),
        (3, Duration::from_secs(30), c3_mlm_ratios),
        (4, Duration::from_secs(1), c4_param_counts),
        (5, minutes(5), c5_gradients),
        (6, minutes(5), c6_learning_signal),
        (7, minutes(5), c7_parallel),
        (8, minutes(5), c8_schedule),
        (9, minutes(1), c9_srl),
        (10, minutes(1), c10_metrics),
        (11, minutes(10), c11_finetune),
        (12, minutes(15), c12_pipeline),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {budget:?} budget")),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {n}: PASS {detail} ({took:.1?})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {detail} ({took:.1?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
