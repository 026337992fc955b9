use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use bertdesk::checkpoint::Checkpoint;
use bertdesk::corpus::{corpus_stats, ingest, CorpusFormat, TextBlock};
use bertdesk::encoder::init_model;
use bertdesk::metrics::{
    confidence_interval, entity_f1, multilabel_auroc, multilabel_f1, pearson, spearman, token_f1, F1Score,
    TagSequencePair,
};
use bertdesk::pretrain_data::{build_examples, corpus_nsp_pairs, debug_dump, read_examples, write_examples, MaskPolicy};
use bertdesk::synth::{self, BlockSizes, CorpusSpec, Language};
use bertdesk::tasks::{finetune, FinetuneHyper, TaskKind, TaskModel};
use bertdesk::tokenizer::{encode, train_wordpiece, Casing, Vocabulary};
use bertdesk::trainer::{loss_log_csv, train, PhaseData, TrainConfig, TrainOptions};
use bertdesk::seed;
use serde_json::{json, Map, Value};

use crate::args::*;
use crate::taskio::{self, family_of, Dataset};

/// Runs one subcommand; returns extra resolved settings to echo.
pub fn execute(command: Command) -> Result<String> {
    let done = match command {
        Command::Tokenizer(TokenizerCommand::Train(a)) => tokenizer_train(&a),
        Command::Tokenizer(TokenizerCommand::Encode(a)) => tokenizer_encode(&a),
        Command::Corpus(CorpusCommand::Stats(a)) => corpus_stats_cmd(&a),
        Command::PretrainData(PretrainDataCommand::Build(a)) => pretrain_data(&a),
        Command::Pretrain(a) => return pretrain(&a),
        Command::Finetune(a) => finetune_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Predict(a) => predict(&a),
        Command::Synth(a) => synth_cmd(&a),
    };
    done.map(|()| String::new())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_blocks(path: &Path, format: FormatArg) -> Result<Vec<TextBlock>> {
    let blocks = ingest(path, CorpusFormat::from(format))?
        .collect::<bertdesk::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(blocks)
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path, None).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn tokenizer_train(a: &TokenizerTrainArgs) -> Result<()> {
    let blocks = read_blocks(&a.input, a.format)?;
    let casing = match a.casing {
        CasingArg::Cased => Casing::Cased,
        CasingArg::Uncased => Casing::Uncased,
    };
    let vocab = train_wordpiece(blocks.iter().flat_map(|b| b.sentences.iter()), a.vocab_size, casing)?;
    vocab.save(&a.output)?;
    eprintln!("vocabulary: {} tokens ({casing}) -> {}", vocab.len(), a.output.display());
    Ok(())
}

fn tokenizer_encode(a: &TokenizerEncodeArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (n, line) in std::io::stdin().lock().lines().enumerate() {
        let line = line.with_context(|| format!("reading stdin line {}", n + 1))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let enc = encode(&vocab, &line);
        if a.show_alignment {
            for (id, &w) in enc.ids.iter().zip(&enc.word_index) {
                writeln!(out, "{}\t{}\t{}", vocab.token(*id).unwrap_or("[UNK]"), w, words[w])?;
            }
            writeln!(out)?;
        } else {
            let ids: Vec<String> = enc.ids.iter().map(u32::to_string).collect();
            writeln!(out, "{}", ids.join(" "))?;
        }
    }
    Ok(())
}

fn corpus_stats_cmd(a: &CorpusStatsArgs) -> Result<()> {
    let blocks = read_blocks(&a.input, a.format)?;
    let stats = corpus_stats(&blocks);
    if a.json {
        let v = json!({
            "blocks": stats.blocks,
            "sentences": stats.sentences,
            "nonempty_blocks": stats.nonempty_blocks,
            "avg_sentences_per_block": stats.avg_sentences_per_block(),
            "unpairable_fraction": stats.unpairable_fraction(),
            "nsp_pairs": stats.nsp_pairs(),
            "empty_corpus": stats.is_empty(),
        });
        println!("{v}");
    } else {
        print!("{stats}");
    }
    Ok(())
}

fn pretrain_data(a: &PretrainDataArgs) -> Result<()> {
    ensure!(a.max_len >= 8, "--max-len must be at least 8, got {}", a.max_len);
    ensure!(a.dupe_factor >= 1, "--dupe-factor must be at least 1");
    ensure!(a.negatives >= 0.0 && a.negatives.is_finite(), "--negatives must be a non-negative number");
    let blocks = read_blocks(&a.input, a.format)?;
    let vocab = load_vocab(&a.vocab)?;
    let policy = MaskPolicy {
        select_prob: a.mask_prob,
        ..MaskPolicy::default()
    };
    policy.validate()?;
    let (pairs, dropped) = corpus_nsp_pairs(&blocks, a.seed, a.negatives);
    ensure!(!pairs.is_empty(), "{} has no block with two or more sentences", a.input.display());
    let examples = build_examples(&pairs, &vocab, &policy, a.max_len, seed::derive(a.seed, &[1]), a.dupe_factor);
    let mut bytes = Vec::new();
    write_examples(&mut bytes, &examples, a.max_len, &policy)?;
    write_file(&a.output, bytes)?;
    if let Some(dump) = &a.dump {
        write_file(dump, debug_dump(&examples, &vocab))?;
    }
    let positives = pairs.iter().filter(|p| p.is_next).count();
    eprintln!(
        "pairs: {} ({positives} positive), dropped negatives: {dropped}, examples: {}",
        pairs.len(),
        examples.len()
    );
    Ok(())
}

/// Returns the fully resolved training config.
fn pretrain(a: &PretrainArgs) -> Result<String> {
    let vocab = load_vocab(&a.vocab)?;
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = TrainConfig::parse(&text, vocab.len()).with_context(|| format!("config {}", a.config.display()))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        ensure!(w >= 1, "--workers must be at least 1");
        cfg.workers = w;
    }
    ensure!(!cfg.phases.is_empty(), "config defines no phases");
    ensure!(
        a.examples.len() == cfg.phases.len(),
        "{} example files for {} phases",
        a.examples.len(),
        cfg.phases.len()
    );
    let mut data = Vec::new();
    for (i, (path, phase)) in a.examples.iter().zip(&cfg.phases).enumerate() {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (header, examples) = read_examples(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        ensure!(
            header.max_len == phase.max_len,
            "phase {} has max_len {} but {} was built with {}",
            i + 1,
            phase.max_len,
            path.display(),
            header.max_len
        );
        data.push(examples);
    }
    let phases: Vec<PhaseData> = cfg
        .phases
        .iter()
        .zip(&data)
        .map(|(phase, examples)| PhaseData { phase, examples })
        .collect();
    let start = match &a.resume {
        Some(p) => Checkpoint::<f32>::load(p, Some(&cfg.model))?,
        None => Checkpoint::new(init_model(&cfg.model, cfg.seed)?),
    };
    let options = TrainOptions {
        seed: cfg.seed,
        log_every: cfg.log_every,
        execution: cfg.execution(),
        checkpoint_dir: Some(a.out.clone()),
        checkpoint_every: cfg.checkpoint_every,
        stop_after: a.stop_after,
    };
    let outcome = train(&phases, start, &options)?;
    write_file(&a.out.join("loss.csv"), loss_log_csv(&outcome.log))?;
    let transcript: String = outcome.transcript.iter().map(|r| format!("{r}\n")).collect();
    write_file(&a.out.join("transcript.txt"), transcript)?;
    if outcome.finished {
        outcome.state.save(&a.out.join("final.ckpt"))?;
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "step {} lr {:e} mlm {:.4} nsp {:.4} total {:.4}",
            last.step, last.lr, last.loss.mlm, last.loss.nsp, last.loss.total
        );
    }
    Ok(cfg.to_text())
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let family = family_of(a.task);
    let train_set = taskio::read_dataset(family, &a.train)?;
    let dev_set = a.dev.as_ref().map(|d| taskio::read_dataset(family, d)).transpose()?;
    let mut labels = train_set.labels();
    if let Some(d) = &dev_set {
        labels.extend(d.labels());
    }
    let kind = TaskKind::preset(a.task.name(), labels.into_iter().collect())?;
    let vocab = load_vocab(&a.vocab)?;
    let ck = Checkpoint::<f32>::load(&a.checkpoint, None)?;
    ensure!(
        a.max_len <= ck.params.config.max_positions,
        "--max-len {} exceeds the model's {} positions",
        a.max_len,
        ck.params.config.max_positions
    );
    ensure!(
        ck.params.config.vocab_size == vocab.len(),
        "checkpoint vocabulary size {} does not match {} ({} tokens)",
        ck.params.config.vocab_size,
        a.vocab.display(),
        vocab.len()
    );
    let train_ex = train_set.encode(&kind, &vocab, a.max_len).context("training set")?;
    let dev_ex = match &dev_set {
        Some(d) => d.encode(&kind, &vocab, a.max_len).context("dev set")?,
        None => Vec::new(),
    };
    let hyper = FinetuneHyper {
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        warmup: a.warmup,
        dropout: a.dropout,
        seed: a.seed,
    };
    let outcome = finetune(ck.params, kind, &train_ex, &dev_ex, &hyper)?;
    outcome.model.save(&a.output)?;
    let mut log = String::from("epoch,train_loss,dev_metric\n");
    for e in &outcome.epochs {
        let dev = e.dev_metric.map_or_else(String::new, |m| format!("{m:.6}"));
        let _ = writeln!(log, "{},{:.6},{dev}", e.epoch, e.train_loss);
    }
    write_file(&suffixed(&a.output, ".epochs.csv"), log)?;
    let best = &outcome.epochs[outcome.best_epoch - 1];
    match best.dev_metric {
        Some(m) => println!("best epoch {} {} {m:.6}", best.epoch, outcome.model.kind.metric),
        None => println!("final epoch {} train loss {:.6}", best.epoch, best.train_loss),
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = TaskModel::<f32>::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let vocab = load_vocab(&a.vocab)?;
    let data = taskio::read_dataset(model.kind.family, &a.input)?;
    let (out, scores) = taskio::predict_dataset(&model, &data, &vocab, a.max_len)?;
    write_file(&a.output, out.write())?;
    if let Some(s) = scores {
        write_file(&suffixed(&a.output, ".scores"), s)?;
    }
    eprintln!("predicted {} items -> {}", out.len(), a.output.display());
    Ok(())
}

fn metric_name(task: TaskArg) -> &'static str {
    match task {
        TaskArg::Ner | TaskArg::Srl => "entity-f1",
        TaskArg::Pos => "token-f1",
        TaskArg::Sentiment => "micro-f1",
        TaskArg::Mlc => "multilabel-f1",
        TaskArg::Sts => "pearson",
    }
}

fn f1_details(f: &F1Score) -> Vec<(&'static str, Value)> {
    vec![
        ("precision", json!(f.precision)),
        ("recall", json!(f.recall)),
        ("tp", json!(f.tp)),
        ("fp", json!(f.fp)),
        ("fn", json!(f.fn_)),
    ]
}

fn tag_pairs<'a>(gold: impl Iterator<Item = &'a [String]>, pred: impl Iterator<Item = &'a [String]>) -> Vec<TagSequencePair> {
    gold.zip(pred).map(|(g, p)| TagSequencePair::new(g, p)).collect()
}

/// One run's metric value and its supporting numbers.
fn score_run(task: TaskArg, gold: &Dataset, pred: &Dataset, scores: Option<&Path>) -> Result<(f64, Vec<(&'static str, Value)>)> {
    ensure!(
        gold.len() == pred.len(),
        "gold has {} items, prediction has {}",
        gold.len(),
        pred.len()
    );
    let f1 = |pairs: Vec<TagSequencePair>| -> Result<(f64, Vec<(&'static str, Value)>)> {
        let f = if task == TaskArg::Pos { token_f1(&pairs)? } else { entity_f1(&pairs)? };
        Ok((f.f1, f1_details(&f)))
    };
    match (gold, pred) {
        (Dataset::Tagged(g), Dataset::Tagged(p)) => f1(tag_pairs(
            g.iter().map(|s| s.tags.as_slice()),
            p.iter().map(|s| s.tags.as_slice()),
        )),
        (Dataset::Srl(g), Dataset::Srl(p)) => f1(tag_pairs(
            g.iter().map(|s| s.tags.as_slice()),
            p.iter().map(|s| s.tags.as_slice()),
        )),
        (Dataset::Pairs(g), Dataset::Pairs(p)) => {
            let num = |v: &str, i: usize| v.parse::<f64>().map_err(|_| anyhow!("item {}: '{v}' is not a number", i + 1));
            let gv = g.iter().enumerate().map(|(i, r)| num(&r.target, i)).collect::<Result<Vec<_>>>()?;
            let pv = p.iter().enumerate().map(|(i, r)| num(&r.target, i)).collect::<Result<Vec<_>>>()?;
            let r = pearson(&pv, &gv)?;
            Ok((r, vec![("spearman", json!(spearman(&pv, &gv)?))]))
        }
        (Dataset::Documents(g), Dataset::Documents(p)) if task == TaskArg::Sentiment => {
            let correct = g.iter().zip(p).filter(|(a, b)| a.labels == b.labels).count();
            let wrong = g.len() - correct;
            let f = F1Score::from_counts(correct, wrong, wrong);
            Ok((f.f1, f1_details(&f)))
        }
        (Dataset::Documents(g), Dataset::Documents(p)) => {
            let inventory: Vec<String> = g
                .iter()
                .chain(p)
                .flat_map(|d| d.labels.iter().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let sets = |docs: &[bertdesk::tasks::DocumentRecord]| -> Vec<BTreeSet<usize>> {
                docs.iter()
                    .map(|d| d.labels.iter().map(|l| inventory.binary_search(l).unwrap()).collect())
                    .collect()
            };
            let f = multilabel_f1(&sets(p), &sets(g))?;
            let mut details = f1_details(&f);
            if let Some(path) = scores {
                let (labels, rows) = taskio::read_scores(path)?;
                let gold_sets = g
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        d.labels
                            .iter()
                            .map(|l| {
                                labels
                                    .iter()
                                    .position(|x| x == l)
                                    .ok_or_else(|| anyhow!("document {}: label '{l}' missing from {}", i + 1, path.display()))
                            })
                            .collect::<Result<BTreeSet<usize>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let au = multilabel_auroc(&rows, &gold_sets, labels.len())?;
                details.push(("macro_auroc", json!(au.macro_auroc)));
                details.push(("auroc_skipped_labels", json!(au.skipped().len())));
            }
            Ok((f.f1, details))
        }
        _ => bail!("gold and prediction files have different formats"),
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let family = family_of(a.task);
    ensure!(
        a.scores.is_empty() || a.scores.len() == a.pred.len(),
        "{} score files for {} prediction files",
        a.scores.len(),
        a.pred.len()
    );
    ensure!(a.scores.is_empty() || a.task == TaskArg::Mlc, "--scores only applies to mlc");
    let gold = taskio::read_dataset(family, &a.gold)?;
    let mut values = Vec::new();
    let mut details = Vec::new();
    for (i, path) in a.pred.iter().enumerate() {
        let pred = taskio::read_dataset(family, path)?;
        let (v, d) = score_run(a.task, &gold, &pred, a.scores.get(i).map(|p| p.as_path()))
            .with_context(|| format!("scoring {}", path.display()))?;
        values.push(v);
        details = d;
    }
    let report = confidence_interval(metric_name(a.task), &values)?;
    let text = if a.json {
        let mut m = Map::new();
        m.insert("metric".into(), json!(report.metric));
        m.insert("value".into(), json!(report.value));
        m.insert("half_width".into(), json!(report.half_width));
        m.insert("runs".into(), json!(report.runs));
        if values.len() == 1 {
            for (k, v) in details {
                m.insert(k.into(), v);
            }
        } else {
            m.insert("values".into(), json!(values));
        }
        format!("{}\n", Value::Object(m))
    } else {
        let mut s = format!("{report}\n");
        if values.len() == 1 {
            for (k, v) in details {
                let _ = writeln!(s, "{k}: {v}");
            }
        } else {
            for (i, v) in values.iter().enumerate() {
                let _ = writeln!(s, "run {}: {v:.6}", i + 1);
            }
        }
        s
    };
    match &a.output {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('-').ok_or_else(|| anyhow!("--block-range expects MIN-MAX, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| anyhow!("--block-range: bad number '{v}'"));
    let (lo, hi) = (parse(a)?, parse(b)?);
    ensure!(1 <= lo && lo <= hi, "--block-range needs 1 <= MIN <= MAX, got {lo}-{hi}");
    Ok((lo, hi))
}

fn synth_task(a: &SynthArgs, task: TaskArg) -> Result<(String, Option<String>)> {
    ensure!(a.vocabulary >= 2, "--vocabulary must be at least 2");
    ensure!(
        a.dev_output.is_some() == (a.dev_count > 0),
        "--dev-count and --dev-output must be given together"
    );
    let words = Language::new(a.vocabulary, a.seed).words;
    let total = a.count + a.dev_count;
    let data = match task {
        TaskArg::Sentiment => Dataset::Documents(synth::sentiment_set(&words, total, a.seed)),
        TaskArg::Pos => Dataset::Tagged(synth::tagging_set(&words, total, a.seed)),
        TaskArg::Ner => Dataset::Tagged(synth::ner_set(&words, total, a.seed)),
        TaskArg::Srl => Dataset::Srl(synth::srl_set(&words, total, a.seed)),
        TaskArg::Sts => Dataset::Pairs(synth::sts_set(&words, total, a.seed)),
        TaskArg::Mlc => {
            ensure!(
                (1..=a.vocabulary).contains(&a.labels),
                "--labels must be between 1 and --vocabulary ({})",
                a.vocabulary
            );
            Dataset::Documents(synth::mlc_set(&words, a.labels, total, a.seed))
        }
    };
    let split = |d: &Dataset, r: std::ops::Range<usize>| match d {
        Dataset::Tagged(v) => Dataset::Tagged(v[r].to_vec()),
        Dataset::Srl(v) => Dataset::Srl(v[r].to_vec()),
        Dataset::Pairs(v) => Dataset::Pairs(v[r].to_vec()),
        Dataset::Documents(v) => Dataset::Documents(v[r].to_vec()),
    };
    let train = split(&data, 0..a.count).write();
    let dev = (a.dev_count > 0).then(|| split(&data, a.count..total).write());
    Ok((train, dev))
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let (text, dev) = match a.task {
        Some(task) => synth_task(a, task)?,
        None => {
            let sizes = match (a.avg_sentences, a.block_size, &a.block_range) {
                (Some(mean), _, _) => {
                    ensure!(mean >= 1.0 && mean.is_finite(), "--avg-sentences must be at least 1");
                    BlockSizes::Poisson { mean }
                }
                (_, Some(n), _) => {
                    ensure!(n >= 1, "--block-size must be at least 1");
                    BlockSizes::Fixed(n)
                }
                (_, _, Some(r)) => {
                    let (min, max) = parse_range(r)?;
                    BlockSizes::Uniform { min, max }
                }
                _ => BlockSizes::Poisson { mean: 5.61 },
            };
            let spec = CorpusSpec {
                mixture: a.mixture,
                vocabulary: a.vocabulary,
                min_words: a.min_words,
                max_words: a.max_words,
                ..CorpusSpec::new(a.blocks, sizes, a.seed)
            };
            (synth::corpus_text(&synth::synth_corpus(&spec)?), None)
        }
    };
    match &a.output {
        Some(p) => write_file(p, text)?,
        None => print!("{text}"),
    }
    if let (Some(p), Some(d)) = (&a.dev_output, dev) {
        write_file(p, d)?;
    }
    Ok(())
}
