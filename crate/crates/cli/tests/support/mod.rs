#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_bertdesk");
pub const TINY_CONFIG: &str = include_str!("../../configs/tiny.cfg");

pub fn bertdesk(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

/// Runs a step and fails with its stderr unless it exits 0.
pub fn step(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = bertdesk(dir, args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`bertdesk {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// The documented synthetic pipeline: corpus, vocabulary, two example
/// files, two-phase pretraining, fine-tuning, prediction and evaluation.
/// Returns the evaluation report.
pub fn run_pipeline(dir: &Path) -> Result<String, String> {
    std::fs::write(dir.join("tiny.cfg"), TINY_CONFIG).map_err(|e| e.to_string())?;
    let steps: &[&[&str]] = &[
        &["synth", "--blocks", "20", "--block-size", "5", "--vocabulary", "30", "--min-words", "5", "--max-words", "5", "--seed", "7", "--output", "corpus.txt"],
        &["corpus", "stats", "--input", "corpus.txt", "--json"],
        &["tokenizer", "train", "--input", "corpus.txt", "--vocab-size", "200", "--output", "vocab.txt"],
        &["pretrain-data", "build", "--input", "corpus.txt", "--vocab", "vocab.txt", "--max-len", "32", "--dupe-factor", "2", "--seed", "7", "--output", "phase1.bin"],
        &["pretrain-data", "build", "--input", "corpus.txt", "--vocab", "vocab.txt", "--max-len", "48", "--seed", "8", "--output", "phase2.bin"],
        &["pretrain", "--config", "tiny.cfg", "--examples", "phase1.bin,phase2.bin", "--vocab", "vocab.txt", "--out", "ckpt"],
        &["synth", "--task", "pos", "--vocabulary", "30", "--count", "120", "--dev-count", "40", "--dev-output", "dev.conll", "--seed", "7", "--output", "train.conll"],
        &["finetune", "--task", "pos", "--train", "train.conll", "--dev", "dev.conll", "--checkpoint", "ckpt/final.ckpt", "--vocab", "vocab.txt", "--lr", "2e-3", "--epochs", "3", "--batch", "8", "--max-len", "32", "--seed", "7", "--output", "pos.model"],
        &["predict", "--model", "pos.model", "--vocab", "vocab.txt", "--input", "dev.conll", "--max-len", "32", "--output", "pred.conll"],
        &["evaluate", "--task", "pos", "--gold", "dev.conll", "--pred", "pred.conll", "--output", "report.txt"],
    ];
    for args in steps {
        step(dir, args)?;
    }
    std::fs::read_to_string(dir.join("report.txt")).map_err(|e| e.to_string())
}

/// Every file under `dir` by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
