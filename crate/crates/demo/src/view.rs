//! The demo's operations as plain functions, so they run natively too.

use bertdesk::corpus::split_sentences;
use bertdesk::pretrain_data::{apply_mlm_mask, MaskAction, MaskPolicy};
use bertdesk::seed;
use bertdesk::tokenizer::{encode, train_wordpiece, Casing, Vocabulary};
use bertdesk::trainer::{lr_schedule, TrainPhase};
use bertdesk::Result;

/// Trains a vocabulary on every sentence of `corpus`.
pub fn train(corpus: &str, vocab_size: usize, cased: bool) -> Result<Vocabulary> {
    let casing = if cased { Casing::Cased } else { Casing::Uncased };
    let sentences: Vec<String> = corpus.lines().flat_map(split_sentences).collect();
    train_wordpiece(sentences.iter().map(String::as_str), vocab_size, casing)
}

fn token(vocab: &Vocabulary, id: u32) -> &str {
    vocab.token(id).unwrap_or("[UNK]")
}

/// One `token<TAB>word index<TAB>word` row per subword.
pub fn alignment(vocab: &Vocabulary, text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let enc = encode(vocab, text);
    enc.ids
        .iter()
        .zip(&enc.word_index)
        .map(|(&id, &w)| format!("{}\t{w}\t{}\n", token(vocab, id), words[w]))
        .collect()
}

/// One `original<TAB>shown<TAB>action` row per subword; action is empty for
/// positions that were not selected.
pub fn masking(vocab: &Vocabulary, text: &str, seed: u64, select_prob: f64) -> Result<String> {
    let policy = MaskPolicy {
        select_prob,
        ..MaskPolicy::default()
    };
    policy.validate()?;
    let ids = encode(vocab, text).ids;
    let out = apply_mlm_mask(&ids, &vec![true; ids.len()], &policy, vocab, &mut seed::rng(seed));
    let mut rows = String::new();
    for (i, (&orig, &shown)) in ids.iter().zip(&out.ids).enumerate() {
        let action = match out.positions.binary_search(&i) {
            Ok(k) => match out.actions[k] {
                MaskAction::Masked => "mask",
                MaskAction::Randomized => "random",
                MaskAction::Kept => "keep",
            },
            Err(_) => "",
        };
        rows.push_str(&format!("{}\t{}\t{action}\n", token(vocab, orig), token(vocab, shown)));
    }
    Ok(rows)
}

/// Learning rate before each update `0..=total`.
pub fn lr_curve(total: u64, warmup: u64, base_lr: f64) -> Result<Vec<f64>> {
    let phase = TrainPhase {
        warmup_steps: warmup,
        ..TrainPhase::new(128, 1, total, base_lr)
    };
    phase.validate()?;
    (0..=total).map(|s| lr_schedule(s, &phase)).collect()
}
