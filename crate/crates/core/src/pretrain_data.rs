//! Next-sentence pairs with same-paragraph hard negatives, masked-LM
//! corruption, and fixed-length pretraining examples.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng as _;

use crate::corpus::TextBlock;
use crate::encoder::Features;
use crate::seed::{self, Rng};
use crate::tokenizer::{encode, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub is_next: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            select_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        let sum = self.mask_frac + self.random_frac + self.keep_frac;
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if (sum - 1.0).abs() > 1e-6 || fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "mask fractions must be in [0,1] and sum to 1 (got {sum})"
            )));
        }
        if !(self.select_prob > 0.0 && self.select_prob < 1.0) {
            return Err(Error::Config(format!(
                "select_prob must be in (0,1), got {}",
                self.select_prob
            )));
        }
        Ok(())
    }
}

/// Bounded uniform sample of sentences from blocks seen so far, used for
/// negatives of two-sentence blocks, which have no valid in-block candidate.
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    items: Vec<(u64, String)>,
    pending: Vec<(u64, String)>,
    rng: Rng,
}

impl Reservoir {
    pub const DEFAULT_CAPACITY: usize = 10_000;

    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            seen: 0,
            items: Vec::new(),
            pending: Vec::new(),
            rng: seed::rng(seed),
        }
    }

    /// Adds a block's sentences with reservoir sampling.
    pub fn observe(&mut self, block: &TextBlock) {
        for s in &block.sentences {
            self.seen += 1;
            if self.items.len() < self.capacity {
                self.items.push((block.id, s.clone()));
            } else {
                let j = self.rng.gen_range(0..self.seen);
                if (j as usize) < self.capacity {
                    self.items[j as usize] = (block.id, s.clone());
                }
            }
        }
    }

    /// Uniform draw among stored sentences from blocks other than `block_id`.
    pub fn draw(&mut self, block_id: u64) -> Option<String> {
        let n = self.items.iter().filter(|(b, _)| *b != block_id).count();
        if n == 0 {
            return None;
        }
        let k = self.rng.gen_range(0..n);
        self.items
            .iter()
            .filter(|(b, _)| *b != block_id)
            .nth(k)
            .map(|(_, s)| s.clone())
    }

    /// Negatives still waiting for a sentence from another block.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn resolve_pending(&mut self) -> Vec<SentencePair> {
        let mut out = Vec::new();
        let mut still = Vec::new();
        for (block_id, a) in std::mem::take(&mut self.pending) {
            match self.draw(block_id) {
                Some(b) => out.push(SentencePair {
                    sentence_a: a,
                    sentence_b: b,
                    is_next: false,
                }),
                None => still.push((block_id, a)),
            }
        }
        self.pending = still;
        out
    }
}

/// Pairs for one block: a positive for each consecutive pair, and per the
/// ratio negatives whose B comes from the same block but is neither A nor the
/// true next sentence. Blocks of two sentences fall back to the reservoir; a
/// fallback that cannot be served yet is queued inside the reservoir and
/// returned by a later call or by [`finish_nsp_pairs`].
pub fn generate_nsp_pairs(
    block: &TextBlock,
    rng: &mut Rng,
    negatives_per_positive: f64,
    reservoir: &mut Reservoir,
) -> Vec<SentencePair> {
    let k = block.sentences.len();
    let mut out = Vec::new();
    let whole = negatives_per_positive.max(0.0).floor() as usize;
    let frac = negatives_per_positive.max(0.0) - whole as f64;
    for i in 0..k.saturating_sub(1) {
        let a = &block.sentences[i];
        out.push(SentencePair {
            sentence_a: a.clone(),
            sentence_b: block.sentences[i + 1].clone(),
            is_next: true,
        });
        let negatives = whole + usize::from(frac > 0.0 && rng.gen_bool(frac));
        for _ in 0..negatives {
            if k >= 3 {
                // candidates: every index except i and i + 1
                let mut j = rng.gen_range(0..k - 2);
                if j >= i {
                    j += 2;
                }
                out.push(SentencePair {
                    sentence_a: a.clone(),
                    sentence_b: block.sentences[j].clone(),
                    is_next: false,
                });
            } else {
                match reservoir.draw(block.id) {
                    Some(b) => out.push(SentencePair {
                        sentence_a: a.clone(),
                        sentence_b: b,
                        is_next: false,
                    }),
                    None => reservoir.pending.push((block.id, a.clone())),
                }
            }
        }
    }
    reservoir.observe(block);
    out.extend(reservoir.resolve_pending());
    out
}

/// Flushes fallbacks still queued. Returns the resolved pairs and the number
/// that could not be formed (only when every sentence shares one block).
pub fn finish_nsp_pairs(reservoir: &mut Reservoir) -> (Vec<SentencePair>, usize) {
    let pairs = reservoir.resolve_pending();
    let dropped = reservoir.pending.len();
    reservoir.pending.clear();
    (pairs, dropped)
}

/// Pairs for a whole corpus; each block's generator is seeded from
/// `(seed, block id)`.
pub fn corpus_nsp_pairs<'a, I>(blocks: I, seed: u64, negatives_per_positive: f64) -> (Vec<SentencePair>, usize)
where
    I: IntoIterator<Item = &'a TextBlock>,
{
    let mut reservoir = Reservoir::new(Reservoir::DEFAULT_CAPACITY, seed::derive(seed, &[u64::MAX]));
    let mut pairs = Vec::new();
    for b in blocks {
        let mut rng = seed::rng_at(seed, &[b.id]);
        pairs.extend(generate_nsp_pairs(b, &mut rng, negatives_per_positive, &mut reservoir));
    }
    let (rest, dropped) = finish_nsp_pairs(&mut reservoir);
    pairs.extend(rest);
    (pairs, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Masked,
    Randomized,
    Kept,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTokens {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub labels: Vec<u32>,
    pub actions: Vec<MaskAction>,
}

/// Number of positions selected out of `maskable` candidates.
pub fn selection_count(maskable: usize, select_prob: f64) -> usize {
    if maskable == 0 {
        0
    } else {
        ((select_prob * maskable as f64).round() as usize).clamp(1, maskable)
    }
}

/// Selects positions uniformly without replacement and corrupts them.
pub fn apply_mlm_mask(
    ids: &[u32],
    maskable: &[bool],
    policy: &MaskPolicy,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> MaskedTokens {
    assert_eq!(ids.len(), maskable.len(), "ids and maskable differ in length");
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| maskable[i]).collect();
    let n = selection_count(candidates.len(), policy.select_prob);
    let mut positions: Vec<usize> = sample(rng, candidates.len(), n)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    positions.sort_unstable();

    let regular = vocab.regular_ids();
    let mut out = ids.to_vec();
    let mut labels = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for &p in &positions {
        labels.push(ids[p]);
        let u: f64 = rng.gen();
        let action = if u < policy.mask_frac {
            out[p] = vocab.mask_id();
            MaskAction::Masked
        } else if u < policy.mask_frac + policy.random_frac {
            out[p] = regular[rng.gen_range(0..regular.len())];
            MaskAction::Randomized
        } else {
            MaskAction::Kept
        };
        actions.push(action);
    }
    MaskedTokens {
        ids: out,
        positions,
        labels,
        actions,
    }
}

/// Shortens the longer side from its end until `a + b <= budget`; on ties
/// the second side loses a token.
pub fn truncate_pair(a: &mut Vec<u32>, b: &mut Vec<u32>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() > b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainExample {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    pub mlm_positions: Vec<usize>,
    pub mlm_labels: Vec<u32>,
    /// 1 when B follows A.
    pub nsp_label: u32,
}

impl PretrainExample {
    pub fn max_len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }

    pub fn features(&self) -> Features {
        Features {
            input_ids: self.input_ids.clone(),
            segment_ids: self.segment_ids.clone(),
            position_ids: (0..self.input_ids.len() as u32).collect(),
            attention_mask: self.attention_mask.clone(),
        }
    }
}

/// `[CLS] A [SEP] B [SEP]` layout with segment ids, before masking.
pub(crate) fn pair_layout(
    vocab: &Vocabulary,
    mut a: Vec<u32>,
    mut b: Vec<u32>,
    max_len: usize,
) -> (Vec<u32>, Vec<u32>, Vec<bool>, Vec<bool>) {
    truncate_pair(&mut a, &mut b, max_len - 3);
    let mut ids = Vec::with_capacity(max_len);
    let mut seg = Vec::with_capacity(max_len);
    let mut maskable = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    ids.extend(&a);
    ids.push(vocab.sep_id());
    seg.resize(ids.len(), 0);
    ids.extend(&b);
    ids.push(vocab.sep_id());
    seg.resize(ids.len(), 1);
    maskable.extend(ids.iter().map(|&id| !vocab.is_special(id)));
    let real = ids.len();
    ids.resize(max_len, vocab.pad_id());
    seg.resize(max_len, 0);
    maskable.resize(max_len, false);
    let attention: Vec<bool> = (0..max_len).map(|i| i < real).collect();
    (ids, seg, attention, maskable)
}

pub fn build_example(
    pair: &SentencePair,
    vocab: &Vocabulary,
    policy: &MaskPolicy,
    max_len: usize,
    rng: &mut Rng,
) -> PretrainExample {
    assert!(max_len >= 8, "max_len must be at least 8");
    let a = encode(vocab, &pair.sentence_a).ids;
    let b = encode(vocab, &pair.sentence_b).ids;
    let (ids, segment_ids, attention_mask, maskable) = pair_layout(vocab, a, b, max_len);
    let masked = apply_mlm_mask(&ids, &maskable, policy, vocab, rng);
    PretrainExample {
        input_ids: masked.ids,
        segment_ids,
        attention_mask,
        mlm_positions: masked.positions,
        mlm_labels: masked.labels,
        nsp_label: u32::from(pair.is_next),
    }
}

/// Examples for every pair, `dupe_factor` times with independent masking.
/// Pair `i` of copy `d` is masked with the generator for `(seed, d, i)`.
pub fn build_examples(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    policy: &MaskPolicy,
    max_len: usize,
    seed: u64,
    dupe_factor: usize,
) -> Vec<PretrainExample> {
    let mut out = Vec::with_capacity(pairs.len() * dupe_factor);
    for d in 0..dupe_factor {
        for (i, p) in pairs.iter().enumerate() {
            let mut rng = seed::rng_at(seed, &[d as u64, i as u64]);
            out.push(build_example(p, vocab, policy, max_len, &mut rng));
        }
    }
    out
}

const MAGIC: &[u8; 4] = b"BDEX";
const VERSION: u32 = 1;

/// Header of a serialized example file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleFileHeader {
    pub max_len: usize,
    pub policy: MaskPolicy,
    pub count: usize,
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes examples: a header (magic, version, max_len, the four policy
/// ratios as f32 bits, record count) followed by records of little-endian
/// 32-bit integers: ids, segments, attention mask (each max_len long), nsp
/// label, mlm count, mlm positions, mlm labels.
pub fn write_examples<W: Write>(
    mut w: W,
    examples: &[PretrainExample],
    max_len: usize,
    policy: &MaskPolicy,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    put(&mut out, max_len as u32);
    for f in [policy.select_prob, policy.mask_frac, policy.random_frac, policy.keep_frac] {
        put(&mut out, (f as f32).to_bits());
    }
    put(&mut out, examples.len() as u32);
    for ex in examples {
        if ex.max_len() != max_len {
            return Err(Error::ExampleFormat(format!(
                "example of length {} in a file of max_len {max_len}",
                ex.max_len()
            )));
        }
        ex.input_ids.iter().for_each(|&v| put(&mut out, v));
        ex.segment_ids.iter().for_each(|&v| put(&mut out, v));
        ex.attention_mask.iter().for_each(|&v| put(&mut out, u32::from(v)));
        put(&mut out, ex.nsp_label);
        put(&mut out, ex.mlm_positions.len() as u32);
        ex.mlm_positions.iter().for_each(|&v| put(&mut out, v as u32));
        ex.mlm_labels.iter().for_each(|&v| put(&mut out, v));
    }
    w.write_all(&out)
        .map_err(|e| Error::ExampleFormat(format!("write failed: {e}")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32> {
        let bytes = self
            .buf
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::ExampleFormat(format!("truncated at byte {}", self.pos)))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn read_examples<R: Read>(mut r: R) -> Result<(ExampleFileHeader, Vec<PretrainExample>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::ExampleFormat(format!("read failed: {e}")))?;
    if buf.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::ExampleFormat("bad magic".into()));
    }
    let mut c = Cursor { buf: &buf, pos: 4 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::ExampleFormat(format!("unsupported version {version}")));
    }
    let max_len = c.u32()? as usize;
    let mut ratios = [0.0f64; 4];
    for r in &mut ratios {
        *r = f32::from_bits(c.u32()?) as f64;
    }
    let policy = MaskPolicy {
        select_prob: ratios[0],
        mask_frac: ratios[1],
        random_frac: ratios[2],
        keep_frac: ratios[3],
    };
    let count = c.u32()? as usize;
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let input_ids = c.vec(max_len)?;
        let segment_ids = c.vec(max_len)?;
        let attention_mask = c.vec(max_len)?.into_iter().map(|v| v != 0).collect();
        let nsp_label = c.u32()?;
        let n = c.u32()? as usize;
        let mlm_positions = c.vec(n)?.into_iter().map(|v| v as usize).collect();
        let mlm_labels = c.vec(n)?;
        examples.push(PretrainExample {
            input_ids,
            segment_ids,
            attention_mask,
            mlm_positions,
            mlm_labels,
            nsp_label,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::ExampleFormat(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    Ok((
        ExampleFileHeader {
            max_len,
            policy,
            count,
        },
        examples,
    ))
}

/// Human-readable rendering of examples for debugging.
pub fn debug_dump(examples: &[PretrainExample], vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let toks: Vec<&str> = ex.input_ids[..ex.real_len()]
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("<?>"))
            .collect();
        let _ = writeln!(s, "example {i} nsp={}", ex.nsp_label);
        let _ = writeln!(s, "  tokens: {}", toks.join(" "));
        let segs: Vec<String> = ex.segment_ids[..ex.real_len()].iter().map(u32::to_string).collect();
        let _ = writeln!(s, "  segments: {}", segs.join(""));
        let targets: Vec<String> = ex
            .mlm_positions
            .iter()
            .zip(&ex.mlm_labels)
            .map(|(p, &l)| format!("{p}:{}", vocab.token(l).unwrap_or("<?>")))
            .collect();
        let _ = writeln!(s, "  mlm: {}", targets.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_wordpiece, Casing, SPECIAL_TOKENS};

    fn block(id: u64, k: usize) -> TextBlock {
        TextBlock::new(id, (0..k).map(|j| format!("b{id}s{j}")).collect(), "t").unwrap()
    }

    fn toy_vocab() -> Vocabulary {
        let mut t: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        t.extend(["a", "b", "c", "##a", "##b"].map(String::from));
        Vocabulary::new(t, Casing::Cased).unwrap()
    }

    #[test]
    fn three_sentence_block_forces_the_hard_negative() {
        let b = TextBlock::new(0, vec!["s1".into(), "s2".into(), "s3".into()], "t").unwrap();
        let mut res = Reservoir::new(10, 1);
        let pairs = generate_nsp_pairs(&b, &mut seed::rng(3), 1.0, &mut res);
        let pos: Vec<(&str, &str)> = pairs
            .iter()
            .filter(|p| p.is_next)
            .map(|p| (p.sentence_a.as_str(), p.sentence_b.as_str()))
            .collect();
        assert_eq!(pos, [("s1", "s2"), ("s2", "s3")]);
        let neg: Vec<(&str, &str)> = pairs
            .iter()
            .filter(|p| !p.is_next)
            .map(|p| (p.sentence_a.as_str(), p.sentence_b.as_str()))
            .collect();
        assert_eq!(neg, [("s1", "s3"), ("s2", "s1")]);
    }

    #[test]
    fn single_sentence_block_has_no_pairs() {
        let mut res = Reservoir::new(10, 1);
        assert!(generate_nsp_pairs(&block(0, 1), &mut seed::rng(0), 1.0, &mut res).is_empty());
        assert!(generate_nsp_pairs(&block(1, 1), &mut seed::rng(0), 3.0, &mut res).is_empty());
    }

    #[test]
    fn two_sentence_block_uses_reservoir_from_other_blocks() {
        let mut res = Reservoir::new(10, 1);
        // First block has nothing to draw from yet: the negative is queued.
        let first = generate_nsp_pairs(&block(0, 2), &mut seed::rng(0), 1.0, &mut res);
        assert_eq!(first.len(), 1);
        assert_eq!(res.pending(), 1);
        let second = generate_nsp_pairs(&block(1, 1), &mut seed::rng(0), 1.0, &mut res);
        assert_eq!(second.len(), 1);
        assert_eq!(second[0].sentence_b, "b1s0");
        assert_eq!(res.pending(), 0);
    }

    #[test]
    fn lone_two_sentence_corpus_drops_its_negative() {
        let (pairs, dropped) = corpus_nsp_pairs([&block(0, 2)], 5, 1.0);
        assert_eq!(pairs.len(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn pair_count_identity_for_small_block_multisets() {
        // Every multiset of up to four blocks with sizes 1..=6.
        fn rec(sizes: &mut Vec<usize>, start: usize, out: &mut Vec<Vec<usize>>) {
            if !sizes.is_empty() {
                out.push(sizes.clone());
            }
            if sizes.len() == 4 {
                return;
            }
            for k in start..=6 {
                sizes.push(k);
                rec(sizes, k, out);
                sizes.pop();
            }
        }
        let mut all = Vec::new();
        rec(&mut Vec::new(), 1, &mut all);
        for sizes in all {
            let blocks: Vec<TextBlock> = sizes.iter().enumerate().map(|(i, &k)| block(i as u64, k)).collect();
            let sentences: usize = sizes.iter().sum();
            let consecutive: usize = sizes.iter().map(|k| k - 1).sum();
            for ratio in [1.0, 2.0] {
                let (pairs, dropped) = corpus_nsp_pairs(&blocks, 9, ratio);
                if dropped > 0 {
                    // only a corpus that is one two-sentence block
                    assert_eq!(sizes, [2]);
                    continue;
                }
                assert_eq!(pairs.len(), ((1.0 + ratio) as usize) * consecutive, "{sizes:?}");
                if ratio == 1.0 {
                    assert_eq!(pairs.len(), 2 * (sentences - blocks.len()));
                }
            }
        }
    }

    #[test]
    fn masking_small_and_empty_inputs() {
        let v = toy_vocab();
        let ids = vec![5u32; 7];
        let m = apply_mlm_mask(&ids, &[true; 7], &MaskPolicy::default(), &v, &mut seed::rng(1));
        assert_eq!(m.positions.len(), 1);
        assert_eq!(m.labels, [5]);
        let none = apply_mlm_mask(&ids, &[false; 7], &MaskPolicy::default(), &v, &mut seed::rng(1));
        assert!(none.positions.is_empty() && none.labels.is_empty());
        assert_eq!(none.ids, ids);
    }

    #[test]
    fn mask_never_touches_unmaskable_positions() {
        let v = toy_vocab();
        let ids: Vec<u32> = (0..200).map(|i| 5 + (i % 5)).collect();
        let maskable: Vec<bool> = (0..200).map(|i| i % 3 != 0).collect();
        for s in 0..20 {
            let m = apply_mlm_mask(&ids, &maskable, &MaskPolicy::default(), &v, &mut seed::rng(s));
            for (&p, &l) in m.positions.iter().zip(&m.labels) {
                assert!(maskable[p]);
                assert_eq!(l, ids[p]);
            }
            for i in 0..200 {
                if !m.positions.contains(&i) {
                    assert_eq!(m.ids[i], ids[i]);
                }
            }
        }
    }

    #[test]
    fn example_layout() {
        let v = toy_vocab();
        let pair = SentencePair {
            sentence_a: "a".into(),
            sentence_b: "b".into(),
            is_next: false,
        };
        let ex = build_example(&pair, &v, &MaskPolicy::default(), 8, &mut seed::rng(0));
        let labels: Vec<u32> = ex.input_ids.clone();
        let expect_unmasked = [v.cls_id(), v.id("a").unwrap(), v.sep_id(), v.id("b").unwrap(), v.sep_id(), 0, 0, 0];
        // restore the masked position to compare the layout
        let mut restored = labels;
        for (&p, &l) in ex.mlm_positions.iter().zip(&ex.mlm_labels) {
            restored[p] = l;
        }
        assert_eq!(restored, expect_unmasked);
        assert_eq!(ex.segment_ids, [0, 0, 0, 1, 1, 0, 0, 0]);
        assert_eq!(ex.attention_mask, [true, true, true, true, true, false, false, false]);
        assert_eq!(ex.nsp_label, 0);
        assert_eq!(ex.mlm_positions.len(), 1);
        assert!(ex.mlm_positions[0] == 1 || ex.mlm_positions[0] == 3);
    }

    #[test]
    fn longest_first_truncation_of_two_long_sentences() {
        // Simulated loop, independent of truncate_pair.
        let (mut la, mut lb) = (100usize, 100usize);
        while la + lb > 125 {
            if la > lb { la -= 1 } else { lb -= 1 }
        }
        assert_eq!((la, lb), (63, 62));

        let v = toy_vocab();
        let s = vec!["a"; 100].join(" ");
        let pair = SentencePair { sentence_a: s.clone(), sentence_b: s, is_next: true };
        let ex = build_example(&pair, &v, &MaskPolicy::default(), 128, &mut seed::rng(0));
        assert_eq!(ex.real_len(), 128);
        let ones = ex.segment_ids.iter().filter(|&&s| s == 1).count();
        assert_eq!(ones, 62 + 1);
        assert_eq!(ex.input_ids[64], v.sep_id());
        assert_eq!(ex.mlm_positions.len(), selection_count(125, 0.15));
    }

    #[test]
    fn binary_round_trip() {
        let v = train_wordpiece(["Ahoj světe. Jak se máš?"], 60, Casing::Cased).unwrap();
        let pairs = vec![
            SentencePair { sentence_a: "Ahoj světe.".into(), sentence_b: "Jak se máš?".into(), is_next: true },
            SentencePair { sentence_a: "Jak se máš?".into(), sentence_b: "Ahoj světe.".into(), is_next: false },
        ];
        let policy = MaskPolicy::default();
        let exs = build_examples(&pairs, &v, &policy, 16, 4, 2);
        let mut buf = Vec::new();
        write_examples(&mut buf, &exs, 16, &policy).unwrap();
        let (hdr, back) = read_examples(buf.as_slice()).unwrap();
        assert_eq!(hdr.max_len, 16);
        assert_eq!(hdr.count, 4);
        assert!((hdr.policy.select_prob - 0.15).abs() < 1e-7);
        assert_eq!(back, exs);
        assert!(read_examples(&buf[..buf.len() - 2]).is_err());
        assert!(debug_dump(&exs, &v).contains("[CLS]"));
    }

    #[test]
    fn same_seed_same_examples() {
        let v = toy_vocab();
        let pairs = vec![SentencePair { sentence_a: "a b c a".into(), sentence_b: "c b".into(), is_next: true }; 5];
        let p = MaskPolicy::default();
        assert_eq!(build_examples(&pairs, &v, &p, 12, 1, 2), build_examples(&pairs, &v, &p, 12, 1, 2));
    }

    #[test]
    fn policy_validation() {
        assert!(MaskPolicy::default().validate().is_ok());
        assert!(MaskPolicy { keep_frac: 0.2, ..Default::default() }.validate().is_err());
        assert!(MaskPolicy { select_prob: 1.0, ..Default::default() }.validate().is_err());
    }
}
