//! Adam with warm-up and linear decay, the multi-phase pretraining loop,
//! loss logging and checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::encoder::{Gradients, LossBreakdown, ModelConfig, ParameterSet};
use crate::numeric::Scalar;
use crate::parallel::{parallel_gradient, BatchRef, PartialGradient, SimulatedFailure, StepRecord};
use crate::pretrain_data::PretrainExample;
use crate::seed;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const DROPOUT_TAG: u64 = 0x4452_4f50;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
    /// Completed updates.
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient is rejected before
/// anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if grads.config != params.config || state.m.config != params.config {
        return Err(Error::Shape("gradient or optimizer state does not match parameters".into()));
    }
    grads.check_finite().map_err(|e| match e {
        Error::NonFinite(name) => Error::NonFinite(format!("gradient of {name}")),
        other => other,
    })?;
    state.t += 1;
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        adam_update(&mut p.data, &g.data, &mut m.data, &mut v.data, state.t, lr);
    }
    Ok(())
}

/// Adam update of one array; `t` counts updates including this one.
pub(crate) fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64) {
    let t = t as i32;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let (c1, c2) = (T::of(1.0 - BETA1), T::of(1.0 - BETA2));
    let bc1 = T::of(1.0 - BETA1.powi(t));
    let bc2 = T::of(1.0 - BETA2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = b1 * m[i] + c1 * gi;
        v[i] = b2 * v[i] + c2 * gi * gi;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPhase {
    pub max_len: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl TrainPhase {
    /// Warm-up defaults to 1% of the steps.
    pub fn new(max_len: usize, batch_size: usize, total_steps: u64, base_lr: f64) -> Self {
        Self {
            max_len,
            batch_size,
            total_steps,
            base_lr,
            warmup_steps: total_steps / 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.base_lr)));
        }
        Ok(())
    }
}

/// Linear ramp 0→base over `[0, warmup]`, then linear decay to 0 at `total`.
pub fn lr_schedule(step: u64, phase: &TrainPhase) -> Result<f64> {
    let (w, n, base) = (phase.warmup_steps, phase.total_steps, phase.base_lr);
    if step > n {
        return Err(Error::Schedule(format!("step {step} beyond total {n}")));
    }
    if w > 0 && step <= w {
        return Ok(base * (step as f64 / w as f64));
    }
    if step == n {
        return Ok(0.0);
    }
    Ok(base * ((n - step) as f64 / (n - w) as f64))
}

/// Dropout seed of the example at batch position `pos`.
pub fn example_seed(seed: u64, phase: usize, step: u64, pos: usize) -> u64 {
    seed::derive(seed, &[DROPOUT_TAG, phase as u64, step, pos as u64])
}

/// Example indices of batch `step`: consecutive slices of a stream of
/// per-epoch shuffles, a pure function of its arguments.
pub fn batch_indices(n: usize, batch: usize, seed: u64, phase: usize, step: u64) -> Vec<usize> {
    let start = step as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for s in start..start + batch {
        if s / n != epoch {
            epoch = s / n;
            perm = (0..n).collect();
            perm.shuffle(&mut seed::rng_at(seed, &[SHUFFLE_TAG, phase as u64, epoch as u64]));
        }
        out.push(perm[s % n]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Global step, counted across phases, after the update.
    pub step: u64,
    pub phase: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,lr,mlm_loss,nsp_loss,total\n");
    for r in records {
        let _ = writeln!(out, "{},{:e},{:.6},{:.6},{:.6}", r.step, r.lr, r.loss.mlm, r.loss.nsp, r.loss.total);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// One thread; the batch is processed `micro_batch` examples at a time
    /// (0 = whole batch), with exact accumulation.
    Serial { micro_batch: usize },
    Parallel {
        workers: usize,
        failure: Option<SimulatedFailure>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    /// Log every k steps; the last step of each phase is always logged.
    pub log_every: u64,
    pub execution: Execution,
    pub checkpoint_dir: Option<PathBuf>,
    /// Extra checkpoint every k global steps (0 = only at phase ends).
    pub checkpoint_every: u64,
    /// Stop (with a checkpoint) after this many steps in this call.
    pub stop_after: Option<u64>,
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            log_every: 10,
            execution: Execution::Serial { micro_batch: 0 },
            checkpoint_dir: None,
            checkpoint_every: 0,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PhaseData<'a> {
    pub phase: &'a TrainPhase,
    pub examples: &'a [PretrainExample],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters, optimizer and schedule position at exit.
    pub state: Checkpoint<T>,
    pub log: Vec<LossRecord>,
    pub transcript: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// False when stopped early by `stop_after`.
    pub finished: bool,
}

fn step_gradient<T: Scalar>(
    params: &ParameterSet<T>,
    batch: &BatchRef<'_>,
    execution: Execution,
    global_step: u64,
) -> Result<(PartialGradient, StepRecord)> {
    match execution {
        Execution::Serial { micro_batch } => {
            let size = if micro_batch == 0 { batch.len() } else { micro_batch };
            let mut total = PartialGradient::empty(params);
            let mut start = 0;
            while start < batch.len() {
                let end = (start + size).min(batch.len());
                total.merge(&batch.gradient(params, start..end)?, 0)?;
                start = end;
            }
            let record = StepRecord {
                step: global_step,
                workers: 1,
                checksum: total.checksum(),
                transfers: 0,
            };
            Ok((total, record))
        }
        Execution::Parallel { workers, failure } => parallel_gradient(params, batch, workers, global_step, failure),
    }
}

fn write_checkpoint<T: Scalar>(
    ck: &Checkpoint<T>,
    dir: &Path,
    name: &str,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let path = dir.join(name);
    let result = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, ck.to_bytes()));
    if let Err(e) = result {
        let last = written
            .last()
            .map_or_else(|| "none".to_string(), |p| p.display().to_string());
        return Err(Error::Checkpoint(format!(
            "writing {} failed: {e}; last good checkpoint: {last}",
            path.display()
        )));
    }
    written.push(path);
    Ok(())
}

/// Runs the phases in order from the position recorded in `start`. Adam
/// moments carry over between phases. Deterministic given the seed; the
/// worker count and micro-batch size do not change the result.
pub fn train<T: Scalar>(phases: &[PhaseData<'_>], start: Checkpoint<T>, options: &TrainOptions) -> Result<TrainOutcome<T>> {
    let Checkpoint {
        mut params,
        optimizer,
        phase: first_phase,
        step: first_step,
    } = start;
    let mut opt = optimizer.unwrap_or_else(|| OptimizerState::new(&params));
    let mut log = Vec::new();
    let mut transcript = Vec::new();
    let mut checkpoints = Vec::new();
    let mut done_in_call = 0u64;
    let offsets: Vec<u64> = phases
        .iter()
        .scan(0u64, |acc, p| {
            let o = *acc;
            *acc += p.phase.total_steps;
            Some(o)
        })
        .collect();

    for (pi, data) in phases.iter().enumerate().skip(first_phase) {
        let phase = data.phase;
        phase.validate()?;
        if data.examples.is_empty() && phase.total_steps > 0 {
            return Err(Error::Config(format!("phase {} has no examples", pi + 1)));
        }
        if let Some(ex) = data.examples.iter().find(|e| e.max_len() != phase.max_len) {
            return Err(Error::Config(format!(
                "phase {} expects max_len {}, example has {}",
                pi + 1,
                phase.max_len,
                ex.max_len()
            )));
        }
        let mut step = if pi == first_phase { first_step } else { 0 };
        while step < phase.total_steps {
            if options.stop_after == Some(done_in_call) {
                let ck = Checkpoint {
                    params,
                    optimizer: Some(opt),
                    phase: pi,
                    step,
                };
                if let Some(dir) = &options.checkpoint_dir {
                    write_checkpoint(&ck, dir, "interrupted.ckpt", &mut checkpoints)?;
                }
                return Ok(TrainOutcome {
                    state: ck,
                    log,
                    transcript,
                    checkpoints,
                    finished: false,
                });
            }
            let global = offsets[pi] + step + 1;
            let indices = batch_indices(data.examples.len(), phase.batch_size, options.seed, pi, step);
            let batch = BatchRef {
                examples: data.examples,
                indices: &indices,
                seed: options.seed,
                phase: pi,
                step,
            };
            let (partial, record) = step_gradient(&params, &batch, options.execution, global)?;
            let (grads, loss) = partial.mean::<T>()?;
            let lr = lr_schedule(step, phase)?;
            adam_step(&mut params, &grads, &mut opt, lr)?;
            transcript.push(record);
            step += 1;
            done_in_call += 1;
            if (options.log_every > 0 && step % options.log_every == 0) || step == phase.total_steps {
                log.push(LossRecord {
                    step: global,
                    phase: pi,
                    lr,
                    loss,
                });
            }
            if let Some(dir) = &options.checkpoint_dir {
                if options.checkpoint_every > 0 && global % options.checkpoint_every == 0 && step < phase.total_steps {
                    let ck = Checkpoint {
                        params: params.clone(),
                        optimizer: Some(opt.clone()),
                        phase: pi,
                        step,
                    };
                    write_checkpoint(&ck, dir, &format!("step-{global}.ckpt"), &mut checkpoints)?;
                }
            }
        }
        if let Some(dir) = &options.checkpoint_dir {
            let ck = Checkpoint {
                params: params.clone(),
                optimizer: Some(opt.clone()),
                phase: pi + 1,
                step: 0,
            };
            write_checkpoint(&ck, dir, &format!("phase{}.ckpt", pi + 1), &mut checkpoints)?;
        }
    }
    let optimizer = (opt.t > 0).then_some(opt);
    Ok(TrainOutcome {
        state: Checkpoint {
            params,
            optimizer,
            phase: phases.len().max(first_phase),
            step: 0,
        },
        log,
        transcript,
        checkpoints,
        finished: true,
    })
}

/// Pretraining run configuration, read from flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub phases: Vec<TrainPhase>,
    pub seed: u64,
    pub log_every: u64,
    pub micro_batch: usize,
    pub workers: usize,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Parses the config text. `model.preset` (tiny, bert-base, albert-base)
    /// picks the starting architecture; `vocab_size` is taken from the
    /// vocabulary unless the file disagrees, which is an error.
    pub fn parse(text: &str, vocab_size: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let preset = entries
            .iter()
            .find(|(_, k, _)| k == "model.preset")
            .map_or("tiny", |(_, _, v)| v.as_str());
        let mut model = match preset {
            "tiny" => ModelConfig::tiny(vocab_size),
            "bert-base" => ModelConfig::bert_base(vocab_size),
            "albert-base" => ModelConfig::albert_base(vocab_size),
            other => return Err(Error::Config(format!("unknown model preset '{other}'"))),
        };
        let mut seed = None;
        let mut log_every = 10;
        let mut micro_batch = 0;
        let mut workers = 1;
        let mut checkpoint_every = 0;
        let mut phase_fields: Vec<[Option<String>; 5]> = Vec::new();
        const FIELDS: [&str; 5] = ["max_len", "batch", "steps", "lr", "warmup"];
        for (line, k, v) in &entries {
            let num = |v: &str| v.parse::<u64>().map_err(|_| perr(*line, format!("bad number '{v}' for {k}")));
            match k.as_str() {
                "model.preset" => {}
                "seed" => seed = Some(num(v)?),
                "log_every" => log_every = num(v)?,
                "micro_batch" => micro_batch = num(v)? as usize,
                "workers" => workers = num(v)? as usize,
                "checkpoint_every" => checkpoint_every = num(v)?,
                _ => {
                    if let Some(key) = k.strip_prefix("model.") {
                        model = model.with_pairs([(key, v.as_str())]).map_err(|e| perr(*line, e.to_string()))?;
                    } else if let Some((idx, field)) = k.strip_prefix("phase").and_then(|r| r.split_once('.')) {
                        let i: usize = idx
                            .parse()
                            .ok()
                            .filter(|&i| i >= 1)
                            .ok_or_else(|| perr(*line, format!("bad phase index in '{k}'")))?;
                        let f = FIELDS
                            .iter()
                            .position(|&f| f == field)
                            .ok_or_else(|| perr(*line, format!("unknown phase key '{field}'")))?;
                        if phase_fields.len() < i {
                            phase_fields.resize(i, Default::default());
                        }
                        phase_fields[i - 1][f] = Some(v.clone());
                    } else {
                        return Err(perr(*line, format!("unknown key '{k}'")));
                    }
                }
            }
        }
        if model.vocab_size != vocab_size {
            return Err(Error::Config(format!(
                "model.vocab_size {} disagrees with the vocabulary ({vocab_size})",
                model.vocab_size
            )));
        }
        model.validate()?;
        let seed = seed.ok_or_else(|| Error::Config("seed is required".into()))?;
        let mut phases = Vec::new();
        for (i, f) in phase_fields.iter().enumerate() {
            let need = |j: usize| {
                f[j].clone()
                    .ok_or_else(|| Error::Config(format!("phase{}.{} missing", i + 1, FIELDS[j])))
            };
            let bad = |j: usize| Error::Config(format!("bad value for phase{}.{}", i + 1, FIELDS[j]));
            let mut phase = TrainPhase::new(
                need(0)?.parse().map_err(|_| bad(0))?,
                need(1)?.parse().map_err(|_| bad(1))?,
                need(2)?.parse().map_err(|_| bad(2))?,
                need(3)?.parse().map_err(|_| bad(3))?,
            );
            if let Some(w) = &f[4] {
                phase.warmup_steps = w.parse().map_err(|_| bad(4))?;
            }
            phase.validate()?;
            if phase.max_len > model.max_positions {
                return Err(Error::Config(format!(
                    "phase{} max_len {} exceeds model max_positions {}",
                    i + 1,
                    phase.max_len,
                    model.max_positions
                )));
            }
            phases.push(phase);
        }
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            model,
            phases,
            seed,
            log_every,
            micro_batch,
            workers,
            checkpoint_every,
        })
    }

    /// Fully resolved config; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_pairs() {
            let _ = writeln!(out, "model.{k}={v}");
        }
        for (i, p) in self.phases.iter().enumerate() {
            let n = i + 1;
            let _ = writeln!(out, "phase{n}.max_len={}", p.max_len);
            let _ = writeln!(out, "phase{n}.batch={}", p.batch_size);
            let _ = writeln!(out, "phase{n}.steps={}", p.total_steps);
            let _ = writeln!(out, "phase{n}.lr={:e}", p.base_lr);
            let _ = writeln!(out, "phase{n}.warmup={}", p.warmup_steps);
        }
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "log_every={}", self.log_every);
        let _ = writeln!(out, "micro_batch={}", self.micro_batch);
        let _ = writeln!(out, "workers={}", self.workers);
        let _ = writeln!(out, "checkpoint_every={}", self.checkpoint_every);
        out
    }

    pub fn execution(&self) -> Execution {
        if self.workers > 1 {
            Execution::Parallel {
                workers: self.workers,
                failure: None,
            }
        } else {
            Execution::Serial {
                micro_batch: self.micro_batch,
            }
        }
    }
}
