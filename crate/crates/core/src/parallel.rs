//! Data-parallel gradient computation over W in-process workers.
//!
//! Per-example gradients are accumulated in 128-bit fixed point, so any
//! partition of a batch into shards or micro-batches sums to the same bits.
//! The mean is formed once, after the ordered reduce.

use std::ops::Range;
use std::sync::mpsc;

use crate::encoder::{pretrain_gradients, Gradients, LossBreakdown, Mode, ModelConfig, ParameterSet};
use crate::numeric::Scalar;
use crate::pretrain_data::PretrainExample;
use crate::trainer::example_seed;
use crate::{Error, Result};

/// Fixed-point scale, 2^64.
const SCALE: f64 = 18_446_744_073_709_551_616.0;
/// Largest magnitude accepted before conversion, leaving headroom for sums.
const LIMIT: f64 = 1_152_921_504_606_846_976.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerShard {
    pub worker: usize,
    /// Positions within the global batch.
    pub range: Range<usize>,
}

impl WorkerShard {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    /// Workers with nothing to do contribute a zero-weighted gradient.
    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Worker `i` gets `[⌊iN/W⌋, ⌊(i+1)N/W⌋)`.
pub fn shard_batch(n: usize, workers: usize) -> Result<Vec<WorkerShard>> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    Ok((0..workers)
        .map(|i| WorkerShard {
            worker: i,
            range: i * n / workers..(i + 1) * n / workers,
        })
        .collect())
}

fn to_fixed(v: f64) -> Result<i128> {
    if !v.is_finite() || v.abs() > LIMIT {
        return Err(Error::NonFinite(format!("gradient value {v} outside accumulator range")));
    }
    Ok((v * SCALE).round() as i128)
}

/// Exact sum of per-example gradients and losses over `count` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    pub count: usize,
    config: ModelConfig,
    names: Vec<String>,
    sums: Vec<Vec<i128>>,
    loss: [i128; 2],
}

impl PartialGradient {
    pub fn empty<T: Scalar>(template: &ParameterSet<T>) -> Self {
        let (names, sums) = template
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, vec![0i128; t.len()]))
            .unzip();
        Self {
            count: 0,
            config: template.config.clone(),
            names,
            sums,
            loss: [0, 0],
        }
    }

    fn add_scaled<T: Scalar>(&mut self, grads: &ParameterSet<T>, weight: f64) -> Result<()> {
        if grads.config != self.config {
            return Err(Error::Shape("gradient config differs from accumulator".into()));
        }
        for (sum, (_, t)) in self.sums.iter_mut().zip(grads.tensors()) {
            for (s, &g) in sum.iter_mut().zip(&t.data) {
                *s += to_fixed(g.as_f64() * weight)?;
            }
        }
        Ok(())
    }

    pub fn add_example<T: Scalar>(&mut self, grads: &ParameterSet<T>, loss: LossBreakdown) -> Result<()> {
        self.add_scaled(grads, 1.0)?;
        self.loss[0] += to_fixed(loss.mlm)?;
        self.loss[1] += to_fixed(loss.nsp)?;
        self.count += 1;
        Ok(())
    }

    /// Partial from a worker's mean gradient over `count` examples.
    pub fn from_mean<T: Scalar>(mean: &ParameterSet<T>, count: usize) -> Result<Self> {
        let mut p = Self::empty(mean);
        p.add_scaled(mean, count as f64)?;
        p.count = count;
        Ok(p)
    }

    /// Adds `other`, received from `worker`.
    pub fn merge(&mut self, other: &PartialGradient, worker: usize) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let theirs = other.names.get(i).zip(other.sums.get(i));
            match theirs {
                Some((n, s)) if n == name && s.len() == self.sums[i].len() => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "worker {worker}: array {name} does not match the reduce target"
                    )))
                }
            }
        }
        if other.names.len() != self.names.len() {
            return Err(Error::Shape(format!("worker {worker}: array count differs")));
        }
        for (dst, src) in self.sums.iter_mut().zip(&other.sums) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        self.loss[0] += other.loss[0];
        self.loss[1] += other.loss[1];
        self.count += other.count;
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.sums.iter().map(Vec::len).sum()
    }

    /// FNV-1a over the accumulator contents.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&(self.count as u64).to_le_bytes());
        for s in self.sums.iter().flatten() {
            feed(&s.to_le_bytes());
        }
        h
    }

    /// Mean gradient and mean loss.
    pub fn mean<T: Scalar>(&self) -> Result<(Gradients<T>, LossBreakdown)> {
        if self.count == 0 {
            return Err(Error::Shape("mean over zero examples".into()));
        }
        let n = self.count as f64;
        let mut out = ParameterSet::<T>::zeros(&self.config);
        for (sum, (_, t)) in self.sums.iter().zip(out.tensors_mut()) {
            for (d, &s) in t.data.iter_mut().zip(sum) {
                *d = T::of(s as f64 / SCALE / n);
            }
        }
        let mlm = self.loss[0] as f64 / SCALE / n;
        let nsp = self.loss[1] as f64 / SCALE / n;
        Ok((out, LossBreakdown { mlm, nsp, total: mlm + nsp }))
    }
}

/// Example-count-weighted mean of worker partials, summed in slice order
/// (the worker-id order).
pub fn reduce_mean<T: Scalar>(partials: &[PartialGradient]) -> Result<(Gradients<T>, LossBreakdown)> {
    let (first, rest) = partials
        .split_first()
        .ok_or_else(|| Error::Shape("nothing to reduce".into()))?;
    let mut total = first.clone();
    for (i, p) in rest.iter().enumerate() {
        total.merge(p, i + 1)?;
    }
    total.mean()
}

/// One training step's view of the data: which examples, in batch order.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a> {
    pub examples: &'a [PretrainExample],
    pub indices: &'a [usize],
    pub seed: u64,
    pub phase: usize,
    pub step: u64,
}

impl BatchRef<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Exact gradient sum over batch positions `range`. Each position has its
    /// own dropout seed, so the result does not depend on how the batch is split.
    pub fn gradient<T: Scalar>(&self, params: &ParameterSet<T>, range: Range<usize>) -> Result<PartialGradient> {
        let mut acc = PartialGradient::empty(params);
        for pos in range {
            let ex = &self.examples[self.indices[pos]];
            let mode = Mode::Train {
                seed: example_seed(self.seed, self.phase, self.step, pos),
            };
            let (loss, g) = pretrain_gradients(params, &ex.features(), &ex.targets(), mode)?;
            acc.add_example(&g, loss)?;
        }
        Ok(acc)
    }
}

/// Per-step line of the synchronization transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u64,
    pub workers: usize,
    /// Checksum of the reduced (pre-division) gradient sum.
    pub checksum: u64,
    /// Scalars sent to the reducer: parameter count × (W − 1).
    pub transfers: u64,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={} workers={} checksum={:016x} transfers={}",
            self.step, self.workers, self.checksum, self.transfers
        )
    }
}

/// Test hook: make `worker` fail at global step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulatedFailure {
    pub worker: usize,
    pub step: u64,
}

/// Computes the batch gradient with `workers` threads, one shard each, and
/// reduces their partials in worker-id order.
pub fn parallel_gradient<T: Scalar>(
    params: &ParameterSet<T>,
    batch: &BatchRef<'_>,
    workers: usize,
    global_step: u64,
    failure: Option<SimulatedFailure>,
) -> Result<(PartialGradient, StepRecord)> {
    let shards = shard_batch(batch.len(), workers)?;
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for shard in &shards {
            let tx = tx.clone();
            scope.spawn(move || {
                let result = if failure == Some(SimulatedFailure { worker: shard.worker, step: global_step }) {
                    Err(Error::WorkerFailed {
                        worker: shard.worker,
                        step: global_step,
                        reason: "simulated failure".into(),
                    })
                } else {
                    batch.gradient(params, shard.range.clone())
                };
                // the receiver outlives the scope
                let _ = tx.send((shard.worker, result));
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<PartialGradient>> = vec![None; workers];
    for (worker, result) in rx {
        match result {
            Ok(p) => slots[worker] = Some(p),
            Err(e @ Error::WorkerFailed { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::WorkerFailed {
                    worker,
                    step: global_step,
                    reason: e.to_string(),
                })
            }
        }
    }
    let mut ordered = slots.into_iter().enumerate().map(|(w, p)| {
        p.ok_or_else(|| Error::WorkerFailed {
            worker: w,
            step: global_step,
            reason: "no result received".into(),
        })
    });
    let mut total = ordered.next().expect("at least one worker")?;
    for (w, p) in ordered.enumerate() {
        total.merge(&p?, w + 1)?;
    }
    let record = StepRecord {
        step: global_step,
        workers,
        checksum: total.checksum(),
        transfers: (total.scalar_count() * (workers - 1)) as u64,
    };
    Ok((total, record))
}
