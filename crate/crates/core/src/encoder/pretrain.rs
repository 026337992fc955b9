//! Masked-LM and next-sentence heads on top of the encoder.

use super::model::{encode_backward, encode_cached, layer_norm, layer_norm_backward, matmul, Features, Mode};
use super::params::{Gradients, ParameterSet};
use crate::numeric::{col_sum_acc, gelu, gelu_grad, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, log_softmax, softmax, Scalar};
use crate::pretrain_data::PretrainExample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// len × H
    pub hidden: Vec<T>,
    pub pooled: Vec<T>,
    /// One row of V logits per masked position.
    pub mlm_logits: Vec<Vec<T>>,
    pub nsp_logits: [T; 2],
}

/// Supervision for one pretraining sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainTargets {
    pub mlm_positions: Vec<usize>,
    pub mlm_labels: Vec<u32>,
    /// 1 when B follows A.
    pub nsp_label: Option<u32>,
}

impl PretrainExample {
    pub fn targets(&self) -> PretrainTargets {
        PretrainTargets {
            mlm_positions: self.mlm_positions.clone(),
            mlm_labels: self.mlm_labels.clone(),
            nsp_label: Some(self.nsp_label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mlm: f64,
    pub nsp: f64,
    pub total: f64,
}

struct HeadCache<T> {
    selected: Vec<T>,
    pre: Vec<T>,
    ln: super::model::LnCache<T>,
    transformed: Vec<T>,
}

fn heads_forward<T: Scalar>(
    params: &ParameterSet<T>,
    hidden: &[T],
    pooled: &[T],
    positions: &[usize],
) -> Result<(Vec<Vec<T>>, [T; 2], HeadCache<T>)> {
    let c = &params.config;
    let (h, e, v) = (c.hidden_size, c.embedding_size, c.vocab_size);
    let n = hidden.len() / h;
    let m = positions.len();
    let mut selected = Vec::with_capacity(m * h);
    for &p in positions {
        if p >= n {
            return Err(Error::Features(format!("masked position {p} outside sequence of {n}")));
        }
        selected.extend_from_slice(&hidden[p * h..(p + 1) * h]);
    }
    let mut pre = matmul(&selected, &params.mlm_w.data, m, h, e);
    crate::numeric::add_row_bias(&mut pre, &params.mlm_b.data);
    let act: Vec<T> = pre.iter().map(|&z| gelu(z)).collect();
    let (transformed, ln) = layer_norm(&act, &params.mlm_ln_gamma.data, &params.mlm_ln_beta.data);
    let mut logits = vec![T::zero(); m * v];
    gemm_a_bt_acc(&transformed, &params.token_emb.data, m, e, v, &mut logits);
    crate::numeric::add_row_bias(&mut logits, &params.mlm_out_b.data);
    let mlm_logits = logits.chunks(v.max(1)).map(<[T]>::to_vec).collect();

    let mut nsp = [params.nsp_b.data[0], params.nsp_b.data[1]];
    for (k, &p) in pooled.iter().enumerate() {
        nsp[0] += p * params.nsp_w.data[k * 2];
        nsp[1] += p * params.nsp_w.data[k * 2 + 1];
    }
    Ok((mlm_logits, nsp, HeadCache { selected, pre, ln, transformed }))
}

/// Full forward pass: hidden states, pooled vector, MLM logits at
/// `mlm_positions` and NSP logits.
pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    features: &Features,
    mlm_positions: &[usize],
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    let (out, _) = encode_cached(params, features, mode)?;
    let (mlm_logits, nsp_logits, _) = heads_forward(params, &out.hidden, &out.pooled, mlm_positions)?;
    Ok(ForwardOutput {
        hidden: out.hidden,
        pooled: out.pooled,
        mlm_logits,
        nsp_logits,
    })
}

/// Mean cross-entropy over masked positions plus NSP cross-entropy.
pub fn pretrain_loss<T: Scalar>(output: &ForwardOutput<T>, mlm_labels: &[u32], nsp_label: Option<u32>) -> Result<LossBreakdown> {
    if mlm_labels.len() != output.mlm_logits.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} masked positions",
            mlm_labels.len(),
            output.mlm_logits.len()
        )));
    }
    let mut mlm = 0.0;
    for (row, &label) in output.mlm_logits.iter().zip(mlm_labels) {
        let lp = log_softmax(row);
        let l = *lp.get(label as usize).ok_or(Error::IdOutOfRange { id: label, size: row.len() })?;
        mlm -= l.as_f64();
    }
    if !mlm_labels.is_empty() {
        mlm /= mlm_labels.len() as f64;
    }
    let nsp = match nsp_label {
        Some(y) if y < 2 => -log_softmax(&output.nsp_logits)[y as usize].as_f64(),
        Some(y) => return Err(Error::IdOutOfRange { id: y, size: 2 }),
        None => 0.0,
    };
    Ok(LossBreakdown { mlm, nsp, total: mlm + nsp })
}

/// Loss and gradient of one sequence, accumulated into `grads`.
pub fn accumulate_gradients<T: Scalar>(
    params: &ParameterSet<T>,
    features: &Features,
    targets: &PretrainTargets,
    mode: Mode,
    grads: &mut Gradients<T>,
) -> Result<LossBreakdown> {
    let c = &params.config;
    let (h, e, v) = (c.hidden_size, c.embedding_size, c.vocab_size);
    let (out, cache) = encode_cached(params, features, mode)?;
    let (mlm_logits, nsp_logits, hc) = heads_forward(params, &out.hidden, &out.pooled, &targets.mlm_positions)?;
    let output = ForwardOutput {
        hidden: out.hidden,
        pooled: out.pooled,
        mlm_logits,
        nsp_logits,
    };
    let loss = pretrain_loss(&output, &targets.mlm_labels, targets.nsp_label)?;

    let n = features.len();
    let m = targets.mlm_positions.len();
    let mut d_hidden = vec![T::zero(); n * h];
    if m > 0 {
        let inv_m = T::one() / T::of(m as f64);
        let mut dlogits = Vec::with_capacity(m * v);
        for (row, &label) in output.mlm_logits.iter().zip(&targets.mlm_labels) {
            let mut p = softmax(row);
            p[label as usize] -= T::one();
            dlogits.extend(p.into_iter().map(|x| x * inv_m));
        }
        col_sum_acc(&dlogits, v, &mut grads.mlm_out_b.data);
        gemm_at_b_acc(&dlogits, &hc.transformed, m, v, e, &mut grads.token_emb.data);
        let mut dt = vec![T::zero(); m * e];
        gemm_acc(&dlogits, &params.token_emb.data, m, v, e, &mut dt);
        let mut dpre = layer_norm_backward(
            &dt,
            &hc.ln,
            &params.mlm_ln_gamma.data,
            &mut grads.mlm_ln_gamma.data,
            &mut grads.mlm_ln_beta.data,
        );
        for (d, &z) in dpre.iter_mut().zip(&hc.pre) {
            *d *= gelu_grad(z);
        }
        gemm_at_b_acc(&hc.selected, &dpre, m, h, e, &mut grads.mlm_w.data);
        col_sum_acc(&dpre, e, &mut grads.mlm_b.data);
        let mut dsel = vec![T::zero(); m * h];
        gemm_a_bt_acc(&dpre, &params.mlm_w.data, m, e, h, &mut dsel);
        for (i, &p) in targets.mlm_positions.iter().enumerate() {
            for (d, &g) in d_hidden[p * h..(p + 1) * h].iter_mut().zip(&dsel[i * h..(i + 1) * h]) {
                *d += g;
            }
        }
    }

    let d_pooled = targets.nsp_label.map(|y| {
        let mut dn = softmax(&output.nsp_logits);
        dn[y as usize] -= T::one();
        grads.nsp_b.data[0] += dn[0];
        grads.nsp_b.data[1] += dn[1];
        let mut dp = vec![T::zero(); h];
        for k in 0..h {
            grads.nsp_w.data[k * 2] += output.pooled[k] * dn[0];
            grads.nsp_w.data[k * 2 + 1] += output.pooled[k] * dn[1];
            dp[k] = params.nsp_w.data[k * 2] * dn[0] + params.nsp_w.data[k * 2 + 1] * dn[1];
        }
        dp
    });

    encode_backward(params, &cache, &d_hidden, d_pooled.as_deref(), grads);
    Ok(loss)
}

/// Loss and a fresh gradient for one sequence; fails naming the first
/// parameter whose gradient is not finite.
pub fn pretrain_gradients<T: Scalar>(
    params: &ParameterSet<T>,
    features: &Features,
    targets: &PretrainTargets,
    mode: Mode,
) -> Result<(LossBreakdown, Gradients<T>)> {
    let mut grads = params.zeros_like();
    let loss = accumulate_gradients(params, features, targets, mode, &mut grads)?;
    grads.check_finite().map_err(|e| match e {
        Error::NonFinite(name) => Error::NonFinite(format!("gradient of {name}")),
        other => other,
    })?;
    Ok((loss, grads))
}
