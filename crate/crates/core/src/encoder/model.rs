//! Post-layer-norm transformer encoder: forward pass with activation caches
//! and the matching analytic backward pass.

use rand::Rng as _;

use super::params::{LayerParams, ParameterSet};
use crate::numeric::{
    affine, col_sum_acc, gelu, gelu_grad, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Scalar,
};
use crate::seed;
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-12;

/// Model inputs for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Features {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn validate<T>(&self, params: &ParameterSet<T>) -> Result<()> {
        let c = &params.config;
        let n = self.len();
        if n == 0 {
            return Err(Error::Features("empty sequence".into()));
        }
        if self.segment_ids.len() != n || self.position_ids.len() != n || self.attention_mask.len() != n {
            return Err(Error::Features("feature lists differ in length".into()));
        }
        if let Some(&id) = self.input_ids.iter().find(|&&id| id as usize >= c.vocab_size) {
            return Err(Error::IdOutOfRange { id, size: c.vocab_size });
        }
        if let Some(&p) = self.position_ids.iter().find(|&&p| p as usize >= c.max_positions) {
            return Err(Error::Features(format!(
                "position id {p} >= max_positions {}",
                c.max_positions
            )));
        }
        if self.segment_ids.iter().any(|&s| s as usize >= c.type_vocab_size) {
            return Err(Error::Features("segment id out of range".into()));
        }
        if !self.attention_mask.iter().any(|&m| m) {
            return Err(Error::Features("attention mask hides every token".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from this seed.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    dim: usize,
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, LnCache<T>) {
    let dim = gamma.len();
    let rows = x.len() / dim;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_dim = T::one() / T::of(dim as f64);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() * inv_dim;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_dim;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for d in 0..dim {
            let h = (row[d] - mean) * rs;
            xhat[r * dim + d] = h;
            y[r * dim + d] = gamma[d] * h + beta[d];
        }
    }
    (y, LnCache { xhat, rstd, dim })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let dim = cache.dim;
    let rows = dy.len() / dim;
    let inv_dim = T::one() / T::of(dim as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for r in 0..rows {
        let o = r * dim;
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for d in 0..dim {
            let g = dy[o + d];
            let h = cache.xhat[o + d];
            dgamma[d] += g * h;
            dbeta[d] += g;
            let dh = g * gamma[d];
            mean_dxhat += dh;
            mean_dxhat_xhat += dh * h;
        }
        mean_dxhat *= inv_dim;
        mean_dxhat_xhat *= inv_dim;
        for d in 0..dim {
            let dh = dy[o + d] * gamma[d];
            dx[o + d] = cache.rstd[r] * (dh - mean_dxhat - cache.xhat[o + d] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Inverted-dropout mask (entries 0 or 1/(1-p)), or `None` when inactive.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Option<seed::Rng>) -> Option<Vec<T>> {
    let rng = rng.as_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    Some((0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect())
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    probs_drop: Option<Vec<T>>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln1: LnCache<T>,
    x1: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
    ln2: LnCache<T>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    n: usize,
    features: Features,
    emb_ln: LnCache<T>,
    emb_drop: Option<Vec<T>>,
    emb_out: Vec<T>,
    layers: Vec<LayerCache<T>>,
    pub(crate) hidden: Vec<T>,
    pub(crate) pooled: Vec<T>,
}

impl<T: Scalar> EncoderCache<T> {
    /// Post-softmax attention probabilities of layer `l`, laid out
    /// heads × queries × keys.
    pub fn attention_probs(&self, l: usize) -> &[T] {
        &self.layers[l].probs
    }

    /// Embedding layer-norm output before scale and offset (rows × E).
    pub fn embedding_normalized(&self) -> &[T] {
        &self.emb_ln.xhat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// Final hidden states, len × H.
    pub hidden: Vec<T>,
    /// `tanh(h_cls · W + b)`.
    pub pooled: Vec<T>,
}

/// Token + position + segment embedding sum for each position (len × E),
/// before normalization.
pub fn embedding_sum<T: Scalar>(params: &ParameterSet<T>, features: &Features) -> Vec<T> {
    let e = params.config.embedding_size;
    let mut out = vec![T::zero(); features.len() * e];
    for i in 0..features.len() {
        let row = &mut out[i * e..(i + 1) * e];
        let tok = params.token_emb.row(features.input_ids[i] as usize);
        let pos = params.position_emb.row(features.position_ids[i] as usize);
        let seg = params.segment_emb.row(features.segment_ids[i] as usize);
        for d in 0..e {
            row[d] = tok[d] + pos[d] + seg[d];
        }
    }
    out
}

fn layer_forward<T: Scalar>(
    p: &LayerParams<T>,
    x: Vec<T>,
    mask: &[bool],
    heads: usize,
    dropout: f64,
    rng: &mut Option<seed::Rng>,
) -> (Vec<T>, LayerCache<T>) {
    let h = p.query_b.len();
    let f = p.ffn_in_b.len();
    let n = x.len() / h;
    let dh = h / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();

    let q = affine(&x, &p.query_w.data, &p.query_b.data, n, h, h);
    let k = affine(&x, &p.key_w.data, &p.key_b.data, n, h, h);
    let v = affine(&x, &p.value_w.data, &p.value_b.data, n, h, h);

    let mut probs = vec![T::zero(); heads * n * n];
    let mut scores = vec![T::zero(); n];
    for a in 0..heads {
        for i in 0..n {
            let qi = &q[i * h + a * dh..i * h + (a + 1) * dh];
            let mut max = T::neg_infinity();
            for j in 0..n {
                if mask[j] {
                    let kj = &k[j * h + a * dh..j * h + (a + 1) * dh];
                    let s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
            }
            let row = &mut probs[(a * n + i) * n..(a * n + i + 1) * n];
            let mut total = T::zero();
            for j in 0..n {
                if mask[j] {
                    let e = (scores[j] - max).exp();
                    row[j] = e;
                    total += e;
                }
            }
            for pj in row.iter_mut() {
                *pj /= total;
            }
        }
    }
    let probs_drop = dropout_mask::<T>(probs.len(), dropout, rng);
    let mut pd = probs.clone();
    apply_mask(&mut pd, &probs_drop);

    let mut ctx = vec![T::zero(); n * h];
    for a in 0..heads {
        for i in 0..n {
            let prow = &pd[(a * n + i) * n..(a * n + i + 1) * n];
            let out = &mut ctx[i * h + a * dh..i * h + (a + 1) * dh];
            for (j, &pij) in prow.iter().enumerate() {
                if pij == T::zero() {
                    continue;
                }
                let vj = &v[j * h + a * dh..j * h + (a + 1) * dh];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += pij * vv;
                }
            }
        }
    }

    let mut attn = affine(&ctx, &p.attn_out_w.data, &p.attn_out_b.data, n, h, h);
    let attn_drop = dropout_mask::<T>(attn.len(), dropout, rng);
    apply_mask(&mut attn, &attn_drop);
    for (a, &xv) in attn.iter_mut().zip(&x) {
        *a += xv;
    }
    let (x1, ln1) = layer_norm(&attn, &p.attn_ln_gamma.data, &p.attn_ln_beta.data);

    let pre = affine(&x1, &p.ffn_in_w.data, &p.ffn_in_b.data, n, h, f);
    let act: Vec<T> = pre.iter().map(|&z| gelu(z)).collect();
    let mut out = affine(&act, &p.ffn_out_w.data, &p.ffn_out_b.data, n, f, h);
    let ffn_drop = dropout_mask::<T>(out.len(), dropout, rng);
    apply_mask(&mut out, &ffn_drop);
    for (o, &xv) in out.iter_mut().zip(&x1) {
        *o += xv;
    }
    let (x2, ln2) = layer_norm(&out, &p.ffn_ln_gamma.data, &p.ffn_ln_beta.data);

    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        probs_drop,
        ctx,
        attn_drop,
        ln1,
        x1,
        pre,
        act,
        ffn_drop,
        ln2,
    };
    (x2, cache)
}

fn layer_backward<T: Scalar>(
    p: &LayerParams<T>,
    c: &LayerCache<T>,
    dy: &[T],
    heads: usize,
    g: &mut LayerParams<T>,
) -> Vec<T> {
    let h = p.query_b.len();
    let f = p.ffn_in_b.len();
    let n = dy.len() / h;
    let dh = h / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();

    // feed-forward sublayer
    let dr2 = layer_norm_backward(dy, &c.ln2, &p.ffn_ln_gamma.data, &mut g.ffn_ln_gamma.data, &mut g.ffn_ln_beta.data);
    let mut dx1 = dr2.clone();
    let mut dout = dr2;
    apply_mask(&mut dout, &c.ffn_drop);
    gemm_at_b_acc(&c.act, &dout, n, f, h, &mut g.ffn_out_w.data);
    col_sum_acc(&dout, h, &mut g.ffn_out_b.data);
    let mut dpre = vec![T::zero(); n * f];
    gemm_a_bt_acc(&dout, &p.ffn_out_w.data, n, h, f, &mut dpre);
    for (d, &z) in dpre.iter_mut().zip(&c.pre) {
        *d *= gelu_grad(z);
    }
    gemm_at_b_acc(&c.x1, &dpre, n, h, f, &mut g.ffn_in_w.data);
    col_sum_acc(&dpre, f, &mut g.ffn_in_b.data);
    gemm_a_bt_acc(&dpre, &p.ffn_in_w.data, n, f, h, &mut dx1);

    // attention sublayer
    let dr1 = layer_norm_backward(&dx1, &c.ln1, &p.attn_ln_gamma.data, &mut g.attn_ln_gamma.data, &mut g.attn_ln_beta.data);
    let mut dx = dr1.clone();
    let mut da = dr1;
    apply_mask(&mut da, &c.attn_drop);
    gemm_at_b_acc(&c.ctx, &da, n, h, h, &mut g.attn_out_w.data);
    col_sum_acc(&da, h, &mut g.attn_out_b.data);
    let mut dctx = vec![T::zero(); n * h];
    gemm_a_bt_acc(&da, &p.attn_out_w.data, n, h, h, &mut dctx);

    let mut dq = vec![T::zero(); n * h];
    let mut dk = vec![T::zero(); n * h];
    let mut dv = vec![T::zero(); n * h];
    let mut dp = vec![T::zero(); n];
    for a in 0..heads {
        let span = a * dh..(a + 1) * dh;
        for i in 0..n {
            let base = (a * n + i) * n;
            let dci = &dctx[i * h + span.start..i * h + span.end];
            for j in 0..n {
                let pij = c.probs[base + j];
                if pij == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                let keep = c.probs_drop.as_ref().map_or(T::one(), |m| m[base + j]);
                let vj = &c.v[j * h + span.start..j * h + span.end];
                let dpd = dci.iter().zip(vj).map(|(&x, &y)| x * y).sum::<T>();
                let pd = pij * keep;
                if pd != T::zero() {
                    for (d, &g) in dci.iter().enumerate() {
                        dv[j * h + span.start + d] += pd * g;
                    }
                }
                dp[j] = dpd * keep;
            }
            let row = &c.probs[base..base + n];
            let rowdot = row.iter().zip(&dp).map(|(&p, &d)| p * d).sum::<T>();
            for j in 0..n {
                let ds = row[j] * (dp[j] - rowdot) * scale;
                if ds == T::zero() {
                    continue;
                }
                for d in 0..dh {
                    dq[i * h + span.start + d] += ds * c.k[j * h + span.start + d];
                    dk[j * h + span.start + d] += ds * c.q[i * h + span.start + d];
                }
            }
        }
    }
    for (dproj, w, gw, gb) in [
        (&dq, &p.query_w, &mut g.query_w, &mut g.query_b),
        (&dk, &p.key_w, &mut g.key_w, &mut g.key_b),
        (&dv, &p.value_w, &mut g.value_w, &mut g.value_b),
    ] {
        gemm_at_b_acc(&c.x, dproj, n, h, h, &mut gw.data);
        col_sum_acc(dproj, h, &mut gb.data);
        gemm_a_bt_acc(dproj, &w.data, n, h, h, &mut dx);
    }
    dx
}

/// Runs embeddings, every layer and the pooler, keeping activations.
pub fn encode_cached<T: Scalar>(
    params: &ParameterSet<T>,
    features: &Features,
    mode: Mode,
) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
    features.validate(params)?;
    let c = &params.config;
    let (n, e, h) = (features.len(), c.embedding_size, c.hidden_size);
    let mut rng = match mode {
        Mode::Train { seed } if c.dropout > 0.0 => Some(seed::rng(seed)),
        _ => None,
    };

    let sum = embedding_sum(params, features);
    let (mut emb, emb_ln) = layer_norm(&sum, &params.emb_ln_gamma.data, &params.emb_ln_beta.data);
    let emb_drop = dropout_mask::<T>(emb.len(), c.dropout, &mut rng);
    apply_mask(&mut emb, &emb_drop);
    let mut x = match &params.projection {
        Some((w, b)) => affine(&emb, &w.data, &b.data, n, e, h),
        None => emb.clone(),
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }

    let mut layers = Vec::with_capacity(c.num_layers);
    for l in 0..c.num_layers {
        let (out, cache) = layer_forward(params.layer(l), x, &features.attention_mask, c.num_heads, c.dropout, &mut rng);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {l} output")));
        }
        layers.push(cache);
        x = out;
    }

    let mut pooled = affine(&x[..h], &params.pooler_w.data, &params.pooler_b.data, 1, h, h);
    pooled.iter_mut().for_each(|v| *v = v.tanh());

    let out = EncoderOutput {
        hidden: x.clone(),
        pooled: pooled.clone(),
    };
    let cache = EncoderCache {
        n,
        features: features.clone(),
        emb_ln,
        emb_drop,
        emb_out: emb,
        layers,
        hidden: x,
        pooled,
    };
    Ok((out, cache))
}

pub fn encode<T: Scalar>(params: &ParameterSet<T>, features: &Features, mode: Mode) -> Result<EncoderOutput<T>> {
    encode_cached(params, features, mode).map(|(o, _)| o)
}

/// Backpropagates `d_hidden` (len × H) and optionally `d_pooled` (H) through
/// the pooler, the layers and the embeddings, accumulating into `grads`.
/// Shared layers accumulate every reuse into the single stored block.
pub fn encode_backward<T: Scalar>(
    params: &ParameterSet<T>,
    cache: &EncoderCache<T>,
    d_hidden: &[T],
    d_pooled: Option<&[T]>,
    grads: &mut ParameterSet<T>,
) {
    let c = &params.config;
    let (n, e, h) = (cache.n, c.embedding_size, c.hidden_size);
    let mut dx = d_hidden.to_vec();

    if let Some(dp) = d_pooled {
        let dz: Vec<T> = dp
            .iter()
            .zip(&cache.pooled)
            .map(|(&g, &y)| g * (T::one() - y * y))
            .collect();
        gemm_at_b_acc(&cache.hidden[..h], &dz, 1, h, h, &mut grads.pooler_w.data);
        col_sum_acc(&dz, h, &mut grads.pooler_b.data);
        gemm_a_bt_acc(&dz, &params.pooler_w.data, 1, h, h, &mut dx[..h]);
    }

    for l in (0..c.num_layers).rev() {
        dx = layer_backward(params.layer(l), &cache.layers[l], &dx, c.num_heads, grads.layer_mut(l));
    }

    let mut demb = match (&params.projection, &mut grads.projection) {
        (Some((w, _)), Some((gw, gb))) => {
            gemm_at_b_acc(&cache.emb_out, &dx, n, e, h, &mut gw.data);
            col_sum_acc(&dx, h, &mut gb.data);
            let mut d = vec![T::zero(); n * e];
            gemm_a_bt_acc(&dx, &w.data, n, h, e, &mut d);
            d
        }
        _ => dx,
    };
    apply_mask(&mut demb, &cache.emb_drop);
    let dsum = layer_norm_backward(
        &demb,
        &cache.emb_ln,
        &params.emb_ln_gamma.data,
        &mut grads.emb_ln_gamma.data,
        &mut grads.emb_ln_beta.data,
    );
    let f = &cache.features;
    for i in 0..n {
        let row = &dsum[i * e..(i + 1) * e];
        for (dst, idx) in [
            (&mut grads.token_emb, f.input_ids[i]),
            (&mut grads.position_emb, f.position_ids[i]),
            (&mut grads.segment_emb, f.segment_ids[i]),
        ] {
            for (g, &v) in dst.row_mut(idx as usize).iter_mut().zip(row) {
                *g += v;
            }
        }
    }
}

/// `out (m×n) = x (m×k) · w (k×n)` without bias, used by heads.
pub(crate) fn matmul<T: Scalar>(x: &[T], w: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    gemm_acc(x, w, m, k, n, &mut out);
    out
}
