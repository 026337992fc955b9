use rand::Rng as _;

use super::config::ModelConfig;
use crate::numeric::Scalar;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_w: Tensor<T>,
    pub query_b: Tensor<T>,
    pub key_w: Tensor<T>,
    pub key_b: Tensor<T>,
    pub value_w: Tensor<T>,
    pub value_b: Tensor<T>,
    pub attn_out_w: Tensor<T>,
    pub attn_out_b: Tensor<T>,
    pub attn_ln_gamma: Tensor<T>,
    pub attn_ln_beta: Tensor<T>,
    pub ffn_in_w: Tensor<T>,
    pub ffn_in_b: Tensor<T>,
    pub ffn_out_w: Tensor<T>,
    pub ffn_out_b: Tensor<T>,
    pub ffn_ln_gamma: Tensor<T>,
    pub ffn_ln_beta: Tensor<T>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(
            query_w: "attention.query.weight",
            query_b: "attention.query.bias",
            key_w: "attention.key.weight",
            key_b: "attention.key.bias",
            value_w: "attention.value.weight",
            value_b: "attention.value.bias",
            attn_out_w: "attention.output.weight",
            attn_out_b: "attention.output.bias",
            attn_ln_gamma: "attention.ln.gamma",
            attn_ln_beta: "attention.ln.beta",
            ffn_in_w: "ffn.in.weight",
            ffn_in_b: "ffn.in.bias",
            ffn_out_w: "ffn.out.weight",
            ffn_out_b: "ffn.out.bias",
            ffn_ln_gamma: "ffn.ln.gamma",
            ffn_ln_beta: "ffn.ln.beta"
        )
    };
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(h: usize, f: usize) -> Self {
        Self {
            query_w: Tensor::zeros(&[h, h]),
            query_b: Tensor::zeros(&[h]),
            key_w: Tensor::zeros(&[h, h]),
            key_b: Tensor::zeros(&[h]),
            value_w: Tensor::zeros(&[h, h]),
            value_b: Tensor::zeros(&[h]),
            attn_out_w: Tensor::zeros(&[h, h]),
            attn_out_b: Tensor::zeros(&[h]),
            attn_ln_gamma: Tensor::zeros(&[h]),
            attn_ln_beta: Tensor::zeros(&[h]),
            ffn_in_w: Tensor::zeros(&[h, f]),
            ffn_in_b: Tensor::zeros(&[f]),
            ffn_out_w: Tensor::zeros(&[f, h]),
            ffn_out_b: Tensor::zeros(&[h]),
            ffn_ln_gamma: Tensor::zeros(&[h]),
            ffn_ln_beta: Tensor::zeros(&[h]),
        }
    }

    fn tensors(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        macro_rules! list {
            ($($f:ident: $n:literal),*) => { vec![$((format!("{prefix}.{}", $n), &self.$f)),*] };
        }
        layer_fields!(list)
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        macro_rules! list {
            ($($f:ident: $n:literal),*) => { vec![$((format!("{prefix}.{}", $n), &mut self.$f)),*] };
        }
        layer_fields!(list)
    }
}

/// Every trainable array of the encoder and its pretraining heads. The same
/// type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub config: ModelConfig,
    pub token_emb: Tensor<T>,
    pub position_emb: Tensor<T>,
    pub segment_emb: Tensor<T>,
    pub emb_ln_gamma: Tensor<T>,
    pub emb_ln_beta: Tensor<T>,
    /// E→H projection, present only for factorized embeddings.
    pub projection: Option<(Tensor<T>, Tensor<T>)>,
    /// One entry when layers are shared.
    pub layers: Vec<LayerParams<T>>,
    pub pooler_w: Tensor<T>,
    pub pooler_b: Tensor<T>,
    pub mlm_w: Tensor<T>,
    pub mlm_b: Tensor<T>,
    pub mlm_ln_gamma: Tensor<T>,
    pub mlm_ln_beta: Tensor<T>,
    pub mlm_out_b: Tensor<T>,
    pub nsp_w: Tensor<T>,
    pub nsp_b: Tensor<T>,
}

pub type Gradients<T> = ParameterSet<T>;

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, e, h) = (config.vocab_size, config.embedding_size, config.hidden_size);
        Self {
            config: config.clone(),
            token_emb: Tensor::zeros(&[v, e]),
            position_emb: Tensor::zeros(&[config.max_positions, e]),
            segment_emb: Tensor::zeros(&[config.type_vocab_size, e]),
            emb_ln_gamma: Tensor::zeros(&[e]),
            emb_ln_beta: Tensor::zeros(&[e]),
            projection: config
                .factorized()
                .then(|| (Tensor::zeros(&[e, h]), Tensor::zeros(&[h]))),
            layers: (0..config.stored_layers())
                .map(|_| LayerParams::zeros(h, config.intermediate_size))
                .collect(),
            pooler_w: Tensor::zeros(&[h, h]),
            pooler_b: Tensor::zeros(&[h]),
            mlm_w: Tensor::zeros(&[h, e]),
            mlm_b: Tensor::zeros(&[e]),
            mlm_ln_gamma: Tensor::zeros(&[e]),
            mlm_ln_beta: Tensor::zeros(&[e]),
            mlm_out_b: Tensor::zeros(&[v]),
            nsp_w: Tensor::zeros(&[h, 2]),
            nsp_b: Tensor::zeros(&[2]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Layer block used at depth `l`.
    pub fn layer(&self, l: usize) -> &LayerParams<T> {
        &self.layers[l % self.layers.len()]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut LayerParams<T> {
        let n = self.layers.len();
        &mut self.layers[l % n]
    }

    /// Named arrays in storage order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_emb),
            ("embeddings.position".to_string(), &self.position_emb),
            ("embeddings.segment".to_string(), &self.segment_emb),
            ("embeddings.ln.gamma".to_string(), &self.emb_ln_gamma),
            ("embeddings.ln.beta".to_string(), &self.emb_ln_beta),
        ];
        if let Some((w, b)) = &self.projection {
            out.push(("projection.weight".to_string(), w));
            out.push(("projection.bias".to_string(), b));
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors(&format!("layer.{i}")));
        }
        out.extend([
            ("pooler.weight".to_string(), &self.pooler_w),
            ("pooler.bias".to_string(), &self.pooler_b),
            ("mlm.transform.weight".to_string(), &self.mlm_w),
            ("mlm.transform.bias".to_string(), &self.mlm_b),
            ("mlm.ln.gamma".to_string(), &self.mlm_ln_gamma),
            ("mlm.ln.beta".to_string(), &self.mlm_ln_beta),
            ("mlm.output_bias".to_string(), &self.mlm_out_b),
            ("nsp.weight".to_string(), &self.nsp_w),
            ("nsp.bias".to_string(), &self.nsp_b),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &mut self.token_emb),
            ("embeddings.position".to_string(), &mut self.position_emb),
            ("embeddings.segment".to_string(), &mut self.segment_emb),
            ("embeddings.ln.gamma".to_string(), &mut self.emb_ln_gamma),
            ("embeddings.ln.beta".to_string(), &mut self.emb_ln_beta),
        ];
        if let Some((w, b)) = &mut self.projection {
            out.push(("projection.weight".to_string(), w));
            out.push(("projection.bias".to_string(), b));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.tensors_mut(&format!("layer.{i}")));
        }
        out.extend([
            ("pooler.weight".to_string(), &mut self.pooler_w),
            ("pooler.bias".to_string(), &mut self.pooler_b),
            ("mlm.transform.weight".to_string(), &mut self.mlm_w),
            ("mlm.transform.bias".to_string(), &mut self.mlm_b),
            ("mlm.ln.gamma".to_string(), &mut self.mlm_ln_gamma),
            ("mlm.ln.beta".to_string(), &mut self.mlm_ln_beta),
            ("mlm.output_bias".to_string(), &mut self.mlm_out_b),
            ("nsp.weight".to_string(), &mut self.nsp_w),
            ("nsp.bias".to_string(), &mut self.nsp_b),
        ]);
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let mut out = ParameterSet::<U>::zeros(&self.config);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Fails on the first array holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Little-endian bytes of every array in storage order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scalar_count() * T::BYTES);
        for (_, t) in self.tensors() {
            t.data.iter().for_each(|&v| v.write_le(&mut out));
        }
        out
    }
}

/// Standard normal truncated at ±2, by rejection.
pub(crate) fn truncated_normal(rng: &mut seed::Rng) -> f64 {
    loop {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

pub const INIT_STD: f64 = 0.02;

/// Weights ~ truncated normal (std 0.02, cut at two std), biases and
/// layer-norm offsets zero, layer-norm scales one.
pub fn init_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParameterSet<T>> {
    config.validate()?;
    let mut params = ParameterSet::<T>::zeros(config);
    let mut rng = seed::rng(seed);
    for (name, t) in params.tensors_mut() {
        if name.ends_with(".gamma") {
            t.data.iter_mut().for_each(|v| *v = T::one());
        } else if name.ends_with(".beta") || name.ends_with(".bias") || name.ends_with("output_bias") {
            // zero
        } else {
            for v in &mut t.data {
                *v = T::of(truncated_normal(&mut rng) * INIT_STD);
            }
        }
    }
    Ok(params)
}

/// Scalar counts by block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Token, position and segment embeddings plus their layer norm.
    pub embeddings: usize,
    /// Embedding projection (factorized configs) and transformer layers.
    pub layers: usize,
    pub pooler: usize,
    /// Masked-LM transform and output bias, next-sentence classifier.
    pub pretrain_heads: usize,
}

impl ParamCount {
    /// Embeddings and transformer body; the figure usually quoted as model size.
    pub fn encoder(&self) -> usize {
        self.embeddings + self.layers
    }

    pub fn total(&self) -> usize {
        self.embeddings + self.layers + self.pooler + self.pretrain_heads
    }
}

pub fn param_count(config: &ModelConfig) -> ParamCount {
    let (v, e, h, f) = (
        config.vocab_size,
        config.embedding_size,
        config.hidden_size,
        config.intermediate_size,
    );
    let embeddings = v * e + config.max_positions * e + config.type_vocab_size * e + 2 * e;
    let projection = if config.factorized() { e * h + h } else { 0 };
    let attention = 4 * (h * h + h) + 2 * h;
    let ffn = (h * f + f) + (f * h + h) + 2 * h;
    ParamCount {
        embeddings,
        layers: projection + config.stored_layers() * (attention + ffn),
        pooler: h * h + h,
        pretrain_heads: (h * e + e + 2 * e + v) + (2 * h + 2),
    }
}
