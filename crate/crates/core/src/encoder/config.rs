use std::collections::BTreeMap;

use crate::{Error, Result};

/// Architectural hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of token, position and segment embeddings. Smaller than
    /// `hidden_size` enables the factorized embedding with a projection.
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
    pub type_vocab_size: usize,
    /// One transformer block reused by every layer.
    pub share_layers: bool,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn bert_base(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_size: 768,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            intermediate_size: 3072,
            max_positions: 512,
            type_vocab_size: 2,
            share_layers: false,
            dropout: 0.1,
        }
    }

    pub fn albert_base(vocab_size: usize) -> Self {
        Self {
            embedding_size: 128,
            share_layers: true,
            ..Self::bert_base(vocab_size)
        }
    }

    /// Desk-scale model used by the examples and the test suite.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_size: 32,
            hidden_size: 32,
            num_layers: 2,
            num_heads: 2,
            intermediate_size: 64,
            max_positions: 64,
            type_vocab_size: 2,
            share_layers: false,
            dropout: 0.0,
        }
    }

    pub fn factorized(&self) -> bool {
        self.embedding_size != self.hidden_size
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Distinct layer parameter blocks held in storage.
    pub fn stored_layers(&self) -> usize {
        if self.share_layers {
            self.num_layers.min(1)
        } else {
            self.num_layers
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.embedding_size > self.hidden_size {
            return Err(Error::Config(format!(
                "embedding_size {} exceeds hidden_size {}",
                self.embedding_size, self.hidden_size
            )));
        }
        if self.type_vocab_size != 2 {
            return Err(Error::Config("type_vocab_size must be 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Flat `key=value` rendering, stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("embedding_size".into(), self.embedding_size.to_string()),
            ("hidden_size".into(), self.hidden_size.to_string()),
            ("num_layers".into(), self.num_layers.to_string()),
            ("num_heads".into(), self.num_heads.to_string()),
            ("intermediate_size".into(), self.intermediate_size.to_string()),
            ("max_positions".into(), self.max_positions.to_string()),
            ("type_vocab_size".into(), self.type_vocab_size.to_string()),
            ("share_layers".into(), self.share_layers.to_string()),
            ("dropout".into(), self.dropout.to_string()),
        ]
    }

    /// Applies `key=value` overrides on top of `self`; unknown keys are errors.
    pub fn with_pairs<'a, I>(mut self, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {k}")))
        }
        for (k, v) in pairs {
            match k {
                "vocab_size" => self.vocab_size = num(k, v)?,
                "embedding_size" => self.embedding_size = num(k, v)?,
                "hidden_size" => self.hidden_size = num(k, v)?,
                "num_layers" => self.num_layers = num(k, v)?,
                "num_heads" => self.num_heads = num(k, v)?,
                "intermediate_size" => self.intermediate_size = num(k, v)?,
                "max_positions" => self.max_positions = num(k, v)?,
                "type_vocab_size" => self.type_vocab_size = num(k, v)?,
                "share_layers" => self.share_layers = num(k, v)?,
                "dropout" => self.dropout = num(k, v)?,
                other => return Err(Error::Config(format!("unknown model key '{other}'"))),
            }
        }
        Ok(self)
    }

    /// Field-by-field differences against `other`, for mismatch reports.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let a: BTreeMap<_, _> = self.to_pairs().into_iter().collect();
        let b: BTreeMap<_, _> = other.to_pairs().into_iter().collect();
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {v} != {}", b[k]))
            .collect()
    }
}
