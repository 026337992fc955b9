//! Desk-scale BERT / ALBERT pretraining and fine-tuning.
//!
//! The crate covers the whole pipeline: WordPiece vocabulary training and
//! encoding, corpus ingestion and statistics, next-sentence pairs with
//! same-paragraph hard negatives, masked-LM example construction, a
//! transformer encoder with analytic gradients, Adam with warm-up and linear
//! decay, deterministic data-parallel training, task heads for fine-tuning,
//! and the evaluation metrics used to score them.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
mod error;
pub mod metrics;
pub mod numeric;
pub mod parallel;
pub mod pretrain_data;
pub mod seed;
pub mod synth;
pub mod tasks;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
