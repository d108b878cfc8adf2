//! Acoustic pathway for utterance-aware open-vocabulary emotion reasoning.
//!
//! The pipeline: frame-level acoustic features are sliced by transcription
//! timestamps, each slice is compressed to a fixed number of tokens by a
//! learnable-query cross-attention module (with a parallel global pass over
//! the whole sequence), and the multi-scale token blocks are fused with a
//! timestamp-aware text prompt into a small causal language model adapted
//! with LoRA. Training, ablation variants, open-vocabulary set metrics, a
//! deterministic synthetic corpus generator, and binary tensor I/O round out
//! the toolkit.
//!
//! Everything runs on an in-crate dense f64 tensor core with reverse-mode
//! differentiation, so every gradient used in training can be (and is)
//! checked against central finite differences.

pub mod eval;
pub mod io;
pub mod lm;
pub mod params;
pub mod qformer;
pub mod rng;
pub mod segment;
pub mod tensor;
pub mod train;

pub use params::{ParamId, ParamSet};
pub use tensor::{Tape, Tensor, TensorError};
