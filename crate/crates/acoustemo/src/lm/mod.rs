//! Small causal language model with LoRA adapters, fusing multimodal token
//! blocks with a timestamp-aware prompt.
//!
//! The stack: token/position embeddings, `n_layers` of single-head causal
//! self-attention plus a GELU feed-forward (residual connections, no
//! normalization layers, no biases), and an untied output projection. The
//! base weights are frozen; LoRA wraps the attention query and value
//! projections (rank 8, alpha 16 by default). Trainable entry points into
//! the frozen model are the modality projections and the LoRA pairs.
//!
//! The loss is causal cross-entropy summed over answer positions only;
//! prompt and multimodal positions never contribute terms.

mod fusion;
mod lora;
mod prompt;
mod tokenizer;

pub use fusion::{concat_multimodal, visual_stub, Block, BlockBody, BlockTag, TokenBlockSequence};
pub use lora::LoraAdapter;
pub use prompt::{build_prompt, prompt_text, utterance_line, PromptMeta};
pub use tokenizer::{TokenId, Vocab, EOS, SPECIALS, TEXT_SENTINEL, UNK};

use crate::params::{ParamId, ParamSet, TapeBinding};
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("prompt needs {needed} tokens but the budget is {budget}")]
    VocabularyOverflow { needed: usize, budget: usize },
    #[error("sequence length {len} exceeds the {max}-token budget")]
    LengthBudgetExceeded { len: usize, max: usize },
    #[error("answer must contain at least one token")]
    EmptyAnswer,
    #[error("LoRA rank {rank} outside 1..={min_dim}")]
    RankTooLarge { rank: usize, min_dim: usize },
    #[error("invalid block order: {detail}")]
    BadBlockOrder { detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Model shape. `d_visual` / `d_acoustic` are the incoming block widths the
/// trainable projections map onto `d_model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub d_visual: usize,
    pub d_acoustic: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Output projection is a separate matrix from the embedding table.
    pub tied_embeddings: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d_model: 64,
            n_layers: 2,
            d_ff: 128,
            max_seq: 1024,
            d_visual: 16,
            d_acoustic: 32,
            lora_rank: 8,
            lora_alpha: 16.0,
            tied_embeddings: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerHandles {
    pub wq: LoraAdapter,
    pub wk: ParamId,
    pub wv: LoraAdapter,
    pub wo: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
}

#[derive(Clone, Debug)]
pub struct TinyCausalLM {
    pub cfg: LmConfig,
    pub vocab: Vocab,
    pub embed: ParamId,
    pub pos: ParamId,
    pub layers: Vec<LayerHandles>,
    pub w_out: ParamId,
    /// Trainable projections from block width onto d_model.
    pub proj_visual: ParamId,
    pub proj_acoustic: ParamId,
}

impl TinyCausalLM {
    /// Register a freshly initialized model. Base weights (embeddings,
    /// positions, attention, feed-forward, output projection) are frozen;
    /// LoRA pairs and the modality projections are trainable.
    pub fn init(
        set: &mut ParamSet,
        vocab: Vocab,
        cfg: LmConfig,
        rng: &mut Rng,
    ) -> Result<Self, LmError> {
        let std = 0.02;
        let d = cfg.d_model;
        let v = vocab.len();
        let embed = set.add("lm.embed", Tensor::randn(vec![v, d], std, rng), false);
        let pos = set.add("lm.pos", Tensor::randn(vec![cfg.max_seq, d], std, rng), false);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("lm.layer{l}");
            let wq_base = set.add(format!("{p}.wq"), Tensor::randn(vec![d, d], std, rng), false);
            let wk = set.add(format!("{p}.wk"), Tensor::randn(vec![d, d], std, rng), false);
            let wv_base = set.add(format!("{p}.wv"), Tensor::randn(vec![d, d], std, rng), false);
            let wo = set.add(format!("{p}.wo"), Tensor::randn(vec![d, d], std, rng), false);
            let w1 = set.add(format!("{p}.w1"), Tensor::randn(vec![cfg.d_ff, d], std, rng), false);
            let w2 = set.add(format!("{p}.w2"), Tensor::randn(vec![d, cfg.d_ff], std, rng), false);
            let wq = LoraAdapter::wrap(set, wq_base, cfg.lora_rank, cfg.lora_alpha, rng)?;
            let wv = LoraAdapter::wrap(set, wv_base, cfg.lora_rank, cfg.lora_alpha, rng)?;
            layers.push(LayerHandles { wq, wk, wv, wo, w1, w2 });
        }
        let w_out = set.add("lm.w_out", Tensor::randn(vec![v, d], std, rng), false);
        // Scale-matched init: incoming blocks are roughly unit-scale mixtures,
        // and 1/sqrt(d_in) keeps their projected rows comparable to the token
        // embeddings so the acoustic signal is not drowned at initialization.
        let proj_visual = set.add(
            "proj.visual",
            Tensor::randn(vec![d, cfg.d_visual], (cfg.d_visual as f64).powf(-0.5), rng),
            true,
        );
        let proj_acoustic = set.add(
            "proj.acoustic",
            Tensor::randn(vec![d, cfg.d_acoustic], (cfg.d_acoustic as f64).powf(-0.5), rng),
            true,
        );
        Ok(TinyCausalLM { cfg, vocab, embed, pos, layers, w_out, proj_visual, proj_acoustic })
    }

    /// Strictly-lower-triangular-inclusive mask: position t sees positions
    /// <= t. Blocked entries get a large negative score (finite, so the
    /// softmax path stays NaN-free).
    pub fn causal_mask(t: usize) -> Tensor {
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            for j in (i + 1)..t {
                data[i * t + j] = -1e30;
            }
        }
        Tensor::new(vec![t, t], data).expect("mask is finite")
    }

    /// Embed the multimodal blocks and text ids into one (T×d_model) matrix
    /// with positions added. Acoustic blocks arrive as tape nodes so the
    /// gradient path back into the token encoder stays connected.
    pub fn embed_sequence(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        set: &ParamSet,
        visual: &Tensor,
        acoustic_nodes: &[NodeId],
        text_ids: &[TokenId],
    ) -> Result<NodeId, LmError> {
        let total = visual.rows()
            + acoustic_nodes.iter().map(|&n| tape.value(n).rows()).sum::<usize>()
            + text_ids.len();
        if total > self.cfg.max_seq {
            return Err(LmError::LengthBudgetExceeded { len: total, max: self.cfg.max_seq });
        }

        let mut parts = Vec::with_capacity(acoustic_nodes.len() + 2);
        let v = tape.constant(visual.clone());
        let pv = binding.node(tape, set, self.proj_visual);
        parts.push(tape.matmul_nt(v, pv)?);
        let pa = binding.node(tape, set, self.proj_acoustic);
        for &node in acoustic_nodes {
            parts.push(tape.matmul_nt(node, pa)?);
        }
        let table = binding.node(tape, set, self.embed);
        parts.push(tape.embed_rows(table, text_ids.to_vec())?);
        let x = tape.concat_rows(&parts)?;

        let pos_rows = set.get(self.pos).slice_rows(0, total)?;
        let pos = tape.constant(pos_rows);
        Ok(tape.add(x, pos)?)
    }

    /// Run the transformer stack over an embedded (T×d_model) sequence.
    pub fn hidden_states(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        set: &ParamSet,
        x: NodeId,
    ) -> Result<NodeId, LmError> {
        let t = tape.value(x).rows();
        let mask = tape.constant(Self::causal_mask(t));
        let scale = 1.0 / (self.cfg.d_model as f64).sqrt();
        let mut h = x;
        for layer in &self.layers {
            let q = layer.wq.forward(tape, binding, set, h)?;
            let wk = binding.node(tape, set, layer.wk);
            let k = tape.matmul_nt(h, wk)?;
            let v = layer.wv.forward(tape, binding, set, h)?;
            let scores = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(scores, scale)?;
            let masked = tape.add(scaled, mask)?;
            let attn = tape.softmax_rows(masked)?;
            let ctx = tape.matmul(attn, v)?;
            let wo = binding.node(tape, set, layer.wo);
            let attn_out = tape.matmul_nt(ctx, wo)?;
            h = tape.add(h, attn_out)?;

            let w1 = binding.node(tape, set, layer.w1);
            let pre = tape.matmul_nt(h, w1)?;
            let act = tape.gelu(pre)?;
            let w2 = binding.node(tape, set, layer.w2);
            let ffn_out = tape.matmul_nt(act, w2)?;
            h = tape.add(h, ffn_out)?;
        }
        Ok(h)
    }

    /// Causal LM loss on a tape: cross-entropy summed over answer tokens,
    /// conditioned on all multimodal blocks, the prompt, and earlier answer
    /// tokens. Returns the scalar loss node.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        set: &ParamSet,
        visual: &Tensor,
        acoustic_nodes: &[NodeId],
        prompt_ids: &[TokenId],
        answer_ids: &[TokenId],
    ) -> Result<NodeId, LmError> {
        if answer_ids.is_empty() {
            return Err(LmError::EmptyAnswer);
        }
        let mut text_ids = prompt_ids.to_vec();
        text_ids.extend_from_slice(answer_ids);
        let x = self.embed_sequence(tape, binding, set, visual, acoustic_nodes, &text_ids)?;
        let h = self.hidden_states(tape, binding, set, x)?;
        let total = tape.value(h).rows();
        let n = answer_ids.len();
        let ans_start = total - n;
        // Position p predicts token p+1: logits come from rows
        // ans_start-1 .. ans_start+n-1.
        let h_ans = tape.slice_rows(h, ans_start - 1, ans_start + n - 1)?;
        let w_out = binding.node(tape, set, self.w_out);
        let logits = tape.matmul_nt(h_ans, w_out)?;
        Ok(tape.cross_entropy_sum(logits, answer_ids.to_vec())?)
    }

    /// Value-level loss over an assembled block sequence (acoustic blocks as
    /// plain values; no gradients).
    pub fn lm_loss(
        &self,
        set: &ParamSet,
        seq: &TokenBlockSequence,
        answer_ids: &[TokenId],
    ) -> Result<f64, LmError> {
        let terms = self.answer_loss_terms(set, seq, answer_ids)?;
        Ok(terms.iter().sum())
    }

    /// Per-answer-position loss terms (the summands of the training loss),
    /// for causality checks and diagnostics.
    pub fn answer_loss_terms(
        &self,
        set: &ParamSet,
        seq: &TokenBlockSequence,
        answer_ids: &[TokenId],
    ) -> Result<Vec<f64>, LmError> {
        if answer_ids.is_empty() {
            return Err(LmError::EmptyAnswer);
        }
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(set);
        let (visual, acoustic_nodes, prompt_ids) = split_blocks(&mut tape, seq)?;
        let mut text_ids = prompt_ids.to_vec();
        text_ids.extend_from_slice(answer_ids);
        let x =
            self.embed_sequence(&mut tape, &mut binding, set, &visual, &acoustic_nodes, &text_ids)?;
        let h = self.hidden_states(&mut tape, &mut binding, set, x)?;
        let total = tape.value(h).rows();
        let n = answer_ids.len();
        let ans_start = total - n;
        let h_ans = tape.slice_rows(h, ans_start - 1, ans_start + n - 1)?;
        let w_out = binding.node(&mut tape, set, self.w_out);
        let logits = tape.matmul_nt(h_ans, w_out)?;
        let lv = tape.value(logits);
        let mut terms = Vec::with_capacity(n);
        for (t, &y) in answer_ids.iter().enumerate() {
            let row = lv.row(t);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            terms.push(lse - row[y]);
        }
        Ok(terms)
    }

    /// Greedy decoding from an assembled prompt sequence: repeatedly take the
    /// argmax next token (ties to the lowest id) until `<eos>` or `max_new`.
    pub fn generate(
        &self,
        set: &ParamSet,
        seq: &TokenBlockSequence,
        max_new: usize,
    ) -> Result<String, LmError> {
        let mut generated: Vec<TokenId> = Vec::new();
        let eos = self.vocab.eos_id();
        for _ in 0..max_new {
            let mut tape = Tape::new();
            let mut binding = TapeBinding::new(set);
            let (visual, acoustic_nodes, prompt_ids) = split_blocks(&mut tape, seq)?;
            let mut text_ids = prompt_ids.to_vec();
            text_ids.extend_from_slice(&generated);
            let x = self.embed_sequence(
                &mut tape,
                &mut binding,
                set,
                &visual,
                &acoustic_nodes,
                &text_ids,
            )?;
            let h = self.hidden_states(&mut tape, &mut binding, set, x)?;
            let total = tape.value(h).rows();
            let last = tape.slice_rows(h, total - 1, total)?;
            let w_out = binding.node(&mut tape, set, self.w_out);
            let logits = tape.matmul_nt(last, w_out)?;
            let row = tape.value(logits).row(0);
            let next = row
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap();
            if Some(next) == eos {
                break;
            }
            generated.push(next);
        }
        Ok(self.vocab.detokenize(&generated))
    }

    /// Ids of the frozen base parameters (for freeze-contract fingerprints).
    pub fn frozen_base_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed, self.pos, self.w_out];
        for l in &self.layers {
            ids.extend([l.wq.base, l.wk, l.wv.base, l.wo, l.w1, l.w2]);
        }
        ids
    }

    /// Trainable LoRA pair ids in layer order.
    pub fn lora_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.wq.a, l.wq.b, l.wv.a, l.wv.b]).collect()
    }
}

/// Decompose a validated block sequence into the visual block, acoustic
/// value nodes, and prompt ids.
fn split_blocks(
    tape: &mut Tape,
    seq: &TokenBlockSequence,
) -> Result<(Tensor, Vec<NodeId>, Vec<TokenId>), LmError> {
    let mut visual = None;
    let mut acoustic = Vec::new();
    let mut text = Vec::new();
    for block in seq.blocks() {
        match (&block.tag, &block.body) {
            (BlockTag::Visual, BlockBody::Embedded(t)) => visual = Some(t.clone()),
            (BlockTag::AcousticGlobal | BlockTag::AcousticLocal(_), BlockBody::Embedded(t)) => {
                acoustic.push(tape.constant(t.clone()));
            }
            (BlockTag::Text, BlockBody::TextIds(ids)) => text = ids.clone(),
            (tag, _) => {
                return Err(LmError::BadBlockOrder { detail: format!("malformed block {tag:?}") })
            }
        }
    }
    Ok((visual.expect("validator guarantees a visual block"), acoustic, text))
}
