//! Learnable-query cross-attention over acoustic segments, plus the parallel
//! global pass and multi-scale concatenation.
//!
//! A fixed set of K query vectors attends to the frames of one segment:
//!
//! ```text
//! out = softmax((Q·W_Q)(segment·W_K)ᵀ / sqrt(d_k)) · (segment·W_V)
//! ```
//!
//! Single head, no positional encoding, no feed-forward sublayers: the
//! attention form is implemented exactly as written, which makes the output
//! permutation-invariant in the frames — embraced and tested as a property.
//! W_K and W_V map the encoder dimension d onto d_model, resolving d ≠
//! d_model; d_k = d_model.

use crate::params::{ParamId, ParamSet, TapeBinding};
use crate::rng::Rng;
use crate::segment::{extract_segments, FrameFeatureSequence, SegmentError, UtteranceSpan};
use crate::tensor::{NodeId, Tape, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QFormerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

pub type Result<T> = std::result::Result<T, QFormerError>;

/// Shape of one Q-Former: K learnable queries of width d_model attending to
/// frames of width d_in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QFormerConfig {
    pub k: usize,
    pub d_in: usize,
    pub d_model: usize,
}

impl QFormerConfig {
    /// Defaults mirroring the reference architecture: 32 query tokens at
    /// hidden size 768.
    pub fn reference(d_in: usize) -> Self {
        QFormerConfig { k: 32, d_in, d_model: 768 }
    }
}

/// Registry handles for one Q-Former's parameters.
#[derive(Clone, Copy, Debug)]
pub struct QFormerHandles {
    pub queries: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub cfg: QFormerConfig,
}

impl QFormerHandles {
    /// Allocate freshly initialized parameters under `prefix.*`. Queries and
    /// projections use zero-mean Gaussians with std 0.02.
    pub fn init(set: &mut ParamSet, prefix: &str, cfg: QFormerConfig, rng: &mut Rng) -> Self {
        let std = 0.02;
        let queries = set.add(
            format!("{prefix}.queries"),
            Tensor::randn(vec![cfg.k, cfg.d_model], std, rng),
            true,
        );
        let w_q = set.add(
            format!("{prefix}.w_q"),
            Tensor::randn(vec![cfg.d_model, cfg.d_model], std, rng),
            true,
        );
        let w_k = set.add(
            format!("{prefix}.w_k"),
            Tensor::randn(vec![cfg.d_in, cfg.d_model], std, rng),
            true,
        );
        let w_v = set.add(
            format!("{prefix}.w_v"),
            Tensor::randn(vec![cfg.d_in, cfg.d_model], std, rng),
            true,
        );
        QFormerHandles { queries, w_q, w_k, w_v, cfg }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.queries, self.w_q, self.w_k, self.w_v]
    }
}

fn check_segment(cfg: &QFormerConfig, segment: &Tensor) -> Result<()> {
    if segment.rows() == 0 {
        return Err(TensorError::EmptySegment("segment has no frames".into()).into());
    }
    if segment.dims().len() != 2 || segment.cols() != cfg.d_in {
        return Err(TensorError::ShapeMismatch {
            op: "qformer_forward",
            detail: format!("segment {:?} vs d_in {}", segment.dims(), cfg.d_in),
        }
        .into());
    }
    Ok(())
}

/// Cross-attention forward on a tape; returns (attention weights K×M,
/// output tokens K×d_model).
pub fn forward_tape_with_attention(
    tape: &mut Tape,
    binding: &mut TapeBinding,
    set: &ParamSet,
    h: &QFormerHandles,
    segment: &Tensor,
) -> Result<(NodeId, NodeId)> {
    check_segment(&h.cfg, segment)?;
    let seg = tape.constant(segment.clone());
    let queries = binding.node(tape, set, h.queries);
    let w_q = binding.node(tape, set, h.w_q);
    let w_k = binding.node(tape, set, h.w_k);
    let w_v = binding.node(tape, set, h.w_v);

    let q_proj = tape.matmul(queries, w_q)?;
    let k_proj = tape.matmul(seg, w_k)?;
    let v_proj = tape.matmul(seg, w_v)?;
    let scores = tape.matmul_nt(q_proj, k_proj)?;
    let scaled = tape.scale(scores, 1.0 / (h.cfg.d_model as f64).sqrt())?;
    let attn = tape.softmax_rows(scaled)?;
    let out = tape.matmul(attn, v_proj)?;
    Ok((attn, out))
}

/// Cross-attention forward on a tape; returns the K×d_model token block.
pub fn forward_tape(
    tape: &mut Tape,
    binding: &mut TapeBinding,
    set: &ParamSet,
    h: &QFormerHandles,
    segment: &Tensor,
) -> Result<NodeId> {
    forward_tape_with_attention(tape, binding, set, h, segment).map(|(_, out)| out)
}

/// Value-level forward for inference and tests.
pub fn forward_value(set: &ParamSet, h: &QFormerHandles, segment: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(set);
    let (_, out) = forward_tape_with_attention(&mut tape, &mut binding, set, h, segment)?;
    Ok(tape.value(out).clone())
}

/// Value-level forward that also returns the attention weights.
pub fn forward_value_with_attention(
    set: &ParamSet,
    h: &QFormerHandles,
    segment: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(set);
    let (attn, out) = forward_tape_with_attention(&mut tape, &mut binding, set, h, segment)?;
    Ok((tape.value(attn).clone(), tape.value(out).clone()))
}

/// Multi-scale token blocks: one optional global block followed by one block
/// per utterance, in utterance order. Total token count is
/// (N + global) · K.
#[derive(Clone, Debug)]
pub struct MultiScaleAcousticTokens {
    pub global_block: Option<Tensor>,
    pub local_blocks: Vec<Tensor>,
    pub utterance_ids: Vec<usize>,
}

impl MultiScaleAcousticTokens {
    pub fn block_count(&self) -> usize {
        self.local_blocks.len() + usize::from(self.global_block.is_some())
    }

    pub fn total_tokens(&self) -> usize {
        self.global_block.as_ref().map_or(0, Tensor::rows)
            + self.local_blocks.iter().map(Tensor::rows).sum::<usize>()
    }

    /// Row-wise concatenation in canonical block order: global first, then
    /// utterances 1..N.
    pub fn flatten(&self) -> Result<Tensor> {
        let mut parts: Vec<&Tensor> = Vec::new();
        if let Some(g) = &self.global_block {
            parts.push(g);
        }
        parts.extend(self.local_blocks.iter());
        Ok(Tensor::concat_rows(&parts)?)
    }

    /// Inverse of `flatten` given the per-block row count K.
    pub fn split(flat: &Tensor, k: usize, has_global: bool, utterance_ids: Vec<usize>) -> Result<Self> {
        let n = utterance_ids.len();
        let expected = (n + usize::from(has_global)) * k;
        if flat.rows() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "MultiScaleAcousticTokens::split",
                detail: format!("{} rows vs expected {expected}", flat.rows()),
            }
            .into());
        }
        let mut row = 0;
        let global_block = if has_global {
            let g = flat.slice_rows(0, k).map_err(TensorError::from)?;
            row = k;
            Some(g)
        } else {
            None
        };
        let mut local_blocks = Vec::with_capacity(n);
        for _ in 0..n {
            local_blocks.push(flat.slice_rows(row, row + k).map_err(TensorError::from)?);
            row += k;
        }
        Ok(MultiScaleAcousticTokens { global_block, local_blocks, utterance_ids })
    }
}

/// Run the global Q-Former over the whole sequence and the shared local
/// Q-Former over each utterance segment. `global` is optional so ablation
/// variants can drop the global path; `local` is optional for the
/// global-only variant.
pub fn encode_dialogue(
    set: &ParamSet,
    local: Option<&QFormerHandles>,
    global: Option<&QFormerHandles>,
    seq: &FrameFeatureSequence,
    spans: &[UtteranceSpan],
) -> Result<MultiScaleAcousticTokens> {
    let global_block = match global {
        Some(g) => Some(forward_value(set, g, &seq.features)?),
        None => None,
    };
    let mut local_blocks = Vec::new();
    let mut utterance_ids = Vec::new();
    if let Some(l) = local {
        for (span, segment) in extract_segments(seq, spans)? {
            local_blocks.push(forward_value(set, l, &segment)?);
            utterance_ids.push(span.index);
        }
    }
    Ok(MultiScaleAcousticTokens { global_block, local_blocks, utterance_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::map_span;
    use crate::tensor::{finite_diff_check, Tensor};

    fn setup(k: usize, d_in: usize, d_model: usize, seed: u64) -> (ParamSet, QFormerHandles) {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(seed);
        let h = QFormerHandles::init(&mut set, "qf", QFormerConfig { k, d_in, d_model }, &mut rng);
        (set, h)
    }

    /// Naive scalar-loop route through the attention equation: every index
    /// spelled out, nothing shared with the tape implementation.
    fn scalar_loop_oracle(set: &ParamSet, h: &QFormerHandles, seg: &Tensor) -> Vec<Vec<f64>> {
        let (k, d_in, dm) = (h.cfg.k, h.cfg.d_in, h.cfg.d_model);
        let m = seg.rows();
        let q = set.get(h.queries);
        let wq = set.get(h.w_q);
        let wk = set.get(h.w_k);
        let wv = set.get(h.w_v);

        let mut q_proj = vec![vec![0.0; dm]; k];
        for i in 0..k {
            for j in 0..dm {
                for p in 0..dm {
                    q_proj[i][j] += q.at(i, p) * wq.at(p, j);
                }
            }
        }
        let mut k_proj = vec![vec![0.0; dm]; m];
        let mut v_proj = vec![vec![0.0; dm]; m];
        for i in 0..m {
            for j in 0..dm {
                for p in 0..d_in {
                    k_proj[i][j] += seg.at(i, p) * wk.at(p, j);
                    v_proj[i][j] += seg.at(i, p) * wv.at(p, j);
                }
            }
        }
        let scale = 1.0 / (dm as f64).sqrt();
        let mut out = vec![vec![0.0; dm]; k];
        for i in 0..k {
            let scores: Vec<f64> = (0..m)
                .map(|j| {
                    let mut s = 0.0;
                    for p in 0..dm {
                        s += q_proj[i][p] * k_proj[j][p];
                    }
                    s * scale
                })
                .collect();
            let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..m {
                let w = exps[j] / z;
                for p in 0..dm {
                    out[i][p] += w * v_proj[j][p];
                }
            }
        }
        out
    }

    #[test]
    fn single_frame_attention_is_exact() {
        let (set, h) = setup(3, 4, 5, 1);
        let mut rng = Rng::seed_from_u64(2);
        let frame = Tensor::randn(vec![1, 4], 1.0, &mut rng);
        let (attn, out) = forward_value_with_attention(&set, &h, &frame).unwrap();
        for i in 0..3 {
            assert_eq!(attn.at(i, 0), 1.0, "softmax over one key is exactly 1");
        }
        // Every output row equals frame · W_V.
        let mut tape = Tape::new();
        let f = tape.constant(frame);
        let wv = tape.constant(set.get(h.w_v).clone());
        let fv = tape.matmul(f, wv).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert!((out.at(i, j) - tape.value(fv).at(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_query_projection_gives_uniform_attention() {
        let (mut set, h) = setup(4, 6, 5, 3);
        set.set_data(h.w_q, vec![0.0; 25]);
        let mut rng = Rng::seed_from_u64(4);
        let seg = Tensor::randn(vec![7, 6], 1.0, &mut rng);
        let (attn, out) = forward_value_with_attention(&set, &h, &seg).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                assert!((attn.at(i, j) - 1.0 / 7.0).abs() < 1e-15, "uniform attention");
            }
        }
        // Output rows are all the column mean of seg · W_V.
        let oracle = scalar_loop_oracle(&set, &h, &seg);
        for i in 0..4 {
            for j in 0..5 {
                assert!((out.at(i, j) - oracle[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let (set, h) = setup(4, 8, 6, 5);
        let mut rng = Rng::seed_from_u64(6);
        let seg = Tensor::randn(vec![5, 8], 1.0, &mut rng);
        let out = forward_value(&set, &h, &seg).unwrap();
        let oracle = scalar_loop_oracle(&set, &h, &seg);
        for i in 0..4 {
            for j in 0..6 {
                assert!(
                    (out.at(i, j) - oracle[i][j]).abs() < 1e-10,
                    "[{i},{j}] {} vs {}",
                    out.at(i, j),
                    oracle[i][j]
                );
            }
        }
    }

    #[test]
    fn rejects_wrong_segment_width() {
        let (set, h) = setup(2, 4, 4, 7);
        let seg = Tensor::zeros(vec![3, 5]);
        assert!(forward_value(&set, &h, &seg).is_err());
    }

    #[test]
    fn attention_rows_are_stochastic_and_outputs_convex() {
        for seed in 0..20u64 {
            let (set, h) = setup(3, 5, 4, 100 + seed);
            let mut rng = Rng::seed_from_u64(200 + seed);
            let m = 2 + rng.below(8);
            let seg = Tensor::randn(vec![m, 5], 1.5, &mut rng);
            let (attn, out) = forward_value_with_attention(&set, &h, &seg).unwrap();
            // Row-stochastic.
            for i in 0..3 {
                let sum: f64 = attn.row(i).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(attn.row(i).iter().all(|&w| w >= 0.0));
            }
            // Convex-combination: each output coordinate inside the range of
            // the corresponding projected-value column.
            let mut tape = Tape::new();
            let s = tape.constant(seg);
            let wv = tape.constant(set.get(h.w_v).clone());
            let vp = tape.matmul(s, wv).unwrap();
            let vproj = tape.value(vp);
            for j in 0..4 {
                let col: Vec<f64> = (0..m).map(|r| vproj.at(r, j)).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min) - 1e-12;
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
                for i in 0..3 {
                    assert!(out.at(i, j) >= lo && out.at(i, j) <= hi, "outside hull");
                }
            }
        }
    }

    #[test]
    fn frame_permutation_leaves_output_unchanged() {
        for seed in 0..20u64 {
            let (set, h) = setup(4, 6, 5, 300 + seed);
            let mut rng = Rng::seed_from_u64(400 + seed);
            let m = 3 + rng.below(6);
            let seg = Tensor::randn(vec![m, 6], 1.0, &mut rng);
            let mut order: Vec<usize> = (0..m).collect();
            rng.shuffle(&mut order);
            let rows: Vec<Vec<f64>> = order.iter().map(|&i| seg.row(i).to_vec()).collect();
            let permuted = Tensor::from_rows(&rows).unwrap();
            let a = forward_value(&set, &h, &seg).unwrap();
            let b = forward_value(&set, &h, &permuted).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9, "permutation sensitivity: {x} vs {y}");
            }
        }
    }

    #[test]
    fn per_row_score_shift_leaves_attention_unchanged() {
        // The equation's softmax ignores a constant added to every score in a
        // row; verified on the raw score matrix.
        let mut rng = Rng::seed_from_u64(9);
        let scores = Tensor::randn(vec![4, 7], 2.0, &mut rng);
        let shifted = Tensor::new(
            vec![4, 7],
            scores.data().iter().map(|v| v + 13.25).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(scores);
        let b = tape.constant(shifted);
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn shared_parameters_accumulate_gradients_across_segments() {
        // Summed loss over several segments through ONE parameter set; the
        // query gradient must match central differences of that summed loss.
        let (set, h) = setup(2, 3, 4, 11);
        let mut rng = Rng::seed_from_u64(12);
        let segments: Vec<Tensor> =
            (0..3).map(|_| Tensor::randn(vec![4, 3], 1.0, &mut rng)).collect();

        let q0 = set.get(h.queries).clone();
        let segs = segments.clone();
        let set_fd = set.clone();
        let err = finite_diff_check(
            move |tape, q_leaf| {
                let mut binding = TapeBinding::new(&set_fd);
                let w_q = binding.node(tape, &set_fd, h.w_q);
                let w_k = binding.node(tape, &set_fd, h.w_k);
                let w_v = binding.node(tape, &set_fd, h.w_v);
                let mut total = None;
                for seg in &segs {
                    let s = tape.constant(seg.clone());
                    let qp = tape.matmul(q_leaf, w_q)?;
                    let kp = tape.matmul(s, w_k)?;
                    let vp = tape.matmul(s, w_v)?;
                    let sc = tape.matmul_nt(qp, kp)?;
                    let sc = tape.scale(sc, 0.5)?;
                    let at = tape.softmax_rows(sc)?;
                    let out = tape.matmul(at, vp)?;
                    let sq = tape.mul(out, out)?;
                    let l = tape.sum(sq)?;
                    total = Some(match total {
                        None => l,
                        Some(t) => tape.add(t, l)?,
                    });
                }
                Ok(total.unwrap())
            },
            &q0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "shared-query gradient err {err}");
    }

    #[test]
    fn full_forward_gradients_match_finite_differences() {
        // Every Q-Former parameter checked against central differences on a
        // K=4, d=8 toy instance with 6 frames.
        let (set, h) = setup(4, 8, 8, 13);
        let mut rng = Rng::seed_from_u64(14);
        let seg = Tensor::randn(vec![6, 8], 1.0, &mut rng);

        for pid in h.param_ids() {
            let x0 = set.get(pid).clone();
            let set_outer = set.clone();
            let seg_c = seg.clone();
            let err = finite_diff_check(
                move |tape, leaf| {
                    // Rebind every param, substituting the probed leaf.
                    let node_for = |tape: &mut Tape, id: ParamId| {
                        if id == pid {
                            leaf
                        } else {
                            tape.constant(set_outer.get(id).clone())
                        }
                    };
                    let q = node_for(tape, h.queries);
                    let wq = node_for(tape, h.w_q);
                    let wk = node_for(tape, h.w_k);
                    let wv = node_for(tape, h.w_v);
                    let s = tape.constant(seg_c.clone());
                    let qp = tape.matmul(q, wq)?;
                    let kp = tape.matmul(s, wk)?;
                    let vp = tape.matmul(s, wv)?;
                    let sc = tape.matmul_nt(qp, kp)?;
                    let sc = tape.scale(sc, 1.0 / (8f64).sqrt())?;
                    let at = tape.softmax_rows(sc)?;
                    let out = tape.matmul(at, vp)?;
                    let sq = tape.mul(out, out)?;
                    tape.sum(sq)
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "param {:?} err {err}", set.name(pid));
        }
    }

    fn dialogue_fixture(n_utts: usize, frames: usize, d: usize) -> (FrameFeatureSequence, Vec<UtteranceSpan>) {
        let mut rng = Rng::seed_from_u64(55);
        let seq = FrameFeatureSequence::new(
            Tensor::randn(vec![frames, d], 1.0, &mut rng),
            50.0,
            "fixture",
        )
        .unwrap();
        let spans = (0..n_utts)
            .map(|i| UtteranceSpan {
                index: i + 1,
                t_start: i as f64 * 2.0 + 0.1,
                t_end: i as f64 * 2.0 + 1.6,
                text: format!("utterance {}", i + 1),
            })
            .collect();
        (seq, spans)
    }

    #[test]
    fn dialogue_with_three_utterances_yields_four_blocks() {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(21);
        let cfg = QFormerConfig { k: 32, d_in: 4, d_model: 8 };
        let local = QFormerHandles::init(&mut set, "local", cfg, &mut rng);
        let global = QFormerHandles::init(&mut set, "global", cfg, &mut rng);
        let (seq, spans) = dialogue_fixture(3, 400, 4);
        let tokens = encode_dialogue(&set, Some(&local), Some(&global), &seq, &spans).unwrap();
        assert_eq!(tokens.block_count(), 4);
        assert_eq!(tokens.total_tokens(), 128);
        assert_eq!(tokens.utterance_ids, vec![1, 2, 3]);
    }

    #[test]
    fn no_transcript_gives_global_only() {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(22);
        let cfg = QFormerConfig { k: 32, d_in: 4, d_model: 8 };
        let local = QFormerHandles::init(&mut set, "local", cfg, &mut rng);
        let global = QFormerHandles::init(&mut set, "global", cfg, &mut rng);
        let (seq, _) = dialogue_fixture(0, 400, 4);
        let tokens = encode_dialogue(&set, Some(&local), Some(&global), &seq, &[]).unwrap();
        assert_eq!(tokens.block_count(), 1);
        assert_eq!(tokens.total_tokens(), 32);
    }

    #[test]
    fn whole_audio_utterance_differs_from_global_under_separate_params() {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(23);
        let cfg = QFormerConfig { k: 8, d_in: 4, d_model: 8 };
        let local = QFormerHandles::init(&mut set, "local", cfg, &mut rng);
        let global = QFormerHandles::init(&mut set, "global", cfg, &mut rng);
        let (seq, _) = dialogue_fixture(0, 200, 4);
        let span = UtteranceSpan { index: 1, t_start: 0.0, t_end: 4.0, text: "all".into() };
        // Exactly the whole sequence: 4.0 s at 50 fps = 200 frames.
        assert_eq!(map_span(&span, 50.0, 200).unwrap().len(), 200);
        let tokens =
            encode_dialogue(&set, Some(&local), Some(&global), &seq, &[span]).unwrap();
        let g = tokens.global_block.as_ref().unwrap();
        let l = &tokens.local_blocks[0];
        let max_diff = g
            .data()
            .iter()
            .zip(l.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-6, "separate parameter sets must disagree on the same input");
    }

    #[test]
    fn flatten_shapes_and_round_trip() {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(24);
        let cfg = QFormerConfig { k: 32, d_in: 4, d_model: 768 };
        let local = QFormerHandles::init(&mut set, "local", cfg, &mut rng);
        let global = QFormerHandles::init(&mut set, "global", cfg, &mut rng);
        let (seq, spans) = dialogue_fixture(2, 400, 4);
        let tokens = encode_dialogue(&set, Some(&local), Some(&global), &seq, &spans).unwrap();
        let flat = tokens.flatten().unwrap();
        assert_eq!(flat.dims(), &[96, 768]);

        let back = MultiScaleAcousticTokens::split(&flat, 32, true, vec![1, 2]).unwrap();
        assert_eq!(back.global_block.as_ref().unwrap(), tokens.global_block.as_ref().unwrap());
        assert_eq!(back.local_blocks, tokens.local_blocks);
    }

    #[test]
    fn flatten_on_single_block_is_identity() {
        let g = Tensor::randn(vec![32, 8], 1.0, &mut Rng::seed_from_u64(25));
        let tokens = MultiScaleAcousticTokens {
            global_block: Some(g.clone()),
            local_blocks: vec![],
            utterance_ids: vec![],
        };
        assert_eq!(tokens.flatten().unwrap(), g);
    }
}
