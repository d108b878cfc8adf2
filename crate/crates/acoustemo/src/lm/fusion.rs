//! Multimodal block assembly.
//!
//! The canonical sequence order is visual tokens, global acoustic tokens,
//! per-utterance acoustic tokens in utterance order, then text (prompt) ids.
//! The validator rejects anything else. Acoustic blocks may be absent under
//! ablation variants; the visual block may be a zero-stub.

use super::tokenizer::TokenId;
use super::LmError;
use crate::qformer::MultiScaleAcousticTokens;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockTag {
    Visual,
    AcousticGlobal,
    AcousticLocal(usize),
    Text,
}

#[derive(Clone, Debug)]
pub enum BlockBody {
    /// Pre-embedded rows (visual and acoustic paths).
    Embedded(Tensor),
    /// Vocabulary ids, embedded later by the language model.
    TextIds(Vec<TokenId>),
}

#[derive(Clone, Debug)]
pub struct Block {
    pub tag: BlockTag,
    pub body: BlockBody,
}

impl Block {
    pub fn len(&self) -> usize {
        match &self.body {
            BlockBody::Embedded(t) => t.rows(),
            BlockBody::TextIds(ids) => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Validated, ordered multimodal sequence.
#[derive(Clone, Debug)]
pub struct TokenBlockSequence {
    blocks: Vec<Block>,
    total_len: usize,
    max_len: usize,
}

impl TokenBlockSequence {
    /// Validate block order and the length budget.
    ///
    /// Required shape: `Visual`, optional `AcousticGlobal`, zero or more
    /// `AcousticLocal(i)` with strictly increasing i, then exactly one `Text`.
    pub fn new(blocks: Vec<Block>, max_len: usize) -> Result<Self, LmError> {
        let bad = |detail: String| Err(LmError::BadBlockOrder { detail });
        let mut iter = blocks.iter().peekable();
        match iter.next() {
            Some(b) if b.tag == BlockTag::Visual => {}
            other => return bad(format!("first block must be Visual, got {:?}", other.map(|b| &b.tag))),
        }
        if iter.peek().map(|b| &b.tag) == Some(&BlockTag::AcousticGlobal) {
            iter.next();
        }
        let mut last_local = 0usize;
        while let Some(b) = iter.peek() {
            match &b.tag {
                BlockTag::AcousticLocal(i) => {
                    if *i <= last_local {
                        return bad(format!(
                            "local acoustic blocks out of order: {i} after {last_local}"
                        ));
                    }
                    last_local = *i;
                    iter.next();
                }
                _ => break,
            }
        }
        match iter.next() {
            Some(b) if b.tag == BlockTag::Text => {}
            other => return bad(format!("expected Text block, got {:?}", other.map(|b| &b.tag))),
        }
        if let Some(extra) = iter.next() {
            return bad(format!("trailing block after Text: {:?}", extra.tag));
        }

        let total_len: usize = blocks.iter().map(Block::len).sum();
        if total_len > max_len {
            return Err(LmError::LengthBudgetExceeded { len: total_len, max: max_len });
        }
        Ok(TokenBlockSequence { blocks, total_len, max_len })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn text_ids(&self) -> &[TokenId] {
        match &self.blocks.last().unwrap().body {
            BlockBody::TextIds(ids) => ids,
            BlockBody::Embedded(_) => unreachable!("validator guarantees a trailing text block"),
        }
    }

    /// Offset of the text block within the embedded sequence.
    pub fn text_offset(&self) -> usize {
        self.total_len - self.text_ids().len()
    }
}

/// A zero visual block: the stub used when no visual features are ingested.
pub fn visual_stub(rows: usize, d_visual: usize) -> Tensor {
    Tensor::zeros(vec![rows, d_visual])
}

/// Assemble the canonical sequence from a visual block, multi-scale acoustic
/// tokens, and prompt token ids.
pub fn concat_multimodal(
    t_v: Tensor,
    t_a: &MultiScaleAcousticTokens,
    t_lq: Vec<TokenId>,
    max_len: usize,
) -> Result<TokenBlockSequence, LmError> {
    let mut blocks = vec![Block { tag: BlockTag::Visual, body: BlockBody::Embedded(t_v) }];
    if let Some(g) = &t_a.global_block {
        blocks.push(Block { tag: BlockTag::AcousticGlobal, body: BlockBody::Embedded(g.clone()) });
    }
    for (block, &utt) in t_a.local_blocks.iter().zip(&t_a.utterance_ids) {
        blocks.push(Block {
            tag: BlockTag::AcousticLocal(utt),
            body: BlockBody::Embedded(block.clone()),
        });
    }
    blocks.push(Block { tag: BlockTag::Text, body: BlockBody::TextIds(t_lq) });
    TokenBlockSequence::new(blocks, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tokens(n: usize, k: usize, d: usize, with_global: bool) -> MultiScaleAcousticTokens {
        let mut rng = Rng::seed_from_u64(3);
        MultiScaleAcousticTokens {
            global_block: with_global.then(|| Tensor::randn(vec![k, d], 1.0, &mut rng)),
            local_blocks: (0..n).map(|_| Tensor::randn(vec![k, d], 1.0, &mut rng)).collect(),
            utterance_ids: (1..=n).collect(),
        }
    }

    #[test]
    fn sequence_length_is_the_sum_of_blocks() {
        // 8 visual rows + (2+1)·32 acoustic + 20 text = 124.
        let t_a = tokens(2, 32, 768, true);
        let seq = concat_multimodal(visual_stub(8, 768), &t_a, vec![0; 20], 1024).unwrap();
        assert_eq!(seq.total_len(), 124);
        assert_eq!(seq.text_offset(), 104);
    }

    #[test]
    fn zero_stub_visual_block_is_all_zeros() {
        let v = visual_stub(4, 16);
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert_eq!(v.dims(), &[4, 16]);
    }

    #[test]
    fn swapped_blocks_are_rejected() {
        let t_a = tokens(2, 4, 8, true);
        let good = concat_multimodal(visual_stub(2, 8), &t_a, vec![0; 3], 64).unwrap();
        // Rebuild with two blocks swapped: validator must reject.
        let mut blocks = good.blocks().to_vec();
        blocks.swap(1, 2);
        assert!(matches!(
            TokenBlockSequence::new(blocks, 64),
            Err(LmError::BadBlockOrder { .. })
        ));
        // Text anywhere but last is also rejected.
        let mut blocks = good.blocks().to_vec();
        let text = blocks.pop().unwrap();
        blocks.insert(0, text);
        assert!(matches!(
            TokenBlockSequence::new(blocks, 64),
            Err(LmError::BadBlockOrder { .. })
        ));
    }

    #[test]
    fn local_blocks_must_ascend_by_utterance() {
        let mut t_a = tokens(2, 4, 8, false);
        t_a.utterance_ids = vec![2, 1];
        assert!(matches!(
            concat_multimodal(visual_stub(2, 8), &t_a, vec![0; 3], 64),
            Err(LmError::BadBlockOrder { .. })
        ));
    }

    #[test]
    fn budget_overflow_is_reported() {
        let t_a = tokens(1, 4, 8, true);
        assert!(matches!(
            concat_multimodal(visual_stub(2, 8), &t_a, vec![0; 3], 10),
            Err(LmError::LengthBudgetExceeded { len: 13, max: 10 })
        ));
    }

    #[test]
    fn global_block_is_optional_for_ablations() {
        let t_a = tokens(2, 4, 8, false);
        let seq = concat_multimodal(visual_stub(2, 8), &t_a, vec![0; 3], 64).unwrap();
        assert_eq!(seq.blocks().len(), 4); // visual + 2 locals + text
    }
}
