//! Timestamp-aware prompt construction.
//!
//! Each utterance renders as `[i | t_start–t_end] text` (seconds, two
//! decimals), followed by the instruction line. The token stream opens with
//! the `<txt>` sentinel. When the budget is tighter than the full prompt,
//! the earliest utterances are kept and the truncation is flagged.

use super::tokenizer::{TokenId, Vocab};
use super::LmError;
use crate::segment::UtteranceSpan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptMeta {
    pub truncated: bool,
    pub kept_utterances: usize,
}

/// One utterance line of the template.
pub fn utterance_line(span: &UtteranceSpan) -> String {
    format!("[{} | {:.2}\u{2013}{:.2}] {}", span.index, span.t_start, span.t_end, span.text)
}

/// The whole prompt as text (vocabulary-building input).
pub fn prompt_text(utterances: &[UtteranceSpan], instruction: &str) -> String {
    let mut lines: Vec<String> = utterances.iter().map(utterance_line).collect();
    lines.push(instruction.to_string());
    lines.join("\n")
}

/// Tokenized prompt under a token budget. Deterministic; earliest utterances
/// survive truncation and the instruction always stays.
pub fn build_prompt(
    utterances: &[UtteranceSpan],
    instruction: &str,
    vocab: &Vocab,
    budget: usize,
) -> Result<(Vec<TokenId>, PromptMeta), LmError> {
    let instruction_ids = vocab.tokenize(instruction);
    let base = 1 + instruction_ids.len(); // sentinel + instruction
    if base > budget {
        return Err(LmError::VocabularyOverflow { needed: base, budget });
    }
    let mut ids = vec![vocab.text_sentinel_id()];
    let mut kept = 0;
    let mut truncated = false;
    let mut used = base;
    for span in utterances {
        let line_ids = vocab.tokenize(&utterance_line(span));
        if used + line_ids.len() > budget {
            truncated = true;
            break;
        }
        used += line_ids.len();
        ids.extend(line_ids);
        kept += 1;
    }
    ids.extend(instruction_ids);
    Ok((ids, PromptMeta { truncated, kept_utterances: kept }))
}
