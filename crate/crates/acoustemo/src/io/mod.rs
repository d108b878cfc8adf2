//! File formats and the synthetic corpus generator.
//!
//! Everything here is bit-exact and deterministic: the named-tensor binary
//! container, line-delimited transcripts and manifests with explicit field
//! names, and the seeded tremor corpus.

mod manifest;
mod synth;
mod tensorfile;
mod transcript;

pub use manifest::{read_manifest, write_manifest, ManifestEntry, Split};
pub use synth::{synth_generate, GenerationSummary, SynthSpec};
pub use tensorfile::{read_tensor_file, write_tensor_file};
pub use transcript::{read_transcripts, write_transcripts, TranscriptRecord};

use crate::eval::LabelSet;
use crate::segment::{map_span, validate_spans, FrameFeatureSequence, UtteranceSpan};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected \"ACEM\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor file version {version}")]
    VersionUnsupported { version: u32 },
    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },
    #[error("invalid entry at byte offset {offset}: {detail}")]
    InvalidEntry { offset: usize, detail: String },
    #[error("{path}:{line}: {detail}")]
    BadRecord { path: String, line: usize, detail: String },
    #[error("dialogue {dialogue_id:?} not found")]
    MissingDialogue { dialogue_id: String },
    #[error("invariant violation at {location}: {detail}")]
    InvariantViolation { location: String, detail: String },
    #[error("invalid synthesis spec: {detail}")]
    SpecInvalid { detail: String },
    #[error("generation-time statistical check failed: {detail}")]
    GenerationCheck { detail: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

/// A fully assembled, invariant-checked dialogue.
#[derive(Clone, Debug)]
pub struct DialogueData {
    pub dialogue_id: String,
    pub seq: FrameFeatureSequence,
    pub spans: Vec<UtteranceSpan>,
    pub gt_labels: LabelSet,
    /// True when any utterance ran past the audio and was clamped.
    pub clamped: bool,
}

/// Load one dialogue: features from the binary container, utterances and
/// ground-truth labels from the transcript file. Utterance times are
/// validated against the audio duration under the clamp-with-flag policy.
pub fn load_dialogue(
    transcript_path: &Path,
    feature_path: &Path,
    dialogue_id: &str,
) -> Result<DialogueData> {
    let records = read_transcripts(transcript_path)?;
    let mine: Vec<&TranscriptRecord> =
        records.iter().filter(|r| r.dialogue_id == dialogue_id).collect();

    let entries = read_tensor_file(feature_path)?;
    let features = entries
        .iter()
        .find(|(name, _)| name == "features")
        .map(|(_, t)| t.clone())
        .ok_or_else(|| IoError::InvalidEntry {
            offset: 0,
            detail: format!("{}: no \"features\" tensor", feature_path.display()),
        })?;
    let f_s = entries
        .iter()
        .find(|(name, _)| name == "f_s")
        .map(|(_, t)| t.item())
        .ok_or_else(|| IoError::InvalidEntry {
            offset: 0,
            detail: format!("{}: no \"f_s\" tensor", feature_path.display()),
        })?;
    let seq = FrameFeatureSequence::new(features, f_s, dialogue_id).map_err(|e| {
        IoError::InvariantViolation { location: feature_path.display().to_string(), detail: e.to_string() }
    })?;

    let mut spans = Vec::new();
    let mut gt_labels = LabelSet::new();
    for r in &mine {
        spans.push(UtteranceSpan {
            index: r.index,
            t_start: r.t_start,
            t_end: r.t_end,
            text: r.text.clone(),
        });
        if let Some(labels) = &r.labels {
            gt_labels.extend(labels.iter().cloned());
        }
    }
    // Transcripts may exist with zero utterances for a dialogue only if the
    // dialogue id never appears; that is a missing dialogue.
    if mine.is_empty() {
        return Err(IoError::MissingDialogue { dialogue_id: dialogue_id.to_string() });
    }
    validate_spans(&spans).map_err(|e| IoError::InvariantViolation {
        location: format!("{}:{}", transcript_path.display(), dialogue_id),
        detail: e.to_string(),
    })?;

    let mut clamped = false;
    for span in &spans {
        let fs = map_span(span, seq.f_s, seq.frames()).map_err(|e| IoError::InvariantViolation {
            location: format!("{dialogue_id} utterance {}", span.index),
            detail: e.to_string(),
        })?;
        clamped |= fs.clamped;
    }

    Ok(DialogueData { dialogue_id: dialogue_id.to_string(), seq, spans, gt_labels, clamped })
}
