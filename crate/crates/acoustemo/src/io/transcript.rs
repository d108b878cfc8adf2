//! Line-delimited transcript records with explicit field names.
//!
//! One record per line, tab-separated `key=value` fields:
//!
//! ```text
//! dialogue_id=dlg0001 \t index=1 \t t_start=0.70 \t t_end=2.30 \t text=... \t labels=a,b
//! ```
//!
//! `labels` is optional (ground truth, usually on the first record of a
//! dialogue). Text may contain anything but tabs and newlines.

use super::{IoError, Result};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptRecord {
    pub dialogue_id: String,
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub text: String,
    pub labels: Option<Vec<String>>,
}

pub fn write_transcripts(path: &Path, records: &[TranscriptRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "dialogue_id={}\tindex={}\tt_start={:.2}\tt_end={:.2}\ttext={}",
            r.dialogue_id, r.index, r.t_start, r.t_end, r.text
        ));
        if let Some(labels) = &r.labels {
            out.push_str(&format!("\tlabels={}", labels.join(",")));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (li, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| IoError::BadRecord {
            path: path.display().to_string(),
            line: li + 1,
            detail,
        };
        let mut dialogue_id = None;
        let mut index = None;
        let mut t_start = None;
        let mut t_end = None;
        let mut text = None;
        let mut labels = None;
        for field in line.split('\t') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("field without '=': {field:?}")))?;
            match key {
                "dialogue_id" => dialogue_id = Some(value.to_string()),
                "index" => {
                    index = Some(value.parse().map_err(|e| bad(format!("index: {e}")))?)
                }
                "t_start" => {
                    t_start = Some(value.parse().map_err(|e| bad(format!("t_start: {e}")))?)
                }
                "t_end" => t_end = Some(value.parse().map_err(|e| bad(format!("t_end: {e}")))?),
                "text" => text = Some(value.to_string()),
                "labels" => {
                    labels = Some(value.split(',').map(|s| s.trim().to_string()).collect())
                }
                other => return Err(bad(format!("unknown field {other:?}"))),
            }
        }
        let record = TranscriptRecord {
            dialogue_id: dialogue_id.ok_or_else(|| bad("missing dialogue_id".into()))?,
            index: index.ok_or_else(|| bad("missing index".into()))?,
            t_start: t_start.ok_or_else(|| bad("missing t_start".into()))?,
            t_end: t_end.ok_or_else(|| bad("missing t_end".into()))?,
            text: text.ok_or_else(|| bad("missing text".into()))?,
            labels,
        };
        if record.t_start >= record.t_end {
            return Err(bad(format!(
                "t_start {} must be < t_end {}",
                record.t_start, record.t_end
            )));
        }
        records.push(record);
    }
    Ok(records)
}
