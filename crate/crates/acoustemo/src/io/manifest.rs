//! Corpus manifest: dialogue ids, file paths, and split assignment.
//!
//! Same line-delimited `key=value` shape as transcripts. Paths are stored
//! relative to the manifest's directory.

use super::{IoError, Result};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub dialogue_id: String,
    pub split: Split,
    /// Feature container path, relative to the manifest directory.
    pub features: PathBuf,
    /// Transcript file path, relative to the manifest directory.
    pub transcript: PathBuf,
}

impl ManifestEntry {
    pub fn features_abs(&self, manifest_path: &Path) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&self.features)
    }

    pub fn transcript_abs(&self, manifest_path: &Path) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&self.transcript)
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "dialogue_id={}\tsplit={}\tfeatures={}\ttranscript={}\n",
            e.dialogue_id,
            e.split.as_str(),
            e.features.display(),
            e.transcript.display()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let content = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
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
        let mut split = None;
        let mut features = None;
        let mut transcript = None;
        for field in line.split('\t') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("field without '=': {field:?}")))?;
            match key {
                "dialogue_id" => dialogue_id = Some(value.to_string()),
                "split" => {
                    split = Some(match value {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        other => return Err(bad(format!("unknown split {other:?}"))),
                    })
                }
                "features" => features = Some(PathBuf::from(value)),
                "transcript" => transcript = Some(PathBuf::from(value)),
                other => return Err(bad(format!("unknown field {other:?}"))),
            }
        }
        entries.push(ManifestEntry {
            dialogue_id: dialogue_id.ok_or_else(|| bad("missing dialogue_id".into()))?,
            split: split.ok_or_else(|| bad("missing split".into()))?,
            features: features.ok_or_else(|| bad("missing features".into()))?,
            transcript: transcript.ok_or_else(|| bad("missing transcript".into()))?,
        });
    }
    Ok(entries)
}
