//! Open-vocabulary emotion list metrics.
//!
//! Generated text is parsed into a label set, both sides are canonicalized
//! through a pluggable synonym map, and set overlap yields Accuracy_S
//! (precision-like) and Recall_S. The reported Avg is their arithmetic mean
//! rounded half away from zero at two decimals — the only rule consistent
//! with the published aggregate of e.g. (54.17, 48.38) → 51.28.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground-truth label set is empty")]
    EmptyGroundTruth,
    #[error("malformed synonym map at line {line}: {detail}")]
    BadSynonymMap { line: usize, detail: String },
}

/// Canonical lowercase labels, deduplicated and order-free.
pub type LabelSet = BTreeSet<String>;

/// Build a label set from raw strings (lowercase, trim, dedupe).
pub fn label_set<I, S>(labels: I) -> LabelSet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    labels
        .into_iter()
        .map(|s| s.as_ref().trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Disjoint groups of labels treated as equivalent. Lookup maps any member to
/// its group's canonical (lexicographically smallest) label.
#[derive(Clone, Debug, Default)]
pub struct SynonymMap {
    canonical: BTreeMap<String, String>,
}

impl SynonymMap {
    pub fn empty() -> Self {
        SynonymMap::default()
    }

    /// Build from groups of equivalent labels. Groups must be disjoint.
    pub fn from_groups<I, G, S>(groups: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut canonical = BTreeMap::new();
        for (gi, group) in groups.into_iter().enumerate() {
            let members = label_set(group);
            let head = match members.iter().next() {
                Some(h) => h.clone(),
                None => continue,
            };
            for m in members {
                if canonical.contains_key(&m) {
                    return Err(EvalError::BadSynonymMap {
                        line: gi + 1,
                        detail: format!("label '{m}' appears in more than one group"),
                    });
                }
                canonical.insert(m, head.clone());
            }
        }
        Ok(SynonymMap { canonical })
    }

    /// Parse the on-disk format: one group per line, comma-separated labels,
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let groups: Vec<Vec<&str>> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').collect())
            .collect();
        SynonymMap::from_groups(groups)
    }

    pub fn canonical(&self, label: &str) -> String {
        let key = label.trim().to_lowercase();
        self.canonical.get(&key).cloned().unwrap_or(key)
    }

    pub fn canonicalize(&self, labels: &LabelSet) -> LabelSet {
        labels.iter().map(|l| self.canonical(l)).collect()
    }
}

/// Outcome of parsing generated text into labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLabels {
    pub labels: LabelSet,
    pub warning: Option<String>,
}

/// Extract a bracketed, comma-separated, quoted label list from generated
/// text, e.g. `['anxious', 'concerned']`. Lenient: anything non-conforming
/// yields an empty set plus a warning instead of an error.
pub fn normalize_labels(raw: &str) -> ParsedLabels {
    let Some(open) = raw.find('[') else {
        return ParsedLabels {
            labels: LabelSet::new(),
            warning: Some(format!("no bracketed list in output: {raw:?}")),
        };
    };
    let Some(close_rel) = raw[open + 1..].find(']') else {
        return ParsedLabels {
            labels: LabelSet::new(),
            warning: Some(format!("unterminated list in output: {raw:?}")),
        };
    };
    let inner = &raw[open + 1..open + 1 + close_rel];
    let labels = label_set(
        inner
            .split(',')
            .map(|part| part.trim().trim_matches(|c| c == '\'' || c == '"')),
    );
    if labels.is_empty() {
        return ParsedLabels {
            labels,
            warning: Some(format!("empty list in output: {raw:?}")),
        };
    }
    ParsedLabels { labels, warning: None }
}

/// Per-sample score pair, in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchScore {
    pub accuracy_s: f64,
    pub recall_s: f64,
}

/// Set-overlap scores after synonym canonicalization. Empty predictions score
/// (0, 0) so parse failures never crash an evaluation run.
pub fn match_score(pred: &LabelSet, gt: &LabelSet, syn: &SynonymMap) -> Result<MatchScore, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let p = syn.canonicalize(pred);
    let g = syn.canonicalize(gt);
    let overlap = p.intersection(&g).count() as f64;
    let accuracy_s = if p.is_empty() { 0.0 } else { 100.0 * overlap / p.len() as f64 };
    let recall_s = 100.0 * overlap / g.len() as f64;
    Ok(MatchScore { accuracy_s, recall_s })
}

/// Round at two decimals, half away from zero. Values are snapped at 1e-6 of
/// a centi-point first so decimal inputs like 51.275 round up even though
/// their binary representation sits a hair below the midpoint.
pub fn round2_half_away(x: f64) -> f64 {
    let centi = x * 100.0;
    let snapped = (centi * 1e6).round() / 1e6;
    let rounded = if snapped >= 0.0 { (snapped + 0.5).floor() } else { (snapped - 0.5).ceil() };
    rounded / 100.0
}

/// Arithmetic mean of the two scores, rounded for reporting.
pub fn avg_score(accuracy_s: f64, recall_s: f64) -> f64 {
    round2_half_away((accuracy_s + recall_s) / 2.0)
}

/// One row of a results table.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub name: String,
    pub accuracy_s: f64,
    pub recall_s: f64,
}

/// Render rows in the published table shape: Model / Avg / Accuracy_S /
/// Recall_S, two decimals, row order as given.
pub fn emit_report(rows: &[ReportRow]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.name.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    out.push_str(&format!("{:<name_w$}  {:>7}  {:>10}  {:>8}\n", "Model", "Avg", "Accuracy_S", "Recall_S"));
    for r in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>7.2}  {:>10.2}  {:>8.2}\n",
            r.name,
            avg_score(r.accuracy_s, r.recall_s),
            round2_half_away(r.accuracy_s),
            round2_half_away(r.recall_s),
        ));
    }
    out
}
