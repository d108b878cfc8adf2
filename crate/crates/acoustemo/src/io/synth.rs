//! Deterministic synthetic tremor corpus.
//!
//! Each dialogue is zero-mean Gaussian frame noise scaled by a per-dialogue
//! gain; half the dialogues additionally carry a variance burst strictly
//! inside one utterance and are labeled accordingly. Dialogues come in twins:
//! a burst dialogue shares its clean twin's layout, texts, gain and base
//! noise, and differs only inside the burst window, where deviations from the
//! window mean are scaled by the multiplier. The scaling is mean-preserving
//! per dimension, so the two classes have identical global feature means by
//! construction — mean pooling carries no label signal, local variance does.
//!
//! The per-dialogue gain is a nuisance: judging "is this utterance's variance
//! high?" requires a reference (the global pass, or sibling utterances),
//! which is exactly the contrast the ablation grid measures.
//!
//! Utterance boundaries are nudged off the 2-second grid so the fixed-window
//! baseline never aligns with them.

use super::{
    write_manifest, write_tensor_file, write_transcripts, IoError, ManifestEntry, Result, Split,
    TranscriptRecord,
};
use crate::rng::Rng;
use crate::segment::frame_scale;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// Parameters of the generator. Times are seconds, the multiplier scales the
/// standard deviation inside the burst window (variance ratio = multiplier²).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_dialogues: usize,
    pub f_s: f64,
    pub d: usize,
    pub utt_count_min: usize,
    pub utt_count_max: usize,
    pub utt_dur_min: f64,
    pub utt_dur_max: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub lead_min: f64,
    pub lead_max: f64,
    pub tail_min: f64,
    pub tail_max: f64,
    pub burst_seconds: f64,
    pub variance_multiplier: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub labels_burst: Vec<String>,
    pub labels_clean: Vec<String>,
    pub train_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_dialogues: 200,
            f_s: 50.0,
            d: 64,
            utt_count_min: 1,
            utt_count_max: 3,
            utt_dur_min: 1.5,
            utt_dur_max: 2.6,
            gap_min: 0.8,
            gap_max: 2.2,
            lead_min: 0.8,
            lead_max: 2.2,
            tail_min: 0.8,
            tail_max: 2.2,
            burst_seconds: 1.2,
            variance_multiplier: 2.0,
            gain_min: 0.7,
            gain_max: 1.4,
            labels_burst: vec!["anxious".into(), "concerned".into()],
            labels_clean: vec!["calm".into(), "neutral".into()],
            train_fraction: 0.8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: &str| Err(IoError::SpecInvalid { detail: detail.to_string() });
        if self.n_dialogues < 2 || self.n_dialogues % 2 != 0 {
            return fail("n_dialogues must be an even number >= 2 (dialogues come in burst/clean twins)");
        }
        if self.f_s <= 0.0 || self.d == 0 {
            return fail("f_s must be positive and d >= 1");
        }
        if self.utt_count_min == 0 || self.utt_count_min > self.utt_count_max {
            return fail("utterance count range must satisfy 1 <= min <= max");
        }
        if !(self.utt_dur_min > 0.0 && self.utt_dur_min <= self.utt_dur_max) {
            return fail("utterance duration range must satisfy 0 < min <= max");
        }
        if self.gap_min < 0.0 || self.gap_min > self.gap_max {
            return fail("gap range must satisfy 0 <= min <= max");
        }
        if !(self.burst_seconds > 0.0 && self.burst_seconds + 0.2 <= self.utt_dur_min) {
            return fail("burst must fit strictly inside the shortest utterance (burst + 0.2 <= utt_dur_min)");
        }
        if self.variance_multiplier <= 1.0 {
            return fail("variance_multiplier must exceed 1");
        }
        if !(self.gain_min > 0.0 && self.gain_min <= self.gain_max) {
            return fail("gain range must satisfy 0 < min <= max");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must be in (0, 1)");
        }
        if self.labels_burst.is_empty() || self.labels_clean.is_empty() {
            return fail("label lists must be non-empty");
        }
        Ok(())
    }

    /// Parse the flat `key=value` spec file. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (li, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| IoError::BadRecord {
                path: "<synth spec>".into(),
                line: li + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
            let parse_u = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "seed" => spec.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                "n_dialogues" => spec.n_dialogues = parse_u(value)?,
                "f_s" => spec.f_s = parse_f(value)?,
                "d" => spec.d = parse_u(value)?,
                "utt_count_min" => spec.utt_count_min = parse_u(value)?,
                "utt_count_max" => spec.utt_count_max = parse_u(value)?,
                "utt_dur_min" => spec.utt_dur_min = parse_f(value)?,
                "utt_dur_max" => spec.utt_dur_max = parse_f(value)?,
                "gap_min" => spec.gap_min = parse_f(value)?,
                "gap_max" => spec.gap_max = parse_f(value)?,
                "lead_min" => spec.lead_min = parse_f(value)?,
                "lead_max" => spec.lead_max = parse_f(value)?,
                "tail_min" => spec.tail_min = parse_f(value)?,
                "tail_max" => spec.tail_max = parse_f(value)?,
                "burst_seconds" => spec.burst_seconds = parse_f(value)?,
                "variance_multiplier" => spec.variance_multiplier = parse_f(value)?,
                "gain_min" => spec.gain_min = parse_f(value)?,
                "gain_max" => spec.gain_max = parse_f(value)?,
                "labels_burst" => {
                    spec.labels_burst = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "labels_clean" => {
                    spec.labels_clean = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "train_fraction" => spec.train_fraction = parse_f(value)?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(spec)
    }
}

/// Statistics gathered while generating, for the summary line and the
/// built-in sanity checks.
#[derive(Clone, Debug)]
pub struct GenerationSummary {
    pub n_dialogues: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub manifest_path: PathBuf,
    /// |class mean difference| in units of its standard error.
    pub class_mean_diff_se: f64,
    /// Smallest within-dialogue burst/background variance ratio.
    pub min_burst_variance_ratio: f64,
}

/// Salt separating the split-shuffle stream from per-pair noise streams.
const SPLIT_SALT: u64 = 0x5711;

const NEUTRAL_PHRASES: &[&str] = &[
    "it's fine i just don't know what to do",
    "the meeting ran a little long today",
    "we can talk about it later if you want",
    "i picked up groceries on the way home",
    "the weather has been steady all week",
    "she said the report is nearly finished",
    "let me check the calendar for that date",
    "the train was on time this morning",
    "i left the documents on your desk",
    "they repainted the hallway last month",
    "the printer needs more paper again",
    "we should confirm the room booking",
];

/// Distance from the 2-second window grid.
fn grid_distance(t: f64) -> f64 {
    let m = t.rem_euclid(2.0);
    m.min(2.0 - m)
}

/// Round to 2 decimals (transcript precision), then nudge forward until the
/// boundary is at least 50 ms away from the fixed-window grid.
fn off_grid(t: f64) -> f64 {
    let mut t = (t * 100.0).round() / 100.0;
    while grid_distance(t) < 0.05 {
        t = ((t + 0.07) * 100.0).round() / 100.0;
    }
    t
}

struct DialogueLayout {
    utterances: Vec<(f64, f64, String)>,
    total_seconds: f64,
    burst_start: f64,
    gain: f64,
}

fn layout_pair(spec: &SynthSpec, rng: &mut Rng) -> DialogueLayout {
    let n_utt = spec.utt_count_min + rng.below(spec.utt_count_max - spec.utt_count_min + 1);
    let mut utterances = Vec::with_capacity(n_utt);
    let mut cursor = rng.uniform(spec.lead_min, spec.lead_max);
    for _ in 0..n_utt {
        let start = off_grid(cursor);
        let dur = rng.uniform(spec.utt_dur_min, spec.utt_dur_max);
        let end = off_grid(start + dur);
        let text = NEUTRAL_PHRASES[rng.below(NEUTRAL_PHRASES.len())].to_string();
        utterances.push((start, end, text));
        cursor = end + rng.uniform(spec.gap_min, spec.gap_max);
    }
    let total_seconds = utterances.last().unwrap().1 + rng.uniform(spec.tail_min, spec.tail_max);
    let (ts, te, _) = utterances[rng.below(n_utt)];
    // 60 ms margin keeps the burst frames strictly inside the utterance span
    // even after 2-decimal rounding.
    let b0 = rng.uniform(ts + 0.06, te - spec.burst_seconds - 0.06);
    let burst_start = (b0 * 100.0).round() / 100.0;
    let gain = rng.uniform(spec.gain_min, spec.gain_max);
    DialogueLayout { utterances, total_seconds, burst_start, gain }
}

/// Welford-free two-pass variance, averaged over dimensions.
fn mean_variance(rows: &[usize], data: &[f64], d: usize) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean: f64 = rows.iter().map(|&r| data[r * d + k]).sum::<f64>() / n;
        let var: f64 =
            rows.iter().map(|&r| (data[r * d + k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        total += var;
    }
    total / d as f64
}

/// Generate the corpus into `out_dir`: per-dialogue feature containers, one
/// transcript file, and a manifest with the seeded 80/20 split. Byte-identical
/// for identical specs.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<GenerationSummary> {
    spec.validate()?;
    let features_dir = out_dir.join("features");
    std::fs::create_dir_all(&features_dir)?;

    let n_pairs = spec.n_dialogues / 2;
    let mut records = Vec::new();
    let mut ids = Vec::with_capacity(spec.n_dialogues);
    let mut min_ratio = f64::INFINITY;

    // Class-mean accumulators (sum, sum of squares, count) per class.
    let mut acc = [[0.0f64; 3]; 2];

    for p in 0..n_pairs {
        let mut rng = Rng::derive(spec.seed, 0x1000_0000 + p as u64);
        let layout = layout_pair(spec, &mut rng);
        let frames = (layout.total_seconds * spec.f_s).round() as usize;
        let d = spec.d;

        let mut base = vec![0.0f64; frames * d];
        for v in base.iter_mut() {
            *v = layout.gain * rng.normal();
        }

        // Burst frame window via the shared timestamp convention.
        let b0 = frame_scale(layout.burst_start, spec.f_s).floor() as usize;
        let b1 = frame_scale(layout.burst_start + spec.burst_seconds, spec.f_s).ceil() as usize;
        debug_assert!(b1 <= frames);

        // Burst twin: scale deviations around the window mean, per dimension,
        // so the window mean (and hence the class mean) is untouched.
        let mut burst = base.clone();
        for k in 0..d {
            let mean: f64 =
                (b0..b1).map(|r| base[r * d + k]).sum::<f64>() / (b1 - b0) as f64;
            for r in b0..b1 {
                let v = &mut burst[r * d + k];
                *v = mean + spec.variance_multiplier * (*v - mean);
            }
        }

        let burst_rows: Vec<usize> = (b0..b1).collect();
        let outside_rows: Vec<usize> = (0..frames).filter(|r| !(b0..b1).contains(r)).collect();
        let ratio = mean_variance(&burst_rows, &burst, d) / mean_variance(&outside_rows, &burst, d);
        min_ratio = min_ratio.min(ratio);

        for (twin, data) in [(0usize, &base), (1usize, &burst)] {
            let id = format!("dlg{:04}", 2 * p + twin);
            let labels = if twin == 1 { &spec.labels_burst } else { &spec.labels_clean };
            for (ui, (ts, te, text)) in layout.utterances.iter().enumerate() {
                records.push(TranscriptRecord {
                    dialogue_id: id.clone(),
                    index: ui + 1,
                    t_start: *ts,
                    t_end: *te,
                    text: text.clone(),
                    labels: if ui == 0 { Some(labels.clone()) } else { None },
                });
            }
            let tensor = Tensor::new(vec![frames, d], data.clone()).map_err(|e| {
                IoError::GenerationCheck { detail: format!("non-finite features: {e}") }
            })?;
            write_tensor_file(
                &features_dir.join(format!("{id}.acem")),
                &[("features", &tensor), ("f_s", &Tensor::scalar(spec.f_s).unwrap())],
            )?;
            for &v in data.iter() {
                acc[twin][0] += v;
                acc[twin][1] += v * v;
                acc[twin][2] += 1.0;
            }
            ids.push(id);
        }
    }

    // Global mean must be uninformative: class means equal to well within
    // sampling noise.
    let m0 = acc[0][0] / acc[0][2];
    let m1 = acc[1][0] / acc[1][2];
    let var0 = acc[0][1] / acc[0][2] - m0 * m0;
    let var1 = acc[1][1] / acc[1][2] - m1 * m1;
    let pooled = ((var0 + var1) / 2.0).sqrt();
    let se = pooled * (1.0 / acc[0][2] + 1.0 / acc[1][2]).sqrt();
    let class_mean_diff_se = (m0 - m1).abs() / se;
    if class_mean_diff_se >= 0.05 {
        return Err(IoError::GenerationCheck {
            detail: format!("class mean difference is {class_mean_diff_se:.3} standard errors (must be < 0.05)"),
        });
    }
    let ratio_floor = 0.75 * spec.variance_multiplier * spec.variance_multiplier;
    if min_ratio <= ratio_floor {
        return Err(IoError::GenerationCheck {
            detail: format!(
                "burst variance ratio {min_ratio:.2} not above {ratio_floor:.2} (multiplier {})",
                spec.variance_multiplier
            ),
        });
    }

    let transcript_path = out_dir.join("transcripts.tsv");
    write_transcripts(&transcript_path, &records)?;

    // Seeded 80/20 split over shuffled twin pairs: both twins land on the
    // same side, so noise memorized from a training dialogue can never leak
    // onto its near-identical test sibling.
    let mut pair_order: Vec<usize> = (0..n_pairs).collect();
    Rng::derive(spec.seed, SPLIT_SALT).shuffle(&mut pair_order);
    let train_pairs = (n_pairs as f64 * spec.train_fraction).round() as usize;
    let mut train_set: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for &p in pair_order.iter().take(train_pairs) {
        train_set.insert(format!("dlg{:04}", 2 * p));
        train_set.insert(format!("dlg{:04}", 2 * p + 1));
    }
    let n_train = train_set.len();

    let entries: Vec<ManifestEntry> = ids
        .iter()
        .map(|id| ManifestEntry {
            dialogue_id: id.clone(),
            split: if train_set.contains(id.as_str()) { Split::Train } else { Split::Test },
            features: PathBuf::from("features").join(format!("{id}.acem")),
            transcript: PathBuf::from("transcripts.tsv"),
        })
        .collect();
    let manifest_path = out_dir.join("manifest.tsv");
    write_manifest(&manifest_path, &entries)?;

    Ok(GenerationSummary {
        n_dialogues: spec.n_dialogues,
        n_train,
        n_test: spec.n_dialogues - n_train,
        manifest_path,
        class_mean_diff_se,
        min_burst_variance_ratio: min_ratio,
    })
}
