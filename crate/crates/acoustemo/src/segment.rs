//! Timestamp-synchronized segmentation.
//!
//! Utterance time boundaries map to frame indices by floor(t_start·f_s) /
//! ceil(t_end·f_s), end-exclusive, clamped into [0, L] with a flag. A product
//! that is an integer up to f64 roundoff is snapped to that integer first, so
//! e.g. 19.9·50 counts as 995 and an exactly integral t·f_s never gains a
//! spurious extra frame from ceil.
//!
//! The fixed-length window baseline lives here too: non-overlapping
//! consecutive windows that partition [0, L), final partial window kept.

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("invalid span for utterance {index}: start {t_start} must be >= 0 and < end {t_end}")]
    InvalidSpan { index: usize, t_start: f64, t_end: f64 },
    #[error("utterance {index} maps to an empty frame segment (audio has {frames} frames)")]
    EmptySegment { index: usize, frames: usize },
    #[error("feature matrix is {rows}x{cols}, expected L>=1 and d>=1 with f_s > 0")]
    InvalidSequence { rows: usize, cols: usize },
}

/// Frozen frame-level acoustic features: L×d matrix sampled at f_s frames
/// per second.
#[derive(Clone, Debug)]
pub struct FrameFeatureSequence {
    pub features: Tensor,
    pub f_s: f64,
    pub source_id: String,
}

impl FrameFeatureSequence {
    pub fn new(features: Tensor, f_s: f64, source_id: impl Into<String>) -> Result<Self, SegmentError> {
        if features.dims().len() != 2 || features.rows() == 0 || features.cols() == 0 || f_s <= 0.0 {
            return Err(SegmentError::InvalidSequence {
                rows: features.rows(),
                cols: features.cols(),
            });
        }
        Ok(FrameFeatureSequence { features, f_s, source_id: source_id.into() })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames() as f64 / self.f_s
    }
}

/// One transcribed utterance with 1-based ordinal and time bounds in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSpan {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub text: String,
}

/// Half-open frame index range [i_start, i_end); `clamped` records that the
/// raw mapping fell outside [0, L].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSpan {
    pub i_start: usize,
    pub i_end: usize,
    pub clamped: bool,
}

impl FrameSpan {
    pub fn len(&self) -> usize {
        self.i_end - self.i_start
    }

    pub fn is_empty(&self) -> bool {
        self.i_end <= self.i_start
    }
}

/// t·f_s with integer snapping: values within 1e-9 (relative) of an integer
/// collapse onto it. This is the timestamp arithmetic convention shared with
/// the brute-force overlap oracle.
pub fn frame_scale(t: f64, f_s: f64) -> f64 {
    let x = t * f_s;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Map continuous time boundaries onto frame indices:
/// floor(t_start·f_s) .. ceil(t_end·f_s), clamped into [0, L].
pub fn map_span(span: &UtteranceSpan, f_s: f64, frames: usize) -> Result<FrameSpan, SegmentError> {
    if !(span.t_start >= 0.0 && span.t_start < span.t_end) {
        return Err(SegmentError::InvalidSpan {
            index: span.index,
            t_start: span.t_start,
            t_end: span.t_end,
        });
    }
    let raw_start = frame_scale(span.t_start, f_s).floor();
    let raw_end = frame_scale(span.t_end, f_s).ceil();
    let l = frames as f64;
    let i_start = raw_start.clamp(0.0, l);
    let i_end = raw_end.clamp(0.0, l);
    let clamped = i_start != raw_start || i_end != raw_end;
    if i_start >= i_end {
        return Err(SegmentError::EmptySegment { index: span.index, frames });
    }
    Ok(FrameSpan { i_start: i_start as usize, i_end: i_end as usize, clamped })
}

/// Slice one feature segment per utterance. All-or-nothing: any failing span
/// aborts with its utterance index and no partial output. Overlapping spans
/// are allowed and produce independent copies.
pub fn extract_segments(
    seq: &FrameFeatureSequence,
    spans: &[UtteranceSpan],
) -> Result<Vec<(UtteranceSpan, Tensor)>, SegmentError> {
    let mut out = Vec::with_capacity(spans.len());
    for span in spans {
        let fs = map_span(span, seq.f_s, seq.frames())?;
        let segment = seq
            .features
            .slice_rows(fs.i_start, fs.i_end)
            .expect("map_span guarantees a non-empty in-bounds range");
        out.push((span.clone(), segment));
    }
    Ok(out)
}

/// Non-overlapping consecutive windows of `window_seconds` partitioning
/// [0, L); a final partial window is kept if it holds at least one frame.
pub fn fixed_windows(seq: &FrameFeatureSequence, window_seconds: f64) -> Vec<FrameSpan> {
    assert!(window_seconds > 0.0, "window_seconds must be positive");
    let l = seq.frames();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut k = 1u64;
    while start < l {
        let raw = frame_scale(k as f64 * window_seconds, seq.f_s).floor();
        let end = if raw >= l as f64 { l } else { (raw as usize).max(start) };
        if end > start {
            spans.push(FrameSpan { i_start: start, i_end: end, clamped: false });
            start = end;
        }
        k += 1;
    }
    spans
}

/// Count utterance boundaries (start or end frames) that fall strictly inside
/// a fixed window rather than on a window edge — the boundary-mismatch
/// statistic the fixed-length ablation measures.
pub fn boundary_mismatch_count(
    seq: &FrameFeatureSequence,
    spans: &[UtteranceSpan],
    window_seconds: f64,
) -> usize {
    let windows = fixed_windows(seq, window_seconds);
    let mut edges: Vec<usize> = windows.iter().map(|w| w.i_start).collect();
    edges.push(seq.frames());
    let mut count = 0;
    for span in spans {
        if let Ok(fs) = map_span(span, seq.f_s, seq.frames()) {
            for b in [fs.i_start, fs.i_end] {
                if !edges.contains(&b) {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Check utterance list invariants: 1-based contiguous indices and valid
/// time ranges.
pub fn validate_spans(spans: &[UtteranceSpan]) -> Result<(), SegmentError> {
    for (i, span) in spans.iter().enumerate() {
        if span.index != i + 1 {
            return Err(SegmentError::InvalidSpan {
                index: span.index,
                t_start: span.t_start,
                t_end: span.t_end,
            });
        }
        if !(span.t_start >= 0.0 && span.t_start < span.t_end) {
            return Err(SegmentError::InvalidSpan {
                index: span.index,
                t_start: span.t_start,
                t_end: span.t_end,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn span(index: usize, t_start: f64, t_end: f64) -> UtteranceSpan {
        UtteranceSpan { index, t_start, t_end, text: String::new() }
    }

    /// Brute-force overlap oracle: frame j is selected iff the real interval
    /// [j, j+1) meets [t_start·f_s, t_end·f_s) under the shared snap
    /// convention. No floor/ceil on the oracle path.
    fn oracle_scan(t_start: f64, t_end: f64, f_s: f64, frames: usize) -> Vec<usize> {
        let a = frame_scale(t_start, f_s);
        let b = frame_scale(t_end, f_s);
        (0..frames)
            .filter(|&j| (j as f64 + 1.0) > a && (j as f64) < b)
            .collect()
    }

    #[test]
    fn direct_arithmetic_case() {
        let fs = map_span(&span(1, 1.0, 2.5), 50.0, 1000).unwrap();
        assert_eq!(fs, FrameSpan { i_start: 50, i_end: 125, clamped: false });
    }

    #[test]
    fn tiny_span_ceils_to_one_frame() {
        let fs = map_span(&span(1, 0.0, 0.02), 50.0, 1000).unwrap();
        assert_eq!(fs, FrameSpan { i_start: 0, i_end: 1, clamped: false });
    }

    #[test]
    fn overrun_clamps_with_flag() {
        // Audio is 20 s; the utterance runs to 25 s.
        let fs = map_span(&span(1, 19.9, 25.0), 50.0, 1000).unwrap();
        assert_eq!(fs, FrameSpan { i_start: 995, i_end: 1000, clamped: true });
    }

    #[test]
    fn integral_product_gains_no_extra_frame() {
        // t_end·f_s = 100 exactly: ceil must stay at 100.
        let fs = map_span(&span(1, 0.0, 2.0), 50.0, 1000).unwrap();
        assert_eq!(fs.i_end, 100);
    }

    #[test]
    fn fully_past_audio_is_empty_segment() {
        let err = map_span(&span(3, 25.0, 26.0), 50.0, 1000).unwrap_err();
        assert_eq!(err, SegmentError::EmptySegment { index: 3, frames: 1000 });
    }

    #[test]
    fn degenerate_time_range_is_invalid() {
        assert!(matches!(
            map_span(&span(1, 2.0, 2.0), 50.0, 1000),
            Err(SegmentError::InvalidSpan { .. })
        ));
        assert!(matches!(
            map_span(&span(1, 3.0, 2.0), 50.0, 1000),
            Err(SegmentError::InvalidSpan { .. })
        ));
        assert!(matches!(
            map_span(&span(1, -0.5, 2.0), 50.0, 1000),
            Err(SegmentError::InvalidSpan { .. })
        ));
    }

    #[test]
    fn matches_brute_force_scan_on_random_spans() {
        let mut rng = Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let f_s = [25.0, 50.0, 100.0, 16000.0 / 320.0][rng.below(4)];
            let frames = 200 + rng.below(1800);
            let t_start = rng.uniform(0.0, frames as f64 / f_s * 1.1);
            let t_end = t_start + rng.uniform(1e-4, 5.0);
            let expected = oracle_scan(t_start, t_end, f_s, frames);
            match map_span(&span(1, t_start, t_end), f_s, frames) {
                Ok(fs) => {
                    let got: Vec<usize> = (fs.i_start..fs.i_end).collect();
                    assert_eq!(got, expected, "span {t_start}..{t_end} f_s {f_s} L {frames}");
                }
                Err(SegmentError::EmptySegment { .. }) => {
                    assert!(expected.is_empty(), "oracle found frames: {expected:?}");
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn monotone_in_both_endpoints() {
        let mut rng = Rng::seed_from_u64(88);
        for _ in 0..200 {
            let t0 = rng.uniform(0.0, 10.0);
            let t1 = t0 + rng.uniform(0.1, 5.0);
            let bump = rng.uniform(0.0, 3.0);
            let a = map_span(&span(1, t0, t1), 50.0, 5000).unwrap();
            let b = map_span(&span(1, t0 + bump, t1 + bump + 0.1), 50.0, 5000).unwrap();
            assert!(b.i_start >= a.i_start);
            assert!(b.i_end >= a.i_end);
        }
    }

    #[test]
    fn nested_times_give_nested_frames() {
        let mut rng = Rng::seed_from_u64(99);
        for _ in 0..200 {
            let c = rng.uniform(0.0, 10.0);
            let d = c + rng.uniform(0.5, 5.0);
            let a = c + rng.uniform(0.0, (d - c) / 2.0);
            let b = a + rng.uniform(0.05, d - a);
            let inner = map_span(&span(1, a, b), 50.0, 5000).unwrap();
            let outer = map_span(&span(1, c, d), 50.0, 5000).unwrap();
            assert!(outer.i_start <= inner.i_start && inner.i_end <= outer.i_end);
        }
    }

    fn seq(frames: usize, d: usize, f_s: f64) -> FrameFeatureSequence {
        let mut rng = Rng::seed_from_u64(5);
        FrameFeatureSequence::new(Tensor::randn(vec![frames, d], 1.0, &mut rng), f_s, "t").unwrap()
    }

    #[test]
    fn extract_two_disjoint_spans() {
        let s = seq(1000, 4, 50.0);
        let spans = vec![span(1, 1.0, 2.5), span(2, 4.0, 5.0)];
        let segs = extract_segments(&s, &spans).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].1.dims(), &[75, 4]);
        assert_eq!(segs[1].1.dims(), &[50, 4]);
    }

    #[test]
    fn overlapping_spans_share_frames_independently() {
        let s = seq(1000, 4, 50.0);
        let spans = vec![span(1, 1.0, 3.0), span(2, 2.0, 4.0)];
        let segs = extract_segments(&s, &spans).unwrap();
        // Frames 100..150 appear in both segments, as copies.
        let first = &segs[0].1;
        let second = &segs[1].1;
        assert_eq!(first.slice_rows(50, 100).unwrap(), second.slice_rows(0, 50).unwrap());
    }

    #[test]
    fn failing_span_aborts_with_utterance_index() {
        let s = seq(1000, 4, 50.0);
        let spans = vec![span(1, 1.0, 2.0), span(2, 30.0, 31.0)];
        let err = extract_segments(&s, &spans).unwrap_err();
        assert_eq!(err, SegmentError::EmptySegment { index: 2, frames: 1000 });
    }

    #[test]
    fn fixed_windows_exact_division() {
        let s = seq(500, 4, 50.0); // 10.0 s
        let w = fixed_windows(&s, 2.0);
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|fs| fs.len() == 100));
    }

    #[test]
    fn fixed_windows_partial_tail() {
        let s = seq(525, 4, 50.0); // 10.5 s
        let w = fixed_windows(&s, 2.0);
        assert_eq!(w.len(), 6);
        assert_eq!(w[5].len(), 25);
    }

    #[test]
    fn fixed_windows_partition_the_sequence() {
        let mut rng = Rng::seed_from_u64(123);
        for _ in 0..50 {
            let frames = 50 + rng.below(1000);
            let s = seq(frames, 2, 50.0);
            let w_sec = rng.uniform(0.3, 4.0);
            let windows = fixed_windows(&s, w_sec);
            let mut cursor = 0;
            for fs in &windows {
                assert_eq!(fs.i_start, cursor, "gap or overlap");
                assert!(fs.len() >= 1);
                cursor = fs.i_end;
            }
            assert_eq!(cursor, frames, "union must be exactly [0, L)");
        }
    }

    #[test]
    fn boundary_inside_window_is_a_mismatch() {
        // Utterance boundary at 1.3 s lies strictly inside window [0 s, 2 s).
        let s = seq(500, 4, 50.0);
        let spans = vec![span(1, 0.2, 1.3)];
        let windows = fixed_windows(&s, 2.0);
        let b = map_span(&spans[0], 50.0, 500).unwrap();
        let edges: Vec<usize> = windows.iter().map(|w| w.i_start).collect();
        assert!(!edges.contains(&b.i_end), "boundary must not sit on a window edge");
        assert!(b.i_end > windows[0].i_start && b.i_end < windows[0].i_end);
        assert_eq!(boundary_mismatch_count(&s, &spans, 2.0), 2);
    }

    #[test]
    fn validate_spans_checks_contiguity() {
        let good = vec![span(1, 0.0, 1.0), span(2, 1.5, 2.0)];
        assert!(validate_spans(&good).is_ok());
        let bad = vec![span(1, 0.0, 1.0), span(3, 1.5, 2.0)];
        assert!(validate_spans(&bad).is_err());
    }
}
