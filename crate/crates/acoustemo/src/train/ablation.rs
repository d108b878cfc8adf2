//! Held-out evaluation and the four-variant ablation harness.

use super::{load_split, run_training, Pipeline, Result, TrainConfig, Variant};
use crate::eval::{
    avg_score, emit_report, match_score, normalize_labels, MatchScore, ReportRow, SynonymMap,
};
use crate::io::{DialogueData, Split};
use crate::lm::{concat_multimodal, visual_stub};
use crate::qformer::MultiScaleAcousticTokens;
use std::path::Path;

/// Worker cap for embarrassingly parallel evaluation; `ACOUSTEMO_THREADS`
/// raises it (default 1 — results are index-ordered either way).
pub fn worker_threads() -> usize {
    std::env::var("ACOUSTEMO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Index-ordered parallel map; falls back to a plain loop for one worker.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut results: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let mut pending: Vec<_> = Vec::new();
        for (ci, (input, out)) in
            items.chunks(chunk).zip(results.chunks_mut(chunk)).enumerate()
        {
            let f = &f;
            pending.push(scope.spawn(move || {
                let _ = ci;
                for (x, slot) in input.iter().zip(out.iter_mut()) {
                    *slot = Some(f(x));
                }
            }));
        }
        for h in pending {
            h.join().expect("evaluation worker panicked");
        }
    });
    results.into_iter().map(|r| r.expect("worker filled every slot")).collect()
}

#[derive(Clone, Debug)]
pub struct SampleScore {
    pub dialogue_id: String,
    pub prediction: String,
    pub score: MatchScore,
    pub parse_warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub samples: Vec<SampleScore>,
    pub accuracy_s: f64,
    pub recall_s: f64,
    pub avg: f64,
}

/// Multi-scale tokens for one dialogue under the pipeline's variant, as
/// values (inference path).
pub fn encode_for_inference(
    pipeline: &Pipeline,
    dlg: &DialogueData,
) -> Result<MultiScaleAcousticTokens> {
    let mut tape = crate::tensor::Tape::new();
    let mut binding = crate::params::TapeBinding::new(&pipeline.set);
    let nodes = pipeline.acoustic_nodes(&mut tape, &mut binding, dlg)?;
    let mut iter = nodes.into_iter();
    let global_block = if pipeline.global_qf.is_some() {
        iter.next().map(|n| tape.value(n).clone())
    } else {
        None
    };
    let local_blocks: Vec<_> = iter.map(|n| tape.value(n).clone()).collect();
    let utterance_ids = (1..=local_blocks.len()).collect();
    Ok(MultiScaleAcousticTokens { global_block, local_blocks, utterance_ids })
}

/// Greedy-decode the emotion list for one dialogue.
pub fn predict(pipeline: &Pipeline, dlg: &DialogueData) -> Result<String> {
    let tokens = encode_for_inference(pipeline, dlg)?;
    let (prompt_ids, _) = pipeline.prompt_and_answer(dlg)?;
    let seq = concat_multimodal(
        visual_stub(pipeline.cfg.visual_rows, pipeline.cfg.d_visual),
        &tokens,
        prompt_ids,
        pipeline.cfg.max_seq,
    )?;
    Ok(pipeline.lm.generate(&pipeline.set, &seq, pipeline.cfg.max_new_tokens)?)
}

/// Score a trained pipeline on a list of dialogues: per-sample set-overlap
/// metrics, corpus means, and their reported average.
pub fn evaluate_split(
    pipeline: &Pipeline,
    dialogues: &[DialogueData],
    syn: &SynonymMap,
) -> Result<EvalOutcome> {
    let threads = worker_threads();
    let predictions = parallel_map(dialogues, threads, |d| predict(pipeline, d));
    let mut samples = Vec::with_capacity(dialogues.len());
    let (mut acc_sum, mut rec_sum) = (0.0, 0.0);
    for (dlg, pred) in dialogues.iter().zip(predictions) {
        let text = pred?;
        let parsed = normalize_labels(&text);
        let score = match_score(&parsed.labels, &dlg.gt_labels, syn)?;
        acc_sum += score.accuracy_s;
        rec_sum += score.recall_s;
        samples.push(SampleScore {
            dialogue_id: dlg.dialogue_id.clone(),
            prediction: text,
            score,
            parse_warning: parsed.warning,
        });
    }
    let n = dialogues.len().max(1) as f64;
    let accuracy_s = acc_sum / n;
    let recall_s = rec_sum / n;
    Ok(EvalOutcome { samples, accuracy_s, recall_s, avg: avg_score(accuracy_s, recall_s) })
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy_s: f64,
    pub recall_s: f64,
    pub avg: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Render in the published ablation-table shape.
    pub fn render(&self) -> String {
        let rows: Vec<ReportRow> = self
            .rows
            .iter()
            .map(|r| ReportRow {
                name: r.variant.name(),
                accuracy_s: r.accuracy_s,
                recall_s: r.recall_s,
            })
            .collect();
        emit_report(&rows)
    }

    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Train and evaluate all four variants (same seed, same data) and emit a
/// table in the fixed row order: full, no_global, fixed_window, no_utterance_aware.
pub fn run_ablation(base: &TrainConfig, manifest_path: &Path) -> Result<AblationReport> {
    let test = load_split(manifest_path, Split::Test)?;
    let syn = SynonymMap::empty();
    let mut rows = Vec::with_capacity(4);
    for variant in Variant::ablation_grid() {
        let cfg = TrainConfig { variant, ..base.clone() };
        let outcome = run_training(&cfg, manifest_path)?;
        let eval = evaluate_split(&outcome.pipeline, &test, &syn)?;
        rows.push(AblationRow {
            variant,
            accuracy_s: eval.accuracy_s,
            recall_s: eval.recall_s,
            avg: eval.avg,
            epoch_losses: outcome.epoch_losses,
        });
    }
    Ok(AblationReport { rows })
}
