//! Training recipe and the four-way ablation harness.
//!
//! The trainable set follows the reference recipe: the utterance-aware and
//! global token encoders, the modality projections, and the LoRA pairs. The
//! language-model base stays frozen for the whole run (fingerprint-checked in
//! the tests). Optimization is AdamW under linear-warmup/cosine-decay, with
//! per-dialogue losses summed over answer tokens and averaged across the
//! batch. Everything is deterministic given the seed.

mod ablation;
mod adamw;
mod checkpoint;
mod schedule;

pub use ablation::{evaluate_split, run_ablation, AblationReport, EvalOutcome};
pub use adamw::AdamW;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use schedule::lr_at;

use crate::eval::EvalError;
use crate::io::{load_dialogue, read_manifest, DialogueData, IoError, Split};
use crate::lm::{
    build_prompt, prompt_text, LmConfig, LmError, TinyCausalLM, TokenId, Vocab,
};
use crate::params::{GradBuffer, ParamSet, TapeBinding};
use crate::qformer::{self, QFormerConfig, QFormerError, QFormerHandles};
use crate::rng::Rng;
use crate::segment::fixed_windows;
use crate::tensor::{NodeId, Tape, TensorError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    QFormer(#[from] QFormerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid config field {field}: {detail}")]
    ConfigInvalid { field: &'static str, detail: String },
    #[error("dialogue {dialogue_id}: {source}")]
    Data { dialogue_id: String, source: Box<IoError> },
    #[error("checkpoint mismatch: {detail}")]
    CheckpointMismatch { detail: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Architectural ablation variants, in the report's row order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// Global token encoder + utterance-aware windows.
    Full,
    /// Utterance-aware windows only.
    NoGlobal,
    /// Global + fixed-length windows of the given duration (seconds).
    FixedWindow(f64),
    /// Global only — the coarse-pooling baseline.
    NoUtteranceAware,
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoGlobal => "no_global".into(),
            Variant::FixedWindow(s) => format!("fixed_window_{s}s"),
            Variant::NoUtteranceAware => "no_utterance_aware".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "no_global" => Ok(Variant::NoGlobal),
            "fixed_window" => Ok(Variant::FixedWindow(2.0)),
            "no_utterance_aware" => Ok(Variant::NoUtteranceAware),
            other => {
                if let Some(rest) = other.strip_prefix("fixed_window_") {
                    let secs: f64 =
                        rest.trim_end_matches('s').parse().map_err(|_| TrainError::ConfigInvalid {
                            field: "variant",
                            detail: format!("bad window duration in {other:?}"),
                        })?;
                    return Ok(Variant::FixedWindow(secs));
                }
                Err(TrainError::ConfigInvalid {
                    field: "variant",
                    detail: format!(
                        "unknown variant {other:?} (full | no_global | fixed_window[_Ns] | no_utterance_aware)"
                    ),
                })
            }
        }
    }

    pub fn has_global(&self) -> bool {
        !matches!(self, Variant::NoGlobal)
    }

    pub fn has_local(&self) -> bool {
        !matches!(self, Variant::NoUtteranceAware)
    }

    /// The four rows of the ablation grid, in report order.
    pub fn ablation_grid() -> [Variant; 4] {
        [Variant::Full, Variant::NoGlobal, Variant::FixedWindow(2.0), Variant::NoUtteranceAware]
    }
}

/// Optimizer, schedule, and model-shape settings for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub qf_k: usize,
    pub qf_d_model: usize,
    pub lm_d_model: usize,
    pub lm_layers: usize,
    pub lm_d_ff: usize,
    pub max_seq: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub visual_rows: usize,
    pub d_visual: usize,
    pub instruction: String,
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.05,
            warmup_fraction: 0.05,
            epochs: 3,
            batch_size: 8,
            seed: 1,
            variant: Variant::Full,
            qf_k: 32,
            qf_d_model: 768,
            lm_d_model: 64,
            lm_layers: 2,
            lm_d_ff: 128,
            max_seq: 1024,
            lora_rank: 8,
            lora_alpha: 16.0,
            visual_rows: 4,
            d_visual: 16,
            instruction: "List the emotions.".into(),
            max_new_tokens: 4,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset for the synthetic tremor study: small token encoder
    /// and LM, a learning rate that converges on 160 dialogues within a few
    /// epochs. The schedule shape and trainable set are unchanged.
    pub fn synthetic_preset(seed: u64, variant: Variant) -> Self {
        TrainConfig {
            base_lr: 2e-2,
            epochs: 6,
            batch_size: 8,
            seed,
            variant,
            qf_k: 4,
            qf_d_model: 24,
            lm_d_model: 32,
            lm_layers: 2,
            lm_d_ff: 64,
            max_seq: 256,
            lora_rank: 4,
            lora_alpha: 8.0,
            visual_rows: 2,
            d_visual: 8,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, detail: String| {
            Err(TrainError::ConfigInvalid { field, detail })
        };
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction", format!("{} not in (0, 1)", self.warmup_fraction));
        }
        if self.epochs < 1 {
            return bad("epochs", "must be >= 1".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1/beta2", format!("({}, {}) not in (0, 1)", self.beta1, self.beta2));
        }
        if self.base_lr < 0.0 {
            return bad("base_lr", "must be nonnegative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if let Variant::FixedWindow(s) = self.variant {
            if s <= 0.0 {
                return bad("variant", "fixed window duration must be positive".into());
            }
        }
        Ok(())
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            d_model: self.lm_d_model,
            n_layers: self.lm_layers,
            d_ff: self.lm_d_ff,
            max_seq: self.max_seq,
            d_visual: self.d_visual,
            d_acoustic: self.qf_d_model,
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            tied_embeddings: false,
        }
    }
}

/// The assembled trainable system: token encoders plus the adapted LM over
/// one parameter registry.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub set: ParamSet,
    pub local_qf: Option<QFormerHandles>,
    pub global_qf: Option<QFormerHandles>,
    pub lm: TinyCausalLM,
    pub cfg: TrainConfig,
    pub feat_dim: usize,
}

impl Pipeline {
    /// Initialize all parameters for the given variant. The model-init RNG
    /// stream is derived from the seed, separate from the data-order stream.
    pub fn init(cfg: &TrainConfig, feat_dim: usize, vocab: Vocab) -> Result<Pipeline> {
        cfg.validate()?;
        let mut rng = Rng::derive(cfg.seed, 0xA11C);
        let mut set = ParamSet::new();
        let qf_cfg = QFormerConfig { k: cfg.qf_k, d_in: feat_dim, d_model: cfg.qf_d_model };
        let local_qf = cfg
            .variant
            .has_local()
            .then(|| QFormerHandles::init(&mut set, "qformer.local", qf_cfg, &mut rng));
        let global_qf = cfg
            .variant
            .has_global()
            .then(|| QFormerHandles::init(&mut set, "qformer.global", qf_cfg, &mut rng));
        let lm = TinyCausalLM::init(&mut set, vocab, cfg.lm_config(), &mut rng)?;
        Ok(Pipeline { set, local_qf, global_qf, lm, cfg: cfg.clone(), feat_dim })
    }

    /// Acoustic segments for one dialogue under this variant's windowing.
    fn segments(&self, dlg: &DialogueData) -> Result<Vec<crate::tensor::Tensor>> {
        match self.cfg.variant {
            Variant::FixedWindow(secs) => Ok(fixed_windows(&dlg.seq, secs)
                .iter()
                .map(|w| {
                    dlg.seq
                        .features
                        .slice_rows(w.i_start, w.i_end)
                        .expect("window bounds are valid")
                })
                .collect()),
            _ => Ok(crate::segment::extract_segments(&dlg.seq, &dlg.spans)
                .map_err(QFormerError::from)?
                .into_iter()
                .map(|(_, seg)| seg)
                .collect()),
        }
    }

    /// Encode a dialogue's acoustic blocks on a tape, canonical order
    /// (global first, then locals).
    pub fn acoustic_nodes(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        dlg: &DialogueData,
    ) -> Result<Vec<NodeId>> {
        let mut nodes = Vec::new();
        if let Some(g) = &self.global_qf {
            nodes.push(qformer::forward_tape(tape, binding, &self.set, g, &dlg.seq.features)?);
        }
        if let Some(l) = &self.local_qf {
            for seg in self.segments(dlg)? {
                nodes.push(qformer::forward_tape(tape, binding, &self.set, l, &seg)?);
            }
        }
        Ok(nodes)
    }

    /// Prompt and answer token ids for a dialogue.
    pub fn prompt_and_answer(&self, dlg: &DialogueData) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
        let reserved = self.cfg.visual_rows
            + self.acoustic_token_count(dlg)
            + self.cfg.max_new_tokens
            + 1;
        let budget = self.cfg.max_seq.saturating_sub(reserved);
        let (prompt_ids, _) =
            build_prompt(&dlg.spans, &self.cfg.instruction, &self.lm.vocab, budget)?;
        let answer = answer_text(&dlg.gt_labels);
        let mut answer_ids = self.lm.vocab.tokenize(&answer);
        if let Some(eos) = self.lm.vocab.eos_id() {
            answer_ids.push(eos);
        }
        Ok((prompt_ids, answer_ids))
    }

    fn acoustic_token_count(&self, dlg: &DialogueData) -> usize {
        let mut blocks = usize::from(self.global_qf.is_some());
        if self.local_qf.is_some() {
            blocks += match self.cfg.variant {
                Variant::FixedWindow(secs) => fixed_windows(&dlg.seq, secs).len(),
                _ => dlg.spans.len(),
            };
        }
        blocks * self.cfg.qf_k
    }

    /// Scalar training loss for one dialogue on a tape.
    pub fn dialogue_loss_tape(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        dlg: &DialogueData,
    ) -> Result<NodeId> {
        let acoustic = self.acoustic_nodes(tape, binding, dlg)?;
        let (prompt_ids, answer_ids) = self.prompt_and_answer(dlg)?;
        let visual = crate::lm::visual_stub(self.cfg.visual_rows, self.cfg.d_visual);
        Ok(self.lm.loss_tape(
            tape,
            binding,
            &self.set,
            &visual,
            &acoustic,
            &prompt_ids,
            &answer_ids,
        )?)
    }

    /// All parameters expected to train under the recipe.
    pub fn trainable_param_names(&self) -> Vec<String> {
        self.set
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.name.clone())
            .collect()
    }
}

/// Ground-truth labels rendered in the bracketed list format the model is
/// trained to emit, e.g. `['anxious', 'concerned']`.
pub fn answer_text(labels: &crate::eval::LabelSet) -> String {
    let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
    format!("[{}]", quoted.join(", "))
}

/// Load every dialogue of one split, in manifest order.
pub fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<DialogueData>> {
    let entries = read_manifest(manifest_path)?;
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.split == split) {
        let dlg = load_dialogue(
            &e.transcript_abs(manifest_path),
            &e.features_abs(manifest_path),
            &e.dialogue_id,
        )
        .map_err(|err| TrainError::Data {
            dialogue_id: e.dialogue_id.clone(),
            source: Box::new(err),
        })?;
        out.push(dlg);
    }
    Ok(out)
}

/// Result of a training run.
pub struct TrainOutcome {
    pub pipeline: Pipeline,
    /// Mean per-dialogue loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// `step \t lr \t loss` per optimizer step.
    pub log: Vec<String>,
    pub steps: usize,
}

/// Train the variant's modules on the manifest's train split.
pub fn run_training(cfg: &TrainConfig, manifest_path: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dialogues = load_split(manifest_path, Split::Train)?;
    if dialogues.is_empty() {
        return Err(TrainError::Io(IoError::BadRecord {
            path: manifest_path.display().to_string(),
            line: 0,
            detail: "no training dialogues in manifest".into(),
        }));
    }
    let feat_dim = dialogues[0].seq.dim();

    // Vocabulary from the training split's prompts and answers.
    let mut corpus: Vec<String> = Vec::new();
    for d in &dialogues {
        corpus.push(prompt_text(&d.spans, &cfg.instruction));
        corpus.push(answer_text(&d.gt_labels));
    }
    let vocab = Vocab::build(corpus.iter().map(String::as_str));
    let pipeline = Pipeline::init(cfg, feat_dim, vocab)?;
    train_pipeline(pipeline, &dialogues)
}

/// Inner loop over an already-initialized pipeline (exposed for tests that
/// need custom vocabularies or warm starts).
pub fn train_pipeline(mut pipeline: Pipeline, dialogues: &[DialogueData]) -> Result<TrainOutcome> {
    let cfg = pipeline.cfg.clone();
    let n = dialogues.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut opt = AdamW::new(&pipeline.set, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut log = Vec::with_capacity(total_steps);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::derive(cfg.seed, 0xE60C_0000 + epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_at(step, total_steps, &cfg);
            let mut grads = GradBuffer::new(&pipeline.set);
            let mut batch_loss = 0.0;
            for &di in batch {
                let mut tape = Tape::new();
                let mut binding = TapeBinding::new(&pipeline.set);
                let loss = pipeline.dialogue_loss_tape(&mut tape, &mut binding, &dialogues[di])?;
                batch_loss += tape.value(loss).item();
                tape.backward(loss)?;
                grads.accumulate(&pipeline.set, &binding, &tape);
            }
            // Batch loss is the mean over dialogues; gradients likewise.
            grads.scale(1.0 / batch.len() as f64);
            batch_loss /= batch.len() as f64;
            opt.step(&mut pipeline.set, &grads, lr);
            step += 1;
            log.push(format!("{step}\t{lr:.8e}\t{batch_loss:.6}"));
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok(TrainOutcome { pipeline, epoch_losses, log, steps: step })
}
