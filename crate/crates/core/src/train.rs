//! Two-stage optimization: alternating-mask pretraining over every span at
//! once, then fine-tuning on single-step sequences matching the decode
//! process, plus teacher-forced evaluation.
//!
//! Losses are cross-entropies normalized per supervised position, mask and
//! duration weighted 1:1. Batch members run forward/backward on their own
//! tapes (in parallel over a worker pool); gradients are then folded in
//! batch order, clipped by global norm, and applied with Adam under a
//! linear-warmup/cosine-decay schedule. All randomness is drawn up front
//! from the step RNG, so results do not depend on worker scheduling.

use std::fmt;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::{save_checkpoint, AdamSnapshot, Checkpoint, CheckpointError};
use crate::corpus::{AlignedExample, VocabLayout};
use crate::mask::{designed_mask_for, MaskError};
use crate::model::{forward_on_tape, ModelError, ModelParams};
use crate::sequence::{
    build_finetune_sequence, build_pretrain_sequence, LossTargets, SequenceError,
};
use crate::tensor::{Tape, TensorError, TensorId};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.95;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 1.0;
const MIN_LR_FACTOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Pretrain,
    Finetune,
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainStage::Pretrain => "pretrain",
            TrainStage::Finetune => "finetune",
        })
    }
}

impl FromStr for TrainStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(TrainStage::Pretrain),
            "finetune" => Ok(TrainStage::Finetune),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Look-ahead used when building fine-tune sequences.
    pub q: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Evaluate on the held-out set every this many steps (0 = only at end).
    pub eval_every: usize,
    /// Also supervise the placeholder before every span during fine-tuning,
    /// not just the trailing one.
    pub supervise_all_durations: bool,
    /// Training-curve CSV destination.
    pub curve_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale schedule: 3000 pretrain / 1000 fine-tune steps, batch 16.
    pub fn desk_default(stage: TrainStage) -> Self {
        TrainConfig {
            stage,
            steps: match stage {
                TrainStage::Pretrain => 3000,
                TrainStage::Finetune => 1000,
            },
            batch_size: 16,
            learning_rate: 3e-4,
            warmup_steps: 100,
            seed: 0,
            q: 1,
            checkpoint_path: None,
            eval_every: 0,
            supervise_all_durations: false,
            curve_path: None,
        }
    }
}

/// Losses of one optimization step. Equality of two training runs is judged
/// on the loss fields; wall time is informational.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub stage: TrainStage,
    pub l_mask: f64,
    pub l_duration: f64,
    pub total: f64,
    pub wall_ms: f64,
}

impl StepReport {
    pub fn same_losses(&self, other: &StepReport) -> bool {
        self.l_mask == other.l_mask
            && self.l_duration == other.l_duration
            && self.total == other.total
    }
}

/// Adam moments, one buffer per parameter tensor in named order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| t.numel())
            .collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_snapshot(snap: AdamSnapshot) -> Self {
        AdamState {
            step: snap.step,
            m: snap.m,
            v: snap.v,
        }
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        AdamSnapshot {
            step: self.step,
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }

    /// Clip the summed gradients by global norm and apply one update.
    fn apply(&mut self, params: &mut ModelParams, grads: &mut [Vec<f64>], lr: f64) {
        self.step += 1;
        let norm: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > CLIP_NORM {
            let scale = CLIP_NORM / norm;
            for g in grads.iter_mut() {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..grad.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Linear warmup to the base rate, then cosine decay to a tenth of it.
pub fn lr_at(step: u64, total_steps: usize, base: f64, warmup: usize) -> f64 {
    if total_steps == 0 {
        return base;
    }
    if (step as usize) <= warmup && warmup > 0 {
        return base * step as f64 / warmup as f64;
    }
    let min_lr = base * MIN_LR_FACTOR;
    let span = (total_steps.saturating_sub(warmup)).max(1) as f64;
    let progress = ((step as usize).saturating_sub(warmup) as f64 / span).min(1.0);
    min_lr + 0.5 * (base - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

// One-hot row selector so a [K×N]·[N×C] product gathers the supervised rows.
fn selection_matrix(tape: &mut Tape, positions: &[usize], n: usize) -> TensorId {
    let mut data = vec![0.0; positions.len() * n];
    for (r, &p) in positions.iter().enumerate() {
        data[r * n + p] = 1.0;
    }
    tape.constant(vec![positions.len(), n], data)
}

/// Per-row NLL column for the given (position, class) targets, gathered from
/// full per-position logits.
fn supervised_nll(
    tape: &mut Tape,
    logits: TensorId,
    targets: &[(usize, usize)],
    seq_len: usize,
) -> Result<TensorId, TensorError> {
    let positions: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
    let classes: Vec<usize> = targets.iter().map(|&(_, c)| c).collect();
    let sel = selection_matrix(tape, &positions, seq_len);
    let picked = tape.matmul(sel, logits)?;
    tape.cross_entropy_rows(picked, &classes)
}

struct ExampleOutcome {
    mask_nll_sum: f64,
    duration_nll_sum: f64,
    grads: Vec<Vec<f64>>,
}

/// Forward + loss + backward for one prepared example. The scale factors
/// implement batch-level per-position normalization: each example
/// contributes sum(nll)/K_total for each head.
fn run_example(
    params: &ModelParams,
    seq: &crate::sequence::ComposedSequence,
    targets: &LossTargets,
    mask_scale: f64,
    duration_scale: f64,
) -> Result<ExampleOutcome, TrainError> {
    let ids = seq.ids();
    let mask = designed_mask_for(seq)?;
    let mut tape = Tape::new();
    let pass = forward_on_tape(params, &mut tape, ids, &mask)?;

    let mut loss_terms: Vec<TensorId> = Vec::new();
    let mut mask_nll_sum = 0.0;
    let mut duration_nll_sum = 0.0;
    if !targets.speech.is_empty() {
        let nll = supervised_nll(&mut tape, pass.speech_logits, &targets.speech, ids.len())?;
        mask_nll_sum = tape.data(nll).iter().sum();
        let w = tape.constant_filled(vec![1, targets.speech.len()], mask_scale);
        loss_terms.push(tape.matmul(w, nll)?);
    }
    if !targets.duration.is_empty() {
        let nll = supervised_nll(&mut tape, pass.duration_logits, &targets.duration, ids.len())?;
        duration_nll_sum = tape.data(nll).iter().sum();
        let w = tape.constant_filled(vec![1, targets.duration.len()], duration_scale);
        loss_terms.push(tape.matmul(w, nll)?);
    }
    let flat = pass.bound.flat();
    if loss_terms.is_empty() {
        // nothing supervised; contributes zero gradient
        return Ok(ExampleOutcome {
            mask_nll_sum: 0.0,
            duration_nll_sum: 0.0,
            grads: flat
                .iter()
                .map(|&id| vec![0.0; tape.data(id).len()])
                .collect(),
        });
    }
    let mut loss = loss_terms[0];
    for &t in &loss_terms[1..] {
        loss = tape.add(loss, t)?;
    }
    tape.backward(loss)?;
    let grads = flat
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.data(id).len()])
        })
        .collect();
    Ok(ExampleOutcome {
        mask_nll_sum,
        duration_nll_sum,
        grads,
    })
}

fn step_over_prepared(
    params: &mut ModelParams,
    opt: &mut AdamState,
    prepared: Vec<(crate::sequence::ComposedSequence, LossTargets)>,
    stage: TrainStage,
    lr: f64,
) -> Result<StepReport, TrainError> {
    let start = Instant::now();
    let k_mask: usize = prepared.iter().map(|(_, t)| t.speech.len()).sum();
    let k_dur: usize = prepared.iter().map(|(_, t)| t.duration.len()).sum();
    let mask_scale = if k_mask > 0 { 1.0 / k_mask as f64 } else { 0.0 };
    let dur_scale = if k_dur > 0 { 1.0 / k_dur as f64 } else { 0.0 };

    let outcomes: Vec<Result<ExampleOutcome, TrainError>> = prepared
        .par_iter()
        .map(|(seq, targets)| run_example(params, seq, targets, mask_scale, dur_scale))
        .collect();

    let mut total_grads: Option<Vec<Vec<f64>>> = None;
    let mut l_mask = 0.0;
    let mut l_duration = 0.0;
    for outcome in outcomes {
        let outcome = outcome?;
        l_mask += outcome.mask_nll_sum * mask_scale;
        l_duration += outcome.duration_nll_sum * dur_scale;
        match &mut total_grads {
            None => total_grads = Some(outcome.grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(outcome.grads) {
                    a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut grads = total_grads.expect("non-empty batch");
    if k_mask + k_dur > 0 {
        opt.apply(params, &mut grads, lr);
    } else {
        opt.step += 1;
    }
    Ok(StepReport {
        step: opt.step,
        stage,
        l_mask,
        l_duration,
        total: l_mask + l_duration,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One pretraining step: every example gets the alternating-mask sequence
/// and a single forward supervises all of its masked spans at once.
pub fn pretrain_step(
    params: &mut ModelParams,
    opt: &mut AdamState,
    batch: &[&AlignedExample],
    vocab: &VocabLayout,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let prepared: Vec<_> = batch
        .iter()
        .map(|ex| {
            let (seq, targets, _) = build_pretrain_sequence(*ex, rng, vocab);
            (seq, targets)
        })
        .collect();
    step_over_prepared(params, opt, prepared, TrainStage::Pretrain, lr)
}

/// One fine-tuning step: a uniform decode step n is drawn per example and
/// only span n plus the trailing duration placeholder are supervised.
pub fn finetune_step(
    params: &mut ModelParams,
    opt: &mut AdamState,
    batch: &[&AlignedExample],
    vocab: &VocabLayout,
    q: usize,
    supervise_all_durations: bool,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let prepared = batch
        .iter()
        .map(|ex| {
            let n = rng.gen_range(1..=ex.text_len());
            build_finetune_sequence(ex, n, q, vocab, supervise_all_durations)
                .map_err(TrainError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    step_over_prepared(params, opt, prepared, TrainStage::Finetune, lr)
}

/// Teacher-forced exact-match metrics over a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of masked speech positions whose argmax equals the target.
    pub speech_token_accuracy: f64,
    /// Fraction of supervised duration placeholders predicted exactly.
    pub duration_exact_match: f64,
    /// Fraction of spans whose every position is correct.
    pub span_exact_match: f64,
    pub speech_positions: usize,
    pub duration_targets: usize,
    pub spans: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Evaluate every (example, step) pair with ground-truth history.
pub fn evaluate(
    params: &ModelParams,
    corpus: &[AlignedExample],
    q: usize,
    vocab: &VocabLayout,
) -> Result<EvalMetrics, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let counts: Vec<Result<(usize, usize, usize, usize, usize, usize), TrainError>> = corpus
        .par_iter()
        .map(|ex| {
            let mut speech_ok = 0;
            let mut speech_total = 0;
            let mut dur_ok = 0;
            let mut dur_total = 0;
            let mut span_ok = 0;
            let mut span_total = 0;
            for n in 1..=ex.text_len() {
                let (seq, targets) = build_finetune_sequence(ex, n, q, vocab, false)?;
                let mask = designed_mask_for(&seq)?;
                let (speech, duration) = crate::model::forward(params, seq.ids(), &mask)?;
                let w = speech.shape[1];
                let mut whole_span = true;
                for &(pos, class) in &targets.speech {
                    let row = &speech.data[pos * w..(pos + 1) * w];
                    if argmax(row) == class {
                        speech_ok += 1;
                    } else {
                        whole_span = false;
                    }
                    speech_total += 1;
                }
                span_total += 1;
                if whole_span {
                    span_ok += 1;
                }
                let c = duration.shape[1];
                for &(pos, class) in &targets.duration {
                    let row = &duration.data[pos * c..(pos + 1) * c];
                    if argmax(row) == class {
                        dur_ok += 1;
                    }
                    dur_total += 1;
                }
            }
            Ok((speech_ok, speech_total, dur_ok, dur_total, span_ok, span_total))
        })
        .collect();

    let mut totals = (0, 0, 0, 0, 0, 0);
    for c in counts {
        let (a, b, c2, d, e, f) = c?;
        totals.0 += a;
        totals.1 += b;
        totals.2 += c2;
        totals.3 += d;
        totals.4 += e;
        totals.5 += f;
    }
    Ok(EvalMetrics {
        speech_token_accuracy: totals.0 as f64 / totals.1.max(1) as f64,
        duration_exact_match: totals.2 as f64 / totals.3.max(1) as f64,
        span_exact_match: totals.4 as f64 / totals.5.max(1) as f64,
        speech_positions: totals.1,
        duration_targets: totals.3,
        spans: totals.5,
    })
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub reports: Vec<StepReport>,
}

/// Run one configured stage over a corpus, logging the loss curve, running
/// periodic evaluation, and writing the final checkpoint.
pub fn run_training(
    config: &TrainConfig,
    corpus: &[AlignedExample],
    eval_corpus: Option<&[AlignedExample]>,
    vocab: &VocabLayout,
    mut params: ModelParams,
    optimizer: Option<AdamSnapshot>,
) -> Result<TrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut opt = match optimizer {
        Some(snap) => AdamState::from_snapshot(snap),
        None => AdamState::new(&params),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::with_capacity(config.steps);

    let mut curve = match &config.curve_path {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| TrainError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let mut w = BufWriter::new(file);
            writeln!(w, "step,stage,l_mask,l_duration,total,wall_ms").map_err(|e| {
                TrainError::Io {
                    path: path.display().to_string(),
                    source: e,
                }
            })?;
            Some((w, path.display().to_string()))
        }
        None => None,
    };

    for _ in 0..config.steps {
        let indices: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.gen_range(0..corpus.len()))
            .collect();
        let batch: Vec<&AlignedExample> = indices.iter().map(|&i| &corpus[i]).collect();
        let lr = lr_at(opt.step + 1, config.steps, config.learning_rate, config.warmup_steps);
        let report = match config.stage {
            TrainStage::Pretrain => {
                pretrain_step(&mut params, &mut opt, &batch, vocab, lr, &mut rng)?
            }
            TrainStage::Finetune => finetune_step(
                &mut params,
                &mut opt,
                &batch,
                vocab,
                config.q,
                config.supervise_all_durations,
                lr,
                &mut rng,
            )?,
        };
        if let Some((w, path)) = &mut curve {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.3}",
                report.step, report.stage, report.l_mask, report.l_duration, report.total,
                report.wall_ms
            )
            .map_err(|e| TrainError::Io {
                path: path.clone(),
                source: e,
            })?;
        }
        if config.eval_every > 0 && report.step % config.eval_every as u64 == 0 {
            if let Some(held_out) = eval_corpus {
                let m = evaluate(&params, held_out, config.q, vocab)?;
                eprintln!(
                    "step {} [{}]: loss {:.4} | held-out speech acc {:.4}, duration acc {:.4}",
                    report.step, report.stage, report.total, m.speech_token_accuracy,
                    m.duration_exact_match
                );
            }
        }
        reports.push(report);
    }

    if let Some((mut w, path)) = curve {
        w.flush().map_err(|e| TrainError::Io {
            path,
            source: e,
        })?;
    }
    if let Some(path) = &config.checkpoint_path {
        let ckpt = Checkpoint::from_params(&params, vocab, opt.step, Some(opt.snapshot()));
        save_checkpoint(path, &ckpt)?;
    }
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::model::ModelConfig;

    fn small_setup() -> (VocabLayout, ModelParams, Vec<AlignedExample>) {
        let vocab = VocabLayout::desk_default();
        let config = ModelConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 16,
            ffn_dim: 32,
            max_seq_len: 128,
            ..ModelConfig::desk_default(&vocab)
        };
        let params = ModelParams::init(config, 1).unwrap();
        let corpus = generate_corpus(24, 5, &vocab, (3, 8)).unwrap();
        (vocab, params, corpus)
    }

    #[test]
    fn initial_losses_are_near_uniform() {
        let (vocab, mut params, corpus) = small_setup();
        let mut opt = AdamState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<&AlignedExample> = corpus.iter().take(8).collect();
        let report =
            finetune_step(&mut params, &mut opt, &batch, &vocab, 1, false, 0.0, &mut rng).unwrap();
        let ln_vs = (vocab.speech_vocab_size as f64).ln();
        let ln_dc = (vocab.num_duration_classes() as f64).ln();
        assert!((report.l_mask - ln_vs).abs() / ln_vs < 0.1, "{}", report.l_mask);
        assert!(
            (report.l_duration - ln_dc).abs() / ln_dc < 0.1,
            "{}",
            report.l_duration
        );
    }

    #[test]
    fn steps_are_deterministic_under_fixed_seeds() {
        let (vocab, params, corpus) = small_setup();
        let run = || {
            let mut p = params.clone();
            let mut opt = AdamState::new(&p);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let batch: Vec<&AlignedExample> = corpus.iter().take(6).collect();
            let mut out = Vec::new();
            for _ in 0..3 {
                out.push(
                    pretrain_step(&mut p, &mut opt, &batch, &vocab, 1e-3, &mut rng).unwrap(),
                );
            }
            out
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.same_losses(y));
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (vocab, mut params, _) = small_setup();
        let mut opt = AdamState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            pretrain_step(&mut params, &mut opt, &[], &vocab, 1e-3, &mut rng),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn losses_decrease_over_short_run() {
        let (vocab, params, corpus) = small_setup();
        let config = TrainConfig {
            steps: 60,
            batch_size: 8,
            learning_rate: 2e-3,
            warmup_steps: 10,
            ..TrainConfig::desk_default(TrainStage::Pretrain)
        };
        let out = run_training(&config, &corpus, None, &vocab, params, None).unwrap();
        let first: f64 = out.reports[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let last: f64 = out.reports[50..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(
            last < first,
            "loss did not decrease: {first:.4} -> {last:.4}"
        );
    }

    #[test]
    fn zero_steps_keeps_parameters() {
        let (vocab, params, corpus) = small_setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.ckpt");
        let config = TrainConfig {
            steps: 0,
            checkpoint_path: Some(path.clone()),
            ..TrainConfig::desk_default(TrainStage::Pretrain)
        };
        let before: Vec<Vec<f64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data.clone())
            .collect();
        let out = run_training(&config, &corpus, None, &vocab, params, None).unwrap();
        for ((_, t), want) in out.params.named_tensors().iter().zip(&before) {
            assert_eq!(&t.data, want);
        }
        let loaded = crate::checkpoint::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 0);
        for ((_, t), want) in loaded.tensors.iter().zip(&before) {
            assert_eq!(&t.data, want);
        }
    }

    #[test]
    fn stop_class_is_the_target_at_the_last_step() {
        let (vocab, _, corpus) = small_setup();
        let ex = &corpus[0];
        let l = ex.text_len();
        let (_, targets) = build_finetune_sequence(ex, l, 1, &vocab, false).unwrap();
        assert_eq!(targets.duration.last().unwrap().1, crate::corpus::STOP_CLASS);
    }

    #[test]
    fn untrained_eval_sits_at_chance_level() {
        let (vocab, params, corpus) = small_setup();
        let metrics = evaluate(&params, &corpus[..12], 1, &vocab).unwrap();
        let chance = 1.0 / vocab.speech_vocab_size as f64;
        assert!(
            metrics.speech_token_accuracy < 10.0 * chance + 0.05,
            "{}",
            metrics.speech_token_accuracy
        );
    }

    #[test]
    fn lr_schedule_shape() {
        let base = 3e-4;
        assert!((lr_at(50, 1000, base, 100) - base * 0.5).abs() < 1e-12);
        assert!((lr_at(100, 1000, base, 100) - base).abs() < 1e-12);
        assert!(lr_at(1000, 1000, base, 100) >= base * MIN_LR_FACTOR - 1e-12);
        assert!(lr_at(550, 1000, base, 100) < base);
    }

    // Gradients must be identical whether the loss is built by selecting
    // rows of the full head logits or by projecting only the selected
    // hidden rows through the heads.
    #[test]
    fn unsupervised_positions_contribute_no_gradient() {
        let (vocab, params, corpus) = small_setup();
        let (seq, targets) = build_finetune_sequence(&corpus[0], 2, 1, &vocab, false).unwrap();
        let mask = designed_mask_for(&seq).unwrap();
        let n = seq.len();

        // route A — trainer path: select rows of full logits
        let mut tape_a = Tape::new();
        let pass = forward_on_tape(&params, &mut tape_a, seq.ids(), &mask).unwrap();
        let nll_s = supervised_nll(&mut tape_a, pass.speech_logits, &targets.speech, n).unwrap();
        let nll_d =
            supervised_nll(&mut tape_a, pass.duration_logits, &targets.duration, n).unwrap();
        let ls = tape_a.mean_all(nll_s).unwrap();
        let ld = tape_a.mean_all(nll_d).unwrap();
        let loss_a = tape_a.add(ls, ld).unwrap();
        tape_a.backward(loss_a).unwrap();
        let flat_a = pass.bound.flat();

        // route B — select hidden rows first, then project through the heads
        let mut tape_b = Tape::new();
        let pass_b = forward_on_tape(&params, &mut tape_b, seq.ids(), &mask).unwrap();
        let s_positions: Vec<usize> = targets.speech.iter().map(|&(p, _)| p).collect();
        let s_classes: Vec<usize> = targets.speech.iter().map(|&(_, c)| c).collect();
        let sel = selection_matrix(&mut tape_b, &s_positions, n);
        let hidden_rows = tape_b.matmul(sel, pass_b.final_hidden).unwrap();
        let picked = tape_b.matmul(hidden_rows, pass_b.bound.speech_head).unwrap();
        let nll_s = tape_b.cross_entropy_rows(picked, &s_classes).unwrap();
        let d_positions: Vec<usize> = targets.duration.iter().map(|&(p, _)| p).collect();
        let d_classes: Vec<usize> = targets.duration.iter().map(|&(_, c)| c).collect();
        let dsel = selection_matrix(&mut tape_b, &d_positions, n);
        let hidden_d = tape_b.matmul(dsel, pass_b.final_hidden).unwrap();
        let dpicked = tape_b.matmul(hidden_d, pass_b.bound.duration_head).unwrap();
        let nll_d = tape_b.cross_entropy_rows(dpicked, &d_classes).unwrap();
        let ls = tape_b.mean_all(nll_s).unwrap();
        let ld = tape_b.mean_all(nll_d).unwrap();
        let loss_b = tape_b.add(ls, ld).unwrap();
        tape_b.backward(loss_b).unwrap();
        let flat_b = pass_b.bound.flat();

        assert!((tape_a.data(loss_a)[0] - tape_b.data(loss_b)[0]).abs() < 1e-12);
        for (&ia, &ib) in flat_a.iter().zip(&flat_b) {
            let ga = tape_a.grad(ia).map(|g| g.to_vec()).unwrap_or_default();
            let gb = tape_b.grad(ib).map(|g| g.to_vec()).unwrap_or_default();
            assert_eq!(ga.len(), gb.len());
            for (a, b) in ga.iter().zip(&gb) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0),
                    "gradient routes diverge: {a} vs {b}"
                );
            }
        }
    }
}
