//! Streaming decode session: text tokens arrive one at a time, and once the
//! look-ahead gate opens every arriving token costs exactly one forward pass
//! that decodes its whole speech-token span and the duration of the next
//! one. A single extra bootstrap pass predicts the first span's length.
//!
//! The session keeps no key-value cache: every step recomputes the full
//! composed sequence. [`decode_offline`] rebuilds the sequence from scratch
//! at every step instead of mutating it incrementally; with greedy sampling
//! the two paths must produce identical token streams, which is the
//! correctness bar for any future caching shortcut.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{AlignedExample, VocabLayout, STOP_CLASS};
use crate::mask::{build_causal_mask, designed_mask_for, MaskError};
use crate::model::{forward, ModelError, ModelParams};
use crate::sequence::{build_prompt_prefix, ComposedSequence, SequenceError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("input after end-of-text")]
    InputAfterEndOfText,
    #[error("text token {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeechSampling {
    Greedy,
    TopK(usize),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub q: usize,
    /// Speech tokens per decoder chunk.
    pub chunk_size: usize,
    /// Top-k restriction for duration sampling (1 = greedy).
    pub duration_topk: usize,
    /// Speech-rate modulation factor applied to sampled durations.
    pub duration_modulation: f64,
    pub speech_sampling: SpeechSampling,
    pub seed: u64,
    /// When false, decode under the plain causal mask (ablation).
    pub use_designed_mask: bool,
    /// Samples the mock decoder emits per speech token.
    pub samples_per_token: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            q: 1,
            chunk_size: 15,
            duration_topk: 1,
            duration_modulation: 1.0,
            speech_sampling: SpeechSampling::Greedy,
            seed: 0,
            use_designed_mask: true,
            samples_per_token: 4,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.chunk_size < 1 {
            return Err(SessionError::InvalidConfig("chunk_size must be >= 1".into()));
        }
        if self.duration_topk < 1 {
            return Err(SessionError::InvalidConfig("duration_topk must be >= 1".into()));
        }
        if !(self.duration_modulation > 0.0) {
            return Err(SessionError::InvalidConfig(
                "duration_modulation must be positive".into(),
            ));
        }
        if let SpeechSampling::TopK(k) = self.speech_sampling {
            if k < 1 {
                return Err(SessionError::InvalidConfig("speech top-k must be >= 1".into()));
            }
        }
        if self.samples_per_token < 1 {
            return Err(SessionError::InvalidConfig(
                "samples_per_token must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One unit of streaming input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextInput {
    Token(usize),
    EndOfText,
}

/// Fixed-rate samples produced by the mock chunk decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk {
    pub samples: Vec<f64>,
    /// Half-open range of generated-token indices this chunk covers.
    pub token_range: (usize, usize),
    pub index: usize,
}

/// Deterministic stand-in for a token-to-waveform decoder: token k becomes
/// `samples_per_token` copies of (k+1)/V_s. Concatenation-homomorphic, so
/// chunked and whole-stream decoding agree.
pub fn mock_decode(
    tokens: &[usize],
    chunk_index: usize,
    token_offset: usize,
    samples_per_token: usize,
    speech_vocab: usize,
) -> AudioChunk {
    let mut samples = Vec::with_capacity(tokens.len() * samples_per_token);
    for &k in tokens {
        let value = (k + 1) as f64 / speech_vocab as f64;
        samples.extend(std::iter::repeat(value).take(samples_per_token));
    }
    AudioChunk {
        samples,
        token_range: (token_offset, token_offset + tokens.len()),
        index: chunk_index,
    }
}

/// Sample a duration class from a logits row: restrict to the top-k classes,
/// renormalize, draw, then apply the modulation factor `r` with round-half-up
/// and clamp into [1, max]. STOP is never modulated.
pub fn sample_duration(
    logits: &[f64],
    topk: usize,
    r: f64,
    max_class: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let class = sample_topk(logits, topk, rng);
    if class == STOP_CLASS {
        return STOP_CLASS;
    }
    let modulated = (r * class as f64).round() as usize;
    modulated.clamp(1, max_class)
}

/// Sample one speech token per row of the newest span's logits.
pub fn sample_speech(rows: &[&[f64]], policy: SpeechSampling, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rows.iter()
        .map(|row| match policy {
            SpeechSampling::Greedy => argmax(row),
            SpeechSampling::TopK(k) => sample_topk(row, k, rng),
        })
        .collect()
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

fn sample_topk(logits: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    if k <= 1 {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    order.truncate(k);
    let max = logits[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (logits[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (&idx, &w) in order.iter().zip(&weights) {
        if draw < w {
            return idx;
        }
        draw -= w;
    }
    *order.last().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    Feed,
    Forward,
    Emit,
    Stop,
}

impl std::fmt::Display for TraceEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TraceEventKind::Feed => "feed",
            TraceEventKind::Forward => "forward",
            TraceEventKind::Emit => "emit",
            TraceEventKind::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub step: usize,
    pub kind: TraceEventKind,
    pub tokens_in: usize,
    pub span_len: usize,
    pub cum_speech_tokens: usize,
    pub wall_ms: f64,
}

/// Live decoding state over shared read-only parameters.
pub struct StreamSession<'a> {
    params: &'a ModelParams,
    vocab: VocabLayout,
    cfg: SessionConfig,
    seq: ComposedSequence,
    pending: VecDeque<usize>,
    /// Live (non-prompt) text tokens received / inserted into the sequence.
    fed: usize,
    consumed: usize,
    /// Live spans decoded.
    live_spans: usize,
    end_of_text: bool,
    closed: bool,
    bootstrapped: bool,
    speech_out: Vec<usize>,
    emitted: usize,
    chunk_count: usize,
    forwards: usize,
    step_counter: usize,
    trace: Vec<TraceEvent>,
    rng: ChaCha8Rng,
    started: Instant,
}

impl<'a> StreamSession<'a> {
    /// Open a session, optionally conditioned on a rendered speech prompt.
    pub fn open(
        params: &'a ModelParams,
        vocab: VocabLayout,
        cfg: SessionConfig,
        prompt: Option<&AlignedExample>,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        let seq = match prompt {
            Some(p) => build_prompt_prefix(p, &vocab)?,
            None => ComposedSequence::empty(cfg.q),
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(StreamSession {
            params,
            vocab,
            cfg,
            seq,
            pending: VecDeque::new(),
            fed: 0,
            consumed: 0,
            live_spans: 0,
            end_of_text: false,
            closed: false,
            bootstrapped: false,
            speech_out: Vec::new(),
            emitted: 0,
            chunk_count: 0,
            forwards: 0,
            step_counter: 0,
            trace: Vec::new(),
            rng,
            started: Instant::now(),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Forward passes run so far (bootstrap included).
    pub fn forward_count(&self) -> usize {
        self.forwards
    }

    /// All generated speech tokens, emitted or not.
    pub fn speech_tokens(&self) -> &[usize] {
        &self.speech_out
    }

    /// Lengths of the decoded spans.
    pub fn span_lens(&self) -> &[usize] {
        &self.seq.meta.span_lens[self.prompt_spans()..]
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// The composed sequence as it stands (prompt included).
    pub fn sequence(&self) -> &ComposedSequence {
        &self.seq
    }

    fn prompt_spans(&self) -> usize {
        self.seq.meta.n_spans - self.live_spans - usize::from(self.has_open_span())
    }

    fn has_open_span(&self) -> bool {
        // a padded-but-not-yet-decoded masked span
        self.bootstrapped && !self.closed && self.seq.meta.n_spans > 0 && {
            let (s, e) = self.seq.span_bounds()[self.seq.meta.n_spans - 1];
            self.seq.roles()[s..=e]
                .iter()
                .any(|r| *r == crate::sequence::PositionRole::MaskedSpeech)
        }
    }

    fn log(&mut self, kind: TraceEventKind, span_len: usize) {
        self.trace.push(TraceEvent {
            step: self.step_counter,
            kind,
            tokens_in: self.fed,
            span_len,
            cum_speech_tokens: self.speech_out.len(),
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
    }

    /// Write the trace as CSV: `step,event,tokens_in,span_len,cum_speech_tokens,wall_ms`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<(), SessionError> {
        writeln!(w, "step,event,tokens_in,span_len,cum_speech_tokens,wall_ms")?;
        for e in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                e.step, e.kind, e.tokens_in, e.span_len, e.cum_speech_tokens, e.wall_ms
            )?;
        }
        Ok(())
    }

    /// Feed one token (or the end-of-text signal) and run every decode step
    /// the gate allows, returning the audio chunks that became ready.
    pub fn feed_token(&mut self, input: TextInput) -> Result<Vec<AudioChunk>, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        match input {
            TextInput::Token(id) => {
                if self.end_of_text {
                    return Err(SessionError::InputAfterEndOfText);
                }
                if id >= self.vocab.text_vocab_size {
                    return Err(SessionError::TokenOutOfRange {
                        id,
                        vocab: self.vocab.text_vocab_size,
                    });
                }
                self.fed += 1;
                self.pending.push_back(id);
                self.log(TraceEventKind::Feed, 0);
            }
            TextInput::EndOfText => {
                if self.end_of_text {
                    return Err(SessionError::InputAfterEndOfText);
                }
                self.end_of_text = true;
            }
        }
        self.pump()
    }

    fn consume_text_until(&mut self, target: usize) -> Result<(), SequenceError> {
        while self.consumed < target {
            let id = self
                .pending
                .pop_front()
                .expect("gate opened without buffered tokens");
            self.seq.push_text_token(id, &self.vocab)?;
            self.consumed += 1;
        }
        Ok(())
    }

    fn run_forward(&mut self) -> Result<(crate::tensor::Tensor, crate::tensor::Tensor), SessionError> {
        let mask = if self.cfg.use_designed_mask {
            designed_mask_for(&self.seq)?
        } else {
            build_causal_mask(self.seq.len())
        };
        let out = forward(self.params, self.seq.ids(), &mask)?;
        self.forwards += 1;
        Ok(out)
    }

    fn close_with_flush(&mut self, out: &mut Vec<AudioChunk>) {
        if self.emitted < self.speech_out.len() {
            out.push(self.emit_chunk(self.speech_out.len() - self.emitted));
        }
        self.closed = true;
        self.log(TraceEventKind::Stop, 0);
    }

    fn emit_chunk(&mut self, len: usize) -> AudioChunk {
        let tokens = &self.speech_out[self.emitted..self.emitted + len];
        let chunk = mock_decode(
            tokens,
            self.chunk_count,
            self.emitted,
            self.cfg.samples_per_token,
            self.vocab.speech_vocab_size,
        );
        self.emitted += len;
        self.chunk_count += 1;
        let cum = self.speech_out.len();
        self.trace.push(TraceEvent {
            step: self.step_counter,
            kind: TraceEventKind::Emit,
            tokens_in: self.fed,
            span_len: len,
            cum_speech_tokens: cum,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
        chunk
    }

    fn emit_ready(&mut self, out: &mut Vec<AudioChunk>) {
        while self.speech_out.len() - self.emitted >= self.cfg.chunk_size {
            let chunk = self.emit_chunk(self.cfg.chunk_size);
            out.push(chunk);
        }
    }

    // Decode span `n` (live numbering) only when its look-ahead text exists
    // and, before end-of-text, one token beyond the span is known so the
    // end-of-text marker lands exactly as in training.
    fn span_gate(&self, n: usize) -> bool {
        if self.end_of_text {
            n <= self.fed
        } else {
            self.fed >= n + self.cfg.q.max(1)
        }
    }

    fn pump(&mut self) -> Result<Vec<AudioChunk>, SessionError> {
        let mut out = Vec::new();
        loop {
            if self.closed {
                break;
            }
            if !self.bootstrapped {
                if self.end_of_text && self.fed == 0 {
                    self.close_with_flush(&mut out);
                    break;
                }
                let ready = self.fed >= self.cfg.q + 1 || (self.end_of_text && self.fed >= 1);
                if !ready {
                    break;
                }
                self.consume_text_until(self.fed.min(self.cfg.q + 1))?;
                if self.end_of_text && self.fed == 1 {
                    self.seq.push_eot(&self.vocab)?;
                }
                self.seq.push_trailing_dur(&self.vocab)?;
                let (_, duration_logits) = self.run_forward()?;
                self.log(TraceEventKind::Forward, 0);
                let row = last_row(&duration_logits);
                let dur = sample_duration(
                    row,
                    self.cfg.duration_topk,
                    self.cfg.duration_modulation,
                    self.vocab.max_duration_class,
                    &mut self.rng,
                );
                self.bootstrapped = true;
                if dur == STOP_CLASS {
                    self.close_with_flush(&mut out);
                    break;
                }
                self.seq.pad_masked_span(dur, &self.vocab)?;
                continue;
            }

            let n = self.live_spans + 1;
            if !self.span_gate(n) {
                break;
            }
            self.step_counter += 1;
            let shown = if self.end_of_text {
                self.fed.min(n + self.cfg.q)
            } else {
                n + self.cfg.q
            };
            self.consume_text_until(shown)?;
            if self.end_of_text && n == self.fed && !self.seq.meta.has_eot {
                self.seq.push_eot(&self.vocab)?;
            }

            let (speech_logits, duration_logits) = self.run_forward()?;
            let (start, end) = self.seq.span_bounds()[self.seq.meta.n_spans - 1];
            let width = speech_logits.shape[1];
            let rows: Vec<&[f64]> = (start..=end)
                .map(|p| &speech_logits.data[p * width..(p + 1) * width])
                .collect();
            let tokens = sample_speech(&rows, self.cfg.speech_sampling, &mut self.rng);
            self.seq.update_newest_span(&tokens, &self.vocab)?;
            self.speech_out.extend_from_slice(&tokens);
            self.live_spans = n;
            self.log(TraceEventKind::Forward, tokens.len());
            self.emit_ready(&mut out);

            let next_dur = sample_duration(
                last_row(&duration_logits),
                self.cfg.duration_topk,
                self.cfg.duration_modulation,
                self.vocab.max_duration_class,
                &mut self.rng,
            );
            let finished = self.end_of_text && self.live_spans == self.fed;
            if finished || next_dur == STOP_CLASS {
                self.close_with_flush(&mut out);
                break;
            }
            self.seq.pad_masked_span(next_dur, &self.vocab)?;
        }
        Ok(out)
    }
}

fn last_row(t: &crate::tensor::Tensor) -> &[f64] {
    let cols = t.shape[1];
    let rows = t.shape[0];
    &t.data[(rows - 1) * cols..]
}

/// Result of a full offline decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineDecode {
    pub speech: Vec<usize>,
    pub span_lens: Vec<usize>,
    pub forwards: usize,
    /// STOP was sampled before the text ran out.
    pub stopped_early: bool,
}

// Fresh reconstruction of the session state for one decode step: prompt,
// visible text, end-of-text when due, decoded spans, then the current span
// masked at its sampled length.
fn rebuild_state(
    vocab: &VocabLayout,
    prompt: Option<&AlignedExample>,
    text_shown: &[usize],
    eot: bool,
    decoded: &[Vec<usize>],
    current_masked: Option<usize>,
) -> Result<ComposedSequence, SessionError> {
    let mut seq = match prompt {
        Some(p) => build_prompt_prefix(p, vocab)?,
        None => ComposedSequence::empty(0),
    };
    for &t in text_shown {
        seq.push_text_token(t, vocab)?;
    }
    if eot {
        seq.push_eot(vocab)?;
    }
    seq.push_trailing_dur(vocab)?;
    for span in decoded {
        seq.pad_masked_span(span.len(), vocab)?;
        seq.update_newest_span(span, vocab)?;
    }
    if let Some(len) = current_masked {
        seq.pad_masked_span(len, vocab)?;
    }
    Ok(seq)
}

/// Decode a complete sentence by rebuilding the composed sequence from
/// scratch at every step. Reference implementation for the streaming path.
pub fn decode_offline(
    params: &ModelParams,
    vocab: &VocabLayout,
    cfg: &SessionConfig,
    text: &[usize],
    prompt: Option<&AlignedExample>,
) -> Result<OfflineDecode, SessionError> {
    cfg.validate()?;
    for &t in text {
        if t >= vocab.text_vocab_size {
            return Err(SessionError::TokenOutOfRange {
                id: t,
                vocab: vocab.text_vocab_size,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = text.len();
    let mut decoded: Vec<Vec<usize>> = Vec::new();
    let mut forwards = 0;
    let mut stopped_early = false;

    if l == 0 {
        return Ok(OfflineDecode {
            speech: Vec::new(),
            span_lens: Vec::new(),
            forwards,
            stopped_early,
        });
    }

    let run = |seq: &ComposedSequence,
               params: &ModelParams|
     -> Result<(crate::tensor::Tensor, crate::tensor::Tensor), SessionError> {
        let mask = if cfg.use_designed_mask {
            designed_mask_for(seq)?
        } else {
            build_causal_mask(seq.len())
        };
        Ok(forward(params, seq.ids(), &mask)?)
    };

    // bootstrap: predict the first span's duration
    let shown = l.min(cfg.q + 1);
    let seq = rebuild_state(vocab, prompt, &text[..shown], l == 1, &decoded, None)?;
    let (_, duration_logits) = run(&seq, params)?;
    forwards += 1;
    let mut dur = sample_duration(
        last_row(&duration_logits),
        cfg.duration_topk,
        cfg.duration_modulation,
        vocab.max_duration_class,
        &mut rng,
    );

    for n in 1..=l {
        if dur == STOP_CLASS {
            stopped_early = true;
            break;
        }
        let shown = l.min(n + cfg.q);
        let seq = rebuild_state(
            vocab,
            prompt,
            &text[..shown],
            n == l,
            &decoded,
            Some(dur),
        )?;
        let (speech_logits, duration_logits) = run(&seq, params)?;
        forwards += 1;
        let (start, end) = seq.span_bounds()[seq.meta.n_spans - 1];
        let width = speech_logits.shape[1];
        let rows: Vec<&[f64]> = (start..=end)
            .map(|p| &speech_logits.data[p * width..(p + 1) * width])
            .collect();
        let tokens = sample_speech(&rows, cfg.speech_sampling, &mut rng);
        decoded.push(tokens);
        dur = sample_duration(
            last_row(&duration_logits),
            cfg.duration_topk,
            cfg.duration_modulation,
            vocab.max_duration_class,
            &mut rng,
        );
    }
    // a STOP sampled after the final span is the normal ending
    if decoded.len() == l {
        stopped_early = false;
    }

    Ok(OfflineDecode {
        speech: decoded.iter().flatten().copied().collect(),
        span_lens: decoded.iter().map(|s| s.len()).collect(),
        forwards,
        stopped_early,
    })
}
