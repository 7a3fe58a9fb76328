//! Composed model-input sequences.
//!
//! Every input the model ever sees has the same overall shape:
//!
//! ```text
//! [ text ..., (EOT), D, span_1, D, span_2, ..., D, span_n, (D) ]
//! ```
//!
//! where each `D` is a duration placeholder whose hidden state predicts the
//! length of the span that follows it, and each span holds the speech tokens
//! of one text token (or mask tokens while that span is being predicted).
//! The fine-tune form masks exactly one span and ends with a trailing `D`;
//! the pretraining form masks alternating spans and has no trailing `D`;
//! the streaming decoder grows a sequence incrementally through
//! [`ComposedSequence::push_text_token`], [`ComposedSequence::pad_masked_span`]
//! and [`ComposedSequence::update_newest_span`].
//!
//! Positions are 0-based internally. Span indices are 1-based, with 0
//! meaning "no span" (text and end-of-text positions). A duration
//! placeholder carries the index of the span it precedes.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{AlignedExample, VocabLayout, STOP_CLASS};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("step index n={n} out of range 1..={l}")]
    StepOutOfRange { n: usize, l: usize },
    #[error("span index {index} out of range 1..={bound}")]
    SpanOutOfRange { index: usize, bound: usize },
    #[error("need at least {need} buffered text tokens (or end-of-text), have {have}")]
    InsufficientTokens { have: usize, need: usize },
    #[error("cannot pad with the STOP duration class")]
    PadWithStop,
    #[error("duration class {class} out of range 1..={max}")]
    DurationOutOfRange { class: usize, max: usize },
    #[error("got {got} generated tokens for a masked span of length {expected}")]
    SpanLengthMismatch { expected: usize, got: usize },
    #[error("sequence has no trailing duration placeholder")]
    NoTrailingDur,
    #[error("newest span is not fully masked")]
    NoMaskedSpan,
    #[error("text segment is already closed by an end-of-text marker")]
    TextAfterEot,
    #[error("end-of-text marker already present")]
    DuplicateEot,
    #[error("trailing duration placeholder already present")]
    DuplicateTrailingDur,
    #[error("token id {id} outside text vocabulary of size {vocab}")]
    BadTextToken { id: usize, vocab: usize },
    #[error("malformed sequence: {0}")]
    Malformed(String),
}

/// What a sequence position is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionRole {
    Text,
    Eot,
    DurPlaceholder,
    Speech,
    MaskedSpeech,
}

impl fmt::Display for PositionRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PositionRole::Text => "TEXT",
            PositionRole::Eot => "EOT",
            PositionRole::DurPlaceholder => "DUR",
            PositionRole::Speech => "SPEECH",
            PositionRole::MaskedSpeech => "MASK",
        };
        f.write_str(s)
    }
}

/// Bookkeeping carried alongside the raw position vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMeta {
    /// Look-ahead the sequence was built for.
    pub q: usize,
    /// Spans currently present (prompt spans included).
    pub n_spans: usize,
    /// Text positions currently present (prompt text included).
    pub text_len: usize,
    /// Total text length of the sentence, once known.
    pub full_text_len: Option<usize>,
    /// l_1..l_n for the spans present.
    pub span_lens: Vec<usize>,
    pub has_eot: bool,
    pub has_trailing_dur: bool,
}

/// A flattened model input with per-position role and span annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedSequence {
    ids: Vec<usize>,
    roles: Vec<PositionRole>,
    span_index: Vec<usize>,
    /// Inclusive (start, end) positions of each span's speech region.
    span_bounds: Vec<(usize, usize)>,
    pub meta: SeqMeta,
}

/// Supervision attached to a composed sequence: speech-token classes at
/// masked positions and duration classes at placeholder positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LossTargets {
    pub speech: Vec<(usize, usize)>,
    pub duration: Vec<(usize, usize)>,
}

impl LossTargets {
    pub fn is_empty(&self) -> bool {
        self.speech.is_empty() && self.duration.is_empty()
    }
}

/// The alternating mask drawn for one pretraining example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainMaskPlan {
    /// One flag per text token; adjacent values always differ.
    pub bpe_mask: Vec<bool>,
    /// The span-wise expansion of `bpe_mask` over speech frames.
    pub frame_mask: Vec<bool>,
    /// 1-based indices of the masked spans (the set J).
    pub masked_spans: Vec<usize>,
}

impl ComposedSequence {
    pub fn empty(q: usize) -> Self {
        ComposedSequence {
            ids: Vec::new(),
            roles: Vec::new(),
            span_index: Vec::new(),
            span_bounds: Vec::new(),
            meta: SeqMeta {
                q,
                n_spans: 0,
                text_len: 0,
                full_text_len: None,
                span_lens: Vec::new(),
                has_eot: false,
                has_trailing_dur: false,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn roles(&self) -> &[PositionRole] {
        &self.roles
    }

    pub fn span_index(&self) -> &[usize] {
        &self.span_index
    }

    pub fn span_bounds(&self) -> &[(usize, usize)] {
        &self.span_bounds
    }

    /// Position of the trailing duration placeholder, if present.
    pub fn trailing_dur_position(&self) -> Option<usize> {
        if self.meta.has_trailing_dur {
            Some(self.ids.len() - 1)
        } else {
            None
        }
    }

    /// Positions of span `j` (1-based).
    pub fn span_positions(&self, j: usize) -> Result<std::ops::RangeInclusive<usize>, SequenceError> {
        if j == 0 || j > self.meta.n_spans {
            return Err(SequenceError::SpanOutOfRange {
                index: j,
                bound: self.meta.n_spans,
            });
        }
        let (s, e) = self.span_bounds[j - 1];
        Ok(s..=e)
    }

    // ── Raw appends used by the one-shot builders ────────────────────

    fn raw_push(&mut self, id: usize, role: PositionRole, span: usize) {
        self.ids.push(id);
        self.roles.push(role);
        self.span_index.push(span);
    }

    fn raw_push_span(&mut self, content: &SpanContent, vocab: &VocabLayout) {
        let span = self.meta.n_spans + 1;
        let start = self.ids.len();
        match content {
            SpanContent::Speech(tokens) => {
                for &t in *tokens {
                    self.raw_push(vocab.speech_id(t), PositionRole::Speech, span);
                }
                self.meta.span_lens.push(tokens.len());
            }
            SpanContent::Masked(len) => {
                for _ in 0..*len {
                    self.raw_push(vocab.id_mask, PositionRole::MaskedSpeech, span);
                }
                self.meta.span_lens.push(*len);
            }
        }
        self.span_bounds.push((start, self.ids.len() - 1));
        self.meta.n_spans = span;
    }

    // ── Streaming mutations ──────────────────────────────────────────

    /// Append a text token to the text segment. Later positions shift right.
    pub fn push_text_token(&mut self, id: usize, vocab: &VocabLayout) -> Result<(), SequenceError> {
        if self.meta.has_eot {
            return Err(SequenceError::TextAfterEot);
        }
        if id >= vocab.text_vocab_size {
            return Err(SequenceError::BadTextToken {
                id,
                vocab: vocab.text_vocab_size,
            });
        }
        let at = self.meta.text_len;
        self.ids.insert(at, id);
        self.roles.insert(at, PositionRole::Text);
        self.span_index.insert(at, 0);
        for b in &mut self.span_bounds {
            b.0 += 1;
            b.1 += 1;
        }
        self.meta.text_len += 1;
        Ok(())
    }

    /// Close the text segment with the end-of-text marker.
    pub fn push_eot(&mut self, vocab: &VocabLayout) -> Result<(), SequenceError> {
        if self.meta.has_eot {
            return Err(SequenceError::DuplicateEot);
        }
        let at = self.meta.text_len;
        self.ids.insert(at, vocab.id_eot);
        self.roles.insert(at, PositionRole::Eot);
        self.span_index.insert(at, 0);
        for b in &mut self.span_bounds {
            b.0 += 1;
            b.1 += 1;
        }
        self.meta.has_eot = true;
        self.meta.full_text_len = Some(self.meta.text_len);
        Ok(())
    }

    /// Append the trailing duration placeholder that closes a live sequence.
    pub fn push_trailing_dur(&mut self, vocab: &VocabLayout) -> Result<(), SequenceError> {
        if self.meta.has_trailing_dur {
            return Err(SequenceError::DuplicateTrailingDur);
        }
        self.raw_push(vocab.id_dur, PositionRole::DurPlaceholder, self.meta.n_spans + 1);
        self.meta.has_trailing_dur = true;
        Ok(())
    }

    /// Grow the sequence by one masked span of `dur` positions plus a new
    /// trailing duration placeholder. The previous trailing placeholder
    /// becomes the one preceding the new span.
    pub fn pad_masked_span(&mut self, dur: usize, vocab: &VocabLayout) -> Result<(), SequenceError> {
        if !self.meta.has_trailing_dur {
            return Err(SequenceError::NoTrailingDur);
        }
        if dur == STOP_CLASS {
            return Err(SequenceError::PadWithStop);
        }
        if dur > vocab.max_duration_class {
            return Err(SequenceError::DurationOutOfRange {
                class: dur,
                max: vocab.max_duration_class,
            });
        }
        self.meta.has_trailing_dur = false;
        self.raw_push_span(&SpanContent::Masked(dur), vocab);
        self.push_trailing_dur(vocab)
    }

    /// Overwrite the newest (masked) span with generated speech tokens and
    /// flip its roles to SPEECH.
    pub fn update_newest_span(
        &mut self,
        generated: &[usize],
        vocab: &VocabLayout,
    ) -> Result<(), SequenceError> {
        if self.meta.n_spans == 0 {
            if generated.is_empty() {
                return Ok(());
            }
            return Err(SequenceError::NoMaskedSpan);
        }
        let (start, end) = self.span_bounds[self.meta.n_spans - 1];
        let len = end - start + 1;
        if self.roles[start..=end]
            .iter()
            .any(|r| *r != PositionRole::MaskedSpeech)
        {
            return Err(SequenceError::NoMaskedSpan);
        }
        if generated.len() != len {
            return Err(SequenceError::SpanLengthMismatch {
                expected: len,
                got: generated.len(),
            });
        }
        for (offset, &tok) in generated.iter().enumerate() {
            self.ids[start + offset] = vocab.speech_id(tok);
            self.roles[start + offset] = PositionRole::Speech;
        }
        Ok(())
    }

    /// Copy of the sequence cut off right after span `j` ends.
    pub fn truncated_after_span(&self, j: usize) -> Result<ComposedSequence, SequenceError> {
        if j == 0 || j > self.meta.n_spans {
            return Err(SequenceError::SpanOutOfRange {
                index: j,
                bound: self.meta.n_spans,
            });
        }
        let end = self.span_bounds[j - 1].1;
        Ok(ComposedSequence {
            ids: self.ids[..=end].to_vec(),
            roles: self.roles[..=end].to_vec(),
            span_index: self.span_index[..=end].to_vec(),
            span_bounds: self.span_bounds[..j].to_vec(),
            meta: SeqMeta {
                q: self.meta.q,
                n_spans: j,
                text_len: self.meta.text_len,
                full_text_len: self.meta.full_text_len,
                span_lens: self.meta.span_lens[..j].to_vec(),
                has_eot: self.meta.has_eot,
                has_trailing_dur: false,
            },
        })
    }

    /// Debug dump, one position per line: `index\trole\tid\tspan`.
    pub fn dump_positions(&self) -> String {
        let mut out = String::new();
        for i in 0..self.ids.len() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                i, self.roles[i], self.ids[i], self.span_index[i]
            ));
        }
        out
    }

    /// Check every structural invariant of the composed layout.
    pub fn validate(&self, vocab: &VocabLayout) -> Result<(), SequenceError> {
        let err = |d: String| Err(SequenceError::Malformed(d));
        let n = self.ids.len();
        if self.roles.len() != n || self.span_index.len() != n {
            return err("roles/span_index length differs from ids".into());
        }
        if self.span_bounds.len() != self.meta.n_spans
            || self.meta.span_lens.len() != self.meta.n_spans
        {
            return err("span bookkeeping does not match n_spans".into());
        }
        let expected_len = self.meta.text_len
            + usize::from(self.meta.has_eot)
            + self.meta.n_spans
            + usize::from(self.meta.has_trailing_dur)
            + self.meta.span_lens.iter().sum::<usize>();
        if expected_len != n {
            return err(format!("length {n} does not match structure ({expected_len})"));
        }
        let mut pos = 0;
        for _ in 0..self.meta.text_len {
            if self.roles[pos] != PositionRole::Text
                || self.ids[pos] >= vocab.text_vocab_size
                || self.span_index[pos] != 0
            {
                return err(format!("position {pos} is not a valid text token"));
            }
            pos += 1;
        }
        if self.meta.has_eot {
            if self.roles[pos] != PositionRole::Eot || self.ids[pos] != vocab.id_eot {
                return err(format!("position {pos} is not the end-of-text marker"));
            }
            pos += 1;
        }
        for j in 1..=self.meta.n_spans {
            if self.roles[pos] != PositionRole::DurPlaceholder
                || self.ids[pos] != vocab.id_dur
                || self.span_index[pos] != j
            {
                return err(format!("span {j}: missing duration placeholder at {pos}"));
            }
            pos += 1;
            let (start, end) = self.span_bounds[j - 1];
            if start != pos || end + 1 != pos + self.meta.span_lens[j - 1] {
                return err(format!("span {j}: bounds disagree with layout"));
            }
            for _ in 0..self.meta.span_lens[j - 1] {
                match self.roles[pos] {
                    PositionRole::Speech => {
                        let id = self.ids[pos];
                        if id < vocab.speech_base || id >= vocab.total_vocab {
                            return err(format!("position {pos}: bad speech id {id}"));
                        }
                    }
                    PositionRole::MaskedSpeech => {
                        if self.ids[pos] != vocab.id_mask {
                            return err(format!("position {pos}: masked id is not MASK"));
                        }
                    }
                    other => return err(format!("position {pos}: unexpected role {other}")),
                }
                if self.span_index[pos] != j {
                    return err(format!("position {pos}: span index {} != {j}", self.span_index[pos]));
                }
                pos += 1;
            }
        }
        if self.meta.has_trailing_dur {
            if self.roles[pos] != PositionRole::DurPlaceholder
                || self.ids[pos] != vocab.id_dur
                || self.span_index[pos] != self.meta.n_spans + 1
            {
                return err(format!("position {pos} is not the trailing placeholder"));
            }
            pos += 1;
        }
        debug_assert_eq!(pos, n);
        Ok(())
    }
}

enum SpanContent<'a> {
    Speech(&'a [usize]),
    Masked(usize),
}

// ── One-shot builders ────────────────────────────────────────────────

/// Fine-tune form for decode step `n` (1-based): spans before `n` carry
/// ground truth, span `n` is fully masked, and the trailing placeholder is
/// supervised with the next span's length (STOP when `n` is the last token).
/// Text is truncated to `min(L, n + q)` and the end-of-text marker appears
/// only when `n == L`.
///
/// With `supervise_all_durations`, every placeholder before a span also
/// receives its span's length as a target (off by default; only the
/// trailing placeholder is supervised).
pub fn build_finetune_sequence(
    example: &AlignedExample,
    n: usize,
    q: usize,
    vocab: &VocabLayout,
    supervise_all_durations: bool,
) -> Result<(ComposedSequence, LossTargets), SequenceError> {
    let l = example.text_len();
    if n < 1 || n > l {
        return Err(SequenceError::StepOutOfRange { n, l });
    }
    let l_prime = l.min(n + q);
    let mut seq = ComposedSequence::empty(q);
    let mut targets = LossTargets::default();

    for &t in &example.text[..l_prime] {
        seq.raw_push(t, PositionRole::Text, 0);
    }
    seq.meta.text_len = l_prime;
    seq.meta.full_text_len = Some(l);
    if n == l {
        seq.raw_push(vocab.id_eot, PositionRole::Eot, 0);
        seq.meta.has_eot = true;
    }
    for j in 1..=n {
        let dur_pos = seq.len();
        seq.raw_push(vocab.id_dur, PositionRole::DurPlaceholder, j);
        if supervise_all_durations {
            targets.duration.push((dur_pos, example.span_len(j - 1)));
        }
        if j < n {
            seq.raw_push_span(&SpanContent::Speech(example.span_tokens(j - 1)), vocab);
        } else {
            seq.raw_push_span(&SpanContent::Masked(example.span_len(j - 1)), vocab);
            let (start, end) = seq.span_bounds[j - 1];
            for (pos, &tok) in (start..=end).zip(example.span_tokens(j - 1)) {
                targets.speech.push((pos, tok));
            }
        }
    }
    let trailing = seq.len();
    seq.push_trailing_dur(vocab)?;
    let next_dur = if n == l {
        STOP_CLASS
    } else {
        example.span_len(n)
    };
    targets.duration.push((trailing, next_dur));
    Ok((seq, targets))
}

/// Pretraining form: full text plus end-of-text, one placeholder per span,
/// no trailing placeholder. The first mask flag is a fair Bernoulli draw
/// and the rest alternate strictly; masked spans get speech targets and
/// their preceding placeholders get duration targets.
pub fn build_pretrain_sequence<R: Rng>(
    example: &AlignedExample,
    rng: &mut R,
    vocab: &VocabLayout,
) -> (ComposedSequence, LossTargets, PretrainMaskPlan) {
    let l = example.text_len();
    let mut bpe_mask = Vec::with_capacity(l);
    let first: bool = rng.gen_bool(0.5);
    for j in 0..l {
        bpe_mask.push(if j % 2 == 0 { first } else { !first });
    }
    let mut frame_mask = Vec::with_capacity(example.speech_len());
    for (i, &m) in bpe_mask.iter().enumerate() {
        frame_mask.extend(std::iter::repeat(m).take(example.span_len(i)));
    }
    let masked_spans: Vec<usize> = bpe_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| if m { Some(i + 1) } else { None })
        .collect();

    let mut seq = ComposedSequence::empty(0);
    let mut targets = LossTargets::default();
    for &t in &example.text {
        seq.raw_push(t, PositionRole::Text, 0);
    }
    seq.meta.text_len = l;
    seq.meta.full_text_len = Some(l);
    seq.raw_push(vocab.id_eot, PositionRole::Eot, 0);
    seq.meta.has_eot = true;

    for j in 1..=l {
        let masked = bpe_mask[j - 1];
        let dur_pos = seq.len();
        seq.raw_push(vocab.id_dur, PositionRole::DurPlaceholder, j);
        if masked {
            targets.duration.push((dur_pos, example.span_len(j - 1)));
            seq.raw_push_span(&SpanContent::Masked(example.span_len(j - 1)), vocab);
            let (start, end) = seq.span_bounds[j - 1];
            for (pos, &tok) in (start..=end).zip(example.span_tokens(j - 1)) {
                targets.speech.push((pos, tok));
            }
        } else {
            seq.raw_push_span(&SpanContent::Speech(example.span_tokens(j - 1)), vocab);
        }
    }

    (
        seq,
        targets,
        PretrainMaskPlan {
            bpe_mask,
            frame_mask,
            masked_spans,
        },
    )
}

/// First sequence of a streaming session: the visible text followed by one
/// duration placeholder whose hidden state predicts the first span length.
/// Requires `q + 1` buffered tokens, or end-of-text with at least one.
pub fn build_inference_init(
    text_so_far: &[usize],
    q: usize,
    end_of_text: bool,
    vocab: &VocabLayout,
) -> Result<ComposedSequence, SequenceError> {
    if text_so_far.len() < q + 1 && !(end_of_text && !text_so_far.is_empty()) {
        return Err(SequenceError::InsufficientTokens {
            have: text_so_far.len(),
            need: q + 1,
        });
    }
    let shown = text_so_far.len().min(q + 1);
    let mut seq = ComposedSequence::empty(q);
    for &t in &text_so_far[..shown] {
        seq.push_text_token(t, vocab)?;
    }
    if end_of_text {
        seq.meta.full_text_len = Some(text_so_far.len());
        // The marker joins only when the span about to be predicted is the last.
        if text_so_far.len() == 1 {
            seq.push_eot(vocab)?;
        }
    }
    seq.push_trailing_dur(vocab)?;
    Ok(seq)
}

/// Render a speech prompt in the composed layout with every span unmasked:
/// the session continues its text and speech segments as if the prompt had
/// just been generated. No end-of-text and no trailing placeholder.
pub fn build_prompt_prefix(
    prompt: &AlignedExample,
    vocab: &VocabLayout,
) -> Result<ComposedSequence, SequenceError> {
    let mut seq = ComposedSequence::empty(0);
    if prompt.text.is_empty() {
        return Ok(seq);
    }
    for &t in &prompt.text {
        if t >= vocab.text_vocab_size {
            return Err(SequenceError::BadTextToken {
                id: t,
                vocab: vocab.text_vocab_size,
            });
        }
        seq.raw_push(t, PositionRole::Text, 0);
    }
    seq.meta.text_len = prompt.text_len();
    for j in 1..=prompt.text_len() {
        seq.raw_push(vocab.id_dur, PositionRole::DurPlaceholder, j);
        seq.raw_push_span(&SpanContent::Speech(prompt.span_tokens(j - 1)), vocab);
    }
    Ok(seq)
}
