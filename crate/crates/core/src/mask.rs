//! Attention masks for the composed sequence.
//!
//! Text, end-of-text and duration-placeholder rows attend causally; rows
//! inside a speech span attend to all history plus the whole of their own
//! span, futures included. [`build_causal_mask`] is the ablation that drops
//! the intra-span widening, and [`oracle_mask`] re-derives the designed rule
//! position pair by position pair as an independent test reference.

use thiserror::Error;

use crate::sequence::{ComposedSequence, PositionRole};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("inconsistent span metadata: {0}")]
    InconsistentMetadata(String),
}

/// Boolean allow-matrix: `allow[i][j]` means position i may attend to j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMaskMatrix {
    n: usize,
    allow: Vec<bool>,
}

impl AttentionMaskMatrix {
    fn new_false(n: usize) -> Self {
        AttentionMaskMatrix {
            n,
            allow: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize) {
        self.allow[i * self.n + j] = true;
    }

    /// Row-major negation, shaped for `Tape::masked_fill` (true = blocked).
    pub fn blocked(&self) -> Vec<bool> {
        self.allow.iter().map(|&a| !a).collect()
    }

    /// Golden-file format: the side length on the first line, then one line
    /// of `0`/`1` characters per row.
    pub fn to_golden_string(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(if self.allows(i, j) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_golden_str(s: &str) -> Result<Self, MaskError> {
        let mut lines = s.lines();
        let n: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| MaskError::InconsistentMetadata("missing size header".into()))?;
        let mut mask = AttentionMaskMatrix::new_false(n);
        for i in 0..n {
            let row = lines
                .next()
                .ok_or_else(|| MaskError::InconsistentMetadata(format!("missing row {i}")))?;
            if row.len() != n {
                return Err(MaskError::InconsistentMetadata(format!(
                    "row {i} has {} characters, expected {n}",
                    row.len()
                )));
            }
            for (j, ch) in row.chars().enumerate() {
                match ch {
                    '1' => mask.set(i, j),
                    '0' => {}
                    other => {
                        return Err(MaskError::InconsistentMetadata(format!(
                            "unexpected character `{other}` in row {i}"
                        )))
                    }
                }
            }
        }
        Ok(mask)
    }
}

fn check_metadata(
    roles: &[PositionRole],
    span_index: &[usize],
    span_bounds: &[(usize, usize)],
) -> Result<(), MaskError> {
    let n = roles.len();
    if span_index.len() != n {
        return Err(MaskError::InconsistentMetadata(format!(
            "{} span indices for {n} roles",
            span_index.len()
        )));
    }
    for (k, &(s, e)) in span_bounds.iter().enumerate() {
        if s > e || e >= n {
            return Err(MaskError::InconsistentMetadata(format!(
                "span {} bounds ({s}, {e}) out of range",
                k + 1
            )));
        }
    }
    for (i, role) in roles.iter().enumerate() {
        match role {
            PositionRole::Speech | PositionRole::MaskedSpeech => {
                let k = span_index[i];
                if k == 0 || k > span_bounds.len() {
                    return Err(MaskError::InconsistentMetadata(format!(
                        "speech position {i} has span index {k} but {} spans are bounded",
                        span_bounds.len()
                    )));
                }
                let (s, e) = span_bounds[k - 1];
                if i < s || i > e {
                    return Err(MaskError::InconsistentMetadata(format!(
                        "speech position {i} lies outside its span bounds ({s}, {e})"
                    )));
                }
            }
            PositionRole::Text | PositionRole::Eot | PositionRole::DurPlaceholder => {}
        }
    }
    Ok(())
}

/// The designed mask: causal rows for text/end-of-text/placeholders, and for
/// each span a widened block letting every span row attend through the
/// span's end.
pub fn build_designed_mask(
    roles: &[PositionRole],
    span_index: &[usize],
    span_bounds: &[(usize, usize)],
) -> Result<AttentionMaskMatrix, MaskError> {
    check_metadata(roles, span_index, span_bounds)?;
    let n = roles.len();
    let mut mask = AttentionMaskMatrix::new_false(n);
    for i in 0..n {
        for j in 0..=i {
            mask.set(i, j);
        }
    }
    for &(s, e) in span_bounds {
        for i in s..=e {
            for j in i + 1..=e {
                mask.set(i, j);
            }
        }
    }
    Ok(mask)
}

/// Convenience wrapper pulling the metadata out of a composed sequence.
pub fn designed_mask_for(seq: &ComposedSequence) -> Result<AttentionMaskMatrix, MaskError> {
    build_designed_mask(seq.roles(), seq.span_index(), seq.span_bounds())
}

/// Plain lower-triangular mask (the "no designed mask" ablation).
pub fn build_causal_mask(n: usize) -> AttentionMaskMatrix {
    let mut mask = AttentionMaskMatrix::new_false(n);
    for i in 0..n {
        for j in 0..=i {
            mask.set(i, j);
        }
    }
    mask
}

/// Test reference: the same contract as [`build_designed_mask`], evaluated
/// independently for every (i, j) pair with no row or block shortcuts.
pub fn oracle_mask(
    roles: &[PositionRole],
    span_index: &[usize],
    span_bounds: &[(usize, usize)],
) -> AttentionMaskMatrix {
    let n = roles.len();
    let mut mask = AttentionMaskMatrix::new_false(n);
    for i in 0..n {
        for j in 0..n {
            let limit = match roles[i] {
                PositionRole::Text | PositionRole::Eot | PositionRole::DurPlaceholder => i,
                PositionRole::Speech | PositionRole::MaskedSpeech => {
                    span_bounds[span_index[i] - 1].1
                }
            };
            if j <= limit {
                mask.set(i, j);
            }
        }
    }
    mask
}
