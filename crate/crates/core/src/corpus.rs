//! Synthetic aligned corpus: text tokens, speech tokens, and per-token
//! durations generated by a fixed arithmetic rule.
//!
//! The rule makes the text→speech mapping a deterministic function of the
//! token id and its sentence position, so a trained model can be scored by
//! exact match instead of perceptual metrics. Corpora are stored one example
//! per line in a tab-separated text format (see [`save_corpus`]).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid vocab layout: {0}")]
    InvalidVocab(String),
    #[error("invalid sentence length range [{0}, {1}] (must lie within [1, 64])")]
    InvalidRange(usize, usize),
    #[error("line {line}: parse error: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: invariant violation in field `{field}`: {detail}")]
    Invariant {
        line: usize,
        field: &'static str,
        detail: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Embedding-id plan shared by every module: text ids first, then the
/// special tokens, then the speech ids.
///
/// Duration classes are a separate space: class 0 is the reserved STOP
/// class and classes 1..=max_duration_class are literal span lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLayout {
    pub text_vocab_size: usize,
    pub speech_vocab_size: usize,
    pub max_duration_class: usize,
    pub id_eot: usize,
    pub id_dur: usize,
    pub id_mask: usize,
    pub id_pad: usize,
    pub speech_base: usize,
    pub total_vocab: usize,
}

/// Duration class reserved for "no further spans".
pub const STOP_CLASS: usize = 0;

impl VocabLayout {
    pub fn new(
        text_vocab_size: usize,
        speech_vocab_size: usize,
        max_duration_class: usize,
    ) -> Result<Self, CorpusError> {
        if text_vocab_size < 2 || speech_vocab_size < 2 {
            return Err(CorpusError::InvalidVocab(format!(
                "need at least 2 text and 2 speech tokens, got {text_vocab_size}/{speech_vocab_size}"
            )));
        }
        if max_duration_class < 1 {
            return Err(CorpusError::InvalidVocab(
                "max duration class must be at least 1".into(),
            ));
        }
        Ok(VocabLayout {
            text_vocab_size,
            speech_vocab_size,
            max_duration_class,
            id_eot: text_vocab_size,
            id_dur: text_vocab_size + 1,
            id_mask: text_vocab_size + 2,
            id_pad: text_vocab_size + 3,
            speech_base: text_vocab_size + 4,
            total_vocab: text_vocab_size + 4 + speech_vocab_size,
        })
    }

    /// Desk-scale defaults: 32 text tokens, 64 speech tokens, durations up to 32.
    pub fn desk_default() -> Self {
        VocabLayout::new(32, 64, 32).expect("defaults are valid")
    }

    /// Embedding id of speech token `k`.
    pub fn speech_id(&self, k: usize) -> usize {
        debug_assert!(k < self.speech_vocab_size);
        self.speech_base + k
    }

    /// Duration classes including STOP.
    pub fn num_duration_classes(&self) -> usize {
        self.max_duration_class + 1
    }
}

/// One sentence of the corpus: text token ids, speech token ids, and the
/// end position of each text token's span within the speech sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedExample {
    pub text: Vec<usize>,
    pub speech: Vec<usize>,
    /// `durations_end[i]` is the 1-based end position of text token i's span;
    /// strictly increasing, with the last entry equal to `speech.len()`.
    pub durations_end: Vec<usize>,
}

impl AlignedExample {
    pub fn text_len(&self) -> usize {
        self.text.len()
    }

    pub fn speech_len(&self) -> usize {
        self.speech.len()
    }

    /// Span start (0-based, inclusive) of text token `i` within `speech`.
    pub fn span_start(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.durations_end[i - 1]
        }
    }

    /// Length of text token i's span.
    pub fn span_len(&self, i: usize) -> usize {
        self.durations_end[i] - self.span_start(i)
    }

    /// Speech tokens of text token i's span.
    pub fn span_tokens(&self, i: usize) -> &[usize] {
        &self.speech[self.span_start(i)..self.durations_end[i]]
    }

    /// Per-token span lengths l_1..l_L.
    pub fn span_lens(&self) -> Vec<usize> {
        (0..self.text.len()).map(|i| self.span_len(i)).collect()
    }

    /// Check every structural invariant, reporting the offending field.
    /// `line` is only used to label errors.
    pub fn validate(&self, vocab: &VocabLayout, line: usize) -> Result<(), CorpusError> {
        if self.text.is_empty() {
            return Err(CorpusError::Invariant {
                line,
                field: "text",
                detail: "empty text sequence".into(),
            });
        }
        if self.durations_end.len() != self.text.len() {
            return Err(CorpusError::Invariant {
                line,
                field: "durations",
                detail: format!(
                    "{} durations for {} text tokens",
                    self.durations_end.len(),
                    self.text.len()
                ),
            });
        }
        for &t in &self.text {
            if t >= vocab.text_vocab_size {
                return Err(CorpusError::Invariant {
                    line,
                    field: "text",
                    detail: format!("token id {t} outside text vocab {}", vocab.text_vocab_size),
                });
            }
        }
        for &s in &self.speech {
            if s >= vocab.speech_vocab_size {
                return Err(CorpusError::Invariant {
                    line,
                    field: "speech",
                    detail: format!(
                        "token id {s} outside speech vocab {}",
                        vocab.speech_vocab_size
                    ),
                });
            }
        }
        let mut prev = 0;
        for (i, &a) in self.durations_end.iter().enumerate() {
            if a <= prev {
                return Err(CorpusError::Invariant {
                    line,
                    field: "durations",
                    detail: format!("end positions must be strictly increasing at index {i}"),
                });
            }
            let len = a - prev;
            if len > vocab.max_duration_class {
                return Err(CorpusError::Invariant {
                    line,
                    field: "durations",
                    detail: format!(
                        "span length {len} exceeds max duration class {}",
                        vocab.max_duration_class
                    ),
                });
            }
            prev = a;
        }
        if prev != self.speech.len() {
            return Err(CorpusError::Invariant {
                line,
                field: "durations",
                detail: format!(
                    "final end position {prev} does not match speech length {}",
                    self.speech.len()
                ),
            });
        }
        Ok(())
    }
}

/// Ground-truth rule: text token `t` at sentence position `p` covers
/// `1 + ((t + p) mod 4)` speech tokens, and the o-th token of its span is
/// `(7t + 3o) mod V_s`.
pub fn rule_span(token: usize, position: usize, vocab: &VocabLayout) -> Vec<usize> {
    let len = rule_duration(token, position);
    (0..len)
        .map(|o| (7 * token + 3 * o) % vocab.speech_vocab_size)
        .collect()
}

pub fn rule_duration(token: usize, position: usize) -> usize {
    1 + ((token + position) % 4)
}

/// Generate a deterministic corpus of `num_sentences` examples. Sentence
/// lengths are drawn uniformly from `len_range` (inclusive) and token ids
/// uniformly from the text vocabulary; durations and speech tokens follow
/// the fixed rule above.
pub fn generate_corpus(
    num_sentences: usize,
    seed: u64,
    vocab: &VocabLayout,
    len_range: (usize, usize),
) -> Result<Vec<AlignedExample>, CorpusError> {
    let (lo, hi) = len_range;
    if lo < 1 || hi > 64 || lo > hi {
        return Err(CorpusError::InvalidRange(lo, hi));
    }
    if vocab.max_duration_class < 4 {
        return Err(CorpusError::InvalidVocab(
            "generator rule produces spans up to length 4".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_sentences);
    for _ in 0..num_sentences {
        let len = rng.gen_range(lo..=hi);
        let text: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(0..vocab.text_vocab_size))
            .collect();
        let mut speech = Vec::new();
        let mut durations_end = Vec::with_capacity(len);
        for (p, &t) in text.iter().enumerate() {
            speech.extend(rule_span(t, p, vocab));
            durations_end.push(speech.len());
        }
        out.push(AlignedExample {
            text,
            speech,
            durations_end,
        });
    }
    Ok(out)
}

fn ids_to_field(ids: &[usize]) -> String {
    ids.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Write a corpus in the line format
/// `TEXT\t<ids>\tDUR\t<lengths>\tSPEECH\t<ids>` with LF line endings.
/// Durations are stored as per-token lengths; end positions are rebuilt by
/// prefix sum on load.
pub fn save_corpus(path: &Path, corpus: &[AlignedExample]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for ex in corpus {
        let lens = ex.span_lens();
        writeln!(
            buf,
            "TEXT\t{}\tDUR\t{}\tSPEECH\t{}",
            ids_to_field(&ex.text),
            ids_to_field(&lens),
            ids_to_field(&ex.speech)
        )
        .expect("writing to memory cannot fail");
    }
    fs::write(path, buf).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_ids(field: &str, line: usize) -> Result<Vec<usize>, CorpusError> {
    field
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| CorpusError::Parse {
                line,
                detail: format!("`{tok}` is not a decimal id"),
            })
        })
        .collect()
}

/// Load a corpus, validating every example against the layout invariants.
/// An empty file is an empty corpus.
pub fn load_corpus(path: &Path, vocab: &VocabLayout) -> Result<Vec<AlignedExample>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 6 || fields[0] != "TEXT" || fields[2] != "DUR" || fields[4] != "SPEECH" {
            return Err(CorpusError::Parse {
                line,
                detail: "expected TEXT\\t...\\tDUR\\t...\\tSPEECH\\t...".into(),
            });
        }
        let text = parse_ids(fields[1], line)?;
        let lens = parse_ids(fields[3], line)?;
        let speech = parse_ids(fields[5], line)?;
        let mut durations_end = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            acc += l;
            durations_end.push(acc);
        }
        let ex = AlignedExample {
            text,
            speech,
            durations_end,
        };
        ex.validate(vocab, line)?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_id_plan() {
        let v = VocabLayout::new(32, 64, 32).unwrap();
        assert_eq!(v.id_eot, 32);
        assert_eq!(v.id_dur, 33);
        assert_eq!(v.id_mask, 34);
        assert_eq!(v.id_pad, 35);
        assert_eq!(v.speech_base, 36);
        assert_eq!(v.total_vocab, 100);
        assert_eq!(v.num_duration_classes(), 33);
        assert_eq!(v.speech_id(0), 36);
        assert_eq!(v.speech_id(63), 99);
    }

    #[test]
    fn rule_examples() {
        let v = VocabLayout::desk_default();
        // token 5 at position 0: length 1 + (5 mod 4) = 2, tokens 35, 38
        assert_eq!(rule_duration(5, 0), 2);
        assert_eq!(rule_span(5, 0, &v), vec![35 % 64, 38 % 64]);
        // token 0 at position 3: length 1 + (3 mod 4) = 4
        assert_eq!(rule_duration(0, 3), 4);
    }

    #[test]
    fn generated_examples_are_consistent() {
        let v = VocabLayout::desk_default();
        let corpus = generate_corpus(50, 7, &v, (3, 12)).unwrap();
        assert_eq!(corpus.len(), 50);
        for ex in &corpus {
            ex.validate(&v, 0).unwrap();
            assert_eq!(*ex.durations_end.last().unwrap(), ex.speech.len());
            for len in ex.span_lens() {
                assert!((1..=4).contains(&len));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let v = VocabLayout::desk_default();
        let a = generate_corpus(20, 99, &v, (3, 12)).unwrap();
        let b = generate_corpus(20, 99, &v, (3, 12)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(20, 100, &v, (3, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_length_range_is_rejected() {
        let v = VocabLayout::desk_default();
        assert!(matches!(
            generate_corpus(1, 0, &v, (0, 5)),
            Err(CorpusError::InvalidRange(0, 5))
        ));
        assert!(generate_corpus(1, 0, &v, (5, 65)).is_err());
        assert!(generate_corpus(1, 0, &v, (9, 3)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = VocabLayout::desk_default();
        let corpus = generate_corpus(30, 5, &v, (3, 12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        save_corpus(&path, &corpus).unwrap();
        let loaded = load_corpus(&path, &v).unwrap();
        assert_eq!(corpus, loaded);
        // byte-identical on re-save
        let path2 = dir.path().join("corpus2.txt");
        save_corpus(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let v = VocabLayout::desk_default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path, &v).unwrap().is_empty());
    }

    #[test]
    fn mismatched_duration_sum_is_invariant_violation() {
        let v = VocabLayout::desk_default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "TEXT\t1 2\tDUR\t2 2\tSPEECH\t7 10 13\n").unwrap();
        match load_corpus(&path, &v) {
            Err(CorpusError::Invariant { field, line, .. }) => {
                assert_eq!(field, "durations");
                assert_eq!(line, 1);
            }
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line_number() {
        let v = VocabLayout::desk_default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(
            &path,
            "TEXT\t1\tDUR\t1\tSPEECH\t7\nTEXT\t1\tDUR\tx\tSPEECH\t7\n",
        )
        .unwrap();
        match load_corpus(&path, &v) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
