//! First-packet-latency and real-time-factor models of the upstream-LLM →
//! token-generator → chunk-decoder pipeline, for this system and the
//! baseline architectures it is compared against.
//!
//! All times are integer nanoseconds internally (`std::time::Duration`), so
//! the analytic formulas, the discrete-event simulation, and their equality
//! tests are exact — no floating-point event-ordering ambiguity.
//!
//! First-packet latency (FPL) is the time until enough speech tokens exist
//! to feed the decoder its first chunk. The "L" flavor counts upstream text
//! generation at `d_llm` per token; the "A" flavor assumes the text is
//! already available and drops that term.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("missing parameter `{symbol}` for {model}")]
    MissingParameter {
        symbol: &'static str,
        model: ModelClass,
    },
    #[error("invalid latency parameters: {0}")]
    InvalidParams(String),
    #[error("empty span trace")]
    EmptyTrace,
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Pipeline architectures with distinct first-packet behavior.
///
/// - `CosyVoice` / `VallE`: autoregressive over speech tokens, need the full
///   text before decoding starts.
/// - `CosyVoice2`: interleaved text/speech turns; decoding starts after its
///   fixed five-token text turn.
/// - `MaskGct` / `F5Tts`: offline non-autoregressive; the whole utterance
///   appears after `b` sampling iterations.
/// - `Tmt`: the synchronous span decoder in this crate; decoding starts one
///   token after the look-ahead fills and each step covers a whole span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelClass {
    CosyVoice,
    VallE,
    CosyVoice2,
    MaskGct,
    F5Tts,
    Tmt,
}

impl ModelClass {
    pub const ALL: [ModelClass; 6] = [
        ModelClass::CosyVoice,
        ModelClass::VallE,
        ModelClass::CosyVoice2,
        ModelClass::MaskGct,
        ModelClass::F5Tts,
        ModelClass::Tmt,
    ];
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelClass::CosyVoice => "cosyvoice",
            ModelClass::VallE => "valle",
            ModelClass::CosyVoice2 => "cosyvoice2",
            ModelClass::MaskGct => "maskgct",
            ModelClass::F5Tts => "f5tts",
            ModelClass::Tmt => "tmt",
        })
    }
}

impl FromStr for ModelClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosyvoice" => Ok(ModelClass::CosyVoice),
            "valle" | "vall-e" => Ok(ModelClass::VallE),
            "cosyvoice2" => Ok(ModelClass::CosyVoice2),
            "maskgct" => Ok(ModelClass::MaskGct),
            "f5tts" | "f5-tts" => Ok(ModelClass::F5Tts),
            "tmt" => Ok(ModelClass::Tmt),
            other => Err(format!("unknown model class `{other}`")),
        }
    }
}

/// Which FPL flavor to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FplMode {
    /// Text already available: decoder-side cost only.
    A,
    /// Driven by a streaming upstream LLM.
    L,
}

impl fmt::Display for FplMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FplMode::A => "A",
            FplMode::L => "L",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LatencyParams {
    /// Upstream time per text token.
    pub d_llm: Duration,
    /// Time per generator forward / sampling iteration.
    pub d_tts: Duration,
    /// Decoder chunk size in speech tokens.
    pub chunk: usize,
    /// Speech-token frame length.
    pub frame: Duration,
    /// Text tokens in the utterance (L).
    pub text_len: usize,
    /// Speech tokens in the utterance (T).
    pub speech_len: usize,
    /// Sampling iterations of the non-autoregressive classes (b).
    pub nar_iters: Option<usize>,
    /// Decode steps until the first chunk for the synchronous class (c).
    pub first_chunk_steps: Option<usize>,
    /// Look-ahead of the synchronous class (q; the k of the FPL formula).
    pub look_ahead: Option<usize>,
}

impl Default for LatencyParams {
    /// Reference timings: 25 ms per upstream token, 5 ms per generator
    /// step, 15-token chunks, 40 ms frames.
    fn default() -> Self {
        LatencyParams {
            d_llm: Duration::from_millis(25),
            d_tts: Duration::from_millis(5),
            chunk: 15,
            frame: Duration::from_millis(40),
            text_len: 10,
            speech_len: 100,
            nar_iters: None,
            first_chunk_steps: None,
            look_ahead: Some(1),
        }
    }
}

impl LatencyParams {
    fn validate(&self) -> Result<(), LatencyError> {
        if self.d_llm.is_zero() || self.d_tts.is_zero() || self.frame.is_zero() {
            return Err(LatencyError::InvalidParams(
                "d_llm, d_tts and frame must be strictly positive".into(),
            ));
        }
        if self.chunk < 1 || self.text_len < 1 || self.speech_len < 1 {
            return Err(LatencyError::InvalidParams(
                "chunk, text and speech lengths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn nar_iters(&self, model: ModelClass) -> Result<usize, LatencyError> {
        match self.nar_iters {
            Some(b) if b >= 1 => Ok(b),
            _ => Err(LatencyError::MissingParameter { symbol: "b", model }),
        }
    }

    fn first_chunk_steps(&self, model: ModelClass) -> Result<usize, LatencyError> {
        match self.first_chunk_steps {
            Some(c) if c >= 1 => Ok(c),
            _ => Err(LatencyError::MissingParameter { symbol: "c", model }),
        }
    }

    fn look_ahead(&self, model: ModelClass) -> Result<usize, LatencyError> {
        self.look_ahead
            .ok_or(LatencyError::MissingParameter { symbol: "q", model })
    }
}

fn times(d: Duration, n: usize) -> Duration {
    d * n as u32
}

/// Closed-form first-packet latency of a model class.
///
/// Per class (mode L; mode A drops the first term):
/// - CosyVoice, VALL-E:  L·d_llm + chunk·d_tts
/// - CosyVoice2:         5·d_llm + chunk·d_tts
/// - MaskGCT, F5-TTS:    L·d_llm + b·d_tts
/// - Tmt:                (q+1)·d_llm + c·d_tts
pub fn analytic_fpl(
    model: ModelClass,
    p: &LatencyParams,
    mode: FplMode,
) -> Result<Duration, LatencyError> {
    p.validate()?;
    let llm_term = match model {
        ModelClass::CosyVoice | ModelClass::VallE | ModelClass::MaskGct | ModelClass::F5Tts => {
            times(p.d_llm, p.text_len)
        }
        ModelClass::CosyVoice2 => {
            if p.text_len < 5 {
                return Err(LatencyError::InvalidParams(
                    "the five-token text turn needs at least 5 text tokens".into(),
                ));
            }
            times(p.d_llm, 5)
        }
        ModelClass::Tmt => times(p.d_llm, p.look_ahead(model)? + 1),
    };
    let generator_term = match model {
        ModelClass::CosyVoice | ModelClass::VallE | ModelClass::CosyVoice2 => {
            if p.speech_len < p.chunk {
                return Err(LatencyError::InvalidParams(format!(
                    "autoregressive first packet needs T >= chunk ({} < {})",
                    p.speech_len, p.chunk
                )));
            }
            times(p.d_tts, p.chunk)
        }
        ModelClass::MaskGct | ModelClass::F5Tts => times(p.d_tts, p.nar_iters(model)?),
        ModelClass::Tmt => times(p.d_tts, p.first_chunk_steps(model)?),
    };
    Ok(match mode {
        FplMode::A => generator_term,
        FplMode::L => llm_term + generator_term,
    })
}

/// Real-time factor: generation compute over produced speech duration.
///
/// - Tmt: (L+1)·d_tts / (T·F) — one step per text token plus the bootstrap.
/// - Autoregressive classes: T·d_tts / (T·F) = d_tts/F, independent of T.
/// - Non-autoregressive classes: b·d_tts / (T·F).
pub fn analytic_rtf(model: ModelClass, p: &LatencyParams) -> Result<f64, LatencyError> {
    p.validate()?;
    let speech_ns = p.frame.as_nanos() as f64 * p.speech_len as f64;
    let compute_ns = match model {
        ModelClass::Tmt => p.d_tts.as_nanos() as f64 * (p.text_len + 1) as f64,
        ModelClass::CosyVoice | ModelClass::VallE | ModelClass::CosyVoice2 => {
            p.d_tts.as_nanos() as f64 * p.speech_len as f64
        }
        ModelClass::MaskGct | ModelClass::F5Tts => {
            p.d_tts.as_nanos() as f64 * p.nar_iters(model)? as f64
        }
    };
    Ok(compute_ns / speech_ns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Llm,
    Tts,
    Decoder,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Actor::Llm => "llm",
            Actor::Tts => "tts",
            Actor::Decoder => "decoder",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub t_ns: u64,
    pub actor: Actor,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub fpl_a: Duration,
    pub fpl_l: Duration,
    pub rtf: f64,
    /// Decode steps until the first chunk, when derived from a trace.
    pub c_observed: Option<usize>,
    pub events: Vec<SimEvent>,
}

/// Event-ordered reconstruction of one utterance through the pipeline,
/// measuring the first packet instead of substituting into a formula. For
/// the synchronous class the per-token span lengths (`trace`) determine how
/// many decode steps the first chunk takes; other classes ignore the trace.
///
/// Decode steps run back to back once the class's text gate is satisfied,
/// matching the accounting of [`analytic_fpl`]; the bootstrap duration pass
/// is charged to RTF but not to FPL.
pub fn simulate_pipeline(
    model: ModelClass,
    p: &LatencyParams,
    trace: Option<&[usize]>,
) -> Result<SimulationResult, LatencyError> {
    p.validate()?;
    let d_llm = p.d_llm.as_nanos() as u64;
    let d_tts = p.d_tts.as_nanos() as u64;
    let mut events = Vec::new();

    let result = match model {
        ModelClass::Tmt => {
            let trace = trace.ok_or(LatencyError::EmptyTrace)?;
            if trace.is_empty() {
                return Err(LatencyError::EmptyTrace);
            }
            if trace.iter().any(|&l| l == 0) {
                return Err(LatencyError::InvalidParams(
                    "trace span lengths must be positive".into(),
                ));
            }
            let q = p.look_ahead(model)?;
            let l = trace.len();
            for i in 1..=l {
                events.push(SimEvent {
                    t_ns: d_llm * i as u64,
                    actor: Actor::Llm,
                    label: format!("token_{i}"),
                });
            }
            let gate = d_llm * (q + 1).min(l) as u64;
            let mut t = gate;
            let mut cum = 0usize;
            let mut first: Option<(u64, usize)> = None;
            for (i, &len) in trace.iter().enumerate() {
                t += d_tts;
                cum += len;
                events.push(SimEvent {
                    t_ns: t,
                    actor: Actor::Tts,
                    label: format!("step_{}", i + 1),
                });
                if first.is_none() && cum >= p.chunk {
                    first = Some((t, i + 1));
                    events.push(SimEvent {
                        t_ns: t,
                        actor: Actor::Decoder,
                        label: "first_chunk".into(),
                    });
                }
            }
            // if the whole utterance is shorter than a chunk, the first
            // packet is the flush after the last span
            let (fpl_l_ns, c) = first.unwrap_or((t, l));
            let rtf_p = LatencyParams {
                text_len: l,
                speech_len: trace.iter().sum(),
                ..p.clone()
            };
            SimulationResult {
                fpl_a: Duration::from_nanos(fpl_l_ns - gate),
                fpl_l: Duration::from_nanos(fpl_l_ns),
                rtf: analytic_rtf(model, &rtf_p)?,
                c_observed: Some(c),
                events: Vec::new(),
            }
        }
        ModelClass::CosyVoice | ModelClass::VallE | ModelClass::CosyVoice2 => {
            if p.speech_len < p.chunk {
                return Err(LatencyError::InvalidParams(format!(
                    "autoregressive first packet needs T >= chunk ({} < {})",
                    p.speech_len, p.chunk
                )));
            }
            let gate_tokens = if model == ModelClass::CosyVoice2 {
                if p.text_len < 5 {
                    return Err(LatencyError::InvalidParams(
                        "the five-token text turn needs at least 5 text tokens".into(),
                    ));
                }
                5
            } else {
                p.text_len
            };
            for i in 1..=gate_tokens {
                events.push(SimEvent {
                    t_ns: d_llm * i as u64,
                    actor: Actor::Llm,
                    label: format!("token_{i}"),
                });
            }
            let gate = d_llm * gate_tokens as u64;
            let mut t = gate;
            for step in 1..=p.chunk {
                t += d_tts;
                events.push(SimEvent {
                    t_ns: t,
                    actor: Actor::Tts,
                    label: format!("step_{step}"),
                });
            }
            events.push(SimEvent {
                t_ns: t,
                actor: Actor::Decoder,
                label: "first_chunk".into(),
            });
            SimulationResult {
                fpl_a: Duration::from_nanos(t - gate),
                fpl_l: Duration::from_nanos(t),
                rtf: analytic_rtf(model, p)?,
                c_observed: None,
                events: Vec::new(),
            }
        }
        ModelClass::MaskGct | ModelClass::F5Tts => {
            let b = p.nar_iters(model)?;
            for i in 1..=p.text_len {
                events.push(SimEvent {
                    t_ns: d_llm * i as u64,
                    actor: Actor::Llm,
                    label: format!("token_{i}"),
                });
            }
            let gate = d_llm * p.text_len as u64;
            let mut t = gate;
            for step in 1..=b {
                t += d_tts;
                events.push(SimEvent {
                    t_ns: t,
                    actor: Actor::Tts,
                    label: format!("iteration_{step}"),
                });
            }
            events.push(SimEvent {
                t_ns: t,
                actor: Actor::Decoder,
                label: "first_chunk".into(),
            });
            SimulationResult {
                fpl_a: Duration::from_nanos(t - gate),
                fpl_l: Duration::from_nanos(t),
                rtf: analytic_rtf(model, p)?,
                c_observed: None,
                events: Vec::new(),
            }
        }
    };

    events.sort_by_key(|e| e.t_ns);
    Ok(SimulationResult { events, ..result })
}

pub const RESULTS_CSV_HEADER: &str = "model,mode,d_llm_ms,d_tts_ms,L,T,b,c,q,fpl_ms,rtf";

fn opt_str(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row of the results CSV.
pub fn results_csv_row(
    model: ModelClass,
    mode: FplMode,
    p: &LatencyParams,
    fpl: Duration,
    rtf: f64,
) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        model,
        mode,
        p.d_llm.as_secs_f64() * 1e3,
        p.d_tts.as_secs_f64() * 1e3,
        p.text_len,
        p.speech_len,
        opt_str(p.nar_iters),
        opt_str(p.first_chunk_steps),
        opt_str(p.look_ahead),
        fpl.as_secs_f64() * 1e3,
        rtf
    )
}

/// Event log CSV: `t_ns,actor,event`.
pub fn write_events_csv<W: Write>(mut w: W, events: &[SimEvent]) -> Result<(), LatencyError> {
    writeln!(w, "t_ns,actor,event")?;
    for e in events {
        writeln!(w, "{},{},{}", e.t_ns, e.actor, e.label)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    fn reference_params() -> LatencyParams {
        LatencyParams::default()
    }

    #[test]
    fn interleaved_baseline_reference_point() {
        let p = reference_params();
        let fpl = analytic_fpl(ModelClass::CosyVoice2, &p, FplMode::L).unwrap();
        assert_eq!(fpl, ms(200));
        let fpl_a = analytic_fpl(ModelClass::CosyVoice2, &p, FplMode::A).unwrap();
        assert_eq!(fpl_a, ms(75));
    }

    #[test]
    fn synchronous_class_reference_point() {
        let p = LatencyParams {
            first_chunk_steps: Some(2),
            look_ahead: Some(1),
            ..reference_params()
        };
        assert_eq!(analytic_fpl(ModelClass::Tmt, &p, FplMode::L).unwrap(), ms(60));
        assert_eq!(analytic_fpl(ModelClass::Tmt, &p, FplMode::A).unwrap(), ms(10));
    }

    #[test]
    fn full_text_classes_scale_with_text_length() {
        let p = LatencyParams {
            text_len: 12,
            nar_iters: Some(10),
            ..reference_params()
        };
        assert_eq!(
            analytic_fpl(ModelClass::CosyVoice, &p, FplMode::L).unwrap(),
            ms(12 * 25 + 15 * 5)
        );
        assert_eq!(
            analytic_fpl(ModelClass::VallE, &p, FplMode::L).unwrap(),
            ms(12 * 25 + 15 * 5)
        );
        assert_eq!(
            analytic_fpl(ModelClass::MaskGct, &p, FplMode::L).unwrap(),
            ms(12 * 25 + 10 * 5)
        );
    }

    #[test]
    fn missing_parameters_are_named() {
        let p = reference_params();
        match analytic_fpl(ModelClass::MaskGct, &p, FplMode::L) {
            Err(LatencyError::MissingParameter { symbol, .. }) => assert_eq!(symbol, "b"),
            other => panic!("expected missing `b`, got {other:?}"),
        }
        match analytic_fpl(ModelClass::Tmt, &p, FplMode::L) {
            Err(LatencyError::MissingParameter { symbol, .. }) => assert_eq!(symbol, "c"),
            other => panic!("expected missing `c`, got {other:?}"),
        }
    }

    #[test]
    fn rtf_reference_values() {
        let p = reference_params(); // L=10, T=100, d_tts=5ms, F=40ms
        let rtf = analytic_rtf(ModelClass::Tmt, &p).unwrap();
        assert_eq!(rtf, 55.0 / 4000.0);
        let ar = analytic_rtf(ModelClass::CosyVoice, &p).unwrap();
        assert_eq!(ar, 0.125);
        // independent of T for the autoregressive classes
        let p2 = LatencyParams {
            speech_len: 1000,
            ..reference_params()
        };
        assert_eq!(analytic_rtf(ModelClass::CosyVoice, &p2).unwrap(), 0.125);
        // synchronous RTF vanishes as T grows with L fixed
        assert!(analytic_rtf(ModelClass::Tmt, &p2).unwrap() < rtf);
    }

    #[test]
    fn simulated_trace_determines_first_chunk_step() {
        let p = LatencyParams {
            look_ahead: Some(1),
            ..reference_params()
        };
        // spans 7, 5, 8: 7+5 < 15 <= 7+5+8, so the third step fires the chunk
        let sim = simulate_pipeline(ModelClass::Tmt, &p, Some(&[7, 5, 8])).unwrap();
        assert_eq!(sim.c_observed, Some(3));
        assert_eq!(sim.fpl_l, ms(2 * 25 + 3 * 5));
        assert_eq!(sim.fpl_a, ms(3 * 5));
        let analytic = analytic_fpl(
            ModelClass::Tmt,
            &LatencyParams {
                first_chunk_steps: Some(3),
                ..p.clone()
            },
            FplMode::L,
        )
        .unwrap();
        assert_eq!(sim.fpl_l, analytic);
        assert!(sim.events.iter().any(|e| e.label == "first_chunk"));
    }

    #[test]
    fn short_utterance_first_packet_is_the_flush() {
        let p = LatencyParams {
            look_ahead: Some(1),
            ..reference_params()
        };
        let sim = simulate_pipeline(ModelClass::Tmt, &p, Some(&[3, 4])).unwrap();
        assert_eq!(sim.c_observed, Some(2));
        assert_eq!(sim.fpl_l, ms(2 * 25 + 2 * 5));
    }

    #[test]
    fn empty_trace_is_rejected() {
        let p = reference_params();
        assert!(matches!(
            simulate_pipeline(ModelClass::Tmt, &p, Some(&[])),
            Err(LatencyError::EmptyTrace)
        ));
        assert!(matches!(
            simulate_pipeline(ModelClass::Tmt, &p, None),
            Err(LatencyError::EmptyTrace)
        ));
    }

    #[test]
    fn simulation_matches_analytic_for_baselines() {
        let p = LatencyParams {
            text_len: 9,
            nar_iters: Some(16),
            ..reference_params()
        };
        for model in [
            ModelClass::CosyVoice,
            ModelClass::VallE,
            ModelClass::CosyVoice2,
            ModelClass::MaskGct,
            ModelClass::F5Tts,
        ] {
            let sim = simulate_pipeline(model, &p, None).unwrap();
            assert_eq!(sim.fpl_l, analytic_fpl(model, &p, FplMode::L).unwrap());
            assert_eq!(sim.fpl_a, analytic_fpl(model, &p, FplMode::A).unwrap());
            assert_eq!(sim.rtf, analytic_rtf(model, &p).unwrap());
        }
    }

    #[test]
    fn event_log_is_chronological_and_serializes() {
        let p = reference_params();
        let sim = simulate_pipeline(ModelClass::CosyVoice, &p, None).unwrap();
        assert!(sim.events.windows(2).all(|w| w[0].t_ns <= w[1].t_ns));
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &sim.events).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_ns,actor,event\n"));
        assert!(text.contains(",llm,token_1"));
        assert!(text.contains(",decoder,first_chunk"));
    }

    #[test]
    fn model_class_round_trips_through_strings() {
        for model in ModelClass::ALL {
            let s = model.to_string();
            assert_eq!(ModelClass::from_str(&s).unwrap(), model);
        }
        assert!(ModelClass::from_str("bogus").is_err());
    }

    proptest! {
        // the synchronous class beats the interleaved baseline, which beats
        // the full-text baseline, whenever L > 5 and c <= 3
        #[test]
        fn fpl_ordering_holds(
            d_llm_us in 1u64..100_000,
            d_tts_us in 1u64..100_000,
            l in 6usize..64,
            c in 1usize..=3,
            q in 0usize..=3,
        ) {
            let p = LatencyParams {
                d_llm: Duration::from_micros(d_llm_us),
                d_tts: Duration::from_micros(d_tts_us),
                text_len: l,
                speech_len: 200,
                first_chunk_steps: Some(c),
                look_ahead: Some(q),
                ..LatencyParams::default()
            };
            let sync = analytic_fpl(ModelClass::Tmt, &p, FplMode::L).unwrap();
            let interleaved = analytic_fpl(ModelClass::CosyVoice2, &p, FplMode::L).unwrap();
            let full_text = analytic_fpl(ModelClass::CosyVoice, &p, FplMode::L).unwrap();
            prop_assert!(sync < interleaved);
            prop_assert!(interleaved < full_text);
        }

        // the simulator and the closed form agree exactly when c comes from
        // the simulated trace (formula domain: text longer than look-ahead)
        #[test]
        fn simulation_equals_analytic_on_random_draws(
            d_llm_us in 1u64..50_000,
            d_tts_us in 1u64..50_000,
            q in 0usize..4,
            chunk in 1usize..30,
            spans in proptest::collection::vec(1usize..9, 5..20),
        ) {
            let p = LatencyParams {
                d_llm: Duration::from_micros(d_llm_us),
                d_tts: Duration::from_micros(d_tts_us),
                chunk,
                text_len: spans.len(),
                speech_len: spans.iter().sum::<usize>().max(1),
                look_ahead: Some(q),
                ..LatencyParams::default()
            };
            let sim = simulate_pipeline(ModelClass::Tmt, &p, Some(&spans)).unwrap();
            let p2 = LatencyParams { first_chunk_steps: sim.c_observed, ..p.clone() };
            prop_assert_eq!(sim.fpl_l, analytic_fpl(ModelClass::Tmt, &p2, FplMode::L).unwrap());
            prop_assert_eq!(sim.fpl_a, analytic_fpl(ModelClass::Tmt, &p2, FplMode::A).unwrap());
        }
    }
}
