//! Desk-scale temporal masked transformer for dual-stream text-to-speech
//! token generation.
//!
//! Text tokens stream in; for each one the model decodes the complete span
//! of discrete speech tokens it covers, plus the duration of the next span,
//! in a single forward pass. The crate covers the whole loop: a synthetic
//! aligned corpus, sequence construction, the block/causal attention mask,
//! the transformer itself on a small autodiff tape, two-stage training,
//! the streaming decode session, and an analytic + simulated latency model
//! of the upstream-LLM → token model → chunk decoder pipeline.

pub mod checkpoint;
pub mod corpus;
pub mod latency;
pub mod infer;
pub mod mask;
pub mod model;
pub mod sequence;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use corpus::{AlignedExample, CorpusError, VocabLayout};
pub use latency::{analytic_fpl, analytic_rtf, simulate_pipeline, FplMode, LatencyError, LatencyParams, ModelClass};
pub use infer::{
    decode_offline, AudioChunk, SessionConfig, SessionError, SpeechSampling, StreamSession,
    TextInput,
};
pub use mask::{AttentionMaskMatrix, MaskError};
pub use model::{ModelConfig, ModelError, ModelParams};
pub use sequence::{ComposedSequence, LossTargets, PositionRole, PretrainMaskPlan, SequenceError};
pub use tensor::{grad_check, GradCheckReport, Tape, Tensor, TensorError, TensorId};
pub use train::{evaluate, run_training, EvalMetrics, TrainConfig, TrainError, TrainStage};
