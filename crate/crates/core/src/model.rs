//! The temporal masked transformer: a pre-norm decoder stack with rotary
//! attention, one shared embedding table over the combined id space, and two
//! linear output heads — speech-token logits and duration-class logits — read
//! off the same final hidden state.
//!
//! Attention restriction is done by filling blocked score entries with
//! [`ATTENTION_NEG_INF`] before the row softmax; the surrogate is finite so
//! no NaNs propagate, but the blocked weights underflow to exactly zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::VocabLayout;
use crate::mask::AttentionMaskMatrix;
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

/// Fill value for blocked attention scores.
pub const ATTENTION_NEG_INF: f64 = -1e30;

const RMS_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("mask of size {mask} does not match sequence length {len}")]
    MaskSizeMismatch { mask: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub total_vocab: usize,
    pub speech_vocab_size: usize,
    /// Duration classes including the reserved STOP class.
    pub num_duration_classes: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
}

impl ModelConfig {
    /// CPU-trainable default: 4 layers, 4 heads, width 128, FFN 256.
    pub fn desk_default(vocab: &VocabLayout) -> Self {
        ModelConfig {
            num_layers: 4,
            num_heads: 4,
            model_dim: 128,
            ffn_dim: 256,
            total_vocab: vocab.total_vocab,
            speech_vocab_size: vocab.speech_vocab_size,
            num_duration_classes: vocab.num_duration_classes(),
            max_seq_len: 512,
            rope_base: 10000.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "model_dim {} must be divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "head_dim {} must be even for rotary pairs",
                self.head_dim()
            )));
        }
        if self.num_duration_classes < 2 {
            return Err(ModelError::InvalidConfig(
                "need at least the STOP class plus one duration".into(),
            ));
        }
        if self.total_vocab == 0 || self.speech_vocab_size == 0 || self.max_seq_len == 0 {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn_norm: Tensor,
    pub heads: Vec<AttentionHead>,
    pub ffn_norm: Tensor,
    pub ffn_gate: Tensor,
    pub ffn_up: Tensor,
    pub ffn_down: Tensor,
}

/// All learnable tensors of the model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_norm: Tensor,
    pub speech_head: Tensor,
    pub duration_head: Tensor,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| normal(rng) * std).collect();
    Tensor::param(vec![rows, cols], data)
}

impl ModelParams {
    /// Scaled-normal initialization, deterministic in `seed`. Output
    /// projections (attention out, FFN down) get the extra 1/sqrt(2·layers)
    /// factor; norm scales start at one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let dh = config.head_dim();
        let out_std = INIT_STD / (2.0 * config.num_layers.max(1) as f64).sqrt();

        let embedding = init_matrix(&mut rng, config.total_vocab, d, INIT_STD);
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let mut heads = Vec::with_capacity(config.num_heads);
            for _ in 0..config.num_heads {
                heads.push(AttentionHead {
                    wq: init_matrix(&mut rng, d, dh, INIT_STD),
                    wk: init_matrix(&mut rng, d, dh, INIT_STD),
                    wv: init_matrix(&mut rng, d, dh, INIT_STD),
                    wo: init_matrix(&mut rng, dh, d, out_std),
                });
            }
            layers.push(LayerParams {
                attn_norm: Tensor::param(vec![d], vec![1.0; d]),
                heads,
                ffn_norm: Tensor::param(vec![d], vec![1.0; d]),
                ffn_gate: init_matrix(&mut rng, d, config.ffn_dim, INIT_STD),
                ffn_up: init_matrix(&mut rng, d, config.ffn_dim, INIT_STD),
                ffn_down: init_matrix(&mut rng, config.ffn_dim, d, out_std),
            });
        }
        let final_norm = Tensor::param(vec![d], vec![1.0; d]);
        let speech_head = init_matrix(&mut rng, d, config.speech_vocab_size, INIT_STD);
        let duration_head = init_matrix(&mut rng, d, config.num_duration_classes, INIT_STD);

        Ok(ModelParams {
            config,
            embedding,
            layers,
            final_norm,
            speech_head,
            duration_head,
        })
    }

    /// Stable (name, tensor) listing; the binding and optimizer orders both
    /// follow it.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embedding".into(), &self.embedding)];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &layer.attn_norm));
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layers.{i}.attn.{h}.wq"), &head.wq));
                out.push((format!("layers.{i}.attn.{h}.wk"), &head.wk));
                out.push((format!("layers.{i}.attn.{h}.wv"), &head.wv));
                out.push((format!("layers.{i}.attn.{h}.wo"), &head.wo));
            }
            out.push((format!("layers.{i}.ffn_norm"), &layer.ffn_norm));
            out.push((format!("layers.{i}.ffn_gate"), &layer.ffn_gate));
            out.push((format!("layers.{i}.ffn_up"), &layer.ffn_up));
            out.push((format!("layers.{i}.ffn_down"), &layer.ffn_down));
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("speech_head".into(), &self.speech_head));
        out.push(("duration_head".into(), &self.duration_head));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.attn_norm);
            for head in &mut layer.heads {
                out.push(&mut head.wq);
                out.push(&mut head.wk);
                out.push(&mut head.wv);
                out.push(&mut head.wo);
            }
            out.push(&mut layer.ffn_norm);
            out.push(&mut layer.ffn_gate);
            out.push(&mut layer.ffn_up);
            out.push(&mut layer.ffn_down);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.speech_head);
        out.push(&mut self.duration_head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Leaf ids of one forward pass, in [`ModelParams::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub embedding: TensorId,
    pub layers: Vec<BoundLayer>,
    pub final_norm: TensorId,
    pub speech_head: TensorId,
    pub duration_head: TensorId,
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub attn_norm: TensorId,
    pub heads: Vec<[TensorId; 4]>,
    pub ffn_norm: TensorId,
    pub ffn_gate: TensorId,
    pub ffn_up: TensorId,
    pub ffn_down: TensorId,
}

impl BoundParams {
    /// Flat leaf ids matching the named-tensor order.
    pub fn flat(&self) -> Vec<TensorId> {
        let mut out = vec![self.embedding];
        for layer in &self.layers {
            out.push(layer.attn_norm);
            for head in &layer.heads {
                out.extend_from_slice(head);
            }
            out.push(layer.ffn_norm);
            out.push(layer.ffn_gate);
            out.push(layer.ffn_up);
            out.push(layer.ffn_down);
        }
        out.push(self.final_norm);
        out.push(self.speech_head);
        out.push(self.duration_head);
        out
    }

    /// Rebuild the structured view from a flat id list in named-tensor order.
    pub fn from_flat(config: &ModelConfig, ids: &[TensorId]) -> Self {
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("flat id list too short");
        let embedding = next();
        let layers = (0..config.num_layers)
            .map(|_| {
                let attn_norm = next();
                let heads = (0..config.num_heads)
                    .map(|_| [next(), next(), next(), next()])
                    .collect();
                BoundLayer {
                    attn_norm,
                    heads,
                    ffn_norm: next(),
                    ffn_gate: next(),
                    ffn_up: next(),
                    ffn_down: next(),
                }
            })
            .collect();
        BoundParams {
            embedding,
            layers,
            final_norm: next(),
            speech_head: next(),
            duration_head: next(),
        }
    }
}

fn bind(params: &ModelParams, tape: &mut Tape) -> BoundParams {
    BoundParams {
        embedding: tape.leaf(&params.embedding),
        layers: params
            .layers
            .iter()
            .map(|layer| BoundLayer {
                attn_norm: tape.leaf(&layer.attn_norm),
                heads: layer
                    .heads
                    .iter()
                    .map(|h| {
                        [
                            tape.leaf(&h.wq),
                            tape.leaf(&h.wk),
                            tape.leaf(&h.wv),
                            tape.leaf(&h.wo),
                        ]
                    })
                    .collect(),
                ffn_norm: tape.leaf(&layer.ffn_norm),
                ffn_gate: tape.leaf(&layer.ffn_gate),
                ffn_up: tape.leaf(&layer.ffn_up),
                ffn_down: tape.leaf(&layer.ffn_down),
            })
            .collect(),
        final_norm: tape.leaf(&params.final_norm),
        speech_head: tape.leaf(&params.speech_head),
        duration_head: tape.leaf(&params.duration_head),
    }
}

// Rotary tables for absolute positions 0..n: cos/sin with the half-split
// convention (angles duplicated across both halves) plus the constant
// rotate-half permutation matrix, so rope(x) = x⊙cos + (x·P)⊙sin.
struct RopeIds {
    cos: TensorId,
    sin: TensorId,
    rot: TensorId,
}

fn rope_tables(tape: &mut Tape, n: usize, head_dim: usize, base: f64) -> RopeIds {
    let half = head_dim / 2;
    let mut cos = vec![0.0; n * head_dim];
    let mut sin = vec![0.0; n * head_dim];
    for p in 0..n {
        for i in 0..half {
            let theta = p as f64 / base.powf(2.0 * i as f64 / head_dim as f64);
            let (s, c) = theta.sin_cos();
            cos[p * head_dim + i] = c;
            cos[p * head_dim + half + i] = c;
            sin[p * head_dim + i] = s;
            sin[p * head_dim + half + i] = s;
        }
    }
    let mut rot = vec![0.0; head_dim * head_dim];
    for j in 0..half {
        // output[j] = -x[j + half], output[j + half] = x[j]
        rot[(j + half) * head_dim + j] = -1.0;
        rot[j * head_dim + (half + j)] = 1.0;
    }
    RopeIds {
        cos: tape.constant(vec![n, head_dim], cos),
        sin: tape.constant(vec![n, head_dim], sin),
        rot: tape.constant(vec![head_dim, head_dim], rot),
    }
}

fn rope_apply(tape: &mut Tape, x: TensorId, rope: &RopeIds) -> Result<TensorId, TensorError> {
    let xc = tape.mul(x, rope.cos)?;
    let xr = tape.matmul(x, rope.rot)?;
    let xs = tape.mul(xr, rope.sin)?;
    tape.add(xc, xs)
}

/// Per-position outputs of one forward pass, still on the tape.
#[derive(Debug)]
pub struct RawForward {
    /// [n, speech_vocab] logits; meaningful at masked speech positions.
    pub speech_logits: TensorId,
    /// [n, duration_classes] logits; meaningful at placeholder positions.
    pub duration_logits: TensorId,
    /// [n, model_dim] normalized hidden state both heads read from.
    pub final_hidden: TensorId,
}

/// [`RawForward`] plus the parameter leaves of the pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub speech_logits: TensorId,
    pub duration_logits: TensorId,
    pub final_hidden: TensorId,
    pub bound: BoundParams,
}

/// Run the transformer over embedding ids under an attention mask,
/// recording on `tape` so the caller can attach losses and backpropagate.
pub fn forward_on_tape(
    params: &ModelParams,
    tape: &mut Tape,
    ids: &[usize],
    mask: &AttentionMaskMatrix,
) -> Result<ForwardPass, ModelError> {
    let bound = bind(params, tape);
    let raw = forward_with_bound(&params.config, tape, &bound, ids, mask)?;
    Ok(ForwardPass {
        speech_logits: raw.speech_logits,
        duration_logits: raw.duration_logits,
        final_hidden: raw.final_hidden,
        bound,
    })
}

/// Same as [`forward_on_tape`], but over leaves the caller already placed on
/// the tape (used when the leaves themselves are under test).
pub fn forward_with_bound(
    cfg: &ModelConfig,
    tape: &mut Tape,
    bound: &BoundParams,
    ids: &[usize],
    mask: &AttentionMaskMatrix,
) -> Result<RawForward, ModelError> {
    let n = ids.len();
    if n == 0 || n > cfg.max_seq_len {
        return Err(ModelError::LengthOverflow {
            len: n,
            max: cfg.max_seq_len,
        });
    }
    if mask.len() != n {
        return Err(ModelError::MaskSizeMismatch {
            mask: mask.len(),
            len: n,
        });
    }
    let blocked = mask.blocked();
    let dh = cfg.head_dim();
    let rope = rope_tables(tape, n, dh, cfg.rope_base);
    let scale = tape.constant_filled(vec![n, dh], 1.0 / (dh as f64).sqrt());

    let mut x = tape.embedding_lookup(bound.embedding, ids)?;
    for layer in &bound.layers {
        let xn = tape.rmsnorm(x, layer.attn_norm, RMS_EPS)?;
        let mut attn_out: Option<TensorId> = None;
        for head in &layer.heads {
            let [wq, wk, wv, wo] = *head;
            let q = tape.matmul(xn, wq)?;
            let k = tape.matmul(xn, wk)?;
            let v = tape.matmul(xn, wv)?;
            let q = rope_apply(tape, q, &rope)?;
            let k = rope_apply(tape, k, &rope)?;
            let q = tape.mul(q, scale)?;
            let scores = tape.matmul_nt(q, k)?;
            let filled = tape.masked_fill(scores, &blocked, ATTENTION_NEG_INF)?;
            let weights = tape.softmax_rows(filled)?;
            let ctx = tape.matmul(weights, v)?;
            let proj = tape.matmul(ctx, wo)?;
            attn_out = Some(match attn_out {
                Some(acc) => tape.add(acc, proj)?,
                None => proj,
            });
        }
        if let Some(attn) = attn_out {
            x = tape.add(x, attn)?;
        }
        let hn = tape.rmsnorm(x, layer.ffn_norm, RMS_EPS)?;
        let gated = tape.matmul(hn, layer.ffn_gate)?;
        let gated = tape.silu(gated)?;
        let up = tape.matmul(hn, layer.ffn_up)?;
        let prod = tape.mul(gated, up)?;
        let down = tape.matmul(prod, layer.ffn_down)?;
        x = tape.add(x, down)?;
    }
    let hn = tape.rmsnorm(x, bound.final_norm, RMS_EPS)?;
    let speech_logits = tape.matmul(hn, bound.speech_head)?;
    let duration_logits = tape.matmul(hn, bound.duration_head)?;
    Ok(RawForward {
        speech_logits,
        duration_logits,
        final_hidden: hn,
    })
}

/// Forward pass returning plain logit matrices (for decoding/evaluation).
pub fn forward(
    params: &ModelParams,
    ids: &[usize],
    mask: &AttentionMaskMatrix,
) -> Result<(Tensor, Tensor), ModelError> {
    let mut tape = Tape::new();
    let pass = forward_on_tape(params, &mut tape, ids, mask)?;
    Ok((tape.value(pass.speech_logits), tape.value(pass.duration_logits)))
}

/// Matmul FLOPs (2·m·k·n per product) of one forward pass: attention
/// projections, score/value products, the gated FFN, and both heads.
/// Elementwise work and the rotary rotation are not counted.
pub fn count_flops(config: &ModelConfig, seq_len: u64) -> u64 {
    let n = seq_len;
    let d = config.model_dim as u64;
    let f = config.ffn_dim as u64;
    let layers = config.num_layers as u64;
    let heads = (config.speech_vocab_size + config.num_duration_classes) as u64;
    let per_layer = 8 * n * d * d + 4 * n * n * d + 6 * n * d * f;
    layers * per_layer + 2 * n * d * heads
}
