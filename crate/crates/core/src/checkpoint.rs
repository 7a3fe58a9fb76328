//! Binary checkpoint format for model parameters and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TMTCKPT\0" | version u32 | model config | vocab | step u64
//! tensor count u64 | { name, dims, f64 data } per tensor
//! optimizer flag u8 | optional { step u64, m data, v data per tensor }
//! ```
//!
//! Saves are atomic (write to a temp file in the target directory, then
//! rename). Loads validate magic, version, and the whole shape table before
//! any tensor is accepted.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::VocabLayout;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TMTCKPT\0";
const VERSION: u32 = 1;
// Guard against nonsense shape tables in corrupt files.
const MAX_TENSOR_ELEMS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: field `{field}`: {detail}")]
    Corrupt { field: &'static str, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Adam moment buffers, aligned with the checkpoint's tensor table.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Everything needed to resume: config, vocabulary layout, parameters by
/// name, and optionally the optimizer moments.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: VocabLayout,
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamSnapshot>,
}

impl Checkpoint {
    pub fn from_params(
        params: &ModelParams,
        vocab: &VocabLayout,
        step: u64,
        optimizer: Option<AdamSnapshot>,
    ) -> Self {
        Checkpoint {
            config: params.config.clone(),
            vocab: vocab.clone(),
            step,
            tensors: params
                .named_tensors()
                .into_iter()
                .map(|(name, t)| {
                    let mut t = t.clone();
                    t.grad = None;
                    (name, t)
                })
                .collect(),
            optimizer,
        }
    }

    /// Rebuild parameters, checking every name and shape against the config.
    pub fn into_params(
        self,
    ) -> Result<(ModelParams, VocabLayout, u64, Option<AdamSnapshot>), CheckpointError> {
        let Checkpoint {
            config,
            vocab,
            step,
            tensors,
            optimizer,
        } = self;
        let mut params = ModelParams::init(config, 0)?;
        let expected: Vec<String> = params
            .named_tensors()
            .into_iter()
            .map(|(name, _)| name)
            .collect();
        if expected.len() != tensors.len() {
            return Err(CheckpointError::Corrupt {
                field: "tensors",
                detail: format!(
                    "{} tensors stored, config requires {}",
                    tensors.len(),
                    expected.len()
                ),
            });
        }
        if let Some(opt) = &optimizer {
            if opt.m.len() != tensors.len() || opt.v.len() != tensors.len() {
                return Err(CheckpointError::Corrupt {
                    field: "optimizer",
                    detail: "moment table does not match tensor table".into(),
                });
            }
        }
        for ((slot, (name, stored)), want) in params
            .tensors_mut()
            .into_iter()
            .zip(tensors)
            .zip(expected)
        {
            if name != want {
                return Err(CheckpointError::Corrupt {
                    field: "tensors",
                    detail: format!("found tensor `{name}`, expected `{want}`"),
                });
            }
            if stored.shape != slot.shape {
                return Err(CheckpointError::Corrupt {
                    field: "tensors",
                    detail: format!(
                        "tensor `{name}` has shape {:?}, config requires {:?}",
                        stored.shape, slot.shape
                    ),
                });
            }
            slot.data = stored.data;
            slot.grad = None;
        }
        Ok((params, vocab, step, optimizer))
    }
}

// ── Little-endian primitives ─────────────────────────────────────────

struct Writer<W: Write> {
    inner: W,
    path: String,
}

impl<W: Write> Writer<W> {
    fn io(&self, source: io::Error) -> CheckpointError {
        CheckpointError::Io {
            path: self.path.clone(),
            source,
        }
    }

    fn bytes(&mut self, b: &[u8]) -> Result<(), CheckpointError> {
        self.inner.write_all(b).map_err(|e| CheckpointError::Io {
            path: self.path.clone(),
            source: e,
        })
    }

    fn u32(&mut self, v: u32) -> Result<(), CheckpointError> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<(), CheckpointError> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<(), CheckpointError> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64_slice(&mut self, vs: &[f64]) -> Result<(), CheckpointError> {
        let mut buf = Vec::with_capacity(vs.len() * 8);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }

    fn string(&mut self, s: &str) -> Result<(), CheckpointError> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }
}

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], field: &'static str) -> Result<(), CheckpointError> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                CheckpointError::Corrupt {
                    field,
                    detail: "file ends early".into(),
                }
            } else {
                CheckpointError::Io {
                    path: self.path.clone(),
                    source: e,
                }
            }
        })
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, field)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        self.exact(&mut b, field)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self, field: &'static str) -> Result<usize, CheckpointError> {
        Ok(self.u64(field)? as usize)
    }

    fn f64(&mut self, field: &'static str) -> Result<f64, CheckpointError> {
        let mut b = [0u8; 8];
        self.exact(&mut b, field)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let mut buf = vec![0u8; n * 8];
        self.exact(&mut buf, field)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, field: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(field)? as usize;
        if len > 4096 {
            return Err(CheckpointError::Corrupt {
                field,
                detail: format!("name of {len} bytes is not plausible"),
            });
        }
        let mut buf = vec![0u8; len];
        self.exact(&mut buf, field)?;
        String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt {
            field,
            detail: "name is not utf-8".into(),
        })
    }
}

fn checked_numel(shape: &[usize], field: &'static str) -> Result<usize, CheckpointError> {
    let mut numel: u64 = 1;
    for &d in shape {
        numel = numel.saturating_mul(d as u64);
    }
    if numel > MAX_TENSOR_ELEMS {
        return Err(CheckpointError::Corrupt {
            field,
            detail: format!("shape {shape:?} is implausibly large"),
        });
    }
    Ok(numel as usize)
}

// ── Save / load ──────────────────────────────────────────────────────

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    let mut w = Writer {
        inner: BufWriter::new(tmp.as_file()),
        path: path.display().to_string(),
    };

    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    let c = &ckpt.config;
    for v in [
        c.num_layers,
        c.num_heads,
        c.model_dim,
        c.ffn_dim,
        c.total_vocab,
        c.speech_vocab_size,
        c.num_duration_classes,
        c.max_seq_len,
    ] {
        w.u64(v as u64)?;
    }
    w.f64(c.rope_base)?;
    for v in [
        ckpt.vocab.text_vocab_size,
        ckpt.vocab.speech_vocab_size,
        ckpt.vocab.max_duration_class,
    ] {
        w.u64(v as u64)?;
    }
    w.u64(ckpt.step)?;
    w.u64(ckpt.tensors.len() as u64)?;
    for (name, t) in &ckpt.tensors {
        w.string(name)?;
        w.u32(t.shape.len() as u32)?;
        for &d in &t.shape {
            w.u64(d as u64)?;
        }
        w.f64_slice(&t.data)?;
    }
    match &ckpt.optimizer {
        None => w.bytes(&[0u8])?,
        Some(opt) => {
            w.bytes(&[1u8])?;
            w.u64(opt.step)?;
            for (m, v) in opt.m.iter().zip(&opt.v) {
                w.f64_slice(m)?;
                w.f64_slice(v)?;
            }
        }
    }
    w.inner.flush().map_err(|e| w.io(e))?;
    drop(w);
    tmp.persist(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    };

    let mut magic = [0u8; 8];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = ModelConfig {
        num_layers: r.usize("config.num_layers")?,
        num_heads: r.usize("config.num_heads")?,
        model_dim: r.usize("config.model_dim")?,
        ffn_dim: r.usize("config.ffn_dim")?,
        total_vocab: r.usize("config.total_vocab")?,
        speech_vocab_size: r.usize("config.speech_vocab_size")?,
        num_duration_classes: r.usize("config.num_duration_classes")?,
        max_seq_len: r.usize("config.max_seq_len")?,
        rope_base: r.f64("config.rope_base")?,
    };
    config.validate()?;
    let vocab = VocabLayout::new(
        r.usize("vocab.text_vocab_size")?,
        r.usize("vocab.speech_vocab_size")?,
        r.usize("vocab.max_duration_class")?,
    )
    .map_err(|e| CheckpointError::Corrupt {
        field: "vocab",
        detail: e.to_string(),
    })?;
    let step = r.u64("step")?;

    let count = r.usize("tensor_count")?;
    if count > 1 << 20 {
        return Err(CheckpointError::Corrupt {
            field: "tensor_count",
            detail: format!("{count} tensors is not plausible"),
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string("tensor.name")?;
        let ndim = r.u32("tensor.ndim")? as usize;
        if ndim > 4 {
            return Err(CheckpointError::Corrupt {
                field: "tensor.ndim",
                detail: format!("{ndim} dimensions is not plausible"),
            });
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.usize("tensor.shape")?);
        }
        let numel = checked_numel(&shape, "tensor.shape")?;
        let data = r.f64_vec(numel, "tensor.data")?;
        let mut t = Tensor::new(shape, data);
        t.requires_grad = true;
        tensors.push((name, t));
    }

    let mut flag = [0u8; 1];
    r.exact(&mut flag, "optimizer_flag")?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            let opt_step = r.u64("optimizer.step")?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for (_, t) in &tensors {
                m.push(r.f64_vec(t.numel(), "optimizer.m")?);
                v.push(r.f64_vec(t.numel(), "optimizer.v")?);
            }
            Some(AdamSnapshot {
                step: opt_step,
                m,
                v,
            })
        }
        other => {
            return Err(CheckpointError::Corrupt {
                field: "optimizer_flag",
                detail: format!("unexpected value {other}"),
            })
        }
    };

    Ok(Checkpoint {
        config,
        vocab,
        step,
        tensors,
        optimizer,
    })
}
