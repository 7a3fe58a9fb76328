//! Flat `key = value` configuration files.
//!
//! Every key mirrors a command-line flag; precedence is flags, then file,
//! then built-in defaults. The file path comes from `--config` or the
//! `TMT_CONFIG` environment variable. Unknown keys are rejected.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const ENV_CONFIG: &str = "TMT_CONFIG";

const KNOWN_KEYS: &[&str] = &[
    "audio-out",
    "batch",
    "causal",
    "causal-mask",
    "chunk",
    "ckpt",
    "corpus",
    "curve",
    "dim",
    "dllm-ms",
    "dtts-ms",
    "dur-topk",
    "durations",
    "eval-corpus",
    "eval-every",
    "events",
    "ffn",
    "first-chunk-steps",
    "frame-ms",
    "from-scratch",
    "heads",
    "init",
    "layers",
    "len-max",
    "len-min",
    "lr",
    "mask-out",
    "max-duration",
    "max-seq",
    "mode",
    "model",
    "modulation",
    "n",
    "nar-iters",
    "out",
    "prompt-file",
    "q",
    "resume",
    "samples-per-token",
    "seed",
    "seq-out",
    "speech-len",
    "speech-topk",
    "speech-vocab",
    "steps",
    "supervise-all-durations",
    "text",
    "text-file",
    "text-len",
    "text-vocab",
    "trace",
    "trace-out",
    "warmup",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    entries: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path: Option<PathBuf> = explicit
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{}:{}: expected `key = value`", path.display(), i + 1)
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("{}:{}: unknown config key `{key}`", path.display(), i + 1);
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { entries })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key `{key}`");
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: {e}")),
        }
    }

    /// flag > file > default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// flag > file, no default: the setting is required.
    pub fn resolve_required<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .ok_or_else(|| anyhow!("missing required setting `{key}` (flag or config)")),
        }
    }

    /// flag > file, absent allowed.
    pub fn resolve_optional<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
