//! Layered configuration and the run manifest.
//!
//! Config files are flat `key = value` text:
//!
//! ```text
//! # comment
//! model = btbcnn
//! lrs = 0.001, 0.0005
//! deterministic = true
//! ```
//!
//! One pair per line, blank lines and `#` comment lines ignored, keys are
//! case-insensitive with `-` and `_` interchangeable, duplicate or unknown
//! keys are errors. Every key can also be set through an environment
//! variable `LEANCNN_<KEY>` (upper case) and most through a CLI flag of the
//! same name. Precedence is flag, then environment, then file, then default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "LEANCNN_";

/// Version of the run-directory layout.
pub const LAYOUT_VERSION: u32 = 1;

/// Keys accepted in files and `LEANCNN_` variables.
pub const KEYS: &[&str] = &[
    "batch",
    "checkpoint",
    "data",
    "deterministic",
    "epochs",
    "eval_every",
    "format",
    "input_size",
    "json",
    "lr",
    "lrs",
    "manifest",
    "measured",
    "model",
    "models",
    "out",
    "positive",
    "sampler_seed",
    "seed",
    "shots",
    "split",
    "split_ratio",
    "split_seed",
    "threads",
    "train_epochs",
    "warmup",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Env => "env",
            Source::File => "file",
            Source::Default => "default",
        })
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn check_key(key: &str, origin: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key {key:?} in {origin}")))
    }
}

pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
        let key = normalize_key(k);
        check_key(&key, origin)?;
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "{origin}:{}: duplicate key {key:?}",
                n + 1
            )));
        }
    }
    Ok(out)
}

/// Flag, environment and file layers plus a record of every value read.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    pub file_path: Option<PathBuf>,
    flags: BTreeMap<String, String>,
    env: BTreeMap<String, String>,
    file: BTreeMap<String, String>,
    resolved: std::cell::RefCell<BTreeMap<String, (String, Source)>>,
}

impl Layers {
    pub fn new(
        flags: BTreeMap<String, String>,
        env: BTreeMap<String, String>,
        file: BTreeMap<String, String>,
        file_path: Option<PathBuf>,
    ) -> Self {
        Self {
            file_path,
            flags,
            env,
            file,
            resolved: Default::default(),
        }
    }

    /// Reads `LEANCNN_*` variables from the process environment and the
    /// optional config file.
    pub fn load(flags: BTreeMap<String, String>, config_file: Option<&Path>) -> Result<Self> {
        let env = env_layer(std::env::vars())?;
        let file = match config_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config file {}: {e}", p.display()))
                })?;
                parse_config_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        Ok(Self::new(
            flags,
            env,
            file,
            config_file.map(Path::to_path_buf),
        ))
    }

    /// Raw value and where it came from.
    pub fn raw(&self, key: &str) -> Option<(String, Source)> {
        let found = [
            (&self.flags, Source::Flag),
            (&self.env, Source::Env),
            (&self.file, Source::File),
        ]
        .into_iter()
        .find_map(|(layer, src)| layer.get(key).map(|v| (v.clone(), src)));
        if let Some(f) = &found {
            self.resolved.borrow_mut().insert(key.into(), f.clone());
        }
        found
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
    {
        match self.raw(key) {
            Some((v, src)) => parse_value(key, &v, src),
            None => {
                self.resolved
                    .borrow_mut()
                    .insert(key.into(), (default.to_string(), Source::Default));
                Ok(default)
            }
        }
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|(v, src)| parse_value(key, &v, src))
            .transpose()
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, src)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_value(key, s, src))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Every value consulted so far, for the manifest.
    pub fn resolved(&self) -> BTreeMap<String, ResolvedValue> {
        self.resolved
            .borrow()
            .iter()
            .map(|(k, (v, s))| {
                (
                    k.clone(),
                    ResolvedValue {
                        value: v.clone(),
                        source: *s,
                    },
                )
            })
            .collect()
    }
}

pub fn env_layer(
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, v) in vars {
        if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
            let key = normalize_key(rest);
            check_key(&key, &format!("environment variable {k}"))?;
            out.insert(key, v);
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, v: &str, src: Source) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key} (from {src})")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedValue {
    pub value: String,
    pub source: Source,
}

/// Written once per command into its output directory. The only artifact
/// that carries wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub layout_version: u32,
    pub engine_version: String,
    pub command: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub resolved: BTreeMap<String, ResolvedValue>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub artifacts: Vec<PathBuf>,
    pub hardware: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}
