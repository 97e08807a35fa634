use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Every key any command reads. A key outside this list is a typo and
/// rejected up front rather than silently ignored.
pub const ALLOWED_KEYS: &[&str] = &[
    "addr",
    "artifacts",
    "baselines",
    "beta",
    "betas",
    "codec",
    "dataset",
    "epochs",
    "hecsa_epochs",
    "hecsa_hidden",
    "hidden",
    "image",
    "images",
    "lasso_final_iters",
    "lasso_tol",
    "lasso_val_iters",
    "latent",
    "link",
    "links",
    "m_list",
    "methods",
    "min_top1",
    "out",
    "seed",
    "sigma",
    "subset",
    "teacher",
    "teacher_hidden",
    "train_count",
    "vae_epochs",
    "vae_hidden",
    "vae_latent",
    "val_count",
];

/// Merged run settings: defaults < config file < command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses a plain `key=value` file. `#` starts a comment; blank lines
    /// are skipped; keys must be known.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::empty();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key=value, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set_checked(key.trim(), value.trim()).map_err(|e| {
                CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    fn set_checked(&mut self, key: &str, value: &str) -> Result<(), String> {
        if !ALLOWED_KEYS.contains(&key) {
            return Err(format!("unknown key `{key}`"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Flag override; the key must be one the tool defines.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        assert!(ALLOWED_KEYS.contains(&key), "undeclared config key {key}");
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn path_or(&self, key: &str, default: &str) -> PathBuf {
        PathBuf::from(self.str_or(key, default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: expected integer, got `{v}`"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: expected integer, got `{v}`"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: expected number, got `{v}`"))),
        }
    }

    /// Comma-separated integer list.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        CliError::Config(format!("{key}: expected integer list, got `{v}`"))
                    })
                })
                .collect(),
        }
    }

    /// Comma-separated float list.
    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        CliError::Config(format!("{key}: expected number list, got `{v}`"))
                    })
                })
                .collect(),
        }
    }
}
