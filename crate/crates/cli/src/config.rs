//! Flat `key = value` config files and flag/config/default resolution.
//!
//! Keys are the long flag names (`walk-length = 80`). `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "edges",
    "attrs",
    "labels",
    "pairs",
    "out",
    "codes",
    "vocab",
    "checkpoint",
    "queries",
    "features",
    "dump-walks",
    "delimiter",
    "skip-unknown",
    "structure-only",
    "walk-length",
    "walks-per-node",
    "window",
    "dim",
    "iters",
    "negatives",
    "eta-start",
    "eta-end",
    "beta-start",
    "beta-end",
    "beta-curve",
    "switch-prob",
    "noise-power",
    "grad-clip",
    "log-every",
    "seed",
    "threads",
    "k",
    "include-self",
    "include-query",
    "timing",
    "method",
    "tsv",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse(text: &str, source: Option<&Path>) -> Result<Self> {
        let name = source.map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{name}:{}: expected `key = value`", n + 1))?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("{name}:{}: unknown key `{key}`", n + 1);
            }
            values.insert(key, value.trim().to_owned());
        }
        Ok(ConfigFile {
            values,
            source: source.map(Path::to_path_buf),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                let src = self.source.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                anyhow!("{src}: bad value `{v}` for `{key}`: {e}")
            }),
        }
    }
}

/// Resolves each setting from flag, then config file, then default, and
/// records the outcome for the run log.
pub struct Resolver<'a> {
    config: &'a ConfigFile,
    resolved: Vec<(String, String)>,
}

impl<'a> Resolver<'a> {
    pub fn new(config: &'a ConfigFile) -> Self {
        Resolver {
            config,
            resolved: Vec::new(),
        }
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.config.parse_value(key)?.unwrap_or(default),
        };
        self.resolved.push((key.to_owned(), v.to_string()));
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.config.parse_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.push((key.to_owned(), v.to_string()));
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let v = flag.or_else(|| self.config.raw(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.resolved.push((key.to_owned(), p.display().to_string()));
        }
        Ok(v)
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| anyhow!("missing required setting `--{key}` (flag or config file)"))
    }

    /// Boolean switches: set by the flag, or `key = true` in the config.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.config.parse_value::<bool>(key)?.unwrap_or(false);
        self.resolved.push((key.to_owned(), v.to_string()));
        Ok(v)
    }

    pub fn summary(&self) -> String {
        self.resolved
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
