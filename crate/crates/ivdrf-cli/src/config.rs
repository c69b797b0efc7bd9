//! Flat key-value run configuration: file plus flag overrides, written back
//! out as a manifest that reproduces the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ivdrf::data::{Schema, TargetInterval};
use ivdrf::error::{Error, Result};
use ivdrf::scores::EstimatorTag;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Resolved run configuration; every value a subcommand used ends up here.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Manifest written next to every output set.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
}

impl RunConfig {
    /// Loads a config file: `key = value` lines (# comments), or a manifest
    /// JSON produced by an earlier run.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("manifest parse: {e}")))?;
            return Ok(RunConfig {
                values: manifest.config,
            });
        }
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunConfig { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_if_absent(&mut self, key: &str, value: impl ToString) {
        self.values
            .entry(key.to_string())
            .or_insert_with(|| value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{s}'"))),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let s = self.require(key)?;
        s.parse::<T>()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{s}'")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.require_parse("seed")
    }

    /// `lo,hi` pair.
    pub fn interval(&self, key: &str) -> Result<Option<TargetInterval>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => {
                let (lo, hi) = s
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("key '{key}': expected lo,hi")))?;
                let lo = lo.trim().parse().map_err(|_| {
                    Error::Config(format!("key '{key}': bad lower bound '{lo}'"))
                })?;
                let hi = hi.trim().parse().map_err(|_| {
                    Error::Config(format!("key '{key}': bad upper bound '{hi}'"))
                })?;
                Ok(Some(TargetInterval::new(lo, hi)?))
            }
        }
    }

    /// Column mapping from the `schema.*` keys.
    pub fn schema(&self) -> Result<Schema> {
        let list = |key: &str| -> Vec<String> {
            self.get(key)
                .map(|s| {
                    s.split(',')
                        .map(|t| t.trim().to_string())
                        .filter(|t| !t.is_empty())
                        .collect()
                })
                .unwrap_or_default()
        };
        let schema = Schema {
            treatment: self.require("schema.treatment")?.to_string(),
            outcome: self.require("schema.outcome")?.to_string(),
            covariates: list("schema.covariates"),
            instruments: list("schema.instruments"),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn tags(&self, key: &str, default: &[EstimatorTag]) -> Result<Vec<EstimatorTag>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|t| EstimatorTag::parse(t.trim()))
                .collect(),
        }
    }

    pub fn manifest(&self, subcommand: &str) -> Manifest {
        Manifest {
            version: VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config: self.values.clone(),
        }
    }

    pub fn write_manifest(&self, subcommand: &str, out_dir: &Path) -> Result<PathBuf> {
        let manifest = self.manifest(subcommand);
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}
