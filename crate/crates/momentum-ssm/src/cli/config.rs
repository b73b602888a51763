//! Flag and config-file handling.
//!
//! Every command accepts `--key value` flags plus an optional line-
//! oriented config file (`key = value`, `#` comments). Precedence is
//! defaults < config file < flags; unknown keys are rejected. Each run
//! writes a resolved-config echo containing every key it ran with, and
//! feeding that file back through `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Build from raw args (after the command word), a default table, and
    /// the set of allowed keys (= the default table's keys).
    pub fn resolve(command: &str, args: &[String], defaults: &[(&str, &str)]) -> Result<RunConfig> {
        let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();

        // first pass: flags into a map
        let mut flags: Vec<(String, String)> = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --flag, got '{a}'")))?;
            let val = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
            flags.push((key.to_string(), val.clone()));
            i += 2;
        }

        // config file (if any) applies before explicit flags
        if let Some((_, path)) = flags.iter().find(|(k, _)| k == "config") {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected 'key = value', got '{line}'"),
                })?;
                let (k, v) = (k.trim(), v.trim());
                if !allowed.contains(&k) {
                    return Err(Error::Config(format!(
                        "unknown key '{k}' in config file (command {command})"
                    )));
                }
                values.insert(k.to_string(), v.to_string());
            }
        }

        for (k, v) in flags {
            if k == "config" {
                continue;
            }
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown flag --{k} for command {command}")));
            }
            values.insert(k, v);
        }

        Ok(RunConfig { command: command.to_string(), values })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not a number", self.str(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not a count", self.str(key))))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not an integer", self.str(key))))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("{key} = '{other}' is not a boolean"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.str(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: '{s}' is not a number")))
            })
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.str(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: '{s}' is not a count")))
            })
            .collect()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        self.str(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("out"))
    }

    /// Write the resolved `key = value` echo; feeding it back through
    /// `--config` reproduces this run.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        let mut text = format!("# resolved configuration for `{}`\n", self.command);
        for (k, v) in &self.values {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let path = dir.join(format!("{}.resolved.cfg", self.command));
        fs::write(&path, text)?;
        Ok(path)
    }
}
