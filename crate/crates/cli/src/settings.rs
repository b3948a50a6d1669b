//! Merges the `--config` file with command-line flags and records every
//! resolved value, defaults included, for the output's `run_config.txt`.

use std::fmt;
use std::str::FromStr;

use anyhow::Result;
use emgspeech::config::RunConfig;

use crate::Globals;

/// Bad flags, config keys or config values (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Settings {
    merged: RunConfig,
    resolved: RunConfig,
}

impl Settings {
    /// `flags` holds only the flags given on the command line.
    pub fn new(command: &str, allowed: &[&str], globals: &Globals, flags: RunConfig) -> Result<Self> {
        let mut merged = match &globals.config {
            Some(path) => {
                RunConfig::load(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::new(),
        };
        if let Some(c) = merged.get("command") {
            if c != command {
                return Err(usage(format!("config was written by `{c}`, not `{command}`")));
            }
        }
        merged.merge(&flags);
        let mut keys = allowed.to_vec();
        keys.push("command");
        merged.check_keys(&keys).map_err(|e| usage(e.to_string()))?;
        let mut resolved = RunConfig::new();
        resolved.set("command", command);
        Ok(Settings { merged, resolved })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.merged.get_parsed(key).map_err(|e| usage(e.to_string()))
    }

    pub fn get<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.parse(key)?.unwrap_or(default);
        self.resolved.set(key, v.to_string());
        Ok(v)
    }

    pub fn opt<T: FromStr + ToString>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let v = self.parse::<T>(key)?;
        if let Some(v) = &v {
            self.resolved.set(key, v.to_string());
        }
        Ok(v)
    }

    pub fn required<T: FromStr + ToString>(&mut self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| usage(format!("missing required setting `{key}` (flag --{})", key.replace('_', "-"))))
    }

    pub fn finish(self) -> RunConfig {
        self.resolved
    }
}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Flags(RunConfig);

impl Flags {
    pub fn set<T: ToString>(&mut self, key: &str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.set(key, v.to_string());
        }
        self
    }

    pub fn switch(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.set(key, "true");
        }
        self
    }

    pub fn take(&mut self) -> RunConfig {
        std::mem::take(&mut self.0)
    }
}
