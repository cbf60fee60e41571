//! Versioned run configuration and its flat `key = value` file format.
//!
//! Recognised keys: `version`, `target`, `budget_execs`, `budget_secs`,
//! `ring_k`, `snapshot_s`, `max_len`, `seed`, plus the agent
//! hyperparameters under `agent.*`. Blank lines and `#` comments are
//! ignored. The config hash is the first 16 hex digits of the SHA-256 of
//! the canonical rendering produced by [`EnvConfig::to_text`], so two runs
//! are comparable exactly when their hashes agree.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::mutators::DEFAULT_MAX_LEN;
use crate::Error;

pub const CONFIG_VERSION: &str = "1";

/// When a run stops: after a number of executions, a wall-clock limit, or
/// whichever comes first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub execs: Option<u64>,
    pub secs: Option<f64>,
}

impl Budget {
    pub fn execs(n: u64) -> Self {
        Self {
            execs: Some(n),
            secs: None,
        }
    }

    pub fn secs(s: f64) -> Self {
        Self {
            execs: None,
            secs: Some(s),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match (self.execs, self.secs) {
            (None, None) => Err(Error::Config("budget needs budget_execs or budget_secs".into())),
            (Some(0), _) => Err(Error::Config("budget_execs must be > 0".into())),
            (_, Some(s)) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::Config("budget_secs must be > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub version: String,
    pub target: String,
    pub budget: Budget,
    pub ring_k: usize,
    pub snapshot_s: u64,
    pub max_len: usize,
    pub seed: u64,
    pub agent: AgentConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION.into(),
            target: "magic_header".into(),
            budget: Budget::execs(200_000),
            ring_k: 32,
            snapshot_s: 256,
            max_len: DEFAULT_MAX_LEN,
            seed: 1,
            agent: AgentConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.budget.validate()?;
        if self.ring_k == 0 {
            return Err(Error::Config("ring_k must be > 0".into()));
        }
        if self.snapshot_s == 0 {
            return Err(Error::Config("snapshot_s must be > 0".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be > 0".into()));
        }
        if self.target.is_empty() {
            return Err(Error::Config("target must be set".into()));
        }
        self.agent.validate()
    }

    /// Canonical rendering; keys in fixed order, absent values omitted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "target = {}", self.target);
        if let Some(n) = self.budget.execs {
            let _ = writeln!(s, "budget_execs = {n}");
        }
        if let Some(t) = self.budget.secs {
            let _ = writeln!(s, "budget_secs = {t}");
        }
        let _ = writeln!(s, "ring_k = {}", self.ring_k);
        let _ = writeln!(s, "snapshot_s = {}", self.snapshot_s);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (k, v) in self.agent.entries() {
            let _ = writeln!(s, "agent.{k} = {v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut cfg = EnvConfig {
            budget: Budget {
                execs: None,
                secs: None,
            },
            ..Default::default()
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        if cfg.budget.execs.is_none() && cfg.budget.secs.is_none() {
            cfg.budget = EnvConfig::default().budget;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), Error> {
        match key {
            "version" => self.version = v.to_string(),
            "target" => self.target = v.to_string(),
            "budget_execs" => self.budget.execs = Some(parse(key, v)?),
            "budget_secs" => self.budget.secs = Some(parse(key, v)?),
            "ring_k" => self.ring_k = parse(key, v)?,
            "snapshot_s" => self.snapshot_s = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            k => match k.strip_prefix("agent.") {
                Some(ak) => self.agent.set(ak, v)?,
                None => return Err(Error::Config(format!("unknown key {k:?}"))),
            },
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
