use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mutators::MutatorAction;
use crate::Error;

/// One coverage-gaining execution (plus the final step of the run).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeriesRow {
    pub step: u64,
    pub wallclock_ns: u64,
    pub cov: u64,
    pub action: MutatorAction,
    pub new_edges: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub target: String,
    pub config_hash: String,
    pub seed: u64,
    pub executions: u64,
    pub final_cov: u64,
    pub corpus_len: u64,
    pub corpus_digest: String,
    pub crashes: u64,
    pub selected: BTreeMap<String, u64>,
    pub credited: BTreeMap<String, u64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub target: String,
    pub config_hash: String,
    pub seed: u64,
    pub executions: u64,
    pub final_cov: u64,
    /// Coverage step function: one row per coverage gain, plus a closing
    /// row at the last execution.
    pub series: Vec<SeriesRow>,
    pub selected: [u64; MutatorAction::COUNT],
    pub credited: [u64; MutatorAction::COUNT],
    pub crashes: u64,
    pub corpus_len: u64,
    /// SHA-256 over the corpus entries in discovery order.
    pub corpus_digest: String,
    pub wall_ns: u64,
}

impl RunReport {
    /// Coverage after `step` executions.
    pub fn cov_at(&self, step: u64) -> u64 {
        match self.series.partition_point(|r| r.step <= step) {
            0 => 0,
            i => self.series[i - 1].cov,
        }
    }

    pub fn summary(&self) -> RunSummary {
        let hist = |counts: &[u64; MutatorAction::COUNT]| {
            MutatorAction::ALL
                .iter()
                .map(|a| (a.name().to_string(), counts[a.index()]))
                .collect()
        };
        RunSummary {
            target: self.target.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            executions: self.executions,
            final_cov: self.final_cov,
            corpus_len: self.corpus_len,
            corpus_digest: self.corpus_digest.clone(),
            crashes: self.crashes,
            selected: hist(&self.selected),
            credited: hist(&self.credited),
        }
    }

    /// Digest of everything deterministic in the report (wall-clock
    /// timings excluded).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.summary()).unwrap_or_default());
        for r in &self.series {
            h.update(r.step.to_le_bytes());
            h.update(r.cov.to_le_bytes());
            h.update([r.action as u8]);
            h.update(r.new_edges.to_le_bytes());
        }
        hex(&h.finalize()[..16])
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::from("step,wallclock_ns,cov,action,new_edges\n");
        for r in &self.series {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.wallclock_ns, r.cov, r.action, r.new_edges
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    crate::mutators::hex_encode(bytes)
}

const ACTION_LOG_MAGIC: &[u8; 8] = b"RLFZACT1";

/// Append-only record of the action executed at every step.
///
/// Layout: the 8-byte magic `RLFZACT1`, the 16 ASCII hex digits of the
/// config hash, the run seed as u64 little-endian, then one 9-byte record
/// per execution: step (u64 LE) followed by the action byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionLog {
    pub config_hash: String,
    pub seed: u64,
    pub actions: Vec<MutatorAction>,
}

impl ActionLog {
    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut hash = [b'0'; 16];
        let src = self.config_hash.as_bytes();
        hash[..src.len().min(16)].copy_from_slice(&src[..src.len().min(16)]);
        let io = |e| Error::io(path, e);
        w.write_all(ACTION_LOG_MAGIC).map_err(io)?;
        w.write_all(&hash).map_err(io)?;
        w.write_all(&self.seed.to_le_bytes()).map_err(io)?;
        for (step, a) in self.actions.iter().enumerate() {
            w.write_all(&(step as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&[*a as u8]).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Parse(format!("{}: {reason}", path.display()));
        if data.len() < 32 || &data[..8] != ACTION_LOG_MAGIC {
            return Err(bad("not an action log"));
        }
        let config_hash = String::from_utf8(data[8..24].to_vec()).map_err(|_| bad("bad hash"))?;
        let seed = u64::from_le_bytes(data[24..32].try_into().unwrap());
        let body = &data[32..];
        if body.len() % 9 != 0 {
            return Err(bad("truncated record"));
        }
        let mut actions = Vec::with_capacity(body.len() / 9);
        for (i, rec) in body.chunks_exact(9).enumerate() {
            let step = u64::from_le_bytes(rec[..8].try_into().unwrap());
            if step != i as u64 {
                return Err(bad("steps out of order"));
            }
            actions.push(
                MutatorAction::from_index(rec[8] as usize).ok_or_else(|| bad("bad action byte"))?,
            );
        }
        Ok(Self {
            config_hash,
            seed,
            actions,
        })
    }
}
