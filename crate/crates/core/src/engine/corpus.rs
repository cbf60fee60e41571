use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::report::hex;
use crate::mutators::MutatorAction;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub bytes: Vec<u8>,
    /// Executions performed when the entry was found (0 for the seed).
    pub step: u64,
    /// Operator selected for the execution that found it; `None` for the seed.
    pub action: Option<MutatorAction>,
    /// Coverage count right after the entry was absorbed.
    pub cov: u64,
}

/// Inputs that increased coverage, in discovery order. Never shrinks.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &CorpusEntry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub(crate) fn push(&mut self, entry: CorpusEntry) {
        self.entries.push(entry);
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update((e.bytes.len() as u64).to_le_bytes());
            h.update(&e.bytes);
        }
        hex(&h.finalize()[..16])
    }

    /// One file per entry, named `<index:06>-<first 8 hex of sha256>`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, e) in self.entries.iter().enumerate() {
            let path = dir.join(entry_file_name(i, &e.bytes));
            fs::write(&path, &e.bytes).map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }
}

pub fn entry_file_name(index: usize, bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    format!("{index:06}-{}", hex(&digest[..4]))
}
