use std::collections::{HashSet, VecDeque};

/// Capacities for the three mutation dictionaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DictLimits {
    pub temp_capacity: usize,
    pub persist_capacity: usize,
    pub torc_capacity: usize,
    pub max_word_len: usize,
}

impl Default for DictLimits {
    fn default() -> Self {
        Self {
            temp_capacity: 256,
            persist_capacity: 4096,
            torc_capacity: 64,
            max_word_len: 64,
        }
    }
}

/// One comparison observed while the target ran: the operand derived from the
/// input and the operand the target compared it against.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CmpPair {
    pub observed: Vec<u8>,
    pub expected: Vec<u8>,
}

impl CmpPair {
    pub fn from_u32(observed: u32, expected: u32) -> Self {
        Self {
            observed: observed.to_le_bytes().to_vec(),
            expected: expected.to_le_bytes().to_vec(),
        }
    }
}

/// Bounded FIFO: pushing past capacity evicts the oldest element.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Bounded<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> Bounded<T> {
    fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::new(),
            capacity,
        }
    }

    fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }
}

/// Temporary auto-dictionary, persistent auto-dictionary and the table of
/// recent compares.
///
/// The temporary dictionary holds words credited with coverage during the
/// current episode and is cleared by [`DictionaryState::reset_episode`]; the
/// persistent dictionary lives for the whole run and is deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DictionaryState {
    limits: DictLimits,
    temp: Bounded<Vec<u8>>,
    persist: Bounded<Vec<u8>>,
    persist_index: HashSet<Vec<u8>>,
    torc: Bounded<CmpPair>,
}

impl Default for DictionaryState {
    fn default() -> Self {
        Self::new(DictLimits::default())
    }
}

impl DictionaryState {
    pub fn new(limits: DictLimits) -> Self {
        assert!(limits.temp_capacity > 0 && limits.persist_capacity > 0);
        assert!(limits.torc_capacity > 0 && limits.max_word_len > 0);
        Self {
            temp: Bounded::new(limits.temp_capacity),
            persist: Bounded::new(limits.persist_capacity),
            persist_index: HashSet::new(),
            torc: Bounded::new(limits.torc_capacity),
            limits,
        }
    }

    pub fn limits(&self) -> &DictLimits {
        &self.limits
    }

    fn clip<'a>(&self, word: &'a [u8]) -> &'a [u8] {
        if word.len() > self.limits.max_word_len {
            log::debug!(
                "dictionary word of {} bytes truncated to {}",
                word.len(),
                self.limits.max_word_len
            );
            &word[..self.limits.max_word_len]
        } else {
            word
        }
    }

    /// Credit `word` with a coverage gain. Empty words are ignored, long
    /// words are truncated to the configured maximum.
    pub fn record_coverage_credit(&mut self, word: &[u8]) {
        if word.is_empty() {
            return;
        }
        let word = self.clip(word).to_vec();
        self.temp.push(word.clone());
        if !self.persist_index.contains(&word) {
            self.persist_index.insert(word.clone());
            if let Some(old) = self.persist.push(word) {
                self.persist_index.remove(&old);
            }
        }
    }

    /// Record one comparison performed by the target.
    pub fn record_compare(&mut self, pair: &CmpPair) {
        if pair.expected.is_empty() {
            return;
        }
        let pair = CmpPair {
            observed: self.clip(&pair.observed).to_vec(),
            expected: self.clip(&pair.expected).to_vec(),
        };
        self.torc.push(pair);
    }

    /// Forget episode-local state. The persistent dictionary survives.
    pub fn reset_episode(&mut self) {
        self.temp.items.clear();
        self.torc.items.clear();
    }

    pub fn temp_words(&self) -> impl ExactSizeIterator<Item = &[u8]> {
        self.temp.items.iter().map(Vec::as_slice)
    }

    pub fn persist_words(&self) -> impl ExactSizeIterator<Item = &[u8]> {
        self.persist.items.iter().map(Vec::as_slice)
    }

    pub fn torc_entries(&self) -> impl ExactSizeIterator<Item = &CmpPair> {
        self.torc.items.iter()
    }

    pub(crate) fn temp_word(&self, i: usize) -> &[u8] {
        &self.temp.items[i]
    }

    pub(crate) fn persist_word(&self, i: usize) -> &[u8] {
        &self.persist.items[i]
    }

    pub(crate) fn torc_word(&self, i: usize) -> &[u8] {
        &self.torc.items[i].expected
    }

    /// Newline-delimited lowercase hex, persistent words first, then
    /// temporary words, each section preceded by a `# section` line.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::from("# persist\n");
        for w in self.persist_words() {
            out.push_str(&hex_encode(w));
            out.push('\n');
        }
        out.push_str("# temp\n");
        for w in self.temp_words() {
            out.push_str(&hex_encode(w));
            out.push('\n');
        }
        out
    }

    /// Preload the persistent dictionary from a snapshot produced by
    /// [`DictionaryState::to_snapshot`]. Only the `persist` section is read.
    pub fn load_persist_snapshot(&mut self, text: &str) -> Result<usize, crate::Error> {
        let mut section = "persist";
        let mut loaded = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('#') {
                section = if name.trim() == "persist" { "persist" } else { "other" };
                continue;
            }
            if section != "persist" {
                continue;
            }
            let word = hex_decode(line).ok_or_else(|| {
                crate::Error::Parse(format!("dictionary line {}: bad hex", lineno + 1))
            })?;
            let word = self.clip(&word).to_vec();
            if !word.is_empty() && self.persist_index.insert(word.clone()) {
                if let Some(old) = self.persist.push(word) {
                    self.persist_index.remove(&old);
                }
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 0xf) as usize] as char);
    }
    s
}

pub(crate) fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}
