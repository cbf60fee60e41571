//! The thirteen byte-level mutation operators and their dictionaries.
//!
//! Every operator is total: inputs that are too short for an operator fall
//! back to `InsertByte` (empty input) or `ChangeByte` (non-empty but too
//! short), so the fuzzing loop never stalls. Outputs never exceed
//! `max_len`; operators that would grow past it are truncated.

mod dict;

pub use dict::{CmpPair, DictLimits, DictionaryState};
pub(crate) use dict::{hex_decode, hex_encode};

use std::fmt;
use std::str::FromStr;

use crate::rng::RngStream;
use crate::Error;

pub const DEFAULT_MAX_LEN: usize = 4096;

/// The mutation operators, which double as the agent's action space.
///
/// The discriminant is the stable wire encoding used in action logs,
/// replay memories and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MutatorAction {
    EraseBytes = 0,
    InsertByte = 1,
    InsertRepeatedBytes = 2,
    ChangeBit = 3,
    ChangeByte = 4,
    ShuffleBytes = 5,
    ChangeAsciiInteger = 6,
    ChangeBinaryInteger = 7,
    CopyPart = 8,
    CrossOver = 9,
    AddWordPersistAutoDict = 10,
    AddWordTempAutoDict = 11,
    AddWordFromTorc = 12,
}

impl MutatorAction {
    pub const COUNT: usize = 13;

    pub const ALL: [MutatorAction; Self::COUNT] = [
        Self::EraseBytes,
        Self::InsertByte,
        Self::InsertRepeatedBytes,
        Self::ChangeBit,
        Self::ChangeByte,
        Self::ShuffleBytes,
        Self::ChangeAsciiInteger,
        Self::ChangeBinaryInteger,
        Self::CopyPart,
        Self::CrossOver,
        Self::AddWordPersistAutoDict,
        Self::AddWordTempAutoDict,
        Self::AddWordFromTorc,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EraseBytes => "EraseBytes",
            Self::InsertByte => "InsertByte",
            Self::InsertRepeatedBytes => "InsertRepeatedBytes",
            Self::ChangeBit => "ChangeBit",
            Self::ChangeByte => "ChangeByte",
            Self::ShuffleBytes => "ShuffleBytes",
            Self::ChangeAsciiInteger => "ChangeASCIIInteger",
            Self::ChangeBinaryInteger => "ChangeBinaryInteger",
            Self::CopyPart => "CopyPart",
            Self::CrossOver => "CrossOver",
            Self::AddWordPersistAutoDict => "AddWordPersistAutoDict",
            Self::AddWordTempAutoDict => "AddWordTempAutoDict",
            Self::AddWordFromTorc => "AddWordFromTORC",
        }
    }

    /// True for the operators that never change the input length.
    pub fn preserves_length(self) -> bool {
        matches!(
            self,
            Self::ChangeBit
                | Self::ChangeByte
                | Self::ShuffleBytes
                | Self::ChangeAsciiInteger
                | Self::ChangeBinaryInteger
        )
    }

    fn is_dictionary(self) -> bool {
        matches!(
            self,
            Self::AddWordPersistAutoDict | Self::AddWordTempAutoDict | Self::AddWordFromTorc
        )
    }
}

impl fmt::Display for MutatorAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutatorAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i).ok_or_else(|| Error::Parse(format!("action index {i}")));
        }
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown mutator {s:?}")))
    }
}

/// A bounded byte sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TestInput(Vec<u8>);

impl TestInput {
    pub fn new(bytes: Vec<u8>, max_len: usize) -> Result<Self, Error> {
        if bytes.len() > max_len {
            return Err(Error::Config(format!(
                "input of {} bytes exceeds max_len {max_len}",
                bytes.len()
            )));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for TestInput {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutatorConfig {
    pub max_len: usize,
    /// Upper bound on the run length inserted by `InsertRepeatedBytes`.
    pub max_repeat: usize,
    /// Upper bound on the delta used by `ChangeBinaryInteger`.
    pub max_int_delta: u64,
}

impl Default for MutatorConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            max_repeat: 128,
            max_int_delta: 16,
        }
    }
}

/// The result of one mutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mutation {
    pub bytes: Vec<u8>,
    /// Operator that actually ran after fallbacks.
    pub applied: MutatorAction,
    /// Word written by a dictionary operator, or the slice taken from the
    /// other input by `CrossOver`. Credited to the dictionaries when the
    /// mutation gains coverage.
    pub word: Option<Vec<u8>>,
}

/// Apply `action` to `input`.
///
/// `corpus_sample` is the other parent for `CrossOver`; when absent the
/// input is crossed with itself.
pub fn mutate(
    action: MutatorAction,
    input: &[u8],
    corpus_sample: Option<&[u8]>,
    dicts: &DictionaryState,
    rng: &mut RngStream,
    cfg: &MutatorConfig,
) -> Mutation {
    debug_assert!(input.len() <= cfg.max_len);
    let mut out = Mutation {
        bytes: input.to_vec(),
        applied: action,
        word: None,
    };
    let applied = apply(action, &mut out, corpus_sample, dicts, rng, cfg);
    out.applied = applied;
    out.bytes.truncate(cfg.max_len);
    out
}

fn fallback(len: usize) -> MutatorAction {
    if len == 0 {
        MutatorAction::InsertByte
    } else {
        MutatorAction::ChangeByte
    }
}

fn apply(
    action: MutatorAction,
    m: &mut Mutation,
    other: Option<&[u8]>,
    dicts: &DictionaryState,
    rng: &mut RngStream,
    cfg: &MutatorConfig,
) -> MutatorAction {
    use MutatorAction::*;
    let len = m.bytes.len();
    let data = &mut m.bytes;
    match action {
        EraseBytes | ChangeBit | ChangeByte | ChangeAsciiInteger | ChangeBinaryInteger
        | CopyPart
            if len == 0 =>
        {
            apply(InsertByte, m, other, dicts, rng, cfg)
        }
        ShuffleBytes if len < 2 => apply(fallback(len), m, other, dicts, rng, cfg),
        a if a.is_dictionary() && len == 0 => apply(InsertByte, m, other, dicts, rng, cfg),

        EraseBytes => {
            let pos = rng.below(len);
            data.remove(pos);
            EraseBytes
        }
        InsertByte => {
            let pos = rng.below(len + 1);
            let b = rng.next_u8();
            data.insert(pos, b);
            data.truncate(cfg.max_len);
            InsertByte
        }
        InsertRepeatedBytes => {
            let room = cfg.max_len - len;
            let n = rng.range_inclusive(3, cfg.max_repeat.max(3)).min(room);
            let pos = rng.below(len + 1);
            let b = rng.next_u8();
            data.splice(pos..pos, std::iter::repeat_n(b, n));
            InsertRepeatedBytes
        }
        ChangeBit => {
            let pos = rng.below(len);
            data[pos] ^= 1 << rng.below(8);
            ChangeBit
        }
        ChangeByte => {
            let pos = rng.below(len);
            data[pos] = rng.next_u8();
            ChangeByte
        }
        ShuffleBytes => {
            shuffle_bytes(data, rng);
            ShuffleBytes
        }
        ChangeAsciiInteger => {
            if change_ascii_integer(data, rng) {
                ChangeAsciiInteger
            } else {
                apply(ChangeByte, m, other, dicts, rng, cfg)
            }
        }
        ChangeBinaryInteger => {
            change_binary_integer(data, rng, cfg.max_int_delta);
            ChangeBinaryInteger
        }
        CopyPart => {
            let n = rng.range_inclusive(1, len);
            let start = rng.below(len - n + 1);
            data.copy_within(start..start + n, 0);
            data.truncate(n);
            CopyPart
        }
        CrossOver => {
            let (bytes, word) = match other {
                Some(o) => cross_over(data, o, rng),
                None => {
                    let this = data.clone();
                    cross_over(&this, &this, rng)
                }
            };
            *data = bytes;
            m.word = word;
            CrossOver
        }
        AddWordPersistAutoDict | AddWordTempAutoDict | AddWordFromTorc => {
            let word = match action {
                AddWordPersistAutoDict => pick(dicts.persist_words().len(), rng)
                    .map(|i| dicts.persist_word(i)),
                AddWordTempAutoDict => {
                    pick(dicts.temp_words().len(), rng).map(|i| dicts.temp_word(i))
                }
                _ => pick(dicts.torc_entries().len(), rng).map(|i| dicts.torc_word(i)),
            };
            match word {
                Some(w) => {
                    let w = w.to_vec();
                    overwrite_word(data, &w, rng, cfg.max_len);
                    m.word = Some(w);
                    action
                }
                None => apply(ChangeByte, m, other, dicts, rng, cfg),
            }
        }
    }
}

fn pick(n: usize, rng: &mut RngStream) -> Option<usize> {
    (n > 0).then(|| rng.below(n))
}

/// Fisher-Yates shuffle of a random window of up to 8 bytes.
///
/// Draw order: window length `n` in `[2, min(len, 8)]`, window start in
/// `[0, len - n]`, then for `i` from `n - 1` down to `1` a swap partner
/// `j` in `[0, i]`.
pub fn shuffle_bytes(data: &mut [u8], rng: &mut RngStream) {
    let len = data.len();
    if len < 2 {
        return;
    }
    let n = rng.range_inclusive(2, len.min(8));
    let start = rng.below(len - n + 1);
    let window = &mut data[start..start + n];
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        window.swap(i, j);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntOp {
    Add,
    Sub,
    Negate,
}

/// Reinterpret `data[offset..offset + width]` as a little-endian integer and
/// combine it with `delta`, wrapping at the width.
pub fn apply_binary_int(data: &mut [u8], offset: usize, width: usize, op: IntOp, delta: u64) {
    assert!(matches!(width, 1 | 2 | 4 | 8) && offset + width <= data.len());
    let window = &mut data[offset..offset + width];
    let mut buf = [0u8; 8];
    buf[..width].copy_from_slice(window);
    let v = u64::from_le_bytes(buf);
    let r = match op {
        IntOp::Add => v.wrapping_add(delta),
        IntOp::Sub => v.wrapping_sub(delta),
        IntOp::Negate => v.wrapping_neg(),
    };
    window.copy_from_slice(&r.to_le_bytes()[..width]);
}

/// Width drawn uniformly from the widths in `{1, 2, 4, 8}` that fit, then an
/// offset, an operation and a delta in `[1, max_delta]`.
pub fn change_binary_integer(data: &mut [u8], rng: &mut RngStream, max_delta: u64) {
    let len = data.len();
    debug_assert!(len > 0);
    let fitting = [1usize, 2, 4, 8].iter().take_while(|&&w| w <= len).count();
    let width = [1usize, 2, 4, 8][rng.below(fitting)];
    let offset = rng.below(len - width + 1);
    let op = [IntOp::Add, IntOp::Sub, IntOp::Negate][rng.below(3)];
    let delta = 1 + rng.below(max_delta.max(1) as usize) as u64;
    apply_binary_int(data, offset, width, op, delta);
}

/// Returns false when the input holds no ASCII digit.
///
/// Scans forward from a random start (wrapping once) for the first digit,
/// extends it to the maximal run, applies add/sub/mul by `k` in `[1, 10]` or
/// replaces the value, and rewrites exactly the run's digits (least
/// significant digits kept, short values zero-filled) so the length holds.
fn change_ascii_integer(data: &mut [u8], rng: &mut RngStream) -> bool {
    let len = data.len();
    let from = rng.below(len);
    let Some(first) = (from..len)
        .chain(0..from)
        .find(|&i| data[i].is_ascii_digit())
    else {
        return false;
    };
    let mut b = first;
    while b > 0 && data[b - 1].is_ascii_digit() {
        b -= 1;
    }
    let mut e = first;
    while e < len && data[e].is_ascii_digit() {
        e += 1;
    }
    let value = data[b..e]
        .iter()
        .fold(0u64, |v, d| v.wrapping_mul(10).wrapping_add((d - b'0') as u64));
    let k = 1 + rng.below(10) as u64;
    let value = match rng.below(4) {
        0 => value.wrapping_add(k),
        1 => value.saturating_sub(k),
        2 => value.wrapping_mul(k),
        _ => rng.next_u64(),
    };
    let mut v = value;
    for pos in (b..e).rev() {
        data[pos] = b'0' + (v % 10) as u8;
        v /= 10;
    }
    true
}

/// Positional splice of `a` and `b`.
///
/// A shared cursor walks `[0, max(len a, len b))` in chunks of random size;
/// each chunk is copied from alternating parents (first parent chosen at
/// random), and a parent shorter than the cursor contributes nothing. The
/// output therefore never outgrows the longer parent. Returns the bytes and
/// the longest contiguous slice taken from `b`.
pub fn cross_over(a: &[u8], b: &[u8], rng: &mut RngStream) -> (Vec<u8>, Option<Vec<u8>>) {
    let span = a.len().max(b.len());
    let mut out = Vec::with_capacity(span);
    let mut from_b = rng.below(2) == 1;
    let mut best: &[u8] = &[];
    let mut pos = 0;
    let max_chunk = (span / 2).max(1);
    while pos < span {
        let chunk = rng.range_inclusive(1, max_chunk);
        let src = if from_b { b } else { a };
        let lo = pos.min(src.len());
        let hi = (pos + chunk).min(src.len());
        let slice = &src[lo..hi];
        if from_b && slice.len() > best.len() {
            best = slice;
        }
        out.extend_from_slice(slice);
        pos += chunk;
        from_b = !from_b;
    }
    let word = (!best.is_empty()).then(|| best.to_vec());
    (out, word)
}

/// Overwrite `data` at a random offset with `word`, growing the input when
/// the word overhangs the end (capped at `max_len`).
fn overwrite_word(data: &mut Vec<u8>, word: &[u8], rng: &mut RngStream, max_len: usize) {
    let off = rng.below(data.len());
    let end = (off + word.len()).min(max_len);
    if end > data.len() {
        data.resize(end, 0);
    }
    data[off..end].copy_from_slice(&word[..end - off]);
}
