//! Edge coverage bookkeeping and the coverage-delta reward.

use crate::mutators::CmpPair;
use crate::Error;

pub type EdgeId = u32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Verdict {
    #[default]
    Ok,
    Crash,
}

/// What one execution of a target reported.
///
/// `edges_hit` holds distinct ids; targets are responsible for not
/// reporting an edge twice in one execution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionFeedback {
    pub edges_hit: Vec<EdgeId>,
    pub torc_events: Vec<CmpPair>,
    pub verdict: Verdict,
}

impl ExecutionFeedback {
    pub fn clear(&mut self) {
        self.edges_hit.clear();
        self.torc_events.clear();
        self.verdict = Verdict::Ok;
    }

    pub fn hit(&mut self, edge: EdgeId) {
        self.edges_hit.push(edge);
    }
}

/// Set of unique edges seen so far, as a bitset that grows with the
/// largest edge id. Only grows until [`CoverageMap::clear`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageMap {
    words: Vec<u64>,
    count: u64,
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn contains(&self, edge: EdgeId) -> bool {
        let (w, b) = (edge as usize / 64, edge % 64);
        self.words.get(w).is_some_and(|x| x >> b & 1 == 1)
    }

    /// Covered edges in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &x)| {
            (0..64u32)
                .filter(move |b| x >> b & 1 == 1)
                .map(move |b| w as EdgeId * 64 + b)
        })
    }

    /// Union the feedback into the map and return how many edges were new.
    pub fn absorb(&mut self, fb: &ExecutionFeedback) -> u64 {
        let mut new = 0;
        for &e in &fb.edges_hit {
            let (w, b) = (e as usize / 64, e % 64);
            if w >= self.words.len() {
                self.words.resize(w + 1, 0);
            }
            let bit = 1u64 << b;
            if self.words[w] & bit == 0 {
                self.words[w] |= bit;
                new += 1;
            }
        }
        self.count += new;
        new
    }

    pub fn clear(&mut self) {
        self.words.clear();
        self.count = 0;
    }
}

/// Coverage gained between two observations.
pub fn reward(cov_prev: u64, cov_now: u64) -> Result<u64, Error> {
    cov_now.checked_sub(cov_prev).ok_or(Error::CoverageRegressed {
        prev: cov_prev,
        now: cov_now,
    })
}
