//! Single-producer/single-consumer latest-value cell for engine state.
//!
//! A classic triple buffer: the writer fills its back buffer and swaps it
//! into the middle slot; the reader swaps the middle slot out when it holds
//! something fresh. Both operations are one atomic swap, so the engine never
//! waits on the agent and the agent always sees a complete snapshot.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// What the agent gets to see of the running engine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateSnapshot {
    /// Most recently generated test input.
    pub input: Vec<u8>,
    pub cov: u64,
    pub step: u64,
    pub wallclock: Duration,
    /// Publication counter, starting at 1 for the first publication.
    pub generation: u64,
    /// The engine's budget is exhausted; no further snapshots follow.
    pub done: bool,
}

const INDEX: u8 = 0b011;
const FRESH: u8 = 0b100;

struct Cells {
    bufs: [UnsafeCell<StateSnapshot>; 3],
    middle: AtomicU8,
    published: AtomicU64,
}

// Each buffer is owned by exactly one side at a time; ownership moves
// through the `middle` swap with acquire/release ordering.
unsafe impl Sync for Cells {}
unsafe impl Send for Cells {}

pub fn snapshot_cell() -> (SnapshotPublisher, SnapshotReader) {
    let cells = Arc::new(Cells {
        bufs: Default::default(),
        middle: AtomicU8::new(1),
        published: AtomicU64::new(0),
    });
    (
        SnapshotPublisher {
            cells: cells.clone(),
            back: 0,
            generation: 0,
        },
        SnapshotReader {
            cells,
            front: 2,
        },
    )
}

pub struct SnapshotPublisher {
    cells: Arc<Cells>,
    back: u8,
    generation: u64,
}

impl SnapshotPublisher {
    /// Fill the back buffer through `fill` and publish it.
    pub fn publish(&mut self, fill: impl FnOnce(&mut StateSnapshot)) {
        self.generation += 1;
        // SAFETY: the back buffer belongs to the writer until swapped out.
        let buf = unsafe { &mut *self.cells.bufs[self.back as usize].get() };
        fill(buf);
        buf.generation = self.generation;
        let prev = self.cells.middle.swap(self.back | FRESH, Ordering::AcqRel);
        self.back = prev & INDEX;
        self.cells.published.store(self.generation, Ordering::Release);
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

pub struct SnapshotReader {
    cells: Arc<Cells>,
    front: u8,
}

impl SnapshotReader {
    /// Generation of the most recent publication.
    pub fn published(&self) -> u64 {
        self.cells.published.load(Ordering::Acquire)
    }

    /// The newest complete snapshot (possibly stale, never torn).
    pub fn latest(&mut self) -> &StateSnapshot {
        if self.cells.middle.load(Ordering::Relaxed) & FRESH != 0 {
            let prev = self.cells.middle.swap(self.front, Ordering::AcqRel);
            self.front = prev & INDEX;
        }
        // SAFETY: the front buffer belongs to the reader until swapped back.
        unsafe { &*self.cells.bufs[self.front as usize].get() }
    }

    /// Wait until a snapshot newer than `after` has been published, then
    /// return the newest one. Returns `None` on timeout.
    pub fn wait_newer(&mut self, after: u64, timeout: Duration) -> Option<&StateSnapshot> {
        let start = Instant::now();
        let mut spins = 0u32;
        while self.published() <= after {
            if start.elapsed() > timeout {
                return None;
            }
            spins += 1;
            if spins < 64 {
                std::hint::spin_loop();
            } else if spins < 256 {
                std::thread::yield_now();
            } else {
                std::thread::sleep(Duration::from_micros(20));
            }
        }
        Some(self.latest())
    }
}
