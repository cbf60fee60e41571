//! Fixed-capacity circular buffer of mutator actions shared between the
//! agent (sole writer) and the fuzzing loop (sole reader).
//!
//! Slots are single-byte atomics, so a read can never observe a torn
//! value: it sees either the action that was there or the one that replaced
//! it. Neither side ever waits for the other. The reader cycles over the
//! slots forever, which repeats old actions until the agent overwrites them.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use crate::mutators::MutatorAction;

#[derive(Debug)]
pub struct ActionRing {
    slots: Box<[AtomicU8]>,
}

impl ActionRing {
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Current slot contents, for inspection.
    pub fn slots(&self) -> Vec<MutatorAction> {
        self.slots
            .iter()
            .map(|s| decode(s.load(Ordering::Acquire)))
            .collect()
    }
}

#[inline]
fn decode(v: u8) -> MutatorAction {
    // Only valid indices are ever stored.
    MutatorAction::from_index(v as usize).unwrap_or(MutatorAction::ChangeByte)
}

/// Create a ring pre-filled with `initial` (which fixes the capacity).
pub fn action_ring(initial: &[MutatorAction]) -> (RingWriter, RingReader) {
    assert!(!initial.is_empty(), "ring capacity must be positive");
    let ring = Arc::new(ActionRing {
        slots: initial.iter().map(|a| AtomicU8::new(*a as u8)).collect(),
    });
    (
        RingWriter {
            ring: ring.clone(),
            cursor: 0,
        },
        RingReader { ring, cursor: 0 },
    )
}

/// Write side. Not `Clone`: there is exactly one producer.
#[derive(Debug)]
pub struct RingWriter {
    ring: Arc<ActionRing>,
    cursor: usize,
}

impl RingWriter {
    /// Overwrite the oldest slot.
    #[inline]
    pub fn write(&mut self, action: MutatorAction) {
        self.ring.slots[self.cursor].store(action as u8, Ordering::Release);
        self.cursor = (self.cursor + 1) % self.ring.capacity();
    }

    pub fn ring(&self) -> &ActionRing {
        &self.ring
    }
}

/// Read side. Owned by the fuzzing loop.
#[derive(Debug)]
pub struct RingReader {
    ring: Arc<ActionRing>,
    cursor: usize,
}

impl RingReader {
    /// Next action in cyclic order. Never blocks.
    #[inline]
    pub fn next_action(&mut self) -> MutatorAction {
        let v = self.ring.slots[self.cursor].load(Ordering::Acquire);
        self.cursor += 1;
        if self.cursor == self.ring.capacity() {
            self.cursor = 0;
        }
        decode(v)
    }

    pub fn ring(&self) -> &ActionRing {
        &self.ring
    }
}
