//! Proportional prioritized replay backed by a sum tree.

use std::sync::Arc;

use super::network::RecurrentState;
use crate::env::Observation;
use crate::mutators::MutatorAction;
use crate::rng::RngStream;

pub const DEFAULT_REPLAY_CAPACITY: usize = 50_000;

/// Binary sum tree over a fixed number of leaves.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut n = self.leaves + i;
        self.nodes[n] = value;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, for `mass` in
    /// `[0, total)`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] <= 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arc<Observation>,
    /// Recurrent state the network had before seeing `obs`.
    pub state: Arc<RecurrentState>,
    pub action: MutatorAction,
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    /// Recurrent state after seeing `obs`, i.e. before `next_obs`.
    pub next_state: Arc<RecurrentState>,
    pub done: bool,
}

/// A sampled minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Importance weights, normalised so the largest is 1.
    pub weights: Vec<f64>,
}

/// Prioritized replay memory: sampling probability of item `i` is
/// `p_i^alpha / sum_j p_j^alpha`; the oldest item is evicted when full.
#[derive(Clone, Debug)]
pub struct PrioritizedReplay<T = Transition> {
    capacity: usize,
    alpha: f64,
    items: Vec<T>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

impl<T> PrioritizedReplay<T> {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            alpha,
            items: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// Insert at the current maximal priority. Returns the slot used.
    pub fn push(&mut self, item: T) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    /// Set the raw priority of a slot (must be > 0).
    pub fn set_priority(&mut self, i: usize, priority: f64) {
        debug_assert!(priority > 0.0 && priority.is_finite());
        self.max_priority = self.max_priority.max(priority);
        self.tree.set(i, priority.powf(self.alpha));
    }

    /// Sampling probability of slot `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// One index drawn proportionally to shaped priority.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let total = self.tree.total();
        let i = self.tree.find(rng.next_f64() * total);
        i.min(self.items.len() - 1)
    }

    /// Stratified proportional sample of `n` indices with importance
    /// weights `(N * P(i))^-beta / max`.
    pub fn sample(&self, n: usize, beta: f64, rng: &mut RngStream) -> Batch {
        assert!(!self.items.is_empty());
        let total = self.tree.total();
        let seg = total / n as f64;
        let len = self.items.len() as f64;
        let mut indices = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let mass = seg * (k as f64 + rng.next_f64());
            let i = self.tree.find(mass.min(total * (1.0 - 1e-12))).min(self.items.len() - 1);
            let p = self.tree.get(i) / total;
            indices.push(i);
            weights.push((len * p).powf(-beta));
        }
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Batch { indices, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_tree_finds_ranges() {
        let mut t = SumTree::new(5);
        for (i, v) in [1.0, 2.0, 3.0, 0.0, 4.0].iter().enumerate() {
            t.set(i, *v);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.99), 0);
        assert_eq!(t.find(1.0), 1);
        assert_eq!(t.find(5.5), 2);
        assert_eq!(t.find(6.0), 4);
        assert_eq!(t.find(9.99), 4);
    }

    #[test]
    fn eviction_is_oldest_first() {
        let mut r = PrioritizedReplay::new(3, 0.6);
        for i in 0..5 {
            r.push(i);
        }
        assert_eq!(r.len(), 3);
        let mut kept: Vec<_> = (0..3).map(|i| *r.get(i)).collect();
        kept.sort();
        assert_eq!(kept, vec![2, 3, 4]);
    }

    #[test]
    fn new_items_get_max_priority() {
        let mut r = PrioritizedReplay::new(4, 1.0);
        r.push('a');
        r.set_priority(0, 5.0);
        r.push('b');
        assert!((r.probability(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn importance_weights_are_normalised() {
        let mut r = PrioritizedReplay::new(4, 1.0);
        for i in 0..4 {
            r.push(i);
            r.set_priority(i, (i + 1) as f64);
        }
        let b = r.sample(16, 0.5, &mut RngStream::new(3));
        assert!(b.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        assert!(b.weights.contains(&1.0));
        // Rarer items carry larger weights.
        for (i, w) in b.indices.iter().zip(&b.weights) {
            for (j, v) in b.indices.iter().zip(&b.weights) {
                if i < j {
                    assert!(w >= v);
                }
            }
        }
    }
}
