//! Max-priority queue over `(node, action)` expansion candidates.
//!
//! Priorities are snapshots taken at push time (`node.C + node.Q[action]`)
//! and entries are never re-keyed. Efficiently popping a *random* entry from
//! a heap is awkward, so consumed entries are only tagged as used (lazy
//! deletion); a garbage-collection cycle rebuilds the heap without the
//! tagged entries once the dead fraction crosses a threshold.
//!
//! Random pops are served from a dense side list of live entries, giving
//! O(1) uniform sampling with swap-remove on use.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use thiserror::Error;

use crate::tree::NodeId;

/// Dead/total ratio above which the heap is rebuilt without tombstones.
pub const DEFAULT_GC_RATIO: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    /// Both pops fail once every entry has been consumed.
    #[error("pop from an empty queue (no live entries)")]
    Empty,
}

/// One stored candidate. `slot` indices are allocated in push order, so the
/// slot doubles as the insertion sequence number used for tie-breaking.
#[derive(Debug, Clone)]
struct Entry {
    node: NodeId,
    action: usize,
    priority: f64,
    used: bool,
    /// Position in the dense `live` list while the entry is live.
    live_pos: usize,
}

/// Heap ordering key: higher priority first, earliest insertion on ties.
#[derive(Debug, Clone, Copy)]
struct HeapKey {
    priority: f64,
    slot: usize,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.slot == other.slot
    }
}
impl Eq for HeapKey {}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            // smaller slot = earlier insertion = greater key
            .then_with(|| other.slot.cmp(&self.slot))
    }
}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Max-priority queue with lazy deletion and uniform random pop.
#[derive(Debug, Clone, Default)]
pub struct LazyHeap {
    entries: Vec<Entry>,
    heap: BinaryHeap<HeapKey>,
    /// Slots of live entries; order evolves by push-append / swap-remove.
    live: Vec<usize>,
    /// Used entries whose keys still sit inside `heap`.
    dead_in_heap: usize,
    gc_ratio: f64,
}

impl LazyHeap {
    pub fn new() -> Self {
        Self::with_gc_ratio(DEFAULT_GC_RATIO)
    }

    pub fn with_gc_ratio(gc_ratio: f64) -> Self {
        assert!(gc_ratio > 0.0, "gc ratio must be positive");
        Self {
            entries: Vec::new(),
            heap: BinaryHeap::new(),
            live: Vec::new(),
            dead_in_heap: 0,
            gc_ratio,
        }
    }

    /// Number of live (poppable) entries. Tombstones are not counted.
    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// Used entries still occupying heap storage.
    pub fn dead_count(&self) -> usize {
        self.dead_in_heap
    }

    /// Raw heap storage size (live + tombstones), for diagnostics.
    pub fn storage_len(&self) -> usize {
        self.heap.len()
    }

    pub fn push(&mut self, node: NodeId, action: usize, priority: f64) {
        let slot = self.entries.len();
        self.entries.push(Entry {
            node,
            action,
            priority,
            used: false,
            live_pos: self.live.len(),
        });
        self.live.push(slot);
        self.heap.push(HeapKey { priority, slot });
    }

    /// Pops a live entry of maximal priority, tagging it used. Ties are
    /// broken by insertion order (earliest wins).
    pub fn pop_max(&mut self) -> Result<(usize, NodeId), QueueError> {
        if self.live.is_empty() {
            return Err(QueueError::Empty);
        }
        loop {
            let key = self
                .heap
                .pop()
                .expect("live entries imply non-empty heap storage");
            if self.entries[key.slot].used {
                // Stale tombstone surfacing at the top: drop and retry.
                self.dead_in_heap -= 1;
                continue;
            }
            let out = self.consume(key.slot);
            self.maybe_gc();
            return Ok(out);
        }
    }

    /// Pops a uniformly random live entry, tagging it used. Its key stays in
    /// the heap as a tombstone until garbage collection.
    pub fn pop_rand<R: Rng>(&mut self, rng: &mut R) -> Result<(usize, NodeId), QueueError> {
        if self.live.is_empty() {
            return Err(QueueError::Empty);
        }
        let pos = rng.gen_range(0..self.live.len());
        let slot = self.live[pos];
        let out = self.consume(slot);
        self.dead_in_heap += 1;
        self.maybe_gc();
        Ok(out)
    }

    /// Rebuilds heap storage from the live set. Pop order afterwards is
    /// identical to an execution that never collected: keys carry a total
    /// order (priority, then insertion sequence), so heap layout is
    /// unobservable.
    pub fn gc(&mut self) {
        if self.dead_in_heap == 0 {
            return;
        }
        self.heap = self
            .live
            .iter()
            .map(|&slot| HeapKey {
                priority: self.entries[slot].priority,
                slot,
            })
            .collect();
        self.dead_in_heap = 0;
    }

    fn consume(&mut self, slot: usize) -> (usize, NodeId) {
        let pos = self.entries[slot].live_pos;
        self.entries[slot].used = true;
        self.live.swap_remove(pos);
        if pos < self.live.len() {
            let moved = self.live[pos];
            self.entries[moved].live_pos = pos;
        }
        (self.entries[slot].action, self.entries[slot].node)
    }

    fn maybe_gc(&mut self) {
        let total = self.live.len() + self.dead_in_heap;
        if total > 0 && self.dead_in_heap as f64 / total as f64 > self.gc_ratio {
            self.gc();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nid(i: usize) -> NodeId {
        NodeId::from_index(i)
    }

    #[test]
    fn push_pop_max_returns_highest_priority() {
        let mut q = LazyHeap::new();
        q.push(nid(0), 0, 1.0);
        q.push(nid(1), 1, 3.0);
        q.push(nid(2), 2, 2.0);
        assert_eq!(q.len(), 3);
        assert_eq!(q.pop_max().unwrap(), (1, nid(1)));
        assert_eq!(q.pop_max().unwrap(), (2, nid(2)));
        assert_eq!(q.pop_max().unwrap(), (0, nid(0)));
        assert_eq!(q.pop_max(), Err(QueueError::Empty));
    }

    #[test]
    fn priority_is_c_plus_q() {
        // push(n with C=2.0, a=3, Q_a=0.5) stores priority 2.5
        let mut q = LazyHeap::new();
        q.push(nid(7), 3, 2.0 + 0.5);
        q.push(nid(8), 0, 2.4);
        assert_eq!(q.pop_max().unwrap(), (3, nid(7)));
    }

    #[test]
    fn equal_priority_pops_in_insertion_order() {
        let mut q = LazyHeap::new();
        q.push(nid(0), 0, 2.0);
        q.push(nid(1), 1, 2.0);
        assert_eq!(q.pop_max().unwrap(), (0, nid(0)));
        assert_eq!(q.pop_max().unwrap(), (1, nid(1)));
    }

    #[test]
    fn repush_after_pop_is_an_independent_entry() {
        let mut q = LazyHeap::new();
        q.push(nid(0), 4, 1.5);
        assert_eq!(q.pop_max().unwrap(), (4, nid(0)));
        q.push(nid(0), 4, 1.5);
        assert_eq!(q.len(), 1);
        assert_eq!(q.pop_max().unwrap(), (4, nid(0)));
    }

    #[test]
    fn live_count_tracks_pushes() {
        let mut q = LazyHeap::new();
        for i in 0..10 {
            q.push(nid(i), 0, i as f64);
        }
        assert_eq!(q.len(), 10);
    }

    #[test]
    fn pop_rand_single_entry_and_exhaustion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = LazyHeap::new();
        q.push(nid(3), 2, 0.7);
        assert_eq!(q.pop_rand(&mut rng).unwrap(), (2, nid(3)));
        // only used entries remain: lazy deletion must not resurrect
        assert_eq!(q.pop_rand(&mut rng), Err(QueueError::Empty));
        assert_eq!(q.pop_max(), Err(QueueError::Empty));
    }

    #[test]
    fn gc_drops_tombstones_and_preserves_live_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // gc_ratio high enough that it never auto-fires here
        let mut q = LazyHeap::with_gc_ratio(0.99);
        for i in 0..11 {
            q.push(nid(i), 0, i as f64);
        }
        for _ in 0..6 {
            q.pop_rand(&mut rng).unwrap();
        }
        assert_eq!(q.len(), 5);
        assert_eq!(q.dead_count(), 6);
        assert_eq!(q.storage_len(), 11);
        q.gc();
        assert_eq!(q.dead_count(), 0);
        assert_eq!(q.storage_len(), 5);
        // live set intact and still pops in priority order
        let mut popped = Vec::new();
        while let Ok((_, n)) = q.pop_max() {
            popped.push(n.index());
        }
        let mut sorted = popped.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(popped.len(), 5);
        assert_eq!(popped, sorted, "pop order must remain descending priority");
    }

    #[test]
    fn gc_on_all_live_queue_is_a_noop() {
        let mut q = LazyHeap::new();
        q.push(nid(0), 0, 1.0);
        q.push(nid(1), 1, 2.0);
        q.gc();
        assert_eq!(q.storage_len(), 2);
        assert_eq!(q.pop_max().unwrap(), (1, nid(1)));
    }

    #[test]
    fn auto_gc_fires_past_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = LazyHeap::with_gc_ratio(0.5);
        for i in 0..8 {
            q.push(nid(i), 0, i as f64);
        }
        for _ in 0..5 {
            q.pop_rand(&mut rng).unwrap();
        }
        // 5 dead / 8 total would be 0.625 > 0.5: a cycle must have run
        assert_eq!(q.dead_count(), 0);
        assert_eq!(q.storage_len(), q.len());
    }

    #[test]
    fn pop_rand_is_roughly_uniform() {
        // 3 live entries, 30k draws from fresh queues: each within 3 sigma
        // of n/3 (sigma = sqrt(n * p * (1-p)) ~ 81.6).
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            let mut q = LazyHeap::new();
            for i in 0..3 {
                q.push(nid(i), i, 1.0);
            }
            let (_, n) = q.pop_rand(&mut rng).unwrap();
            counts[n.index()] += 1;
        }
        let expected = 10_000.0;
        let sigma = (30_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "count {c} outside 3 sigma of {expected}"
            );
        }
    }
}
