//! Backpropagation oracle equivalence.
//!
//! The production path computes values in one reverse sweep over the node
//! arena. The oracle here evaluates the same weighted-mean recurrence by
//! direct recursion from the root, on a snapshot taken before
//! backpropagation, and never touches the arena ordering or the
//! incrementally maintained subtree sizes.

use aleph_star::env::Transition;
use aleph_star::tree::{NodeId, Tree};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random tree with positive rewards, random terminal leaves and random
/// nonnegative heuristic Q vectors.
fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize, actions: usize) -> Tree<u32> {
    let mut tree = Tree::new(0u32, actions, max_nodes).unwrap();
    let target = rng.gen_range(1..=max_nodes);
    let mut steps = 0usize;
    while tree.len() < target + 1 && steps < max_nodes * 8 {
        steps += 1;
        let parent = NodeId::from_index(rng.gen_range(0..tree.len()));
        let action = rng.gen_range(0..actions);
        if tree.node(parent).done() || tree.node(parent).child(action).is_some() {
            continue;
        }
        let reward = rng.gen_range(0.01..2.0);
        let done = rng.gen_bool(0.15);
        let child = tree
            .append_child(
                parent,
                action,
                Transition {
                    state: tree.len() as u32,
                    reward,
                    done,
                },
            )
            .unwrap();
        if !done {
            let q: Vec<f64> = (0..actions).map(|_| rng.gen_range(0.0..3.0)).collect();
            tree.set_q(child, q);
        }
    }
    let root_q: Vec<f64> = (0..actions).map(|_| rng.gen_range(0.0..3.0)).collect();
    tree.set_q(tree.root(), root_q);
    tree
}

/// Direct recursive evaluation of the weighted-mean value recurrence on the
/// pre-backprop snapshot.
struct Oracle<'a> {
    snapshot: &'a Tree<u32>,
}

impl<'a> Oracle<'a> {
    fn subtree_size(&self, id: NodeId) -> usize {
        1 + self
            .snapshot
            .node(id)
            .children()
            .iter()
            .map(|&(_, c)| self.subtree_size(c))
            .sum::<usize>()
    }

    /// Final Q entry for (node, action) after backpropagation.
    fn q(&self, id: NodeId, action: usize, gamma: f64) -> f64 {
        let node = self.snapshot.node(id);
        match node.child(action) {
            // explored: backed up from the child
            Some(child) => self.snapshot.node(child).r() + gamma * self.value(child, gamma),
            // unexplored: the heuristic entry is left in place
            None => node.q()[action],
        }
    }

    fn value(&self, id: NodeId, gamma: f64) -> f64 {
        let node = self.snapshot.node(id);
        if node.done() {
            return 0.0;
        }
        if node.children().is_empty() {
            return node.q().iter().sum::<f64>() / node.q().len() as f64;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(action, child) in node.children() {
            let w = self.subtree_size(child) as f64;
            num += self.q(id, action, gamma) * w;
            den += w;
        }
        num / den
    }
}

fn assert_backprop_matches_oracle(tree: &Tree<u32>, gamma: f64, tolerance: f64) {
    let snapshot = tree.clone();
    let mut backpropagated = tree.clone();
    backpropagated.backpropagate(gamma);
    let oracle = Oracle {
        snapshot: &snapshot,
    };
    for (id, node) in backpropagated.iter() {
        for action in 0..backpropagated.action_count() {
            let expected = oracle.q(id, action, gamma);
            let got = node.q()[action];
            assert!(
                (expected - got).abs() <= tolerance,
                "node {} action {action}: oracle {expected} vs backprop {got}",
                id.index()
            );
        }
        // incremental sizes must agree with the recursive recount
        assert_eq!(node.subtree_size(), oracle.subtree_size(id));
    }
}

#[test]
fn reverse_sweep_matches_recursive_oracle_on_1000_random_trees() {
    let start = std::time::Instant::now();
    let gammas = [0.5, 0.9, 0.98, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(20240901);
    for case in 0..1000 {
        let actions = rng.gen_range(2..6);
        let tree = random_tree(&mut rng, 64, actions);
        let gamma = gammas[case % gammas.len()];
        assert_backprop_matches_oracle(&tree, gamma, 1e-9);
    }
    assert!(
        start.elapsed().as_secs() < 10,
        "oracle sweep took {:?}",
        start.elapsed()
    );
}

#[test]
fn oracle_equivalence_on_deep_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tree = Tree::new(0u32, 3, 200).unwrap();
    let mut cur = tree.root();
    for i in 0..200 {
        cur = tree
            .append_child(
                cur,
                (i % 3) as usize,
                Transition {
                    state: i as u32,
                    reward: rng.gen_range(0.1..1.0),
                    done: false,
                },
            )
            .unwrap();
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0)).collect();
        tree.set_q(cur, q);
    }
    assert_backprop_matches_oracle(&tree, 0.98, 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Invariant: positive rewards + nonnegative heuristic values imply
    /// strictly positive backed-up entries for every explored action.
    #[test]
    fn backed_up_entries_stay_positive(seed in 0u64..10_000, gamma in 0.5f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = random_tree(&mut rng, 48, 4);
        tree.backpropagate(gamma);
        for (_, node) in tree.iter() {
            for &(action, _) in node.children() {
                prop_assert!(node.q()[action] > 0.0);
            }
        }
    }

    /// Invariant: the reverse sweep equals the recursive oracle.
    #[test]
    fn oracle_equivalence_property(seed in 0u64..10_000, gamma in 0.5f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, 48, 4);
        let snapshot = tree.clone();
        let mut backpropagated = tree;
        backpropagated.backpropagate(gamma);
        let oracle = Oracle { snapshot: &snapshot };
        for (id, node) in backpropagated.iter() {
            for action in 0..4 {
                let expected = oracle.q(id, action, gamma);
                prop_assert!((expected - node.q()[action]).abs() <= 1e-9);
            }
        }
    }
}
