//! Scaling benchmarks.
//!
//! The search never walks the tree to pick its next expansion — candidates
//! come off a heap — so building a tree of n nodes costs O(n log n) even
//! when the tree is one long chain. The rollout-based reference walker here
//! descends from the root before every expansion, the way rollout searches
//! do, and goes quadratic on exactly that workload. `fit_exponent` turns
//! measured build times into a log-log slope so both claims are checkable.

use std::time::Instant;

use crate::env::toy::ChainEnv;
use crate::env::Environment;
use crate::heuristic::{ConstantHeuristic, Heuristic};
use crate::queue::LazyHeap;
use crate::trainer::generate_tree;
use crate::tree::{NodeId, Tree};

/// One measured point: building/processing `size` items took `millis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub size: usize,
    pub millis: f64,
}

/// Least-squares slope of `ln(time)` against `ln(size)`.
pub fn fit_exponent(points: &[BenchPoint]) -> f64 {
    assert!(points.len() >= 2, "need at least two points to fit");
    let xs: Vec<f64> = points.iter().map(|p| (p.size as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.millis.max(1e-6).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        f();
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    best
}

/// Times heap-driven tree builds with a constant-cost stub heuristic on the
/// chain workload (accumulated reward dominates, so trees grow as chains).
pub fn time_tree_builds(sizes: &[usize], reps: usize) -> Vec<BenchPoint> {
    let env = ChainEnv::default();
    let heuristic = ConstantHeuristic(0.5);
    sizes
        .iter()
        .map(|&size| BenchPoint {
            size,
            millis: best_of(reps, || {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
                let tree =
                    generate_tree(&env, &heuristic, 0, 0.0, size, &mut rng).expect("toy env");
                assert_eq!(tree.len(), size);
                std::hint::black_box(&tree);
            }),
        })
        .collect()
}

/// Times the rollout-based reference walker on the same chain workload.
pub fn time_rollout_builds(sizes: &[usize], reps: usize) -> Vec<BenchPoint> {
    let env = ChainEnv::default();
    let heuristic = ConstantHeuristic(0.5);
    sizes
        .iter()
        .map(|&size| BenchPoint {
            size,
            millis: best_of(reps, || {
                let tree = rollout_reference_build(&env, &heuristic, 0, size).expect("toy env");
                assert_eq!(tree.len(), size);
                std::hint::black_box(&tree);
            }),
        })
        .collect()
}

/// Times `size` pushes followed by `size` pop_max calls on the queue.
pub fn time_queue_ops(sizes: &[usize], reps: usize) -> Vec<BenchPoint> {
    sizes
        .iter()
        .map(|&size| BenchPoint {
            size,
            millis: best_of(reps, || {
                let mut queue = LazyHeap::new();
                let mut state = 0x2545F4914F6CDD1Du64;
                for i in 0..size {
                    // cheap xorshift priorities
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    let priority = (state >> 11) as f64 / (1u64 << 53) as f64;
                    queue.push(NodeId::from_index(i), 0, priority);
                }
                for _ in 0..size {
                    queue.pop_max().expect("pushed exactly size entries");
                }
                std::hint::black_box(&queue);
            }),
        })
        .collect()
}

/// Deliberately rollout-based tree construction: before every expansion it
/// walks from the root to the frontier by following the best child, the way
/// rollout searches pick their next node. O(depth) per expansion, so chain
/// workloads cost O(n²) overall.
pub fn rollout_reference_build<E: Environment, H: Heuristic<E>>(
    env: &E,
    heuristic: &H,
    root_state: E::State,
    max_nodes: usize,
) -> Result<Tree<E::State>, crate::trainer::TrainError> {
    let actions = env.action_count();
    let mut tree = Tree::new(root_state, actions, max_nodes)?;
    let root = tree.root();
    let q = heuristic.evaluate(env, tree.node(root).state());
    tree.set_q(root, q);

    while tree.len() < max_nodes {
        // walk from the root toward the most promising expansion candidate
        let mut cursor = tree.root();
        let expand_at = loop {
            let node = tree.node(cursor);
            let best_untried = (0..actions)
                .filter(|&a| node.child(a).is_none())
                .map(|a| (a, node.c() + node.q()[a]))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let best_child = node
                .children()
                .iter()
                .map(|&(_, child)| child)
                .filter(|&child| !tree.node(child).done())
                .max_by(|&a, &b| {
                    let sa = tree.node(a).c() + tree.node(a).max_q();
                    let sb = tree.node(b).c() + tree.node(b).max_q();
                    sa.total_cmp(&sb)
                });
            match (best_untried, best_child) {
                (Some((action, untried_score)), Some(child)) => {
                    let child_score = tree.node(child).c() + tree.node(child).max_q();
                    if child_score >= untried_score {
                        cursor = child;
                    } else {
                        break Some(action);
                    }
                }
                (Some((action, _)), None) => break Some(action),
                (None, Some(child)) => cursor = child,
                (None, None) => break None, // dead end: every path ended
            }
        };
        let Some(action) = expand_at else {
            break;
        };
        let transition = env.simulate(tree.node(cursor).state(), action)?;
        let done = transition.done;
        let child = tree.append_child(cursor, action, transition)?;
        if !done {
            let q = heuristic.evaluate(env, tree.node(child).state());
            tree.set_q(child, q);
        }
    }
    Ok(tree)
}

use rand::SeedableRng;
