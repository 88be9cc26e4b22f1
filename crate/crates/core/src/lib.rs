//! Best-first tree search over environment snapshots, guided by a trainable
//! neural heuristic.
//!
//! The toolkit is organized around a small loop: generate a search tree by
//! repeatedly expanding the most promising `(node, action)` candidate from a
//! lazy-deletion priority queue, backpropagate action values through the tree
//! with a subtree-weighted soft maximum, harvest the visited nodes into a
//! replay buffer, and fit the heuristic network to the backed-up targets.
//!
//! Crate layout:
//!
//! - [`tree`] — append-only search tree, weighted value backpropagation,
//!   rank/efficiency diagnostics
//! - [`queue`] — max-priority queue with lazy deletion, uniform random pop
//!   and threshold-triggered garbage collection
//! - [`nn`] — the heuristic network (manual forward/backward, SGD,
//!   checkpointing)
//! - [`env`] — environment contract, the pixel driving simulator, an exactly
//!   solvable gridworld, and synthetic toy environments
//! - [`heuristic`] — the action-value heuristic trait and simple
//!   implementations (constant stub, exact gridworld Q table)
//! - [`experience`] — replay buffer with age-based eviction and optional
//!   loss-prioritized sampling
//! - [`trainer`] — tree generation, the outer training loop, and the N-step
//!   DQN baseline
//! - [`policy`] — runtime action selection (greedy and small-tree planning)
//! - [`bench`] — scaling benchmarks and the rollout-based reference walker

pub mod bench;
pub mod config;
pub mod env;
pub mod experience;
pub mod heuristic;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod queue;
pub mod seeds;
pub mod trainer;
pub mod tree;

pub use env::{Environment, Sensors, Transition};
pub use heuristic::Heuristic;
pub use nn::HeuristicNet;
pub use tree::{NodeId, Tree};
