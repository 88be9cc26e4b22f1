//! Append-only search tree with subtree-weighted value backpropagation.
//!
//! Nodes are stored in a flat arena; children are always appended after
//! their parent, so one reverse sweep over the arena visits every child
//! before its parent. Backpropagation exploits this: a single reverse pass
//! both finalizes subtree sizes and pushes action values from the leaves to
//! the root.

use thiserror::Error;

use crate::env::Transition;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    /// A tree must allow at least two nodes, otherwise it is just a state.
    #[error("tree budget must allow at least 2 nodes, got {0}")]
    BudgetTooSmall(usize),
    /// The arena already holds `max_nodes` expansions beyond the root.
    #[error("tree budget exhausted ({0} expansions)")]
    BudgetExhausted(usize),
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("parent already has a child for action {0}")]
    DuplicateAction(usize),
    #[error("cannot expand a terminal node")]
    TerminalExpansion,
    /// The backpropagation rule treats episode end as the minimal value 0,
    /// which is only sound when every reward is strictly positive.
    #[error("transition reward must be strictly positive, got {0}")]
    NonPositiveReward(f64),
}

/// Index of a node in the tree arena. The root is always index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        NodeId(index)
    }
}

/// One tree vertex: an environment snapshot plus the bookkeeping needed for
/// backpropagation.
#[derive(Debug, Clone)]
pub struct Node<S> {
    state: S,
    /// Non-discounted accumulated reward along the root path.
    c: f64,
    /// Reward earned by the action that created this node (0 for the root).
    r: f64,
    done: bool,
    /// Per-action value estimates. Filled with the heuristic at creation;
    /// entries for explored actions are overwritten by backpropagation.
    q: Vec<f64>,
    parent: Option<NodeId>,
    /// `(action, child)` pairs, at most one per action index.
    children: Vec<(usize, NodeId)>,
    /// Nodes in the subtree rooted here, this node included. Kept lazily:
    /// valid after [`Tree::backpropagate`] or [`Tree::refresh_subtree_sizes`].
    subtree_size: usize,
    depth: usize,
}

impl<S> Node<S> {
    pub fn state(&self) -> &S {
        &self.state
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn done(&self) -> bool {
        self.done
    }
    pub fn q(&self) -> &[f64] {
        &self.q
    }
    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }
    pub fn children(&self) -> &[(usize, NodeId)] {
        &self.children
    }
    pub fn subtree_size(&self) -> usize {
        self.subtree_size
    }
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn child(&self, action: usize) -> Option<NodeId> {
        self.children
            .iter()
            .find(|(a, _)| *a == action)
            .map(|(_, id)| *id)
    }

    pub fn max_q(&self) -> f64 {
        self.q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Append-only search tree over value-semantic environment snapshots.
///
/// `max_nodes` budgets *expansions*: the arena may hold up to
/// `max_nodes + 1` nodes including the root, so a fully sequential tree of
/// `max_nodes` expansions reaches efficiency exactly 1.0.
#[derive(Debug, Clone)]
pub struct Tree<S> {
    nodes: Vec<Node<S>>,
    max_nodes: usize,
    action_count: usize,
    backpropagated: bool,
}

impl<S> Tree<S> {
    /// Creates a tree holding only the root node, with `C = R = 0`, a zero
    /// Q vector and `done = false`.
    pub fn new(initial_state: S, action_count: usize, max_nodes: usize) -> Result<Self, TreeError> {
        if max_nodes < 2 {
            return Err(TreeError::BudgetTooSmall(max_nodes));
        }
        assert!(action_count > 0, "environment must expose actions");
        let root = Node {
            state: initial_state,
            c: 0.0,
            r: 0.0,
            done: false,
            q: vec![0.0; action_count],
            parent: None,
            children: Vec::new(),
            subtree_size: 1,
            depth: 0,
        };
        Ok(Self {
            nodes: vec![root],
            max_nodes,
            action_count,
            backpropagated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a tree always contains its root
    }

    pub fn max_nodes(&self) -> usize {
        self.max_nodes
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn last(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    pub fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Node<S>)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    /// Whether [`Tree::backpropagate`] has run since the last mutation.
    pub fn backpropagated(&self) -> bool {
        self.backpropagated
    }

    /// The `(parent, action)` edge that created `id`, or `None` for the root.
    pub fn incoming_edge(&self, id: NodeId) -> Option<(NodeId, usize)> {
        let parent = self.nodes[id.0].parent?;
        let action = self.nodes[parent.0]
            .children
            .iter()
            .find(|(_, c)| *c == id)
            .map(|(a, _)| *a)
            .expect("parent must list the child");
        Some((parent, action))
    }

    /// First action on the root → `id` path, or `None` when `id` is the root.
    pub fn first_action_to(&self, id: NodeId) -> Option<usize> {
        let mut cur = id;
        let mut action = None;
        while let Some((parent, a)) = self.incoming_edge(cur) {
            action = Some(a);
            cur = parent;
        }
        action
    }

    /// Appends a child reached from `parent` by `action`. The child starts
    /// with `C = parent.C + reward` (no discounting), a zero Q vector, and
    /// no children.
    pub fn append_child(
        &mut self,
        parent: NodeId,
        action: usize,
        transition: Transition<S>,
    ) -> Result<NodeId, TreeError> {
        if self.nodes.len() > self.max_nodes {
            return Err(TreeError::BudgetExhausted(self.max_nodes));
        }
        if action >= self.action_count {
            return Err(TreeError::InvalidAction {
                action,
                count: self.action_count,
            });
        }
        let p = &self.nodes[parent.0];
        if p.done {
            return Err(TreeError::TerminalExpansion);
        }
        if p.child(action).is_some() {
            return Err(TreeError::DuplicateAction(action));
        }
        if transition.reward <= 0.0 || transition.reward.is_nan() {
            return Err(TreeError::NonPositiveReward(transition.reward));
        }

        let id = NodeId(self.nodes.len());
        let node = Node {
            state: transition.state,
            c: p.c + transition.reward,
            r: transition.reward,
            done: transition.done,
            q: vec![0.0; self.action_count],
            parent: Some(parent),
            children: Vec::new(),
            subtree_size: 1,
            depth: p.depth + 1,
        };
        self.nodes.push(node);
        self.nodes[parent.0].children.push((action, id));
        self.backpropagated = false;
        Ok(id)
    }

    /// Overwrites a node's Q vector (the heuristic evaluation at creation).
    pub fn set_q(&mut self, id: NodeId, q: Vec<f64>) {
        assert_eq!(q.len(), self.action_count, "Q vector length mismatch");
        self.nodes[id.0].q = q;
        self.backpropagated = false;
    }

    /// Recomputes every node's `subtree_size` in one reverse sweep.
    ///
    /// Sizes are not maintained on append: an exact per-append update walks
    /// the whole ancestor chain, which is quadratic on deep trees and would
    /// destroy the near-linear build cost the search is designed for. The
    /// only consumer is backpropagation, which refreshes them itself.
    pub fn refresh_subtree_sizes(&mut self) {
        for node in &mut self.nodes {
            node.subtree_size = 1;
        }
        for i in (1..self.nodes.len()).rev() {
            let parent = self.nodes[i].parent.expect("non-root has a parent").0;
            self.nodes[parent].subtree_size += self.nodes[i].subtree_size;
        }
    }

    /// Backpropagates action values from the leaves to the root.
    ///
    /// Iterating the arena in reverse guarantees every child is visited
    /// before its parent. For each non-root node `x` reached from `s` by
    /// action `a`:
    ///
    /// ```text
    /// Q[s][a] = x.R + gamma * V(x)
    /// ```
    ///
    /// where `V(x)` is the subtree-size-weighted mean of `x`'s action
    /// values: explored actions weigh in with the size of their subtree,
    /// unexplored actions of a partially explored node contribute nothing,
    /// and a childless node averages its heuristic values uniformly.
    /// Terminal nodes have `V(x) = 0` — ending an episode is the minimal
    /// outcome, which is what makes strictly positive rewards mandatory.
    pub fn backpropagate(&mut self, gamma: f64) {
        assert!(
            gamma > 0.0 && gamma <= 1.0,
            "gamma must lie in (0, 1], got {gamma}"
        );
        for node in &mut self.nodes {
            node.subtree_size = 1;
        }
        for i in (1..self.nodes.len()).rev() {
            let value = self.node_value(NodeId(i));
            let (parent, r, size) = {
                let n = &self.nodes[i];
                (n.parent.expect("non-root has a parent").0, n.r, n.subtree_size)
            };
            let action = self.nodes[parent]
                .children
                .iter()
                .find(|(_, c)| c.0 == i)
                .map(|(a, _)| *a)
                .expect("parent must list the child");
            self.nodes[parent].q[action] = r + gamma * value;
            self.nodes[parent].subtree_size += size;
        }
        self.backpropagated = true;
    }

    /// The weighted mean value of a node, assuming its children (all at
    /// larger arena indices) already carry final Q entries and sizes.
    fn node_value(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id.0];
        if node.done {
            return 0.0;
        }
        if node.children.is_empty() {
            // completely unexplored: w = 1 for every action
            return node.q.iter().sum::<f64>() / node.q.len() as f64;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(action, child) in &node.children {
            let w = self.nodes[child.0].subtree_size as f64;
            num += node.q[action] * w;
            den += w;
        }
        num / den
    }

    /// The node maximizing `C + max_a Q[a]`; ties go to the lowest index.
    pub fn best_node(&self) -> NodeId {
        assert!(
            self.backpropagated,
            "best_node/rank require a backpropagated tree"
        );
        let mut best = NodeId::ROOT;
        let mut best_score = f64::NEG_INFINITY;
        for (id, node) in self.iter() {
            let score = node.c + node.max_q();
            if score > best_score {
                best_score = score;
                best = id;
            }
        }
        best
    }

    /// Score of the best node: accumulated reward plus its best action value.
    pub fn best_path_reward(&self) -> f64 {
        let n = self.node(self.best_node());
        n.c + n.max_q()
    }

    /// Depth of the best node (the root has depth 0).
    pub fn rank(&self) -> usize {
        self.node(self.best_node()).depth
    }

    /// `rank / max_nodes`; exactly 1.0 for a fully sequential tree that
    /// spent its whole expansion budget on one chain.
    pub fn efficiency(&self) -> f64 {
        self.rank() as f64 / self.max_nodes as f64
    }
}
