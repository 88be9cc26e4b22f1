//! Exactly solvable gridworld, used as a verification oracle.
//!
//! Deterministic N×N grid with positive per-cell entry rewards and absorbing
//! terminal cells. Bumping into a wall keeps the agent in place for the
//! keep-alive reward, so a strictly positive reward exists at every step and
//! the optimal Q table is computable by plain value iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, Sensors, Transition};

/// Reward for a step that does not enter a new cell (wall bump, absorbing).
pub const KEEP_ALIVE: f64 = 0.01;

/// Grid movement actions, in fixed index order.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const GRID_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    n: usize,
    /// Reward earned when *entering* each cell.
    rewards: Vec<f64>,
    terminal: Vec<bool>,
}

impl GridEnv {
    pub fn new(n: usize, rewards: Vec<f64>, terminal: Vec<bool>) -> Self {
        assert!(n >= 1);
        assert_eq!(rewards.len(), n * n);
        assert_eq!(terminal.len(), n * n);
        assert!(
            rewards.iter().all(|&r| r > 0.0 && r.is_finite()),
            "cell rewards must be positive"
        );
        GridEnv {
            n,
            rewards,
            terminal,
        }
    }

    /// A seeded random grid: rewards rise smoothly toward the bottom-right
    /// corner with per-cell noise, and a few trap terminals carry only the
    /// keep-alive floor so the optimal policy steers around them.
    pub fn random(n: usize, seed: u64) -> Self {
        assert!(n >= 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rewards = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                let gradient = (row + col) as f64 / (2 * (n - 1)) as f64;
                rewards[row * n + col] = 0.05 + 0.45 * rng.gen::<f64>() + 0.5 * gradient * gradient;
            }
        }
        let mut terminal = vec![false; n * n];
        let traps = n / 2;
        let mut placed = 0;
        while placed < traps {
            let row = rng.gen_range(0..n);
            let col = rng.gen_range(0..n);
            let idx = row * n + col;
            // keep the start corner, the reward corner and existing traps clear
            if terminal[idx] || (row + col < 2) || (row + col > 2 * n - 4) {
                continue;
            }
            terminal[idx] = true;
            rewards[idx] = KEEP_ALIVE;
            placed += 1;
        }
        GridEnv {
            n,
            rewards,
            terminal,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self, s: GridState) -> usize {
        s.row * self.n + s.col
    }

    pub fn is_terminal(&self, s: GridState) -> bool {
        self.terminal[self.index(s)]
    }

    pub fn states(&self) -> impl Iterator<Item = GridState> + '_ {
        (0..self.n).flat_map(move |row| (0..self.n).map(move |col| GridState { row, col }))
    }

    fn target(&self, s: GridState, action: usize) -> Option<GridState> {
        let (row, col) = (s.row as isize, s.col as isize);
        let (tr, tc) = match action {
            UP => (row - 1, col),
            DOWN => (row + 1, col),
            LEFT => (row, col - 1),
            RIGHT => (row, col + 1),
            _ => unreachable!(),
        };
        if tr < 0 || tc < 0 || tr >= self.n as isize || tc >= self.n as isize {
            None
        } else {
            Some(GridState {
                row: tr as usize,
                col: tc as usize,
            })
        }
    }
}

impl Environment for GridEnv {
    type State = GridState;

    fn action_count(&self) -> usize {
        GRID_ACTIONS
    }

    fn reset(&self, seed: u64) -> GridState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let s = GridState {
                row: rng.gen_range(0..self.n),
                col: rng.gen_range(0..self.n),
            };
            if !self.is_terminal(s) {
                return s;
            }
        }
    }

    fn simulate(&self, state: &GridState, action: usize) -> Result<Transition<GridState>, EnvError> {
        if action >= GRID_ACTIONS {
            return Err(EnvError::InvalidAction {
                action,
                count: GRID_ACTIONS,
            });
        }
        if self.is_terminal(*state) {
            // absorbing: stays put, episode remains over
            return Ok(Transition {
                state: *state,
                reward: KEEP_ALIVE,
                done: true,
            });
        }
        match self.target(*state, action) {
            None => Ok(Transition {
                state: *state,
                reward: KEEP_ALIVE,
                done: false,
            }),
            Some(t) => Ok(Transition {
                state: t,
                reward: self.rewards[self.index(t)],
                done: self.is_terminal(t),
            }),
        }
    }

    fn sensors(&self, state: &GridState) -> Sensors {
        let mut img = Sensors::new(84, 84);
        let block = 84 / self.n;
        let offset = (84 - block * self.n) / 2;
        let max_reward = self
            .rewards
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for row in 0..self.n {
            for col in 0..self.n {
                let idx = row * self.n + col;
                let value = if self.terminal[idx] {
                    0.75
                } else {
                    0.1 + 0.3 * self.rewards[idx] / max_reward
                };
                let value = if (row, col) == (state.row, state.col) {
                    1.0
                } else {
                    value
                };
                for r in 0..block {
                    for c in 0..block {
                        img.set(offset + row * block + r, offset + col * block + c, value as f32);
                    }
                }
            }
        }
        img
    }
}

/// Exact optimal action values, one row per cell. Terminal rows stay zero.
#[derive(Debug, Clone)]
pub struct QTable {
    n: usize,
    q: Vec<[f64; GRID_ACTIONS]>,
    gamma: f64,
}

impl QTable {
    /// Reassembles a table from stored parts (checkpoint loading).
    pub fn from_parts(n: usize, q: Vec<[f64; GRID_ACTIONS]>, gamma: f64) -> Self {
        assert_eq!(q.len(), n * n);
        QTable { n, q, gamma }
    }

    pub fn q(&self, s: GridState) -> &[f64; GRID_ACTIONS] {
        &self.q[s.row * self.n + s.col]
    }

    pub fn value(&self, s: GridState) -> f64 {
        self.q(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The optimal action at `s`; ties go to the lowest action index.
    pub fn optimal_action(&self, s: GridState) -> usize {
        let q = self.q(s);
        let mut best = 0;
        for a in 1..GRID_ACTIONS {
            if q[a] > q[best] {
                best = a;
            }
        }
        best
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Steps along the optimal trajectory from `start` until a state repeats
    /// or the episode ends — the natural "optimal path length" on a finite
    /// deterministic grid.
    pub fn optimal_path_length(&self, env: &GridEnv, start: GridState) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut state = start;
        let mut steps = 0;
        while seen.insert(state) {
            let t = env
                .simulate(&state, self.optimal_action(state))
                .expect("valid action");
            steps += 1;
            if t.done {
                break;
            }
            state = t.state;
        }
        steps
    }
}

/// Solves the grid exactly by value iteration, to a residual below `1e-10`.
pub fn grid_q_star(env: &GridEnv, gamma: f64) -> QTable {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    let n = env.n();
    let mut q = vec![[0.0f64; GRID_ACTIONS]; n * n];
    loop {
        let mut residual = 0.0f64;
        let mut next = q.clone();
        for s in env.states() {
            let idx = env.index(s);
            if env.is_terminal(s) {
                continue;
            }
            for a in 0..GRID_ACTIONS {
                let t = env.simulate(&s, a).expect("valid action");
                let future = if t.done {
                    0.0
                } else {
                    let tq = &q[env.index(t.state)];
                    tq.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                let value = t.reward + gamma * future;
                residual = residual.max((value - q[idx][a]).abs());
                next[idx][a] = value;
            }
        }
        q = next;
        if residual < 1e-10 {
            break;
        }
    }
    QTable { n, q, gamma }
}
