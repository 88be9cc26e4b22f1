//! Synthetic environments for tests and benchmarks.

use super::{EnvError, Environment, Sensors, Transition};

/// Endless deterministic environment: every action pays a fixed reward and
/// never terminates. With a constant heuristic, accumulated reward dominates
/// the expansion priorities and trees grow as pure chains, which makes this
/// the canonical workload for build-time scaling benchmarks.
#[derive(Debug, Clone)]
pub struct ChainEnv {
    pub actions: usize,
    pub reward: f64,
}

impl Default for ChainEnv {
    fn default() -> Self {
        ChainEnv {
            actions: 4,
            reward: 1.0,
        }
    }
}

impl Environment for ChainEnv {
    type State = u64; // steps taken so far

    fn action_count(&self) -> usize {
        self.actions
    }

    fn reset(&self, _seed: u64) -> u64 {
        0
    }

    fn simulate(&self, state: &u64, action: usize) -> Result<Transition<u64>, EnvError> {
        if action >= self.actions {
            return Err(EnvError::InvalidAction {
                action,
                count: self.actions,
            });
        }
        Ok(Transition {
            state: state + 1,
            reward: self.reward,
            done: false,
        })
    }

    fn sensors(&self, _state: &u64) -> Sensors {
        Sensors::new(1, 1)
    }
}

/// Every action from the start state leads straight to a terminal state.
/// Exercises the queue-exhaustion exit of tree generation.
#[derive(Debug, Clone)]
pub struct OneStepEnv {
    pub actions: usize,
}

impl Environment for OneStepEnv {
    type State = u8; // 0 = start, 1 = absorbed

    fn action_count(&self) -> usize {
        self.actions
    }

    fn reset(&self, _seed: u64) -> u8 {
        0
    }

    fn simulate(&self, _state: &u8, action: usize) -> Result<Transition<u8>, EnvError> {
        if action >= self.actions {
            return Err(EnvError::InvalidAction {
                action,
                count: self.actions,
            });
        }
        Ok(Transition {
            state: 1,
            reward: 0.5 + action as f64 * 0.1,
            done: true,
        })
    }

    fn sensors(&self, _state: &u8) -> Sensors {
        Sensors::new(1, 1)
    }
}
