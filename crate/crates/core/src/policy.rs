//! Runtime action selection.
//!
//! Two policies: act on the heuristic's argmax directly, or grow a small
//! exploitation-only tree (ε = 0) and take the first action on the path to
//! the last added node — with ε = 0 the last added node is the one
//! maximizing accumulated plus estimated future reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::heuristic::Heuristic;
use crate::trainer::{generate_tree, TrainError};

/// Greedy argmax over the heuristic's action values; ties go to the lowest
/// action index.
pub fn act_greedy<E: Environment, H: Heuristic<E>>(
    heuristic: &H,
    env: &E,
    state: &E::State,
) -> usize {
    let q = heuristic.evaluate(env, state);
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Plans with a small ε = 0 tree of up to `budget` nodes and returns the
/// first action on the root → last-added-node path. With `budget = 2`
/// exactly one expansion happens and this reduces to [`act_greedy`].
pub fn act_tree<E: Environment, H: Heuristic<E>>(
    heuristic: &H,
    env: &E,
    state: &E::State,
    budget: usize,
) -> Result<usize, TrainError> {
    // ε = 0 never draws from the RNG; any fixed seed keeps this deterministic
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tree = generate_tree(env, heuristic, state.clone(), 0.0, budget, &mut rng)?;
    let action = tree
        .first_action_to(tree.last())
        .expect("a tree with budget >= 2 always expands at least once");
    Ok(action)
}

/// Which policy an evaluation episode runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Greedy,
    Tree { budget: usize },
}

/// Outcome of one closed-loop evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Undiscounted accumulated reward.
    pub reward: f64,
    pub steps: usize,
    pub terminated: bool,
}

/// Runs one episode from `env.reset(seed)` for at most `horizon` steps.
pub fn run_episode<E: Environment, H: Heuristic<E>>(
    heuristic: &H,
    env: &E,
    policy: PolicyKind,
    seed: u64,
    horizon: usize,
) -> Result<EpisodeResult, TrainError> {
    let mut state = env.reset(seed);
    let mut reward = 0.0;
    let mut steps = 0;
    let mut terminated = false;
    while steps < horizon {
        let action = match policy {
            PolicyKind::Greedy => act_greedy(heuristic, env, &state),
            PolicyKind::Tree { budget } => act_tree(heuristic, env, &state, budget)?,
        };
        let t = env.simulate(&state, action)?;
        reward += t.reward;
        steps += 1;
        state = t.state;
        if t.done {
            terminated = true;
            break;
        }
    }
    Ok(EpisodeResult {
        reward,
        steps,
        terminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::toy::{ChainEnv, OneStepEnv};
    use crate::env::Transition;
    use crate::heuristic::ConstantHeuristic;
    use crate::env::EnvError;
    use crate::env::Sensors;

    /// Heuristic with a fixed Q vector, independent of state.
    struct FixedQ(Vec<f64>);

    impl<E: Environment> Heuristic<E> for FixedQ {
        fn evaluate(&self, _env: &E, _state: &E::State) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn greedy_takes_the_argmax() {
        let env = ChainEnv {
            actions: 10,
            reward: 1.0,
        };
        let mut q = vec![0.0; 10];
        q[7] = 1.0;
        assert_eq!(act_greedy(&FixedQ(q), &env, &0), 7);
    }

    #[test]
    fn greedy_breaks_ties_toward_the_lowest_index() {
        let env = ChainEnv {
            actions: 5,
            reward: 1.0,
        };
        assert_eq!(act_greedy(&FixedQ(vec![0.3; 5]), &env, &0), 0);
    }

    #[test]
    fn act_tree_with_budget_two_equals_act_greedy() {
        let env = ChainEnv {
            actions: 6,
            reward: 0.5,
        };
        let mut q = vec![0.1; 6];
        q[4] = 2.0;
        let h = FixedQ(q);
        assert_eq!(
            act_tree(&h, &env, &0, 2).unwrap(),
            act_greedy(&h, &env, &0)
        );
    }

    #[test]
    fn act_tree_survives_immediate_termination_everywhere() {
        // single action, terminal after one step: the queue empties after
        // one expansion and that sole expanded action comes back
        let env = OneStepEnv { actions: 1 };
        let action = act_tree(&ConstantHeuristic(0.5), &env, &0, 50).unwrap();
        assert_eq!(action, 0);

        // several terminal actions: the queue drains over all of them and
        // the last added node is the highest-C terminal (rewards grow with
        // the action index in this env)
        let env = OneStepEnv { actions: 3 };
        let action = act_tree(&ConstantHeuristic(0.5), &env, &0, 50).unwrap();
        assert_eq!(action, 2);
    }

    /// Two-action env where action 1 pays more but only action 0 continues.
    #[derive(Clone)]
    struct ForkEnv;

    impl Environment for ForkEnv {
        type State = u32;

        fn action_count(&self) -> usize {
            2
        }

        fn reset(&self, _seed: u64) -> u32 {
            0
        }

        fn simulate(&self, state: &u32, action: usize) -> Result<Transition<u32>, EnvError> {
            if action >= 2 {
                return Err(EnvError::InvalidAction { action, count: 2 });
            }
            Ok(if action == 0 {
                Transition {
                    state: state + 1,
                    reward: 1.0,
                    done: false,
                }
            } else {
                Transition {
                    state: *state,
                    reward: 1.5,
                    done: true,
                }
            })
        }

        fn sensors(&self, _state: &u32) -> Sensors {
            Sensors::new(1, 1)
        }
    }

    #[test]
    fn deep_planning_overrules_the_greedy_one_step_view() {
        // greedy on immediate-reward-shaped Q would quit for 1.5; a deep
        // tree sees that surviving on action 0 accumulates more
        let h = FixedQ(vec![1.0, 1.4]);
        let env = ForkEnv;
        assert_eq!(act_greedy(&h, &env, &0), 1);
        assert_eq!(act_tree(&h, &env, &0, 30).unwrap(), 0);
    }

    #[test]
    fn episodes_accumulate_reward_and_respect_the_horizon() {
        let env = ChainEnv {
            actions: 2,
            reward: 0.5,
        };
        let result = run_episode(&ConstantHeuristic(0.1), &env, PolicyKind::Greedy, 0, 20).unwrap();
        assert_eq!(result.steps, 20);
        assert!(!result.terminated);
        assert!((result.reward - 10.0).abs() < 1e-12);

        let env = OneStepEnv { actions: 2 };
        let result = run_episode(&ConstantHeuristic(0.1), &env, PolicyKind::Greedy, 0, 20).unwrap();
        assert_eq!(result.steps, 1);
        assert!(result.terminated);
    }
}
