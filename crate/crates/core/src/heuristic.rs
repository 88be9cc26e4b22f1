//! The action-value heuristic contract.
//!
//! A heuristic maps an environment state to a nonnegative value estimate per
//! action. During tree generation it is evaluated exactly once per created
//! node; evaluation takes `&self` so independent trees can share one
//! heuristic read-only.

use crate::env::grid::{GridEnv, QTable};
use crate::env::Environment;
use crate::nn::HeuristicNet;

pub trait Heuristic<E: Environment> {
    /// Nonnegative value estimates for every action at `state`.
    fn evaluate(&self, env: &E, state: &E::State) -> Vec<f64>;
}

/// Constant stub: the same value for every action. Used by scaling
/// benchmarks, where heuristic cost must not depend on tree size.
#[derive(Debug, Clone, Copy)]
pub struct ConstantHeuristic(pub f64);

impl<E: Environment> Heuristic<E> for ConstantHeuristic {
    fn evaluate(&self, env: &E, _state: &E::State) -> Vec<f64> {
        vec![self.0; env.action_count()]
    }
}

/// The exact gridworld Q table acts as a perfect heuristic.
impl Heuristic<GridEnv> for QTable {
    fn evaluate(&self, _env: &GridEnv, state: &<GridEnv as Environment>::State) -> Vec<f64> {
        self.q(*state).to_vec()
    }
}

/// The trained network: render sensors, run the forward pass.
impl<E: Environment> Heuristic<E> for HeuristicNet {
    fn evaluate(&self, env: &E, state: &E::State) -> Vec<f64> {
        self.forward(&env.sensors(state))
            .expect("sensor image must match the network input shape")
    }
}
