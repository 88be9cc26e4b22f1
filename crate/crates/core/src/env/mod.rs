//! Environment abstraction with snapshot semantics.
//!
//! States are value-semantic snapshots: `simulate` is a pure function of
//! `(state, action)`, so any node stored in a search tree can be re-branched
//! later. Every reward is strictly positive — episode end is modeled as the
//! minimal value 0, and positive rewards are what make that sound.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub mod driving;
pub mod grid;
pub mod toy;

pub use driving::{DrivingConfig, DrivingEnv, DrivingState};
pub use grid::{GridEnv, GridState, QTable};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
}

/// Result of simulating one action on a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub reward: f64,
    pub done: bool,
}

/// A branchable simulated environment.
///
/// The struct itself is an immutable rulebook; all mutable information lives
/// in the `State` snapshots it hands out.
pub trait Environment {
    type State: Clone;

    /// Size of the shared action set.
    fn action_count(&self) -> usize;

    /// A randomly initialized episode start state. Same seed, same state.
    fn reset(&self, seed: u64) -> Self::State;

    /// Simulates one action. Pure: identical `(state, action)` inputs yield
    /// bitwise identical transitions. Rewards are strictly positive.
    fn simulate(&self, state: &Self::State, action: usize)
        -> Result<Transition<Self::State>, EnvError>;

    /// The sensor image for a state, values in `[0, 1]`.
    fn sensors(&self, state: &Self::State) -> Sensors;
}

/// A single-channel sensor image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensors {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Sensors {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    /// Writes the image as a binary PGM (8-bit grayscale) for inspection.
    pub fn write_pgm(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        out.flush()
    }
}
