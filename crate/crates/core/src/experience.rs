//! Replay buffer of `(Q-target, sensors)` pairs harvested from
//! backpropagated trees.
//!
//! Instead of a target network, experiences carry their birth iteration and
//! are evicted once they grow too old — each heuristic evaluation is made
//! exactly once and simply ages out. Sampling is uniform by default; an
//! optional mode weighs items by their last observed training loss.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::env::{Environment, Sensors};
use crate::nn::CheckpointError;
use crate::tree::Tree;

/// Priority floor added to every item's loss so zero-loss items never starve.
pub const PRIORITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("tree must be backpropagated before harvesting")]
    NotBackpropagated,
    #[error("cannot sample from an empty buffer")]
    Empty,
}

/// How [`ReplayBuffer::sample`] draws a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// I.i.d. uniform with replacement.
    Uniform,
    /// Probability proportional to `last_loss + floor`; items that were
    /// never trained on get the maximal live priority.
    LossPrioritized,
}

#[derive(Debug, Clone)]
pub struct Experience {
    pub q_target: Vec<f32>,
    pub sensors: Sensors,
    pub birth_iteration: u64,
    /// Loss observed the last time this item was trained on; infinite until
    /// then, which grants new items maximal sampling priority.
    pub last_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> &Experience {
        &self.items[index]
    }

    /// Pushes one experience per non-terminal node of a backpropagated tree
    /// (terminal nodes carry no learnable Q signal). Returns the count
    /// added. Harvesting the same tree twice duplicates — the buffer is a
    /// bag.
    pub fn harvest<E: Environment>(
        &mut self,
        env: &E,
        tree: &Tree<E::State>,
        iteration: u64,
    ) -> Result<usize, ReplayError> {
        if !tree.backpropagated() {
            return Err(ReplayError::NotBackpropagated);
        }
        let mut added = 0;
        for (_, node) in tree.iter() {
            if node.done() {
                continue;
            }
            self.items.push(Experience {
                q_target: node.q().iter().map(|&q| q as f32).collect(),
                sensors: env.sensors(node.state()),
                birth_iteration: iteration,
                last_loss: f64::INFINITY,
            });
            added += 1;
        }
        Ok(added)
    }

    /// Removes every experience with `current_iteration − birth > max_age`.
    /// Returns the count removed.
    pub fn evict_stale(&mut self, current_iteration: u64, max_age: u64) -> usize {
        let before = self.items.len();
        self.items
            .retain(|e| current_iteration.saturating_sub(e.birth_iteration) <= max_age);
        before - self.items.len()
    }

    /// Draws `batch_size` item indices with replacement.
    pub fn sample<R: Rng>(
        &self,
        batch_size: usize,
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        match mode {
            SampleMode::Uniform => Ok((0..batch_size)
                .map(|_| rng.gen_range(0..self.items.len()))
                .collect()),
            SampleMode::LossPrioritized => {
                let max_finite = self
                    .items
                    .iter()
                    .map(|e| e.last_loss)
                    .filter(|l| l.is_finite())
                    .fold(0.0f64, f64::max);
                let never_sampled_weight = if max_finite > 0.0 { max_finite } else { 1.0 };
                let mut cumulative = Vec::with_capacity(self.items.len());
                let mut total = 0.0;
                for e in &self.items {
                    let loss = if e.last_loss.is_finite() {
                        e.last_loss
                    } else {
                        never_sampled_weight
                    };
                    total += loss + PRIORITY_FLOOR;
                    cumulative.push(total);
                }
                Ok((0..batch_size)
                    .map(|_| {
                        let r = rng.gen::<f64>() * total;
                        cumulative.partition_point(|&c| c <= r).min(self.items.len() - 1)
                    })
                    .collect())
            }
        }
    }

    /// Writes back fresh per-item losses after a training step. Duplicate
    /// indices take the last value.
    pub fn record_losses(&mut self, indices: &[usize], losses: &[f64]) {
        debug_assert_eq!(indices.len(), losses.len());
        for (&i, &loss) in indices.iter().zip(losses) {
            self.items[i].last_loss = loss;
        }
    }

    /// Dumps the buffer for crash resume: magic, item count and shape, then
    /// per item birth/loss/targets/sensors as little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(b"ALEPHXP1")?;
        let (h, w, a) = match self.items.first() {
            Some(e) => (e.sensors.height(), e.sensors.width(), e.q_target.len()),
            None => (0, 0, 0),
        };
        writeln!(out, "buffer items={} h={h} w={w} actions={a}", self.items.len())?;
        for e in &self.items {
            out.write_all(&(e.birth_iteration as f32).to_le_bytes())?;
            let loss = if e.last_loss.is_finite() {
                e.last_loss as f32
            } else {
                f32::INFINITY
            };
            out.write_all(&loss.to_le_bytes())?;
            for q in &e.q_target {
                out.write_all(&q.to_le_bytes())?;
            }
            for v in e.sensors.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != b"ALEPHXP1" {
            return Err(CheckpointError::BadMagic);
        }
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            reader.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
        }
        let header = String::from_utf8(header)
            .map_err(|_| CheckpointError::Architecture("buffer header not utf-8".into()))?;
        let mut items_n = 0usize;
        let mut h = 0usize;
        let mut w = 0usize;
        let mut actions = 0usize;
        for token in header.split_whitespace().skip(1) {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                CheckpointError::Architecture(format!("bad buffer header token {token}"))
            })?;
            let value: usize = value
                .parse()
                .map_err(|_| CheckpointError::Architecture("bad buffer header value".into()))?;
            match key {
                "items" => items_n = value,
                "h" => h = value,
                "w" => w = value,
                "actions" => actions = value,
                _ => {
                    return Err(CheckpointError::Architecture(format!(
                        "unknown buffer header key {key}"
                    )))
                }
            }
        }
        let floats_per_item = 2 + actions + h * w;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let expected = items_n * floats_per_item * 4;
        if bytes.len() < expected {
            return Err(CheckpointError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::TrailingData(bytes.len() - expected));
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut items = Vec::with_capacity(items_n);
        for _ in 0..items_n {
            let birth = floats.next().expect("length checked") as u64;
            let loss = floats.next().expect("length checked");
            let q_target: Vec<f32> = (&mut floats).take(actions).collect();
            let mut sensors = Sensors::new(h, w);
            for r in 0..h {
                for c in 0..w {
                    sensors.set(r, c, floats.next().expect("length checked"));
                }
            }
            items.push(Experience {
                q_target,
                sensors,
                birth_iteration: birth,
                last_loss: if loss.is_finite() {
                    loss as f64
                } else {
                    f64::INFINITY
                },
            });
        }
        Ok(ReplayBuffer { items })
    }
}
