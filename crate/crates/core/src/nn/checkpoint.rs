//! Checkpoint file formats.
//!
//! Network checkpoints: magic `ALEPHNN1`, one architecture descriptor line,
//! then the parameters as a little-endian `f32` array in layer order.
//!
//! Gridworld oracle stubs share the container layout under magic
//! `ALEPHQT1`, with the exact Q table stored as little-endian `f64` so the
//! greedy argmax survives serialization unchanged.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::env::grid::{grid_q_star, GridEnv, QTable, GRID_ACTIONS};
use crate::nn::{HeuristicNet, NetConfig, NnError};

pub const NET_MAGIC: &[u8; 8] = b"ALEPHNN1";
pub const GRID_ORACLE_MAGIC: &[u8; 8] = b"ALEPHQT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a recognized checkpoint (bad magic)")]
    BadMagic,
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("checkpoint truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingData(usize),
}

impl From<NnError> for CheckpointError {
    fn from(e: NnError) -> Self {
        CheckpointError::Architecture(e.to_string())
    }
}

/// Any loadable heuristic checkpoint.
pub enum Checkpoint {
    Net(HeuristicNet),
    /// Exact gridworld Q table together with the grid it solves.
    GridOracle(GridEnv, QTable),
}

pub fn save_net(net: &HeuristicNet, path: &Path) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(NET_MAGIC)?;
    out.write_all(net.descriptor().as_bytes())?;
    out.write_all(b"\n")?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<HeuristicNet, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    expect_magic(&mut reader, NET_MAGIC)?;
    let descriptor = read_line(&mut reader)?;
    let config = NetConfig::parse_descriptor(&descriptor)?;
    let mut net = HeuristicNet::zeros(config)?;
    let floats = read_f32_payload(&mut reader, net.param_count())?;
    net.set_params(floats);
    Ok(net)
}

/// Builds and stores the exact Q table for `GridEnv::random(n, seed)`.
pub fn save_grid_oracle(
    path: &Path,
    n: usize,
    seed: u64,
    gamma: f64,
) -> Result<(), CheckpointError> {
    let env = GridEnv::random(n, seed);
    let table = grid_q_star(&env, gamma);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(GRID_ORACLE_MAGIC)?;
    writeln!(out, "grid n={n} seed={seed} gamma={gamma}")?;
    for s in env.states() {
        for a in 0..GRID_ACTIONS {
            out.write_all(&table.q(s)[a].to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_grid_oracle(path: &Path) -> Result<(GridEnv, QTable), CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    expect_magic(&mut reader, GRID_ORACLE_MAGIC)?;
    let line = read_line(&mut reader)?;
    let (n, seed, gamma) = parse_grid_descriptor(&line)?;
    let env = GridEnv::random(n, seed);
    let count = n * n * GRID_ACTIONS;
    let values = read_f64_payload(&mut reader, count)?;
    let mut q = vec![[0.0f64; GRID_ACTIONS]; n * n];
    for (i, row) in q.iter_mut().enumerate() {
        row.copy_from_slice(&values[i * GRID_ACTIONS..(i + 1) * GRID_ACTIONS]);
    }
    Ok((env, QTable::from_parts(n, q, gamma)))
}

/// Loads either checkpoint kind, dispatching on the magic bytes.
pub fn load_any(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    drop(file);
    if &magic == NET_MAGIC {
        Ok(Checkpoint::Net(load_net(path)?))
    } else if &magic == GRID_ORACLE_MAGIC {
        let (env, table) = load_grid_oracle(path)?;
        Ok(Checkpoint::GridOracle(env, table))
    } else {
        Err(CheckpointError::BadMagic)
    }
}

fn parse_grid_descriptor(line: &str) -> Result<(usize, u64, f64), CheckpointError> {
    let bad = |msg: &str| CheckpointError::Architecture(msg.to_string());
    let mut n = None;
    let mut seed = None;
    let mut gamma = None;
    for token in line.split_whitespace() {
        if token == "grid" {
            continue;
        }
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad(&format!("bad grid descriptor token {token}")))?;
        match key {
            "n" => n = Some(value.parse().map_err(|_| bad("bad n"))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad("bad seed"))?),
            "gamma" => gamma = Some(value.parse().map_err(|_| bad("bad gamma"))?),
            other => return Err(bad(&format!("unknown grid descriptor key {other}"))),
        }
    }
    match (n, seed, gamma) {
        (Some(n), Some(seed), Some(gamma)) => Ok((n, seed, gamma)),
        _ => Err(bad("grid descriptor missing n, seed or gamma")),
    }
}

fn expect_magic(reader: &mut impl Read, magic: &[u8; 8]) -> Result<(), CheckpointError> {
    let mut buf = [0u8; 8];
    reader
        .read_exact(&mut buf)
        .map_err(|_| CheckpointError::BadMagic)?;
    if &buf != magic {
        return Err(CheckpointError::BadMagic);
    }
    Ok(())
}

fn read_line(reader: &mut impl Read) -> Result<String, CheckpointError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte).map_err(|_| {
            CheckpointError::Architecture("unterminated descriptor line".into())
        })?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(CheckpointError::Architecture(
                "descriptor line too long".into(),
            ));
        }
    }
    String::from_utf8(line)
        .map_err(|_| CheckpointError::Architecture("descriptor is not utf-8".into()))
}

fn read_f32_payload(reader: &mut impl Read, count: usize) -> Result<Vec<f32>, CheckpointError> {
    let bytes = read_exact_payload(reader, count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_f64_payload(reader: &mut impl Read, count: usize) -> Result<Vec<f64>, CheckpointError> {
    let bytes = read_exact_payload(reader, count * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_exact_payload(reader: &mut impl Read, expected: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CheckpointError::TrailingData(bytes.len() - expected));
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, Sensors};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn net_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = HeuristicNet::new(NetConfig::tiny(), 33).unwrap();
        net.save(&path).unwrap();
        let loaded = HeuristicNet::load(&path).unwrap();
        assert_eq!(net.params(), loaded.params());
        assert_eq!(net.descriptor(), loaded.descriptor());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut img = Sensors::new(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                img.set(r, c, rng.gen_range(0.0..1.0));
            }
        }
        let a = net.forward(&img).unwrap();
        let b = loaded.forward(&img).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_length_is_header_plus_4_bytes_per_param() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = HeuristicNet::new(NetConfig::reference(35), 0).unwrap();
        net.save(&path).unwrap();
        let header = 8 + net.descriptor().len() + 1;
        let expected = header + 4 * net.param_count();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC-garbage").unwrap();
        assert!(matches!(
            HeuristicNet::load(&path),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(load_any(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let net = HeuristicNet::new(NetConfig::tiny(), 1).unwrap();
        net.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            HeuristicNet::load(&path),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn grid_oracle_round_trip_preserves_the_table_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.ckpt");
        save_grid_oracle(&path, 6, 12, 0.95).unwrap();
        let (env, table) = load_grid_oracle(&path).unwrap();
        let fresh = grid_q_star(&env, 0.95);
        for s in env.states() {
            for a in 0..GRID_ACTIONS {
                assert_eq!(table.q(s)[a].to_bits(), fresh.q(s)[a].to_bits());
            }
        }
        match load_any(&path).unwrap() {
            Checkpoint::GridOracle(env2, _) => assert_eq!(env2.n(), 6),
            _ => panic!("expected a grid oracle"),
        }
        assert_eq!(env.action_count(), GRID_ACTIONS);
    }
}
