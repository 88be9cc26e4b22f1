//! Run configuration: flat `key = value` text with `[env]`, `[net]` and
//! `[train]` sections.
//!
//! The resolved configuration is written back into every run directory in
//! the same format, so any run can be replayed exactly. Unknown keys are
//! errors — silent typos in experiment configs are worse than loud ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::env::DrivingConfig;
use crate::nn::{ConvSpec, NetConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("invalid value for [{section}] {key}: {value}")]
    BadValue {
        section: String,
        key: String,
        value: String,
    },
}

/// Which simulated world a run uses.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Driving(DrivingConfig),
    /// Seeded random gridworld of size `n`.
    Grid { n: usize, seed: u64 },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Driving(DrivingConfig::default())
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub net: NetSection,
    pub train: TrainConfig,
}

/// Network architecture knobs (the action count always comes from the
/// environment).
#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub convs: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub leaky_alpha: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        let reference = NetConfig::reference(1);
        NetSection {
            convs: reference.convs,
            hidden: reference.hidden,
            leaky_alpha: reference.leaky_alpha,
        }
    }
}

impl NetSection {
    pub fn to_net_config(&self, actions: usize) -> NetConfig {
        NetConfig {
            input_height: 84,
            input_width: 84,
            convs: self.convs.clone(),
            hidden: self.hidden.clone(),
            actions,
            leaky_alpha: self.leaky_alpha,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::NotFound(path.display().to_string()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut section = String::new();
        let mut driving = DrivingConfig::default();
        let mut grid_n: Option<usize> = None;
        let mut grid_seed: u64 = 0;
        let mut env_kind = "driving".to_string();

        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: number + 1,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if !["env", "net", "train"].contains(&section.as_str()) {
                    return Err(ConfigError::Parse {
                        line: number + 1,
                        message: format!("unknown section [{section}]"),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: number + 1,
                message: format!("expected key = value, got: {line}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = || ConfigError::BadValue {
                section: section.clone(),
                key: key.to_string(),
                value: value.to_string(),
            };
            macro_rules! parse {
                () => {
                    value.parse().map_err(|_| bad())?
                };
            }
            match (section.as_str(), key) {
                ("env", "kind") => env_kind = value.to_string(),
                ("env", "dt") => driving.dt = parse!(),
                ("env", "wheelbase") => driving.wheelbase = parse!(),
                ("env", "v_max") => driving.v_max = parse!(),
                ("env", "steer_max") => driving.steer_max = parse!(),
                ("env", "lane_width") => driving.lane_width = parse!(),
                ("env", "keep_alive") => driving.keep_alive = parse!(),
                ("env", "car_length") => driving.car_length = parse!(),
                ("env", "car_width") => driving.car_width = parse!(),
                ("env", "other_cars") => driving.other_cars = parse!(),
                ("env", "other_speed_min") => driving.other_speed_min = parse!(),
                ("env", "other_speed_max") => driving.other_speed_max = parse!(),
                ("env", "spawn_min") => driving.spawn_min = parse!(),
                ("env", "spawn_max") => driving.spawn_max = parse!(),
                ("env", "v0_min") => driving.v0_min = parse!(),
                ("env", "v0_max") => driving.v0_max = parse!(),
                ("env", "grid_n") => grid_n = Some(parse!()),
                ("env", "grid_seed") => grid_seed = parse!(),
                ("net", "convs") => {
                    config.net.convs = value
                        .split(',')
                        .map(|spec| {
                            let nums: Vec<usize> = spec
                                .trim()
                                .split('x')
                                .map(|v| v.parse())
                                .collect::<Result<_, _>>()
                                .map_err(|_| bad())?;
                            if nums.len() != 3 {
                                return Err(bad());
                            }
                            Ok(ConvSpec {
                                filters: nums[0],
                                kernel: nums[1],
                                stride: nums[2],
                            })
                        })
                        .collect::<Result<_, _>>()?;
                }
                ("net", "hidden") => {
                    config.net.hidden = value
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_, _>>()?;
                }
                ("net", "leaky_alpha") => config.net.leaky_alpha = parse!(),
                ("train", "learning_rate") => config.train.learning_rate = parse!(),
                ("train", "gamma") => config.train.gamma = parse!(),
                ("train", "batch_size") => config.train.batch_size = parse!(),
                ("train", "epsilon_start") => config.train.epsilon_start = parse!(),
                ("train", "epsilon_end") => config.train.epsilon_end = parse!(),
                ("train", "iterations") => config.train.iterations = parse!(),
                ("train", "max_tree_nodes") => config.train.max_tree_nodes = parse!(),
                ("train", "max_experience_age") => config.train.max_experience_age = parse!(),
                ("train", "prioritized_replay") => config.train.prioritized_replay = parse!(),
                ("train", "checkpoint_every") => config.train.checkpoint_every = parse!(),
                ("train", "dump_buffer") => config.train.dump_buffer = parse!(),
                ("train", "timing_in_csv") => config.train.timing_in_csv = parse!(),
                (_, key) => {
                    return Err(ConfigError::UnknownKey {
                        section: section.clone(),
                        key: key.to_string(),
                    })
                }
            }
        }

        config.env = match env_kind.as_str() {
            "driving" => EnvConfig::Driving(driving),
            "grid" => EnvConfig::Grid {
                n: grid_n.unwrap_or(8),
                seed: grid_seed,
            },
            other => {
                return Err(ConfigError::BadValue {
                    section: "env".into(),
                    key: "kind".into(),
                    value: other.to_string(),
                })
            }
        };
        Ok(config)
    }

    /// Serializes the fully resolved configuration, every key explicit, in a
    /// stable order.
    pub fn to_text(&self) -> String {
        let mut env: BTreeMap<&str, String> = BTreeMap::new();
        match &self.env {
            EnvConfig::Driving(d) => {
                env.insert("kind", "driving".into());
                env.insert("dt", d.dt.to_string());
                env.insert("wheelbase", d.wheelbase.to_string());
                env.insert("v_max", d.v_max.to_string());
                env.insert("steer_max", d.steer_max.to_string());
                env.insert("lane_width", d.lane_width.to_string());
                env.insert("keep_alive", d.keep_alive.to_string());
                env.insert("car_length", d.car_length.to_string());
                env.insert("car_width", d.car_width.to_string());
                env.insert("other_cars", d.other_cars.to_string());
                env.insert("other_speed_min", d.other_speed_min.to_string());
                env.insert("other_speed_max", d.other_speed_max.to_string());
                env.insert("spawn_min", d.spawn_min.to_string());
                env.insert("spawn_max", d.spawn_max.to_string());
                env.insert("v0_min", d.v0_min.to_string());
                env.insert("v0_max", d.v0_max.to_string());
            }
            EnvConfig::Grid { n, seed } => {
                env.insert("kind", "grid".into());
                env.insert("grid_n", n.to_string());
                env.insert("grid_seed", seed.to_string());
            }
        }
        let convs = self
            .net
            .convs
            .iter()
            .map(|c| format!("{}x{}x{}", c.filters, c.kernel, c.stride))
            .collect::<Vec<_>>()
            .join(",");
        let hidden = self
            .net
            .hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");

        let mut out = String::new();
        out.push_str("[env]\n");
        for (k, v) in env {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[net]\n");
        let _ = writeln!(out, "convs = {convs}");
        let _ = writeln!(out, "hidden = {hidden}");
        let _ = writeln!(out, "leaky_alpha = {}", self.net.leaky_alpha);
        out.push_str("\n[train]\n");
        let t = &self.train;
        let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(out, "gamma = {}", t.gamma);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "epsilon_start = {}", t.epsilon_start);
        let _ = writeln!(out, "epsilon_end = {}", t.epsilon_end);
        let _ = writeln!(out, "iterations = {}", t.iterations);
        let _ = writeln!(out, "max_tree_nodes = {}", t.max_tree_nodes);
        let _ = writeln!(out, "max_experience_age = {}", t.max_experience_age);
        let _ = writeln!(out, "prioritized_replay = {}", t.prioritized_replay);
        let _ = writeln!(out, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(out, "dump_buffer = {}", t.dump_buffer);
        let _ = writeln!(out, "timing_in_csv = {}", t.timing_in_csv);
        out
    }
}
