//! Command-line front door: train, evaluate, benchmark, export artifacts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config errors,
//! 3 checkpoint load failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aleph_star::bench::{fit_exponent, time_queue_ops, time_rollout_builds, time_tree_builds};
use aleph_star::config::{ConfigError, EnvConfig, RunConfig};
use aleph_star::env::grid::GridEnv;
use aleph_star::env::{DrivingEnv, Environment};
use aleph_star::heuristic::Heuristic;
use aleph_star::nn::checkpoint::{load_any, save_grid_oracle, Checkpoint};
use aleph_star::nn::HeuristicNet;
use aleph_star::policy::{run_episode, PolicyKind};
use aleph_star::seeds::{derive_seed, STREAM_EVAL, STREAM_NET_INIT};
use aleph_star::trainer::{train, Algo, RunOutput};

#[derive(Parser)]
#[command(name = "aleph-star", version, about = "Best-first tree search with a trainable neural heuristic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a heuristic and write metrics, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the greedy or tree policy.
    Eval(EvalArgs),
    /// Time tree construction or queue operations and fit a scaling exponent.
    Bench(BenchArgs),
    /// Write an exact gridworld Q-table checkpoint (verification stub).
    ExportGridOracle(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (key = value with [env]/[net]/[train] sections).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics.csv, checkpoints and the resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Aleph)]
    algo: AlgoArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Aleph,
    Dqn,
}

#[derive(Args)]
struct EvalArgs {
    /// Heuristic checkpoint (network or gridworld oracle stub).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
    policy: PolicyArg,
    /// Tree policy node budget.
    #[arg(long, default_value_t = 50)]
    budget: usize,
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum steps per episode.
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    /// Optional config supplying the environment section (network
    /// checkpoints default to the stock driving environment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write eval.csv (and sensor dumps); defaults to the
    /// current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the first episode's sensor images as PGM files.
    #[arg(long, default_value_t = false)]
    dump_sensors: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Greedy,
    Tree,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    /// Comma-separated sizes, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Where to write bench.csv; defaults to the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    /// Heap-driven tree construction (near-linear).
    TreeScaling,
    /// Push/pop throughput of the lazy-deletion queue.
    QueueOps,
    /// Walk-from-root reference construction (quadratic on chains).
    RolloutReference,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    grid_seed: u64,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::ExportGridOracle(args) => cmd_export(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let config = match RunConfig::from_file(&args.config) {
        Ok(config) => config,
        Err(err @ ConfigError::NotFound(_)) => {
            eprintln!("error: {err}");
            return Ok(ExitCode::from(2));
        }
        Err(err) => {
            eprintln!("error: {err}");
            return Ok(ExitCode::from(2));
        }
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output dir {}", args.out.display()))?;
    fs::write(args.out.join("config.resolved"), config.to_text())?;

    let algo = match args.algo {
        AlgoArg::Aleph => Algo::Aleph,
        AlgoArg::Dqn => Algo::NStepDqn,
    };
    let out = RunOutput::new(&args.out);
    let net_seed = derive_seed(args.seed, STREAM_NET_INIT, 0);

    match &config.env {
        EnvConfig::Driving(driving) => {
            let env = DrivingEnv::new(driving.clone());
            let mut net = HeuristicNet::new(config.net.to_net_config(env.action_count()), net_seed)?;
            train(&config.train, &env, &mut net, args.seed, algo, Some(&out))?;
        }
        EnvConfig::Grid { n, seed } => {
            let env = GridEnv::random(*n, *seed);
            let mut net = HeuristicNet::new(config.net.to_net_config(env.action_count()), net_seed)?;
            train(&config.train, &env, &mut net, args.seed, algo, Some(&out))?;
        }
    }
    println!("run complete: {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    if args.episodes == 0 {
        eprintln!("error: --episodes must be positive");
        return Ok(ExitCode::from(2));
    }
    let policy = match args.policy {
        PolicyArg::Greedy => PolicyKind::Greedy,
        PolicyArg::Tree => {
            if args.budget < 2 {
                eprintln!("error: --budget must be at least 2");
                return Ok(ExitCode::from(2));
            }
            PolicyKind::Tree {
                budget: args.budget,
            }
        }
    };
    let checkpoint = match load_any(&args.checkpoint) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("error: cannot load checkpoint: {err}");
            return Ok(ExitCode::from(3));
        }
    };
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    let results = match checkpoint {
        Checkpoint::Net(net) => {
            let env = match &args.config {
                Some(path) => match RunConfig::from_file(path) {
                    Ok(RunConfig {
                        env: EnvConfig::Driving(d),
                        ..
                    }) => DrivingEnv::new(d),
                    Ok(_) => bail!("network checkpoints evaluate on the driving environment"),
                    Err(err) => {
                        eprintln!("error: {err}");
                        return Ok(ExitCode::from(2));
                    }
                },
                None => DrivingEnv::default(),
            };
            if args.dump_sensors {
                dump_sensors(&env, &net, policy, args.seed, args.horizon, &out_dir)?;
            }
            evaluate(&env, &net, policy, args.episodes, args.seed, args.horizon)?
        }
        Checkpoint::GridOracle(env, table) => {
            if args.dump_sensors {
                dump_sensors(&env, &table, policy, args.seed, args.horizon, &out_dir)?;
            }
            evaluate(&env, &table, policy, args.episodes, args.seed, args.horizon)?
        }
    };

    let mut csv = String::from("episode,seed,reward,steps,terminated\n");
    let mut total = 0.0;
    for (episode, (seed, r)) in results.iter().enumerate() {
        println!(
            "episode {episode:3}  seed {seed}  reward {:10.4}  steps {:4}  terminated {}",
            r.reward, r.steps, r.terminated
        );
        csv.push_str(&format!(
            "{episode},{seed},{},{},{}\n",
            r.reward, r.steps, r.terminated
        ));
        total += r.reward;
    }
    let mean = total / results.len() as f64;
    println!("mean reward over {} episodes: {mean:.4}", results.len());
    fs::write(out_dir.join("eval.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}

/// Worker count: ALEPH_THREADS caps the machine's parallelism (and is the
/// only knob — a single worker is the default-safe floor on odd values).
fn worker_count(episodes: usize) -> usize {
    let hardware = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("ALEPH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hardware);
    cap.min(hardware).min(episodes).max(1)
}

/// Episodes are independent and seeded individually, so distributing them
/// over threads cannot change any result, only the wall-clock.
fn evaluate<E, H>(
    env: &E,
    heuristic: &H,
    policy: PolicyKind,
    episodes: usize,
    seed: u64,
    horizon: usize,
) -> Result<Vec<(u64, aleph_star::policy::EpisodeResult)>>
where
    E: Environment + Sync,
    E::State: Send,
    H: Heuristic<E> + Sync,
{
    let workers = worker_count(episodes);
    let mut results: Vec<Option<(u64, aleph_star::policy::EpisodeResult)>> =
        vec![None; episodes];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (worker, chunk) in results.chunks_mut(episodes.div_ceil(workers)).enumerate() {
            let base = worker * episodes.div_ceil(workers);
            handles.push(scope.spawn(move || -> Result<()> {
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    let episode = (base + offset) as u64;
                    let episode_seed = derive_seed(seed, STREAM_EVAL, episode);
                    let result = run_episode(heuristic, env, policy, episode_seed, horizon)?;
                    *slot = Some((episode_seed, result));
                }
                Ok(())
            }));
        }
        for handle in handles {
            handle.join().expect("evaluation worker panicked")?;
        }
        Ok(())
    })?;
    Ok(results.into_iter().map(|r| r.expect("episode ran")).collect())
}

/// Replays the first episode and writes one PGM per step.
fn dump_sensors<E: Environment, H: Heuristic<E>>(
    env: &E,
    heuristic: &H,
    policy: PolicyKind,
    seed: u64,
    horizon: usize,
    out_dir: &Path,
) -> Result<()> {
    let dir = out_dir.join("sensors");
    fs::create_dir_all(&dir)?;
    let episode_seed = derive_seed(seed, STREAM_EVAL, 0);
    let mut state = env.reset(episode_seed);
    for step in 0..horizon {
        env.sensors(&state)
            .write_pgm(&dir.join(format!("ep0_step{step:04}.pgm")))?;
        let action = match policy {
            PolicyKind::Greedy => aleph_star::policy::act_greedy(heuristic, env, &state),
            PolicyKind::Tree { budget } => {
                aleph_star::policy::act_tree(heuristic, env, &state, budget)?
            }
        };
        let t = env.simulate(&state, action)?;
        state = t.state;
        if t.done {
            break;
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    if args.sizes.len() < 2 || args.sizes.windows(2).any(|w| w[0] >= w[1]) {
        eprintln!("error: --sizes must list at least two strictly increasing sizes");
        return Ok(ExitCode::from(2));
    }
    let points = match args.mode {
        BenchMode::TreeScaling => time_tree_builds(&args.sizes, args.reps),
        BenchMode::QueueOps => time_queue_ops(&args.sizes, args.reps),
        BenchMode::RolloutReference => time_rollout_builds(&args.sizes, args.reps),
    };
    let mut csv = String::from("size,millis\n");
    for p in &points {
        println!("size {:8}  {:10.3} ms", p.size, p.millis);
        csv.push_str(&format!("{},{}\n", p.size, p.millis));
    }
    let exponent = fit_exponent(&points);
    println!("fitted log-log exponent: {exponent:.3}");
    csv.push_str(&format!("# exponent,{exponent}\n"));
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("bench.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs) -> Result<ExitCode> {
    if !(args.gamma > 0.0 && args.gamma < 1.0) {
        eprintln!("error: --gamma must lie in (0, 1)");
        return Ok(ExitCode::from(2));
    }
    save_grid_oracle(&args.out, args.n, args.grid_seed, args.gamma)?;
    println!(
        "wrote grid oracle (n={}, seed={}, gamma={}) to {}",
        args.n,
        args.grid_seed,
        args.gamma,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
