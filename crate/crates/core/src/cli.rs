//! The `specseek` command line.
//!
//! Exit codes: 0 success (including `--help`), 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::QMode;
use crate::config::{parse_config, RunConfig};
use crate::harness::{self, Policy};
use crate::nn::{self, NetworkSpec};

const EXIT_RUNTIME: i32 = 1;
const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "specseek", version, about = "Train and evaluate radio band search agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent; writes metrics.csv and checkpoint.ckpt into the output directory.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Evaluate a fixed baseline policy.
    Baseline(BaselineArgs),
    /// Write one episode's per-step trace.
    Trace(TraceArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SeedArg {
    /// RNG seed; falls back to SPECSEEK_SEED, then the config file, then 1.
    #[arg(long, env = "SPECSEEK_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to `out_dir` from the config file.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
    /// Total environment steps (overrides the config).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    policy: BaselinePolicy,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    policy: TracePolicy,
    /// Required with `--policy greedy`.
    #[arg(long, required_if_eq("policy", "greedy"))]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselinePolicy {
    Random,
    Scripted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TracePolicy {
    Random,
    Scripted,
    Greedy,
}

type CmdResult = Result<i32, String>;

/// Parse `args` (including the program name) and run the chosen subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(path: &PathBuf) -> Result<RunConfig, String> {
    parse_config(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn resolve_seed(arg: &SeedArg, cfg: &RunConfig) -> u64 {
    arg.seed.unwrap_or(cfg.seed)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    let Some(out_dir) = a.out_dir.clone().or_else(|| cfg.out_dir.clone()) else {
        eprintln!("error: --out-dir is required when the config does not set out_dir");
        return Ok(EXIT_USAGE);
    };
    if let Some(mode) = a.mode {
        cfg.agent.mode = match mode {
            ModeArg::Single => QMode::Single,
            ModeArg::Double => QMode::Double,
        };
    }
    let steps = a.steps.unwrap_or(cfg.total_env_steps);
    let seed = resolve_seed(&a.seed, &cfg);
    let out = harness::train(&cfg.env, &cfg.agent, &cfg.network, steps, seed, &out_dir).map_err(|e| e.to_string())?;
    println!("episodes: {}", out.rows.len());
    println!("final mean reward (last 100 episodes): {}", harness::fmt_g(out.final_mean_reward()));
    println!("checkpoint: {}", out.checkpoint.display());
    println!("metrics: {}", out.metrics.display());
    Ok(0)
}

fn spec_diff(ckpt: &NetworkSpec, cfg: &NetworkSpec) -> String {
    let mut diffs = Vec::new();
    if ckpt.n_bins != cfg.n_bins {
        diffs.push(format!("n_bins: checkpoint {} vs config {}", ckpt.n_bins, cfg.n_bins));
    }
    if ckpt.spectrum_path != cfg.spectrum_path {
        diffs.push(format!("conv_layers: checkpoint {:?} vs config {:?}", ckpt.spectrum_path, cfg.spectrum_path));
    }
    if ckpt.scalar_path != cfg.scalar_path {
        diffs.push(format!("scalar_layers: checkpoint {:?} vs config {:?}", ckpt.scalar_path, cfg.scalar_path));
    }
    if ckpt.head != cfg.head {
        diffs.push(format!("head_layers: checkpoint {:?} vs config {:?}", ckpt.head, cfg.head));
    }
    diffs.join("; ")
}

fn load_compatible(path: &PathBuf, cfg: &RunConfig) -> Result<nn::NetworkParams<f32>, String> {
    let (params, _) = nn::load_checkpoint(path).map_err(|e| e.to_string())?;
    if params.spec() != &cfg.network {
        return Err(format!(
            "checkpoint {} is incompatible with the config: {}",
            path.display(),
            spec_diff(params.spec(), &cfg.network)
        ));
    }
    Ok(params)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let params = load_compatible(&a.checkpoint, &cfg)?;
    let s = harness::evaluate(&params, &cfg.env, a.episodes as usize, resolve_seed(&a.seed, &cfg))
        .map_err(|e| e.to_string())?;
    println!("{}", s.to_csv());
    Ok(0)
}

fn cmd_baseline(a: BaselineArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let policy = match a.policy {
        BaselinePolicy::Random => Policy::Random,
        BaselinePolicy::Scripted => Policy::Scripted,
    };
    let s = harness::run_policy(&cfg.env, policy, a.episodes as usize, resolve_seed(&a.seed, &cfg))
        .map_err(|e| e.to_string())?;
    println!("{}", s.to_csv());
    Ok(0)
}

fn cmd_trace(a: TraceArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let params = match (&a.policy, &a.checkpoint) {
        (TracePolicy::Greedy, Some(p)) => Some(load_compatible(p, &cfg)?),
        _ => None,
    };
    let policy = match a.policy {
        TracePolicy::Random => Policy::Random,
        TracePolicy::Scripted => Policy::Scripted,
        TracePolicy::Greedy => Policy::Greedy(params.as_ref().expect("clap enforces --checkpoint")),
    };
    let file = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(&a.seed, &cfg));
    let stats = harness::run_episode(&cfg.env, policy, &mut rng, Some(&mut w)).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| format!("{}: {e}", a.out.display()))?;
    eprintln!("{} steps, total reward {}", stats.length, harness::fmt_g(stats.total_reward));
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut all_pass = true;
    for (name, spec) in nn::standard_cases() {
        let report = nn::gradcheck(&spec, &mut rng, a.tolerance).map_err(|e| e.to_string())?;
        for l in &report.layers {
            let ok = l.max_rel_err < a.tolerance;
            println!("{name},{},{},{:e},{}", l.name, l.checked, l.max_rel_err, if ok { "pass" } else { "FAIL" });
        }
        all_pass &= report.passed;
    }
    Ok(if all_pass { 0 } else { EXIT_RUNTIME })
}
