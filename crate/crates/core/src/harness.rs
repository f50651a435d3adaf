//! Episode runner, training loop, baselines, evaluation and metrics output.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{select_action, Agent, AgentConfig, AgentError, ReplayBuffer, Transition};
use crate::env::{self, Action, EnvConfig, EnvError, Event, Observation, RadioState};
use crate::nn::{self, CheckpointError, NetworkParams, NetworkSpec, NnError};

/// Environment steps between periodic checkpoints during training.
pub const CHECKPOINT_EVERY: u64 = 10_000;
/// Normalized-bin level above which the scripted scanner declares a detection.
pub const SCRIPTED_THRESHOLD: f32 = 2.2;

pub const METRICS_HEADER: &str =
    "episode,steps,total_reward,detect_tp,detect_fp,finish_correct,mean_loss,mean_max_q,mean_min_q,epsilon";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub length: usize,
    pub detect_tp: usize,
    pub detect_fp: usize,
    pub finish_correct: bool,
    pub final_depth: u32,
}

impl EpisodeStats {
    fn record(&mut self, event: Event, reward: f64) {
        self.total_reward += reward;
        self.length += 1;
        match event {
            Event::DetectTrue => self.detect_tp += 1,
            Event::DetectFalse => self.detect_fp += 1,
            Event::FinishTrue => self.finish_correct = true,
            _ => {}
        }
    }
}

/// Fixed sweep: pan down to the lower band edge, then up to the upper edge,
/// looking at each window along the way. The first window whose peak bin
/// clears the threshold gets a Detect, and the episode ends with Finish.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    threshold: f32,
    left_norm: f32,
    right_norm: f32,
    phase: ScanPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScanPhase {
    Down,
    Up,
    Detected,
}

impl ScriptedPolicy {
    pub fn new(cfg: &EnvConfig) -> Self {
        Self::with_threshold(cfg, SCRIPTED_THRESHOLD)
    }

    pub fn with_threshold(cfg: &EnvConfig, threshold: f32) -> Self {
        let span = cfg.fc_max - cfg.fc_min;
        Self {
            threshold,
            left_norm: (cfg.bw_max / 2.0 / span) as f32,
            right_norm: ((span - cfg.bw_max / 2.0) / span) as f32,
            phase: ScanPhase::Down,
        }
    }

    pub fn act(&mut self, obs: &Observation) -> Action {
        const EDGE_TOL: f32 = 1e-6;
        if self.phase == ScanPhase::Detected {
            return Action::Finish;
        }
        let peak = obs.spectrum.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if peak > self.threshold {
            self.phase = ScanPhase::Detected;
            return Action::Detect;
        }
        if self.phase == ScanPhase::Down {
            if obs.fc_norm > self.left_norm + EDGE_TOL {
                return Action::FreqDown;
            }
            self.phase = ScanPhase::Up;
        }
        if obs.fc_norm < self.right_norm - EDGE_TOL {
            Action::FreqUp
        } else {
            Action::Finish
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// ε = 0 rollout of a trained network.
    Greedy(&'a NetworkParams<f32>),
    Random,
    Scripted,
}

/// Reset, then act until the episode ends. Each step optionally writes a
/// tab-separated trace line: step, action code, fc, bw, event, reward, done.
pub fn run_episode<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    policy: Policy<'_>,
    rng: &mut R,
    mut trace: Option<&mut dyn Write>,
) -> Result<EpisodeStats, HarnessError> {
    if let Policy::Greedy(p) = policy {
        check_compatible(p.spec(), cfg)?;
    }
    let (mut state, mut obs) = env::reset(cfg, rng)?;
    let mut scripted = ScriptedPolicy::new(cfg);
    let mut stats = EpisodeStats {
        total_reward: 0.0,
        length: 0,
        detect_tp: 0,
        detect_fp: 0,
        finish_correct: false,
        final_depth: 0,
    };
    while !state.done {
        let action = match policy {
            Policy::Greedy(p) => {
                let q = nn::forward(p, &obs.spectrum, &obs.scalars())?.0;
                Action::from_code(nn::argmax(&q)).expect("action code in range")
            }
            Policy::Random => Action::from_code(rng.random_range(0..Action::COUNT)).expect("action code in range"),
            Policy::Scripted => scripted.act(&obs),
        };
        let (next, res) = env::step(&state, action, cfg, rng)?;
        stats.record(res.event, res.reward);
        if let Some(w) = trace.as_deref_mut() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                next.steps,
                action.code(),
                next.fc,
                next.bw,
                res.event,
                res.reward,
                res.done as u8
            )
            .map_err(io_err(Path::new("<trace>")))?;
        }
        state = next;
        obs = res.obs;
    }
    stats.final_depth = cfg.depth_of(state.bw);
    Ok(stats)
}

/// Configuration error listing the difference between a network and the environment it is run on.
pub fn check_compatible(spec: &NetworkSpec, cfg: &EnvConfig) -> Result<(), HarnessError> {
    if spec.n_bins != cfg.n_bins {
        return Err(HarnessError::Config(format!(
            "network spec mismatch: checkpoint expects n_bins = {}, config has n_bins = {}",
            spec.n_bins, cfg.n_bins
        )));
    }
    Ok(())
}

/// Tuner state with the reward-only bookkeeping stripped: fc and bw in Hz
/// (exact on the half-pan lattice) and the found flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SearchKey {
    pub fc_hz: i64,
    pub bw_hz: i64,
    pub found: Vec<bool>,
}

impl SearchKey {
    pub fn of(s: &RadioState) -> Self {
        Self { fc_hz: s.fc.round() as i64, bw_hz: s.bw.round() as i64, found: s.found.clone() }
    }
}

/// Shortest action sequence from reset that ends in `FinishTrue`, found by
/// breadth-first search over the deterministic tuning dynamics. `None` when
/// it would not fit within `max_steps`.
pub fn optimal_episode_length(cfg: &EnvConfig, signals: &[f64]) -> Result<Option<usize>, HarnessError> {
    cfg.validate()?;
    let uncapped = EnvConfig { max_steps: usize::MAX, ..cfg.clone() };
    let start = env::initial_state(cfg, signals.to_vec());
    let mut seen: HashMap<SearchKey, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    seen.insert(SearchKey::of(&start), 0);
    queue.push_back((start, 0usize));
    while let Some((s, depth)) = queue.pop_front() {
        if depth + 1 > cfg.max_steps {
            return Ok(None);
        }
        // transition() never reads zoom credit, so dropping it merges equivalent states.
        let mut base = s.clone();
        base.steps = 0;
        for a in Action::ALL {
            let (next, event, _) = env::transition(&base, a, &uncapped)?;
            if event == Event::FinishTrue {
                return Ok(Some(depth + 1));
            }
            if a == Action::Finish {
                continue;
            }
            let key = SearchKey::of(&next);
            if !seen.contains_key(&key) {
                seen.insert(key, depth + 1);
                let mut n = next;
                n.done = false;
                queue.push_back((n, depth + 1));
            }
        }
    }
    Ok(None)
}

/// Full environment state as seen by the reward logic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphNode {
    pub fc_hz: i64,
    pub bw_hz: i64,
    pub found: Vec<bool>,
    pub zoom_credit: Vec<u32>,
    pub detect_depths: Vec<u32>,
}

impl GraphNode {
    pub fn of(s: &RadioState) -> Self {
        let detect_depths = s.found.iter().zip(&s.detect_depths).map(|(&f, &d)| if f { d } else { 0 }).collect();
        Self {
            fc_hz: s.fc.round() as i64,
            bw_hz: s.bw.round() as i64,
            found: s.found.clone(),
            zoom_credit: s.zoom_credit.clone(),
            detect_depths,
        }
    }
}

/// One edge of the reachable transition graph. Finish edges lead to `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphEdge {
    pub from: GraphNode,
    pub action: usize,
    pub to: Option<GraphNode>,
    pub event: String,
    pub reward_milli: i64,
}

/// Every transition reachable from reset, ignoring the step cap.
pub fn reachable_graph(cfg: &EnvConfig, signals: &[f64]) -> Result<Vec<GraphEdge>, HarnessError> {
    cfg.validate()?;
    let uncapped = EnvConfig { max_steps: usize::MAX, ..cfg.clone() };
    let start = env::initial_state(cfg, signals.to_vec());
    let mut seen = HashMap::new();
    let mut queue = VecDeque::new();
    seen.insert(GraphNode::of(&start), ());
    queue.push_back(start);
    let mut edges = Vec::new();
    while let Some(s) = queue.pop_front() {
        let from = GraphNode::of(&s);
        for a in Action::ALL {
            let (mut next, event, r) = env::transition(&s, a, &uncapped)?;
            let to = (a != Action::Finish).then(|| GraphNode::of(&next));
            if let Some(node) = &to {
                if seen.insert(node.clone(), ()).is_none() {
                    next.steps = 0;
                    queue.push_back(next);
                }
            }
            edges.push(GraphEdge {
                from: from.clone(),
                action: a.code(),
                to,
                event: event.to_string(),
                reward_milli: (r * 1000.0).round() as i64,
            });
        }
    }
    edges.sort();
    Ok(edges)
}

/// One CSV row per completed training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub detect_tp: usize,
    pub detect_fp: usize,
    pub finish_correct: bool,
    /// NaN when no gradient step happened during the episode.
    pub mean_loss: f64,
    pub mean_max_q: f64,
    pub mean_min_q: f64,
    pub epsilon: f64,
}

/// `%g` with 6 significant digits.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            fmt_g(self.total_reward),
            self.detect_tp,
            self.detect_fp,
            self.finish_correct as u8,
            fmt_g(self.mean_loss),
            fmt_g(self.mean_max_q),
            fmt_g(self.mean_min_q),
            fmt_g(self.epsilon)
        )
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{METRICS_HEADER}").map_err(io_err(path))?;
    for r in rows {
        writeln!(w, "{}", r.to_csv()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub agent: Agent,
}

impl TrainOutcome {
    /// Mean total reward over the last 100 completed episodes (NaN if none).
    pub fn final_mean_reward(&self) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(100)..];
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(|r| r.total_reward).sum::<f64>() / tail.len() as f64
        }
    }
}

#[derive(Default)]
struct EpisodeAccum {
    reward: f64,
    steps: usize,
    tp: usize,
    fp: usize,
    finish_correct: bool,
    loss_sum: f64,
    loss_n: usize,
    max_q_sum: f64,
    min_q_sum: f64,
}

/// ε-greedy data collection with replay training. Everything random flows
/// from one generator seeded with `seed`, so output files are reproducible
/// byte for byte.
pub fn train(
    env_cfg: &EnvConfig,
    agent_cfg: &AgentConfig,
    spec: &NetworkSpec,
    total_env_steps: u64,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainOutcome, HarnessError> {
    env_cfg.validate()?;
    agent_cfg.validate()?;
    check_compatible(spec, env_cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(agent_cfg.clone(), spec, &mut rng)?;
    let mut buffer = ReplayBuffer::new(agent_cfg.replay_capacity);
    let mut rows = Vec::new();
    let mut episode: Option<(RadioState, Observation)> = None;
    let mut acc = EpisodeAccum::default();

    for t in 1..=total_env_steps {
        let (state, obs) = match episode.take() {
            Some(e) => e,
            None => env::reset(env_cfg, &mut rng)?,
        };
        let q = agent.q_values(&obs)?;
        acc.max_q_sum += q.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        acc.min_q_sum += q.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let action = select_action(&q, agent_cfg.epsilon, &mut rng);
        let (next, res) = env::step(&state, action, env_cfg, &mut rng)?;
        acc.reward += res.reward;
        acc.steps += 1;
        match res.event {
            Event::DetectTrue => acc.tp += 1,
            Event::DetectFalse => acc.fp += 1,
            Event::FinishTrue => acc.finish_correct = true,
            _ => {}
        }
        buffer.push(Transition { s: obs, a: action, r: res.reward as f32, s_next: res.obs.clone(), done: res.done });
        if t % agent_cfg.train_every as u64 == 0 {
            if let Some(loss) = agent.train_step(&buffer, &mut rng)? {
                acc.loss_sum += loss as f64;
                acc.loss_n += 1;
            }
        }
        if res.done {
            let n = acc.steps as f64;
            let row = MetricsRow {
                episode: rows.len() + 1,
                steps: acc.steps,
                total_reward: acc.reward,
                detect_tp: acc.tp,
                detect_fp: acc.fp,
                finish_correct: acc.finish_correct,
                mean_loss: if acc.loss_n == 0 { f64::NAN } else { acc.loss_sum / acc.loss_n as f64 },
                mean_max_q: acc.max_q_sum / n,
                mean_min_q: acc.min_q_sum / n,
                epsilon: agent_cfg.epsilon,
            };
            writeln!(csv, "{}", row.to_csv()).map_err(io_err(&metrics_path))?;
            rows.push(row);
            acc = EpisodeAccum::default();
        } else {
            episode = Some((next, res.obs));
        }
        if t % CHECKPOINT_EVERY == 0 {
            nn::save_checkpoint(&agent.online, Some(&agent.adam), &ckpt_path)?;
            csv.flush().map_err(io_err(&metrics_path))?;
        }
    }
    nn::save_checkpoint(&agent.online, Some(&agent.adam), &ckpt_path)?;
    csv.flush().map_err(io_err(&metrics_path))?;
    Ok(TrainOutcome { rows, checkpoint: ckpt_path, metrics: metrics_path, agent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    /// Population standard deviation.
    pub std_reward: f64,
    pub mean_length: f64,
    /// tp / (tp + fp) pooled over all episodes; 0 when nothing was detected.
    pub detect_precision: f64,
    pub finish_accuracy: f64,
}

impl EvalSummary {
    pub fn from_stats(stats: &[EpisodeStats]) -> Self {
        let n = stats.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        let mean_reward = mean(&|s| s.total_reward);
        let var = mean(&|s| (s.total_reward - mean_reward).powi(2));
        let tp: usize = stats.iter().map(|s| s.detect_tp).sum();
        let fp: usize = stats.iter().map(|s| s.detect_fp).sum();
        Self {
            episodes: stats.len(),
            mean_reward,
            std_reward: var.sqrt(),
            mean_length: mean(&|s| s.length as f64),
            detect_precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
            finish_accuracy: mean(&|s| s.finish_correct as u8 as f64),
        }
    }

    /// `mean_reward,std_reward,mean_length,detect_precision,finish_accuracy`
    pub fn to_csv(&self) -> String {
        [self.mean_reward, self.std_reward, self.mean_length, self.detect_precision, self.finish_accuracy]
            .iter()
            .map(|&v| fmt_g(v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Run `n_episodes` independent episodes, episode `i` on a generator seeded
/// with `seed + i`. Episodes run in parallel; results do not depend on the
/// thread count.
pub fn run_policy(cfg: &EnvConfig, policy: Policy<'_>, n_episodes: usize, seed: u64) -> Result<EvalSummary, HarnessError> {
    if n_episodes == 0 {
        return Err(HarnessError::Config("at least one episode is required".into()));
    }
    cfg.validate()?;
    if let Policy::Greedy(p) = policy {
        check_compatible(p.spec(), cfg)?;
    }
    let stats = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            run_episode(cfg, policy, &mut rng, None)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalSummary::from_stats(&stats))
}

/// Greedy evaluation of trained parameters.
pub fn evaluate(params: &NetworkParams<f32>, cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalSummary, HarnessError> {
    run_policy(cfg, Policy::Greedy(params), n_episodes, seed)
}
