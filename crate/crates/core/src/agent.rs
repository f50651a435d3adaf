//! Q-learning agent: ε-greedy acting, experience replay, and single or
//! double Q-learning regression targets.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::env::{Action, Observation};
use crate::nn::{self, AdamState, NetworkParams, NetworkSpec, NnError, N_ACTIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay buffer holds {have} transitions, {need} requested")]
    Underflow { have: usize, need: usize },
    #[error("invalid agent config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("non-finite {0}")]
    Numeric(&'static str),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMode {
    Single,
    Double,
}

impl std::str::FromStr for QMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "single" => Ok(QMode::Single),
            "double" => Ok(QMode::Double),
            other => Err(format!("unknown mode '{other}' (expected single or double)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub mode: QMode,
    pub target_sync_period: u64,
    pub warmup: usize,
    pub train_every: usize,
    pub lr: f64,
    pub replay_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: 0.1,
            batch_size: 32,
            mode: QMode::Single,
            target_sync_period: 1000,
            warmup: 1000,
            train_every: 1,
            lr: 0.001,
            replay_capacity: 1_000_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let err = |field, reason: &str| Err(AgentError::Config { field, reason: reason.to_string() });
        if !(0.0..=1.0).contains(&self.epsilon) {
            return err("epsilon", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return err("gamma", "must lie in [0, 1)");
        }
        if self.batch_size < 1 {
            return err("batch_size", "must be at least 1");
        }
        if self.target_sync_period < 1 {
            return err("target_sync_period", "must be at least 1");
        }
        if self.train_every < 1 {
            return err("train_every", "must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return err("lr", "must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return err("replay_capacity", "must hold at least one batch");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub r: f32,
    pub s_next: Observation,
    pub done: bool,
}

/// Bounded FIFO of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>, AgentError> {
        if self.items.len() < batch_size {
            return Err(AgentError::Underflow { have: self.items.len(), need: batch_size });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Greedy with probability `1 - epsilon`, otherwise uniform over all actions.
pub fn select_action<R: Rng + ?Sized>(q: &[f32], epsilon: f64, rng: &mut R) -> Action {
    let explore = rng.random::<f64>() < epsilon;
    let code = if explore { rng.random_range(0..N_ACTIONS) } else { nn::argmax(q) };
    Action::from_code(code).expect("action code in range")
}

pub fn q_values(params: &NetworkParams<f32>, obs: &Observation) -> Result<Vec<f32>, NnError> {
    Ok(nn::forward(params, &obs.spectrum, &obs.scalars())?.0)
}

fn check_finite(q: &[f32]) -> Result<(), AgentError> {
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AgentError::Numeric("action values"))
    }
}

/// `Y = r + γ·max_a Q(s', a; θ)`, or `Y = r` on terminal transitions.
pub fn compute_targets_single(
    batch: &[&Transition],
    online: &NetworkParams<f32>,
    gamma: f64,
) -> Result<Vec<f32>, AgentError> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.r);
            }
            let q = q_values(online, &t.s_next)?;
            check_finite(&q)?;
            let best = q[nn::argmax(&q)];
            Ok((t.r as f64 + gamma * best as f64) as f32)
        })
        .collect()
}

/// `Y = r + γ·Q(s', argmax_a Q(s', a; θ); θ′)`, or `Y = r` on terminal transitions.
pub fn compute_targets_double(
    batch: &[&Transition],
    online: &NetworkParams<f32>,
    target: &NetworkParams<f32>,
    gamma: f64,
) -> Result<Vec<f32>, AgentError> {
    if online.spec() != target.spec() {
        return Err(AgentError::Config { field: "target", reason: "target network spec differs".into() });
    }
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.r);
            }
            let q_online = q_values(online, &t.s_next)?;
            check_finite(&q_online)?;
            let a_star = nn::argmax(&q_online);
            let q_target = q_values(target, &t.s_next)?;
            check_finite(&q_target)?;
            Ok((t.r as f64 + gamma * q_target[a_star] as f64) as f32)
        })
        .collect()
}

/// Mean squared TD error over the batch and its gradient. Only the taken
/// action's output receives gradient.
pub fn loss_and_gradient(
    params: &NetworkParams<f32>,
    batch: &[&Transition],
    targets: &[f32],
) -> Result<(f32, NetworkParams<f32>), AgentError> {
    let mut grads = params.zeros_like();
    let n = batch.len() as f32;
    let mut loss = 0.0f32;
    let mut dq = [0.0f32; N_ACTIONS];
    for (t, &y) in batch.iter().zip(targets) {
        let (q, cache) = nn::forward(params, &t.s.spectrum, &t.s.scalars())?;
        check_finite(&q)?;
        let a = t.a.code();
        let err = y - q[a];
        loss += err * err;
        dq.fill(0.0);
        dq[a] = -2.0 * err / n;
        nn::backward_into(params, &cache, &dq, &mut grads)?;
    }
    Ok((loss / n, grads))
}

/// Online network, optional target network and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub online: NetworkParams<f32>,
    pub target: Option<NetworkParams<f32>>,
    pub adam: AdamState<f32>,
    pub train_steps: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: AgentConfig, spec: &NetworkSpec, rng: &mut R) -> Result<Self, AgentError> {
        cfg.validate()?;
        let online = nn::init_network(spec, rng)?;
        Ok(Self::from_params(cfg, online))
    }

    pub fn from_params(cfg: AgentConfig, online: NetworkParams<f32>) -> Self {
        let target = (cfg.mode == QMode::Double).then(|| online.clone());
        let adam = AdamState::new(online.len(), cfg.lr);
        Self { cfg, online, target, adam, train_steps: 0 }
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f32>, NnError> {
        q_values(&self.online, obs)
    }

    pub fn compute_targets(&self, batch: &[&Transition]) -> Result<Vec<f32>, AgentError> {
        match &self.target {
            Some(target) => compute_targets_double(batch, &self.online, target, self.cfg.gamma),
            None => compute_targets_single(batch, &self.online, self.cfg.gamma),
        }
    }

    /// One gradient step on a replay batch. Returns the pre-update loss, or
    /// `None` when the buffer has not reached the warmup size yet.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f32>, AgentError> {
        if buffer.len() < self.cfg.warmup.max(self.cfg.batch_size) {
            return Ok(None);
        }
        self.train_steps += 1;
        if let Some(target) = self.target.as_mut() {
            if self.train_steps % self.cfg.target_sync_period == 0 {
                target.values.copy_from_slice(&self.online.values);
            }
        }
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        let targets = self.compute_targets(&batch)?;
        let (loss, grads) = loss_and_gradient(&self.online, &batch, &targets)?;
        nn::adam_step(&mut self.online, &grads, &mut self.adam)?;
        Ok(Some(loss))
    }
}
