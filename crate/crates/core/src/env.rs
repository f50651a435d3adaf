//! The radio search environment.
//!
//! A single receiver tunes a center frequency and a power-of-two bandwidth
//! ladder over a fixed band while hidden tones sit at random frequencies.
//! Tuning dynamics are deterministic; only the spectrum observation is noisy.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::dsp::{self, DspError, NoiseSpec, ToneSpec, WindowSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error(transparent)]
    Dsp(#[from] DspError),
}

fn cfg_err(field: &'static str, reason: impl Into<String>) -> EnvError {
    EnvError::Config { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    A,
    B,
    C,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Scheme::A),
            "B" | "b" => Ok(Scheme::B),
            "C" | "c" => Ok(Scheme::C),
            other => Err(format!("unknown reward scheme '{other}' (expected A, B or C)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub fc_min: f64,
    pub fc_max: f64,
    pub bw_max: f64,
    pub bw_min: f64,
    pub n_bins: usize,
    pub snr_db: f64,
    pub n_signals: usize,
    pub max_steps: usize,
    pub scheme: Scheme,
    pub step_penalty: f64,
    /// Pin the hidden tones instead of drawing them at reset.
    pub fixed_signals: Option<Vec<f64>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            fc_min: 100e6,
            fc_max: 200e6,
            bw_max: 20e6,
            bw_min: 1.25e6,
            n_bins: 64,
            snr_db: 15.0,
            n_signals: 1,
            max_steps: 100,
            scheme: Scheme::A,
            step_penalty: 0.0,
            fixed_signals: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let finite = [
            ("fc_min", self.fc_min),
            ("fc_max", self.fc_max),
            ("bw_max", self.bw_max),
            ("bw_min", self.bw_min),
            ("snr_db", self.snr_db),
            ("step_penalty", self.step_penalty),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(cfg_err(name, format!("must be finite, got {v}")));
            }
        }
        if self.fc_min >= self.fc_max {
            return Err(cfg_err("fc_min", "must be below fc_max"));
        }
        if self.bw_min <= 0.0 {
            return Err(cfg_err("bw_min", "must be positive"));
        }
        if self.bw_min > self.bw_max {
            return Err(cfg_err("bw_min", format!("{} exceeds bw_max {}", self.bw_min, self.bw_max)));
        }
        let ratio = self.bw_max / self.bw_min;
        let levels = ratio.log2().round();
        if (2f64.powf(levels) * self.bw_min - self.bw_max).abs() > 1e-9 * self.bw_max {
            return Err(cfg_err("bw_min", format!("bw_max/bw_min = {ratio} is not a power of two")));
        }
        if self.fc_max - self.fc_min < self.bw_max {
            return Err(cfg_err("bw_max", "band is narrower than the maximum bandwidth"));
        }
        if self.fc_min <= 0.0 {
            return Err(cfg_err("fc_min", "windows must stay at positive frequencies"));
        }
        if self.n_bins < 8 || !self.n_bins.is_power_of_two() {
            return Err(cfg_err("n_bins", format!("must be a power of two >= 8, got {}", self.n_bins)));
        }
        if self.n_signals < 1 {
            return Err(cfg_err("n_signals", "at least one signal is required"));
        }
        if self.max_steps < 1 {
            return Err(cfg_err("max_steps", "must be at least 1"));
        }
        if let Some(sigs) = &self.fixed_signals {
            if sigs.len() != self.n_signals {
                return Err(cfg_err(
                    "signals",
                    format!("{} fixed signals given but n_signals = {}", sigs.len(), self.n_signals),
                ));
            }
            if let Some(f) = sigs.iter().find(|f| !(**f >= self.fc_min && **f <= self.fc_max)) {
                return Err(cfg_err("signals", format!("{f} lies outside the band")));
            }
        }
        Ok(())
    }

    /// Number of halvings between `bw_max` and `bw_min`.
    pub fn depth_max(&self) -> u32 {
        (self.bw_max / self.bw_min).log2().round() as u32
    }

    /// Zoom depth `log2(bw_max / bw)` for a bandwidth on the ladder.
    pub fn depth_of(&self, bw: f64) -> u32 {
        (self.bw_max / bw).log2().round() as u32
    }

    pub fn center(&self) -> f64 {
        (self.fc_min + self.fc_max) / 2.0
    }

    pub fn clamp_fc(&self, fc: f64, bw: f64) -> f64 {
        fc.clamp(self.fc_min + bw / 2.0, self.fc_max - bw / 2.0)
    }

    pub fn noise(&self) -> Result<NoiseSpec, EnvError> {
        Ok(NoiseSpec::from_snr_db(self.snr_db, TONE_AMPLITUDE)?)
    }
}

pub const TONE_AMPLITUDE: f64 = 1.0;

/// The seven discrete receiver actions, in code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    FreqDown = 0,
    FreqUp = 1,
    BwDownLeft = 2,
    BwDownRight = 3,
    BwMax = 4,
    Detect = 5,
    Finish = 6,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] = [
        Action::FreqDown,
        Action::FreqUp,
        Action::BwDownLeft,
        Action::BwDownRight,
        Action::BwMax,
        Action::Detect,
        Action::Finish,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Action> {
        Self::ALL.get(code).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    DetectTrue,
    DetectFalse,
    BwTrue,
    BwFalse,
    FinishTrue,
    FinishFalse,
    Move,
}

impl Event {
    pub const ALL: [Event; 7] = [
        Event::DetectTrue,
        Event::DetectFalse,
        Event::BwTrue,
        Event::BwFalse,
        Event::FinishTrue,
        Event::FinishFalse,
        Event::Move,
    ];
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Event::DetectTrue => "DetectTrue",
            Event::DetectFalse => "DetectFalse",
            Event::BwTrue => "BwTrue",
            Event::BwFalse => "BwFalse",
            Event::FinishTrue => "FinishTrue",
            Event::FinishFalse => "FinishFalse",
            Event::Move => "Move",
        };
        f.write_str(s)
    }
}

/// Tuner state plus the hidden scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioState {
    pub fc: f64,
    pub bw: f64,
    pub signals: Vec<f64>,
    pub found: Vec<bool>,
    pub steps: usize,
    pub done: bool,
    /// Zoom depth at which each signal was detected; meaningful where `found`.
    pub detect_depths: Vec<u32>,
    /// Deepest zoom depth already rewarded for each signal. A bandwidth
    /// reduction earns `BwTrue` only by going deeper than this on an unfound
    /// signal, so zooming out and back in cannot be repeated for reward.
    pub zoom_credit: Vec<u32>,
}

impl RadioState {
    pub fn window(&self, n_bins: usize) -> WindowSpec {
        WindowSpec { fc: self.fc, bw: self.bw, n_bins }
    }

    pub fn contains(&self, freq: f64) -> bool {
        (freq - self.fc).abs() <= self.bw / 2.0
    }

    pub fn n_found(&self) -> usize {
        self.found.iter().filter(|&&f| f).count()
    }

    pub fn all_found(&self) -> bool {
        self.found.iter().all(|&f| f)
    }
}

/// What the agent sees: a normalized spectrum and the two tuner scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub spectrum: Vec<f32>,
    pub fc_norm: f32,
    pub bw_norm: f32,
}

impl Observation {
    pub fn scalars(&self) -> [f32; 2] {
        [self.fc_norm, self.bw_norm]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub event: Event,
}

fn draw_signals<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Vec<f64> {
    match &cfg.fixed_signals {
        Some(s) => s.clone(),
        None => (0..cfg.n_signals).map(|_| rng.random_range(cfg.fc_min..=cfg.fc_max)).collect(),
    }
}

/// Initial state: band center, full bandwidth, fresh hidden tones.
pub fn initial_state(cfg: &EnvConfig, signals: Vec<f64>) -> RadioState {
    let n = signals.len();
    RadioState {
        fc: cfg.clamp_fc(cfg.center(), cfg.bw_max),
        bw: cfg.bw_max,
        signals,
        found: vec![false; n],
        steps: 0,
        done: false,
        detect_depths: vec![0; n],
        zoom_credit: vec![0; n],
    }
}

pub fn reset<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<(RadioState, Observation), EnvError> {
    cfg.validate()?;
    let signals = draw_signals(cfg, rng);
    let state = initial_state(cfg, signals);
    let obs = observe(&state, cfg, rng)?;
    Ok((state, obs))
}

/// Render the current window as an observation with a fresh noise draw.
pub fn observe<R: Rng + ?Sized>(state: &RadioState, cfg: &EnvConfig, rng: &mut R) -> Result<Observation, EnvError> {
    let window = state.window(cfg.n_bins);
    let tones: Vec<ToneSpec> = state
        .signals
        .iter()
        .map(|&freq| ToneSpec { freq, amplitude: TONE_AMPLITUDE })
        .collect();
    let x = dsp::synth_baseband(&window, &tones, &cfg.noise()?, rng)?;
    let p = dsp::periodogram(&x)?;
    let spectrum = dsp::normalize_psd(&p).into_iter().map(|v| v as f32).collect();
    let depth_max = cfg.depth_max();
    let bw_norm = if depth_max == 0 {
        0.0
    } else {
        cfg.depth_of(state.bw) as f64 / depth_max as f64
    };
    Ok(Observation {
        spectrum,
        fc_norm: ((state.fc - cfg.fc_min) / (cfg.fc_max - cfg.fc_min)) as f32,
        bw_norm: bw_norm as f32,
    })
}

/// Tuning dynamics only: found flags, counters and the done flag are untouched.
pub fn apply_action(state: &RadioState, action: Action, cfg: &EnvConfig) -> Result<RadioState, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    let mut next = state.clone();
    match action {
        Action::FreqDown => next.fc -= next.bw / 2.0,
        Action::FreqUp => next.fc += next.bw / 2.0,
        Action::BwDownLeft => {
            next.bw = (next.bw / 2.0).max(cfg.bw_min);
            next.fc -= next.bw / 2.0;
        }
        Action::BwDownRight => {
            next.bw = (next.bw / 2.0).max(cfg.bw_min);
            next.fc += next.bw / 2.0;
        }
        Action::BwMax => next.bw = cfg.bw_max,
        Action::Detect | Action::Finish => {}
    }
    next.fc = cfg.clamp_fc(next.fc, next.bw);
    Ok(next)
}

/// Classify what `action` achieved and update the found/credit bookkeeping
/// in `after` accordingly.
pub fn classify_event(before: &RadioState, action: Action, mut after: RadioState, cfg: &EnvConfig) -> (Event, RadioState) {
    let event = match action {
        Action::Detect => {
            let hit = (0..before.signals.len()).find(|&i| !before.found[i] && before.contains(before.signals[i]));
            match hit {
                Some(i) => {
                    after.found[i] = true;
                    after.detect_depths[i] = cfg.depth_of(before.bw);
                    Event::DetectTrue
                }
                None => Event::DetectFalse,
            }
        }
        Action::BwDownLeft | Action::BwDownRight => {
            let depth = cfg.depth_of(after.bw);
            let mut credited = false;
            for i in 0..after.signals.len() {
                if !after.found[i] && after.contains(after.signals[i]) && depth > after.zoom_credit[i] {
                    after.zoom_credit[i] = depth;
                    credited = true;
                }
            }
            if credited {
                Event::BwTrue
            } else {
                Event::BwFalse
            }
        }
        Action::Finish => {
            if after.all_found() {
                Event::FinishTrue
            } else {
                Event::FinishFalse
            }
        }
        Action::FreqDown | Action::FreqUp | Action::BwMax => Event::Move,
    };
    (event, after)
}

/// Reward table for each scheme, plus the per-step offset.
pub fn reward(event: Event, after: &RadioState, cfg: &EnvConfig) -> f64 {
    let base = match cfg.scheme {
        Scheme::A => match event {
            Event::DetectTrue | Event::BwTrue | Event::FinishTrue => 1.0,
            _ => 0.0,
        },
        Scheme::B => match event {
            Event::DetectTrue | Event::BwTrue | Event::FinishTrue => 1.0,
            Event::DetectFalse | Event::FinishFalse => -1.0,
            _ => 0.0,
        },
        Scheme::C => match event {
            Event::FinishTrue => after
                .found
                .iter()
                .zip(&after.detect_depths)
                .filter(|(f, _)| **f)
                .map(|(_, &d)| d as f64)
                .sum(),
            _ => 0.0,
        },
    };
    base + cfg.step_penalty
}

/// Deterministic part of a step: dynamics, classification, reward and termination.
pub fn transition(state: &RadioState, action: Action, cfg: &EnvConfig) -> Result<(RadioState, Event, f64), EnvError> {
    let moved = apply_action(state, action, cfg)?;
    let (event, mut next) = classify_event(state, action, moved, cfg);
    let r = reward(event, &next, cfg);
    next.steps += 1;
    next.done = action == Action::Finish || next.steps >= cfg.max_steps;
    Ok((next, event, r))
}

pub fn step<R: Rng + ?Sized>(
    state: &RadioState,
    action: Action,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<(RadioState, StepResult), EnvError> {
    let (next, event, reward) = transition(state, action, cfg)?;
    let obs = observe(&next, cfg, rng)?;
    let done = next.done;
    Ok((next, StepResult { obs, reward, done, event }))
}
