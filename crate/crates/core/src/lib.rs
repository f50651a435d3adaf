//! Radio band search simulator with deep Q-learning agents.

pub mod dsp;
pub mod env;
pub mod nn;
pub mod agent;
pub mod harness;
pub mod config;
pub mod cli;
