//! Whittle-index-assisted multi-agent scheduling of semantic (AoII) and
//! traditional traffic over shared channels.
//!
//! The crate is organised bottom-up: [`config`] and [`state`] describe the
//! system, [`env`] simulates it, [`whittle`] computes per-monitor indices,
//! [`nn`] and [`mappo`] train the channel agents, and [`oracle`] /
//! [`baselines`] provide reference solutions.

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod mappo;
pub mod nn;
pub mod oracle;
pub mod state;
pub mod whittle;

pub use baselines::{monte_carlo_eval, EvalMetrics, PolicyKind, SchedulingPolicy};
pub use config::{ChannelModel, GainChain, ProcessModel, SystemConfig, TrafficModel};
pub use env::{Environment, RewardModel, RngStream, StepResult, StreamId};
pub use error::{Error, Result};
pub use experiment::{load_spec, run_sweep, ExperimentSpec};
pub use mappo::{ActMode, Checkpoint, Hyperparams, Trainer, WiMappoPolicy};
pub use state::{feasible_mask, project_observation, ActionVector, AgentObservation, LevelMatrix, SystemState};
pub use whittle::{IndexGrid, SubProblem, ThresholdPolicy, WhittleTable};
