//! Experiment specifications (TOML) and the weight-sweep driver producing
//! accuracy/throughput tradeoff tables.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline, monte_carlo_eval, EvalMetrics, PolicyKind};
use crate::config::{ChannelModel, GainChain, ProcessModel, SystemConfig, TrafficModel};
use crate::env::{RngStream, StreamId};
use crate::error::{Error, Result};
use crate::mappo::{ActMode, Hyperparams, Trainer};
use crate::whittle::{build_table, IndexGrid, WhittleTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub whittle: WhittleSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub episodes: usize,
    pub hyperparams: Hyperparams,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            episodes: 200,
            hyperparams: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhittleSpec {
    pub x_max: u64,
    pub delta_c: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub saturate: bool,
}

impl Default for WhittleSpec {
    fn default() -> Self {
        let g = IndexGrid::default();
        Self {
            x_max: 500,
            delta_c: g.delta_c,
            c_low: g.c_low,
            c_high: g.c_high,
            saturate: g.saturate,
        }
    }
}

impl WhittleSpec {
    pub fn grid(&self) -> IndexGrid {
        IndexGrid {
            delta_c: self.delta_c,
            c_low: self.c_low,
            c_high: self.c_high,
            saturate: self.saturate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub episodes: usize,
    pub horizon: usize,
    pub mode: ActMode,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            episodes: 20,
            horizon: 2000,
            mode: ActMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Factors applied to every traditional-device weight.
    pub multipliers: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            multipliers: vec![0.0, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<()> {
        self.system.validate().into_result()?;
        self.train.hyperparams.check()?;
        self.whittle.grid().check()?;
        let m = &self.sweep.multipliers;
        if m.is_empty() {
            return Err(Error::InvalidConfig("sweep multipliers must be non-empty".into()));
        }
        if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("sweep multipliers must be finite and >= 0".into()));
        }
        if m.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("sweep multipliers must be strictly increasing".into()));
        }
        if self.eval.episodes == 0 || self.eval.horizon == 0 {
            return Err(Error::InvalidConfig("eval episodes and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn build_table(&self) -> Result<WhittleTable> {
        build_table(&self.system.monitors, self.whittle.x_max, &self.whittle.grid())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Parses and validates a spec file. Syntax errors carry line and column.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    spec.check()?;
    Ok(spec)
}

/// One row of the tradeoff table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub policy: String,
    pub accuracy: f64,
    pub accuracy_se: f64,
    pub throughput: f64,
    pub throughput_se: f64,
    pub reward: f64,
    pub reward_se: f64,
}

impl SweepRow {
    pub fn new(multiplier: f64, policy: &str, m: &EvalMetrics) -> Self {
        Self {
            multiplier,
            policy: policy.to_string(),
            accuracy: m.accuracy.mean,
            accuracy_se: m.accuracy.se,
            throughput: m.throughput.mean,
            throughput_se: m.throughput.se,
            reward: m.shaped_reward.mean,
            reward_se: m.shaped_reward.se,
        }
    }
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Policies compared at every sweep point, in row order.
pub const SWEEP_POLICIES: [PolicyKind; 4] = [
    PolicyKind::WiMappo,
    PolicyKind::AoiGreedy,
    PolicyKind::WhittleGreedy,
    PolicyKind::Random,
];

/// Seed used for every evaluation so all policies and sweep points face the
/// same environment randomness.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Trains one policy per multiplier (in parallel, seeds `seed + k`) and
/// evaluates it alongside the baselines. Rows are ordered by multiplier, then
/// by [`SWEEP_POLICIES`].
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    spec.check()?;
    let table = Arc::new(spec.build_table()?);
    let eval = eval_seed(spec.seed);
    let per_point: Vec<Vec<SweepRow>> = spec
        .sweep
        .multipliers
        .par_iter()
        .enumerate()
        .map(|(k, &mult)| -> Result<Vec<SweepRow>> {
            let cfg = spec.system.with_traffic_weight_scale(mult);
            let mut rows = Vec::with_capacity(SWEEP_POLICIES.len());
            for kind in SWEEP_POLICIES {
                let metrics = if kind == PolicyKind::WiMappo {
                    let mut trainer = Trainer::new(
                        cfg.clone(),
                        spec.train.hyperparams.clone(),
                        Arc::clone(&table),
                        spec.seed.wrapping_add(k as u64),
                    )?;
                    trainer.train(spec.train.episodes, |_| {})?;
                    let mut policy = trainer.policy(spec.eval.mode);
                    monte_carlo_eval(&mut policy, &cfg, spec.eval.episodes, spec.eval.horizon, eval)?
                } else {
                    let mut policy = baseline(kind, &cfg, Some(Arc::clone(&table)))?;
                    monte_carlo_eval(policy.as_mut(), &cfg, spec.eval.episodes, spec.eval.horizon, eval)?
                };
                rows.push(SweepRow::new(mult, kind.as_str(), &metrics));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

/// The full-size setting: 90 monitors (60 with `p = 0.6`, 30 with
/// `p = 0.9`, ten-state processes), 10 traditional devices with durations
/// drawn from `1..=10`, 10 unit-bandwidth channels with ten-level banded
/// gains whose base is drawn from `0..=40`, all weights drawn from `{1, 2}`.
/// The random draws are fixed by `seed`.
pub fn paper_scale_spec(seed: u64) -> ExperimentSpec {
    let mut rng = RngStream::new(seed, StreamId::Init, 0);
    let weight = |rng: &mut RngStream| *[1.0, 2.0].choose(rng).expect("non-empty");
    let monitors = (0..90)
        .map(|i| ProcessModel::new(10, if i < 60 { 0.6 } else { 0.9 }, weight(&mut rng)))
        .collect();
    let traffics = (0..10)
        .map(|_| TrafficModel::new(rng.gen_range(1..=10), weight(&mut rng)))
        .collect();
    let channels = (0..10)
        .map(|_| ChannelModel {
            bandwidth: 1.0,
            gains: (0..10)
                .map(|_| GainChain::banded(rng.gen_range(0..=40) as f64, 10, 0.6))
                .collect(),
        })
        .collect();
    ExperimentSpec {
        seed,
        system: SystemConfig {
            monitors,
            traffics,
            channels,
            snr: 1.0,
            discount: 0.9,
            log_base: 2.0,
        },
        train: TrainSpec {
            episodes: 200,
            hyperparams: Hyperparams {
                batch_size: 4000,
                epochs: 80,
                ..Hyperparams::default()
            },
        },
        whittle: WhittleSpec::default(),
        eval: EvalSpec::default(),
        sweep: SweepSpec::default(),
    }
}

/// Desk-scale instance drawn from the same generative model as
/// [`paper_scale_spec`]: 6 monitors (3 with `p = 0.6`, 3 with `p = 0.9`),
/// traditional devices with `T = [1, 3]`, 2 channels with three-level banded
/// gains, weights from `{1, 2}`.
pub fn tiny_spec(seed: u64) -> ExperimentSpec {
    let mut rng = RngStream::new(seed, StreamId::Init, 0);
    let weight = |rng: &mut RngStream| *[1.0, 2.0].choose(rng).expect("non-empty");
    let monitors = (0..6)
        .map(|i| ProcessModel::new(10, if i < 3 { 0.6 } else { 0.9 }, weight(&mut rng)))
        .collect();
    let traffics = [1, 3].map(|t| TrafficModel::new(t, weight(&mut rng))).to_vec();
    let channels = (0..2)
        .map(|_| ChannelModel {
            bandwidth: 1.0,
            gains: (0..2)
                .map(|_| GainChain::banded(rng.gen_range(0..=40) as f64, 3, 0.6))
                .collect(),
        })
        .collect();
    ExperimentSpec {
        seed,
        system: SystemConfig {
            monitors,
            traffics,
            channels,
            snr: 1.0,
            discount: 0.9,
            log_base: 2.0,
        },
        train: TrainSpec {
            episodes: 200,
            hyperparams: Hyperparams {
                batch_size: 512,
                epochs: 10,
                hidden: vec![64, 64],
                minibatch_size: Some(64),
                reward_scale: 10.0,
                actor_optimizer: crate::nn::AdamConfig {
                    lr: 1e-3,
                    ..Default::default()
                },
                critic_optimizer: crate::nn::AdamConfig {
                    lr: 1e-3,
                    ..Default::default()
                },
                ..Hyperparams::default()
            },
        },
        whittle: WhittleSpec::default(),
        eval: EvalSpec::default(),
        sweep: SweepSpec::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_shape() {
        let s = paper_scale_spec(1);
        s.check().unwrap();
        assert_eq!(s.system.num_monitors(), 90);
        assert_eq!(s.system.monitors.iter().filter(|m| m.self_prob == 0.6).count(), 60);
        assert_eq!((s.system.num_traffics(), s.system.num_channels()), (10, 10));
        assert!(s.system.traffics.iter().all(|t| (1..=10).contains(&t.duration)));
        assert_eq!(s.train.hyperparams.hidden, vec![128, 128]);
        assert_eq!(s.whittle.grid(), IndexGrid::default());
    }

    #[test]
    fn sweep_grid_must_increase() {
        let mut s = paper_scale_spec(1);
        s.sweep.multipliers = vec![1.0, 1.0];
        assert!(s.check().is_err());
        s.sweep.multipliers = vec![];
        assert!(s.check().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = paper_scale_spec(3);
        let text = s.to_toml().unwrap();
        let back: ExperimentSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
