//! Reference scheduling policies and a Monte-Carlo evaluator shared by every
//! policy, learned or handcrafted.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{Environment, RewardModel, RngStream, StreamId};
use crate::error::{Error, Result};
use crate::state::{ActionVector, SystemState};
use crate::whittle::WhittleTable;

/// A (possibly randomised) stationary scheduling rule.
pub trait SchedulingPolicy {
    fn name(&self) -> &str;

    /// Joint action for the current state. Must respect `b_m > 0 => a_m = 0`.
    fn act(&mut self, state: &SystemState, rng: &mut RngStream) -> Result<ActionVector>;
}

/// Never schedules anything.
#[derive(Debug, Clone, Default)]
pub struct DoNothing;

impl SchedulingPolicy for DoNothing {
    fn name(&self) -> &str {
        "do-nothing"
    }

    fn act(&mut self, state: &SystemState, _rng: &mut RngStream) -> Result<ActionVector> {
        Ok(ActionVector::idle(state.num_channels()))
    }
}

/// Every free channel picks uniformly among idling, an unserved monitor and
/// any traditional device.
#[derive(Debug, Clone)]
pub struct RandomFeasible {
    num_monitors: usize,
    num_traffics: usize,
}

impl RandomFeasible {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            num_monitors: cfg.num_monitors(),
            num_traffics: cfg.num_traffics(),
        }
    }
}

impl SchedulingPolicy for RandomFeasible {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, state: &SystemState, rng: &mut RngStream) -> Result<ActionVector> {
        let mut taken = vec![false; self.num_monitors];
        let mut out = vec![0; state.num_channels()];
        for (m, a) in out.iter_mut().enumerate() {
            if state.release[m] > 0 {
                continue;
            }
            let choices: Vec<usize> = std::iter::once(0)
                .chain((1..=self.num_monitors).filter(|&i| !taken[i - 1]))
                .chain(self.num_monitors + 1..=self.num_monitors + self.num_traffics)
                .collect();
            *a = choices[rng.gen_range(0..choices.len())];
            if (1..=self.num_monitors).contains(a) {
                taken[*a - 1] = true;
            }
        }
        Ok(ActionVector(out))
    }
}

/// Monitors sorted by score (descending), ties to the lower device id.
pub fn rank_monitors(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Assigns the free channels, in channel order, to the ranked monitors.
fn serve_ranked(state: &SystemState, ranking: &[usize]) -> ActionVector {
    let mut next = ranking.iter();
    ActionVector(
        state
            .release
            .iter()
            .map(|&b| if b == 0 { next.next().map_or(0, |&i| i + 1) } else { 0 })
            .collect(),
    )
}

/// Free channels serve the monitors with the largest `w_i x_i`. A stand-in
/// for age-based schedulers; it never serves traditional traffic.
#[derive(Debug, Clone)]
pub struct AoiGreedy {
    weights: Vec<f64>,
}

impl AoiGreedy {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            weights: cfg.monitors.iter().map(|p| p.weight).collect(),
        }
    }
}

impl SchedulingPolicy for AoiGreedy {
    fn name(&self) -> &str {
        "aoi-greedy"
    }

    fn act(&mut self, state: &SystemState, _rng: &mut RngStream) -> Result<ActionVector> {
        let scores: Vec<f64> = self
            .weights
            .iter()
            .zip(&state.aoii)
            .map(|(w, &x)| w * x as f64)
            .collect();
        Ok(serve_ranked(state, &rank_monitors(&scores)))
    }
}

fn whittle_scores(table: &WhittleTable, state: &SystemState) -> Vec<f64> {
    state
        .aoii
        .iter()
        .enumerate()
        .map(|(i, &x)| table.index(i, x))
        .collect()
}

/// Free channels serve the monitors with the largest Whittle index.
#[derive(Debug, Clone)]
pub struct WhittleGreedy {
    table: Arc<WhittleTable>,
}

impl WhittleGreedy {
    pub fn new(table: Arc<WhittleTable>) -> Self {
        Self { table }
    }
}

impl SchedulingPolicy for WhittleGreedy {
    fn name(&self) -> &str {
        "whittle-greedy"
    }

    fn act(&mut self, state: &SystemState, _rng: &mut RngStream) -> Result<ActionVector> {
        Ok(serve_ranked(state, &rank_monitors(&whittle_scores(&self.table, state))))
    }
}

/// Handcrafted reference: each free channel either serves the best remaining
/// monitor or starts the traditional device with the best per-slot expected
/// weighted throughput `w_j ū / T_j`, whichever is larger when compared
/// against the monitor's Whittle index.
#[derive(Debug, Clone)]
pub struct WhittleMyopic {
    table: Arc<WhittleTable>,
    rewards: RewardModel,
    durations: Vec<u32>,
    num_monitors: usize,
}

impl WhittleMyopic {
    pub fn new(cfg: &SystemConfig, table: Arc<WhittleTable>) -> Self {
        Self {
            table,
            rewards: RewardModel::new(cfg),
            durations: cfg.traffics.iter().map(|t| t.duration).collect(),
            num_monitors: cfg.num_monitors(),
        }
    }
}

impl SchedulingPolicy for WhittleMyopic {
    fn name(&self) -> &str {
        "whittle-myopic"
    }

    fn act(&mut self, state: &SystemState, _rng: &mut RngStream) -> Result<ActionVector> {
        let scores = whittle_scores(&self.table, state);
        let ranking = rank_monitors(&scores);
        let mut next = 0;
        let mut out = vec![0; state.num_channels()];
        for (m, a) in out.iter_mut().enumerate() {
            if state.release[m] > 0 {
                continue;
            }
            let traffic = (0..self.durations.len())
                .map(|j| {
                    let level = state.gains.get(j, m);
                    let v = self.rewards.traffic_weight(j) * self.rewards.expected_throughput(j, m, level)
                        / self.durations[j] as f64;
                    (j, v)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let monitor = ranking.get(next).map(|&i| (i, scores[i]));
            *a = match (monitor, traffic) {
                (Some((i, idx)), Some((j, v))) => {
                    if v > idx {
                        self.num_monitors + j + 1
                    } else {
                        next += 1;
                        i + 1
                    }
                }
                (Some((i, _)), None) => {
                    next += 1;
                    i + 1
                }
                (None, Some((j, _))) => self.num_monitors + j + 1,
                (None, None) => 0,
            };
        }
        Ok(ActionVector(out))
    }
}

/// Names accepted by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    WiMappo,
    AoiGreedy,
    WhittleGreedy,
    WhittleMyopic,
    Random,
    DoNothing,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::WiMappo,
        PolicyKind::AoiGreedy,
        PolicyKind::WhittleGreedy,
        PolicyKind::WhittleMyopic,
        PolicyKind::Random,
        PolicyKind::DoNothing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::WiMappo => "wi-mappo",
            PolicyKind::AoiGreedy => "aoi-greedy",
            PolicyKind::WhittleGreedy => "whittle-greedy",
            PolicyKind::WhittleMyopic => "whittle-myopic",
            PolicyKind::Random => "random",
            PolicyKind::DoNothing => "do-nothing",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{s}`")))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Builds one of the non-learned policies.
pub fn baseline(kind: PolicyKind, cfg: &SystemConfig, table: Option<Arc<WhittleTable>>) -> Result<Box<dyn SchedulingPolicy + Send>> {
    let need_table = || {
        table
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("policy `{kind}` needs a Whittle table")))
    };
    Ok(match kind {
        PolicyKind::DoNothing => Box::new(DoNothing),
        PolicyKind::Random => Box::new(RandomFeasible::new(cfg)),
        PolicyKind::AoiGreedy => Box::new(AoiGreedy::new(cfg)),
        PolicyKind::WhittleGreedy => Box::new(WhittleGreedy::new(need_table()?)),
        PolicyKind::WhittleMyopic => Box::new(WhittleMyopic::new(cfg, need_table()?)),
        PolicyKind::WiMappo => {
            return Err(Error::InvalidConfig("wi-mappo is a trained policy; load a checkpoint".into()))
        }
    })
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n;
        let se = if samples.len() > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

/// Per-episode averages pooled over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub horizon: usize,
    pub shaped_reward: Estimate,
    pub raw_reward: Estimate,
    /// Fraction of slots with zero AoII, averaged over monitors.
    pub accuracy: Estimate,
    pub throughput: Estimate,
}

/// Runs `episodes` independent episodes of `horizon` slots from a reset
/// state. Episode `k` uses stream index `k` for both the environment and the
/// policy, so two policies evaluated with the same seed face the same
/// environment randomness.
pub fn monte_carlo_eval(
    policy: &mut dyn SchedulingPolicy,
    cfg: &SystemConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    if episodes == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("episodes and horizon must be positive".into()));
    }
    let mut shaped = Vec::with_capacity(episodes);
    let mut raw = Vec::with_capacity(episodes);
    let mut acc = Vec::with_capacity(episodes);
    let mut thr = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        let mut env = Environment::with_stream_index(cfg.clone(), seed, ep)?;
        let mut rng = RngStream::new(seed, StreamId::Policy, ep);
        let (mut s, mut r, mut a, mut t) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..horizon {
            let action = policy.act(env.state(), &mut rng)?;
            let step = env.step(&action)?;
            s += step.shaped_reward;
            r += step.raw_reward;
            a += step.accuracy;
            t += step.throughput;
        }
        let h = horizon as f64;
        shaped.push(s / h);
        raw.push(r / h);
        acc.push(a / h);
        thr.push(t / h);
    }
    Ok(EvalMetrics {
        episodes,
        horizon,
        shaped_reward: Estimate::from_samples(&shaped),
        raw_reward: Estimate::from_samples(&raw),
        accuracy: Estimate::from_samples(&acc),
        throughput: Estimate::from_samples(&thr),
    })
}
