//! Slotted simulator: AoII, gain and release-time transitions, throughput and
//! the two reward forms.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{GainChain, ProcessModel, SystemConfig, TrafficModel};
use crate::error::{Error, Result};
use crate::state::{ActionVector, LevelMatrix, SystemState};

static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of rejected infeasible actions. Stays 0 on every
/// shipped code path.
pub fn violation_count() -> u64 {
    VIOLATIONS.load(Ordering::Relaxed)
}

/// Independent random streams. Each consumer of randomness draws from its own
/// stream so changing one model never perturbs another's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Process = 1,
    Gain = 2,
    Reset = 3,
    Policy = 4,
    Init = 5,
    Shuffle = 6,
}

/// Seeded ChaCha stream identified by `(seed, stream, index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((stream as u64) << 48) ^ index);
        Self { rng }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Inverse-CDF draw from a probability row given `u` in `[0, 1)`.
pub fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding: fall back to the last state with positive mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// One AoII transition for a single monitoring device.
pub fn step_aoii(x: u64, transmitted: bool, model: &ProcessModel, rng: &mut RngStream) -> u64 {
    let reset_prob = if transmitted || x == 0 {
        model.self_prob
    } else {
        model.cross_prob()
    };
    if rng.uniform() < reset_prob {
        0
    } else {
        x + 1
    }
}

/// Advances every gain entry independently along its own chain.
pub fn step_gains(gains: &LevelMatrix, cfg: &SystemConfig, rng: &mut RngStream) -> LevelMatrix {
    let mut next = gains.clone();
    for j in 0..gains.rows() {
        for m in 0..gains.cols() {
            let row = cfg.gain_chain(j, m).row(gains.get(j, m));
            next.set(j, m, sample_index(row, rng.uniform()));
        }
    }
    next
}

/// Release-time update of one channel. `action` uses the global device
/// numbering; `num_monitors` is `I`.
pub fn step_release(
    release: u32,
    action: usize,
    traffics: &[TrafficModel],
    num_monitors: usize,
) -> Result<u32> {
    if release > 0 {
        if action != 0 {
            VIOLATIONS.fetch_add(1, Ordering::Relaxed);
            return Err(Error::ConstraintViolation {
                channel: usize::MAX,
                release,
                action,
            });
        }
        return Ok(release - 1);
    }
    if action > num_monitors {
        let j = action - num_monitors - 1;
        let t = traffics.get(j).ok_or(Error::IndexOutOfRange {
            what: "traditional device",
            index: j,
            len: traffics.len(),
        })?;
        Ok(t.duration - 1)
    } else {
        Ok(0)
    }
}

/// `W log_base(1 + g P/N)`.
pub fn throughput(gain: f64, bandwidth: f64, snr: f64, log_base: f64) -> f64 {
    bandwidth * (1.0 + gain * snr).ln() / log_base.ln()
}

/// Expected throughput over the `T_j` slots of a transmission started now,
/// conditioned on the current gain level. Exact: propagates the one-hot level
/// distribution through the chain `T_j - 1` times.
pub fn expected_throughput(j: usize, m: usize, level: usize, cfg: &SystemConfig) -> f64 {
    let chain = cfg.gain_chain(j, m);
    let per_level = level_throughputs(chain, cfg.channels[m].bandwidth, cfg);
    let mut dist = vec![0.0; chain.num_levels()];
    dist[level] = 1.0;
    let mut total = 0.0;
    for step in 0..cfg.traffics[j].duration {
        if step > 0 {
            dist = propagate(&dist, chain);
        }
        total += dot(&dist, &per_level);
    }
    total
}

fn level_throughputs(chain: &GainChain, bandwidth: f64, cfg: &SystemConfig) -> Vec<f64> {
    chain
        .levels()
        .iter()
        .map(|&g| throughput(g, bandwidth, cfg.snr, cfg.log_base))
        .collect()
}

fn propagate(dist: &[f64], chain: &GainChain) -> Vec<f64> {
    let mut out = vec![0.0; dist.len()];
    for (from, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (to, &q) in chain.row(from).iter().enumerate() {
            out[to] += p * q;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Precomputed per-level throughput `u` and expected throughput `ū` for every
/// `(j, m)` pair, plus the device weights. Rewards are pure functions of this
/// table, the state and the action.
#[derive(Debug, Clone)]
pub struct RewardModel {
    num_monitors: usize,
    num_channels: usize,
    monitor_weights: Vec<f64>,
    traffic_weights: Vec<f64>,
    // indexed [j * M + m][level]
    u: Vec<Vec<f64>>,
    ubar: Vec<Vec<f64>>,
}

impl RewardModel {
    pub fn new(cfg: &SystemConfig) -> Self {
        let (j_count, m_count) = (cfg.num_traffics(), cfg.num_channels());
        let mut u = Vec::with_capacity(j_count * m_count);
        let mut ubar = Vec::with_capacity(j_count * m_count);
        for j in 0..j_count {
            for m in 0..m_count {
                let chain = cfg.gain_chain(j, m);
                u.push(level_throughputs(chain, cfg.channels[m].bandwidth, cfg));
                ubar.push(
                    (0..chain.num_levels())
                        .map(|g| expected_throughput(j, m, g, cfg))
                        .collect(),
                );
            }
        }
        Self {
            num_monitors: cfg.num_monitors(),
            num_channels: m_count,
            monitor_weights: cfg.monitors.iter().map(|p| p.weight).collect(),
            traffic_weights: cfg.traffics.iter().map(|t| t.weight).collect(),
            u,
            ubar,
        }
    }

    pub fn throughput(&self, j: usize, m: usize, level: usize) -> f64 {
        self.u[j * self.num_channels + m][level]
    }

    pub fn expected_throughput(&self, j: usize, m: usize, level: usize) -> f64 {
        self.ubar[j * self.num_channels + m][level]
    }

    pub fn traffic_weight(&self, j: usize) -> f64 {
        self.traffic_weights[j]
    }

    pub fn monitor_weight(&self, i: usize) -> f64 {
        self.monitor_weights[i]
    }

    /// `Σ_i w_i x_i`.
    pub fn weighted_aoii(&self, state: &SystemState) -> f64 {
        self.monitor_weights
            .iter()
            .zip(&state.aoii)
            .map(|(w, &x)| w * x as f64)
            .sum()
    }

    fn traffic_of(&self, action: usize) -> Option<usize> {
        (action > self.num_monitors).then(|| action - self.num_monitors - 1)
    }

    /// Reshaped reward: a starting transmission is credited its whole
    /// expected `T_j`-slot throughput up front.
    pub fn shaped(&self, state: &SystemState, action: &ActionVector) -> f64 {
        let mut r = -self.weighted_aoii(state);
        for (m, &a) in action.entries().iter().enumerate() {
            if let Some(j) = self.traffic_of(a) {
                r += self.traffic_weights[j] * self.expected_throughput(j, m, state.gains.get(j, m));
            }
        }
        r
    }

    /// Per-slot reward of the original formulation. `occupants[m]` names the
    /// traditional device holding channel `m` while `b_m > 0`, which together
    /// with `b` is the full reservation matrix. The start slot pays through
    /// the action indicator, the remaining `T_j - 1` slots through the
    /// reservation indicator.
    pub fn raw(&self, state: &SystemState, occupants: &[Option<usize>], action: &ActionVector) -> f64 {
        // same accumulation order as `shaped`, so the two agree bit for bit
        // when every duration is one slot
        self.serving(state, occupants, action)
            .fold(-self.weighted_aoii(state), |r, (j, m)| {
                r + self.traffic_weights[j] * self.throughput(j, m, state.gains.get(j, m))
            })
    }

    /// Unweighted throughput delivered in this slot.
    pub fn delivered_throughput(
        &self,
        state: &SystemState,
        occupants: &[Option<usize>],
        action: &ActionVector,
    ) -> f64 {
        self.serving(state, occupants, action)
            .map(|(j, m)| self.throughput(j, m, state.gains.get(j, m)))
            .sum()
    }

    fn serving<'a>(
        &'a self,
        state: &'a SystemState,
        occupants: &'a [Option<usize>],
        action: &'a ActionVector,
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        action.entries().iter().enumerate().filter_map(move |(m, &a)| {
            if let Some(j) = self.traffic_of(a) {
                Some((j, m))
            } else if state.release[m] > 0 {
                occupants[m].map(|j| (j, m))
            } else {
                None
            }
        })
    }
}

/// Shaped reward computed from scratch; prefer [`RewardModel::shaped`] in loops.
pub fn reward_shaped(state: &SystemState, action: &ActionVector, cfg: &SystemConfig) -> f64 {
    RewardModel::new(cfg).shaped(state, action)
}

/// Raw reward computed from scratch; see [`RewardModel::raw`].
pub fn reward_raw(
    state: &SystemState,
    occupants: &[Option<usize>],
    action: &ActionVector,
    cfg: &SystemConfig,
) -> f64 {
    RewardModel::new(cfg).raw(state, occupants, action)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: SystemState,
    /// `r̂(t)`, shared by every agent.
    pub shaped_reward: f64,
    /// `r(t)`, diagnostic.
    pub raw_reward: f64,
    /// Unweighted throughput delivered in the slot.
    pub throughput: f64,
    /// Fraction of monitors with zero AoII in the slot.
    pub accuracy: f64,
}

/// A single simulator instance. Owns its state and RNG streams.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: SystemConfig,
    rewards: RewardModel,
    state: SystemState,
    occupants: Vec<Option<usize>>,
    process_rng: RngStream,
    gain_rng: RngStream,
    reset_rng: RngStream,
    violations: u64,
}

impl Environment {
    pub fn new(cfg: SystemConfig, seed: u64) -> Result<Self> {
        Self::with_stream_index(cfg, seed, 0)
    }

    /// Environment whose streams are offset by `index` (e.g. one per
    /// evaluation episode).
    pub fn with_stream_index(cfg: SystemConfig, seed: u64, index: u64) -> Result<Self> {
        cfg.validate().into_result()?;
        let rewards = RewardModel::new(&cfg);
        let (i, j, m) = (cfg.num_monitors(), cfg.num_traffics(), cfg.num_channels());
        let mut env = Self {
            state: SystemState::reset(i, LevelMatrix::zeros(j, m)),
            occupants: vec![None; m],
            rewards,
            process_rng: RngStream::new(seed, StreamId::Process, index),
            gain_rng: RngStream::new(seed, StreamId::Gain, index),
            reset_rng: RngStream::new(seed, StreamId::Reset, index),
            violations: 0,
            cfg,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn rewards(&self) -> &RewardModel {
        &self.rewards
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn occupants(&self) -> &[Option<usize>] {
        &self.occupants
    }

    /// Infeasible actions rejected by this instance.
    pub fn violations(&self) -> u64 {
        self.violations
    }

    /// `x = 0`, `b = 0`, gains drawn uniformly over each chain's levels.
    pub fn reset(&mut self) -> &SystemState {
        let (j, m) = (self.cfg.num_traffics(), self.cfg.num_channels());
        let mut gains = LevelMatrix::zeros(j, m);
        for jj in 0..j {
            for mm in 0..m {
                let n = self.cfg.gain_chain(jj, mm).num_levels();
                gains.set(jj, mm, self.reset_rng.gen_range(0..n));
            }
        }
        self.state = SystemState::reset(self.cfg.num_monitors(), gains);
        self.occupants = vec![None; m];
        &self.state
    }

    /// Starts from an explicit state with no reservations attributed.
    pub fn set_state(&mut self, state: SystemState, occupants: Vec<Option<usize>>) -> Result<()> {
        state.check(&self.cfg)?;
        if occupants.len() != state.num_channels() {
            return Err(Error::DimensionMismatch {
                what: "occupants",
                expected: state.num_channels(),
                got: occupants.len(),
            });
        }
        self.state = state;
        self.occupants = occupants;
        Ok(())
    }

    /// Applies `action` to the current state. Rewards are evaluated on the
    /// pre-transition state and action.
    pub fn step(&mut self, action: &ActionVector) -> Result<StepResult> {
        let i_count = self.cfg.num_monitors();
        let num_devices = i_count + self.cfg.num_traffics();
        if let Err(e) = action.check_feasible(&self.state, num_devices) {
            if matches!(e, Error::ConstraintViolation { .. }) {
                VIOLATIONS.fetch_add(1, Ordering::Relaxed);
                self.violations += 1;
            }
            return Err(e);
        }
        let pre = &self.state;
        let shaped_reward = self.rewards.shaped(pre, action);
        let raw_reward = self.rewards.raw(pre, &self.occupants, action);
        let throughput = self.rewards.delivered_throughput(pre, &self.occupants, action);
        let accuracy = pre.aoii.iter().filter(|&&x| x == 0).count() as f64 / i_count as f64;

        let mut transmitted = vec![false; i_count];
        for &a in action.entries() {
            if (1..=i_count).contains(&a) {
                transmitted[a - 1] = true;
            }
        }
        let aoii = pre
            .aoii
            .iter()
            .zip(&self.cfg.monitors)
            .zip(&transmitted)
            .map(|((&x, model), &tx)| step_aoii(x, tx, model, &mut self.process_rng))
            .collect();
        let gains = step_gains(&pre.gains, &self.cfg, &mut self.gain_rng);
        let mut release = Vec::with_capacity(pre.release.len());
        let mut occupants = Vec::with_capacity(pre.release.len());
        for (m, (&b, &a)) in pre.release.iter().zip(action.entries()).enumerate() {
            let next = step_release(b, a, &self.cfg.traffics, i_count)?;
            let holder = if b > 0 {
                self.occupants[m]
            } else if a > i_count {
                Some(a - i_count - 1)
            } else {
                None
            };
            occupants.push(if next > 0 { holder } else { None });
            release.push(next);
        }
        self.state = SystemState {
            aoii,
            gains,
            release,
        };
        self.occupants = occupants;
        Ok(StepResult {
            next_state: self.state.clone(),
            shaped_reward,
            raw_reward,
            throughput,
            accuracy,
        })
    }
}

/// Writes per-slot trajectories as CSV: `t, x_1..x_I, b_1..b_M, a_1..a_M,
/// r_hat, r`.
pub struct TrajectoryWriter<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(inner: W, num_monitors: usize, num_channels: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        let mut header = vec!["t".to_string()];
        header.extend((1..=num_monitors).map(|i| format!("x_{i}")));
        header.extend((1..=num_channels).map(|m| format!("b_{m}")));
        header.extend((1..=num_channels).map(|m| format!("a_{m}")));
        header.push("r_hat".into());
        header.push("r".into());
        writer.write_record(&header)?;
        Ok(Self { writer })
    }

    pub fn record(
        &mut self,
        t: u64,
        state: &SystemState,
        action: &ActionVector,
        step: &StepResult,
    ) -> Result<()> {
        let mut row = vec![t.to_string()];
        row.extend(state.aoii.iter().map(u64::to_string));
        row.extend(state.release.iter().map(u32::to_string));
        row.extend(action.entries().iter().map(usize::to_string));
        row.push(step.shaped_reward.to_string());
        row.push(step.raw_reward.to_string());
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
