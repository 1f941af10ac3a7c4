//! System configuration: monitored processes, traditional traffic, channels
//! and their gain chains.
//!
//! Devices use the global numbering of the action space: monitoring devices
//! are `1..=I`, traditional devices are `I+1..=I+J`, and `0` means "start
//! nothing". Internally all vectors are 0-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// A monitored source: a symmetric Markov chain over `num_states` values that
/// stays put with probability `self_prob` and otherwise moves uniformly to one
/// of the other states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessModel {
    pub num_states: u32,
    pub self_prob: f64,
    pub weight: f64,
}

impl ProcessModel {
    pub fn new(num_states: u32, self_prob: f64, weight: f64) -> Self {
        Self {
            num_states,
            self_prob,
            weight,
        }
    }

    /// Probability of moving to one specific other state.
    pub fn cross_prob(&self) -> f64 {
        (1.0 - self.self_prob) / f64::from(self.num_states.saturating_sub(1).max(1))
    }

    /// Dense source transition matrix implied by `(p, q)`.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.num_states as usize;
        let q = self.cross_prob();
        (0..n)
            .map(|r| (0..n).map(|c| if r == c { self.self_prob } else { q }).collect())
            .collect()
    }

    fn violations(&self, idx: usize, out: &mut Vec<String>) {
        if self.num_states < 2 {
            out.push(format!("monitor {idx}: num_states must be >= 2, got {}", self.num_states));
        }
        if !(self.self_prob > 0.0 && self.self_prob < 1.0) {
            out.push(format!(
                "monitor {idx}: self_prob must lie in (0, 1), got {}",
                self.self_prob
            ));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            out.push(format!("monitor {idx}: weight must be finite and >= 0, got {}", self.weight));
        }
    }
}

/// Traditional (throughput) device: each transmission holds a channel for
/// `duration` consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    pub duration: u32,
    pub weight: f64,
}

impl TrafficModel {
    pub fn new(duration: u32, weight: f64) -> Self {
        Self { duration, weight }
    }
}

/// Finite-state Markov chain of channel gain values. Levels are stored
/// ascending; states are referred to by level index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainChainSpec", into = "GainChainSpec")]
pub struct GainChain {
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

/// On-disk description of a gain chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainChainSpec {
    /// `count` equally spaced levels `base, base+step, ...`; the chain stays
    /// with probability `stay` and moves to each neighbour with
    /// `(1 - stay) / 2`. At the ends the missing neighbour's mass is added to
    /// `stay`.
    Banded {
        base: f64,
        count: usize,
        #[serde(default = "default_step")]
        step: f64,
        stay: f64,
    },
    Explicit {
        levels: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

fn default_step() -> f64 {
    1.0
}

impl TryFrom<GainChainSpec> for GainChain {
    type Error = Error;

    fn try_from(spec: GainChainSpec) -> Result<Self> {
        match spec {
            GainChainSpec::Banded {
                base,
                count,
                step,
                stay,
            } => {
                if count == 0 {
                    return Err(Error::InvalidConfig("banded gain chain needs count >= 1".into()));
                }
                let levels = (0..count).map(|k| base + step * k as f64).collect();
                Ok(Self::banded_from_levels(levels, stay))
            }
            GainChainSpec::Explicit { levels, transition } => Ok(Self { levels, transition }),
        }
    }
}

impl From<GainChain> for GainChainSpec {
    fn from(chain: GainChain) -> Self {
        GainChainSpec::Explicit {
            levels: chain.levels,
            transition: chain.transition,
        }
    }
}

impl GainChain {
    /// Builds a chain from explicit levels and transition rows. No validation
    /// is performed; see [`GainChain::violations`].
    pub fn new(levels: Vec<f64>, transition: Vec<Vec<f64>>) -> Self {
        Self { levels, transition }
    }

    /// Single level, always stays.
    pub fn constant(gain: f64) -> Self {
        Self::new(vec![gain], vec![vec![1.0]])
    }

    /// Nearest-neighbour random walk with reflected boundary mass.
    pub fn banded(base: f64, count: usize, stay: f64) -> Self {
        let levels = (0..count).map(|k| base + k as f64).collect();
        Self::banded_from_levels(levels, stay)
    }

    pub fn banded_from_levels(levels: Vec<f64>, stay: f64) -> Self {
        let n = levels.len();
        let side = (1.0 - stay) / 2.0;
        let mut transition = vec![vec![0.0; n]; n];
        for (r, row) in transition.iter_mut().enumerate() {
            if n == 1 {
                row[0] = 1.0;
                continue;
            }
            row[r] = stay;
            if r > 0 {
                row[r - 1] += side;
            } else {
                row[r] += side;
            }
            if r + 1 < n {
                row[r + 1] += side;
            } else {
                row[r] += side;
            }
        }
        Self { levels, transition }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, idx: usize) -> f64 {
        self.levels[idx]
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.transition[idx]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn max_level(&self) -> f64 {
        self.levels.last().copied().unwrap_or(0.0)
    }

    fn violations(&self, label: &str, out: &mut Vec<String>) {
        if self.levels.is_empty() {
            out.push(format!("{label}: no gain levels"));
            return;
        }
        if self.levels.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            out.push(format!("{label}: gain levels must be finite and >= 0"));
        }
        if self.levels.windows(2).any(|w| w[0] > w[1]) {
            out.push(format!("{label}: gain levels must be sorted ascending"));
        }
        let n = self.levels.len();
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            out.push(format!("{label}: transition matrix must be {n}x{n}"));
            return;
        }
        for (r, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                out.push(format!("{label}: row {r} has entries outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!("{label}: row {r} sums to {sum}, not 1"));
            }
        }
    }
}

/// One OFDMA sub-channel: bandwidth and one gain chain per traditional device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub bandwidth: f64,
    pub gains: Vec<GainChain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub monitors: Vec<ProcessModel>,
    pub traffics: Vec<TrafficModel>,
    pub channels: Vec<ChannelModel>,
    /// Transmit power over noise power, `P/N`.
    #[serde(default = "default_snr")]
    pub snr: f64,
    pub discount: f64,
    #[serde(default = "default_log_base")]
    pub log_base: f64,
}

fn default_snr() -> f64 {
    1.0
}

fn default_log_base() -> f64 {
    2.0
}

/// List of violated invariants; empty iff the configuration is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self.violations.join("; ")))
        }
    }
}

impl SystemConfig {
    /// Number of monitoring devices, `I`.
    pub fn num_monitors(&self) -> usize {
        self.monitors.len()
    }

    /// Number of traditional devices, `J`.
    pub fn num_traffics(&self) -> usize {
        self.traffics.len()
    }

    /// Number of channels (agents), `M`.
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn gain_chain(&self, j: usize, m: usize) -> &GainChain {
        &self.channels[m].gains[j]
    }

    /// Largest `T_j - 1`, the bound on any channel release time.
    pub fn max_release(&self) -> u32 {
        self.traffics
            .iter()
            .map(|t| t.duration.saturating_sub(1))
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if self.monitors.is_empty() {
            v.push("at least one monitoring device is required".to_string());
        }
        if self.traffics.is_empty() {
            v.push("at least one traditional device is required".to_string());
        }
        if self.channels.is_empty() {
            v.push("at least one channel is required".to_string());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            v.push(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if !(self.snr.is_finite() && self.snr >= 0.0) {
            v.push(format!("snr must be finite and >= 0, got {}", self.snr));
        }
        if !(self.log_base.is_finite() && self.log_base > 1.0) {
            v.push(format!("log_base must be > 1, got {}", self.log_base));
        }
        for (i, m) in self.monitors.iter().enumerate() {
            m.violations(i, &mut v);
        }
        for (j, t) in self.traffics.iter().enumerate() {
            if t.duration < 1 {
                v.push(format!("traffic {j}: duration must be >= 1"));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                v.push(format!("traffic {j}: weight must be finite and >= 0"));
            }
        }
        let j = self.traffics.len();
        for (m, ch) in self.channels.iter().enumerate() {
            if !(ch.bandwidth.is_finite() && ch.bandwidth >= 0.0) {
                v.push(format!("channel {m}: bandwidth must be finite and >= 0"));
            }
            if ch.gains.len() != j {
                v.push(format!(
                    "channel {m}: expected {j} gain chains (one per traditional device), got {}",
                    ch.gains.len()
                ));
            }
            for (jj, chain) in ch.gains.iter().enumerate() {
                chain.violations(&format!("gain chain (traffic {jj}, channel {m})"), &mut v);
            }
        }
        ValidationReport { violations: v }
    }

    /// Scales every traditional-device weight by `factor`.
    pub fn with_traffic_weight_scale(&self, factor: f64) -> Self {
        let mut cfg = self.clone();
        for t in &mut cfg.traffics {
            t.weight *= factor;
        }
        cfg
    }
}
