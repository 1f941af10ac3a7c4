//! Exact dynamic programming on truncated finite MDPs: the single-monitor
//! sub-problem and tiny full systems.

use crate::config::SystemConfig;
use crate::env::RewardModel;
use crate::error::{Error, Result};
use crate::state::{ActionVector, LevelMatrix, SystemState};
use crate::whittle::SubProblem;

/// Default bound on `states x actions` for enumerated models.
pub const DEFAULT_SIZE_CAP: usize = 2_000_000;

/// Finite MDP with sparse transition rows. Rewards are maximised.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMdp {
    /// `actions[s]` lists the action labels available in state `s`.
    pub actions: Vec<Vec<usize>>,
    /// `transitions[s][k]` is the row for the `k`-th action of state `s`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
}

impl TruncatedMdp {
    pub fn num_states(&self) -> usize {
        self.actions.len()
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.transitions
            .iter()
            .flatten()
            .map(|row| (row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn q_value(&self, s: usize, k: usize, v: &[f64], discount: f64) -> f64 {
        self.rewards[s][k] + discount * self.transitions[s][k].iter().map(|&(t, p)| p * v[t]).sum::<f64>()
    }

    /// Best action slot for `s`; ties (within a relative 1e-12) go to the
    /// earliest slot.
    fn greedy(&self, s: usize, v: &[f64], discount: f64) -> (usize, f64) {
        let mut best = (0, self.q_value(s, 0, v, discount));
        for k in 1..self.actions[s].len() {
            let q = self.q_value(s, k, v, discount);
            if q > best.1 + 1e-12 * best.1.abs().max(1.0) {
                best = (k, q);
            }
        }
        best
    }
}

/// Greedy policy as action labels, one per state.
pub type Policy = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedSolution {
    pub values: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
}

/// Value iteration for the `discount`-discounted criterion, stopping once the
/// sup-norm Bellman residual is at most `tol`.
pub fn value_iteration(mdp: &TruncatedMdp, discount: f64, tol: f64, max_iter: usize) -> Result<DiscountedSolution> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidConfig(format!("discount must lie in (0, 1), got {discount}")));
    }
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            next[s] = mdp.greedy(s, &v, discount).1;
            residual = residual.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            let policy = (0..n).map(|s| mdp.actions[s][mdp.greedy(s, &v, discount).0]).collect();
            return Ok(DiscountedSolution {
                values: v,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        span: f64::NAN,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageSolution {
    /// Optimal long-run average reward.
    pub gain: f64,
    /// Relative values, pinned to 0 at state 0.
    pub bias: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
}

/// Relative value iteration for the average-reward criterion. Stops when the
/// span of `T h - h` is at most `tol`; the gain is the midpoint of its range.
pub fn relative_value_iteration(mdp: &TruncatedMdp, tol: f64, max_iter: usize) -> Result<AverageSolution> {
    let n = mdp.num_states();
    let mut h = vec![0.0; n];
    let mut th = vec![0.0; n];
    let mut span = f64::INFINITY;
    for it in 1..=max_iter {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..n {
            th[s] = mdp.greedy(s, &h, 1.0).1;
            let d = th[s] - h[s];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        let offset = th[0];
        for s in 0..n {
            h[s] = th[s] - offset;
        }
        if span <= tol {
            let policy = (0..n).map(|s| mdp.actions[s][mdp.greedy(s, &h, 1.0).0]).collect();
            return Ok(AverageSolution {
                gain: 0.5 * (lo + hi),
                bias: h,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        span,
    })
}

/// Which actions the sub-problem may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forced {
    Free,
    AlwaysIdle,
    AlwaysTransmit,
}

/// Single-monitor sub-problem on `x = 0..=x_max` with per-slot reward
/// `-(w x + a C)`; action label 1 transmits. The cap state loops onto itself
/// where it would otherwise grow.
pub fn subproblem_mdp(sp: &SubProblem, cost: f64, x_max: usize, forced: Forced) -> TruncatedMdp {
    let n = x_max + 1;
    let labels: &[usize] = match forced {
        Forced::Free => &[0, 1],
        Forced::AlwaysIdle => &[0],
        Forced::AlwaysTransmit => &[1],
    };
    let mut mdp = TruncatedMdp {
        actions: Vec::with_capacity(n),
        transitions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
    };
    for x in 0..n {
        let grow = (x + 1).min(x_max);
        let mut rows = Vec::new();
        let mut rewards = Vec::new();
        for &a in labels {
            let reset = if a == 1 || x == 0 { sp.p } else { sp.q };
            let row = if grow == 0 {
                vec![(0, 1.0)]
            } else {
                vec![(0, reset), (grow, 1.0 - reset)]
            };
            rows.push(row);
            rewards.push(-(sp.w * x as f64 + a as f64 * cost));
        }
        mdp.actions.push(labels.to_vec());
        mdp.transitions.push(rows);
        mdp.rewards.push(rewards);
    }
    mdp
}

/// If the sub-problem policy transmits exactly on `x >= x0` for some
/// `x0 >= 1`, returns `x0`; `Some(x_max + 1)` when it never transmits.
/// `None` if the policy is not of threshold type.
pub fn threshold_of(policy: &[usize]) -> Option<u32> {
    if policy.first() == Some(&1) {
        return None;
    }
    let x0 = policy.iter().position(|&a| a == 1).unwrap_or(policy.len());
    policy[x0..].iter().all(|&a| a == 1).then_some(x0 as u32)
}

/// Enumerated full system with AoII capped at `x_cap` and shaped rewards.
#[derive(Debug, Clone)]
pub struct SystemMdp {
    pub mdp: TruncatedMdp,
    pub states: Vec<SystemState>,
    /// All joint actions; `mdp.actions` refers to indices into this list.
    pub joint_actions: Vec<ActionVector>,
}

/// Builds the full-system MDP. Errors if `states x joint actions` exceeds
/// `size_cap`.
pub fn system_mdp(cfg: &SystemConfig, x_cap: u64, size_cap: usize) -> Result<SystemMdp> {
    cfg.validate().into_result()?;
    let (i_count, j_count, m_count) = (cfg.num_monitors(), cfg.num_traffics(), cfg.num_channels());
    let max_b = cfg.max_release();
    // mixed radix: x per monitor, level per (j, m), b per channel
    let mut radix: Vec<usize> = vec![x_cap as usize + 1; i_count];
    for j in 0..j_count {
        for m in 0..m_count {
            radix.push(cfg.gain_chain(j, m).num_levels());
        }
    }
    radix.extend(std::iter::repeat(max_b as usize + 1).take(m_count));
    let num_states = radix.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r));
    let num_devices = i_count + j_count;
    let per_channel = num_devices + 1;
    let max_actions = (0..m_count).try_fold(1usize, |acc, _| acc.checked_mul(per_channel));
    let size = num_states.zip(max_actions).and_then(|(s, a)| s.checked_mul(a));
    match size {
        Some(s) if s <= size_cap => {}
        other => {
            return Err(Error::StateSpaceTooLarge {
                size: other.unwrap_or(usize::MAX),
                cap: size_cap,
            })
        }
    }
    let num_states = num_states.expect("checked above");

    let decode = |mut idx: usize| -> Vec<usize> {
        radix
            .iter()
            .map(|&r| {
                let d = idx % r;
                idx /= r;
                d
            })
            .collect()
    };
    let encode = |digits: &[usize]| -> usize { digits.iter().zip(&radix).rev().fold(0, |acc, (&d, &r)| acc * r + d) };

    let mut joint_actions = Vec::new();
    let mut digits = vec![0usize; m_count];
    loop {
        joint_actions.push(ActionVector(digits.clone()));
        let mut k = 0;
        while k < m_count {
            digits[k] += 1;
            if digits[k] < per_channel {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        if k == m_count {
            break;
        }
    }

    let rewards_model = RewardModel::new(cfg);
    let mut states = Vec::with_capacity(num_states);
    let mut mdp = TruncatedMdp {
        actions: Vec::with_capacity(num_states),
        transitions: Vec::with_capacity(num_states),
        rewards: Vec::with_capacity(num_states),
    };
    for s in 0..num_states {
        let d = decode(s);
        let aoii: Vec<u64> = d[..i_count].iter().map(|&x| x as u64).collect();
        let mut gains = LevelMatrix::zeros(j_count, m_count);
        for j in 0..j_count {
            for m in 0..m_count {
                gains.set(j, m, d[i_count + j * m_count + m]);
            }
        }
        let release: Vec<u32> = d[i_count + j_count * m_count..].iter().map(|&b| b as u32).collect();
        let state = SystemState { aoii, gains, release };

        let mut labels = Vec::new();
        let mut rows = Vec::new();
        let mut rewards = Vec::new();
        for (k, action) in joint_actions.iter().enumerate() {
            if action.check_feasible(&state, num_devices).is_err() {
                continue;
            }
            labels.push(k);
            rewards.push(rewards_model.shaped(&state, action));
            rows.push(system_row(cfg, &state, action, x_cap, &radix, &encode)?);
        }
        mdp.actions.push(labels);
        mdp.transitions.push(rows);
        mdp.rewards.push(rewards);
        states.push(state);
    }
    Ok(SystemMdp {
        mdp,
        states,
        joint_actions,
    })
}

fn system_row(
    cfg: &SystemConfig,
    state: &SystemState,
    action: &ActionVector,
    x_cap: u64,
    radix: &[usize],
    encode: &dyn Fn(&[usize]) -> usize,
) -> Result<Vec<(usize, f64)>> {
    let i_count = cfg.num_monitors();
    let (j_count, m_count) = (cfg.num_traffics(), cfg.num_channels());
    // each component as a list of (digit, prob) outcomes
    let mut components: Vec<Vec<(usize, f64)>> = Vec::with_capacity(radix.len());
    for (i, (&x, model)) in state.aoii.iter().zip(&cfg.monitors).enumerate() {
        let tx = action.entries().contains(&(i + 1));
        let reset = if tx || x == 0 { model.self_prob } else { model.cross_prob() };
        let grow = (x + 1).min(x_cap) as usize;
        components.push(vec![(0, reset), (grow, 1.0 - reset)]);
    }
    for j in 0..j_count {
        for m in 0..m_count {
            let row = cfg.gain_chain(j, m).row(state.gains.get(j, m));
            components.push(row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(g, &p)| (g, p)).collect());
        }
    }
    for (&b, &a) in state.release.iter().zip(action.entries()) {
        let next = crate::env::step_release(b, a, &cfg.traffics, i_count)?;
        components.push(vec![(next as usize, 1.0)]);
    }
    let mut row: Vec<(Vec<usize>, f64)> = vec![(Vec::with_capacity(radix.len()), 1.0)];
    for comp in &components {
        let mut grown = Vec::with_capacity(row.len() * comp.len());
        for (digits, p) in &row {
            for &(d, q) in comp {
                let mut nd = digits.clone();
                nd.push(d);
                grown.push((nd, p * q));
            }
        }
        row = grown;
    }
    let mut out: Vec<(usize, f64)> = row.into_iter().map(|(d, p)| (encode(&d), p)).collect();
    out.sort_by_key(|&(s, _)| s);
    out.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    Ok(out)
}
