//! Whittle-guided multi-agent PPO. Each channel is an agent with its own
//! actor (sees `(x, g_m, b_m)`) and critic (sees the whole state). Actors pick
//! a coarse choice — a traditional device, "some monitor", or idle — and the
//! fusion step resolves "some monitor" to concrete devices by Whittle index.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{rank_monitors, SchedulingPolicy};
use crate::config::SystemConfig;
use crate::env::{sample_index, Environment, RngStream, StreamId, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::nn::{entropy, softmax, Activation, Adam, AdamConfig, ForwardCache, GradBuffer, Mlp};
use crate::state::{ActionVector, SystemState};
use crate::whittle::WhittleTable;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// `N_B`: slots collected per episode, one experience per agent per slot.
    pub batch_size: usize,
    /// `N_U`: passes over the buffer per update.
    pub epochs: usize,
    /// `ε`.
    pub clip: f64,
    /// `c1`.
    pub value_coef: f64,
    /// `c2`.
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    /// Standardise advantages per batch. Off keeps the loss literal.
    pub standardize_advantages: bool,
    /// Gradient steps per epoch use minibatches of this size; `None` is one
    /// full-batch step.
    pub minibatch_size: Option<usize>,
    /// AoII inputs are divided by this.
    pub aoii_scale: f64,
    /// Rewards are divided by this before computing returns. Does not change
    /// the optimal policy; keeps critic targets O(1).
    pub reward_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 4000,
            epochs: 80,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            actor_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            standardize_advantages: false,
            minibatch_size: None,
            aoii_scale: 50.0,
            reward_scale: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if let Some(mb) = self.minibatch_size {
            if mb == 0 || mb > self.batch_size {
                return bad(format!("minibatch_size must lie in 1..={}", self.batch_size));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("aoii_scale", self.aoii_scale),
            ("reward_scale", self.reward_scale),
            ("actor lr", self.actor_optimizer.lr),
            ("critic lr", self.critic_optimizer.lr),
        ] {
            if !v.is_finite() || v < 0.0 || (v == 0.0 && (name.ends_with("scale") || name.ends_with("lr"))) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// Maps states to normalised network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub aoii_scale: f64,
    pub release_scale: f64,
    /// `[j * M + m][level]` gain value over the chain's largest value.
    pub gain_values: Vec<Vec<f64>>,
    num_traffics: usize,
    num_channels: usize,
}

impl FeatureScale {
    pub fn new(cfg: &SystemConfig, aoii_scale: f64) -> Self {
        let (j_count, m_count) = (cfg.num_traffics(), cfg.num_channels());
        let mut gain_values = Vec::with_capacity(j_count * m_count);
        for j in 0..j_count {
            for m in 0..m_count {
                let chain = cfg.gain_chain(j, m);
                let max = chain.max_level();
                let norm = if max > 0.0 { max } else { 1.0 };
                gain_values.push(chain.levels().iter().map(|g| g / norm).collect());
            }
        }
        Self {
            aoii_scale,
            release_scale: cfg.max_release().max(1) as f64,
            gain_values,
            num_traffics: j_count,
            num_channels: m_count,
        }
    }

    /// `I + J + 1` inputs for agent `m`.
    pub fn actor_input(&self, state: &SystemState, m: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(state.aoii.len() + self.num_traffics + 1);
        v.extend(state.aoii.iter().map(|&x| x as f64 / self.aoii_scale));
        for j in 0..self.num_traffics {
            v.push(self.gain_values[j * self.num_channels + m][state.gains.get(j, m)]);
        }
        v.push(state.release[m] as f64 / self.release_scale);
        v
    }

    /// `I + JM + M` inputs for the critics.
    pub fn critic_input(&self, state: &SystemState) -> Vec<f64> {
        let mut v = Vec::with_capacity(state.aoii.len() + self.num_traffics * self.num_channels + self.num_channels);
        v.extend(state.aoii.iter().map(|&x| x as f64 / self.aoii_scale));
        for j in 0..self.num_traffics {
            for m in 0..self.num_channels {
                v.push(self.gain_values[j * self.num_channels + m][state.gains.get(j, m)]);
            }
        }
        v.extend(state.release.iter().map(|&b| b as f64 / self.release_scale));
        v
    }
}

/// One agent's record of one slot. `ppo_action` is 1-based: `1..=J` starts
/// traditional device `j`, `J+1` serves a monitor, `J+2` starts nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub critic_input: Vec<f64>,
    pub actor_input: Vec<f64>,
    pub ppo_action: usize,
    /// Behaviour probability of `ppo_action`. For occupied channels this is
    /// the actor's probability of idling, kept for diagnostics only.
    pub action_prob: f64,
    pub reward: f64,
    /// `b_m > 0` at collection time.
    pub occupied: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Buffer {
    capacity: usize,
    items: Vec<Experience>,
}

impl Buffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, e: Experience) {
        debug_assert!(self.items.len() < self.capacity);
        self.items.push(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn experiences(&self) -> &[Experience] {
        &self.items
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.items.iter().map(|e| e.reward).collect()
    }
}

impl FromIterator<Experience> for Buffer {
    fn from_iter<T: IntoIterator<Item = Experience>>(iter: T) -> Self {
        let items: Vec<Experience> = iter.into_iter().collect();
        Self {
            capacity: items.len(),
            items,
        }
    }
}

/// Samples a coarse choice for one agent. Busy channels are forced to idle.
/// Returns the 1-based choice and its probability under the actor.
pub fn actor_select(actor: &Mlp, input: &[f64], occupied: bool, rng: &mut RngStream) -> Result<(usize, f64)> {
    let probs = softmax(&actor.forward(input)?);
    let idle = probs.len();
    if occupied {
        return Ok((idle, probs[idle - 1]));
    }
    let k = sample_index(&probs, rng.uniform());
    if probs[k] <= 0.0 {
        return Err(Error::DegenerateDistribution {
            action: k + 1,
            prob: probs[k],
        });
    }
    Ok((k + 1, probs[k]))
}

/// Most likely coarse choice; ties go to the lowest index.
pub fn actor_greedy(actor: &Mlp, input: &[f64], occupied: bool) -> Result<usize> {
    let logits = actor.forward(input)?;
    if occupied {
        return Ok(logits.len());
    }
    let mut best = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = k;
        }
    }
    Ok(best + 1)
}

/// Resolves coarse choices into a joint action. Channels choosing "monitor"
/// get distinct monitors in decreasing Whittle-index order (lower id first
/// on ties); channels beyond the number of monitors idle.
pub fn wiac_fuse(state: &SystemState, ppo_actions: &[usize], table: &WhittleTable, num_traffics: usize) -> ActionVector {
    let num_monitors = state.aoii.len();
    let monitor_choice = num_traffics + 1;
    let ranking = if ppo_actions.contains(&monitor_choice) {
        let scores: Vec<f64> = state
            .aoii
            .iter()
            .enumerate()
            .map(|(i, &x)| table.index(i, x))
            .collect();
        rank_monitors(&scores)
    } else {
        Vec::new()
    };
    let mut next = ranking.iter();
    ActionVector(
        ppo_actions
            .iter()
            .map(|&a| {
                if (1..=num_traffics).contains(&a) {
                    num_monitors + a
                } else if a == monitor_choice {
                    next.next().map_or(0, |&i| i + 1)
                } else {
                    0
                }
            })
            .collect(),
    )
}

/// Discounted reward-to-go within the window, `V(t) = Σ_{τ≥t} α^{τ-t} r(τ)`,
/// without bootstrapping past the last slot.
pub fn compute_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *o = acc;
    }
    out
}

pub fn critic_values(critic: &Mlp, buffer: &Buffer) -> Result<Vec<f64>> {
    buffer
        .experiences()
        .iter()
        .map(|e| crate::nn::forward_critic(critic, &e.critic_input))
        .collect()
}

/// `A(t) = V(t) - V_θ(ŝ(t))` under the given (current) critic.
pub fn compute_advantages(returns: &[f64], critic: &Mlp, buffer: &Buffer) -> Result<Vec<f64>> {
    let values = critic_values(critic, buffer)?;
    check_len("returns", buffer.len(), returns.len())?;
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// Probability ratios of the current actor over the behaviour policy; fixed
/// at 1 on busy-channel slots.
pub fn compute_ratios(buffer: &Buffer, actor: &Mlp) -> Result<Vec<f64>> {
    buffer
        .experiences()
        .iter()
        .enumerate()
        .map(|(t, e)| {
            if e.occupied {
                return Ok(1.0);
            }
            if e.action_prob <= 0.0 {
                return Err(Error::CorruptBuffer { step: t, prob: e.action_prob });
            }
            let probs = softmax(&actor.forward(&e.actor_input)?);
            Ok(probs[e.ppo_action - 1] / e.action_prob)
        })
        .collect()
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Components of the averaged surrogate loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Mean over samples of `-min(R A, clip(R, 1-ε, 1+ε) A) + c1 (V - V_θ)^2 - c2 H(π)`.
pub fn surrogate_loss(
    ratios: &[f64],
    advantages: &[f64],
    returns: &[f64],
    values: &[f64],
    dists: &[Vec<f64>],
    hp: &Hyperparams,
) -> Result<LossTerms> {
    let n = ratios.len();
    check_len("advantages", n, advantages.len())?;
    check_len("returns", n, returns.len())?;
    check_len("values", n, values.len())?;
    check_len("distributions", n, dists.len())?;
    let mut terms = LossTerms::default();
    for t in 0..n {
        let (r, a) = (ratios[t], advantages[t]);
        let policy = -(r * a).min(clip(r, 1.0 - hp.clip, 1.0 + hp.clip) * a);
        let value = (returns[t] - values[t]).powi(2);
        let h = entropy(&dists[t]);
        let total = policy + hp.value_coef * value - hp.entropy_coef * h;
        // f64::min/max swallow NaN, so check the inputs too
        if !(total.is_finite() && r.is_finite() && a.is_finite()) {
            return Err(Error::NonFinite { what: "surrogate loss", index: t });
        }
        terms.policy += policy;
        terms.value += value;
        terms.entropy += h;
        terms.total += total;
    }
    let nf = n.max(1) as f64;
    terms.policy /= nf;
    terms.value /= nf;
    terms.entropy /= nf;
    terms.total /= nf;
    Ok(terms)
}

/// Gradient of one sample's actor terms with respect to the logits.
fn actor_logit_grad(probs: &[f64], action: usize, ratio: f64, adv: f64, occupied: bool, hp: &Hyperparams, out: &mut [f64]) {
    let h = entropy(probs);
    let k = action - 1;
    // the unclipped branch carries the gradient when it attains the minimum
    let unclipped = !occupied && ratio * adv <= clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv;
    for (i, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        let mut g = 0.0;
        if unclipped {
            let d = if i == k { 1.0 } else { 0.0 };
            g -= adv * ratio * (d - p);
        }
        if p > 0.0 {
            g += hp.entropy_coef * p * (p.ln() + h);
        }
        *o = g;
    }
}

/// One channel's actor and critic with their optimiser states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl Agent {
    pub fn new(cfg: &SystemConfig, hp: &Hyperparams, rng: &mut RngStream) -> Self {
        let (i, j, m) = (cfg.num_monitors(), cfg.num_traffics(), cfg.num_channels());
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&hp.hidden);
            s.push(output);
            s
        };
        let actor = Mlp::new(&sizes(i + j + 1, j + 2), hp.activation, rng);
        let critic = Mlp::new(&sizes(i + j * m + m, 1), hp.activation, rng);
        Self {
            actor_opt: Adam::new(&actor, hp.actor_optimizer),
            critic_opt: Adam::new(&critic, hp.critic_optimizer),
            actor,
            critic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss_mean: f64,
    pub entropy_mean: f64,
}

/// Surrogate loss of the samples `indices` (mean over them) and its exact
/// gradients, accumulated into `actor_grads` / `critic_grads`. Advantages are
/// treated as constants. Returns `(loss, mean entropy)`.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_gradients(
    actor: &Mlp,
    critic: &Mlp,
    items: &[Experience],
    indices: &[usize],
    returns: &[f64],
    advantages: &[f64],
    hp: &Hyperparams,
    actor_grads: &mut GradBuffer,
    critic_grads: &mut GradBuffer,
) -> Result<(f64, f64)> {
    let mut actor_cache = ForwardCache::default();
    let mut critic_cache = ForwardCache::default();
    let mut dlogits = vec![0.0; actor.output_dim()];
    let scale = 1.0 / indices.len() as f64;
    let (mut loss_sum, mut entropy_sum) = (0.0, 0.0);
    for &t in indices {
        let e = &items[t];
        actor.forward_into(&e.actor_input, &mut actor_cache)?;
        let probs = softmax(actor_cache.output());
        let ratio = if e.occupied {
            1.0
        } else if e.action_prob > 0.0 {
            probs[e.ppo_action - 1] / e.action_prob
        } else {
            return Err(Error::CorruptBuffer { step: t, prob: e.action_prob });
        };
        critic.forward_into(&e.critic_input, &mut critic_cache)?;
        let value = critic_cache.output()[0];
        let adv = advantages[t];
        let h = entropy(&probs);
        let loss = -(ratio * adv).min(clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv)
            + hp.value_coef * (returns[t] - value).powi(2)
            - hp.entropy_coef * h;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "surrogate loss", index: t });
        }
        loss_sum += loss;
        entropy_sum += h;

        actor_logit_grad(&probs, e.ppo_action, ratio, adv, e.occupied, hp, &mut dlogits);
        for g in &mut dlogits {
            *g *= scale;
        }
        actor.backward(&actor_cache, &dlogits, actor_grads)?;
        let dv = -2.0 * hp.value_coef * (returns[t] - value) * scale;
        critic.backward(&critic_cache, &[dv], critic_grads)?;
    }
    Ok((loss_sum * scale, entropy_sum * scale))
}

/// `N_U` epochs of clipped-surrogate updates on a full buffer.
pub fn update_agent(
    agent: &mut Agent,
    buffer: &Buffer,
    hp: &Hyperparams,
    discount: f64,
    rng: &mut RngStream,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    let scaled: Vec<f64> = buffer.rewards().iter().map(|r| r / hp.reward_scale).collect();
    let returns = compute_returns(&scaled, discount);
    let mb = hp.minibatch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut actor_grads = GradBuffer::zeros_like(&agent.actor);
    let mut critic_grads = GradBuffer::zeros_like(&agent.critic);
    let (mut loss_sum, mut entropy_sum, mut batches) = (0.0, 0.0, 0usize);

    for _ in 0..hp.epochs {
        let mut advantages = compute_advantages(&returns, &agent.critic, buffer)?;
        if hp.standardize_advantages {
            standardize(&mut advantages);
        }
        if mb < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(mb) {
            actor_grads.clear();
            critic_grads.clear();
            let (loss, h) = minibatch_gradients(
                &agent.actor,
                &agent.critic,
                buffer.experiences(),
                chunk,
                &returns,
                &advantages,
                hp,
                &mut actor_grads,
                &mut critic_grads,
            )?;
            if !actor_grads.is_finite() || !critic_grads.is_finite() {
                return Err(Error::NonFinite { what: "gradient", index: chunk[0] });
            }
            agent.actor_opt.step(&mut agent.actor, &actor_grads)?;
            agent.critic_opt.step(&mut agent.critic, &critic_grads)?;
            loss_sum += loss;
            entropy_sum += h;
            batches += 1;
        }
    }
    Ok(UpdateStats {
        loss_mean: loss_sum / batches as f64,
        entropy_mean: entropy_sum / batches as f64,
    })
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in v.iter_mut() {
        *a = (*a - mean) / (sd + 1e-8);
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub mean_reward: f64,
    pub mean_accuracy: f64,
    pub mean_throughput: f64,
    pub loss_mean: f64,
    pub entropy_mean: f64,
    pub violations: u64,
}

/// Offline trainer: collect `N_B` slots, update every agent, empty buffers.
#[derive(Debug)]
pub struct Trainer {
    hp: Hyperparams,
    table: Arc<WhittleTable>,
    scale: FeatureScale,
    agents: Vec<Agent>,
    env: Environment,
    policy_rng: RngStream,
    shuffle_rngs: Vec<RngStream>,
    buffers: Vec<Buffer>,
    episode: u64,
}

impl Trainer {
    pub fn new(cfg: SystemConfig, hp: Hyperparams, table: Arc<WhittleTable>, seed: u64) -> Result<Self> {
        hp.check()?;
        if table.num_devices() != cfg.num_monitors() {
            return Err(Error::DimensionMismatch {
                what: "whittle table devices",
                expected: cfg.num_monitors(),
                got: table.num_devices(),
            });
        }
        let m = cfg.num_channels();
        let agents = (0..m as u64)
            .map(|k| Agent::new(&cfg, &hp, &mut RngStream::new(seed, StreamId::Init, k)))
            .collect();
        let scale = FeatureScale::new(&cfg, hp.aoii_scale);
        Ok(Self {
            buffers: (0..m).map(|_| Buffer::new(hp.batch_size)).collect(),
            shuffle_rngs: (0..m as u64).map(|k| RngStream::new(seed, StreamId::Shuffle, k)).collect(),
            policy_rng: RngStream::new(seed, StreamId::Policy, u64::MAX),
            env: Environment::new(cfg, seed)?,
            agents,
            scale,
            table,
            hp,
            episode: 0,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        self.env.config()
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn episodes_trained(&self) -> u64 {
        self.episode
    }

    /// One pass of the outer loop. Returns the episode's log row.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let j_count = self.env.config().num_traffics();
        let m_count = self.agents.len();
        self.env.reset();
        let (mut reward, mut acc, mut thr) = (0.0, 0.0, 0.0);
        let mut choices = vec![0; m_count];
        let mut inputs: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m_count);
        for _ in 0..self.hp.batch_size {
            let state = self.env.state().clone();
            let critic_input = self.scale.critic_input(&state);
            inputs.clear();
            for (m, agent) in self.agents.iter().enumerate() {
                let input = self.scale.actor_input(&state, m);
                let (choice, prob) = actor_select(&agent.actor, &input, state.release[m] > 0, &mut self.policy_rng)?;
                choices[m] = choice;
                inputs.push((input, prob));
            }
            let action = wiac_fuse(&state, &choices, &self.table, j_count);
            let step = self.env.step(&action)?;
            for (m, (input, prob)) in inputs.drain(..).enumerate() {
                self.buffers[m].push(Experience {
                    critic_input: critic_input.clone(),
                    actor_input: input,
                    ppo_action: choices[m],
                    action_prob: prob,
                    reward: step.shaped_reward,
                    occupied: state.release[m] > 0,
                });
            }
            reward += step.shaped_reward;
            acc += step.accuracy;
            thr += step.throughput;
        }

        let hp = &self.hp;
        let discount = self.env.config().discount;
        let stats: Vec<UpdateStats> = self
            .agents
            .par_iter_mut()
            .zip(self.buffers.par_iter())
            .zip(self.shuffle_rngs.par_iter_mut())
            .map(|((agent, buffer), rng)| update_agent(agent, buffer, hp, discount, rng))
            .collect::<Result<_>>()?;
        for b in &mut self.buffers {
            b.clear();
        }

        let n = self.hp.batch_size as f64;
        let log = EpisodeLog {
            episode: self.episode,
            mean_reward: reward / n,
            mean_accuracy: acc / n,
            mean_throughput: thr / n,
            loss_mean: stats.iter().map(|s| s.loss_mean).sum::<f64>() / m_count as f64,
            entropy_mean: stats.iter().map(|s| s.entropy_mean).sum::<f64>() / m_count as f64,
            violations: self.env.violations(),
        };
        self.episode += 1;
        Ok(log)
    }

    /// Runs `episodes` episodes, calling `on_episode` after each.
    pub fn train(&mut self, episodes: usize, mut on_episode: impl FnMut(&EpisodeLog)) -> Result<Vec<EpisodeLog>> {
        let mut logs = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let log = self.run_episode()?;
            on_episode(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn policy(&self, mode: ActMode) -> WiMappoPolicy {
        WiMappoPolicy::new(
            self.agents.iter().map(|a| a.actor.clone()).collect(),
            Arc::clone(&self.table),
            self.scale.clone(),
            self.env.config().num_traffics(),
            mode,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            system: self.env.config().clone(),
            hyperparams: self.hp.clone(),
            scale: self.scale.clone(),
            agents: self.agents.clone(),
            table: (*self.table).clone(),
            episodes_trained: self.episode,
        }
    }
}

/// Writes the training log as CSV.
pub fn write_training_log<W: Write>(logs: &[EpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in logs {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActMode {
    /// Argmax of each actor, ties to the lowest choice.
    #[default]
    Greedy,
    Sampled,
}

/// Trained actors plus fusion, usable wherever a [`SchedulingPolicy`] is.
#[derive(Debug, Clone)]
pub struct WiMappoPolicy {
    actors: Vec<Mlp>,
    table: Arc<WhittleTable>,
    scale: FeatureScale,
    num_traffics: usize,
    mode: ActMode,
}

impl WiMappoPolicy {
    pub fn new(actors: Vec<Mlp>, table: Arc<WhittleTable>, scale: FeatureScale, num_traffics: usize, mode: ActMode) -> Self {
        Self {
            actors,
            table,
            scale,
            num_traffics,
            mode,
        }
    }

    pub fn mode(&self) -> ActMode {
        self.mode
    }

    /// Coarse per-agent choices before fusion.
    pub fn choices(&self, state: &SystemState, rng: &mut RngStream) -> Result<Vec<usize>> {
        self.actors
            .iter()
            .enumerate()
            .map(|(m, actor)| {
                let input = self.scale.actor_input(state, m);
                let busy = state.release[m] > 0;
                match self.mode {
                    ActMode::Greedy => actor_greedy(actor, &input, busy),
                    ActMode::Sampled => actor_select(actor, &input, busy, rng).map(|(a, _)| a),
                }
            })
            .collect()
    }
}

impl SchedulingPolicy for WiMappoPolicy {
    fn name(&self) -> &str {
        "wi-mappo"
    }

    fn act(&mut self, state: &SystemState, rng: &mut RngStream) -> Result<ActionVector> {
        let choices = self.choices(state, rng)?;
        Ok(wiac_fuse(state, &choices, &self.table, self.num_traffics))
    }
}

/// Time-averaged metrics of a single rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub steps: u64,
    pub mean_reward: f64,
    pub mean_raw_reward: f64,
    pub accuracy: f64,
    pub throughput: f64,
}

/// Runs a policy on a live environment without updating anything,
/// optionally recording the trajectory.
pub fn apply_online<W: Write>(
    policy: &mut dyn SchedulingPolicy,
    env: &mut Environment,
    steps: u64,
    rng: &mut RngStream,
    mut trajectory: Option<&mut TrajectoryWriter<W>>,
) -> Result<RolloutMetrics> {
    let (mut r, mut raw, mut acc, mut thr) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..steps {
        let state = env.state().clone();
        let action = policy.act(&state, rng)?;
        let step = env.step(&action)?;
        if let Some(w) = trajectory.as_deref_mut() {
            w.record(t, &state, &action, &step)?;
        }
        r += step.shaped_reward;
        raw += step.raw_reward;
        acc += step.accuracy;
        thr += step.throughput;
    }
    let n = steps.max(1) as f64;
    Ok(RolloutMetrics {
        steps,
        mean_reward: r / n,
        mean_raw_reward: raw / n,
        accuracy: acc / n,
        throughput: thr / n,
    })
}

/// Everything needed to resume evaluation of a trained system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub system: SystemConfig,
    pub hyperparams: Hyperparams,
    pub scale: FeatureScale,
    pub agents: Vec<Agent>,
    pub table: WhittleTable,
    pub episodes_trained: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                found: ckpt.format_version,
            });
        }
        Ok(ckpt)
    }

    pub fn policy(&self, mode: ActMode) -> WiMappoPolicy {
        WiMappoPolicy::new(
            self.agents.iter().map(|a| a.actor.clone()).collect(),
            Arc::new(self.table.clone()),
            self.scale.clone(),
            self.system.num_traffics(),
            mode,
        )
    }
}
