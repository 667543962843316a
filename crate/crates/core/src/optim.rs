//! Advantage estimation, the SPO and PPO surrogates, and the minibatch
//! update that every trained policy shares.
//!
//! The scalar loss for one minibatch is
//! `L = L_s + κ_v L_v − κ_e H`, with `L_s` the surrogate, `L_v` the squared
//! value error and `H` the policy entropy. Actor and critic carry separate
//! Adam states and are clipped separately.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::AircraftType;
use crate::netlib::{zeros_like, Action, ActorCritic, Adam, NetError, NetInput, Parameters};
use crate::num::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("trajectory of agent {agent} mixes aircraft types")]
    MixedTypes { agent: usize },
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Advantages and the matching return targets `R̂ = V + Â`.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages<T> {
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

/// Generalized advantage estimation with a constant discount.
///
/// `dones[t]` marks a terminal transition; `last_value` bootstraps the step
/// after the final entry when it is not terminal.
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_value: T,
    gamma: T,
    lambda: T,
) -> Result<Advantages<T>, OptimError> {
    let discounts = vec![gamma; rewards.len()];
    gae_with_discounts(rewards, values, dones, &discounts, last_value, lambda)
}

/// GAE with a per-step discount, e.g. `γ^τ` for temporally extended options.
pub fn gae_with_discounts<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    discounts: &[T],
    last_value: T,
    lambda: T,
) -> Result<Advantages<T>, OptimError> {
    let n = rewards.len();
    for (what, got) in [("values", values.len()), ("dones", dones.len()), ("discounts", discounts.len())] {
        if got != n {
            return Err(OptimError::Length { what, expected: n, got });
        }
    }
    let mut advantages = vec![T::zero(); n];
    let mut acc = T::zero();
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + discounts[t] * next * live - values[t];
        acc = delta + discounts[t] * lambda * live * acc;
        advantages[t] = acc;
    }
    let returns = values.iter().zip(&advantages).map(|(&v, &a)| v + a).collect();
    Ok(Advantages { advantages, returns })
}

/// Per-sample SPO loss `−(rÂ − |Â|/(2ε)·(r−1)²)`.
pub fn spo_surrogate<T: Scalar>(ratio: T, advantage: T, epsilon: T) -> T {
    let d = ratio - T::one();
    -(ratio * advantage - advantage.abs() / (T::two() * epsilon) * d * d)
}

/// `∂/∂r` of [`spo_surrogate`].
pub fn spo_surrogate_grad<T: Scalar>(ratio: T, advantage: T, epsilon: T) -> T {
    -(advantage - advantage.abs() / epsilon * (ratio - T::one()))
}

/// Per-sample PPO loss `−min(rÂ, clip(r, 1−ε, 1+ε)Â)`.
pub fn ppo_surrogate<T: Scalar>(ratio: T, advantage: T, clip: T) -> T {
    let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
    -(ratio * advantage).min(clipped * advantage)
}

/// `∂/∂r` of [`ppo_surrogate`]; zero wherever the clipped branch is active.
pub fn ppo_surrogate_grad<T: Scalar>(ratio: T, advantage: T, clip: T) -> T {
    let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
    if ratio * advantage <= clipped * advantage {
        -advantage
    } else {
        T::zero()
    }
}

/// Mean squared error; zero for empty input.
pub fn value_loss<T: Scalar>(predicted: &[T], targets: &[T]) -> Result<T, OptimError> {
    if predicted.len() != targets.len() {
        return Err(OptimError::Length { what: "targets", expected: predicted.len(), got: targets.len() });
    }
    if predicted.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = predicted.iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::c(predicted.len() as f64))
}

/// `L_s + κ_v L_v + κ_e L_e` with `L_e = −H`.
pub fn total_loss<T: Scalar>(surrogate: T, value: T, entropy: T, value_coef: T, entropy_coef: T) -> T {
    surrogate + value_coef * value - entropy_coef * entropy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    Spo,
    Ppo,
}

impl Surrogate {
    pub fn loss(self, ratio: f64, advantage: f64, epsilon: f64) -> f64 {
        match self {
            Surrogate::Spo => spo_surrogate(ratio, advantage, epsilon),
            Surrogate::Ppo => ppo_surrogate(ratio, advantage, epsilon),
        }
    }

    pub fn grad(self, ratio: f64, advantage: f64, epsilon: f64) -> f64 {
        match self {
            Surrogate::Spo => spo_surrogate_grad(ratio, advantage, epsilon),
            Surrogate::Ppo => ppo_surrogate_grad(ratio, advantage, epsilon),
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Surrogate::Spo => "spo",
            Surrogate::Ppo => "ppo",
        })
    }
}

impl FromStr for Surrogate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spo" => Ok(Surrogate::Spo),
            "ppo" => Ok(Surrogate::Ppo),
            _ => Err(format!("unknown surrogate `{s}`")),
        }
    }
}

/// Linear ramp from `start` to `end` over `samples` consumed samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub samples: u64,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Self { start: v, end: v, samples: 0 }
    }

    pub fn at(&self, samples: u64) -> f64 {
        if self.samples == 0 || samples >= self.samples {
            return if self.samples == 0 { self.start } else { self.end };
        }
        let f = samples as f64 / self.samples as f64;
        self.start + (self.end - self.start) * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpoConfig {
    pub surrogate: Surrogate,
    /// SPO trust parameter, or the PPO clip range.
    pub epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: Schedule,
    pub learning_rate: Schedule,
    /// Samples per iteration for the maneuver policies.
    pub batch_low: usize,
    /// Decision epochs per iteration for the commanders.
    pub batch_high: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub normalize_advantages: bool,
    /// Global-norm clip applied to actor and critic gradients separately.
    pub max_grad_norm: Option<f64>,
}

impl Default for SpoConfig {
    fn default() -> Self {
        Self {
            surrogate: Surrogate::Spo,
            epsilon: 0.25,
            gamma: 0.995,
            gae_lambda: 0.95,
            value_coef: 0.9,
            entropy_coef: Schedule { start: 0.05, end: 0.0, samples: 3_000_000 },
            learning_rate: Schedule { start: 1e-4, end: 1e-5, samples: 15_000_000 },
            batch_low: 6_000,
            batch_high: 3_000,
            minibatch: 256,
            epochs: 4,
            normalize_advantages: true,
            max_grad_norm: Some(1.0),
        }
    }
}

impl SpoConfig {
    /// Checks every field; the message names the offending key.
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.value_coef >= 0.0) {
            return bad("value_coef must be >= 0");
        }
        for (name, s) in [("entropy_coef", &self.entropy_coef), ("learning_rate", &self.learning_rate)] {
            if !(s.start >= 0.0 && s.end >= 0.0) {
                return Err(OptimError::Config(format!("{name} values must be >= 0")));
            }
        }
        if self.batch_low == 0 || self.batch_high == 0 {
            return bad("batch_low and batch_high must be >= 1");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return bad("max_grad_norm must be > 0");
            }
        }
        Ok(())
    }
}

/// One network plus its optimizer states and consumed-sample counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub net: ActorCritic<f64>,
    pub actor_opt: Adam<f64>,
    pub critic_opt: Adam<f64>,
    /// Samples consumed by updates; drives the schedules.
    pub samples: u64,
}

impl Learner {
    pub fn new(net: ActorCritic<f64>) -> Self {
        let actor_opt = Adam::new(&net.actor);
        let critic_opt = Adam::new(&net.critic);
        Self { net, actor_opt, critic_opt, samples: 0 }
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }
}

/// One transition as seen by the policy that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub agent: usize,
    pub aircraft: AircraftType,
    /// Decision index within the episode.
    pub step: u32,
    pub input: NetInput<f64>,
    pub critic_input: NetInput<f64>,
    pub action: Action<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    /// Discount to the next sample.
    pub discount: f64,
}

/// Consecutive samples of one agent; `bootstrap` values the state after the
/// last sample when it is not terminal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn aircraft(&self) -> Result<Option<AircraftType>, OptimError> {
        let Some(first) = self.samples.first() else { return Ok(None) };
        if self.samples.iter().any(|s| s.aircraft != first.aircraft) {
            return Err(OptimError::MixedTypes { agent: first.agent });
        }
        Ok(Some(first.aircraft))
    }

    pub fn total_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum()
    }

    /// Keeps samples with `step < steps`, bootstrapping from the first
    /// dropped sample's value.
    pub fn truncate_steps(&mut self, steps: u32) {
        if let Some(cut) = self.samples.iter().position(|s| s.step >= steps) {
            self.bootstrap = self.samples[cut].value;
            self.samples.truncate(cut);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub episodes: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / n as f64
    }

    pub fn mean_trajectory_reward(&self) -> f64 {
        let live: Vec<f64> = self.trajectories.iter().filter(|t| !t.samples.is_empty()).map(Trajectory::total_reward).collect();
        if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        }
    }

    /// Trajectories grouped by aircraft type, in [`AircraftType::ALL`] order.
    pub fn partition(&self) -> Result<[Vec<&Trajectory>; 2], OptimError> {
        let mut parts: [Vec<&Trajectory>; 2] = [Vec::new(), Vec::new()];
        for t in &self.trajectories {
            if let Some(ty) = t.aircraft()? {
                parts[ty.index()].push(t);
            }
        }
        Ok(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub samples: usize,
    pub mean_step_reward: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub mean_ratio: f64,
    /// Mean ratio on the first minibatch, before any parameter change.
    pub first_ratio: f64,
    pub grad_clipped: u32,
    pub learning_rate: f64,
    pub entropy_coef: f64,
}

struct Prepared<'a> {
    sample: &'a Sample,
    advantage: f64,
    ret: f64,
}

fn prepare<'a>(trajectories: &[&'a Trajectory], cfg: &SpoConfig) -> Result<Vec<Prepared<'a>>, OptimError> {
    let mut out = Vec::new();
    for t in trajectories {
        let r: Vec<f64> = t.samples.iter().map(|s| s.reward).collect();
        let v: Vec<f64> = t.samples.iter().map(|s| s.value).collect();
        let d: Vec<bool> = t.samples.iter().map(|s| s.done).collect();
        let g: Vec<f64> = t.samples.iter().map(|s| s.discount).collect();
        let adv = gae_with_discounts(&r, &v, &d, &g, t.bootstrap, cfg.gae_lambda)?;
        for ((s, a), ret) in t.samples.iter().zip(adv.advantages).zip(adv.returns) {
            out.push(Prepared { sample: s, advantage: a, ret });
        }
    }
    if cfg.normalize_advantages && out.len() > 1 {
        let n = out.len() as f64;
        let mean = out.iter().map(|p| p.advantage).sum::<f64>() / n;
        let var = out.iter().map(|p| (p.advantage - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        out.iter_mut().for_each(|p| p.advantage = (p.advantage - mean) / std);
    }
    if out.iter().any(|p| !p.advantage.is_finite() || !p.ret.is_finite() || !p.sample.log_prob.is_finite()) {
        return Err(OptimError::NonFinite("advantage or return"));
    }
    Ok(out)
}

fn clip_gradient<P: Parameters<f64>>(g: &mut P, max: Option<f64>) -> bool {
    match max {
        Some(m) => {
            let norm = g.global_norm();
            if norm > m {
                g.scale(m / norm);
                true
            } else {
                false
            }
        }
        None => false,
    }
}

/// Shuffled minibatch epochs over `trajectories`. Schedules are read at the
/// learner's sample count before the update.
pub fn spo_update<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajectories: &[&Trajectory],
    cfg: &SpoConfig,
    rng: &mut R,
) -> Result<UpdateMetrics, OptimError> {
    let data = prepare(trajectories, cfg)?;
    let n = data.len();
    let lr = cfg.learning_rate.at(learner.samples);
    let kappa_e = cfg.entropy_coef.at(learner.samples);
    let mut m = UpdateMetrics { samples: n, learning_rate: lr, entropy_coef: kappa_e, ..Default::default() };
    if n == 0 {
        return Ok(m);
    }
    m.mean_step_reward = data.iter().map(|p| p.sample.reward).sum::<f64>() / n as f64;

    let mut order: Vec<usize> = (0..n).collect();
    let (mut evals, mut batches) = (0usize, 0usize);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mut ga = zeros_like(&learner.net.actor);
            let mut gc = zeros_like(&learner.net.critic);
            let k = chunk.len() as f64;
            let (mut ls, mut lv, mut h_sum, mut r_sum) = (0.0, 0.0, 0.0, 0.0);
            for &i in chunk {
                let p = &data[i];
                let s = p.sample;
                let fwd = learner.net.actor.forward(&s.input)?;
                let (lp, h) = fwd.output.log_prob_entropy(&s.action)?;
                let ratio = (lp - s.log_prob).exp();
                ls += cfg.surrogate.loss(ratio, p.advantage, cfg.epsilon);
                h_sum += h;
                r_sum += ratio;
                let d_logp = cfg.surrogate.grad(ratio, p.advantage, cfg.epsilon) * ratio / k;
                learner.net.actor.backward(&s.input, &fwd, &s.action, d_logp, -kappa_e / k, &mut ga);

                let (cache, v) = learner.net.critic.forward(&s.critic_input)?;
                lv += (v - p.ret) * (v - p.ret);
                learner.net.critic.backward(&s.critic_input, &cache, cfg.value_coef * 2.0 * (v - p.ret) / k, &mut gc);
            }
            let (ls, lv, h) = (ls / k, lv / k, h_sum / k);
            let total = total_loss(ls, lv, h, cfg.value_coef, kappa_e);
            if !total.is_finite() {
                return Err(OptimError::NonFinite("loss"));
            }
            if batches == 0 {
                m.first_ratio = r_sum / k;
            }
            m.surrogate_loss += ls;
            m.value_loss += lv;
            m.entropy += h;
            m.total_loss += total;
            m.mean_ratio += r_sum;
            evals += chunk.len();
            batches += 1;

            m.grad_clipped += u32::from(clip_gradient(&mut ga, cfg.max_grad_norm));
            m.grad_clipped += u32::from(clip_gradient(&mut gc, cfg.max_grad_norm));
            learner.actor_opt.update(&mut learner.net.actor, &ga, lr)?;
            learner.critic_opt.update(&mut learner.net.critic, &gc, lr)?;
        }
    }
    let b = batches as f64;
    m.surrogate_loss /= b;
    m.value_loss /= b;
    m.entropy /= b;
    m.total_loss /= b;
    m.mean_ratio /= evals as f64;
    learner.samples += n as u64;
    Ok(m)
}

/// Per-iteration summary: batch statistics plus the update metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub episodes: usize,
    pub mean_trajectory_reward: f64,
    pub update: UpdateMetrics,
}

/// Collect with the current policy, then update it.
pub fn train_iteration<R, F>(
    learner: &mut Learner,
    collect: F,
    cfg: &SpoConfig,
    rng: &mut R,
) -> Result<IterationMetrics, OptimError>
where
    R: Rng + ?Sized,
    F: FnOnce(&ActorCritic<f64>) -> Result<RolloutBatch, OptimError>,
{
    let batch = collect(&learner.net)?;
    let refs: Vec<&Trajectory> = batch.trajectories.iter().collect();
    let update = spo_update(learner, &refs, cfg, rng)?;
    Ok(IterationMetrics { episodes: batch.episodes, mean_trajectory_reward: batch.mean_trajectory_reward(), update })
}

/// One update per aircraft type from that type's pooled trajectories.
/// `learners` is indexed by [`AircraftType::index`]; types without samples
/// are left untouched.
pub fn ma_spo_update<R: Rng + ?Sized>(
    learners: [&mut Learner; 2],
    batch: &RolloutBatch,
    cfg: &SpoConfig,
    rng: &mut R,
) -> Result<Vec<(AircraftType, UpdateMetrics)>, OptimError> {
    let parts = batch.partition()?;
    let mut out = Vec::new();
    for (ty, learner) in AircraftType::ALL.into_iter().zip(learners) {
        let part = &parts[ty.index()];
        if part.is_empty() {
            continue;
        }
        out.push((ty, spo_update(learner, part, cfg, rng)?));
    }
    Ok(out)
}
