//! Policy heads, the actor and critic networks, and action distributions.
//!
//! The control head is a squashed Gaussian over four channels,
//! `a = sigmoid(u)` with `u ~ N(mean, exp(log_std))`, plus a Bernoulli shoot
//! bit. Log-densities include the exact sigmoid Jacobian. Reported entropy is
//! that of the pre-squash Gaussian plus the Bernoulli entropy. The option head
//! is a categorical over three logits.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{log_softmax, sigmoid, softplus, Dense, Parameters, Tensor};
use super::trunk::{Trunk, TrunkCache};
use super::{NetError, NetInput};
use crate::num::Scalar;

pub const CONTROL_CHANNELS: usize = 4;
pub const OPTION_COUNT: usize = 3;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Pre-squash samples are clipped here so `sigmoid(u)` stays inside `(0, 1)`.
pub const RAW_LIMIT: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Four squashed-Gaussian control channels and a shoot bit.
    Control,
    /// Categorical over the three options.
    Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum PolicyHead<T> {
    Control { mean: Dense<T>, log_std: Tensor<T>, shoot: Dense<T> },
    Options { logits: Dense<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Action<T> {
    /// Pre-squash channel values and the shoot bit.
    Control {
        raw: [T; CONTROL_CHANNELS],
        shoot: bool,
    },
    Option(usize),
}

impl<T: Scalar> Action<T> {
    /// Builds a control action from squashed channels in the open unit interval.
    pub fn from_channels(channels: [T; CONTROL_CHANNELS], shoot: bool) -> Result<Self, NetError> {
        let mut raw = [T::zero(); CONTROL_CHANNELS];
        for (r, &a) in raw.iter_mut().zip(&channels) {
            if !(a > T::zero() && a < T::one()) {
                return Err(NetError::OutsideSupport(a.as_f64()));
            }
            *r = (a / (T::one() - a)).ln();
        }
        Ok(Action::Control { raw, shoot })
    }

    /// Squashed channels in `(0, 1)`.
    pub fn channels(&self) -> Option<[T; CONTROL_CHANNELS]> {
        match self {
            Action::Control { raw, .. } => Some(raw.map(sigmoid)),
            Action::Option(_) => None,
        }
    }

    pub fn shoot(&self) -> bool {
        matches!(self, Action::Control { shoot: true, .. })
    }

    pub fn option(&self) -> Option<usize> {
        match self {
            Action::Option(c) => Some(*c),
            Action::Control { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample<T> {
    pub action: Action<T>,
    pub log_prob: T,
    pub entropy: T,
}

/// Distribution parameters produced by a head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadOutput<T> {
    Control {
        mean: [T; CONTROL_CHANNELS],
        /// Clamped log standard deviation.
        log_std: [T; CONTROL_CHANNELS],
        shoot_logit: T,
    },
    Options {
        logits: [T; OPTION_COUNT],
    },
}

/// Upstream gradients with respect to head outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
enum HeadGrad<T> {
    Control { mean: [T; CONTROL_CHANNELS], log_std: [T; CONTROL_CHANNELS], shoot_logit: T },
    Options { logits: [T; OPTION_COUNT] },
}

impl<T: Scalar> HeadOutput<T> {
    pub fn log_prob_entropy(&self, action: &Action<T>) -> Result<(T, T), NetError> {
        let half_ln_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
        match (self, action) {
            (HeadOutput::Control { mean, log_std, shoot_logit }, Action::Control { raw, shoot }) => {
                let mut lp = T::zero();
                let mut h = T::zero();
                for j in 0..CONTROL_CHANNELS {
                    let z = (raw[j] - mean[j]) / log_std[j].exp();
                    // log N(u) - log |d sigmoid / du|
                    let log_jac = -softplus(-raw[j]) - softplus(raw[j]);
                    lp += -T::half() * z * z - log_std[j] - half_ln_2pi - log_jac;
                    h += log_std[j] + half_ln_2pi + T::half();
                }
                let l = *shoot_logit;
                lp += if *shoot { -softplus(-l) } else { -softplus(l) };
                let p = sigmoid(l);
                h += softplus(l) - p * l;
                Ok((lp, h))
            }
            (HeadOutput::Options { logits }, Action::Option(c)) => {
                if *c >= OPTION_COUNT {
                    return Err(NetError::InvalidOption(*c));
                }
                let ls = log_softmax(logits);
                let h = -ls.iter().map(|&l| l.exp() * l).sum::<T>();
                Ok((ls[*c], h))
            }
            _ => Err(NetError::HeadMismatch),
        }
    }

    fn grads(&self, action: &Action<T>, d_logp: T, d_entropy: T) -> HeadGrad<T> {
        match (self, action) {
            (HeadOutput::Control { mean, log_std, shoot_logit }, Action::Control { raw, shoot }) => {
                let mut gm = [T::zero(); CONTROL_CHANNELS];
                let mut gs = [T::zero(); CONTROL_CHANNELS];
                for j in 0..CONTROL_CHANNELS {
                    let sigma = log_std[j].exp();
                    let z = (raw[j] - mean[j]) / sigma;
                    gm[j] = d_logp * z / sigma;
                    gs[j] = d_logp * (z * z - T::one()) + d_entropy;
                }
                let l = *shoot_logit;
                let p = sigmoid(l);
                let target = if *shoot { T::one() } else { T::zero() };
                let gl = d_logp * (target - p) + d_entropy * (-l * p * (T::one() - p));
                HeadGrad::Control { mean: gm, log_std: gs, shoot_logit: gl }
            }
            (HeadOutput::Options { logits }, Action::Option(c)) => {
                let ls = log_softmax(logits);
                let h = -ls.iter().map(|&l| l.exp() * l).sum::<T>();
                let mut g = [T::zero(); OPTION_COUNT];
                for k in 0..OPTION_COUNT {
                    let p = ls[k].exp();
                    let onehot = if k == *c { T::one() } else { T::zero() };
                    g[k] = d_logp * (onehot - p) + d_entropy * (-p * (ls[k] + h));
                }
                HeadGrad::Options { logits: g }
            }
            _ => unreachable!("head/action kinds checked by log_prob_entropy"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mode: SampleMode) -> ActionSample<T> {
        let action = match self {
            HeadOutput::Control { mean, log_std, shoot_logit } => {
                let lim = T::c(RAW_LIMIT);
                let mut raw = [T::zero(); CONTROL_CHANNELS];
                for j in 0..CONTROL_CHANNELS {
                    let u = match mode {
                        SampleMode::Stochastic => {
                            let eps: f64 = rng.sample(StandardNormal);
                            mean[j] + log_std[j].exp() * T::c(eps)
                        }
                        SampleMode::Deterministic => mean[j],
                    };
                    raw[j] = u.max(-lim).min(lim);
                }
                let p = sigmoid(*shoot_logit);
                let shoot = match mode {
                    SampleMode::Stochastic => rng.random::<f64>() < p.as_f64(),
                    SampleMode::Deterministic => p > T::half(),
                };
                Action::Control { raw, shoot }
            }
            HeadOutput::Options { logits } => {
                let ls = log_softmax(logits);
                let c = match mode {
                    SampleMode::Stochastic => {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut pick = OPTION_COUNT - 1;
                        for (k, l) in ls.iter().enumerate() {
                            acc += l.exp().as_f64();
                            if u < acc {
                                pick = k;
                                break;
                            }
                        }
                        pick
                    }
                    SampleMode::Deterministic => {
                        let mut best = 0;
                        for k in 1..OPTION_COUNT {
                            if logits[k] > logits[best] {
                                best = k;
                            }
                        }
                        best
                    }
                };
                Action::Option(c)
            }
        };
        let (log_prob, entropy) = self.log_prob_entropy(&action).expect("sampled action matches head");
        ActionSample { action, log_prob, entropy }
    }

    pub fn probabilities(&self) -> Option<[T; OPTION_COUNT]> {
        match self {
            HeadOutput::Options { logits } => {
                let ls = log_softmax(logits);
                Some([ls[0].exp(), ls[1].exp(), ls[2].exp()])
            }
            HeadOutput::Control { .. } => None,
        }
    }
}

impl<T: Scalar> PolicyHead<T> {
    pub fn new<R: Rng + ?Sized>(kind: HeadKind, hidden: usize, init_log_std: f64, rng: &mut R) -> Self {
        match kind {
            HeadKind::Control => PolicyHead::Control {
                mean: Dense::new(hidden, CONTROL_CHANNELS, 0.01, rng),
                log_std: Tensor::filled(&[CONTROL_CHANNELS], T::c(init_log_std)),
                shoot: Dense::new(hidden, 1, 0.01, rng),
            },
            HeadKind::Options => PolicyHead::Options { logits: Dense::new(hidden, OPTION_COUNT, 0.01, rng) },
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            PolicyHead::Control { .. } => HeadKind::Control,
            PolicyHead::Options { .. } => HeadKind::Options,
        }
    }

    fn forward(&self, features: &[T]) -> HeadOutput<T> {
        match self {
            PolicyHead::Control { mean, log_std, shoot } => {
                let m = mean.forward(features);
                let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
                let mut ls = [T::zero(); CONTROL_CHANNELS];
                for (l, &p) in ls.iter_mut().zip(&log_std.data) {
                    *l = p.max(lo).min(hi);
                }
                HeadOutput::Control { mean: [m[0], m[1], m[2], m[3]], log_std: ls, shoot_logit: shoot.forward(features)[0] }
            }
            PolicyHead::Options { logits } => {
                let z = logits.forward(features);
                HeadOutput::Options { logits: [z[0], z[1], z[2]] }
            }
        }
    }

    fn backward(&self, features: &[T], g: &HeadGrad<T>, grad: &mut PolicyHead<T>, d_features: &mut [T]) {
        match (self, g, grad) {
            (
                PolicyHead::Control { mean, log_std, shoot },
                HeadGrad::Control { mean: gm, log_std: gs, shoot_logit },
                PolicyHead::Control { mean: dm, log_std: dls, shoot: ds },
            ) => {
                mean.backward(features, gm, dm, Some(&mut *d_features));
                shoot.backward(features, &[*shoot_logit], ds, Some(&mut *d_features));
                let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
                for ((d, &p), &g) in dls.data.iter_mut().zip(&log_std.data).zip(gs) {
                    if p >= lo && p <= hi {
                        *d += g;
                    }
                }
            }
            (PolicyHead::Options { logits }, HeadGrad::Options { logits: gl }, PolicyHead::Options { logits: dl }) => {
                logits.backward(features, gl, dl, Some(d_features));
            }
            _ => unreachable!("gradient buffer mirrors the head"),
        }
    }
}

impl<T: Scalar> Parameters<T> for PolicyHead<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            PolicyHead::Control { mean, log_std, shoot } => {
                let mut v = mean.tensors();
                v.push(log_std);
                v.extend(shoot.tensors());
                v
            }
            PolicyHead::Options { logits } => logits.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            PolicyHead::Control { mean, log_std, shoot } => {
                let mut v = mean.tensors_mut();
                v.push(log_std);
                v.extend(shoot.tensors_mut());
                v
            }
            PolicyHead::Options { logits } => logits.tensors_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Actor<T> {
    pub trunk: Trunk<T>,
    pub head: PolicyHead<T>,
}

/// Forward record of one actor evaluation.
#[derive(Debug, Clone)]
pub struct ActorForward<T> {
    pub cache: TrunkCache<T>,
    pub output: HeadOutput<T>,
}

impl<T: Scalar> Actor<T> {
    pub fn forward(&self, input: &NetInput<T>) -> Result<ActorForward<T>, NetError> {
        self.trunk.check(input)?;
        let cache = self.trunk.forward(input);
        let output = self.head.forward(&cache.out);
        Ok(ActorForward { cache, output })
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        input: &NetInput<T>,
        rng: &mut R,
        mode: SampleMode,
    ) -> Result<ActionSample<T>, NetError> {
        Ok(self.forward(input)?.output.sample(rng, mode))
    }

    pub fn log_prob_entropy(&self, input: &NetInput<T>, action: &Action<T>) -> Result<(T, T), NetError> {
        self.forward(input)?.output.log_prob_entropy(action)
    }

    /// Accumulates gradients of `d_logp * log π(a|o) + d_entropy * H` into `grad`.
    pub fn backward(
        &self,
        input: &NetInput<T>,
        fwd: &ActorForward<T>,
        action: &Action<T>,
        d_logp: T,
        d_entropy: T,
        grad: &mut Actor<T>,
    ) {
        let g = fwd.output.grads(action, d_logp, d_entropy);
        let mut d_features = vec![T::zero(); self.trunk.hidden()];
        self.head.backward(&fwd.cache.out, &g, &mut grad.head, &mut d_features);
        self.trunk.backward(input, &fwd.cache, &d_features, &mut grad.trunk);
    }
}

impl<T: Scalar> Parameters<T> for Actor<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.trunk.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.trunk.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Critic<T> {
    pub trunk: Trunk<T>,
    pub value: Dense<T>,
}

impl<T: Scalar> Critic<T> {
    pub fn forward(&self, input: &NetInput<T>) -> Result<(TrunkCache<T>, T), NetError> {
        self.trunk.check(input)?;
        let cache = self.trunk.forward(input);
        let v = self.value.forward(&cache.out)[0];
        Ok((cache, v))
    }

    pub fn value(&self, input: &NetInput<T>) -> Result<T, NetError> {
        Ok(self.forward(input)?.1)
    }

    /// Accumulates gradients of `d_value * V(s)` into `grad`.
    pub fn backward(&self, input: &NetInput<T>, cache: &TrunkCache<T>, d_value: T, grad: &mut Critic<T>) {
        let mut d_features = vec![T::zero(); self.trunk.hidden()];
        self.value.backward(&cache.out, &[d_value], &mut grad.value, Some(&mut d_features));
        self.trunk.backward(input, cache, &d_features, &mut grad.trunk);
    }
}

impl<T: Scalar> Parameters<T> for Critic<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.trunk.tensors();
        v.extend(self.value.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.trunk.tensors_mut();
        v.extend(self.value.tensors_mut());
        v
    }
}
