//! Differentiable actor-critic networks with hand-written reverse-mode
//! gradients and an Adam optimizer.
//!
//! Each network is built from a [`trunk::Trunk`] and a head. Gradients are
//! accumulated into a second instance of the same struct, so every
//! [`Parameters`] operation (Adam, clipping, checksums) works on both.

mod layers;
mod policy;
mod trunk;

pub use layers::{Dense, Parameters, Tensor};
pub use policy::{
    Action, ActionSample, Actor, ActorForward, Critic, HeadKind, HeadOutput, PolicyHead, SampleMode, CONTROL_CHANNELS,
    LOG_STD_MAX, LOG_STD_MIN, OPTION_COUNT, RAW_LIMIT,
};
pub use trunk::{Trunk, TrunkCache};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("action {0} outside the open unit interval")]
    OutsideSupport(f64),
    #[error("option index {0} out of range")]
    InvalidOption(usize),
    #[error("action kind does not match the policy head")]
    HeadMismatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("optimizer state does not match the parameter layout")]
    OptimizerLayout,
}

/// Flat observation plus entity tokens; token 0 is the attention query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetInput<T> {
    pub flat: Vec<T>,
    pub tokens: Vec<Vec<T>>,
}

impl<T: Scalar> NetInput<T> {
    /// Splits `flat` into a leading block of `head` values followed by
    /// blocks of `block` values; every token is zero-padded to `width`.
    pub fn from_blocks(flat: Vec<T>, head: usize, block: usize, width: usize) -> Self {
        let pad = |s: &[T]| {
            let mut t = s.to_vec();
            t.resize(width, T::zero());
            t
        };
        let mut tokens = vec![pad(&flat[..head.min(flat.len())])];
        if block > 0 && flat.len() > head {
            tokens.extend(flat[head..].chunks(block).map(pad));
        }
        Self { flat, tokens }
    }

    /// Tokens are `blocks`, with `blocks[query]` repeated in front.
    pub fn with_query(flat: Vec<T>, blocks: Vec<Vec<T>>, query: usize) -> Self {
        let mut tokens = Vec::with_capacity(blocks.len() + 1);
        tokens.push(blocks[query].clone());
        tokens.extend(blocks);
        Self { flat, tokens }
    }

    pub fn map<U: Scalar>(&self) -> NetInput<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::c(x.as_f64())).collect::<Vec<U>>();
        NetInput { flat: conv(&self.flat), tokens: self.tokens.iter().map(conv).collect() }
    }
}

/// Input shape of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub flat_dim: usize,
    pub token_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub actor: InputSpec,
    pub critic: InputSpec,
    pub hidden: usize,
    pub head: HeadKind,
    pub init_log_std: f64,
}

/// Actor and critic with separate trunks; the critic may see a different
/// (global) input than the actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActorCritic<T> {
    pub spec: NetSpec,
    pub actor: Actor<T>,
    pub critic: Critic<T>,
}

/// Everything a forward pass over both networks produces.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub features: Vec<T>,
    pub value: T,
    pub head: HeadOutput<T>,
}

impl<T: Scalar> ActorCritic<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let actor = Actor {
            trunk: Trunk::new(spec.actor.flat_dim, spec.actor.token_dim, spec.hidden, rng),
            head: PolicyHead::new(spec.head, spec.hidden, spec.init_log_std, rng),
        };
        let critic = Critic {
            trunk: Trunk::new(spec.critic.flat_dim, spec.critic.token_dim, spec.hidden, rng),
            value: Dense::new(spec.hidden, 1, 1.0, rng),
        };
        Self { spec, actor, critic }
    }

    pub fn forward(&self, actor_input: &NetInput<T>, critic_input: &NetInput<T>) -> Result<Forward<T>, NetError> {
        let a = self.actor.forward(actor_input)?;
        let value = self.critic.value(critic_input)?;
        Ok(Forward { features: a.cache.out, value, head: a.output })
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.spec == other.spec && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.shape == b.shape)
    }
}

impl<T: Scalar> Parameters<T> for ActorCritic<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.actor.tensors();
        v.extend(self.critic.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.actor.tensors_mut();
        v.extend(self.critic.tensors_mut());
        v
    }
}

/// Zeroed copy used as a gradient buffer.
pub fn zeros_like<T: Scalar, P: Parameters<T> + Clone>(p: &P) -> P {
    let mut g = p.clone();
    g.zero();
    g
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: T) -> Result<(), NetError> {
        if !grads.all_finite() {
            return Err(NetError::NonFiniteGradient);
        }
        let gs = grads.tensors();
        let mut ps = params.tensors_mut();
        if ps.len() != self.m.len() || ps.iter().zip(&self.m).any(|(p, m)| p.len() != m.len()) {
            return Err(NetError::OptimizerLayout);
        }
        self.step += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::one() - b1.powi(self.step as i32);
        let c2 = T::one() - b2.powi(self.step as i32);
        let eps = T::c(self.eps);
        for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
