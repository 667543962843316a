//! Shared feature extractor: an MLP branch, an attention branch over entity
//! tokens and an input projection are summed, layer-normalized and passed
//! through a final dense layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{tanh_inplace, Dense, Parameters, Tensor};
use super::{NetError, NetInput};
use crate::num::Scalar;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trunk<T> {
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub query: Dense<T>,
    pub key: Dense<T>,
    pub value: Dense<T>,
    pub attn_out: Dense<T>,
    pub input_proj: Dense<T>,
    pub norm_gain: Tensor<T>,
    pub norm_bias: Tensor<T>,
    pub output: Dense<T>,
}

/// Activations recorded by [`Trunk::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    q: Vec<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    weights: Vec<T>,
    context: Vec<T>,
    xhat: Vec<T>,
    inv_std: T,
    normed: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Scalar> Trunk<T> {
    pub fn new<R: Rng + ?Sized>(flat_dim: usize, token_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            dense1: Dense::new(flat_dim, hidden, 1.0, rng),
            dense2: Dense::new(hidden, hidden, 1.0, rng),
            query: Dense::new(token_dim, hidden, 1.0, rng),
            key: Dense::new(token_dim, hidden, 1.0, rng),
            value: Dense::new(token_dim, hidden, 1.0, rng),
            attn_out: Dense::new(hidden, hidden, 1.0, rng),
            input_proj: Dense::new(flat_dim, hidden, 1.0, rng),
            norm_gain: Tensor::filled(&[hidden], T::one()),
            norm_bias: Tensor::zeros(&[hidden]),
            output: Dense::new(hidden, hidden, 1.0, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.dense2.outputs()
    }

    pub fn flat_dim(&self) -> usize {
        self.dense1.inputs()
    }

    pub fn token_dim(&self) -> usize {
        self.query.inputs()
    }

    pub fn check(&self, input: &NetInput<T>) -> Result<(), NetError> {
        if input.flat.len() != self.flat_dim() {
            return Err(NetError::Shape { what: "flat input", expected: self.flat_dim(), got: input.flat.len() });
        }
        if input.tokens.is_empty() {
            return Err(NetError::Shape { what: "token count", expected: 1, got: 0 });
        }
        if let Some(t) = input.tokens.iter().find(|t| t.len() != self.token_dim()) {
            return Err(NetError::Shape { what: "token width", expected: self.token_dim(), got: t.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &NetInput<T>) -> TrunkCache<T> {
        let x = &input.flat;
        let hidden = self.hidden();

        let mut h1 = self.dense1.forward(x);
        tanh_inplace(&mut h1);
        let mut h2 = self.dense2.forward(&h1);
        tanh_inplace(&mut h2);

        // single-head scaled dot-product attention; query from token 0
        let scale = T::c(hidden as f64).sqrt().recip();
        let q = self.query.forward(&input.tokens[0]);
        let keys: Vec<Vec<T>> = input.tokens.iter().map(|t| self.key.forward(t)).collect();
        let values: Vec<Vec<T>> = input.tokens.iter().map(|t| self.value.forward(t)).collect();
        let scores: Vec<T> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
        let exp: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
        let z: T = exp.iter().copied().sum();
        let weights: Vec<T> = exp.iter().map(|&e| e / z).collect();
        let mut context = vec![T::zero(); hidden];
        for (w, v) in weights.iter().zip(&values) {
            context.iter_mut().zip(v).for_each(|(c, &vi)| *c += *w * vi);
        }
        let attn = self.attn_out.forward(&context);
        let proj = self.input_proj.forward(x);

        let sum: Vec<T> = (0..hidden).map(|i| h2[i] + attn[i] + proj[i]).collect();
        let n = T::c(hidden as f64);
        let mean = sum.iter().copied().sum::<T>() / n;
        let var = sum.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / n;
        let inv_std = (var + T::c(NORM_EPS)).sqrt().recip();
        let xhat: Vec<T> = sum.iter().map(|&s| (s - mean) * inv_std).collect();
        let normed: Vec<T> = (0..hidden).map(|i| xhat[i] * self.norm_gain.data[i] + self.norm_bias.data[i]).collect();

        let mut out = self.output.forward(&normed);
        tanh_inplace(&mut out);
        TrunkCache { h1, h2, q, keys, values, weights, context, xhat, inv_std, normed, out }
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    pub fn backward(&self, input: &NetInput<T>, cache: &TrunkCache<T>, d_out: &[T], grad: &mut Trunk<T>) {
        let hidden = self.hidden();
        let x = &input.flat;

        let d_pre: Vec<T> = d_out.iter().zip(&cache.out).map(|(&d, &y)| d * (T::one() - y * y)).collect();
        let mut d_normed = vec![T::zero(); hidden];
        self.output.backward(&cache.normed, &d_pre, &mut grad.output, Some(&mut d_normed));

        let mut dxhat = vec![T::zero(); hidden];
        for i in 0..hidden {
            grad.norm_gain.data[i] += d_normed[i] * cache.xhat[i];
            grad.norm_bias.data[i] += d_normed[i];
            dxhat[i] = d_normed[i] * self.norm_gain.data[i];
        }
        let n = T::c(hidden as f64);
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dx: T = dxhat.iter().zip(&cache.xhat).map(|(&d, &xh)| d * xh).sum();
        let d_sum: Vec<T> = (0..hidden).map(|i| cache.inv_std / n * (n * dxhat[i] - sum_d - cache.xhat[i] * sum_dx)).collect();

        // MLP branch
        let d_pre2: Vec<T> = d_sum.iter().zip(&cache.h2).map(|(&d, &h)| d * (T::one() - h * h)).collect();
        let mut d_h1 = vec![T::zero(); hidden];
        self.dense2.backward(&cache.h1, &d_pre2, &mut grad.dense2, Some(&mut d_h1));
        let d_pre1: Vec<T> = d_h1.iter().zip(&cache.h1).map(|(&d, &h)| d * (T::one() - h * h)).collect();
        self.dense1.backward(x, &d_pre1, &mut grad.dense1, None);

        // projection branch
        self.input_proj.backward(x, &d_sum, &mut grad.input_proj, None);

        // attention branch
        let mut d_ctx = vec![T::zero(); hidden];
        self.attn_out.backward(&cache.context, &d_sum, &mut grad.attn_out, Some(&mut d_ctx));
        let d_w: Vec<T> = cache.values.iter().map(|v| dot(&d_ctx, v)).collect();
        let avg: T = cache.weights.iter().zip(&d_w).map(|(&w, &d)| w * d).sum();
        let scale = T::c(hidden as f64).sqrt().recip();
        let mut d_q = vec![T::zero(); hidden];
        for (i, token) in input.tokens.iter().enumerate() {
            let w = cache.weights[i];
            let d_score = w * (d_w[i] - avg) * scale;
            let d_v: Vec<T> = d_ctx.iter().map(|&d| d * w).collect();
            self.value.backward(token, &d_v, &mut grad.value, None);
            let d_k: Vec<T> = cache.q.iter().map(|&q| q * d_score).collect();
            self.key.backward(token, &d_k, &mut grad.key, None);
            d_q.iter_mut().zip(&cache.keys[i]).for_each(|(g, &k)| *g += d_score * k);
        }
        self.query.backward(&input.tokens[0], &d_q, &mut grad.query, None);
    }

    /// Attention weights over tokens for the given input.
    pub fn attention_weights(&self, input: &NetInput<T>) -> Vec<T> {
        self.forward(input).weights
    }
}

impl<T: Scalar> Parameters<T> for Trunk<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for d in [&self.dense1, &self.dense2, &self.query, &self.key, &self.value, &self.attn_out, &self.input_proj] {
            v.extend(d.tensors());
        }
        v.push(&self.norm_gain);
        v.push(&self.norm_bias);
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for d in [
            &mut self.dense1,
            &mut self.dense2,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.attn_out,
            &mut self.input_proj,
        ] {
            v.extend(d.tensors_mut());
        }
        v.push(&mut self.norm_gain);
        v.push(&mut self.norm_bias);
        v.extend(self.output.tensors_mut());
        v
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
