use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;

/// Dense row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| if bound > 0.0 { T::c(rng.random_range(-bound..bound)) } else { T::zero() }).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// Uniform access to every parameter tensor of a model.
pub trait Parameters<T: Scalar> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Euclidean norm over all entries.
    fn global_norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.data.iter()).map(|&x| x * x).sum::<T>().sqrt()
    }

    fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Elementwise `self += other`; both must share one architecture.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += *y);
        }
    }

    /// FNV-1a over the bit patterns of every entry.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for x in &t.data {
                for b in x.as_f64().to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    /// `[outputs, inputs]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    /// Uniform init in `±scale / sqrt(inputs)`, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inputs.max(1) as f64).sqrt();
        Self { weight: Tensor::uniform(&[outputs, inputs], bound, rng), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let n = self.inputs();
        debug_assert_eq!(x.len(), n);
        self.weight
            .data
            .chunks_exact(n)
            .zip(&self.bias.data)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and, if requested, input
    /// gradients into `dx`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Dense<T>, dx: Option<&mut [T]>) {
        let n = self.inputs();
        for ((grow, gb), &d) in grad.weight.data.chunks_exact_mut(n).zip(grad.bias.data.iter_mut()).zip(dy) {
            if d == T::zero() {
                continue;
            }
            *gb += d;
            grow.iter_mut().zip(x).for_each(|(g, &xi)| *g += d * xi);
        }
        if let Some(dx) = dx {
            for (row, &d) in self.weight.data.chunks_exact(n).zip(dy) {
                if d == T::zero() {
                    continue;
                }
                dx.iter_mut().zip(row).for_each(|(g, &w)| *g += d * w);
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for Dense<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub(crate) fn tanh_inplace<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
    z.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn dense_quadratic_gradient() {
        // L = 0.5 |W x + b|^2, dL/dW = y x^T, dL/db = y, dL/dx = W^T y
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer: Dense<f64> = Dense::new(3, 2, 1.0, &mut rng);
        let x = [0.3, -1.2, 0.7];
        let y = layer.forward(&x);
        let mut g = layer.clone();
        g.zero();
        let mut dx = vec![0.0; 3];
        layer.backward(&x, &y, &mut g, Some(&mut dx));
        for o in 0..2 {
            assert!((g.bias.data[o] - y[o]).abs() < 1e-15);
            for i in 0..3 {
                assert!((g.weight.data[o * 3 + i] - y[o] * x[i]).abs() < 1e-15);
            }
        }
        for i in 0..3 {
            let e: f64 = (0..2).map(|o| layer.weight.data[o * 3 + i] * y[o]).sum();
            assert!((dx[i] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer: Dense<f64> = Dense::new(4, 3, 1.0, &mut rng);
        let mut g = layer.clone();
        g.zero();
        layer.backward(&[1.0, 2.0, 3.0, 4.0], &[0.0; 3], &mut g, None);
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn stable_activations() {
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        let l = log_softmax(&[0.0f64, 0.0, 0.0]);
        assert!(l.iter().all(|x| (x + 3f64.ln()).abs() < 1e-15));
    }
}
