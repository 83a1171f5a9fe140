// SPDX-License-Identifier: Apache-2.0

//! The trainable projection head: `y = W2 · relu(W1 · e + b1) + b2`.
//!
//! Parameters live in `f64` for gradient work but are kept representable as
//! `f32` after every initialization and update, so the model file (which
//! stores 32-bit floats) round-trips a head bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[inline]
fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// hidden × in, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// out × hidden, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub init_seed: u64,
}

/// Gradients (or optimizer velocity) with the same shapes as a head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub dw1: Vec<f64>,
    pub db1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub db2: Vec<f64>,
}

pub type Velocity = HeadGradients;

impl HeadGradients {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            dw1: vec![0.0; head.w1.len()],
            db1: vec![0.0; head.b1.len()],
            dw2: vec![0.0; head.w2.len()],
            db2: vec![0.0; head.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.dw1, &self.db1, &self.dw2, &self.db2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.dw1, &mut self.db1, &mut self.dw2, &mut self.db2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Optimizer and sampling hyper-parameters for contrastive training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Tables per online batch; pairs per offline batch.
    pub batch_size: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 40,
            batch_size: 16,
            sample_size: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl ProjectionHead {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden_dim == 0 || out_dim == 0 {
            return Err(Error::Config("projection dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let x = to_f32_grid(rng.random_range(-bound..bound));
                    x.clamp(-bound, bound)
                })
                .collect()
        };
        let w1 = uniform(hidden_dim * in_dim, in_dim);
        let w2 = uniform(out_dim * hidden_dim, hidden_dim);
        Ok(Self {
            in_dim,
            hidden_dim,
            out_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; out_dim],
            init_seed: seed,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden_dim * self.in_dim
            && self.b1.len() == self.hidden_dim
            && self.w2.len() == self.out_dim * self.hidden_dim
            && self.b2.len() == self.out_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Format(
                "projection head tensors do not match its dimensions".into(),
            ))
        }
    }

    fn check_input(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: e.len(),
            });
        }
        Ok(())
    }

    fn forward_one(&self, e: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let pre: Vec<f64> = (0..self.hidden_dim)
            .map(|h| {
                let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
                row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + self.b1[h]
            })
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let out: Vec<f64> = (0..self.out_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + self.b2[o]
            })
            .collect();
        (pre, hidden, out)
    }

    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_input(e)?;
        Ok(self.forward_one(e).2)
    }

    pub fn forward_batch(&self, batch: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
        let mut cache = ForwardCache {
            pre: Vec::with_capacity(batch.len()),
            hidden: Vec::with_capacity(batch.len()),
        };
        let mut outs = Vec::with_capacity(batch.len());
        for e in batch {
            self.check_input(e)?;
            let (pre, hidden, out) = self.forward_one(e);
            cache.pre.push(pre);
            cache.hidden.push(hidden);
            outs.push(out);
        }
        Ok((outs, cache))
    }

    /// Parameter gradients of `Σ_n upstream[n] · project(batch[n])`.
    /// The rectifier's subgradient at zero is taken as zero.
    pub fn backward(&self, batch: &[Vec<f64>], upstream: &[Vec<f64>]) -> Result<HeadGradients> {
        let (_, cache) = self.forward_batch(batch)?;
        self.backward_cached(batch, &cache, upstream)
    }

    pub fn backward_cached(
        &self,
        batch: &[Vec<f64>],
        cache: &ForwardCache,
        upstream: &[Vec<f64>],
    ) -> Result<HeadGradients> {
        if upstream.len() != batch.len() || cache.pre.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: upstream.len(),
            });
        }
        let mut g = HeadGradients::zeros_like(self);
        let (ind, hid, outd) = (self.in_dim, self.hidden_dim, self.out_dim);
        let mut dpre = vec![0.0; hid];
        for ((x, dy), (pre, h)) in batch.iter().zip(upstream).zip(cache.pre.iter().zip(&cache.hidden)) {
            self.check_input(x)?;
            if dy.len() != outd {
                return Err(Error::DimensionMismatch {
                    expected: outd,
                    actual: dy.len(),
                });
            }
            dpre.iter_mut().for_each(|d| *d = 0.0);
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.db2[o] += d;
                let row = o * hid;
                for j in 0..hid {
                    g.dw2[row + j] += d * h[j];
                    dpre[j] += d * self.w2[row + j];
                }
            }
            for j in 0..hid {
                if pre[j] <= 0.0 {
                    continue;
                }
                let d = dpre[j];
                g.db1[j] += d;
                let row = j * ind;
                for (gw, xi) in g.dw1[row..row + ind].iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
        }
        Ok(g)
    }

    /// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
    pub fn sgd_step(&mut self, grads: &HeadGradients, lr: f64, momentum: f64, velocity: &mut Velocity) -> Result<()> {
        self.check_shapes()?;
        let shapes_match = self
            .tensors()
            .iter()
            .zip(grads.tensors())
            .zip(velocity.tensors())
            .all(|((p, g), v)| p.len() == g.len() && p.len() == v.len());
        if !shapes_match {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: grads.tensors().iter().map(|t| t.len()).sum(),
            });
        }
        for ((p, g), v) in self
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(velocity.tensors_mut())
        {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = to_f32_grid(momentum * *vi + gi);
                *pi = to_f32_grid(*pi - lr * *vi);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
