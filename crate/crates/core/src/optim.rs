//! Adam with bias correction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state. Moments are created lazily on the first step, one pair
/// per parameter tensor in visiting order.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One update over `(param, grad)` pairs, always presented in the same
    /// order:
    ///
    /// ```text
    /// m <- b1 m + (1 - b1) g
    /// v <- b2 v + (1 - b2) g^2
    /// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        let t = self.step + 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 =
            T::from_f64(1.0 - num_traits::Float::powi(c.beta1, t.min(i32::MAX as u64) as i32));
        let bc2 =
            T::from_f64(1.0 - num_traits::Float::powi(c.beta2, t.min(i32::MAX as u64) as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));

        let mut seen = 0;
        for (i, (p, g)) in params.into_iter().enumerate() {
            if p.shape() != g.shape() {
                return Err(shape_err!(
                    "parameter {i} has shape {} but its gradient is {}",
                    p.shape(),
                    g.shape()
                ));
            }
            if i == self.m.len() {
                self.m.push(alloc::vec![T::zero(); p.numel()]);
                self.v.push(alloc::vec![T::zero(); p.numel()]);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != p.numel() {
                return Err(shape_err!(
                    "parameter {i} has {} elements, optimizer state has {}",
                    p.numel(),
                    m.len()
                ));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
            seen += 1;
        }
        if seen != self.m.len() {
            return Err(shape_err!(
                "optimizer tracks {} parameters but was given {seen}",
                self.m.len()
            ));
        }
        self.step = t;
        Ok(())
    }
}
