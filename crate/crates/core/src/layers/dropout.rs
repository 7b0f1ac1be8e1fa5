use alloc::vec::Vec;

use super::Mode;
use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout: in train mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the
/// identity.
#[derive(Debug, Clone)]
pub struct Dropout<T: Scalar = f32> {
    rate: f64,
    rng: Rng,
    /// Per-unit multiplier (0 or `1 / (1 - rate)`) from the last train pass.
    mask: Option<Vec<T>>,
    /// Reuse the current mask on subsequent train passes (gradient checks).
    pub frozen: bool,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, rng: Rng) -> Self {
        Self {
            rate,
            rng,
            mask: None,
            frozen: false,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mask(&self) -> Option<&[T]> {
        self.mask.as_deref()
    }

    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return Ok(x);
        }
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == x.numel());
        if !reuse {
            let keep = T::from_f64(1.0 / (1.0 - self.rate));
            let rate = self.rate;
            let rng = &mut self.rng;
            self.mask = Some(
                (0..x.numel())
                    .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
                    .collect(),
            );
        }
        let mask = self.mask.as_ref().expect("mask set above");
        x.data_mut()
            .iter_mut()
            .zip(mask)
            .for_each(|(v, &m)| *v = *v * m);
        Ok(x)
    }

    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| config_err!("dropout backward called without a train-mode forward"))?;
        if mask.len() != dy.numel() {
            return Err(shape_err!(
                "dropout backward got dy of shape {}",
                dy.shape()
            ));
        }
        dy.data_mut()
            .iter_mut()
            .zip(mask)
            .for_each(|(v, &m)| *v = *v * m);
        Ok(dy)
    }

    pub fn clear_cache(&mut self) {
        if !self.frozen {
            self.mask = None;
        }
    }
}
