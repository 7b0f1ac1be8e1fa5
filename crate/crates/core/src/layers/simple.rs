use alloc::vec::Vec;

use super::Mode;
use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{relu, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.active =
            (mode == Mode::Train).then(|| x.data().iter().map(|&v| v > T::zero()).collect());
        self.infer(x)
    }

    pub fn infer<T: Scalar>(&self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        x.map_inplace(relu);
        Ok(x)
    }

    /// Passes gradient where the input was strictly positive.
    pub fn backward<T: Scalar>(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let active = self
            .active
            .as_ref()
            .ok_or_else(|| config_err!("relu backward called without a train-mode forward"))?;
        if active.len() != dy.numel() {
            return Err(shape_err!("relu backward got dy of shape {}", dy.shape()));
        }
        dy.data_mut().iter_mut().zip(active).for_each(|(d, &a)| {
            if !a {
                *d = T::zero()
            }
        });
        Ok(dy)
    }

    pub fn clear_cache(&mut self) {
        self.active = None;
    }
}

/// `[N, ...]` to `[N, prod(...)]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_dims: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.input_dims = (mode == Mode::Train).then(|| x.dims().to_vec());
        self.infer(x)
    }

    pub fn infer<T: Scalar>(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let (n, rest) = x.batch_split();
        x.reshape(&[n, rest])
    }

    pub fn backward<T: Scalar>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let dims = self
            .input_dims
            .as_ref()
            .ok_or_else(|| config_err!("flatten backward called without a train-mode forward"))?;
        dy.reshape(dims)
    }

    pub fn clear_cache(&mut self) {
        self.input_dims = None;
    }
}
