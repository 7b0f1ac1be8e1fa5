//! Hand-derived forward/backward layers.
//!
//! Every layer has three entry points:
//!
//! - `forward(x, Mode::Train)` caches what backward needs.
//! - `infer(x)` is the eval-mode map. It takes `&self`, caches nothing and may
//!   reuse the input buffer, so a model can serve concurrent inference.
//! - `backward(dy)` returns `dx` and stores parameter gradients on the layer
//!   (`grad_weight`, `grad_bias`, ...). Gradients are overwritten, never
//!   accumulated across calls.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;
mod simple;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use pool::MaxPool2d;
pub use simple::{Flatten, Relu};

use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Declarative description of one layer, used to build and validate models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerPlan {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerPlan {
    /// Per-sample output dims for per-sample input dims, or a shape error if
    /// the layer cannot accept that input.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerPlan::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
                stride,
            } => {
                let &[c, h, w] = input else {
                    return Err(shape_err!("conv expects [C, H, W] input, got {input:?}"));
                };
                if c != in_channels {
                    return Err(shape_err!(
                        "conv expects {in_channels} input channels, got {c}"
                    ));
                }
                let geo = ConvGeometry::new(c, h, w, kernel, pad, stride)?;
                Ok(vec![out_channels, geo.out_height(), geo.out_width()])
            }
            LayerPlan::BatchNorm { channels } => match input {
                [c, _, _] if *c == channels => Ok(input.to_vec()),
                _ => Err(shape_err!(
                    "batch norm over {channels} channels got {input:?}"
                )),
            },
            LayerPlan::Relu => Ok(input.to_vec()),
            LayerPlan::Dropout { .. } => Ok(input.to_vec()),
            LayerPlan::MaxPool => match *input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(shape_err!(
                    "2x2 max-pool needs [C, H, W] with even H and W, got {input:?}"
                )),
            },
            LayerPlan::Flatten => Ok(vec![input.iter().product()]),
            LayerPlan::Dense {
                in_features,
                out_features,
            } => match *input {
                [f] if f == in_features => Ok(vec![out_features]),
                _ => Err(shape_err!(
                    "dense expects [{in_features}] input, got {input:?}"
                )),
            },
        }
    }

    /// Learnable parameters (running statistics are not learnable).
    pub fn param_count(&self) -> usize {
        match *self {
            LayerPlan::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * (in_channels * kernel * kernel + 1),
            LayerPlan::BatchNorm { channels } => 2 * channels,
            LayerPlan::Dense {
                in_features,
                out_features,
            } => out_features * (in_features + 1),
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerPlan::Conv { .. } => "conv",
            LayerPlan::BatchNorm { .. } => "batchnorm",
            LayerPlan::Relu => "relu",
            LayerPlan::MaxPool => "maxpool",
            LayerPlan::Flatten => "flatten",
            LayerPlan::Dense { .. } => "dense",
            LayerPlan::Dropout { .. } => "dropout",
        }
    }
}

/// Kaiming-uniform bound for ReLU networks: `sqrt(6 / fan_in)`.
pub(crate) fn kaiming_bound(fan_in: usize) -> f64 {
    num_traits::Float::sqrt(6.0 / fan_in as f64)
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar = f32> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            Layer::Conv($l) => $e,
            Layer::BatchNorm($l) => $e,
            Layer::Relu($l) => $e,
            Layer::MaxPool($l) => $e,
            Layer::Flatten($l) => $e,
            Layer::Dense($l) => $e,
            Layer::Dropout($l) => $e,
        }
    };
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer, drawing initial weights from `init`. Dropout gets its
    /// own stream from `dropout_seed`.
    pub fn from_plan(plan: &LayerPlan, init: &mut Rng, dropout_seed: u64) -> Result<Self> {
        Ok(match *plan {
            LayerPlan::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
                stride,
            } => {
                let mut conv = Conv2d::new(in_channels, out_channels, kernel, pad, stride)?;
                conv.init(init);
                Layer::Conv(conv)
            }
            LayerPlan::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)?),
            LayerPlan::Relu => Layer::Relu(Relu::new()),
            LayerPlan::MaxPool => Layer::MaxPool(MaxPool2d::new()),
            LayerPlan::Flatten => Layer::Flatten(Flatten::new()),
            LayerPlan::Dense {
                in_features,
                out_features,
            } => {
                let mut dense = Dense::new(in_features, out_features)?;
                dense.init(init);
                Layer::Dense(dense)
            }
            LayerPlan::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(config_err!("dropout rate must be in [0, 1), got {rate}"));
                }
                Layer::Dropout(Dropout::new(rate, Rng::new(dropout_seed)))
            }
        })
    }

    pub fn plan(&self) -> LayerPlan {
        match self {
            Layer::Conv(l) => LayerPlan::Conv {
                in_channels: l.in_channels(),
                out_channels: l.out_channels(),
                kernel: l.kernel(),
                pad: l.pad(),
                stride: l.stride(),
            },
            Layer::BatchNorm(l) => LayerPlan::BatchNorm {
                channels: l.channels(),
            },
            Layer::Relu(_) => LayerPlan::Relu,
            Layer::MaxPool(_) => LayerPlan::MaxPool,
            Layer::Flatten(_) => LayerPlan::Flatten,
            Layer::Dense(l) => LayerPlan::Dense {
                in_features: l.in_features(),
                out_features: l.out_features(),
            },
            Layer::Dropout(l) => LayerPlan::Dropout { rate: l.rate() },
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        dispatch!(self, l => l.forward(x, mode))
    }

    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.infer(x))
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.backward(dy))
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        dispatch!(self, l => l.clear_cache())
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        match self {
            Layer::Conv(l) => l.parallel = parallel,
            Layer::MaxPool(l) => l.parallel = parallel,
            _ => {}
        }
    }

    /// `(param, grad)` pairs for every learnable tensor in a fixed order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            Layer::BatchNorm(l) => vec![(&mut l.gamma, &l.grad_gamma), (&mut l.beta, &l.grad_beta)],
            Layer::Dense(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    /// Every persisted tensor (learnable parameters, then running statistics).
    pub fn state(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(l) => l.weight.numel() + l.bias.numel(),
            Layer::BatchNorm(l) => l.gamma.numel() + l.beta.numel(),
            Layer::Dense(l) => l.weight.numel() + l.bias.numel(),
            _ => 0,
        }
    }
}
