//! `leancnn-core` is the allocation-only numeric heart of the leancnn engine.
//!
//! Everything in here is pure computation over in-memory buffers: dense
//! tensors and their kernels, hand-derived forward/backward layers, the two
//! classification losses, Adam, the BTBCNN/BTMCNN builders, confusion-matrix
//! metrics, seeded index sampling and pixel-level preprocessing. File
//! formats, image decoding, timing and the CLI live in the `leancnn` crate.
//!
//! # Layout conventions
//!
//! - Tensors are row-major with the last dimension fastest.
//! - Images are NCHW.
//! - Dense weights are `[out, in]`, convolution weights `[Cout, Cin, k, k]`.
//!
//! # Precision
//!
//! Training and inference run in `f32`. Every kernel and layer is generic over
//! [`Scalar`], so the same code runs in `f64` for finite-difference gradient
//! checks.
//!
//! # Features
//!
//! - `std`: runtime SIMD detection in the GEMM backend, `std::error::Error`.
//! - `parallel`: per-sample data parallelism in convolution and pooling via
//!   rayon. Samples write disjoint output slots and gradient reductions run in
//!   sample order, so results are bit-identical with or without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod tensor;

mod par;

pub use error::{Error, Result};
pub use layers::{
    BatchNorm2d, Conv2d, Dense, Dropout, Flatten, Layer, LayerPlan, MaxPool2d, Mode, Relu,
};
pub use loss::{bce_with_logits, cross_entropy, LossKind};
pub use metrics::{
    binary_metrics, multiclass_metrics, Averaging, BinaryCounts, ClassMetrics, ConfusionMatrix,
    MetricsReport,
};
pub use model::{Model, ModelKind, ModelSpec};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{col2im, im2col, ConvGeometry, ReduceMode, Shape, Tensor};
