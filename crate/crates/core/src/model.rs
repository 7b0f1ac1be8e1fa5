//! BTBCNN / BTMCNN builders and the layer-chain model that runs them.
//!
//! BTBCNN (binary):
//!
//! ```text
//! conv 1->32, bn, relu, pool, conv 32->64, bn, relu, pool,
//! flatten, dense ->512, relu, dropout 0.5, dense 512->1
//! ```
//!
//! BTMCNN (multi-class) adds `conv 64->128, bn, relu, pool` before the flatten
//! and ends in `dense 512->num_classes`. All convolutions are 3x3, pad 1,
//! stride 1, so each block halves the spatial size only through its pool.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::layers::{Layer, LayerPlan, Mode};
use crate::loss::LossKind;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_INPUT_SIZE: usize = 224;
pub const DROPOUT_RATE: f64 = 0.5;
pub const HIDDEN_UNITS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Btbcnn,
    Btmcnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Btbcnn => "btbcnn",
            ModelKind::Btmcnn => "btmcnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "btbcnn" => Some(ModelKind::Btbcnn),
            "btmcnn" => Some(ModelKind::Btmcnn),
            _ => None,
        }
    }

    fn conv_widths(self) -> &'static [usize] {
        match self {
            ModelKind::Btbcnn => &[32, 64],
            ModelKind::Btmcnn => &[32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_channels: usize,
    /// Output width: 1 logit for BTBCNN, one logit per class for BTMCNN.
    pub num_classes: usize,
    /// Square input side.
    pub input_size: usize,
}

impl ModelSpec {
    pub fn btbcnn() -> Self {
        Self {
            kind: ModelKind::Btbcnn,
            in_channels: 1,
            num_classes: 1,
            input_size: DEFAULT_INPUT_SIZE,
        }
    }

    pub fn btmcnn(num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Btmcnn,
            in_channels: 1,
            num_classes,
            input_size: DEFAULT_INPUT_SIZE,
        }
    }

    /// Default spec for a kind: BTMCNN gets 4 classes.
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Btbcnn => Self::btbcnn(),
            ModelKind::Btmcnn => Self::btmcnn(4),
        }
    }

    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(config_err!("in_channels must be at least 1"));
        }
        match self.kind {
            ModelKind::Btbcnn if self.num_classes != 1 => {
                return Err(config_err!(
                    "btbcnn has a single output logit, got num_classes = {}",
                    self.num_classes
                ))
            }
            ModelKind::Btmcnn if self.num_classes < 2 => {
                return Err(config_err!(
                    "btmcnn needs at least 2 classes, got {}",
                    self.num_classes
                ))
            }
            _ => {}
        }
        let blocks = self.kind.conv_widths().len() as u32;
        let factor = 1usize << blocks;
        if self.input_size < 8 || !self.input_size.is_multiple_of(factor) {
            return Err(config_err!(
                "{} needs an input size that is at least 8 and divisible by {factor}, got {}",
                self.kind.name(),
                self.input_size
            ));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [self.in_channels, self.input_size, self.input_size]
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.kind {
            ModelKind::Btbcnn => LossKind::Bce,
            ModelKind::Btmcnn => LossKind::CrossEntropy,
        }
    }

    /// Flattened feature count entering the first dense layer.
    pub fn flatten_size(&self) -> usize {
        let widths = self.kind.conv_widths();
        let side = self.input_size >> widths.len();
        widths[widths.len() - 1] * side * side
    }

    /// Learnable parameter count of the plan, without building the model.
    pub fn param_count(&self) -> usize {
        self.plan().iter().map(LayerPlan::param_count).sum()
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        let mut plan = Vec::new();
        let mut cin = self.in_channels;
        for &cout in self.kind.conv_widths() {
            plan.extend([
                LayerPlan::Conv {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: 3,
                    pad: 1,
                    stride: 1,
                },
                LayerPlan::BatchNorm { channels: cout },
                LayerPlan::Relu,
                LayerPlan::MaxPool,
            ]);
            cin = cout;
        }
        plan.extend([
            LayerPlan::Flatten,
            LayerPlan::Dense {
                in_features: self.flatten_size(),
                out_features: HIDDEN_UNITS,
            },
            LayerPlan::Relu,
            LayerPlan::Dropout { rate: DROPOUT_RATE },
            LayerPlan::Dense {
                in_features: HIDDEN_UNITS,
                out_features: self.num_classes,
            },
        ]);
        plan
    }
}

/// Walks `plan` from per-sample `input` dims, returning each layer's output
/// dims or the first layer that cannot accept its input.
pub fn trace_shapes(input: &[usize], plan: &[LayerPlan]) -> Result<Vec<Vec<usize>>> {
    let mut dims = input.to_vec();
    let mut out = Vec::with_capacity(plan.len());
    for (i, layer) in plan.iter().enumerate() {
        dims = layer
            .output_dims(&dims)
            .map_err(|e| shape_err!("layer {i} ({}): {e}", layer.name()))?;
        out.push(dims.clone());
    }
    Ok(out)
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub loss: T,
    /// Train-mode predictions that matched their label.
    pub correct: usize,
    /// Whether parameters were updated (skipped on a non-finite loss).
    pub updated: bool,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    spec: Option<ModelSpec>,
    input_dims: Vec<usize>,
    layers: Vec<Layer<T>>,
    mode: Mode,
    seed: u64,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes one of the two architectures. Identical seeds give
    /// identical parameters.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut model = Self::from_plan(&spec.input_dims(), &spec.plan(), seed)?;
        model.spec = Some(spec);
        Ok(model)
    }

    /// Builds an arbitrary layer chain after validating every shape.
    pub fn from_plan(input_dims: &[usize], plan: &[LayerPlan], seed: u64) -> Result<Self> {
        if plan.is_empty() {
            return Err(config_err!("a model needs at least one layer"));
        }
        let shapes = trace_shapes(input_dims, plan)?;
        if shapes.last().map(Vec::len) != Some(1) {
            return Err(shape_err!("model must end in a flat [features] output"));
        }
        let mut init = Rng::new(seed);
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, p)| Layer::from_plan(p, &mut init, Rng::derive(seed, i as u64 + 1).seed()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: None,
            input_dims: input_dims.to_vec(),
            layers,
            mode: Mode::Eval,
            seed,
        })
    }

    /// Reassembles a model from persisted parts; shapes are revalidated.
    pub fn from_parts(
        spec: Option<ModelSpec>,
        input_dims: &[usize],
        plan: &[LayerPlan],
        seed: u64,
        state: Vec<Tensor<T>>,
    ) -> Result<Self> {
        if let Some(s) = &spec {
            s.validate()?;
            if s.plan() != plan || s.input_dims() != input_dims {
                return Err(config_err!(
                    "stored layer plan does not match the stored model spec"
                ));
            }
        }
        let mut model = Self::from_plan(input_dims, plan, seed)?;
        model.spec = spec;
        let mut state = state.into_iter();
        for layer in &mut model.layers {
            for slot in layer.state_mut() {
                let t = state
                    .next()
                    .ok_or_else(|| shape_err!("too few tensors for the layer plan"))?;
                if t.shape() != slot.shape() {
                    return Err(shape_err!(
                        "stored tensor {} does not fit slot {}",
                        t.shape(),
                        slot.shape()
                    ));
                }
                *slot = t;
            }
        }
        if state.next().is_some() {
            return Err(shape_err!("more tensors than the layer plan has slots"));
        }
        Ok(model)
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        self.layers.iter().map(Layer::plan).collect()
    }

    pub fn output_width(&self) -> usize {
        self.shape_trace().last().map_or(0, |d| d[0])
    }

    /// Output dims of every layer for one sample.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        trace_shapes(&self.input_dims, &self.plan()).expect("validated at build time")
    }

    /// Human-readable chain, e.g. `1x224x224 -> 32x112x112 -> ... -> 1`,
    /// listing the input, each pooled feature map, the flatten and each dense
    /// output.
    pub fn shape_summary(&self) -> String {
        let fmt = |d: &[usize]| {
            d.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join("x")
        };
        let mut parts = vec![fmt(&self.input_dims)];
        for (plan, dims) in self.plan().iter().zip(self.shape_trace()) {
            if matches!(
                plan,
                LayerPlan::MaxPool | LayerPlan::Flatten | LayerPlan::Dense { .. }
            ) {
                parts.push(fmt(&dims));
            }
        }
        parts.join(" -> ")
    }

    /// Learnable parameters: conv/dense weights and biases plus batch-norm
    /// gamma and beta. Running statistics are excluded.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.layers.iter_mut().for_each(Layer::clear_cache);
        }
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.layers
            .iter_mut()
            .for_each(|l| l.set_parallel(parallel));
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims().len() != self.input_dims.len() + 1 || x.dims()[1..] != self.input_dims[..] {
            return Err(shape_err!(
                "model expects [N, {}] input, got {}",
                self.input_dims
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                x.shape()
            ));
        }
        Ok(())
    }

    /// Forward pass in the current mode. Train mode caches activations.
    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        if self.mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(&x)?;
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(h, Mode::Train)?;
        }
        Ok(h)
    }

    /// Eval-mode forward. Pure in (parameters, input) and safe to call from
    /// several threads at once.
    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        let mut h = x;
        for layer in &self.layers {
            h = layer.infer(h)?;
        }
        Ok(h)
    }

    /// Backpropagates `dlogits` through the cached train-mode pass and returns
    /// the gradient with respect to the input.
    pub fn backward(&mut self, dlogits: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dlogits;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        self.layers
            .iter_mut()
            .flat_map(Layer::params_and_grads)
            .collect()
    }

    /// Every persisted tensor in layer order.
    pub fn state(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::state).collect()
    }

    /// Class decisions from logits: `z >= 0` (sigmoid >= 0.5) for a single
    /// logit, otherwise argmax with ties to the lowest index.
    pub fn decide(logits: &Tensor<T>) -> Vec<usize> {
        let (_, width) = logits.batch_split();
        logits
            .data()
            .chunks_exact(width)
            .map(|row| {
                if width == 1 {
                    usize::from(row[0] >= T::zero())
                } else {
                    row.iter()
                        .enumerate()
                        .fold(
                            (0, row[0]),
                            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                        )
                        .0
                }
            })
            .collect()
    }

    pub fn predict(&self, x: Tensor<T>) -> Result<Vec<usize>> {
        Ok(Self::decide(&self.infer(x)?))
    }

    /// Train-mode forward, loss, backward and one Adam update. The update is
    /// skipped when the loss is not finite.
    pub fn train_step(
        &mut self,
        adam: &mut Adam<T>,
        x: Tensor<T>,
        labels: &[usize],
        loss: LossKind,
    ) -> Result<StepOutcome<T>> {
        if x.dims().first() != Some(&labels.len()) {
            return Err(shape_err!(
                "{} labels for a batch of {}",
                labels.len(),
                x.shape()
            ));
        }
        let previous = self.mode;
        self.mode = Mode::Train;
        let logits = self.forward(x);
        self.mode = previous;
        let logits = logits?;
        let correct = Self::decide(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let (value, dlogits) = loss.evaluate(&logits, labels)?;
        if !value.is_finite() {
            return Ok(StepOutcome {
                loss: value,
                correct,
                updated: false,
            });
        }
        self.backward(dlogits)?;
        adam.step(self.params_and_grads())?;
        if self.mode == Mode::Eval {
            self.layers.iter_mut().for_each(Layer::clear_cache);
        }
        Ok(StepOutcome {
            loss: value,
            correct,
            updated: true,
        })
    }

    /// FNV-1a over the bit patterns of every persisted tensor.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.state() {
            for v in t.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Same architecture and state in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let state = self.state().into_iter().map(Tensor::cast).collect();
        let mut m = Model::from_parts(self.spec, &self.input_dims, &self.plan(), self.seed, state)
            .expect("same plan, same shapes");
        m.mode = self.mode;
        m
    }
}
