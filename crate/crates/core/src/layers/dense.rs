use super::{kaiming_bound, Mode};
use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully connected layer: `y = x W^T + b` on `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar = f32> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(config_err!("dense layer needs positive widths"));
        }
        let w = [out_features, in_features];
        Ok(Self {
            weight: Tensor::zeros(&w)?,
            bias: Tensor::zeros(&[out_features])?,
            grad_weight: Tensor::zeros(&w)?,
            grad_bias: Tensor::zeros(&[out_features])?,
            input: None,
        })
    }

    /// Kaiming-uniform weights over fan-in, zero bias.
    pub fn init(&mut self, rng: &mut Rng) {
        let bound = kaiming_bound(self.in_features());
        let (lo, hi) = (T::from_f64(-bound), T::from_f64(bound));
        self.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.uniform(lo, hi));
        self.bias.data_mut().fill(T::zero());
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    fn batch(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.dims() {
            [n, f] if f == self.in_features() => Ok(n),
            _ => Err(shape_err!(
                "dense expects [N, {}], got {}",
                self.in_features(),
                x.shape()
            )),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer_ref(&x)?;
        self.input = (mode == Mode::Train).then_some(x);
        Ok(y)
    }

    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.infer_ref(&x)
    }

    fn infer_ref(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.batch(x)?;
        let (fin, fout) = (self.in_features(), self.out_features());
        let mut y = Tensor::zeros(&[n, fout])?;
        for row in y.data_mut().chunks_exact_mut(fout) {
            row.copy_from_slice(self.bias.data());
        }
        // y[N, out] += x[N, in] * W^T[in, out]
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            x.data(),
            fin as isize,
            1,
            self.weight.data(),
            1,
            fin as isize,
            T::one(),
            y.data_mut(),
            fout as isize,
            1,
        );
        Ok(y)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| config_err!("dense backward called without a train-mode forward"))?;
        let n = self.batch(x)?;
        let (fin, fout) = (self.in_features(), self.out_features());
        if dy.dims() != [n, fout] {
            return Err(shape_err!("dense backward got dy of shape {}", dy.shape()));
        }
        // gW[out, in] = dy^T[out, N] * x[N, in]
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            dy.data(),
            1,
            fout as isize,
            x.data(),
            fin as isize,
            1,
            T::zero(),
            self.grad_weight.data_mut(),
            fin as isize,
            1,
        );
        let gb = self.grad_bias.data_mut();
        gb.fill(T::zero());
        for row in dy.data().chunks_exact(fout) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        // dx[N, in] = dy[N, out] * W[out, in]
        let mut dx = Tensor::zeros(&[n, fin])?;
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            dy.data(),
            fout as isize,
            1,
            self.weight.data(),
            fin as isize,
            1,
            T::zero(),
            dx.data_mut(),
            fin as isize,
            1,
        );
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}
