use alloc::vec;

use super::{kaiming_bound, Mode};
use crate::error::{config_err, shape_err, Result};
use crate::par::for_each_sample;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};

/// 2-D convolution lowered to GEMM through im2col, one sample at a time.
///
/// Backward keeps only the layer input and re-unrolls it, which costs one
/// extra im2col per sample but avoids holding `C*k*k` times the input.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    pad: usize,
    stride: usize,
    /// `[Cout, Cin, k, k]`
    pub weight: Tensor<T>,
    /// `[Cout]`
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub(crate) parallel: bool,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(config_err!(
                "conv needs positive channels, kernel and stride"
            ));
        }
        let wdims = [out_channels, in_channels, kernel, kernel];
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            pad,
            stride,
            weight: Tensor::zeros(&wdims)?,
            bias: Tensor::zeros(&[out_channels])?,
            grad_weight: Tensor::zeros(&wdims)?,
            grad_bias: Tensor::zeros(&[out_channels])?,
            parallel: false,
            input: None,
        })
    }

    /// Kaiming-uniform weights over fan-in `Cin*k*k`, zero bias.
    pub fn init(&mut self, rng: &mut Rng) {
        let bound = kaiming_bound(self.in_channels * self.kernel * self.kernel);
        let (lo, hi) = (T::from_f64(-bound), T::from_f64(bound));
        self.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.uniform(lo, hi));
        self.bias.data_mut().fill(T::zero());
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, ConvGeometry)> {
        let &[n, c, h, w] = x.dims() else {
            return Err(shape_err!("conv expects [N, C, H, W], got {}", x.shape()));
        };
        if c != self.in_channels {
            return Err(shape_err!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            ));
        }
        Ok((
            n,
            ConvGeometry::new(c, h, w, self.kernel, self.pad, self.stride)?,
        ))
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
        let (n, geo) = self.geometry(x)?;
        let (krows, hw) = (geo.col_rows(), geo.col_cols());
        let cout = self.out_channels;
        let mut out = vec![T::zero(); n * cout * hw];
        let (weight, bias) = (self.weight.data(), self.bias.data());
        for_each_sample(
            self.parallel,
            x.data(),
            geo.image_len(),
            &mut out,
            cout * hw,
            |_, img, y| {
                let mut cols = vec![T::zero(); krows * hw];
                geo.im2col_into(img, &mut cols);
                for (row, &b) in y.chunks_exact_mut(hw).zip(bias) {
                    row.fill(b);
                }
                // y[Cout, HW] += W[Cout, K] * cols[K, HW]
                T::gemm(
                    cout,
                    krows,
                    hw,
                    T::one(),
                    weight,
                    krows as isize,
                    1,
                    &cols,
                    hw as isize,
                    1,
                    T::one(),
                    y,
                    hw as isize,
                    1,
                );
            },
        );
        Tensor::from_vec(&[n, cout, geo.out_height(), geo.out_width()], out)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| config_err!("conv backward called without a train-mode forward"))?;
        let (n, geo) = self.geometry(x)?;
        let (krows, hw) = (geo.col_rows(), geo.col_cols());
        let cout = self.out_channels;
        if dy.dims() != [n, cout, geo.out_height(), geo.out_width()] {
            return Err(shape_err!("conv backward got dy of shape {}", dy.shape()));
        }

        // Parameter gradients reduce over samples in sample order.
        let gw = self.grad_weight.data_mut();
        let gb = self.grad_bias.data_mut();
        gw.fill(T::zero());
        gb.fill(T::zero());
        let mut cols = vec![T::zero(); krows * hw];
        for (img, dys) in x
            .data()
            .chunks_exact(geo.image_len())
            .zip(dy.data().chunks_exact(cout * hw))
        {
            geo.im2col_into(img, &mut cols);
            // gW[Cout, K] += dy[Cout, HW] * cols^T[HW, K]
            T::gemm(
                cout,
                hw,
                krows,
                T::one(),
                dys,
                hw as isize,
                1,
                &cols,
                1,
                hw as isize,
                T::one(),
                gw,
                krows as isize,
                1,
            );
            for (g, row) in gb.iter_mut().zip(dys.chunks_exact(hw)) {
                *g = row.iter().fold(*g, |acc, &v| acc + v);
            }
        }
        drop(cols);

        let mut dx = vec![T::zero(); n * geo.image_len()];
        let weight = self.weight.data();
        for_each_sample(
            self.parallel,
            dy.data(),
            cout * hw,
            &mut dx,
            geo.image_len(),
            |_, dys, dxs| {
                let mut dcols = vec![T::zero(); krows * hw];
                // dcols[K, HW] = W^T[K, Cout] * dy[Cout, HW]
                T::gemm(
                    krows,
                    cout,
                    hw,
                    T::one(),
                    weight,
                    1,
                    krows as isize,
                    dys,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    hw as isize,
                    1,
                );
                geo.col2im_into(&dcols, dxs);
            },
        );
        Tensor::from_vec(x.dims(), dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::{vec, vec::Vec};

    fn single(weight: &[f32], x: &[f32], h: usize, w: usize) -> Vec<f32> {
        let mut conv = Conv2d::<f32>::new(1, 1, 3, 1, 1).unwrap();
        conv.weight.data_mut().copy_from_slice(weight);
        let x = Tensor::from_vec(&[1, 1, h, w], x.to_vec()).unwrap();
        conv.infer(x).unwrap().into_vec()
    }

    #[test]
    fn all_ones_filter_counts_window_cells() {
        let y = single(&[1.0; 9], &[1.0; 9], 3, 3);
        assert_eq!(y, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_filter_is_identity() {
        let mut delta = [0.0; 9];
        delta[4] = 1.0;
        let x: Vec<f32> = (0..20).map(|v| v as f32 * 0.5 - 3.0).collect();
        assert_eq!(single(&delta, &x, 4, 5), x);
    }

    #[test]
    fn rejects_bad_channels_and_missing_cache() {
        let mut conv = Conv2d::<f32>::new(2, 4, 3, 1, 1).unwrap();
        let x = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        assert!(matches!(
            conv.forward(x, Mode::Train),
            Err(crate::Error::Shape(_))
        ));
        let dy = Tensor::zeros(&[1, 4, 4, 4]).unwrap();
        assert!(conv.backward(dy).is_err());
    }

    #[test]
    fn forward_preserves_spatial_dims() {
        let mut conv = Conv2d::<f32>::new(1, 32, 3, 1, 1).unwrap();
        conv.init(&mut Rng::new(1));
        let y = conv.infer(Tensor::ones(&[2, 1, 16, 12]).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 32, 16, 12]);
    }
}
