use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Default weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into `running_var`; eval mode uses the running
/// statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar = f32> {
    channels: usize,
    pub eps: T,
    pub momentum: T,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// `gamma = 1`, `beta = 0`, `running_mean = 0`, `running_var = 1`.
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(config_err!("batch norm needs at least one channel"));
        }
        let c = [channels];
        Ok(Self {
            channels,
            eps: T::from_f64(BN_EPS),
            momentum: T::from_f64(BN_MOMENTUM),
            gamma: Tensor::ones(&c)?,
            beta: Tensor::zeros(&c)?,
            running_mean: Tensor::zeros(&c)?,
            running_var: Tensor::ones(&c)?,
            grad_gamma: Tensor::zeros(&c)?,
            grad_beta: Tensor::zeros(&c)?,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn split(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        match *x.dims() {
            [n, c, h, w] if c == self.channels => Ok((n, h * w)),
            _ => Err(shape_err!(
                "batch norm over {} channels got input {}",
                self.channels,
                x.shape()
            )),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            self.cache = None;
            return self.infer(x);
        }
        let (n, hw) = self.split(&x)?;
        let count = n * hw;
        if count < 2 {
            return Err(config_err!(
                "train-mode batch norm needs at least 2 values per channel, got {count}"
            ));
        }
        let c = self.channels;
        let cnt = T::from_usize(count);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (i, plane) in x.data().chunks_exact(hw).enumerate() {
            let ch = i % c;
            mean[ch] = plane.iter().fold(mean[ch], |a, &v| a + v);
        }
        mean.iter_mut().for_each(|m| *m = *m / cnt);
        for (i, plane) in x.data().chunks_exact(hw).enumerate() {
            let ch = i % c;
            let m = mean[ch];
            var[ch] = plane.iter().fold(var[ch], |a, &v| a + (v - m) * (v - m));
        }
        var.iter_mut().for_each(|v| *v = *v / cnt);

        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + self.eps).sqrt())
            .collect();
        let unbias = cnt / (cnt - T::one());
        let mom = self.momentum;
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (T::one() - mom) * *rm + mom * mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
        }

        let mut xhat = x;
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.data(), self.beta.data());
        for (i, (xp, yp)) in xhat
            .data_mut()
            .chunks_exact_mut(hw)
            .zip(y.data_mut().chunks_exact_mut(hw))
            .enumerate()
        {
            let ch = i % c;
            let (m, s) = (mean[ch], inv_std[ch]);
            for (xv, yv) in xp.iter_mut().zip(yp.iter_mut()) {
                *xv = (*xv - m) * s;
                *yv = g[ch] * *xv + b[ch];
            }
        }
        self.cache = Some(Cache { xhat, inv_std });
        Ok(y)
    }

    pub fn infer(&self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        let (_, hw) = self.split(&x)?;
        let c = self.channels;
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma.data()[ch] / (self.running_var.data()[ch] + self.eps).sqrt())
            .collect();
        let (rm, b) = (self.running_mean.data(), self.beta.data());
        for (i, plane) in x.data_mut().chunks_exact_mut(hw).enumerate() {
            let ch = i % c;
            let (m, s, sh) = (rm[ch], scale[ch], b[ch]);
            plane.iter_mut().for_each(|v| *v = (*v - m) * s + sh);
        }
        Ok(x)
    }

    /// `dx = gamma * inv_std / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))`.
    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            config_err!("batch norm backward called without a train-mode forward")
        })?;
        if dy.shape() != cache.xhat.shape() {
            return Err(shape_err!(
                "batch norm backward got dy of shape {}",
                dy.shape()
            ));
        }
        let (n, hw) = self.split(&dy)?;
        let c = self.channels;
        let cnt = T::from_usize(n * hw);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (i, (dp, xp)) in dy
            .data()
            .chunks_exact(hw)
            .zip(cache.xhat.data().chunks_exact(hw))
            .enumerate()
        {
            let ch = i % c;
            for (&d, &xh) in dp.iter().zip(xp) {
                sum_dy[ch] = sum_dy[ch] + d;
                sum_dy_xhat[ch] = sum_dy_xhat[ch] + d * xh;
            }
        }
        self.grad_beta.data_mut().copy_from_slice(&sum_dy);
        self.grad_gamma.data_mut().copy_from_slice(&sum_dy_xhat);

        let g = self.gamma.data();
        for (i, (dp, xp)) in dy
            .data_mut()
            .chunks_exact_mut(hw)
            .zip(cache.xhat.data().chunks_exact(hw))
            .enumerate()
        {
            let ch = i % c;
            let k = g[ch] * cache.inv_std[ch] / cnt;
            let (sd, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
            for (d, &xh) in dp.iter_mut().zip(xp) {
                *d = k * (cnt * *d - sd - xh * sdx);
            }
        }
        Ok(dy)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn eval_identity_configuration() {
        let mut bn = BatchNorm2d::<f64>::new(3).unwrap();
        bn.eps = 1e-12;
        let x = Tensor::uniform(&[2, 3, 4, 4], &mut Rng::new(5), -2.0, 2.0).unwrap();
        let y = bn.infer(x.clone()).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs());
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(2).unwrap();
        let x = Tensor::uniform(&[4, 2, 5, 5], &mut Rng::new(8), -3.0, 7.0).unwrap();
        let y = bn.forward(x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 2 + ch) * 25..(n * 2 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1).unwrap();
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(x, Mode::Train).unwrap();
        // mean 4, unbiased var 20/3
        assert!((bn.running_mean.data()[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_batch_is_config_error() {
        let mut bn = BatchNorm2d::<f32>::new(2).unwrap();
        let x = Tensor::zeros(&[1, 2, 1, 1]).unwrap();
        assert!(matches!(
            bn.forward(x, Mode::Train),
            Err(crate::Error::Config(_))
        ));
    }
}
