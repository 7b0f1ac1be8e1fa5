use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{config_err, shape_err, Result};
use crate::par::for_each_sample;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2x2 max-pool with stride 2.
///
/// Ties go to the first maximal element in row-major window order, and
/// backward routes each gradient to that element only.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    pub(crate) parallel: bool,
    /// Winning offset (0..4, row-major) per output cell, plus input dims.
    argmax: Option<(Vec<u8>, [usize; 4])>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    fn dims<T: Scalar>(x: &Tensor<T>) -> Result<[usize; 4]> {
        match *x.dims() {
            [n, c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok([n, c, h, w]),
            _ => Err(shape_err!(
                "2x2 max-pool needs [N, C, H, W] with even H and W, got {}",
                x.shape()
            )),
        }
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>, want_argmax: bool) -> Result<(Tensor<T>, Vec<u8>)> {
        let [n, c, h, w] = Self::dims(x)?;
        let (oh, ow) = (h / 2, w / 2);
        let out_len = n * c * oh * ow;
        let mut y = vec![T::zero(); out_len];
        let mut arg = if want_argmax {
            vec![0u8; out_len]
        } else {
            Vec::new()
        };
        let plane = h * w;
        let pool_plane = |src: &[T], dst: &mut [T], mut idx: Option<&mut [u8]>| {
            for oy in 0..oh {
                let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
                let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
                for ox in 0..ow {
                    let cand = [r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]];
                    let mut best = 0;
                    for k in 1..4 {
                        if cand[k] > cand[best] {
                            best = k;
                        }
                    }
                    dst[oy * ow + ox] = cand[best];
                    if let Some(idx) = idx.as_deref_mut() {
                        idx[oy * ow + ox] = best as u8;
                    }
                }
            }
        };
        if want_argmax {
            for ((src, dst), idx) in x
                .data()
                .chunks_exact(plane)
                .zip(y.chunks_exact_mut(oh * ow))
                .zip(arg.chunks_exact_mut(oh * ow))
            {
                pool_plane(src, dst, Some(idx));
            }
        } else {
            for_each_sample(
                self.parallel,
                x.data(),
                plane,
                &mut y,
                oh * ow,
                |_, src, dst| pool_plane(src, dst, None),
            );
        }
        Ok((Tensor::from_vec(&[n, c, oh, ow], y)?, arg))
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let train = mode == Mode::Train;
        let (y, arg) = self.run(&x, train)?;
        self.argmax = train.then(|| (arg, Self::dims(&x).expect("checked in run")));
        Ok(y)
    }

    pub fn infer<T: Scalar>(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(&x, false)?.0)
    }

    pub fn backward<T: Scalar>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let (arg, [n, c, h, w]) = self
            .argmax
            .as_ref()
            .ok_or_else(|| config_err!("max-pool backward called without a train-mode forward"))?;
        let (oh, ow) = (h / 2, w / 2);
        if dy.dims() != [*n, *c, oh, ow] {
            return Err(shape_err!(
                "max-pool backward got dy of shape {}",
                dy.shape()
            ));
        }
        let mut dx = vec![T::zero(); n * c * h * w];
        for ((dst, g), idx) in dx
            .chunks_exact_mut(h * w)
            .zip(dy.data().chunks_exact(oh * ow))
            .zip(arg.chunks_exact(oh * ow))
        {
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = idx[oy * ow + ox] as usize;
                    let (iy, ix) = (2 * oy + k / 2, 2 * ox + k % 2);
                    dst[iy * w + ix] = g[oy * ow + ox];
                }
            }
        }
        Tensor::from_vec(&[*n, *c, *h, *w], dx)
    }

    pub fn clear_cache(&mut self) {
        self.argmax = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max() {
        let mut p = MaxPool2d::new();
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.forward(x, Mode::Train).unwrap().data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let mut p = MaxPool2d::new();
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 3.0).unwrap();
        p.forward(x, Mode::Train).unwrap();
        let dx = p
            .backward(Tensor::<f32>::ones(&[1, 1, 2, 2]).unwrap())
            .unwrap();
        #[rustfmt::skip]
        let want = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(dx.data(), &want);
    }

    #[test]
    fn halves_even_dims_and_rejects_odd() {
        let p = MaxPool2d::new();
        let y = p
            .infer(Tensor::<f32>::zeros(&[2, 3, 224, 224]).unwrap())
            .unwrap();
        assert_eq!(y.dims(), &[2, 3, 112, 112]);
        assert!(p
            .infer(Tensor::<f32>::zeros(&[1, 1, 3, 4]).unwrap())
            .is_err());
    }
}
