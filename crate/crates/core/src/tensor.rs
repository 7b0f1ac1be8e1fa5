//! Dense row-major tensors and the kernels the layers are built from.
//!
//! Reductions accumulate in increasing flat-index order and elementwise ops
//! visit elements front to back; nothing reassociates sums, so identical
//! inputs give bit-identical outputs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Tensor dimensions. Every dim is at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(shape_err!("shape must have at least one dimension"));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(shape_err!("dimension {pos} of {dims:?} is zero"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| shape_err!("element count of {dims:?} overflows usize"))?;
        Ok(Self(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::one())
    }

    /// Fills with independent draws from `[lo, hi)` in row-major order.
    pub fn uniform(dims: &[usize], rng: &mut Rng, lo: T, hi: T) -> Result<Self> {
        if !(lo < hi) {
            return Err(shape_err!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            ));
        }
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Self { shape, data })
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(shape_err!(
                "buffer of {} elements cannot have shape {shape}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. to run an `f32` model's weights in `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Leading dim and the product of the rest, for `[N, ...]` tensors.
    pub fn batch_split(&self) -> (usize, usize) {
        let n = self.dims()[0];
        (n, self.numel() / n)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Matrix product of `[M, K] x [K, N]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (&[m, k], &[k2, n]) = (self.dims(), other.dims()) else {
            return Err(shape_err!(
                "matmul needs rank-2 operands, got {} and {}",
                self.shape,
                other.shape
            ));
        };
        if k != k2 {
            return Err(shape_err!(
                "matmul inner dims differ: {} x {}",
                self.shape,
                other.shape
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k as isize,
            1,
            &other.data,
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Self::from_vec(&[m, n], out)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "{op} needs equal shapes, got {} and {}",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn ln(&self) -> Self {
        self.map(T::ln)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Reduces over `axes`, dropping them from the shape. Reducing every axis
    /// yields shape `[1]`.
    pub fn reduce(&self, axes: &[usize], mode: ReduceMode) -> Result<Self> {
        let dims = self.dims();
        let rank = dims.len();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(shape_err!("axis {a} out of range for shape {}", self.shape));
            }
            if reduced[a] {
                return Err(shape_err!("axis {a} listed twice"));
            }
            reduced[a] = true;
        }
        let out_dims: Vec<usize> = dims
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_dims = if out_dims.is_empty() {
            vec![1]
        } else {
            out_dims
        };
        let out_len: usize = out_dims.iter().product();
        let count: usize = dims
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();

        let init = match mode {
            ReduceMode::Max => T::neg_infinity(),
            _ => T::zero(),
        };
        let mut out = vec![init; out_len];
        let mut index = vec![0usize; rank];
        for &v in &self.data {
            let mut o = 0;
            for ax in 0..rank {
                if !reduced[ax] {
                    o = o * dims[ax] + index[ax];
                }
            }
            out[o] = match mode {
                ReduceMode::Max => out[o].max(v),
                _ => out[o] + v,
            };
            for ax in (0..rank).rev() {
                index[ax] += 1;
                if index[ax] < dims[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        if mode == ReduceMode::Mean {
            let c = T::from_usize(count);
            out.iter_mut().for_each(|v| *v = *v / c);
        }
        Self::from_vec(&out_dims, out)
    }
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Logistic function that never evaluates `exp` of a positive argument.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Geometry of one square-kernel convolution over a single `[C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvGeometry {
    /// Validates that the output grid is a positive integer size.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(shape_err!("kernel and stride must be positive"));
        }
        for (name, len) in [("height", height), ("width", width)] {
            let padded = len + 2 * pad;
            if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
                return Err(shape_err!(
                    "{name} {len} with pad {pad}, kernel {kernel}, stride {stride} \
                     does not give an integral output size"
                ));
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            pad,
            stride,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the column matrix: `C * k * k`.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Columns of the column matrix: `Hout * Wout`.
    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unrolls one `[C, H, W]` image into `cols` (`[C*k*k, Hout*Wout]`).
    /// Row `(c, ky, kx)` holds that kernel tap across every output position;
    /// taps that land in the padding read zero.
    pub fn im2col_into<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        debug_assert_eq!(cols.len(), self.col_rows() * self.col_cols());
        let (oh, ow) = (self.out_height(), self.out_width());
        let (h, w, k, s) = (self.height, self.width, self.kernel, self.stride);
        let pad = self.pad as isize;
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            *out = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col_into`](Self::im2col_into): scatters `cols` back,
    /// summing overlapping taps into `image` (which is overwritten).
    pub fn col2im_into<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        debug_assert_eq!(cols.len(), self.col_rows() * self.col_cols());
        image.fill(T::zero());
        let (oh, ow) = (self.out_height(), self.out_width());
        let (h, w, k, s) = (self.height, self.width, self.kernel, self.stride);
        let pad = self.pad as isize;
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `[N, C, H, W]` to `[N, C*k*k, Hout*Wout]`.
pub fn im2col<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    pad: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = x.dims() else {
        return Err(shape_err!("im2col expects [N, C, H, W], got {}", x.shape()));
    };
    let geo = ConvGeometry::new(c, h, w, kernel, pad, stride)?;
    let per = geo.col_rows() * geo.col_cols();
    let mut out = vec![T::zero(); n * per];
    for (img, cols) in x
        .data()
        .chunks_exact(geo.image_len())
        .zip(out.chunks_exact_mut(per))
    {
        geo.im2col_into(img, cols);
    }
    Tensor::from_vec(&[n, geo.col_rows(), geo.col_cols()], out)
}

/// `[N, C*k*k, Hout*Wout]` back to `[N, C, H, W]` for the given geometry.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, geometry: &ConvGeometry) -> Result<Tensor<T>> {
    let &[n, rows, ncols] = cols.dims() else {
        return Err(shape_err!(
            "col2im expects [N, rows, cols], got {}",
            cols.shape()
        ));
    };
    if rows != geometry.col_rows() || ncols != geometry.col_cols() {
        return Err(shape_err!(
            "column tensor {} does not match geometry ({} x {})",
            cols.shape(),
            geometry.col_rows(),
            geometry.col_cols()
        ));
    }
    let per = rows * ncols;
    let mut out = vec![T::zero(); n * geometry.image_len()];
    for (c, img) in cols
        .data()
        .chunks_exact(per)
        .zip(out.chunks_exact_mut(geometry.image_len()))
    {
        geometry.col2im_into(c, img);
    }
    Tensor::from_vec(
        &[n, geometry.channels, geometry.height, geometry.width],
        out,
    )
}
