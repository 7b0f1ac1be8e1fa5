//! Pixel-level preprocessing: grayscale, bilinear resize, Gaussian blur and
//! scaling to `[0, 1]`.
//!
//! Images here are single-channel `f32` planes holding 0..=255 intensities.
//! Decoding lives in the `leancnn` crate.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights for R, G, B.
pub const LUMA_601: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Output side length.
    pub target_size: usize,
    pub luma_weights: [f32; 3],
    /// Odd blur kernel side; 0 or 1 disables blurring.
    pub blur_kernel: usize,
    pub blur_sigma: f32,
    /// Divisor applied last (255 maps 8-bit images to `[0, 1]`).
    pub scale: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: 224,
            luma_weights: LUMA_601,
            blur_kernel: 5,
            blur_sigma: 1.0,
            scale: 255.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 8 || !self.target_size.is_multiple_of(2) {
            return Err(config_err!(
                "target size must be even and at least 8, got {}",
                self.target_size
            ));
        }
        if self.blur_kernel > 1 && (self.blur_kernel.is_multiple_of(2) || !(self.blur_sigma > 0.0))
        {
            return Err(config_err!(
                "blur needs an odd kernel and positive sigma, got {} / {}",
                self.blur_kernel,
                self.blur_sigma
            ));
        }
        if !(self.scale > 0.0) {
            return Err(config_err!("pixel scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(shape_err!(
                "{} pixels cannot form a {width}x{height} image",
                pixels.len()
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Luma of interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8], weights: [f32; 3]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(shape_err!(
                "{} bytes is not {width}x{height} RGB",
                rgb.len()
            ));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| weights[0] * p[0] as f32 + weights[1] * p[1] as f32 + weights[2] * p[2] as f32)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Bilinear resize with half-pixel centres and clamped borders. A same-size
/// resize returns the input unchanged.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let sx = img.width as f32 / width as f32;
    let sy = img.height as f32 / height as f32;
    let coords = |i: usize, scale: f32, len: usize| {
        let src = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f32)
    };
    let xs: Vec<_> = (0..width).map(|x| coords(x, sx, img.width)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = coords(y, sy, img.height);
        let r0 = &img.pixels[y0 * img.width..(y0 + 1) * img.width];
        let r1 = &img.pixels[y1 * img.width..(y1 + 1) * img.width];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    GrayImage {
        width,
        height,
        pixels: out,
    }
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_kernel(size: usize, sigma: f32) -> Vec<f32> {
    let half = (size / 2) as f32;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = (i as f32 - half) as f64;
            num_traits::Float::exp(-d * d / (2.0 * (sigma as f64) * (sigma as f64)))
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated edges.
pub fn gaussian_blur(img: &GrayImage, size: usize, sigma: f32) -> GrayImage {
    if size <= 1 {
        return img.clone();
    }
    let taps = gaussian_kernel(size, sigma);
    let r = (size / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let clamp = |v: isize, len: isize| v.clamp(0, len - 1) as usize;
    let mut tmp = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        let row = &img.pixels[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            tmp[(y * w + x) as usize] = taps
                .iter()
                .enumerate()
                .map(|(i, &t)| t * row[clamp(x + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = taps
                .iter()
                .enumerate()
                .map(|(i, &t)| t * tmp[clamp(y + i as isize - r, h) * w as usize + x as usize])
                .sum();
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Resize, blur and scale a grayscale image into a `[1, S, S]` tensor.
pub fn preprocess_gray(img: &GrayImage, cfg: &PreprocessConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let s = cfg.target_size;
    let resized = resize_bilinear(img, s, s);
    let blurred = gaussian_blur(&resized, cfg.blur_kernel, cfg.blur_sigma);
    let data = blurred.pixels.iter().map(|&v| v / cfg.scale).collect();
    Tensor::from_vec(&[1, s, s], data)
}
