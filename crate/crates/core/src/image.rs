//! Image and field containers plus bilinear sampling and backward warping.
//!
//! Coordinates are pixel centers: `(x, y)` addresses column `x`, row `y`,
//! with `y` growing downwards. Samples outside `[0, w-1] x [0, h-1]` are
//! clamped to the border.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{check_dims, Error, Result};
use crate::real::Real;

/// Single-channel raster with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidImage("pixel count differs from width * height"));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidImage("intensity outside [0, 1]"));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, values: impl IntoIterator<Item = f32>) -> Self {
        let pixels: Vec<f32> = values.into_iter().map(clamp01).collect();
        assert_eq!(pixels.len(), width * height, "pixel count differs from width * height");
        GrayImage { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage { width, height, pixels: vec![clamp01(value); width * height] }
    }

    /// Builds an image from `f(x, y)`, clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp01(f(x, y)));
            }
        }
        GrayImage { width, height, pixels }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = clamp01(v);
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument("crop window exceeds image"));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage { width: w, height: h, pixels })
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

#[inline]
fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Per-pixel displacement `u = (u_x, u_y)` in pixels.
///
/// The registration field is `phi = Id + u`: output pixel `(x, y)` samples the
/// moving image at `(x + u_x, y + u_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    ux: Vec<f32>,
    uy: Vec<f32>,
}

impl DisplacementField {
    pub fn new(width: usize, height: usize, ux: Vec<f32>, uy: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if ux.len() != n || uy.len() != n {
            return Err(Error::InvalidArgument("field component length differs from width * height"));
        }
        if ux.iter().chain(uy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field component is not finite"));
        }
        Ok(DisplacementField { width, height, ux, uy })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DisplacementField { width, height, ux: vec![0.0; width * height], uy: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, ux: f32, uy: f32) -> Self {
        DisplacementField { width, height, ux: vec![ux; width * height], uy: vec![uy; width * height] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn ux(&self) -> &[f32] {
        &self.ux
    }

    #[inline]
    pub fn uy(&self) -> &[f32] {
        &self.uy
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.ux[i], self.uy[i])
    }

    /// Largest displacement length.
    pub fn max_norm(&self) -> f32 {
        self.ux
            .iter()
            .zip(&self.uy)
            .map(|(&a, &b)| Float::sqrt(a * a + b * b))
            .fold(0.0, f32::max)
    }
}

/// Per-pixel foreground flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument("mask length differs from width * height"));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Row-major iterator over foreground pixel coordinates.
    pub fn iter_foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % w, i / w))
    }
}

/// Bilinear sample with border-replicate clamping.
pub fn bilinear_sample(img: &GrayImage, x: f32, y: f32) -> f32 {
    debug_assert!(!img.is_empty());
    sample_with_grad(&img.pixels, img.width, img.height, x, y).0
}

/// Bilinear sample of a row-major plane plus the partial derivatives with
/// respect to the sample coordinates.
///
/// Along an axis where the coordinate is clamped the derivative is zero.
#[inline]
pub(crate) fn sample_with_grad<T: Real>(data: &[T], w: usize, h: usize, x: T, y: T) -> (T, T, T) {
    let zero = T::zero();
    let xmax = T::from_usize(w - 1).unwrap();
    let ymax = T::from_usize(h - 1).unwrap();
    let (cx, x_inside) = clamp_coord(x, xmax);
    let (cy, y_inside) = clamp_coord(y, ymax);
    let x0 = cx.floor();
    let y0 = cy.floor();
    let fx = cx - x0;
    let fy = cy - y0;
    let ix0 = x0.to_usize().unwrap();
    let iy0 = y0.to_usize().unwrap();
    let ix1 = (ix0 + 1).min(w - 1);
    let iy1 = (iy0 + 1).min(h - 1);
    let v00 = data[iy0 * w + ix0];
    let v10 = data[iy0 * w + ix1];
    let v01 = data[iy1 * w + ix0];
    let v11 = data[iy1 * w + ix1];
    let one = T::one();
    let top = v00 * (one - fx) + v10 * fx;
    let bottom = v01 * (one - fx) + v11 * fx;
    let value = top * (one - fy) + bottom * fy;
    let dx = if x_inside { (v10 - v00) * (one - fy) + (v11 - v01) * fy } else { zero };
    let dy = if y_inside { bottom - top } else { zero };
    (value, dx, dy)
}

#[inline]
fn clamp_coord<T: Real>(v: T, max: T) -> (T, bool) {
    if v < T::zero() {
        (T::zero(), false)
    } else if v > max {
        (max, false)
    } else {
        (v, true)
    }
}

/// Warps `m` by `phi = Id + u`: `out(x, y) = m(x + u_x, y + u_y)`.
pub fn warp(m: &GrayImage, field: &DisplacementField) -> Result<GrayImage> {
    check_dims(m.dims(), field.dims())?;
    let (w, h) = m.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f32 + field.ux[i];
            let sy = y as f32 + field.uy[i];
            out.push(sample_with_grad(&m.pixels, w, h, sx, sy).0);
        }
    }
    Ok(GrayImage { width: w, height: h, pixels: out })
}

/// Warped image together with its per-pixel derivatives with respect to the
/// displacement components. Output pixel `i` depends only on `u(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpJacobian<T> {
    pub moved: Vec<T>,
    pub d_ux: Vec<T>,
    pub d_uy: Vec<T>,
}

/// Differentiable warp on raw planes, generic over precision.
pub fn warp_with_jacobian<T: Real>(m: &[T], w: usize, h: usize, ux: &[T], uy: &[T]) -> WarpJacobian<T> {
    assert_eq!(m.len(), w * h);
    assert_eq!(ux.len(), w * h);
    assert_eq!(uy.len(), w * h);
    let n = w * h;
    let mut moved = Vec::with_capacity(n);
    let mut d_ux = Vec::with_capacity(n);
    let mut d_uy = Vec::with_capacity(n);
    for y in 0..h {
        let fy = T::from_usize(y).unwrap();
        for x in 0..w {
            let i = y * w + x;
            let sx = T::from_usize(x).unwrap() + ux[i];
            let sy = fy + uy[i];
            let (v, dx, dy) = sample_with_grad(m, w, h, sx, sy);
            moved.push(v);
            d_ux.push(dx);
            d_uy.push(dy);
        }
    }
    WarpJacobian { moved, d_ux, d_uy }
}

/// `warp` plus analytic derivatives, on the public container types.
pub fn warp_jacobian(m: &GrayImage, field: &DisplacementField) -> Result<WarpJacobian<f64>> {
    check_dims(m.dims(), field.dims())?;
    let (w, h) = m.dims();
    let mp: Vec<f64> = m.pixels.iter().map(|&v| v as f64).collect();
    let ux: Vec<f64> = field.ux.iter().map(|&v| v as f64).collect();
    let uy: Vec<f64> = field.uy.iter().map(|&v| v as f64).collect();
    Ok(warp_with_jacobian(&mp, w, h, &ux, &uy))
}
