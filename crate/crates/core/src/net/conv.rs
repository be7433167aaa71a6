use alloc::vec;
use alloc::vec::Vec;

use super::config::{LayerShape, KERNEL, LEAKY_SLOPE};
use crate::real::Real;

/// How convolutions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvImpl {
    /// Patch matrix plus matrix product.
    #[default]
    Gemm,
    /// Direct nested loops; slow, kept as a reference.
    Naive,
}

/// One 3x3 convolution with zero padding 1.
///
/// `weight` is laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub shape: LayerShape,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn out_dims(h: usize, w: usize, stride: usize) -> (usize, usize) {
    (h.div_ceil(stride), w.div_ceil(stride))
}

fn leaky<T: Real>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        z * T::of(LEAKY_SLOPE)
    }
}

/// Patch-matrix elements processed per block; keeps the block cache resident.
const BLOCK_ELEMS: usize = 1 << 16;
const TAP_BLOCK_ELEMS: usize = 1 << 16;

/// Unrolls output rows `oy0..oy1` of a convolution over `x` (`c x h x w`)
/// into a `(c*9) x ((oy1-oy0)*wo)` patch matrix.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, stride: usize, rows: (usize, usize), col: &mut [T]) {
    let (_, wo) = out_dims(h, w, stride);
    let (oy0, oy1) = rows;
    let n = (oy1 - oy0) * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ci * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let dst = &mut row[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        match kx {
                            0 => {
                                dst[0] = T::zero();
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = T::zero();
                            }
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters the patch matrix back, accumulating into `dx`.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, stride: usize, rows: (usize, usize), dx: &mut [T]) {
    let (_, wo) = out_dims(h, w, stride);
    let (oy0, oy1) = rows;
    let n = (oy1 - oy0) * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((ci * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                    if stride == 1 {
                        let (d, s) = if kx == 0 {
                            (&mut dst[..w - 1], &src[1..])
                        } else if kx == 1 {
                            (&mut dst[..], src)
                        } else {
                            (&mut dst[1..], &src[..w - 1])
                        };
                        d.iter_mut().zip(s).for_each(|(a, &g)| *a = *a + g);
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Reusable work buffers for [`ConvLayer`] passes.
#[derive(Debug, Clone, Default)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    padded: Vec<T>,
    block: Vec<T>,
    dz: Vec<T>,
}

impl<T: Real> ConvScratch<T> {
    pub fn new() -> Self {
        ConvScratch { col: Vec::new(), padded: Vec::new(), block: Vec::new(), dz: Vec::new() }
    }
}

fn reset<T: Real>(v: &mut Vec<T>, len: usize) {
    v.clear();
    v.resize(len, T::zero());
}

/// Copies `x` into a zero border of one pixel, so that each tap of a
/// stride-1 kernel is a constant offset. Returns the padded plane length,
/// which carries two trailing elements for the last taps of the last row.
fn pad<T: Real>(x: &[T], c: usize, h: usize, w: usize, xp: &mut Vec<T>) -> usize {
    let wp = w + 2;
    let plane = (h + 2) * wp + 2;
    reset(xp, c * plane);
    for ci in 0..c {
        for y in 0..h {
            let dst = ci * plane + (y + 1) * wp + 1;
            xp[dst..dst + w].copy_from_slice(&x[(ci * h + y) * w..][..w]);
        }
    }
    plane
}

const TAPS: usize = KERNEL * KERNEL;

impl<T: Real> ConvLayer<T> {
    pub fn zeros(shape: LayerShape) -> Self {
        ConvLayer { shape, weight: vec![T::zero(); shape.weight_len()], bias: vec![T::zero(); shape.out_ch] }
    }

    fn k(&self) -> usize {
        self.shape.in_ch * TAPS
    }

    /// Output rows per block of the patch-matrix path.
    fn col_rows(&self, ho: usize, wo: usize) -> usize {
        (BLOCK_ELEMS / (self.k() * wo)).clamp(1, ho)
    }

    /// Output rows per block of the shifted-tap path.
    fn tap_rows(&self, h: usize, wp: usize) -> usize {
        (TAP_BLOCK_ELEMS / ((self.shape.in_ch + self.shape.out_ch) * wp)).clamp(1, h)
    }

    /// Output (activation applied) of the layer on `x` (`in_ch x h x w`).
    pub fn forward(&self, x: &[T], h: usize, w: usize, imp: ConvImpl, scratch: &mut ConvScratch<T>) -> Vec<T> {
        let mut out = Vec::new();
        self.forward_into(x, h, w, imp, scratch, &mut out);
        out
    }

    /// As [`ConvLayer::forward`], writing into `out` and reusing its allocation.
    pub fn forward_into(&self, x: &[T], h: usize, w: usize, imp: ConvImpl, scratch: &mut ConvScratch<T>, out: &mut Vec<T>) {
        let s = self.shape;
        let (ho, wo) = out_dims(h, w, s.stride);
        reset(out, s.out_ch * ho * wo);
        match imp {
            ConvImpl::Gemm if s.stride == 1 => self.forward_taps(x, h, w, scratch, out),
            ConvImpl::Gemm => self.forward_col(x, h, w, scratch, out),
            ConvImpl::Naive => self.forward_naive(x, h, w, out),
        }
        if s.leaky {
            out.iter_mut().for_each(|v| *v = leaky(*v));
        }
    }

    fn forward_col(&self, x: &[T], h: usize, w: usize, sc: &mut ConvScratch<T>, out: &mut [T]) {
        let s = self.shape;
        let (ho, wo) = out_dims(h, w, s.stride);
        let n = ho * wo;
        let k = self.k();
        for (o, chunk) in out.chunks_exact_mut(n).enumerate() {
            chunk.fill(self.bias[o]);
        }
        let rows = self.col_rows(ho, wo);
        if sc.col.len() < k * rows * wo {
            sc.col.resize(k * rows * wo, T::zero());
        }
        for oy0 in (0..ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(ho);
            let nb = (oy1 - oy0) * wo;
            let col = &mut sc.col[..k * nb];
            im2col(x, s.in_ch, h, w, s.stride, (oy0, oy1), col);
            let c = &mut out[oy0 * wo..];
            T::gemm(s.out_ch, k, nb, T::one(), &self.weight, (k as isize, 1), col, (nb as isize, 1), T::one(), c, (n as isize, 1));
        }
    }

    /// Stride 1: one product per tap against a shifted view of the padded
    /// input. Outputs are computed `w + 2` wide and the two extra columns dropped.
    fn forward_taps(&self, x: &[T], h: usize, w: usize, sc: &mut ConvScratch<T>, out: &mut [T]) {
        let (ci, co) = (self.shape.in_ch, self.shape.out_ch);
        let wp = w + 2;
        let plane = pad(x, ci, h, w, &mut sc.padded);
        let rows = self.tap_rows(h, wp);
        for oy0 in (0..h).step_by(rows) {
            let oy1 = (oy0 + rows).min(h);
            let nb = (oy1 - oy0) * wp;
            reset(&mut sc.block, co * nb);
            for tap in 0..TAPS {
                let off = (oy0 + tap / KERNEL) * wp + tap % KERNEL;
                T::gemm(
                    co,
                    ci,
                    nb,
                    T::one(),
                    &self.weight[tap..],
                    ((ci * TAPS) as isize, TAPS as isize),
                    &sc.padded[off..],
                    (plane as isize, 1),
                    T::one(),
                    &mut sc.block,
                    (nb as isize, 1),
                );
            }
            for o in 0..co {
                for oy in oy0..oy1 {
                    let src = &sc.block[o * nb + (oy - oy0) * wp..][..w];
                    let dst = &mut out[(o * h + oy) * w..][..w];
                    dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v + self.bias[o]);
                }
            }
        }
    }

    fn forward_naive(&self, x: &[T], h: usize, w: usize, out: &mut [T]) {
        let s = self.shape;
        let (ho, wo) = out_dims(h, w, s.stride);
        for o in 0..s.out_ch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = self.bias[o];
                    for ci in 0..s.in_ch {
                        for ky in 0..KERNEL {
                            let iy = (oy * s.stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..KERNEL {
                                let ix = (ox * s.stride + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv = self.weight[((o * s.in_ch + ci) * KERNEL + ky) * KERNEL + kx];
                                acc = acc + wv * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }

    /// Reverse pass. `y` is the forward output and `dy` its upstream
    /// gradient. Weight and bias gradients are accumulated into `grad`; the
    /// input gradient is accumulated into `dx` when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        y: &[T],
        dy: &[T],
        grad: &mut ConvLayer<T>,
        dx: Option<&mut [T]>,
        scratch: &mut ConvScratch<T>,
    ) {
        let s = self.shape;
        let (ho, wo) = out_dims(h, w, s.stride);
        // Upstream gradient through the activation. Stride 1 keeps it in
        // the bordered layout of `pad`.
        let (row_w, origin, plane) = if s.stride == 1 { (w + 2, w + 3, (h + 2) * (w + 2) + 2) } else { (wo, 0, ho * wo) };
        let slope = T::of(LEAKY_SLOPE);
        reset(&mut scratch.dz, s.out_ch * plane);
        for o in 0..s.out_ch {
            let mut sum = T::zero();
            for oy in 0..ho {
                let src = (o * ho + oy) * wo;
                let dst = &mut scratch.dz[o * plane + origin + oy * row_w..][..wo];
                for ((d, &yv), &g) in dst.iter_mut().zip(&y[src..src + wo]).zip(&dy[src..src + wo]) {
                    *d = if !s.leaky || yv > T::zero() { g } else { g * slope };
                    sum = sum + *d;
                }
            }
            grad.bias[o] = grad.bias[o] + sum;
        }
        if s.stride == 1 {
            self.backward_taps(x, h, w, grad, dx, scratch);
        } else {
            self.backward_col(x, h, w, grad, dx, scratch);
        }
    }

    fn backward_col(&self, x: &[T], h: usize, w: usize, grad: &mut ConvLayer<T>, mut dx: Option<&mut [T]>, sc: &mut ConvScratch<T>) {
        let s = self.shape;
        let (ho, wo) = out_dims(h, w, s.stride);
        let n = ho * wo;
        let k = self.k();
        let rows = self.col_rows(ho, wo);
        if sc.col.len() < k * rows * wo {
            sc.col.resize(k * rows * wo, T::zero());
        }
        for oy0 in (0..ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(ho);
            let nb = (oy1 - oy0) * wo;
            let col = &mut sc.col[..k * nb];
            let dzb = &sc.dz[oy0 * wo..];
            im2col(x, s.in_ch, h, w, s.stride, (oy0, oy1), col);
            T::gemm(s.out_ch, nb, k, T::one(), dzb, (n as isize, 1), col, (1, nb as isize), T::one(), &mut grad.weight, (k as isize, 1));
            if let Some(dx) = dx.as_deref_mut() {
                T::gemm(k, s.out_ch, nb, T::one(), &self.weight, (1, k as isize), dzb, (n as isize, 1), T::zero(), col, (nb as isize, 1));
                col2im(col, s.in_ch, h, w, s.stride, (oy0, oy1), dx);
            }
        }
    }

    /// Stride 1. Weight gradients correlate the bordered upstream gradient
    /// with shifted inputs; the input gradient correlates shifted upstream
    /// gradients with the transposed, flipped kernel.
    fn backward_taps(&self, x: &[T], h: usize, w: usize, grad: &mut ConvLayer<T>, dx: Option<&mut [T]>, sc: &mut ConvScratch<T>) {
        let (ci, co) = (self.shape.in_ch, self.shape.out_ch);
        let wp = w + 2;
        let plane = pad(x, ci, h, w, &mut sc.padded);
        let rows = self.tap_rows(h, wp);
        let w_strides = ((ci * TAPS) as isize, TAPS as isize);
        let mut dx = dx;
        for oy0 in (0..h).step_by(rows) {
            let oy1 = (oy0 + rows).min(h);
            let nb = (oy1 - oy0) * wp;
            let dzb = &sc.dz[oy0 * wp + wp + 1..];
            for tap in 0..TAPS {
                let off = (oy0 + tap / KERNEL) * wp + tap % KERNEL;
                T::gemm(co, nb, ci, T::one(), dzb, (plane as isize, 1), &sc.padded[off..], (1, plane as isize), T::one(), &mut grad.weight[tap..], w_strides);
            }
            let Some(dx) = dx.as_deref_mut() else { continue };
            reset(&mut sc.block, ci * nb);
            for tap in 0..TAPS {
                let off = (oy0 + tap / KERNEL) * wp + tap % KERNEL;
                T::gemm(
                    ci,
                    co,
                    nb,
                    T::one(),
                    &self.weight[TAPS - 1 - tap..],
                    (w_strides.1, w_strides.0),
                    &sc.dz[off..],
                    (plane as isize, 1),
                    T::one(),
                    &mut sc.block,
                    (nb as isize, 1),
                );
            }
            for c in 0..ci {
                for oy in oy0..oy1 {
                    let src = &sc.block[c * nb + (oy - oy0) * wp..][..w];
                    let dst = &mut dx[(c * h + oy) * w..][..w];
                    dst.iter_mut().zip(src).for_each(|(d, &g)| *d = *d + g);
                }
            }
        }
    }
}
