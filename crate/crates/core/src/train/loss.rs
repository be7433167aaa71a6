use alloc::vec::Vec;

use crate::error::{check_dims, Error, Result};
use crate::image::{warp_with_jacobian, DisplacementField, GrayImage};
use crate::real::Real;

/// Value of `J = L_sim + gamma * L_smooth` and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub j: f64,
    pub l_sim: f64,
    pub l_smooth: f64,
    pub gamma: f64,
}

impl LossTerms {
    fn new(l_sim: f64, l_smooth: f64, gamma: f64) -> Self {
        LossTerms { j: l_sim + gamma * l_smooth, l_sim, l_smooth, gamma }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        if !self.l_sim.is_finite() {
            Some("L_sim")
        } else if !self.l_smooth.is_finite() {
            Some("L_smooth")
        } else if !self.j.is_finite() {
            Some("J")
        } else {
            None
        }
    }
}

/// Gradient of `J` with respect to each displacement component.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient<T> {
    pub width: usize,
    pub height: usize,
    pub d_ux: Vec<T>,
    pub d_uy: Vec<T>,
}

/// Mean over pixels of the squared forward differences of both components
/// in both directions. Differences that would leave the image are omitted.
pub fn smoothness<T: Real>(ux: &[T], uy: &[T], w: usize, h: usize) -> f64 {
    let mut acc = 0.0;
    for plane in [ux, uy] {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let v = plane[i].as_f64();
                if x + 1 < w {
                    let d = plane[i + 1].as_f64() - v;
                    acc += d * d;
                }
                if y + 1 < h {
                    let d = plane[i + w].as_f64() - v;
                    acc += d * d;
                }
            }
        }
    }
    acc / (w * h) as f64
}

fn check_planes<T>(f: &[T], m: &[T], ux: &[T], uy: &[T], w: usize, h: usize) -> Result<()> {
    let n = w * h;
    if n == 0 {
        return Err(Error::InvalidArgument("empty image"));
    }
    for len in [f.len(), m.len(), ux.len(), uy.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: (w, h), found: (len, 1) });
        }
    }
    Ok(())
}

/// Loss on raw planes.
pub fn loss_raw<T: Real>(f: &[T], m: &[T], w: usize, h: usize, ux: &[T], uy: &[T], gamma: f64) -> Result<LossTerms> {
    check_planes(f, m, ux, uy, w, h)?;
    let moved = warp_with_jacobian(m, w, h, ux, uy).moved;
    let sse: f64 = moved.iter().zip(f).map(|(&a, &b)| { let d = a.as_f64() - b.as_f64(); d * d }).sum();
    Ok(LossTerms::new(sse / (w * h) as f64, smoothness(ux, uy, w, h), gamma))
}

/// Loss and its analytic gradient on raw planes.
pub fn loss_and_gradient_raw<T: Real>(
    f: &[T],
    m: &[T],
    w: usize,
    h: usize,
    ux: &[T],
    uy: &[T],
    gamma: f64,
) -> Result<(LossTerms, FieldGradient<T>)> {
    check_planes(f, m, ux, uy, w, h)?;
    let n = w * h;
    let jac = warp_with_jacobian(m, w, h, ux, uy);
    let scale = T::of(2.0 / n as f64);
    let mut d_ux = Vec::with_capacity(n);
    let mut d_uy = Vec::with_capacity(n);
    let mut sse = 0.0;
    for (((&moved, &fixed), &jx), &jy) in jac.moved.iter().zip(f).zip(&jac.d_ux).zip(&jac.d_uy) {
        let r = moved - fixed;
        sse += r.as_f64() * r.as_f64();
        d_ux.push(scale * r * jx);
        d_uy.push(scale * r * jy);
    }
    if gamma != 0.0 {
        let g = T::of(gamma) * scale;
        for (plane, grad) in [(ux, &mut d_ux), (uy, &mut d_uy)] {
            smoothness_grad(plane, w, h, g, grad);
        }
    }
    let terms = LossTerms::new(sse / n as f64, smoothness(ux, uy, w, h), gamma);
    Ok((terms, FieldGradient { width: w, height: h, d_ux, d_uy }))
}

/// For every neighbor pair `(i, j)` adds `g * (u_j - u_i)` to `grad_j` and
/// subtracts it from `grad_i`.
fn smoothness_grad<T: Real>(u: &[T], w: usize, h: usize, g: T, grad: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let d = g * (u[i + 1] - u[i]);
                grad[i + 1] = grad[i + 1] + d;
                grad[i] = grad[i] - d;
            }
            if y + 1 < h {
                let d = g * (u[i + w] - u[i]);
                grad[i + w] = grad[i + w] + d;
                grad[i] = grad[i] - d;
            }
        }
    }
}

fn planes(f: &GrayImage, m: &GrayImage, field: &DisplacementField) -> Result<[Vec<f64>; 4]> {
    check_dims(f.dims(), m.dims())?;
    check_dims(f.dims(), field.dims())?;
    let c = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    Ok([c(f.pixels()), c(m.pixels()), c(field.ux()), c(field.uy())])
}

/// `J = MSE(f, m o phi) + gamma * L_smooth(u)`.
pub fn loss(f: &GrayImage, m: &GrayImage, field: &DisplacementField, gamma: f64) -> Result<LossTerms> {
    let [fp, mp, ux, uy] = planes(f, m, field)?;
    loss_raw(&fp, &mp, f.width(), f.height(), &ux, &uy, gamma)
}

/// Analytic `dJ/du`.
pub fn loss_gradient(f: &GrayImage, m: &GrayImage, field: &DisplacementField, gamma: f64) -> Result<FieldGradient<f64>> {
    let [fp, mp, ux, uy] = planes(f, m, field)?;
    Ok(loss_and_gradient_raw(&fp, &mp, f.width(), f.height(), &ux, &uy, gamma)?.1)
}
