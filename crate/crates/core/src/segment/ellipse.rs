use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::linalg::eigen_2x2;

/// Geometric summary of a segmented vessel.
///
/// `phi` is the rotation of the major axis against the x axis in image
/// coordinates (y down), normalized to `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl EllipseParams {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, phi: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && cx.is_finite() && cy.is_finite() && phi.is_finite()) {
            return Err(Error::InvalidArgument("ellipse parameters must be finite"));
        }
        if !(b > 0.0 && a >= b) {
            return Err(Error::InvalidArgument("ellipse axes must satisfy a >= b > 0"));
        }
        Ok(EllipseParams { cx, cy, a, b, phi: normalize_half_turn(phi) })
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        EllipseParams { cx, cy, a: r, b: r, phi: 0.0 }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        core::f64::consts::PI * self.a * self.b
    }

    /// Point expressed in the ellipse frame (major axis along +x).
    #[inline]
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = Float::sin_cos(self.phi);
        let dx = x - self.cx;
        let dy = y - self.cy;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Normalized radius `sqrt((x'/a)^2 + (y'/b)^2)`; 1 on the boundary.
    #[inline]
    pub fn implicit_radius(&self, x: f64, y: f64) -> f64 {
        let (lx, ly) = self.to_local(x, y);
        Float::sqrt((lx / self.a) * (lx / self.a) + (ly / self.b) * (ly / self.b))
    }

    /// First-order signed distance to the boundary in pixels, negative inside.
    ///
    /// Uses `(rho - 1) / |grad rho|`, exact for circles.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (lx, ly) = self.to_local(x, y);
        let a2 = self.a * self.a;
        let b2 = self.b * self.b;
        let rho = Float::sqrt(lx * lx / a2 + ly * ly / b2);
        if rho == 0.0 {
            return -self.b;
        }
        let grad = Float::sqrt(lx * lx / (a2 * a2) + ly * ly / (b2 * b2)) / rho;
        (rho - 1.0) / grad
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.implicit_radius(x, y) <= 1.0
    }

    /// Pixel-center rasterization of the solid ellipse.
    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64, y as f64))
    }
}

/// Maps an angle onto `(-pi/2, pi/2]` (axes are undirected).
pub fn normalize_half_turn(phi: f64) -> f64 {
    use core::f64::consts::PI;
    let mut p = phi % PI;
    if p <= -PI / 2.0 {
        p += PI;
    } else if p > PI / 2.0 {
        p -= PI;
    }
    p
}

/// Smallest absolute difference between two undirected axis angles.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    Float::abs(normalize_half_turn(a - b))
}

/// Ellipse with the same second moments as the pixel set.
///
/// Axis lengths are `2 sqrt(lambda)` of the coordinate covariance, so a solid
/// rendered ellipse round-trips. Equal eigenvalues give `phi = 0`.
pub fn fit_ellipse(pixels: &[(usize, usize)]) -> Result<EllipseParams> {
    if pixels.len() < 5 {
        return Err(Error::DegenerateEllipse);
    }
    let n = pixels.len() as f64;
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x as f64, ay + y as f64));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let dx = x as f64 - mx;
        let dy = y as f64 - my;
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    cxx /= n;
    cxy /= n;
    cyy /= n;
    let (l1, l2, angle) = eigen_2x2(cxx, cxy, cyy);
    // Collinear sets have a vanishing minor variance.
    if l2 <= 1e-9 * l1.max(1.0) {
        return Err(Error::DegenerateEllipse);
    }
    let phi = if (l1 - l2) <= 1e-9 * l1 { 0.0 } else { normalize_half_turn(angle) };
    Ok(EllipseParams { cx: mx, cy: my, a: 2.0 * Float::sqrt(l1), b: 2.0 * Float::sqrt(l2), phi })
}
