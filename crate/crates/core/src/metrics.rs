//! Registration quality metrics on a belt around the IJV contour, and the
//! paired two-tailed t-test used to compare variants.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{check_dims, Error, Result};
use crate::image::{BinaryMask, DisplacementField, GrayImage};
use crate::segment::EllipseParams;

/// Default belt half-width in pixels.
pub const DEFAULT_BELT_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BeltMask {
    pub mask: BinaryMask,
    pub half_width: f64,
}

/// Pixels whose approximate signed distance to the ellipse boundary is at
/// most `half_width` in magnitude.
pub fn belt_mask(ellipse: &EllipseParams, half_width: f64, dims: (usize, usize)) -> Result<BeltMask> {
    if !(half_width >= 1.0) {
        return Err(Error::InvalidArgument("belt half-width must be at least 1 px"));
    }
    let mask = BinaryMask::from_fn(dims.0, dims.1, |x, y| {
        Float::abs(ellipse.signed_distance(x as f64, y as f64)) <= half_width
    });
    if mask.count() == 0 {
        return Err(Error::EmptyBelt);
    }
    Ok(BeltMask { mask, half_width })
}

/// Mean of `|I(f) - I(moved)|` over the belt.
pub fn mean_abs_delta_i(f: &GrayImage, moved: &GrayImage, belt: &BeltMask) -> Result<f64> {
    check_dims(f.dims(), moved.dims())?;
    check_dims(f.dims(), belt.mask.dims())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((&a, &b), &inside) in f.pixels().iter().zip(moved.pixels()).zip(belt.mask.bits()) {
        if inside {
            sum += Float::abs(a as f64 - b as f64);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyBelt);
    }
    Ok(sum / count as f64)
}

/// Mean displacement length `|u|` over the belt, in pixels.
pub fn mean_deformation_length(field: &DisplacementField, belt: &BeltMask) -> Result<f64> {
    check_dims(field.dims(), belt.mask.dims())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((&ux, &uy), &inside) in field.ux().iter().zip(field.uy()).zip(belt.mask.bits()) {
        if inside {
            let (ux, uy) = (ux as f64, uy as f64);
            sum += Float::sqrt(ux * ux + uy * uy);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyBelt);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub dof: usize,
    /// Two-tailed p-value.
    pub alpha: f64,
}

/// Two-tailed paired t-test on `a - b`.
///
/// With zero spread of the differences the statistic is undefined; the
/// result is `alpha = 1` when the mean difference is zero and `alpha = 0`
/// otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("paired samples must have equal length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = Float::sqrt(var);
    let dof = n - 1;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult { t: 0.0, dof, alpha: 1.0 }
        } else {
            TTestResult { t: Float::signum(mean) * f64::INFINITY, dof, alpha: 0.0 }
        });
    }
    let t = mean / (sd / Float::sqrt(nf));
    Ok(TTestResult { t, dof, alpha: student_t_two_tailed(t, dof as f64) })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_tailed(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// Student's t cumulative distribution function.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * student_t_two_tailed(t, dof);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Lanczos approximation (g = 7, n = 9) of `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = core::f64::consts::PI;
        return Float::ln(pi / Float::abs(Float::sin(pi * x))) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * Float::ln(2.0 * core::f64::consts::PI) + (x + 0.5) * Float::ln(t) - t + Float::ln(acc)
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * Float::ln(x) + b * Float::ln(1.0 - x);
    let front = Float::exp(ln_front);
    // The fraction converges fastest for x < (a + 1) / (a + b + 2).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if Float::abs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if Float::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if Float::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if Float::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if Float::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if Float::abs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Minimum, quartiles (linear interpolation), maximum and mean of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = Float::floor(pos) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        let frac = pos - lo as f64;
        v[lo] + (v[hi] - v[lo]) * frac
    };
    Some(BoxStats {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}
