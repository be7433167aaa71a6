//! Deterministic cervical sonogram phantoms.
//!
//! A phantom contains a dark elliptical IJV, a dark circular CCA with an
//! echogenic wall, two bright fascia lines, depth attenuation and
//! multiplicative speckle. A minority of images carries horizontal
//! reverberation bands inside the IJV lumen.

use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::segment::EllipseParams;

const MAX_ATTEMPTS: usize = 100;

/// Generator parameters. Ranges are inclusive `(min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub ijv_center_x: (f64, f64),
    pub ijv_center_y: (f64, f64),
    pub ijv_a: (f64, f64),
    pub ijv_b: (f64, f64),
    /// IJV major-axis angle range in degrees.
    pub ijv_phi_deg: (f64, f64),
    /// Minimum `a / b` of the IJV.
    pub ijv_min_aspect: f64,
    pub cca_radius: (f64, f64),
    /// CCA center distance from the IJV center.
    pub cca_offset: (f64, f64),
    /// CCA direction from the IJV center in degrees (y down).
    pub cca_direction_deg: (f64, f64),
    pub background_level: f32,
    pub lumen_level: f32,
    pub wall_level: f32,
    pub fascia_level: f32,
    /// Standard deviation of the multiplicative speckle.
    pub speckle_sigma: f32,
    pub reverberation_prob: f64,
    pub reverberation_level: f32,
    /// Width of the lumen-to-tissue intensity ramp in pixels.
    pub wall_ramp: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            width: 400,
            height: 300,
            ijv_center_x: (150.0, 230.0),
            ijv_center_y: (130.0, 170.0),
            ijv_a: (14.0, 26.0),
            ijv_b: (8.0, 16.0),
            ijv_phi_deg: (-25.0, 25.0),
            ijv_min_aspect: 1.5,
            cca_radius: (8.0, 14.0),
            cca_offset: (20.0, 45.0),
            cca_direction_deg: (-20.0, 60.0),
            background_level: 0.45,
            lumen_level: 0.08,
            wall_level: 0.75,
            fascia_level: 0.85,
            speckle_sigma: 0.25,
            reverberation_prob: 0.2,
            reverberation_level: 0.6,
            wall_ramp: 2.0,
        }
    }
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub ijv: EllipseParams,
    pub cca: EllipseParams,
    pub subject_id: usize,
    pub image_id: usize,
    /// Rows carrying reverberation bands (empty when none were drawn).
    pub reverberation_rows: Vec<usize>,
}

/// A bright curved line `y(x) = base + curvature * ((x - x0) / 100)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Fascia {
    base: f64,
    curvature: f64,
    x0: f64,
    thickness: f64,
}

impl Fascia {
    fn y_at(&self, x: f64) -> f64 {
        let t = (x - self.x0) / 100.0;
        self.base + self.curvature * t * t
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Anatomy {
    ijv: EllipseParams,
    cca: EllipseParams,
    upper: Fascia,
    lower: Fascia,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 <= range.0 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Mixes seed components into one 64-bit seed (splitmix64 finalizer).
fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn vessels_overlap(ijv: &EllipseParams, cca: &EllipseParams, margin: f64) -> bool {
    let grown = EllipseParams { a: ijv.a + margin, b: ijv.b + margin, ..*ijv };
    let r = cca.a + margin;
    let steps = Float::ceil(r) as i64;
    for dy in -steps..=steps {
        for dx in -steps..=steps {
            let (fx, fy) = (dx as f64, dy as f64);
            if fx * fx + fy * fy <= r * r && grown.contains(cca.cx + fx, cca.cy + fy) {
                return true;
            }
        }
    }
    false
}

fn inside_canvas(e: &EllipseParams, spec: &PhantomSpec, margin: f64) -> bool {
    let r = e.a + margin;
    e.cx - r >= 0.0 && e.cy - r >= 0.0 && e.cx + r <= spec.width as f64 - 1.0 && e.cy + r <= spec.height as f64 - 1.0
}

fn placement_ok(ijv: &EllipseParams, cca: &EllipseParams, spec: &PhantomSpec) -> bool {
    inside_canvas(ijv, spec, 6.0) && inside_canvas(cca, spec, 6.0) && !vessels_overlap(ijv, cca, 2.0 * spec.wall_ramp + 3.0)
}

fn sample_anatomy(rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> Result<Anatomy> {
    for _ in 0..MAX_ATTEMPTS {
        let a = uniform(rng, spec.ijv_a);
        let b_max = spec.ijv_b.1.min(a / spec.ijv_min_aspect);
        if b_max < spec.ijv_b.0 {
            continue;
        }
        let b = uniform(rng, (spec.ijv_b.0, b_max));
        let phi = uniform(rng, spec.ijv_phi_deg).to_radians();
        let cx = uniform(rng, spec.ijv_center_x);
        let cy = uniform(rng, spec.ijv_center_y);
        let ijv = EllipseParams { cx, cy, a, b, phi };
        let r = uniform(rng, spec.cca_radius);
        let dist = uniform(rng, spec.cca_offset);
        let dir = uniform(rng, spec.cca_direction_deg).to_radians();
        let (s, c) = Float::sin_cos(dir);
        let cca = EllipseParams::circle(cx + dist * c, cy + dist * s, r);
        if !placement_ok(&ijv, &cca, spec) {
            continue;
        }
        let top = (cy - ijv_half_height(&ijv)).min(cca.cy - r - 2.0);
        let bottom = (cy + ijv_half_height(&ijv)).max(cca.cy + r + 2.0);
        let upper = Fascia {
            base: top - uniform(rng, (8.0, 18.0)),
            curvature: -uniform(rng, (0.0, 12.0)),
            x0: cx,
            thickness: uniform(rng, (2.0, 4.0)),
        };
        let lower = Fascia {
            base: bottom + uniform(rng, (10.0, 24.0)),
            curvature: uniform(rng, (0.0, 12.0)),
            x0: cx,
            thickness: uniform(rng, (2.0, 4.0)),
        };
        return Ok(Anatomy { ijv, cca, upper, lower });
    }
    Err(Error::PlacementFailed { attempts: MAX_ATTEMPTS })
}

/// Half extent of the ellipse along y.
fn ijv_half_height(e: &EllipseParams) -> f64 {
    let (s, c) = Float::sin_cos(e.phi);
    Float::sqrt(e.a * e.a * s * s + e.b * e.b * c * c)
}

fn perturb(rng: &mut ChaCha8Rng, base: &Anatomy, spec: &PhantomSpec) -> Result<Anatomy> {
    for _ in 0..MAX_ATTEMPTS {
        let ijv = EllipseParams {
            cx: base.ijv.cx + uniform(rng, (-2.0, 2.0)),
            cy: base.ijv.cy + uniform(rng, (-2.0, 2.0)),
            a: base.ijv.a * (1.0 + uniform(rng, (-0.08, 0.08))),
            b: base.ijv.b * (1.0 + uniform(rng, (-0.08, 0.08))),
            phi: base.ijv.phi + uniform(rng, (-5.0, 5.0)).to_radians(),
        };
        let ijv = EllipseParams { b: ijv.b.min(ijv.a), ..ijv };
        let cca = EllipseParams::circle(
            base.cca.cx + uniform(rng, (-2.0, 2.0)),
            base.cca.cy + uniform(rng, (-2.0, 2.0)),
            base.cca.a * (1.0 + uniform(rng, (-0.08, 0.08))),
        );
        if !placement_ok(&ijv, &cca, spec) {
            continue;
        }
        let shift_u = uniform(rng, (-2.0, 2.0));
        let shift_l = uniform(rng, (-2.0, 2.0));
        let upper = Fascia { base: base.upper.base + shift_u, ..base.upper };
        let lower = Fascia { base: base.lower.base + shift_l, ..base.lower };
        return Ok(Anatomy { ijv, cca, upper, lower });
    }
    Err(Error::PlacementFailed { attempts: MAX_ATTEMPTS })
}

fn smoothstep01(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

fn render(anatomy: &Anatomy, spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> (GrayImage, Vec<usize>) {
    let (w, h) = (spec.width, spec.height);
    let ramp = spec.wall_ramp.max(1e-6);
    let bg = spec.background_level as f64;
    let lumen = spec.lumen_level as f64;

    // Reverberation bands: 1-3 rows in the upper half of the IJV lumen.
    let mut bands: Vec<(f64, f64, f64)> = Vec::new(); // (y, half_length, thickness)
    if rng.random_bool(spec.reverberation_prob.clamp(0.0, 1.0)) {
        let count = rng.random_range(1..=3);
        let half_h = ijv_half_height(&anatomy.ijv);
        for k in 0..count {
            let frac = 0.25 + 0.2 * k as f64 + uniform(rng, (-0.05, 0.05));
            let y = anatomy.ijv.cy - half_h * (1.0 - frac * 1.2).max(0.1);
            bands.push((Float::round(y), uniform(rng, (0.5, 0.7)), uniform(rng, (1.0, 2.0))));
        }
    }
    let mut band_rows = Vec::new();

    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = y as f64;
        let attenuation = 1.05 - 0.2 * fy / h as f64;
        for x in 0..w {
            let fx = x as f64;
            let mut v = bg * attenuation;
            for fascia in [&anatomy.upper, &anatomy.lower] {
                let d = Float::abs(fy - fascia.y_at(fx));
                let weight = smoothstep01(fascia.thickness / 2.0 + 0.5 - d);
                v = v + (spec.fascia_level as f64 * attenuation - v) * weight;
            }
            // Echogenic CCA wall.
            let dc = anatomy.cca.signed_distance(fx, fy);
            let wall = smoothstep01(1.0 - Float::abs(dc - ramp) / ramp);
            v = v + (spec.wall_level as f64 * attenuation - v) * wall;
            // Lumens: intensity ramps from lumen level up to tissue at the boundary.
            for vessel in [&anatomy.ijv, &anatomy.cca] {
                let s = vessel.signed_distance(fx, fy);
                let t = smoothstep01((s + ramp) / ramp);
                v = lumen + (v - lumen) * t;
            }
            for &(by, half_len, thick) in &bands {
                if Float::abs(fy - by) <= thick / 2.0 && anatomy.ijv.signed_distance(fx, fy) < -1.0 {
                    if let Some((mid, half)) = chord(&anatomy.ijv, fy) {
                        if Float::abs(fx - mid) <= half * half_len {
                            v = spec.reverberation_level as f64;
                        }
                    }
                }
            }
            let g: f64 = rng.sample(StandardNormal);
            v *= 1.0 + spec.speckle_sigma as f64 * g;
            pixels.push(v as f32);
        }
    }
    for &(by, _, _) in &bands {
        if by >= 0.0 && (by as usize) < h {
            band_rows.push(by as usize);
        }
    }
    band_rows.sort_unstable();
    band_rows.dedup();
    (GrayImage::from_clamped(w, h, pixels), band_rows)
}

/// Midpoint and half length of the horizontal chord through the ellipse at row `y`.
fn chord(e: &EllipseParams, y: f64) -> Option<(f64, f64)> {
    let (s, c) = Float::sin_cos(e.phi);
    let (a2, b2) = (e.a * e.a, e.b * e.b);
    let dy = y - e.cy;
    let qa = c * c / a2 + s * s / b2;
    let qb = 2.0 * dy * c * s * (1.0 / a2 - 1.0 / b2);
    let qc = dy * dy * (s * s / a2 + c * c / b2) - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return None;
    }
    Some((e.cx - qb / (2.0 * qa), Float::sqrt(disc) / (2.0 * qa)))
}

/// One phantom drawn entirely from `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(GrayImage, PhantomTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0]));
    let anatomy = sample_anatomy(&mut rng, spec)?;
    let mut noise = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 1]));
    let (img, rows) = render(&anatomy, spec, &mut noise);
    let truth = PhantomTruth { ijv: anatomy.ijv, cca: anatomy.cca, subject_id: 0, image_id: 0, reverberation_rows: rows };
    Ok((img, truth))
}

/// `n_subjects x per_subject` phantoms with the default generator ranges.
pub fn generate_dataset(n_subjects: usize, per_subject: usize, base_seed: u64) -> Result<Vec<(GrayImage, PhantomTruth)>> {
    generate_dataset_with(&PhantomSpec::default(), n_subjects, per_subject, base_seed)
}

/// Each subject gets one base anatomy; each image perturbs it slightly and
/// draws fresh speckle. Image ids run consecutively over all subjects.
pub fn generate_dataset_with(
    spec: &PhantomSpec,
    n_subjects: usize,
    per_subject: usize,
    base_seed: u64,
) -> Result<Vec<(GrayImage, PhantomTruth)>> {
    if n_subjects == 0 || per_subject == 0 {
        return Err(Error::InvalidArgument("subject and image counts must be at least 1"));
    }
    let mut out = Vec::with_capacity(n_subjects * per_subject);
    for s in 0..n_subjects {
        let mut subject_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[base_seed, s as u64, 0xA5]));
        let base = sample_anatomy(&mut subject_rng, spec)?;
        for i in 0..per_subject {
            let image_id = s * per_subject + i;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[base_seed, s as u64, i as u64, 0x5A]));
            let anatomy = perturb(&mut rng, &base, spec)?;
            let (img, rows) = render(&anatomy, spec, &mut rng);
            out.push((
                img,
                PhantomTruth { ijv: anatomy.ijv, cca: anatomy.cca, subject_id: s, image_id, reverberation_rows: rows },
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = PhantomSpec { seed: 11, ..PhantomSpec::default() };
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
    }

    #[test]
    fn lumen_darker_than_background() {
        let spec = PhantomSpec { seed: 3, ..PhantomSpec::default() };
        let (img, truth) = generate_phantom(&spec).unwrap();
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let (fx, fy) = (x as f64, y as f64);
                let v = img.get(x, y) as f64;
                if truth.ijv.signed_distance(fx, fy) < -2.0 {
                    inside += v;
                    ni += 1;
                } else if truth.ijv.signed_distance(fx, fy) > 5.0 && truth.cca.signed_distance(fx, fy) > 5.0 {
                    outside += v;
                    no += 1;
                }
            }
        }
        assert!(inside / (ni as f64) < outside / (no as f64) - 0.2);
    }

    #[test]
    fn forced_reverberation_draws_bright_band() {
        let spec = PhantomSpec { seed: 5, reverberation_prob: 1.0, ..PhantomSpec::default() };
        let (img, truth) = generate_phantom(&spec).unwrap();
        assert!(!truth.reverberation_rows.is_empty());
        let bright = truth.reverberation_rows.iter().any(|&row| {
            let vals: Vec<f64> = (0..img.width())
                .filter(|&x| truth.ijv.signed_distance(x as f64, row as f64) < -1.0)
                .map(|x| img.get(x, row) as f64)
                .filter(|&v| v > 0.2)
                .collect();
            !vals.is_empty() && vals.iter().sum::<f64>() / vals.len() as f64 > spec.background_level as f64
        });
        assert!(bright);
    }

    #[test]
    fn dataset_shape() {
        let data = generate_dataset(3, 2, 9).unwrap();
        assert_eq!(data.len(), 6);
        assert_eq!(data[5].1.subject_id, 2);
        assert_eq!(data[5].1.image_id, 5);
        assert_eq!(data, generate_dataset(3, 2, 9).unwrap());
    }

    #[test]
    fn impossible_placement_fails() {
        let spec = PhantomSpec { width: 40, height: 40, ..PhantomSpec::default() };
        assert_eq!(generate_phantom(&spec), Err(Error::PlacementFailed { attempts: MAX_ATTEMPTS }));
    }
}
