//! IJV localization: threshold, connected components, watershed separation,
//! heuristic object selection and ellipse approximation.

mod components;
mod ellipse;
mod watershed;

use alloc::vec::Vec;

use num_traits::Float;

pub use components::{binarize, components_mask, connected_components, keep_n_largest, Component};
pub use ellipse::{axis_angle_diff, fit_ellipse, normalize_half_turn, EllipseParams};
pub use watershed::{find_markers, squared_distance_transform, watershed, Marker};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// Segmentation parameters.
///
/// Defaults are tuned to the phantom generator's 400x300 canvas and are
/// dataset dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct SegConfig {
    /// Foreground threshold; pixels at or below it are lumen candidates.
    pub g_thresh: f32,
    /// Objects kept after labeling.
    pub n: usize,
    /// Admissible rows `(y_min, y_max)` for the IJV centroid.
    pub y_band: (f64, f64),
    /// Maximum IJV-to-CCA centroid distance in pixels.
    pub d_max: f64,
    /// Admissible CCA area `(min, max)` in pixels.
    pub area_range: (usize, usize),
    /// Watershed marker suppression radius.
    pub r_min: f64,
    /// Minimum dynamic of a watershed marker in pixels.
    pub min_dynamic: f64,
    /// Gaussian pre-smoothing before thresholding; 0 disables it.
    pub smooth_sigma: f64,
    /// Fixed anchor replacing the CCA detector when set.
    pub cca_anchor: Option<(f64, f64)>,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            g_thresh: 0.35,
            n: 6,
            y_band: (90.0, 210.0),
            d_max: 70.0,
            area_range: (120, 900),
            r_min: 5.0,
            min_dynamic: 1.0,
            smooth_sigma: 1.5,
            cca_anchor: None,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_thresh > 0.0 && self.g_thresh < 1.0) {
            return Err(Error::InvalidArgument("g_thresh must lie in (0, 1)"));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1"));
        }
        if !(self.y_band.0 < self.y_band.1) {
            return Err(Error::InvalidArgument("y_band must satisfy y_min < y_max"));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidArgument("d_max must be positive"));
        }
        if self.area_range.0 > self.area_range.1 {
            return Err(Error::InvalidArgument("area_range must satisfy min <= max"));
        }
        if !(self.r_min >= 0.0 && self.smooth_sigma >= 0.0 && self.min_dynamic >= 0.0) {
            return Err(Error::InvalidArgument("r_min, min_dynamic and smooth_sigma must be non-negative"));
        }
        Ok(())
    }

    /// Configuration for re-segmenting an affinely normalized crop: the IJV
    /// sits at the crop center, which replaces the CCA as anchor.
    pub fn for_crop(width: usize, height: usize) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        SegConfig {
            y_band: (cy - 12.0, cy + 12.0),
            d_max: 12.0,
            cca_anchor: Some((cx, cy)),
            ..SegConfig::default()
        }
    }
}

/// The CCA: among components whose area lies in `cfg.area_range`, the most
/// circular one; ties go to the larger area.
pub fn detect_cca(components: &[Component], cfg: &SegConfig) -> Result<Component> {
    let (lo, hi) = cfg.area_range;
    components
        .iter()
        .filter(|c| (lo..=hi).contains(&c.area()))
        .map(|c| (c.circularity(), c))
        .max_by(|(ca, a), (cb, b)| {
            ca.total_cmp(cb).then(a.area().cmp(&b.area())).then(b.label.cmp(&a.label))
        })
        .map(|(_, c)| c.clone())
        .ok_or(Error::CcaNotFound)
}

/// The IJV: largest component other than `cca` whose centroid row lies in
/// `cfg.y_band` and whose centroid is within `cfg.d_max` of the CCA centroid.
pub fn select_ijv(components: &[Component], cca: &Component, cfg: &SegConfig) -> Result<Component> {
    select_near(components, cca.centroid, Some(cca.label), cfg)
}

fn select_near(
    components: &[Component],
    anchor: (f64, f64),
    exclude: Option<u32>,
    cfg: &SegConfig,
) -> Result<Component> {
    let (y_min, y_max) = cfg.y_band;
    components
        .iter()
        .filter(|c| Some(c.label) != exclude)
        .filter(|c| c.centroid.1 >= y_min && c.centroid.1 <= y_max)
        .filter(|c| {
            let dx = c.centroid.0 - anchor.0;
            let dy = c.centroid.1 - anchor.1;
            Float::sqrt(dx * dx + dy * dy) <= cfg.d_max
        })
        .max_by(|a, b| a.area().cmp(&b.area()).then(b.label.cmp(&a.label)))
        .cloned()
        .ok_or(Error::IjvNotFound)
}

/// Everything the segmentation pipeline produced for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Thresholded mask restricted to the `n` largest objects.
    pub mask: BinaryMask,
    /// Objects after watershed separation.
    pub objects: Vec<Component>,
    /// Detected CCA, `None` when an anchor point was configured.
    pub cca: Option<Component>,
    pub ijv: Component,
    pub ellipse: EllipseParams,
}

/// Full IJV localization on a sonogram.
pub fn segment(img: &GrayImage, cfg: &SegConfig) -> Result<Segmentation> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let smoothed;
    let source = if cfg.smooth_sigma > 0.0 {
        smoothed = gaussian_blur(img, cfg.smooth_sigma);
        &smoothed
    } else {
        img
    };
    let fg = binarize(source, cfg.g_thresh);
    let kept = keep_n_largest(&connected_components(&fg), cfg.n);
    let mask = components_mask(&kept, w, h);
    let objects = watershed(&mask, cfg.r_min, cfg.min_dynamic);
    let (cca, ijv) = match cfg.cca_anchor {
        Some(anchor) => (None, select_near(&objects, anchor, None, cfg)?),
        None => {
            let cca = detect_cca(&objects, cfg)?;
            let ijv = select_ijv(&objects, &cca, cfg)?;
            (Some(cca), ijv)
        }
    };
    let ellipse = fit_ellipse(&ijv.pixels)?;
    Ok(Segmentation { mask, objects, cca, ijv, ellipse })
}

/// Separable Gaussian blur with border replication, kernel radius `3 sigma`.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let (w, h) = img.dims();
    let radius = Float::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| Float::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let src = img.pixels();
    let mut tmp = alloc::vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + sx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out.push(acc as f32);
        }
    }
    GrayImage::from_clamped(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_component(label: u32, cx: f64, cy: f64, r: f64) -> Component {
        let e = EllipseParams::circle(cx, cy, r);
        Component::from_pixels(label, e.rasterize(200, 200).iter_foreground().collect())
    }

    fn ellipse_component(label: u32, e: EllipseParams) -> Component {
        Component::from_pixels(label, e.rasterize(200, 200).iter_foreground().collect())
    }

    #[test]
    fn cca_prefers_disc_over_elongated() {
        let cfg = SegConfig { area_range: (100, 2000), ..SegConfig::default() };
        let disc = disc_component(1, 50.0, 50.0, 12.0);
        let elong = ellipse_component(2, EllipseParams::new(120.0, 120.0, 30.0, 8.0, 0.0).unwrap());
        assert_eq!(detect_cca(&[elong.clone(), disc.clone()], &cfg).unwrap().label, 1);
        assert_eq!(detect_cca(std::slice::from_ref(&elong), &cfg).unwrap().label, 2);
        let narrow = SegConfig { area_range: (10, 20), ..cfg };
        assert_eq!(detect_cca(&[elong, disc], &narrow), Err(Error::CcaNotFound));
    }

    #[test]
    fn ijv_largest_in_band() {
        let cfg = SegConfig { y_band: (0.0, 200.0), d_max: 100.0, ..SegConfig::default() };
        let cca = disc_component(1, 100.0, 100.0, 10.0);
        let big = Component::from_pixels(2, (0..400).map(|i| (60 + i % 20, 60 + i / 20)).collect());
        let small = Component::from_pixels(3, (0..150).map(|i| (130 + i % 10, 90 + i / 10)).collect());
        let comps = [cca.clone(), small.clone(), big.clone()];
        assert_eq!(select_ijv(&comps, &cca, &cfg).unwrap().label, 2);
        let far = SegConfig { d_max: 5.0, ..cfg };
        assert_eq!(select_ijv(&comps, &cca, &far), Err(Error::IjvNotFound));
    }

    #[test]
    fn blur_preserves_constant() {
        let img = GrayImage::filled(9, 7, 0.4);
        let out = gaussian_blur(&img, 1.5);
        assert!(out.pixels().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }
}
