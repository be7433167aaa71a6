//! Ellipse-driven affine pre-registration onto a reference IJV.
//!
//! The object ellipse center is moved to the image center, the image is
//! rotated by `-phi` about that center, the axes are scaled by
//! `s_x = a_ref / a_obj`, `s_y = b_ref / b_obj`, and a fixed 208x128 window
//! around the center is cropped.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::{bilinear_sample, GrayImage};
use crate::segment::EllipseParams;

pub const CROP_W: usize = 208;
pub const CROP_H: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    /// Translation moving the object center onto the image center.
    pub t: (f64, f64),
    /// Object rotation; the image is rotated by `-phi`.
    pub phi: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub crop_w: usize,
    pub crop_h: usize,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams { t: (0.0, 0.0), phi: 0.0, s_x: 1.0, s_y: 1.0, crop_w: CROP_W, crop_h: CROP_H }
    }

    /// Applied rotation angle (the negated object angle).
    pub fn applied_rotation(&self) -> f64 {
        -self.phi
    }
}

/// Center of the central crop window, which is also the rotation and scaling
/// pivot. For even size differences this is `((w-1)/2, (h-1)/2)`.
pub fn image_center(width: usize, height: usize, crop_w: usize, crop_h: usize) -> (f64, f64) {
    let off_x = Float::floor((width as f64 - crop_w as f64) / 2.0);
    let off_y = Float::floor((height as f64 - crop_h as f64) / 2.0);
    (off_x + (crop_w as f64 - 1.0) / 2.0, off_y + (crop_h as f64 - 1.0) / 2.0)
}

/// Parameters mapping the object ellipse onto the reference ellipse in an
/// image of size `dims`.
pub fn compute_affine(obj: &EllipseParams, reference: &EllipseParams, dims: (usize, usize)) -> Result<AffineParams> {
    if !(obj.a >= 1.0 && obj.b >= 1.0) {
        return Err(Error::DegenerateEllipse);
    }
    if !(reference.a > 0.0 && reference.b > 0.0) {
        return Err(Error::DegenerateEllipse);
    }
    let c = image_center(dims.0, dims.1, CROP_W, CROP_H);
    Ok(AffineParams {
        t: (c.0 - obj.cx, c.1 - obj.cy),
        phi: obj.phi,
        s_x: reference.a / obj.a,
        s_y: reference.b / obj.b,
        crop_w: CROP_W,
        crop_h: CROP_H,
    })
}

/// Applies translate, rotate(-phi), scale and the central crop by inverse
/// mapping with bilinear sampling.
pub fn apply_affine(img: &GrayImage, p: &AffineParams) -> GrayImage {
    let (w, h) = img.dims();
    let (cx, cy) = image_center(w, h, p.crop_w, p.crop_h);
    // Source position of the crop center: the object center.
    let base_x = cx - p.t.0;
    let base_y = cy - p.t.1;
    let (sin, cos) = Float::sin_cos(p.phi);
    let half_w = (p.crop_w as f64 - 1.0) / 2.0;
    let half_h = (p.crop_h as f64 - 1.0) / 2.0;
    GrayImage::from_fn(p.crop_w, p.crop_h, |i, j| {
        let dx = (i as f64 - half_w) / p.s_x;
        let dy = (j as f64 - half_h) / p.s_y;
        let sx = base_x + (cos * dx - sin * dy);
        let sy = base_y + (sin * dx + cos * dy);
        bilinear_sample(img, sx as f32, sy as f32)
    })
}

/// Where a source point lands in the output crop.
pub fn forward_point(p: &AffineParams, dims: (usize, usize), x: f64, y: f64) -> (f64, f64) {
    let (cx, cy) = image_center(dims.0, dims.1, p.crop_w, p.crop_h);
    let dx = x - (cx - p.t.0);
    let dy = y - (cy - p.t.1);
    let (sin, cos) = Float::sin_cos(p.phi);
    let rx = cos * dx + sin * dy;
    let ry = -sin * dx + cos * dy;
    (rx * p.s_x + (p.crop_w as f64 - 1.0) / 2.0, ry * p.s_y + (p.crop_h as f64 - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_centered_and_equal() {
        let (cx, cy) = image_center(400, 300, CROP_W, CROP_H);
        let e = EllipseParams::new(cx, cy, 20.0, 12.0, 0.3).unwrap();
        let p = compute_affine(&e, &e, (400, 300)).unwrap();
        assert_eq!(p.t, (0.0, 0.0));
        assert_eq!((p.s_x, p.s_y), (1.0, 1.0));
        assert_eq!(p.phi, e.phi);
    }

    #[test]
    fn scale_factors_are_axis_ratios() {
        let obj = EllipseParams::new(10.0, 10.0, 10.0, 8.0, 0.0).unwrap();
        let reference = EllipseParams::new(0.0, 0.0, 20.0, 8.0, 0.0).unwrap();
        let p = compute_affine(&obj, &reference, (400, 300)).unwrap();
        assert_eq!((p.s_x, p.s_y), (2.0, 1.0));
    }

    #[test]
    fn rotation_sign_convention() {
        let obj = EllipseParams::new(10.0, 10.0, 10.0, 8.0, 25f64.to_radians()).unwrap();
        let p = compute_affine(&obj, &obj, (400, 300)).unwrap();
        assert!((p.phi.to_degrees() - 25.0).abs() < 1e-12);
        assert!((p.applied_rotation().to_degrees() + 25.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_object_rejected() {
        let obj = EllipseParams::new(10.0, 10.0, 0.8, 0.5, 0.0).unwrap();
        let reference = EllipseParams::new(0.0, 0.0, 20.0, 8.0, 0.0).unwrap();
        assert_eq!(compute_affine(&obj, &reference, (400, 300)), Err(Error::DegenerateEllipse));
    }

    #[test]
    fn identity_is_central_crop() {
        let img = GrayImage::from_fn(400, 300, |x, y| ((x * 31 + y * 17) % 255) as f32 / 255.0);
        let out = apply_affine(&img, &AffineParams::identity());
        assert_eq!(out, img.crop(96, 86, CROP_W, CROP_H).unwrap());
        let odd = GrayImage::from_fn(301, 211, |x, y| ((x * 7 + y * 3) % 101) as f32 / 100.0);
        let out = apply_affine(&odd, &AffineParams::identity());
        assert_eq!(out, odd.crop(46, 41, CROP_W, CROP_H).unwrap());
    }

    #[test]
    fn forward_point_maps_object_center_to_crop_center() {
        let obj = EllipseParams::new(150.0, 170.0, 15.0, 9.0, 0.4).unwrap();
        let reference = EllipseParams::new(0.0, 0.0, 22.0, 13.0, 0.0).unwrap();
        let p = compute_affine(&obj, &reference, (400, 300)).unwrap();
        let (x, y) = forward_point(&p, (400, 300), 150.0, 170.0);
        assert!((x - 103.5).abs() < 1e-9 && (y - 63.5).abs() < 1e-9);
    }
}
