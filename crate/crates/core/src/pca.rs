//! Principal component model over a set of equally sized images.
//!
//! Each image is one variable whose `n` pixels are the observations, so the
//! covariance matrix is `p x p` for `p` images. Principal-component images
//! are the centered data projected on the covariance eigenvectors, scaled to
//! unit Euclidean norm.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{check_dims, Error, Result};
use crate::image::GrayImage;
use crate::linalg::jacobi_eigen;
use crate::real::Real;

/// Components retained by the denoised image variant.
pub const DEFAULT_Q: usize = 8;

const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Number of images (variables).
    pub p: usize,
    /// Pixels per image (observations).
    pub n: usize,
    pub width: usize,
    pub height: usize,
    /// Mean image.
    pub mu: Vec<f64>,
    /// Covariance eigenvalues, descending, non-negative.
    pub eigvals: Vec<f64>,
    /// Row-major `p x p`; column `j` is the loading vector of component `j`.
    pub loadings: Vec<f64>,
    /// Unit-norm principal-component images; all-zero for null components.
    pub pcs: Vec<Vec<f64>>,
    /// Sum of the variables' variances (trace of the covariance).
    pub total_variance: f64,
}

/// `beta[i * q + j]` is the weight of PC `j` in the approximation of image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub rows: usize,
    pub q: usize,
    pub beta: Vec<f64>,
}

impl Coefficients {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.beta[i * self.q + j]
    }
}

/// Fits the model. Requires at least two images of identical size.
pub fn fit(images: &[GrayImage]) -> Result<PcaModel> {
    let p = images.len();
    if p < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two images"));
    }
    let (width, height) = images[0].dims();
    for img in images {
        check_dims((width, height), img.dims())?;
    }
    let n = width * height;
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two pixels per image"));
    }

    let mut mu = vec![0.0f64; n];
    for img in images {
        for (m, &v) in mu.iter_mut().zip(img.pixels()) {
            *m += v as f64;
        }
    }
    mu.iter_mut().for_each(|m| *m /= p as f64);

    // Centered data, row-major p x n (one image per row).
    let mut centered = vec![0.0f64; p * n];
    for (i, img) in images.iter().enumerate() {
        for (k, &v) in img.pixels().iter().enumerate() {
            centered[i * n + k] = v as f64 - mu[k];
        }
    }

    let denom = (n - 1) as f64;
    let mut cov = vec![0.0f64; p * p];
    f64::gemm(p, n, p, 1.0 / denom, &centered, (n as isize, 1), &centered, (1, n as isize), 0.0, &mut cov, (p as isize, 1));
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (cov[i * p + j] + cov[j * p + i]);
            cov[i * p + j] = s;
            cov[j * p + i] = s;
        }
    }
    let total_variance: f64 = (0..p).map(|i| centered[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / denom;

    let eig = jacobi_eigen(&cov, p, JACOBI_TOL);
    let eigvals: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let loadings = eig.vectors;

    // PC images: Y = X^T V, n x p, computed as (V^T X)^T row by row.
    let mut proj = vec![0.0f64; p * n];
    f64::gemm(p, p, n, 1.0, &loadings, (1, p as isize), &centered, (n as isize, 1), 0.0, &mut proj, (n as isize, 1));
    let lead = eigvals.first().copied().unwrap_or(0.0);
    let pcs = (0..p)
        .map(|j| {
            let row = &proj[j * n..(j + 1) * n];
            let norm = Float::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if lead > 0.0 && eigvals[j] > 1e-12 * lead && norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();

    Ok(PcaModel { p, n, width, height, mu, eigvals, loadings, pcs, total_variance })
}

impl PcaModel {
    /// Cumulative explained variance ratio of the first `q` components.
    pub fn cevr(&self, q: usize) -> Result<f64> {
        if q == 0 || q > self.p {
            return Err(Error::InvalidArgument("q must satisfy 1 <= q <= p"));
        }
        if !(self.total_variance > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let explained: f64 = self.eigvals[..q].iter().sum();
        Ok((explained / self.total_variance).clamp(0.0, 1.0))
    }

    /// The mean image (the zero-component approximation).
    pub fn mean_image(&self) -> GrayImage {
        GrayImage::from_clamped(self.width, self.height, self.mu.iter().map(|&v| v as f32))
    }

    /// Least-squares weights of the first `q` PC images for `img - mu`.
    pub fn project(&self, img: &GrayImage, q: usize) -> Result<Vec<f64>> {
        check_dims((self.width, self.height), img.dims())?;
        if q > self.p {
            return Err(Error::InvalidArgument("q must not exceed p"));
        }
        Ok(self.pcs[..q]
            .iter()
            .map(|pc| {
                pc.iter().zip(img.pixels()).zip(&self.mu).map(|((y, &x), m)| y * (x as f64 - m)).sum()
            })
            .collect())
    }

    /// Unclamped reconstruction `sum_j beta_j y_j + mu`.
    pub fn reconstruct(&self, img: &GrayImage, q: usize) -> Result<Vec<f64>> {
        let beta = self.project(img, q)?;
        let mut out = self.mu.clone();
        for (b, pc) in beta.iter().zip(&self.pcs) {
            for (o, y) in out.iter_mut().zip(pc) {
                *o += b * y;
            }
        }
        Ok(out)
    }

    /// `q`-component approximation clamped to `[0, 1]`.
    pub fn approximate(&self, img: &GrayImage, q: usize) -> Result<GrayImage> {
        if q == 0 {
            check_dims((self.width, self.height), img.dims())?;
            return Ok(self.mean_image());
        }
        let raw = self.reconstruct(img, q)?;
        Ok(GrayImage::from_clamped(self.width, self.height, raw.into_iter().map(|v| v as f32)))
    }

    /// Coefficient matrix for a batch of images.
    pub fn coefficients(&self, images: &[GrayImage], q: usize) -> Result<Coefficients> {
        let mut beta = Vec::with_capacity(images.len() * q);
        for img in images {
            beta.extend(self.project(img, q)?);
        }
        Ok(Coefficients { rows: images.len(), q, beta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> GrayImage {
        GrayImage::from_fn(6, 5, |x, y| (((x + 1) * (y + 2) * (seed + 3) * 7919) % 97) as f32 / 96.0)
    }

    #[test]
    fn identical_images_have_zero_variance() {
        let a = img(1);
        let m = fit(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!(m.eigvals.iter().all(|&v| v == 0.0));
        assert_eq!(m.mean_image(), a);
        assert_eq!(m.cevr(1), Err(Error::ZeroVariance));
    }

    #[test]
    fn two_images_are_rank_one() {
        let (a, b) = (img(1), img(2));
        let m = fit(&[a.clone(), b.clone()]).unwrap();
        assert!(m.eigvals[0] > 0.0);
        assert!(m.eigvals[1].abs() < 1e-15);
        let diff: Vec<f64> = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| (x - y) as f64).collect();
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos: f64 = diff.iter().zip(&m.pcs[0]).map(|(d, y)| d * y).sum::<f64>() / norm;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cevr_worked_example() {
        let m = PcaModel {
            p: 4,
            n: 1,
            width: 1,
            height: 1,
            mu: vec![0.0],
            eigvals: vec![4.0, 3.0, 2.0, 1.0],
            loadings: vec![0.0; 16],
            pcs: vec![vec![0.0]; 4],
            total_variance: 10.0,
        };
        assert!((m.cevr(2).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(m.cevr(4).unwrap(), 1.0);
        assert!(m.cevr(0).is_err() && m.cevr(5).is_err());
    }

    #[test]
    fn dimension_checks() {
        assert!(fit(&[img(1)]).is_err());
        let other = GrayImage::filled(5, 5, 0.1);
        assert!(matches!(fit(&[img(1), other]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_components_give_mean() {
        let m = fit(&[img(1), img(2), img(3)]).unwrap();
        assert_eq!(m.approximate(&img(2), 0).unwrap(), m.mean_image());
    }
}
