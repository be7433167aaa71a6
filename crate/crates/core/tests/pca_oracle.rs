use approx::assert_relative_eq;
use cervreg_core::linalg::jacobi_eigen;
use cervreg_core::metrics::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_cdf, student_t_two_tailed};
use cervreg_core::pca::fit;
use cervreg_core::GrayImage;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// Images built from a few smooth patterns plus noise, so the spectrum decays.
fn images(p: usize, w: usize, h: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Vec<f32>> = (0..4)
        .map(|k| {
            (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f32, (i / w) as f32);
                    ((x * (k + 1) as f32 * 0.4).sin() * (y * 0.3 + k as f32).cos()) * 0.2
                })
                .collect()
        })
        .collect();
    (0..p)
        .map(|_| {
            let weights: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let px: Vec<f32> = (0..w * h)
                .map(|i| {
                    let s: f32 = patterns.iter().zip(&weights).map(|(p, c)| p[i] * c).sum();
                    (0.5 + s + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0)
                })
                .collect();
            GrayImage::new(w, h, px).unwrap()
        })
        .collect()
}

fn data_matrix(imgs: &[GrayImage]) -> DMatrix<f64> {
    let n = imgs[0].pixels().len();
    DMatrix::from_fn(imgs.len(), n, |i, k| imgs[i].pixels()[k] as f64)
}

#[test]
fn eigenvalues_sum_to_total_variance() {
    let imgs = images(12, 10, 9, 1);
    let m = fit(&imgs).unwrap();
    let x = data_matrix(&imgs);
    let n = x.ncols();
    let mean = x.row_mean();
    let total: f64 = (0..x.nrows()).map(|i| (x.row(i) - &mean).norm_squared()).sum::<f64>() / (n - 1) as f64;
    assert_relative_eq!(m.total_variance, total, max_relative = 1e-12);
    assert_relative_eq!(m.eigvals.iter().sum::<f64>(), total, max_relative = 1e-9);
    assert!(m.eigvals.windows(2).all(|w| w[0] >= w[1]));
    assert_relative_eq!(m.cevr(12).unwrap(), 1.0, max_relative = 1e-9);
}

#[test]
fn residual_shrinks_as_components_are_added() {
    let imgs = images(10, 8, 8, 2);
    let m = fit(&imgs).unwrap();
    for img in &imgs {
        let mut prev = f64::INFINITY;
        for q in 0..=10 {
            let recon = if q == 0 { m.mu.clone() } else { m.reconstruct(img, q).unwrap() };
            let r: f64 = recon.iter().zip(img.pixels()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            assert!(r <= prev + 1e-12, "q = {q}: {r} > {prev}");
            prev = r;
        }
        assert!(prev < 1e-16);
    }
}

#[test]
fn pc_images_are_orthonormal() {
    let imgs = images(9, 12, 7, 3);
    let m = fit(&imgs).unwrap();
    let rank = 8; // centering removes one dimension
    for i in 0..rank {
        for j in 0..rank {
            let d: f64 = m.pcs[i].iter().zip(&m.pcs[j]).map(|(a, b)| a * b).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9, "({i}, {j}) = {d}");
        }
    }
    assert!(m.eigvals[8] < 1e-12 * m.eigvals[0]);
}

#[test]
fn loadings_are_sign_fixed_and_fit_is_deterministic() {
    let imgs = images(8, 9, 9, 4);
    let a = fit(&imgs).unwrap();
    assert_eq!(a, fit(&imgs).unwrap());
    let p = a.p;
    for j in 0..p {
        let col: Vec<f64> = (0..p).map(|i| a.loadings[i * p + j]).collect();
        let big = col.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap();
        assert!(big > 0.0);
    }
}

#[test]
fn reconstruction_matches_svd_projection() {
    let imgs = images(14, 11, 10, 5);
    let m = fit(&imgs).unwrap();
    let x = data_matrix(&imgs);
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let svd = centered.clone().svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let v_t = svd.v_t.unwrap();
    let q = 8;
    for (i, img) in imgs.iter().enumerate().step_by(3) {
        let d: DVector<f64> = centered.row(i).transpose();
        let mut want: DVector<f64> = mean.transpose();
        for &k in &order[..q] {
            let v: DVector<f64> = v_t.row(k).transpose();
            want += &v * v.dot(&d);
        }
        let got = m.reconstruct(img, q).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "image {i}: {g} vs {w}");
        }
    }
    for (k, &j) in order[..q].iter().enumerate() {
        let sigma2 = svd.singular_values[j].powi(2) / (x.ncols() - 1) as f64;
        assert_relative_eq!(m.eigvals[k], sigma2, max_relative = 1e-8);
    }
}

#[test]
fn jacobi_matches_nalgebra_on_random_symmetric_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in [1, 2, 5, 13] {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = &b + b.transpose();
        let flat: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
        let e = jacobi_eigen(&flat, n, 1e-14);
        let mut want: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        want.sort_by(|x, y| y.total_cmp(x));
        for (g, w) in e.values.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
        for j in 0..n {
            let v = DVector::from_vec(e.vector(j));
            assert!((&a * &v - &v * e.values[j]).norm() < 1e-9);
        }
    }
}

#[test]
fn special_functions_match_statrs() {
    for x in [0.1, 0.5, 1.0, 2.5, 7.0, 30.0, 171.3] {
        assert_relative_eq!(ln_gamma(x), statrs_ln_gamma(x), max_relative = 1e-12, epsilon = 1e-13);
    }
    for (a, b) in [(0.5, 0.5), (2.0, 3.0), (9.5, 0.5), (40.0, 0.5)] {
        for x in [0.01, 0.3, 0.5, 0.77, 0.99] {
            assert_relative_eq!(regularized_incomplete_beta(a, b, x), beta_reg(a, b, x), epsilon = 1e-12);
        }
    }
    for dof in [1.0, 2.0, 5.0, 19.0, 83.0] {
        let d = StudentsT::new(0.0, 1.0, dof).unwrap();
        for t in [-6.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5] {
            assert!((student_t_cdf(t, dof) - d.cdf(t)).abs() < 1e-12);
            let two = 2.0 * (1.0 - d.cdf(t.abs()));
            assert!((student_t_two_tailed(t, dof) - two).abs() < 1e-12);
        }
    }
}

#[test]
fn paired_t_test_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [2usize, 5, 17, 60] {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.3..0.2)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap();
        let r = paired_t_test(&a, &b).unwrap();
        assert_relative_eq!(r.t, t, max_relative = 1e-12);
        assert_eq!(r.dof, n - 1);
        assert!((r.alpha - 2.0 * (1.0 - dist.cdf(t.abs()))).abs() < 1e-12);
    }
}
