//! Acceptance suite: one line per criterion on stderr, written past the test
//! harness capture so it appears in plain `cargo test` output.
//!
//! Criteria 7 and 8 train full-size networks for tens of minutes; they run
//! only with `CERVREG_ACCEPTANCE_SLOW=1` and report SKIP otherwise. Set
//! `CERVREG_ACCEPTANCE_OUT=<dir>` to keep the criterion 8 experiment.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cervreg::config::ExperimentConfig;
use cervreg::pipeline::{evaluate, evaluate_identity, load_runs, prepare, run_experiment, trends};
use cervreg_core::affine::{apply_affine, compute_affine};
use cervreg_core::image::{warp, DisplacementField, GrayImage};
use cervreg_core::metrics::{paired_t_test, student_t_cdf, DEFAULT_BELT_HALF_WIDTH};
use cervreg_core::net::{build, ForwardCache, NetConfig, NetKind, Network};
use cervreg_core::pca;
use cervreg_core::segment::{axis_angle_diff, segment, watershed, SegConfig};
use cervreg_core::synth::generate_dataset;
use cervreg_core::train::{loss, loss_and_gradient_raw, loss_raw, split_dataset, train_with_progress, TrainConfig};
use cervreg_core::BinaryMask;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

const SLOW_VAR: &str = "CERVREG_ACCEPTANCE_SLOW";
const OUT_VAR: &str = "CERVREG_ACCEPTANCE_OUT";

// Criterion 1
const TARGET_COUNTS: [(NetKind, f64); 3] = [(NetKind::Full, 110_000.0), (NetKind::Reduced, 53_000.0), (NetKind::Filters16, 33_000.0)];
const COUNT_TOL: f64 = 0.15;
const REDUCED_RATIO: (f64, f64) = (0.44, 0.52);
const FILTERS16_RATIO: (f64, f64) = (0.26, 0.34);
// Criterion 2
const FD_SAMPLES: usize = 200;
const FD_SIZE: usize = 16;
const FD_STEP: f64 = 1e-3;
const FD_REL_TOL: f64 = 1e-4;
// Criterion 4
const PCA_TOL: f64 = 1e-8;
const CEVR_TOL: f64 = 1e-9;
const RECON_TOL: f64 = 1e-5;
// Criterion 5
const SEG_CENTER_PX: f64 = 3.0;
const SEG_AXIS_REL: f64 = 0.10;
const SEG_MIN_RATE: f64 = 0.90;
// Criterion 6
const AFF_AXIS_REL: f64 = 0.08;
const AFF_ANGLE_DEG: f64 = 4.0;
const AFF_CENTER_PX: f64 = 2.0;
const AFF_MIN_RATE: f64 = 0.90;
// Criterion 7
const J_RATIO_MAX: f64 = 0.5;
const IMPROVED_MIN: f64 = 0.8;
const TRAIN_BUDGET: Duration = Duration::from_secs(20 * 60);
// Criterion 8
const TREND_BUDGET: Duration = Duration::from_secs(2 * 60 * 60);
// Criterion 9
const T_TOL: f64 = 1e-4;
const ALPHA_TOL: f64 = 1e-6;
const CDF_TOL: f64 = 1e-8;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn slow_enabled() -> bool {
    std::env::var(SLOW_VAR).is_ok_and(|v| v == "1")
}

fn skip() -> Outcome {
    Outcome { status: Status::Skip, detail: format!("slow; set {SLOW_VAR}=1") }
}

fn report_line(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn criterion_1() -> Outcome {
    let full = NetKind::Full.config().param_count() as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, target) in TARGET_COUNTS {
        let n = kind.config().param_count() as f64;
        ok &= (n - target).abs() <= COUNT_TOL * target;
        parts.push(format!("{kind} {n}"));
    }
    let r = NetKind::Reduced.config().param_count() as f64 / full;
    let s = NetKind::Filters16.config().param_count() as f64 / full;
    ok &= (REDUCED_RATIO.0..=REDUCED_RATIO.1).contains(&r) && (FILTERS16_RATIO.0..=FILTERS16_RATIO.1).contains(&s);
    check(ok, format!("{}; reduced/full {r:.4}, filters16/full {s:.4}", parts.join(", ")))
}

fn smooth_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let (a, b) = (rng.random_range(0.2..0.9), rng.random_range(0.2..0.9));
    let (c, d) = (rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0);
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            0.5 + 0.25 * (a * x + c).sin() * (b * y + d).cos() + 0.05 * rng.random::<f64>()
        })
        .collect()
}

/// Loss and the piecewise-linear regime (rectifier signs, bilinear cells).
fn net_loss(net: &Network<f64>, m: &[f64], f: &[f64], n: usize, gamma: f64) -> (f64, Vec<i64>) {
    let mut cache = ForwardCache::new();
    net.forward_raw(m, f, n, n, &mut cache).unwrap();
    let mut regime: Vec<i64> = net.activation_signs(&cache).into_iter().map(i64::from).collect();
    let (ux, uy) = cache.field().unwrap();
    for i in 0..n * n {
        regime.push(((i % n) as f64 + ux[i]).floor() as i64);
        regime.push(((i / n) as f64 + uy[i]).floor() as i64);
    }
    (loss_raw(f, m, n, n, ux, uy, gamma).unwrap().j, regime)
}

/// Worst relative error over sampled weights where the loss is smooth on
/// the difference stencil, and the number of kinked samples skipped.
fn gradient_check(cfg: &NetConfig, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = build::<f64>(cfg, seed).unwrap();
    let last = net.layers_mut().last_mut().unwrap();
    last.weight.iter_mut().for_each(|w| *w = rng.random_range(-0.3..0.3));
    last.bias[0] = 0.37;
    last.bias[1] = -0.29;
    let n = FD_SIZE;
    let m = smooth_image(&mut rng, n, n);
    let f = smooth_image(&mut rng, n, n);
    let gamma = 0.05;
    let mut cache = ForwardCache::new();
    net.forward_raw(&m, &f, n, n, &mut cache).unwrap();
    let (ux, uy) = cache.field().unwrap();
    let (_, g) = loss_and_gradient_raw(&f, &m, n, n, ux, uy, gamma).unwrap();
    let grads = net.backward(&mut cache, &g.d_ux, &g.d_uy).unwrap();
    let (_, base) = net_loss(&net, &m, &f, n, gamma);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < FD_SAMPLES {
        assert!(skipped <= FD_SAMPLES, "too many kinked samples");
        let idx = rng.random_range(0..net.param_count());
        let mut p = net.clone();
        let w0 = net.param(idx);
        let mut central = |h: f64| {
            p.set_param(idx, w0 + h);
            let (up, r_up) = net_loss(&p, &m, &f, n, gamma);
            p.set_param(idx, w0 - h);
            let (down, r_down) = net_loss(&p, &m, &f, n, gamma);
            ((up - down) / (2.0 * h), r_up == base && r_down == base)
        };
        let (wide, smooth_wide) = central(FD_STEP);
        let (narrow, smooth_narrow) = central(FD_STEP / 2.0);
        if !(smooth_wide && smooth_narrow) {
            skipped += 1;
            continue;
        }
        // Richardson extrapolation cancels the second-order truncation term.
        let numeric = (4.0 * narrow - wide) / 3.0;
        let analytic = grads.param(idx);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
        checked += 1;
    }
    (worst, skipped)
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, kind) in NetKind::ALL.into_iter().enumerate() {
        let (worst, skipped) = gradient_check(&kind.config(), 101 + i as u64);
        ok &= worst < FD_REL_TOL;
        parts.push(format!("{kind} worst {worst:.2e} ({skipped} kinked skipped)"));
    }
    check(ok, format!("{FD_SAMPLES} weights each at {FD_SIZE}x{FD_SIZE}: {}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (37, 23);
    let m = GrayImage::from_fn(w, h, |_, _| rng.random());
    let f = GrayImage::from_fn(w, h, |_, _| rng.random());
    let identity = warp(&m, &DisplacementField::zeros(w, h)).unwrap();
    let bit_exact = identity.pixels().iter().zip(m.pixels()).all(|(a, b)| a.to_bits() == b.to_bits());
    let self_loss = loss(&f, &f, &DisplacementField::zeros(w, h), 0.3).unwrap();
    let zero_loss = self_loss.j == 0.0 && self_loss.l_sim == 0.0 && self_loss.l_smooth == 0.0;
    let shift = loss(&f, &m, &DisplacementField::constant(w, h, 1.75, -0.5), 0.3).unwrap();
    check(
        bit_exact && zero_loss && shift.l_smooth == 0.0,
        format!("warp(m,0)==m bitwise {bit_exact}, loss(f,f,0)={:?}, constant-field L_smooth {}", (self_loss.j, self_loss.l_sim, self_loss.l_smooth), shift.l_smooth),
    )
}

fn criterion_4() -> Outcome {
    let images: Vec<GrayImage> = generate_dataset(2, 5, 44).unwrap().into_iter().map(|(img, _)| img).collect();
    let model = pca::fit(&images).unwrap();
    let (p, n) = (images.len(), images[0].pixels().len());
    let mut x = DMatrix::<f64>::zeros(p, n);
    for k in 0..n {
        let mean = images.iter().map(|img| img.pixels()[k] as f64).sum::<f64>() / p as f64;
        for (i, img) in images.iter().enumerate() {
            x[(i, k)] = img.pixels()[k] as f64 - mean;
        }
    }
    let cov = &x * x.transpose() / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut val_err = 0.0f64;
    let mut vec_err = 0.0f64;
    for (j, &o) in order.iter().enumerate() {
        val_err = val_err.max((model.eigvals[j] - eig.eigenvalues[o].max(0.0)).abs());
        let ours: Vec<f64> = (0..p).map(|i| model.loadings[i * p + j]).collect();
        let theirs = eig.eigenvectors.column(o);
        let dot: f64 = ours.iter().zip(theirs.iter()).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        vec_err = vec_err.max(ours.iter().zip(theirs.iter()).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max));
    }
    let cevr: Vec<f64> = (1..=p).map(|q| model.cevr(q).unwrap()).collect();
    let monotone = cevr.windows(2).all(|w| w[1] >= w[0]);
    let full = (cevr[p - 1] - 1.0).abs();
    let recon = images
        .iter()
        .map(|img| {
            let r = model.reconstruct(img, p).unwrap();
            r.iter().zip(img.pixels()).map(|(a, &b)| (a - b as f64).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    check(
        val_err < PCA_TOL && vec_err < PCA_TOL && monotone && full <= CEVR_TOL && recon < RECON_TOL,
        format!("p={p}: eigenvalue err {val_err:.1e}, eigenvector err {vec_err:.1e}, cEVR monotone {monotone}, |cEVR(p)-1| {full:.1e}, q=p recon err {recon:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let data = generate_dataset(10, 5, 5005).unwrap();
    let cfg = SegConfig::default();
    let good = data
        .iter()
        .filter(|(img, truth)| {
            segment(img, &cfg).is_ok_and(|s| {
                let e = s.ellipse;
                let t = truth.ijv;
                (e.cx - t.cx).hypot(e.cy - t.cy) <= SEG_CENTER_PX
                    && (e.a - t.a).abs() <= SEG_AXIS_REL * t.a
                    && (e.b - t.b).abs() <= SEG_AXIS_REL * t.b
            })
        })
        .count();
    let rate = good as f64 / data.len() as f64;
    let discs = BinaryMask::from_fn(80, 50, |x, y| {
        let (x, y) = (x as f64, y as f64);
        (x - 28.0).hypot(y - 25.0) <= 12.0 || (x - 48.0).hypot(y - 25.0) <= 12.0
    });
    let labels = watershed(&discs, cfg.r_min, cfg.min_dynamic).len();
    check(rate >= SEG_MIN_RATE && labels == 2, format!("{good}/{} phantoms within tolerance ({:.0}%), two discs -> {labels} labels", data.len(), rate * 100.0))
}

fn criterion_6() -> Outcome {
    let data = generate_dataset(10, 5, 6006).unwrap();
    let cfg = SegConfig::default();
    let reference = segment(&data[0].0, &cfg).unwrap().ellipse;
    let mut good = 0;
    for (img, _) in &data {
        let Ok(s) = segment(img, &cfg) else { continue };
        let crop = apply_affine(img, &compute_affine(&s.ellipse, &reference, img.dims()).unwrap());
        let (w, h) = crop.dims();
        let Ok(r) = segment(&crop, &SegConfig::for_crop(w, h)) else { continue };
        let e = r.ellipse;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        if (e.a - reference.a).abs() <= AFF_AXIS_REL * reference.a
            && (e.b - reference.b).abs() <= AFF_AXIS_REL * reference.b
            && axis_angle_diff(e.phi, 0.0).to_degrees() <= AFF_ANGLE_DEG
            && (e.cx - cx).hypot(e.cy - cy) <= AFF_CENTER_PX
        {
            good += 1;
        }
    }
    let rate = good as f64 / data.len() as f64;
    check(rate >= AFF_MIN_RATE, format!("{good}/{} crops re-segment onto the reference ({:.0}%)", data.len(), rate * 100.0))
}

fn criterion_7() -> Outcome {
    if !slow_enabled() {
        return skip();
    }
    let start = Instant::now();
    let images: Vec<(usize, GrayImage)> =
        generate_dataset(14, 6, 2024).unwrap().into_iter().map(|(img, t)| (t.image_id, img)).collect();
    let ds = prepare(&images, &SegConfig::default(), None, None).unwrap();
    let cfg = TrainConfig { seed: 7, ..TrainConfig::default() };
    let (train, test) = split_dataset(ds.ids.len(), cfg.split, cfg.seed).unwrap();
    let train_imgs: Vec<GrayImage> = train.iter().map(|&i| ds.original[i].clone()).collect();
    let (net, history) = train_with_progress(&train_imgs, &ds.fixed, &NetKind::Full.config(), &cfg, |s| {
        if s.epoch % 25 == 0 {
            report_line(&format!("  criterion 7: epoch {} J {:.6} ({:.0} s)", s.epoch, s.j, start.elapsed().as_secs_f64()));
        }
    })
    .unwrap();
    let belt = ds.belt(DEFAULT_BELT_HALF_WIDTH).unwrap();
    let moving: Vec<_> = test.iter().map(|&i| (ds.ids[i], &ds.original[i])).collect();
    let before = evaluate_identity(&ds.fixed, &moving, &belt, "original").unwrap();
    let after = evaluate(&net, &ds.fixed, &moving, &belt, "full", "original").unwrap();
    let elapsed = start.elapsed();
    let improved = before.iter().zip(&after).filter(|(b, a)| a.delta_i < b.delta_i).count();
    let frac = improved as f64 / after.len() as f64;
    let (first, last) = (history.first().unwrap().j, history.last().unwrap().j);
    let ratio = last / first;
    check(
        ratio <= J_RATIO_MAX && frac >= IMPROVED_MIN && elapsed <= TRAIN_BUDGET,
        format!(
            "J {first:.6} -> {last:.6} (ratio {ratio:.3}, need <= {J_RATIO_MAX}); delta_i improved on {improved}/{} test images; {:.1} min (budget {} min)",
            after.len(),
            elapsed.as_secs_f64() / 60.0,
            TRAIN_BUDGET.as_secs() / 60
        ),
    )
}

fn trend_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trend.toml")
}

fn criterion_8() -> Outcome {
    if !slow_enabled() {
        return skip();
    }
    let start = Instant::now();
    let mut cfg = ExperimentConfig::load(&trend_config()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    cfg.out_dir = std::env::var_os(OUT_VAR).map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    run_experiment(&cfg).unwrap();
    let (cfg, runs) = load_runs(&cfg.out_dir).unwrap();
    let t = trends(&runs, &cfg.nets().unwrap()).unwrap();
    let elapsed = start.elapsed();
    let nets: Vec<String> = t
        .nets
        .iter()
        .map(|n| format!("{} lower in {}/{} seeds, alpha {:.4}", n.net, n.seeds_lower, n.seeds, n.alpha))
        .collect();
    check(
        t.passed() && elapsed <= TREND_BUDGET,
        format!(
            "{}; reduced delta_i apart {:.1}%; {:.1} min (budget {} min)",
            nets.join("; "),
            t.delta_i_relative().unwrap_or(f64::NAN) * 100.0,
            elapsed.as_secs_f64() / 60.0,
            TREND_BUDGET.as_secs() / 60
        ),
    )
}

/// Composite Simpson integral of the t density on `[0, t]`.
fn t_cdf_by_quadrature(t: f64, dof: f64) -> f64 {
    let ln_norm = ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * (dof * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_norm - (dof + 1.0) / 2.0 * (1.0 + x * x / dof).ln()).exp();
    let steps = 20_000;
    let h = t / steps as f64;
    let mut sum = pdf(0.0) + pdf(t);
    for k in 1..steps {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * pdf(k as f64 * h);
    }
    0.5 + sum * h / 3.0
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut t_err, mut a_err) = (0.0f64, 0.0f64);
    for case in 0..20 {
        let n = [5, 10, 25][case % 3];
        let shift = rng.random_range(-0.5..0.5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + shift + rng.random_range(-0.4..0.4)).collect();
        let got = paired_t_test(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0).unwrap();
        let alpha = 2.0 * (1.0 - dist.cdf(t.abs()));
        t_err = t_err.max((got.t - t).abs());
        a_err = a_err.max((got.alpha - alpha).abs());
    }
    let mut cdf_err = 0.0f64;
    for dof in [1.0, 4.0, 24.0, 80.0] {
        for t in [-6.0, -2.5, -0.7, 0.0, 0.3, 1.2, 3.0, 8.0] {
            cdf_err = cdf_err.max((student_t_cdf(t, dof) - t_cdf_by_quadrature(t, dof)).abs());
        }
    }
    check(
        t_err < T_TOL && a_err < ALPHA_TOL && cdf_err < CDF_TOL,
        format!("20 pairs: max t err {t_err:.1e}, max alpha err {a_err:.1e}; t-CDF vs quadrature max err {cdf_err:.1e}"),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let text = "[data]\nsubjects = 3\nper_subject = 4\nseed = 31\n[train]\nepochs = 2\n[experiment]\nseeds = [0, 1]\npca_q = 4\n";
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = ExperimentConfig::parse(text, Path::new("determinism.toml")).unwrap();
        cfg.out_dir = tmp.path().join(run);
        run_experiment(&cfg).unwrap();
        let files: Vec<(PathBuf, Vec<u8>)> = files_under(&cfg.out_dir)
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| (p.strip_prefix(&cfg.out_dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
            .collect();
        csvs.push(files);
    }
    let same = csvs[0] == csvs[1];
    check(same && !csvs[0].is_empty(), format!("{} CSVs compared across two runs, identical {same}", csvs[0].len()))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("parameter counts", criterion_1),
        ("gradient correctness", criterion_2),
        ("warp/loss identities", criterion_3),
        ("PCA oracle", criterion_4),
        ("segmentation round-trip", criterion_5),
        ("affine round-trip", criterion_6),
        ("training effectiveness", criterion_7),
        ("PCA trend", criterion_8),
        ("t-test oracle", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                Outcome { status: Status::Fail, detail: format!("panicked: {}", msg.unwrap_or_default()) }
            });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed.push(i + 1);
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        report_line(&format!("criterion {:>2} [{tag}] {name}: {} ({:.1} s)", i + 1, outcome.detail, start.elapsed().as_secs_f64()));
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
