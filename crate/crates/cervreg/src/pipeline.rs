//! The end-to-end experiment: segmentation and affine normalization of a
//! synthetic image set, PCA approximation, training of every net structure on
//! both image variants, evaluation on the shared held-out split and the
//! statistics that compare the variants.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cervreg_core::affine::{apply_affine, compute_affine};
use cervreg_core::image::warp;
use cervreg_core::metrics::{belt_mask, box_stats, mean_abs_delta_i, mean_deformation_length, paired_t_test, BeltMask};
use cervreg_core::net::{NetKind, Network};
use cervreg_core::pca::{self, PcaModel};
use cervreg_core::segment::{segment, EllipseParams, SegConfig};
use cervreg_core::synth::generate_dataset;
use cervreg_core::train::{split_dataset, train_with_progress, ImageVariant, TrainConfig, TrainHistory};
use cervreg_core::{DisplacementField, GrayImage};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result, StageContext};
use crate::model::save_checkpoint;
use crate::parallel;
use crate::tables::{write_rows, BoxRow, CevrRow, ContrastRow, EllipseRow, FailureRow, HistoryRow, MetricRow};

/// Affinely normalized crops ready for registration. The first input image
/// is the fixed reference; every other image that segments is a moving image.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub reference_id: usize,
    pub fixed: GrayImage,
    /// Reference IJV in the reference image, with the axes every image is
    /// scaled to.
    pub reference: EllipseParams,
    /// The reference ellipse as it sits in every crop: centered, unrotated.
    pub belt_ellipse: EllipseParams,
    pub ids: Vec<usize>,
    pub original: Vec<GrayImage>,
    /// Empty unless PCA was requested.
    pub pca: Vec<GrayImage>,
    pub pca_model: Option<PcaModel>,
    /// Fitted IJV ellipse of every image that segmented, in source coordinates.
    pub ellipses: Vec<(usize, EllipseParams)>,
    pub failures: Vec<FailureRow>,
}

impl Dataset {
    pub fn images(&self, variant: ImageVariant) -> &[GrayImage] {
        match variant {
            ImageVariant::Original => &self.original,
            ImageVariant::PcaQ8 => &self.pca,
        }
    }

    pub fn belt(&self, half_width: f64) -> Result<BeltMask> {
        Ok(belt_mask(&self.belt_ellipse, half_width, self.fixed.dims())?)
    }
}

/// Segments `img` and maps its IJV onto `reference`.
pub fn normalize(img: &GrayImage, seg: &SegConfig, reference: &EllipseParams) -> cervreg_core::Result<(EllipseParams, GrayImage)> {
    let s = segment(img, seg)?;
    let p = compute_affine(&s.ellipse, reference, img.dims())?;
    Ok((s.ellipse, apply_affine(img, &p)))
}

/// Builds the registration dataset from `(image_id, image)` pairs. The
/// reference must segment; other failures are recorded and skipped. With
/// `pca_q = Some(q)` the moving crops are also replaced by their
/// `q`-component approximation of a PCA fitted on all moving crops.
pub fn prepare(
    images: &[(usize, GrayImage)],
    seg: &SegConfig,
    axes: Option<(f64, f64)>,
    pca_q: Option<usize>,
) -> cervreg_core::Result<Dataset> {
    let (reference_id, ref_img) = images.first().ok_or(cervreg_core::Error::InvalidArgument("no images"))?;
    let found = segment(ref_img, seg)?.ellipse;
    let reference = match axes {
        Some((a, b)) => EllipseParams::new(found.cx, found.cy, a, b, found.phi)?,
        None => found,
    };
    let (_, fixed) = normalize(ref_img, seg, &reference)?;
    let (w, h) = fixed.dims();
    let belt_ellipse = EllipseParams::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, reference.a, reference.b, 0.0)?;
    let mut ds = Dataset {
        reference_id: *reference_id,
        fixed,
        reference,
        belt_ellipse,
        ids: Vec::new(),
        original: Vec::new(),
        pca: Vec::new(),
        pca_model: None,
        ellipses: vec![(*reference_id, found)],
        failures: Vec::new(),
    };
    for (id, img) in &images[1..] {
        match normalize(img, seg, &reference) {
            Ok((e, crop)) => {
                ds.ellipses.push((*id, e));
                ds.ids.push(*id);
                ds.original.push(crop);
            }
            Err(e) => {
                log::warn!("image {id}: segmentation failed: {e}");
                ds.failures.push(FailureRow { image_id: *id, stage: "segment".into(), reason: e.to_string() });
            }
        }
    }
    if let Some(q) = pca_q {
        let model = pca::fit(&ds.original)?;
        ds.pca = ds.original.iter().map(|m| model.approximate(m, q)).collect::<cervreg_core::Result<_>>()?;
        ds.pca_model = Some(model);
    }
    Ok(ds)
}

/// Per-image `delta_i` and `l_bar` of registering each moving image onto `fixed`.
pub fn evaluate(
    net: &Network,
    fixed: &GrayImage,
    moving: &[(usize, &GrayImage)],
    belt: &BeltMask,
    net_name: &str,
    variant: &str,
) -> cervreg_core::Result<Vec<MetricRow>> {
    moving
        .iter()
        .map(|&(image_id, m)| {
            let field = net.forward(m, fixed)?;
            metric_row(fixed, m, &field, belt, image_id, net_name, variant)
        })
        .collect()
}

/// Metrics of the identity registration, i.e. before any deformation.
pub fn evaluate_identity(fixed: &GrayImage, moving: &[(usize, &GrayImage)], belt: &BeltMask, variant: &str) -> cervreg_core::Result<Vec<MetricRow>> {
    let (w, h) = fixed.dims();
    let zero = DisplacementField::zeros(w, h);
    moving.iter().map(|&(id, m)| metric_row(fixed, m, &zero, belt, id, "identity", variant)).collect()
}

fn metric_row(
    fixed: &GrayImage,
    m: &GrayImage,
    field: &DisplacementField,
    belt: &BeltMask,
    image_id: usize,
    net: &str,
    variant: &str,
) -> cervreg_core::Result<MetricRow> {
    let moved = warp(m, field)?;
    Ok(MetricRow {
        image_id,
        variant: variant.to_string(),
        net: net.to_string(),
        delta_i: mean_abs_delta_i(fixed, &moved, belt)?,
        l_bar: mean_deformation_length(field, belt)?,
    })
}

/// Paired t-tests of `a` against `b` on both metrics. Rows are matched by
/// position and must describe the same images.
pub fn contrast(a_label: &str, b_label: &str, a: &[MetricRow], b: &[MetricRow]) -> Result<Vec<ContrastRow>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.image_id != y.image_id) {
        return Err(Error::Missing(format!("{a_label} and {b_label} were evaluated on different images")));
    }
    let mut rows = Vec::with_capacity(2);
    for (metric, get) in [("delta_i", (|r: &MetricRow| r.delta_i) as fn(&MetricRow) -> f64), ("l_bar", |r| r.l_bar)] {
        let xa: Vec<f64> = a.iter().map(get).collect();
        let xb: Vec<f64> = b.iter().map(get).collect();
        let t = paired_t_test(&xa, &xb)?;
        rows.push(ContrastRow {
            a: a_label.to_string(),
            b: b_label.to_string(),
            metric: metric.to_string(),
            t: t.t,
            dof: t.dof,
            alpha: t.alpha,
            mean_a: mean(&xa),
            mean_b: mean(&xb),
        });
    }
    Ok(rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub type Variant = (NetKind, ImageVariant);

pub fn variant_label((net, variant): Variant) -> String {
    format!("{net}/{variant}")
}

fn variant_file((net, variant): Variant) -> String {
    format!("{net}_{variant}")
}

/// The contrasts reported for a set of nets: reduced vs full per image type,
/// PCA vs original per structure, then 16-filters vs full per image type.
pub fn contrasts(nets: &[NetKind]) -> Vec<(Variant, Variant)> {
    use ImageVariant::{Original, PcaQ8};
    let has = |k| nets.contains(&k);
    let mut out = Vec::new();
    if has(NetKind::Reduced) && has(NetKind::Full) {
        out.extend([Original, PcaQ8].map(|v| ((NetKind::Reduced, v), (NetKind::Full, v))));
    }
    out.extend(nets.iter().map(|&n| ((n, PcaQ8), (n, Original))));
    if has(NetKind::Filters16) && has(NetKind::Full) {
        out.extend([Original, PcaQ8].map(|v| ((NetKind::Filters16, v), (NetKind::Full, v))));
    }
    out
}

/// Test metrics of every variant, per seed.
pub type Runs = BTreeMap<u64, BTreeMap<Variant, Vec<MetricRow>>>;

fn pooled(runs: &Runs, v: Variant) -> Vec<MetricRow> {
    runs.values().flat_map(|m| m.get(&v).into_iter().flatten().cloned()).collect()
}

/// Maximum relative difference of the reduced net's PCA-variant mean
/// `delta_i` from its original-variant mean.
pub const DELTA_I_TOLERANCE: f64 = 0.15;
/// Significance level of the pooled `l_bar` test.
pub const L_BAR_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetTrend {
    pub net: NetKind,
    /// Seeds whose PCA-variant mean `l_bar` is below the original variant's.
    pub seeds_lower: usize,
    pub seeds: usize,
    pub mean_pca: f64,
    pub mean_original: f64,
    pub t: f64,
    pub alpha: f64,
}

impl NetTrend {
    pub fn majority(&self) -> bool {
        2 * self.seeds_lower > self.seeds
    }

    pub fn significant(&self) -> bool {
        self.alpha < L_BAR_ALPHA && self.mean_pca < self.mean_original
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub nets: Vec<NetTrend>,
    /// Pooled mean `delta_i` of the reduced net: (pca, original).
    pub reduced_delta_i: Option<(f64, f64)>,
}

impl TrendReport {
    pub fn l_bar_majority(&self) -> bool {
        !self.nets.is_empty() && self.nets.iter().all(NetTrend::majority)
    }

    pub fn l_bar_significant(&self) -> bool {
        self.nets.iter().any(NetTrend::significant)
    }

    pub fn delta_i_relative(&self) -> Option<f64> {
        self.reduced_delta_i.map(|(pca, orig)| (pca - orig).abs() / orig)
    }

    pub fn delta_i_unchanged(&self) -> bool {
        self.delta_i_relative().is_some_and(|r| r <= DELTA_I_TOLERANCE)
    }

    pub fn passed(&self) -> bool {
        self.l_bar_majority() && self.l_bar_significant() && self.delta_i_unchanged()
    }
}

/// PCA-versus-original trend checks over all seeds.
pub fn trends(runs: &Runs, nets: &[NetKind]) -> Result<TrendReport> {
    use ImageVariant::{Original, PcaQ8};
    let mut out = Vec::new();
    for &net in nets {
        let mut seeds_lower = 0;
        for (seed, m) in runs {
            let get = |v| {
                m.get(&(net, v)).ok_or_else(|| Error::Missing(format!("seed {seed}: no metrics for {}", variant_label((net, v)))))
            };
            let l = |rows: &Vec<MetricRow>| mean(&rows.iter().map(|r| r.l_bar).collect::<Vec<_>>());
            if l(get(PcaQ8)?) < l(get(Original)?) {
                seeds_lower += 1;
            }
        }
        let c = contrast(&variant_label((net, PcaQ8)), &variant_label((net, Original)), &pooled(runs, (net, PcaQ8)), &pooled(runs, (net, Original)))?;
        let l = &c[1];
        out.push(NetTrend {
            net,
            seeds_lower,
            seeds: runs.len(),
            mean_pca: l.mean_a,
            mean_original: l.mean_b,
            t: l.t,
            alpha: l.alpha,
        });
    }
    let reduced_delta_i = nets.contains(&NetKind::Reduced).then(|| {
        let d = |v| mean(&pooled(runs, (NetKind::Reduced, v)).iter().map(|r| r.delta_i).collect::<Vec<_>>());
        (d(PcaQ8), d(Original))
    });
    Ok(TrendReport { nets: out, reduced_delta_i })
}

/// Membership of one image in the train or test subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub image_id: usize,
    pub subset: String,
}

fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn checkpoint_path(out_dir: &Path, seed: u64, v: Variant) -> PathBuf {
    seed_dir(out_dir, seed).join("checkpoints").join(format!("{}.ckpt", variant_file(v)))
}

fn history_path(out_dir: &Path, seed: u64, v: Variant) -> PathBuf {
    seed_dir(out_dir, seed).join("history").join(format!("{}.csv", variant_file(v)))
}

fn metrics_path(out_dir: &Path, seed: u64, v: Variant) -> PathBuf {
    seed_dir(out_dir, seed).join("metrics").join(format!("{}.csv", variant_file(v)))
}

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.txt";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn box_rows(v: Variant, rows: &[MetricRow]) -> Vec<BoxRow> {
    let mut out = Vec::new();
    for (metric, values) in [
        ("delta_i", rows.iter().map(|r| r.delta_i).collect::<Vec<_>>()),
        ("l_bar", rows.iter().map(|r| r.l_bar).collect()),
    ] {
        if let Some(s) = box_stats(&values) {
            out.push(BoxRow {
                net: v.0.to_string(),
                variant: v.1.to_string(),
                metric: metric.to_string(),
                min: s.min,
                q1: s.q1,
                median: s.median,
                q3: s.q3,
                max: s.max,
                mean: s.mean,
            });
        }
    }
    out
}

struct Job {
    seed: u64,
    variant: Variant,
    cfg: TrainConfig,
}

/// Runs the whole study and returns the report text. Layout of `out_dir`:
///
/// ```text
/// config.toml  reference.csv  ellipses.csv  segmentation_failures.csv
/// pca_cevr.csv  comparison.csv (pooled over seeds)  box_stats.csv  report.txt
/// seed_<s>/split.csv  baseline.csv  comparison.csv  box_stats.csv
/// seed_<s>/checkpoints/<net>_<variant>.ckpt
/// seed_<s>/history/<net>_<variant>.csv
/// seed_<s>/metrics/<net>_<variant>.csv
/// ```
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out_dir.as_path();
    create_dir(out)?;
    let nets = cfg.nets().map_err(Error::Missing)?;
    let mut stored = cfg.clone();
    stored.out_dir = PathBuf::from(".");
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, stored.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    log::info!("generating {}x{} phantoms", cfg.data.subjects, cfg.data.per_subject);
    let data = generate_dataset(cfg.data.subjects, cfg.data.per_subject, cfg.data.seed).stage("synth", out)?;
    let images: Vec<(usize, GrayImage)> = data.into_iter().map(|(img, t)| (t.image_id, img)).collect();
    let axes = cfg.reference.map(|r| (r.a, r.b));
    let ds = prepare(&images, &cfg.segmentation.resolve(), axes, Some(cfg.experiment.pca_q)).stage("prepare", out)?;
    log::info!("{} moving images, {} segmentation failures", ds.ids.len(), ds.failures.len());
    write_dataset_tables(out, &ds)?;
    let belt = ds.belt(cfg.experiment.belt_half_width).stage("belt", out)?;

    let mut splits = BTreeMap::new();
    let mut jobs = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let dir = seed_dir(out, seed);
        for sub in ["checkpoints", "history", "metrics"] {
            create_dir(&dir.join(sub))?;
        }
        let (train, test) = split_dataset(ds.ids.len(), cfg.train.split, seed).stage("split", &dir)?;
        let mut rows: Vec<SplitRow> = train.iter().map(|&i| SplitRow { image_id: ds.ids[i], subset: "train".into() }).collect();
        rows.extend(test.iter().map(|&i| SplitRow { image_id: ds.ids[i], subset: "test".into() }));
        write_rows(&dir.join("split.csv"), &rows)?;
        let mut baseline = Vec::new();
        for v in ImageVariant::ALL {
            let moving: Vec<_> = test.iter().map(|&i| (ds.ids[i], &ds.images(v)[i])).collect();
            baseline.extend(evaluate_identity(&ds.fixed, &moving, &belt, v.name()).stage("evaluate", &dir)?);
        }
        write_rows(&dir.join("baseline.csv"), &baseline)?;
        for &net in &nets {
            for v in ImageVariant::ALL {
                jobs.push(Job { seed, variant: (net, v), cfg: cfg.train_config(v, seed) });
            }
        }
        splits.insert(seed, (train, test));
    }

    let workers = parallel::worker_count();
    log::info!("training {} variants on {workers} worker(s)", jobs.len());
    let results = parallel::map(&jobs, workers, |job| {
        let (train, test) = &splits[&job.seed];
        run_job(out, &ds, &belt, train, test, job)
    });
    let mut runs: Runs = BTreeMap::new();
    for (job, rows) in jobs.iter().zip(results) {
        runs.entry(job.seed).or_default().insert(job.variant, rows?);
    }

    for (seed, m) in &runs {
        let dir = seed_dir(out, *seed);
        write_rows(&dir.join("comparison.csv"), &comparison_rows(m, &nets)?)?;
        let boxes: Vec<BoxRow> = m.iter().flat_map(|(&v, rows)| box_rows(v, rows)).collect();
        write_rows(&dir.join("box_stats.csv"), &boxes)?;
    }
    report(out)
}

fn write_dataset_tables(out: &Path, ds: &Dataset) -> Result<()> {
    write_rows(
        &out.join("reference.csv"),
        &[EllipseRow::new("reference", &ds.reference), EllipseRow::new("belt", &ds.belt_ellipse)],
    )?;
    let ellipses: Vec<EllipseRow> = ds.ellipses.iter().map(|(id, e)| EllipseRow::new(id.to_string(), e)).collect();
    write_rows(&out.join("ellipses.csv"), &ellipses)?;
    write_rows(&out.join("segmentation_failures.csv"), &ds.failures)?;
    if let Some(model) = &ds.pca_model {
        let rows: Vec<CevrRow> =
            (1..=model.p).map(|q| model.cevr(q).map(|cevr| CevrRow { q, cevr })).collect::<cervreg_core::Result<_>>()?;
        write_rows(&out.join("pca_cevr.csv"), &rows)?;
    }
    Ok(())
}

fn run_job(out: &Path, ds: &Dataset, belt: &BeltMask, train: &[usize], test: &[usize], job: &Job) -> Result<Vec<MetricRow>> {
    let (net_kind, variant) = job.variant;
    let label = variant_label(job.variant);
    let images = ds.images(variant);
    let train_imgs: Vec<GrayImage> = train.iter().map(|&i| images[i].clone()).collect();
    let ckpt = checkpoint_path(out, job.seed, job.variant);
    log::info!("seed {}: training {label} for {} epochs", job.seed, job.cfg.epochs);
    let (net, history) = train_with_progress(&train_imgs, &ds.fixed, &net_kind.config(), &job.cfg, |s| {
        log::debug!("seed {} {label} epoch {} J {:.6}", job.seed, s.epoch, s.j);
    })
    .stage("train", &ckpt)?;
    save_checkpoint(&ckpt, &net)?;
    write_history(&history_path(out, job.seed, job.variant), &history)?;
    let moving: Vec<_> = test.iter().map(|&i| (ds.ids[i], &images[i])).collect();
    let metrics = metrics_path(out, job.seed, job.variant);
    let rows = evaluate(&net, &ds.fixed, &moving, belt, net_kind.name(), variant.name()).stage("evaluate", &metrics)?;
    write_rows(&metrics, &rows)?;
    log::info!("seed {}: {label} done", job.seed);
    Ok(rows)
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let rows: Vec<HistoryRow> = history.epochs.iter().map(HistoryRow::from).collect();
    write_rows(path, &rows)
}

fn comparison_rows(m: &BTreeMap<Variant, Vec<MetricRow>>, nets: &[NetKind]) -> Result<Vec<ContrastRow>> {
    let mut rows = Vec::new();
    for (a, b) in contrasts(nets) {
        let get = |v| m.get(&v).ok_or_else(|| Error::Missing(format!("no metrics for {}", variant_label(v))));
        rows.extend(contrast(&variant_label(a), &variant_label(b), get(a)?, get(b)?)?);
    }
    Ok(rows)
}

/// Loads every variant's metrics of a finished experiment, checking that
/// each checkpoint exists.
pub fn load_runs(out_dir: &Path) -> Result<(ExperimentConfig, Runs)> {
    let cfg = ExperimentConfig::load(&out_dir.join(CONFIG_FILE))?;
    let nets = cfg.nets().map_err(Error::Missing)?;
    let mut runs = Runs::new();
    for &seed in &cfg.experiment.seeds {
        for &net in &nets {
            for variant in ImageVariant::ALL {
                let v = (net, variant);
                let ckpt = checkpoint_path(out_dir, seed, v);
                if !ckpt.is_file() {
                    return Err(Error::Missing(format!(
                        "variant {} (seed {seed}): checkpoint {} is missing",
                        variant_label(v),
                        ckpt.display()
                    )));
                }
                let path = metrics_path(out_dir, seed, v);
                if !path.is_file() {
                    return Err(Error::Missing(format!(
                        "variant {} (seed {seed}): metrics {} are missing",
                        variant_label(v),
                        path.display()
                    )));
                }
                runs.entry(seed).or_default().insert(v, crate::tables::read_rows(&path)?);
            }
        }
    }
    Ok((cfg, runs))
}

/// Summary table of a finished experiment. Also writes the pooled
/// comparison and box statistics and `report.txt` into `out_dir`.
pub fn report(out_dir: &Path) -> Result<String> {
    use std::fmt::Write;
    let (cfg, runs) = load_runs(out_dir)?;
    let nets = cfg.nets().map_err(Error::Missing)?;
    let mut all: BTreeMap<Variant, Vec<MetricRow>> = BTreeMap::new();
    for &net in &nets {
        for v in ImageVariant::ALL {
            all.insert((net, v), pooled(&runs, (net, v)));
        }
    }
    let comparison = comparison_rows(&all, &nets)?;
    write_rows(&out_dir.join("comparison.csv"), &comparison)?;
    let boxes: Vec<BoxRow> = all.iter().flat_map(|(&v, rows)| box_rows(v, rows)).collect();
    write_rows(&out_dir.join("box_stats.csv"), &boxes)?;
    let trend = trends(&runs, &nets)?;

    let seeds: Vec<String> = cfg.experiment.seeds.iter().map(u64::to_string).collect();
    let mut s = String::new();
    let _ = writeln!(s, "seeds: {}", seeds.join(", "));
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<20} {:>6} {:>10} {:>10}", "variant", "images", "mean dI", "mean l");
    for (&v, rows) in &all {
        let d: Vec<f64> = rows.iter().map(|r| r.delta_i).collect();
        let l: Vec<f64> = rows.iter().map(|r| r.l_bar).collect();
        let _ = writeln!(s, "{:<20} {:>6} {:>10.5} {:>10.4}", variant_label(v), rows.len(), mean(&d), mean(&l));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<20} {:<20} {:<8} {:>9} {:>6} {:>10}", "a", "b", "metric", "t", "dof", "alpha");
    for r in &comparison {
        let _ = writeln!(s, "{:<20} {:<20} {:<8} {:>9.3} {:>6} {:>10.4}", r.a, r.b, r.metric, r.t, r.dof, r.alpha);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "trend checks");
    for n in &trend.nets {
        let _ = writeln!(
            s,
            "  {:<10} pca l below original in {}/{} seeds [{}]; pooled alpha {:.4} [{}]",
            n.net.name(),
            n.seeds_lower,
            n.seeds,
            flag(n.majority()),
            n.alpha,
            flag(n.significant())
        );
    }
    match (trend.reduced_delta_i, trend.delta_i_relative()) {
        (Some((pca, orig)), Some(rel)) => {
            let _ = writeln!(
                s,
                "  reduced dI pca {pca:.5} vs original {orig:.5}: {:.1}% apart [{}]",
                rel * 100.0,
                flag(trend.delta_i_unchanged())
            );
        }
        _ => {
            let _ = writeln!(s, "  reduced dI: reduced net not in this run [fail]");
        }
    }
    let _ = writeln!(s, "  l lower for every net (majority of seeds) [{}]", flag(trend.l_bar_majority()));
    let _ = writeln!(s, "  pooled l test alpha < {L_BAR_ALPHA} for at least one net [{}]", flag(trend.l_bar_significant()));
    let _ = writeln!(s, "  overall [{}]", flag(trend.passed()));
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, &s).map_err(|e| Error::io(&path, e))?;
    Ok(s)
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, d: f64, l: f64) -> MetricRow {
        MetricRow { image_id: id, variant: "v".into(), net: "n".into(), delta_i: d, l_bar: l }
    }

    #[test]
    fn contrast_enumeration() {
        let c = contrasts(&NetKind::ALL);
        assert_eq!(c.len(), 7);
        let labels: Vec<String> = c.iter().map(|&(a, b)| format!("{} {}", variant_label(a), variant_label(b))).collect();
        assert_eq!(labels[0], "reduced/original full/original");
        assert_eq!(labels[1], "reduced/pca full/pca");
        assert_eq!(labels[2..5], ["full/pca full/original", "reduced/pca reduced/original", "filters16/pca filters16/original"]);
        assert_eq!(contrasts(&[NetKind::Reduced]).len(), 1);
    }

    #[test]
    fn contrast_requires_matching_images() {
        let a = [row(1, 0.1, 1.0), row(2, 0.2, 2.0), row(3, 0.3, 2.5)];
        let b = [row(1, 0.1, 1.5), row(2, 0.25, 2.0), row(3, 0.2, 3.5)];
        let c = contrast("a", "b", &a, &b).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[1].metric.as_str(), c[1].dof), ("l_bar", 2));
        assert!((c[1].mean_a - 5.5 / 3.0).abs() < 1e-12);
        let b_shuffled = [b[1].clone(), b[0].clone(), b[2].clone()];
        assert!(contrast("a", "b", &a, &b_shuffled).is_err());
    }

    #[test]
    fn trend_flags() {
        use ImageVariant::{Original, PcaQ8};
        let mut runs = Runs::new();
        for seed in 0..3u64 {
            let mut m = BTreeMap::new();
            let bump = if seed == 2 { 0.5 } else { -0.5 };
            m.insert((NetKind::Reduced, Original), (0..5).map(|i| row(i, 0.1, 2.0 + i as f64 * 0.1)).collect());
            m.insert((NetKind::Reduced, PcaQ8), (0..5).map(|i| row(i, 0.11, 2.0 + bump + i as f64 * 0.13)).collect());
            runs.insert(seed, m);
        }
        let t = trends(&runs, &[NetKind::Reduced]).unwrap();
        assert_eq!((t.nets[0].seeds_lower, t.nets[0].seeds), (2, 3));
        assert!(t.l_bar_majority());
        assert!((t.delta_i_relative().unwrap() - 0.1).abs() < 1e-9);
        assert!(t.delta_i_unchanged());
        assert!(!t.l_bar_significant());
        assert!(!t.passed());
    }
}
