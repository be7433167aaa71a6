use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use cervreg::config::ExperimentConfig;
use cervreg::error::StageContext;
use cervreg::model::{load_checkpoint, load_pca, save_checkpoint, save_pca};
use cervreg::pipeline::{self, SplitRow};
use cervreg::tables::{self, read_rows, write_rows, CevrRow, CompareRow, EllipseRow, MetricRow, TruthRow};
use cervreg::{parallel, pgm};
use cervreg_core::affine::{apply_affine, compute_affine};
use cervreg_core::image::warp;
use cervreg_core::metrics::{belt_mask, paired_t_test};
use cervreg_core::net::{NetConfig, NetKind, Network};
use cervreg_core::pca;
use cervreg_core::segment::{fit_ellipse, segment, EllipseParams, SegConfig};
use cervreg_core::synth::generate_dataset;
use cervreg_core::train::{split_dataset, train_with_progress, ImageVariant, TrainConfig};
use cervreg_core::GrayImage;
use clap::{Args, Parser, Subcommand};

/// Ultrasound IJV registration: segmentation, affine normalization, PCA
/// denoising and U-Net registration.
#[derive(Parser)]
#[command(name = "cervreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantoms and their ground truth.
    Synth {
        #[arg(long, default_value_t = 14)]
        subjects: usize,
        #[arg(long, default_value_t = 6)]
        per_subject: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Locate the IJV: label image, ellipse table and overlay.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Experiment config whose [segmentation] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Map the object ellipse onto the reference ellipse and crop.
    Affine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long, default_value = "ijv")]
        object_label: String,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "ijv")]
        reference_label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment and normalize every image of a directory; the first file is
    /// the reference.
    Normalize {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    #[command(subcommand)]
    Pca(PcaCommand),
    #[command(subcommand)]
    Net(NetCommand),
    /// Train a registration net on a directory of normalized crops.
    Train {
        #[arg(long, default_value = "full")]
        net: NetKind,
        #[arg(long, default_value = "original")]
        images: ImageVariant,
        #[command(flatten)]
        hyper: Hyper,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for model.ckpt, history.csv and split.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Register one image pair.
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        out_field: PathBuf,
        #[arg(long)]
        out_image: Option<PathBuf>,
    },
    /// Per-image belt metrics of a trained net.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "original")]
        images: ImageVariant,
        #[command(flatten)]
        data: DataArgs,
        /// split.csv from `train`; only its test images are evaluated.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Ellipse CSV whose first row gives the reference axes; by default
        /// the fixed crop is segmented.
        #[arg(long)]
        reference_ellipse: Option<PathBuf>,
        #[arg(long, default_value_t = cervreg_core::metrics::DEFAULT_BELT_HALF_WIDTH)]
        belt_half_width: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired t-tests between two metric tables.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full study described by a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarize a finished experiment.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum PcaCommand {
    /// Fit a model on every PGM of a directory.
    Fit {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Approximate one image with the first q components.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = pca::DEFAULT_Q)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cumulative explained variance ratio for every q.
    Table {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NetCommand {
    /// Print the layer table and parameter count.
    Info {
        #[arg(long, default_value = "full", conflicts_with = "checkpoint")]
        net: NetKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Hyper {
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    split: f64,
}

#[derive(Args)]
struct DataArgs {
    /// Directory of normalized crops.
    #[arg(long)]
    data_dir: PathBuf,
    /// Fixed image; defaults to the first PGM of the directory.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Components of the PCA approximation for `--images pca`.
    #[arg(long, default_value_t = pca::DEFAULT_Q)]
    pca_q: usize,
}

/// Fixed image and `(image_id, moving image)` pairs of a crop directory.
struct Crops {
    fixed: GrayImage,
    moving: Vec<(usize, GrayImage)>,
}

/// Trailing digits of the file stem, or the position in the directory.
fn image_id(path: &Path, index: usize) -> usize {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let digits = &stem[stem.trim_end_matches(|c: char| c.is_ascii_digit()).len()..];
    digits.parse().unwrap_or(index)
}

impl DataArgs {
    fn load(&self, variant: ImageVariant) -> anyhow::Result<Crops> {
        let files = pgm::list(&self.data_dir)?;
        let reference = match &self.reference {
            Some(p) => p.clone(),
            None => files.first().cloned().ok_or_else(|| anyhow!("{}: no PGM files", self.data_dir.display()))?,
        };
        let fixed = pgm::read(&reference)?;
        let same = |p: &Path| fs::canonicalize(p).ok() == fs::canonicalize(&reference).ok();
        let mut moving = Vec::new();
        for (i, f) in files.iter().enumerate() {
            if !same(f) {
                moving.push((image_id(f, i), pgm::read(f)?));
            }
        }
        if variant == ImageVariant::PcaQ8 {
            let imgs: Vec<GrayImage> = moving.iter().map(|(_, m)| m.clone()).collect();
            let model = pca::fit(&imgs).stage("pca", &self.data_dir)?;
            for (_, m) in &mut moving {
                *m = model.approximate(m, self.pca_q).stage("pca", &self.data_dir)?;
            }
        }
        Ok(Crops { fixed, moving })
    }
}

fn seg_config(config: Option<&Path>) -> anyhow::Result<SegConfig> {
    Ok(match config {
        Some(p) => ExperimentConfig::load(p)?.segmentation.resolve(),
        None => SegConfig::default(),
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn net_name(cfg: &NetConfig) -> &'static str {
    NetKind::ALL.into_iter().find(|k| k.config() == *cfg).map_or("custom", NetKind::name)
}

fn synth(subjects: usize, per_subject: usize, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    create_dir(out_dir)?;
    let data = generate_dataset(subjects, per_subject, seed)?;
    let mut rows = Vec::with_capacity(data.len());
    for (img, truth) in &data {
        let file = format!("img_{:03}.pgm", truth.image_id);
        pgm::write(&out_dir.join(&file), img)?;
        rows.push(TruthRow::new(file, truth));
    }
    write_rows(&out_dir.join("truth.csv"), &rows)?;
    println!("wrote {} images to {}", data.len(), out_dir.display());
    Ok(())
}

fn draw_ellipse(img: &mut GrayImage, e: &EllipseParams, value: f32) {
    let (w, h) = img.dims();
    for y in 0..h {
        for x in 0..w {
            if e.signed_distance(x as f64, y as f64).abs() <= 0.5 {
                img.set(x, y, value);
            }
        }
    }
}

fn segment_cmd(input: &Path, out_dir: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let img = pgm::read(input)?;
    let seg = segment(&img, &seg_config(config)?).stage("segment", input)?;
    create_dir(out_dir)?;
    let (w, h) = img.dims();
    let mut labels = GrayImage::filled(w, h, 0.0);
    let k = seg.objects.len().max(1) as f32;
    let mut rows = Vec::new();
    for (i, obj) in seg.objects.iter().enumerate() {
        for &(x, y) in &obj.pixels {
            labels.set(x, y, (i + 1) as f32 / k);
        }
        if let Ok(e) = fit_ellipse(&obj.pixels) {
            rows.push(EllipseRow::new((i + 1).to_string(), &e));
        }
    }
    rows.push(EllipseRow::new("ijv", &seg.ellipse));
    let mut overlay = img.clone();
    if let Some(cca) = &seg.cca {
        let e = fit_ellipse(&cca.pixels)?;
        rows.push(EllipseRow::new("cca", &e));
        draw_ellipse(&mut overlay, &e, 0.0);
    }
    draw_ellipse(&mut overlay, &seg.ellipse, 1.0);
    pgm::write(&out_dir.join("labels.pgm"), &labels)?;
    pgm::write(&out_dir.join("overlay.pgm"), &overlay)?;
    write_rows(&out_dir.join("ellipses.csv"), &rows)?;
    let e = &seg.ellipse;
    println!("ijv center ({:.2}, {:.2}) axes {:.2} x {:.2} angle {:.2} deg", e.cx, e.cy, e.a, e.b, e.phi.to_degrees());
    Ok(())
}

fn affine_cmd(input: &Path, object: (&Path, &str), reference: (&Path, &str), out: &Path) -> anyhow::Result<()> {
    let img = pgm::read(input)?;
    let obj = tables::read_ellipse(object.0, Some(object.1))?;
    let r = tables::read_ellipse(reference.0, Some(reference.1))?;
    let p = compute_affine(&obj, &r, img.dims()).stage("affine", input)?;
    pgm::write(out, &apply_affine(&img, &p))?;
    Ok(())
}

fn normalize_cmd(data_dir: &Path, out_dir: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let files = pgm::list(data_dir)?;
    let images = files.iter().enumerate().map(|(i, f)| Ok((image_id(f, i), pgm::read(f)?))).collect::<anyhow::Result<Vec<_>>>()?;
    let ds = pipeline::prepare(&images, &seg_config(config)?, None, None).stage("prepare", data_dir)?;
    create_dir(out_dir)?;
    pgm::write(&out_dir.join(format!("img_{:03}.pgm", ds.reference_id)), &ds.fixed)?;
    for (id, crop) in ds.ids.iter().zip(&ds.original) {
        pgm::write(&out_dir.join(format!("img_{id:03}.pgm")), crop)?;
    }
    write_rows(&out_dir.join("reference.csv"), &[EllipseRow::new("reference", &ds.reference), EllipseRow::new("belt", &ds.belt_ellipse)])?;
    write_rows(&out_dir.join("segmentation_failures.csv"), &ds.failures)?;
    println!("normalized {} images, {} failures", ds.ids.len() + 1, ds.failures.len());
    Ok(())
}

fn pca_cmd(cmd: PcaCommand) -> anyhow::Result<()> {
    match cmd {
        PcaCommand::Fit { data_dir, out } => {
            let imgs = pgm::list(&data_dir)?.iter().map(|f| pgm::read(f)).collect::<cervreg::Result<Vec<_>>>()?;
            let model = pca::fit(&imgs).stage("pca", &data_dir)?;
            save_pca(&out, &model)?;
            println!("fitted {} images of {}x{}", model.p, model.width, model.height);
        }
        PcaCommand::Apply { model, input, q, out } => {
            let m = load_pca(&model)?;
            let img = pgm::read(&input)?;
            pgm::write(&out, &m.approximate(&img, q).stage("pca", &input)?)?;
        }
        PcaCommand::Table { model, out } => {
            let m = load_pca(&model)?;
            let rows = (1..=m.p).map(|q| Ok(CevrRow { q, cevr: m.cevr(q)? })).collect::<cervreg_core::Result<Vec<_>>>()?;
            write_rows(&out, &rows)?;
        }
    }
    Ok(())
}

fn net_info(net: NetKind, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let (cfg, name) = match checkpoint {
        Some(p) => {
            let n = load_checkpoint(p)?;
            let cfg = n.config().clone();
            (cfg.clone(), format!("{} (seed {})", net_name(&cfg), n.seed()))
        }
        None => (net.config(), net.name().to_string()),
    };
    println!("net {name}");
    println!("{:>5} {:>8} {:>8} {:>7} {:>10}", "layer", "in", "out", "stride", "params");
    for (i, s) in cfg.layer_shapes().iter().enumerate() {
        println!("{:>5} {:>8} {:>8} {:>7} {:>10}", i, s.in_ch, s.out_ch, s.stride, s.param_count());
    }
    println!("total parameters {}", cfg.param_count());
    Ok(())
}

fn train_cmd(net: NetKind, images: ImageVariant, hyper: &Hyper, data: &DataArgs, out: &Path) -> anyhow::Result<()> {
    let crops = data.load(images)?;
    let cfg = TrainConfig {
        gamma: hyper.gamma,
        learning_rate: hyper.lr,
        epochs: hyper.epochs,
        split: hyper.split,
        seed: hyper.seed,
        image_variant: images,
    };
    cfg.validate()?;
    let (train, test) = split_dataset(crops.moving.len(), cfg.split, cfg.seed)?;
    let train_imgs: Vec<GrayImage> = train.iter().map(|&i| crops.moving[i].1.clone()).collect();
    create_dir(out)?;
    let ckpt = out.join("model.ckpt");
    let (model, history) = train_with_progress(&train_imgs, &crops.fixed, &net.config(), &cfg, |s| {
        log::info!("epoch {} J {:.6} L_sim {:.6} L_smooth {:.6}", s.epoch, s.j, s.l_sim, s.l_smooth);
    })
    .stage("train", &ckpt)?;
    save_checkpoint(&ckpt, &model)?;
    pipeline::write_history(&out.join("history.csv"), &history)?;
    let mut rows: Vec<SplitRow> =
        train.iter().map(|&i| SplitRow { image_id: crops.moving[i].0, subset: "train".into() }).collect();
    rows.extend(test.iter().map(|&i| SplitRow { image_id: crops.moving[i].0, subset: "test".into() }));
    write_rows(&out.join("split.csv"), &rows)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("J {:.6} -> {:.6} over {} epochs", first.j, last.j, history.epochs.len());
    }
    Ok(())
}

fn register_cmd(model: &Path, moving: &Path, fixed: &Path, out_field: &Path, out_image: Option<&Path>) -> anyhow::Result<()> {
    let net: Network = load_checkpoint(model)?;
    let m = pgm::read(moving)?;
    let f = pgm::read(fixed)?;
    let field = net.forward(&m, &f).stage("register", moving)?;
    tables::write_field(out_field, &field)?;
    if let Some(p) = out_image {
        pgm::write(p, &warp(&m, &field)?)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    model: &Path,
    images: ImageVariant,
    data: &DataArgs,
    split: Option<&Path>,
    reference_ellipse: Option<&Path>,
    belt_half_width: f64,
    out: &Path,
) -> anyhow::Result<()> {
    let net: Network = load_checkpoint(model)?;
    let crops = data.load(images)?;
    let (w, h) = crops.fixed.dims();
    let (a, b) = match reference_ellipse {
        Some(p) => {
            let e = tables::read_ellipse(p, None)?;
            (e.a, e.b)
        }
        None => {
            let e = segment(&crops.fixed, &SegConfig::for_crop(w, h)).stage("segment", &data_dir_reference(data))?.ellipse;
            (e.a, e.b)
        }
    };
    let center = EllipseParams::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, a, b, 0.0)?;
    let belt = belt_mask(&center, belt_half_width, (w, h))?;
    let test: Option<Vec<usize>> = match split {
        Some(p) => {
            let rows: Vec<SplitRow> = read_rows(p)?;
            Some(rows.into_iter().filter(|r| r.subset == "test").map(|r| r.image_id).collect())
        }
        None => None,
    };
    let moving: Vec<(usize, &GrayImage)> = crops
        .moving
        .iter()
        .filter(|(id, _)| test.as_ref().is_none_or(|t| t.contains(id)))
        .map(|(id, m)| (*id, m))
        .collect();
    if moving.is_empty() {
        bail!("no images to evaluate");
    }
    let rows = pipeline::evaluate(&net, &crops.fixed, &moving, &belt, net_name(net.config()), images.name()).stage("evaluate", model)?;
    write_rows(out, &rows)?;
    let n = rows.len() as f64;
    println!(
        "{} images: mean delta_i {:.5}, mean l_bar {:.4}",
        rows.len(),
        rows.iter().map(|r| r.delta_i).sum::<f64>() / n,
        rows.iter().map(|r| r.l_bar).sum::<f64>() / n
    );
    Ok(())
}

fn data_dir_reference(data: &DataArgs) -> PathBuf {
    data.reference.clone().unwrap_or_else(|| data.data_dir.clone())
}

fn compare_cmd(a: &Path, b: &Path, out: &Path) -> anyhow::Result<()> {
    let ra: Vec<MetricRow> = read_rows(a)?;
    let rb: Vec<MetricRow> = read_rows(b)?;
    let mut pairs = Vec::new();
    for x in &ra {
        let y = rb.iter().find(|y| y.image_id == x.image_id).ok_or_else(|| anyhow!("image {} missing from {}", x.image_id, b.display()))?;
        pairs.push((x, y));
    }
    if pairs.len() != rb.len() {
        bail!("{} and {} cover different images", a.display(), b.display());
    }
    let mut rows = Vec::new();
    for (metric, get) in [("delta_i", (|r: &MetricRow| r.delta_i) as fn(&MetricRow) -> f64), ("l_bar", |r| r.l_bar)] {
        let xa: Vec<f64> = pairs.iter().map(|p| get(p.0)).collect();
        let xb: Vec<f64> = pairs.iter().map(|p| get(p.1)).collect();
        let t = paired_t_test(&xa, &xb)?;
        let n = xa.len() as f64;
        rows.push(CompareRow {
            metric: metric.into(),
            t: t.t,
            dof: t.dof,
            alpha: t.alpha,
            mean_a: xa.iter().sum::<f64>() / n,
            mean_b: xb.iter().sum::<f64>() / n,
        });
        println!("{metric}: t {:.4} dof {} alpha {:.4}", t.t, t.dof, t.alpha);
    }
    write_rows(out, &rows)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { subjects, per_subject, seed, out_dir } => synth(subjects, per_subject, seed, &out_dir),
        Command::Segment { input, out_dir, config } => segment_cmd(&input, &out_dir, config.as_deref()),
        Command::Affine { input, object, object_label, reference, reference_label, out } => {
            affine_cmd(&input, (&object, &object_label), (&reference, &reference_label), &out)
        }
        Command::Normalize { data_dir, out_dir, config } => normalize_cmd(&data_dir, &out_dir, config.as_deref()),
        Command::Pca(cmd) => pca_cmd(cmd),
        Command::Net(NetCommand::Info { net, checkpoint }) => net_info(net, checkpoint.as_deref()),
        Command::Train { net, images, hyper, data, out } => train_cmd(net, images, &hyper, &data, &out),
        Command::Register { model, moving, fixed, out_field, out_image } => {
            register_cmd(&model, &moving, &fixed, &out_field, out_image.as_deref())
        }
        Command::Evaluate { model, images, data, split, reference_ellipse, belt_half_width, out } => {
            evaluate_cmd(&model, images, &data, split.as_deref(), reference_ellipse.as_deref(), belt_half_width, &out)
        }
        Command::Compare { a, b, out } => compare_cmd(&a, &b, &out),
        Command::Experiment { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            log::info!("{} worker(s)", parallel::worker_count());
            print!("{}", pipeline::run_experiment(&cfg)?);
            Ok(())
        }
        Command::Report { out_dir } => {
            print!("{}", pipeline::report(&out_dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
