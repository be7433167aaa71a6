//! Experiment configuration: TOML with every field optional.
//!
//! ```toml
//! out_dir = "runs/default"
//!
//! [data]
//! subjects = 14
//! per_subject = 6
//! seed = 2024
//!
//! [segmentation]
//! g_thresh = 0.35
//!
//! [reference]          # omitted: the reference image's own IJV ellipse
//! a = 22.0
//! b = 13.0
//!
//! [train]
//! epochs = 300
//!
//! [variant.pca]        # overrides [train] for one image variant
//! learning_rate = 2e-4
//!
//! [experiment]
//! seeds = [0]
//! nets = ["full", "reduced", "filters16"]
//! ```

use std::path::{Path, PathBuf};

use cervreg_core::metrics::DEFAULT_BELT_HALF_WIDTH;
use cervreg_core::net::NetKind;
use cervreg_core::pca::DEFAULT_Q;
use cervreg_core::segment::SegConfig;
use cervreg_core::train::{ImageVariant, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub segmentation: SegSection,
    pub reference: Option<ReferenceSection>,
    pub train: TrainSection,
    pub variant: VariantSection,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            segmentation: SegSection::default(),
            reference: None,
            train: TrainSection::default(),
            variant: VariantSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub subjects: usize,
    pub per_subject: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { subjects: 14, per_subject: 6, seed: 2024 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegSection {
    pub g_thresh: Option<f32>,
    pub n: Option<usize>,
    pub y_band: Option<[f64; 2]>,
    pub d_max: Option<f64>,
    pub area_range: Option<[usize; 2]>,
    pub r_min: Option<f64>,
    pub min_dynamic: Option<f64>,
    pub smooth_sigma: Option<f64>,
}

impl SegSection {
    pub fn resolve(&self) -> SegConfig {
        let d = SegConfig::default();
        SegConfig {
            g_thresh: self.g_thresh.unwrap_or(d.g_thresh),
            n: self.n.unwrap_or(d.n),
            y_band: self.y_band.map_or(d.y_band, |[a, b]| (a, b)),
            d_max: self.d_max.unwrap_or(d.d_max),
            area_range: self.area_range.map_or(d.area_range, |[a, b]| (a, b)),
            r_min: self.r_min.unwrap_or(d.r_min),
            min_dynamic: self.min_dynamic.unwrap_or(d.min_dynamic),
            smooth_sigma: self.smooth_sigma.unwrap_or(d.smooth_sigma),
            cca_anchor: None,
        }
    }
}

/// Reference IJV axes the affine stage maps every image onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub split: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection { gamma: d.gamma, learning_rate: d.learning_rate, epochs: d.epochs, split: d.split }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverride {
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSection {
    pub original: TrainOverride,
    pub pca: TrainOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub nets: Vec<String>,
    pub pca_q: usize,
    pub belt_half_width: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seeds: vec![0],
            nets: NetKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            pca_q: DEFAULT_Q,
            belt_half_width: DEFAULT_BELT_HALF_WIDTH,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config { path: origin.to_path_buf(), msg: e.to_string() })?;
        cfg.validate().map_err(|msg| Error::Config { path: origin.to_path_buf(), msg })?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `out_dir` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        if cfg.out_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn nets(&self) -> std::result::Result<Vec<NetKind>, String> {
        self.experiment.nets.iter().map(|n| n.parse::<NetKind>().map_err(|e| e.to_string())).collect()
    }

    /// Training settings of one image variant under one seed.
    pub fn train_config(&self, variant: ImageVariant, seed: u64) -> TrainConfig {
        let o = match variant {
            ImageVariant::Original => &self.variant.original,
            ImageVariant::PcaQ8 => &self.variant.pca,
        };
        TrainConfig {
            gamma: o.gamma.unwrap_or(self.train.gamma),
            learning_rate: o.learning_rate.unwrap_or(self.train.learning_rate),
            epochs: o.epochs.unwrap_or(self.train.epochs),
            split: self.train.split,
            seed,
            image_variant: variant,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.data.subjects == 0 || self.data.per_subject == 0 {
            return Err("data.subjects and data.per_subject must be at least 1".into());
        }
        if self.experiment.seeds.is_empty() {
            return Err("experiment.seeds must list at least one seed".into());
        }
        let mut seen = self.experiment.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.experiment.seeds.len() {
            return Err("experiment.seeds contains duplicates".into());
        }
        let nets = self.nets()?;
        if nets.is_empty() {
            return Err("experiment.nets must list at least one net".into());
        }
        if (1..nets.len()).any(|i| nets[..i].contains(&nets[i])) {
            return Err("experiment.nets contains duplicates".into());
        }
        if self.experiment.pca_q == 0 {
            return Err("experiment.pca_q must be at least 1".into());
        }
        if !(self.experiment.belt_half_width >= 1.0) {
            return Err("experiment.belt_half_width must be at least 1".into());
        }
        if let Some(r) = self.reference {
            if !(r.a > 0.0 && r.b > 0.0) {
                return Err("reference axes must be positive".into());
            }
        }
        self.segmentation.resolve().validate().map_err(|e| format!("segmentation: {e}"))?;
        for v in [ImageVariant::Original, ImageVariant::PcaQ8] {
            self.train_config(v, 0).validate().map_err(|e| format!("train ({v}): {e}"))?;
        }
        Ok(())
    }
}
