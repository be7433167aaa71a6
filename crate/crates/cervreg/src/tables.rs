//! CSV artifacts: comma separated, header row, LF line endings.

use std::path::Path;

use cervreg_core::segment::EllipseParams;
use cervreg_core::synth::PhantomTruth;
use cervreg_core::train::EpochStats;
use cervreg_core::DisplacementField;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: usize,
    pub y: usize,
    pub ux: f32,
    pub uy: f32,
}

pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    let (w, h) = field.dims();
    let rows: Vec<FieldRow> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (ux, uy) = field.get(x, y);
            FieldRow { x, y, ux, uy }
        })
        .collect();
    write_rows(path, &rows)
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let rows: Vec<FieldRow> = read_rows(path)?;
    let w = rows.iter().map(|r| r.x + 1).max().unwrap_or(0);
    let h = rows.iter().map(|r| r.y + 1).max().unwrap_or(0);
    if rows.len() != w * h {
        return Err(Error::format(path, format!("expected {} rows for a {w}x{h} field, found {}", w * h, rows.len())));
    }
    let mut ux = vec![0.0; w * h];
    let mut uy = vec![0.0; w * h];
    for r in rows {
        ux[r.y * w + r.x] = r.ux;
        uy[r.y * w + r.x] = r.uy;
    }
    DisplacementField::new(w, h, ux, uy).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseRow {
    pub label: String,
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi_deg: f64,
}

impl EllipseRow {
    pub fn new(label: impl Into<String>, e: &EllipseParams) -> Self {
        EllipseRow { label: label.into(), cx: e.cx, cy: e.cy, a: e.a, b: e.b, phi_deg: e.phi.to_degrees() }
    }

    pub fn ellipse(&self) -> cervreg_core::Result<EllipseParams> {
        EllipseParams::new(self.cx, self.cy, self.a, self.b, self.phi_deg.to_radians())
    }
}

/// First ellipse of a `label,cx,cy,a,b,phi_deg` file, or the one labeled `label`.
pub fn read_ellipse(path: &Path, label: Option<&str>) -> Result<EllipseParams> {
    let rows: Vec<EllipseRow> = read_rows(path)?;
    let row = match label {
        Some(l) => rows.iter().find(|r| r.label == l),
        None => rows.first(),
    }
    .ok_or_else(|| Error::format(path, "no matching ellipse row"))?;
    row.ellipse().map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub image_id: usize,
    pub subject_id: usize,
    pub file: String,
    pub ijv_cx: f64,
    pub ijv_cy: f64,
    pub ijv_a: f64,
    pub ijv_b: f64,
    pub ijv_phi_deg: f64,
    pub cca_cx: f64,
    pub cca_cy: f64,
    pub cca_r: f64,
    pub reverberation: bool,
}

impl TruthRow {
    pub fn new(file: String, t: &PhantomTruth) -> Self {
        TruthRow {
            image_id: t.image_id,
            subject_id: t.subject_id,
            file,
            ijv_cx: t.ijv.cx,
            ijv_cy: t.ijv.cy,
            ijv_a: t.ijv.a,
            ijv_b: t.ijv.b,
            ijv_phi_deg: t.ijv.phi.to_degrees(),
            cca_cx: t.cca.cx,
            cca_cy: t.cca.cy,
            cca_r: t.cca.a,
            reverberation: !t.reverberation_rows.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "L_sim")]
    pub l_sim: f64,
    #[serde(rename = "L_smooth")]
    pub l_smooth: f64,
}

impl From<&EpochStats> for HistoryRow {
    fn from(s: &EpochStats) -> Self {
        HistoryRow { epoch: s.epoch, j: s.j, l_sim: s.l_sim, l_smooth: s.l_smooth }
    }
}

/// Per-image test metrics of one trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: usize,
    pub variant: String,
    pub net: String,
    pub delta_i: f64,
    pub l_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub t: f64,
    pub dof: usize,
    pub alpha: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// A [`CompareRow`] naming the two variants, `net/variant` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub t: f64,
    pub dof: usize,
    pub alpha: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub net: String,
    pub variant: String,
    pub metric: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CevrRow {
    pub q: usize,
    pub cevr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub image_id: usize,
    pub stage: String,
    pub reason: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let ux: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let uy: Vec<f32> = (0..12).map(|i| 1.0 / (i as f32 + 3.0)).collect();
        let field = DisplacementField::new(4, 3, ux, uy).unwrap();
        write_field(&path, &field).unwrap();
        assert_eq!(read_field(&path).unwrap(), field);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,ux,uy\n0,0,-1.0,"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn history_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_rows(&path, &[HistoryRow { epoch: 1, j: 0.5, l_sim: 0.25, l_smooth: 2.0 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,J,L_sim,L_smooth\n1,0.5,0.25,2.0\n");
    }

    #[test]
    fn ellipse_lookup_by_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows = [
            EllipseRow::new("1", &EllipseParams::new(5.0, 6.0, 4.0, 2.0, 0.1).unwrap()),
            EllipseRow::new("ijv", &EllipseParams::new(50.0, 60.0, 20.0, 12.0, -0.2).unwrap()),
        ];
        write_rows(&path, &rows).unwrap();
        let e = read_ellipse(&path, Some("ijv")).unwrap();
        assert_eq!((e.cx, e.a), (50.0, 20.0));
        assert!((e.phi + 0.2).abs() < 1e-12);
        assert_eq!(read_ellipse(&path, None).unwrap().cx, 5.0);
        assert!(read_ellipse(&path, Some("cca")).is_err());
    }
}
