//! Binary model files. Both formats start with an 8-byte magic and a `u32`
//! version, followed by little-endian fields.

use std::fs;
use std::path::Path;

use cervreg_core::net::{ConvLayer, NetConfig, Network};
use cervreg_core::pca::PcaModel;

use crate::error::{Error, Result};

const PCA_MAGIC: &[u8; 8] = b"CVRGPCA\0";
const NET_MAGIC: &[u8; 8] = b"CVRGNET\0";
const VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.0.extend(x.to_le_bytes()));
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend(x.to_le_bytes()));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or("unexpected end of file")?;
        self.pos += n;
        Ok(s)
    }
    fn header(&mut self, magic: &[u8; 8]) -> std::result::Result<(), String> {
        if self.take(8)? != magic {
            return Err("bad magic".into());
        }
        match self.u32()? {
            VERSION => Ok(()),
            v => Err(format!("unsupported version {v}")),
        }
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, limit: usize) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).ok().filter(|&v| v <= limit).ok_or_else(|| format!("implausible length {v}"))
    }
    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err("trailing bytes".into())
        }
    }
}

/// Layout: `p, n, width, height` as `u64`, total variance, then `mu` (n),
/// eigenvalues (p), loadings (p*p row-major) and the p PC images (n each).
pub fn encode_pca(m: &PcaModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend(PCA_MAGIC);
    w.u32(VERSION);
    for v in [m.p, m.n, m.width, m.height] {
        w.u64(v as u64);
    }
    w.f64s(&[m.total_variance]);
    w.f64s(&m.mu);
    w.f64s(&m.eigvals);
    w.f64s(&m.loadings);
    for pc in &m.pcs {
        w.f64s(pc);
    }
    w.0
}

pub fn decode_pca(bytes: &[u8]) -> std::result::Result<PcaModel, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(PCA_MAGIC)?;
    let limit = bytes.len() / 8;
    let p = r.len(limit)?;
    let n = r.len(limit)?;
    let width = r.len(limit)?;
    let height = r.len(limit)?;
    if width * height != n {
        return Err("pixel count does not match the dimensions".into());
    }
    let total_variance = r.f64s(1)?[0];
    let mu = r.f64s(n)?;
    let eigvals = r.f64s(p)?;
    let loadings = r.f64s(p * p)?;
    let pcs = (0..p).map(|_| r.f64s(n)).collect::<std::result::Result<_, _>>()?;
    r.finish()?;
    Ok(PcaModel { p, n, width, height, mu, eigvals, loadings, pcs, total_variance })
}

pub fn save_pca(path: &Path, m: &PcaModel) -> Result<()> {
    fs::write(path, encode_pca(m)).map_err(|e| Error::io(path, e))
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pca(&bytes).map_err(|msg| Error::format(path, msg))
}

/// Layout: seed `u64`, encoder and decoder filter lists (`u32` count then
/// `u32` entries), parameter count `u64`, then every layer's weights and
/// biases as `f32`.
pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend(NET_MAGIC);
    w.u32(VERSION);
    w.u64(net.seed());
    let cfg = net.config();
    for filters in [&cfg.enc_filters, &cfg.dec_filters] {
        w.u32(filters.len() as u32);
        filters.iter().for_each(|&f| w.u32(f as u32));
    }
    w.u64(net.param_count() as u64);
    for l in net.layers() {
        w.f32s(&l.weight);
        w.f32s(&l.bias);
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Network, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(NET_MAGIC)?;
    let seed = r.u64()?;
    let mut lists = Vec::new();
    for _ in 0..2 {
        let len = r.u32()? as usize;
        if len > 64 {
            return Err(format!("implausible layer count {len}"));
        }
        lists.push((0..len).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?);
    }
    let cfg = NetConfig { enc_filters: lists[0].clone(), dec_filters: lists[1].clone() };
    cfg.validate().map_err(|e| e.to_string())?;
    if r.u64()? != cfg.param_count() as u64 {
        return Err("parameter count does not match the configuration".into());
    }
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .map(|shape| {
            let mut l = ConvLayer::zeros(shape);
            l.weight = r.f32s(shape.weight_len())?;
            l.bias = r.f32s(shape.out_ch)?;
            Ok(l)
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    r.finish()?;
    Network::from_layers(&cfg, seed, layers).map_err(|e| e.to_string())
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
}
