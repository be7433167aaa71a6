use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const KERNEL: usize = 3;
pub const ENC_STRIDE: usize = 2;

/// Filter counts of a U-Net.
///
/// With `L = enc_filters.len()` encoder levels (stride-2 convolutions), the
/// first `L` decoder layers form the upward ladder: each is followed by a 2x
/// nearest upsample and a concatenation with the next finer skip (the
/// encoder outputs, and finally the input pair itself). The remaining
/// decoder layers run at full resolution, then a 3x3 convolution emits the
/// two field channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub enc_filters: Vec<usize>,
    pub dec_filters: Vec<usize>,
}

/// The three studied structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Full,
    Reduced,
    Filters16,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [NetKind::Full, NetKind::Reduced, NetKind::Filters16];

    pub fn config(self) -> NetConfig {
        match self {
            NetKind::Full => NetConfig::new(&[16, 32, 32, 32], &[32, 32, 32, 32, 32, 16, 16]),
            NetKind::Reduced => NetConfig::new(&[16, 32], &[32, 32, 32, 16, 16]),
            NetKind::Filters16 => NetConfig::new(&[16, 16, 16, 16], &[16, 16, 16, 16, 16, 16, 16]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Full => "full",
            NetKind::Reduced => "reduced",
            NetKind::Filters16 => "filters16",
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NetKind::Full),
            "reduced" => Ok(NetKind::Reduced),
            "filters16" | "16filters" | "16-filters" => Ok(NetKind::Filters16),
            _ => Err(Error::InvalidArgument("unknown net structure (expected full, reduced or filters16)")),
        }
    }
}

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// Resolution of the layer output relative to the input image (`1 / 2^level`).
    pub level: usize,
    pub leaky: bool,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * KERNEL * KERNEL
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_ch
    }
}

impl NetConfig {
    pub fn new(enc: &[usize], dec: &[usize]) -> Self {
        NetConfig { enc_filters: enc.to_vec(), dec_filters: dec.to_vec() }
    }

    pub fn levels(&self) -> usize {
        self.enc_filters.len()
    }

    /// Encoder plus decoder layer count (the flow layer excluded).
    pub fn layer_count(&self) -> usize {
        self.enc_filters.len() + self.dec_filters.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.enc_filters.len();
        if l == 0 {
            return Err(Error::InvalidNetConfig("at least one encoder level is required"));
        }
        if self.dec_filters.len() <= l {
            return Err(Error::InvalidNetConfig("decoder needs more layers than encoder levels"));
        }
        if self.enc_filters.iter().chain(&self.dec_filters).any(|&f| f == 0) {
            return Err(Error::InvalidNetConfig("filter counts must be positive"));
        }
        Ok(())
    }

    /// Shapes of all convolution layers in execution order, flow layer last.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let l = self.levels();
        let enc = &self.enc_filters;
        let dec = &self.dec_filters;
        let mut out = Vec::with_capacity(enc.len() + dec.len() + 1);
        let mut in_ch = 2;
        for (i, &f) in enc.iter().enumerate() {
            out.push(LayerShape { in_ch, out_ch: f, stride: ENC_STRIDE, level: i + 1, leaky: true });
            in_ch = f;
        }
        for k in 0..l {
            let in_ch = if k == 0 { enc[l - 1] } else { dec[k - 1] + enc[l - 1 - k] };
            out.push(LayerShape { in_ch, out_ch: dec[k], stride: 1, level: l - k, leaky: true });
        }
        for k in l..dec.len() {
            let in_ch = if k == l { dec[l - 1] + 2 } else { dec[k - 1] };
            out.push(LayerShape { in_ch, out_ch: dec[k], stride: 1, level: 0, leaky: true });
        }
        out.push(LayerShape { in_ch: dec[dec.len() - 1], out_ch: 2, stride: 1, level: 0, leaky: false });
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::param_count).sum()
    }
}
