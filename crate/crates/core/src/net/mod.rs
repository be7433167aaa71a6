//! Convolutional U-Net predicting a dense displacement field from a
//! (moving, fixed) image pair.

mod config;
mod conv;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{LayerShape, NetConfig, NetKind, ENC_STRIDE, KERNEL, LEAKY_SLOPE};
pub use conv::{out_dims, ConvImpl, ConvLayer, ConvScratch};

use crate::error::{check_dims, Error, Result};
use crate::image::{DisplacementField, GrayImage};
use crate::real::Real;

/// Half-width of the uniform initialization of the flow layer.
pub const FLOW_INIT_SCALE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Conv { layer: usize, input: usize },
    Upsample { input: usize },
    Concat { a: usize, b: usize },
}

/// Buffer 0 is the stacked input pair; op `i` writes buffer `i + 1`.
fn build_ops(cfg: &NetConfig) -> Vec<Op> {
    let l = cfg.levels();
    let mut ops = Vec::new();
    let mut enc = Vec::with_capacity(l);
    let mut prev = 0;
    let mut layer = 0;
    let mut conv = |ops: &mut Vec<Op>, input: usize| {
        ops.push(Op::Conv { layer, input });
        layer += 1;
        ops.len()
    };
    for _ in 0..l {
        prev = conv(&mut ops, prev);
        enc.push(prev);
    }
    for k in 0..l {
        prev = conv(&mut ops, prev);
        ops.push(Op::Upsample { input: prev });
        let skip = if k + 1 < l { enc[l - 2 - k] } else { 0 };
        ops.push(Op::Concat { a: ops.len(), b: skip });
        prev = ops.len();
    }
    for _ in l..cfg.dec_filters.len() + 1 {
        prev = conv(&mut ops, prev);
    }
    debug_assert_eq!(prev, ops.len());
    ops
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Tensor<T> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

/// Activations of one forward pass, required by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    acts: Vec<Tensor<T>>,
    scratch: ConvScratch<T>,
    spare: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn new() -> Self {
        ForwardCache { acts: Vec::new(), scratch: ConvScratch::new(), spare: Vec::new() }
    }

    fn buffer(&mut self, len: usize) -> Vec<T> {
        let mut v = self.spare.pop().unwrap_or_default();
        v.clear();
        v.resize(len, T::zero());
        v
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    /// The predicted field planes `(u_x, u_y)` of the cached pass.
    pub fn field(&self) -> Option<(&[T], &[T])> {
        let out = self.acts.last()?;
        let n = out.h * out.w;
        Some((&out.data[..n], &out.data[n..]))
    }
}

/// Per-layer gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients { layers: net.layers.iter().map(|l| ConvLayer::zeros(l.shape)).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_zero()))
    }

    /// Gradient of parameter `idx` in [`Network::param`] order.
    pub fn param(&self, idx: usize) -> T {
        param_ref(&self.layers, idx)
    }
}

fn param_ref<T: Real>(layers: &[ConvLayer<T>], mut idx: usize) -> T {
    for l in layers {
        if idx < l.weight.len() {
            return l.weight[idx];
        }
        idx -= l.weight.len();
        if idx < l.bias.len() {
            return l.bias[idx];
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range");
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    config: NetConfig,
    seed: u64,
    layers: Vec<ConvLayer<T>>,
    ops: Vec<Op>,
    conv_impl: ConvImpl,
}

/// Builds a network with seeded He-uniform weights (leaky gain), zero
/// biases and a near-zero flow layer.
pub fn build<T: Real>(cfg: &NetConfig, seed: u64) -> Result<Network<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = cfg.layer_shapes();
    let gain = Float::sqrt(2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE));
    let layers = shapes
        .iter()
        .map(|&shape| {
            let fan_in = (shape.in_ch * KERNEL * KERNEL) as f64;
            let bound = if shape.leaky { gain * Float::sqrt(3.0 / fan_in) } else { FLOW_INIT_SCALE };
            let mut layer = ConvLayer::zeros(shape);
            for w in layer.weight.iter_mut() {
                *w = T::of(rng.random_range(-bound..bound));
            }
            layer
        })
        .collect();
    Ok(Network { config: cfg.clone(), seed, layers, ops: build_ops(cfg), conv_impl: ConvImpl::Gemm })
}

impl<T: Real> Network<T> {
    /// Reassembles a network from stored layers (e.g. a checkpoint).
    pub fn from_layers(cfg: &NetConfig, seed: u64, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        cfg.validate()?;
        let shapes = cfg.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::InvalidNetConfig("layer count does not match the configuration"));
        }
        for (s, l) in shapes.iter().zip(&layers) {
            if *s != l.shape || l.weight.len() != s.weight_len() || l.bias.len() != s.out_ch {
                return Err(Error::InvalidNetConfig("layer shape does not match the configuration"));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidNetConfig("non-finite weight"));
            }
        }
        Ok(Network { config: cfg.clone(), seed, layers, ops: build_ops(cfg), conv_impl: ConvImpl::Gemm })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn conv_impl(&self) -> ConvImpl {
        self.conv_impl
    }

    pub fn set_conv_impl(&mut self, imp: ConvImpl) {
        self.conv_impl = imp;
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter `idx`, enumerating each layer's weights then biases.
    pub fn param(&self, idx: usize) -> T {
        param_ref(&self.layers, idx)
    }

    pub fn set_param(&mut self, mut idx: usize, v: T) {
        for l in &mut self.layers {
            if idx < l.weight.len() {
                l.weight[idx] = v;
                return;
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                l.bias[idx] = v;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        Network {
            config: self.config.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer { shape: l.shape, weight: conv(&l.weight), bias: conv(&l.bias) })
                .collect(),
            ops: self.ops.clone(),
            conv_impl: self.conv_impl,
        }
    }

    /// Checks that `w x h` survives the encoder's halvings exactly.
    pub fn check_input_dims(&self, w: usize, h: usize) -> Result<()> {
        let div = 1usize << self.config.levels();
        if w == 0 || h == 0 || !w.is_multiple_of(div) || !h.is_multiple_of(div) {
            return Err(Error::InvalidArgument("image dimensions must be divisible by 2^levels"));
        }
        Ok(())
    }

    /// Predicted displacement field for moving image `m` and fixed image `f`.
    pub fn forward(&self, m: &GrayImage, f: &GrayImage) -> Result<DisplacementField> {
        check_dims(f.dims(), m.dims())?;
        let (w, h) = m.dims();
        let conv = |img: &GrayImage| img.pixels().iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>();
        let mut cache = ForwardCache::new();
        self.forward_raw(&conv(m), &conv(f), w, h, &mut cache)?;
        let (ux, uy) = cache.field().expect("forward fills the cache");
        let to32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect();
        DisplacementField::new(w, h, to32(ux), to32(uy))
    }

    /// Forward pass on raw planes, keeping every activation in `cache`.
    pub fn forward_raw(&self, m: &[T], f: &[T], w: usize, h: usize, cache: &mut ForwardCache<T>) -> Result<()> {
        self.check_input_dims(w, h)?;
        if m.len() != w * h || f.len() != w * h {
            return Err(Error::InvalidArgument("plane length does not match dimensions"));
        }
        let mut acts = core::mem::take(&mut cache.acts);
        cache.spare.extend(acts.drain(..).rev().map(|t| t.data));
        let mut input = cache.buffer(0);
        input.extend_from_slice(m);
        input.extend_from_slice(f);
        acts.push(Tensor { c: 2, h, w, data: input });
        for op in &self.ops {
            let mut data = cache.buffer(0);
            let t = match *op {
                Op::Conv { layer, input } => {
                    let x = &acts[input];
                    let l = &self.layers[layer];
                    l.forward_into(&x.data, x.h, x.w, self.conv_impl, &mut cache.scratch, &mut data);
                    let (h, w) = out_dims(x.h, x.w, l.shape.stride);
                    Tensor { c: l.shape.out_ch, h, w, data }
                }
                Op::Upsample { input } => upsample(&acts[input], data),
                Op::Concat { a, b } => {
                    let (ta, tb) = (&acts[a], &acts[b]);
                    debug_assert_eq!((ta.h, ta.w), (tb.h, tb.w));
                    data.extend_from_slice(&ta.data);
                    data.extend_from_slice(&tb.data);
                    Tensor { c: ta.c + tb.c, h: ta.h, w: ta.w, data }
                }
            };
            acts.push(t);
        }
        cache.acts = acts;
        Ok(())
    }

    /// Sign of every rectified activation of the cached pass, in op order.
    /// Two passes with equal patterns lie on the same linear piece of the
    /// rectifiers.
    pub fn activation_signs(&self, cache: &ForwardCache<T>) -> Vec<bool> {
        let mut out = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Conv { layer, .. } = *op {
                if self.layers[layer].shape.leaky {
                    if let Some(t) = cache.acts.get(i + 1) {
                        out.extend(t.data.iter().map(|v| *v > T::zero()));
                    }
                }
            }
        }
        out
    }

    /// Reverse-mode gradients of a scalar loss given its gradient on the
    /// predicted field.
    pub fn backward(&self, cache: &mut ForwardCache<T>, d_ux: &[T], d_uy: &[T]) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, d_ux, d_uy, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but accumulating into `grads`.
    pub fn backward_into(
        &self,
        cache: &mut ForwardCache<T>,
        d_ux: &[T],
        d_uy: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        if cache.acts.len() != self.ops.len() + 1 {
            return Err(Error::MissingForwardCache);
        }
        let out = cache.acts.last().expect("non-empty");
        let n = out.h * out.w;
        if out.c != 2 || d_ux.len() != n || d_uy.len() != n {
            return Err(Error::DimensionMismatch { expected: (out.w, out.h), found: (d_ux.len(), d_uy.len()) });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidNetConfig("gradient buffer does not match the network"));
        }
        let ForwardCache { acts, scratch, spare } = cache;
        let mut g: Vec<Option<Vec<T>>> = vec![None; acts.len()];
        let mut top = spare.pop().unwrap_or_default();
        top.clear();
        top.extend_from_slice(d_ux);
        top.extend_from_slice(d_uy);
        g[acts.len() - 1] = Some(top);

        fn accumulate<'a, T: Real>(slot: &'a mut Option<Vec<T>>, spare: &mut Vec<Vec<T>>, len: usize) -> &'a mut Vec<T> {
            slot.get_or_insert_with(|| {
                let mut v = spare.pop().unwrap_or_default();
                v.clear();
                v.resize(len, T::zero());
                v
            })
        }

        for (i, op) in self.ops.iter().enumerate().rev() {
            let Some(dy) = g[i + 1].take() else { continue };
            match *op {
                Op::Conv { layer, input } => {
                    let x = &acts[input];
                    let l = &self.layers[layer];
                    let dx = if input == 0 { None } else { Some(accumulate(&mut g[input], spare, x.data.len()).as_mut_slice()) };
                    l.backward(&x.data, x.h, x.w, &acts[i + 1].data, &dy, &mut grads.layers[layer], dx, scratch);
                }
                Op::Upsample { input } => {
                    let x = &acts[input];
                    let dx = accumulate(&mut g[input], spare, x.data.len());
                    let ow = 2 * x.w;
                    for c in 0..x.c {
                        for y in 0..x.h {
                            for xx in 0..x.w {
                                let base = (c * 2 * x.h + 2 * y) * ow + 2 * xx;
                                let s = dy[base] + dy[base + 1] + dy[base + ow] + dy[base + ow + 1];
                                let k = (c * x.h + y) * x.w + xx;
                                dx[k] = dx[k] + s;
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let la = acts[a].data.len();
                    if a != 0 {
                        let da = accumulate(&mut g[a], spare, la);
                        da.iter_mut().zip(&dy[..la]).for_each(|(d, &v)| *d = *d + v);
                    }
                    if b != 0 {
                        let db = accumulate(&mut g[b], spare, acts[b].data.len());
                        db.iter_mut().zip(&dy[la..]).for_each(|(d, &v)| *d = *d + v);
                    }
                }
            }
            spare.push(dy);
        }
        spare.extend(g.into_iter().flatten());
        Ok(())
    }
}

fn upsample<T: Real>(x: &Tensor<T>, mut data: Vec<T>) -> Tensor<T> {
    let (h, w) = (2 * x.h, 2 * x.w);
    data.reserve(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            let row = &x.data[(c * x.h + y / 2) * x.w..][..x.w];
            for &v in row {
                data.push(v);
                data.push(v);
            }
        }
    }
    Tensor { c: x.c, h, w, data }
}
