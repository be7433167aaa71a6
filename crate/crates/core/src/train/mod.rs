//! Unsupervised training of the registration network against a fixed
//! reference image.

mod loss;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use loss::{loss, loss_and_gradient_raw, loss_gradient, loss_raw, smoothness, FieldGradient, LossTerms};

use crate::error::{check_dims, Error, Result};
use crate::image::{warp, DisplacementField, GrayImage};
use crate::net::{build, ForwardCache, Gradients, NetConfig, Network};
use crate::real::Real;

/// Which images the moving side of each pair is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImageVariant {
    Original,
    PcaQ8,
}

impl ImageVariant {
    pub const ALL: [ImageVariant; 2] = [ImageVariant::Original, ImageVariant::PcaQ8];

    pub fn name(self) -> &'static str {
        match self {
            ImageVariant::Original => "original",
            ImageVariant::PcaQ8 => "pca",
        }
    }
}

impl fmt::Display for ImageVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(ImageVariant::Original),
            "pca" | "pca_q8" | "pca-q8" => Ok(ImageVariant::PcaQ8),
            _ => Err(Error::InvalidArgument("unknown image variant (expected original or pca)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of images used for training.
    pub split: f64,
    pub seed: u64,
    pub image_variant: ImageVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.001,
            learning_rate: 1e-4,
            epochs: 300,
            split: 0.7,
            seed: 0,
            image_variant: ImageVariant::Original,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument("split must lie in (0, 1)"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument("gamma must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Mean train-set loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub j: f64,
    pub l_sim: f64,
    pub l_smooth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn first(&self) -> Option<&EpochStats> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(net: &Network<T>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = 1.0 - Float::powi(self.beta1, self.step);
        let c2 = 1.0 - Float::powi(self.beta2, self.step);
        let step = T::of(self.lr * Float::sqrt(c2) / c1);
        let eps = T::of(self.eps * Float::sqrt(c2));
        let layers = net.layers_mut().iter_mut().zip(&grads.layers).zip(self.m.layers.iter_mut().zip(&mut self.v.layers));
        for ((layer, g), (m, v)) in layers {
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weight.iter().chain(&g.bias);
            let ms = m.weight.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weight.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Seeded shuffle followed by a `floor(fraction * n)` train split.
/// Returns `(train, test)` index lists.
pub fn split_dataset(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(Error::InvalidArgument("at least four images are required for a split"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument("split must lie in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // A small epsilon keeps exact products such as 0.7 * 10 from rounding down.
    let n_train = Float::floor(fraction * n as f64 + 1e-9) as usize;
    let n_train = n_train.clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Reusable buffers for one training step.
struct Workspace<T> {
    cache: ForwardCache<T>,
    grads: Gradients<T>,
}

fn to_real<T: Real>(img: &GrayImage) -> Vec<T> {
    img.pixels().iter().map(|&v| T::of(v as f64)).collect()
}

/// One stochastic step on a single pair: forward, loss, backward, update.
#[allow(clippy::too_many_arguments)]
fn step<T: Real>(
    net: &mut Network<T>,
    opt: &mut Adam<T>,
    ws: &mut Workspace<T>,
    m: &[T],
    f: &[T],
    w: usize,
    h: usize,
    gamma: f64,
) -> Result<LossTerms> {
    net.forward_raw(m, f, w, h, &mut ws.cache)?;
    let (ux, uy) = ws.cache.field().expect("forward fills the cache");
    let (terms, grad) = loss_and_gradient_raw(f, m, w, h, ux, uy, gamma)?;
    if terms.non_finite_term().is_some() {
        return Ok(terms);
    }
    for l in ws.grads.layers.iter_mut() {
        l.weight.iter_mut().for_each(|v| *v = T::zero());
        l.bias.iter_mut().for_each(|v| *v = T::zero());
    }
    net.backward_into(&mut ws.cache, &grad.d_ux, &grad.d_uy, &mut ws.grads)?;
    opt.update(net, &ws.grads);
    Ok(terms)
}

/// Trains a freshly built network on `(images[i], reference)` pairs.
pub fn train(images: &[GrayImage], reference: &GrayImage, net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    train_with_progress(images, reference, net_cfg, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    images: &[GrayImage],
    reference: &GrayImage,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images"));
    }
    let (w, h) = reference.dims();
    for img in images {
        check_dims((w, h), img.dims())?;
    }
    let mut net: Network<f32> = build(net_cfg, cfg.seed)?;
    net.check_input_dims(w, h)?;
    let mut opt = Adam::new(&net, cfg.learning_rate);
    let mut ws = Workspace { cache: ForwardCache::new(), grads: Gradients::zeros_like(&net) };
    let fixed: Vec<f32> = to_real(reference);
    let moving: Vec<Vec<f32>> = images.iter().map(to_real).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut j, mut sim, mut smooth) = (0.0, 0.0, 0.0);
        for &i in &order {
            let t = step(&mut net, &mut opt, &mut ws, &moving[i], &fixed, w, h, cfg.gamma)?;
            if let Some(term) = t.non_finite_term() {
                return Err(Error::Diverged { epoch, term });
            }
            j += t.j;
            sim += t.l_sim;
            smooth += t.l_smooth;
        }
        let n = order.len() as f64;
        let stats = EpochStats { epoch, j: j / n, l_sim: sim / n, l_smooth: smooth / n };
        progress(&stats);
        history.epochs.push(stats);
    }
    Ok((net, history))
}

/// Result of registering one pair with a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub field: DisplacementField,
    pub moved: GrayImage,
    pub loss: LossTerms,
}

/// Forward pass, warp and loss evaluation; the network is not modified.
pub fn register_pair(net: &Network, m: &GrayImage, f: &GrayImage, gamma: f64) -> Result<Registration> {
    let field = net.forward(m, f)?;
    let moved = warp(m, &field)?;
    let loss = loss(f, m, &field, gamma)?;
    Ok(Registration { field, moved, loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let (tr, te) = split_dataset(10, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let (tr, te) = split_dataset(81, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (56, 25));
        let (tr, te) = split_dataset(83, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (58, 25));
        assert!(split_dataset(3, 0.7, 1).is_err());
    }

    #[test]
    fn split_is_disjoint_and_reproducible() {
        let (tr, te) = split_dataset(20, 0.7, 9).unwrap();
        assert_eq!((tr.clone(), te.clone()), split_dataset(20, 0.7, 9).unwrap());
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ImageVariant::ALL {
            assert_eq!(v.name().parse::<ImageVariant>().unwrap(), v);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { split: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = NetConfig::new(&[2], &[2, 2]);
        let mut net: Network<f64> = build(&cfg, 1).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weight[0] = 3.0;
        g.layers[0].bias[1] = -0.5;
        let mut opt = Adam::new(&net, 0.01);
        opt.update(&mut net, &g);
        assert!((before.layers()[0].weight[0] - net.layers()[0].weight[0] - 0.01).abs() < 1e-9);
        assert!((net.layers()[0].bias[1] - 0.01).abs() < 1e-9);
        assert_eq!(before.layers()[1], net.layers()[1]);
    }
}
