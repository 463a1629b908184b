//! Adaptive low-pass downsampling block.
//!
//! Two stride-2 branches run on the same input: the ordinary learned 3x3
//! downsampling convolution, and a depthwise 5x5 convolution whose kernels are
//! softmax-normalized logits (so each is a non-negative, unit-sum low-pass
//! filter). Channel descriptors of both branches are pooled, concatenated, and
//! mapped by one fully connected layer plus sigmoid to per-channel weights that
//! control how much of the low-pass response is fused into the output.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward, sigmoid, sigmoid_backward, softmax_normalize,
    softmax_normalize_backward, Conv2dSpec, KernelLogits, Padding, Tensor,
};

pub const SCONV_SIZE: usize = 5;
pub const SCONV_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// `y = orig + w * low`
    #[default]
    Additive,
    /// `y = (1 - w) * orig + w * low`
    Convex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AldBlock {
    channels: usize,
    pub sconv_logits: KernelLogits,
    pub main_kernel: Tensor,
    pub fc_weights: Tensor,
    pub fc_bias: Tensor,
    pub fusion: Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AldGrads {
    pub sconv_logits: Tensor,
    pub main_kernel: Tensor,
    pub fc_weights: Tensor,
    pub fc_bias: Tensor,
}

/// Intermediate values from [`AldBlock::forward`], tied to the parameter
/// values that produced them.
#[derive(Debug, Clone)]
pub struct AldCache {
    fingerprint: u64,
    x: Tensor,
    orig: Tensor,
    low: Tensor,
    kernel: Tensor,
    desc: Tensor,
    weights: Tensor,
}

impl AldCache {
    pub fn orig(&self) -> &Tensor {
        &self.orig
    }

    pub fn low(&self) -> &Tensor {
        &self.low
    }

    /// Fusion weights after the sigmoid, shape `(N, C, 1, 1)`.
    pub fn fusion_weights(&self) -> &Tensor {
        &self.weights
    }
}

/// Normalized discrete Gaussian on a `size x size` integer grid centred at 0.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as f64 - r;
            let dx = (i % size) as f64 - r;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

impl AldBlock {
    /// Gaussian-initialized low-pass kernels; main branch and fc drawn from a
    /// seeded normal scaled by `1/sqrt(fan_in)`; fc bias zero.
    pub fn init(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::contract("ald_init: channels must be at least 1"));
        }
        let c = channels;
        let r = (SCONV_SIZE / 2) as f64;
        // log of the unnormalized Gaussian; softmax restores the normalization.
        let logits = Tensor::from_fn([c, 1, SCONV_SIZE, SCONV_SIZE], |[_, _, h, w]| {
            let dy = h as f64 - r;
            let dx = w as f64 - r;
            -(dx * dx + dy * dy) / (2.0 * SCONV_SIGMA * SCONV_SIGMA)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let main_kernel = Tensor::randn([c, c, 3, 3], 1.0 / ((9 * c) as f64).sqrt(), &mut rng);
        let fc_weights = Tensor::randn([c, 2 * c, 1, 1], 1.0 / ((2 * c) as f64).sqrt(), &mut rng);
        Ok(Self {
            channels: c,
            sconv_logits: KernelLogits::new(logits, c)?,
            main_kernel,
            fc_weights,
            fc_bias: Tensor::zeros([1, c, 1, 1]),
            fusion: Fusion::Additive,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn main_spec() -> Conv2dSpec {
        Conv2dSpec::new(2, 1, Padding::Zero, 1)
    }

    pub fn low_spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(2, SCONV_SIZE / 2, Padding::Reflect, self.channels)
    }

    pub fn normalized_kernel(&self) -> Tensor {
        softmax_normalize(&self.sconv_logits)
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("ald.sconv_logits", self.sconv_logits.tensor()),
            ("ald.main_kernel", &self.main_kernel),
            ("ald.fc_weights", &self.fc_weights),
            ("ald.fc_bias", &self.fc_bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("ald.sconv_logits", self.sconv_logits.tensor_mut()),
            ("ald.main_kernel", &mut self.main_kernel),
            ("ald.fc_weights", &mut self.fc_weights),
            ("ald.fc_bias", &mut self.fc_bias),
        ]
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.params() {
            name.hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        (self.fusion as u8).hash(&mut h);
        h.finish()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AldCache)> {
        let [_, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::dim(
                "ald_forward",
                format!("input has {c} channels, block expects {}", self.channels),
            ));
        }
        if h < SCONV_SIZE || w < SCONV_SIZE {
            return Err(Error::dim(
                "ald_forward",
                format!("spatial size {h}x{w} below {SCONV_SIZE}x{SCONV_SIZE}"),
            ));
        }
        let orig = conv2d(x, &self.main_kernel, &Self::main_spec())?;
        let kernel = self.normalized_kernel();
        let low = conv2d(x, &kernel, &self.low_spec())?;
        debug_assert_eq!(orig.shape(), low.shape());
        let desc = Tensor::concat_channels(&[&global_avg_pool(&orig)?, &global_avg_pool(&low)?])?;
        let weights = sigmoid(&fully_connected(&desc, &self.fc_weights, &self.fc_bias)?);
        let y = fuse(&orig, &low, &weights, self.fusion);
        Ok((
            y,
            AldCache {
                fingerprint: self.fingerprint(),
                x: x.clone(),
                orig,
                low,
                kernel,
                desc,
                weights,
            },
        ))
    }

    pub fn backward(&self, cache: &AldCache, grad_y: &Tensor) -> Result<(Tensor, AldGrads)> {
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::contract(
                "ald_backward: cache was produced by different parameters",
            ));
        }
        grad_y.expect_shape("ald_backward", cache.orig.shape())?;
        let [n, c, oh, ow] = cache.orig.shape();
        let plane = oh * ow;

        let mut d_orig = Tensor::zeros(cache.orig.shape());
        let mut d_low = Tensor::zeros(cache.low.shape());
        let mut d_w = Tensor::zeros([n, c, 1, 1]);
        for ni in 0..n {
            for ci in 0..c {
                let wv = cache.weights.at(ni, ci, 0, 0);
                let base = (ni * c + ci) * plane;
                let mut acc = 0.0;
                for i in base..base + plane {
                    let g = grad_y.data()[i];
                    let lo = cache.low.data()[i];
                    let or = cache.orig.data()[i];
                    match self.fusion {
                        Fusion::Additive => {
                            d_orig.data_mut()[i] = g;
                            acc += g * lo;
                        }
                        Fusion::Convex => {
                            d_orig.data_mut()[i] = (1.0 - wv) * g;
                            acc += g * (lo - or);
                        }
                    }
                    d_low.data_mut()[i] = wv * g;
                }
                *d_w.at_mut(ni, ci, 0, 0) = acc;
            }
        }

        let d_z = sigmoid_backward(&d_w, &cache.weights)?;
        let (d_desc, g_fc_w, g_fc_b) =
            fully_connected_backward(&d_z, &cache.desc, &self.fc_weights, &self.fc_bias)?;
        let (d_gap_orig, d_gap_low) = d_desc.split_channels(c)?;
        d_orig.axpy(1.0, &global_avg_pool_backward(&d_gap_orig, cache.orig.shape())?)?;
        d_low.axpy(1.0, &global_avg_pool_backward(&d_gap_low, cache.low.shape())?)?;

        let (mut grad_x, g_main) =
            conv2d_backward(&d_orig, &cache.x, &self.main_kernel, &Self::main_spec())?;
        let (gx_low, g_kernel) = conv2d_backward(&d_low, &cache.x, &cache.kernel, &self.low_spec())?;
        grad_x.axpy(1.0, &gx_low)?;
        let g_logits = softmax_normalize_backward(&g_kernel, &cache.kernel)?;

        Ok((
            grad_x,
            AldGrads {
                sconv_logits: g_logits,
                main_kernel: g_main,
                fc_weights: g_fc_w,
                fc_bias: g_fc_b,
            },
        ))
    }
}

impl AldGrads {
    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.sconv_logits, &self.main_kernel, &self.fc_weights, &self.fc_bias]
    }
}

fn fuse(orig: &Tensor, low: &Tensor, weights: &Tensor, fusion: Fusion) -> Tensor {
    let [_, _, oh, ow] = orig.shape();
    let plane = oh * ow;
    let mut y = orig.clone();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        let wv = weights.data()[i / plane];
        let lo = low.data()[i];
        *v = match fusion {
            Fusion::Additive => *v + wv * lo,
            Fusion::Convex => (1.0 - wv) * *v + wv * lo,
        };
    }
    y
}
