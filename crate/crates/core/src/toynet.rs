//! Desk-scale paired training harness for the degradation suppression losses.
//!
//! `ToyNet` is a stem convolution, one [`AldBlock`], and a 3x3 head that emits
//! a per-pixel objectness logit at half resolution. Training pairs are
//! synthetic RAW scenes with bright rectangular objects: the clean frame and a
//! darkened, noise-synthesized copy re-amplified to the clean exposure.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ald::{AldBlock, AldCache, Fusion};
use crate::blob::NamedTensor;
use crate::dsl::{loss_ds, loss_total, loss_tv, DslConfig};
use crate::error::{Error, Result};
use crate::noise::{synthesize, NoiseParams};
use crate::numerics::{conv2d, conv2d_backward, relu, relu_backward, sigmoid_scalar, Conv2dSpec, Padding, Tensor};
use crate::raw::{normalize, BayerPattern, ExposureScale, RawFrame};

/// Number of feature maps exposed for the paired losses (stem, ALD).
pub const FEATURE_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub stem_kernel: Tensor,
    pub stem_bias: Tensor,
    pub ald: AldBlock,
    pub head_kernel: Tensor,
    pub head_bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct ToyCache {
    x: Tensor,
    stem_pre: Tensor,
    stem_out: Tensor,
    ald: AldCache,
    ald_out: Tensor,
}

impl ToyCache {
    /// Feature maps in layer order: stem output, ALD output.
    pub fn features(&self) -> [&Tensor; FEATURE_LAYERS] {
        [&self.stem_out, &self.ald_out]
    }
}

fn conv3x3() -> Conv2dSpec {
    Conv2dSpec::new(1, 1, Padding::Zero, 1)
}

fn add_channel_bias(x: &mut Tensor, bias: &Tensor) {
    let [_, c, h, w] = x.shape();
    let plane = h * w;
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += bias.data()[(i / plane) % c];
    }
}

fn channel_bias_grad(grad: &Tensor) -> Tensor {
    let [_, c, h, w] = grad.shape();
    let plane = h * w;
    let mut g = Tensor::zeros([1, c, 1, 1]);
    for (i, v) in grad.data().iter().enumerate() {
        g.data_mut()[(i / plane) % c] += v;
    }
    g
}

impl ToyNet {
    pub fn init(in_channels: usize, channels: usize, seed: u64, fusion: Fusion) -> Result<Self> {
        if in_channels == 0 || channels == 0 {
            return Err(Error::contract("toynet: channel counts must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_kernel = Tensor::randn(
            [channels, in_channels, 3, 3],
            1.0 / ((9 * in_channels) as f64).sqrt(),
            &mut rng,
        );
        let head_kernel = Tensor::randn([1, channels, 3, 3], 1.0 / ((9 * channels) as f64).sqrt(), &mut rng);
        let mut ald = AldBlock::init(channels, rng.random())?;
        ald.fusion = fusion;
        Ok(Self {
            stem_kernel,
            stem_bias: Tensor::zeros([1, channels, 1, 1]),
            ald,
            head_kernel,
            head_bias: Tensor::zeros([1, 1, 1, 1]),
        })
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = vec![("stem.kernel", &self.stem_kernel), ("stem.bias", &self.stem_bias)];
        p.extend(self.ald.params());
        p.push(("head.kernel", &self.head_kernel));
        p.push(("head.bias", &self.head_bias));
        p
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut p = vec![
            ("stem.kernel", &mut self.stem_kernel),
            ("stem.bias", &mut self.stem_bias),
        ];
        p.extend(self.ald.params_mut());
        p.push(("head.kernel", &mut self.head_kernel));
        p.push(("head.bias", &mut self.head_bias));
        p
    }

    pub fn snapshot(&self) -> Vec<NamedTensor> {
        self.params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    /// Returns head logits `(N, 1, H', W')` and the cache for backward.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ToyCache)> {
        let mut stem_pre = conv2d(x, &self.stem_kernel, &conv3x3())?;
        add_channel_bias(&mut stem_pre, &self.stem_bias);
        let stem_out = relu(&stem_pre);
        let (ald_out, ald) = self.ald.forward(&stem_out)?;
        let mut logits = conv2d(&ald_out, &self.head_kernel, &conv3x3())?;
        add_channel_bias(&mut logits, &self.head_bias);
        Ok((
            logits,
            ToyCache {
                x: x.clone(),
                stem_pre,
                stem_out,
                ald,
                ald_out,
            },
        ))
    }

    /// Parameter gradients in [`ToyNet::params`] order. `feature_grads` are
    /// extra cotangents injected at the stem and ALD outputs.
    pub fn backward(
        &self,
        cache: &ToyCache,
        grad_logits: &Tensor,
        feature_grads: [Option<&Tensor>; FEATURE_LAYERS],
    ) -> Result<Vec<Tensor>> {
        let (mut d_ald_out, g_head) = conv2d_backward(grad_logits, &cache.ald_out, &self.head_kernel, &conv3x3())?;
        let g_head_b = channel_bias_grad(grad_logits);
        if let Some(g) = feature_grads[1] {
            d_ald_out.axpy(1.0, g)?;
        }
        let (mut d_stem_out, g_ald) = self.ald.backward(&cache.ald, &d_ald_out)?;
        if let Some(g) = feature_grads[0] {
            d_stem_out.axpy(1.0, g)?;
        }
        let d_stem_pre = relu_backward(&d_stem_out, &cache.stem_pre)?;
        let (_, g_stem) = conv2d_backward(&d_stem_pre, &cache.x, &self.stem_kernel, &conv3x3())?;
        let g_stem_b = channel_bias_grad(&d_stem_pre);
        Ok(vec![
            g_stem,
            g_stem_b,
            g_ald.sconv_logits,
            g_ald.main_kernel,
            g_ald.fc_weights,
            g_ald.fc_bias,
            g_head,
            g_head_b,
        ])
    }
}

/// Mean binary cross-entropy on logits, with its gradient.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_shape("bce_with_logits", target.shape())?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits.zip_map(target, "bce_with_logits", |z, t| (sigmoid_scalar(z) - t) / n)?;
    for (&z, &t) in logits.data().iter().zip(target.data()) {
        // softplus(z) - t*z, stable for both signs
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone)]
pub struct PairSample {
    /// Normalized well-lit frame `(1, 1, H, W)`.
    pub clean: Tensor,
    /// Darkened, noised, and re-amplified frame `(1, 1, H, W)`.
    pub degraded: Tensor,
    /// Object mask at half resolution `(1, 1, H/2, W/2)`.
    pub target: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSetConfig {
    pub size: usize,
    pub count: usize,
    pub noise: NoiseParams,
    pub max_objects: usize,
    /// Normalized background level range.
    pub background: (f64, f64),
    /// Normalized object level range.
    pub object: (f64, f64),
}

impl Default for PairedSetConfig {
    fn default() -> Self {
        Self {
            size: 16,
            count: 256,
            noise: NoiseParams {
                ratio: 0.01,
                ..NoiseParams::default()
            },
            max_objects: 3,
            background: (0.03, 0.12),
            object: (0.15, 0.4),
        }
    }
}

/// Synthetic clean/degraded pairs; deterministic per seed.
pub fn paired_set(cfg: &PairedSetConfig, seed: u64) -> Result<Vec<PairSample>> {
    if cfg.size < 8 || cfg.size % 2 != 0 {
        return Err(Error::contract("paired_set: size must be even and at least 8"));
    }
    let s = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (black, white) = (240u16, 4095u16);
    let span = (white - black) as f64;
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let background = rng.random_range(cfg.background.0..cfg.background.1);
        let mut level = vec![background; s * s];
        let mut mask = vec![0.0; s * s];
        let objects = rng.random_range(1..=cfg.max_objects.max(1));
        for _ in 0..objects {
            let (h, w) = (rng.random_range(3..=s / 3), rng.random_range(3..=s / 3));
            let (y0, x0) = (rng.random_range(0..=s - h), rng.random_range(0..=s - w));
            let bright = rng.random_range(cfg.object.0..cfg.object.1);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    level[y * s + x] = bright;
                    mask[y * s + x] = 1.0;
                }
            }
        }
        let counts = level
            .iter()
            .map(|l| (black as f64 + l * span).round() as u16)
            .collect();
        let mut raw = RawFrame::new(s, s, 12, BayerPattern::Rggb, black, white, counts)?;
        raw.frame_index = Some(i as u64);
        let noisy = synthesize(&raw, &cfg.noise, seed ^ 0x5EED)?;
        let clean = normalize(&raw);
        let degraded = normalize(&noisy).exposure_scale(1.0 / cfg.noise.ratio)?;
        let half = s / 2;
        let target = Tensor::from_fn([1, 1, half, half], |[_, _, y, x]| {
            let covered: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(dy, dx)| mask[(2 * y + dy) * s + 2 * x + dx])
                .sum();
            if covered >= 2.0 {
                1.0
            } else {
                0.0
            }
        });
        out.push(PairSample {
            clean,
            degraded,
            target,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::contract(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub channels: usize,
    pub fusion: Fusion,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub dsl: DslConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.02,
            batch: 16,
            seed: 0,
            channels: 8,
            fusion: Fusion::Additive,
            optimizer: Optimizer::Adam,
            clip_norm: 0.0,
            dsl: DslConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub use_dsl: bool,
    pub steps: usize,
    /// Held-out mean of `||F_well - F_low||_2 / elements` over the loss layers.
    pub feature_distance: f64,
    /// Held-out mean BCE on degraded inputs.
    pub det_loss_low: f64,
    /// Held-out mean BCE on clean inputs.
    pub det_loss_well: f64,
    /// Total training loss of the last step (NaN when no step ran).
    pub last_train_loss: f64,
    pub snapshot: Vec<NamedTensor>,
}

impl TrainReport {
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}use_dsl={}", self.use_dsl);
        let _ = writeln!(s, "{prefix}steps={}", self.steps);
        let _ = writeln!(s, "{prefix}feature_distance={:.9e}", self.feature_distance);
        let _ = writeln!(s, "{prefix}det_loss_low={:.9e}", self.det_loss_low);
        let _ = writeln!(s, "{prefix}det_loss_well={:.9e}", self.det_loss_well);
        let _ = writeln!(s, "{prefix}last_train_loss={:.9e}", self.last_train_loss);
        s
    }
}

fn selected<'a, T>(layers: &[usize], all: &[T; FEATURE_LAYERS]) -> Result<Vec<T>>
where
    T: Clone + 'a,
{
    layers
        .iter()
        .map(|&l| {
            all.get(l)
                .cloned()
                .ok_or_else(|| Error::contract(format!("dsl layer {l} does not exist (have {FEATURE_LAYERS})")))
        })
        .collect()
}

/// Held-out feature distance and detection losses.
pub fn evaluate(net: &ToyNet, set: &[PairSample], layers: &[usize]) -> Result<(f64, f64, f64)> {
    if set.is_empty() {
        return Err(Error::contract("evaluate: empty held-out set"));
    }
    let mut dist = 0.0;
    let mut det_low = 0.0;
    let mut det_well = 0.0;
    for s in set {
        let (lw, cw) = net.forward(&s.clean)?;
        let (ll, cl) = net.forward(&s.degraded)?;
        let fw = selected(layers, &cw.features())?;
        let fl = selected(layers, &cl.features())?;
        let mut sq = 0.0;
        let mut elems = 0usize;
        for (a, b) in fw.iter().zip(&fl) {
            sq += a.sub(b)?.sum_sq();
            elems += a.len();
        }
        dist += sq.sqrt() / elems.max(1) as f64;
        det_low += bce_with_logits(&ll, &s.target)?.0;
        det_well += bce_with_logits(&lw, &s.target)?.0;
    }
    let n = set.len() as f64;
    Ok((dist / n, det_low / n, det_well / n))
}

/// SGD on paired data. With `use_dsl`, the full weighted objective is used;
/// without it only the two detection terms are.
pub fn toy_train(
    train: &[PairSample],
    heldout: &[PairSample],
    cfg: &TrainConfig,
    use_dsl: bool,
) -> Result<TrainReport> {
    cfg.dsl.validate()?;
    if train.is_empty() || cfg.batch == 0 {
        return Err(Error::contract("toy_train: need a non-empty set and batch >= 1"));
    }
    let in_channels = train[0].clean.shape()[1];
    let mut net = ToyNet::init(in_channels, cfg.channels, cfg.seed, cfg.fusion)?;
    let loss_cfg = if use_dsl {
        cfg.dsl.clone()
    } else {
        DslConfig {
            beta: 0.0,
            gamma: 0.0,
            ..cfg.dsl.clone()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBA7C);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut last_loss = f64::NAN;
    let mut adam = Adam::new(&net);

    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let b = idx.len() as f64;
        let clean = Tensor::stack(&idx.iter().map(|&i| train[i].clean.clone()).collect::<Vec<_>>())?;
        let noisy = Tensor::stack(&idx.iter().map(|&i| train[i].degraded.clone()).collect::<Vec<_>>())?;
        let target = Tensor::stack(&idx.iter().map(|&i| train[i].target.clone()).collect::<Vec<_>>())?;

        let (lw, cw) = net.forward(&clean)?;
        let (ll, cl) = net.forward(&noisy)?;
        // detection loss summed per image, averaged over the batch
        let per_image = (target.len() as f64) / b;
        let (det_well, g_well) = bce_with_logits(&lw, &target)?;
        let (det_low, g_low) = bce_with_logits(&ll, &target)?;
        let (det_well, g_well) = (det_well * per_image, g_well.scale(per_image));
        let (det_low, g_low) = (det_low * per_image, g_low.scale(per_image));

        let mut fg_well: [Option<Tensor>; FEATURE_LAYERS] = Default::default();
        let mut fg_low: [Option<Tensor>; FEATURE_LAYERS] = Default::default();
        let (mut ds_v, mut tv_v) = (0.0, 0.0);
        if loss_cfg.beta > 0.0 || loss_cfg.gamma > 0.0 {
            let fw: Vec<Tensor> = selected(&loss_cfg.layers, &cw.features())?.into_iter().cloned().collect();
            let fl: Vec<Tensor> = selected(&loss_cfg.layers, &cl.features())?.into_iter().cloned().collect();
            let ds = loss_ds(&fw, &fl)?;
            let tv = loss_tv(&fl)?;
            // per-pair losses, averaged over the batch
            ds_v = ds.value / b;
            tv_v = tv.value / b;
            for (k, &l) in loss_cfg.layers.iter().enumerate() {
                let mut gl = ds.grad_low[k].scale(loss_cfg.beta / b);
                gl.axpy(loss_cfg.gamma / b, &tv.grads[k])?;
                accumulate(&mut fg_low[l], gl)?;
                if !loss_cfg.detach_well {
                    accumulate(&mut fg_well[l], ds.grad_well[k].scale(loss_cfg.beta / b))?;
                }
            }
        }
        let total = loss_total(det_well, det_low, ds_v, tv_v, &loss_cfg)?;
        if !total.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("loss {total}"),
            });
        }
        last_loss = total;

        let gw = net.backward(&cw, &g_well, [fg_well[0].as_ref(), fg_well[1].as_ref()])?;
        let gl = net.backward(&cl, &g_low.scale(loss_cfg.alpha), [fg_low[0].as_ref(), fg_low[1].as_ref()])?;
        let grads: Vec<Tensor> = gw.iter().zip(&gl).map(|(a, b)| a.add(b)).collect::<Result<_>>()?;
        let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Training {
                step,
                msg: "non-finite gradient".into(),
            });
        }
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        match cfg.optimizer {
            Optimizer::Sgd => {
                for ((_, p), g) in net.params_mut().into_iter().zip(&grads) {
                    p.axpy(-cfg.lr * scale, g)?;
                }
            }
            Optimizer::Adam => adam.step(&mut net, &grads, cfg.lr, scale)?,
        }
    }

    let (feature_distance, det_loss_low, det_loss_well) = evaluate(&net, heldout, &cfg.dsl.layers)?;
    Ok(TrainReport {
        use_dsl,
        steps: cfg.steps,
        feature_distance,
        det_loss_low,
        det_loss_well,
        last_train_loss: last_loss,
        snapshot: net.snapshot(),
    })
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &ToyNet) -> Self {
        let zeros: Vec<Tensor> = net.params().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut ToyNet, grads: &[Tensor], lr: f64, scale: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, (_, p)) in net.params_mut().into_iter().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, (w, g)) in p.data_mut().iter_mut().zip(grads[k].data()).enumerate() {
                let g = g * scale;
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g * g;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(t) => t.axpy(1.0, &g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn bce_matches_definition() {
        let z = Tensor::new([1, 1, 1, 2], vec![0.3, -1.2]).unwrap();
        let t = Tensor::new([1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let (l, _) = bce_with_logits(&z, &t).unwrap();
        let p0 = sigmoid_scalar(0.3);
        let p1 = sigmoid_scalar(-1.2);
        let e = (-(p0.ln()) - (1.0 - p1).ln()) / 2.0;
        assert!((l - e).abs() < 1e-12);
    }

    #[test]
    fn toynet_gradients_match_finite_differences() {
        let net = ToyNet::init(1, 3, 4, Fusion::Additive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // keep stem pre-activations away from the relu kink
        let x = Tensor::randn([1, 1, 8, 8], 1.0, &mut rng);
        let (logits, cache) = net.forward(&x).unwrap();
        let cot = Tensor::randn(logits.shape(), 1.0, &mut rng);
        let grads = net.backward(&cache, &cot, [None, None]).unwrap();
        for (k, name) in net.params().iter().map(|p| p.0).enumerate() {
            let base = net.params()[k].1.clone();
            let op = |t: &Tensor| {
                let mut n2 = net.clone();
                *n2.params_mut()[k].1 = t.clone();
                n2.forward(&x)?.0.mul(&cot)
            };
            let r = grad_check(op, &base, &grads[k], 1e-5, 1e-4).unwrap();
            assert!(r.pass, "{name}: {r:?}");
        }
    }

    #[test]
    fn paired_set_is_deterministic_and_well_formed() {
        let cfg = PairedSetConfig {
            count: 4,
            ..Default::default()
        };
        let a = paired_set(&cfg, 1).unwrap();
        let b = paired_set(&cfg, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.clean, y.clean);
            assert_eq!(x.degraded, y.degraded);
        }
        assert_eq!(a[0].target.shape(), [1, 1, 8, 8]);
        assert!(a.iter().all(|s| s.target.sum() > 0.0));
        assert!(a[0].clean.max_abs_diff(&a[0].degraded).unwrap() > 0.0);
    }

    #[test]
    fn zero_steps_reports_initial_state() {
        let set = paired_set(&PairedSetConfig { count: 6, ..Default::default() }, 3).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let r = toy_train(&set[..4], &set[4..], &cfg, true).unwrap();
        let net = ToyNet::init(1, cfg.channels, cfg.seed, cfg.fusion).unwrap();
        let (d, lo, we) = evaluate(&net, &set[4..], &cfg.dsl.layers).unwrap();
        assert_eq!((r.feature_distance, r.det_loss_low, r.det_loss_well), (d, lo, we));
        assert_eq!(r.snapshot, net.snapshot());
    }

    #[test]
    fn short_runs_are_deterministic() {
        let set = paired_set(&PairedSetConfig { count: 8, ..Default::default() }, 5).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            batch: 2,
            ..Default::default()
        };
        let a = toy_train(&set[..6], &set[6..], &cfg, true).unwrap();
        let b = toy_train(&set[..6], &set[6..], &cfg, true).unwrap();
        assert_eq!(a.to_kv(""), b.to_kv(""));
        assert_eq!(a.snapshot, b.snapshot);
    }
}
