//! Low-light RAW synthesis from clean frames.
//!
//! Two models are provided. `GaussianPoisson` adds heteroscedastic Gaussian
//! noise with variance `a*s + b`. `Physics` composes photon shot noise
//! (Poisson in electrons, scaled by the system gain), Gaussian read noise, a
//! per-row Gaussian offset shared by every pixel of a row, and uniform
//! quantization noise. Both darken the signal by `ratio` first, then re-add
//! the black level, round and clamp to the sensor range.
//!
//! Random streams are keyed on `(seed, frame_index, row)` so rows can be
//! generated in any order or in parallel with identical results.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raw::{max_code, RawFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    GaussianPoisson,
    #[default]
    Physics,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_poisson" => Ok(Self::GaussianPoisson),
            "physics" => Ok(Self::Physics),
            _ => Err(Error::Format(format!(
                "unknown noise kind {s:?} (expected gaussian_poisson or physics)"
            ))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GaussianPoisson => "gaussian_poisson",
            Self::Physics => "physics",
        })
    }
}

/// Noise model parameters; all noise terms are in sensor counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    /// System gain K in counts per electron; 0 disables shot noise.
    pub gain: f64,
    pub sigma_read: f64,
    pub sigma_row: f64,
    pub quant_step: f64,
    pub gp_a: f64,
    pub gp_b: f64,
    /// Darkening factor in (0, 1].
    pub ratio: f64,
}

impl Default for NoiseParams {
    /// Declared assumptions, not calibrated values.
    fn default() -> Self {
        Self {
            kind: NoiseKind::Physics,
            gain: 1.0,
            sigma_read: 2.0,
            sigma_row: 0.5,
            quant_step: 1.0,
            gp_a: 1.0,
            gp_b: 4.0,
            ratio: 0.01,
        }
    }
}

impl NoiseParams {
    /// All noise terms zero, ratio 1.
    pub fn noiseless() -> Self {
        Self {
            kind: NoiseKind::Physics,
            gain: 0.0,
            sigma_read: 0.0,
            sigma_row: 0.0,
            quant_step: 0.0,
            gp_a: 0.0,
            gp_b: 0.0,
            ratio: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("K", self.gain),
            ("sigma_read", self.sigma_read),
            ("sigma_row", self.sigma_row),
            ("quant_step", self.quant_step),
            ("gp_a", self.gp_a),
            ("gp_b", self.gp_b),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("noise.{name} = {v} must be >= 0")));
            }
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::contract(format!(
                "noise.ratio = {} must lie in (0, 1]",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Closed-form per-pixel variance (counts^2) of the model at signal `s`.
pub fn model_variance(s: f64, params: &NoiseParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::contract(format!("model_variance: signal {s} must be >= 0")));
    }
    Ok(match params.kind {
        NoiseKind::Physics => {
            params.gain * s
                + params.sigma_read.powi(2)
                + params.sigma_row.powi(2)
                + params.quant_step.powi(2) / 12.0
        }
        NoiseKind::GaussianPoisson => params.gp_a * s + params.gp_b,
    })
}

const INVERSION_MAX_MEAN: f64 = 12.0;
const NORMAL_APPROX_MIN_MEAN: f64 = 1000.0;

/// Poisson draw: sequential inversion for small means, the exact `rand_distr`
/// sampler in the middle range, normal approximation above 1000.
pub fn sample_poisson(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < INVERSION_MAX_MEAN {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && p > 0.0 {
            k += 1.0;
            p *= mean / k;
            cdf += p;
        }
        k
    } else if mean <= NORMAL_APPROX_MIN_MEAN {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one `(seed, frame, row)` triple.
pub fn row_rng(seed: u64, frame: u64, row: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ frame) ^ row.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    ChaCha8Rng::seed_from_u64(key)
}

/// Darken and add sensor noise to a clean frame. Deterministic per
/// `(clean, params, seed)`; the frame index selects the random stream.
pub fn synthesize(clean: &RawFrame, params: &NoiseParams, seed: u64) -> Result<RawFrame> {
    params.validate()?;
    let w = clean.width();
    let black = clean.black_level() as f64;
    let max = max_code(clean.bit_depth()) as f64;
    let frame = clean.frame_index.unwrap_or(0);
    let mut out = vec![0u16; clean.data().len()];
    out.par_chunks_mut(w)
        .zip(clean.data().par_chunks(w))
        .enumerate()
        .for_each(|(row, (dst, src))| {
            let mut rng = row_rng(seed, frame, row as u64);
            let row_offset = if params.kind == NoiseKind::Physics && params.sigma_row > 0.0 {
                params.sigma_row * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            for (d, &v) in dst.iter_mut().zip(src) {
                let s = (v as f64 - black) * params.ratio;
                let noisy = match params.kind {
                    NoiseKind::Physics => physics_sample(s, row_offset, params, &mut rng),
                    NoiseKind::GaussianPoisson => {
                        let var = params.gp_a * s.max(0.0) + params.gp_b;
                        if var > 0.0 {
                            s + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                        } else {
                            s
                        }
                    }
                };
                *d = (black + noisy).round().clamp(0.0, max) as u16;
            }
        });
    clean.with_data(out)
}

fn physics_sample(s: f64, row_offset: f64, p: &NoiseParams, rng: &mut ChaCha8Rng) -> f64 {
    let mut x = s;
    if p.gain > 0.0 && s > 0.0 {
        x = sample_poisson(s / p.gain, rng) * p.gain;
    }
    if p.sigma_read > 0.0 {
        x += p.sigma_read * rng.sample::<f64, _>(StandardNormal);
    }
    x += row_offset;
    if p.quant_step > 0.0 {
        x += p.quant_step * (rng.random::<f64>() - 0.5);
    }
    x
}

/// Ranges and pinned constants for random parameter sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSampling {
    pub kind: NoiseKind,
    pub gain_range: (f64, f64),
    pub ratio_range: (f64, f64),
    /// `ln(sigma_read) = read_slope * ln(K) + read_intercept + read_jitter * N(0, 1)`
    pub read_slope: f64,
    pub read_intercept: f64,
    pub read_jitter: f64,
    /// `sigma_row = row_fraction * sigma_read`
    pub row_fraction: f64,
    pub quant_step: f64,
}

impl Default for ParamSampling {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Physics,
            gain_range: (0.5, 4.0),
            ratio_range: (1.0 / 200.0, 1.0 / 50.0),
            read_slope: 0.85,
            read_intercept: 0.6,
            read_jitter: 0.2,
            row_fraction: 0.25,
            quant_step: 1.0,
        }
    }
}

fn log_uniform(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    if range.0 == range.1 {
        return range.0;
    }
    let (lo, hi) = (range.0.ln(), range.1.ln());
    (lo + (hi - lo) * rng.random::<f64>()).exp()
}

/// Draw a parameter set for augmentation; deterministic per seed.
pub fn sample_params(seed: u64, cfg: &ParamSampling) -> Result<NoiseParams> {
    for (name, (lo, hi)) in [("gain_range", cfg.gain_range), ("ratio_range", cfg.ratio_range)] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::contract(format!(
                "sample_params: {name} ({lo}, {hi}) must be positive and ordered"
            )));
        }
    }
    if cfg.ratio_range.1 > 1.0 {
        return Err(Error::contract("sample_params: ratio_range must stay within (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = log_uniform(cfg.gain_range, &mut rng);
    let jitter: f64 = rng.sample(StandardNormal);
    let sigma_read = (cfg.read_slope * gain.ln() + cfg.read_intercept + cfg.read_jitter * jitter).exp();
    let ratio = log_uniform(cfg.ratio_range, &mut rng);
    Ok(NoiseParams {
        kind: cfg.kind,
        gain,
        sigma_read,
        sigma_row: cfg.row_fraction * sigma_read,
        quant_step: cfg.quant_step,
        gp_a: gain,
        gp_b: sigma_read * sigma_read,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::BayerPattern;

    #[test]
    fn variance_formula() {
        let zero = NoiseParams::noiseless();
        assert_eq!(model_variance(0.0, &zero).unwrap(), 0.0);
        let gp = NoiseParams {
            kind: NoiseKind::GaussianPoisson,
            gp_a: 0.01,
            gp_b: 0.04,
            ..zero
        };
        assert!((model_variance(100.0, &gp).unwrap() - 1.04).abs() < 1e-12);
        let ph = NoiseParams {
            gain: 1.0,
            sigma_read: 1.0,
            ..zero
        };
        assert_eq!(model_variance(100.0, &ph).unwrap(), 101.0);
        assert!(model_variance(-1.0, &ph).is_err());
    }

    #[test]
    fn noiseless_identity_and_darkening() {
        let data: Vec<u16> = (0..64).map(|i| 240 + i * 50).collect();
        let clean = RawFrame::new(8, 8, 12, BayerPattern::Rggb, 240, 4095, data).unwrap();
        let p = NoiseParams::noiseless();
        assert_eq!(synthesize(&clean, &p, 1).unwrap(), clean);
        let dark = synthesize(&clean, &NoiseParams { ratio: 0.01, ..p }, 1).unwrap();
        for (o, i) in dark.data().iter().zip(clean.data()) {
            let e = 240.0 + (0.01 * (*i as f64 - 240.0)).round();
            assert_eq!(*o as f64, e);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let clean = RawFrame::constant(16, 8, 1240).unwrap();
        let p = NoiseParams::default();
        let a = synthesize(&clean, &p, 5).unwrap();
        assert_eq!(a, synthesize(&clean, &p, 5).unwrap());
        assert_ne!(a, synthesize(&clean, &p, 6).unwrap());
    }

    #[test]
    fn clamps_to_sensor_range() {
        let clean = RawFrame::constant(8, 8, 4095).unwrap();
        let p = NoiseParams {
            ratio: 1.0,
            sigma_read: 500.0,
            ..NoiseParams::default()
        };
        let out = synthesize(&clean, &p, 3).unwrap();
        assert!(out.data().iter().all(|&v| v <= 4095));
        assert!(synthesize(&clean, &NoiseParams { ratio: 0.0, ..p }, 3).is_err());
        assert!(synthesize(&clean, &NoiseParams { gain: -1.0, ..p }, 3).is_err());
    }

    #[test]
    fn row_noise_is_shared_within_a_row() {
        let clean = RawFrame::constant(64, 32, 1240).unwrap();
        let p = NoiseParams {
            gain: 0.0,
            sigma_read: 0.0,
            sigma_row: 20.0,
            quant_step: 0.0,
            ratio: 1.0,
            ..NoiseParams::default()
        };
        let out = synthesize(&clean, &p, 9).unwrap();
        for row in out.data().chunks(64) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
        let firsts: Vec<u16> = out.data().chunks(64).map(|r| r[0]).collect();
        assert!(firsts.iter().any(|&v| v != firsts[0]));
    }

    #[test]
    fn poisson_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mean in [0.5, 5.0, 40.0, 2500.0] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(mean, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - mean).abs() < 4.0 * (mean / n as f64).sqrt(), "mean {mean}: {m}");
            assert!((v / mean - 1.0).abs() < 0.03, "mean {mean}: var {v}");
        }
    }

    #[test]
    fn sample_params_rules() {
        let cfg = ParamSampling::default();
        assert_eq!(sample_params(3, &cfg).unwrap(), sample_params(3, &cfg).unwrap());
        let fixed = ParamSampling {
            gain_range: (1.7, 1.7),
            ratio_range: (0.01, 0.01),
            ..cfg.clone()
        };
        let p = sample_params(11, &fixed).unwrap();
        assert_eq!(p.gain, 1.7);
        assert_eq!(p.ratio, 0.01);
        let inverted = ParamSampling {
            gain_range: (2.0, 1.0),
            ..cfg
        };
        assert!(sample_params(1, &inverted).is_err());
    }
}
