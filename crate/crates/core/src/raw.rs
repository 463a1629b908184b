//! Bayer RAW frames: container I/O, normalization, bit-depth requantization,
//! bilinear demosaicing, a minimal ISP, and exposure scaling.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{source_index, Padding, Tensor};

pub const DEFAULT_BLACK_LEVEL_12BIT: u16 = 240;
pub const DEFAULT_WHITE_LEVEL_12BIT: u16 = 4095;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

/// Colour channel index: 0 = R, 1 = G, 2 = B.
pub type Channel = usize;

impl BayerPattern {
    /// Colour of the sensor site at `(row, col)`.
    pub fn channel_at(self, row: usize, col: usize) -> Channel {
        let cell = [
            [[0, 1], [1, 2]], // RGGB
            [[2, 1], [1, 0]], // BGGR
            [[1, 0], [2, 1]], // GRBG
            [[1, 2], [0, 1]], // GBRG
        ];
        let p = match self {
            BayerPattern::Rggb => 0,
            BayerPattern::Bggr => 1,
            BayerPattern::Grbg => 2,
            BayerPattern::Gbrg => 3,
        };
        cell[p][row % 2][col % 2]
    }
}

impl FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "BGGR" => Ok(Self::Bggr),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            _ => Err(Error::Format(format!("unknown bayer pattern {s:?}"))),
        }
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        };
        f.write_str(s)
    }
}

/// Sidecar header stored next to each `.raw16` blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub bayer_pattern: BayerPattern,
    #[serde(default)]
    pub black_level: Option<u16>,
    #[serde(default)]
    pub white_level: Option<u16>,
    #[serde(default)]
    pub frame_index: Option<u64>,
    #[serde(default)]
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    width: usize,
    height: usize,
    bit_depth: u8,
    pattern: BayerPattern,
    black_level: u16,
    white_level: u16,
    data: Vec<u16>,
    pub frame_index: Option<u64>,
    pub timestamp: Option<f64>,
}

pub fn max_code(bit_depth: u8) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

impl RawFrame {
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: u8,
        pattern: BayerPattern,
        black_level: u16,
        white_level: u16,
        data: Vec<u16>,
    ) -> Result<Self> {
        if !matches!(bit_depth, 8 | 10 | 12) {
            return Err(Error::Format(format!("unsupported bit depth {bit_depth}")));
        }
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Format(format!(
                "frame dimensions {width}x{height} must be positive and even"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Format(format!(
                "{width}x{height} frame needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        let max = max_code(bit_depth);
        if !(black_level < white_level && white_level <= max) {
            return Err(Error::Format(format!(
                "levels black {black_level} / white {white_level} invalid for {bit_depth}-bit"
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > max) {
            return Err(Error::Format(format!(
                "sample {} at index {i} exceeds {bit_depth}-bit range",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            pattern,
            black_level,
            white_level,
            data,
            frame_index: None,
            timestamp: None,
        })
    }

    /// Frame filled with one value, 12-bit RGGB with default levels.
    pub fn constant(width: usize, height: usize, value: u16) -> Result<Self> {
        Self::new(
            width,
            height,
            12,
            BayerPattern::Rggb,
            DEFAULT_BLACK_LEVEL_12BIT,
            DEFAULT_WHITE_LEVEL_12BIT,
            vec![value; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn black_level(&self) -> u16 {
        self.black_level
    }

    pub fn white_level(&self) -> u16 {
        self.white_level
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Same geometry and levels with new sample values.
    pub fn with_data(&self, data: Vec<u16>) -> Result<Self> {
        let mut f = Self::new(
            self.width,
            self.height,
            self.bit_depth,
            self.pattern,
            self.black_level,
            self.white_level,
            data,
        )?;
        f.frame_index = self.frame_index;
        f.timestamp = self.timestamp;
        Ok(f)
    }

    pub fn header(&self) -> RawHeader {
        RawHeader {
            width: self.width,
            height: self.height,
            bit_depth: self.bit_depth,
            bayer_pattern: self.pattern,
            black_level: Some(self.black_level),
            white_level: Some(self.white_level),
            frame_index: self.frame_index,
            timestamp: self.timestamp,
        }
    }

    /// Sample value scaled to `[0, 1]` between black and white level.
    #[inline]
    pub fn normalized_at(&self, row: usize, col: usize) -> f64 {
        let v = self.get(row, col) as f64;
        let b = self.black_level as f64;
        ((v - b) / (self.white_level as f64 - b)).clamp(0.0, 1.0)
    }
}

/// Path of the JSON sidecar for a `.raw16` file.
pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

pub fn read_raw(path: &Path) -> Result<RawFrame> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: RawHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::Format(format!("{}: odd byte count", path.display())));
    }
    let data = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let (black, white) = default_levels(header.bit_depth);
    let mut frame = RawFrame::new(
        header.width,
        header.height,
        header.bit_depth,
        header.bayer_pattern,
        header.black_level.unwrap_or(black),
        header.white_level.unwrap_or(white),
        data,
    )
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    frame.frame_index = header.frame_index;
    frame.timestamp = header.timestamp;
    Ok(frame)
}

pub fn write_raw(path: &Path, frame: &RawFrame) -> Result<()> {
    let mut bytes = Vec::with_capacity(frame.data.len() * 2);
    for v in &frame.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&frame.header())
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Default levels for a bit depth: the 12-bit defaults shifted down.
pub fn default_levels(bit_depth: u8) -> (u16, u16) {
    let shift = 12u8.saturating_sub(bit_depth);
    (DEFAULT_BLACK_LEVEL_12BIT >> shift, DEFAULT_WHITE_LEVEL_12BIT >> shift)
}

/// `(v - black) / (white - black)` clamped to `[0, 1]`, as a `(1, 1, H, W)` tensor.
pub fn normalize(raw: &RawFrame) -> Tensor {
    Tensor::from_fn([1, 1, raw.height, raw.width], |[_, _, r, c]| raw.normalized_at(r, c))
}

/// Drop the low `source - target` bits (floor), levels included.
pub fn requantize(raw: &RawFrame, target_bit_depth: u8) -> Result<RawFrame> {
    if target_bit_depth > raw.bit_depth {
        return Err(Error::contract(format!(
            "requantize: cannot raise {}-bit data to {target_bit_depth}-bit",
            raw.bit_depth
        )));
    }
    let shift = raw.bit_depth - target_bit_depth;
    let mut f = RawFrame::new(
        raw.width,
        raw.height,
        target_bit_depth,
        raw.pattern,
        raw.black_level >> shift,
        raw.white_level >> shift,
        raw.data.iter().map(|v| v >> shift).collect(),
    )?;
    f.frame_index = raw.frame_index;
    f.timestamp = raw.timestamp;
    Ok(f)
}

/// Interleaved RGB in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit PNG, for inspection only.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Format("png buffer size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

const BILINEAR_WEIGHTS: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];

/// Bilinear demosaic of the normalized mosaic. Sites keep their own sample;
/// missing colours are the weighted mean of same-colour sites in the 3x3
/// neighbourhood, with reflected borders.
pub fn demosaic_bilinear(raw: &RawFrame) -> Result<RgbImage> {
    let (w, h) = (raw.width, raw.height);
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Format(format!("demosaic needs even dimensions, got {w}x{h}")));
    }
    let mut data = vec![0.0; w * h * 3];
    for r in 0..h {
        for c in 0..w {
            let own = raw.pattern.channel_at(r, c);
            let mut acc = [0.0f64; 3];
            let mut wsum = [0.0f64; 3];
            for dy in 0..3 {
                let rr = source_index(r as isize + dy as isize - 1, h, Padding::Reflect).unwrap();
                for dx in 0..3 {
                    let cc =
                        source_index(c as isize + dx as isize - 1, w, Padding::Reflect).unwrap();
                    let ch = raw.pattern.channel_at(rr, cc);
                    let wt = BILINEAR_WEIGHTS[dy][dx];
                    acc[ch] += wt * raw.normalized_at(rr, cc);
                    wsum[ch] += wt;
                }
            }
            let out = &mut data[(r * w + c) * 3..(r * w + c) * 3 + 3];
            for ch in 0..3 {
                out[ch] = if ch == own {
                    raw.normalized_at(r, c)
                } else {
                    acc[ch] / wsum[ch]
                };
            }
        }
    }
    RgbImage::new(w, h, data)
}

/// normalize, demosaic, per-channel gain, clamp, then `x^(1/gamma)`.
pub fn simple_isp(raw: &RawFrame, wb_gains: [f64; 3], gamma: f64) -> Result<RgbImage> {
    if wb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::contract(format!("isp: gains {wb_gains:?} must be positive")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::contract(format!("isp: gamma {gamma} must be positive")));
    }
    let rgb = demosaic_bilinear(raw)?;
    let inv = 1.0 / gamma;
    let data = rgb
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| (v * wb_gains[i % 3]).clamp(0.0, 1.0).powf(inv))
        .collect();
    RgbImage::new(rgb.width, rgb.height, data)
}

/// Multiply by `ratio`, then clamp to `[0, 1]`.
pub trait ExposureScale: Sized {
    fn exposure_scale(&self, ratio: f64) -> Result<Self>;
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::contract(format!("exposure ratio {ratio} must be positive")));
    }
    Ok(())
}

impl ExposureScale for Tensor {
    fn exposure_scale(&self, ratio: f64) -> Result<Self> {
        check_ratio(ratio)?;
        Ok(self.map(|v| (v * ratio).clamp(0.0, 1.0)))
    }
}

impl ExposureScale for RgbImage {
    fn exposure_scale(&self, ratio: f64) -> Result<Self> {
        check_ratio(ratio)?;
        RgbImage::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v * ratio).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame12(w: usize, h: usize, data: Vec<u16>) -> RawFrame {
        RawFrame::new(w, h, 12, BayerPattern::Rggb, 240, 4095, data).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let f = frame12(2, 2, vec![4095, 240, 2167, 0]);
        let t = normalize(&f);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
        assert!((t.data()[2] - 1927.0 / 3855.0).abs() < 1e-15);
        assert!((t.data()[2] - 0.49987).abs() < 1e-5);
        assert_eq!(t.data()[3], 0.0);
    }

    #[test]
    fn invariants_enforced() {
        assert!(RawFrame::new(3, 2, 12, BayerPattern::Rggb, 240, 4095, vec![0; 6]).is_err());
        assert!(RawFrame::new(2, 2, 12, BayerPattern::Rggb, 240, 4095, vec![4096; 4]).is_err());
        assert!(RawFrame::new(2, 2, 10, BayerPattern::Rggb, 240, 4095, vec![0; 4]).is_err());
        assert!(RawFrame::new(2, 2, 12, BayerPattern::Rggb, 500, 400, vec![0; 4]).is_err());
        assert!(RawFrame::new(2, 2, 14, BayerPattern::Rggb, 0, 100, vec![0; 4]).is_err());
    }

    #[test]
    fn requantize_examples() {
        let f = frame12(2, 2, vec![4095, 1000, 0, 240]);
        let q8 = requantize(&f, 8).unwrap();
        assert_eq!(q8.get(0, 0), 255);
        let q10 = requantize(&f, 10).unwrap();
        assert_eq!(q10.get(0, 1), 250);
        assert_eq!((q10.black_level(), q10.white_level()), (60, 1023));
        assert_eq!(requantize(&f, 12).unwrap(), f);
        assert!(requantize(&q10, 12).is_err());
    }

    #[test]
    fn demosaic_constant_and_site_identity() {
        for pattern in [BayerPattern::Rggb, BayerPattern::Bggr, BayerPattern::Grbg, BayerPattern::Gbrg] {
            let f = RawFrame::new(6, 4, 12, pattern, 240, 4095, vec![1204; 24]).unwrap();
            let v = f.normalized_at(0, 0);
            let rgb = demosaic_bilinear(&f).unwrap();
            assert!(rgb.data().iter().all(|&x| (x - v).abs() < 1e-15));
        }
        let data = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 4095 } else { 240 })
            .collect();
        let red = frame12(4, 4, data);
        let rgb = demosaic_bilinear(&red).unwrap();
        for r in (0..4).step_by(2) {
            for c in (0..4).step_by(2) {
                assert_eq!(rgb.pixel(r, c), [1.0, 0.0, 0.0]);
            }
        }
    }

    /// Per-pixel reference using the textbook neighbour cases.
    fn naive_demosaic(f: &RawFrame) -> Vec<f64> {
        let (w, h) = (f.width() as isize, f.height() as isize);
        let refl = |i: isize, n: isize| if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        let v = |r: isize, c: isize| f.normalized_at(refl(r, h) as usize, refl(c, w) as usize);
        let col = |r: isize, c: isize| f.pattern().channel_at(refl(r, h) as usize, refl(c, w) as usize);
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let own = col(r, c);
                for ch in 0..3 {
                    let x = if ch == own {
                        v(r, c)
                    } else if col(r, c - 1) == ch && col(r, c + 1) == ch && col(r - 1, c) == ch {
                        (v(r, c - 1) + v(r, c + 1) + v(r - 1, c) + v(r + 1, c)) / 4.0
                    } else if col(r, c - 1) == ch {
                        (v(r, c - 1) + v(r, c + 1)) / 2.0
                    } else if col(r - 1, c) == ch {
                        (v(r - 1, c) + v(r + 1, c)) / 2.0
                    } else {
                        (v(r - 1, c - 1) + v(r - 1, c + 1) + v(r + 1, c - 1) + v(r + 1, c + 1)) / 4.0
                    };
                    out.push(x);
                }
            }
        }
        out
    }

    #[test]
    fn demosaic_matches_naive_reference() {
        let data: Vec<u16> = (0..8 * 6).map(|i| ((i * 977 + (i / 8) * 131) % 3800 + 240) as u16).collect();
        for pattern in [BayerPattern::Rggb, BayerPattern::Gbrg] {
            let f = RawFrame::new(8, 6, 12, pattern, 240, 4095, data.clone()).unwrap();
            let got = demosaic_bilinear(&f).unwrap();
            for (a, b) in got.data().iter().zip(naive_demosaic(&f)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isp_examples() {
        let f = frame12(4, 4, (0..16).map(|i| (240 + i * 200) as u16).collect());
        assert_eq!(simple_isp(&f, [1.0; 3], 1.0).unwrap(), demosaic_bilinear(&f).unwrap());
        let sat = frame12(2, 2, vec![4095; 4]);
        assert!(simple_isp(&sat, [2.0; 3], 1.0).unwrap().data().iter().all(|&v| v == 1.0));
        // 0.25 gray: (v - 240) / 3855 = 0.25
        let gray = RawFrame::new(2, 2, 12, BayerPattern::Rggb, 0, 4000, vec![1000; 4]).unwrap();
        let out = simple_isp(&gray, [1.0; 3], 2.2).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.25f64.powf(1.0 / 2.2)).abs() < 1e-12));
        assert!((out.data()[0] - 0.5326).abs() < 1e-4);
        assert!(simple_isp(&gray, [0.0, 1.0, 1.0], 1.0).is_err());
        assert!(simple_isp(&gray, [1.0; 3], 0.0).is_err());
    }

    #[test]
    fn exposure_examples() {
        let t = Tensor::new([1, 1, 1, 3], vec![0.004, 0.02, 0.3]).unwrap();
        assert_eq!(t.exposure_scale(1.0).unwrap(), t);
        let s = t.exposure_scale(100.0).unwrap();
        assert!((s.data()[0] - 0.4).abs() < 1e-15);
        assert_eq!(s.data()[1], 1.0);
        assert!(t.exposure_scale(0.0).is_err());
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = frame12(4, 2, vec![0, 1, 2, 3, 4095, 240, 7, 9]);
        f.frame_index = Some(3);
        f.timestamp = Some(0.15);
        let p = dir.path().join("000003.raw16");
        write_raw(&p, &f).unwrap();
        assert_eq!(read_raw(&p).unwrap(), f);
    }

    #[test]
    fn missing_levels_fall_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.raw16");
        std::fs::write(&p, [0u8; 8]).unwrap();
        std::fs::write(
            sidecar_path(&p),
            r#"{"width":2,"height":2,"bit_depth":10,"bayer_pattern":"BGGR"}"#,
        )
        .unwrap();
        let f = read_raw(&p).unwrap();
        assert_eq!((f.black_level(), f.white_level()), (60, 1023));
        assert_eq!(f.pattern(), BayerPattern::Bggr);
    }

    proptest! {
        #[test]
        fn requantize_commutes_with_normalize(v in 0u16..=4095, target in prop::sample::select(vec![8u8, 10])) {
            let f = frame12(2, 2, vec![v; 4]);
            let q = requantize(&f, target).unwrap();
            let lsb = 1.0 / (q.white_level() - q.black_level()) as f64;
            let diff = (normalize(&q).data()[0] - normalize(&f).data()[0]).abs();
            prop_assert!(diff <= lsb + 1e-12, "diff {} lsb {}", diff, lsb);
        }

        #[test]
        fn outputs_in_unit_range(data in proptest::collection::vec(0u16..=4095, 16), gain in 0.1f64..4.0, gamma in 0.3f64..3.0) {
            let f = frame12(4, 4, data);
            let out = simple_isp(&f, [gain, 1.0, 1.0 / gain], gamma).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
