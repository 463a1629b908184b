use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense 4-D array in row-major `(N, C, H, W)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f([ni, ci, hi, wi]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Standard-normal entries scaled by `scale`.
    pub fn randn(shape: [usize; 4], scale: f64, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        let i = self.offset(n, c, h, w);
        &mut self.data[i]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(op, other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        self.expect_shape("axpy", other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: [usize; 4]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(
                op,
                format!("expected shape {shape:?}, got {:?}", self.shape),
            ));
        }
        Ok(())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_channels", "no inputs"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            let [pn, _, ph, pw] = p.shape;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(
                    "concat_channels",
                    format!("axes (N,H,W) differ: {:?} vs {:?}", first.shape, p.shape),
                ));
            }
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for ni in 0..n {
            for p in parts {
                let cs = p.shape[1] * plane;
                data.extend_from_slice(&p.data[ni * cs..(ni + 1) * cs]);
            }
        }
        Ok(Self {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Split along the channel axis at `at`.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let [n, c, h, w] = self.shape;
        if at > c {
            return Err(Error::dim(
                "split_channels",
                format!("split point {at} beyond {c} channels"),
            ));
        }
        let plane = h * w;
        let mut a = Vec::with_capacity(n * at * plane);
        let mut b = Vec::with_capacity(n * (c - at) * plane);
        for ni in 0..n {
            let base = ni * c * plane;
            a.extend_from_slice(&self.data[base..base + at * plane]);
            b.extend_from_slice(&self.data[base + at * plane..base + c * plane]);
        }
        Ok((
            Self {
                shape: [n, at, h, w],
                data: a,
            },
            Self {
                shape: [n, c - at, h, w],
                data: b,
            },
        ))
    }

    /// Copy of one batch item as a `(1, C, H, W)` tensor.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let [bn, c, h, w] = self.shape;
        if n >= bn {
            return Err(Error::dim("sample", format!("index {n} out of batch {bn}")));
        }
        let len = c * h * w;
        Ok(Self {
            shape: [1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        })
    }

    /// Stack `(1, C, H, W)` tensors into a batch.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("stack", "no inputs"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            t.expect_shape("stack", [1, c, h, w])?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [items.len(), c, h, w],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_fn([2, 1, 2, 2], |[n, _, h, w]| (n * 10 + h * 2 + w) as f64);
        let b = Tensor::from_fn([2, 3, 2, 2], |[n, c, h, w]| -((n * 100 + c * 10 + h * 2 + w) as f64));
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 4, 2, 2]);
        assert_eq!(cat.at(1, 0, 1, 1), a.at(1, 0, 1, 1));
        assert_eq!(cat.at(1, 2, 0, 1), b.at(1, 1, 0, 1));
        let (a2, b2) = cat.split_channels(1).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
