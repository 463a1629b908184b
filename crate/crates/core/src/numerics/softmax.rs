use super::Tensor;
use crate::error::{Error, Result};

/// Unnormalized convolution kernel `(C_out, C_in/groups, k, k)`.
///
/// The normalized kernel is a per-filter softmax, which makes every filter
/// non-negative with unit sum: a low-pass filter with DC gain one.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLogits {
    logits: Tensor,
    groups: usize,
}

impl KernelLogits {
    pub fn new(logits: Tensor, groups: usize) -> Result<Self> {
        let [_, _, kh, kw] = logits.shape();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(
                "kernel_logits",
                format!("kernel must be square with odd size, got {kh}x{kw}"),
            ));
        }
        if groups == 0 {
            return Err(Error::contract("kernel_logits: groups must be positive"));
        }
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                op: "kernel_logits",
                location: "logits".into(),
            });
        }
        Ok(Self { logits, groups })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.logits
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.logits
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn kernel_size(&self) -> usize {
        self.logits.shape()[2]
    }
}

/// Per-filter softmax over the `C_in/groups x k x k` support.
pub fn softmax_normalize(logits: &KernelLogits) -> Tensor {
    let t = logits.tensor();
    let [c_out, cig, kh, kw] = t.shape();
    let support = cig * kh * kw;
    let mut out = t.clone();
    for filt in out.data_mut().chunks_mut(support).take(c_out) {
        let m = filt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in filt.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in filt.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Softmax Jacobian-vector product: `p * (g - <p, g>)` per filter.
pub fn softmax_normalize_backward(grad_out: &Tensor, normalized: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("softmax_normalize_backward", normalized.shape())?;
    let [_, cig, kh, kw] = normalized.shape();
    let support = cig * kh * kw;
    let mut out = Tensor::zeros(normalized.shape());
    for ((o, g), p) in out
        .data_mut()
        .chunks_mut(support)
        .zip(grad_out.data().chunks(support))
        .zip(normalized.data().chunks(support))
    {
        let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        for ((oi, gi), pi) in o.iter_mut().zip(g).zip(p) {
            *oi = pi * (gi - dot);
        }
    }
    Ok(out)
}
