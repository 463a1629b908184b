use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Mirror without repeating the edge sample (`-1 -> 1`).
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize, padding: Padding, groups: usize) -> Self {
        Self {
            stride,
            pad,
            padding,
            groups,
        }
    }
}

/// Map a padded coordinate back into `0..n`, or `None` for zero padding.
#[inline]
pub(crate) fn source_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n as isize - 1);
            let m = i.rem_euclid(period);
            Some(if m >= n as isize { period - m } else { m } as usize)
        }
    }
}

struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

fn geometry(input: &Tensor, kernel: &Tensor, spec: &Conv2dSpec) -> Result<Geometry> {
    let [n, c_in, h, w] = input.shape();
    let [c_out, cin_g, kh, kw] = kernel.shape();
    if spec.stride == 0 {
        return Err(Error::dim("conv2d", "stride must be positive"));
    }
    if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::dim(
            "conv2d",
            format!(
                "groups {} incompatible with C_in {c_in} / C_out {c_out}",
                spec.groups
            ),
        ));
    }
    if cin_g * spec.groups != c_in {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel axis 1 is {cin_g}, expected C_in/groups = {}",
                c_in / spec.groups
            ),
        ));
    }
    if h + 2 * spec.pad < kh || w + 2 * spec.pad < kw || kh == 0 || kw == 0 {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {})", spec.pad),
        ));
    }
    let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
    let ow = (w + 2 * spec.pad - kw) / spec.stride + 1;
    let table = |out: usize, k: usize, len: usize| {
        let mut t = Vec::with_capacity(out * k);
        for o in 0..out {
            for tap in 0..k {
                let i = (o * spec.stride + tap) as isize - spec.pad as isize;
                t.push(source_index(i, len, spec.padding));
            }
        }
        t
    };
    Ok(Geometry {
        n,
        c_in,
        c_out,
        cin_g,
        cout_g: c_out / spec.groups,
        kh,
        kw,
        oh,
        ow,
        rows: table(oh, kh, h),
        cols: table(ow, kw, w),
    })
}

/// 2-D cross-correlation with optional grouping.
pub fn conv2d(input: &Tensor, kernel: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let g = geometry(input, kernel, spec)?;
    let mut out = Tensor::zeros([g.n, g.c_out, g.oh, g.ow]);
    let x = input.data();
    let k = kernel.data();
    let [_, _, h, w] = input.shape();
    let o = out.data_mut();
    let mut idx = 0;
    for n in 0..g.n {
        for co in 0..g.c_out {
            let group = co / g.cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for cl in 0..g.cin_g {
                        let ci = group * g.cin_g + cl;
                        let plane = (n * g.c_in + ci) * h * w;
                        let kbase = (co * g.cin_g + cl) * g.kh * g.kw;
                        for ky in 0..g.kh {
                            let Some(iy) = g.rows[oy * g.kh + ky] else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.cols[ox * g.kw + kx] else {
                                    continue;
                                };
                                acc += x[plane + iy * w + ix] * k[kbase + ky * g.kw + kx];
                            }
                        }
                    }
                    o[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` with respect to its input and kernel.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    spec: &Conv2dSpec,
) -> Result<(Tensor, Tensor)> {
    let g = geometry(input, kernel, spec)?;
    grad_out.expect_shape("conv2d_backward", [g.n, g.c_out, g.oh, g.ow])?;
    let [_, _, h, w] = input.shape();
    let mut gi = Tensor::zeros(input.shape());
    let mut gk = Tensor::zeros(kernel.shape());
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let gi_d = gi.data_mut();
    let gk_d = gk.data_mut();
    let mut idx = 0;
    for n in 0..g.n {
        for co in 0..g.c_out {
            let group = co / g.cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let gval = go[idx];
                    idx += 1;
                    if gval == 0.0 {
                        continue;
                    }
                    for cl in 0..g.cin_g {
                        let ci = group * g.cin_g + cl;
                        let plane = (n * g.c_in + ci) * h * w;
                        let kbase = (co * g.cin_g + cl) * g.kh * g.kw;
                        for ky in 0..g.kh {
                            let Some(iy) = g.rows[oy * g.kh + ky] else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.cols[ox * g.kw + kx] else {
                                    continue;
                                };
                                let xi = plane + iy * w + ix;
                                let ki = kbase + ky * g.kw + kx;
                                gi_d[xi] += gval * k[ki];
                                gk_d[ki] += gval * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gi, gk))
}
