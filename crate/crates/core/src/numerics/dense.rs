use super::Tensor;
use crate::error::{Error, Result};

/// Mean over `H x W`, giving `(N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::dim("global_avg_pool", "H and W must be at least 1"));
    }
    let plane = h * w;
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: [usize; 4]) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    grad_out.expect_shape("global_avg_pool_backward", [n, c, 1, 1])?;
    let inv = 1.0 / (h * w) as f64;
    Ok(Tensor::from_fn(input_shape, |[ni, ci, _, _]| {
        grad_out.at(ni, ci, 0, 0) * inv
    }))
}

/// Affine map on descriptors: `x (N, in, 1, 1)`, `weights (out, in, 1, 1)`,
/// `bias (1, out, 1, 1)` to `(N, out, 1, 1)`.
pub fn fully_connected(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fin, fout) = fc_dims(x, weights, bias)?;
    let xd = x.data();
    let wd = weights.data();
    let bd = bias.data();
    let mut out = Vec::with_capacity(n * fout);
    for ni in 0..n {
        let row = &xd[ni * fin..(ni + 1) * fin];
        for o in 0..fout {
            let wrow = &wd[o * fin..(o + 1) * fin];
            let dot: f64 = row.iter().zip(wrow).map(|(a, b)| a * b).sum();
            out.push(dot + bd[o]);
        }
    }
    Tensor::new([n, fout, 1, 1], out)
}

/// Returns `(grad_x, grad_weights, grad_bias)`.
pub fn fully_connected_backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, fin, fout) = fc_dims(x, weights, bias)?;
    grad_out.expect_shape("fully_connected_backward", [n, fout, 1, 1])?;
    let g = grad_out.data();
    let xd = x.data();
    let wd = weights.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(bias.shape());
    for ni in 0..n {
        for o in 0..fout {
            let go = g[ni * fout + o];
            gb.data_mut()[o] += go;
            for i in 0..fin {
                gx.data_mut()[ni * fin + i] += go * wd[o * fin + i];
                gw.data_mut()[o * fin + i] += go * xd[ni * fin + i];
            }
        }
    }
    Ok((gx, gw, gb))
}

fn fc_dims(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, fin, xh, xw] = x.shape();
    let [fout, win, wh, ww] = weights.shape();
    if xh != 1 || xw != 1 || wh != 1 || ww != 1 {
        return Err(Error::dim(
            "fully_connected",
            format!("expected descriptor shapes, got x {:?} and weights {:?}", x.shape(), weights.shape()),
        ));
    }
    if win != fin {
        return Err(Error::dim(
            "fully_connected",
            format!("inner dims disagree: x has {fin}, weights have {win}"),
        ));
    }
    bias.expect_shape("fully_connected", [1, fout, 1, 1])?;
    Ok((n, fin, fout))
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward through sigmoid given its forward output.
pub fn sigmoid_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    grad_out.zip_map(output, "sigmoid_backward", |g, s| g * s * (1.0 - s))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward through relu given its forward input.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    grad_out.zip_map(input, "relu_backward", |g, x| if x > 0.0 { g } else { 0.0 })
}
