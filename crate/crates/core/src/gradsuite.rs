//! Finite-difference sweep over every hand-written backward pass.
//!
//! Each case draws a random shape and input, contracts the op output with a
//! random cotangent, and compares the analytic gradient against central
//! differences of that scalar.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ald::{AldBlock, Fusion};
use crate::dsl::{loss_ds, loss_tv};
use crate::error::Result;
use crate::numerics::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward, grad_check, relu, relu_backward, sigmoid, sigmoid_backward,
    softmax_normalize, softmax_normalize_backward, Conv2dSpec, GradReport, KernelLogits, Padding,
    Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seeds: usize,
    pub eps: f64,
    pub tol: f64,
    /// Doubles the analytic conv2d kernel gradient; the suite must then fail.
    pub mutate: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            eps: 1e-5,
            tol: 1e-4,
            mutate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Shape description of the worst case.
    pub worst_case: String,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub ops: Vec<OpReport>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.ops.iter().all(|o| o.pass)
    }
}

struct Collector {
    ops: Vec<OpReport>,
    tol: f64,
}

impl Collector {
    fn record(&mut self, op: &str, case: String, r: GradReport) {
        let entry = match self.ops.iter_mut().position(|o| o.op == op) {
            Some(i) => &mut self.ops[i],
            None => {
                self.ops.push(OpReport {
                    op: op.to_string(),
                    cases: 0,
                    max_rel_err: 0.0,
                    worst_case: String::new(),
                    pass: true,
                });
                self.ops.last_mut().unwrap()
            }
        };
        entry.cases += 1;
        if r.max_rel_err >= entry.max_rel_err {
            entry.max_rel_err = r.max_rel_err;
            entry.worst_case = case;
        }
        entry.pass = entry.max_rel_err < self.tol;
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(3..=8),
        rng.random_range(3..=8),
    )
}

/// Inputs bounded away from zero so the relu kink is never straddled.
fn off_kink(t: &Tensor, margin: f64) -> Tensor {
    t.map(|v| match v {
        v if v.abs() >= margin => v,
        v if v < 0.0 => v - margin,
        v => v + margin,
    })
}

pub fn run(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut col = Collector {
        ops: Vec::new(),
        tol: cfg.tol,
    };
    let (eps, tol) = (cfg.eps, cfg.tol);
    for seed in 0..cfg.seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6EAD_0000 + seed);

        // conv2d
        let (n, c, h, w) = dims(&mut rng);
        let groups = if c > 1 && rng.random_bool(0.5) { c } else { 1 };
        let c_out = groups * rng.random_range(1..=2);
        let k = if rng.random_bool(0.5) { 3 } else { 1 + 2 * rng.random_range(0..=2usize) };
        let padding = if rng.random_bool(0.5) { Padding::Zero } else { Padding::Reflect };
        let max_pad = match padding {
            Padding::Zero => k / 2 + 1,
            Padding::Reflect => (k / 2).min(h.min(w) - 1),
        };
        let pad = rng.random_range(0..=max_pad);
        let spec = Conv2dSpec::new(rng.random_range(1..=2), pad, padding, groups);
        if h + 2 * pad >= k && w + 2 * pad >= k {
            let x = Tensor::randn([n, c, h, w], 1.0, &mut rng);
            let kernel = Tensor::randn([c_out, c / groups, k, k], 1.0, &mut rng);
            let y = conv2d(&x, &kernel, &spec)?;
            let cot = Tensor::randn(y.shape(), 1.0, &mut rng);
            let (gx, mut gk) = conv2d_backward(&cot, &x, &kernel, &spec)?;
            if cfg.mutate {
                gk = gk.scale(2.0);
            }
            let case = format!("x{:?} k{:?} {spec:?}", x.shape(), kernel.shape());
            let r = grad_check(|t| conv2d(t, &kernel, &spec)?.mul(&cot), &x, &gx, eps, tol)?;
            col.record("conv2d.input", case.clone(), r);
            let r = grad_check(|t| conv2d(&x, t, &spec)?.mul(&cot), &kernel, &gk, eps, tol)?;
            col.record("conv2d.kernel", case, r);
        }

        // softmax kernel normalization
        let c = rng.random_range(1..=4);
        let ks = 1 + 2 * rng.random_range(1..=2usize);
        let logits = Tensor::randn([c, 1, ks, ks], 1.0, &mut rng);
        let norm = softmax_normalize(&KernelLogits::new(logits.clone(), c)?);
        let cot = Tensor::randn(norm.shape(), 1.0, &mut rng);
        let g = softmax_normalize_backward(&cot, &norm)?;
        let r = grad_check(
            |t| softmax_normalize(&KernelLogits::new(t.clone(), c)?).mul(&cot),
            &logits,
            &g,
            eps,
            tol,
        )?;
        col.record("softmax_normalize", format!("{:?}", logits.shape()), r);

        // global average pool
        let (n, c, h, w) = dims(&mut rng);
        let x = Tensor::randn([n, c, h, w], 1.0, &mut rng);
        let cot = Tensor::randn([n, c, 1, 1], 1.0, &mut rng);
        let g = global_avg_pool_backward(&cot, x.shape())?;
        let r = grad_check(|t| global_avg_pool(t)?.mul(&cot), &x, &g, eps, tol)?;
        col.record("global_avg_pool", format!("{:?}", x.shape()), r);

        // fully connected
        let n = rng.random_range(1..=2);
        let (fin, fout) = (rng.random_range(1..=8), rng.random_range(1..=4));
        let x = Tensor::randn([n, fin, 1, 1], 1.0, &mut rng);
        let wt = Tensor::randn([fout, fin, 1, 1], 1.0, &mut rng);
        let b = Tensor::randn([1, fout, 1, 1], 1.0, &mut rng);
        let cot = Tensor::randn([n, fout, 1, 1], 1.0, &mut rng);
        let (gx, gw, gb) = fully_connected_backward(&cot, &x, &wt, &b)?;
        let case = format!("n={n} {fin}->{fout}");
        let r = grad_check(|t| fully_connected(t, &wt, &b)?.mul(&cot), &x, &gx, eps, tol)?;
        col.record("fully_connected.input", case.clone(), r);
        let r = grad_check(|t| fully_connected(&x, t, &b)?.mul(&cot), &wt, &gw, eps, tol)?;
        col.record("fully_connected.weights", case.clone(), r);
        let r = grad_check(|t| fully_connected(&x, &wt, t)?.mul(&cot), &b, &gb, eps, tol)?;
        col.record("fully_connected.bias", case, r);

        // pointwise activations
        let (n, c, h, w) = dims(&mut rng);
        let x = Tensor::randn([n, c, h, w], 2.0, &mut rng);
        let cot = Tensor::randn(x.shape(), 1.0, &mut rng);
        let g = sigmoid_backward(&cot, &sigmoid(&x))?;
        let r = grad_check(|t| sigmoid(t).mul(&cot), &x, &g, eps, tol)?;
        col.record("sigmoid", format!("{:?}", x.shape()), r);
        let xr = off_kink(&x, 1e-3);
        let g = relu_backward(&cot, &xr)?;
        let r = grad_check(|t| relu(t).mul(&cot), &xr, &g, eps, tol)?;
        col.record("relu", format!("{:?}", x.shape()), r);

        // paired losses over one or two layers
        let layers = rng.random_range(1..=2);
        let mut well = Vec::new();
        let mut low = Vec::new();
        for _ in 0..layers {
            let (n, c, h, w) = dims(&mut rng);
            well.push(Tensor::randn([n, c, h, w], 1.0, &mut rng));
            low.push(Tensor::randn([n, c, h, w], 1.0, &mut rng));
        }
        let ds = loss_ds(&well, &low)?;
        let tv = loss_tv(&low)?;
        for l in 0..layers {
            let case = format!("layer {l} {:?}", low[l].shape());
            let scalar = |v: f64| Tensor::full([1, 1, 1, 1], v);
            let mut probe = low.clone();
            let r = grad_check(
                |t| {
                    probe[l] = t.clone();
                    Ok(scalar(loss_ds(&well, &probe)?.value))
                },
                &low[l],
                &ds.grad_low[l],
                eps,
                tol,
            )?;
            col.record("loss_ds.low", case.clone(), r);
            let mut probe = well.clone();
            let r = grad_check(
                |t| {
                    probe[l] = t.clone();
                    Ok(scalar(loss_ds(&probe, &low)?.value))
                },
                &well[l],
                &ds.grad_well[l],
                eps,
                tol,
            )?;
            col.record("loss_ds.well", case.clone(), r);
            let mut probe = low.clone();
            let r = grad_check(
                |t| {
                    probe[l] = t.clone();
                    Ok(scalar(loss_tv(&probe)?.value))
                },
                &low[l],
                &tv.grads[l],
                eps,
                tol,
            )?;
            col.record("loss_tv", case, r);
        }

        // ALD block, every parameter and the input
        let c = rng.random_range(1..=4);
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(5..=8), rng.random_range(5..=8));
        let mut block = AldBlock::init(c, rng.random())?;
        block.fusion = if seed % 2 == 0 { Fusion::Additive } else { Fusion::Convex };
        // perturb away from the symmetric initialization
        for (_, p) in block.params_mut() {
            let noise = Tensor::randn(p.shape(), 0.3, &mut rng);
            p.axpy(1.0, &noise)?;
        }
        let x = Tensor::randn([n, c, h, w], 1.0, &mut rng);
        let (y, cache) = block.forward(&x)?;
        let cot = Tensor::randn(y.shape(), 1.0, &mut rng);
        let (gx, grads) = block.backward(&cache, &cot)?;
        let case = format!("x{:?} {:?}", x.shape(), block.fusion);
        let r = grad_check(|t| block.forward(t)?.0.mul(&cot), &x, &gx, eps, tol)?;
        col.record("ald.input", case.clone(), r);
        let analytic = [grads.sconv_logits, grads.main_kernel, grads.fc_weights, grads.fc_bias];
        let names: Vec<&str> = block.params().iter().map(|p| p.0).collect();
        for (k, name) in names.into_iter().enumerate() {
            let base = block.params()[k].1.clone();
            let r = grad_check(
                |t| {
                    let mut b2 = block.clone();
                    *b2.params_mut()[k].1 = t.clone();
                    b2.forward(&x)?.0.mul(&cot)
                },
                &base,
                &analytic[k],
                eps,
                tol,
            )?;
            col.record(name, case.clone(), r);
        }
    }
    Ok(SuiteReport {
        ops: col.ops,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_covers_every_op() {
        let r = run(&SuiteConfig {
            seeds: 4,
            ..Default::default()
        })
        .unwrap();
        assert!(r.pass(), "{:#?}", r.ops);
        for op in [
            "conv2d.input",
            "conv2d.kernel",
            "softmax_normalize",
            "global_avg_pool",
            "fully_connected.bias",
            "sigmoid",
            "relu",
            "loss_ds.well",
            "loss_tv",
            "ald.input",
            "ald.sconv_logits",
            "ald.fc_bias",
        ] {
            assert!(r.ops.iter().any(|o| o.op == op), "missing {op}");
        }
    }

    #[test]
    fn mutation_is_detected() {
        let r = run(&SuiteConfig {
            seeds: 3,
            mutate: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!r.pass());
        let failing: Vec<_> = r.ops.iter().filter(|o| !o.pass).map(|o| o.op.as_str()).collect();
        assert_eq!(failing, ["conv2d.kernel"]);
    }

    #[test]
    fn off_kink_keeps_sign_and_margin() {
        let t = Tensor::new([1, 1, 1, 4], vec![0.0, 1e-5, -1e-5, 0.5]).unwrap();
        let o = off_kink(&t, 1e-3);
        assert!(o.data()[..3].iter().all(|v| v.abs() >= 1e-3));
        assert!(o.data()[1] > 0.0 && o.data()[2] < 0.0);
        assert_eq!(o.data()[3], 0.5);
    }
}
