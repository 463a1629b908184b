//! Degradation suppression losses: paired feature consistency between
//! well-lit and low-light inputs, squared total variation on low-light
//! features, and their weighted combination with the detection losses.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Loss weights and the feature layers the paired losses apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct DslConfig {
    /// Weight of the low-light detection loss.
    pub alpha: f64,
    /// Weight of the feature consistency loss.
    pub beta: f64,
    /// Weight of the total-variation loss.
    pub gamma: f64,
    /// Indices of feature maps entering the consistency and TV losses.
    pub layers: Vec<usize>,
    /// Treat well-lit features as a fixed teacher (no gradient).
    pub detach_well: bool,
}

impl Default for DslConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.01,
            layers: vec![0, 1],
            detach_well: false,
        }
    }
}

impl DslConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("dsl weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DsLoss {
    pub value: f64,
    pub grad_low: Vec<Tensor>,
    pub grad_well: Vec<Tensor>,
}

/// `sum_l ||F_well_l - F_low_l||^2`, unnormalized.
pub fn loss_ds(well: &[Tensor], low: &[Tensor]) -> Result<DsLoss> {
    if well.len() != low.len() {
        return Err(Error::dim(
            "loss_ds",
            format!("{} well-lit maps vs {} low-light maps", well.len(), low.len()),
        ));
    }
    let mut value = 0.0;
    let mut grad_low = Vec::with_capacity(low.len());
    let mut grad_well = Vec::with_capacity(well.len());
    for (l, (fw, fl)) in well.iter().zip(low).enumerate() {
        if fw.shape() != fl.shape() {
            return Err(Error::dim(
                "loss_ds",
                format!("layer {l}: shapes {:?} and {:?}", fw.shape(), fl.shape()),
            ));
        }
        let diff = fl.sub(fw)?;
        value += diff.sum_sq();
        grad_low.push(diff.scale(2.0));
        grad_well.push(diff.scale(-2.0));
    }
    Ok(DsLoss {
        value,
        grad_low,
        grad_well,
    })
}

#[derive(Debug, Clone)]
pub struct TvLoss {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

/// Anisotropic squared total variation: squared first differences along the
/// height axis plus along the width axis, summed over all maps.
pub fn loss_tv(maps: &[Tensor]) -> Result<TvLoss> {
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(maps.len());
    for (l, f) in maps.iter().enumerate() {
        let [n, c, h, w] = f.shape();
        if h < 2 || w < 2 {
            return Err(Error::dim(
                "loss_tv",
                format!("layer {l}: spatial size {h}x{w}, need at least 2x2"),
            ));
        }
        let mut g = Tensor::zeros(f.shape());
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = f.at(ni, ci, y, x);
                        if y + 1 < h {
                            let d = f.at(ni, ci, y + 1, x) - v;
                            value += d * d;
                            *g.at_mut(ni, ci, y + 1, x) += 2.0 * d;
                            *g.at_mut(ni, ci, y, x) -= 2.0 * d;
                        }
                        if x + 1 < w {
                            let d = f.at(ni, ci, y, x + 1) - v;
                            value += d * d;
                            *g.at_mut(ni, ci, y, x + 1) += 2.0 * d;
                            *g.at_mut(ni, ci, y, x) -= 2.0 * d;
                        }
                    }
                }
            }
        }
        grads.push(g);
    }
    Ok(TvLoss { value, grads })
}

/// `L_det_well + alpha * L_det_low + beta * L_ds + gamma * L_tv`.
pub fn loss_total(det_well: f64, det_low: f64, ds: f64, tv: f64, cfg: &DslConfig) -> Result<f64> {
    cfg.validate()?;
    for (name, v) in [("det_well", det_well), ("det_low", det_low), ("ds", ds), ("tv", tv)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::contract(format!(
                "loss_total: component {name} = {v} must be finite and non-negative"
            )));
        }
    }
    Ok(det_well + cfg.alpha * det_low + cfg.beta * ds + cfg.gamma * tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ds_fixtures() {
        let a = Tensor::full([1, 2, 3, 3], 0.3);
        assert_eq!(loss_ds(&[a.clone()], &[a]).unwrap().value, 0.0);
        let well = Tensor::full([1, 1, 2, 2], 1.0);
        let low = Tensor::zeros([1, 1, 2, 2]);
        let r = loss_ds(&[well], &[low]).unwrap();
        assert_eq!(r.value, 4.0);
        assert!(r.grad_low[0].data().iter().all(|&g| g == -2.0));
    }

    #[test]
    fn ds_shape_error_names_layer() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 3, 2]);
        let err = loss_ds(&[a.clone(), a.clone()], &[a, b]).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn tv_fixtures() {
        assert_eq!(loss_tv(&[Tensor::full([2, 3, 4, 5], 1.7)]).unwrap().value, 0.0);
        let f = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(loss_tv(&[f]).unwrap().value, 2.0);
        assert!(loss_tv(&[Tensor::zeros([1, 1, 1, 4])]).is_err());
    }

    #[test]
    fn total_fixtures() {
        let cfg = DslConfig::default();
        assert!((loss_total(1.0, 2.0, 3.0, 4.0, &cfg).unwrap() - 6.04).abs() < 1e-12);
        assert_eq!(loss_total(0.0, 0.0, 0.0, 0.0, &cfg).unwrap(), 0.0);
        let off = DslConfig {
            alpha: 0.5,
            beta: 0.0,
            gamma: 0.0,
            ..cfg.clone()
        };
        assert_eq!(loss_total(1.0, 2.0, 3.0, 4.0, &off).unwrap(), 2.0);
        assert!(loss_total(-1.0, 0.0, 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let well = Tensor::randn([1, 2, 4, 5], 1.0, &mut rng);
        let low = Tensor::randn([1, 2, 4, 5], 1.0, &mut rng);
        let ds = loss_ds(&[well.clone()], &[low.clone()]).unwrap();
        let op = |t: &Tensor| Ok(Tensor::full([1, 1, 1, 1], loss_ds(&[well.clone()], &[t.clone()])?.value));
        assert!(grad_check(op, &low, &ds.grad_low[0], 1e-5, 1e-4).unwrap().pass);
        let opw = |t: &Tensor| Ok(Tensor::full([1, 1, 1, 1], loss_ds(&[t.clone()], &[low.clone()])?.value));
        assert!(grad_check(opw, &well, &ds.grad_well[0], 1e-5, 1e-4).unwrap().pass);

        let tv = loss_tv(&[low.clone()]).unwrap();
        let op = |t: &Tensor| Ok(Tensor::full([1, 1, 1, 1], loss_tv(&[t.clone()])?.value));
        assert!(grad_check(op, &low, &tv.grads[0], 1e-5, 1e-4).unwrap().pass);
    }

    proptest! {
        #[test]
        fn total_is_monotone(base in proptest::collection::vec(0.0f64..10.0, 4), bump in 0.0f64..5.0, which in 0usize..4) {
            let cfg = DslConfig::default();
            let mut hi = base.clone();
            hi[which] += bump;
            let a = loss_total(base[0], base[1], base[2], base[3], &cfg).unwrap();
            let b = loss_total(hi[0], hi[1], hi[2], hi[3], &cfg).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn tv_zero_iff_constant(vals in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let f = Tensor::new([1, 1, 3, 4], vals.clone()).unwrap();
            let v = loss_tv(&[f]).unwrap().value;
            let constant = vals.iter().all(|&x| x == vals[0]);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, constant);
        }
    }
}
