use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compensated sum, so the scalarized output does not add rounding noise of
/// its own to the difference quotient.
fn scalarize(t: &Tensor) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in t.data() {
        let s = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - s) + v;
        } else {
            comp += (v - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Compare `analytic` against central differences of `sum(op(x))` at every
/// coordinate of `x`.
pub fn grad_check<F>(mut op: F, x: &Tensor, analytic: &Tensor, eps: f64, tol: f64) -> Result<GradReport>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::contract(format!("grad_check: eps {eps} outside (0, 1e-2]")));
    }
    analytic.expect_shape("grad_check", x.shape())?;
    let mut probe = x.clone();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: 0,
        pass: true,
    };
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = scalarize(&op(&probe)?);
        probe.data_mut()[i] = orig - eps;
        let minus = scalarize(&op(&probe)?);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "grad_check",
                location: format!("coordinate {i}"),
            });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let e = rel_err(analytic.data()[i], numeric);
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}
