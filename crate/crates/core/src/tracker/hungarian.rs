//! Rectangular linear assignment with forbidden pairs.
//!
//! Forbidden entries are `f64::INFINITY`. The result is a matching of
//! maximum cardinality over allowed pairs and, among those, minimum total
//! cost. Rows are inserted in index order and columns scanned in ascending
//! order with strict comparisons, so ties resolve toward the first candidate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

pub fn hungarian(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in cost.iter() {
        if c.is_nan() || c == f64::NEG_INFINITY {
            return Err(Error::contract(format!("hungarian: invalid cost {c}")));
        }
        if c.is_finite() {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    if !lo.is_finite() {
        return Ok(Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        });
    }
    let n = rows.max(cols);
    let span = hi - lo;
    // any assignment using one more allowed pair beats every one using fewer
    let big = 1.0 + n as f64 * span.max(1.0);
    let a = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols && cost[(i, j)].is_finite() {
            cost[(i, j)] - lo
        } else {
            big
        }
    };

    // potentials over a 1-based square problem; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let (i, j) = (p[j] - 1, j - 1);
            (i < rows && j < cols && cost[(i, j)].is_finite()).then_some((i, j))
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
    Ok(Assignment { pairs, cost: total })
}
