//! Constant-velocity Kalman filter over `(cx, cy, a, h)` and their rates.
//!
//! Noise magnitudes scale with box height. The update uses the Joseph form
//! and re-symmetrizes the covariance afterwards.

use nalgebra::{SMatrix, SVector};

use super::bbox::BBox;
use crate::error::{Error, Result};

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat48 = SMatrix<f64, 4, 8>;

const SINGULAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    /// Multiplies the measurement noise covariance; 0 gives a perfect sensor.
    pub measurement_scale: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            measurement_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::from_xyah([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }
}

pub fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> Mat48 {
    Mat48::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

pub fn process_noise(h: f64, p: &KalmanParams) -> Mat8 {
    let (wp, wv) = (p.std_weight_position * h, p.std_weight_velocity * h);
    let std = [wp, wp, 1e-2, wp, wv, wv, 1e-5, wv];
    Mat8::from_diagonal(&Vec8::from_fn(|i, _| std[i] * std[i]))
}

pub fn measurement_noise(h: f64, p: &KalmanParams) -> Mat4 {
    let wp = p.std_weight_position * h;
    let std = [wp, wp, 1e-1, wp];
    Mat4::from_diagonal(&SVector::<f64, 4>::from_fn(|i, _| std[i] * std[i] * p.measurement_scale))
}

pub fn kf_init(b: &BBox, p: &KalmanParams) -> Result<KalmanState> {
    BBox::new(b.x, b.y, b.w, b.h)?;
    let z = b.to_xyah();
    let mut mean = Vec8::zeros();
    for i in 0..4 {
        mean[i] = z[i];
    }
    let h = b.h;
    let (wp, wv) = (2.0 * p.std_weight_position * h, 10.0 * p.std_weight_velocity * h);
    let std = [wp, wp, 1e-2, wp, wv, wv, 1e-5, wv];
    Ok(KalmanState {
        mean,
        covariance: Mat8::from_diagonal(&Vec8::from_fn(|i, _| std[i] * std[i])),
    })
}

pub fn kf_predict(s: &KalmanState, p: &KalmanParams) -> KalmanState {
    let f = transition();
    let cov = f * s.covariance * f.transpose() + process_noise(s.mean[3], p);
    KalmanState {
        mean: f * s.mean,
        covariance: symmetrize(cov),
    }
}

fn symmetrize(m: Mat8) -> Mat8 {
    (m + m.transpose()) * 0.5
}

pub fn kf_update(s: &KalmanState, b: &BBox, p: &KalmanParams) -> Result<KalmanState> {
    let h_mat = observation();
    let z = SVector::<f64, 4>::from(b.to_xyah());
    let r = measurement_noise(s.mean[3], p);
    let innovation_cov = h_mat * s.covariance * h_mat.transpose() + r;
    let inv = match innovation_cov.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
        _ => {
            log::warn!("kalman update: singular innovation covariance, regularizing with {SINGULAR_EPS}*I");
            (innovation_cov + Mat4::identity() * SINGULAR_EPS)
                .try_inverse()
                .ok_or_else(|| Error::Numerical("innovation covariance singular after regularization".into()))?
        }
    };
    let gain = s.covariance * h_mat.transpose() * inv;
    let mean = s.mean + gain * (z - h_mat * s.mean);
    let i_kh = Mat8::identity() - gain * h_mat;
    let cov = i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose();
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            op: "kf_update",
            location: "posterior".into(),
        });
    }
    Ok(KalmanState {
        mean,
        covariance: symmetrize(cov),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Plain nested-vector linear algebra, independent of nalgebra.
    type Dense = Vec<Vec<f64>>;

    fn mm(a: &Dense, b: &Dense) -> Dense {
        let (n, k, m) = (a.len(), b.len(), b[0].len());
        (0..n)
            .map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect())
            .collect()
    }

    fn tr(a: &Dense) -> Dense {
        (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
    }

    fn add(a: &Dense, b: &Dense) -> Dense {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
    }

    fn inv4(a: &Dense) -> Dense {
        // Gauss-Jordan with partial pivoting
        let n = a.len();
        let mut m: Dense = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, piv);
            let d = m[c][c];
            for v in m[c].iter_mut() {
                *v /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    for j in 0..2 * n {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn to_dense(m: &Mat8) -> Dense {
        (0..8).map(|i| (0..8).map(|j| m[(i, j)]).collect()).collect()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> KalmanState {
        let mut mean = Vec8::zeros();
        for (i, v) in [
            rng.random_range(0.0..500.0),
            rng.random_range(0.0..500.0),
            rng.random_range(0.3..2.0),
            rng.random_range(10.0..200.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.01..0.01),
            rng.random_range(-1.0..1.0),
        ]
        .into_iter()
        .enumerate()
        {
            mean[i] = v;
        }
        let a = Mat8::from_fn(|_, _| rng.random_range(-1.0..1.0));
        KalmanState {
            mean,
            covariance: a * a.transpose() + Mat8::identity(),
        }
    }

    #[test]
    fn init_fixture() {
        let p = KalmanParams::default();
        let s = kf_init(&BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), &p).unwrap();
        assert_eq!(s.mean.as_slice(), &[5.0, 5.0, 1.0, 10.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.covariance, s.covariance.transpose());
        assert!(s.covariance.symmetric_eigenvalues().min() > 0.0);
        assert_eq!(s, kf_init(&BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), &p).unwrap());
    }

    #[test]
    fn predict_moves_by_velocity() {
        let p = KalmanParams::default();
        let mut s = kf_init(&BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), &p).unwrap();
        assert_eq!(kf_predict(&s, &p).mean[0], 5.0);
        s.mean[4] = 2.0;
        let s1 = kf_predict(&s, &p);
        let s2 = kf_predict(&s1, &p);
        assert_eq!((s1.mean[0], s2.mean[0]), (7.0, 9.0));
    }

    #[test]
    fn predict_and_update_match_dense_reference() {
        let p = KalmanParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            let f: Dense = (0..8)
                .map(|i| (0..8).map(|j| if i == j || j == i + 4 { 1.0 } else { 0.0 }).collect())
                .collect();
            let q = to_dense(&process_noise(s.mean[3], &p));
            let pd = to_dense(&s.covariance);
            let want = add(&mm(&mm(&f, &pd), &tr(&f)), &q);
            let got = kf_predict(&s, &p);
            for i in 0..8 {
                let mi: f64 = (0..8).map(|j| f[i][j] * s.mean[j]).sum();
                assert!((got.mean[i] - mi).abs() < 1e-9);
                for j in 0..8 {
                    assert!((got.covariance[(i, j)] - want[i][j]).abs() < 1e-9 * (1.0 + want[i][j].abs()));
                }
            }

            // standard-form update as the reference
            let b = BBox::from_xyah([
                s.mean[0] + rng.random_range(-5.0..5.0),
                s.mean[1] + rng.random_range(-5.0..5.0),
                s.mean[2] * rng.random_range(0.9..1.1),
                s.mean[3] * rng.random_range(0.9..1.1),
            ]);
            let z = b.to_xyah();
            let hm: Dense = (0..4).map(|i| (0..8).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
            let rd: Dense = {
                let r = measurement_noise(s.mean[3], &p);
                (0..4).map(|i| (0..4).map(|j| r[(i, j)]).collect()).collect()
            };
            let sm = add(&mm(&mm(&hm, &pd), &tr(&hm)), &rd);
            let k = mm(&mm(&pd, &tr(&hm)), &inv4(&sm));
            let innov: Vec<f64> = (0..4).map(|i| z[i] - s.mean[i]).collect();
            let kh = mm(&k, &hm);
            let ikh: Dense = (0..8)
                .map(|i| (0..8).map(|j| if i == j { 1.0 } else { 0.0 } - kh[i][j]).collect())
                .collect();
            let pw = mm(&ikh, &pd);
            let got = kf_update(&s, &b, &p).unwrap();
            for i in 0..8 {
                let mi = s.mean[i] + (0..4).map(|j| k[i][j] * innov[j]).sum::<f64>();
                assert!((got.mean[i] - mi).abs() < 1e-8 * (1.0 + mi.abs()));
                for j in 0..8 {
                    assert!((got.covariance[(i, j)] - pw[i][j]).abs() < 1e-7 * (1.0 + pw[i][j].abs()));
                }
            }
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let p = KalmanParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng);
        let u = kf_update(&s, &s.bbox(), &p).unwrap();
        for i in 0..8 {
            assert!((u.mean[i] - s.mean[i]).abs() < 1e-9 * (1.0 + s.mean[i].abs()));
        }
    }

    #[test]
    fn perfect_measurement_limit() {
        let p = KalmanParams {
            measurement_scale: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng);
        let b = BBox::new(40.0, 50.0, 30.0, 60.0).unwrap();
        let u = kf_update(&s, &b, &p).unwrap();
        for (i, z) in b.to_xyah().iter().enumerate() {
            assert!((u.mean[i] - z).abs() < 1e-6, "{i}: {} vs {z}", u.mean[i]);
        }
    }

    #[test]
    fn singular_innovation_is_regularized() {
        let p = KalmanParams {
            measurement_scale: 0.0,
            ..Default::default()
        };
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let s = KalmanState {
            mean: kf_init(&b, &p).unwrap().mean,
            covariance: Mat8::zeros(),
        };
        let u = kf_update(&s, &BBox::new(1.0, 0.0, 10.0, 10.0).unwrap(), &p).unwrap();
        assert!(u.mean.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn covariance_stays_symmetric_psd_over_long_runs() {
        let p = KalmanParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = kf_init(&BBox::new(100.0, 100.0, 40.0, 80.0).unwrap(), &p).unwrap();
        for t in 0..1000 {
            s = kf_predict(&s, &p);
            if rng.random_bool(0.8) {
                let b = BBox::new(100.0 + t as f64 + rng.random_range(-2.0..2.0), 100.0, 40.0, 80.0).unwrap();
                s = kf_update(&s, &b, &p).unwrap();
            }
            let asym = (s.covariance - s.covariance.transpose()).abs().max();
            assert!(asym <= 1e-9);
            assert!(s.covariance.symmetric_eigenvalues().min() >= -1e-9);
            assert!(s.mean[3] > 0.0);
        }
    }
}
