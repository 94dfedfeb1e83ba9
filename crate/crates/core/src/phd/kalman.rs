//! Constant-velocity Kalman filter over box center and size.
//!
//! State: `[cx, cy, w, h, vcx, vcy, vw, vh]`, velocities in pixels per frame.
//! Measurement: `[cx, cy, w, h]`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::model::BBox;

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
pub type Measurement = SVector<f64, 4>;
pub type GainMatrix = SMatrix<f64, 8, 4>;

/// Smallest width/height a state converts to.
const MIN_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl KalmanState {
    pub fn to_bbox(&self) -> BBox {
        let m = &self.mean;
        BBox::from_center(m[0], m[1], m[2].max(MIN_SIZE), m[3].max(MIN_SIZE))
            .expect("kalman state is finite")
    }

    /// Per-frame velocity `(vcx, vcy, vw, vh)`.
    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }
}

pub fn measurement_of(b: &BBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.width(), b.height())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    /// Process noise std on positions and sizes (px/frame).
    pub process_noise_pos: f64,
    /// Process noise std on velocities.
    pub process_noise_vel: f64,
    /// Measurement noise std (px).
    pub measurement_noise: f64,
    /// Initial velocity std for new tracks.
    pub initial_velocity_std: f64,
}

impl Default for KalmanModel {
    fn default() -> Self {
        KalmanModel {
            process_noise_pos: 1.0,
            process_noise_vel: 0.1,
            measurement_noise: 2.0,
            initial_velocity_std: 10.0,
        }
    }
}

impl KalmanModel {
    fn transition() -> StateMatrix {
        let mut f = StateMatrix::identity();
        for i in 0..4 {
            f[(i, i + 4)] = 1.0;
        }
        f
    }

    fn observation() -> SMatrix<f64, 4, 8> {
        let mut h = SMatrix::<f64, 4, 8>::zeros();
        for i in 0..4 {
            h[(i, i)] = 1.0;
        }
        h
    }

    fn process_noise(&self) -> StateMatrix {
        let p = self.process_noise_pos.powi(2);
        let v = self.process_noise_vel.powi(2);
        StateMatrix::from_diagonal(&StateVector::from_column_slice(&[p, p, p, p, v, v, v, v]))
    }

    fn measurement_covariance(&self) -> SMatrix<f64, 4, 4> {
        SMatrix::<f64, 4, 4>::identity() * self.measurement_noise.powi(2)
    }

    /// Zero-velocity state centred on `b`.
    pub fn initiate(&self, b: &BBox) -> KalmanState {
        let z = measurement_of(b);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let r = self.measurement_noise.powi(2);
        let v = self.initial_velocity_std.powi(2);
        KalmanState {
            mean,
            covariance: StateMatrix::from_diagonal(&StateVector::from_column_slice(&[
                r, r, r, r, v, v, v, v,
            ])),
        }
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let f = Self::transition();
        let p = f * s.covariance * f.transpose() + self.process_noise();
        KalmanState {
            mean: f * s.mean,
            covariance: symmetrize(p),
        }
    }

    pub fn gain(&self, s: &KalmanState) -> Result<GainMatrix> {
        let h = Self::observation();
        let pht = s.covariance * h.transpose();
        let innovation = h * pht + self.measurement_covariance();
        let chol = innovation.cholesky().ok_or(Error::SingularInnovation)?;
        // K = P H^T S^-1  <=>  S K^T = H P
        let kt = chol.solve(&pht.transpose());
        let k = kt.transpose();
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularInnovation);
        }
        Ok(k)
    }

    /// Measurement update against box `z`, Joseph-form covariance.
    pub fn correct(&self, s: &KalmanState, z: &BBox) -> Result<KalmanState> {
        let k = self.gain(s)?;
        let h = Self::observation();
        let innovation = measurement_of(z) - h * s.mean;
        let mean = s.mean + k * innovation;
        let ikh = StateMatrix::identity() - k * h;
        let p = ikh * s.covariance * ikh.transpose() + k * self.measurement_covariance() * k.transpose();
        Ok(KalmanState {
            mean,
            covariance: symmetrize(p),
        })
    }
}

fn symmetrize(p: StateMatrix) -> StateMatrix {
    (p + p.transpose()) * 0.5
}

/// Free-function form of [`KalmanModel::correct`].
pub fn kalman_correct(model: &KalmanModel, k: &KalmanState, z: &BBox) -> Result<KalmanState> {
    model.correct(k, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(l: f64, t: f64, r: f64, bt: f64) -> BBox {
        BBox::new(l, t, r, bt).unwrap()
    }

    #[test]
    fn zero_measurement_noise_snaps_to_measurement() {
        let model = KalmanModel {
            measurement_noise: 0.0,
            ..Default::default()
        };
        let start = KalmanModel::default().initiate(&b(0.0, 0.0, 10.0, 20.0));
        let prior = model.predict(&start);
        let z = b(3.0, 4.0, 15.0, 22.0);
        let post = model.correct(&prior, &z).unwrap();
        let mz = measurement_of(&z);
        for i in 0..4 {
            assert_relative_eq!(post.mean[i], mz[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_measurement_noise_keeps_prior() {
        let model = KalmanModel {
            measurement_noise: 1e9,
            ..Default::default()
        };
        let prior = KalmanModel::default().initiate(&b(0.0, 0.0, 10.0, 20.0));
        let post = model.correct(&prior, &b(50.0, 50.0, 70.0, 90.0)).unwrap();
        for i in 0..8 {
            assert_relative_eq!(post.mean[i], prior.mean[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn singular_innovation_is_reported() {
        let model = KalmanModel {
            measurement_noise: 0.0,
            ..Default::default()
        };
        let degenerate = KalmanState {
            mean: StateVector::from_column_slice(&[5.0, 5.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            covariance: StateMatrix::zeros(),
        };
        assert!(matches!(
            model.correct(&degenerate, &b(0.0, 0.0, 1.0, 1.0)),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn constant_velocity_prediction() {
        let model = KalmanModel::default();
        let mut s = model.initiate(&b(0.0, 0.0, 10.0, 10.0));
        s.mean[4] = 3.0;
        s.mean[5] = -1.0;
        let p = model.predict(&s);
        assert_eq!(p.mean[0], 8.0);
        assert_eq!(p.mean[1], 4.0);
        assert_eq!(p.velocity(), [3.0, -1.0, 0.0, 0.0]);
    }

    /// The cx/vcx block is decoupled from the rest, so a hand-written
    /// two-state recursion must reproduce it.
    #[test]
    fn matches_scalar_recursion() {
        let model = KalmanModel::default();
        let (q_p, q_v, r) = (1.0f64, 0.01f64, 4.0f64);
        let (mut x, mut v) = (5.0f64, 0.0f64);
        let (mut p00, mut p01, mut p11) = (r, 0.0f64, 100.0f64);

        let mut s = model.initiate(&b(0.0, 0.0, 10.0, 10.0));
        let measurements = [7.0, 9.5, 12.0, 13.0, 16.5];
        for zc in measurements {
            // predict
            x += v;
            let n00 = p00 + 2.0 * p01 + p11 + q_p;
            let n01 = p01 + p11;
            let n11 = p11 + q_v;
            (p00, p01, p11) = (n00, n01, n11);
            // correct
            let sv = p00 + r;
            let (k0, k1) = (p00 / sv, p01 / sv);
            let innov = zc - x;
            x += k0 * innov;
            v += k1 * innov;
            let (a00, a01, a11) = (
                (1.0 - k0) * (1.0 - k0) * p00 + k0 * k0 * r,
                (1.0 - k0) * (p01 - k1 * p00) + k0 * k1 * r,
                p11 - 2.0 * k1 * p01 + k1 * k1 * p00 + k1 * k1 * r,
            );
            (p00, p01, p11) = (a00, a01, a11);

            let z = BBox::from_center(zc, 5.0, 10.0, 10.0).unwrap();
            s = model.correct(&model.predict(&s), &z).unwrap();
            assert_relative_eq!(s.mean[0], x, epsilon = 1e-9);
            assert_relative_eq!(s.mean[4], v, epsilon = 1e-9);
            assert_relative_eq!(s.covariance[(0, 0)], p00, epsilon = 1e-9);
            assert_relative_eq!(s.covariance[(0, 4)], p01, epsilon = 1e-9);
            assert_relative_eq!(s.covariance[(4, 4)], p11, epsilon = 1e-9);
        }
    }

    #[test]
    fn covariance_stays_psd() {
        let model = KalmanModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = model.initiate(&b(100.0, 100.0, 140.0, 180.0));
        for _ in 0..2000 {
            s = model.predict(&s);
            if rng.random_bool(0.8) {
                let (cx, cy) = s.to_bbox().center();
                let z = BBox::from_center(
                    cx + rng.random_range(-5.0..5.0),
                    cy + rng.random_range(-5.0..5.0),
                    rng.random_range(10.0..80.0),
                    rng.random_range(10.0..80.0),
                )
                .unwrap();
                s = model.correct(&s, &z).unwrap();
            }
            let eig = s.covariance.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-9);
            assert_eq!(s.covariance, s.covariance.transpose());
        }
    }
}
