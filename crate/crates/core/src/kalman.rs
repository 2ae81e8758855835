//! Linear Kalman filter with optional control input.
//!
//! Predict: `x <- F x + B u`, `P <- F P F^T + Q`.
//! Update:  `K = P H^T (H P H^T + R)^-1`, `x <- x + K (z - H x)`,
//!          `P <- (I - K H) P`, then `P` is re-symmetrized.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{BoundingBox, CenterForm, GeometryError};

/// Innovation covariances with a larger condition number are treated as
/// singular.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    Dimension {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    DegenerateUpdate { condition: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self, KalmanError> {
        let n = x.len();
        check("P", &p, (n, n))?;
        Ok(Self { x, p })
    }

    /// `max |P - P^T|` over all entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.p.nrows() {
            for j in 0..self.p.ncols() {
                worst = worst.max((self.p[(i, j)] - self.p[(j, i)]).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u: DVector<f64>,
}

fn check(what: &'static str, m: &DMatrix<f64>, expected: (usize, usize)) -> Result<(), KalmanError> {
    let got = m.shape();
    if got != expected {
        return Err(KalmanError::Dimension { what, got, expected });
    }
    Ok(())
}

impl KalmanModel {
    /// Model without control input.
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, KalmanError> {
        let n = f.nrows();
        let m = h.nrows();
        check("F", &f, (n, n))?;
        check("H", &h, (m, n))?;
        check("Q", &q, (n, n))?;
        check("R", &r, (m, m))?;
        Ok(Self {
            f,
            h,
            q,
            r,
            b: DMatrix::zeros(n, 0),
            u: DVector::zeros(0),
        })
    }

    pub fn with_control(mut self, b: DMatrix<f64>, u: DVector<f64>) -> Result<Self, KalmanError> {
        check("B", &b, (self.state_dim(), u.len()))?;
        self.b = b;
        self.u = u;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let mut x = &self.f * &s.x;
        if !self.u.is_empty() {
            x += &self.b * &self.u;
        }
        let p = &self.f * &s.p * self.f.transpose() + &self.q;
        KalmanState { x, p }
    }

    pub fn update(&self, s: &KalmanState, z: &[f64]) -> Result<KalmanState, KalmanError> {
        let m = self.measurement_dim();
        if z.len() != m {
            return Err(KalmanError::Dimension {
                what: "z",
                got: (z.len(), 1),
                expected: (m, 1),
            });
        }
        let z = DVector::from_column_slice(z);
        let ht = self.h.transpose();
        let innovation_cov = &self.h * &s.p * &ht + &self.r;
        let innovation_cov = (&innovation_cov + innovation_cov.transpose()) * 0.5;

        let eig = innovation_cov.clone().symmetric_eigenvalues();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        if lo.is_nan() || lo <= 0.0 || hi / lo > MAX_INNOVATION_CONDITION {
            return Err(KalmanError::DegenerateUpdate {
                condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            });
        }
        let chol = innovation_cov
            .cholesky()
            .ok_or(KalmanError::DegenerateUpdate {
                condition: f64::INFINITY,
            })?;
        // S is symmetric, so K^T = S^-1 (H P^T).
        let gain = chol.solve(&(&self.h * s.p.transpose())).transpose();

        let residual = z - &self.h * &s.x;
        let x = &s.x + &gain * residual;
        let n = self.state_dim();
        let p = (DMatrix::identity(n, n) - &gain * &self.h) * &s.p;
        let p = (&p + p.transpose()) * 0.5;
        Ok(KalmanState { x, p })
    }
}

pub fn kf_predict(s: &KalmanState, m: &KalmanModel) -> KalmanState {
    m.predict(s)
}

pub fn kf_update(s: &KalmanState, z: &[f64], m: &KalmanModel) -> Result<KalmanState, KalmanError> {
    m.update(s, z)
}

/// Noise settings for the 7-state constant-velocity box model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxNoise {
    /// Process noise on u, v, s, r.
    pub q_position: f64,
    /// Process noise on the three velocities.
    pub q_velocity: f64,
    /// Multiplier on the base measurement noise diag(1, 1, 10, 10).
    pub measurement_scale: f64,
    /// Initial variance of the velocity components.
    pub initial_velocity_var: f64,
}

impl Default for BoxNoise {
    fn default() -> Self {
        Self {
            q_position: 1e-4,
            q_velocity: 1e-2,
            measurement_scale: 1.0,
            initial_velocity_var: 1e4,
        }
    }
}

pub const BOX_STATE_DIM: usize = 7;
pub const BOX_MEASUREMENT_DIM: usize = 4;

/// State `[u, v, s, r, du, dv, ds]` with unit time step; `r` has no
/// velocity.
pub fn constant_velocity_box_model(noise: &BoxNoise) -> KalmanModel {
    let mut f = DMatrix::identity(BOX_STATE_DIM, BOX_STATE_DIM);
    for i in 0..3 {
        f[(i, i + 4)] = 1.0;
    }
    let h = DMatrix::identity(BOX_MEASUREMENT_DIM, BOX_STATE_DIM);
    let q = DMatrix::from_diagonal(&DVector::from_fn(BOX_STATE_DIM, |i, _| {
        if i < 4 {
            noise.q_position
        } else {
            noise.q_velocity
        }
    }));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.0, 10.0, 10.0]))
        * noise.measurement_scale;
    KalmanModel::new(f, h, q, r).expect("box model dimensions are consistent")
}

/// Zero-velocity state centered on a first observation.
pub fn initial_box_state(bbox: &BoundingBox, noise: &BoxNoise) -> KalmanState {
    let z = bbox.to_center_form();
    let mut x = DVector::zeros(BOX_STATE_DIM);
    for (i, v) in z.as_array().into_iter().enumerate() {
        x[i] = v;
    }
    let base = [1.0, 1.0, 10.0, 10.0];
    let p = DMatrix::from_diagonal(&DVector::from_fn(BOX_STATE_DIM, |i, _| {
        if i < 4 {
            base[i] * noise.measurement_scale
        } else {
            noise.initial_velocity_var
        }
    }));
    KalmanState { x, p }
}

/// Box encoded by the first four state components.
pub fn state_box(s: &KalmanState) -> Result<BoundingBox, GeometryError> {
    CenterForm::new(s.x[0], s.x[1], s.x[2], s.x[3])?.to_box()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(q: f64, r: f64) -> KalmanModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        KalmanModel::new(
            one.clone(),
            one,
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let m = scalar_model(0.0, 1.0);
        let s = KalmanState::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = m.update(&m.predict(&s), &[2.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.p[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_velocity_predict() {
        let m = constant_velocity_box_model(&BoxNoise::default());
        let s = KalmanState::new(
            DVector::from_column_slice(&[10.0, 5.0, 400.0, 1.0, 2.0, 0.0, 0.0]),
            DMatrix::identity(7, 7),
        )
        .unwrap();
        let p = m.predict(&s);
        assert_eq!(p.x.as_slice(), &[12.0, 5.0, 400.0, 1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_velocity_keeps_position() {
        let m = constant_velocity_box_model(&BoxNoise::default());
        let s = KalmanState::new(
            DVector::from_column_slice(&[3.0, 4.0, 100.0, 0.5, 0.0, 0.0, 0.0]),
            DMatrix::identity(7, 7),
        )
        .unwrap();
        assert_eq!(m.predict(&s).x, s.x);
    }

    #[test]
    fn huge_measurement_noise_ignores_measurement() {
        let mut m = constant_velocity_box_model(&BoxNoise::default());
        m.r = DMatrix::identity(4, 4) * 1e12;
        let s = initial_box_state(&BoundingBox::new(0.0, 0.0, 20.0, 20.0).unwrap(), &BoxNoise::default());
        let out = m.update(&s, &[50.0, 50.0, 900.0, 2.0]).unwrap();
        for i in 0..7 {
            assert!((out.x[i] - s.x[i]).abs() < 1e-6, "component {i}");
        }
    }

    #[test]
    fn huge_prior_trusts_measurement() {
        let m = constant_velocity_box_model(&BoxNoise::default());
        let s = KalmanState::new(DVector::zeros(7), DMatrix::identity(7, 7) * 1e12).unwrap();
        let z = [50.0, 60.0, 900.0, 2.0];
        let out = m.update(&s, &z).unwrap();
        for (i, zi) in z.iter().enumerate() {
            assert!((out.x[i] - zi).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_innovation_is_reported() {
        let m = scalar_model(0.0, 0.0);
        let s = KalmanState::new(DVector::from_element(1, 0.0), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            m.update(&s, &[1.0]),
            Err(KalmanError::DegenerateUpdate { .. })
        ));
    }

    #[test]
    fn control_input_shifts_prediction() {
        let m = scalar_model(0.0, 1.0)
            .with_control(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.5))
            .unwrap();
        let s = KalmanState::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1)).unwrap();
        assert_eq!(m.predict(&s).x[0], 2.0);
    }

    #[test]
    fn dimension_errors() {
        let bad = KalmanModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 3),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        );
        assert!(matches!(bad, Err(KalmanError::Dimension { what: "H", .. })));
        let m = scalar_model(0.0, 1.0);
        let s = KalmanState::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(m.update(&s, &[1.0, 2.0]).is_err());
    }
}
