//! Variational E and M steps for one tracker frame.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::{ObservationSet, TrackerParams};

const PD_REGULARIZATION: f64 = 1e-8;
const LAMBDA_FLOOR: f64 = 1e-8;

/// Mean and covariance of a Gaussian over `[u; v]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGaussian {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Linearized rotation of the unit direction by `v Δt`, with θ read from the direction part of `mean`.
pub fn transition_matrix(mean: &Vector3<f64>, dt: f64) -> Matrix3<f64> {
    let theta = mean[1].atan2(mean[0]);
    let mut d = Matrix3::identity();
    d[(0, 2)] = -theta.sin() * dt;
    d[(1, 2)] = theta.cos() * dt;
    d
}

/// Prediction pieces shared by the iterations of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub transition: Matrix3<f64>,
    /// `D μ_{t−1}`.
    pub mean: Vector3<f64>,
    /// `D Γ_{t−1} Dᵀ`, without the dynamics covariance.
    pub propagated_cov: Matrix3<f64>,
}

impl Prediction {
    pub fn new(previous: &StateGaussian, dt: f64) -> Self {
        let d = transition_matrix(&previous.mean, dt);
        let propagated = d * previous.cov * d.transpose();
        Self { transition: d, mean: d * previous.mean, propagated_cov: symmetrize(&propagated) }
    }

    /// Predictive Gaussian `N(D μ, D Γ Dᵀ + Λ)`.
    pub fn with_dynamics(&self, dynamics: &Matrix3<f64>) -> StateGaussian {
        StateGaussian { mean: self.mean, cov: symmetrize(&(self.propagated_cov + dynamics)) }
    }
}

/// One-step predictive distribution of a track.
pub fn predict(previous: &StateGaussian, dynamics: &Matrix3<f64>, dt: f64) -> StateGaussian {
    Prediction::new(previous, dt).with_dynamics(dynamics)
}

/// Observation-space precision `Σ⁻¹` and the log-normalizer of `N(·; ·, Σ)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObservationModel {
    pub precision: Matrix2<f64>,
    pub log_det_cov: f64,
}

impl ObservationModel {
    pub fn new(params: &TrackerParams) -> Self {
        let cov = params.observation_cov();
        let precision = cov.try_inverse().expect("observation covariance validated positive definite");
        Self { precision, log_det_cov: cov.determinant().ln() }
    }

    /// `log N(b; m, Σ / w)`.
    pub fn log_density(&self, b: &Vector2<f64>, m: &Vector2<f64>, w: f64) -> f64 {
        let r = b - m;
        let maha = w * (r.transpose() * self.precision * r)[(0, 0)];
        -(2.0 * PI).ln() - 0.5 * (self.log_det_cov - 2.0 * w.ln()) - 0.5 * maha
    }
}

/// Responsibilities `α_{dn}` for `n = 0..=tracks.len()`, stored row-major per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPosterior {
    columns: usize,
    values: Vec<f64>,
}

impl AssignmentPosterior {
    /// Every observation assigned to the outlier class.
    pub fn outliers_only(observations: usize, tracks: usize) -> Self {
        let columns = tracks + 1;
        let mut values = vec![0.0; observations * columns];
        values.iter_mut().step_by(columns).for_each(|v| *v = 1.0);
        Self { columns, values }
    }

    pub fn observation_count(&self) -> usize {
        self.values.len() / self.columns
    }

    pub fn track_count(&self) -> usize {
        self.columns - 1
    }

    /// `α_{dn}`, with `n = 0` the outlier class and `n = k + 1` the k-th track.
    pub fn get(&self, d: usize, n: usize) -> f64 {
        self.values[d * self.columns + n]
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.columns..(d + 1) * self.columns]
    }

    /// Most responsible class for observation `d`; ties go to the lower index.
    pub fn argmax(&self, d: usize) -> usize {
        let row = self.row(d);
        (0..row.len()).fold(0, |best, n| if row[n] > row[best] { n } else { best })
    }

    /// `Σ_d α_{dn} w_d` for track column `n`.
    pub fn weighted_mass(&self, n: usize, obs: &ObservationSet) -> f64 {
        (0..self.observation_count()).map(|d| self.get(d, n) * obs.weights[d]).sum()
    }
}

/// Closed-form assignment posterior given the current state posteriors.
pub fn e_z_step(states: &[StateGaussian], obs: &ObservationSet, params: &TrackerParams) -> AssignmentPosterior {
    let model = ObservationModel::new(params);
    let columns = states.len() + 1;
    let log_prior = -((params.max_speakers + 1) as f64).ln();
    let log_outlier = params.outlier_density.ln() + log_prior;
    let mut values = Vec::with_capacity(obs.len() * columns);
    let mut log_rho = vec![0.0; columns];
    let mut underflow = false;
    for (b, &w) in obs.directions.iter().zip(&obs.weights) {
        log_rho[0] = log_outlier;
        for (n, s) in states.iter().enumerate() {
            log_rho[n + 1] = if w > 0.0 {
                let m = Vector2::new(s.mean[0], s.mean[1]);
                let gamma_uu = s.cov.fixed_view::<2, 2>(0, 0);
                let trace = w * (model.precision * gamma_uu).trace();
                model.log_density(b, &m, w) - 0.5 * trace + log_prior
            } else {
                f64::NEG_INFINITY
            };
        }
        let max = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        if max.is_finite() {
            let total: f64 = log_rho.iter().map(|l| (l - max).exp()).sum();
            values.extend(log_rho.iter().map(|l| (l - max).exp() / total));
        } else {
            underflow = true;
            values.extend(std::iter::repeat_n(0.0, columns));
            values[start] = 1.0;
        }
    }
    if underflow {
        log::warn!("tracker: assignment responsibilities underflowed, observations sent to the outlier class");
    }
    AssignmentPosterior { columns, values }
}

/// Information-form fusion of the prediction with the responsibility-weighted observations
/// of track column `n`; the direction part of the returned mean is renormalized.
pub fn e_s_step(
    prediction: &StateGaussian,
    obs: &ObservationSet,
    alpha: &AssignmentPosterior,
    n: usize,
    params: &TrackerParams,
) -> StateGaussian {
    let model = ObservationModel::new(params);
    let prior_precision = invert_spd(&prediction.cov);
    let mut mass = 0.0;
    let mut weighted_b = Vector2::zeros();
    for (d, (b, &w)) in obs.directions.iter().zip(&obs.weights).enumerate() {
        let aw = alpha.get(d, n) * w;
        mass += aw;
        weighted_b += aw * b;
    }
    let mut info = prior_precision;
    let mut block = info.fixed_view_mut::<2, 2>(0, 0);
    block += model.precision * mass;
    let cov = symmetrize(&invert_spd(&info));
    let pb = model.precision * weighted_b;
    let rhs = Vector3::new(pb[0], pb[1], 0.0) + prior_precision * prediction.mean;
    let mut mean = cov * rhs;
    normalize_direction(&mut mean);
    StateGaussian { mean, cov }
}

/// `Λ = Γ_t − D Γ_{t−1} Dᵀ + δ δᵀ` with `δ = μ_t − D μ_{t−1}`, projected onto the PSD cone.
pub fn m_step(current: &StateGaussian, prediction: &Prediction) -> Matrix3<f64> {
    let innovation = current.mean - prediction.mean;
    let raw = current.cov - prediction.propagated_cov + innovation * innovation.transpose();
    clamp_eigenvalues(&symmetrize(&raw), LAMBDA_FLOOR)
}

pub(crate) fn clamp_eigenvalues(m: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*m);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

pub(crate) fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn normalize_direction(mean: &mut Vector3<f64>) {
    let norm = mean[0].hypot(mean[1]);
    if norm > 0.0 && norm.is_finite() {
        mean[0] /= norm;
        mean[1] /= norm;
    } else {
        log::warn!("tracker: degenerate direction vector, reset to azimuth 0");
        mean[0] = 1.0;
        mean[1] = 0.0;
    }
}

/// Inverse of a symmetric positive-definite matrix, regularized once if the factorization fails.
pub(crate) fn invert_spd(m: &Matrix3<f64>) -> Matrix3<f64> {
    if let Some(ch) = m.cholesky() {
        return symmetrize(&ch.inverse());
    }
    log::warn!("tracker: covariance not positive definite, adding {PD_REGULARIZATION}·I");
    let reg = symmetrize(m) + Matrix3::identity() * PD_REGULARIZATION;
    match reg.cholesky() {
        Some(ch) => symmetrize(&ch.inverse()),
        None => symmetrize(&clamp_eigenvalues(&reg, PD_REGULARIZATION).try_inverse().unwrap_or_else(Matrix3::identity)),
    }
}
