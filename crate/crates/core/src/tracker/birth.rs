//! Track birth from short sequences of unexplained observations.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::vem::{normalize_direction, symmetrize, transition_matrix, StateGaussian};
use super::TrackerParams;

/// The strongest outlier-assigned observation of one tracker frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthObservation {
    pub direction: Vector2<f64>,
    pub weight: f64,
}

impl BirthObservation {
    pub fn from_azimuth(azimuth_deg: f64, weight: f64) -> Self {
        let a = azimuth_deg.to_radians();
        Self { direction: Vector2::new(a.cos(), a.sin()), weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthDecision {
    /// Geometric mean of the conditional predictive densities, compared against ε₁.
    pub score: f64,
    pub spawn: bool,
    /// Filtered state after the last observation of the window.
    pub state: StateGaussian,
    /// Weights of the tested sequence, oldest first.
    pub sequence_weights: Vec<f64>,
}

/// Log predictive densities `log p(b_i | b_{<i})` of the sequence under a single-track
/// linear-Gaussian model started from the broad birth prior.
pub fn log_predictive_terms(seq: &[BirthObservation], params: &TrackerParams) -> (Vec<f64>, StateGaussian) {
    let sigma = params.observation_cov();
    let dynamics = Matrix3::identity() * params.birth_dynamics_var;
    let mut mean = Vector3::zeros();
    let mut cov = Matrix3::identity() * params.birth_prior_var;
    let mut terms = Vec::with_capacity(seq.len());
    for (i, obs) in seq.iter().enumerate() {
        if i > 0 {
            let d = transition_matrix(&mean, params.dt);
            mean = d * mean;
            cov = symmetrize(&(d * cov * d.transpose() + dynamics));
        }
        let predicted: Vector2<f64> = mean.fixed_rows::<2>(0).into_owned();
        let noise = if params.birth_weighted_observations { sigma / obs.weight } else { sigma };
        let s: Matrix2<f64> = cov.fixed_view::<2, 2>(0, 0).into_owned() + noise;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let r = obs.direction - predicted;
        let log_det = s.determinant().ln();
        terms.push(-(2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * (r.transpose() * s_inv * r)[(0, 0)]);
        let gain = cov.fixed_columns::<2>(0) * s_inv;
        mean += gain * r;
        cov = symmetrize(&(cov - gain * cov.fixed_rows::<2>(0)));
    }
    (terms, StateGaussian { mean, cov })
}

/// Birth score of a window: the per-frame geometric mean of the predictive densities that
/// follow the first `birth_skip` prior-dominated frames.
pub fn birth_score(seq: &[BirthObservation], params: &TrackerParams) -> (f64, StateGaussian) {
    let (terms, state) = log_predictive_terms(seq, params);
    let kept = &terms[params.birth_skip.min(terms.len().saturating_sub(1))..];
    ((kept.iter().sum::<f64>() / kept.len() as f64).exp(), state)
}

/// Runs the hypothesis test on a complete window of `L + 1` frames; `None` if shorter.
pub fn birth_test(seq: &[BirthObservation], params: &TrackerParams) -> Option<BirthDecision> {
    if seq.len() < params.birth_window + 1 || seq.iter().any(|o| o.weight <= 0.0) {
        return None;
    }
    let (score, mut state) = birth_score(seq, params);
    normalize_direction(&mut state.mean);
    Some(BirthDecision {
        score,
        spawn: score > params.birth_threshold,
        state,
        sequence_weights: seq.iter().map(|o| o.weight).collect(),
    })
}

/// Best-scoring sequence that takes one candidate from every frame of a complete window.
/// Each frame lists its unexplained local maxima, strongest first; with a single candidate per
/// frame this is [`birth_test`] on the strongest observations.
pub fn best_birth(window: &[Vec<BirthObservation>], params: &TrackerParams) -> Option<BirthDecision> {
    if window.len() < params.birth_window + 1 || window.iter().any(|f| f.is_empty()) {
        return None;
    }
    let k = params.birth_candidates.max(1);
    let sizes: Vec<usize> = window.iter().map(|f| f.len().min(k)).collect();
    let mut index = vec![0; window.len()];
    let mut best: Option<BirthDecision> = None;
    let mut seq = Vec::with_capacity(window.len());
    loop {
        seq.clear();
        seq.extend(window.iter().zip(&index).map(|(f, &i)| f[i]));
        if let Some(d) = birth_test(&seq, params) {
            if best.as_ref().is_none_or(|b| d.score > b.score) {
                best = Some(d);
            }
        }
        let mut pos = 0;
        loop {
            if pos == index.len() {
                return best;
            }
            index[pos] += 1;
            if index[pos] < sizes[pos] {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}
