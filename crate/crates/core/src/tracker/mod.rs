//! Variational-EM multi-speaker tracker.
//!
//! Each tracker step consumes the localizer's full weight vector as a set of weighted
//! direction observations, alternates assignment (E-Z), state (E-S) and dynamics (M)
//! updates for every track, then runs the birth test on unexplained observations and
//! flags which tracks are currently speaking.

mod birth;
mod vem;

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use birth::{best_birth, birth_score, birth_test, log_predictive_terms, BirthDecision, BirthObservation};
pub use vem::{
    e_s_step, e_z_step, m_step, predict, transition_matrix, AssignmentPosterior, Prediction, StateGaussian,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerParams {
    /// Observation covariance Σ, row-major 2×2.
    pub observation_cov: [[f64; 2]; 2],
    /// Maximum number of simultaneous tracks N.
    pub max_speakers: usize,
    /// Seconds between tracker steps.
    pub dt: f64,
    /// STFT frames per tracker step.
    pub frames_per_step: usize,
    /// Density of the outlier class on the circle of directions.
    pub outlier_density: f64,
    pub iterations: usize,
    /// Birth window length L; the test uses L + 1 frames.
    pub birth_window: usize,
    pub birth_threshold: f64,
    pub birth_prior_var: f64,
    /// Dynamics covariance scale used by the birth model and given to new tracks.
    pub birth_dynamics_var: f64,
    /// Leading predictive terms left out of the birth score.
    pub birth_skip: usize,
    /// Unexplained local maxima per frame considered when forming the birth sequence.
    pub birth_candidates: usize,
    /// Scale the birth model's observation covariance by 1/w like the tracking model does.
    pub birth_weighted_observations: bool,
    pub activity_window: usize,
    pub activity_threshold: f64,
    /// Measure observation weights relative to the uniform level 1/D.
    pub subtract_uniform_weight: bool,
    /// How the weight vector becomes tracker observations.
    pub observations: ObservationMode,
    /// Remove a track after this many consecutive inactive steps.
    pub prune_after_steps: Option<usize>,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            observation_cov: [[0.03, 0.0], [0.0, 0.03]],
            max_speakers: 5,
            dt: 0.032,
            frames_per_step: 4,
            outlier_density: 1.0 / (2.0 * std::f64::consts::PI),
            iterations: 5,
            birth_window: 3,
            birth_threshold: 0.75,
            birth_prior_var: 1e4,
            birth_dynamics_var: 1e-3,
            birth_skip: 2,
            birth_candidates: 2,
            birth_weighted_observations: false,
            activity_window: 3,
            activity_threshold: 0.15,
            subtract_uniform_weight: true,
            observations: ObservationMode::Hills,
            prune_after_steps: None,
        }
    }
}

impl TrackerParams {
    pub fn observation_cov(&self) -> Matrix2<f64> {
        let c = &self.observation_cov;
        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
    }

    pub fn validate(&self) -> Result<()> {
        let cov = self.observation_cov();
        if (cov - cov.transpose()).abs().max() > 0.0 || cov.cholesky().is_none() {
            return Err(Error::Config("tracker.observation_cov must be symmetric positive definite".into()));
        }
        let checks = [
            (self.dt > 0.0, "tracker.dt must be positive"),
            (self.frames_per_step > 0, "tracker.frames_per_step must be positive"),
            (self.outlier_density > 0.0, "tracker.outlier_density must be positive"),
            (self.iterations > 0, "tracker.iterations must be positive"),
            (self.max_speakers > 0, "tracker.max_speakers must be positive"),
            (self.birth_window > 0, "tracker.birth_window must be positive"),
            (self.birth_candidates > 0, "tracker.birth_candidates must be positive"),
            (self.birth_skip <= self.birth_window, "tracker.birth_skip must not exceed tracker.birth_window"),
            (self.birth_prior_var > 0.0, "tracker.birth_prior_var must be positive"),
            (self.birth_dynamics_var > 0.0, "tracker.birth_dynamics_var must be positive"),
            (self.activity_window > 0, "tracker.activity_window must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Tracker observations derived from a weight vector over the direction grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// One observation per grid direction, weighted by its own weight.
    Grid,
    /// Each local maximum carries the total weight of the cells that climb to it.
    Hills,
}

/// Weighted direction observations of one tracker step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub step: usize,
    pub directions: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
}

impl ObservationSet {
    pub fn new(step: usize, azimuths_deg: &[f64], weights: Vec<f64>) -> Self {
        assert_eq!(azimuths_deg.len(), weights.len());
        let directions = azimuths_deg
            .iter()
            .map(|a| {
                let r = a.to_radians();
                Vector2::new(r.cos(), r.sin())
            })
            .collect();
        Self { step, directions, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Moves the weight of every hill of a circularly ordered weight profile onto its top cell,
    /// so each hill acts as one observation carrying its total weight. Directions are unchanged.
    pub fn concentrate_hills(mut self) -> Self {
        let n = self.len();
        let w = &self.weights;
        let uphill = |d: usize| {
            let (prev, next) = ((d + n - 1) % n, (d + 1) % n);
            let best = if w[next] > w[prev] { next } else { prev };
            (w[best] > w[d]).then_some(best)
        };
        let mut mass = vec![0.0; n];
        for d in (0..n).filter(|&d| w[d] > 0.0) {
            let mut top = d;
            while let Some(up) = uphill(top) {
                top = up;
            }
            mass[top] += w[d];
        }
        self.weights = mass;
        self
    }

    /// Weights measured above the uniform level, `max(0, w − 1/D)`.
    pub fn with_uniform_removed(mut self) -> Self {
        let base = 1.0 / self.weights.len() as f64;
        self.weights.iter_mut().for_each(|w| *w = (*w - base).max(0.0));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: StateGaussian,
    /// Dynamics covariance Λ.
    pub dynamics: Matrix3<f64>,
    pub birth_step: usize,
    /// Most recent per-step activity scores `Σ_d α_{dn} w_d`, newest last.
    pub activity_scores: VecDeque<f64>,
    pub active: bool,
    pub inactive_steps: usize,
}

impl Track {
    pub fn azimuth_deg(&self) -> f64 {
        self.state.mean[1].atan2(self.state.mean[0]).to_degrees()
    }

    pub fn angular_velocity_deg_s(&self) -> f64 {
        self.state.mean[2].to_degrees()
    }
}

/// Speaking iff the sum of the last `L'` activity scores exceeds δ.
pub fn activity_detect(scores: &VecDeque<f64>, params: &TrackerParams) -> bool {
    scores.iter().rev().take(params.activity_window).sum::<f64>() > params.activity_threshold
}

/// Runs the configured number of E-Z / E-S / M iterations for one step in place.
pub fn vem_frame(tracks: &mut [Track], obs: &ObservationSet, params: &TrackerParams) -> AssignmentPosterior {
    vem_frame_observed(tracks, obs, params, |_| {})
}

/// Intermediate quantities after one VEM iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub assignments: &'a AssignmentPosterior,
    pub states: &'a [StateGaussian],
    pub dynamics: &'a [Matrix3<f64>],
}

/// [`vem_frame`], calling `observe` after every iteration.
pub fn vem_frame_observed<F>(tracks: &mut [Track], obs: &ObservationSet, params: &TrackerParams, mut observe: F) -> AssignmentPosterior
where
    F: FnMut(IterationView<'_>),
{
    if tracks.is_empty() {
        return AssignmentPosterior::outliers_only(obs.len(), 0);
    }
    let predictions: Vec<Prediction> = tracks.iter().map(|t| Prediction::new(&t.state, params.dt)).collect();
    let mut current: Vec<StateGaussian> =
        tracks.iter().zip(&predictions).map(|(t, p)| p.with_dynamics(&t.dynamics)).collect();
    let mut dynamics: Vec<Matrix3<f64>> = tracks.iter().map(|t| t.dynamics).collect();
    let mut alpha = AssignmentPosterior::outliers_only(obs.len(), tracks.len());
    for iteration in 0..params.iterations {
        alpha = e_z_step(&current, obs, params);
        for (n, (state, pred)) in current.iter_mut().zip(&predictions).enumerate() {
            *state = e_s_step(&pred.with_dynamics(&dynamics[n]), obs, &alpha, n + 1, params);
        }
        for ((lambda, state), pred) in dynamics.iter_mut().zip(&current).zip(&predictions) {
            *lambda = m_step(state, pred);
        }
        observe(IterationView { iteration, assignments: &alpha, states: &current, dynamics: &dynamics });
    }
    for ((track, state), lambda) in tracks.iter_mut().zip(current).zip(dynamics) {
        track.state = state;
        track.dynamics = lambda;
    }
    alpha
}

/// Result of one tracker step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub step: usize,
    pub assignments: AssignmentPosterior,
    pub born: Vec<u64>,
    pub birth_score: Option<f64>,
}

/// Streaming tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u64,
    steps: usize,
    birth_buffer: VecDeque<Vec<BirthObservation>>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, tracks: Vec::new(), next_id: 0, steps: 0, birth_buffer: VecDeque::new() })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    /// Processes one observation set built from the localizer weights.
    pub fn step(&mut self, obs: ObservationSet) -> StepOutput {
        let obs = if self.params.subtract_uniform_weight { obs.with_uniform_removed() } else { obs };
        let obs = match self.params.observations {
            ObservationMode::Grid => obs,
            ObservationMode::Hills => obs.concentrate_hills(),
        };
        let params = &self.params;
        let alpha = vem_frame(&mut self.tracks, &obs, params);

        for (n, track) in self.tracks.iter_mut().enumerate() {
            track.activity_scores.push_back(alpha.weighted_mass(n + 1, &obs));
            while track.activity_scores.len() > params.activity_window {
                track.activity_scores.pop_front();
            }
            track.active = activity_detect(&track.activity_scores, params);
            track.inactive_steps = if track.active { 0 } else { track.inactive_steps + 1 };
        }
        if let Some(limit) = params.prune_after_steps {
            self.tracks.retain(|t| t.inactive_steps < limit);
        }

        let candidates = birth_candidates(&obs, &alpha, params.birth_candidates);
        self.birth_buffer.push_back(candidates);
        while self.birth_buffer.len() > params.birth_window + 1 {
            self.birth_buffer.pop_front();
        }

        let mut born = Vec::new();
        let mut score = None;
        if self.tracks.len() < params.max_speakers && self.birth_buffer.len() == params.birth_window + 1 {
            let window: Vec<Vec<BirthObservation>> = self.birth_buffer.iter().cloned().collect();
            if let Some(decision) = best_birth(&window, params) {
                score = Some(decision.score);
                let scores: VecDeque<f64> = decision.sequence_weights.iter().rev().take(params.activity_window).rev().copied().collect();
                if decision.spawn && activity_detect(&scores, params) {
                    let id = self.next_id;
                    self.next_id += 1;
                    log::debug!("tracker: step {} birth of track {id}, score {:.3}", self.steps, decision.score);
                    self.tracks.push(Track {
                        id,
                        state: decision.state,
                        dynamics: Matrix3::identity() * params.birth_dynamics_var,
                        birth_step: self.steps,
                        activity_scores: scores,
                        active: true,
                        inactive_steps: 0,
                    });
                    self.birth_buffer.clear();
                    born.push(id);
                }
            }
        }

        let out = StepOutput { step: self.steps, assignments: alpha, born, birth_score: score };
        self.steps += 1;
        out
    }
}

/// Outlier-assigned local maxima of the circularly ordered weights, strongest first, at most
/// `limit` of them.
fn birth_candidates(obs: &ObservationSet, alpha: &AssignmentPosterior, limit: usize) -> Vec<BirthObservation> {
    let n = obs.len();
    let w = &obs.weights;
    let is_peak = |d: usize| w[d] > w[(d + n - 1) % n] && w[d] >= w[(d + 1) % n];
    let mut peaks: Vec<usize> = (0..n).filter(|&d| w[d] > 0.0 && alpha.argmax(d) == 0 && is_peak(d)).collect();
    peaks.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    peaks.truncate(limit);
    peaks.into_iter().map(|d| BirthObservation { direction: obs.directions[d], weight: w[d] }).collect()
}

/// Direction unit vector and zero velocity for an azimuth, as a state mean.
pub fn state_mean(azimuth_deg: f64, velocity_rad_s: f64) -> Vector3<f64> {
    let r = azimuth_deg.to_radians();
    Vector3::new(r.cos(), r.sin(), velocity_rad_s)
}
