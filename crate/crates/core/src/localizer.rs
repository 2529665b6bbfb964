//! Frame-wise multi-speaker localization over the candidate grid.
//!
//! Each observed feature is modeled by a complex Gaussian mixture whose components sit on
//! the predicted features of the candidate directions. The mixture weights are updated
//! once per frame by an exponentiated-gradient step on the normalized negative
//! log-likelihood plus an entropy penalty, relax toward uniform on frames without
//! features, and are spatially smoothed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::angle::circular_diff_deg;
use crate::dprtf::FeatureSet;
use crate::steering::CandidateGrid;

const EXPONENT_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerParams {
    /// Component variance σ².
    pub variance: f64,
    /// Exponentiated-gradient step η.
    pub step: f64,
    /// Entropy regularization weight γ.
    pub entropy_weight: f64,
    /// Relaxation toward uniform on frames without features, η'.
    pub silent_decay: f64,
    /// Neighbor weight of the circular smoothing kernel.
    pub smoothing: f64,
    pub peak_threshold: f64,
    pub min_separation_deg: f64,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        Self {
            variance: 0.1,
            step: 0.07,
            entropy_weight: 0.1,
            silent_decay: 0.065,
            smoothing: 0.02,
            peak_threshold: 0.04,
            min_separation_deg: 15.0,
        }
    }
}

/// Mixture weights over the candidate directions; positive and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(d: usize) -> Self {
        assert!(d > 0);
        Self(vec![1.0 / d as f64; d])
    }

    /// Normalizes `values` onto the simplex. Panics if they are not all positive.
    pub fn from_unnormalized(values: Vec<f64>) -> Self {
        assert!(values.iter().all(|&v| v > 0.0 && v.is_finite()), "weights must be positive and finite");
        let total: f64 = values.iter().sum();
        Self(values.into_iter().map(|v| v / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        (0..self.0.len()).max_by(|&a, &b| self.0[a].total_cmp(&self.0[b]).then(b.cmp(&a))).unwrap_or(0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }
}

/// Component densities, stored feature-major: `values[k * D + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Likelihoods {
    directions: usize,
    values: Vec<f64>,
}

impl Likelihoods {
    pub fn from_values(directions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % directions, 0);
        Self { directions, values }
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn feature_count(&self) -> usize {
        self.values.len() / self.directions
    }

    pub fn feature(&self, k: usize) -> &[f64] {
        &self.values[k * self.directions..(k + 1) * self.directions]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { directions: self.directions, values: self.values.iter().map(|v| v * factor).collect() }
    }
}

/// Complex-Gaussian density `exp(−|ĉ − c|² / σ²) / (π σ²)` of every feature under every direction.
pub fn component_likelihoods(features: &FeatureSet, grid: &CandidateGrid, variance: f64) -> Likelihoods {
    let d = grid.len();
    let norm = 1.0 / (PI * variance);
    let mut values = Vec::with_capacity(features.len() * d);
    for feat in &features.features {
        for c in grid.predicted(feat.bin, feat.channel) {
            values.push(norm * (-(feat.value - c).norm_sqr() / variance).exp());
        }
    }
    Likelihoods { directions: d, values }
}

/// `∂L_t/∂w_d = −(1/|C_t|) Σ_k L[k,d] / Σ_d' w_d' L[k,d']` evaluated at `w`.
pub fn nll_gradient(w: &WeightVector, lik: &Likelihoods) -> Vec<f64> {
    let d = lik.directions();
    let n = lik.feature_count();
    assert!(n > 0, "gradient needs at least one feature");
    let mut grad = vec![0.0; d];
    for k in 0..n {
        let row = lik.feature(k);
        let mix: f64 = row.iter().zip(w.as_slice()).map(|(l, w)| l * w).sum();
        for (g, l) in grad.iter_mut().zip(row) {
            *g -= l / mix;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    grad
}

/// One exponentiated-gradient step on `L_t + γ H` from `w`.
pub fn eg_update(w: &WeightVector, lik: &Likelihoods, params: &LocalizerParams) -> WeightVector {
    let grad = nll_gradient(w, lik);
    let mut clamped = false;
    let updated: Vec<f64> = grad
        .iter()
        .zip(w.as_slice())
        .map(|(&g, &wd)| {
            let entropy_grad = -(1.0 + wd.ln());
            let exponent = -params.step * (g + params.entropy_weight * entropy_grad);
            let e = exponent.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
            clamped |= e != exponent;
            wd * e.exp()
        })
        .collect();
    if clamped {
        log::warn!("localizer: exponentiated-gradient exponent clamped to ±{EXPONENT_CLAMP}");
    }
    let total: f64 = updated.iter().sum();
    WeightVector(floor_positive(updated.into_iter().map(|v| v / total).collect()))
}

/// `w ← (1 − η') w + η' / D`.
pub fn silent_decay(w: &WeightVector, rate: f64) -> WeightVector {
    let u = rate / w.len() as f64;
    WeightVector(w.0.iter().map(|&x| (1.0 - rate) * x + u).collect())
}

/// `w_d ← (w_d + s w_{d−1} + s w_{d+1}) / (1 + 2s)` with circular neighbors, then renormalized.
pub fn spatial_smooth(w: &WeightVector, neighbor: f64) -> WeightVector {
    let d = w.len();
    let x = &w.0;
    let smoothed: Vec<f64> = (0..d)
        .map(|i| (x[i] + neighbor * x[(i + d - 1) % d] + neighbor * x[(i + 1) % d]) / (1.0 + 2.0 * neighbor))
        .collect();
    let total: f64 = smoothed.iter().sum();
    WeightVector(smoothed.into_iter().map(|v| v / total).collect())
}

// Keeps every weight strictly positive after normalization; exp() can underflow to zero
// after long runs of a near-zero weight.
fn floor_positive(mut w: Vec<f64>) -> Vec<f64> {
    if w.iter().any(|&v| v <= 0.0) {
        w.iter_mut().for_each(|v| *v = v.max(f64::MIN_POSITIVE));
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub azimuth_deg: f64,
    pub weight: f64,
}

/// Circular local maxima above `threshold`, kept greedily by descending weight while
/// staying at least `min_separation_deg` from every kept peak.
pub fn peak_select(w: &WeightVector, azimuths: &[f64], threshold: f64, min_separation_deg: f64) -> Vec<Peak> {
    let d = w.len();
    let x = w.as_slice();
    let mut candidates: Vec<Peak> = (0..d)
        .filter(|&i| {
            let prev = x[(i + d - 1) % d];
            let next = x[(i + 1) % d];
            x[i] > threshold && x[i] > prev && x[i] >= next
        })
        .map(|i| Peak { index: i, azimuth_deg: azimuths[i], weight: x[i] })
        .collect();
    candidates.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)));
    let mut kept: Vec<Peak> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| circular_diff_deg(k.azimuth_deg, c.azimuth_deg) >= min_separation_deg) {
            kept.push(c);
        }
    }
    kept
}

/// Stateful localizer: one weight vector carried across frames.
#[derive(Debug, Clone)]
pub struct Localizer {
    grid: CandidateGrid,
    params: LocalizerParams,
    weights: WeightVector,
}

impl Localizer {
    pub fn new(grid: CandidateGrid, params: LocalizerParams) -> Self {
        let weights = WeightVector::uniform(grid.len());
        Self { grid, params, weights }
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn params(&self) -> &LocalizerParams {
        &self.params
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    /// Advances one frame and returns the smoothed weights.
    pub fn step(&mut self, features: &FeatureSet) -> &WeightVector {
        let updated = if features.is_empty() {
            silent_decay(&self.weights, self.params.silent_decay)
        } else {
            let lik = component_likelihoods(features, &self.grid, self.params.variance);
            eg_update(&self.weights, &lik, &self.params)
        };
        self.weights = spatial_smooth(&updated, self.params.smoothing);
        &self.weights
    }

    pub fn peaks(&self) -> Vec<Peak> {
        peak_select(&self.weights, self.grid.azimuths(), self.params.peak_threshold, self.params.min_separation_deg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lik(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Likelihoods {
        Likelihoods::from_values(d, (0..d * n).map(|_| rng.random_range(0.01..3.0)).collect())
    }

    fn nll(w: &[f64], lik: &Likelihoods) -> f64 {
        let n = lik.feature_count();
        -(0..n)
            .map(|k| lik.feature(k).iter().zip(w).map(|(l, w)| l * w).sum::<f64>().ln())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn density_values() {
        use crate::dprtf::{Feature, FeatureSet};
        use crate::steering::{ArrayGeometry, CandidateGrid};
        use num_complex::Complex64;
        let geom = ArrayGeometry::square(0.1);
        let grid = CandidateGrid::from_geometry(&geom, vec![0.0, 90.0], 5, 8, 16000).unwrap();
        let c = grid.predicted(2, 1)[0];
        let shifted = c + Complex64::new(0.1f64.sqrt(), 0.0);
        let fs = FeatureSet {
            frame: 0,
            features: vec![
                Feature { bin: 2, channel: 1, value: c },
                Feature { bin: 2, channel: 1, value: shifted },
            ],
            speech_bins: 1,
        };
        let lik = component_likelihoods(&fs, &grid, 0.1);
        assert!((lik.feature(0)[0] - 1.0 / (PI * 0.1)).abs() < 1e-12);
        assert!((lik.feature(1)[0] - (-1.0f64).exp() / (0.1 * PI)).abs() < 1e-12);
        assert!((lik.feature(1)[0] - 1.1709).abs() < 1e-4);
    }

    #[test]
    fn gradient_special_cases() {
        let lik = Likelihoods::from_values(1, vec![0.3, 2.0, 7.0]);
        assert_eq!(nll_gradient(&WeightVector::uniform(1), &lik), vec![-1.0]);
        let equal = Likelihoods::from_values(4, vec![0.8; 8]);
        let w = WeightVector::from_unnormalized(vec![1.0, 2.0, 3.0, 4.0]);
        for g in nll_gradient(&w, &equal) {
            assert!((g + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lik = random_lik(&mut rng, 5, 10);
        let w = WeightVector::from_unnormalized((0..5).map(|_| rng.random_range(0.1..1.0)).collect());
        let grad = nll_gradient(&w, &lik);
        let h = 1e-6;
        for d in 0..5 {
            let mut plus = w.as_slice().to_vec();
            let mut minus = w.as_slice().to_vec();
            plus[d] += h;
            minus[d] -= h;
            let fd = (nll(&plus, &lik) - nll(&minus, &lik)) / (2.0 * h);
            assert!((fd - grad[d]).abs() < 1e-6, "d={d} fd={fd} grad={}", grad[d]);
        }
    }

    #[test]
    fn equal_multipliers_leave_weights_unchanged() {
        let lik = Likelihoods::from_values(3, vec![1.0; 6]);
        let w = WeightVector::uniform(3);
        let params = LocalizerParams { entropy_weight: 0.0, ..Default::default() };
        let out = eg_update(&w, &lik, &params);
        for (a, b) in out.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn most_likely_direction_gains_weight() {
        // direction 1 has the largest likelihood mass for both features
        let lik = Likelihoods::from_values(3, vec![0.2, 1.5, 0.4, 0.3, 1.1, 0.2]);
        let w = WeightVector::uniform(3);
        let params = LocalizerParams { entropy_weight: 0.0, ..Default::default() };
        let out = eg_update(&w, &lik, &params);
        assert!(out.as_slice()[1] > 1.0 / 3.0);
        assert!(out.as_slice()[0] < 1.0 / 3.0 && out.as_slice()[2] < 1.0 / 3.0);
    }

    #[test]
    fn silent_decay_cases() {
        let u = WeightVector::uniform(8);
        assert_eq!(silent_decay(&u, 0.065), u);
        let mut one_hot = vec![1e-300; 8];
        one_hot[3] = 1.0;
        let w = WeightVector(one_hot);
        let out = silent_decay(&w, 0.065);
        assert!((out.as_slice()[3] - (1.0 - 0.065 + 0.065 / 8.0)).abs() < 1e-12);
        let mut cur = w;
        let mut dist = 1.0 - 1.0 / 8.0;
        for _ in 0..100 {
            cur = silent_decay(&cur, 0.065);
            let new_dist = cur.as_slice()[3] - 1.0 / 8.0;
            assert!((new_dist - dist * (1.0 - 0.065)).abs() < 1e-12);
            dist = new_dist;
        }
    }

    #[test]
    fn smoothing_cases() {
        let u = WeightVector::uniform(10);
        for v in spatial_smooth(&u, 0.02).as_slice() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let mut x = vec![0.0; 10];
        x[0] = 1.0;
        let out = spatial_smooth(&WeightVector(x), 0.02);
        assert!((out.as_slice()[0] - 1.0 / 1.04).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.02 / 1.04).abs() < 1e-15);
        assert!((out.as_slice()[9] - 0.02 / 1.04).abs() < 1e-15);
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peaks() {
        let az: Vec<f64> = crate::steering::azimuth_grid(72);
        assert!(peak_select(&WeightVector::uniform(72), &az, 0.02, 15.0).is_empty());
        let mut x = vec![1e-6; 72];
        x[40] = 1.0;
        let p = peak_select(&WeightVector::from_unnormalized(x), &az, 0.1, 15.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].azimuth_deg, az[40]);

        // two Gaussian bumps 60 degrees apart
        let centers = [10usize, 22];
        let x: Vec<f64> = (0..72)
            .map(|d| {
                centers
                    .iter()
                    .map(|&c| {
                        let dd = circular_diff_deg(az[d], az[c]) / 5.0;
                        (-(dd * dd) / 2.0).exp()
                    })
                    .sum::<f64>()
                    + 1e-9
            })
            .collect();
        let p = peak_select(&WeightVector::from_unnormalized(x), &az, 0.05, 15.0);
        let mut found: Vec<usize> = p.iter().map(|p| p.index).collect();
        found.sort();
        assert_eq!(found, vec![10, 22]);
    }

    #[test]
    fn entropy_penalty_sharpens() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..12).map(|d| if d == 4 { 2.0 } else { 1.0 }).collect();
        let stream: Vec<Likelihoods> = (0..50)
            .map(|_| {
                Likelihoods::from_values(12, (0..12 * 6).map(|k| base[k % 12] * rng.random_range(0.5..1.5)).collect())
            })
            .collect();
        let run = |gamma: f64| {
            let params = LocalizerParams { entropy_weight: gamma, ..Default::default() };
            let mut w = WeightVector::uniform(12);
            for _ in 0..20 {
                for lik in &stream {
                    w = eg_update(&w, lik, &params);
                }
            }
            w.entropy()
        };
        assert!(run(0.1) < run(0.0));
    }

    proptest! {
        #[test]
        fn eg_is_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lik = random_lik(&mut rng, 6, 4);
            let w = WeightVector::from_unnormalized((0..6).map(|_| rng.random_range(0.05..1.0)).collect());
            let params = LocalizerParams::default();
            let a = eg_update(&w, &lik, &params);
            let b = eg_update(&w, &lik.scaled(scale), &params);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
