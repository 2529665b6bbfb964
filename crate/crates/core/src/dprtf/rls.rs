//! Complex recursive least squares over cross-relation rows, one microphone pair at a time.

use num_complex::Complex64;

use super::cross_relation::CrossRelationRow;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Forgetting factor giving an effective memory of `ρ (IQ - 1) / (I (I - 1) / 2)` frames:
/// `λ = (P - 1) / (P + 1)`, clamped into `(0, 1]`.
pub fn forgetting_factor(channels: usize, ctf_length: usize, rho: f64) -> f64 {
    let unknowns = (channels * ctf_length - 1) as f64;
    let pairs = (channels * (channels - 1) / 2) as f64;
    let p = rho * unknowns / pairs;
    ((p - 1.0) / (p + 1.0)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Relative-CTF estimate and inverse covariance for one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    dim: usize,
    lambda: f64,
    estimate: Vec<Complex64>,
    /// Row-major `dim x dim` inverse covariance.
    inv_cov: Vec<Complex64>,
    frames: u64,
    resets: u64,
}

impl RlsState {
    /// Zero estimate and identity inverse covariance.
    pub fn new(dim: usize, lambda: f64) -> Self {
        assert!(lambda > 0.0 && lambda <= 1.0, "forgetting factor must lie in (0, 1]");
        Self {
            dim,
            lambda,
            estimate: vec![ZERO; dim],
            inv_cov: identity(dim),
            frames: 0,
            resets: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn estimate(&self) -> &[Complex64] {
        &self.estimate
    }

    pub fn inv_cov(&self) -> &[Complex64] {
        &self.inv_cov
    }

    /// Number of frames absorbed so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Times the inverse covariance was reset after a non-finite intermediate.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// One frame of the recursion: carry the previous frame's state in (scaling the inverse
    /// covariance by `1/λ`, except on the very first frame), then absorb the pairs in order.
    pub fn frame_update(&mut self, rows: &[CrossRelationRow]) {
        let n = self.dim;
        if self.frames > 0 {
            let scale = 1.0 / self.lambda;
            self.inv_cov.iter_mut().for_each(|p| *p *= scale);
        }
        self.frames += 1;

        let mut px = vec![ZERO; n];
        let mut xp = vec![ZERO; n];
        for row in rows {
            let x = &row.regressor;
            debug_assert_eq!(x.len(), n);

            let mut err = row.target;
            for (xi, ai) in x.iter().zip(&self.estimate) {
                err -= xi * ai;
            }
            // P x*, and x^T P
            for i in 0..n {
                let prow = &self.inv_cov[i * n..(i + 1) * n];
                let mut acc = ZERO;
                for (pij, xj) in prow.iter().zip(x) {
                    acc += pij * xj.conj();
                }
                px[i] = acc;
            }
            xp.iter_mut().for_each(|v| *v = ZERO);
            for (i, xi) in x.iter().enumerate() {
                let prow = &self.inv_cov[i * n..(i + 1) * n];
                for (acc, pij) in xp.iter_mut().zip(prow) {
                    *acc += xi * pij;
                }
            }
            let mut denom = ONE;
            for (xi, pxi) in x.iter().zip(&px) {
                denom += xi * pxi;
            }
            let finite = denom.norm() > 1e-300
                && denom.is_finite()
                && err.is_finite()
                && px.iter().all(|v| v.is_finite());
            if !finite {
                log::warn!("rls: non-finite gain denominator, resetting inverse covariance");
                self.inv_cov = identity(n);
                self.resets += 1;
                continue;
            }
            let inv_denom = denom.inv();
            for i in 0..n {
                let g = px[i] * inv_denom;
                let prow = &mut self.inv_cov[i * n..(i + 1) * n];
                for (pij, xpj) in prow.iter_mut().zip(&xp) {
                    *pij -= g * xpj;
                }
                self.estimate[i] += err * g;
            }
        }
        self.symmetrize();
        if !self.estimate.iter().all(|v| v.is_finite()) {
            log::warn!("rls: non-finite estimate, resetting state");
            self.estimate.iter_mut().for_each(|v| *v = ZERO);
            self.inv_cov = identity(n);
            self.resets += 1;
        }
    }

    /// Replaces `P` by `(P + P^H) / 2`.
    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            let d = i * n + i;
            self.inv_cov[d] = Complex64::new(self.inv_cov[d].re, 0.0);
            for j in i + 1..n {
                let a = self.inv_cov[i * n + j];
                let b = self.inv_cov[j * n + i];
                let m = (a + b.conj()) * 0.5;
                self.inv_cov[i * n + j] = m;
                self.inv_cov[j * n + i] = m.conj();
            }
        }
    }
}

fn identity(n: usize) -> Vec<Complex64> {
    let mut m = vec![ZERO; n * n];
    for i in 0..n {
        m[i * n + i] = ONE;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forgetting_factor_for_four_mics_q8() {
        let lambda = forgetting_factor(4, 8, 1.0);
        assert!((lambda - 25.0 / 37.0).abs() < 1e-15);
    }

    #[test]
    fn single_scalar_iteration_by_hand() {
        let mut s = RlsState::new(1, 1.0);
        let row = CrossRelationRow {
            regressor: vec![Complex64::new(1.0, 0.0)],
            target: Complex64::new(2.0, 0.0),
        };
        s.frame_update(&[row]);
        // g = 1/(1+1) = 1/2, a = 0 + 2 * 1/2 = 1, P = 1 - 1/2 = 1/2
        assert!((s.estimate()[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s.inv_cov()[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn inverse_covariance_stays_hermitian() {
        let mut s = RlsState::new(3, 0.8);
        let mut k = 0.3f64;
        for _ in 0..40 {
            let rows: Vec<_> = (0..4)
                .map(|m| {
                    k += 0.77;
                    CrossRelationRow {
                        regressor: (0..3)
                            .map(|j| Complex64::new((k * (j + m + 1) as f64).sin(), (k * 1.3 + j as f64).cos()))
                            .collect(),
                        target: Complex64::new(k.cos(), k.sin()),
                    }
                })
                .collect();
            s.frame_update(&rows);
            let p = s.inv_cov();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((p[i * 3 + j] - p[j * 3 + i].conj()).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_denominator_resets_covariance() {
        let mut s = RlsState::new(1, 1.0);
        // 1 + x P x* = 0 with P = 1 requires |x|^2 = -1, impossible; force it through a NaN row.
        let row = CrossRelationRow {
            regressor: vec![Complex64::new(f64::NAN, 0.0)],
            target: Complex64::new(1.0, 0.0),
        };
        s.frame_update(&[row]);
        assert_eq!(s.resets(), 1);
        assert_eq!(s.inv_cov()[0], ONE);
        assert!(s.estimate()[0].is_finite());
    }
}
