//! Dual-reference consistency test and feature normalization.

use num_complex::Complex64;

/// Maps a complex ratio into the unit disk: `c / sqrt(1 + |c|^2)`.
pub fn normalize_feature(c: Complex64) -> Complex64 {
    c / (1.0 + c.norm_sqr()).sqrt()
}

/// Cosine similarity `|c1ᴴ c2| / (‖c1‖ ‖c2‖)` of `c1 = (1, a)` and `c2 = (1, b)`.
pub fn similarity(a: Complex64, b: Complex64) -> f64 {
    let inner = Complex64::new(1.0, 0.0) + a.conj() * b;
    inner.norm() / ((1.0 + a.norm_sqr()) * (1.0 + b.norm_sqr())).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Consistency {
    /// The test ran; consistent channels (possibly none) were emitted.
    Passed,
    /// The second reference's estimate of channel 1 is too small to divide by.
    DegenerateReference,
}

/// Compares DP-RTFs estimated with reference 0 (`first`) and reference 1 (`second`), both
/// indexed by channel. Consistent channels are pushed to `out` as `(channel, ĉ)`.
pub fn consistency_test(
    first: &[Complex64],
    second: &[Complex64],
    threshold: f64,
    guard: f64,
    out: &mut Vec<(usize, Complex64)>,
) -> Consistency {
    debug_assert_eq!(first.len(), second.len());
    let denom = second[0];
    if denom.norm() < guard {
        return Consistency::DegenerateReference;
    }
    for ch in 1..first.len() {
        let a = first[ch];
        let b = second[ch] / denom;
        if !(a.is_finite() && b.is_finite()) {
            continue;
        }
        if similarity(a, b) > threshold {
            out.push((ch, normalize_feature((a + b) * 0.5)));
        }
    }
    Consistency::Passed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identical_estimates_are_kept() {
        let first = [c(1.0, 0.0), c(0.3, -0.7), c(-1.2, 0.4)];
        let d = c(0.8, 0.1);
        let second = [d, first[1] * d, first[2] * d];
        assert!((similarity(first[1], second[1] / d) - 1.0).abs() < 1e-12);
        let mut out = Vec::new();
        assert_eq!(consistency_test(&first, &second, 0.999, 1e-12, &mut out), Consistency::Passed);
        assert_eq!(out.len(), 2);
        assert!((out[0].1 - normalize_feature(first[1])).norm() < 1e-12);
        assert!(out.iter().all(|(_, v)| v.norm() <= 1.0));
    }

    #[test]
    fn orthogonal_pair_is_rejected() {
        assert!(similarity(c(0.0, 1.0), c(0.0, -1.0)).abs() < 1e-15);
        let mut out = Vec::new();
        consistency_test(&[c(1.0, 0.0), c(0.0, 1.0)], &[c(1.0, 0.0), c(0.0, -1.0)], 0.75, 1e-12, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn tiny_reference_is_degenerate() {
        let mut out = Vec::new();
        let r = consistency_test(&[c(1.0, 0.0), c(0.5, 0.0)], &[c(1e-13, 0.0), c(1.0, 0.0)], 0.75, 1e-12, &mut out);
        assert_eq!(r, Consistency::DegenerateReference);
    }
}
