//! Cross-relation rows `x̃ᵀ ã = y` for every microphone pair.

use num_complex::Complex64;

/// One linear equation in the relative CTF vector, for microphone pair `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossRelationRow {
    pub regressor: Vec<Complex64>,
    pub target: Complex64,
}

/// Microphone pairs `(i, j)` with `i < j`, in the order the recursion absorbs them.
pub fn pairs(channels: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..channels).flat_map(move |i| (i + 1..channels).map(move |j| (i, j)))
}

/// Builds the `I(I-1)/2` rows from per-channel length-`Q` vectors (`vectors[i*Q..(i+1)*Q]`).
///
/// For pair `(i, j)` the full row holds channel `j`'s vector in block `i` and the negated
/// vector of channel `i` in block `j`. The entry multiplying the first CTF coefficient of
/// `reference` is removed and its negation becomes the target.
pub fn build_cross_relations(
    vectors: &[Complex64],
    channels: usize,
    q: usize,
    reference: usize,
) -> Vec<CrossRelationRow> {
    assert!(channels >= 2 && q >= 1 && reference < channels);
    assert_eq!(vectors.len(), channels * q);
    let removed = reference * q;
    let dim = channels * q - 1;
    let zero = Complex64::new(0.0, 0.0);
    pairs(channels)
        .map(|(i, j)| {
            let mut full = vec![zero; channels * q];
            full[i * q..(i + 1) * q].copy_from_slice(&vectors[j * q..(j + 1) * q]);
            for (dst, src) in full[j * q..(j + 1) * q].iter_mut().zip(&vectors[i * q..(i + 1) * q]) {
                *dst = -src;
            }
            let target = -full[removed];
            let mut regressor = Vec::with_capacity(dim);
            regressor.extend_from_slice(&full[..removed]);
            regressor.extend_from_slice(&full[removed + 1..]);
            CrossRelationRow { regressor, target }
        })
        .collect()
}

/// Position of the first CTF coefficient of `channel` inside the reduced unknown vector.
pub fn dprtf_index(channel: usize, q: usize, reference: usize) -> Option<usize> {
    use std::cmp::Ordering::*;
    match channel.cmp(&reference) {
        Equal => None,
        Less => Some(channel * q),
        Greater => Some(channel * q - 1),
    }
}

/// Reads the direct-path relative transfer functions out of a relative-CTF estimate.
/// Entry `reference` is exactly one.
pub fn extract_dprtf(estimate: &[Complex64], channels: usize, q: usize, reference: usize) -> Vec<Complex64> {
    (0..channels)
        .map(|ch| match dprtf_index(ch, q, reference) {
            None => Complex64::new(1.0, 0.0),
            Some(k) => estimate[k],
        })
        .collect()
}

/// Relative CTF vector `ã` for a full CTF `a` (`channels * q` taps): divide by the
/// reference's first tap and drop that entry.
pub fn relative_ctf(ctf: &[Complex64], q: usize, reference: usize) -> Vec<Complex64> {
    let removed = reference * q;
    let a0 = ctf[removed];
    ctf.iter()
        .enumerate()
        .filter(|&(k, _)| k != removed)
        .map(|(_, v)| v / a0)
        .collect()
}
