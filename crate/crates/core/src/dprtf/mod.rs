//! Online direct-path relative transfer function (DP-RTF) features.
//!
//! Per frequency bin, the estimator keeps the last `Q` STFT coefficients of every channel,
//! their recursive cross-PSD with the reference channel, and two RLS instances that
//! identify the relative CTF with channel 0 and channel 1 as reference. Noise frames only
//! refresh the noise PSD; the RLS state is untouched until the next speech frame.

mod consistency;
mod cross_relation;
mod psd;
mod rls;

use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use consistency::{consistency_test, normalize_feature, similarity, Consistency};
pub use cross_relation::{build_cross_relations, dprtf_index, extract_dprtf, pairs, relative_ctf, CrossRelationRow};
pub use psd::{FrameClass, PsdState, SlidingMin};
pub use rls::{forgetting_factor, RlsState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DprtfParams {
    /// CTF length `Q` in frames.
    pub ctf_length: usize,
    /// Equations-per-unknown ratio setting the RLS memory.
    pub rho: f64,
    /// Cross-PSD smoothing factor β.
    pub psd_smoothing: f64,
    /// Smoothing of the reference auto-PSD used only for speech/noise classification.
    pub classifier_smoothing: f64,
    /// Speech iff level > κ · sliding minimum.
    pub kappa: f64,
    /// Sliding-minimum window in seconds.
    pub min_window_s: f64,
    pub consistency_threshold: f64,
    /// Classify frames and subtract the noise PSD; when off, rows are built directly from
    /// the STFT convolution vectors and every frame is used.
    pub noise_reduction: bool,
    /// Minimum modulus of the second reference's channel-0 estimate.
    pub reference_guard: f64,
}

impl Default for DprtfParams {
    fn default() -> Self {
        Self {
            ctf_length: 8,
            rho: 1.0,
            psd_smoothing: 0.9,
            classifier_smoothing: 0.9,
            kappa: 3.0,
            min_window_s: 1.5,
            consistency_threshold: 0.75,
            noise_reduction: true,
            reference_guard: 1e-12,
        }
    }
}

impl DprtfParams {
    pub fn validate(&self) -> crate::Result<()> {
        let checks = [
            (self.ctf_length >= 1, "dprtf.ctf_length must be at least 1"),
            (self.rho > 0.0, "dprtf.rho must be positive"),
            (self.psd_smoothing > 0.0 && self.psd_smoothing < 1.0, "dprtf.psd_smoothing must lie in (0, 1)"),
            (
                self.classifier_smoothing >= 0.0 && self.classifier_smoothing < 1.0,
                "dprtf.classifier_smoothing must lie in [0, 1)",
            ),
            (self.kappa > 0.0, "dprtf.kappa must be positive"),
            (self.min_window_s > 0.0, "dprtf.min_window_s must be positive"),
            (self.consistency_threshold >= 0.0, "dprtf.consistency_threshold must be non-negative"),
            (self.reference_guard >= 0.0, "dprtf.reference_guard must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(crate::Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

/// One validated feature `ĉ^i_{t,f}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub bin: usize,
    pub channel: usize,
    pub value: Complex64,
}

/// All features of one frame; empty during silence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub frame: usize,
    pub features: Vec<Feature>,
    /// Bins classified as speech this frame.
    pub speech_bins: usize,
}

impl FeatureSet {
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone)]
struct BinState {
    bin: usize,
    /// Channel-major convolution vectors, newest coefficient first.
    history: Vec<Complex64>,
    psd: PsdState,
    rls: [RlsState; 2],
    class: FrameClass,
}

#[derive(Debug, Clone)]
pub struct DprtfEstimator {
    params: DprtfParams,
    channels: usize,
    bins: Vec<BinState>,
    frame: usize,
}

impl DprtfEstimator {
    /// `bins` is the range of frequency bins to process; `frame_rate` is STFT frames per second.
    pub fn new(params: DprtfParams, channels: usize, bins: Range<usize>, frame_rate: f64) -> Self {
        assert!(channels >= 2, "DP-RTF estimation needs at least two channels");
        let q = params.ctf_length;
        let lambda = forgetting_factor(channels, q, params.rho);
        let dim = channels * q - 1;
        let min_window = (params.min_window_s * frame_rate).round().max(1.0) as usize;
        let bins = bins
            .map(|bin| BinState {
                bin,
                history: vec![Complex64::new(0.0, 0.0); channels * q],
                psd: PsdState::new(
                    channels,
                    q,
                    params.psd_smoothing,
                    params.kappa,
                    min_window,
                    params.classifier_smoothing,
                ),
                rls: [RlsState::new(dim, lambda), RlsState::new(dim, lambda)],
                class: FrameClass::Noise,
            })
            .collect();
        Self { params, channels, bins, frame: 0 }
    }

    pub fn params(&self) -> &DprtfParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.bins.first().map_or(1.0, |b| b.rls[0].lambda())
    }

    /// Consumes one STFT frame (`frame[ch][bin]` over the full one-sided spectrum).
    pub fn process_frame<S: AsRef<[Complex64]> + Sync>(&mut self, frame: &[S]) -> FeatureSet {
        assert_eq!(frame.len(), self.channels);
        let params = &self.params;
        let channels = self.channels;
        let per_bin: Vec<(bool, Vec<Feature>)> = self
            .bins
            .par_iter_mut()
            .map(|state| state.step(frame, channels, params))
            .collect();
        let t = self.frame;
        self.frame += 1;
        let speech_bins = per_bin.iter().filter(|(s, _)| *s).count();
        FeatureSet {
            frame: t,
            features: per_bin.into_iter().flat_map(|(_, f)| f).collect(),
            speech_bins,
        }
    }

    /// Current DP-RTF estimates (indexed by channel) of `bin` with the given reference.
    pub fn dprtf(&self, bin: usize, reference: usize) -> Option<Vec<Complex64>> {
        let state = self.bins.iter().find(|b| b.bin == bin)?;
        Some(extract_dprtf(state.rls[reference].estimate(), self.channels, self.params.ctf_length, reference))
    }

    pub fn rls_state(&self, bin: usize, reference: usize) -> Option<&RlsState> {
        self.bins.iter().find(|b| b.bin == bin).map(|b| &b.rls[reference])
    }

    pub fn frame_class(&self, bin: usize) -> Option<FrameClass> {
        self.bins.iter().find(|b| b.bin == bin).map(|b| b.class)
    }

    pub fn psd_state(&self, bin: usize) -> Option<&PsdState> {
        self.bins.iter().find(|b| b.bin == bin).map(|b| &b.psd)
    }
}

impl BinState {
    fn step<S: AsRef<[Complex64]>>(&mut self, frame: &[S], channels: usize, params: &DprtfParams) -> (bool, Vec<Feature>) {
        let q = params.ctf_length;
        for (ch, coeffs) in frame.iter().enumerate() {
            let block = &mut self.history[ch * q..(ch + 1) * q];
            block.rotate_right(1);
            block[0] = coeffs.as_ref()[self.bin];
        }

        let vectors = if params.noise_reduction {
            self.psd.recursive_psd(&self.history, self.history[0]);
            self.class = self.psd.classify();
            if self.class == FrameClass::Noise {
                self.psd.mark_noise();
                return (false, Vec::new());
            }
            match self.psd.spectral_subtract() {
                Some(v) => v,
                None => {
                    log::debug!("bin {}: speech frame before any noise frame, skipped", self.bin);
                    return (true, Vec::new());
                }
            }
        } else {
            self.class = FrameClass::Speech;
            self.history.clone()
        };

        for (reference, rls) in self.rls.iter_mut().enumerate() {
            let rows = build_cross_relations(&vectors, channels, q, reference);
            rls.frame_update(&rows);
        }
        let first = extract_dprtf(self.rls[0].estimate(), channels, q, 0);
        let second = extract_dprtf(self.rls[1].estimate(), channels, q, 1);
        let mut kept = Vec::new();
        if consistency_test(&first, &second, params.consistency_threshold, params.reference_guard, &mut kept)
            == Consistency::DegenerateReference
        {
            log::debug!("bin {}: degenerate second-reference estimate, skipped", self.bin);
        }
        let features = kept
            .into_iter()
            .map(|(channel, value)| Feature { bin: self.bin, channel, value })
            .collect();
        (true, features)
    }
}
