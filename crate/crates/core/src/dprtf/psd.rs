//! Recursive cross/auto-PSD of convolution vectors, minimum-statistics speech/noise
//! classification and inter-frame spectral subtraction for one frequency bin.

use std::collections::VecDeque;

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameClass {
    Speech,
    Noise,
}

/// Sliding-window minimum over the last `window` pushed values.
#[derive(Debug, Clone)]
pub struct SlidingMin {
    window: usize,
    count: u64,
    /// (push index, value), values strictly increasing front to back.
    deque: VecDeque<(u64, f64)>,
}

impl SlidingMin {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), count: 0, deque: VecDeque::new() }
    }

    pub fn push(&mut self, value: f64) {
        while self.deque.back().is_some_and(|&(_, v)| v >= value) {
            self.deque.pop_back();
        }
        self.deque.push_back((self.count, value));
        self.count += 1;
        let oldest = self.count.saturating_sub(self.window as u64);
        while self.deque.front().is_some_and(|&(i, _)| i < oldest) {
            self.deque.pop_front();
        }
    }

    pub fn min(&self) -> Option<f64> {
        self.deque.front().map(|&(_, v)| v)
    }

    pub fn is_warm(&self) -> bool {
        self.count > 0
    }
}

/// PSD state for one bin: `channels` Q-vectors of cross-PSD with the reference frame.
#[derive(Debug, Clone)]
pub struct PsdState {
    channels: usize,
    q: usize,
    beta: f64,
    kappa: f64,
    /// `φ^i_{t,f}`, flattened channel-major.
    smoothed: Vec<Complex64>,
    /// `φ` at the most recent noise frame.
    noise: Option<Vec<Complex64>>,
    /// Reference auto-PSD feeding the classifier, smoothed with `classifier_beta`.
    level: f64,
    classifier_beta: f64,
    min_tracker: SlidingMin,
    frames: u64,
}

impl PsdState {
    pub fn new(channels: usize, q: usize, beta: f64, kappa: f64, min_window: usize, classifier_beta: f64) -> Self {
        assert!(beta > 0.0 && beta < 1.0, "smoothing factor must lie in (0, 1)");
        Self {
            channels,
            q,
            beta,
            kappa,
            smoothed: vec![Complex64::new(0.0, 0.0); channels * q],
            noise: None,
            level: 0.0,
            classifier_beta,
            min_tracker: SlidingMin::new(min_window),
            frames: 0,
        }
    }

    pub fn smoothed(&self) -> &[Complex64] {
        &self.smoothed
    }

    pub fn noise(&self) -> Option<&[Complex64]> {
        self.noise.as_deref()
    }

    /// `φ^i ← β φ^i + (1 − β) x^i conj(x^1_t)` for every channel, where `conv` holds the
    /// channel-major convolution vectors and `reference` is the current reference coefficient.
    /// The first frame seeds both recursions with its instantaneous value.
    pub fn recursive_psd(&mut self, conv: &[Complex64], reference: Complex64) {
        debug_assert_eq!(conv.len(), self.smoothed.len());
        let periodogram = reference.norm_sqr();
        if self.frames == 0 {
            for (phi, x) in self.smoothed.iter_mut().zip(conv) {
                *phi = x * reference.conj();
            }
            self.level = periodogram;
        } else {
            let r = reference.conj() * (1.0 - self.beta);
            for (phi, x) in self.smoothed.iter_mut().zip(conv) {
                *phi = *phi * self.beta + x * r;
            }
            // equals Re(φ^1[0]) when the classifier shares β
            self.level = self.classifier_beta * self.level + (1.0 - self.classifier_beta) * periodogram;
        }
        self.frames += 1;
        self.min_tracker.push(self.level);
    }

    /// Reference auto-PSD level used for classification.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// Speech iff the level strictly exceeds `κ` times its sliding minimum.
    pub fn classify(&self) -> FrameClass {
        match self.min_tracker.min() {
            Some(min) if self.level > self.kappa * min => FrameClass::Speech,
            _ => FrameClass::Noise,
        }
    }

    /// Remembers the current PSD as the latest noise estimate.
    pub fn mark_noise(&mut self) {
        match &mut self.noise {
            Some(n) => n.copy_from_slice(&self.smoothed),
            None => self.noise = Some(self.smoothed.clone()),
        }
    }

    /// Current PSD minus the most recent noise-frame PSD, or `None` before any noise frame.
    pub fn spectral_subtract(&self) -> Option<Vec<Complex64>> {
        let noise = self.noise.as_ref()?;
        Some(self.smoothed.iter().zip(noise).map(|(s, n)| s - n).collect())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ctf_length(&self) -> usize {
        self.q
    }
}
