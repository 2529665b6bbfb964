//! Short-time Fourier analysis with a periodic Hamming window.
//!
//! Frames start at multiples of the hop and only full frames are produced, so a signal of
//! `n` samples yields `floor((n - window) / hop) + 1` frames. The FFT size is the window
//! length rounded up to a power of two and the one-sided spectrum keeps `nfft / 2 + 1` bins.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Periodic (DFT-even) Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Framing parameters resolved to sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub window: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl Framing {
    pub fn from_ms(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let window = (window_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        if window < 2 || hop == 0 {
            return Err(Error::Input(format!(
                "window ({window} samples) and hop ({hop} samples) must be positive"
            )));
        }
        if hop > window {
            return Err(Error::Input(format!("hop ({hop}) exceeds window ({window})")));
        }
        Ok(Self { window, hop, nfft: window.next_power_of_two() })
    }

    pub fn bin_count(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            (samples - self.window) / self.hop + 1
        }
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / self.nfft as f64
    }
}

/// Complex STFT coefficients indexed by (channel, frame, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    coefficients: Vec<Complex64>,
    channels: usize,
    frames: usize,
    bins: usize,
    pub framing: Framing,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, framing: Framing, sample_rate: u32) -> Self {
        let bins = framing.bin_count();
        Self {
            coefficients: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
            channels,
            frames,
            bins,
            framing,
            sample_rate,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn bin_count(&self) -> usize {
        self.bins
    }

    #[inline]
    fn index(&self, ch: usize, t: usize, f: usize) -> usize {
        (ch * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, ch: usize, t: usize, f: usize) -> Complex64 {
        self.coefficients[self.index(ch, t, f)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, t: usize, f: usize, v: Complex64) {
        let i = self.index(ch, t, f);
        self.coefficients[i] = v;
    }

    /// All bins of one (channel, frame).
    pub fn frame(&self, ch: usize, t: usize) -> &[Complex64] {
        let start = self.index(ch, t, 0);
        &self.coefficients[start..start + self.bins]
    }

    pub fn frame_mut(&mut self, ch: usize, t: usize) -> &mut [Complex64] {
        let start = self.index(ch, t, 0);
        &mut self.coefficients[start..start + self.bins]
    }
}

/// Reusable single-frame analyzer; the streaming pipeline calls it once per hop.
#[derive(Clone)]
pub struct FrameAnalyzer {
    framing: Framing,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FrameAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameAnalyzer").field("framing", &self.framing).finish()
    }
}

impl FrameAnalyzer {
    pub fn new(framing: Framing) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(framing.nfft);
        Self { framing, window: hamming(framing.window), fft }
    }

    pub fn framing(&self) -> Framing {
        self.framing
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Transforms `frame` (exactly one window of samples) into `out` (`bin_count` values).
    pub fn analyze(&self, frame: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(frame.len(), self.framing.window);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.framing.nfft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        out.copy_from_slice(&buf[..self.framing.bin_count()]);
    }
}

/// Analyzes every channel of `audio`.
pub fn analyze(audio: &AudioBuffer, window_ms: f64, hop_ms: f64) -> Result<Spectrogram> {
    let framing = Framing::from_ms(audio.sample_rate(), window_ms, hop_ms)?;
    analyze_with(audio, framing)
}

pub fn analyze_with(audio: &AudioBuffer, framing: Framing) -> Result<Spectrogram> {
    if let Some(v) = audio.channels().iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite sample {v}")));
    }
    let frames = framing.frame_count(audio.len());
    if frames == 0 {
        return Err(Error::EmptySpectrogram { needed: framing.window, found: audio.len() });
    }
    let analyzer = FrameAnalyzer::new(framing);
    let mut spec = Spectrogram::zeros(audio.channel_count(), frames, framing, audio.sample_rate());
    for ch in 0..audio.channel_count() {
        let x = audio.channel(ch);
        for t in 0..frames {
            let start = t * framing.hop;
            analyzer.analyze(&x[start..start + framing.window], spec.frame_mut(ch, t));
        }
    }
    Ok(spec)
}
