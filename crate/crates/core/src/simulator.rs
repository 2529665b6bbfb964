//! Synthetic multichannel scenes with known ground truth.
//!
//! Sources follow piecewise-linear azimuth trajectories in the far field of the array and
//! reach each microphone through a fractional delay. Optional reverberation convolves every
//! (channel, bin) of the direct-path STFT with a short planted filter whose first tap is one,
//! so the direct path stays the first CTF coefficient. Spatially white noise is added last.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::angle::wrap_deg;
use crate::audio::{read_wav_channels, AudioBuffer};
use crate::error::{Error, Result};
use crate::steering::{tdoa, ArrayGeometry};
use crate::stft::{FrameAnalyzer, Framing, Spectrogram};

const SINC_HALF: i64 = 16;
const RAMP_S: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Excitation {
    White,
    /// White noise gated into syllable-like bursts inside each activity interval.
    WhiteBurst {
        #[serde(default = "default_on_ms")]
        on_ms: [f64; 2],
        #[serde(default = "default_off_ms")]
        off_ms: [f64; 2],
    },
    /// White noise through a one-pole low-pass at 500 Hz (−6 dB/octave above it).
    SpeechShaped,
    /// First channel of a WAV file, looped over the scene.
    Wav { path: PathBuf },
}

fn default_on_ms() -> [f64; 2] {
    [120.0, 300.0]
}

fn default_off_ms() -> [f64; 2] {
    [40.0, 120.0]
}

impl Default for Excitation {
    fn default() -> Self {
        Excitation::WhiteBurst { on_ms: default_on_ms(), off_ms: default_off_ms() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub trajectory: Vec<Waypoint>,
    /// Active intervals `[start, end)` in seconds.
    pub activity: Vec<[f64; 2]>,
    #[serde(default)]
    pub excitation: Excitation,
    /// RMS of the excitation over its active intervals.
    #[serde(default = "one")]
    pub level: f64,
}

fn one() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn fixed(azimuth_deg: f64, activity: Vec<[f64; 2]>) -> Self {
        Self {
            trajectory: vec![Waypoint { t_s: 0.0, azimuth_deg }],
            activity,
            excitation: Excitation::default(),
            level: 1.0,
        }
    }

    /// Azimuth at time `t`, linear between waypoints and held beyond the ends.
    pub fn azimuth_at(&self, t: f64) -> f64 {
        let tr = &self.trajectory;
        let k = tr.partition_point(|w| w.t_s <= t);
        let a = if k == 0 {
            tr[0].azimuth_deg
        } else if k == tr.len() {
            tr[k - 1].azimuth_deg
        } else {
            let (p, q) = (tr[k - 1], tr[k]);
            p.azimuth_deg + (q.azimuth_deg - p.azimuth_deg) * (t - p.t_s) / (q.t_s - p.t_s)
        };
        wrap_deg(a)
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.activity.iter().any(|&[s, e]| t >= s && t < e)
    }

    pub fn is_static(&self) -> bool {
        self.trajectory.windows(2).all(|w| w[0].azimuth_deg == w[1].azimuth_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reverb {
    #[default]
    Off,
    Ctf {
        decay_s: f64,
        drr_db: f64,
        #[serde(default = "default_taps")]
        taps: usize,
    },
}

fn default_taps() -> usize {
    8
}

/// Additive noise, either relative to the sources (`snr_db`) or absolute (`rms`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub rms: Option<f64>,
    /// Recorded multichannel noise, looped; white noise when absent.
    #[serde(default)]
    pub stem: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { window_ms: 16.0, hop_ms: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub seed: u64,
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub reverb: Reverb,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

fn default_rate() -> u32 {
    16000
}

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn framing(&self) -> Result<Framing> {
        Framing::from_ms(self.sample_rate, self.analysis.window_ms, self.analysis.hop_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return spec_err("duration_s and sample_rate must be positive".into());
        }
        self.geometry.validate()?;
        for (k, s) in self.sources.iter().enumerate() {
            if s.trajectory.is_empty() {
                return spec_err(format!("sources[{k}].trajectory is empty"));
            }
            if s.trajectory.windows(2).any(|w| w[1].t_s <= w[0].t_s) {
                return spec_err(format!("sources[{k}].trajectory times must increase strictly"));
            }
            if s.trajectory.iter().any(|w| !(w.azimuth_deg > -180.0 && w.azimuth_deg <= 180.0)) {
                return spec_err(format!("sources[{k}].trajectory azimuths must lie in (-180, 180]"));
            }
            for &[a, b] in &s.activity {
                if !(a >= 0.0 && b > a && b <= self.duration_s + 1e-9) {
                    return spec_err(format!("sources[{k}].activity interval [{a}, {b}] outside [0, duration_s]"));
                }
            }
            if !(s.level >= 0.0) {
                return spec_err(format!("sources[{k}].level must be non-negative"));
            }
            if let Excitation::WhiteBurst { on_ms, off_ms } = &s.excitation {
                if !(on_ms[0] > 0.0 && on_ms[1] >= on_ms[0] && off_ms[0] >= 0.0 && off_ms[1] >= off_ms[0]) {
                    return spec_err(format!("sources[{k}].excitation burst ranges must be ordered and positive"));
                }
            }
        }
        if let Reverb::Ctf { decay_s, taps, .. } = self.reverb {
            if !(decay_s > 0.0) || taps == 0 {
                return spec_err("reverb.decay_s and reverb.taps must be positive".into());
            }
        }
        if let Some(n) = &self.noise {
            if n.snr_db.is_some() == n.rms.is_some() {
                return spec_err("noise needs exactly one of snr_db or rms".into());
            }
        }
        self.framing()?;
        Ok(())
    }
}

/// Planted STFT-domain filters, `values[(channel * bins + bin) * taps + q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCtf {
    pub channels: usize,
    pub bins: usize,
    pub taps: usize,
    pub values: Vec<Complex64>,
}

impl PlantedCtf {
    pub fn get(&self, channel: usize, bin: usize, q: usize) -> Complex64 {
        self.values[(channel * self.bins + bin) * self.taps + q]
    }

    /// Channel-major stacking of every channel's taps at `bin`.
    pub fn bin_vector(&self, bin: usize) -> Vec<Complex64> {
        (0..self.channels).flat_map(|ch| (0..self.taps).map(move |q| (ch, q))).map(|(ch, q)| self.get(ch, bin, q)).collect()
    }

    /// Multiplies every channel's filter by its direct-path phase for a static source.
    pub fn with_direct_path(&self, geom: &ArrayGeometry, azimuth_deg: f64, framing: Framing, sample_rate: u32) -> Self {
        let tau = tdoa(geom, azimuth_deg);
        let mut values = self.values.clone();
        for ch in 0..self.channels {
            for f in 0..self.bins {
                let phase = Complex64::from_polar(1.0, -2.0 * PI * framing.bin_frequency(f, sample_rate) * tau[ch]);
                for q in 0..self.taps {
                    values[(ch * self.bins + f) * self.taps + q] *= phase;
                }
            }
        }
        Self { values, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTruth {
    pub azimuth_deg: Vec<f64>,
    pub active: Vec<bool>,
    #[serde(default)]
    pub reverb_taps: Option<PlantedCtf>,
}

/// Per-source azimuth and activity on the STFT frame grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub frame_times_s: Vec<f64>,
    pub sources: Vec<SourceTruth>,
}

impl GroundTruth {
    pub fn frame_count(&self) -> usize {
        self.frame_times_s.len()
    }

    pub fn active_frames(&self) -> usize {
        (0..self.frame_count()).filter(|&t| self.sources.iter().any(|s| s.active[t])).count()
    }

    /// `(source index, azimuth)` of every source active at `frame`.
    pub fn active_at(&self, frame: usize) -> Vec<(usize, f64)> {
        self.sources.iter().enumerate().filter(|(_, s)| s.active[frame]).map(|(k, s)| (k, s.azimuth_deg[frame])).collect()
    }

    /// Frame whose center is closest to `t_s`.
    pub fn nearest_frame(&self, t_s: f64) -> usize {
        let first = self.window as f64 / 2.0 / self.sample_rate as f64;
        let hop_s = self.hop as f64 / self.sample_rate as f64;
        (((t_s - first) / hop_s).round().max(0.0) as usize).min(self.frame_count().saturating_sub(1))
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gt: GroundTruth = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if gt.sources.iter().any(|s| s.azimuth_deg.len() != gt.frame_count() || s.active.len() != gt.frame_count()) {
            return Err(Error::format(path, "per-source arrays must have one entry per frame"));
        }
        Ok(gt)
    }
}

/// Rendered mixture plus its separately rendered source and noise parts.
#[derive(Debug, Clone)]
pub struct Stems {
    pub mixture: AudioBuffer,
    /// Per source, per channel image.
    pub sources: Vec<Vec<Vec<f64>>>,
    pub noise: Vec<Vec<f64>>,
    pub truth: GroundTruth,
}

pub fn render(spec: &SceneSpec) -> Result<(AudioBuffer, GroundTruth)> {
    let stems = render_stems(spec)?;
    Ok((stems.mixture, stems.truth))
}

pub fn render_stems(spec: &SceneSpec) -> Result<Stems> {
    spec.validate()?;
    let n = spec.sample_count();
    let fs = spec.sample_rate as f64;
    let channels = spec.geometry.channel_count();
    let framing = spec.framing()?;

    let mut images = Vec::with_capacity(spec.sources.len());
    let mut taps = Vec::with_capacity(spec.sources.len());
    for (k, src) in spec.sources.iter().enumerate() {
        let excitation = excitation_signal(spec, k)?;
        let mut image: Vec<Vec<f64>> = (0..channels)
            .map(|ch| {
                let delays: Vec<f64> =
                    (0..n).map(|i| tdoa(&spec.geometry, src.azimuth_at(i as f64 / fs))[ch] * fs).collect();
                fractional_delay(&excitation, &delays)
            })
            .collect();
        let planted = match spec.reverb {
            Reverb::Off => None,
            Reverb::Ctf { decay_s, drr_db, taps } => {
                let h = planted_reverb(spec, k, channels, framing, decay_s, drr_db, taps);
                image = image.iter().enumerate().map(|(ch, x)| apply_stft_filter(x, framing, &h, ch)).collect();
                Some(h)
            }
        };
        images.push(image);
        taps.push(planted);
    }

    let active_mask: Vec<bool> = (0..n).map(|i| spec.sources.iter().any(|s| s.is_active(i as f64 / fs))).collect();
    let mut clean = vec![vec![0.0; n]; channels];
    for image in &images {
        for (acc, x) in clean.iter_mut().zip(image) {
            acc.iter_mut().zip(x).for_each(|(a, v)| *a += v);
        }
    }
    let noise = match &spec.noise {
        None => vec![vec![0.0; n]; channels],
        Some(ns) => {
            let raw = noise_signal(spec, ns, channels, n)?;
            let gain = match (ns.snr_db, ns.rms) {
                (Some(snr), _) => {
                    let ps = masked_power(&clean, &active_mask);
                    let pn = masked_power(&raw, &active_mask);
                    if !(ps > 0.0) {
                        return Err(Error::Spec("noise.snr_db cannot be reached: the sources are silent".into()));
                    }
                    if !(pn > 0.0) {
                        return Err(Error::Spec("noise.snr_db cannot be reached: the noise stem is silent".into()));
                    }
                    (ps / pn / 10f64.powf(snr / 10.0)).sqrt()
                }
                (None, Some(rms)) => {
                    let pn = masked_power(&raw, &vec![true; n]);
                    if pn > 0.0 { rms / pn.sqrt() } else { 0.0 }
                }
                (None, None) => unreachable!("validated"),
            };
            raw.into_iter().map(|ch| ch.into_iter().map(|v| v * gain).collect()).collect()
        }
    };
    let mixture: Vec<Vec<f64>> =
        clean.iter().zip(&noise).map(|(c, z)| c.iter().zip(z).map(|(a, b)| a + b).collect()).collect();

    let truth = ground_truth(spec, framing, n, taps);
    Ok(Stems { mixture: AudioBuffer::new(mixture, spec.sample_rate)?, sources: images, noise, truth })
}

fn ground_truth(spec: &SceneSpec, framing: Framing, n: usize, taps: Vec<Option<PlantedCtf>>) -> GroundTruth {
    let fs = spec.sample_rate as f64;
    let frames = framing.frame_count(n);
    let frame_times_s: Vec<f64> =
        (0..frames).map(|t| (t * framing.hop) as f64 / fs + framing.window as f64 / (2.0 * fs)).collect();
    let sources = spec
        .sources
        .iter()
        .zip(taps)
        .map(|(s, reverb_taps)| SourceTruth {
            azimuth_deg: frame_times_s.iter().map(|&t| s.azimuth_at(t)).collect(),
            active: frame_times_s.iter().map(|&t| s.is_active(t)).collect(),
            reverb_taps,
        })
        .collect();
    GroundTruth { sample_rate: spec.sample_rate, window: framing.window, hop: framing.hop, frame_times_s, sources }
}

fn masked_power(x: &[Vec<f64>], mask: &[bool]) -> f64 {
    let count = mask.iter().filter(|&&m| m).count() * x.len();
    if count == 0 {
        return 0.0;
    }
    x.iter().map(|ch| ch.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum::<f64>()).sum::<f64>()
        / count as f64
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const NOISE_STREAM: u64 = 0;

fn excitation_stream(k: usize) -> u64 {
    2 * k as u64 + 1
}

fn reverb_stream(k: usize) -> u64 {
    2 * k as u64 + 2
}

/// Source `k`'s dry excitation over the whole scene, zero outside its activity.
pub fn excitation_signal(spec: &SceneSpec, k: usize) -> Result<Vec<f64>> {
    let src = &spec.sources[k];
    let n = spec.sample_count();
    let fs = spec.sample_rate as f64;
    let mut rng = rng_stream(spec.seed, excitation_stream(k));
    let mut gate = vec![0.0; n];
    let mut x: Vec<f64> = match &src.excitation {
        Excitation::White | Excitation::WhiteBurst { .. } => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        Excitation::SpeechShaped => {
            let a = (-2.0 * PI * 500.0 / fs).exp();
            let mut y = 0.0;
            (0..n)
                .map(|_| {
                    let w: f64 = rng.sample(StandardNormal);
                    y = a * y + (1.0 - a) * w;
                    y
                })
                .collect()
        }
        Excitation::Wav { path } => {
            let (channels, rate) = read_wav_channels(path)?;
            if rate != spec.sample_rate {
                return Err(Error::format(path, format!("sample rate {rate} Hz, scene needs {} Hz", spec.sample_rate)));
            }
            let first = &channels[0];
            if first.is_empty() {
                return Err(Error::format(path, "no samples"));
            }
            (0..n).map(|i| first[i % first.len()]).collect()
        }
    };
    for &[start, end] in &src.activity {
        match &src.excitation {
            Excitation::WhiteBurst { on_ms, off_ms } => {
                let mut t = start;
                while t < end {
                    let on = rng.random_range(on_ms[0]..=on_ms[1]) / 1000.0;
                    let off = rng.random_range(off_ms[0]..=off_ms[1]) / 1000.0;
                    add_ramped_gate(&mut gate, t, (t + on).min(end), fs);
                    t += on + off;
                }
            }
            _ => add_ramped_gate(&mut gate, start, end, fs),
        }
    }
    x.iter_mut().zip(&gate).for_each(|(v, g)| *v *= g);
    let active: Vec<bool> = (0..n).map(|i| src.is_active(i as f64 / fs)).collect();
    let p = masked_power(std::slice::from_ref(&x), &active);
    if p > 0.0 {
        let g = src.level / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    Ok(x)
}

fn add_ramped_gate(gate: &mut [f64], start: f64, end: f64, fs: f64) {
    let a = (start * fs).round().max(0.0) as usize;
    let b = ((end * fs).round() as usize).min(gate.len());
    let ramp = ((RAMP_S * fs) as usize).min((b.saturating_sub(a)) / 2).max(1);
    for i in a..b {
        let edge = (i - a).min(b - 1 - i);
        let g = if edge >= ramp { 1.0 } else { 0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp as f64).cos() };
        gate[i] = gate[i].max(g);
    }
}

/// Blackman-windowed sinc interpolation, 32 taps: `y[n] = x(n − delays[n])`.
pub fn fractional_delay(x: &[f64], delays: &[f64]) -> Vec<f64> {
    let len = x.len() as i64;
    delays
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            let p = n as f64 - d;
            let base = p.floor() as i64;
            let mut acc = 0.0;
            for m in (base - SINC_HALF + 1)..=(base + SINC_HALF) {
                if m < 0 || m >= len {
                    continue;
                }
                acc += x[m as usize] * windowed_sinc(p - m as f64);
            }
            acc
        })
        .collect()
}

fn windowed_sinc(u: f64) -> f64 {
    let half = SINC_HALF as f64;
    if u.abs() >= half {
        return 0.0;
    }
    let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
    let w = 0.42 + 0.5 * (PI * u / half).cos() + 0.08 * (2.0 * PI * u / half).cos();
    sinc * w
}

/// Random reverberant taps `h_q`, `h_0 = 1`, `|h_q| ~ g exp(−q·hop/τ)` scaled to the DRR.
fn planted_reverb(
    spec: &SceneSpec,
    k: usize,
    channels: usize,
    framing: Framing,
    decay_s: f64,
    drr_db: f64,
    taps: usize,
) -> PlantedCtf {
    let mut rng = rng_stream(spec.seed, reverb_stream(k));
    let hop_s = framing.hop as f64 / spec.sample_rate as f64;
    let tail: f64 = (1..taps).map(|q| (-2.0 * q as f64 * hop_s / decay_s).exp()).sum();
    let g = if tail > 0.0 { (10f64.powf(-drr_db / 10.0) / tail).sqrt() } else { 0.0 };
    let bins = framing.bin_count();
    let mut values = Vec::with_capacity(channels * bins * taps);
    for _ in 0..channels {
        for _ in 0..bins {
            values.push(Complex64::new(1.0, 0.0));
            for q in 1..taps {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let scale = g * (-(q as f64) * hop_s / decay_s).exp() / 2f64.sqrt();
                values.push(Complex64::new(re, im) * scale);
            }
        }
    }
    PlantedCtf { channels, bins, taps, values }
}

/// Filters `x` across frames in the STFT domain with channel `ch` of `h`, then resynthesizes
/// by overlap-add normalized with the analysis-window sum.
fn apply_stft_filter(x: &[f64], framing: Framing, h: &PlantedCtf, ch: usize) -> Vec<f64> {
    let w = framing.window;
    let nfft = framing.nfft;
    let bins = framing.bin_count();
    let mut padded = vec![0.0; w];
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat_n(0.0, 2 * w));
    let frames = framing.frame_count(padded.len());
    let analyzer = FrameAnalyzer::new(framing);
    let mut spec = vec![Complex64::new(0.0, 0.0); frames * bins];
    for t in 0..frames {
        analyzer.analyze(&padded[t * framing.hop..t * framing.hop + w], &mut spec[t * bins..(t + 1) * bins]);
    }
    let inverse = FftPlanner::new().plan_fft_inverse(nfft);
    let mut out = vec![0.0; padded.len()];
    let mut wsum = vec![0.0; padded.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for t in 0..frames {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for f in 0..bins {
            let mut y = Complex64::new(0.0, 0.0);
            for q in 0..h.taps.min(t + 1) {
                y += h.get(ch, f, q) * spec[(t - q) * bins + f];
            }
            buf[f] = y;
            if f > 0 && f < nfft - f {
                buf[nfft - f] = y.conj();
            }
        }
        inverse.process(&mut buf);
        let start = t * framing.hop;
        for i in 0..w {
            out[start + i] += buf[i].re / nfft as f64;
            wsum[start + i] += analyzer.window()[i];
        }
    }
    out.iter()
        .zip(&wsum)
        .skip(w)
        .take(x.len())
        .map(|(&v, &s)| if s > 1e-3 { v / s } else { 0.0 })
        .collect()
}

fn noise_signal(spec: &SceneSpec, ns: &NoiseSpec, channels: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    match &ns.stem {
        None => {
            let mut rng = rng_stream(spec.seed, NOISE_STREAM);
            Ok((0..channels).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect())
        }
        Some(path) => {
            let (stem, rate) = read_wav_channels(path)?;
            if rate != spec.sample_rate {
                return Err(Error::format(path, format!("sample rate {rate} Hz, scene needs {} Hz", spec.sample_rate)));
            }
            if stem.len() != channels || stem[0].is_empty() {
                return Err(Error::format(
                    path,
                    format!("expected {channels} non-empty channels, found {}", stem.len()),
                ));
            }
            Ok(stem.iter().map(|ch| (0..n).map(|i| ch[i % ch.len()]).collect()).collect())
        }
    }
}

/// STFT-domain scene that follows the CTF model exactly: every source's excitation spectrogram
/// is convolved across frames with its planted per-channel filters.
#[derive(Debug, Clone)]
pub struct CtfScene {
    pub clean: Spectrogram,
    pub noise: Spectrogram,
    pub mixture: Spectrogram,
    /// Per source, the full planted filter including the direct-path phase.
    pub ctf: Vec<PlantedCtf>,
    pub truth: GroundTruth,
}

/// Renders a scene of static sources directly in the STFT domain.
pub fn render_ctf_spectrogram(spec: &SceneSpec) -> Result<CtfScene> {
    spec.validate()?;
    if let Some(k) = spec.sources.iter().position(|s| !s.is_static()) {
        return Err(Error::Spec(format!("sources[{k}] must be static for the STFT-domain renderer")));
    }
    let n = spec.sample_count();
    let channels = spec.geometry.channel_count();
    let framing = spec.framing()?;
    let frames = framing.frame_count(n);
    if frames == 0 {
        return Err(Error::EmptySpectrogram { needed: framing.window, found: n });
    }
    let bins = framing.bin_count();
    let analyzer = FrameAnalyzer::new(framing);
    let single = |x: &[f64]| {
        let mut s = vec![Complex64::new(0.0, 0.0); frames * bins];
        for t in 0..frames {
            analyzer.analyze(&x[t * framing.hop..t * framing.hop + framing.window], &mut s[t * bins..(t + 1) * bins]);
        }
        s
    };

    let mut clean = Spectrogram::zeros(channels, frames, framing, spec.sample_rate);
    let mut ctfs = Vec::new();
    let mut reverb_truth = Vec::new();
    for (k, src) in spec.sources.iter().enumerate() {
        let dry = single(&excitation_signal(spec, k)?);
        let h = match spec.reverb {
            Reverb::Off => PlantedCtf { channels, bins, taps: 1, values: vec![Complex64::new(1.0, 0.0); channels * bins] },
            Reverb::Ctf { decay_s, drr_db, taps } => planted_reverb(spec, k, channels, framing, decay_s, drr_db, taps),
        };
        let a = h.with_direct_path(&spec.geometry, src.trajectory[0].azimuth_deg, framing, spec.sample_rate);
        for ch in 0..channels {
            for t in 0..frames {
                for f in 0..bins {
                    let mut y = Complex64::new(0.0, 0.0);
                    for q in 0..a.taps.min(t + 1) {
                        y += a.get(ch, f, q) * dry[(t - q) * bins + f];
                    }
                    let v = clean.get(ch, t, f) + y;
                    clean.set(ch, t, f, v);
                }
            }
        }
        reverb_truth.push(matches!(spec.reverb, Reverb::Ctf { .. }).then(|| h.clone()));
        ctfs.push(a);
    }

    let truth = ground_truth(spec, framing, n, reverb_truth);
    let mut noise = Spectrogram::zeros(channels, frames, framing, spec.sample_rate);
    if let Some(ns) = &spec.noise {
        let raw = noise_signal(spec, ns, channels, n)?;
        for (ch, x) in raw.iter().enumerate() {
            let s = single(x);
            for t in 0..frames {
                noise.frame_mut(ch, t).copy_from_slice(&s[t * bins..(t + 1) * bins]);
            }
        }
        let active: Vec<bool> = (0..frames).map(|t| truth.sources.iter().any(|s| s.active[t])).collect();
        let power = |s: &Spectrogram, all: bool| {
            let mut acc = 0.0;
            for ch in 0..channels {
                for t in (0..frames).filter(|&t| all || active[t]) {
                    acc += s.frame(ch, t).iter().map(|c| c.norm_sqr()).sum::<f64>();
                }
            }
            acc
        };
        let gain = match (ns.snr_db, ns.rms) {
            (Some(snr), _) => {
                let ps = power(&clean, false);
                let pn = power(&noise, false);
                if !(ps > 0.0) || !(pn > 0.0) {
                    return Err(Error::Spec("noise.snr_db cannot be reached: silent sources or noise".into()));
                }
                (ps / pn / 10f64.powf(snr / 10.0)).sqrt()
            }
            (None, Some(rms)) => {
                let pn = masked_power(&raw, &vec![true; n]);
                if pn > 0.0 { rms / pn.sqrt() } else { 0.0 }
            }
            (None, None) => unreachable!("validated"),
        };
        for ch in 0..channels {
            for t in 0..frames {
                noise.frame_mut(ch, t).iter_mut().for_each(|v| *v *= gain);
            }
        }
    }
    let mut mixture = clean.clone();
    for ch in 0..channels {
        for t in 0..frames {
            let z = noise.frame(ch, t).to_vec();
            mixture.frame_mut(ch, t).iter_mut().zip(z).for_each(|(m, v)| *m += v);
        }
    }
    Ok(CtfScene { clean, noise, mixture, ctf: ctfs, truth })
}
