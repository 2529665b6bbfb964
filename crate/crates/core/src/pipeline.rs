//! Streaming frame-by-frame processing chain.
//!
//! Memory is bounded by one analysis window of samples per channel plus the per-bin
//! estimator state; no spectrogram of the whole signal is ever held.

use std::time::Instant;

use num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::config::Config;
use crate::dprtf::{DprtfEstimator, FeatureSet};
use crate::error::{Error, Result};
use crate::localizer::{Localizer, Peak, WeightVector};
use crate::steering::{azimuth_grid, ArrayGeometry, CandidateGrid, GridShape};
use crate::stft::{FrameAnalyzer, Framing};
use crate::tracker::{ObservationSet, StepOutput, Track, Tracker};

/// Everything produced for one STFT frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: usize,
    pub t_seconds: f64,
    pub features: FeatureSet,
    pub weights: WeightVector,
    pub peaks: Vec<Peak>,
    /// Present on frames that close a tracker step.
    pub tracks: Option<TrackStep>,
}

#[derive(Debug, Clone)]
pub struct TrackStep {
    pub output: StepOutput,
    pub tracks: Vec<Track>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub wall_time_s: f64,
    pub signal_duration_s: f64,
}

impl RunSummary {
    pub fn realtime_factor(&self) -> f64 {
        crate::eval::realtime_factor(self.wall_time_s, self.signal_duration_s)
    }
}

pub struct Pipeline {
    config: Config,
    framing: Framing,
    analyzer: FrameAnalyzer,
    estimator: DprtfEstimator,
    localizer: Localizer,
    tracker: Option<Tracker>,
    channels: usize,
    frame: usize,
    spectrum: Vec<Vec<Complex64>>,
}

impl Pipeline {
    pub fn new(config: &Config, geometry: &ArrayGeometry, with_tracker: bool) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        let framing = config.framing()?;
        let channels = geometry.channel_count();
        let bins = framing.bin_count();
        let grid = match &config.grid.hrtf_table {
            Some(path) => CandidateGrid::load_hrtf_table(
                path,
                GridShape { directions: config.grid.directions, bins, channels },
            )?,
            None => CandidateGrid::from_geometry(
                geometry,
                azimuth_grid(config.grid.directions),
                bins,
                framing.nfft,
                config.stft.sample_rate,
            )?,
        };
        let estimator = DprtfEstimator::new(config.dprtf.clone(), channels, config.bin_range()?, config.frame_rate());
        let tracker = if with_tracker { Some(Tracker::new(config.tracker.clone())?) } else { None };
        Ok(Self {
            config: config.clone(),
            framing,
            analyzer: FrameAnalyzer::new(framing),
            estimator,
            localizer: Localizer::new(grid, config.localizer.clone()),
            tracker,
            channels,
            frame: 0,
            spectrum: vec![vec![Complex64::new(0.0, 0.0); bins]; channels],
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn framing(&self) -> Framing {
        self.framing
    }

    pub fn azimuths(&self) -> &[f64] {
        self.localizer.grid().azimuths()
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        let fs = self.config.stft.sample_rate as f64;
        (frame * self.framing.hop) as f64 / fs + self.framing.window as f64 / (2.0 * fs)
    }

    /// Seconds between consecutive tracker outputs.
    pub fn track_step_s(&self) -> f64 {
        self.config.tracker.frames_per_step as f64 * self.framing.hop as f64 / self.config.stft.sample_rate as f64
    }

    /// Time of the first tracker output.
    pub fn first_track_time(&self) -> f64 {
        self.frame_time(self.config.tracker.frames_per_step - 1)
    }

    /// Processes one analysis window (`window[ch]` holds exactly `framing.window` samples).
    pub fn process_window<S: AsRef<[f64]>>(&mut self, window: &[S]) -> FrameOutput {
        assert_eq!(window.len(), self.channels);
        for (ch, x) in window.iter().enumerate() {
            self.analyzer.analyze(x.as_ref(), &mut self.spectrum[ch]);
        }
        let features = self.estimator.process_frame(&self.spectrum);
        let weights = self.localizer.step(&features).clone();
        let peaks = self.localizer.peaks();
        let t = self.frame;
        self.frame += 1;
        let per_step = self.config.tracker.frames_per_step;
        let azimuths = self.localizer.grid().azimuths();
        let tracks = match &mut self.tracker {
            Some(tracker) if (t + 1) % per_step == 0 => {
                let obs = ObservationSet::new(tracker.step_count(), azimuths, weights.as_slice().to_vec());
                let output = tracker.step(obs);
                Some(TrackStep { output, tracks: tracker.tracks().to_vec() })
            }
            _ => None,
        };
        FrameOutput { frame: t, t_seconds: self.frame_time(t), features, weights, peaks, tracks }
    }

    /// Streams `audio` through the chain, handing every frame to `sink`.
    pub fn run<F>(&mut self, audio: &AudioBuffer, mut sink: F) -> Result<RunSummary>
    where
        F: FnMut(FrameOutput) -> Result<()>,
    {
        if audio.channel_count() != self.channels {
            return Err(Error::Input(format!(
                "audio has {} channels but the array geometry has {}",
                audio.channel_count(),
                self.channels
            )));
        }
        if audio.sample_rate() != self.config.stft.sample_rate {
            return Err(Error::Input(format!(
                "audio sample rate {} Hz does not match stft.sample_rate {} Hz",
                audio.sample_rate(),
                self.config.stft.sample_rate
            )));
        }
        if let Some(v) = audio.channels().iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite sample {v}")));
        }
        let start = Instant::now();
        let frames = self.framing.frame_count(audio.len());
        let w = self.framing.window;
        for t in 0..frames {
            let s = t * self.framing.hop;
            let window: Vec<&[f64]> = audio.channels().iter().map(|ch| &ch[s..s + w]).collect();
            let out = self.process_window(&window);
            if !out.weights.as_slice().iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite localizer weights at frame {t}")));
            }
            sink(out)?;
        }
        Ok(RunSummary {
            frames,
            wall_time_s: start.elapsed().as_secs_f64(),
            signal_duration_s: audio.duration_s(),
        })
    }
}
