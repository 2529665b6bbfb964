#![allow(dead_code)]

use mstrack::audio::AudioBuffer;
use mstrack::config::Config;
use mstrack::eval::{self, Detection, FrameScore, MetricsReport, Truth};
use mstrack::pipeline::{Pipeline, RunSummary};
use mstrack::simulator::{Excitation, GroundTruth, NoiseSpec, Reverb, SceneSpec, SourceSpec, Waypoint};
use mstrack::steering::ArrayGeometry;

pub fn array() -> ArrayGeometry {
    ArrayGeometry::square(0.1)
}

pub fn scene(duration_s: f64, seed: u64, sources: Vec<SourceSpec>) -> SceneSpec {
    SceneSpec {
        duration_s,
        sample_rate: 16000,
        seed,
        geometry: array(),
        sources,
        reverb: Reverb::Off,
        noise: None,
        analysis: Default::default(),
    }
}

pub fn with_snr(mut spec: SceneSpec, snr_db: f64) -> SceneSpec {
    spec.noise = Some(NoiseSpec { snr_db: Some(snr_db), rms: None, stem: None });
    spec
}

pub fn with_reverb(mut spec: SceneSpec, decay_s: f64, drr_db: f64) -> SceneSpec {
    spec.reverb = Reverb::Ctf { decay_s, drr_db, taps: 8 };
    spec
}

pub fn moving(from_deg: f64, to_deg: f64, duration_s: f64, activity: Vec<[f64; 2]>) -> SourceSpec {
    SourceSpec {
        trajectory: vec![Waypoint { t_s: 0.0, azimuth_deg: from_deg }, Waypoint { t_s: duration_s, azimuth_deg: to_deg }],
        activity,
        excitation: Excitation::default(),
        level: 1.0,
    }
}

pub fn white(mut s: SourceSpec) -> SourceSpec {
    s.excitation = Excitation::White;
    s
}

/// Per-frame localizer output of a whole run.
pub struct LocalizerRun {
    pub times: Vec<f64>,
    pub argmax_deg: Vec<f64>,
    pub peaks: Vec<Vec<f64>>,
    pub summary: RunSummary,
}

pub fn run_localizer(audio: &AudioBuffer, config: &Config) -> LocalizerRun {
    let mut pipeline = Pipeline::new(config, &array(), false).unwrap();
    let azimuths = pipeline.azimuths().to_vec();
    let mut run = LocalizerRun { times: vec![], argmax_deg: vec![], peaks: vec![], summary: RunSummary { frames: 0, wall_time_s: 0.0, signal_duration_s: 0.0 } };
    let mut times = Vec::new();
    let mut argmax = Vec::new();
    let mut peaks = Vec::new();
    run.summary = pipeline
        .run(audio, |f| {
            times.push(f.t_seconds);
            argmax.push(azimuths[f.weights.argmax()]);
            peaks.push(f.peaks.iter().map(|p| p.azimuth_deg).collect());
            Ok(())
        })
        .unwrap();
    run.times = times;
    run.argmax_deg = argmax;
    run.peaks = peaks;
    run
}

/// Active tracks at every tracker step.
pub struct TrackerRun {
    pub steps: Vec<(f64, Vec<Detection>)>,
    pub summary: RunSummary,
}

pub fn run_tracker(audio: &AudioBuffer, config: &Config) -> TrackerRun {
    let mut pipeline = Pipeline::new(config, &array(), true).unwrap();
    let mut steps = Vec::new();
    let summary = pipeline
        .run(audio, |f| {
            if let Some(step) = &f.tracks {
                let det = step
                    .tracks
                    .iter()
                    .filter(|t| t.active)
                    .map(|t| Detection { azimuth_deg: t.azimuth_deg(), track_id: Some(t.id) })
                    .collect();
                steps.push((f.t_seconds, det));
            }
            Ok(())
        })
        .unwrap();
    TrackerRun { steps, summary }
}

pub fn tracker_metrics(run: &TrackerRun, truth: &GroundTruth) -> MetricsReport {
    let scores = eval::score_timed(&run.steps, truth, eval::DEFAULT_SUCCESS_DEG);
    eval::aggregate(&scores)
}

/// Greedy scores of per-frame peaks against the truth of the same frame, restricted to `frames`.
pub fn peak_scores(run: &LocalizerRun, truth: &GroundTruth, frames: impl Iterator<Item = usize>) -> Vec<FrameScore> {
    frames
        .map(|t| {
            let det: Vec<Detection> = run.peaks[t].iter().map(|&a| Detection { azimuth_deg: a, track_id: None }).collect();
            let tru: Vec<Truth> =
                truth.active_at(t).into_iter().map(|(source, azimuth_deg)| Truth { source, azimuth_deg }).collect();
            eval::score_frame(&det, &tru, eval::DEFAULT_SUCCESS_DEG)
        })
        .collect()
}
