//! End-to-end runs that read input files and write every artifact into an output directory.
//!
//! Artifact names are fixed so that each command can consume the previous one's output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{self, Detection, MetricsReport, RocPoint};
use crate::io::{self, DumpFormat, FeatureDump, Header, HeatmapCsvWriter, JsonlWriter, PeakRecord, TrackRecord};
use crate::localizer::WeightVector;
use crate::pipeline::{Pipeline, RunSummary};
use crate::simulator::{render, GroundTruth, SceneSpec};
use crate::steering::ArrayGeometry;

pub const MIXTURE_WAV: &str = "mixture.wav";
pub const TRUTH_JSON: &str = "truth.json";
pub const GEOMETRY_JSON: &str = "geometry.json";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const HEATMAP_PGM: &str = "heatmap.pgm";
pub const PEAKS_JSONL: &str = "peaks.jsonl";
pub const TRACKS_JSONL: &str = "tracks.jsonl";
pub const RUN_INFO_JSON: &str = "run_info.json";

/// Timing of one run, kept apart from the deterministic artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub command: String,
    pub frames: usize,
    pub wall_time_s: f64,
    pub signal_duration_s: f64,
    pub realtime_factor: f64,
}

impl RunInfo {
    fn new(command: &str, summary: &RunSummary) -> Self {
        Self {
            version: io::VERSION.to_string(),
            command: command.to_string(),
            frames: summary.frames,
            wall_time_s: summary.wall_time_s,
            signal_duration_s: summary.signal_duration_s,
            realtime_factor: summary.realtime_factor(),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Renders `spec` into `out_dir`: mixture WAV, ground truth, and the array geometry.
pub fn simulate_to_dir(spec: &SceneSpec, out_dir: &Path) -> Result<GroundTruth> {
    ensure_dir(out_dir)?;
    let (audio, truth) = render(spec)?;
    let wav = out_dir.join(MIXTURE_WAV);
    let tmp = out_dir.join(format!("{MIXTURE_WAV}.partial"));
    write_wav(&tmp, &audio)?;
    std::fs::rename(&tmp, &wav).map_err(|e| Error::io(&wav, e))?;
    io::write_json_file(&out_dir.join(TRUTH_JSON), &truth)?;
    io::write_json_file(&out_dir.join(GEOMETRY_JSON), &spec.geometry)?;
    Ok(truth)
}

/// Localizes every frame of `wav`, writing the heatmap CSV and PGM, the peak JSONL, an optional
/// feature dump, and the run info.
pub fn localize_to_dir(
    wav: &Path,
    geometry: &ArrayGeometry,
    config: &Config,
    out_dir: &Path,
    dump: Option<DumpFormat>,
) -> Result<RunInfo> {
    ensure_dir(out_dir)?;
    let audio = read_wav(wav, config.stft.sample_rate)?;
    let mut pipeline = Pipeline::new(config, geometry, false)?;
    let step = pipeline.framing().hop as f64 / config.stft.sample_rate as f64;
    let header = |kind: &str| Header::new(kind, config, step, pipeline.frame_time(0));
    let mut csv = HeatmapCsvWriter::create(&out_dir.join(HEATMAP_CSV), &header("heatmap"), pipeline.azimuths())?;
    let mut peaks = JsonlWriter::create(&out_dir.join(PEAKS_JSONL), header("peaks"))?;
    let mut features = match dump {
        Some(fmt) => {
            let name = match fmt {
                DumpFormat::Csv => "features.csv",
                DumpFormat::Jsonl => "features.jsonl",
            };
            Some(FeatureDump::create(&out_dir.join(name), fmt, header("features"))?)
        }
        None => None,
    };
    let azimuths = pipeline.azimuths().to_vec();
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let summary = pipeline.run(&audio, |frame| {
        csv.write_row(frame.t_seconds, frame.weights.as_slice())?;
        peaks.write(&PeakRecord::new(frame.frame, frame.t_seconds, &frame.peaks))?;
        if let Some(dump) = features.as_mut() {
            dump.write(&frame.features)?;
        }
        times.push(frame.t_seconds);
        rows.push(frame.weights.as_slice().to_vec());
        Ok(())
    })?;
    csv.finish()?;
    peaks.finish()?;
    if let Some(dump) = features {
        dump.finish()?;
    }
    let heatmap = io::Heatmap { header: None, azimuths, times, rows };
    io::write_heatmap_pgm(&out_dir.join(HEATMAP_PGM), &heatmap)?;
    let info = RunInfo::new("localize", &summary);
    io::write_json_file(&out_dir.join(RUN_INFO_JSON), &info)?;
    Ok(info)
}

/// Localizes and tracks `wav`, writing one JSON line per track and tracker step, plus the run info.
pub fn track_to_dir(wav: &Path, geometry: &ArrayGeometry, config: &Config, out_dir: &Path) -> Result<RunInfo> {
    ensure_dir(out_dir)?;
    let audio = read_wav(wav, config.stft.sample_rate)?;
    let mut pipeline = Pipeline::new(config, geometry, true)?;
    let header = Header::new("tracks", config, pipeline.track_step_s(), pipeline.first_track_time());
    let mut out = JsonlWriter::create(&out_dir.join(TRACKS_JSONL), header)?;
    let summary = pipeline.run(&audio, |frame| {
        if let Some(step) = &frame.tracks {
            for track in &step.tracks {
                let rec = TrackRecord::new(frame.t_seconds, track);
                if !rec.covariance.iter().all(|v| v.is_finite()) || !rec.azimuth_deg.is_finite() {
                    return Err(Error::Numerical(format!("track {} has a non-finite state at {} s", track.id, frame.t_seconds)));
                }
                out.write(&rec)?;
            }
        }
        Ok(())
    })?;
    out.finish()?;
    let info = RunInfo::new("track", &summary);
    io::write_json_file(&out_dir.join(RUN_INFO_JSON), &info)?;
    Ok(info)
}

/// What to score.
pub enum EvalInput<'a> {
    Peaks(&'a Path),
    Tracks(&'a Path),
}

/// Scores peaks or active tracks against ground truth. `config` defaults to the one embedded in
/// the input header. The real-time factor is taken from a `run_info.json` beside the input.
pub fn evaluate_file(input: EvalInput<'_>, truth: &GroundTruth, config: Option<&Config>) -> Result<MetricsReport> {
    let (path, header, items): (&Path, Header, Vec<(f64, Detection)>) = match input {
        EvalInput::Peaks(p) => {
            let (h, recs): (Header, Vec<PeakRecord>) = io::read_jsonl(p)?;
            let items = recs
                .iter()
                .flat_map(|r| r.peaks.iter().map(|pk| (r.t_seconds, Detection { azimuth_deg: pk.azimuth_deg, track_id: None })))
                .collect();
            (p, h, items)
        }
        EvalInput::Tracks(p) => {
            let (h, recs): (Header, Vec<TrackRecord>) = io::read_jsonl(p)?;
            let items = recs
                .iter()
                .filter(|r| r.active)
                .map(|r| (r.t_seconds, Detection { azimuth_deg: r.azimuth_deg, track_id: Some(r.track_id) }))
                .collect();
            (p, h, items)
        }
    };
    if !(header.frame_step_s > 0.0) {
        return Err(Error::format(path, "header.frame_step_s must be positive"));
    }
    let success = config.unwrap_or(&header.config).eval.success_threshold_deg;
    let times = eval::output_times(header.first_frame_s, header.frame_step_s, truth);
    let scores = eval::score_timed(&eval::bucket_detections(&times, items), truth, success);
    let mut report = eval::aggregate(&scores);
    report.realtime_factor = read_run_info(&path.with_file_name(RUN_INFO_JSON)).map(|i| i.realtime_factor);
    Ok(report)
}

fn read_run_info(path: &PathBuf) -> Option<RunInfo> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Peak thresholds swept by [`roc_from_heatmap`].
pub fn default_roc_thresholds() -> Vec<f64> {
    (0..=50).map(|k| k as f64 * 0.01).collect()
}

/// ROC points from a heatmap CSV, pairing each row with its nearest ground-truth frame.
pub fn roc_from_heatmap(heatmap: &io::Heatmap, truth: &GroundTruth, config: &Config, thresholds: &[f64]) -> Vec<RocPoint> {
    let maps: Vec<WeightVector> = heatmap.rows.iter().map(|r| WeightVector::from_unnormalized(r.clone())).collect();
    let truths: Vec<Vec<f64>> = heatmap
        .times
        .iter()
        .map(|&t| truth.active_at(truth.nearest_frame(t)).into_iter().map(|(_, az)| az).collect())
        .collect();
    eval::roc_sweep(
        &maps,
        &heatmap.azimuths,
        &truths,
        thresholds,
        config.localizer.min_separation_deg,
        config.eval.success_threshold_deg,
    )
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = io::AtomicWriter::create(path)?;
    w.write_line("threshold,fa_rate,md_rate")?;
    for p in points {
        w.write_line(&format!("{},{},{}", p.threshold, p.fa_rate, p.md_rate))?;
    }
    w.finish()
}
