//! Scoring of localization and tracking output against ground truth.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::angle::circular_diff_deg;
use crate::localizer::{peak_select, WeightVector};
use crate::simulator::GroundTruth;

pub const DEFAULT_SUCCESS_DEG: f64 = 15.0;

/// A greedy pair of detection `detection` and truth `truth`, by index into the frame's lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub detection: usize,
    pub truth: usize,
    pub error_deg: f64,
}

/// Greedy matching outcome for one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    /// Pairs within the success threshold.
    pub matches: Vec<Pair>,
    pub misses: usize,
    pub false_alarms: usize,
    pub truths: usize,
    pub detections: usize,
    /// `(ground-truth source, track id)` for every successful pair with an identity.
    pub identities: Vec<(usize, u64)>,
}

/// Repeatedly pairs the globally closest remaining detection and truth on the circle until one
/// side runs out. Equal differences go to the lower detection index, then the lower truth index.
/// A pair further apart than `success_deg` counts as one miss and one false alarm.
pub fn greedy_match(detections: &[f64], truths: &[f64], success_deg: f64) -> FrameScore {
    let mut candidates: Vec<Pair> = detections
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| {
            truths.iter().enumerate().map(move |(j, &t)| Pair { detection: i, truth: j, error_deg: circular_diff_deg(d, t) })
        })
        .collect();
    candidates.sort_by(|a, b| {
        a.error_deg.total_cmp(&b.error_deg).then(a.detection.cmp(&b.detection)).then(a.truth.cmp(&b.truth))
    });
    let mut used_d = vec![false; detections.len()];
    let mut used_t = vec![false; truths.len()];
    let mut score = FrameScore { truths: truths.len(), detections: detections.len(), ..Default::default() };
    for p in candidates {
        if used_d[p.detection] || used_t[p.truth] {
            continue;
        }
        used_d[p.detection] = true;
        used_t[p.truth] = true;
        if p.error_deg <= success_deg {
            score.matches.push(p);
        } else {
            score.misses += 1;
            score.false_alarms += 1;
        }
    }
    score.misses += used_t.iter().filter(|u| !**u).count();
    score.false_alarms += used_d.iter().filter(|u| !**u).count();
    score
}

/// One detected azimuth, optionally carrying a track identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub azimuth_deg: f64,
    pub track_id: Option<u64>,
}

/// One active ground-truth speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub source: usize,
    pub azimuth_deg: f64,
}

/// Greedy matching that also records which track identity each true speaker received.
pub fn score_frame(detections: &[Detection], truths: &[Truth], success_deg: f64) -> FrameScore {
    let det: Vec<f64> = detections.iter().map(|d| d.azimuth_deg).collect();
    let tru: Vec<f64> = truths.iter().map(|t| t.azimuth_deg).collect();
    let mut score = greedy_match(&det, &tru, success_deg);
    score.identities = score
        .matches
        .iter()
        .filter_map(|p| detections[p.detection].track_id.map(|id| (truths[p.truth].source, id)))
        .collect();
    score
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Misses as a percentage of true speaker-frames.
    pub md_rate: f64,
    /// False alarms as a percentage of true speaker-frames.
    pub fa_rate: f64,
    /// Mean absolute error over successful pairs, degrees; `None` without any.
    pub mae_deg: Option<f64>,
    pub id_switches: usize,
    pub frames: usize,
    pub truths: usize,
    pub detections: usize,
    pub matches: usize,
    #[serde(default)]
    pub realtime_factor: Option<f64>,
}

/// Sums per-frame scores. Identity switches count the frames in which a true speaker's matched
/// track id differs from the id it was last matched to; unmatched frames are skipped.
pub fn aggregate(frames: &[FrameScore]) -> MetricsReport {
    let truths: usize = frames.iter().map(|f| f.truths).sum();
    let detections: usize = frames.iter().map(|f| f.detections).sum();
    let misses: usize = frames.iter().map(|f| f.misses).sum();
    let fas: usize = frames.iter().map(|f| f.false_alarms).sum();
    let errors: Vec<f64> = frames.iter().flat_map(|f| f.matches.iter().map(|p| p.error_deg)).collect();
    let mut last: HashMap<usize, u64> = HashMap::new();
    let mut id_switches = 0;
    for f in frames {
        for &(source, id) in &f.identities {
            if let Some(prev) = last.insert(source, id) {
                if prev != id {
                    id_switches += 1;
                }
            }
        }
    }
    let denom = truths.max(1) as f64;
    MetricsReport {
        md_rate: 100.0 * misses as f64 / denom,
        fa_rate: 100.0 * fas as f64 / denom,
        mae_deg: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        id_switches,
        frames: frames.len(),
        truths,
        detections,
        matches: errors.len(),
        realtime_factor: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fa_rate: f64,
    pub md_rate: f64,
}

/// One (FA, MD) point per peak threshold over a sequence of heatmaps and per-frame true azimuths.
pub fn roc_sweep(
    heatmaps: &[WeightVector],
    azimuths: &[f64],
    truths: &[Vec<f64>],
    thresholds: &[f64],
    min_separation_deg: f64,
    success_deg: f64,
) -> Vec<RocPoint> {
    assert_eq!(heatmaps.len(), truths.len());
    thresholds
        .iter()
        .map(|&threshold| {
            let scores: Vec<FrameScore> = heatmaps
                .iter()
                .zip(truths)
                .map(|(w, t)| {
                    let det: Vec<f64> =
                        peak_select(w, azimuths, threshold, min_separation_deg).iter().map(|p| p.azimuth_deg).collect();
                    greedy_match(&det, t, success_deg)
                })
                .collect();
            let r = aggregate(&scores);
            RocPoint { threshold, fa_rate: r.fa_rate, md_rate: r.md_rate }
        })
        .collect()
}

/// Scores timed detections against ground truth, pairing each output time with the nearest
/// ground-truth frame.
pub fn score_timed(outputs: &[(f64, Vec<Detection>)], truth: &GroundTruth, success_deg: f64) -> Vec<FrameScore> {
    outputs
        .iter()
        .map(|(t, det)| {
            let frame = truth.nearest_frame(*t);
            let tru: Vec<Truth> =
                truth.active_at(frame).into_iter().map(|(source, azimuth_deg)| Truth { source, azimuth_deg }).collect();
            score_frame(det, &tru, success_deg)
        })
        .collect()
}

/// Output times `first_s + k·step_s` that fall inside the ground-truth frame span.
pub fn output_times(first_s: f64, step_s: f64, truth: &GroundTruth) -> Vec<f64> {
    let last = truth.frame_times_s.last().copied().unwrap_or(f64::NEG_INFINITY);
    (0..).map(|k| first_s + k as f64 * step_s).take_while(|&t| t <= last + 1e-9).collect()
}

/// Groups `(t_seconds, detection)` items onto the given output times. Items are assigned to the
/// closest time; times with no item get an empty detection list.
pub fn bucket_detections(times: &[f64], items: impl IntoIterator<Item = (f64, Detection)>) -> Vec<(f64, Vec<Detection>)> {
    let mut out: Vec<(f64, Vec<Detection>)> = times.iter().map(|&t| (t, Vec::new())).collect();
    if times.is_empty() {
        return out;
    }
    let first = times[0];
    let step = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    for (t, d) in items {
        let k = ((t - first) / step).round();
        if k >= 0.0 && (k as usize) < out.len() {
            out[k as usize].1.push(d);
        }
    }
    out
}

/// Processing time divided by signal duration.
pub fn realtime_factor(wall_time_s: f64, signal_duration_s: f64) -> f64 {
    wall_time_s / signal_duration_s
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>10}", "metric", "value")?;
        writeln!(f, "{:<16}{:>10.2}", "MD rate (%)", self.md_rate)?;
        writeln!(f, "{:<16}{:>10.2}", "FA rate (%)", self.fa_rate)?;
        match self.mae_deg {
            Some(m) => writeln!(f, "{:<16}{:>10.2}", "MAE (deg)", m)?,
            None => writeln!(f, "{:<16}{:>10}", "MAE (deg)", "n/a")?,
        }
        writeln!(f, "{:<16}{:>10}", "ID switches", self.id_switches)?;
        writeln!(f, "{:<16}{:>10}", "frames", self.frames)?;
        if let Some(rf) = self.realtime_factor {
            writeln!(f, "{:<16}{:>10.3}", "RF", rf)?;
        }
        Ok(())
    }
}
