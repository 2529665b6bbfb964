//! Candidate directions and the DP-RTF each direction predicts.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dprtf::normalize_feature;
use crate::error::{Error, Result};

/// Magnitude given to free-field predicted features before normalization.
pub const PREDICTED_MAGNITUDE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    /// Microphone coordinates in meters, one `[x, y, z]` per channel.
    pub mic_positions: Vec<[f64; 3]>,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>) -> Result<Self> {
        let g = Self { mic_positions, speed_of_sound: default_speed_of_sound() };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.len() < 2 {
            return Err(Error::Input("array geometry needs at least two microphones".into()));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::Input("speed_of_sound must be positive".into()));
        }
        let first = self.mic_positions[0];
        if self.mic_positions.iter().all(|p| *p == first) {
            return Err(Error::Input("array geometry needs at least two distinct positions".into()));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        g.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(g)
    }

    /// Square planar array of side `side` meters centered at the origin.
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        Self {
            mic_positions: vec![[h, h, 0.0], [-h, h, 0.0], [-h, -h, 0.0], [h, -h, 0.0]],
            speed_of_sound: default_speed_of_sound(),
        }
    }
}

/// Unit propagation direction in the horizontal plane.
pub fn direction(azimuth_deg: f64) -> [f64; 3] {
    let a = azimuth_deg.to_radians();
    [a.cos(), a.sin(), 0.0]
}

/// Far-field delay of each channel relative to channel 0, in seconds
/// (`τ_i = (m_0 − m_i)·u(θ) / c`; positive when channel `i` hears the wave later).
pub fn tdoa(geom: &ArrayGeometry, azimuth_deg: f64) -> Vec<f64> {
    let u = direction(azimuth_deg);
    let m0 = geom.mic_positions[0];
    geom.mic_positions
        .iter()
        .map(|m| (0..3).map(|k| (m0[k] - m[k]) * u[k]).sum::<f64>() / geom.speed_of_sound)
        .collect()
}

/// Free-field predicted feature for a channel delay `tau` at frequency `freq_hz`,
/// normalized like observed features.
pub fn predicted_feature(tau: f64, freq_hz: f64) -> Complex64 {
    let raw = Complex64::from_polar(PREDICTED_MAGNITUDE, -2.0 * PI * freq_hz * tau);
    normalize_feature(raw)
}

/// `D` azimuths at `360 / D` spacing ending at 180°, e.g. −175°..180° for `D = 72`.
pub fn azimuth_grid(count: usize) -> Vec<f64> {
    let step = 360.0 / count as f64;
    (0..count).map(|d| 180.0 - step * (count - 1 - d) as f64).collect()
}

/// Predicted features `c_f^{i,d}` for every (bin, channel ≥ 1, direction).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    azimuths: Vec<f64>,
    bins: usize,
    channels: usize,
    /// Indexed `[(bin * (channels - 1) + (channel - 1)) * D + d]`.
    predicted: Vec<Complex64>,
}

impl CandidateGrid {
    pub fn from_geometry(geom: &ArrayGeometry, azimuths: Vec<f64>, bins: usize, nfft: usize, sample_rate: u32) -> Result<Self> {
        geom.validate()?;
        check_azimuths(&azimuths)?;
        let channels = geom.channel_count();
        let delays: Vec<Vec<f64>> = azimuths.iter().map(|&a| tdoa(geom, a)).collect();
        let d_count = azimuths.len();
        let mut predicted = Vec::with_capacity(bins * (channels - 1) * d_count);
        for f in 0..bins {
            let freq = f as f64 * sample_rate as f64 / nfft as f64;
            for ch in 1..channels {
                for tau in &delays {
                    predicted.push(predicted_feature(tau[ch] - tau[0], freq));
                }
            }
        }
        Ok(Self { azimuths, bins, channels, predicted })
    }

    pub fn from_table(azimuths: Vec<f64>, bins: usize, channels: usize, raw: Vec<Complex64>) -> Result<Self> {
        check_azimuths(&azimuths)?;
        assert_eq!(raw.len(), bins * (channels - 1) * azimuths.len());
        Ok(Self { azimuths, bins, channels, predicted: raw.into_iter().map(normalize_feature).collect() })
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn len(&self) -> usize {
        self.azimuths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuths.is_empty()
    }

    pub fn bin_count(&self) -> usize {
        self.bins
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    /// Predicted features of all directions for one (bin, channel ≥ 1).
    pub fn predicted(&self, bin: usize, channel: usize) -> &[Complex64] {
        let d = self.azimuths.len();
        let start = (bin * (self.channels - 1) + channel - 1) * d;
        &self.predicted[start..start + d]
    }

    pub fn load_hrtf_table(path: &Path, expected: GridShape) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: HrtfTable = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        table.into_grid(expected).map_err(|msg| Error::format(path, msg))
    }
}

fn check_azimuths(azimuths: &[f64]) -> Result<()> {
    if azimuths.len() < 2 {
        return Err(Error::Input("candidate grid needs at least two directions".into()));
    }
    let ordered = azimuths.windows(2).all(|w| w[0] < w[1]);
    let in_range = azimuths.iter().all(|&a| a > -180.0 && a <= 180.0);
    if !ordered || !in_range {
        return Err(Error::Input("candidate azimuths must be strictly increasing within (-180, 180]".into()));
    }
    Ok(())
}

/// Dimensions the configured pipeline expects from an HRTF table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub directions: usize,
    pub bins: usize,
    pub channels: usize,
}

/// On-disk HRTF ratio table.
///
/// `ratios[f][i][d]` is `[re, im]` of the transfer-function ratio of channel `i + 1`
/// to channel 0 at bin `f` for direction `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrtfTable {
    pub azimuths_deg: Vec<f64>,
    pub bins: Vec<usize>,
    pub channels: usize,
    pub ratios: Vec<Vec<Vec<[f64; 2]>>>,
}

impl HrtfTable {
    pub fn into_grid(self, expected: GridShape) -> std::result::Result<CandidateGrid, String> {
        let found = GridShape { directions: self.azimuths_deg.len(), bins: self.bins.len(), channels: self.channels };
        if found != expected {
            return Err(format!(
                "grid mismatch: expected D={} F={} I={}, found D={} F={} I={}",
                expected.directions, expected.bins, expected.channels, found.directions, found.bins, found.channels
            ));
        }
        if self.bins.iter().enumerate().any(|(k, &b)| k != b) {
            return Err("bins must list 0..F-1 in order".into());
        }
        let mut raw = Vec::with_capacity(found.bins * (found.channels - 1) * found.directions);
        for (f, per_bin) in self.ratios.iter().enumerate() {
            if per_bin.len() != found.channels - 1 {
                return Err(format!("ratios[{f}] has {} channels, expected {}", per_bin.len(), found.channels - 1));
            }
            for (i, per_ch) in per_bin.iter().enumerate() {
                if per_ch.len() != found.directions {
                    return Err(format!("ratios[{f}][{i}] has {} directions, expected {}", per_ch.len(), found.directions));
                }
                raw.extend(per_ch.iter().map(|&[re, im]| Complex64::new(re, im)));
            }
        }
        if self.ratios.len() != found.bins {
            return Err(format!("ratios has {} bins, expected {}", self.ratios.len(), found.bins));
        }
        CandidateGrid::from_table(self.azimuths_deg, found.bins, found.channels, raw).map_err(|e| e.to_string())
    }
}
