//! Run configuration: every tunable of the processing chain in one schema-checked document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dprtf::DprtfParams;
use crate::error::{Error, Result};
use crate::localizer::LocalizerParams;
use crate::stft::Framing;
use crate::tracker::TrackerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { sample_rate: 16000, window_ms: 16.0, hop_ms: 8.0 }
    }
}

/// Candidate directions: `directions` azimuths evenly spaced over (−180°, 180°], or the
/// directions of an HRTF table when one is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub directions: usize,
    pub hrtf_table: Option<PathBuf>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { directions: 72, hrtf_table: None }
    }
}

/// Frequency band feeding the localizer; DC is always excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BandConfig {
    pub min_hz: Option<f64>,
    pub max_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub success_threshold_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { success_threshold_deg: crate::eval::DEFAULT_SUCCESS_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub stft: StftConfig,
    pub dprtf: DprtfParams,
    pub grid: GridConfig,
    pub band: BandConfig,
    pub localizer: LocalizerParams,
    pub tracker: TrackerParams,
    pub eval: EvalConfig,
}

impl Config {
    /// Reads a JSON config file, or the defaults when `path` is `None`, then applies
    /// `(dotted.path, value)` overrides. Values parse as JSON, falling back to strings.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
            }
            None => serde_json::to_value(Config::default()).expect("default config serializes"),
        };
        if !value.is_object() {
            return Err(Error::Config("config root must be a JSON object".into()));
        }
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_value(raw))?;
        }
        let config: Config = serde_json::from_value(value).map_err(|e| match path {
            Some(p) => Error::format(p, e.to_string()),
            None => Error::Config(e.to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn framing(&self) -> Result<Framing> {
        Framing::from_ms(self.stft.sample_rate, self.stft.window_ms, self.stft.hop_ms)
    }

    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.stft.hop_ms
    }

    /// Bins used for localization: every bin above DC within the configured band.
    pub fn bin_range(&self) -> Result<std::ops::Range<usize>> {
        let framing = self.framing()?;
        let hz = |k: usize| framing.bin_frequency(k, self.stft.sample_rate);
        let f = framing.bin_count();
        let lo = (1..f).find(|&k| self.band.min_hz.is_none_or(|m| hz(k) >= m)).unwrap_or(f);
        let hi = (lo..f).rev().find(|&k| self.band.max_hz.is_none_or(|m| hz(k) <= m)).map_or(lo, |k| k + 1);
        if lo >= hi {
            return Err(Error::Config(format!(
                "band [{:?}, {:?}] Hz selects no frequency bin",
                self.band.min_hz, self.band.max_hz
            )));
        }
        Ok(lo..hi)
    }

    pub fn validate(&self) -> Result<()> {
        self.framing()?;
        self.dprtf.validate()?;
        self.tracker.validate()?;
        let l = &self.localizer;
        let checks = [
            (self.grid.directions >= 2, "grid.directions must be at least 2"),
            (l.variance > 0.0, "localizer.variance must be positive"),
            (l.step > 0.0, "localizer.step must be positive"),
            (l.entropy_weight >= 0.0, "localizer.entropy_weight must be non-negative"),
            (l.silent_decay > 0.0 && l.silent_decay < 1.0, "localizer.silent_decay must lie in (0, 1)"),
            (l.smoothing >= 0.0, "localizer.smoothing must be non-negative"),
            (l.min_separation_deg >= 0.0, "localizer.min_separation_deg must be non-negative"),
            (self.eval.success_threshold_deg > 0.0, "eval.success_threshold_deg must be positive"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::Config((*msg).into()));
        }
        self.bin_range()?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key {key:?}")))
}
