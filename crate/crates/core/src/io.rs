//! Output artifacts and their readers.
//!
//! JSON-lines files start with a header record carrying the crate version and the resolved
//! configuration; CSV and PGM files carry the same information in comment lines. Every file
//! is written to a temporary sibling and renamed into place when complete.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dprtf::FeatureSet;
use crate::error::{Error, Result};
use crate::localizer::Peak;
use crate::tracker::Track;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First record of every JSON-lines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: String,
    pub kind: String,
    pub config: Config,
    /// Seconds between consecutive output frames.
    pub frame_step_s: f64,
    /// Time of the first output frame.
    pub first_frame_s: f64,
}

impl Header {
    pub fn new(kind: &str, config: &Config, frame_step_s: f64, first_frame_s: f64) -> Self {
        Self { version: VERSION.to_string(), kind: kind.to_string(), config: config.clone(), frame_step_s, first_frame_s }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

/// Buffered writer that renames a temporary file into place on `finish`.
pub struct AtomicWriter {
    tmp: PathBuf,
    path: PathBuf,
    out: BufWriter<File>,
}

impl AtomicWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".partial");
        let tmp = path.with_file_name(name);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self { tmp, path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.tmp, e))
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes).map_err(|e| Error::io(&self.tmp, e))
    }

    pub fn write_json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value).map_err(|e| Error::format(&self.tmp, e.to_string()))?;
        self.write_line(&line)
    }

    pub fn finish(self) -> Result<()> {
        let file = self.out.into_inner().map_err(|e| Error::io(&self.tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// JSON-lines writer that emits the header first.
pub struct JsonlWriter(AtomicWriter);

impl JsonlWriter {
    pub fn create(path: &Path, header: Header) -> Result<Self> {
        let mut w = AtomicWriter::create(path)?;
        w.write_json(&HeaderLine { header })?;
        Ok(Self(w))
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        self.0.write_json(record)
    }

    pub fn finish(self) -> Result<()> {
        self.0.finish()
    }
}

/// Reads a JSON-lines file written by [`JsonlWriter`].
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Header, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<HeaderLine>(&line)
                .map_err(|e| Error::format(path, format!("line 1: missing or invalid header: {e}")))?
                .header
        }
        None => return Err(Error::format(path, "empty file, expected a header line")),
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok((header, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub azimuth_deg: f64,
    pub weight: f64,
}

/// Selected peaks of one STFT frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub frame: usize,
    pub t_seconds: f64,
    pub peaks: Vec<PeakEntry>,
}

impl PeakRecord {
    pub fn new(frame: usize, t_seconds: f64, peaks: &[Peak]) -> Self {
        Self {
            frame,
            t_seconds,
            peaks: peaks.iter().map(|p| PeakEntry { azimuth_deg: p.azimuth_deg, weight: p.weight }).collect(),
        }
    }
}

/// State of one track at one tracker step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t_seconds: f64,
    pub track_id: u64,
    pub azimuth_deg: f64,
    pub angular_velocity_deg_s: f64,
    pub active: bool,
    /// Posterior covariance of `[u; v]`, row-major.
    pub covariance: [f64; 9],
}

impl TrackRecord {
    pub fn new(t_seconds: f64, track: &Track) -> Self {
        let c = &track.state.cov;
        let mut covariance = [0.0; 9];
        for r in 0..3 {
            for k in 0..3 {
                covariance[r * 3 + k] = c[(r, k)];
            }
        }
        Self {
            t_seconds,
            track_id: track.id,
            azimuth_deg: track.azimuth_deg(),
            angular_velocity_deg_s: track.angular_velocity_deg_s(),
            active: track.active,
            covariance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: usize,
    pub bin: usize,
    pub channel: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Csv,
    Jsonl,
}

/// Per-(frame, bin, channel) feature dump.
pub enum FeatureDump {
    Csv(AtomicWriter),
    Jsonl(JsonlWriter),
}

impl FeatureDump {
    pub fn create(path: &Path, format: DumpFormat, header: Header) -> Result<Self> {
        match format {
            DumpFormat::Jsonl => Ok(FeatureDump::Jsonl(JsonlWriter::create(path, header)?)),
            DumpFormat::Csv => {
                let mut w = AtomicWriter::create(path)?;
                write_comment_header(&mut w, &header)?;
                w.write_line("frame,bin,channel,re,im")?;
                Ok(FeatureDump::Csv(w))
            }
        }
    }

    pub fn write(&mut self, features: &FeatureSet) -> Result<()> {
        for f in &features.features {
            let rec = FeatureRecord { frame: features.frame, bin: f.bin, channel: f.channel, re: f.value.re, im: f.value.im };
            match self {
                FeatureDump::Jsonl(w) => w.write(&rec)?,
                FeatureDump::Csv(w) => w.write_line(&format!("{},{},{},{},{}", rec.frame, rec.bin, rec.channel, rec.re, rec.im))?,
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self {
            FeatureDump::Csv(w) => w.finish(),
            FeatureDump::Jsonl(w) => w.finish(),
        }
    }
}

fn write_comment_header(w: &mut AtomicWriter, header: &Header) -> Result<()> {
    let json = serde_json::to_string(header).map_err(|e| Error::Config(e.to_string()))?;
    w.write_line(&format!("# header {json}"))
}

/// Heatmap CSV: one row per frame, `t_seconds` then one weight per direction.
pub struct HeatmapCsvWriter(AtomicWriter);

impl HeatmapCsvWriter {
    pub fn create(path: &Path, header: &Header, azimuths: &[f64]) -> Result<Self> {
        let mut w = AtomicWriter::create(path)?;
        write_comment_header(&mut w, header)?;
        let cols: Vec<String> = azimuths.iter().map(|a| format!("az_{a}")).collect();
        w.write_line(&format!("t_seconds,{}", cols.join(",")))?;
        Ok(Self(w))
    }

    pub fn write_row(&mut self, t_seconds: f64, weights: &[f64]) -> Result<()> {
        let mut line = t_seconds.to_string();
        for v in weights {
            line.push(',');
            line.push_str(&v.to_string());
        }
        self.0.write_line(&line)
    }

    pub fn finish(self) -> Result<()> {
        self.0.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub header: Option<Header>,
    pub azimuths: Vec<f64>,
    pub times: Vec<f64>,
    /// One row of weights per frame.
    pub rows: Vec<Vec<f64>>,
}

pub fn read_heatmap_csv(path: &Path) -> Result<Heatmap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut azimuths = None;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let err = |m: String| Error::format(path, format!("line {}: {m}", i + 1));
        if let Some(rest) = line.strip_prefix("# header ") {
            header = Some(serde_json::from_str(rest).map_err(|e| err(e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        match &azimuths {
            None => {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.first() != Some(&"t_seconds") {
                    return Err(err("expected a t_seconds,az_... column header".into()));
                }
                let az = cols[1..]
                    .iter()
                    .map(|c| c.strip_prefix("az_").and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| err(format!("bad column {c}"))))
                    .collect::<Result<Vec<f64>>>()?;
                azimuths = Some(az);
            }
            Some(az) => {
                let vals = line
                    .split(',')
                    .map(|v| v.parse::<f64>().map_err(|e| err(format!("{v}: {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != az.len() + 1 {
                    return Err(err(format!("expected {} values, found {}", az.len() + 1, vals.len())));
                }
                times.push(vals[0]);
                rows.push(vals[1..].to_vec());
            }
        }
    }
    let azimuths = azimuths.ok_or_else(|| Error::format(path, "missing column header"))?;
    Ok(Heatmap { header, azimuths, times, rows })
}

/// Binary 8-bit PGM: one column per frame, one row per direction with +180° at the top,
/// gray level proportional to weight over the global maximum.
pub fn write_heatmap_pgm(path: &Path, heatmap: &Heatmap) -> Result<()> {
    let width = heatmap.rows.len();
    let height = heatmap.azimuths.len();
    if height == 0 {
        return Err(Error::Input("heatmap has no directions".into()));
    }
    let max = heatmap.rows.iter().flatten().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut w = AtomicWriter::create(path)?;
    let version_line = format!("# mstrack {VERSION}");
    w.write_bytes(format!("P5\n{version_line}\n{width} {height}\n255\n").as_bytes())?;
    let mut pixels = Vec::with_capacity(width * height);
    for d in (0..height).rev() {
        for row in &heatmap.rows {
            pixels.push((row[d] * scale).round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_bytes(&pixels)?;
    w.finish()
}

/// Writes a pretty JSON document atomically.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    let mut w = AtomicWriter::create(path)?;
    w.write_bytes(text.as_bytes())?;
    w.write_bytes(b"\n")?;
    w.finish()
}
