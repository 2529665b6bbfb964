//! Multichannel sample buffers and WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Equal-length real sample streams, one per microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.len() < 2 {
            return Err(Error::Input(format!(
                "at least 2 channels are required, found {}",
                samples.len()
            )));
        }
        let len = samples[0].len();
        if let Some((i, ch)) = samples.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::Input(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.samples
    }
}

/// Reads a 16-bit integer or 32-bit float PCM WAV file.
///
/// The file's sample rate must equal `expected_rate`; resampling is not supported.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<AudioBuffer> {
    let (samples, rate) = read_wav_channels(path)?;
    if rate != expected_rate {
        return Err(Error::format(
            path,
            format!("sample rate {rate} Hz does not match configured stft.sample_rate {expected_rate} Hz"),
        ));
    }
    if samples.len() < 2 {
        return Err(Error::format(path, format!("need at least 2 channels, found {}", samples.len())));
    }
    AudioBuffer::new(samples, rate)
}

/// Reads every channel of a WAV file of any channel count, with its sample rate.
pub fn read_wav_channels(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported sample format {fmt:?} with {bits} bits (need 16-bit int or 32-bit float)"),
            ))
        }
    };
    let frames = interleaved.len() / channels;
    let mut samples = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (ch, &v) in samples.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    if let Some(bad) = samples.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::format(path, format!("non-finite sample value {bad}")));
    }
    Ok((samples, spec.sample_rate))
}

/// Writes the buffer as 32-bit float PCM, which round-trips the rendered values exactly
/// up to single precision.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.channel_count() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for n in 0..audio.len() {
        for ch in audio.channels() {
            writer.write_sample(ch[n] as f32).map_err(|e| wav_error(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}
