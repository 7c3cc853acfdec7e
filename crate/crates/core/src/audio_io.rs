//! WAV input/output and the canonical mono buffer.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

/// Default working sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("no such file: {0}")]
    NotFound(PathBuf),
    #[error("unsupported wav encoding: {0}")]
    Unsupported(String),
    #[error("wav file has an empty data chunk: {0}")]
    Empty(PathBuf),
    #[error("malformed wav file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid audio buffer: {0}")]
    InvalidBuffer(String),
}

/// Mono signal in `[-1, 1]` with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidBuffer("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidBuffer(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_read_err(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            AudioError::NotFound(path.to_path_buf())
        }
        hound::Error::Unsupported => AudioError::Unsupported("codec not handled by reader".into()),
        other => AudioError::Malformed { path: path.to_path_buf(), reason: other.to_string() },
    }
}

/// Reads a PCM-16 or float-32 WAV file with one or two channels.
///
/// Stereo input is mixed down by averaging the two channels; integer samples
/// are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path).map_err(|e| map_read_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(AudioError::Unsupported(format!("{channels} channels")));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| map_read_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| map_read_err(path, e))?,
        (fmt, bits) => {
            return Err(AudioError::Unsupported(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    if interleaved.len() < channels {
        return Err(AudioError::Empty(path.to_path_buf()));
    }

    let samples =
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect::<Vec<_>>();
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::Malformed { path: path.to_path_buf(), reason: "non-finite sample".into() });
    }
    Ok(AudioBuffer { samples, sample_rate: spec.sample_rate })
}

/// Quantizes one amplitude to PCM-16: hard clip, then round half away from zero.
pub fn quantize_pcm16(x: f64) -> i16 {
    let scaled = (x.clamp(-1.0, 1.0) * PCM16_SCALE).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a 16-bit PCM mono file with a canonical 44-byte header.
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<(), AudioError> {
    let path = path.as_ref();
    if buf.is_empty() {
        return Err(AudioError::InvalidBuffer("cannot write an empty buffer".into()));
    }
    let spec =
        WavSpec { channels: 1, sample_rate: buf.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let to_write_err = |e: hound::Error| AudioError::Write {
        path: path.to_path_buf(),
        source: match e {
            hound::Error::IoError(io) => io,
            other => std::io::Error::other(other.to_string()),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_write_err)?;
    {
        let mut w16 = writer.get_i16_writer(buf.len() as u32);
        for &s in &buf.samples {
            w16.write_sample(quantize_pcm16(s));
        }
        w16.flush().map_err(to_write_err)?;
    }
    writer.finalize().map_err(to_write_err)
}
