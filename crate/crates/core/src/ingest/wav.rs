use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio buffer has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::validation(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported | hound::Error::TooWide => {
            Error::Unsupported(format!("{}: unsupported WAV encoding", path.display()))
        }
        hound::Error::InvalidSampleFormat => {
            Error::Format(format!("{}: sample format does not match header", path.display()))
        }
        hound::Error::UnfinishedSample => {
            Error::Format(format!("{}: data chunk ends mid-sample", path.display()))
        }
    }
}

/// Reads a PCM16 or float32 WAV file and downmixes it to mono by averaging
/// channels. 16-bit sample `v` maps to `v / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no audio data", path.display())));
    }
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(Error::Format(format!("{}: non-finite samples", path.display())));
    }

    let mut clipped = 0usize;
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| {
            let mean = frame.iter().map(|&s| s as f64).sum::<f64>() / frame.len() as f64;
            if mean.abs() > 1.0 {
                clipped += 1;
            }
            mean.clamp(-1.0, 1.0) as f32
        })
        .collect();
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples to [-1, 1]", path.display());
    }
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are scaled by 32768 and saturated.
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
