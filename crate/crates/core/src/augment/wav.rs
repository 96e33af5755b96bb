use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::transforms::resample;
use super::{AudioBuffer, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio(format!("{}: {other}", path.display())),
    }
}

/// Reads a RIFF WAV file as mono at its own rate. Integer PCM of any width
/// and 32-bit float are accepted; channels are averaged.
pub fn read_wav_native(path: &Path) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Audio(format!("{}: no samples", path.display())));
    }
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(mono, spec.sample_rate).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))
}

/// Reads a WAV file as mono, resampled to 16 kHz when needed.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    resample(&read_wav_native(path)?, DEFAULT_SAMPLE_RATE)
}

/// 16-bit PCM mono at the buffer's rate.
pub fn encode_pcm16(buf: &AudioBuffer) -> Vec<i16> {
    buf.samples()
        .iter()
        // Same 2^15 scale as decoding, saturating at the i16 range.
        .map(|&v| (v * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect()
}

pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for s in encode_pcm16(buf) {
        writer.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
