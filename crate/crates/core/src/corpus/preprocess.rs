//! Response-audio preprocessing: decode, resample to 16 kHz, trim leading
//! and trailing silence, reject mute or short recordings.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TARGET_RATE: u32 = 16_000;
pub const SUPPORTED_RATES: [u32; 4] = [8_000, 16_000, 44_100, 48_000];
pub const SILENCE_FRAME_MS: f64 = 25.0;
pub const SILENCE_HOP_MS: f64 = 10.0;
/// Frame RMS below this (relative to full scale 1.0) counts as silence.
pub const SILENCE_RMS: f64 = 1e-4;
pub const MIN_DURATION_S: f64 = 1.0;

/// Mono PCM waveform in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    Mute,
    TooShort,
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("rejected: {0:?}")]
    Rejected(Rejection),
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),
    #[error("decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a RIFF WAV file and downmixes to mono.
pub fn decode_wav(path: &Path) -> Result<Audio, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| AudioError::Decode(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.into_samples::<f32>().collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.into_samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<Result<_, _>>()
        }
    }
    .map_err(|e| AudioError::Decode(e.to_string()))?;
    let samples = interleaved.chunks(channels).map(|c| c.iter().sum::<f32>() / channels as f32).collect();
    Ok(Audio { samples, sample_rate: spec.sample_rate })
}

/// Writes mono 16-bit PCM.
pub fn write_wav_pcm16(path: &Path, audio: &Audio) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| AudioError::Decode(e.to_string()))?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| AudioError::Decode(e.to_string()))?;
    }
    writer.finalize().map_err(|e| AudioError::Decode(e.to_string()))
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Windowed-sinc (Blackman) resampler.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    // low-pass cutoff in cycles per input sample
    let cutoff = 0.5 * ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / (2.0 * cutoff);
    let out_len = (samples.len() as f64 * ratio).floor() as usize;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(samples.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in samples.iter().enumerate().take(hi + 1).skip(lo) {
                let tau = t - k as f64;
                let arg = 2.0 * cutoff * tau;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg) };
                let u = tau / half_width; // in [-1, 1]
                let window = 0.42 + 0.5 * (std::f64::consts::PI * u).cos() + 0.08 * (2.0 * std::f64::consts::PI * u).cos();
                acc += x as f64 * 2.0 * cutoff * sinc * window;
            }
            acc as f32
        })
        .collect()
}

fn frame_params(sample_rate: u32) -> (usize, usize) {
    let frame = (sample_rate as f64 * SILENCE_FRAME_MS / 1000.0).round() as usize;
    let hop = (sample_rate as f64 * SILENCE_HOP_MS / 1000.0).round() as usize;
    (frame, hop)
}

/// Per-frame silence flags on the 25 ms / 10 ms grid. A signal shorter
/// than one frame is treated as a single frame.
pub fn silent_frames(samples: &[f32], sample_rate: u32) -> Vec<bool> {
    let (frame, hop) = frame_params(sample_rate);
    let n = if samples.len() <= frame { 1 } else { (samples.len() - frame) / hop + 1 };
    (0..n)
        .map(|k| {
            let start = k * hop;
            let end = (start + frame).min(samples.len());
            let energy: f64 = samples[start..end].iter().map(|&s| (s as f64) * (s as f64)).sum();
            (energy / frame as f64).sqrt() < SILENCE_RMS
        })
        .collect()
}

/// Sample range spanning the first through the last non-silent frame, or
/// `None` when every frame is silent.
pub fn voiced_span(samples: &[f32], sample_rate: u32) -> Option<std::ops::Range<usize>> {
    let (frame, hop) = frame_params(sample_rate);
    let flags = silent_frames(samples, sample_rate);
    let first = flags.iter().position(|s| !s)?;
    let last = flags.iter().rposition(|s| !s)?;
    Some(first * hop..(last * hop + frame).min(samples.len()))
}

/// Resample to 16 kHz, trim silence, reject mute or sub-second audio.
pub fn preprocess_audio(audio: &Audio) -> Result<Audio, AudioError> {
    if !SUPPORTED_RATES.contains(&audio.sample_rate) {
        return Err(AudioError::UnsupportedRate(audio.sample_rate));
    }
    let samples = resample(&audio.samples, audio.sample_rate, TARGET_RATE);
    let span = voiced_span(&samples, TARGET_RATE).ok_or(AudioError::Rejected(Rejection::Mute))?;
    let trimmed = Audio {
        samples: samples[span].to_vec(),
        sample_rate: TARGET_RATE,
    };
    if trimmed.duration_s() < MIN_DURATION_S {
        return Err(AudioError::Rejected(Rejection::TooShort));
    }
    Ok(trimmed)
}
