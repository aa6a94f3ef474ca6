//! Log-Mel spectrograms: Hann-windowed frames, power spectrum, HTK-scale
//! triangular filterbank, `ln(x + 1e-10)` compression.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8_000.0,
        }
    }
}

impl MelConfig {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    /// `floor((S − frame)/hop) + 1`, at least one frame.
    pub fn num_frames(&self, samples: usize) -> usize {
        let frame = self.frame_len();
        if samples <= frame {
            1
        } else {
            (samples - frame) / self.hop_len() + 1
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_mels == 0 || self.n_fft < self.frame_len() || self.hop_len() == 0 {
            return Err(format!("invalid mel config: {self:?}"));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(format!("mel band {}..{} Hz outside Nyquist", self.f_min, self.f_max));
        }
        Ok(())
    }
}

/// T×D log-Mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub frames: Array2<f64>,
    pub config: MelConfig,
}

impl MelSpec {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels × (n_fft/2 + 1)` triangular filters, unnormalized.
pub fn filterbank(config: &MelConfig) -> Array2<f64> {
    let n_freqs = config.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
    Array2::from_shape_fn((config.n_mels, n_freqs), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if f >= left && f <= center {
            (f - left) / (center - left)
        } else if f > center && f <= right {
            (right - f) / (right - center)
        } else {
            0.0
        }
    })
}

/// Reusable extractor: window, filterbank and FFT plan built once.
pub struct MelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    bank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Self {
        let frame = config.frame_len();
        // periodic Hann
        let window = (0..frame).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        MelExtractor {
            config,
            window,
            bank: filterbank(&config),
            fft,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Input shorter than one frame is zero-padded to a single frame.
    pub fn extract(&self, samples: &[f32]) -> MelSpec {
        let cfg = &self.config;
        let (frame, hop) = (cfg.frame_len(), cfg.hop_len());
        let n_frames = cfg.num_frames(samples.len());
        let n_freqs = cfg.n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; n_freqs];
        for t in 0..n_frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = if i < frame { samples.get(start + i).copied().unwrap_or(0.0) as f64 * self.window[i] } else { 0.0 };
                *slot = Complex::new(s, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, filt) in self.bank.rows().into_iter().enumerate() {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[t, m]] = (e + LOG_FLOOR).ln();
            }
        }
        MelSpec { frames: out, config: *cfg }
    }
}

pub fn mel_spectrogram(samples: &[f32], config: &MelConfig) -> MelSpec {
    MelExtractor::new(*config).extract(samples)
}
