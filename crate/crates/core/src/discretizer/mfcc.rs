use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Features;
use crate::error::{Error, Result};

/// Energies below this are clamped before the log so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Half-width of the delta regression window.
const DELTA_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub num_coeffs: usize,
    /// Append first and second order deltas (3 * num_coeffs dims).
    pub include_deltas: bool,
    pub num_mel_filters: usize,
    pub preemphasis: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            num_coeffs: 13,
            include_deltas: true,
            num_mel_filters: 26,
            preemphasis: 0.97,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("mfcc config: {m}")));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive");
        }
        if !(self.frame_length_ms > self.frame_shift_ms && self.frame_shift_ms > 0.0) {
            return bad("need frame_length_ms > frame_shift_ms > 0");
        }
        if self.num_coeffs == 0 || self.num_coeffs > self.num_mel_filters {
            return bad("need 1 <= num_coeffs <= num_mel_filters");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must be in [0, 1)");
        }
        if self.frame_shift_samples() == 0 {
            return bad("frame shift is shorter than one sample");
        }
        Ok(())
    }

    pub fn frame_length_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn feature_dim(&self) -> usize {
        if self.include_deltas {
            3 * self.num_coeffs
        } else {
            self.num_coeffs
        }
    }

    /// `1 + floor((n - frame_len) / shift)`, or 0 when `n < frame_len`.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let len = self.frame_length_samples();
        if num_samples < len {
            0
        } else {
            1 + (num_samples - len) / self.frame_shift_samples()
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with mel-spaced edges over `[0, sr/2]`, evaluated at
/// the FFT bin centre frequencies.
fn mel_filterbank(num_filters: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (num_filters + 1) as f64))
        .collect();
    let num_bins = fft_size / 2 + 1;
    (0..num_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..num_bins)
                .map(|b| {
                    let f = b as f64 * sample_rate as f64 / fft_size as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Regression deltas over `+-DELTA_WINDOW` frames with edge replication.
fn deltas(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            let dim = rows[t].len();
            (0..dim)
                .map(|j| {
                    (1..=DELTA_WINDOW)
                        .map(|k| {
                            let next = rows[(t + k).min(n - 1)][j];
                            let prev = rows[t.saturating_sub(k)][j];
                            k as f64 * (next - prev)
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// MFCC (plus optional deltas) for a mono signal.
///
/// Pre-emphasis, Hamming window, power spectrum, mel filterbank, floored log,
/// orthonormal DCT-II truncated to `num_coeffs`.
pub fn compute_mfcc(samples: &[f32], sample_rate: u32, config: &MfccConfig) -> Result<Features> {
    config.validate()?;
    if sample_rate != config.sample_rate_hz {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} Hz does not match configured {} Hz",
            config.sample_rate_hz
        )));
    }
    let frame_len = config.frame_length_samples();
    let shift = config.frame_shift_samples();
    let num_frames = config.num_frames(samples.len());
    if num_frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "audio has {} samples, shorter than one {frame_len}-sample frame",
            samples.len()
        )));
    }

    let emphasized: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let prev = if i == 0 { 0.0 } else { samples[i - 1] as f64 };
            x as f64 - config.preemphasis * prev
        })
        .collect();

    let fft_size = frame_len.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let window: Vec<f64> = (0..frame_len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
        .collect();
    let filters = mel_filterbank(config.num_mel_filters, fft_size, sample_rate);
    let m = config.num_mel_filters;
    let dct: Vec<Vec<f64>> = (0..config.num_coeffs)
        .map(|i| {
            let scale = if i == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            (0..m)
                .map(|j| scale * (PI * i as f64 * (j as f64 + 0.5) / m as f64).cos())
                .collect()
        })
        .collect();

    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut cepstra = Vec::with_capacity(num_frames);
    for f in 0..num_frames {
        let frame = &emphasized[f * shift..f * shift + frame_len];
        for (slot, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(x * w, 0.0);
        }
        buf[frame_len..].fill(Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / fft_size as f64)
            .collect();
        let log_energy: Vec<f64> = filters
            .iter()
            .map(|fb| {
                let e: f64 = fb.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        let coeffs: Vec<f64> = dct
            .iter()
            .map(|row| row.iter().zip(&log_energy).map(|(a, b)| a * b).sum())
            .collect();
        cepstra.push(coeffs);
    }

    let rows = if config.include_deltas {
        let d1 = deltas(&cepstra);
        let d2 = deltas(&d1);
        cepstra
            .into_iter()
            .zip(d1)
            .zip(d2)
            .map(|((mut c, a), b)| {
                c.extend(a);
                c.extend(b);
                c
            })
            .collect()
    } else {
        cepstra
    };
    Features::from_rows(config.feature_dim(), rows)
}
