//! MFCC and MFCC-Gram baseline features.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::dsp::{hann, next_pow2};
use crate::error::{Error, Result};

/// Added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    /// Seconds.
    pub frame: f64,
    /// Seconds.
    pub hop: f64,
    pub bands: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame: 0.025,
            hop: 0.0125,
            bands: 40,
        }
    }
}

/// Frames x coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccFrames {
    pub clip_id: String,
    pub frame_len: usize,
    pub hop: usize,
    pub coefficients: usize,
    pub values: Vec<f64>,
}

impl MfccFrames {
    pub fn frames(&self) -> usize {
        self.values.len() / self.coefficients
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.coefficients..(t + 1) * self.coefficients]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.frames() as f64;
        let mut m = vec![0.0; self.coefficients];
        for t in 0..self.frames() {
            for (a, v) in m.iter_mut().zip(self.frame(t)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-spaced filters from 0 Hz to Nyquist, each with unit area
/// in Hz. Rows are bands, columns are the `n_fft / 2 + 1` power bins.
pub fn mel_filterbank(bands: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let height = 2.0 / (hi - lo);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / n_fft as f64;
                    let w = if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    };
                    w * height
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II of `x`.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<MfccFrames> {
    if clip.is_empty() {
        return Err(Error::InvalidInput(format!("clip {:?} is empty", clip.id)));
    }
    let sr = clip.sample_rate;
    let frame_len = (cfg.frame * sr).round() as usize;
    let hop = (cfg.hop * sr).round() as usize;
    if frame_len < 2 || hop == 0 || cfg.bands == 0 {
        return Err(Error::InvalidParameter(format!(
            "MFCC framing {} s / {} s is too short at {sr} Hz",
            cfg.frame, cfg.hop
        )));
    }
    let n_fft = next_pow2(frame_len);
    let bank = mel_filterbank(cfg.bands, n_fft, sr);
    let window = hann(frame_len);
    let x = &clip.samples;
    let frames = if x.len() < frame_len {
        1
    } else {
        1 + (x.len() - frame_len) / hop
    };
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut values = Vec::with_capacity(frames * cfg.bands);
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            if let Some(&s) = x.get(t * hop + i) {
                buf[i].re = s * w;
            }
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let logmel: Vec<f64> = bank
            .iter()
            .map(|f| (f.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>() + LOG_FLOOR).ln())
            .collect();
        values.extend(dct2(&logmel));
    }
    Ok(MfccFrames {
        clip_id: clip.id.clone(),
        frame_len,
        hop,
        coefficients: cfg.bands,
        values,
    })
}

/// `sum_t c(t, a) c(t, b)` for `a <= b`, in row-major upper-triangle order.
pub fn gram_upper(frames: &MfccFrames) -> Vec<f64> {
    let c = frames.coefficients;
    let mut g = vec![0.0; c * (c + 1) / 2];
    for t in 0..frames.frames() {
        let v = frames.frame(t);
        let mut k = 0;
        for a in 0..c {
            for b in a..c {
                g[k] += v[a] * v[b];
                k += 1;
            }
        }
    }
    g
}

/// Upper-triangular Gram entries (diagonal included) followed by the
/// time-averaged coefficients: 860 values for 40 bands.
pub fn mfcc_gram(frames: &MfccFrames) -> Vec<f64> {
    let mut row = gram_upper(frames);
    row.extend(frames.mean());
    row
}

pub fn mfcc_path_names(bands: usize) -> Vec<String> {
    (0..bands).map(|k| format!("mfcc[{k}]")).collect()
}

pub fn gram_path_names(bands: usize) -> Vec<String> {
    let mut names = Vec::new();
    for a in 0..bands {
        for b in a..bands {
            names.push(format!("gram[{a},{b}]"));
        }
    }
    names.extend(mfcc_path_names(bands));
    names
}
