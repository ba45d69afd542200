//! First-order modulus wavelet transform (constant-Q scalogram).
//!
//! The clip is padded, transformed once, and every band is obtained by
//! multiplying the spectrum with a Morlet response and folding it down to
//! the band's hop before the inverse FFT. Folding makes each multirate band
//! exactly equal to its dense counterpart subsampled at that hop.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};
use crate::filterbank::{FilterKernel, TemporalFilterbank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalogramMode {
    /// Every band at the input sample rate.
    Dense,
    /// Every band at its admissible hop.
    Multirate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Symmetric reflection on both sides.
    Reflect,
    /// Circular convolution over the clip itself (no padding).
    Periodic,
}

/// Layout options for the padded analysis grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Framing {
    pub mode: ScalogramMode,
    pub boundary: Boundary,
    /// Minimum padding on each side, in samples.
    pub min_pad: usize,
    /// The left padding is rounded up to a multiple of this.
    pub align: usize,
    /// Upper bound on any band's hop.
    pub max_hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub center: f64,
    pub hop: usize,
    /// Magnitudes over the whole padded grid (`padded_len / hop` frames).
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub clip_id: String,
    pub sample_rate: f64,
    pub bands: Vec<Band>,
    /// Length of the padded grid in samples.
    pub padded_len: usize,
    /// Position of the first clip sample on the padded grid.
    pub offset: usize,
    /// Number of clip samples (after any zero extension of short clips).
    pub valid_len: usize,
}

impl Scalogram {
    /// Frame range of a grid with hop `hop` whose sample positions fall
    /// inside the clip.
    pub fn valid_frames(&self, hop: usize) -> std::ops::Range<usize> {
        let start = self.offset.div_ceil(hop);
        let end = (self.offset + self.valid_len).div_ceil(hop);
        start..end.max(start + 1).min(self.padded_len / hop)
    }

    /// Averaging weights over a grid with hop `hop` that reproduce the
    /// per-sample mean over the clip: frame `k` stands for the `hop` samples
    /// centered on it, weighted by how many of them lie inside the clip.
    /// The weights sum to one.
    pub fn clip_weights(&self, hop: usize) -> Vec<f64> {
        let (lo, hi) = (self.offset as f64, (self.offset + self.valid_len) as f64);
        let h = hop as f64;
        (0..self.padded_len / hop)
            .map(|k| {
                let start = (k * hop) as f64 - (hop / 2) as f64;
                let overlap = (start + h).min(hi) - start.max(lo);
                overlap.max(0.0) / self.valid_len as f64
            })
            .collect()
    }

    /// Band magnitudes restricted to frames inside the clip.
    pub fn valid(&self, band: usize) -> &[f64] {
        let b = &self.bands[band];
        &b.values[self.valid_frames(b.hop)]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center).collect()
    }

    /// Time-averaged magnitude of each band over the clip.
    pub fn band_means(&self) -> Vec<f64> {
        self.bands
            .iter()
            .map(|b| {
                let w = self.clip_weights(b.hop);
                b.values.iter().zip(&w).map(|(v, w)| v * w).sum()
            })
            .collect()
    }
}

/// Multiplies a spectrum by a kernel and re-expresses the product on `m`
/// bins: folded when `m` is shorter, zero-extended when longer.
pub(crate) fn filter_and_fold(
    spectrum: &[Complex64],
    kernel: &FilterKernel,
    rate: f64,
    m: usize,
) -> Vec<Complex64> {
    let n = spectrum.len();
    let scale = m as f64 / n as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for &(k, h) in kernel.cached_bins(n, rate).iter() {
        let signed = if k <= n / 2 { k as i64 } else { k as i64 - n as i64 };
        out[signed.rem_euclid(m as i64) as usize] += spectrum[k] * (h * scale);
    }
    out
}

fn check_clip(clip: &AudioClip, bank: &TemporalFilterbank) -> Result<()> {
    if clip.is_empty() {
        return Err(Error::InvalidInput(format!("clip {:?} is empty", clip.id)));
    }
    if (clip.sample_rate - bank.sample_rate()).abs() > 1e-9 {
        return Err(Error::SampleRateMismatch {
            expected: bank.sample_rate(),
            found: clip.sample_rate,
        });
    }
    Ok(())
}

pub fn scalogram(
    clip: &AudioClip,
    bank: &TemporalFilterbank,
    mode: ScalogramMode,
) -> Result<Scalogram> {
    scalogram_framed(
        clip,
        bank,
        Framing {
            mode,
            boundary: Boundary::Reflect,
            min_pad: bank.max_half_support(),
            align: 1,
            max_hop: usize::MAX,
        },
    )
}

pub fn scalogram_framed(
    clip: &AudioClip,
    bank: &TemporalFilterbank,
    framing: Framing,
) -> Result<Scalogram> {
    check_clip(clip, bank)?;
    let mut x = clip.samples.clone();
    let (offset, padded) = match framing.boundary {
        Boundary::Reflect => {
            let min_len = 2 * bank.max_half_support();
            if x.len() < min_len {
                x.resize(min_len, 0.0);
            }
            let align = framing.align.max(1);
            let left = framing.min_pad.div_ceil(align) * align;
            let n = dsp::smooth_len(left + x.len() + framing.min_pad, align);
            (left, dsp::reflect_pad(&x, left, n - left - x.len()))
        }
        Boundary::Periodic => (0, x.clone()),
    };
    let n = padded.len();
    let spectrum = dsp::real_spectrum(&padded);
    let rate = bank.sample_rate();
    let bands = bank
        .kernels
        .par_iter()
        .map(|kernel| {
            let mut hop = match framing.mode {
                ScalogramMode::Dense => 1,
                ScalogramMode::Multirate => kernel.downsampling.min(framing.max_hop).max(1),
            };
            while n % hop != 0 {
                hop /= 2;
            }
            let mut y = filter_and_fold(&spectrum, kernel, rate, n / hop);
            dsp::ifft(&mut y);
            Band {
                center: kernel.center,
                hop,
                values: y.iter().map(|v| v.norm()).collect(),
            }
        })
        .collect();
    Ok(Scalogram {
        clip_id: clip.id.clone(),
        sample_rate: rate,
        bands,
        padded_len: n,
        offset,
        valid_len: x.len(),
    })
}
