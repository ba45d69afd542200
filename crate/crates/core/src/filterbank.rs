//! Morlet and Gaussian filterbanks, stored as closed-form frequency responses.
//!
//! A Morlet wavelet with dimensionless Gaussian width `sigma` and center `c`
//! has the real-valued Fourier transform
//!
//! ```text
//! psi_hat(f) = exp(-2 pi^2 sigma^2 (f/c - 1)^2) - kappa * exp(-2 pi^2 sigma^2 (f/c)^2)
//! ```
//!
//! with `kappa = exp(-2 pi^2 sigma^2)`, so the DC response is exactly zero.
//! Responses are then scaled to a peak gain of one.
//! Choosing `sigma = Q / (2 sqrt(pi))` makes the equivalent rectangular
//! bandwidth `integral |psi_hat|^2 / max |psi_hat|^2` equal `c / Q`.
//! A negative center mirrors the response, which is how signed frequential
//! scales are represented.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aliased-energy budget used to pick each kernel's downsampling factor.
const ALIAS_BUDGET: f64 = 0.01;
/// Largest hop any band may use; keeps hops compatible with short clips.
const MAX_DOWNSAMPLING: usize = 1 << 14;

fn width_for_quality(quality_factor: f64) -> f64 {
    quality_factor / (2.0 * PI.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Shape {
    Morlet { sigma: f64, kappa: f64, gain: f64 },
    Gaussian { sigma: f64 },
}

/// One filter of a bank, described by its frequency response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterKernel {
    /// Center frequency in axis units (Hz, or cycles per octave). Zero for
    /// low-pass filters; negative for mirrored wavelets.
    pub center: f64,
    /// Equivalent rectangular bandwidth in axis units.
    pub bandwidth: f64,
    /// Largest power-of-two decimation of the filtered signal whose aliased
    /// energy stays under 1% (for the sample rate the bank was built at).
    pub downsampling: usize,
    shape: Shape,
}

impl FilterKernel {
    pub fn morlet(center: f64, quality_factor: f64) -> Self {
        let sigma = width_for_quality(quality_factor);
        let a = 2.0 * PI * PI * sigma * sigma;
        let kappa = (-a).exp();
        let unscaled = |r: f64| (-a * (r - 1.0) * (r - 1.0)).exp() - kappa * (-a * r * r).exp();
        // The unscaled response is unimodal on [1/2, 3/2] for any Q >= 1.
        let (mut lo, mut hi) = (0.5f64, 1.5f64);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if unscaled(m1) < unscaled(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let gain = 1.0 / unscaled(0.5 * (lo + hi));
        let mut kernel = FilterKernel {
            center,
            bandwidth: center.abs() / quality_factor,
            downsampling: 1,
            shape: Shape::Morlet { sigma, kappa, gain },
        };
        kernel.bandwidth = kernel.erb();
        kernel
    }

    /// Gaussian low-pass whose time-domain standard deviation is
    /// `width / (2 sqrt(pi))`, matching the envelope of a unit-Q wavelet
    /// centered at `1 / width`.
    pub fn gaussian_lowpass(width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "low-pass width must be positive and finite, got {width}"
            )));
        }
        let sigma = width_for_quality(width);
        let mut kernel = FilterKernel {
            center: 0.0,
            bandwidth: 0.0,
            downsampling: 1,
            shape: Shape::Gaussian { sigma },
        };
        kernel.bandwidth = kernel.erb();
        Ok(kernel)
    }

    pub fn is_lowpass(&self) -> bool {
        matches!(self.shape, Shape::Gaussian { .. })
    }

    /// Frequency response at `f` (axis units). Real-valued for every shape.
    #[inline]
    pub fn response(&self, f: f64) -> f64 {
        match self.shape {
            Shape::Morlet { sigma, kappa, gain } => {
                let a = 2.0 * PI * PI * sigma * sigma;
                let r = f / self.center;
                gain * ((-a * (r - 1.0) * (r - 1.0)).exp() - kappa * (-a * r * r).exp())
            }
            Shape::Gaussian { sigma } => (-2.0 * PI * PI * sigma * sigma * f * f).exp(),
        }
    }

    /// Samples the response on the DFT grid of a length-`n` transform whose
    /// axis is sampled at `rate` samples per unit.
    pub fn sample(&self, n: usize, rate: f64) -> Vec<f64> {
        (0..n)
            .map(|k| self.response(crate::dsp::bin_frequency(k, n, rate)))
            .collect()
    }

    /// Standard deviation of the main Gaussian lobe, in axis units.
    fn spread(&self) -> f64 {
        match self.shape {
            Shape::Morlet { sigma, .. } => self.center.abs() / (2.0 * PI * sigma),
            Shape::Gaussian { sigma } => 1.0 / (2.0 * PI * sigma),
        }
    }

    fn integration_grid(&self) -> (f64, f64, usize) {
        let reach = self.center.abs() + 14.0 * self.spread();
        (-reach, reach, 40_001)
    }

    /// Grid frequencies and running energy `integral_{-inf}^{f} |h|^2`.
    fn cumulative_energy(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi, n) = self.integration_grid();
        let step = (hi - lo) / (n - 1) as f64;
        let freqs: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        let mut acc = 0.0;
        let cumulative = freqs
            .iter()
            .map(|&f| {
                acc += self.response(f).powi(2) * step;
                acc
            })
            .collect();
        (freqs, cumulative)
    }

    /// Numerically integrated ERB: `integral |h|^2 / max |h|^2`.
    pub fn erb(&self) -> f64 {
        let (lo, hi, n) = self.integration_grid();
        let step = (hi - lo) / (n - 1) as f64;
        let mut energy = 0.0;
        let mut peak: f64 = 0.0;
        for i in 0..n {
            let v = self.response(lo + i as f64 * step).powi(2);
            energy += v * step;
            peak = peak.max(v);
        }
        energy / peak
    }

    /// Peak magnitude of the response.
    pub fn peak(&self) -> f64 {
        match self.shape {
            Shape::Gaussian { .. } => 1.0,
            Shape::Morlet { .. } => {
                let (lo, hi, n) = self.integration_grid();
                let step = (hi - lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| self.response(lo + i as f64 * step).abs())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Standard deviation of the kernel's envelope in the dual domain
    /// (seconds for temporal filters, octaves for frequential ones).
    pub fn dual_spread(&self) -> f64 {
        match self.shape {
            Shape::Morlet { sigma, .. } => sigma / self.center.abs(),
            Shape::Gaussian { sigma } => sigma,
        }
    }

    /// Frequency interval outside which the response is below 1e-30 of its
    /// peak (both Gaussian lobes included).
    pub fn support(&self) -> (f64, f64) {
        let reach = 12.0 * self.spread();
        (self.center.min(0.0) - reach, self.center.max(0.0) + reach)
    }

    /// Nonnegligible DFT bins `(k, response)` of a length-`n` transform on an
    /// axis sampled at `rate`, in ascending bin order.
    pub fn sparse_bins(&self, n: usize, rate: f64) -> Vec<(usize, f64)> {
        let (lo, hi) = self.support();
        let scale = n as f64 / rate;
        let half = (n / 2) as i64;
        let k_lo = ((lo * scale).ceil() as i64).max(-(n as i64 - 1) / 2);
        let k_hi = ((hi * scale).floor() as i64).min(half);
        let mut bins: Vec<(usize, f64)> = (k_lo..=k_hi)
            .map(|k| {
                let idx = if k < 0 { (n as i64 + k) as usize } else { k as usize };
                (idx, self.response(k as f64 / scale))
            })
            .collect();
        bins.sort_unstable_by_key(|b| b.0);
        bins
    }

    /// [`FilterKernel::sparse_bins`], memoized per kernel and grid.
    pub(crate) fn cached_bins(&self, n: usize, rate: f64) -> Arc<[(usize, f64)]> {
        type Key = ([u64; 4], usize, u64);
        const CAPACITY: usize = 1 << 14;
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<[(usize, f64)]>>>> = OnceLock::new();
        let shape = match self.shape {
            Shape::Morlet { sigma, kappa, gain } => [sigma.to_bits(), kappa.to_bits(), gain.to_bits()],
            Shape::Gaussian { sigma } => [sigma.to_bits(), u64::MAX, u64::MAX],
        };
        let key = ([self.center.to_bits(), shape[0], shape[1], shape[2]], n, rate.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(bins) = cache.lock().expect("bin cache poisoned").get(&key) {
            return bins.clone();
        }
        let bins: Arc<[(usize, f64)]> = self.sparse_bins(n, rate).into();
        let mut guard = cache.lock().expect("bin cache poisoned");
        if guard.len() >= CAPACITY {
            guard.clear();
        }
        guard.insert(key, bins.clone());
        bins
    }

    /// Mean of the kernel in the signal domain, i.e. its DC response.
    pub fn dc(&self) -> f64 {
        self.response(0.0)
    }

    /// Picks the largest power-of-two hop such that the energy falling
    /// outside the retained band stays under the alias budget.
    ///
    /// Band-pass outputs are followed by a modulus, whose spectrum is twice
    /// as wide, so they keep `rate / (4 d)` on each side of the center.
    /// Low-pass outputs keep `rate / (2 d)`.
    pub fn admissible_downsampling(&self, rate: f64) -> usize {
        let (freqs, cumulative) = self.cumulative_energy();
        let total = *cumulative.last().expect("nonempty grid");
        let below = |f: f64| {
            let i = freqs.partition_point(|&g| g <= f);
            if i == 0 {
                0.0
            } else {
                cumulative[i - 1]
            }
        };
        let mut best = 1;
        let mut d = 2;
        while d <= MAX_DOWNSAMPLING {
            let half = if self.is_lowpass() {
                rate / (2.0 * d as f64)
            } else {
                rate / (4.0 * d as f64)
            };
            let kept = below(self.center + half) - below(self.center - half);
            if total - kept < ALIAS_BUDGET * total {
                best = d;
                d *= 2;
            } else {
                break;
            }
        }
        best
    }

    fn with_downsampling(mut self, rate: f64) -> Self {
        self.downsampling = self.admissible_downsampling(rate);
        self
    }
}

/// Parameters of the constant-Q analysis filterbank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalFilterbankSpec {
    pub quality_factor: f64,
    pub octaves: u32,
    pub sample_rate: f64,
    pub min_center_frequency: f64,
}

impl Default for TemporalFilterbankSpec {
    fn default() -> Self {
        TemporalFilterbankSpec {
            quality_factor: 12.0,
            octaves: 8,
            sample_rate: 44_100.0,
            min_center_frequency: 65.406_391_325_149_66,
        }
    }
}

impl TemporalFilterbankSpec {
    pub fn bands_per_octave(&self) -> usize {
        self.quality_factor.round().max(1.0) as usize
    }

    pub fn band_count(&self) -> usize {
        self.bands_per_octave() * self.octaves as usize
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        let q = self.bands_per_octave() as f64;
        (0..self.band_count())
            .map(|i| self.min_center_frequency * (i as f64 / q).exp2())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quality_factor >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quality factor must be >= 1, got {}",
                self.quality_factor
            )));
        }
        if self.octaves < 1 {
            return Err(Error::InvalidParameter("octave count must be >= 1".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.min_center_frequency > 0.0) {
            return Err(Error::InvalidParameter(
                "sample rate and minimum center frequency must be positive".into(),
            ));
        }
        let top = *self.center_frequencies().last().expect("at least one band");
        if top >= self.sample_rate / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "highest center frequency {top:.1} Hz is not below Nyquist ({:.1} Hz)",
                self.sample_rate / 2.0
            )));
        }
        Ok(())
    }
}

/// Constant-Q Morlet bank, sorted by ascending center frequency.
#[derive(Debug, Clone)]
pub struct TemporalFilterbank {
    pub spec: TemporalFilterbankSpec,
    pub kernels: Vec<FilterKernel>,
}

impl TemporalFilterbank {
    pub fn sample_rate(&self) -> f64 {
        self.spec.sample_rate
    }

    pub fn centers(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.center).collect()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Half the support (about four Gaussian widths) of the longest kernel, in samples.
    pub fn max_half_support(&self) -> usize {
        let lowest = self.kernels.first().map(|k| k.center).unwrap_or(1.0);
        let sigma_t = width_for_quality(self.spec.quality_factor) / lowest;
        (4.0 * sigma_t * self.spec.sample_rate).ceil() as usize
    }
}

pub fn build_temporal_filterbank(spec: &TemporalFilterbankSpec) -> Result<TemporalFilterbank> {
    spec.validate()?;
    let kernels = spec
        .center_frequencies()
        .into_iter()
        .map(|lambda| {
            FilterKernel::morlet(lambda, spec.quality_factor).with_downsampling(spec.sample_rate)
        })
        .collect();
    Ok(TemporalFilterbank {
        spec: spec.clone(),
        kernels,
    })
}

/// Geometric grid of ratio 2 from `lo` while the value stays `<= hi`.
pub fn octave_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut v = lo;
    while v <= hi * (1.0 + 1e-12) {
        grid.push(v);
        v *= 2.0;
    }
    grid
}

/// Signed scale grid `{-hi, ..., -lo, 0, lo, ..., hi}` of ratio 2.
pub fn signed_scale_grid(lo: f64, hi: f64) -> Vec<f64> {
    let positive = octave_grid(lo, hi);
    let mut grid: Vec<f64> = positive.iter().rev().map(|b| -b).collect();
    grid.push(0.0);
    grid.extend(positive);
    grid
}

/// Rates and scales of the time-frequency wavelets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFilterbankSpec {
    /// Temporal modulation rates in Hz.
    pub rates: Vec<f64>,
    /// Frequential scales in cycles per octave; zero selects the low-pass.
    pub scales: Vec<f64>,
    /// Width of the frequential low-pass, in octaves.
    pub frequential_lowpass_width: f64,
}

impl Default for JointFilterbankSpec {
    fn default() -> Self {
        JointFilterbankSpec {
            rates: octave_grid(0.5, 64.0),
            scales: signed_scale_grid(0.25, 2.0),
            frequential_lowpass_width: 2.0,
        }
    }
}

/// A time-frequency wavelet: a unit-Q temporal Morlet of center `rate`
/// times a frequential factor (unit-Q Morlet of center `scale`, or the
/// Gaussian low-pass of width F when `scale == 0`).
#[derive(Debug, Clone)]
pub struct JointKernel {
    pub rate: f64,
    pub scale: f64,
    pub temporal: FilterKernel,
    pub frequential: FilterKernel,
}

#[derive(Debug, Clone)]
pub struct JointFilterbank {
    pub spec: JointFilterbankSpec,
    pub pairs: Vec<JointKernel>,
}

impl JointFilterbank {
    pub fn temporal_for(&self, rate: f64) -> Option<&FilterKernel> {
        self.pairs.iter().find(|p| p.rate == rate).map(|p| &p.temporal)
    }

    pub fn frequential_for(&self, scale: f64) -> Option<&FilterKernel> {
        self.pairs
            .iter()
            .find(|p| p.scale == scale)
            .map(|p| &p.frequential)
    }
}

pub fn build_joint_filterbank(spec: &JointFilterbankSpec) -> Result<JointFilterbank> {
    if spec.rates.is_empty() {
        return Err(Error::InvalidParameter("rate grid is empty".into()));
    }
    if spec.scales.is_empty() {
        return Err(Error::InvalidParameter("scale grid is empty".into()));
    }
    if let Some(r) = spec.rates.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidParameter(format!("rates must be positive, got {r}")));
    }
    let lowpass = FilterKernel::gaussian_lowpass(spec.frequential_lowpass_width)?;
    let mut pairs = Vec::with_capacity(spec.rates.len() * spec.scales.len());
    for &rate in &spec.rates {
        let temporal = FilterKernel::morlet(rate, 1.0);
        for &scale in &spec.scales {
            let frequential = if scale == 0.0 {
                lowpass.clone()
            } else {
                FilterKernel::morlet(scale, 1.0)
            };
            pairs.push(JointKernel {
                rate,
                scale,
                temporal: temporal.clone(),
                frequential,
            });
        }
    }
    Ok(JointFilterbank {
        spec: spec.clone(),
        pairs,
    })
}

/// Gaussian low-pass on an axis sampled at `axis_rate` samples per unit.
/// The returned kernel carries the admissible downsampling for that rate.
pub fn gaussian_lowpass(width: f64, axis_rate: f64) -> Result<FilterKernel> {
    Ok(FilterKernel::gaussian_lowpass(width)?.with_downsampling(axis_rate))
}

/// Littlewood-Paley bounds: min and max of `sum_k |h_k(f)|^2` over the
/// passband `[lo, hi]`.
pub fn frame_bounds(bank: &[FilterKernel], passband: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = passband;
    if bank.is_empty() {
        return Err(Error::InvalidInput("empty filterbank".into()));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("empty passband [{lo}, {hi}]")));
    }
    let points = if lo == hi { 1 } else { 8192 };
    let log_spaced = lo > 0.0;
    let mut a = f64::INFINITY;
    let mut b: f64 = 0.0;
    for i in 0..points {
        let t = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
        let f = if log_spaced {
            lo * (hi / lo).powf(t)
        } else {
            lo + (hi - lo) * t
        };
        let sum: f64 = bank.iter().map(|k| k.response(f).powi(2)).sum();
        a = a.min(sum);
        b = b.max(sum);
    }
    Ok((a, b))
}

/// Frame bounds over the span of the bank's center frequencies.
pub fn default_frame_bounds(bank: &TemporalFilterbank) -> Result<(f64, f64)> {
    let centers = bank.centers();
    frame_bounds(
        &bank.kernels,
        (centers[0], *centers.last().expect("nonempty bank")),
    )
}
