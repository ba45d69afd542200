//! First- and second-order joint time-frequency scattering, its separable
//! counterpart, and the rate-scale slice.
//!
//! Every coefficient is averaged over the whole clip. For second-order
//! paths the final `phi_T` smoothing and the mean over clip frames are
//! folded into a single weight per frame, `w = (phi_T * 1_clip) / |clip|`,
//! so `U2` never has to be stored: each frame's modulus is accumulated into
//! `sum_t w(t) U2(t, lambda)` as soon as it is computed.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::Fft;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};
use crate::filterbank::{
    build_temporal_filterbank, gaussian_lowpass, octave_grid, FilterKernel, TemporalFilterbank,
    TemporalFilterbankSpec,
};
use crate::scalogram::{filter_and_fold, scalogram_framed, Boundary, Framing, Scalogram, ScalogramMode};

/// Each multirate grid keeps at least this many frames inside the clip.
const MIN_CLIP_FRAMES: usize = 32;
/// Frames per parallel work unit in the frame loops.
const FRAME_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringConfig {
    pub sample_rate: f64,
    pub quality_factor: f64,
    pub octaves: u32,
    pub min_center_frequency: f64,
    /// Time constant T of the temporal low-pass, in seconds.
    pub time_constant: f64,
    /// Width F of the frequential low-pass, in octaves.
    pub frequential_width: f64,
    /// Positive frequential scales in cycles per octave; the joint transform
    /// uses each with both signs, plus the low-pass slot.
    pub scales: Vec<f64>,
    /// Highest modulation rate in Hz; defaults to the top center frequency
    /// divided by Q.
    pub max_rate: Option<f64>,
    /// Decimate every band and grid at its admissible hop. When false every
    /// stage runs at the input sample rate.
    pub multirate: bool,
    /// Every multirate hop is divided by `2^oversampling`. At zero the
    /// alias budget alone sets the hops and weak paths can drift by several
    /// percent from their dense values.
    pub oversampling: u32,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        let bank = TemporalFilterbankSpec::default();
        ScatteringConfig {
            sample_rate: bank.sample_rate,
            quality_factor: bank.quality_factor,
            octaves: bank.octaves,
            min_center_frequency: bank.min_center_frequency,
            time_constant: 1.0,
            frequential_width: 2.0,
            scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            max_rate: None,
            multirate: true,
            oversampling: 1,
        }
    }
}

impl ScatteringConfig {
    pub fn bank_spec(&self) -> TemporalFilterbankSpec {
        TemporalFilterbankSpec {
            quality_factor: self.quality_factor,
            octaves: self.octaves,
            sample_rate: self.sample_rate,
            min_center_frequency: self.min_center_frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bank_spec().validate()?;
        if !(self.time_constant > 0.0) {
            return Err(Error::InvalidParameter("time constant must be positive".into()));
        }
        if !(self.frequential_width > 0.0) {
            return Err(Error::InvalidParameter("frequential width must be positive".into()));
        }
        if self.oversampling > 8 {
            return Err(Error::InvalidParameter("oversampling above 8 is never useful".into()));
        }
        if let Some(b) = self.scales.iter().find(|b| !(**b > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "scales are listed unsigned and must be positive, got {b}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Joint,
    Separable,
}

/// Index of one coefficient: order, acoustic frequency (Hz), modulation
/// rate (Hz, zero at first order) and scale (cycles per octave).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringPath {
    pub order: u8,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl fmt::Display for ScatteringPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S{}(lambda={:.2}Hz,alpha={}Hz,beta={})",
            self.order, self.lambda, self.alpha, self.beta
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringFeatures {
    pub clip_id: String,
    pub paths: Arc<[ScatteringPath]>,
    pub values: Vec<f64>,
}

impl ScatteringFeatures {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Second-order energy integrated over time and acoustic frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateScaleSlice {
    pub clip_id: String,
    /// Row labels, Hz.
    pub rates: Vec<f64>,
    /// Column labels, cycles per octave.
    pub scales: Vec<f64>,
    /// `values[i][j]` is the energy at `rates[i]`, `scales[j]`.
    pub values: Vec<Vec<f64>>,
}

impl RateScaleSlice {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha_hz");
        for b in &self.scales {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        for (a, row) in self.rates.iter().zip(&self.values) {
            out.push_str(&format!("{a}"));
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Rate and scale of the largest entry.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (0, 0);
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v > self.values[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        (self.rates[best.0], self.scales[best.1])
    }

    /// Rate whose row carries the most energy.
    pub fn dominant_rate(&self) -> f64 {
        let sums: Vec<f64> = self.values.iter().map(|r| r.iter().sum()).collect();
        let i = (0..sums.len())
            .max_by(|&a, &b| sums[a].total_cmp(&sums[b]))
            .unwrap_or(0);
        self.rates[i]
    }
}

/// Transform along the log-frequency axis: reflection padding, FFT, one
/// multiplication per frequential filter, inverse FFT and modulus.
struct LambdaTransform {
    bands: usize,
    pad: usize,
    len: usize,
    /// Frequential filter responses, scaled by `1/len` for the inverse DFT.
    responses: Vec<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl LambdaTransform {
    fn new(bands: usize, bins_per_octave: f64, kernels: &[FilterKernel]) -> Self {
        let widest = kernels.iter().map(|k| k.dual_spread()).fold(0.0, f64::max);
        let pad = (4.0 * widest * bins_per_octave).ceil() as usize;
        let len = dsp::next_pow2(bands + 2 * pad);
        let scale = 1.0 / len as f64;
        let responses = kernels
            .iter()
            .map(|k| k.sample(len, bins_per_octave).into_iter().map(|h| h * scale).collect())
            .collect();
        LambdaTransform {
            bands,
            pad,
            len,
            responses,
            forward: dsp::plan(len, false),
            inverse: dsp::plan(len, true),
        }
    }

    fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Writes `|row * kernel_j|` over the band axis into `out[j]`.
    fn moduli(
        &self,
        row: &[Complex64],
        spectrum: &mut Vec<Complex64>,
        work: &mut Vec<Complex64>,
        scratch: &mut [Complex64],
        out: &mut [Vec<f64>],
    ) {
        spectrum.clear();
        spectrum.extend((0..self.len).map(|i| {
            row[dsp::reflect_index(i as isize - self.pad as isize, self.bands)]
        }));
        self.forward.process_with_scratch(spectrum, scratch);
        for (resp, dst) in self.responses.iter().zip(out.iter_mut()) {
            work.clear();
            work.extend(spectrum.iter().zip(resp).map(|(v, h)| v * *h));
            self.inverse.process_with_scratch(work, scratch);
            for (d, v) in dst.iter_mut().zip(&work[self.pad..self.pad + self.bands]) {
                *d = (v.re * v.re + v.im * v.im).sqrt();
            }
        }
    }
}

/// Per-clip grid bookkeeping shared by all stages.
struct Layout {
    scal: Scalogram,
    spectra: Vec<Vec<Complex64>>,
    hop_cap: usize,
}

impl Layout {
    fn frames(&self, hop: usize) -> usize {
        self.scal.padded_len / hop
    }

    fn band_rate(&self, band: usize) -> f64 {
        self.scal.sample_rate / self.scal.bands[band].hop as f64
    }
}

pub struct ScatteringNetwork {
    config: ScatteringConfig,
    variant: Variant,
    bank: TemporalFilterbank,
    time_lowpass: FilterKernel,
    rates: Vec<f64>,
    rate_kernels: Vec<FilterKernel>,
    /// Signed scales (ascending) for the joint transform, 0 = low-pass.
    signed_scales: Vec<f64>,
    /// Nonnegative scales (ascending) for first order and the separable
    /// transform.
    unsigned_scales: Vec<f64>,
    joint_lambda: LambdaTransform,
    unsigned_lambda: LambdaTransform,
    /// Taps of the frequential low-pass applied after the second modulus.
    lowpass_taps: Vec<f64>,
    s1_bands: Vec<usize>,
    s2_bands: Vec<usize>,
    paths: Arc<[ScatteringPath]>,
}

fn frequential_kernel(scale: f64, width: f64) -> Result<FilterKernel> {
    if scale == 0.0 {
        FilterKernel::gaussian_lowpass(width)
    } else {
        Ok(FilterKernel::morlet(scale, 1.0))
    }
}

fn strided(count: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    (stride / 2..count).step_by(stride).collect()
}

impl ScatteringNetwork {
    pub fn new(config: &ScatteringConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        let thin = |d: usize| (d >> config.oversampling).max(1);
        let mut bank = build_temporal_filterbank(&config.bank_spec())?;
        for k in &mut bank.kernels {
            k.downsampling = thin(k.downsampling);
        }
        let q = bank.spec.bands_per_octave();
        let mut time_lowpass = gaussian_lowpass(config.time_constant, config.sample_rate)?;
        time_lowpass.downsampling = thin(time_lowpass.downsampling);

        let s1_bands = strided(bank.len(), q / 4);
        let s2_bands = strided(
            bank.len(),
            (q as f64 * config.frequential_width / 2.0).round() as usize,
        );
        let top_rate = config
            .max_rate
            .unwrap_or(bank.kernels.last().expect("nonempty bank").center / config.quality_factor);
        let max_used = s2_bands
            .iter()
            .map(|&i| bank.kernels[i].center / config.quality_factor)
            .fold(0.0, f64::max);
        let rates: Vec<f64> = octave_grid(1.0 / config.time_constant, top_rate.min(max_used));
        if rates.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no modulation rate between 1/T = {} Hz and {:.2} Hz",
                1.0 / config.time_constant,
                top_rate.min(max_used)
            )));
        }
        let rate_kernels = rates
            .iter()
            .map(|&a| {
                let mut k = FilterKernel::morlet(a, 1.0);
                k.downsampling = thin(k.admissible_downsampling(config.sample_rate));
                k
            })
            .collect();

        let mut positive = config.scales.clone();
        positive.sort_by(f64::total_cmp);
        positive.dedup();
        let mut signed_scales: Vec<f64> = positive.iter().rev().map(|b| -b).collect();
        signed_scales.push(0.0);
        signed_scales.extend(&positive);
        let mut unsigned_scales = vec![0.0];
        unsigned_scales.extend(&positive);

        let kernels = |scales: &[f64]| -> Result<Vec<FilterKernel>> {
            scales
                .iter()
                .map(|&b| frequential_kernel(b, config.frequential_width))
                .collect()
        };
        let bins = q as f64;
        let joint_lambda = LambdaTransform::new(bank.len(), bins, &kernels(&signed_scales)?);
        let unsigned_lambda = LambdaTransform::new(bank.len(), bins, &kernels(&unsigned_scales)?);

        let sigma = FilterKernel::gaussian_lowpass(config.frequential_width)?.dual_spread() * bins;
        let reach = (4.0 * sigma).ceil() as i64;
        let mut lowpass_taps: Vec<f64> = (-reach..=reach)
            .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = lowpass_taps.iter().sum();
        lowpass_taps.iter_mut().for_each(|t| *t /= total);

        let mut net = ScatteringNetwork {
            config: config.clone(),
            variant,
            bank,
            time_lowpass,
            rates,
            rate_kernels,
            signed_scales,
            unsigned_scales,
            joint_lambda,
            unsigned_lambda,
            lowpass_taps,
            s1_bands,
            s2_bands,
            paths: Arc::from(Vec::new()),
        };
        net.paths = Arc::from(net.enumerate_paths());
        Ok(net)
    }

    fn enumerate_paths(&self) -> Vec<ScatteringPath> {
        let mut paths = Vec::new();
        for &i in &self.s1_bands {
            for &beta in &self.unsigned_scales {
                paths.push(ScatteringPath {
                    order: 1,
                    lambda: self.bank.kernels[i].center,
                    alpha: 0.0,
                    beta,
                });
            }
        }
        let scales = match self.variant {
            Variant::Joint => &self.signed_scales,
            Variant::Separable => &self.unsigned_scales,
        };
        for &i in &self.s2_bands {
            let lambda = self.bank.kernels[i].center;
            for &alpha in self.rates_for(lambda) {
                for &beta in scales {
                    paths.push(ScatteringPath {
                        order: 2,
                        lambda,
                        alpha,
                        beta,
                    });
                }
            }
        }
        paths
    }

    fn rates_for(&self, lambda: f64) -> &[f64] {
        let limit = lambda / self.config.quality_factor * (1.0 + 1e-12);
        let n = self.rates.partition_point(|&a| a <= limit);
        &self.rates[..n]
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn bank(&self) -> &TemporalFilterbank {
        &self.bank
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn signed_scales(&self) -> &[f64] {
        &self.signed_scales
    }

    pub fn paths(&self) -> &Arc<[ScatteringPath]> {
        &self.paths
    }

    pub fn dimension(&self) -> usize {
        self.paths.len()
    }

    fn hop(&self, kernel: &FilterKernel, cap: usize) -> usize {
        if self.config.multirate {
            kernel.downsampling.min(cap).max(1)
        } else {
            1
        }
    }

    fn layout(&self, clip: &AudioClip) -> Result<Layout> {
        let rate = self.config.sample_rate;
        let clip_len = clip.samples.len().max(2 * self.bank.max_half_support());
        let hop_cap = if self.config.multirate {
            let c = (clip_len / MIN_CLIP_FRAMES).max(1);
            1usize << (usize::BITS - 1 - c.leading_zeros())
        } else {
            1
        };
        let slowest = self.rate_kernels[0].dual_spread().max(self.time_lowpass.dual_spread());
        let min_pad = self
            .bank
            .max_half_support()
            .max((4.0 * slowest * rate).ceil() as usize);
        let scal = scalogram_framed(
            clip,
            &self.bank,
            Framing {
                mode: if self.config.multirate {
                    ScalogramMode::Multirate
                } else {
                    ScalogramMode::Dense
                },
                boundary: Boundary::Reflect,
                min_pad,
                align: hop_cap,
                max_hop: hop_cap,
            },
        )?;
        let spectra = scal
            .bands
            .par_iter()
            .map(|b| dsp::real_spectrum(&b.values))
            .collect();
        Ok(Layout {
            scal,
            spectra,
            hop_cap,
        })
    }

    /// `(phi_T * 1_clip) / |clip|` on the grid of hop `hop`.
    fn frame_weights(&self, layout: &Layout, hop: usize) -> Vec<f64> {
        let n = layout.frames(hop);
        let mut ind: Vec<Complex64> = layout
            .scal
            .clip_weights(hop)
            .into_iter()
            .map(|w| Complex64::new(w, 0.0))
            .collect();
        dsp::fft(&mut ind);
        let mut w = filter_and_fold(&ind, &self.time_lowpass, self.config.sample_rate / hop as f64, n);
        dsp::ifft(&mut w);
        w.iter().map(|v| v.re.max(0.0)).collect()
    }

    /// Bands filtered by `kernel` in time and resampled to hop `hop`.
    fn temporal(&self, layout: &Layout, kernel: &FilterKernel, hop: usize) -> Vec<Vec<Complex64>> {
        let m = layout.frames(hop);
        layout
            .spectra
            .par_iter()
            .enumerate()
            .map(|(b, spec)| {
                let mut y = filter_and_fold(spec, kernel, layout.band_rate(b), m);
                dsp::ifft(&mut y);
                y
            })
            .collect()
    }

    /// Sums `w(t) |rows(t) * kernel_j|` over frames, for every band.
    /// Also returns, per kernel, the clip mean (weights `clip`) of the band
    /// sum over `slice_bands`, which is what the rate-scale slice needs.
    fn accumulate(
        &self,
        rows: &[Vec<Complex64>],
        transform: &LambdaTransform,
        weights: &[f64],
        clip: &[f64],
        slice_bands: std::ops::Range<usize>,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n_k = transform.responses.len();
        let bands = transform.bands;
        let peak = weights.iter().cloned().fold(0.0, f64::max);
        let want_slice = !slice_bands.is_empty();
        let frames: Vec<usize> = (0..weights.len())
            .filter(|&t| weights[t] > 1e-12 * peak || (want_slice && clip[t] > 0.0))
            .collect();
        let partials: Vec<(Vec<Vec<f64>>, Vec<f64>)> = frames
            .par_chunks(FRAME_CHUNK)
            .map(|chunk| {
                let mut acc = vec![vec![0.0; bands]; n_k];
                let mut slice = vec![0.0; n_k];
                let mut row = vec![Complex64::new(0.0, 0.0); bands];
                let mut spectrum = Vec::with_capacity(transform.len);
                let mut work = Vec::with_capacity(transform.len);
                let mut scratch = vec![Complex64::new(0.0, 0.0); transform.scratch_len()];
                let mut moduli = vec![vec![0.0; bands]; n_k];
                for &t in chunk {
                    for (r, band) in row.iter_mut().zip(rows) {
                        *r = band[t];
                    }
                    transform.moduli(&row, &mut spectrum, &mut work, &mut scratch, &mut moduli);
                    let w = weights[t];
                    for j in 0..n_k {
                        for (a, m) in acc[j].iter_mut().zip(&moduli[j]) {
                            *a += w * m;
                        }
                        if want_slice && clip[t] > 0.0 {
                            slice[j] += clip[t] * moduli[j][slice_bands.clone()].iter().sum::<f64>();
                        }
                    }
                }
                (acc, slice)
            })
            .collect();
        let mut acc = vec![vec![0.0; bands]; n_k];
        let mut slice = vec![0.0; n_k];
        for (a, s) in partials {
            for j in 0..n_k {
                for (x, y) in acc[j].iter_mut().zip(&a[j]) {
                    *x += y;
                }
                slice[j] += s[j];
            }
        }
        (acc, slice)
    }

    /// Frequential low-pass of an accumulated band profile, read at `band`.
    fn smooth_at(&self, profile: &[f64], band: usize) -> f64 {
        let reach = (self.lowpass_taps.len() / 2) as isize;
        self.lowpass_taps
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let idx = dsp::reflect_index(band as isize + j as isize - reach, profile.len());
                w * profile[idx]
            })
            .sum()
    }

    fn first_order(&self, layout: &Layout) -> Vec<f64> {
        let hop = self.hop(&self.time_lowpass, layout.hop_cap);
        let smoothed = self.temporal(layout, &self.time_lowpass, hop);
        let clip = layout.scal.clip_weights(hop);
        let (means, _) = self.accumulate(&smoothed, &self.unsigned_lambda, &clip, &clip, 0..0);
        let mut out = Vec::with_capacity(self.s1_bands.len() * means.len());
        for &i in &self.s1_bands {
            out.extend(means.iter().map(|m| m[i]));
        }
        out
    }

    fn second_order_joint(&self, layout: &Layout, want_slice: bool) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let mut per_rate = Vec::with_capacity(self.rates.len());
        let mut slice = Vec::with_capacity(self.rates.len());
        let centers = layout.scal.centers();
        for (alpha, kernel) in self.rates.iter().zip(&self.rate_kernels) {
            let hop = self.hop(kernel, layout.hop_cap);
            let rows = self.temporal(layout, kernel, hop);
            let weights = self.frame_weights(layout, hop);
            let first_band = centers.partition_point(|&l| l / self.config.quality_factor < alpha * (1.0 - 1e-12));
            let slice_bands = if want_slice { first_band..centers.len() } else { 0..0 };
            let clip = layout.scal.clip_weights(hop);
            let (acc, v) = self.accumulate(&rows, &self.joint_lambda, &weights, &clip, slice_bands);
            per_rate.push(acc);
            slice.push(v);
        }
        (per_rate, slice)
    }

    fn second_order_separable(&self, layout: &Layout) -> Vec<Vec<Vec<f64>>> {
        let t_hop = self.hop(&self.time_lowpass, layout.hop_cap);
        let m_t = layout.frames(t_hop);
        let weights = self.frame_weights(layout, t_hop);
        self.rate_kernels
            .iter()
            .map(|kernel| {
                let hop = self.hop(kernel, layout.hop_cap);
                let rate = self.config.sample_rate / hop as f64;
                let rows: Vec<Vec<Complex64>> = self
                    .temporal(layout, kernel, hop)
                    .into_par_iter()
                    .map(|y| {
                        let mut z: Vec<Complex64> =
                            y.iter().map(|v| Complex64::new(v.norm(), 0.0)).collect();
                        dsp::fft(&mut z);
                        let mut s = filter_and_fold(&z, &self.time_lowpass, rate, m_t);
                        dsp::ifft(&mut s);
                        s
                    })
                    .collect();
                self.accumulate(&rows, &self.unsigned_lambda, &weights, &[], 0..0).0
            })
            .collect()
    }

    fn assemble_second(&self, per_rate: &[Vec<Vec<f64>>], scales: usize, out: &mut Vec<f64>) {
        for &i in &self.s2_bands {
            let lambda = self.bank.kernels[i].center;
            for (r, _) in self.rates_for(lambda).iter().enumerate() {
                for profile in per_rate[r].iter().take(scales) {
                    out.push(self.smooth_at(profile, i));
                }
            }
        }
    }

    fn check(&self, clip: &AudioClip) -> Result<()> {
        if clip.is_empty() {
            return Err(Error::InvalidInput(format!("clip {:?} is empty", clip.id)));
        }
        if (clip.sample_rate - self.config.sample_rate).abs() > 1e-9 {
            return Err(Error::SampleRateMismatch {
                expected: self.config.sample_rate,
                found: clip.sample_rate,
            });
        }
        Ok(())
    }

    /// Time-averaged scattering coefficients of `clip`, ordered as
    /// [`ScatteringNetwork::paths`].
    pub fn transform(&self, clip: &AudioClip) -> Result<ScatteringFeatures> {
        self.check(clip)?;
        let layout = self.layout(clip)?;
        let mut values = self.first_order(&layout);
        match self.variant {
            Variant::Joint => {
                let (per_rate, _) = self.second_order_joint(&layout, false);
                self.assemble_second(&per_rate, self.signed_scales.len(), &mut values);
            }
            Variant::Separable => {
                let per_rate = self.second_order_separable(&layout);
                self.assemble_second(&per_rate, self.unsigned_scales.len(), &mut values);
            }
        }
        debug_assert_eq!(values.len(), self.paths.len());
        Ok(ScatteringFeatures {
            clip_id: clip.id.clone(),
            paths: self.paths.clone(),
            values,
        })
    }

    /// `U2` of the joint transform averaged over the clip and summed over
    /// every band whose center satisfies `alpha <= lambda / Q`.
    pub fn rate_scale_slice(&self, clip: &AudioClip) -> Result<RateScaleSlice> {
        self.check(clip)?;
        let layout = self.layout(clip)?;
        let (_, values) = self.second_order_joint(&layout, true);
        Ok(RateScaleSlice {
            clip_id: clip.id.clone(),
            rates: self.rates.clone(),
            scales: self.signed_scales.clone(),
            values,
        })
    }
}

pub fn scattering_vector(clip: &AudioClip, config: &ScatteringConfig) -> Result<ScatteringFeatures> {
    ScatteringNetwork::new(config, Variant::Joint)?.transform(clip)
}

pub fn separable_scattering(clip: &AudioClip, config: &ScatteringConfig) -> Result<ScatteringFeatures> {
    ScatteringNetwork::new(config, Variant::Separable)?.transform(clip)
}

pub fn rate_scale_slice(clip: &AudioClip, config: &ScatteringConfig) -> Result<RateScaleSlice> {
    ScatteringNetwork::new(config, Variant::Joint)?.rate_scale_slice(clip)
}
