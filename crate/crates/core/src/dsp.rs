//! FFT plumbing shared by the scalogram, scattering and MFCC stages.
//!
//! Signals are carried around as unnormalized DFT spectra. A spectrum of
//! length `n` describes a signal of `n` samples; [`resample_spectrum`] moves
//! it to another power-of-two length without leaving the frequency domain,
//! which is how every multirate stage changes its hop.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanKey = (usize, bool);

fn plans() -> &'static Mutex<(FftPlanner<f64>, HashMap<PlanKey, Arc<dyn Fft<f64>>>)> {
    static PLANS: OnceLock<Mutex<(FftPlanner<f64>, HashMap<PlanKey, Arc<dyn Fft<f64>>>)>> =
        OnceLock::new();
    PLANS.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())))
}

/// Cached plan for a DFT of length `len`.
pub fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut guard = plans().lock().expect("fft planner poisoned");
    let (planner, cache) = &mut *guard;
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place forward DFT, unnormalized.
pub fn fft(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place inverse DFT including the `1/n` factor.
pub fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
    }
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

pub fn real_spectrum(signal: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&mut buf);
    buf
}

/// Signed frequency of DFT bin `k` for a transform of length `n` on an axis
/// sampled at `rate` samples per unit.
#[inline]
pub fn bin_frequency(k: usize, n: usize, rate: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * rate / n as f64
}

/// Re-expresses a spectrum of a length-`n` signal as the spectrum of the same
/// band-limited signal sampled on `m` points.
///
/// For `m < n` the bins are folded, so the inverse transform reproduces the
/// dense signal subsampled by `n / m` exactly. For `m > n` the spectrum is
/// zero-padded (band-limited interpolation).
pub fn resample_spectrum(spec: &[Complex64], m: usize) -> Vec<Complex64> {
    let n = spec.len();
    let scale = m as f64 / n as f64;
    if m == n {
        return spec.to_vec();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    if m < n {
        assert!(n % m == 0, "fold length {m} must divide {n}");
        for (k, v) in spec.iter().enumerate() {
            out[k % m] += v * scale;
        }
    } else {
        assert!(m % n == 0, "upsampled length {m} must be a multiple of {n}");
        let half = n / 2;
        for k in 0..n {
            if n % 2 == 0 && k == half && n > 1 {
                out[half] += spec[k] * (0.5 * scale);
                out[m - half] += spec[k] * (0.5 * scale);
            } else if k < half || (n % 2 == 1 && k == half) {
                out[k] = spec[k] * scale;
            } else {
                out[m - (n - k)] = spec[k] * scale;
            }
        }
    }
    out
}

/// Symmetric reflection without repeating the edge sample (period `2n - 2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Reflection padding on both sides; pads longer than the signal keep
/// reflecting.
pub fn reflect_pad<T: Copy>(x: &[T], left: usize, right: usize) -> Vec<T> {
    let n = x.len();
    (0..left + n + right)
        .map(|i| x[reflect_index(i as isize - left as isize, n)])
        .collect()
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Smallest multiple of `align` that is at least `n` and whose quotient by
/// `align` has no prime factor above 5.
pub fn smooth_len(n: usize, align: usize) -> usize {
    let align = align.max(1);
    let mut q = n.div_ceil(align).max(1);
    loop {
        let mut r = q;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return q * align;
        }
        q += 1;
    }
}

pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}
