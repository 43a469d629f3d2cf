//! Stretched-profile library: integer stretch indices map to spectral
//! truncation (compress) or zero-padding (dilate) with empirical energy
//! rescaling at each truncation step.
//!
//! The index `b` relates to the continuous dilation factor through
//! `r = 1 + b/N_FFT`. A profile of padded length `N` stretched by `b` is
//! produced by resampling its one-sided spectrum to `N_FFT + b` bins,
//! inverting at the implied length `N + 2b`, and restoring length `N` in
//! the time domain (truncating the tail for `b > 0`, zero-padding for
//! `b < 0`). Length-changed inverses are scaled by `N'/N` so a constant
//! profile keeps its amplitude.

use ndarray::{Array2, Array3, ArrayView1};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    adjoint_forward_rdft, adjoint_inverse_rdft, forward_rdft, inverse_rdft, n_fft_len, Spectrum,
};

/// Dilation factor for stretch index `b`: `1 + b/n_fft`.
pub fn b_to_r(b: i32, n_fft: usize) -> f64 {
    1.0 + b as f64 / n_fft as f64
}

/// The widest admissible stretch range, `[-(N_FFT/2 - 1), N_FFT/2 - 1]`.
pub fn full_b_range(n_fft: usize) -> (i32, i32) {
    let half = (n_fft / 2) as i32;
    (-(half - 1), half - 1)
}

/// Rescale `coeffs` so its squared norm equals `energy_before`.
pub fn energy_rescale(coeffs: &[f64], energy_before: f64) -> Result<Vec<f64>> {
    let energy_after: f64 = coeffs.iter().map(|c| c * c).sum();
    if energy_after <= 0.0 {
        return Err(Error::DegenerateProfile {
            component: 0,
            stretch: 0,
        });
    }
    let factor = (energy_before / energy_after).sqrt();
    Ok(coeffs.iter().map(|c| c * factor).collect())
}

/// Two-sided energy of the first `upto` one-sided bins, with bin
/// multiplicities taken from the original length `n` (DC once, Nyquist once
/// when `n` is even, interior bins twice).
fn two_sided_partial(bins: &[Complex64], upto: usize, n: usize) -> f64 {
    let m = n_fft_len(n);
    let nyquist = if n % 2 == 0 { Some(m - 1) } else { None };
    bins.iter()
        .take(upto)
        .enumerate()
        .map(|(f, v)| {
            if f == 0 || Some(f) == nyquist {
                v.norm_sqr()
            } else {
                2.0 * v.norm_sqr()
            }
        })
        .sum()
}

fn check_b_range(b: i32, m: usize) -> Result<()> {
    if (b.unsigned_abs() as usize) >= m / 2 {
        return Err(Error::InvalidInput(format!(
            "stretch index {b} outside (-{0}, {0}) for {m} bins",
            m / 2
        )));
    }
    Ok(())
}

/// Spectrum of the profile `s` stretched by index `b`.
///
/// `b = 0` returns `forward_rdft(s)` unchanged. For `b > 0` the spectrum is
/// zero-padded and the interpolated time signal truncated back to the
/// original length; for `b < 0` the spectrum is truncated and the shorter
/// time signal zero-padded. Each truncation is followed by an energy
/// rescale so the step conserves energy.
pub fn stretch_profile(s: &[f64], b: i32) -> Result<Spectrum> {
    let n = s.len();
    let m = n_fft_len(n);
    check_b_range(b, m)?;
    let spec = forward_rdft(s)?;
    if b == 0 {
        return Ok(spec);
    }
    let n_new = (n as i64 + 2 * b as i64) as usize;
    let amp = n_new as f64 / n as f64;
    if b > 0 {
        let m_new = m + b as usize;
        let mut bins = spec.bins;
        bins.resize(m_new, Complex64::new(0.0, 0.0));
        let mut y = inverse_rdft(&Spectrum {
            bins,
            origin_length: n_new,
        })?;
        for v in &mut y {
            *v *= amp;
        }
        let energy_before: f64 = y.iter().map(|v| v * v).sum();
        let kept = energy_rescale(&y[..n], energy_before).map_err(|_| {
            Error::DegenerateProfile {
                component: 0,
                stretch: b,
            }
        })?;
        forward_rdft(&kept)
    } else {
        let m_new = (m as i64 + b as i64) as usize;
        let energy_before = two_sided_partial(&spec.bins, m, n);
        let energy_after = two_sided_partial(&spec.bins, m_new, n);
        if energy_after <= 0.0 {
            return Err(Error::DegenerateProfile {
                component: 0,
                stretch: b,
            });
        }
        let factor = (energy_before / energy_after).sqrt();
        let bins = spec.bins[..m_new].iter().map(|v| v * factor).collect();
        let y = inverse_rdft(&Spectrum {
            bins,
            origin_length: n_new,
        })?;
        let mut padded = vec![0.0; n];
        for (t, v) in y.iter().enumerate() {
            padded[t] = v * amp;
        }
        forward_rdft(&padded)
    }
}

/// Pull a spectral cotangent on `stretch_profile(s, b)` back to a cotangent
/// on the time-domain profile `s`. Recomputes the forward pass internally.
pub(crate) fn stretch_profile_vjp(s: &[f64], b: i32, cotangent: &[Complex64]) -> Result<Vec<f64>> {
    let n = s.len();
    let m = n_fft_len(n);
    check_b_range(b, m)?;
    if b == 0 {
        return Ok(adjoint_forward_rdft(cotangent, n));
    }
    let spec = forward_rdft(s)?;
    let n_new = (n as i64 + 2 * b as i64) as usize;
    let amp = n_new as f64 / n as f64;
    if b > 0 {
        let m_new = m + b as usize;
        let mut bins = spec.bins;
        bins.resize(m_new, Complex64::new(0.0, 0.0));
        let mut y2 = inverse_rdft(&Spectrum {
            bins,
            origin_length: n_new,
        })?;
        for v in &mut y2 {
            *v *= amp;
        }
        let e_before: f64 = y2.iter().map(|v| v * v).sum();
        let e_after: f64 = y2[..n].iter().map(|v| v * v).sum();
        if e_after <= 0.0 {
            return Err(Error::DegenerateProfile {
                component: 0,
                stretch: b,
            });
        }
        let rho = (e_before / e_after).sqrt();

        // Backward through: forward transform, rescale, truncation, gain.
        let v_bar = adjoint_forward_rdft(cotangent, n);
        let vu: f64 = v_bar.iter().zip(&y2[..n]).map(|(a, u)| a * u).sum();
        let mut y2_bar = vec![0.0; n_new];
        for t in 0..n_new {
            let mut g = vu * (rho / e_before) * y2[t];
            if t < n {
                g += rho * v_bar[t] - vu * (rho / e_after) * y2[t];
            }
            y2_bar[t] = g * amp;
        }
        let x_bar = adjoint_inverse_rdft(&y2_bar, n_new);
        Ok(adjoint_forward_rdft(&x_bar[..m], n))
    } else {
        let m_new = (m as i64 + b as i64) as usize;
        let e_before = two_sided_partial(&spec.bins, m, n);
        let e_after = two_sided_partial(&spec.bins, m_new, n);
        if e_after <= 0.0 {
            return Err(Error::DegenerateProfile {
                component: 0,
                stretch: b,
            });
        }
        let rho = (e_before / e_after).sqrt();
        let scaled: Vec<Complex64> = spec.bins[..m_new].iter().map(|v| v * rho).collect();

        let v_bar = adjoint_forward_rdft(cotangent, n);
        let mut y_bar = vec![0.0; n_new];
        for t in 0..n_new {
            y_bar[t] = v_bar[t] * amp;
        }
        let z_bar = adjoint_inverse_rdft(&y_bar, n_new);
        // c = <z_bar, rho * X_trunc>; the loss moves by (c / rho) d rho, and
        // d rho = (rho / 2)(dE_before / E_before - dE_after / E_after), so
        // the energy terms below carry c with no extra rho factor.
        let c: f64 = z_bar
            .iter()
            .zip(&scaled)
            .map(|(zb, z)| zb.re * z.re + zb.im * z.im)
            .sum();
        let nyquist = if n % 2 == 0 { Some(m - 1) } else { None };
        let mut x_bar = vec![Complex64::new(0.0, 0.0); m];
        for f in 0..m {
            let mult = if f == 0 || Some(f) == nyquist { 1.0 } else { 2.0 };
            let mut g = Complex64::new(0.0, 0.0);
            if f < m_new {
                g += rho * z_bar[f] - c * (mult / e_after) * spec.bins[f];
            }
            g += c * (mult / e_before) * spec.bins[f];
            x_bar[f] = g;
        }
        Ok(adjoint_forward_rdft(&x_bar, n))
    }
}

/// All stretched spectra for `K` components over a contiguous stretch range.
#[derive(Debug, Clone)]
pub struct StretchLibrary {
    profiles: Array3<Complex64>,
    b_values: Vec<i32>,
    n_fft: usize,
    n_pad: usize,
}

impl StretchLibrary {
    pub fn n_components(&self) -> usize {
        self.profiles.shape()[0]
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_pad(&self) -> usize {
        self.n_pad
    }

    pub fn b_values(&self) -> &[i32] {
        &self.b_values
    }

    pub fn b_min(&self) -> i32 {
        self.b_values[0]
    }

    pub fn b_max(&self) -> i32 {
        *self.b_values.last().unwrap()
    }

    /// Position of stretch index `b` in the contiguous range.
    pub fn index_of(&self, b: i32) -> Option<usize> {
        if b < self.b_values[0] || b > *self.b_values.last().unwrap() {
            None
        } else {
            Some((b - self.b_values[0]) as usize)
        }
    }

    /// Spectrum slice for component `k` at stretch `b`.
    pub fn slice(&self, k: usize, b: i32) -> Result<ArrayView1<'_, Complex64>> {
        let idx = self.index_of(b).ok_or_else(|| {
            Error::InvalidInput(format!(
                "stretch {b} outside library range [{}, {}]",
                self.b_values[0],
                self.b_values.last().unwrap()
            ))
        })?;
        if k >= self.n_components() {
            return Err(Error::InvalidInput(format!(
                "component {k} outside library with {} components",
                self.n_components()
            )));
        }
        Ok(self.profiles.index_axis(ndarray::Axis(0), k).index_axis_move(ndarray::Axis(0), idx))
    }

    pub(crate) fn slice_by_index(&self, k: usize, idx: usize) -> ArrayView1<'_, Complex64> {
        self.profiles
            .index_axis(ndarray::Axis(0), k)
            .index_axis_move(ndarray::Axis(0), idx)
    }
}

/// Build the stretch library for `K` profiles given as rows of length
/// `N_pad`. Slices are computed independently in parallel; the result does
/// not depend on thread count.
pub fn build_library(profiles: &Array2<f64>, b_range: (i32, i32)) -> Result<StretchLibrary> {
    let (b_lo, b_hi) = b_range;
    if b_lo > 0 || b_hi < 0 || b_lo > b_hi {
        return Err(Error::InvalidInput(format!(
            "stretch range [{b_lo}, {b_hi}] must contain 0"
        )));
    }
    let k_count = profiles.nrows();
    let n_pad = profiles.ncols();
    if k_count == 0 || n_pad < 2 {
        return Err(Error::EmptyData(format!(
            "library needs at least one profile of length >= 2, got {k_count} x {n_pad}"
        )));
    }
    let n_fft = n_fft_len(n_pad);
    check_b_range(b_lo, n_fft)?;
    check_b_range(b_hi, n_fft)?;
    for (k, row) in profiles.rows().into_iter().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateComponent(format!(
                "profile {k} is identically zero"
            )));
        }
    }
    let b_values: Vec<i32> = (b_lo..=b_hi).collect();
    let n_b = b_values.len();
    let slices: Vec<Vec<Complex64>> = (0..k_count * n_b)
        .into_par_iter()
        .map(|flat| {
            let k = flat / n_b;
            let b = b_values[flat % n_b];
            let row = profiles.row(k);
            stretch_profile(row.as_slice().expect("contiguous row"), b)
                .map(|s| s.bins)
                .map_err(|e| match e {
                    Error::DegenerateProfile { stretch, .. } => Error::DegenerateProfile {
                        component: k,
                        stretch,
                    },
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    let mut out = Array3::zeros((k_count, n_b, n_fft));
    for (flat, bins) in slices.into_iter().enumerate() {
        let (k, i) = (flat / n_b, flat % n_b);
        for (f, v) in bins.into_iter().enumerate() {
            out[(k, i, f)] = v;
        }
    }
    Ok(StretchLibrary {
        profiles: out,
        b_values,
        n_fft,
        n_pad,
    })
}
