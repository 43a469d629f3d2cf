//! One-sided real DFT engine and the spectral primitives built on it:
//! Parseval weighting, phase-shift delays, and circular cross-correlation.
//!
//! Conventions used throughout the crate: the forward transform is
//! unnormalized, the inverse carries the 1/N factor, and one-sided spectra
//! hold the first `N/2 + 1` bins of the full DFT. With the weight vector
//! `w = [1/sqrt(2), 1, ..., 1, 1/sqrt(2)]` (trailing entry only for even N)
//! the identity `2 * ||w .* x_spec||^2 = N * ||x||^2` holds exactly.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex, RwLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative imaginary residue above which an inverse transform is treated as
/// internally inconsistent rather than rounded away.
const IMAG_RESIDUE_TOL: f64 = 1e-9;

static PLANNER: LazyLock<Mutex<FftPlanner<f64>>> = LazyLock::new(|| Mutex::new(FftPlanner::new()));
static PLANS: LazyLock<RwLock<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    if let Some(p) = PLANS.read().unwrap().get(&(len, forward)) {
        return Arc::clone(p);
    }
    let mut planner = PLANNER.lock().unwrap();
    let p = if forward {
        planner.plan_fft_forward(len)
    } else {
        planner.plan_fft_inverse(len)
    };
    PLANS
        .write()
        .unwrap()
        .insert((len, forward), Arc::clone(&p));
    p
}

/// Number of one-sided bins for a real signal of length `n`.
pub fn n_fft_len(n: usize) -> usize {
    n / 2 + 1
}

/// One-sided spectrum of a real signal together with the length it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub origin_length: usize,
}

impl Spectrum {
    pub fn zeros(origin_length: usize) -> Self {
        Spectrum {
            bins: vec![Complex64::new(0.0, 0.0); n_fft_len(origin_length)],
            origin_length,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    fn check_consistent(&self) -> Result<()> {
        if self.bins.len() != n_fft_len(self.origin_length) {
            return Err(Error::InvalidInput(format!(
                "spectrum has {} bins but origin length {} implies {}",
                self.bins.len(),
                self.origin_length,
                n_fft_len(self.origin_length)
            )));
        }
        Ok(())
    }
}

/// Per-bin weights that make the one-sided squared norm proportional to the
/// time-domain energy: DC (and Nyquist for even lengths) scaled by 1/sqrt(2).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsevalWeights {
    w: Vec<f64>,
}

impl ParsevalWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Weight vector for signals of padded length `n_pad`.
pub fn parseval_weights(n_pad: usize) -> Result<ParsevalWeights> {
    if n_pad < 2 {
        return Err(Error::InvalidInput(format!(
            "parseval weights need length >= 2, got {n_pad}"
        )));
    }
    let m = n_fft_len(n_pad);
    let mut w = vec![1.0; m];
    w[0] = std::f64::consts::FRAC_1_SQRT_2;
    if n_pad % 2 == 0 {
        w[m - 1] = std::f64::consts::FRAC_1_SQRT_2;
    }
    Ok(ParsevalWeights { w })
}

/// Unnormalized one-sided forward DFT of a real signal.
pub fn forward_rdft(x: &[f64]) -> Result<Spectrum> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "signal too short for a transform: length {}",
            x.len()
        )));
    }
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, true).process(&mut buf);
    buf.truncate(n_fft_len(n));
    Ok(Spectrum {
        bins: buf,
        origin_length: n,
    })
}

/// Expand a one-sided spectrum to its conjugate-symmetric full form.
///
/// DC and (for even lengths) Nyquist imaginary parts are dropped so the
/// completion is Hermitian by construction even when the input bins came
/// from spectral surgery rather than a real signal.
fn symmetrize(spec: &Spectrum) -> Vec<Complex64> {
    let n = spec.origin_length;
    let m = spec.bins.len();
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[0] = Complex64::new(spec.bins[0].re, 0.0);
    let nyquist = if n % 2 == 0 { Some(m - 1) } else { None };
    for f in 1..m {
        let v = if Some(f) == nyquist {
            Complex64::new(spec.bins[f].re, 0.0)
        } else {
            spec.bins[f]
        };
        full[f] = v;
        full[n - f] = v.conj();
    }
    full
}

/// 1/N-normalized inverse of [`forward_rdft`].
pub fn inverse_rdft(spec: &Spectrum) -> Result<Vec<f64>> {
    spec.check_consistent()?;
    let n = spec.origin_length;
    let mut full = symmetrize(spec);
    plan(n, false).process(&mut full);
    let scale = 1.0 / n as f64;
    let norm: f64 = full.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() * scale;
    let imag_max = full.iter().map(|c| c.im.abs()).fold(0.0, f64::max) * scale;
    if imag_max > IMAG_RESIDUE_TOL * norm.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "internal: inverse transform left imaginary residue {imag_max:.3e}"
        )));
    }
    Ok(full.iter().map(|c| c.re * scale).collect())
}

/// Multiply bin `f` by `exp(-i 2 pi f tau / N)`, the spectral form of a
/// circular delay by `tau` samples.
pub fn apply_phase_shift(spec: &Spectrum, tau: f64) -> Spectrum {
    let n = spec.origin_length as f64;
    let bins = spec
        .bins
        .iter()
        .enumerate()
        .map(|(f, &v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f as f64 * tau / n))
        .collect();
    Spectrum {
        bins,
        origin_length: spec.origin_length,
    }
}

/// Circular cross-correlation of the signals behind `g_spec` and `s_spec`.
///
/// Index `t` of the result holds the inner product of `g` with `s` delayed by
/// `t` samples, so the peak sits at the delay of `g` relative to `s`.
/// Computed as the inverse transform of the cross-spectrum.
pub fn cross_correlation(g_spec: &Spectrum, s_spec: &Spectrum) -> Result<Vec<f64>> {
    if g_spec.origin_length != s_spec.origin_length {
        return Err(Error::InvalidInput(format!(
            "cross-correlation needs equal lengths, got {} and {}",
            g_spec.origin_length, s_spec.origin_length
        )));
    }
    let bins = g_spec
        .bins
        .iter()
        .zip(&s_spec.bins)
        .map(|(&g, &s)| g * s.conj())
        .collect();
    inverse_rdft(&Spectrum {
        bins,
        origin_length: g_spec.origin_length,
    })
}

/// Squared weighted residual `||w .* (a - b)||^2`.
pub fn weighted_residual_norm(a: &Spectrum, b: &Spectrum, w: &ParsevalWeights) -> Result<f64> {
    if a.bins.len() != b.bins.len() || a.bins.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "weighted residual needs matching lengths, got {}, {}, {}",
            a.bins.len(),
            b.bins.len(),
            w.len()
        )));
    }
    Ok(a.bins
        .iter()
        .zip(&b.bins)
        .zip(w.as_slice())
        .map(|((&x, &y), &wf)| (wf * wf) * (x - y).norm_sqr())
        .sum())
}

/// Two-sided spectral energy `sum_f m_f |X_f|^2` with multiplicity 2 for
/// interior bins. Equals `N` times the time-domain energy of the signal.
pub fn two_sided_energy(spec: &Spectrum) -> f64 {
    let n = spec.origin_length;
    let m = spec.bins.len();
    let nyquist = if n % 2 == 0 { Some(m - 1) } else { None };
    spec.bins
        .iter()
        .enumerate()
        .map(|(f, v)| {
            let e = if f == 0 {
                v.re * v.re
            } else if Some(f) == nyquist {
                v.re * v.re
            } else {
                v.norm_sqr()
            };
            if f == 0 || Some(f) == nyquist {
                e
            } else {
                2.0 * e
            }
        })
        .sum()
}

/// Time-domain energy of the signal a spectrum represents.
pub fn time_energy(spec: &Spectrum) -> f64 {
    two_sided_energy(spec) / spec.origin_length as f64
}

/// Adjoint of [`forward_rdft`] for reverse-mode gradients: maps a complex
/// cotangent on the one-sided bins back to a real cotangent on the samples.
pub(crate) fn adjoint_forward_rdft(cotangent: &[Complex64], n: usize) -> Vec<f64> {
    // grad_x[t] = Re( sum_f cot_f * exp(+i 2 pi f t / N) ), f one-sided only.
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..cotangent.len()].copy_from_slice(cotangent);
    plan(n, false).process(&mut full);
    full.iter().map(|c| c.re).collect()
}

/// Adjoint of [`inverse_rdft`]: maps a real cotangent on the samples to a
/// complex cotangent on the one-sided bins, honoring the DC/Nyquist
/// imaginary-part projection of the inverse.
pub(crate) fn adjoint_inverse_rdft(cotangent: &[f64], n: usize) -> Vec<Complex64> {
    let m = n_fft_len(n);
    let mut buf: Vec<Complex64> = cotangent
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(m);
    for (f, item) in buf.iter().take(m).enumerate() {
        let c = item * scale;
        let dc_or_nyquist = f == 0 || (n % 2 == 0 && f == m - 1);
        if dc_or_nyquist {
            out.push(Complex64::new(c.re, 0.0));
        } else {
            out.push(2.0 * c);
        }
    }
    out
}

/// Spectra of all rows of a channels-by-time matrix plus the shared weights.
#[derive(Debug, Clone)]
pub struct SpectrumMatrix {
    pub spectra: Vec<Spectrum>,
    pub weights: ParsevalWeights,
    pub n_pad: usize,
}

impl SpectrumMatrix {
    pub fn from_rows(values: &ndarray::Array2<f64>) -> Result<Self> {
        let n_pad = values.ncols();
        let weights = parseval_weights(n_pad)?;
        let spectra = values
            .rows()
            .into_iter()
            .map(|row| forward_rdft(row.as_slice().expect("contiguous row")))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectrumMatrix {
            spectra,
            weights,
            n_pad,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn n_fft(&self) -> usize {
        n_fft_len(self.n_pad)
    }
}
