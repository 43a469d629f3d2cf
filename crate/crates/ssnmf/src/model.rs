//! The four factorization variants, their Parseval-weighted loss, analytic
//! gradients, and the alternating fit loop (closed-form alignment sweep
//! followed by an ADAM step on the continuous parameters).
//!
//! Profiles are parameterized as `S = softplus(S_bar)` so positivity holds
//! unconditionally. Variants that optimize the channel map by gradient use
//! the same trick with an unconstrained `A_bar`; the shift-sweep variants
//! instead refresh A in closed form and clip negatives.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::estimation;
use crate::spectral::{n_fft_len, Spectrum, SpectrumMatrix};
use crate::stretch::{build_library, full_b_range, stretch_profile_vjp, StretchLibrary};

/// Channels handled per work unit in parallel reductions. Fixed so that
/// partial-sum order, and therefore every last bit of the result, does not
/// depend on the thread count.
const CHANNEL_CHUNK: usize = 64;

/// Values below this are floored before the inverse softplus map when
/// importing nonnegative initial values as unconstrained parameters.
const SOFTPLUS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    PlainNmf,
    IntegerShift,
    NonIntegerShift,
    ShiftStretch,
}

impl Variant {
    /// Shift-sweep variants refresh (tau, b, A) in closed form per iteration.
    pub fn uses_sweep(self) -> bool {
        matches!(self, Variant::IntegerShift | Variant::ShiftStretch)
    }

    pub fn uses_stretch(self) -> bool {
        self == Variant::ShiftStretch
    }

    /// Whether A is optimized by gradient through a softplus map.
    pub fn gradient_a(self) -> bool {
        matches!(self, Variant::PlainNmf | Variant::NonIntegerShift)
    }

    /// Whether tau is a free continuous parameter.
    pub fn gradient_tau(self) -> bool {
        self == Variant::NonIntegerShift
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::PlainNmf => "plain",
            Variant::IntegerShift => "integer-shift",
            Variant::NonIntegerShift => "nonint-shift",
            Variant::ShiftStretch => "shift-stretch",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "plain" => Ok(Variant::PlainNmf),
            "integer-shift" => Ok(Variant::IntegerShift),
            "nonint-shift" => Ok(Variant::NonIntegerShift),
            "shift-stretch" => Ok(Variant::ShiftStretch),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant {other:?}; expected plain, integer-shift, \
                 nonint-shift, or shift-stretch"
            ))),
        }
    }
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inverse(y: f64) -> Result<f64> {
    if y <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "softplus inverse needs y > 0, got {y}"
        )));
    }
    if y > 33.0 {
        Ok(y)
    } else {
        Ok(y.exp_m1().ln())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Model state shared by all four variants; inactive parameters stay at
/// their neutral values (tau and b at zero, `a_bar` absent).
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub variant: Variant,
    /// Channel map, P x K, elementwise nonnegative.
    pub a: Array2<f64>,
    /// Unconstrained channel-map parameter for gradient-A variants.
    pub a_bar: Option<Array2<f64>>,
    /// Unconstrained profile parameter, K x N_pad.
    pub s_bar: Array2<f64>,
    /// Per-channel, per-component shift in samples, P x K.
    pub tau: Array2<f64>,
    /// Per-channel, per-component stretch index, P x K.
    pub b: Array2<i32>,
    pub n_pad: usize,
}

/// Nonnegative starting point for a fit. Shift and stretch matrices are
/// optional; absent means all-zero.
#[derive(Debug, Clone)]
pub struct InitState {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub tau: Option<Array2<f64>>,
    pub b: Option<Array2<i32>>,
}

impl InitState {
    pub fn new(s: Array2<f64>, a: Array2<f64>) -> Self {
        InitState {
            s,
            a,
            tau: None,
            b: None,
        }
    }
}

fn inverse_softplus_matrix(values: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(values.raw_dim());
    for (idx, v) in values.indexed_iter() {
        out[idx] = softplus_inverse(v.max(SOFTPLUS_FLOOR))?;
    }
    Ok(out)
}

impl FactorModel {
    /// Build the starting model for `variant` from nonnegative initial
    /// factors. Values at or below zero are floored before the inverse
    /// softplus map.
    pub fn from_init(variant: Variant, init: &InitState, n_pad: usize) -> Result<FactorModel> {
        let k = init.s.nrows();
        let p = init.a.nrows();
        if init.a.ncols() != k {
            return Err(Error::InvalidInput(format!(
                "channel map has {} components, profiles have {k}",
                init.a.ncols()
            )));
        }
        if init.s.ncols() != n_pad {
            return Err(Error::InvalidInput(format!(
                "profiles have length {}, data has {n_pad}",
                init.s.ncols()
            )));
        }
        let s_bar = inverse_softplus_matrix(&init.s)?;
        let tau = match &init.tau {
            Some(t) => {
                if t.raw_dim() != init.a.raw_dim() {
                    return Err(Error::InvalidInput("shift matrix shape mismatch".into()));
                }
                t.clone()
            }
            None => Array2::zeros((p, k)),
        };
        let b = match &init.b {
            Some(bm) => {
                if bm.raw_dim() != init.a.raw_dim() {
                    return Err(Error::InvalidInput("stretch matrix shape mismatch".into()));
                }
                bm.clone()
            }
            None => Array2::zeros((p, k)),
        };
        let a = init.a.mapv(|v| v.max(0.0));
        let a_bar = if variant.gradient_a() {
            Some(inverse_softplus_matrix(&a)?)
        } else {
            None
        };
        let a = if variant.gradient_a() {
            a_bar.as_ref().unwrap().mapv(softplus)
        } else {
            a
        };
        Ok(FactorModel {
            variant,
            a,
            a_bar,
            s_bar,
            tau,
            b,
            n_pad,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.s_bar.nrows()
    }

    pub fn n_fft(&self) -> usize {
        n_fft_len(self.n_pad)
    }

    /// Time-domain profiles `softplus(S_bar)`, K x N_pad, all positive.
    pub fn profiles(&self) -> Array2<f64> {
        self.s_bar.mapv(softplus)
    }

    /// Stretch range this variant's library must cover.
    pub fn library_range(&self, requested: Option<(i32, i32)>) -> (i32, i32) {
        if self.variant.uses_stretch() {
            requested.unwrap_or_else(|| full_b_range(self.n_fft()))
        } else {
            (0, 0)
        }
    }

    /// Refresh the derived channel map from `a_bar` (gradient-A variants).
    fn sync_a(&mut self) {
        if let Some(bar) = &self.a_bar {
            self.a = bar.mapv(softplus);
        }
    }
}

/// Phase ramp `exp(-i 2 pi f tau / n)` over one-sided bins.
pub(crate) fn phase_ramp(tau: f64, m: usize, n: usize) -> Vec<Complex64> {
    let step = -2.0 * std::f64::consts::PI * tau / n as f64;
    (0..m)
        .map(|f| Complex64::from_polar(1.0, step * f as f64))
        .collect()
}

/// One component's contribution to channel `j`:
/// `a_{j,k} * exp(-i 2 pi f tau / N) * s_k^{(b_{j,k})}(f)`.
pub(crate) fn component_contribution(
    model: &FactorModel,
    j: usize,
    k: usize,
    library: &StretchLibrary,
) -> Result<Vec<Complex64>> {
    let slice = library.slice(k, model.b[(j, k)])?;
    let a = model.a[(j, k)];
    let m = slice.len();
    let ramp = phase_ramp(model.tau[(j, k)], m, model.n_pad);
    Ok(slice
        .iter()
        .zip(ramp)
        .map(|(s, ph)| a * ph * s)
        .collect())
}

/// Model spectrum of channel `j`: the sum of component contributions.
pub fn reconstruct_channel_spectrum(
    model: &FactorModel,
    j: usize,
    library: &StretchLibrary,
) -> Result<Spectrum> {
    let m = library.n_fft();
    let mut acc = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..model.n_components() {
        for (dst, v) in acc.iter_mut().zip(component_contribution(model, j, k, library)?) {
            *dst += v;
        }
    }
    Ok(Spectrum {
        bins: acc,
        origin_length: model.n_pad,
    })
}

fn channel_loss(
    model: &FactorModel,
    j: usize,
    data: &SpectrumMatrix,
    library: &StretchLibrary,
) -> Result<f64> {
    let recon = reconstruct_channel_spectrum(model, j, library)?;
    let x = &data.spectra[j];
    Ok(x.bins
        .iter()
        .zip(&recon.bins)
        .zip(data.weights.as_slice())
        .map(|((a, b), w)| (w * w) * (a - b).norm_sqr())
        .sum())
}

/// Parseval-weighted squared reconstruction error,
/// `(1/N) sum_j ||w .* (x_j - xhat_j)||^2`.
pub fn loss(model: &FactorModel, data: &SpectrumMatrix, library: &StretchLibrary) -> Result<f64> {
    let p = data.n_channels();
    let indices: Vec<usize> = (0..p).collect();
    let partials: Vec<Result<f64>> = indices
        .par_chunks(CHANNEL_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for &j in chunk {
                acc += channel_loss(model, j, data, library)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for part in partials {
        total += part?;
    }
    Ok(total / model.n_pad as f64)
}

/// Gradients of [`loss`] for the continuous parameters active in the
/// variant. `tau` and `a_bar` are `None` where the variant holds them fixed
/// or updates them in closed form.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub s_bar: Array2<f64>,
    pub a_bar: Option<Array2<f64>>,
    pub tau: Option<Array2<f64>>,
}

struct ChunkGrads {
    /// Spectral cotangent accumulated per (component, stretch-index) pair.
    cot: Vec<Vec<Vec<Complex64>>>,
    a_rows: Vec<(usize, Vec<f64>)>,
    tau_rows: Vec<(usize, Vec<f64>)>,
}

/// Analytic gradient of the loss with shifts and stretches frozen.
///
/// `library` must have been built from the model's current profiles; the
/// stretch pipeline (including its energy rescales) is differentiated
/// through exactly.
pub fn gradient(
    model: &FactorModel,
    data: &SpectrumMatrix,
    library: &StretchLibrary,
) -> Result<Gradients> {
    let p = model.n_channels();
    let kk = model.n_components();
    let m = library.n_fft();
    let n = model.n_pad;
    let n_b = library.b_values().len();
    let w2: Vec<f64> = data.weights.as_slice().iter().map(|w| w * w).collect();
    let want_a = model.variant.gradient_a();
    let want_tau = model.variant.gradient_tau();

    let indices: Vec<usize> = (0..p).collect();
    let chunk_results: Vec<Result<ChunkGrads>> = indices
        .par_chunks(CHANNEL_CHUNK)
        .map(|chunk| {
            let mut cg = ChunkGrads {
                cot: vec![vec![vec![Complex64::new(0.0, 0.0); m]; n_b]; kk],
                a_rows: Vec::new(),
                tau_rows: Vec::new(),
            };
            for &j in chunk {
                let x = &data.spectra[j];
                let contribs: Vec<Vec<Complex64>> = (0..kk)
                    .map(|k| component_contribution(model, j, k, library))
                    .collect::<Result<_>>()?;
                // gbar_f = (2/N) w_f^2 (recon_f - x_f), the cotangent of the
                // reconstruction under d L = sum Re(conj(gbar) d recon).
                let mut gbar = vec![Complex64::new(0.0, 0.0); m];
                for f in 0..m {
                    let recon: Complex64 = contribs.iter().map(|c| c[f]).sum();
                    gbar[f] = (2.0 / n as f64) * w2[f] * (recon - x.bins[f]);
                }
                let mut a_row = vec![0.0; kk];
                let mut tau_row = vec![0.0; kk];
                for k in 0..kk {
                    let b = model.b[(j, k)];
                    let idx = library.index_of(b).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "stretch {b} at channel {j}, component {k} outside library"
                        ))
                    })?;
                    let slice = library.slice_by_index(k, idx);
                    let ramp = phase_ramp(model.tau[(j, k)], m, n);
                    let a = model.a[(j, k)];
                    let dst = &mut cg.cot[k][idx];
                    for f in 0..m {
                        let shifted = ramp[f] * slice[f];
                        if want_a {
                            a_row[k] += gbar[f].conj().re * shifted.re
                                - gbar[f].conj().im * shifted.im;
                        }
                        if want_tau {
                            let omega = -2.0 * std::f64::consts::PI * f as f64 / n as f64;
                            let dv = Complex64::new(0.0, omega) * a * shifted;
                            tau_row[k] += (gbar[f].conj() * dv).re;
                        }
                        // conj(ramp) folds the phase into the cotangent on
                        // the library slice.
                        dst[f] += a * ramp[f].conj() * gbar[f];
                    }
                }
                if want_a {
                    cg.a_rows.push((j, a_row));
                }
                if want_tau {
                    cg.tau_rows.push((j, tau_row));
                }
            }
            Ok(cg)
        })
        .collect();

    let mut cot = vec![vec![vec![Complex64::new(0.0, 0.0); m]; n_b]; kk];
    let mut a_bar_grad = want_a.then(|| Array2::zeros((p, kk)));
    let mut tau_grad = want_tau.then(|| Array2::zeros((p, kk)));
    for part in chunk_results {
        let cg = part?;
        for k in 0..kk {
            for idx in 0..n_b {
                for f in 0..m {
                    cot[k][idx][f] += cg.cot[k][idx][f];
                }
            }
        }
        if let Some(ag) = &mut a_bar_grad {
            for (j, row) in cg.a_rows {
                for k in 0..kk {
                    ag[(j, k)] = row[k];
                }
            }
        }
        if let Some(tg) = &mut tau_grad {
            for (j, row) in cg.tau_rows {
                for k in 0..kk {
                    tg[(j, k)] = row[k];
                }
            }
        }
    }

    // Chain the accumulated spectral cotangents through the stretch
    // pipeline back to the time-domain profiles, then through softplus.
    let profiles = model.profiles();
    let mut s_bar_grad = Array2::zeros((kk, n));
    let per_component: Vec<Result<Vec<f64>>> = (0..kk)
        .into_par_iter()
        .map(|k| {
            let row = profiles.row(k);
            let s_row = row.as_slice().expect("contiguous profile row");
            let mut acc = vec![0.0; n];
            for (idx, &b) in library.b_values().iter().enumerate() {
                if cot[k][idx].iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                    continue;
                }
                let g = stretch_profile_vjp(s_row, b, &cot[k][idx])?;
                for t in 0..n {
                    acc[t] += g[t];
                }
            }
            Ok(acc)
        })
        .collect();
    for (k, res) in per_component.into_iter().enumerate() {
        let acc = res?;
        for t in 0..n {
            s_bar_grad[(k, t)] = acc[t] * sigmoid(model.s_bar[(k, t)]);
        }
    }

    if let (Some(ag), Some(bar)) = (&mut a_bar_grad, &model.a_bar) {
        for (idx, g) in ag.indexed_iter_mut() {
            *g *= sigmoid(bar[idx]);
        }
    }

    Ok(Gradients {
        s_bar: s_bar_grad,
        a_bar: a_bar_grad,
        tau: tau_grad,
    })
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> AdamState {
        AdamState {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected ADAM update of `param` in place.
    pub fn step(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, p) in param.indexed_iter_mut() {
            let g = grad[idx];
            let m = &mut self.m[idx];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = &mut self.v[idx];
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / b1t;
            let vhat = *v / b2t;
            *p -= lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    LossIncreasing,
    MaxIterations,
}

/// Convergence test over the trailing `window` of the loss trace: stop when
/// the two smallest losses in the window agree to `rel_tol` relative, or
/// when the window is strictly increasing throughout.
pub fn should_stop(trace: &[f64], window: usize, rel_tol: f64) -> Option<StopReason> {
    if trace.len() < window || window < 2 {
        return None;
    }
    let tail = &trace[trace.len() - window..];
    if tail.windows(2).all(|w| w[1] > w[0]) {
        return Some(StopReason::LossIncreasing);
    }
    let mut smallest = f64::INFINITY;
    let mut second = f64::INFINITY;
    for &l in tail {
        if l < smallest {
            second = smallest;
            smallest = l;
        } else if l < second {
            second = l;
        }
    }
    let diff = second - smallest;
    if diff == 0.0 || (smallest > 0.0 && diff / smallest < rel_tol) {
        return Some(StopReason::Converged);
    }
    None
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub variant: Variant,
    pub k: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub stop_window: usize,
    pub stop_rel_tol: f64,
    pub seed: u64,
    /// Stretch range for the library; `None` means the full admissible range.
    pub b_range: Option<(i32, i32)>,
    /// Half-width of the local stretch search after the first full sweep;
    /// `None` means `N_FFT / 16`.
    pub b_search_delta: Option<i32>,
}

impl FitConfig {
    pub fn new(variant: Variant, k: usize) -> FitConfig {
        FitConfig {
            variant,
            k,
            learning_rate: 0.1,
            max_iterations: 10_000,
            stop_window: 50,
            stop_rel_tol: 1e-10,
            seed: 0,
            b_range: None,
            b_search_delta: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("model order K must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub variance_explained: f64,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub elapsed_seconds: f64,
    pub seed: u64,
}

/// Fit one variant by alternating closed-form alignment (where the variant
/// uses it) with an ADAM step on the continuous parameters. Returns the
/// state with the lowest observed loss.
pub fn fit(
    data: &TimeSeriesMatrix,
    config: &FitConfig,
    init: &InitState,
) -> Result<(FactorModel, FitReport)> {
    config.validate()?;
    if init.s.nrows() != config.k {
        return Err(Error::InvalidConfig(format!(
            "init provides {} profiles for K = {}",
            init.s.nrows(),
            config.k
        )));
    }
    let started = std::time::Instant::now();
    let spectra = SpectrumMatrix::from_rows(&data.values)?;
    let mut model = FactorModel::from_init(config.variant, init, data.n_pad())?;
    let lib_range = model.library_range(config.b_range);
    let delta_default = (model.n_fft() / 16) as i32;
    let delta = config.b_search_delta.unwrap_or(delta_default).max(0);

    let mut adam_s = AdamState::new((config.k, model.n_pad));
    let mut adam_a = model
        .a_bar
        .is_some()
        .then(|| AdamState::new((model.n_channels(), config.k)));
    let mut adam_tau = model
        .variant
        .gradient_tau()
        .then(|| AdamState::new((model.n_channels(), config.k)));

    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<(f64, FactorModel)> = None;
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 0..config.max_iterations {
        let library = build_library(&model.profiles(), lib_range)?;

        if model.variant.uses_sweep() {
            let window = if iteration == 0 || !model.variant.uses_stretch() {
                None
            } else {
                Some(delta)
            };
            let rows: Vec<Result<(Vec<f64>, Vec<i32>, Vec<f64>)>> = (0..model.n_channels())
                .into_par_iter()
                .map(|j| estimation::update_channel(j, &model, &spectra, &library, window))
                .collect();
            for (j, row) in rows.into_iter().enumerate() {
                let (tau_row, b_row, a_row) = row?;
                for k in 0..config.k {
                    model.tau[(j, k)] = tau_row[k];
                    model.b[(j, k)] = b_row[k];
                    model.a[(j, k)] = a_row[k];
                }
            }
        }

        let l = loss(&model, &spectra, &library)?;
        if !l.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        trace.push(l);
        if best.as_ref().map_or(true, |(bl, _)| l < *bl) {
            best = Some((l, model.clone()));
        }
        if let Some(reason) = should_stop(&trace, config.stop_window, config.stop_rel_tol) {
            stop_reason = reason;
            break;
        }
        if iteration + 1 == config.max_iterations {
            break;
        }

        let grads = gradient(&model, &spectra, &library)?;
        adam_s.step(&mut model.s_bar, &grads.s_bar, config.learning_rate);
        if let (Some(adam), Some(bar), Some(g)) =
            (&mut adam_a, &mut model.a_bar, &grads.a_bar)
        {
            adam.step(bar, g, config.learning_rate);
        }
        model.sync_a();
        if let (Some(adam), Some(g)) = (&mut adam_tau, &grads.tau) {
            adam.step(&mut model.tau, g, config.learning_rate);
        }
    }

    let (final_loss, best_model) = best.expect("at least one iteration ran");
    let best_library = build_library(&best_model.profiles(), lib_range)?;
    let variance_explained = crate::eval::variance_explained(&best_model, data, &best_library)?;
    let report = FitReport {
        schema_version: 1,
        iterations: trace.len(),
        loss_trace: trace,
        final_loss,
        variance_explained,
        stop_reason,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok((best_model, report))
}

/// Fit with the initialization chain the shift-refining variants expect:
/// the non-integer-shift and shift-stretch variants start from a converged
/// integer-shift fit.
pub fn fit_chain(
    data: &TimeSeriesMatrix,
    config: &FitConfig,
    init: &InitState,
) -> Result<(FactorModel, FitReport)> {
    match config.variant {
        Variant::PlainNmf | Variant::IntegerShift => fit(data, config, init),
        Variant::NonIntegerShift | Variant::ShiftStretch => {
            let mut pre = config.clone();
            pre.variant = Variant::IntegerShift;
            let (warm, _) = fit(data, &pre, init)?;
            let warm_init = InitState {
                s: warm.profiles(),
                a: warm.a.clone(),
                tau: Some(warm.tau.clone()),
                b: None,
            };
            fit(data, config, &warm_init)
        }
    }
}
