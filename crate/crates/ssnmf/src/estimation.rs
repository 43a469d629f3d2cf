//! Closed-form per-channel estimation: residual spectra, cross-correlation
//! delay search, the joint (delay, stretch) grid search, and the amplitude
//! update that follows from the correlation peak.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{component_contribution, phase_ramp, FactorModel};
use crate::spectral::{cross_correlation, time_energy, Spectrum, SpectrumMatrix};
use crate::stretch::StretchLibrary;

/// Peaks closer than this relative margin to the maximum are treated as
/// tied and resolved by the documented preference for small |tau|, |b|.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftEstimate {
    pub lag_index: usize,
    pub tau: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftStretchEstimate {
    pub lag_index: usize,
    pub b: i32,
    pub tau: f64,
    pub peak: f64,
}

/// Map an argmax index to a signed circular lag: indices past `n/2` wrap to
/// negative delays.
fn signed_lag(l: usize, n: usize) -> f64 {
    if l > n / 2 {
        l as f64 - n as f64
    } else {
        l as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    lag_index: usize,
    b: i32,
    tau: f64,
    value: f64,
}

/// Deterministic winner among near-equal peaks: smallest |tau| first, then
/// smallest |b|, then smallest b, then smallest lag index. An empty list
/// means every correlation value was non-finite (a diverging fit); the
/// zero-delay fallback keeps the update well-defined so the loss check can
/// report the divergence instead of the search panicking.
fn break_ties(candidates: &[Candidate]) -> Candidate {
    candidates
        .iter()
        .min_by(|x, y| {
            (x.tau.abs(), x.b.abs(), x.b, x.lag_index)
                .partial_cmp(&(y.tau.abs(), y.b.abs(), y.b, y.lag_index))
                .unwrap()
        })
        .copied()
        .unwrap_or(Candidate {
            lag_index: 0,
            b: 0,
            tau: 0.0,
            value: 0.0,
        })
}

/// Loss decrease bought by aligning at a peak of height `h` against a
/// slice of energy `e`, after the nonnegative amplitude update: the
/// residual shrinks by max(h, 0)^2 / e. Slices of different stretch carry
/// different energies, so ranking raw peaks would favor the energy-rich
/// ones over the best fit.
fn improvement(h: f64, e: f64) -> f64 {
    if h > 0.0 {
        h * h / e
    } else {
        0.0
    }
}

fn search(correlations: &[(i32, f64, Vec<f64>)], n_pad: usize) -> Candidate {
    let mut best = f64::NEG_INFINITY;
    for (_, e, h) in correlations {
        for &v in h {
            let s = improvement(v, *e);
            if s > best {
                best = s;
            }
        }
    }
    let margin = TIE_EPS * best.abs().max(f64::MIN_POSITIVE);
    let mut candidates = Vec::new();
    for (b, e, h) in correlations {
        for (l, &v) in h.iter().enumerate() {
            if improvement(v, *e) >= best - margin {
                candidates.push(Candidate {
                    lag_index: l,
                    b: *b,
                    tau: signed_lag(l, n_pad),
                    value: v,
                });
            }
        }
    }
    break_ties(&candidates)
}

/// Plain peak search for the shift-only estimate, where every lag carries
/// the same component energy and the raw maximum is already the best fit.
fn search_raw(h: &[f64], n_pad: usize) -> Candidate {
    let mut peak = f64::NEG_INFINITY;
    for &v in h {
        if v > peak {
            peak = v;
        }
    }
    let margin = TIE_EPS * peak.abs().max(f64::MIN_POSITIVE);
    let candidates: Vec<Candidate> = h
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= peak - margin)
        .map(|(l, &v)| Candidate {
            lag_index: l,
            b: 0,
            tau: signed_lag(l, n_pad),
            value: v,
        })
        .collect();
    break_ties(&candidates)
}

fn all_zero(bins: &[Complex64]) -> bool {
    bins.iter().all(|c| c.re == 0.0 && c.im == 0.0)
}

/// Residual spectrum of channel `j` with every component except `k`
/// projected out at its current parameters.
pub fn residual_spectrum(
    j: usize,
    k: usize,
    model: &FactorModel,
    data: &SpectrumMatrix,
    library: &StretchLibrary,
) -> Result<Spectrum> {
    if j >= data.n_channels() || k >= model.n_components() {
        return Err(Error::InvalidInput(format!(
            "residual index ({j}, {k}) outside {} channels x {} components",
            data.n_channels(),
            model.n_components()
        )));
    }
    let mut bins = data.spectra[j].bins.clone();
    for other in 0..model.n_components() {
        if other == k {
            continue;
        }
        for (dst, v) in bins.iter_mut().zip(component_contribution(model, j, other, library)?) {
            *dst -= v;
        }
    }
    Ok(Spectrum {
        bins,
        origin_length: data.n_pad,
    })
}

/// Delay of `g` relative to `s` from the peak of their circular
/// cross-correlation.
pub fn estimate_shift(g: &Spectrum, s: &Spectrum) -> Result<ShiftEstimate> {
    if all_zero(&g.bins) {
        return Err(Error::UndefinedShift(
            "residual spectrum is identically zero".into(),
        ));
    }
    if all_zero(&s.bins) {
        return Err(Error::UndefinedShift(
            "component spectrum is identically zero".into(),
        ));
    }
    let h = cross_correlation(g, s)?;
    let winner = search_raw(&h, g.origin_length);
    Ok(ShiftEstimate {
        lag_index: winner.lag_index,
        tau: winner.tau,
        peak: winner.value,
    })
}

/// Joint delay-and-stretch estimate for component `k`: the 2D argmax over
/// the cross-correlations of `g` with every library slice. `b_window`
/// restricts the stretch search to an inclusive range.
pub fn estimate_shift_stretch(
    g: &Spectrum,
    library: &StretchLibrary,
    k: usize,
    b_window: Option<(i32, i32)>,
) -> Result<ShiftStretchEstimate> {
    if all_zero(&g.bins) {
        return Err(Error::UndefinedShift(
            "residual spectrum is identically zero".into(),
        ));
    }
    let (mut lo, mut hi) = (library.b_min(), library.b_max());
    if let Some((wlo, whi)) = b_window {
        lo = lo.max(wlo);
        hi = hi.min(whi);
    }
    if lo > hi {
        return Err(Error::InvalidInput(format!(
            "stretch window [{lo}, {hi}] is empty"
        )));
    }
    let mut correlations = Vec::with_capacity((hi - lo + 1) as usize);
    for b in lo..=hi {
        let idx = library.index_of(b).expect("window within library");
        let slice = library.slice_by_index(k, idx);
        let spec = Spectrum {
            bins: slice.to_vec(),
            origin_length: library.n_pad(),
        };
        let energy = time_energy(&spec);
        if energy <= 0.0 {
            return Err(Error::DegenerateComponent(format!(
                "library slice at b = {b} has zero energy"
            )));
        }
        correlations.push((b, energy, cross_correlation(g, &spec)?));
    }
    let winner = search(&correlations, g.origin_length);
    Ok(ShiftStretchEstimate {
        lag_index: winner.lag_index,
        b: winner.b,
        tau: winner.tau,
        peak: winner.value,
    })
}

/// Amplitude from the correlation peak: the peak value over the component
/// energy, clipped to zero. Matches the least-squares coefficient when the
/// delay is an integer.
pub fn closed_form_a(h_peak: f64, s: &Spectrum) -> Result<f64> {
    let energy = time_energy(s);
    if energy <= 0.0 {
        return Err(Error::DegenerateComponent(
            "component energy is zero in the amplitude update".into(),
        ));
    }
    Ok((h_peak / energy).max(0.0))
}

/// One closed-form pass over channel `j`: for each component in index
/// order, re-estimate (tau, b) from the residual cross-correlation and
/// refresh the amplitude. Earlier components' updates feed the residuals of
/// later ones. `b_window_delta` bounds the stretch search around the
/// current index; `None` searches the whole library.
pub fn update_channel(
    j: usize,
    model: &FactorModel,
    data: &SpectrumMatrix,
    library: &StretchLibrary,
    b_window_delta: Option<i32>,
) -> Result<(Vec<f64>, Vec<i32>, Vec<f64>)> {
    let kk = model.n_components();
    let m = library.n_fft();
    let n_pad = data.n_pad;
    let x = &data.spectra[j];
    let mut tau_row: Vec<f64> = (0..kk).map(|k| model.tau[(j, k)]).collect();
    let mut b_row: Vec<i32> = (0..kk).map(|k| model.b[(j, k)]).collect();
    let mut a_row: Vec<f64> = (0..kk).map(|k| model.a[(j, k)]).collect();
    let mut contribs: Vec<Vec<Complex64>> = (0..kk)
        .map(|k| component_contribution(model, j, k, library))
        .collect::<Result<_>>()?;

    let with_context = |e: Error, k: usize| match e {
        Error::UndefinedShift(msg) => {
            Error::UndefinedShift(format!("channel {j}, component {k}: {msg}"))
        }
        Error::DegenerateComponent(msg) => {
            Error::DegenerateComponent(format!("channel {j}, component {k}: {msg}"))
        }
        other => other,
    };

    for k in 0..kk {
        let mut bins = x.bins.clone();
        for (other, contrib) in contribs.iter().enumerate() {
            if other == k {
                continue;
            }
            for (dst, v) in bins.iter_mut().zip(contrib) {
                *dst -= v;
            }
        }
        let g = Spectrum {
            bins,
            origin_length: n_pad,
        };
        let (tau, b, peak) = if model.variant.uses_stretch() {
            let window = b_window_delta.map(|d| (b_row[k] - d, b_row[k] + d));
            let est =
                estimate_shift_stretch(&g, library, k, window).map_err(|e| with_context(e, k))?;
            (est.tau, est.b, est.peak)
        } else {
            let slice = library.slice(k, 0)?;
            let s = Spectrum {
                bins: slice.to_vec(),
                origin_length: n_pad,
            };
            let est = estimate_shift(&g, &s).map_err(|e| with_context(e, k))?;
            (est.tau, 0, est.peak)
        };
        let idx = library.index_of(b).expect("estimate within library");
        let slice = library.slice_by_index(k, idx);
        let s = Spectrum {
            bins: slice.to_vec(),
            origin_length: n_pad,
        };
        let a = closed_form_a(peak, &s).map_err(|e| with_context(e, k))?;
        tau_row[k] = tau;
        b_row[k] = b;
        a_row[k] = a;
        let ramp = phase_ramp(tau, m, n_pad);
        contribs[k] = slice
            .iter()
            .zip(ramp)
            .map(|(sv, ph)| a * ph * sv)
            .collect();
    }
    Ok((tau_row, b_row, a_row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorModel, InitState, Variant};
    use crate::spectral::{apply_phase_shift, forward_rdft, inverse_rdft};
    use crate::stretch::{build_library, stretch_profile};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn bump(n: usize, center: f64, sigma: f64) -> Vec<f64> {
        (0..n)
            .map(|t| (-(t as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect()
    }

    fn spectrum_of(x: &[f64]) -> Spectrum {
        forward_rdft(x).unwrap()
    }

    #[test]
    fn shift_of_identical_signals_is_zero() {
        let s = spectrum_of(&bump(64, 20.0, 3.0));
        let est = estimate_shift(&s, &s).unwrap();
        assert_eq!(est.lag_index, 0);
        assert_eq!(est.tau, 0.0);
        assert!(est.peak > 0.0);
    }

    #[test]
    fn positive_delay_recovered() {
        let n = 64;
        let s = bump(n, 20.0, 3.0);
        let mut g = vec![0.0; n];
        for t in 0..n {
            g[(t + 5) % n] = s[t];
        }
        let est = estimate_shift(&spectrum_of(&g), &spectrum_of(&s)).unwrap();
        assert_eq!(est.tau, 5.0);
    }

    #[test]
    fn negative_delay_recovered() {
        let n = 64;
        let s = bump(n, 20.0, 3.0);
        let mut g = vec![0.0; n];
        for t in 0..n {
            g[(t + n - 3) % n] = s[t];
        }
        let est = estimate_shift(&spectrum_of(&g), &spectrum_of(&s)).unwrap();
        assert_eq!(est.tau, -3.0);
    }

    #[test]
    fn positive_scaling_preserves_argmax() {
        let n = 48;
        let s = bump(n, 12.0, 2.0);
        let mut g = vec![0.0; n];
        for t in 0..n {
            g[(t + 7) % n] = s[t];
        }
        let base = estimate_shift(&spectrum_of(&g), &spectrum_of(&s)).unwrap();
        let scaled: Vec<f64> = g.iter().map(|v| 3.5 * v).collect();
        let est = estimate_shift(&spectrum_of(&scaled), &spectrum_of(&s)).unwrap();
        assert_eq!(est.lag_index, base.lag_index);
        assert_eq!(est.tau, base.tau);
        assert_relative_eq!(est.peak, 3.5 * base.peak, max_relative = 1e-10);
    }

    #[test]
    fn zero_input_is_undefined() {
        let z = Spectrum::zeros(32);
        let s = spectrum_of(&bump(32, 10.0, 2.0));
        assert!(matches!(
            estimate_shift(&z, &s),
            Err(Error::UndefinedShift(_))
        ));
        assert!(matches!(
            estimate_shift(&s, &z),
            Err(Error::UndefinedShift(_))
        ));
    }

    #[test]
    fn tie_breaking_prefers_small_lag_then_small_stretch() {
        let mk = |lag_index: usize, b: i32, tau: f64| Candidate {
            lag_index,
            b,
            tau,
            value: 1.0,
        };
        // |tau| dominates.
        let c = break_ties(&[mk(7, 0, 7.0), mk(60, -1, -4.0), mk(2, 3, 2.0)]);
        assert_eq!((c.lag_index, c.b), (2, 3));
        // Then |b|.
        let c = break_ties(&[mk(3, -2, 3.0), mk(3, 1, 3.0), mk(61, 4, -3.0)]);
        assert_eq!(c.b, 1);
        // Then b itself: the smaller signed value wins at equal magnitude.
        let c = break_ties(&[mk(3, 2, 3.0), mk(3, -2, 3.0)]);
        assert_eq!(c.b, -2);
        // Lag index is the final key.
        let c = break_ties(&[mk(61, 0, -3.0), mk(3, 0, 3.0)]);
        assert_eq!(c.lag_index, 3);
    }

    #[test]
    fn symmetric_double_peak_resolves_deterministically() {
        let n = 64;
        let s = bump(n, 20.0, 1.5);
        let mut g = vec![0.0; n];
        for t in 0..n {
            g[(t + 4) % n] += s[t];
            g[(t + n - 4) % n] += s[t];
        }
        let est = estimate_shift(&spectrum_of(&g), &spectrum_of(&s)).unwrap();
        assert_eq!(est.tau.abs(), 4.0);
        assert_eq!(est.tau, 4.0);
    }

    #[test]
    fn non_finite_correlations_fall_back_to_zero_delay() {
        let raw = search_raw(&[f64::NAN; 8], 8);
        assert_eq!(raw.lag_index, 0);
        assert_eq!(raw.tau, 0.0);

        let mut h = vec![0.0; 8];
        h[3] = f64::INFINITY;
        let got = search(&[(0, 1.0, h)], 8);
        assert_eq!(got.lag_index, 0);
        assert_eq!(got.b, 0);

        let empty = break_ties(&[]);
        assert_eq!(empty.tau, 0.0);
        assert_eq!(empty.value, 0.0);
    }

    #[test]
    fn grid_of_shift_stretch_pairs_recovered_exactly() {
        let n = 64;
        let profile = bump(n, 26.0, 2.5);
        let mut rows = Array2::zeros((1, n));
        for (t, v) in profile.iter().enumerate() {
            rows[(0, t)] = *v;
        }
        let lib = build_library(&rows, (-12, 12)).unwrap();
        for &b0 in &[-10i32, -5, 0, 5, 10] {
            for &tau0 in &[-12i64, -5, 0, 7] {
                let g = apply_phase_shift(&stretch_profile(&profile, b0).unwrap(), tau0 as f64);
                let est = estimate_shift_stretch(&g, &lib, 0, None).unwrap();
                assert_eq!((est.b, est.tau), (b0, tau0 as f64), "b0={b0} tau0={tau0}");
                let a = closed_form_a(est.peak, &Spectrum {
                    bins: lib.slice(0, b0).unwrap().to_vec(),
                    origin_length: n,
                })
                .unwrap();
                assert_relative_eq!(a, 1.0, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn window_restricts_the_stretch_search() {
        let n = 64;
        let profile = bump(n, 26.0, 2.5);
        let mut rows = Array2::zeros((1, n));
        for (t, v) in profile.iter().enumerate() {
            rows[(0, t)] = *v;
        }
        let lib = build_library(&rows, (-12, 12)).unwrap();
        let g = apply_phase_shift(&stretch_profile(&profile, 9).unwrap(), 3.0);
        let est = estimate_shift_stretch(&g, &lib, 0, Some((-2, 2))).unwrap();
        assert!(est.b >= -2 && est.b <= 2);
        let est = estimate_shift_stretch(&g, &lib, 0, Some((7, 11))).unwrap();
        assert_eq!(est.b, 9);
    }

    #[test]
    fn amplitude_of_doubled_signal_is_two() {
        let n = 32;
        let s = bump(n, 10.0, 2.0);
        let g: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let ss = spectrum_of(&s);
        let est = estimate_shift(&spectrum_of(&g), &ss).unwrap();
        let a = closed_form_a(est.peak, &ss).unwrap();
        assert_relative_eq!(a, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn amplitude_of_negated_signal_clips_to_zero() {
        let n = 32;
        let s = bump(n, 10.0, 2.0);
        let g: Vec<f64> = s.iter().map(|v| -v).collect();
        let ss = spectrum_of(&s);
        let est = estimate_shift(&spectrum_of(&g), &ss).unwrap();
        let a = closed_form_a(est.peak, &ss).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn amplitude_matches_least_squares_coefficient() {
        let n = 40;
        let s = bump(n, 14.0, 3.0);
        let g: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(t, v)| 1.7 * v + 0.05 * (t as f64 * 0.4).sin())
            .collect();
        let ss = spectrum_of(&s);
        let h = cross_correlation(&spectrum_of(&g), &ss).unwrap();
        let a = closed_form_a(h[0], &ss).unwrap();
        let ols = g.iter().zip(&s).map(|(x, y)| x * y).sum::<f64>()
            / s.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(a, ols, max_relative = 1e-10);
    }

    fn exact_two_component_setup() -> (FactorModel, SpectrumMatrix, crate::stretch::StretchLibrary)
    {
        let n = 64;
        let mut profiles = Array2::zeros((2, n));
        for (t, v) in bump(n, 18.0, 2.0).into_iter().enumerate() {
            profiles[(0, t)] = v + 0.01;
        }
        for (t, v) in bump(n, 40.0, 4.0).into_iter().enumerate() {
            profiles[(1, t)] = 0.8 * v + 0.01;
        }
        let a = array![[1.2, 0.0], [0.0, 0.7], [0.5, 0.9]];
        let tau = array![[4.0, 0.0], [0.0, -6.0], [2.0, 5.0]];
        let b = array![[2, 0], [0, -3], [-1, 4]];
        let init = InitState {
            s: profiles,
            a,
            tau: Some(tau),
            b: Some(b),
        };
        let model = FactorModel::from_init(Variant::ShiftStretch, &init, n).unwrap();
        let lib = build_library(&model.profiles(), (-8, 8)).unwrap();
        let mut values = Array2::zeros((3, n));
        for j in 0..3 {
            let spec = crate::model::reconstruct_channel_spectrum(&model, j, &lib).unwrap();
            for (t, v) in inverse_rdft(&spec).unwrap().into_iter().enumerate() {
                values[(j, t)] = v;
            }
        }
        let spectra = SpectrumMatrix::from_rows(&values).unwrap();
        (model, spectra, lib)
    }

    #[test]
    fn residual_with_one_component_is_the_channel() {
        let n = 32;
        let mut s = Array2::zeros((1, n));
        for (t, v) in bump(n, 10.0, 2.0).into_iter().enumerate() {
            s[(0, t)] = v + 0.05;
        }
        let init = InitState::new(s, array![[0.9]]);
        let model = FactorModel::from_init(Variant::IntegerShift, &init, n).unwrap();
        let lib = build_library(&model.profiles(), (0, 0)).unwrap();
        let mut values = Array2::zeros((1, n));
        for (t, v) in bump(n, 15.0, 3.0).into_iter().enumerate() {
            values[(0, t)] = v;
        }
        let spectra = SpectrumMatrix::from_rows(&values).unwrap();
        let g = residual_spectrum(0, 0, &model, &spectra, &lib).unwrap();
        for (a, b) in g.bins.iter().zip(&spectra.spectra[0].bins) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn residual_ignores_zero_weight_component() {
        let (mut model, spectra, lib) = exact_two_component_setup();
        model.a[(0, 1)] = 0.0;
        let g = residual_spectrum(0, 0, &model, &spectra, &lib).unwrap();
        for (a, b) in g.bins.iter().zip(&spectra.spectra[0].bins) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn residual_isolates_single_contribution() {
        let (model, spectra, lib) = exact_two_component_setup();
        let g = residual_spectrum(2, 0, &model, &spectra, &lib).unwrap();
        let own = component_contribution(&model, 2, 0, &lib).unwrap();
        for (a, b) in g.bins.iter().zip(&own) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn residual_rejects_bad_indices() {
        let (model, spectra, lib) = exact_two_component_setup();
        assert!(residual_spectrum(9, 0, &model, &spectra, &lib).is_err());
        assert!(residual_spectrum(0, 5, &model, &spectra, &lib).is_err());
    }

    #[test]
    fn randomized_single_component_channels_recover_exactly() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let n = 80;
        let profile: Vec<f64> = bump(n, 30.0, 3.0).iter().map(|v| v + 0.02).collect();
        let mut rows = Array2::zeros((1, n));
        for (t, v) in profile.iter().enumerate() {
            rows[(0, t)] = *v;
        }
        let lib = build_library(&rows, (-12, 12)).unwrap();
        let init = InitState::new(rows.clone(), array![[1.0]]);
        let mut failures = 0;
        for trial in 0..50 {
            let tau0 = rng.gen_range(-(n as i64) / 4..=(n as i64) / 4) as f64;
            let b0 = rng.gen_range(-12..=12);
            let a0 = rng.gen_range(0.2..3.0);
            let g = apply_phase_shift(&stretch_profile(&profile, b0).unwrap(), tau0);
            let x: Vec<f64> = inverse_rdft(&g).unwrap().iter().map(|v| a0 * v).collect();
            let mut values = Array2::zeros((1, n));
            for (t, v) in x.iter().enumerate() {
                values[(0, t)] = *v;
            }
            let spectra = SpectrumMatrix::from_rows(&values).unwrap();
            let model = FactorModel::from_init(Variant::ShiftStretch, &init, n).unwrap();
            let (tau, b, a) = update_channel(0, &model, &spectra, &lib, None).unwrap();
            let ok = tau[0] == tau0
                && b[0] == b0
                && (a[0] - a0).abs() / a0 < 1e-6;
            if !ok {
                failures += 1;
                eprintln!(
                    "trial {trial}: true ({tau0}, {b0}, {a0:.4}) got ({}, {}, {:.4})",
                    tau[0], b[0], a[0]
                );
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn per_component_estimation_recovers_truth_when_others_are_known() {
        let (model, spectra, lib) = exact_two_component_setup();
        for j in 0..3 {
            for k in 0..2 {
                if model.a[(j, k)] == 0.0 {
                    continue;
                }
                let g = residual_spectrum(j, k, &model, &spectra, &lib).unwrap();
                let est = estimate_shift_stretch(&g, &lib, k, None).unwrap();
                assert_eq!(est.tau, model.tau[(j, k)], "tau at ({j}, {k})");
                assert_eq!(est.b, model.b[(j, k)], "b at ({j}, {k})");
                let s = Spectrum {
                    bins: lib.slice(k, est.b).unwrap().to_vec(),
                    origin_length: spectra.n_pad,
                };
                let a = closed_form_a(est.peak, &s).unwrap();
                assert_relative_eq!(a, model.a[(j, k)], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn update_channel_is_idempotent_on_exact_data() {
        let (model, spectra, lib) = exact_two_component_setup();
        for j in 0..3 {
            let (tau, b, a) = update_channel(j, &model, &spectra, &lib, None).unwrap();
            let mut once = model.clone();
            for k in 0..2 {
                once.tau[(j, k)] = tau[k];
                once.b[(j, k)] = b[k];
                once.a[(j, k)] = a[k];
            }
            let (tau2, b2, a2) = update_channel(j, &once, &spectra, &lib, None).unwrap();
            for k in 0..2 {
                if model.a[(j, k)] == 0.0 {
                    // Components carrying no signal fit residual noise;
                    // only their amplitude is pinned down.
                    assert!(a[k] < 1e-10, "ghost amplitude {} at ({j}, {k})", a[k]);
                    assert!(a2[k] < 1e-10);
                    continue;
                }
                assert_eq!(tau[k], tau2[k]);
                assert_eq!(b[k], b2[k]);
                assert_eq!(tau[k], model.tau[(j, k)]);
                assert_eq!(b[k], model.b[(j, k)]);
                assert_relative_eq!(a[k], a2[k], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_blocks_keep_off_block_amplitudes_near_zero() {
        // Two profiles with disjoint time support, two channels per block.
        // Starting from the least-squares channel map (which is exact for
        // disjoint supports), one sweep must keep the off-block entries at
        // zero and the on-block entries at their true scales.
        let n = 64;
        let mut profiles = Array2::zeros((2, n));
        for t in 2..14 {
            profiles[(0, t)] = bump(n, 8.0, 2.0)[t];
        }
        for t in 34..50 {
            profiles[(1, t)] = bump(n, 42.0, 2.5)[t];
        }
        let scales = [1.3, 0.7, 1.1, 0.9];
        let mut values = Array2::zeros((4, n));
        for j in 0..4 {
            let k = j / 2;
            for t in 0..n {
                values[(j, t)] = scales[j] * profiles[(k, t)];
            }
        }
        let data = crate::data::TimeSeriesMatrix::from_raw(values.clone());
        let a_ls = crate::init::least_squares_a(&data, &profiles).unwrap();
        for j in 0..4 {
            let k = j / 2;
            assert_relative_eq!(a_ls[(j, k)], scales[j], max_relative = 1e-10);
            assert!(a_ls[(j, 1 - k)] < 1e-10);
        }
        let init = InitState {
            s: profiles,
            a: a_ls,
            tau: None,
            b: None,
        };
        let model = FactorModel::from_init(Variant::IntegerShift, &init, n).unwrap();
        let lib = build_library(&model.profiles(), (0, 0)).unwrap();
        let spectra = SpectrumMatrix::from_rows(&values).unwrap();
        for j in 0..4 {
            let k = j / 2;
            let (tau, _, a_row) = update_channel(j, &model, &spectra, &lib, None).unwrap();
            assert!(
                a_row[1 - k] < 1e-6,
                "off-block amplitude {} at channel {j}",
                a_row[1 - k]
            );
            assert_eq!(tau[k], 0.0);
            assert_relative_eq!(a_row[k], scales[j], max_relative = 1e-6);
        }
    }

    #[test]
    fn shift_only_path_matches_single_slice_search() {
        let n = 64;
        let profile = bump(n, 26.0, 2.5);
        let mut rows = Array2::zeros((1, n));
        for (t, v) in profile.iter().enumerate() {
            rows[(0, t)] = *v;
        }
        let lib = build_library(&rows, (0, 0)).unwrap();
        let mut g = vec![0.0; n];
        for t in 0..n {
            g[(t + 9) % n] = profile[t] * 1.3;
        }
        let gs = spectrum_of(&g);
        let one = estimate_shift(&gs, &spectrum_of(&profile)).unwrap();
        let two = estimate_shift_stretch(&gs, &lib, 0, None).unwrap();
        assert_eq!(one.lag_index, two.lag_index);
        assert_eq!(one.tau, two.tau);
        assert_eq!(two.b, 0);
        assert_relative_eq!(one.peak, two.peak, max_relative = 1e-12);
    }
}
