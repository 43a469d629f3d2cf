//! Recovery metrics and the model-order sweep: permutation-matched channel
//! map correlation, time-domain variance explained over the unpadded
//! region, and reconstruction helpers.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::init;
use crate::model::{
    fit_chain, reconstruct_channel_spectrum, FactorModel, FitConfig, InitState, Variant,
};
use crate::spectral::inverse_rdft;
use crate::stretch::StretchLibrary;

/// Everything a downstream report needs to judge a fit against data (and,
/// where available, against known generating factors).
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub variance_explained: f64,
    pub per_channel_variance_explained: Vec<f64>,
    /// Mean permutation-matched Pearson correlation of the channel maps;
    /// absent when no ground truth was supplied.
    pub matched_correlation: Option<f64>,
    /// `permutation[c]` is the estimated component matched to true
    /// component `c`.
    pub permutation: Option<Vec<usize>>,
}

fn pearson(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Pearson correlation between every estimated column (rows of the result)
/// and every true column (columns of the result).
pub(crate) fn correlation_matrix(a_hat: &Array2<f64>, a_true: &Array2<f64>) -> Array2<f64> {
    let k = a_hat.ncols();
    let mut score = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            score[(i, j)] = pearson(a_hat.column(i), a_true.column(j));
        }
    }
    score
}

fn assignment_score(score: &Array2<f64>, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(c, &i)| score[(i, c)])
        .sum::<f64>()
        / perm.len() as f64
}

fn heap_permutations(arr: &mut [usize], n: usize, visit: &mut impl FnMut(&[usize])) {
    if n <= 1 {
        visit(arr);
        return;
    }
    for i in 0..n {
        heap_permutations(arr, n - 1, visit);
        if n % 2 == 0 {
            arr.swap(i, n - 1);
        } else {
            arr.swap(0, n - 1);
        }
    }
}

fn exhaustive_max(score: &Array2<f64>) -> Vec<usize> {
    let k = score.nrows();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best_perm = idx.clone();
    let mut best = f64::NEG_INFINITY;
    heap_permutations(&mut idx, k, &mut |perm| {
        let s = assignment_score(score, perm);
        if s > best {
            best = s;
            best_perm = perm.to_vec();
        }
    });
    best_perm
}

/// Maximum-total-score assignment on a square matrix, O(k^3). Returns
/// `perm[c]` = row assigned to column `c`.
pub(crate) fn hungarian_max(score: &Array2<f64>) -> Vec<usize> {
    let n = score.nrows();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -score[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| p[j] - 1).collect()
}

/// Mean per-component Pearson correlation between estimated and true
/// channel maps under the best column matching. Exhaustive search up to
/// eight components, assignment solver beyond that. Columns with zero
/// variance correlate at zero by convention.
pub fn matched_correlation(
    a_hat: &Array2<f64>,
    a_true: &Array2<f64>,
) -> Result<(f64, Vec<usize>)> {
    if a_hat.dim() != a_true.dim() {
        return Err(Error::InvalidInput(format!(
            "channel map shapes {:?} and {:?} differ",
            a_hat.dim(),
            a_true.dim()
        )));
    }
    let (p, k) = a_hat.dim();
    if k == 0 {
        return Err(Error::InvalidInput("channel maps have no components".into()));
    }
    if p < 2 {
        return Err(Error::InvalidInput(
            "correlation needs at least two channels".into(),
        ));
    }
    let score = correlation_matrix(a_hat, a_true);
    let perm = if k <= 8 {
        exhaustive_max(&score)
    } else {
        hungarian_max(&score)
    };
    Ok((assignment_score(&score, &perm), perm))
}

/// Time-domain reconstructions of the requested channels, truncated to the
/// first `n_original` samples.
pub fn reconstruct_channels(
    model: &FactorModel,
    library: &StretchLibrary,
    indices: &[usize],
    n_original: usize,
) -> Result<Array2<f64>> {
    if n_original > model.n_pad {
        return Err(Error::InvalidInput(format!(
            "cannot truncate to {n_original} samples from {} padded",
            model.n_pad
        )));
    }
    let mut out = Array2::zeros((indices.len(), n_original));
    for (row, &j) in indices.iter().enumerate() {
        if j >= model.n_channels() {
            return Err(Error::InvalidInput(format!(
                "channel index {j} outside {} channels",
                model.n_channels()
            )));
        }
        let spec = reconstruct_channel_spectrum(model, j, library)?;
        let curve = inverse_rdft(&spec)?;
        for t in 0..n_original {
            out[(row, t)] = curve[t];
        }
    }
    Ok(out)
}

fn residual_and_energy(
    model: &FactorModel,
    data: &TimeSeriesMatrix,
    library: &StretchLibrary,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.n_channels() != data.n_channels() || model.n_pad != data.n_pad() {
        return Err(Error::InvalidInput(format!(
            "model is {} x {} but data is {} x {}",
            model.n_channels(),
            model.n_pad,
            data.n_channels(),
            data.n_pad()
        )));
    }
    let n = data.n_original;
    let mut residuals = Vec::with_capacity(data.n_channels());
    let mut energies = Vec::with_capacity(data.n_channels());
    for j in 0..data.n_channels() {
        let spec = reconstruct_channel_spectrum(model, j, library)?;
        let curve = inverse_rdft(&spec)?;
        let mut res = 0.0;
        let mut energy = 0.0;
        for t in 0..n {
            let x = data.values[(j, t)];
            let d = x - curve[t];
            res += d * d;
            energy += x * x;
        }
        residuals.push(res);
        energies.push(energy);
    }
    Ok((residuals, energies))
}

/// Fraction of the unpadded data variance captured by the reconstruction,
/// pooled over channels: `1 - sum(residual^2) / sum(x^2)`.
pub fn variance_explained(
    model: &FactorModel,
    data: &TimeSeriesMatrix,
    library: &StretchLibrary,
) -> Result<f64> {
    let (residuals, energies) = residual_and_energy(model, data, library)?;
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "data has zero energy over the unpadded region".into(),
        ));
    }
    Ok(1.0 - residuals.iter().sum::<f64>() / total)
}

/// Per-channel variance explained. Channels with zero energy report zero.
pub fn per_channel_variance_explained(
    model: &FactorModel,
    data: &TimeSeriesMatrix,
    library: &StretchLibrary,
) -> Result<Vec<f64>> {
    let (residuals, energies) = residual_and_energy(model, data, library)?;
    Ok(residuals
        .iter()
        .zip(&energies)
        .map(|(r, e)| if *e > 0.0 { 1.0 - r / e } else { 0.0 })
        .collect())
}

/// One cell of the model-order sweep. Failed fits keep their row with the
/// error recorded in `status`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub k: usize,
    pub repeat: usize,
    pub variance_explained: Option<f64>,
    pub final_loss: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    pub seed: u64,
    pub status: String,
}

fn cell_seed(base: u64, k: usize, repeat: usize) -> u64 {
    let mut z = base
        .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((repeat as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fit one (variant, K, repeat) cell. The cell seed is derived from the
/// template seed so every cell is independent of execution order, which
/// lets interrupted sweeps resume cell by cell. Initialization depends
/// only on (K, repeat), so variants sharing those compare on one start.
pub fn sweep_cell(
    data: &TimeSeriesMatrix,
    variant: Variant,
    k: usize,
    repeat: usize,
    template: &FitConfig,
) -> SweepRow {
    let seed = cell_seed(template.seed, k, repeat);
    let started = std::time::Instant::now();
    let mut config = template.clone();
    config.variant = variant;
    config.k = k;
    config.seed = seed;
    let outcome = (|| {
        let clusters = init::kshape_init(data, k, seed, 100)?;
        let a = init::least_squares_a(data, &clusters.s_init)?;
        fit_chain(data, &config, &InitState::new(clusters.s_init, a))
    })();
    match outcome {
        Ok((_, report)) => SweepRow {
            variant: variant.name().into(),
            k,
            repeat,
            variance_explained: Some(report.variance_explained),
            final_loss: Some(report.final_loss),
            iterations: Some(report.iterations),
            seconds: started.elapsed().as_secs_f64(),
            seed,
            status: "ok".into(),
        },
        Err(e) => SweepRow {
            variant: variant.name().into(),
            k,
            repeat,
            variance_explained: None,
            final_loss: None,
            iterations: None,
            seconds: started.elapsed().as_secs_f64(),
            seed,
            status: e.to_string(),
        },
    }
}

/// Fit every (variant, K, repeat) cell and tabulate the results. Cell
/// failures land in the table instead of aborting the sweep.
pub fn model_order_sweep(
    data: &TimeSeriesMatrix,
    k_list: &[usize],
    variants: &[Variant],
    repeats: usize,
    template: &FitConfig,
) -> Result<Vec<SweepRow>> {
    if k_list.is_empty() || variants.is_empty() || repeats == 0 {
        return Err(Error::InvalidConfig(
            "sweep needs at least one K, one variant, and one repeat".into(),
        ));
    }
    let mut rows = Vec::with_capacity(k_list.len() * repeats * variants.len());
    for &k in k_list {
        for repeat in 0..repeats {
            for &variant in variants {
                rows.push(sweep_cell(data, variant, k, repeat, template));
            }
        }
    }
    Ok(rows)
}
