//! Starting points for the factor fits: a shift-invariant clustering of
//! the channels for the profiles and an ordinary least-squares solve for
//! the channel map.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::estimation::estimate_shift;
use crate::spectral::{cross_correlation, forward_rdft, Spectrum};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Shift-invariant dissimilarity: one minus the maximum normalized circular
/// cross-correlation over all integer lags. Zero for signals equal up to a
/// positive scale and a circular shift; two for perfect anti-alignment.
pub fn ncc_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "signal lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidInput(
            "cannot compare a zero-norm signal".into(),
        ));
    }
    let h = cross_correlation(&forward_rdft(x)?, &forward_rdft(y)?)?;
    let peak = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(1.0 - peak / (nx * ny))
}

/// Clustering result: unit-norm nonnegative centroid profiles and the
/// cluster index of every channel.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub s_init: Array2<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn row(values: &Array2<f64>, j: usize) -> Vec<f64> {
    values.row(j).to_vec()
}

fn unit_normalized(mut x: Vec<f64>) -> Vec<f64> {
    let n = norm(&x);
    if n > 0.0 {
        for v in &mut x {
            *v /= n;
        }
    }
    x
}

/// Rotate `member` so that its best circular alignment with `centroid`
/// lands at lag zero.
fn aligned_to(centroid: &Spectrum, member: &[f64]) -> Result<Vec<f64>> {
    let est = estimate_shift(&forward_rdft(member)?, centroid)?;
    let n = member.len();
    let l = est.lag_index;
    Ok((0..n).map(|t| member[(t + l) % n]).collect())
}

/// Cluster the channels with the shift-invariant distance and return the
/// cluster centroids as starting profiles. Centroids start from `k`
/// channels sampled without replacement, then alternate nearest-centroid
/// assignment with an alignment-averaged centroid update until the
/// assignment stops changing. Empty clusters steal the worst-fitting
/// channel. Deterministic for a fixed seed.
pub fn kshape_init(
    data: &TimeSeriesMatrix,
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<InitResult> {
    let p = data.n_channels();
    let n = data.n_pad();
    if k == 0 {
        return Err(Error::InvalidInput("cluster count must be >= 1".into()));
    }
    if p < k {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {p} channels"
        )));
    }
    for j in 0..p {
        if norm(&row(&data.values, j)) == 0.0 {
            return Err(Error::InvalidInput(format!(
                "channel {j} has zero norm; drop it before clustering"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, p, k).into_vec();
    let mut centroids: Vec<Vec<f64>> = picks
        .iter()
        .map(|&j| unit_normalized(row(&data.values, j)))
        .collect();

    let mut assignments = vec![0usize; p];
    let mut iterations = 0;
    for iter in 0..max_iterations {
        iterations = iter + 1;
        let centroid_spectra: Vec<Spectrum> = centroids
            .iter()
            .map(|c| forward_rdft(c))
            .collect::<Result<_>>()?;

        let mut next = vec![0usize; p];
        let mut dist = vec![0.0f64; p];
        for j in 0..p {
            let x = row(&data.values, j);
            let mut best = f64::INFINITY;
            let mut best_c = 0;
            for (c, _) in centroids.iter().enumerate() {
                let d = ncc_distance(&x, &centroids[c])?;
                if d < best {
                    best = d;
                    best_c = c;
                }
            }
            next[j] = best_c;
            dist[j] = best;
        }

        // Give every empty cluster the channel that fits its current
        // cluster worst, provided the donor cluster keeps a member.
        for c in 0..k {
            if next.iter().any(|&a| a == c) {
                continue;
            }
            let mut counts = vec![0usize; k];
            for &a in next.iter() {
                counts[a] += 1;
            }
            let victim = (0..p)
                .filter(|&j| counts[next[j]] > 1)
                .max_by(|&x, &y| dist[x].partial_cmp(&dist[y]).unwrap().then(y.cmp(&x)));
            if let Some(j) = victim {
                next[j] = c;
                dist[j] = 0.0;
                centroids[c] = unit_normalized(row(&data.values, j));
            }
        }

        let converged = iter > 0 && next == assignments;
        assignments = next;
        if converged {
            break;
        }

        for c in 0..k {
            let members: Vec<usize> = (0..p).filter(|&j| assignments[j] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0f64; n];
            for &j in &members {
                let aligned = aligned_to(&centroid_spectra[c], &row(&data.values, j))?;
                for (m, v) in mean.iter_mut().zip(aligned) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m = (*m / members.len() as f64).max(0.0);
            }
            if norm(&mean) > 0.0 {
                centroids[c] = unit_normalized(mean);
            }
        }
    }

    let mut s_init = Array2::zeros((k, n));
    for (c, centroid) in centroids.iter().enumerate() {
        for (t, v) in centroid.iter().enumerate() {
            s_init[(c, t)] = *v;
        }
    }
    Ok(InitResult {
        s_init,
        assignments,
        iterations,
    })
}

/// Solve the k x k normal equations by Cholesky factorization. Errors when
/// the Gram matrix is not positive definite.
fn solve_gram(gram: &Array2<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let k = rhs.len();
    let mut l = vec![0.0f64; k * k];
    let scale: f64 = (0..k).map(|i| gram[(i, i)]).sum::<f64>().max(f64::MIN_POSITIVE);
    for i in 0..k {
        for j in 0..=i {
            let mut sum = gram[(i, j)];
            for t in 0..j {
                sum -= l[i * k + t] * l[j * k + t];
            }
            if i == j {
                if sum <= 1e-12 * scale {
                    return Err(Error::DegenerateInit(
                        "initial profiles are linearly dependent".into(),
                    ));
                }
                l[i * k + i] = sum.sqrt();
            } else {
                l[i * k + j] = sum / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0f64; k];
    for i in 0..k {
        let mut sum = rhs[i];
        for t in 0..i {
            sum -= l[i * k + t] * y[t];
        }
        y[i] = sum / l[i * k + i];
    }
    let mut x = vec![0.0f64; k];
    for i in (0..k).rev() {
        let mut sum = y[i];
        for t in i + 1..k {
            sum -= l[t * k + i] * x[t];
        }
        x[i] = sum / l[i * k + i];
    }
    Ok(x)
}

/// Per-channel least-squares coefficients of the data on the unshifted
/// profiles, clipped to be nonnegative.
pub fn least_squares_a(data: &TimeSeriesMatrix, profiles: &Array2<f64>) -> Result<Array2<f64>> {
    let (k, n) = profiles.dim();
    if n != data.n_pad() {
        return Err(Error::InvalidInput(format!(
            "profiles have {n} samples but data has {}",
            data.n_pad()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("no profiles to regress on".into()));
    }
    let mut gram = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = profiles.row(i).dot(&profiles.row(j));
        }
    }
    let p = data.n_channels();
    let mut a = Array2::zeros((p, k));
    for j in 0..p {
        let rhs: Vec<f64> = (0..k)
            .map(|c| profiles.row(c).dot(&data.values.row(j)))
            .collect();
        let coeffs = solve_gram(&gram, &rhs)?;
        for (c, v) in coeffs.into_iter().enumerate() {
            a[(j, c)] = v.max(0.0);
        }
    }
    Ok(a)
}
