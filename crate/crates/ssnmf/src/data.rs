//! Data ingestion (CSV and a little-endian binary format), preprocessing
//! for count data, and the synthetic two-component generator with stored
//! ground truth.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{apply_phase_shift, inverse_rdft, n_fft_len};
use crate::stretch::{b_to_r, full_b_range, stretch_profile};

const RAWBIN_MAGIC: &[u8; 4] = b"SSNM";
const RAWBIN_VERSION: u32 = 1;

/// Channels-by-time matrix plus the bookkeeping needed to undo padding.
#[derive(Debug, Clone)]
pub struct TimeSeriesMatrix {
    pub values: Array2<f64>,
    pub n_original: usize,
    pub pad_fraction: f64,
    pub channel_ids: Vec<usize>,
    pub unit_normalized: bool,
}

impl TimeSeriesMatrix {
    /// Wrap a raw matrix with no padding or normalization applied.
    pub fn from_raw(values: Array2<f64>) -> Self {
        let p = values.nrows();
        let n = values.ncols();
        TimeSeriesMatrix {
            values,
            n_original: n,
            pad_fraction: 0.0,
            channel_ids: (0..p).collect(),
            unit_normalized: false,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_pad(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Rawbin,
}

impl DataFormat {
    /// Guess the format from a file extension, defaulting to rawbin.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("txt") => DataFormat::Csv,
            _ => DataFormat::Rawbin,
        }
    }
}

fn check_finite(values: &Array2<f64>) -> Result<()> {
    for ((j, t), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                channel: j,
                sample: t,
            });
        }
    }
    Ok(())
}

/// Load a channels-by-time matrix; one channel per CSV row, or the rawbin
/// layout (magic "SSNM", u32 version, u64 P, u64 N, row-major f64, all
/// little-endian).
pub fn load_matrix(path: &Path, format: DataFormat) -> Result<TimeSeriesMatrix> {
    let values = match format {
        DataFormat::Csv => load_csv(path)?,
        DataFormat::Rawbin => load_rawbin(path)?,
    };
    check_finite(&values)?;
    Ok(TimeSeriesMatrix::from_raw(values))
}

fn load_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        let parsed: std::result::Result<Vec<f64>, usize> = fields
            .iter()
            .enumerate()
            .map(|(col, f)| f.parse::<f64>().map_err(|_| col))
            .collect();
        match parsed {
            Ok(row) => {
                if let Some(w) = width {
                    if row.len() != w {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            column: row.len(),
                            message: format!("expected {w} fields, found {}", row.len()),
                        });
                    }
                } else {
                    width = Some(row.len());
                }
                rows.push(row);
            }
            Err(col) => {
                // An unparseable first line is taken as a header.
                if rows.is_empty() && width.is_none() {
                    continue;
                }
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: col + 1,
                    message: format!("invalid number {:?}", fields[col]),
                });
            }
        }
    }
    let p = rows.len();
    let n = width.unwrap_or(0);
    if p == 0 || n == 0 {
        return Err(Error::EmptyData(format!("{} holds no data rows", path.display())));
    }
    let mut out = Array2::zeros((p, n));
    for (j, row) in rows.into_iter().enumerate() {
        for (t, v) in row.into_iter().enumerate() {
            out[(j, t)] = v;
        }
    }
    Ok(out)
}

fn load_rawbin(path: &Path) -> Result<Array2<f64>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 24];
    file.read_exact(&mut header).map_err(|_| Error::Parse {
        line: 0,
        column: 0,
        message: "file shorter than rawbin header".into(),
    })?;
    if &header[0..4] != RAWBIN_MAGIC {
        return Err(Error::Parse {
            line: 0,
            column: 0,
            message: "bad magic, not a rawbin matrix".into(),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != RAWBIN_VERSION {
        return Err(Error::Parse {
            line: 0,
            column: 4,
            message: format!("unsupported rawbin version {version}"),
        });
    }
    let p = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    if p == 0 || n == 0 {
        return Err(Error::EmptyData(format!(
            "rawbin header declares {p} x {n} matrix"
        )));
    }
    let mut buf = vec![0u8; p * n * 8];
    file.read_exact(&mut buf).map_err(|_| Error::Parse {
        line: 0,
        column: 24,
        message: format!("payload shorter than {p} x {n} doubles"),
    })?;
    let mut out = Array2::zeros((p, n));
    for j in 0..p {
        for t in 0..n {
            let off = (j * n + t) * 8;
            out[(j, t)] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        }
    }
    Ok(out)
}

/// Write a matrix in the rawbin layout. Round-trips bit-exactly.
pub fn save_rawbin(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(RAWBIN_MAGIC)?;
    file.write_all(&RAWBIN_VERSION.to_le_bytes())?;
    file.write_all(&(values.nrows() as u64).to_le_bytes())?;
    file.write_all(&(values.ncols() as u64).to_le_bytes())?;
    for v in values.iter() {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write a matrix as CSV, one channel per row. Values use the shortest
/// representation that parses back to the same double.
pub fn save_csv(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in values.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Threshold, normalize, and zero-pad raw count channels.
///
/// Channels whose summed counts are at or below `threshold`, and channels in
/// `exclude`, are dropped; survivors are scaled to unit 2-norm when
/// `unit_norm` is set, then extended with `round(pad_fraction * N)` zeros.
pub fn preprocess(
    data: &TimeSeriesMatrix,
    threshold: f64,
    pad_fraction: f64,
    unit_norm: bool,
    exclude: &[usize],
) -> Result<TimeSeriesMatrix> {
    let n = data.values.ncols();
    if !(0.0..=10.0).contains(&pad_fraction) {
        return Err(Error::InvalidConfig(format!(
            "pad fraction {pad_fraction} out of range"
        )));
    }
    check_finite(&data.values)?;
    if let Some(((j, t), v)) = data
        .values
        .indexed_iter()
        .find(|(_, v)| **v < 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "negative count {v} at channel {j}, sample {t}"
        )));
    }
    let excluded: HashSet<usize> = exclude.iter().copied().collect();
    let mut kept: Vec<usize> = Vec::new();
    for (j, row) in data.values.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if sum > threshold && !excluded.contains(&data.channel_ids[j]) {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyData(format!(
            "no channels above threshold {threshold}"
        )));
    }
    let n_pad = n + (pad_fraction * n as f64).round() as usize;
    let mut values = Array2::zeros((kept.len(), n_pad));
    for (out_j, &j) in kept.iter().enumerate() {
        let row = data.values.row(j);
        let scale = if unit_norm {
            1.0 / row.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            1.0
        };
        for t in 0..n {
            values[(out_j, t)] = row[t] * scale;
        }
    }
    Ok(TimeSeriesMatrix {
        values,
        n_original: n,
        pad_fraction,
        channel_ids: kept.iter().map(|&j| data.channel_ids[j]).collect(),
        unit_normalized: unit_norm,
    })
}

/// Parameters of the synthetic two-component recovery experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub channels_per_component: usize,
    /// Inclusive bounds on the integer shift draw.
    pub shift_range: (i32, i32),
    /// Inclusive bounds on the integer stretch draw.
    pub stretch_range: (i32, i32),
    pub noise_sd: f64,
    pub seed: u64,
    pub pad_fraction: f64,
    /// Width in samples of both base profiles; `None` means `round(N/4)`.
    #[serde(default)]
    pub profile_support: Option<usize>,
    /// Decay constant of the sharp-hump profile; `None` means `N/40`.
    #[serde(default)]
    pub laplace_beta: Option<f64>,
}

impl SyntheticConfig {
    /// Two components, 100 channels each, shifts and stretches spanning
    /// a quarter of the signal length. The soft peak spans a quarter of
    /// the signal; the sharp hump decays within a few samples.
    pub fn dispersion_preset(seed: u64) -> SyntheticConfig {
        let n = 100usize;
        let q = (n / 4) as i32;
        SyntheticConfig {
            n,
            channels_per_component: 100,
            shift_range: (-q, q),
            stretch_range: (-q, q),
            noise_sd: 0.0,
            seed,
            pad_fraction: 0.2,
            profile_support: None,
            laplace_beta: Some(n as f64 / 100.0),
        }
    }
}

/// Everything needed to score a fit against the generating parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub schema_version: u32,
    pub a_true: Vec<Vec<f64>>,
    pub s_true: Vec<Vec<f64>>,
    pub tau_true: Vec<Vec<f64>>,
    pub b_true: Vec<Vec<i32>>,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub config: SyntheticConfig,
}

pub fn save_ground_truth(path: &Path, truth: &SyntheticGroundTruth) -> Result<()> {
    let json = serde_json::to_string_pretty(truth)
        .map_err(|e| Error::InvalidInput(format!("ground truth serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<SyntheticGroundTruth> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("ground truth sidecar: {e}"),
    })
}

/// Half-cosine arch of `support` samples starting at `start`, unit norm.
fn half_cosine_profile(n_pad: usize, start: usize, support: usize) -> Vec<f64> {
    let mut s = vec![0.0; n_pad];
    for t in 0..support {
        s[start + t] = (std::f64::consts::PI * t as f64 / support as f64).sin();
    }
    normalize(&mut s);
    s
}

/// Two-sided exponential peak truncated to `support` samples, unit norm.
fn laplace_profile(n_pad: usize, start: usize, support: usize, beta: f64) -> Vec<f64> {
    let mut s = vec![0.0; n_pad];
    let center = support as f64 / 2.0;
    for t in 0..support {
        s[start + t] = (-(t as f64 - center).abs() / beta).exp();
    }
    normalize(&mut s);
    s
}

fn normalize(s: &mut [f64]) {
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in s {
        *v /= norm;
    }
}

/// Generate the two-component dataset: each channel is one base profile,
/// stretched and circularly shifted by per-channel integer draws, with
/// optional nonnegative-clipped white noise.
pub fn generate_synthetic(
    config: &SyntheticConfig,
) -> Result<(TimeSeriesMatrix, SyntheticGroundTruth)> {
    let n = config.n;
    if n < 16 {
        return Err(Error::InvalidConfig(format!(
            "signal length {n} too short for the support layout"
        )));
    }
    if config.channels_per_component == 0 {
        return Err(Error::InvalidConfig("zero channels per component".into()));
    }
    if config.shift_range.0 > config.shift_range.1
        || config.stretch_range.0 > config.stretch_range.1
    {
        return Err(Error::InvalidConfig("empty shift or stretch range".into()));
    }
    if config.noise_sd < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "negative noise level {}",
            config.noise_sd
        )));
    }
    let n_pad = n + (config.pad_fraction * n as f64).round() as usize;
    let m = n_fft_len(n_pad);
    let (lib_lo, lib_hi) = full_b_range(m);
    if config.stretch_range.0 < lib_lo || config.stretch_range.1 > lib_hi {
        return Err(Error::InvalidConfig(format!(
            "stretch range {:?} outside representable [{lib_lo}, {lib_hi}]",
            config.stretch_range
        )));
    }
    let tau_max = config
        .shift_range
        .0
        .unsigned_abs()
        .max(config.shift_range.1.unsigned_abs()) as usize;
    let r_max = b_to_r(config.stretch_range.1.max(0), m);
    let support = config
        .profile_support
        .unwrap_or_else(|| (n as f64 / 4.0).round() as usize);
    if support < 2 || support >= n {
        return Err(Error::InvalidConfig(format!(
            "profile support {support} must lie in [2, {n})"
        )));
    }

    // Supports sit where integer shifts stay inside the padded domain and
    // the widest stretch alone does not run off the end. The combined
    // worst case (max stretch plus max shift) may still graze the
    // boundary through the profile's smooth tails.
    let u_lo = tau_max;
    let u_hi_shift = n_pad
        .checked_sub(support + tau_max)
        .ok_or_else(|| Error::InvalidConfig("shift range exceeds margins".into()))?;
    let u_hi_stretch = (n_pad as f64 / r_max - support as f64).floor();
    if u_hi_stretch < 0.0 {
        return Err(Error::InvalidConfig("stretch range exceeds margins".into()));
    }
    let u_hi = u_hi_shift.min(u_hi_stretch as usize);
    if u_lo > u_hi {
        return Err(Error::InvalidConfig(format!(
            "no support placement fits: need start in [{u_lo}, {u_hi}]"
        )));
    }

    let beta = config.laplace_beta.unwrap_or(n as f64 / 40.0);
    if beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "laplace decay {beta} must be positive"
        )));
    }
    let profiles = [
        half_cosine_profile(n_pad, u_lo, support),
        laplace_profile(n_pad, u_hi, support, beta),
    ];
    let k_count = profiles.len();
    let p = k_count * config.channels_per_component;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = Array2::zeros((p, n_pad));
    let mut tau_true = vec![vec![0.0; k_count]; p];
    let mut b_true = vec![vec![0i32; k_count]; p];
    let mut a_true = vec![vec![0.0; k_count]; p];
    let mut assignments = vec![0usize; p];
    for j in 0..p {
        let k = j / config.channels_per_component;
        let tau = rng.gen_range(config.shift_range.0..=config.shift_range.1);
        let b = rng.gen_range(config.stretch_range.0..=config.stretch_range.1);
        assignments[j] = k;
        a_true[j][k] = 1.0;
        tau_true[j][k] = tau as f64;
        b_true[j][k] = b;
        let spec = apply_phase_shift(&stretch_profile(&profiles[k], b)?, tau as f64);
        let mut x = inverse_rdft(&spec)?;
        if config.noise_sd > 0.0 {
            for v in &mut x {
                *v = (*v + standard_normal(&mut rng) * config.noise_sd).max(0.0);
            }
        }
        for (t, v) in x.into_iter().enumerate() {
            values[(j, t)] = v;
        }
    }

    let truth = SyntheticGroundTruth {
        schema_version: 1,
        a_true,
        s_true: profiles.iter().map(|s| s.clone()).collect(),
        tau_true,
        b_true,
        assignments,
        seed: config.seed,
        config: config.clone(),
    };
    let data = TimeSeriesMatrix {
        values,
        n_original: n,
        pad_fraction: config.pad_fraction,
        channel_ids: (0..p).collect(),
        unit_normalized: false,
    };
    Ok((data, truth))
}

// Box-Muller draw; the one normal variate needed here does not justify a
// distributions dependency.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
