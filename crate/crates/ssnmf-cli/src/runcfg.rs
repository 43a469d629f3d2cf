//! On-disk run configuration. A run config is a TOML file whose keys mirror
//! the command-line flags; flags given on the command line win over the
//! file, and anything left unset falls back to the documented default.
//! Unknown keys are rejected so typos fail loudly.
//!
//! Every command writes the fully resolved configuration back into its run
//! directory as `run_config.toml`, so a run can be repeated from its output
//! alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssnmf::model::Variant;
use ssnmf::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base random seed; default 0.
    pub seed: Option<u64>,
    /// Worker thread cap; default: all cores.
    pub threads: Option<usize>,
    /// Run directory; default `ssnmf-out`.
    pub output: Option<PathBuf>,
    pub generate: Option<GenerateSection>,
    pub fit: Option<FitSection>,
    pub evaluate: Option<EvaluateSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Named parameter set; only `paper-synthetic` is defined.
    pub preset: Option<String>,
    /// Channels generated per component; default 100.
    pub channels: Option<usize>,
    /// Unpadded signal length; default 100.
    pub length: Option<usize>,
    /// Inclusive integer shift bounds; default spans a quarter length.
    pub shift_range: Option<(i32, i32)>,
    /// Inclusive integer stretch bounds; default spans a quarter length.
    pub stretch_range: Option<(i32, i32)>,
    /// Additive noise level before clipping at zero; default 0.
    pub noise_sd: Option<f64>,
    /// Zero-pad fraction appended to each channel; default 0.2.
    pub pad_fraction: Option<f64>,
    /// Width in samples of both base profiles; default `round(N/4)`.
    pub profile_support: Option<usize>,
    /// Decay constant of the sharp-hump profile; default `N/40`.
    pub laplace_beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Dataset path (`.csv`/`.txt` or the rawbin layout).
    pub data: Option<PathBuf>,
    /// Model family; default shift-stretch.
    pub variant: Option<Variant>,
    /// Number of components; default 2.
    pub k: Option<usize>,
    /// ADAM step size; default 0.1.
    pub learning_rate: Option<f64>,
    /// Iteration cap; default 10000.
    pub max_iterations: Option<usize>,
    /// Trailing window the stopping rule inspects; default 50.
    pub stop_window: Option<usize>,
    /// Relative tolerance of the stopping rule; default 1e-10.
    pub stop_rel_tol: Option<f64>,
    /// Stretch library bounds; default: the widest representable range.
    pub b_range: Option<(i32, i32)>,
    /// Local stretch search half-width after the first sweep; default
    /// `N_FFT / 16`.
    pub b_search_delta: Option<i32>,
    /// Threshold, unit-normalize, and zero-pad raw count channels before
    /// fitting; default off (stored datasets are already padded).
    pub preprocess: Option<bool>,
    /// Minimum summed counts a channel needs to survive preprocessing.
    pub threshold: Option<f64>,
    /// Zero-pad fraction applied by preprocessing; default 0.2.
    pub pad_fraction: Option<f64>,
    /// Channel ids dropped by preprocessing.
    pub exclude: Option<Vec<usize>>,
    /// Unpadded length of a file that already carries trailing zeros.
    pub unpadded_length: Option<usize>,
    /// Also write SVG line plots; default off.
    pub svg: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Fit run directory holding `model.json` and the parameter CSVs.
    pub model: Option<PathBuf>,
    /// Dataset path the model is scored against.
    pub data: Option<PathBuf>,
    /// Ground-truth sidecar for matched correlation.
    pub ground_truth: Option<PathBuf>,
    /// Score the channel map against the ground truth; default off.
    pub matched_correlation: Option<bool>,
    /// Channels to reconstruct; default: all.
    pub channels: Option<Vec<usize>>,
    /// Unpadded length of a file that already carries trailing zeros.
    pub unpadded_length: Option<usize>,
    /// Also write SVG line plots; default off.
    pub svg: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Dataset path the sweep fits against.
    pub data: Option<PathBuf>,
    /// Model orders, `lo..hi` (inclusive) or a comma list; default `1..3`.
    pub model_orders: Option<String>,
    /// Variants to include; default: all four.
    pub variants: Option<Vec<Variant>>,
    /// Repeats per (variant, K) cell; default 1.
    pub repeats: Option<usize>,
    /// ADAM step size; default 0.1.
    pub learning_rate: Option<f64>,
    /// Iteration cap per fit; default 10000.
    pub max_iterations: Option<usize>,
    /// Trailing window the stopping rule inspects; default 50.
    pub stop_window: Option<usize>,
    /// Relative tolerance of the stopping rule; default 1e-10.
    pub stop_rel_tol: Option<f64>,
    /// Stretch library bounds; default: the widest representable range.
    pub b_range: Option<(i32, i32)>,
    /// Local stretch search half-width after the first sweep.
    pub b_search_delta: Option<i32>,
    /// Preprocess raw count channels before fitting; default off.
    pub preprocess: Option<bool>,
    /// Minimum summed counts a channel needs to survive preprocessing.
    pub threshold: Option<f64>,
    /// Zero-pad fraction applied by preprocessing; default 0.2.
    pub pad_fraction: Option<f64>,
    /// Channel ids dropped by preprocessing.
    pub exclude: Option<Vec<usize>>,
    /// Unpadded length of a file that already carries trailing zeros.
    pub unpadded_length: Option<usize>,
}

impl RunConfig {
    /// Read and parse a TOML run config; `None` yields the empty config.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {}", path.display(), e.message()))
        })
    }

    /// Serialize the resolved configuration for the run snapshot.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("config snapshot: {e}")))
    }
}
