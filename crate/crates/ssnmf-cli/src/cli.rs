//! Command-line surface: one parser struct per subcommand plus the shared
//! global flags. Values left unset here fall back to the run config file
//! and then to the documented defaults; resolution lives in `commands`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ssnmf::model::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "ssnmf",
    version,
    about = "Shift- and stretch-invariant NMF for time-activity curves"
)]
pub struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Base random seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker thread cap; SSNMF_THREADS is the fallback, default all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run directory all outputs are written into (default ssnmf-out).
    #[arg(short, long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-component dataset plus its ground-truth sidecar.
    Generate(GenerateArgs),
    /// Fit one model variant; writes parameters, report, and loss trace.
    Fit(FitArgs),
    /// Score a fitted model against a dataset and optional ground truth.
    Evaluate(EvaluateArgs),
    /// Fit a grid of (variant, K, repeat) cells and tabulate the results.
    Sweep(SweepArgs),
}

fn parse_i32_pair(s: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got {s:?}"))?;
    let lo = lo.trim().parse::<i32>().map_err(|e| format!("bad bound {lo:?}: {e}"))?;
    let hi = hi.trim().parse::<i32>().map_err(|e| format!("bad bound {hi:?}: {e}"))?;
    Ok((lo, hi))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Named parameter set; `paper-synthetic` is the built-in two-component
    /// dispersion benchmark. Explicit flags override individual fields.
    #[arg(long)]
    pub preset: Option<String>,

    /// Channels generated per component.
    #[arg(long)]
    pub channels: Option<usize>,

    /// Unpadded signal length.
    #[arg(long)]
    pub length: Option<usize>,

    /// Inclusive integer shift bounds as `lo,hi`.
    #[arg(long, value_parser = parse_i32_pair, allow_hyphen_values = true)]
    pub shift_range: Option<(i32, i32)>,

    /// Inclusive integer stretch bounds as `lo,hi`.
    #[arg(long, value_parser = parse_i32_pair, allow_hyphen_values = true)]
    pub stretch_range: Option<(i32, i32)>,

    /// Additive white noise level; negative draws are clipped at zero.
    #[arg(long)]
    pub noise_sd: Option<f64>,

    /// Zero-pad fraction appended to each channel.
    #[arg(long)]
    pub pad_fraction: Option<f64>,

    /// Width in samples of both base profiles.
    #[arg(long)]
    pub profile_support: Option<usize>,

    /// Decay constant of the sharp-hump profile.
    #[arg(long)]
    pub laplace_beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset path (`.csv`/`.txt` parse as text, anything else as rawbin).
    #[arg(value_name = "DATA")]
    pub data: Option<PathBuf>,

    /// Model family: plain | integer-shift | nonint-shift | shift-stretch.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,

    /// Number of components.
    #[arg(short = 'K', long = "components")]
    pub k: Option<usize>,

    /// ADAM step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Iteration cap.
    #[arg(long)]
    pub max_iterations: Option<usize>,

    /// Trailing window length the stopping rule inspects.
    #[arg(long)]
    pub stop_window: Option<usize>,

    /// Relative tolerance of the stopping rule.
    #[arg(long)]
    pub stop_rel_tol: Option<f64>,

    /// Stretch library bounds as `lo,hi` (shift-stretch only).
    #[arg(long, value_parser = parse_i32_pair, allow_hyphen_values = true)]
    pub b_range: Option<(i32, i32)>,

    /// Local stretch search half-width after the first full sweep.
    #[arg(long, allow_hyphen_values = true)]
    pub b_search_delta: Option<i32>,

    #[command(flatten)]
    pub prep: PrepArgs,

    /// Also write SVG line plots of the loss trace and profiles.
    #[arg(long)]
    pub svg: bool,
}

/// Preprocessing switches shared by `fit` and `sweep`.
#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Threshold, unit-normalize, and zero-pad raw count channels.
    #[arg(long)]
    pub preprocess: bool,

    /// Minimum summed counts a channel needs to survive preprocessing.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Zero-pad fraction applied by preprocessing.
    #[arg(long)]
    pub pad_fraction: Option<f64>,

    /// Channel ids dropped by preprocessing, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<usize>>,

    /// Unpadded length of a file that already carries trailing zeros.
    #[arg(long)]
    pub unpadded_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset path the model is scored against.
    #[arg(value_name = "DATA")]
    pub data: Option<PathBuf>,

    /// Fit run directory holding model.json and the parameter CSVs.
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,

    /// Ground-truth sidecar written by `generate`.
    #[arg(long, value_name = "PATH")]
    pub ground_truth: Option<PathBuf>,

    /// Score the estimated channel map against the ground truth.
    #[arg(long)]
    pub matched_correlation: bool,

    /// Channels to reconstruct, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,

    /// Unpadded length of a file that already carries trailing zeros.
    #[arg(long)]
    pub unpadded_length: Option<usize>,

    /// Also write SVG line plots of the profiles and one reconstruction.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset path the sweep fits against.
    #[arg(value_name = "DATA")]
    pub data: Option<PathBuf>,

    /// Model orders: `lo..hi` (inclusive) or a comma list such as `1,2,4`.
    #[arg(short = 'K', long = "model-orders", value_name = "SPEC")]
    pub model_orders: Option<String>,

    /// Variants to include, comma separated (default: all four).
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Option<Vec<Variant>>,

    /// Repeats per (variant, K) cell.
    #[arg(long)]
    pub repeats: Option<usize>,

    /// ADAM step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Iteration cap per fit.
    #[arg(long)]
    pub max_iterations: Option<usize>,

    /// Trailing window length the stopping rule inspects.
    #[arg(long)]
    pub stop_window: Option<usize>,

    /// Relative tolerance of the stopping rule.
    #[arg(long)]
    pub stop_rel_tol: Option<f64>,

    /// Stretch library bounds as `lo,hi` (shift-stretch only).
    #[arg(long, value_parser = parse_i32_pair, allow_hyphen_values = true)]
    pub b_range: Option<(i32, i32)>,

    /// Local stretch search half-width after the first full sweep.
    #[arg(long, allow_hyphen_values = true)]
    pub b_search_delta: Option<i32>,

    #[command(flatten)]
    pub prep: PrepArgs,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parser_accepts_negative_bounds() {
        assert_eq!(parse_i32_pair("-25,25").unwrap(), (-25, 25));
        assert_eq!(parse_i32_pair(" -3 , 7 ").unwrap(), (-3, 7));
        assert!(parse_i32_pair("5").is_err());
        assert!(parse_i32_pair("a,b").is_err());
    }

    #[test]
    fn command_line_round_trips() {
        let cli = Cli::try_parse_from([
            "ssnmf",
            "fit",
            "data.bin",
            "--variant",
            "integer-shift",
            "-K",
            "3",
            "--b-range=-4,4",
            "--seed",
            "9",
            "-o",
            "runs/x",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(9));
        match cli.command {
            Command::Fit(args) => {
                assert_eq!(args.variant, Some(Variant::IntegerShift));
                assert_eq!(args.k, Some(3));
                assert_eq!(args.b_range, Some((-4, 4)));
            }
            _ => panic!("expected fit"),
        }
    }
}
