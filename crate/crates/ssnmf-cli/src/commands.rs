//! Subcommand implementations. Each command resolves its options in one
//! pass (flag, then config file, then default), creates the run directory,
//! writes the resolved configuration back as `run_config.toml`, and only
//! then starts computing, so every run directory is self-describing.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ssnmf::data::{self, DataFormat, SyntheticConfig, TimeSeriesMatrix};
use ssnmf::eval::{self, EvaluationReport, SweepRow};
use ssnmf::init;
use ssnmf::model::{fit_chain, FactorModel, FitConfig, InitState, StopReason, Variant};
use ssnmf::spectral::n_fft_len;
use ssnmf::stretch::{b_to_r, build_library};
use ssnmf::{Error, Result};

use crate::cli::{EvaluateArgs, FitArgs, GenerateArgs, PrepArgs, SweepArgs};
use crate::plot;
use crate::runcfg::{
    EvaluateSection, FitSection, GenerateSection, RunConfig, SweepSection,
};

const SCHEMA_VERSION: u32 = 1;

/// Options shared by every subcommand, already resolved against the config
/// file and the environment.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub threads: Option<usize>,
    pub outdir: PathBuf,
}

impl Globals {
    fn snapshot_base(&self) -> RunConfig {
        RunConfig {
            seed: Some(self.seed),
            threads: self.threads,
            output: Some(self.outdir.clone()),
            ..RunConfig::default()
        }
    }
}

fn write_snapshot(dir: &Path, snapshot: &RunConfig) -> Result<()> {
    std::fs::write(dir.join("run_config.toml"), snapshot.to_toml()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn stop_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Converged => "converged",
        StopReason::LossIncreasing => "loss increasing",
        StopReason::MaxIterations => "iteration cap reached",
    }
}

// ---------------------------------------------------------------------------
// generate

pub fn generate(globals: &Globals, args: &GenerateArgs, section: GenerateSection) -> Result<()> {
    let preset = args.preset.clone().or(section.preset);
    let mut sc = match preset.as_deref() {
        None => {
            let n = args.length.or(section.length).unwrap_or(100);
            let q = (n / 4) as i32;
            SyntheticConfig {
                n,
                channels_per_component: 100,
                shift_range: (-q, q),
                stretch_range: (-q, q),
                noise_sd: 0.0,
                seed: globals.seed,
                pad_fraction: 0.2,
                profile_support: None,
                laplace_beta: None,
            }
        }
        Some("paper-synthetic") => SyntheticConfig::dispersion_preset(globals.seed),
        Some(other) => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; available: paper-synthetic"
            )))
        }
    };
    if let Some(v) = args.channels.or(section.channels) {
        sc.channels_per_component = v;
    }
    if let Some(v) = args.length.or(section.length) {
        sc.n = v;
    }
    if let Some(v) = args.shift_range.or(section.shift_range) {
        sc.shift_range = v;
    }
    if let Some(v) = args.stretch_range.or(section.stretch_range) {
        sc.stretch_range = v;
    }
    if let Some(v) = args.noise_sd.or(section.noise_sd) {
        sc.noise_sd = v;
    }
    if let Some(v) = args.pad_fraction.or(section.pad_fraction) {
        sc.pad_fraction = v;
    }
    if let Some(v) = args.profile_support.or(section.profile_support) {
        sc.profile_support = Some(v);
    }
    if let Some(v) = args.laplace_beta.or(section.laplace_beta) {
        sc.laplace_beta = Some(v);
    }
    sc.seed = globals.seed;

    let (matrix, truth) = data::generate_synthetic(&sc)?;

    std::fs::create_dir_all(&globals.outdir)?;
    let mut snapshot = globals.snapshot_base();
    snapshot.generate = Some(GenerateSection {
        preset,
        channels: Some(sc.channels_per_component),
        length: Some(sc.n),
        shift_range: Some(sc.shift_range),
        stretch_range: Some(sc.stretch_range),
        noise_sd: Some(sc.noise_sd),
        pad_fraction: Some(sc.pad_fraction),
        profile_support: sc.profile_support,
        laplace_beta: sc.laplace_beta,
    });
    write_snapshot(&globals.outdir, &snapshot)?;

    let data_path = globals.outdir.join("data.bin");
    data::save_rawbin(&data_path, &matrix.values)?;
    let truth_path = globals.outdir.join("ground_truth.json");
    data::save_ground_truth(&truth_path, &truth)?;

    println!(
        "wrote {} channels x {} samples ({} + {} pad, seed {})",
        matrix.n_channels(),
        matrix.n_pad(),
        matrix.n_original,
        matrix.n_pad() - matrix.n_original,
        sc.seed
    );
    println!("dataset: {}", data_path.display());
    println!("ground truth: {}", truth_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// shared data loading

#[derive(Debug, Clone)]
struct PrepResolved {
    preprocess: bool,
    threshold: f64,
    pad_fraction: f64,
    exclude: Vec<usize>,
    unpadded_length: Option<usize>,
}

fn resolve_prep(
    args: &PrepArgs,
    cfg_preprocess: Option<bool>,
    cfg_threshold: Option<f64>,
    cfg_pad_fraction: Option<f64>,
    cfg_exclude: Option<Vec<usize>>,
    cfg_unpadded: Option<usize>,
) -> Result<PrepResolved> {
    let preprocess = args.preprocess || cfg_preprocess.unwrap_or(false);
    let threshold = args.threshold.or(cfg_threshold);
    let pad_fraction = args.pad_fraction.or(cfg_pad_fraction);
    let exclude = args.exclude.clone().or(cfg_exclude);
    let unpadded_length = args.unpadded_length.or(cfg_unpadded);
    if !preprocess && (threshold.is_some() || pad_fraction.is_some() || exclude.is_some()) {
        return Err(Error::InvalidConfig(
            "threshold, pad_fraction, and exclude take effect only with preprocess enabled".into(),
        ));
    }
    if preprocess && unpadded_length.is_some() {
        return Err(Error::InvalidConfig(
            "preprocess pads the data itself; unpadded_length describes files that \
             already carry their padding"
                .into(),
        ));
    }
    Ok(PrepResolved {
        preprocess,
        threshold: threshold.unwrap_or(0.0),
        pad_fraction: pad_fraction.unwrap_or(0.2),
        exclude: exclude.unwrap_or_default(),
        unpadded_length,
    })
}

fn declare_unpadded(data: &mut TimeSeriesMatrix, n: usize) -> Result<()> {
    let n_pad = data.n_pad();
    if n == 0 || n > n_pad {
        return Err(Error::InvalidConfig(format!(
            "unpadded length {n} outside 1..={n_pad}"
        )));
    }
    data.n_original = n;
    data.pad_fraction = (n_pad - n) as f64 / n as f64;
    Ok(())
}

fn load_dataset(path: &Path, prep: &PrepResolved) -> Result<TimeSeriesMatrix> {
    let mut data = data::load_matrix(path, DataFormat::from_path(path))?;
    if prep.preprocess {
        data = data::preprocess(&data, prep.threshold, prep.pad_fraction, true, &prep.exclude)?;
    } else if let Some(n) = prep.unpadded_length {
        declare_unpadded(&mut data, n)?;
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// fit

/// Metadata sidecar that makes the parameter CSVs reloadable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub schema_version: u32,
    pub variant: String,
    pub k: usize,
    pub n_channels: usize,
    pub n_pad: usize,
    pub n_original: usize,
    /// Stretch library bounds the fit searched over.
    pub b_range: (i32, i32),
    pub seed: u64,
    pub data: String,
}

#[derive(Debug, Serialize)]
struct FailureReport {
    schema_version: u32,
    status: &'static str,
    error: String,
}

pub fn fit(globals: &Globals, args: &FitArgs, section: FitSection) -> Result<()> {
    let data_path = args.data.clone().or(section.data).ok_or_else(|| {
        Error::InvalidConfig("no dataset path given; pass DATA or set fit.data".into())
    })?;
    let variant = args.variant.or(section.variant).unwrap_or(Variant::ShiftStretch);
    let k = args.k.or(section.k).unwrap_or(2);
    if k == 0 {
        return Err(Error::InvalidConfig("model order K must be >= 1".into()));
    }
    let mut config = FitConfig::new(variant, k);
    config.seed = globals.seed;
    if let Some(v) = args.learning_rate.or(section.learning_rate) {
        config.learning_rate = v;
    }
    if let Some(v) = args.max_iterations.or(section.max_iterations) {
        config.max_iterations = v;
    }
    if let Some(v) = args.stop_window.or(section.stop_window) {
        config.stop_window = v;
    }
    if let Some(v) = args.stop_rel_tol.or(section.stop_rel_tol) {
        config.stop_rel_tol = v;
    }
    config.b_range = args.b_range.or(section.b_range);
    config.b_search_delta = args.b_search_delta.or(section.b_search_delta);
    let prep = resolve_prep(
        &args.prep,
        section.preprocess,
        section.threshold,
        section.pad_fraction,
        section.exclude,
        section.unpadded_length,
    )?;
    let svg = args.svg || section.svg.unwrap_or(false);

    let data = load_dataset(&data_path, &prep)?;

    std::fs::create_dir_all(&globals.outdir)?;
    let mut snapshot = globals.snapshot_base();
    snapshot.fit = Some(FitSection {
        data: Some(data_path.clone()),
        variant: Some(variant),
        k: Some(k),
        learning_rate: Some(config.learning_rate),
        max_iterations: Some(config.max_iterations),
        stop_window: Some(config.stop_window),
        stop_rel_tol: Some(config.stop_rel_tol),
        b_range: config.b_range,
        b_search_delta: config.b_search_delta,
        preprocess: Some(prep.preprocess),
        threshold: prep.preprocess.then_some(prep.threshold),
        pad_fraction: prep.preprocess.then_some(prep.pad_fraction),
        exclude: prep.preprocess.then(|| prep.exclude.clone()),
        unpadded_length: prep.unpadded_length,
        svg: Some(svg),
    });
    write_snapshot(&globals.outdir, &snapshot)?;

    println!(
        "fit {variant} K={k} on {} channels x {} samples",
        data.n_channels(),
        data.n_pad()
    );

    let outcome = (|| {
        let clusters = init::kshape_init(&data, k, config.seed, 100)?;
        let a = init::least_squares_a(&data, &clusters.s_init)?;
        fit_chain(&data, &config, &InitState::new(clusters.s_init, a))
    })();
    let (model, report) = match outcome {
        Ok(pair) => pair,
        Err(e) => {
            write_json(
                &globals.outdir.join("fit_report.json"),
                &FailureReport {
                    schema_version: SCHEMA_VERSION,
                    status: "error",
                    error: e.to_string(),
                },
            )?;
            return Err(e);
        }
    };

    write_model(&globals.outdir, &model, &report, &data, &data_path, &config)?;
    if svg {
        plot::line_plot(
            &globals.outdir.join("loss_trace.svg"),
            "loss per iteration",
            &[("loss".to_string(), report.loss_trace.clone())],
        )?;
        write_profile_plot(&globals.outdir.join("profiles.svg"), &model.profiles())?;
    }

    println!(
        "stop: {} after {} iterations ({:.1} s)",
        stop_name(report.stop_reason),
        report.iterations,
        report.elapsed_seconds
    );
    println!(
        "final loss {:.6e}, variance explained {:.4}",
        report.final_loss, report.variance_explained
    );
    println!("run directory: {}", globals.outdir.display());
    Ok(())
}

fn write_model(
    dir: &Path,
    model: &FactorModel,
    report: &ssnmf::model::FitReport,
    data: &TimeSeriesMatrix,
    data_path: &Path,
    config: &FitConfig,
) -> Result<()> {
    data::save_csv(&dir.join("a.csv"), &model.a)?;
    data::save_csv(&dir.join("s.csv"), &model.profiles())?;
    data::save_csv(&dir.join("tau.csv"), &model.tau)?;
    let n_fft = model.n_fft();
    let r = model.b.mapv(|b| b_to_r(b, n_fft));
    data::save_csv(&dir.join("r.csv"), &r)?;

    write_json(&dir.join("fit_report.json"), report)?;

    let mut trace = String::from("iteration,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(dir.join("loss_trace.csv"), trace)?;

    let meta = ModelMeta {
        schema_version: SCHEMA_VERSION,
        variant: model.variant.name().into(),
        k: model.n_components(),
        n_channels: model.n_channels(),
        n_pad: model.n_pad,
        n_original: data.n_original,
        b_range: model.library_range(config.b_range),
        seed: config.seed,
        data: data_path.display().to_string(),
    };
    write_json(&dir.join("model.json"), &meta)
}

fn write_profile_plot(path: &Path, profiles: &Array2<f64>) -> Result<()> {
    let series: Vec<(String, Vec<f64>)> = profiles
        .rows()
        .into_iter()
        .enumerate()
        .map(|(k, row)| (format!("component {k}"), row.to_vec()))
        .collect();
    plot::line_plot(path, "component profiles", &series)
}

// ---------------------------------------------------------------------------
// evaluate

fn read_model(dir: &Path) -> Result<(FactorModel, ModelMeta)> {
    let meta_path = dir.join("model.json");
    let text = std::fs::read_to_string(&meta_path)?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", meta_path.display()),
    })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "model.json schema {} unsupported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }
    let variant: Variant = meta.variant.parse()?;
    let a = data::load_matrix(&dir.join("a.csv"), DataFormat::Csv)?.values;
    let s = data::load_matrix(&dir.join("s.csv"), DataFormat::Csv)?.values;
    let tau = data::load_matrix(&dir.join("tau.csv"), DataFormat::Csv)?.values;
    let r = data::load_matrix(&dir.join("r.csv"), DataFormat::Csv)?.values;
    let n_fft = n_fft_len(meta.n_pad) as f64;
    let b = r.mapv(|v| ((v - 1.0) * n_fft).round() as i32);
    let init = InitState {
        s,
        a,
        tau: Some(tau),
        b: Some(b),
    };
    let model = FactorModel::from_init(variant, &init, meta.n_pad)?;
    Ok((model, meta))
}

fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let p = rows.len();
    let k = rows.first().map(|r| r.len()).unwrap_or(0);
    if p == 0 || k == 0 {
        return Err(Error::InvalidInput("empty ground-truth channel map".into()));
    }
    let mut out = Array2::zeros((p, k));
    for (j, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidInput(format!(
                "ground-truth row {j} has {} entries, expected {k}",
                row.len()
            )));
        }
        for (c, v) in row.iter().enumerate() {
            out[(j, c)] = *v;
        }
    }
    Ok(out)
}

pub fn evaluate(globals: &Globals, args: &EvaluateArgs, section: EvaluateSection) -> Result<()> {
    let model_dir = args.model.clone().or(section.model).ok_or_else(|| {
        Error::InvalidConfig("no fit directory given; pass --model or set evaluate.model".into())
    })?;
    let data_path = args.data.clone().or(section.data).ok_or_else(|| {
        Error::InvalidConfig("no dataset path given; pass DATA or set evaluate.data".into())
    })?;
    let truth_path = args.ground_truth.clone().or(section.ground_truth);
    let want_match = args.matched_correlation || section.matched_correlation.unwrap_or(false);
    if want_match && truth_path.is_none() {
        return Err(Error::InvalidConfig(
            "matched correlation needs a ground-truth sidecar; pass --ground-truth".into(),
        ));
    }
    let channels = args.channels.clone().or(section.channels);
    let unpadded_length = args.unpadded_length.or(section.unpadded_length);
    let svg = args.svg || section.svg.unwrap_or(false);

    let (model, meta) = read_model(&model_dir)?;
    let truth = match &truth_path {
        Some(p) => Some(data::load_ground_truth(p)?),
        None => None,
    };
    let mut data = data::load_matrix(&data_path, DataFormat::from_path(&data_path))?;
    // The variance-explained window: an explicit flag wins, then the length
    // recorded by the generator, then the full stored length.
    let n_original = unpadded_length
        .or_else(|| truth.as_ref().map(|t| t.config.n))
        .unwrap_or_else(|| data.n_pad());
    declare_unpadded(&mut data, n_original)?;

    std::fs::create_dir_all(&globals.outdir)?;
    let mut snapshot = globals.snapshot_base();
    snapshot.evaluate = Some(EvaluateSection {
        model: Some(model_dir.clone()),
        data: Some(data_path.clone()),
        ground_truth: truth_path.clone(),
        matched_correlation: Some(want_match),
        channels: channels.clone(),
        unpadded_length,
        svg: Some(svg),
    });
    write_snapshot(&globals.outdir, &snapshot)?;

    let library = build_library(&model.profiles(), meta.b_range)?;
    let ve = eval::variance_explained(&model, &data, &library)?;
    let per = eval::per_channel_variance_explained(&model, &data, &library)?;
    let (matched, permutation) = match (&truth, want_match) {
        (Some(t), true) => {
            let a_true = rows_to_array(&t.a_true)?;
            let (score, perm) = eval::matched_correlation(&model.a, &a_true)?;
            (Some(score), Some(perm))
        }
        _ => (None, None),
    };
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        variance_explained: ve,
        per_channel_variance_explained: per,
        matched_correlation: matched,
        permutation,
    };
    write_json(&globals.outdir.join("evaluation_report.json"), &report)?;

    let indices: Vec<usize> =
        channels.unwrap_or_else(|| (0..data.n_channels()).collect());
    let recon = eval::reconstruct_channels(&model, &library, &indices, data.n_original)?;
    data::save_csv(&globals.outdir.join("reconstruction.csv"), &recon)?;
    data::save_csv(&globals.outdir.join("profiles.csv"), &model.profiles())?;

    // Carry the loss trace over as plot data when the fit directory has one.
    let trace_src = model_dir.join("loss_trace.csv");
    let trace_dst = globals.outdir.join("loss_trace.csv");
    if trace_src.exists()
        && std::fs::canonicalize(&trace_src).ok() != std::fs::canonicalize(&trace_dst).ok()
    {
        std::fs::copy(&trace_src, &trace_dst)?;
    }

    if svg {
        write_profile_plot(&globals.outdir.join("profiles.svg"), &model.profiles())?;
        if let Some(&j) = indices.first() {
            let observed: Vec<f64> =
                (0..data.n_original).map(|t| data.values[(j, t)]).collect();
            let fitted = recon.row(0).to_vec();
            plot::line_plot(
                &globals.outdir.join("reconstruction.svg"),
                &format!("channel {j}: observed vs fitted"),
                &[("observed".to_string(), observed), ("fitted".to_string(), fitted)],
            )?;
        }
    }

    println!(
        "variance explained {:.4} over {} channels ({} samples scored)",
        ve,
        data.n_channels(),
        data.n_original
    );
    if let Some(score) = matched {
        println!("matched correlation {score:.4}");
    }
    println!("run directory: {}", globals.outdir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

fn parse_order_spec(spec: &str) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::InvalidConfig(format!("model orders {spec:?}: {msg}"));
    let spec_trimmed = spec.trim();
    let orders: Vec<usize> = if let Some((lo, hi)) = spec_trimmed.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let hi: usize = hi.trim().parse().map_err(|e| bad(format!("{e}")))?;
        if hi < lo {
            return Err(bad(format!("range {lo}..{hi} is empty")));
        }
        (lo..=hi).collect()
    } else {
        spec_trimmed
            .split(',')
            .map(|f| f.trim().parse::<usize>().map_err(|e| bad(format!("{e}"))))
            .collect::<Result<_>>()?
    };
    if orders.is_empty() {
        return Err(bad("no orders listed".into()));
    }
    if orders.contains(&0) {
        return Err(bad("model order K must be >= 1".into()));
    }
    Ok(orders)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("variant,k,repeat,variance_explained,final_loss,iterations,seconds,seed,status\n");
    for row in rows {
        let ve = row.variance_explained.map(|v| v.to_string()).unwrap_or_default();
        let loss = row.final_loss.map(|v| v.to_string()).unwrap_or_default();
        let iters = row.iterations.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.variant,
            row.k,
            row.repeat,
            ve,
            loss,
            iters,
            row.seconds,
            row.seed,
            csv_field(&row.status)
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct SweepTable<'a> {
    schema_version: u32,
    rows: &'a [SweepRow],
}

pub fn sweep(globals: &Globals, args: &SweepArgs, section: SweepSection) -> Result<()> {
    let data_path = args.data.clone().or(section.data).ok_or_else(|| {
        Error::InvalidConfig("no dataset path given; pass DATA or set sweep.data".into())
    })?;
    let spec = args
        .model_orders
        .clone()
        .or(section.model_orders)
        .unwrap_or_else(|| "1..3".into());
    let k_list = parse_order_spec(&spec)?;
    let variants = args.variants.clone().or(section.variants).unwrap_or_else(|| {
        vec![
            Variant::PlainNmf,
            Variant::IntegerShift,
            Variant::NonIntegerShift,
            Variant::ShiftStretch,
        ]
    });
    if variants.is_empty() {
        return Err(Error::InvalidConfig("no variants listed".into()));
    }
    let repeats = args.repeats.or(section.repeats).unwrap_or(1);
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }

    let mut template = FitConfig::new(variants[0], k_list[0]);
    template.seed = globals.seed;
    if let Some(v) = args.learning_rate.or(section.learning_rate) {
        template.learning_rate = v;
    }
    if let Some(v) = args.max_iterations.or(section.max_iterations) {
        template.max_iterations = v;
    }
    if let Some(v) = args.stop_window.or(section.stop_window) {
        template.stop_window = v;
    }
    if let Some(v) = args.stop_rel_tol.or(section.stop_rel_tol) {
        template.stop_rel_tol = v;
    }
    template.b_range = args.b_range.or(section.b_range);
    template.b_search_delta = args.b_search_delta.or(section.b_search_delta);
    let prep = resolve_prep(
        &args.prep,
        section.preprocess,
        section.threshold,
        section.pad_fraction,
        section.exclude,
        section.unpadded_length,
    )?;

    let data = load_dataset(&data_path, &prep)?;

    std::fs::create_dir_all(&globals.outdir)?;
    let mut snapshot = globals.snapshot_base();
    snapshot.sweep = Some(SweepSection {
        data: Some(data_path.clone()),
        model_orders: Some(spec.clone()),
        variants: Some(variants.clone()),
        repeats: Some(repeats),
        learning_rate: Some(template.learning_rate),
        max_iterations: Some(template.max_iterations),
        stop_window: Some(template.stop_window),
        stop_rel_tol: Some(template.stop_rel_tol),
        b_range: template.b_range,
        b_search_delta: template.b_search_delta,
        preprocess: Some(prep.preprocess),
        threshold: prep.preprocess.then_some(prep.threshold),
        pad_fraction: prep.preprocess.then_some(prep.pad_fraction),
        exclude: prep.preprocess.then(|| prep.exclude.clone()),
        unpadded_length: prep.unpadded_length,
    });
    write_snapshot(&globals.outdir, &snapshot)?;

    // Completed cells survive in an append-only ledger, one JSON row per
    // line, so a killed sweep picks up where it stopped.
    let ledger_path = globals.outdir.join("sweep_ledger.jsonl");
    let mut done: BTreeMap<(usize, usize, String), SweepRow> = BTreeMap::new();
    if ledger_path.exists() {
        for (lineno, line) in std::fs::read_to_string(&ledger_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SweepRow>(line) {
                Ok(row) => {
                    done.insert((row.k, row.repeat, row.variant.clone()), row);
                }
                Err(_) => eprintln!(
                    "warning: dropping unreadable ledger line {} (interrupted write?)",
                    lineno + 1
                ),
            }
        }
    }
    let ledger = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ledger_path)?;

    let total = k_list.len() * repeats * variants.len();
    let mut pending: Vec<(usize, usize, Variant)> = Vec::new();
    let mut resumed = 0usize;
    for &k in &k_list {
        for repeat in 0..repeats {
            for &variant in &variants {
                if done.contains_key(&(k, repeat, variant.name().to_string())) {
                    resumed += 1;
                } else {
                    pending.push((k, repeat, variant));
                }
            }
        }
    }

    // Cells are independent jobs on the worker pool; the mutex-guarded
    // ledger is the single writer merging them as they finish.
    let ledger = Mutex::new(ledger);
    let finished = AtomicUsize::new(resumed);
    let computed: Vec<Result<((usize, usize, String), SweepRow)>> = pending
        .par_iter()
        .map(|&(k, repeat, variant)| {
            let row = eval::sweep_cell(&data, variant, k, repeat, &template);
            let line = serde_json::to_string(&row)
                .map_err(|e| Error::InvalidInput(format!("ledger row: {e}")))?;
            {
                let mut ledger = ledger.lock().expect("ledger writer");
                writeln!(ledger, "{line}")?;
                ledger.flush()?;
            }
            let at = finished.fetch_add(1, Ordering::SeqCst) + 1;
            let summary = if row.status == "ok" {
                format!(
                    "VE={:.4} loss={:.3e} ({:.1} s)",
                    row.variance_explained.unwrap_or(f64::NAN),
                    row.final_loss.unwrap_or(f64::NAN),
                    row.seconds
                )
            } else {
                format!("failed: {}", row.status)
            };
            println!("[{at}/{total}] {variant} K={k} repeat={repeat}: {summary}");
            Ok(((k, repeat, variant.name().to_string()), row))
        })
        .collect();
    for cell in computed {
        let (key, row) = cell?;
        done.insert(key, row);
    }
    if resumed > 0 {
        println!("resumed {resumed} completed cells from the ledger");
    }

    // Emit in canonical plan order no matter how the runs interleaved.
    let mut rows = Vec::with_capacity(total);
    for &k in &k_list {
        for repeat in 0..repeats {
            for &variant in &variants {
                let row = done
                    .get(&(k, repeat, variant.name().to_string()))
                    .expect("every planned cell was fitted or resumed");
                rows.push(row.clone());
            }
        }
    }
    std::fs::write(globals.outdir.join("sweep.csv"), sweep_csv(&rows))?;
    write_json(
        &globals.outdir.join("sweep.json"),
        &SweepTable {
            schema_version: SCHEMA_VERSION,
            rows: &rows,
        },
    )?;

    let failures = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{} cells ({} ok, {} failed): {}",
        rows.len(),
        rows.len() - failures,
        failures,
        globals.outdir.join("sweep.csv").display()
    );
    Ok(())
}
