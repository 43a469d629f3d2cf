//! End-to-end checks of the `ssnmf` binary: the determinism guarantee
//! (criterion 8 of the acceptance gate; criteria 1-7 and 9 live in the
//! library's acceptance suite) plus the documented failure modes and file
//! layouts of every subcommand.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssnmf"))
}

fn emit(line: &str) {
    let stderr = std::io::stderr();
    let mut lock = stderr.lock();
    writeln!(lock, "{line}").unwrap();
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        stderr_of(out)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// A small noiseless dataset every test can fit in well under a second.
fn generate_small(dir: &Path, seed: u64) -> PathBuf {
    let out = bin()
        .args([
            "generate",
            "--seed",
            &seed.to_string(),
            "--length",
            "32",
            "--channels",
            "6",
            "--shift-range=-4,4",
            "--stretch-range=-3,3",
            "-o",
        ])
        .arg(dir)
        .output()
        .unwrap();
    assert_ok(&out, "generate");
    dir.join("data.bin")
}

#[test]
fn acceptance_criterion_8_fit_determinism() {
    let started = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 3);

    let fit_into = |dir: &Path, extra_env: Option<(&str, &str)>| {
        let mut cmd = bin();
        cmd.arg("fit")
            .arg(&data)
            .args([
                "--variant",
                "shift-stretch",
                "-K",
                "2",
                "--max-iterations",
                "120",
                "--seed",
                "11",
                "-o",
            ])
            .arg(dir);
        if let Some((k, v)) = extra_env {
            cmd.env(k, v);
        }
        let out = cmd.output().unwrap();
        assert_ok(&out, "fit");
    };

    let first = tmp.path().join("fit-a");
    let second = tmp.path().join("fit-b");
    let threaded = tmp.path().join("fit-c");
    fit_into(&first, None);
    fit_into(&second, None);
    fit_into(&threaded, Some(("SSNMF_THREADS", "2")));

    let mut identical = true;
    for name in ["a.csv", "s.csv", "tau.csv", "r.csv"] {
        let reference = read(&first.join(name));
        if read(&second.join(name)) != reference {
            identical = false;
            emit(&format!("criterion 8: {name} differs between identical runs"));
        }
        if read(&threaded.join(name)) != reference {
            identical = false;
            emit(&format!("criterion 8: {name} differs under SSNMF_THREADS=2"));
        }
    }
    // The loss trace is numerical output too; only timings may differ.
    if read(&first.join("loss_trace.csv")) != read(&second.join("loss_trace.csv")) {
        identical = false;
        emit("criterion 8: loss_trace.csv differs between identical runs");
    }

    emit(&format!(
        "criterion 8 (fit determinism): {} [{:.2}s] parameter files byte-identical across reruns and thread counts",
        if identical { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    ));
    assert!(identical);
}

#[test]
fn generate_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("g1");
    let second = tmp.path().join("g2");
    generate_small(&first, 9);
    generate_small(&second, 9);
    assert_eq!(read(&first.join("data.bin")), read(&second.join("data.bin")));
    assert_eq!(
        read(&first.join("ground_truth.json")),
        read(&second.join("ground_truth.json"))
    );

    let out = bin()
        .args(["generate", "--channels", "0", "-o"])
        .arg(tmp.path().join("g3"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("invalid configuration"));
}

#[test]
fn generate_prints_the_dataset_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--preset", "paper-synthetic", "--seed", "7", "-o"])
        .arg(tmp.path().join("gen"))
        .output()
        .unwrap();
    assert_ok(&out, "generate --preset paper-synthetic");
    let text = stdout_of(&out);
    assert!(text.contains("200 channels"), "summary missing P: {text}");
    assert!(text.contains("120 samples"), "summary missing N: {text}");
    assert!(text.contains("seed 7"), "summary missing seed: {text}");
}

#[test]
fn fit_rejects_zero_components() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 1);
    let out = bin()
        .arg("fit")
        .arg(&data)
        .args(["-K", "0", "-o"])
        .arg(tmp.path().join("fit"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("model order K"));
}

#[test]
fn nonint_shift_prefits_the_integer_variant_automatically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 2);
    let dir = tmp.path().join("fit");
    let out = bin()
        .arg("fit")
        .arg(&data)
        .args([
            "--variant",
            "nonint-shift",
            "-K",
            "2",
            "--max-iterations",
            "100",
            "--seed",
            "2",
            "-o",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_ok(&out, "fit --variant nonint-shift");

    let report: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("fit_report.json"))).unwrap();
    assert!(report["stop_reason"].is_string());
    assert!(report["final_loss"].as_f64().unwrap().is_finite());

    // The integer prefit hands over nonzero shifts; a cold start could not
    // land integer-valued tau in the report's converged state by accident.
    let tau_text = String::from_utf8(read(&dir.join("tau.csv"))).unwrap();
    let any_shift = tau_text
        .split([',', '\n'])
        .filter(|f| !f.is_empty())
        .any(|f| f.parse::<f64>().unwrap().abs() > 0.5);
    assert!(any_shift, "expected some channel to carry a real shift");
}

#[test]
fn diverged_fit_still_writes_its_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 4);
    let dir = tmp.path().join("fit");
    let out = bin()
        .arg("fit")
        .arg(&data)
        .args([
            "--variant",
            "plain",
            "-K",
            "2",
            "--learning-rate",
            "inf",
            "--max-iterations",
            "50",
            "-o",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("fit_report.json"))).unwrap();
    assert_eq!(report["status"], "error");
    assert!(report["error"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn evaluate_scores_an_exact_fit_near_one() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    let data = generate_small(&gen, 3);
    let fit_dir = tmp.path().join("fit");
    let out = bin()
        .arg("fit")
        .arg(&data)
        .args([
            "--variant",
            "shift-stretch",
            "-K",
            "2",
            "--max-iterations",
            "300",
            "--seed",
            "3",
            "-o",
        ])
        .arg(&fit_dir)
        .output()
        .unwrap();
    assert_ok(&out, "fit");

    let eval_dir = tmp.path().join("eval");
    let out = bin()
        .arg("evaluate")
        .arg(&data)
        .arg("--model")
        .arg(&fit_dir)
        .arg("--ground-truth")
        .arg(gen.join("ground_truth.json"))
        .args(["--matched-correlation", "--channels", "3,7", "-o"])
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert_ok(&out, "evaluate");

    let report: serde_json::Value =
        serde_json::from_slice(&read(&eval_dir.join("evaluation_report.json"))).unwrap();
    let ve = report["variance_explained"].as_f64().unwrap();
    assert!(ve > 0.99, "variance explained {ve} on noiseless data");
    let mc = report["matched_correlation"].as_f64().unwrap();
    assert!(mc > 0.9, "matched correlation {mc} on noiseless data");

    let recon = String::from_utf8(read(&eval_dir.join("reconstruction.csv"))).unwrap();
    assert_eq!(recon.lines().count(), 2, "one curve per requested channel");
    assert!(eval_dir.join("profiles.csv").exists());
}

#[test]
fn evaluate_without_ground_truth_cannot_match() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 5);
    let fit_dir = tmp.path().join("fit");
    let out = bin()
        .arg("fit")
        .arg(&data)
        .args(["--variant", "plain", "-K", "1", "--max-iterations", "40", "-o"])
        .arg(&fit_dir)
        .output()
        .unwrap();
    assert_ok(&out, "fit");

    let out = bin()
        .arg("evaluate")
        .arg(&data)
        .arg("--model")
        .arg(&fit_dir)
        .args(["--matched-correlation", "-o"])
        .arg(tmp.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("ground-truth"));
}

#[test]
fn sweep_covers_the_grid_and_resumes_from_its_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_small(&tmp.path().join("gen"), 6);

    // Full grid: 2 variants x 3 orders x 2 repeats = 12 rows.
    let grid_dir = tmp.path().join("grid");
    let out = bin()
        .arg("sweep")
        .arg(&data)
        .args([
            "--variants",
            "plain,integer-shift",
            "-K",
            "1..3",
            "--repeats",
            "2",
            "--max-iterations",
            "30",
            "-o",
        ])
        .arg(&grid_dir)
        .output()
        .unwrap();
    assert_ok(&out, "sweep");
    let table = String::from_utf8(read(&grid_dir.join("sweep.csv"))).unwrap();
    assert_eq!(table.lines().count(), 13, "header plus 12 cells:\n{table}");
    assert!(table.lines().skip(1).all(|l| l.ends_with(",ok")));

    // A ledger row planted before the run survives into the final table
    // untouched, proving completed cells are skipped rather than refit.
    let resume_dir = tmp.path().join("resume");
    std::fs::create_dir_all(&resume_dir).unwrap();
    let sentinel = "{\"variant\":\"plain\",\"k\":1,\"repeat\":0,\
                    \"variance_explained\":0.5,\"final_loss\":1.0,\"iterations\":1,\
                    \"seconds\":99999.0,\"seed\":42,\"status\":\"ok\"}";
    std::fs::write(
        resume_dir.join("sweep_ledger.jsonl"),
        format!("{sentinel}\n"),
    )
    .unwrap();
    let out = bin()
        .arg("sweep")
        .arg(&data)
        .args([
            "--variants",
            "plain",
            "-K",
            "1..1",
            "--repeats",
            "2",
            "--max-iterations",
            "30",
            "-o",
        ])
        .arg(&resume_dir)
        .output()
        .unwrap();
    assert_ok(&out, "sweep resume");
    assert!(
        stdout_of(&out).contains("resumed 1 completed cells"),
        "{}",
        stdout_of(&out)
    );
    let table = String::from_utf8(read(&resume_dir.join("sweep.csv"))).unwrap();
    assert_eq!(table.lines().count(), 3, "header plus 2 cells:\n{table}");
    assert!(table.contains("99999"), "sentinel row recomputed:\n{table}");
}

#[test]
fn config_file_drives_a_run_and_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();

    let flag_dir = tmp.path().join("flags");
    generate_small(&flag_dir, 9);

    let cfg_dir = tmp.path().join("from-config");
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "seed = 9\noutput = {:?}\n\n[generate]\nlength = 32\nchannels = 6\n\
             shift_range = [-4, 4]\nstretch_range = [-3, 3]\n",
            cfg_dir.display().to_string()
        ),
    )
    .unwrap();
    let out = bin().args(["generate", "--config"]).arg(&cfg_path).output().unwrap();
    assert_ok(&out, "generate --config");
    assert_eq!(
        read(&flag_dir.join("data.bin")),
        read(&cfg_dir.join("data.bin")),
        "config-driven run should match the flag-driven run bit for bit"
    );

    std::fs::write(&cfg_path, "[generate]\nchanels = 6\n").unwrap();
    let out = bin().args(["generate", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("unknown field"));
}

#[test]
fn bad_thread_settings_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--length", "32", "--channels", "2", "-o"])
        .arg(tmp.path().join("gen"))
        .env("SSNMF_THREADS", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));

    let out = bin()
        .args(["generate", "--threads", "0", "--length", "32", "--channels", "2", "-o"])
        .arg(tmp.path().join("gen2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}
