//! End-to-end tests against the compiled binary: dataset creation,
//! training, sweep bookkeeping, exports and exit codes. Everything runs
//! at toy scale (width-8 nets, ≤40 steps) so the whole file stays fast.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_maskaae")
}

fn run_in(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.current_dir(dir).args(args).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary launches")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("no exit code");
    if got != want {
        panic!(
            "exit {got}, want {want}\nstdout:\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

/// Toy-scale overrides shared by every training test in this file.
const TINY_TOML: &str = r#"
[train]
training_steps = 30
batch_size = 8
eval_every = 10
reg_schedule_interval = 8

[net]
width = 8
depth = 1

[eval]
eval_samples = 32
nac_batch = 64
extractor = "identity"
"#;

struct Workspace {
    _keep: tempfile::TempDir,
    dir: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let keep = tempfile::tempdir().unwrap();
    let dir = keep.path().to_path_buf();
    let data = dir.join("toy.ds");
    let config = dir.join("tiny.toml");
    std::fs::write(&config, TINY_TOML).unwrap();
    let out = run_in(
        &dir,
        &[
            "make-data",
            "--out",
            data.to_str().unwrap(),
            "--n",
            "2",
            "--d",
            "6",
            "--count",
            "64",
            "--seed",
            "5",
        ],
        &[],
    );
    assert_code(&out, 0);
    Workspace { _keep: keep, dir, data, config }
}

fn train_args<'a>(ws: &'a Workspace, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "train",
        "--data",
        ws.data.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_strings(dir: &Path, args: &[String], envs: &[(&str, &str)]) -> Output {
    let borrowed: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_in(dir, &borrowed, envs)
}

#[test]
fn make_data_writes_container_and_manifest() {
    let ws = workspace();
    assert!(ws.data.is_file());
    let manifest_path = ws.dir.join("toy.ds.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["n"], 2);
    assert_eq!(manifest["count"], 64);
    println!("dataset manifest: {manifest}");
}

#[test]
fn train_produces_a_complete_run_directory() {
    let ws = workspace();
    let out = run_strings(
        &ws.dir,
        &train_args(&ws, &["--m", "3", "--seed", "9", "--run-name", "solo"]),
        &[("MAAE_RUNS_DIR", "runs_root")],
    );
    assert_code(&out, 0);
    let run = ws.dir.join("runs_root/solo");
    for f in ["manifest.json", "metrics.jsonl", "mask_trace.csv", "timing.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(run.join("checkpoints/step_30.ckpt").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["m"], 3);
    assert_eq!(manifest["train"]["training_steps"], 30);
    assert_eq!(manifest["net"]["width"], 8);
    let last = std::fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .to_string();
    let record: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(record["step"], 30);
    // trace: header + one row per logged step, m+1 columns
    let trace = std::fs::read_to_string(run.join("mask_trace.csv")).unwrap();
    assert!(trace.starts_with("step,mu_0,mu_1,mu_2\n"));
    println!("final record: {record}");
}

#[test]
fn identical_seeds_give_byte_identical_runs() {
    let ws = workspace();
    for name in ["a", "b"] {
        let out = run_strings(
            &ws.dir,
            &train_args(&ws, &["--m", "3", "--seed", "11", "--run-name", name, "--runs-dir", "r"]),
            &[],
        );
        assert_code(&out, 0);
    }
    let out = run_strings(
        &ws.dir,
        &train_args(&ws, &["--m", "3", "--seed", "12", "--run-name", "c", "--runs-dir", "r"]),
        &[],
    );
    assert_code(&out, 0);
    let read = |name: &str, f: &str| std::fs::read(ws.dir.join("r").join(name).join(f)).unwrap();
    assert_eq!(read("a", "metrics.jsonl"), read("b", "metrics.jsonl"));
    assert_eq!(read("a", "mask_trace.csv"), read("b", "mask_trace.csv"));
    assert_ne!(read("a", "metrics.jsonl"), read("c", "metrics.jsonl"));
}

#[test]
fn finished_runs_are_skipped_not_retrained() {
    let ws = workspace();
    let args = train_args(&ws, &["--m", "2", "--seed", "3", "--run-name", "once", "--runs-dir", "r"]);
    assert_code(&run_strings(&ws.dir, &args, &[]), 0);
    let metrics = ws.dir.join("r/once/metrics.jsonl");
    let before = std::fs::read(&metrics).unwrap();
    let out = run_strings(&ws.dir, &args, &[]);
    assert_code(&out, 0);
    assert!(
        String::from_utf8_lossy(&out.stdout).contains("already complete"),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert_eq!(std::fs::read(&metrics).unwrap(), before);
}

#[test]
fn runs_can_be_extended_but_not_reconfigured() {
    let ws = workspace();
    let base = &["--m", "3", "--seed", "4", "--run-name", "grow", "--runs-dir", "r"][..];
    assert_code(&run_strings(&ws.dir, &train_args(&ws, base), &[]), 0);
    let run = ws.dir.join("r/grow");
    assert!(run.join("checkpoints/step_30.ckpt").is_file());

    // same config with a larger step budget resumes from the checkpoint
    let mut extend = base.to_vec();
    extend.extend(["--steps", "60", "--resume"]);
    assert_code(&run_strings(&ws.dir, &train_args(&ws, &extend), &[]), 0);
    assert!(run.join("checkpoints/step_60.ckpt").is_file());
    let steps: Vec<u64> = std::fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![10, 20, 30, 40, 50, 60], "old records kept, new appended");

    // any other change is refused rather than grafted onto the old run
    let mut reshape = base.to_vec();
    reshape.extend(["--steps", "90", "--width", "16", "--resume"]);
    let out = run_strings(&ws.dir, &train_args(&ws, &reshape), &[]);
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("different"), "stderr: {err}");
    assert!(!run.join("checkpoints/step_90.ckpt").exists());
    println!("refusal: {}", err.trim());
}

#[test]
fn sweep_summary_exports_and_nac_table() {
    let ws = workspace();
    let sweep_dir = ws.dir.join("grid");
    let args: Vec<String> = [
        "sweep",
        "--data",
        ws.data.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--variants",
        "wae_baseline,maskaae",
        "--m-values",
        "2,3",
        "--repeats",
        "1",
        "--seed",
        "4",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_code(&run_strings(&ws.dir, &args, &[]), 0);

    let summary = sweep_dir.join("sweep_summary.csv");
    let text = std::fs::read_to_string(&summary).unwrap();
    println!("summary:\n{text}");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,m,repeat,final_frechet,final_nac,m_A,wall_seconds");
    assert_eq!(lines.len(), 5, "4 cells expected");
    assert!(lines[1].starts_with("maskaae,2,0,"));
    assert!(lines[4].starts_with("wae_baseline,3,0,"));
    assert!(sweep_dir.join("sweep_manifest.json").is_file());
    assert!(sweep_dir.join("maskaae_m02_r0/manifest.json").is_file());

    // second invocation reuses all four cells and reproduces the summary
    let before = std::fs::read(&summary).unwrap();
    assert_code(&run_strings(&ws.dir, &args, &[]), 0);
    assert_eq!(std::fs::read(&summary).unwrap(), before);

    // u-curve export: one row per (variant, m), re-export identical
    let ucsv = ws.dir.join("ucurve.csv");
    let usvg = ws.dir.join("ucurve.svg");
    let uc = [
        "export", "ucurve",
        "--summary", summary.to_str().unwrap(),
        "--out", ucsv.to_str().unwrap(),
        "--svg", usvg.to_str().unwrap(),
    ];
    assert_code(&run_in(&ws.dir, &uc, &[]), 0);
    let utext = std::fs::read_to_string(&ucsv).unwrap();
    println!("ucurve:\n{utext}");
    assert_eq!(utext.lines().count(), 5);
    assert!(utext.lines().nth(1).unwrap().starts_with("maskaae,2,"));
    let first = std::fs::read(&ucsv).unwrap();
    assert_code(&run_in(&ws.dir, &uc, &[]), 0);
    assert_eq!(std::fs::read(&ucsv).unwrap(), first);
    assert!(usvg.is_file());

    // mask trace export is byte-identical to the run's own file
    let trace_src = sweep_dir.join("maskaae_m03_r0/mask_trace.csv");
    let tcsv = ws.dir.join("trace.csv");
    assert_code(
        &run_in(
            &ws.dir,
            &[
                "export", "mask-trace",
                "--run", sweep_dir.join("maskaae_m03_r0").to_str().unwrap(),
                "--out", tcsv.to_str().unwrap(),
            ],
            &[],
        ),
        0,
    );
    assert_eq!(std::fs::read(&tcsv).unwrap(), std::fs::read(&trace_src).unwrap());

    // nac table across all four runs
    let ncsv = ws.dir.join("nac.csv");
    assert_code(
        &run_in(
            &ws.dir,
            &[
                "nac-table",
                sweep_dir.join("wae_baseline_m02_r0").to_str().unwrap(),
                sweep_dir.join("wae_baseline_m03_r0").to_str().unwrap(),
                sweep_dir.join("maskaae_m02_r0").to_str().unwrap(),
                sweep_dir.join("maskaae_m03_r0").to_str().unwrap(),
                "--out", ncsv.to_str().unwrap(),
            ],
            &[],
        ),
        0,
    );
    let ntext = std::fs::read_to_string(&ncsv).unwrap();
    println!("nac table:\n{ntext}");
    assert_eq!(ntext.lines().next().unwrap(), "variant,m,repeat,m_A,nac,winner");
    assert_eq!(ntext.lines().count(), 5);
    // each m-group marks exactly one winner
    for m in ["2", "3"] {
        let marks = ntext
            .lines()
            .filter(|l| l.split(',').nth(1) == Some(m) && l.ends_with('*'))
            .count();
        assert_eq!(marks, 1, "m={m} should have one winner");
    }
}

#[test]
fn sweep_isolates_a_poisoned_cell_and_exits_4() {
    let ws = workspace();
    let sweep_dir = ws.dir.join("grid");
    // a leftover corrupt checkpoint below the step target makes that
    // cell's resume fail; the other cell must still complete
    let bad = sweep_dir.join("wae_baseline_m02_r0/checkpoints");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("step_10.ckpt"), b"not a checkpoint").unwrap();
    let out = run_in(
        &ws.dir,
        &[
            "sweep",
            "--data", ws.data.to_str().unwrap(),
            "--config", ws.config.to_str().unwrap(),
            "--variants", "wae_baseline",
            "--m-values", "2,3",
            "--repeats", "1",
            "--out", sweep_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_code(&out, 4);
    let text = std::fs::read_to_string(sweep_dir.join("sweep_summary.csv")).unwrap();
    println!("summary with failure:\n{text}");
    let m2 = text.lines().find(|l| l.starts_with("wae_baseline,2,0,")).unwrap();
    let m3 = text.lines().find(|l| l.starts_with("wae_baseline,3,0,")).unwrap();
    assert!(m2.contains("NaN"), "failed cell row: {m2}");
    assert!(!m3.contains("NaN"), "healthy cell row: {m3}");
}

#[test]
fn invalid_configuration_exits_2() {
    let ws = workspace();
    // unknown preset
    let out = run_strings(
        &ws.dir,
        &[
            "train".into(),
            "--data".into(),
            ws.data.to_str().unwrap().into(),
            "--m".into(),
            "3".into(),
            "--preset".into(),
            "nope".into(),
        ],
        &[],
    );
    assert_code(&out, 2);
    // config file with a misspelled key
    let bad = ws.dir.join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = run_in(
        &ws.dir,
        &[
            "train",
            "--data", ws.data.to_str().unwrap(),
            "--m", "3",
            "--config", bad.to_str().unwrap(),
        ],
        &[],
    );
    assert_code(&out, 2);
    // missing m entirely
    let out = run_strings(&ws.dir, &train_args(&ws, &[]), &[]);
    assert_code(&out, 2);
    // mask-trace export pointed at a non-run directory
    let out = run_in(
        &ws.dir,
        &["export", "mask-trace", "--run", ".", "--out", "t.csv"],
        &[],
    );
    assert_code(&out, 2);
}

#[test]
fn theory_check_passes_and_writes_json() {
    let ws = workspace();
    let json = ws.dir.join("report.json");
    let out = run_in(&ws.dir, &["theory-check", "--json", json.to_str().unwrap()], &[]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 15);
    assert_eq!(std::fs::read_to_string(&json).unwrap(), stdout);
}

#[test]
fn empty_nac_table_exits_zero() {
    let ws = workspace();
    let out = run_in(&ws.dir, &["nac-table"], &[]);
    assert_code(&out, 0);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        "variant,m,repeat,m_A,nac,winner\n"
    );
}
