//! Drives the `semlink` binary: exit codes, output files, sweeps and reports.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semlink::accounting::read_records_csv;
use semlink::dataset::load_dataset;

fn semlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semlink"))
        .args(args)
        .env_remove("SEMLINK_OUT")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "num_images = 12\nmaster_seed = 4\n[dims]\nimage_height = 16\nimage_width = 16\n").unwrap();
    let before = std::fs::read(&cfg).unwrap();
    let out_dir = dir.path().join("out");
    let out = semlink(&["simulate", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&cfg).unwrap(), before);

    let rows = read_records_csv(&out_dir.join("records.csv")).unwrap();
    assert_eq!(rows.len(), 12);
    let jsonl = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 12);
    let summary = read_json(out_dir.join("summary.json"));
    assert_eq!(summary["num_images"], 12);
    assert_eq!(summary["provenance"]["master_seed"], 4);
    assert!(summary["provenance"]["config_hash"].as_str().unwrap().starts_with("sha256:"));
    assert!(summary["provenance"]["version"].is_string());
}

#[test]
fn odd_slot_len_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = semlink(&[
        "simulate",
        "--out",
        p(dir.path()),
        "--override",
        "dims.slot_len=31",
        "--override",
        "num_images=0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    let messages: Vec<String> = err["error"]["messages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_str().unwrap().to_string())
        .collect();
    assert!(messages.iter().any(|m| m.contains("slot_len")), "{messages:?}");
    assert!(messages.iter().any(|m| m.contains("num_images")), "{messages:?}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = semlink(&["simulate", "--out", p(dir.path()), "--override", "channel.snr=3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = semlink(&["simulate", "--out", p(dir.path()), "--override", "num_images=many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = semlink(&[
        "simulate",
        "--out",
        p(&dir.path().join("o")),
        "--override",
        "source.kind=dataset",
        "--override",
        &format!("source.path={}", p(&dir.path().join("missing.toml"))),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"]["kind"], "runtime");
}

#[test]
fn noiseless_uncached_run_reports_psnr_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = semlink(&[
        "simulate",
        "--out",
        p(dir.path()),
        "--override",
        "channel.snr_db=inf",
        "--override",
        "thresholds=\"never\"",
        "--override",
        "num_images=5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(dir.path().join("summary.json"))["mean_psnr_db"], 100.0);
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_semlink"))
        .args(["simulate", "--override", "num_images=2", "--override", "generator.kind=none"])
        .env("SEMLINK_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn sweep_cells_are_independent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_dir = dir.path().join("sweep");
    let common = ["--override", "num_images=10", "--override", "thresholds=\"never\"", "--override", "generator.kind=mlp"];
    let mut args = vec!["sweep", "--out", p(&sweep_dir), "--axis", "channel.snr_db=0,20", "--axis", "master_seed=1,2", "--jobs", "2"];
    args.extend(common);
    let out = semlink(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let index = read_json(sweep_dir.join("sweep_index.json"));
    let cells = index["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    for k in 0..4 {
        assert!(sweep_dir.join(format!("cell_{k:03}/records.csv")).exists());
    }
    let psnr = |k: usize| cells[k]["mean_psnr_db"].as_f64().unwrap();
    assert!(psnr(2) > psnr(0) && psnr(3) > psnr(1), "{index}");

    let single = dir.path().join("single");
    let overrides: Vec<String> = cells[1]["overrides"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut args: Vec<&str> = vec!["simulate", "--out", p(&single)];
    args.extend(common);
    for o in &overrides {
        args.extend(["--override", o.as_str()]);
    }
    assert_eq!(semlink(&args).status.code(), Some(0));
    assert_eq!(
        std::fs::read(single.join("records.csv")).unwrap(),
        std::fs::read(sweep_dir.join("cell_001/records.csv")).unwrap()
    );
}

#[test]
fn failing_sweep_cell_is_recorded_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = semlink(&[
        "sweep",
        "--out",
        p(dir.path()),
        "--override",
        "num_images=3",
        "--override",
        "source.kind=dataset",
        "--axis",
        &format!("source.path={},{}", p(&dir.path().join("a.toml")), p(&dir.path().join("b.toml"))),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let index = read_json(dir.path().join("sweep_index.json"));
    assert!(index["cells"].as_array().unwrap().iter().all(|c| c["ok"] == false && c["error"].is_object()));
}

#[test]
fn report_aggregates_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(format!("s{seed}"));
        let out = semlink(&["simulate", "--out", p(&out_dir), "--seed", seed, "--override", "num_images=8"]);
        assert_eq!(out.status.code(), Some(0));
        files.push(out_dir.join("records.csv"));
    }
    let report_dir = dir.path().join("report");
    let out = semlink(&["report", p(&files[0]), p(&files[1]), "--out", p(&report_dir), "--window", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let a = read_records_csv(&files[0]).unwrap();
    let b = read_records_csv(&files[1]).unwrap();
    let mut rdr = csv::Reader::from_path(report_dir.join("bcr_curve.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    for (i, row) in rows.iter().enumerate() {
        let mean: f64 = row[1].parse().unwrap();
        let ma: f64 = row[2].parse().unwrap();
        assert!((mean - (a[i].bcr + b[i].bcr) / 2.0).abs() < 1e-15);
        assert_eq!(mean, ma);
    }
    assert!(report_dir.join("psnr_vs_snr.csv").exists());

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "image_index,snr_db\n0,5\n").unwrap();
    let out = semlink(&["report", p(&broken), "--out", p(&report_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_json(&out).to_string().contains("n_s"));
}

#[test]
fn gen_dataset_and_invert_produce_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--override",
        "num_images=2",
        "--override",
        "dims.image_height=8",
        "--override",
        "dims.image_width=8",
        "--override",
        "inversion.iterations=10",
    ];
    let data_dir = dir.path().join("data");
    let mut args = vec!["gen-dataset", "--out", p(&data_dir)];
    args.extend(small);
    assert_eq!(semlink(&args).status.code(), Some(0));
    let data = load_dataset(&data_dir.join("dataset.toml")).unwrap();
    assert_eq!(data.len(), 2);
    assert!(data_dir.join("generator.toml").exists());

    let inv_dir = dir.path().join("inv");
    let dataset = data_dir.join("dataset.toml");
    let weights = format!("generator.weights={}", p(&data_dir.join("generator.toml")));
    let mut args = vec!["invert", "--out", p(&inv_dir), "--dataset", p(&dataset), "--override", &weights];
    args.extend(small);
    let out = semlink(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let latents = load_dataset(&inv_dir.join("latents.toml")).unwrap();
    assert_eq!(latents.len(), 2);
    let trace = std::fs::read_to_string(inv_dir.join("loss_trace_0000.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 11);
}
