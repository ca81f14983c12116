use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use btd_cli::RunConfig;
use btd_core::io::{load_tensor, save_tensor};

fn btd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btd")).args(args).output().expect("run btd")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

fn small(dir: &Path) -> String {
    write_config(
        dir,
        "small.json",
        r#"{"i": 8, "j": 7, "k": 120, "r": 2, "l": 2, "r_ini": 3, "l_ini": 3,
            "snr_db": 20, "warmup_slices": 20, "max_iters": 150, "xi": 0.97}"#,
    )
}

fn files_equal(a: &Path, b: &Path, names: &[&str]) {
    for name in names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn generate_unit_tensor_is_32_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "one.json", r#"{"i": 1, "j": 1, "k": 1, "r": 1, "l": 1, "snr_db": null}"#);
    let out = dir.path().join("one");
    let res = btd(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::metadata(out.join("tensor.bin")).unwrap().len(), 32);
    assert!(!out.join("clean.bin").exists());
}

#[test]
fn generate_experiment_one_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let res = btd(&["generate", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(fs::metadata(out.join("tensor.bin")).unwrap().len(), 24 + 8 * 40 * 35 * 1250);
    assert_eq!(load_tensor(out.join("clean.bin")).unwrap().dims(), (40, 35, 1250));
}

#[test]
fn same_seed_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let run = |cmd: &str, name: &str| {
        let out = dir.path().join(name);
        let res = btd(&[cmd, "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(res.status.code() == Some(0) || res.status.code() == Some(4), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let (a, b) = (run("generate", "g1"), run("generate", "g2"));
    files_equal(&a, &b, &["tensor.bin", "clean.bin", "truth.bin", "metadata.json"]);
    let (a, b) = (run("batch", "b1"), run("batch", "b2"));
    files_equal(&a, &b, &["factors.bin", "factors_pruned.bin", "ranks.json", "trace.csv", "result.json"]);
    let (a, b) = (run("stream", "s1"), run("stream", "s2"));
    files_equal(&a, &b, &["nse.csv", "ranks.csv", "checkpoint.bin", "factors.bin", "stream.json"]);
    let c = run("generate", "g3");
    let other = btd(&["generate", "--config", &cfg, "--seed", "12", "--out", dir.path().join("g4").to_str().unwrap()]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(fs::read(c.join("tensor.bin")).unwrap(), fs::read(dir.path().join("g4/tensor.bin")).unwrap());
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"seed": 1, "lamda": 0.5}"#);
    let res = btd(&["batch", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("lamda"));
    let nested = write_config(dir.path(), "nested.json", r#"{"experiment2": {"change": 5}}"#);
    assert_eq!(btd(&["experiment", "2", "--config", &nested]).status.code(), Some(2));
}

#[test]
fn invalid_values_and_usage_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(btd(&["stream", "--xi", "1.5", "--out", out]).status.code(), Some(2));
    assert_eq!(btd(&["experiment", "3"]).status.code(), Some(2));
    assert_eq!(btd(&["batch", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "in.json", r#"{"input": "/nonexistent/t.bin", "sigma": 1.0}"#);
    assert_eq!(btd(&["batch", "--config", &cfg, "--out", out]).status.code(), Some(2));
    let input = dir.path().join("in.bin");
    save_tensor(&input, &btd_core::Tensor3::zeros(3, 3, 4)).unwrap();
    let cfg = write_config(dir.path(), "nosigma.json", &format!(r#"{{"input": "{}"}}"#, input.display()));
    let res = btd(&["batch", "--config", &cfg, "--out", out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigma"));
}

#[test]
fn batch_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "few.json",
        r#"{"i": 6, "j": 5, "k": 20, "r": 1, "l": 1, "r_ini": 2, "l_ini": 2, "max_iters": 2}"#,
    );
    let out = dir.path().join("b");
    let res = btd(&["batch", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4));
    assert!(out.join("factors.bin").exists() && out.join("trace.csv").exists());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3);
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rt.json",
        r#"{"i": 9, "l": [1, 2, 3], "r": 3, "snr_db": 7.3, "lambda": 0.1, "xi": 0.985,
            "change_point": {"k_star": 40, "r_new": 1, "l_new": 2},
            "experiment1": {"snr_db": [5.0, 15.0], "rule_ranks": "true"}}"#,
    );
    let printed = btd(&["config", "--config", &cfg, "--seed", "4"]);
    assert_eq!(printed.status.code(), Some(0));
    let text = String::from_utf8(printed.stdout).unwrap();
    let parsed = RunConfig::from_json(&text).unwrap();
    assert_eq!(parsed.seed, 4);
    assert_eq!(parsed.experiment1.seed, 4);
    assert_eq!(RunConfig::from_json(&parsed.to_json().unwrap()).unwrap(), parsed);
    assert_eq!(parsed.to_json().unwrap() + "\n", text);

    // The configuration recorded with the outputs reproduces the run.
    let out = dir.path().join("g");
    assert_eq!(btd(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let recorded = out.join("config.json");
    let again = dir.path().join("g2");
    let res = btd(&["generate", "--config", recorded.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    files_equal(&out, &again, &["tensor.bin", "truth_before.bin", "truth_after.bin"]);
}

#[test]
fn stream_from_file_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let g = dir.path().join("g");
    assert_eq!(btd(&["generate", "--config", &cfg, "--out", g.to_str().unwrap()]).status.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("metadata.json")).unwrap()).unwrap();
    let sigma = meta["sigma"].as_f64().unwrap();

    // The first 80 slices only, to stop the stream early.
    let full = load_tensor(g.join("tensor.bin")).unwrap();
    let clean = load_tensor(g.join("clean.bin")).unwrap();
    save_tensor(g.join("head.bin"), &full.sub_slices(0, 80).unwrap()).unwrap();
    save_tensor(g.join("head_clean.bin"), &clean.sub_slices(0, 80).unwrap()).unwrap();

    let common = format!(
        r#""sigma": {sigma:?}, "snr_db": 20, "r_ini": 3, "l_ini": 3, "warmup_slices": 20, "max_iters": 150, "xi": 0.97"#
    );
    let file_cfg = |name: &str, input: &str, reference: &str, extra: &str| {
        let json = format!(
            r#"{{"input": "{}", "reference": "{}", {common}{extra}}}"#,
            g.join(input).display(),
            g.join(reference).display()
        );
        write_config(dir.path(), name, &json)
    };
    let run = |cfg: &str, out: &str| {
        let res = btd(&["stream", "--config", cfg, "--out", dir.path().join(out).to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        dir.path().join(out)
    };

    let whole = run(&file_cfg("whole.json", "tensor.bin", "clean.bin", ""), "whole");
    let memory = run(&cfg, "memory");
    files_equal(&whole, &memory, &["nse.csv", "ranks.csv", "checkpoint.bin"]);

    let head = run(&file_cfg("head.json", "head.bin", "head_clean.bin", ""), "head");
    let resume = format!(r#", "resume": "{}""#, head.join("checkpoint.bin").display());
    let tail = run(&file_cfg("tail.json", "tensor.bin", "clean.bin", &resume), "tail");
    files_equal(&whole, &tail, &["checkpoint.bin"]);
    let whole_nse = fs::read_to_string(whole.join("nse.csv")).unwrap();
    let tail_nse = fs::read_to_string(tail.join("nse.csv")).unwrap();
    let whole_rows: Vec<&str> = whole_nse.lines().skip(1).collect();
    let tail_rows: Vec<&str> = tail_nse.lines().skip(1).collect();
    assert_eq!(tail_rows.len(), 40);
    assert_eq!(tail_rows[0].split(',').next(), Some("81"));
    assert_eq!(&whole_rows[60..], &tail_rows[..]);
}

#[test]
fn quick_experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.json",
        r#"{"experiment1": {"dims": [8, 7, 60], "r_true": 2, "l_true": 2, "r_ini": 3, "l_ini": 3,
            "warmup_slices": 20, "max_iters": 80, "snr_db": [20.0]}}"#,
    );
    let out = dir.path().join("e");
    let res = btd(&["experiment", "1", "--config", &cfg, "--trials", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("trials.csv")).unwrap().lines().count(), 5);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("experiment1.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["trials"], 2);
    assert!(fs::read_to_string(out.join("timing.csv")).unwrap().starts_with("solver,snr_db,trial,seconds"));
}
