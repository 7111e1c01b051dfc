use std::fs;
use std::path::Path;
use std::process::Command;

use pocoopt::harness::{load_trace, plot, run_suite, ExperimentConfig};

const CONFIG: &str = r#"{
    "name": "cli",
    "problem": {"kind": "logistic", "n": 40, "d": 3, "seed": 5, "s0": 1.0},
    "optimizer": {"name": "svrg", "params": {"eta": 0.1, "inner_steps": 10, "batch_size": 4}},
    "run": {"total_steps": 60, "correction_start": 5, "seeds": [0, 1]}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pocoopt"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn cli_run_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let st = bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    for seed in [0, 1] {
        for ext in ["csv", "hashes.csv", "meta.json"] {
            assert!(out.join(format!("cli-svrg-seed{seed}.{ext}")).is_file(), "{ext}");
        }
    }
    assert!(out.join("cli-svrg.summary.csv").is_file());
    assert!(!out.join("cli-svrg-seed0.params.csv").exists());
}

#[test]
fn cli_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let st = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9", "--dump-params"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("cli-svrg-seed9.params.csv").is_file());
    assert!(!out.join("cli-svrg-seed0.csv").exists());
}

#[test]
fn cli_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &CONFIG.replace("\"seeds\"", "\"sedes\""));
    let o = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let missing = bin().arg("run").arg(dir.path().join("nope.json")).status().unwrap();
    assert_eq!(missing.code(), Some(1));

    let neg = write_config(dir.path(), &CONFIG.replace("\"eta\": 0.1", "\"eta\": -0.1"));
    assert_eq!(bin().arg("run").arg(&neg).status().unwrap().code(), Some(1));

    assert_eq!(bin().args(["suite", "nope"]).status().unwrap().code(), Some(1));
}

#[test]
fn cli_verify_passes() {
    let o = bin().arg("verify").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
}

#[test]
fn config_rejects_unknown_fields() {
    assert!(ExperimentConfig::from_json(&CONFIG.replace("\"s0\"", "\"s1\"")).is_err());
}

#[test]
fn plot_merges_traces_of_one_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), CONFIG);
    assert!(bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    let a = load_trace(&out.join("cli-svrg-seed0.csv")).unwrap();
    let b = load_trace(&out.join("cli-svrg-seed1.csv")).unwrap();
    let o = plot(&[a, b], &out, "cmp").unwrap();
    let svg = fs::read_to_string(&o.svg).unwrap();
    assert!(svg.starts_with("<svg") || svg.contains("<svg"));
    let merged = fs::read_to_string(&o.csv).unwrap();
    assert!(merged.starts_with("run,step,grad_evals,objective,gap,event"));
    assert_eq!(merged.lines().count(), 1 + 2 * 61);

    let st = bin().arg("plot").arg(out.join("cli-svrg-seed0.csv")).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
}

#[test]
fn plot_rejects_empty_and_mixed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(plot(&[], dir.path(), "x").is_err());

    let out = dir.path().join("out");
    let c1 = write_config(dir.path(), CONFIG);
    assert!(bin().arg("run").arg(&c1).arg("--out").arg(&out).status().unwrap().success());
    let other = CONFIG.replace("\"cli\"", "\"other\"").replace("\"seed\": 5", "\"seed\": 6");
    let c2 = write_config(dir.path(), &other);
    assert!(bin().arg("run").arg(&c2).arg("--out").arg(&out).status().unwrap().success());
    let a = load_trace(&out.join("cli-svrg-seed0.csv")).unwrap();
    let b = load_trace(&out.join("other-svrg-seed0.csv")).unwrap();
    assert!(plot(&[a, b], &out, "mixed").is_err());

    // A trace without its metadata sidecar cannot be plotted.
    fs::remove_file(out.join("cli-svrg-seed1.meta.json")).unwrap();
    assert!(load_trace(&out.join("cli-svrg-seed1.csv")).is_err());
    let st = bin().arg("plot").arg(out.join("cli-svrg-seed1.csv")).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn equivalence_suite_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_suite("equivalence", a.path()).unwrap();
    run_suite("equivalence", b.path()).unwrap();
    let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(!x.is_empty());
    assert_eq!(x, y);
}
