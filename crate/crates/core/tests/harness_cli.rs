use std::fs;
use std::path::Path;
use std::process::Command;

use cgvamp::harness::{self, SummaryRow, SweepSpec};
use cgvamp::trace;

const SWEEP: &str = r#"
deltas = [0.25]
kappas = [100.0, 1000.0, 10000.0]
variants = ["cgvamp"]
seeds = [0, 1]

[[policies]]
policy = "acg"
c = 0.9
delta_threshold = 0.015
i_max = 100

[base]
variant = "cgvamp"
t_max = 4

[base.operator]
kind = "fijl"
n = 1024
m = 256
kappa = 100.0
seed = 0
"#;

const RUN: &str = r#"
variant = "cgvamp"
t_max = 3

[operator]
kind = "fijl"
n = 1024
m = 256
kappa = 100.0
seed = 0
"#;

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cgvamp")).args(args).env("RUST_BACKTRACE", "0").output().unwrap()
}

fn spec_in(dir: &Path) -> SweepSpec {
    let mut spec = SweepSpec::from_toml_str(SWEEP).unwrap();
    spec.out_dir = dir.to_path_buf();
    spec
}

#[test]
fn sweep_grid_and_summary_layout() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_in(dir.path());
    let manifest = harness::run_sweep(&spec).unwrap();
    assert_eq!(manifest.cells.len(), 3);
    assert_eq!(manifest.cells.iter().map(|c| c.runs.len()).sum::<usize>(), 6);
    let rows: Vec<SummaryRow> = trace::read_csv_file(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 4);
    for kappa in [100.0, 1000.0, 10000.0] {
        let ts: Vec<usize> = rows.iter().filter(|r| r.kappa == kappa).map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 1, 2, 3]);
    }
    assert!(rows.iter().all(|r| r.seeds == 2));
    for c in &manifest.cells {
        for r in &c.runs {
            assert!(dir.path().join(&r.trace).is_file());
            assert!(dir.path().join(&r.inner).is_file());
        }
    }
}

#[test]
fn repeated_sweeps_have_the_same_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = harness::run_sweep(&spec_in(a.path())).unwrap();
    let mb = harness::run_sweep(&spec_in(b.path())).unwrap();
    assert_eq!(ma.manifest_hash, mb.manifest_hash);
    assert_eq!(ma, mb);
    let mut other = spec_in(b.path());
    other.seeds = vec![0, 2];
    assert_ne!(harness::run_sweep(&other).unwrap().manifest_hash, ma.manifest_hash);
}

#[test]
fn empty_seed_list_is_rejected() {
    let mut spec = SweepSpec::from_toml_str(SWEEP).unwrap();
    spec.seeds.clear();
    assert!(spec.validate().is_err());
}

#[test]
fn cli_plots_regenerate_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(&cfg, SWEEP).unwrap();
    let out = dir.path().join("sweep");
    let status = cli(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let again = dir.path().join("again");
    let summary = out.join("summary.csv");
    let status = cli(&["plot", "--summary", summary.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(status.status.success());
    for kind in ["nmse_vs_t", "inner_iters_vs_t", "time_vs_t"] {
        let a = fs::read(out.join("plots").join(format!("{kind}.svg"))).unwrap();
        let b = fs::read(again.join(format!("{kind}.svg"))).unwrap();
        assert_eq!(a, b, "{kind}");
    }
    let bad =
        cli(&["plot", "--summary", summary.to_str().unwrap(), "--kind", "nmse", "--out", again.to_str().unwrap()]);
    assert!(!bad.status.success());
}

#[test]
fn cli_run_writes_traces_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, RUN).unwrap();
    let out = dir.path().join("out");
    let status = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "3-4",
        "--oracle",
        "on",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for seed in [3, 4] {
        let rows: Vec<cgvamp::outer::TraceRecord> = trace::read_csv_file(&out.join(format!("s{seed}.csv"))).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.oracle_v_ab.is_some()));
        let saved = cgvamp::config::RunConfig::load(&out.join(format!("s{seed}.toml"))).unwrap();
        assert!(saved.oracle);
    }
    let bad = cli(&["run", "--config", cfg.to_str().unwrap(), "--seeds", "4-3"]);
    assert!(!bad.status.success());
}

#[test]
fn cli_audit_needs_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, RUN).unwrap();
    let off = cli(&["audit", "--config", cfg.to_str().unwrap(), "--oracle", "off"]);
    assert!(!off.status.success());
    let out = dir.path().join("audit");
    let on = cli(&["audit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let checks: Vec<harness::AuditCheck> =
        serde_json::from_str(&fs::read_to_string(out.join("audit.json")).unwrap()).unwrap();
    assert_eq!(checks.len(), 5);
    let text = String::from_utf8_lossy(&on.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 5);
    assert_eq!(on.status.success(), checks.iter().all(|c| c.pass));
}
