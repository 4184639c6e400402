use std::path::Path;
use std::process::{Command, Output};

fn pcflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcflow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

const SMALL: &str = "\
[lattice]
n = 1
sizes = 16
periods = 2pi

[flow]
mode = pcf-oneform
t_end = 0.05
steps = 10

[initial]
seed = 3
amplitude = 0.1

[sampling]
snapshot_times = 0.02

[output]
dir = out
";

#[test]
fn oracle_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcflow(&["oracle"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gk_rhs_vs_cofactor"));
}

#[test]
fn flat_check_passes_with_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "flat.cfg",
        "[lattice]\nn = 1\nsizes = 16\n[flow]\nmode = pcf-oneform\n[diagnostics]\ncheck_time = 0.02\ncheck_dt = 0.005\ncheck_stride = 2\n[output]\ndir = out\n",
    );
    let out = pcflow(&["check", "flat.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/check_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    for r in report["identity"]["entries"].as_array().unwrap() {
        assert_eq!(r["residual"].as_f64().unwrap(), 0.0, "{r}");
    }
}

#[test]
fn run_writes_artifacts_and_repeats_bytewise() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "small.cfg", SMALL);
    let read = |name: &str| std::fs::read(dir.path().join("out").join(name)).unwrap();
    let mut first = vec![];
    for round in 0..2 {
        let out = pcflow(&["run", "small.cfg"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files = [
            "series.csv",
            "snapshot_000.pcf",
            "final.pcf",
            "final.pcf.hdr",
            "config.effective",
        ];
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| read(f)).collect();
        if round == 0 {
            first = bytes;
        } else {
            assert_eq!(first, bytes);
        }
    }
    let series = String::from_utf8(read("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 12);
    let summary: serde_json::Value = serde_json::from_slice(&read("summary.json")).unwrap();
    assert_eq!(summary["steps"], 10);
}

#[test]
fn export_csv_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "small.cfg", SMALL);
    assert!(pcflow(&["run", "small.cfg"], dir.path()).status.success());
    let out = pcflow(&["export", "out/final.pcf", "--csv", "-o", "final.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("final.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16 * 16 + 1);
    let header = pcflow(&["export", "out/final.pcf"], dir.path());
    assert!(String::from_utf8_lossy(&header.stdout).starts_with("format PCF1"));
}

#[test]
fn bad_inputs_exit_nonzero_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "bad.cfg", "[lattice]\nsizes = 15\nsizes = 16\nbogus = 1\n");
    let out = pcflow(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sizes must be even"), "{err}");
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    let out = pcflow(&["export", "missing.pcf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pcf"));
}
