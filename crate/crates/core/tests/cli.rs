use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn dphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dphase")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_accepts_and_rejects() {
    let ok = dphase(&["validate", "--config", s(&fixture("double_phase.toml"))]);
    assert_eq!(ok.status.code(), Some(0));

    let bad = dphase(&["validate", "--config", s(&fixture("balance_violation.toml"))]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr_json(&bad).to_string().contains("balance_condition"));

    let r = dphase(&["validate", "--config", s(&fixture("inadmissible_r.toml"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr_json(&r).to_string().contains("r_upper_bound"));
}

#[test]
fn parse_and_io_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dphase(&["validate", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "dim = 2\nnx = 8\nunknown_key = 1\n").unwrap();
    assert_eq!(dphase(&["validate", "--config", s(&cfg)]).status.code(), Some(2));

    let no_args = dphase(&["solve"]);
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn newton_budget_exhaustion_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("double_phase.toml")).unwrap() + "\n[newton]\nmax_iter = 1\n";
    let cfg = dir.path().join("tight.toml");
    fs::write(&cfg, text).unwrap();
    let out = dphase(&["solve", "--config", s(&cfg), "--out", s(&dir.path().join("run")), "--eps", "1e-3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stalled_sweep_exits_four_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("sweep");
    let out = dphase(&["sweep-eps", "--config", s(&fixture("stalled.toml")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "ContinuationStalled");
    let csv = fs::read_to_string(run.join("continuation.csv")).unwrap();
    assert!(csv.starts_with("# schema=1\n"));
    assert!(csv.lines().count() > 3);
}

#[test]
fn report_on_truncated_checkpoints_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("heat");
    let out = dphase(&["solve", "--config", s(&fixture("heat.toml")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let again = dphase(&["report", s(&run)]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        fs::read(run.join("report.json")).unwrap(),
        fs::read(run.join("report").join("report.json")).unwrap()
    );

    fs::remove_file(run.join("checkpoints").join("step_00007.csv")).unwrap();
    let out = dphase(&["report", s(&run)]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn inadmissible_r_is_rejected_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = dphase(&["solve", "--config", s(&fixture("inadmissible_r.toml")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.join("checkpoints").exists());
}

#[test]
fn solve_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let out = dphase(&["solve", "--config", s(&fixture("variable_exponents.toml")), "--out", s(run)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("manifest.json")));
    assert!(ta.iter().any(|(p, _)| p.ends_with("diagnostics.csv")));
    assert_eq!(ta.len(), tb.len());
    for ((pa, ca), (pb, cb)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs", pa.display());
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("zero");
    let out = dphase(&["solve", "--config", s(&fixture("zero.toml")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sup_r_norm"], 0.0);
    assert_eq!(report["ut_L2"], 0.0);
}

#[test]
fn mms_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("mms");
    let out = dphase(&["mms", "--case", "double-phase", "--mesh", "8,16,32", "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("mms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
    assert!(run.join("mms.json").exists() && run.join("long.csv").exists());
}

#[test]
fn stability_runs_on_kink_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("stab");
    let out = dphase(&["stability", "--config", s(&fixture("kink.toml")), "--out", s(&run), "--mesh", "64"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
}
