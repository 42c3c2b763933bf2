use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
mesh.nx = 16
mesh.ny = 4
physics.mach = 0.5
solver.cfl = 20
quantum.seed = 5
";

fn qfvm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfvm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("QFVM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

#[test]
fn run_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "run"], &out);
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stdout}{stderr}");
    assert!(stdout.contains("status = converged"));
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(hist.starts_with("iter,res_norm,res_drop"));
    assert!(out.join("summary.txt").exists());
    assert!(out.join("config.txt").exists());
}

#[test]
fn missing_required_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.nx = 16\nmesh.ny = 4\nphysics.mach = 0.5\n");
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "run"], &dir.path().join("out"));
    let (_, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr.contains("solver.cfl"), "{stderr}");
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}solver.cfll = 3\n"));
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "run"], &dir.path().join("out"));
    let (_, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr.contains("solver.cfll") && stderr.contains('6'), "{stderr}");
}

#[test]
fn dotted_override_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "--quantum.bypass=true", "run"], &out);
    assert_eq!(o.status.code(), Some(0));
    let saved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.lines().any(|l| l.replace(' ', "") == "quantum.bypass=true"), "{saved}");
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("bypass"), "{summary}");
}

#[test]
fn max_iters_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "--solver.max_iters=2", "run"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let go = |name: &str| {
        let out = dir.path().join(name);
        let o = qfvm(
            &["--config", cfg.to_str().unwrap(), "--output.wall_time=false", "sweep", "--epsilons", "1e-1,1e-2"],
            &out,
        );
        assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
        out
    };
    let (a, b) = (go("a"), go("b"));
    for f in ["sweep.csv", "thresholds.txt", "baseline/history.csv", "eps_1e-1/history.csv"] {
        let fa = std::fs::read(a.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(fa, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epsilon,status,iters_to_converge,final_res_drop"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn bypass_scaling_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qfvm(
        &["--config", cfg.to_str().unwrap(), "scaling", "--sizes", "8x4,16x4", "--epsilon", "bypass"],
        &out,
    );
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stdout}{stderr}");
    let csv = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let err: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(err, 0.0, "{r}");
    }
}

#[test]
fn compare_reports_both_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = qfvm(&["--config", cfg.to_str().unwrap(), "compare"], &dir.path().join("out"));
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stdout}{stderr}");
    assert!(stdout.contains("linf"), "{stdout}");
}
