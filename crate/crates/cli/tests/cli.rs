use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "version": 1,
  "name": "small",
  "system": { "name": "henon" },
  "domain": { "center": [-0.5, 0.0], "radius": [2.5, 0.6] },
  "lambda": [1.2, 1.4],
  "seed": 3,
  "coverings": [ { "name": "lambda", "depth": 8, "snapshots": [4] } ],
  "measures": [
    { "name": "dirac_1.4", "covering": "lambda", "param_mode": "dirac", "mu": 1.4, "points_per_box": 16 }
  ]
}"#;

fn qlattr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlattr"))
        .args(args)
        .env_remove("QLATTR_WORKERS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn systems_lists_builtins() {
    let out = qlattr(&["systems"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["henon", "vdp", "arneodo"] {
        assert!(text.lines().any(|l| l == name), "{text}");
    }
}

#[test]
fn subdivide_measure_render_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let cov = dir.path().join("cov.csv");

    let out = qlattr(&["subdivide", "--config", s(&cfg), "--out", s(&cov)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = stdout(&out);
    assert_eq!(stats.lines().next(), Some("step,leaves_before,leaves_after"));
    assert_eq!(stats.lines().count(), 9);
    assert!(std::fs::read_to_string(&cov).unwrap().starts_with("depth,c1,c2,r1,r2\n"));

    let mcsv = dir.path().join("m.csv");
    let out = qlattr(&["measure", "--config", s(&cfg), "--covering", s(&cov), "--out", s(&mcsv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout(&out);
    assert!(summary.lines().nth(1).unwrap().starts_with("dirac_1.4,"), "{summary}");
    let measure = std::fs::read_to_string(&mcsv).unwrap();
    let total: f64 = measure
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);

    let svg = dir.path().join("m.svg");
    let out = qlattr(&["render", "--config", s(&cfg), "--input", s(&mcsv), "--out", s(&svg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let image = std::fs::read_to_string(&svg).unwrap();
    assert!(image.starts_with("<svg"));
    assert_eq!(image.matches("<rect").count(), measure.lines().count() - 1);
}

#[test]
fn run_writes_summary_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = qlattr(&["--workers", "1", "run", "--config", s(&cfg), "--out", s(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qlattr(&["--workers", "3", "run", "--config", s(&cfg), "--out", s(&b)]);
    assert!(out.status.success());
    for f in ["summary.json", "covering_lambda.csv", "measure_dirac_1.4.csv", "covering_lambda.svg"] {
        let x = std::fs::read(a.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_random_measures() {
    let gauss = SMALL.replace(
        r#""param_mode": "dirac", "mu": 1.4"#,
        r#""param_mode": "gauss", "mu": 1.3, "sigma2": 0.001"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", &gauss);
    let run = |seed: &str, name: &str| {
        let path = dir.path().join(name);
        let out = qlattr(&["measure", "--config", s(&cfg), "--seed", seed, "--out", s(&path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("5", "a.csv"), run("5", "b.csv"));
    assert_ne!(run("5", "c.csv"), run("6", "d.csv"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &SMALL.replace(r#""lambda": [1.2, 1.4]"#, r#""lambda": [1.4, 1.2]"#));
    let out = qlattr(&["subdivide", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let unknown = write_config(dir.path(), "u.json", &SMALL.replace(r#""seed": 3"#, r#""seed": 3, "sede": 4"#));
    assert_eq!(qlattr(&["run", "--config", s(&unknown)]).status.code(), Some(2));

    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "depth,c1,c2,r1,r2\n2,0,x,1,1\n").unwrap();
    let good = write_config(dir.path(), "small.json", SMALL);
    let out = qlattr(&["render", "--config", s(&good), "--input", s(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("garbage.csv:2"));
}

#[test]
fn vanished_covering_exits_3() {
    // Q misses the attractor, so every box is pruned
    let away = SMALL
        .replace(r#""center": [-0.5, 0.0]"#, r#""center": [10.0, 10.0]"#)
        .replace(r#""radius": [2.5, 0.6]"#, r#""radius": [0.5, 0.5]"#);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "away.json", &away);
    let out = qlattr(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qlattr(&["subdivide", "--config", s(&cfg), "--out", s(&dir.path().join("c.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_workers_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_qlattr"))
        .args(["systems"])
        .env("QLATTR_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
