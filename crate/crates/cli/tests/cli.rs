use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const REDUCE_X2: &str = "\
command = reduce
problem.n = 1
problem.p = 3
problem.V = x^2
problem.K = 1
problem.epsilon = 0.05
numerics.search_lower = -1
numerics.search_upper = 1
numerics.multistart = 4
";

const HOMOCLINIC: &str = "\
command = homoclinic
problem.a = 2*sech(t)^2
problem.sigma = 2
numerics.half_width = 20
numerics.intervals = 2048
numerics.steps = 20
numerics.ds = 0.02
output.trajectory_stride = 10
";

fn run(config: &str, dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{out}.conf"));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_concentra"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .args(extra)
        .env_remove("CONCENTRA_CACHE")
        .output()
        .unwrap()
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack: Vec<PathBuf> = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn manifest(root: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(root.join("manifest.json")).unwrap()).unwrap()
}

fn manifest_paths(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = manifest(root)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_string())
        .collect();
    v.push("manifest.json".into());
    v.sort();
    v
}

#[test]
fn reduce_quadratic_potential_gives_one_point() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(REDUCE_X2, tmp.path(), "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("out/points.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    let xi: f64 = rows[0].split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.05 * xi).abs() <= 0.05);
    assert_eq!(rows[0].split(',').nth(6), Some("0"));
}

#[test]
fn bad_exponent_exits_with_validation_status() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("command = reduce\nproblem.p = 0.5\n", tmp.path(), "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("problem.p"), "{err}");
    assert!(!tmp.path().join("out").exists(), "validation must fail before any output");
}

#[test]
fn unknown_key_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("command = reduce\nnumerics.multistrat = 3\n", tmp.path(), "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerics.multistrat"));
}

#[test]
fn homoclinic_writes_branch_and_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(HOMOCLINIC, tmp.path(), "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let root = tmp.path().join("out");
    let branch = fs::read_to_string(root.join("branch.csv")).unwrap();
    assert_eq!(branch.lines().count(), 22, "{branch}");
    assert_eq!(
        files_under(&root),
        vec![
            "bifurcation.csv",
            "branch.csv",
            "manifest.json",
            "trajectories/point000.txt",
            "trajectories/point010.txt",
            "trajectories/point020.txt"
        ]
    );
    let summary = fs::read_to_string(root.join("bifurcation.csv")).unwrap();
    let fields: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let l0: f64 = fields[0].parse().unwrap();
    assert!((l0 + 1.0).abs() < 1e-4);
    assert_eq!(fields[2], "-1");
}

#[test]
fn runs_are_deterministic_and_manifests_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cc = "command = cc\nnumerics.profiles = 2\nnumerics.seed = 5\n";
    let cases = [(REDUCE_X2, "r"), (HOMOCLINIC, "h"), (cc, "c")];
    for (cfg, name) in cases {
        let a = format!("{name}1");
        let b = format!("{name}2");
        assert!(run(cfg, tmp.path(), &a, &["--threads", "1"]).status.success());
        assert!(run(cfg, tmp.path(), &b, &["--threads", "3"]).status.success());
        let (ra, rb) = (tmp.path().join(&a), tmp.path().join(&b));
        assert_eq!(files_under(&ra), manifest_paths(&ra));
        assert_eq!(files_under(&ra), files_under(&rb));
        for f in files_under(&ra).iter().filter(|f| f.ends_with(".csv") || f.ends_with(".txt")) {
            assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{name}: {f}");
        }
        assert_eq!(manifest(&ra)["artifacts"], manifest(&rb)["artifacts"]);
        assert_eq!(manifest(&ra)["config_sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn solver_failure_exits_three_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "command = constants\nproblem.quantity = brezis_nirenberg\nproblem.n = 4\nproblem.lambda = 100\n";
    let o = run(cfg, tmp.path(), "out", &[]);
    assert_eq!(o.status.code(), Some(3));
    let rec: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["kind"], "domain");
    let root = tmp.path().join("out");
    let stored: Value = serde_json::from_str(&fs::read_to_string(root.join("error.json")).unwrap()).unwrap();
    assert_eq!(stored, rec);
    assert_eq!(manifest(&root)["status"], "failed");
    assert_eq!(files_under(&root), manifest_paths(&root));
}

#[test]
fn rerun_into_same_directory_and_foreign_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "command = ground-state\nproblem.n = 1\nproblem.p = 3\n";
    assert!(run(cfg, tmp.path(), "out", &[]).status.success());
    assert!(run(cfg, tmp.path(), "out", &[]).status.success());
    let root = tmp.path().join("out");
    assert_eq!(files_under(&root), vec!["ground_state.txt", "manifest.json"]);
    fs::write(root.join("notes.txt"), "mine").unwrap();
    let o = run(cfg, tmp.path(), "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(root.join("notes.txt").exists());
}

#[test]
fn ground_state_uses_fixture_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let cfg_path = tmp.path().join("gs.conf");
    fs::write(&cfg_path, "command = ground-state\nproblem.n = 2\nproblem.p = 3\n").unwrap();
    for out in ["a", "b"] {
        let o = Command::new(env!("CARGO_BIN_EXE_concentra"))
            .args(["--config".as_ref(), cfg_path.as_os_str(), "--out".as_ref(), tmp.path().join(out).as_os_str()])
            .env("CONCENTRA_CACHE", &cache)
            .output()
            .unwrap();
        assert!(o.status.success());
    }
    assert_eq!(files_under(&cache).len(), 1);
    assert_eq!(
        fs::read(tmp.path().join("a/ground_state.txt")).unwrap(),
        fs::read(tmp.path().join("b/ground_state.txt")).unwrap()
    );
}
