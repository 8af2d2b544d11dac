use std::path::Path;
use std::process::{Command, Output};

use fdot::RunManifest;

fn fdot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdot")).args(args).output().unwrap()
}

fn run_bench(dir: &Path, solver: &str) -> Output {
    fdot(&[
        "run",
        "bench_1d",
        "--out",
        dir.to_str().unwrap(),
        "--solver",
        solver,
        "--max-iters",
        "400",
    ])
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn bench_run_succeeds_and_reruns_identically() {
    for solver in ["drs", "cp"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = run_bench(a.path(), solver);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(run_bench(b.path(), solver).status.success());
        let files = csv_files(a.path());
        assert_eq!(files, csv_files(b.path()));
        assert!(files.len() > 30);
        for f in files {
            let x = std::fs::read(a.path().join(&f)).unwrap();
            let y = std::fs::read(b.path().join(&f)).unwrap();
            assert!(x == y, "{solver}: {f} differs between runs");
        }
    }
}

#[test]
fn outputs_are_consistent_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_bench(dir.path(), "drs").status.success());
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.solver, "drs");
    assert_eq!(manifest.iterations, 400);
    assert_eq!(manifest.config.solver.max_iters, 400);
    for f in &manifest.files {
        assert!(dir.path().join(&f.path).is_file(), "{} listed but missing", f.path);
    }

    let mass = std::fs::read_to_string(dir.path().join("mass.csv")).unwrap();
    let mut lines = mass.lines();
    assert_eq!(lines.next(), Some("k,mass"));
    let masses: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(masses.len(), 11);
    assert!(masses.iter().all(|m| (m - 1.0).abs() <= 1e-6), "{masses:?}");

    let d = manifest.diagram.diagram().unwrap();
    for k in 0..=10 {
        let text = std::fs::read_to_string(dir.path().join(format!("fd_scatter_t{k}.csv"))).unwrap();
        for l in text.lines().skip(1) {
            let v: Vec<f64> = l.split(',').map(|t| t.parse().unwrap()).collect();
            assert_eq!(v[2], d.q(v[0]));
            if (1..10).contains(&k) {
                assert!(v[1] <= v[2] + 1e-6 * d.critical_point().1 + manifest.fd_violation * d.critical_point().1);
            }
        }
    }

    let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next(), Some(fdot::output::CONVERGENCE_HEADER));
    assert_eq!(conv.lines().count(), 401);
}

#[test]
fn unknown_solver_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_bench(dir.path(), "newton");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.name"));

    let cfg = dir.path().join("bad.json");
    let text = fdot::config::BUNDLED[0].1.replace("\"drs\"", "\"admm\"");
    std::fs::write(&cfg, text).unwrap();
    let out = fdot(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.name"));
}

#[test]
fn validation_and_io_exit_codes() {
    let out = fdot(&["validate", "bench_1d"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");

    let out = fdot(&["validate", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mass.json");
    let text = fdot::config::BUNDLED[0]
        .1
        .replace("\"center\": [0.8]", "\"center\": [1.8]");
    std::fs::write(&cfg, text).unwrap();
    let out = fdot(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // output path below a regular file cannot be created
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = fdot(&[
        "run",
        "bench_1d",
        "--max-iters",
        "2",
        "--out",
        blocker.join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn norm_estimate_and_version() {
    let out = fdot(&["norm-estimate", "--cells", "2", "--steps", "2"]);
    assert!(out.status.success());
    let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(v > 0.0 && v.is_finite());
    let out = fdot(&["norm-estimate", "bench_1d", "--iters", "50"]);
    assert!(out.status.success());
    let out = fdot(&["norm-estimate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fdot(&["version"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("fdot "));
}

#[test]
fn raw_dump_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdot(&[
        "run",
        "bench_1d",
        "--max-iters",
        "20",
        "--raw",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let raw = std::fs::read(dir.path().join("rho.f64")).unwrap();
    let vals: Vec<f64> = raw
        .chunks(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(vals.len(), 11 * 100);
    let slice = fdot::output::read_matrix(&dir.path().join("rho_t4.csv")).unwrap();
    for (i, row) in slice.iter().enumerate() {
        assert_eq!(row[0].to_bits(), vals[4 * 100 + i].to_bits());
    }
}
