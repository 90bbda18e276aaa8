use fwlab_bench::config::{preset, ExperimentConfig};
use fwlab_bench::manifest::{Manifest, MANIFEST_FILE};
use fwlab_bench::plot::{markers, series_from_csv};
use fwlab_bench::{replay, run, Command};
use std::process::Command as Proc;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.system.h_max = 10.0;
    c.grid.nodes = 80;
    c.ambient.kappa = vec![1.0, 20.0];
    c.experiment.n_paths = 1500;
    c.experiment.times = vec![0.25, 0.5];
    c.experiment.max_distance = 1.0;
    c
}

#[test]
fn compare_writes_reports_and_replays_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(Command::Compare, &small(), &a, 3).unwrap();
    assert_eq!(out.manifest.threads, 3);
    for f in ["graph.bin", "graph_marginals.csv", "ambient_k1.bin", "ambient_k20_marginals.csv", "distances.csv", "distances_per_edge.csv", "convergence.svg", "checks.csv"] {
        assert!(a.join(f).exists(), "{f}");
        assert!(out.manifest.outputs.iter().any(|e| e.path == f), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("distances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let svg = std::fs::read_to_string(a.join("convergence.svg")).unwrap();
    let from_csv: Vec<(f64, f64)> = series_from_csv(&csv, "kappa", "combined", Some("t")).unwrap().into_iter().flat_map(|s| s.points).collect();
    assert_eq!(markers(&svg), from_csv);

    let (again, diff) = replay(&a.join(MANIFEST_FILE), &b, 1).unwrap();
    assert!(diff.is_empty(), "{diff:?}");
    assert_eq!(again.manifest.config_hash, out.manifest.config_hash);
    assert_eq!(again.checks, out.checks);
}

#[test]
fn empty_sweep_reports_the_graph_law_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.ambient.kappa.clear();
    let out = run(Command::Compare, &c, dir.path(), 1).unwrap();
    assert!(dir.path().join("graph.bin").exists());
    assert!(!dir.path().join("distances.csv").exists());
    assert_eq!(out.checks.len(), 1);
}

#[test]
fn coefficient_plots_match_their_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(Command::Coeffs, &small(), dir.path(), 1).unwrap();
    assert!(out.passed());
    let csv = std::fs::read_to_string(dir.path().join("coeffs.csv")).unwrap();
    for (svg, y) in [("coeffs_T.svg", "T"), ("coeffs_sigma2.svg", "sigma2")] {
        let pts: Vec<(f64, f64)> = series_from_csv(&csv, "h", y, Some("edge")).unwrap().into_iter().flat_map(|s| s.points).collect();
        assert_eq!(markers(&std::fs::read_to_string(dir.path().join(svg)).unwrap()), pts);
    }
    let tr: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("transmissions.json")).unwrap()).unwrap();
    assert_eq!(tr.as_array().unwrap().len(), 3);
}

#[test]
fn failures_still_leave_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.system.critical_grid = 16;
    c.system.potential = "x1^4".into();
    c.system.domain = Some([[-1.0, -1.0], [1.0, 1.0]]);
    assert!(run(Command::BuildGraph, &c, dir.path(), 1).is_err());
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(m.error.is_some());
    assert_eq!(m.passed, None);
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run(Command::BuildGraph, &small(), dir.path(), 1).unwrap();
    let p = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).unwrap().replace("\"seed\": 20240601", "\"seed\": 1");
    std::fs::write(&p, text).unwrap();
    assert!(Manifest::load(&p).is_err());
}

#[test]
fn cli_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_fwlab");
    let dir = tempfile::tempdir().unwrap();
    let ok = Proc::new(exe).args(["--preset", "radial", "--seed", "5", "--out"]).arg(dir.path()).arg("build-graph").output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let m = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.config, { let mut c = preset("radial").unwrap(); c.seed = 5; c });

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[ambient]\nkapa = [1.0]\n").unwrap();
    let err = Proc::new(exe).arg("--config").arg(&bad).arg("show-config").output().unwrap();
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("kapa"));

    let shown = Proc::new(exe).args(["--kappa", "3,4", "--alpha", "3", "show-config"]).output().unwrap();
    let c = ExperimentConfig::from_toml(&String::from_utf8(shown.stdout).unwrap()).unwrap();
    assert_eq!(c.ambient.kappa, vec![3.0, 4.0]);
    assert_eq!(c.book.alpha, 3.0);

    let mut strict = small();
    strict.experiment.max_distance = 0.0;
    let cfg = dir.path().join("strict.toml");
    std::fs::write(&cfg, strict.to_toml()).unwrap();
    let fail = Proc::new(exe).arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("f")).arg("compare").output().unwrap();
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stdout).contains("FAIL"));
}
