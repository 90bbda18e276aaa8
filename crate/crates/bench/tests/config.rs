use fwlab_bench::config::{preset, ExperimentConfig, Expect};

#[test]
fn default_round_trips_through_toml() {
    for name in ["duffing", "radial"] {
        let c = preset(name).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn omitted_keys_take_defaults() {
    let c = ExperimentConfig::from_toml("seed = 7\n[ambient]\nkappa = [5.0]\n").unwrap();
    assert_eq!(c.seed, 7);
    assert_eq!(c.ambient.kappa, vec![5.0]);
    assert_eq!(c.ambient.dt, ExperimentConfig::default().ambient.dt);
    assert_eq!(c.experiment.expect, Expect::Decreasing);
}

#[test]
fn unknown_keys_are_rejected() {
    for text in ["sede = 1\n", "[ambient]\nkapa = [1.0]\n", "[experiment.init]\nkind = \"point\"\nx = [0.0, 1.0]\ny = 2\n", "[flow.noise]\nmodes = 3\nfoo = 1\n", "[nonsense]\n"] {
        assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
    }
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        "[system]\nnu = -1.0\n",
        "[ambient]\nkappa = [-1.0]\n",
        "[experiment]\ntimes = [1.0, 0.5]\n",
        "[experiment.init]\nkind = \"point\"\nx = [0.0, 1.0, 2.0]\n",
        "[system]\npotential = \"x1^2 + x2^2\"\n",
        "[system]\npotential = \"x1^2 +\"\ndomain = [[-1.0, -1.0], [1.0, 1.0]]\n",
    ] {
        assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
    }
}

#[test]
fn expression_potential_with_domain() {
    let c = ExperimentConfig::from_toml("[system]\npotential = \"0.5*(x1^2 + x2^2)\"\ndomain = [[-5.0, -5.0], [5.0, 5.0]]\n").unwrap();
    let sys = c.system().unwrap();
    assert!((sys.h(&[1.0, 2.0]) - 2.5).abs() < 1e-14);
}

#[test]
fn hash_tracks_content() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn readme_configuration_block_loads() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let start = readme.find("```toml\n").unwrap() + 8;
    let len = readme[start..].find("```").unwrap();
    let cfg = ExperimentConfig::from_toml(&readme[start..start + len]).unwrap();
    assert_eq!(cfg.flow.pairs.len(), 1);
    assert_eq!(cfg.system, ExperimentConfig::default().system);
}
