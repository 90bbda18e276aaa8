//! Experiment configuration. Every table rejects unknown keys; omitted keys take the defaults
//! below, and the resolved configuration is what the manifest records and hashes.

use anyhow::{bail, Context, Result};
use fwlab::ambient::{AmbientConfig, Confinement, InitLaw};
use fwlab::book3d::weights::A2Grid;
use fwlab::coeffs::{GridSpec, TransmissionOptions};
use fwlab::fields::{Drift, HamiltonianSystem2D, Potential, Rect};
use fwlab::flows::{Bump, FourierPreset};
use fwlab::graphsim::Scheme;
use fwlab::Hamiltonian;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemSection,
    pub grid: GridSection,
    pub ambient: AmbientSection,
    pub graph: GraphSection,
    pub experiment: RunSection,
    pub validate: ValidateSection,
    pub book: BookSection,
    pub flow: FlowSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            system: SystemSection::default(),
            grid: GridSection::default(),
            ambient: AmbientSection::default(),
            graph: GraphSection::default(),
            experiment: RunSection::default(),
            validate: ValidateSection::default(),
            book: BookSection::default(),
            flow: FlowSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Preset name (`radial-quadratic`, `duffing-well`) or an expression in `x1, x2`.
    pub potential: String,
    /// Components of `V0`, as expressions.
    pub drift: [String; 2],
    pub nu: f64,
    pub h_max: f64,
    /// `[[x1_lo, x2_lo], [x1_hi, x2_hi]]`; required for expression potentials.
    pub domain: Option<[[f64; 2]; 2]>,
    /// Seed grid of the critical-point search.
    pub critical_grid: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self { potential: "duffing-well".into(), drift: ["0".into(), "0".into()], nu: 0.5, h_max: 40.0, domain: None, critical_grid: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nodes: usize,
    pub tol: f64,
    pub stretch: Option<f64>,
    pub window: f64,
    pub rel_tol: f64,
    pub eps_alpha: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let t = TransmissionOptions::default();
        Self { nodes: 200, tol: 1e-10, stretch: None, window: t.window, rel_tol: t.rel_tol, eps_alpha: t.eps_alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmbientSection {
    pub kappa: Vec<f64>,
    pub dt: f64,
    pub flow_tol: f64,
}

impl Default for AmbientSection {
    fn default() -> Self {
        Self { kappa: vec![1.0, 10.0, 100.0], dt: 1e-3, flow_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub dt: f64,
    pub kappa_cfl: f64,
    /// Defaults to `dt/20`.
    pub floor: Option<f64>,
    pub substep: bool,
    pub bridge: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { dt: 1e-3, kappa_cfl: 0.05, floor: None, substep: true, bridge: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub init: InitLaw,
    /// Largest combined distance accepted at the largest `κ`.
    pub max_distance: f64,
    pub expect: Expect,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { n_paths: 50_000, times: vec![0.5, 1.0], init: outer_annulus(), max_distance: 0.05, expect: Expect::Decreasing }
    }
}

/// What `compare` asserts about the ambient-to-graph distances across the κ sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    /// Strictly decreasing in κ, and below `max_distance` at the largest κ.
    Decreasing,
    /// Every κ indistinguishable from the graph law and from the first κ at the 99% level.
    Flat,
}

fn outer_annulus() -> InitLaw {
    InitLaw::Annulus { center: vec![0.0, 0.0], r_in: 1.5, r_out: 1.7 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub radial_nodes: usize,
    pub radial_h_max: f64,
    pub duffing_nodes: usize,
    pub duffing_h_max: f64,
    pub decades: f64,
    pub moment_paths: usize,
    pub moment_times: Vec<f64>,
    pub moment_kappa: f64,
    pub flux_trials: usize,
    pub flux_eps: f64,
    pub flux_dt: f64,
    pub book_points: usize,
    pub book_tol: f64,
    pub a2: A2Grid,
    pub contraction_samples: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            radial_nodes: 200,
            radial_h_max: 40.0,
            duffing_nodes: 600,
            duffing_h_max: 20.0,
            decades: 3.0,
            moment_paths: 20_000,
            moment_times: vec![0.5, 1.0, 2.0],
            moment_kappa: 10.0,
            flux_trials: 10_000,
            flux_eps: 0.02,
            flux_dt: 1e-4,
            book_points: 10,
            book_tol: 1e-12,
            a2: A2Grid::default(),
            contraction_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BookSection {
    /// Exponent of `𝒲(x) = (1 + |x|²)^α`.
    pub alpha: f64,
    pub kappa: Vec<f64>,
    pub ambient_dt: f64,
    pub flow_tol: f64,
    pub radius: f64,
    pub dt: f64,
    pub kappa_cfl: f64,
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub init: InitLaw,
    pub max_distance: f64,
    /// Binding visits counted for the page-uniformity test.
    pub binding_visits: usize,
}

impl Default for BookSection {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            kappa: vec![100.0],
            ambient_dt: 1e-3,
            flow_tol: 1e-9,
            radius: 20.0,
            dt: 5e-4,
            kappa_cfl: 0.01,
            n_paths: 50_000,
            times: vec![0.25, 1.0],
            init: InitLaw::Gaussian { mean: vec![0.8, 0.3, 0.2], std: 0.3, radius: 0.6 },
            max_distance: 0.07,
            binding_visits: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub noise: FourierPreset,
    pub particles: usize,
    pub reps: usize,
    pub kappa: f64,
    pub times: Vec<f64>,
    pub init: InitLaw,
    pub h_max: f64,
    pub nodes: usize,
    pub pairs: Vec<[Bump; 2]>,
    /// Two `(edge, h)` states for the increment-correlation check.
    pub increment_states: [(usize, f64); 2],
    pub increment_draws: usize,
    pub margin_grid: usize,
    pub sigmas: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let well = |e| Bump { edge: e, center: 0.15, width: 0.1 };
        let near = Bump { edge: 2, center: 0.8, width: 0.5 };
        let far = Bump { edge: 2, center: 2.0, width: 1.0 };
        Self {
            noise: FourierPreset::default(),
            particles: 2,
            reps: 5000,
            kappa: 100.0,
            times: vec![0.5, 1.0],
            init: outer_annulus(),
            h_max: 40.0,
            nodes: 120,
            pairs: vec![[near, near], [near, far], [well(0), well(1)], [well(0), near]],
            increment_states: [(2, 1.0), (2, 1.2)],
            increment_draws: 100_000,
            margin_grid: 64,
            sigmas: 3.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing configuration")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    pub fn check(&self) -> Result<()> {
        let positive = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { bail!("{name} must be positive, got {v}") };
        positive("system.nu", self.system.nu)?;
        positive("system.h_max", self.system.h_max)?;
        positive("ambient.dt", self.ambient.dt)?;
        positive("graph.dt", self.graph.dt)?;
        positive("book.dt", self.book.dt)?;
        positive("book.ambient_dt", self.book.ambient_dt)?;
        if self.ambient.kappa.iter().any(|k| !(*k >= 0.0)) || self.book.kappa.iter().any(|k| !(*k >= 0.0)) {
            bail!("κ values must be nonnegative");
        }
        for (name, t) in [("experiment.times", &self.experiment.times), ("book.times", &self.book.times), ("flow.times", &self.flow.times), ("validate.moment_times", &self.validate.moment_times)] {
            if t.is_empty() || t.iter().any(|v| !(*v >= 0.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
                bail!("{name} must be a nonempty increasing list of nonnegative times");
            }
        }
        if self.grid.nodes < 16 {
            bail!("grid.nodes must be at least 16");
        }
        if self.system.critical_grid < 16 {
            bail!("system.critical_grid must be at least 16");
        }
        if self.flow.particles == 0 {
            bail!("flow.particles must be at least 1");
        }
        self.experiment.init.validate(2)?;
        self.flow.init.validate(2)?;
        self.book.init.validate(3)?;
        self.system()?;
        Ok(())
    }

    pub fn system(&self) -> Result<Hamiltonian> {
        system_from(&self.system)
    }

    pub fn grid_spec(&self, h_max: f64) -> GridSpec {
        let mut g = GridSpec::new(self.grid.nodes, h_max);
        g.tol = self.grid.tol;
        if let Some(s) = self.grid.stretch {
            g.stretch = s;
        }
        g
    }

    pub fn transmission(&self) -> TransmissionOptions {
        TransmissionOptions { window: self.grid.window, rel_tol: self.grid.rel_tol, eps_alpha: self.grid.eps_alpha }
    }

    pub fn scheme(&self) -> Scheme {
        let g = &self.graph;
        let mut s = Scheme::new(g.dt);
        s.kappa_cfl = g.kappa_cfl;
        if let Some(f) = g.floor {
            s.floor = f;
        }
        s.substep = g.substep;
        s.bridge = g.bridge;
        s
    }

    pub fn ambient(&self, kappa: f64) -> AmbientConfig {
        let mut a = AmbientConfig::new(kappa, self.ambient.dt);
        a.flow_tol = self.ambient.flow_tol;
        a
    }

    pub fn confinement(&self) -> Confinement {
        Confinement { alpha: self.book.alpha }
    }
}

pub fn system_from(s: &SystemSection) -> Result<Hamiltonian> {
    let mut sys = match (s.domain, HamiltonianSystem2D::preset(s.potential.trim(), s.h_max)) {
        (None, Some(p)) => p,
        (Some(d), _) => {
            if !(d[0][0] < d[1][0] && d[0][1] < d[1][1]) {
                bail!("system.domain must list the lower corner first");
            }
            HamiltonianSystem2D::new(Potential::parse(&s.potential)?, Drift::Zero, 0.5, Rect { lo: d[0], hi: d[1] })
        }
        (None, None) => bail!("system.domain is required for the expression potential `{}`", s.potential),
    };
    sys.nu = s.nu;
    sys.v0 = Drift::parse(&s.drift[0], &s.drift[1])?;
    Ok(sys)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Configuration of the radial exact-averaging run: `Y₀ = 1`, `κ ∈ {0, 100}`.
pub fn radial_preset() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.system.potential = "radial-quadratic".into();
    c.system.critical_grid = 16;
    c.ambient.kappa = vec![0.0, 100.0];
    c.experiment.n_paths = 100_000;
    c.experiment.times = vec![1.0];
    c.experiment.init = InitLaw::Point { x: vec![std::f64::consts::SQRT_2, 0.0] };
    c.experiment.expect = Expect::Flat;
    c
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "duffing" => Some(ExperimentConfig::default()),
        "radial" => Some(radial_preset()),
        _ => None,
    }
}
