//! Ambient diffusion `dX = (V0 − ν∇𝒲)dt + κV dt + √(2ν) dB` by Strang splitting, and its projection
//! through the Reeb map.

use crate::error::{Error, Result};
use crate::fields::{flow_step_hinted, HamiltonianSystem2D, P2};
use crate::graphsim::GraphState;
use crate::pathio::{Ensemble, PathKind, PathRecord, FLAG_DOMAIN_EXIT, FLAG_OK, FLAG_OTHER};
use crate::reeb::Projection;
use crate::rng::{self, StreamRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `𝒲(x) = (1 + |x|²)^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub alpha: f64,
}

impl Confinement {
    pub fn value_r(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(self.alpha)
    }

    /// `d𝒲/dr`
    pub fn deriv_r(&self, r: f64) -> f64 {
        2.0 * self.alpha * r * (1.0 + r * r).powf(self.alpha - 1.0)
    }

    pub fn grad<const N: usize>(&self, x: &[f64; N]) -> [f64; N] {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let k = 2.0 * self.alpha * (1.0 + r2).powf(self.alpha - 1.0);
        x.map(|v| k * v)
    }
}

/// Initial laws. All but `Point` have an L² density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitLaw {
    Point { x: Vec<f64> },
    /// Uniform on `{r_in ≤ |x − center| ≤ r_out}`.
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
    /// Isotropic Gaussian conditioned on `|x − mean| ≤ radius`.
    Gaussian { mean: Vec<f64>, std: f64, radius: f64 },
}

impl InitLaw {
    pub fn has_density(&self) -> bool {
        !matches!(self, Self::Point { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Point { x } => x.len(),
            Self::Annulus { center, .. } => center.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Invalid(format!("initial law has dimension {}, expected {dim}", self.dim())));
        }
        match *self {
            Self::Annulus { r_in, r_out, .. } if !(0.0 <= r_in && r_in < r_out) => Err(Error::Invalid("annulus needs 0 ≤ r_in < r_out".into())),
            Self::Gaussian { std, radius, .. } if !(std > 0.0 && radius > 0.0) => Err(Error::Invalid("gaussian needs std > 0 and radius > 0".into())),
            _ => Ok(()),
        }
    }

    /// One draw in dimension `N`.
    pub fn sample<const N: usize>(&self, r: &mut StreamRng) -> [f64; N] {
        let at = |c: &[f64], off: [f64; N]| std::array::from_fn(|i| c[i] + off[i]);
        match self {
            Self::Point { x } => std::array::from_fn(|i| x[i]),
            Self::Annulus { center, r_in, r_out } => {
                let dir = unit_vector::<N>(r);
                let n = N as f64;
                let u = rng::uniform(r);
                let rad = (r_in.powf(n) + u * (r_out.powf(n) - r_in.powf(n))).powf(1.0 / n);
                at(center, dir.map(|d| rad * d))
            }
            Self::Gaussian { mean, std, radius } => loop {
                let z: [f64; N] = std::array::from_fn(|_| std * rng::normal(r));
                if z.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                    break at(mean, z);
                }
            },
        }
    }
}

fn unit_vector<const N: usize>(r: &mut StreamRng) -> [f64; N] {
    loop {
        let z: [f64; N] = std::array::from_fn(|_| rng::normal(r));
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return z.map(|v| v / n);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientConfig {
    pub kappa: f64,
    pub dt: f64,
    /// Energy tolerance of each exact-flow substep.
    pub flow_tol: f64,
    pub confinement: Option<Confinement>,
}

impl AmbientConfig {
    pub fn new(kappa: f64, dt: f64) -> Self {
        Self { kappa, dt, flow_tol: 1e-9, confinement: None }
    }
}

/// `x + (V0 − ν∇𝒲)(x)·half + √(2ν·half)·ξ`
pub fn half_diffusion(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, x: P2<f64>, half: f64, xi: [f64; 2]) -> P2<f64> {
    let d = drift(sys, cfg, &x);
    let s = (2.0 * sys.nu * half).sqrt();
    [x[0] + d[0] * half + s * xi[0], x[1] + d[1] * half + s * xi[1]]
}

pub(crate) fn drift(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, x: &P2<f64>) -> P2<f64> {
    let mut d = sys.drift(x);
    if let Some(w) = cfg.confinement {
        let g = w.grad(x);
        d[0] -= sys.nu * g[0];
        d[1] -= sys.nu * g[1];
    }
    d
}

pub(crate) fn check_domain(sys: &HamiltonianSystem2D<f64>, x: &P2<f64>) -> Result<()> {
    if sys.domain.contains(x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { x: x.to_vec() })
    }
}

/// One Strang step: half diffusion, exact shear flow for time `κ·dt`, half diffusion.
/// `hint` carries the flow integrator's step size between calls.
pub fn ambient_step_hinted(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, x: P2<f64>, dt: f64, r: &mut StreamRng, hint: &mut Option<f64>) -> Result<P2<f64>> {
    if dt == 0.0 {
        return Ok(x);
    }
    let half = 0.5 * dt;
    let xi = [rng::normal(r), rng::normal(r)];
    let mut y = half_diffusion(sys, cfg, x, half, xi);
    check_domain(sys, &y)?;
    if cfg.kappa > 0.0 {
        let (z, h) = flow_step_hinted(sys, y, cfg.kappa * dt, cfg.flow_tol, *hint)?;
        *hint = Some(h);
        y = z;
    }
    let xi = [rng::normal(r), rng::normal(r)];
    let y = half_diffusion(sys, cfg, y, half, xi);
    check_domain(sys, &y)?;
    Ok(y)
}

pub fn ambient_step(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, x: P2<f64>, dt: f64, r: &mut StreamRng) -> Result<P2<f64>> {
    ambient_step_hinted(sys, cfg, x, dt, r, &mut None)
}

/// Drives `f` with `Some(h)` for each step and `None` at each observation time; steps land on
/// every observation time exactly.
pub(crate) fn for_each_step(dt: f64, times: &[f64], mut f: impl FnMut(Option<f64>) -> Result<()>) -> Result<()> {
    let mut t = 0.0;
    for &target in times {
        while t < target {
            let h = dt.min(target - t);
            f(Some(h))?;
            t = if target - t <= dt { target } else { t + h };
        }
        f(None)?;
    }
    Ok(())
}

fn flag_of(e: &Error) -> u8 {
    match e {
        Error::OutOfDomain { .. } => FLAG_DOMAIN_EXIT,
        _ => FLAG_OTHER,
    }
}

/// Ambient positions at each observation time. Path `i` starts from `init` drawn with stream
/// `(seed, INIT, i)` and moves with stream `(seed, AMBIENT_PATH, i)`.
pub fn simulate_path(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, init: &InitLaw, times: &[f64], seed: u64, i: usize) -> (u8, Vec<P2<f64>>) {
    let mut ri = rng::stream(seed, rng::tag::INIT, i as u64);
    let mut x: P2<f64> = init.sample(&mut ri);
    let mut r = rng::stream(seed, rng::tag::AMBIENT_PATH, i as u64);
    let mut hint = None;
    let mut out = Vec::with_capacity(times.len());
    let res = for_each_step(cfg.dt, times, |step| {
        match step {
            Some(h) => x = ambient_step_hinted(sys, cfg, x, h, &mut r, &mut hint)?,
            None => out.push(x),
        }
        Ok(())
    });
    match res {
        Ok(()) => (FLAG_OK, out),
        Err(e) => (flag_of(&e), out),
    }
}


/// Projected ensemble: paths classified through `proj` at the observation times only.
pub fn simulate_projected(sys: &HamiltonianSystem2D<f64>, proj: &Projection, cfg: &AmbientConfig, init: &InitLaw, times: &[f64], n_paths: usize, seed: u64) -> Ensemble {
    let paths: Vec<PathRecord> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (flag, xs) = simulate_path(sys, cfg, init, times, seed, i);
            let mut out = Vec::with_capacity(xs.len());
            for x in &xs {
                match proj.classify(x) {
                    Ok((loc, h)) => out.push((GraphState { loc, h }.code(), h, 0.0)),
                    Err(_) => return (FLAG_OTHER, out),
                }
            }
            (flag, out)
        })
        .collect();
    Ensemble::from_paths(PathKind::AmbientProjected, seed, times.to_vec(), paths)
}

/// Graph initial state `π(x)`, `x` drawn from `init` with the caller's stream, so a graph ensemble
/// started this way sees exactly the projected ambient initial law.
pub fn projected_init<'a>(proj: &'a Projection, init: &'a InitLaw) -> impl Fn(usize, &mut StreamRng) -> Result<GraphState> + Sync + 'a {
    move |_, r| {
        let x: P2<f64> = init.sample(r);
        let (loc, h) = proj.classify(&x)?;
        Ok(GraphState { loc, h })
    }
}

/// Level `n` with `P[sup_{t≤T} H(X_t) ≥ n] ≤ p` from the supermartingale bound
/// `e^{λT}(E H(X₀) + 1)/(n + 1)`, `λ = sup (A H)/(H + 1)` over a grid of the domain box.
pub fn tightness_level(sys: &HamiltonianSystem2D<f64>, cfg: &AmbientConfig, mean_h0: f64, horizon: f64, p: f64) -> f64 {
    let n = 200;
    let (lo, hi) = (sys.domain.lo, sys.domain.hi);
    let mut lambda: f64 = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let x = [lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64, lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64];
            let g = sys.grad(&x);
            let d = drift(sys, cfg, &x);
            let ah = sys.nu * sys.laplacian_h(&x) + d[0] * g[0] + d[1] * g[1];
            lambda = lambda.max(ah / (sys.h(&x).max(0.0) + 1.0));
        }
    }
    (lambda * horizon).exp() * (mean_h0 + 1.0) / p - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reeb::{build_graph, find_critical_points};
    use crate::stats::ks_two_sample;

    fn radial() -> HamiltonianSystem2D<f64> {
        HamiltonianSystem2D::preset("radial-quadratic", 40.0).unwrap()
    }

    #[test]
    fn brownian_increment() {
        let sys = radial();
        let cfg = AmbientConfig::new(0.0, 0.01);
        let x0 = [0.3, -0.2];
        let n = 100_000;
        let mut r = rng::stream(11, rng::tag::AMBIENT_PATH, 0);
        let d: Vec<[f64; 2]> = (0..n).map(|_| ambient_step(&sys, &cfg, x0, cfg.dt, &mut r).unwrap()).map(|y| [y[0] - x0[0], y[1] - x0[1]]).collect();
        let nf = n as f64;
        for k in 0..2 {
            let m = d.iter().map(|v| v[k]).sum::<f64>() / nf;
            assert!(m.abs() < 3.0 * (cfg.dt / nf).sqrt(), "mean {m}");
            let v = d.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / (nf - 1.0);
            assert!((v - cfg.dt).abs() < 3.0 * cfg.dt * (2.0 / nf).sqrt(), "var {v}");
        }
        let c = d.iter().map(|v| v[0] * v[1]).sum::<f64>() / nf;
        assert!(c.abs() < 3.0 * cfg.dt / nf.sqrt());
    }

    #[test]
    fn zero_duration_and_pure_flow() {
        let sys = HamiltonianSystem2D::preset("duffing-well", 10.0).unwrap();
        let mut r = rng::stream(1, rng::tag::AMBIENT_PATH, 0);
        let cfg = AmbientConfig::new(50.0, 0.01);
        assert_eq!(ambient_step(&sys, &cfg, [1.5, 0.0], 0.0, &mut r).unwrap(), [1.5, 0.0]);
        let mut frozen = sys.clone();
        frozen.nu = 0.0;
        let x = [1.5, 0.2];
        let y = ambient_step(&frozen, &cfg, x, 0.01, &mut r).unwrap();
        assert!((frozen.h(&y) - frozen.h(&x)).abs() < 1e-8);
        assert!((y[0] - x[0]).abs() + (y[1] - x[1]).abs() > 1e-3);
    }

    #[test]
    fn out_of_domain_is_flagged() {
        let sys = HamiltonianSystem2D::preset("radial-quadratic", 0.1).unwrap();
        let init = InitLaw::Point { x: vec![1.2, 0.0] };
        let (flag, out) = simulate_path(&sys, &AmbientConfig::new(1.0, 0.01), &init, &[50.0], 3, 0);
        assert_eq!(flag, FLAG_DOMAIN_EXIT);
        assert!(out.is_empty());
    }

    #[test]
    fn init_samplers() {
        let mut r = rng::stream(2, rng::tag::INIT, 0);
        let ann = InitLaw::Annulus { center: vec![0.0, 0.0], r_in: 1.0, r_out: 2.0 };
        let n = 50_000;
        let rs: Vec<f64> = (0..n).map(|_| ann.sample::<2>(&mut r)).map(|x| (x[0] * x[0] + x[1] * x[1]).sqrt()).collect();
        assert!(rs.iter().all(|&x| (1.0..=2.0).contains(&x)));
        // E r = (2/3)(r₂³ − r₁³)/(r₂² − r₁²) for the uniform annulus
        let m = rs.iter().sum::<f64>() / n as f64;
        assert!((m - 14.0 / 9.0).abs() < 0.01);
        let g = InitLaw::Gaussian { mean: vec![1.0, 0.0, 0.0], std: 1.0, radius: 0.5 };
        for _ in 0..1000 {
            let x = g.sample::<3>(&mut r);
            assert!(((x[0] - 1.0).powi(2) + x[1] * x[1] + x[2] * x[2]).sqrt() <= 0.5);
        }
        assert!(!InitLaw::Point { x: vec![0.0, 0.0] }.has_density());
        assert!(ann.validate(3).is_err());
    }

    #[test]
    fn radial_law_is_kappa_invariant() {
        let sys = radial();
        let crit = find_critical_points(&sys, 32).unwrap();
        let (_, proj) = build_graph(&sys, &crit).unwrap();
        let init = InitLaw::Annulus { center: vec![0.0, 0.0], r_in: 1.0, r_out: 1.5 };
        let times = [1.0];
        let a = simulate_projected(&sys, &proj, &AmbientConfig::new(0.0, 0.01), &init, &times, 4000, 5);
        let b = simulate_projected(&sys, &proj, &AmbientConfig::new(100.0, 0.01), &init, &times, 4000, 6);
        let ha: Vec<f64> = a.samples(0).iter().map(|s| s.1).collect();
        let hb: Vec<f64> = b.samples(0).iter().map(|s| s.1).collect();
        assert_eq!(ha.len(), 4000);
        let ks = ks_two_sample(&ha, &hb).unwrap();
        assert!(ks.passes(), "{ks:?}");
    }

    #[test]
    fn energy_increments_flat_in_kappa() {
        let sys = HamiltonianSystem2D::preset("duffing-well", 10.0).unwrap();
        let x = [1.3, 0.4];
        let n = 20_000;
        let dt = 0.01;
        let stats: Vec<(f64, f64)> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&k| {
                let cfg = AmbientConfig::new(k, dt);
                let mut r = rng::stream(9, rng::tag::AMBIENT_PATH, k as u64);
                let d: Vec<f64> = (0..n).map(|_| sys.h(&ambient_step(&sys, &cfg, x, dt, &mut r).unwrap()) - sys.h(&x)).collect();
                let m = d.iter().sum::<f64>() / n as f64;
                let v = d.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64;
                (m, v)
            })
            .collect();
        for &(m, v) in &stats {
            assert!(m.abs() < 5.0 * dt && v < 5.0 * dt, "{stats:?}");
        }
        let vs: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let spread = vs.iter().cloned().fold(f64::MIN, f64::max) / vs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 2.0, "{stats:?}");
    }

    #[test]
    fn tightness_level_radial() {
        let sys = radial();
        let cfg = AmbientConfig::new(10.0, 0.01);
        // AH = 1 for ν = ½, so λ = sup 1/(H + 1) = 1
        let n = tightness_level(&sys, &cfg, 1.0, 1.0, 1e-4);
        assert!((n - (1f64.exp() * 2.0e4 - 1.0)).abs() < 1.0);
    }
}
