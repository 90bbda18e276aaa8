//! n-point motions coupled by a common vector-field noise `Σ_k U_k dW^k`: ambient particles in the
//! plane, and correlated diffusions on the Reeb graph driven by the orbit averages `Ũ_k`.
//!
//! Covariance convention: `Q(x, y) = Σ_k U_k(x) U_k(y)ᵀ` is the covariance *rate* of the common
//! noise, so a particle receives `Q(x, x)dt` from it and `2νI − Q(x, x)` from its own Brownian
//! motion. On the graph the pair rate is `Q̃(y₁, y₂) = Σ_k Ũ_k(y₁)Ũ_k(y₂)` and the own part is
//! `σ̃² = σ² − Q̃(y, y)`.

use crate::ambient::{self, AmbientConfig, InitLaw};
use crate::coeffs::EdgeCoefficientTable;
use crate::error::{Error, Result};
use crate::fields::{flow_step_hinted, orbit_average, trace_orbit, HamiltonianSystem2D, Orbit, OrbitOptions, P2};
use crate::graphsim::{GraphModel, GraphSim, GraphState};
use crate::numerics::interp::Pchip;
use crate::pathio::{Ensemble, PathKind, PathRecord, FLAG_DOMAIN_EXIT, FLAG_OK, FLAG_OTHER, FLAG_RANGE};
use crate::reeb::{GraphLoc, Projection};
use crate::rng::{self, StreamRng};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

type Sys = HamiltonianSystem2D<f64>;
type M2 = [[f64; 2]; 2];

/// One noise field `U_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseField {
    /// `a·cos(⟨ω,x⟩ + φ)·ω⊥/|ω|`, divergence free.
    Solenoidal { amp: f64, omega: [f64; 2], phase: f64 },
    /// `a·cos(⟨ω,x⟩ + φ)·ω/|ω|`, a gradient field.
    Gradient { amp: f64, omega: [f64; 2], phase: f64 },
    Constant { u: [f64; 2] },
}

impl NoiseField {
    /// `(g, s, ω, e)` with `U = g·e` and `∇g = s·ω`.
    fn parts(&self, x: &P2<f64>) -> (f64, f64, P2<f64>, P2<f64>) {
        match *self {
            Self::Solenoidal { amp, omega, phase } | Self::Gradient { amp, omega, phase } => {
                let n = omega[0].hypot(omega[1]);
                let arg = omega[0] * x[0] + omega[1] * x[1] + phase;
                let e = if matches!(self, Self::Solenoidal { .. }) { [-omega[1], omega[0]] } else { omega };
                (amp * arg.cos() / n, -amp * arg.sin() / n, omega, e)
            }
            Self::Constant { u } => (1.0, 0.0, [0.0, 0.0], u),
        }
    }

    pub fn eval(&self, x: &P2<f64>) -> P2<f64> {
        let (g, _, _, e) = self.parts(x);
        [g * e[0], g * e[1]]
    }

    /// `DU[i][j] = ∂_j U_i`.
    pub fn jacobian(&self, x: &P2<f64>) -> M2 {
        let (_, s, w, e) = self.parts(x);
        [[e[0] * s * w[0], e[0] * s * w[1]], [e[1] * s * w[0], e[1] * s * w[1]]]
    }

    /// `(DU)U = g·s·⟨ω, e⟩·e`, exactly zero for the solenoidal and constant fields.
    pub fn self_derivative(&self, x: &P2<f64>) -> P2<f64> {
        let (g, s, w, e) = self.parts(x);
        let k = g * s * (w[0] * e[0] + w[1] * e[1]);
        [k * e[0], k * e[1]]
    }

    pub fn divergence(&self, x: &P2<f64>) -> f64 {
        let j = self.jacobian(x);
        j[0][0] + j[1][1]
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Solenoidal { amp, .. } | Self::Gradient { amp, .. } => amp == 0.0,
            Self::Constant { u } => u == [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FourierKind {
    Solenoidal,
    Gradient,
}

/// Random Fourier family: `modes` fields with `|ω|` uniform in `[k_min, k_max]`, uniform direction
/// and phase, and equal amplitudes `amplitude/√modes`, so that `|Q(x,x)| ≤ amplitude²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierPreset {
    pub kind: FourierKind,
    pub modes: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub amplitude: f64,
    pub delta: f64,
}

impl Default for FourierPreset {
    fn default() -> Self {
        Self { kind: FourierKind::Gradient, modes: 8, k_min: 0.5, k_max: 2.0, amplitude: 0.85, delta: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub fields: Vec<NoiseField>,
    /// Pure-diffusion margin.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginReport {
    /// Largest eigenvalue of `Q(x, x)` over the grid.
    pub sup: f64,
    /// `(1 − δ)·2ν`
    pub bound: f64,
}

impl MarginReport {
    pub fn ok(&self) -> bool {
        self.sup <= self.bound
    }
}

impl NoiseModel {
    /// Draws the preset family from stream `(seed, NOISE_MODEL, 0)`.
    pub fn fourier(p: &FourierPreset, seed: u64) -> Result<Self> {
        if !(p.delta > 0.0 && p.delta <= 1.0) {
            return Err(Error::Invalid(format!("delta {} outside (0, 1]", p.delta)));
        }
        if !(p.k_min > 0.0 && p.k_min <= p.k_max && p.amplitude >= 0.0) {
            return Err(Error::Invalid("fourier preset needs 0 < k_min ≤ k_max and amplitude ≥ 0".into()));
        }
        let mut r = rng::stream(seed, rng::tag::NOISE_MODEL, 0);
        let amp = if p.modes > 0 { p.amplitude / (p.modes as f64).sqrt() } else { 0.0 };
        let fields = (0..p.modes)
            .map(|_| {
                let k = p.k_min + (p.k_max - p.k_min) * rng::uniform(&mut r);
                let ang = std::f64::consts::TAU * rng::uniform(&mut r);
                let phase = std::f64::consts::TAU * rng::uniform(&mut r);
                let omega = [k * ang.cos(), k * ang.sin()];
                match p.kind {
                    FourierKind::Solenoidal => NoiseField::Solenoidal { amp, omega, phase },
                    FourierKind::Gradient => NoiseField::Gradient { amp, omega, phase },
                }
            })
            .collect();
        Ok(Self { fields, delta: p.delta })
    }

    pub fn constant(u: Vec<[f64; 2]>, delta: f64) -> Self {
        Self { fields: u.into_iter().map(|u| NoiseField::Constant { u }).collect(), delta }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// No field carries any amplitude: particles are independent.
    pub fn is_null(&self) -> bool {
        self.fields.iter().all(NoiseField::is_zero)
    }

    pub fn values(&self, x: &P2<f64>, out: &mut Vec<P2<f64>>) {
        out.clear();
        out.extend(self.fields.iter().map(|f| f.eval(x)));
    }

    /// `Q(x, y) = Σ_k U_k(x) U_k(y)ᵀ`
    pub fn cov(&self, x: &P2<f64>, y: &P2<f64>) -> M2 {
        let mut q = [[0.0; 2]; 2];
        for f in &self.fields {
            let (u, v) = (f.eval(x), f.eval(y));
            for i in 0..2 {
                for j in 0..2 {
                    q[i][j] += u[i] * v[j];
                }
            }
        }
        q
    }

    /// Itô correction `½ Σ_k (DU_k) U_k` of the Stratonovich form.
    pub fn stratonovich_correction(&self, x: &P2<f64>) -> P2<f64> {
        let mut c = [0.0; 2];
        for f in &self.fields {
            let d = f.self_derivative(x);
            c[0] += 0.5 * d[0];
            c[1] += 0.5 * d[1];
        }
        c
    }

    /// `sup ξᵀQ(x,x)ξ` over a `grid_n × grid_n` grid of the domain box.
    pub fn margin(&self, sys: &Sys, grid_n: usize) -> MarginReport {
        let (lo, hi) = (sys.domain.lo, sys.domain.hi);
        let mut sup: f64 = 0.0;
        for i in 0..=grid_n {
            for j in 0..=grid_n {
                let x = [lo[0] + (hi[0] - lo[0]) * i as f64 / grid_n as f64, lo[1] + (hi[1] - lo[1]) * j as f64 / grid_n as f64];
                let q = self.cov(&x, &x);
                sup = sup.max(sym2_eigs(&q).1);
            }
        }
        MarginReport { sup, bound: (1.0 - self.delta) * 2.0 * sys.nu }
    }

    pub fn check_margin(&self, sys: &Sys, grid_n: usize) -> Result<MarginReport> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Invalid(format!("delta {} outside (0, 1]", self.delta)));
        }
        let m = self.margin(sys, grid_n);
        if !m.ok() {
            return Err(Error::Invalid(format!("common noise rate {} exceeds the pure-diffusion bound {}", m.sup, m.bound)));
        }
        Ok(m)
    }
}

fn sym2_eigs(m: &M2) -> (f64, f64) {
    let c = 0.5 * (m[0][0] + m[1][1]);
    let r = (0.5 * (m[0][0] - m[1][1])).hypot(m[0][1]);
    (c - r, c + r)
}

/// Square root of a symmetric 2×2 matrix; eigenvalues down to `−tol` are treated as 0.
pub fn sqrt_psd2(m: &M2, tol: f64) -> Result<M2> {
    let (lo, _) = sym2_eigs(m);
    if lo < -tol {
        return Err(Error::PsdViolation { eig: lo });
    }
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let s = (a * d - b * b).max(0.0).sqrt();
    let t = (a + d + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return Ok([[0.0; 2]; 2]);
    }
    Ok([[(a + s) / t, b / t], [b / t, (d + s) / t]])
}

/// Symmetric square root with negative eigenvalues clamped to 0. Returns the factor and the clamp
/// magnitude; eigenvalues below `−tol·max(1, |λ|_max)` raise `PsdViolation`.
pub fn psd_sqrt(s: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(s.clone());
    let lmin = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if lmin < -tol * scale {
        return Err(Error::PsdViolation { eig: lmin });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok((root, (-lmin).max(0.0)))
}

/// Ambient n-point step. Noise enters in Itô form, so each particle on its own follows the
/// one-point ambient diffusion.
#[derive(Debug, Clone, Copy)]
pub struct AmbientFlow<'a> {
    pub sys: &'a Sys,
    pub noise: &'a NoiseModel,
    pub cfg: &'a AmbientConfig,
    /// Largest tolerated negative eigenvalue of `2νI − Q(x, x)`.
    pub psd_tol: f64,
}

impl<'a> AmbientFlow<'a> {
    pub fn new(sys: &'a Sys, noise: &'a NoiseModel, cfg: &'a AmbientConfig) -> Self {
        Self { sys, noise, cfg, psd_tol: 1e-12 }
    }

    fn half_step(&self, x: P2<f64>, half: f64, zc: &[f64], r: &mut StreamRng, buf: &mut Vec<P2<f64>>) -> Result<P2<f64>> {
        let xi = [rng::normal(r), rng::normal(r)];
        self.noise.values(&x, buf);
        if buf.iter().all(|u| u[0] == 0.0 && u[1] == 0.0) {
            return Ok(ambient::half_diffusion(self.sys, self.cfg, x, half, xi));
        }
        let d = ambient::drift(self.sys, self.cfg, &x);
        let mut q = [[0.0; 2]; 2];
        for u in buf.iter() {
            q[0][0] += u[0] * u[0];
            q[0][1] += u[0] * u[1];
            q[1][1] += u[1] * u[1];
        }
        let two_nu = 2.0 * self.sys.nu;
        let s = sqrt_psd2(&[[two_nu - q[0][0], -q[0][1]], [-q[0][1], two_nu - q[1][1]]], self.psd_tol)?;
        let sh = half.sqrt();
        let mut y = [x[0] + d[0] * half, x[1] + d[1] * half];
        for (u, z) in buf.iter().zip(zc) {
            y[0] += u[0] * z * sh;
            y[1] += u[1] * z * sh;
        }
        y[0] += (s[0][0] * xi[0] + s[0][1] * xi[1]) * sh;
        y[1] += (s[1][0] * xi[0] + s[1][1] * xi[1]) * sh;
        Ok(y)
    }

    fn half_all(&self, xs: &mut [P2<f64>], half: f64, common: &mut StreamRng, particles: &mut [StreamRng], buf: &mut Vec<P2<f64>>) -> Result<()> {
        let zc: Vec<f64> = (0..self.noise.len()).map(|_| rng::normal(common)).collect();
        for (x, r) in xs.iter_mut().zip(particles.iter_mut()) {
            *x = self.half_step(*x, half, &zc, r, buf)?;
            ambient::check_domain(self.sys, x)?;
        }
        Ok(())
    }

    /// Strang step of all particles: half diffusion with shared `W^k` increments, exact shear flow
    /// for `κ·dt` per particle, half diffusion.
    pub fn step(&self, xs: &mut [P2<f64>], dt: f64, common: &mut StreamRng, particles: &mut [StreamRng], hints: &mut [Option<f64>]) -> Result<()> {
        if dt == 0.0 {
            return Ok(());
        }
        let half = 0.5 * dt;
        let mut buf = Vec::with_capacity(self.noise.len());
        self.half_all(xs, half, common, particles, &mut buf)?;
        if self.cfg.kappa > 0.0 {
            for (x, hint) in xs.iter_mut().zip(hints.iter_mut()) {
                let (z, h) = flow_step_hinted(self.sys, *x, self.cfg.kappa * dt, self.cfg.flow_tol, *hint)?;
                *hint = Some(h);
                *x = z;
            }
        }
        self.half_all(xs, half, common, particles, &mut buf)
    }

    /// Positions at each observation time, `out[t][particle]`.
    pub fn run(&self, mut xs: Vec<P2<f64>>, mut particles: Vec<StreamRng>, mut common: StreamRng, times: &[f64]) -> (Result<()>, Vec<Vec<P2<f64>>>) {
        let mut hints = vec![None; xs.len()];
        let mut out = Vec::with_capacity(times.len());
        let res = ambient::for_each_step(self.cfg.dt, times, |step| {
            match step {
                Some(h) => self.step(&mut xs, h, &mut common, &mut particles, &mut hints)?,
                None => out.push(xs.clone()),
            }
            Ok(())
        });
        (res, out)
    }

    /// `reps` independent replicates of `n` particles. Particle `j` of replicate `r` has global
    /// index `g = r·n + j`: its initial point comes from stream `(seed, INIT, g)` and its own noise
    /// from `(seed, AMBIENT_PATH, g)`. The common noise of replicate `r` is `(seed, COMMON_NOISE, r)`.
    pub fn simulate(&self, proj: &Projection, init: &InitLaw, n: usize, times: &[f64], reps: usize, seed: u64) -> NPointEnsemble {
        let per_rep: Vec<Vec<PathRecord>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let g = |j: usize| (r * n + j) as u64;
                let xs: Vec<P2<f64>> = (0..n).map(|j| init.sample(&mut rng::stream(seed, rng::tag::INIT, g(j)))).collect();
                let particles = (0..n).map(|j| rng::stream(seed, rng::tag::AMBIENT_PATH, g(j))).collect();
                let common = rng::stream(seed, rng::tag::COMMON_NOISE, r as u64);
                let (res, out) = self.run(xs, particles, common, times);
                let mut flag = match res {
                    Ok(()) => FLAG_OK,
                    Err(Error::OutOfDomain { .. }) => FLAG_DOMAIN_EXIT,
                    Err(_) => FLAG_OTHER,
                };
                let mut recs: Vec<Vec<(u32, f64, f64)>> = vec![Vec::with_capacity(out.len()); n];
                'times: for snap in &out {
                    for (j, x) in snap.iter().enumerate() {
                        match proj.classify(x) {
                            Ok((loc, h)) => recs[j].push((GraphState { loc, h }.code(), h, 0.0)),
                            Err(_) => {
                                flag = FLAG_OTHER;
                                break 'times;
                            }
                        }
                    }
                }
                recs.into_iter().map(|v| (flag, v)).collect()
            })
            .collect();
        NPointEnsemble::from_replicates(PathKind::AmbientProjected, seed, times, n, per_rep, 0.0)
    }
}

/// `Ũ_k(h)` on one edge, tabulated on the coefficient grid.
#[derive(Debug, Clone)]
struct EdgeNoise {
    u: Vec<Pchip>,
}

/// Orbit averages `Ũ_k(y) = μ_y(U_k·∇H)` of every noise field on every edge.
#[derive(Debug, Clone)]
pub struct AveragedNoise {
    k: usize,
    null: bool,
    edges: Vec<EdgeNoise>,
}

/// `Ũ_k = μ_γ(U_k·∇H)` for each field, from one traced orbit.
pub fn orbit_u_tilde(sys: &Sys, noise: &NoiseModel, orbit: &Orbit<f64>) -> Vec<f64> {
    noise
        .fields
        .iter()
        .map(|f| {
            orbit_average(orbit, |x| {
                let (u, g) = (f.eval(x), sys.grad(x));
                u[0] * g[0] + u[1] * g[1]
            })
        })
        .collect()
}

fn orbit_at(proj: &Projection, edge: usize, h: f64, tol: f64) -> Result<Orbit<f64>> {
    let mut opts = OrbitOptions::new(tol);
    opts.max_time = 1e4;
    trace_orbit(proj.system(), proj.anchor(edge, h)?, &opts)
}

impl AveragedNoise {
    /// Traces one orbit per coefficient-grid node of every edge.
    pub fn build(proj: &Projection, model: &GraphModel, noise: &NoiseModel, tol: f64) -> Result<Self> {
        let k = noise.len();
        if noise.is_null() {
            return Ok(Self { k, null: true, edges: Vec::new() });
        }
        let sys = proj.system();
        let edges = model
            .tables
            .iter()
            .map(|tab| {
                let rows: Vec<Vec<f64>> = tab.h.par_iter().map(|&h| Ok(orbit_u_tilde(sys, noise, &orbit_at(proj, tab.edge, h, tol)?))).collect::<Result<_>>()?;
                let u = (0..k).map(|i| Pchip::new(tab.h.clone(), rows.iter().map(|r| r[i]).collect())).collect();
                Ok(EdgeNoise { u })
            })
            .collect::<Result<_>>()?;
        Ok(Self { k, null: false, edges })
    }

    pub fn n_fields(&self) -> usize {
        self.k
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    /// `Ũ_k(h)` on `tab`'s edge. Between the outermost node and a vertex end the node values are
    /// scaled by `√(σ²(h)/σ²(node))`, which keeps `Q̃(y,y)/σ²(y)` fixed there.
    pub fn u_tilde(&self, tab: &EdgeCoefficientTable, h: f64, out: &mut [f64]) -> Result<()> {
        if self.null {
            out.fill(0.0);
            return Ok(());
        }
        let e = &self.edges[tab.edge];
        let (lo, hi) = (tab.h_lo(), tab.h_hi());
        let (node, scale) = if h < lo {
            (lo, (tab.sigma2_at(h)? / tab.sigma2[0]).sqrt())
        } else if h > hi {
            (hi, (tab.sigma2_at(h)? / tab.sigma2[tab.sigma2.len() - 1]).sqrt())
        } else {
            (h, 1.0)
        };
        for (o, p) in out.iter_mut().zip(&e.u) {
            *o = scale * p.eval(node);
        }
        Ok(())
    }

    /// Tabulated values `(h, Ũ_k)` of one edge.
    pub fn table(&self, edge: usize) -> Option<(&[f64], Vec<&[f64]>)> {
        let e = self.edges.get(edge)?;
        let h = e.u.first()?.nodes();
        Some((h, e.u.iter().map(|p| p.values()).collect()))
    }
}

/// `C̃(y₁, y₂) = ∬ ∇H(x)ᵀ Q(x, x') ∇H(x') μ_{y₁}(dx) μ_{y₂}(dx')` by tensorized trapezoid
/// quadrature over the two traced orbits. `y = (edge, h)`, both in edge interiors.
pub fn averaged_covariance(proj: &Projection, noise: &NoiseModel, y1: (usize, f64), y2: (usize, f64), tol: f64) -> Result<f64> {
    if noise.is_null() {
        return Ok(0.0);
    }
    let sys = proj.system();
    let (o1, o2) = (orbit_at(proj, y1.0, y1.1, tol)?, orbit_at(proj, y2.0, y2.1, tol)?);
    let g2: Vec<P2<f64>> = o2.samples.iter().map(|x| sys.grad(x)).collect();
    let mut acc = 0.0;
    for x in &o1.samples {
        let g1 = sys.grad(x);
        for (y, g) in o2.samples.iter().zip(&g2) {
            let q = noise.cov(x, y);
            acc += g1[0] * (q[0][0] * g[0] + q[0][1] * g[1]) + g1[1] * (q[1][0] * g[0] + q[1][1] * g[1]);
        }
    }
    Ok(acc / (o1.samples.len() * o2.samples.len()) as f64)
}

/// The same quantity as `Σ_k Ũ_k(y₁)Ũ_k(y₂)` from single orbit averages.
pub fn averaged_covariance_separable(proj: &Projection, noise: &NoiseModel, y1: (usize, f64), y2: (usize, f64), tol: f64) -> Result<f64> {
    if noise.is_null() {
        return Ok(0.0);
    }
    let sys = proj.system();
    let u1 = orbit_u_tilde(sys, noise, &orbit_at(proj, y1.0, y1.1, tol)?);
    let u2 = orbit_u_tilde(sys, noise, &orbit_at(proj, y2.0, y2.1, tol)?);
    Ok(u1.iter().zip(&u2).map(|(a, b)| a * b).sum())
}

/// n-point graph diffusion `dYⁱ = σ̃(Yⁱ)dBⁱ + Σ_k Ũ_k(Yⁱ)dW^k + b(Yⁱ)dt` with the vertex rules of
/// [`GraphSim`]. All particles share each substep, the smallest of their CFL substeps.
#[derive(Debug, Clone)]
pub struct GraphFlow {
    pub sim: GraphSim,
    pub noise: AveragedNoise,
    /// Tolerated relative shortfall of `σ² − Q̃(y,y)` below zero before `PsdViolation`.
    pub psd_tol: f64,
}

impl GraphFlow {
    pub fn new(sim: GraphSim, noise: AveragedNoise) -> Self {
        Self { sim, noise, psd_tol: 1e-8 }
    }

    fn edge_of(s: &GraphState) -> Result<usize> {
        match s.loc {
            GraphLoc::Edge(e) => Ok(e),
            GraphLoc::Vertex(v) => Err(Error::Invalid(format!("state on vertex {v}"))),
        }
    }

    /// Step covariance rate: `Σ_ii = σ²(yᵢ)`, `Σ_ij = Q̃(yᵢ, yⱼ)`. States must lie on edges.
    pub fn covariance(&self, states: &[GraphState]) -> Result<DMatrix<f64>> {
        let (n, k) = (states.len(), self.noise.k);
        let mut u = vec![0.0; n * k];
        let mut s = DMatrix::zeros(n, n);
        for (i, st) in states.iter().enumerate() {
            let tab = &self.sim.model.tables[Self::edge_of(st)?];
            self.noise.u_tilde(tab, st.h, &mut u[i * k..(i + 1) * k])?;
            s[(i, i)] = tab.sigma2_at(st.h)?;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s[(i, j)] = (0..k).map(|m| u[i * k + m] * u[j * k + m]).sum();
                }
            }
        }
        Ok(s)
    }

    /// `σ̃² = σ² − Σ_k Ũ_k²`, clamped at 0. Returns `(σ̃², clamp)`.
    fn own_variance(&self, s2: f64, u: &[f64]) -> Result<(f64, f64)> {
        let st2 = s2 - u.iter().map(|v| v * v).sum::<f64>();
        if st2 >= 0.0 {
            return Ok((st2, 0.0));
        }
        if -st2 > self.psd_tol * s2.max(f64::MIN_POSITIVE) {
            return Err(Error::PsdViolation { eig: st2 });
        }
        Ok((0.0, -st2))
    }

    /// One joint draw of the unit-time noise `Σ_k Ũ_k(yᵢ)Z_k + σ̃(yᵢ)ξᵢ`, without drift or gluing.
    pub fn increments(&self, states: &[GraphState], common: &mut StreamRng, particles: &mut [StreamRng]) -> Result<Vec<f64>> {
        let k = self.noise.k;
        let zc: Vec<f64> = (0..k).map(|_| rng::normal(common)).collect();
        let mut u = vec![0.0; k];
        states
            .iter()
            .zip(particles.iter_mut())
            .map(|(st, r)| {
                let tab = &self.sim.model.tables[Self::edge_of(st)?];
                self.noise.u_tilde(tab, st.h, &mut u)?;
                let (st2, _) = self.own_variance(tab.sigma2_at(st.h)?, &u)?;
                Ok(u.iter().zip(&zc).map(|(a, z)| a * z).sum::<f64>() + st2.sqrt() * rng::normal(r))
            })
            .collect()
    }

    /// Advances every particle by `dt`; returns the largest clamp applied to `σ̃²`.
    pub fn step(&self, states: &mut [GraphState], dt: f64, common: &mut StreamRng, particles: &mut [StreamRng]) -> Result<f64> {
        if dt == 0.0 {
            return Ok(0.0);
        }
        if self.noise.null {
            for (s, r) in states.iter_mut().zip(particles.iter_mut()) {
                *s = self.sim.step(*s, dt, r)?;
            }
            return Ok(0.0);
        }
        let (n, k) = (states.len(), self.noise.k);
        let scheme = &self.sim.scheme;
        let mut edge = vec![0usize; n];
        let mut h = vec![0.0; n];
        for i in 0..n {
            let s = self.sim.resolve(states[i], &mut particles[i], &mut ());
            edge[i] = Self::edge_of(&s)?;
            h[i] = s.h;
        }
        let mut u = vec![0.0; n * k];
        let mut s2 = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut clamp: f64 = 0.0;
        let mut remaining = dt;
        while remaining > 0.0 {
            let mut dt_loc = remaining;
            for i in 0..n {
                let tab = &self.sim.model.tables[edge[i]];
                s2[i] = tab.sigma2_at(h[i])?;
                b[i] = tab.b_at(h[i])?;
                self.noise.u_tilde(tab, h[i], &mut u[i * k..(i + 1) * k])?;
                if scheme.substep {
                    let d = self.sim.branch_distance(edge[i], h[i]);
                    let cfl = if s2[i] > 0.0 { scheme.kappa_cfl * d * d / s2[i] } else { 0.0 };
                    dt_loc = dt_loc.min(cfl.max(scheme.floor));
                }
            }
            let zc: Vec<f64> = (0..k).map(|_| rng::normal(common)).collect();
            let sq = dt_loc.sqrt();
            for i in 0..n {
                let ui = &u[i * k..(i + 1) * k];
                let (st2, c) = self.own_variance(s2[i], ui)?;
                clamp = clamp.max(c);
                let shared: f64 = ui.iter().zip(&zc).map(|(a, z)| a * z).sum::<f64>() * sq;
                let hn = h[i] + b[i] * dt_loc + shared + (st2 * dt_loc).sqrt() * rng::normal(&mut particles[i]);
                (edge[i], h[i]) = self.sim.settle(edge[i], h[i], hn, s2[i] * dt_loc, &mut particles[i], &mut ())?;
            }
            remaining -= dt_loc;
            if remaining < 1e-15 * dt {
                remaining = 0.0;
            }
        }
        for i in 0..n {
            states[i] = GraphState::on_edge(edge[i], h[i]);
        }
        Ok(clamp)
    }

    /// States at each observation time, `out[t][particle]`, and the largest clamp.
    pub fn run(&self, mut states: Vec<GraphState>, mut particles: Vec<StreamRng>, mut common: StreamRng, times: &[f64]) -> (Result<()>, Vec<Vec<GraphState>>, f64) {
        let mut out = Vec::with_capacity(times.len());
        let mut clamp: f64 = 0.0;
        let dt_max = self.sim.scheme.dt;
        let mut t = 0.0;
        for &target in times {
            while t < target {
                let dt = dt_max.min(target - t);
                match self.step(&mut states, dt, &mut common, &mut particles) {
                    Ok(c) => clamp = clamp.max(c),
                    Err(e) => return (Err(e), out, clamp),
                }
                t = if target - t <= dt_max { target } else { t + dt };
            }
            out.push(states.clone());
        }
        (Ok(()), out, clamp)
    }

    /// Replicates with the stream layout of [`AmbientFlow::simulate`], using `GRAPH_PATH` for each
    /// particle's own noise. With `n = 1` this reproduces [`GraphSim::simulate_paths`].
    pub fn simulate<I>(&self, init: I, n: usize, times: &[f64], reps: usize, seed: u64) -> NPointEnsemble
    where
        I: Fn(usize, &mut StreamRng) -> Result<GraphState> + Sync,
    {
        let runs: Vec<(Vec<PathRecord>, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let g = |j: usize| r * n + j;
                let s0: Result<Vec<GraphState>> = (0..n).map(|j| init(g(j), &mut rng::stream(seed, rng::tag::INIT, g(j) as u64))).collect();
                let Ok(s0) = s0 else {
                    return (vec![(FLAG_OTHER, Vec::new()); n], 0.0);
                };
                let particles = (0..n).map(|j| rng::stream(seed, rng::tag::GRAPH_PATH, g(j) as u64)).collect();
                let common = rng::stream(seed, rng::tag::COMMON_NOISE, r as u64);
                let (res, out, clamp) = self.run(s0, particles, common, times);
                let flag = match res {
                    Ok(()) => FLAG_OK,
                    Err(Error::CoefficientRangeExceeded { .. }) => FLAG_RANGE,
                    Err(_) => FLAG_OTHER,
                };
                let recs = (0..n).map(|j| (flag, out.iter().map(|snap| (snap[j].code(), snap[j].h, 0.0)).collect())).collect();
                (recs, clamp)
            })
            .collect();
        let clamp = runs.iter().fold(0.0f64, |m, r| m.max(r.1));
        NPointEnsemble::from_replicates(PathKind::Graph, seed, times, n, runs.into_iter().map(|r| r.0).collect(), clamp)
    }
}

/// Replicates of an n-point motion: `particles[j]` holds particle `j` of every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct NPointEnsemble {
    pub n: usize,
    pub particles: Vec<Ensemble>,
    /// Largest eigenvalue clamp applied while sampling.
    pub max_clamp: f64,
}

/// `exp(−((h − center)/width)²)` on one edge, 0 elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub edge: u32,
    pub center: f64,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, loc: u32, h: f64) -> f64 {
        if loc == self.edge {
            (-((h - self.center) / self.width).powi(2)).exp()
        } else {
            0.0
        }
    }
}

impl NPointEnsemble {
    fn from_replicates(kind: PathKind, seed: u64, times: &[f64], n: usize, per_rep: Vec<Vec<PathRecord>>, max_clamp: f64) -> Self {
        let mut cols: Vec<Vec<PathRecord>> = vec![Vec::with_capacity(per_rep.len()); n];
        for rep in per_rep {
            for (j, rec) in rep.into_iter().enumerate() {
                cols[j].push(rec);
            }
        }
        let particles = cols.into_iter().map(|c| Ensemble::from_paths(kind, seed, times.to_vec(), c)).collect();
        Self { n, particles, max_clamp }
    }

    pub fn reps(&self) -> usize {
        self.particles.first().map_or(0, Ensemble::n_paths)
    }

    /// Replicates in which no particle was flagged.
    pub fn ok_reps(&self) -> Vec<usize> {
        (0..self.reps()).filter(|&r| self.particles.iter().all(|e| e.flags[r] == FLAG_OK)).collect()
    }

    /// Mean and standard error of `f(Yⁱ_t)·g(Yʲ_t)` over unflagged replicates.
    pub fn joint_moment(&self, t: usize, i: usize, j: usize, f: impl Fn(u32, f64) -> f64, g: impl Fn(u32, f64) -> f64) -> Option<(f64, f64)> {
        let (a, b) = (&self.particles[i], &self.particles[j]);
        let v: Vec<f64> = self.ok_reps().into_iter().map(|r| f(a.loc[t][r], a.coord1[t][r]) * g(b.loc[t][r], b.coord1[t][r])).collect();
        let n = v.len();
        if n < 2 {
            return None;
        }
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((m, (var / n as f64).sqrt()))
    }

    /// Sample correlation of the `h` coordinates of particles `i` and `j` at time index `t`.
    pub fn h_correlation(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (&self.particles[i].coord1[t], &self.particles[j].coord1[t]);
        let reps = self.ok_reps();
        let n = reps.len() as f64;
        if n < 2.0 {
            return None;
        }
        let ma = reps.iter().map(|&r| a[r]).sum::<f64>() / n;
        let mb = reps.iter().map(|&r| b[r]).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for &r in &reps {
            let (x, y) = (a[r] - ma, b[r] - mb);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        Some(sab / (saa * sbb).sqrt())
    }

    /// `t,rep,loc0,h0,loc1,h1,…` for every unflagged replicate.
    pub fn joint_csv(&self) -> String {
        let mut s = String::from("t,rep");
        for j in 0..self.n {
            s.push_str(&format!(",loc{j},h{j}"));
        }
        s.push('\n');
        let Some(first) = self.particles.first() else { return s };
        let reps = self.ok_reps();
        for (ti, t) in first.times.iter().enumerate() {
            for &r in &reps {
                s.push_str(&format!("{t},{r}"));
                for e in &self.particles {
                    s.push_str(&format!(",{},{:e}", e.loc[ti][r], e.coord1[ti][r]));
                }
                s.push('\n');
            }
        }
        s
    }
}
