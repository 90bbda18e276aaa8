//! Edge coefficients of the limiting graph generator, vertex transmission weights, endpoint
//! asymptotics and the energy-form identity.

use crate::error::{Error, Result};
use crate::fields::{orbit_average, trace_orbit, OrbitOptions};
use crate::numerics::interp::Pchip;
use crate::numerics::quad;
use crate::numerics::roots::brent;
use crate::reeb::{End, GraphLoc, MetricGraph, Projection};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Level grid for one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: usize,
    /// asinh scale as a fraction of the edge width (two-sided grids).
    pub stretch: f64,
    /// Orbit tracing tolerance.
    pub tol: f64,
    /// Truncation level of the unbounded edge.
    pub h_max: f64,
}

impl GridSpec {
    pub fn new(nodes: usize, h_max: f64) -> Self {
        Self { nodes, stretch: default_stretch(), tol: 1e-10, h_max }
    }
}

fn asinh_q(u: f64, s: f64) -> f64 {
    (u / s).asinh() - ((1.0 - u) / s).asinh()
}

/// Scale for which a quarter of the nodes fall in the 10% of the edge next to each end.
pub fn default_stretch() -> f64 {
    let frac = |s: f64| (asinh_q(0.1, s) - asinh_q(0.0, s)) / (asinh_q(1.0, s) - asinh_q(0.0, s)) - 0.25;
    brent(frac, 1e-4, 1.0, 1e-14, 200).unwrap_or(0.0247)
}

/// Strictly increasing levels in `(l, r)`, uniform in `asinh((h−l)/s) − asinh((r−h)/s)`.
pub fn two_sided_grid(l: f64, r: f64, n: usize, stretch: f64) -> Vec<f64> {
    let (qa, qb) = (asinh_q(0.0, stretch), asinh_q(1.0, stretch));
    (1..=n)
        .map(|k| {
            let target = qa + (qb - qa) * k as f64 / (n + 1) as f64;
            let u = brent(|u| asinh_q(u, stretch) - target, 0.0, 1.0, 1e-16, 300).unwrap_or(0.5);
            l + (r - l) * u
        })
        .collect()
}

/// Levels in `(l, h_max]`, uniform in `asinh((h−l)/s)`; ends exactly at `h_max`.
pub fn one_sided_grid(l: f64, h_max: f64, n: usize, s: f64) -> Vec<f64> {
    let qmax = ((h_max - l) / s).asinh();
    let mut g: Vec<f64> = (1..=n).map(|k| l + s * (qmax * k as f64 / n as f64).sinh()).collect();
    if let Some(last) = g.last_mut() {
        *last = h_max;
    }
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeCoefficientTable {
    pub edge: usize,
    /// Lower end (vertex level).
    pub l: f64,
    /// Upper vertex level, or the truncation level for the unbounded edge.
    pub r: f64,
    pub unbounded: bool,
    pub h: Vec<f64>,
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    /// `a'(h) = ∫₀ᵀ ΔH dt`, only when tabulated from orbits.
    #[serde(skip)]
    pub a_stokes: Vec<f64>,
    #[serde(skip)]
    interp: Option<Interps>,
}

#[derive(Debug, Clone)]
struct Interps {
    t: Pchip,
    a: Pchip,
    sigma2: Pchip,
    c: Pchip,
    b: Pchip,
}

impl EdgeCoefficientTable {
    fn from_columns(edge: usize, l: f64, r: f64, unbounded: bool, h: Vec<f64>, t: Vec<f64>, a: Vec<f64>, c: Vec<f64>, nu: f64, a_stokes: Vec<f64>) -> Self {
        let sigma2: Vec<f64> = a.iter().zip(&t).map(|(a, t)| 2.0 * nu * a / t).collect();
        let s2t: Vec<f64> = a.iter().map(|a| 2.0 * nu * a).collect();
        let p = Pchip::new(h.clone(), s2t);
        let b: Vec<f64> = (0..h.len()).map(|k| p.slopes()[k] / (2.0 * t[k]) + c[k]).collect();
        let mut tab = Self { edge, l, r, unbounded, h, t, a, sigma2, c, b, a_stokes, interp: None };
        tab.build_interps();
        tab
    }

    fn build_interps(&mut self) {
        let h = &self.h;
        self.interp = Some(Interps {
            t: Pchip::new(h.clone(), self.t.clone()),
            a: Pchip::new(h.clone(), self.a.clone()),
            sigma2: Pchip::new(h.clone(), self.sigma2.clone()),
            c: Pchip::new(h.clone(), self.c.clone()),
            b: Pchip::new(h.clone(), self.b.clone()),
        });
    }

    fn ip(&self) -> &Interps {
        self.interp.as_ref().expect("interpolants built on construction")
    }

    pub fn h_lo(&self) -> f64 {
        self.h[0]
    }

    pub fn h_hi(&self) -> f64 {
        self.h[self.h.len() - 1]
    }

    fn range_err(&self, h: f64) -> Error {
        Error::CoefficientRangeExceeded { edge: self.edge, h, lo: self.l, hi: self.r }
    }

    /// `σ²(h)`, going linearly to zero between the outermost node and a vertex end.
    pub fn sigma2_at(&self, h: f64) -> Result<f64> {
        if !(h >= self.l && h <= self.r) {
            return Err(self.range_err(h));
        }
        let (h0, h1) = (self.h_lo(), self.h_hi());
        if h < h0 {
            return Ok(self.sigma2[0] * (h - self.l) / (h0 - self.l));
        }
        if h > h1 {
            let k = self.h.len() - 1;
            return Ok(self.sigma2[k] * (self.r - h) / (self.r - h1));
        }
        Ok(self.ip().sigma2.eval(h))
    }

    /// `b(h)`, constant beyond the outermost nodes.
    pub fn b_at(&self, h: f64) -> Result<f64> {
        if !(h >= self.l && h <= self.r) {
            return Err(self.range_err(h));
        }
        Ok(self.ip().b.eval(h))
    }

    pub fn t_at(&self, h: f64) -> f64 {
        self.ip().t.eval(h)
    }

    pub fn a_at(&self, h: f64) -> f64 {
        self.ip().a.eval(h)
    }

    pub fn c_at(&self, h: f64) -> f64 {
        self.ip().c.eval(h)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,T,a,sigma2,c,b\n");
        for k in 0..self.h.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                self.h[k], self.t[k], self.a[k], self.sigma2[k], self.c[k], self.b[k]
            ));
        }
        s
    }

    pub fn from_csv(edge: usize, l: f64, r: f64, unbounded: bool, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header.trim() != "h,T,a,sigma2,c,b" {
            return Err(Error::Invalid(format!("unexpected coefficient header '{header}'")));
        }
        let mut cols: [Vec<f64>; 6] = Default::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::Invalid(format!("row {}: {e}", i + 2)))?;
            if vals.len() != 6 {
                return Err(Error::Invalid(format!("row {} has {} columns", i + 2, vals.len())));
            }
            for (c, v) in cols.iter_mut().zip(vals) {
                c.push(v);
            }
        }
        if cols[0].len() < 2 || cols[0].windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("coefficient levels must be strictly increasing".into()));
        }
        let [h, t, a, sigma2, c, b] = cols;
        let mut tab = Self { edge, l, r, unbounded, h, t, a, sigma2, c, b, a_stokes: Vec::new(), interp: None };
        tab.build_interps();
        Ok(tab)
    }
}

fn lower_spacing(graph: &MetricGraph, l: f64) -> f64 {
    let below = graph.vertices.iter().map(|v| v.level).filter(|&v| v < l - 1e-12 * (1.0 + l.abs())).fold(f64::NEG_INFINITY, f64::max);
    if below.is_finite() {
        l - below
    } else {
        1.0 + l.abs()
    }
}

/// Tabulates `T, a, σ², c, b` over the edge's level grid by orbit averaging.
pub fn tabulate_edge(proj: &Projection, edge: usize, spec: &GridSpec) -> Result<EdgeCoefficientTable> {
    let graph = &proj.graph;
    let e = graph.edges.get(edge).ok_or_else(|| Error::Invalid(format!("no edge {edge}")))?;
    let sys = proj.system();
    let (r, grid) = if e.is_unbounded() {
        if !(spec.h_max > e.l) {
            return Err(Error::Invalid(format!("h_max {} not above edge start {}", spec.h_max, e.l)));
        }
        let s = 1e-3 * lower_spacing(graph, e.l).min(1.0 + e.l.abs());
        (spec.h_max, one_sided_grid(e.l, spec.h_max, spec.nodes, s))
    } else {
        (e.r, two_sided_grid(e.l, e.r, spec.nodes, spec.stretch))
    };
    let mut opts = OrbitOptions::new(spec.tol);
    opts.max_time = 1e4;
    let rows: Vec<[f64; 4]> = grid
        .par_iter()
        .map(|&h| {
            let x0 = proj.anchor(edge, h)?;
            let o = trace_orbit(sys, x0, &opts)?;
            let t = o.period;
            let a = t * orbit_average(&o, |x| {
                let g = sys.grad(x);
                g[0] * g[0] + g[1] * g[1]
            });
            let c = orbit_average(&o, |x| {
                let g = sys.grad(x);
                let v = sys.drift(x);
                v[0] * g[0] + v[1] * g[1]
            });
            let lap = t * orbit_average(&o, |x| sys.laplacian_h(x));
            Ok([t, a, c, lap])
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    Ok(EdgeCoefficientTable::from_columns(edge, e.l, r, e.is_unbounded(), grid, col(0), col(1), col(2), sys.nu, col(3)))
}

pub fn tabulate_all(proj: &Projection, spec: &GridSpec) -> Result<Vec<EdgeCoefficientTable>> {
    (0..proj.graph.edges.len()).map(|e| tabulate_edge(proj, e, spec)).collect()
}

/// Largest relative gap between a finite-difference `(σ²T)'` and the Stokes form `2ν∫ΔH dt`
/// over nodes at least `margin·width` away from both ends.
pub fn stokes_check(tab: &EdgeCoefficientTable, nu: f64, margin: f64) -> f64 {
    let h = &tab.h;
    let w = tab.r - tab.l;
    let mut worst: f64 = 0.0;
    if tab.a_stokes.len() != h.len() {
        return f64::NAN;
    }
    for k in 1..h.len() - 1 {
        if h[k] - tab.l < margin * w || tab.r - h[k] < margin * w {
            continue;
        }
        let (h0, h1) = (h[k] - h[k - 1], h[k + 1] - h[k]);
        let y = |i: usize| 2.0 * nu * tab.a[i];
        let fd = -h1 / (h0 * (h0 + h1)) * y(k - 1) + (h1 - h0) / (h0 * h1) * y(k) + h0 / (h1 * (h0 + h1)) * y(k + 1);
        let st = 2.0 * nu * tab.a_stokes[k];
        worst = worst.max(((fd - st) / st).abs());
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndWeight {
    pub edge: usize,
    pub end: End,
    pub alpha: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexTransmission {
    pub vertex: usize,
    pub level: f64,
    pub weights: Vec<EndWeight>,
}

#[derive(Debug, Clone, Copy)]
pub struct TransmissionOptions {
    /// Largest Richardson window as a multiple of the distance from the end to its nearest node.
    pub window: f64,
    /// Relative agreement required between the last two extrapolants.
    pub rel_tol: f64,
    /// Relative bound on `α` at degree-1 vertices.
    pub eps_alpha: f64,
}

impl Default for TransmissionOptions {
    fn default() -> Self {
        Self { window: 8.0, rel_tol: 1e-3, eps_alpha: 1e-6 }
    }
}

/// Richardson estimate of `lim ½σ²T = ν·a` at one end; returns (level-2, level-1) extrapolants.
fn end_limit(tab: &EdgeCoefficientTable, nu: f64, end: End, window: f64) -> (f64, f64) {
    let (v, d1) = match end {
        End::Plus => (tab.l, tab.h_lo() - tab.l),
        End::Minus => (tab.r, tab.r - tab.h_hi()),
    };
    let sgn = if end == End::Plus { 1.0 } else { -1.0 };
    let d = window * d1;
    let at = |k: i32| nu * tab.a_at(v + sgn * d / 2f64.powi(k));
    let (a0, a1, a2) = (at(0), at(1), at(2));
    let b0 = 2.0 * a1 - a0;
    let b1 = 2.0 * a2 - a1;
    ((4.0 * b1 - b0) / 3.0, b1)
}

pub fn transmission_weights(tables: &[EdgeCoefficientTable], graph: &MetricGraph, nu: f64, opts: &TransmissionOptions) -> Result<Vec<VertexTransmission>> {
    let mut out = Vec::with_capacity(graph.vertices.len());
    for v in &graph.vertices {
        let mut weights = Vec::with_capacity(v.degree);
        for inc in &v.incident {
            let tab = tables.iter().find(|t| t.edge == inc.edge).ok_or_else(|| Error::Invalid(format!("no table for edge {}", inc.edge)))?;
            let (r2, r1) = end_limit(tab, nu, inc.end, opts.window);
            let scale = nu * tab.a.iter().fold(0.0f64, |m, &a| m.max(a.abs()));
            let alpha = if v.degree == 1 {
                if r2.abs() > opts.eps_alpha * (1.0 + scale) {
                    return Err(Error::NonzeroAtExtremum { vertex: v.id, alpha: r2 });
                }
                0.0
            } else {
                if (r2 - r1).abs() > opts.rel_tol * r2.abs().max(1e-300) {
                    return Err(Error::ExtrapolationUnstable { vertex: v.id, a: r1, b: r2 });
                }
                r2
            };
            weights.push(EndWeight { edge: inc.edge, end: inc.end, alpha, probability: 0.0 });
        }
        let total: f64 = weights.iter().map(|w| w.alpha).sum();
        if total > 0.0 {
            for w in &mut weights {
                w.probability = w.alpha / total;
            }
        }
        out.push(VertexTransmission { vertex: v.id, level: v.level, weights });
    }
    Ok(out)
}

pub fn transmissions_to_json(t: &[VertexTransmission]) -> Result<String> {
    serde_json::to_string_pretty(t).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn transmissions_from_json(s: &str) -> Result<Vec<VertexTransmission>> {
    serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Entrance,
    Saddle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub edge: usize,
    pub vertex: usize,
    pub regime: Regime,
    /// Entrance: slope of `a` against `|h − h_v|`. Saddle: `a` at the nearest node.
    pub a_coef: f64,
    /// Entrance: limit of `T` (intercept of a linear fit in `|h − h_v|` over the innermost decade). Saddle: slope of `T` against `|log|h − h_v||`.
    pub t_coef: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    pub window: (f64, f64),
}

/// Endpoint asymptotics over `decades` decades of `|h − h_v|` starting at the nearest node.
pub fn asymptotic_fit(tab: &EdgeCoefficientTable, graph: &MetricGraph, vertex: usize, decades: f64) -> Result<FitReport> {
    let v = graph.vertices.get(vertex).ok_or_else(|| Error::Invalid(format!("no vertex {vertex}")))?;
    if !v.incident.iter().any(|i| i.edge == tab.edge) {
        return Err(Error::Invalid(format!("edge {} not incident to vertex {vertex}", tab.edge)));
    }
    let dist: Vec<f64> = tab.h.iter().map(|h| (h - v.level).abs()).collect();
    let d_min = dist.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = d_min * 10f64.powf(decades);
    let half = 0.5 * (tab.r - tab.l);
    let idx: Vec<usize> = (0..tab.h.len()).filter(|&k| dist[k] <= d_max * (1.0 + 1e-12) && dist[k] <= half).collect();
    if idx.len() < 8 {
        return Err(Error::WindowTooNarrow { points: idx.len() });
    }
    let n = idx.len() as f64;
    let window = (d_min, idx.iter().map(|&k| dist[k]).fold(0.0, f64::max));
    if v.degree == 1 {
        let sxy: f64 = idx.iter().map(|&k| dist[k] * tab.a[k]).sum();
        let sxx: f64 = idx.iter().map(|&k| dist[k] * dist[k]).sum();
        let slope = sxy / sxx;
        let mean = idx.iter().map(|&k| tab.a[k]).sum::<f64>() / n;
        let ss_res: f64 = idx.iter().map(|&k| (tab.a[k] - slope * dist[k]).powi(2)).sum();
        let ss_tot: f64 = idx.iter().map(|&k| (tab.a[k] - mean).powi(2)).sum();
        let inner: Vec<usize> = idx.iter().copied().filter(|&k| dist[k] <= 10.0 * d_min).collect();
        let inner = if inner.len() >= 3 { inner } else { idx.clone() };
        let ni = inner.len() as f64;
        let md = inner.iter().map(|&k| dist[k]).sum::<f64>() / ni;
        let mt = inner.iter().map(|&k| tab.t[k]).sum::<f64>() / ni;
        let st: f64 = inner.iter().map(|&k| (dist[k] - md) * (tab.t[k] - mt)).sum();
        let sdd: f64 = inner.iter().map(|&k| (dist[k] - md).powi(2)).sum();
        let t0 = mt - st / sdd * md;
        Ok(FitReport { edge: tab.edge, vertex, regime: Regime::Entrance, a_coef: slope, t_coef: t0, intercept: 0.0, r2: 1.0 - ss_res / ss_tot, points: idx.len(), window })
    } else {
        let xs: Vec<f64> = idx.iter().map(|&k| dist[k].ln().abs()).collect();
        let ys: Vec<f64> = idx.iter().map(|&k| tab.t[k]).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let nearest = idx.iter().copied().min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap_or(0);
        Ok(FitReport {
            edge: tab.edge,
            vertex,
            regime: Regime::Saddle,
            a_coef: tab.a[nearest],
            t_coef: slope,
            intercept: my - slope * mx,
            r2: sxy * sxy / (sxx * syy),
            points: idx.len(),
            window,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContractionReport {
    pub lhs: f64,
    pub rhs: f64,
    pub mc_stderr: f64,
}

/// Graph-side energy form against a Monte Carlo estimate of the ambient form of the lifted
/// functions over the domain box. `f` and `g` return value and derivative in `h` on an edge.
pub fn form_contraction_check<F, G>(proj: &Projection, tables: &[EdgeCoefficientTable], f: F, g: G, n_mc: usize, seed: u64) -> Result<ContractionReport>
where
    F: Fn(usize, f64) -> (f64, f64) + Sync,
    G: Fn(usize, f64) -> (f64, f64) + Sync,
{
    let sys = proj.system();
    let nu = sys.nu;
    let mut lhs = 0.0;
    for tab in tables {
        let e = tab.edge;
        let integrand = |h: f64| {
            let (fv, fd) = f(e, h);
            let (gv, gd) = g(e, h);
            let _ = fv;
            nu * tab.a_at(h) * fd * gd - tab.c_at(h) * tab.t_at(h) * fd * gv
        };
        lhs += quad::integrate(integrand, tab.h_lo(), tab.h_hi(), 1e-12, 1e-10, 4000).value;
    }

    let d = sys.domain;
    let area = d.area();
    let chunk = 4096usize;
    let chunks = n_mc.div_ceil(chunk);
    let sums: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut r = rng::stream(seed, rng::tag::MONTE_CARLO, ci as u64);
            let m = chunk.min(n_mc - ci * chunk);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..m {
                let x = [d.lo[0] + (d.hi[0] - d.lo[0]) * rng::uniform(&mut r), d.lo[1] + (d.hi[1] - d.lo[1]) * rng::uniform(&mut r)];
                let v = match proj.classify(&x) {
                    Ok((GraphLoc::Edge(e), h)) => {
                        let (_, fd) = f(e, h);
                        let (gv, gd) = g(e, h);
                        let gr = sys.grad(&x);
                        let dr = sys.drift(&x);
                        area * (nu * fd * gd * (gr[0] * gr[0] + gr[1] * gr[1]) - fd * (dr[0] * gr[0] + dr[1] * gr[1]) * gv)
                    }
                    _ => 0.0,
                };
                s1 += v;
                s2 += v * v;
            }
            (s1, s2, m)
        })
        .collect();
    let (s1, s2, n) = sums.iter().fold((0.0, 0.0, 0usize), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    let nf = n.max(1) as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    Ok(ContractionReport { lhs, rhs: mean, mc_stderr: (var / nf).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::HamiltonianSystem2D;
    use crate::reeb::{build_graph, find_critical_points};
    use std::f64::consts::PI;

    fn setup(name: &str, h_max: f64) -> Projection {
        let sys = HamiltonianSystem2D::preset(name, h_max).unwrap();
        let c = find_critical_points(&sys, 24).unwrap();
        build_graph(&sys, &c).unwrap().1
    }

    #[test]
    fn stretch_puts_half_the_nodes_near_the_ends() {
        let g = two_sided_grid(0.0, 1.0, 1000, default_stretch());
        let near = g.iter().filter(|&&h| !(0.1..=0.9).contains(&h)).count();
        assert!((near as i64 - 500).abs() <= 2, "{near}");
        assert!(g.windows(2).all(|w| w[1] > w[0]) && g[0] > 0.0 && g[999] < 1.0);
        let o = one_sided_grid(0.25, 100.0, 50, 1e-3);
        assert!(o.windows(2).all(|w| w[1] > w[0]) && o[0] > 0.25 && o[49] == 100.0);
    }

    #[test]
    fn radial_columns() {
        let p = setup("radial-quadratic", 50.0);
        let tab = tabulate_edge(&p, 0, &GridSpec::new(200, 50.0)).unwrap();
        for k in 0..tab.h.len() {
            let h = tab.h[k];
            assert!((tab.t[k] / (2.0 * PI) - 1.0).abs() < 1e-8);
            assert!((tab.a[k] / (4.0 * PI * h) - 1.0).abs() < 1e-8);
            assert!((tab.sigma2[k] / (2.0 * h) - 1.0).abs() < 1e-8);
            assert_eq!(tab.c[k], 0.0);
            assert!((tab.b[k] - 1.0).abs() < 1e-6);
        }
        let back = EdgeCoefficientTable::from_csv(0, tab.l, tab.r, true, &tab.to_csv()).unwrap();
        assert_eq!(back.h, tab.h);
        assert_eq!(back.b, tab.b);
        let tr = transmission_weights(std::slice::from_ref(&tab), &p.graph, 0.5, &TransmissionOptions::default()).unwrap();
        assert_eq!(tr[0].weights[0].alpha, 0.0);
        let fit = asymptotic_fit(&tab, &p.graph, 0, 3.0).unwrap();
        assert_eq!(fit.regime, Regime::Entrance);
        assert!((fit.a_coef / (4.0 * PI) - 1.0).abs() < 1e-8 && (fit.t_coef / (2.0 * PI) - 1.0).abs() < 1e-8 && fit.r2 > 0.999);
        assert!(stokes_check(&tab, 0.5, 0.0) < 1e-6);
    }

    #[test]
    fn duffing_weights_and_asymptotics() {
        let p = setup("duffing-well", 20.0);
        let spec = GridSpec::new(600, 20.0);
        let tabs = tabulate_all(&p, &spec).unwrap();
        let g = &p.graph;
        let tr = transmission_weights(&tabs, g, 0.5, &TransmissionOptions::default()).unwrap();
        let saddle = g.vertices.iter().find(|v| v.degree == 3).unwrap();
        let w = &tr[saddle.id].weights;
        let outer = g.unbounded_edge().unwrap();
        let inner: Vec<&EndWeight> = w.iter().filter(|x| x.edge != outer).collect();
        let out = w.iter().find(|x| x.edge == outer).unwrap();
        assert!((inner[0].alpha - 1.6).abs() < 1.6e-3, "{:?}", w);
        assert!((inner[0].alpha - inner[1].alpha).abs() < 1e-3 * inner[0].alpha);
        assert!((out.alpha - inner[0].alpha - inner[1].alpha).abs() < 1e-3 * out.alpha);
        assert!((out.probability - 0.5).abs() < 1e-3);
        for v in g.vertices.iter().filter(|v| v.degree == 1) {
            assert_eq!(tr[v.id].weights[0].alpha, 0.0);
        }
        for tab in tabs.iter().filter(|t| !t.unbounded) {
            let s = asymptotic_fit(tab, g, saddle.id, 3.0).unwrap();
            assert!(s.t_coef > 0.0 && s.r2 >= 0.99, "{s:?}");
            let min_v = g.vertices.iter().find(|v| v.degree == 1 && v.incident[0].edge == tab.edge).unwrap();
            let m = asymptotic_fit(tab, g, min_v.id, 3.0).unwrap();
            assert!(m.r2 >= 0.999, "{m:?}");
            assert!((m.t_coef - 2.0 * PI / 2f64.sqrt()).abs() < 1e-5, "{m:?}");
            assert!(stokes_check(tab, 0.5, 0.05) < 1e-4, "{}", stokes_check(tab, 0.5, 0.05));
            assert!(tab.sigma2.iter().all(|&s| s > 0.0) && tab.t.iter().all(|&t| t > 0.0));
        }
    }

    #[test]
    fn contraction_identity_radial() {
        let p = setup("radial-quadratic", 4.0);
        let tabs = tabulate_all(&p, &GridSpec::new(200, 4.0)).unwrap();
        let bump = |_: usize, h: f64| {
            let u = (h - 1.0) / 0.3;
            let v = (-u * u).exp();
            (v, -2.0 * u / 0.3 * v)
        };
        let r = form_contraction_check(&p, &tabs, bump, bump, 200_000, 11).unwrap();
        let exact = quad::quad(|h| 0.5 * bump(0, h).1.powi(2) * 2.0 * h * 2.0 * PI, 0.0, 4.0, 1e-12);
        assert!((r.lhs - exact).abs() < 1e-6 * exact);
        assert!((r.lhs - r.rhs).abs() < 3.0 * r.mc_stderr, "{r:?}");
        let one = |_: usize, _: f64| (1.0, 0.0);
        let z = form_contraction_check(&p, &tabs, one, one, 10_000, 3).unwrap();
        assert_eq!(z.lhs, 0.0);
        assert_eq!(z.rhs, 0.0);
    }
}
