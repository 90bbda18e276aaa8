//! Euler–Maruyama for the limiting diffusion on the metric graph, with spider gluing at vertices
//! of degree ≥ 2 and folding at degree-1 ends.

use crate::coeffs::{self, EdgeCoefficientTable, GridSpec, TransmissionOptions, VertexTransmission};
use crate::error::{Error, Result};
use crate::pathio::{Ensemble, PathKind, PathRecord, FLAG_OK, FLAG_OTHER, FLAG_RANGE, VERTEX_BIT};
use crate::reeb::{End, GraphLoc, MetricGraph, Projection};
use crate::rng::{self, StreamRng};
use rayon::prelude::*;

/// Coefficient tables and vertex weights on a metric graph.
#[derive(Debug, Clone)]
pub struct GraphModel {
    pub graph: MetricGraph,
    pub tables: Vec<EdgeCoefficientTable>,
    pub transmissions: Vec<VertexTransmission>,
    ends: Vec<[Option<usize>; 2]>,
}

impl GraphModel {
    pub fn new(graph: MetricGraph, mut tables: Vec<EdgeCoefficientTable>, transmissions: Vec<VertexTransmission>) -> Result<Self> {
        tables.sort_by_key(|t| t.edge);
        if tables.len() != graph.edges.len() || tables.iter().enumerate().any(|(i, t)| t.edge != i) {
            return Err(Error::Invalid("one coefficient table per edge required".into()));
        }
        for v in &graph.vertices {
            let tr = transmissions.iter().find(|t| t.vertex == v.id).ok_or_else(|| Error::Invalid(format!("no transmission for vertex {}", v.id)))?;
            if v.degree >= 2 && tr.weights.iter().map(|w| w.alpha).sum::<f64>() <= 0.0 {
                return Err(Error::Invalid(format!("vertex {} has zero total weight", v.id)));
            }
        }
        let ends = (0..graph.edges.len()).map(|e| [graph.vertex_at(e, End::Plus), graph.vertex_at(e, End::Minus)]).collect();
        Ok(Self { graph, tables, transmissions, ends })
    }

    /// Tabulates every edge and the vertex weights.
    pub fn build(proj: &Projection, spec: &GridSpec, topts: &TransmissionOptions) -> Result<Self> {
        let tables = coeffs::tabulate_all(proj, spec)?;
        let tr = coeffs::transmission_weights(&tables, &proj.graph, proj.system().nu, topts)?;
        Self::new(proj.graph.clone(), tables, tr)
    }

    pub fn vertex_of(&self, edge: usize, end: End) -> Option<usize> {
        self.ends[edge][if end == End::Plus { 0 } else { 1 }]
    }

    /// Edge, entry end and level chosen at vertex `v` from a uniform `u`.
    pub fn choose_exit(&self, v: usize, u: f64) -> (usize, End) {
        let tr = &self.transmissions[v];
        let vx = &self.graph.vertices[v];
        if vx.degree == 1 {
            return (vx.incident[0].edge, vx.incident[0].end);
        }
        let mut acc = 0.0;
        for w in &tr.weights {
            acc += w.probability;
            if u < acc {
                return (w.edge, w.end);
            }
        }
        let w = tr.weights.last().expect("vertex with weights");
        (w.edge, w.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphState {
    pub loc: GraphLoc,
    pub h: f64,
}

impl GraphState {
    pub fn on_edge(edge: usize, h: f64) -> Self {
        Self { loc: GraphLoc::Edge(edge), h }
    }

    pub fn code(&self) -> u32 {
        match self.loc {
            GraphLoc::Edge(e) => e as u32,
            GraphLoc::Vertex(v) => VERTEX_BIT | v as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scheme {
    /// Outer step.
    pub dt: f64,
    /// Substep factor in `dt_loc = κ_cfl·d²/σ²`.
    pub kappa_cfl: f64,
    /// Smallest substep, `dt/20` by default.
    pub floor: f64,
    /// Disables vertex substepping (plain Euler–Maruyama on `dt`).
    pub substep: bool,
    /// Brownian-bridge test for vertex visits inside a step that ends on the same edge.
    pub bridge: bool,
}

impl Scheme {
    pub fn new(dt: f64) -> Self {
        Self { dt, kappa_cfl: 0.05, floor: dt / 20.0, substep: true, bridge: true }
    }
}

#[derive(Debug, Clone)]
pub struct GraphSim {
    pub model: GraphModel,
    pub scheme: Scheme,
}

/// Hook for vertex events: `(vertex, chosen edge)`.
pub trait VertexObserver {
    fn visit(&mut self, vertex: usize, edge: usize);
}

impl VertexObserver for () {
    fn visit(&mut self, _: usize, _: usize) {}
}

impl<F: FnMut(usize, usize)> VertexObserver for F {
    fn visit(&mut self, vertex: usize, edge: usize) {
        self(vertex, edge)
    }
}

impl GraphSim {
    pub fn new(model: GraphModel, scheme: Scheme) -> Self {
        Self { model, scheme }
    }

    /// Places a vertex state on an edge, at the vertex level.
    pub fn resolve(&self, s: GraphState, rng: &mut StreamRng, obs: &mut impl VertexObserver) -> GraphState {
        match s.loc {
            GraphLoc::Edge(_) => s,
            GraphLoc::Vertex(v) => {
                let (e, _) = self.model.choose_exit(v, rng::uniform(rng));
                obs.visit(v, e);
                GraphState::on_edge(e, self.model.graph.vertices[v].level)
            }
        }
    }

    /// Moves `h_new` on `edge` back into the edge interval through vertex rules.
    pub fn glue(&self, mut edge: usize, mut h: f64, rng: &mut StreamRng, obs: &mut impl VertexObserver) -> Result<(usize, f64)> {
        let m = &self.model;
        for _ in 0..1000 {
            let tab = &m.tables[edge];
            let (end, excess) = if h < tab.l {
                (End::Plus, tab.l - h)
            } else if h > tab.r {
                if tab.unbounded {
                    return Err(Error::CoefficientRangeExceeded { edge, h, lo: tab.l, hi: tab.r });
                }
                (End::Minus, h - tab.r)
            } else {
                return Ok((edge, h));
            };
            let v = m.vertex_of(edge, end).ok_or_else(|| Error::Invalid(format!("edge {edge} end {end:?} has no vertex")))?;
            let level = m.graph.vertices[v].level;
            let (e2, end2) = m.choose_exit(v, if m.graph.vertices[v].degree == 1 { 0.0 } else { rng::uniform(rng) });
            obs.visit(v, e2);
            edge = e2;
            h = if end2 == End::Plus { level + excess } else { level - excess };
        }
        Err(Error::Invalid("vertex gluing did not settle".into()))
    }

    /// Glues `h_new` if it left the edge. Otherwise, with `bridge` on, a Brownian bridge from `h` to
    /// `h_new` with variance `var` visits each branching end with probability
    /// `exp(−2d₀d₁/var)`; a visit re-draws the edge at that vertex, keeping the distance `d₁`.
    pub fn settle(&self, edge: usize, h: f64, hn: f64, var: f64, rng: &mut StreamRng, obs: &mut impl VertexObserver) -> Result<(usize, f64)> {
        let tab = &self.model.tables[edge];
        if !self.scheme.bridge || hn < tab.l || hn > tab.r || var <= 0.0 {
            return self.glue(edge, hn, rng, obs);
        }
        for end in [End::Plus, End::Minus] {
            let Some(v) = self.model.vertex_of(edge, end) else { continue };
            let vx = &self.model.graph.vertices[v];
            if vx.degree < 2 {
                continue;
            }
            let (d0, d1) = if end == End::Plus { (h - tab.l, hn - tab.l) } else { (tab.r - h, tab.r - hn) };
            if rng::uniform(rng) < (-2.0 * d0 * d1 / var).exp() {
                let (e2, end2) = self.model.choose_exit(v, rng::uniform(rng));
                obs.visit(v, e2);
                return Ok((e2, if end2 == End::Plus { vx.level + d1 } else { vx.level - d1 }));
            }
        }
        Ok((edge, hn))
    }

    /// Advances by `dt`.
    pub fn step(&self, s: GraphState, dt: f64, rng: &mut StreamRng) -> Result<GraphState> {
        self.step_observed(s, dt, rng, &mut ())
    }

    /// Distance in `h` to the nearest end whose vertex has degree at least 2. Degree-1 ends are
    /// handled by folding and do not limit the substep.
    pub(crate) fn branch_distance(&self, edge: usize, h: f64) -> f64 {
        let tab = &self.model.tables[edge];
        let branching = |end| self.model.vertex_of(edge, end).is_some_and(|v| self.model.graph.vertices[v].degree > 1);
        let mut d = f64::INFINITY;
        if branching(End::Plus) {
            d = h - tab.l;
        }
        if !tab.unbounded && branching(End::Minus) {
            d = d.min(tab.r - h);
        }
        d
    }

    pub fn step_observed(&self, s: GraphState, dt: f64, rng: &mut StreamRng, obs: &mut impl VertexObserver) -> Result<GraphState> {
        if dt == 0.0 {
            return Ok(s);
        }
        let s = self.resolve(s, rng, obs);
        let GraphLoc::Edge(mut edge) = s.loc else { unreachable!() };
        let mut h = s.h;
        let mut remaining = dt;
        while remaining > 0.0 {
            let tab = &self.model.tables[edge];
            let s2 = tab.sigma2_at(h)?;
            let b = tab.b_at(h)?;
            let dt_loc = if self.scheme.substep {
                let d = self.branch_distance(edge, h);
                let cfl = if s2 > 0.0 { self.scheme.kappa_cfl * d * d / s2 } else { 0.0 };
                remaining.min(cfl.max(self.scheme.floor))
            } else {
                remaining
            };
            let hn = h + b * dt_loc + (s2 * dt_loc).sqrt() * rng::normal(rng);
            remaining -= dt_loc;
            if remaining < 1e-15 * dt {
                remaining = 0.0;
            }
            (edge, h) = self.settle(edge, h, hn, s2 * dt_loc, rng, obs)?;
        }
        Ok(GraphState::on_edge(edge, h))
    }

    /// Runs to each time in `times` (sorted, starting at or after 0).
    pub fn run_path(&self, init: GraphState, times: &[f64], rng: &mut StreamRng) -> PathRecord {
        let mut out = Vec::with_capacity(times.len());
        let mut s = init;
        let mut t = 0.0;
        for &target in times {
            while t < target {
                let dt = self.scheme.dt.min(target - t);
                match self.step(s, dt, rng) {
                    Ok(n) => s = n,
                    Err(e) => {
                        let flag = if matches!(e, Error::CoefficientRangeExceeded { .. }) { FLAG_RANGE } else { FLAG_OTHER };
                        return (flag, out);
                    }
                }
                t = if target - t <= self.scheme.dt { target } else { t + dt };
            }
            out.push((s.code(), s.h, 0.0));
        }
        (FLAG_OK, out)
    }

    /// `n_paths` independent paths; path `i` draws its initial state from stream `(seed, INIT, i)`
    /// and its increments from `(seed, GRAPH_PATH, i)`.
    pub fn simulate_paths<I>(&self, init: I, times: &[f64], n_paths: usize, seed: u64) -> Ensemble
    where
        I: Fn(usize, &mut StreamRng) -> Result<GraphState> + Sync,
    {
        let paths: Vec<PathRecord> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut ri = rng::stream(seed, rng::tag::INIT, i as u64);
                let s0 = match init(i, &mut ri) {
                    Ok(s) => s,
                    Err(_) => return (FLAG_OTHER, Vec::new()),
                };
                let mut r = rng::stream(seed, rng::tag::GRAPH_PATH, i as u64);
                self.run_path(s0, times, &mut r)
            })
            .collect();
        Ensemble::from_paths(PathKind::Graph, seed, times.to_vec(), paths)
    }

    /// Starts at vertex `v` and returns the edge on which the path first reaches distance `eps`
    /// (in `h`) from the vertex level.
    pub fn exit_edge(&self, v: usize, eps: f64, rng: &mut StreamRng) -> Result<usize> {
        let level = self.model.graph.vertices[v].level;
        let mut s = GraphState { loc: GraphLoc::Vertex(v), h: level };
        for _ in 0..10_000_000 {
            s = self.step(s, self.scheme.dt, rng)?;
            if (s.h - level).abs() >= eps {
                if let GraphLoc::Edge(e) = s.loc {
                    return Ok(e);
                }
            }
        }
        Err(Error::Invalid("no exit".into()))
    }
}

/// Speed density `T(h)·exp(∫ 2c/σ²)` on one edge, normalised to 1 at `h0`.
pub fn speed_density(tab: &EdgeCoefficientTable, h0: f64, h: f64) -> f64 {
    let g = |x: f64| {
        let s2 = tab.sigma2_at(x).unwrap_or(f64::NAN);
        2.0 * tab.c_at(x) / s2
    };
    let integral = crate::numerics::quad::quad(g, h0, h, 1e-12);
    tab.t_at(h) / tab.t_at(h0) * integral.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::EndWeight;
    use crate::fields::{Drift, HamiltonianSystem2D};
    use crate::reeb::{build_graph, find_critical_points, Incidence, Vertex};

    fn radial(h_max: f64, v0: Option<(&str, &str)>) -> GraphModel {
        let mut sys = HamiltonianSystem2D::preset("radial-quadratic", h_max).unwrap();
        if let Some((a, b)) = v0 {
            sys.v0 = Drift::parse(a, b).unwrap();
        }
        let c = find_critical_points(&sys, 16).unwrap();
        let (_, p) = build_graph(&sys, &c).unwrap();
        GraphModel::build(&p, &GridSpec::new(300, h_max), &TransmissionOptions::default()).unwrap()
    }

    #[test]
    fn zero_duration_is_identity() {
        let sim = GraphSim::new(radial(30.0, None), Scheme::new(0.01));
        let mut r = rng::stream(1, 1, 0);
        let s = GraphState::on_edge(0, 1.3);
        assert_eq!(sim.step(s, 0.0, &mut r).unwrap(), s);
    }

    #[test]
    fn radial_mean_grows_linearly() {
        let sim = GraphSim::new(radial(60.0, None), Scheme::new(0.01));
        let times = [0.5, 1.0, 2.0];
        let ens = sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &times, 20_000, 5);
        assert_eq!(ens.n_flagged(), 0);
        for (k, t) in times.iter().enumerate() {
            let xs: Vec<f64> = ens.samples(k).iter().map(|s| s.1).collect();
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            assert!((m - (1.0 + t)).abs() <= 3.0 * se, "t={t}: {m} vs {} (se {se})", 1.0 + t);
            assert!(xs.iter().all(|&h| h >= 0.0));
        }
    }

    #[test]
    fn deterministic_ensembles() {
        let sim = GraphSim::new(radial(30.0, None), Scheme::new(0.02));
        let a = sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &[0.5, 1.0], 500, 9);
        let b = sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &[0.5, 1.0], 500, 9);
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &[0.5, 1.0], 500, 9));
        assert_eq!(a, c);
        assert!(sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &[1.0], 0, 9).n_paths() == 0);
    }

    #[test]
    fn spider_rule_frequencies() {
        let base = radial(30.0, None);
        let mut graph = base.graph.clone();
        let tab = base.tables[0].clone();
        graph.edges = (0..3).map(|i| crate::reeb::Edge { id: i, ..base.graph.edges[0].clone() }).collect();
        graph.vertices = vec![Vertex {
            id: 0,
            level: 0.0,
            degree: 3,
            incident: (0..3).map(|i| Incidence { edge: i, end: End::Plus }).collect(),
            critical: None,
        }];
        let tables = (0..3)
            .map(|i| {
                let mut t = tab.clone();
                t.edge = i;
                t
            })
            .collect();
        let alpha = [2.0, 1.0, 1.0];
        let tr = vec![VertexTransmission {
            vertex: 0,
            level: 0.0,
            weights: (0..3).map(|i| EndWeight { edge: i, end: End::Plus, alpha: alpha[i], probability: alpha[i] / 4.0 }).collect(),
        }];
        let sim = GraphSim::new(GraphModel::new(graph, tables, tr).unwrap(), Scheme::new(0.01));
        let mut counts = [0usize; 3];
        let mut r = rng::stream(3, 1, 0);
        let n = 40_000;
        for _ in 0..n {
            let s = sim.resolve(GraphState { loc: GraphLoc::Vertex(0), h: 0.0 }, &mut r, &mut ());
            if let GraphLoc::Edge(e) = s.loc {
                counts[e] += 1;
            }
        }
        for (i, p) in [0.5, 0.25, 0.25].iter().enumerate() {
            let f = counts[i] as f64 / n as f64;
            assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }

    #[test]
    fn confined_radial_matches_speed_measure() {
        // V0 = -x: b = 1 - 2h, σ² = 2h, stationary law Exp(2).
        let model = radial(30.0, Some(("-x1", "-x2")));
        let tab = &model.tables[0];
        for h in [0.3, 1.0, 2.0] {
            assert!((tab.c_at(h) + 2.0 * h).abs() < 1e-6 * (1.0 + h));
            assert!((tab.b_at(h).unwrap() - (1.0 - 2.0 * h)).abs() < 1e-4);
            assert!((speed_density(tab, 1.0, h) - (-2.0 * (h - 1.0)).exp()).abs() < 1e-5);
        }
        let sim = GraphSim::new(model, Scheme::new(0.005));
        let ens = sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &[6.0], 20_000, 21);
        let xs: Vec<f64> = ens.samples(0).iter().map(|s| s.1).collect();
        let edges = [0.0, 0.1, 0.2, 0.3, 0.45, 0.6, 0.8, 1.0, 1.3, 1.7, f64::INFINITY];
        let mut chi2 = 0.0;
        let n = xs.len() as f64;
        for w in edges.windows(2) {
            let p = (-2.0 * w[0]).exp() - (-2.0 * w[1]).exp();
            let o = xs.iter().filter(|&&x| x >= w[0] && x < w[1]).count() as f64;
            chi2 += (o - n * p).powi(2) / (n * p);
        }
        // 9 degrees of freedom, p = 0.01
        assert!(chi2 < 21.67, "chi2 = {chi2}");
    }
}
