//! Reeb graph of a planar Hamiltonian: critical points, level-set components, vertex gluing and
//! the projection `x ↦ (edge, H(x))`.

use crate::error::{Error, Result};
use crate::fields::{trace_orbit, HamiltonianSystem2D, OrbitOptions};
use crate::numerics::ode::{self, Flow, StepControl};
use crate::numerics::roots::brent;
use crate::Point;
use serde::{Deserialize, Serialize};

type Sys = HamiltonianSystem2D<f64>;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Min,
    Max,
    Saddle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Point,
    pub value: f64,
    pub kind: CriticalKind,
    pub hessian: [[f64; 2]; 2],
}

/// Edge end: `Plus` is the lower end `l_i`, `Minus` the upper end `r_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum End {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAnchor {
    pub level: f64,
    pub point: Point,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub id: usize,
    pub l: f64,
    #[serde(with = "inf_as_null")]
    pub r: f64,
    /// One anchor per band crossed by the edge, at the band's mid level.
    pub anchors: Vec<LevelAnchor>,
}

impl Edge {
    pub fn is_unbounded(&self) -> bool {
        self.r.is_infinite()
    }

    pub fn contains(&self, h: f64) -> bool {
        h > self.l && h < self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incidence {
    pub edge: usize,
    pub end: End,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vertex {
    pub id: usize,
    pub level: f64,
    pub degree: usize,
    pub incident: Vec<Incidence>,
    /// Index into the critical point table.
    pub critical: Option<usize>,
}

/// Regular levels strictly between two consecutive critical values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    #[serde(with = "inf_as_null")]
    pub hi: f64,
    pub mid: f64,
    pub components: Vec<BandComponent>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandComponent {
    pub edge: usize,
    pub anchor: Point,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricGraph {
    pub schema_version: u32,
    pub potential: String,
    pub critical_points: Vec<CriticalPoint>,
    pub bands: Vec<Band>,
    pub edges: Vec<Edge>,
    pub vertices: Vec<Vertex>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl MetricGraph {
    /// Vertex attached to an edge end, if any.
    pub fn vertex_at(&self, edge: usize, end: End) -> Option<usize> {
        self.vertices.iter().position(|v| v.incident.iter().any(|i| i.edge == edge && i.end == end))
    }

    pub fn unbounded_edge(&self) -> Option<usize> {
        self.edges.iter().position(|e| e.is_unbounded())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: MetricGraph = serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))?;
        if g.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(Error::Invalid(format!("graph schema version {} (expected {GRAPH_SCHEMA_VERSION})", g.schema_version)));
        }
        g.check()?;
        Ok(g)
    }

    /// Structural invariants: degrees, one vertex per finite end, at most one unbounded edge.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        for v in &self.vertices {
            if v.degree != v.incident.len() {
                return bad(format!("vertex {} degree {} but {} incident ends", v.id, v.degree, v.incident.len()));
            }
        }
        let mut finite_ends = 0;
        for e in &self.edges {
            if !(e.l < e.r) {
                return bad(format!("edge {} has empty interval", e.id));
            }
            let ends: &[End] = if e.is_unbounded() { &[End::Plus] } else { &[End::Plus, End::Minus] };
            for &end in ends {
                finite_ends += 1;
                let n = self.vertices.iter().flat_map(|v| v.incident.iter()).filter(|i| i.edge == e.id && i.end == end).count();
                if n != 1 {
                    return bad(format!("edge {} end {:?} attached to {} vertices", e.id, end, n));
                }
            }
        }
        let degree_sum: usize = self.vertices.iter().map(|v| v.degree).sum();
        if degree_sum != finite_ends {
            return bad(format!("degree sum {degree_sum} vs {finite_ends} finite ends"));
        }
        if self.edges.iter().filter(|e| e.is_unbounded()).count() > 1 {
            return bad("more than one unbounded edge".into());
        }
        Ok(())
    }
}

fn norm(v: &Point) -> f64 {
    v[0].hypot(v[1])
}

fn det(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn sym_eigen(m: &[[f64; 2]; 2]) -> ([f64; 2], [Point; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (tr - disc, tr + disc);
    let v1 = if b.abs() > 1e-300 {
        let v = [b, l1 - a];
        let n = norm(&v);
        [v[0] / n, v[1] / n]
    } else if a <= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l1, l2], [v1, [-v1[1], v1[0]]])
}

fn newton_critical(sys: &Sys, x0: Point, tol: f64) -> Option<Point> {
    let mut x = x0;
    for _ in 0..200 {
        let g = sys.grad(&x);
        let gn = norm(&g);
        if gn <= tol {
            return Some(x);
        }
        let h = sys.hess(&x);
        let dt = det(&h);
        let step = if dt.abs() > 1e-300 {
            [(h[1][1] * g[0] - h[0][1] * g[1]) / dt, (h[0][0] * g[1] - h[1][0] * g[0]) / dt]
        } else {
            g
        };
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let y = [x[0] - lam * step[0], x[1] - lam * step[1]];
            if sys.domain.contains(&y) && norm(&sys.grad(&y)) < gn * (1.0 - 1e-4 * lam) {
                x = y;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

/// Newton from a `grid_n × grid_n` seed grid over the domain box, deduplicated.
pub fn find_critical_points(sys: &Sys, grid_n: usize) -> Result<Vec<CriticalPoint>> {
    if grid_n < 16 {
        return Err(Error::Invalid(format!("grid_n = {grid_n} < 16")));
    }
    let d = sys.domain;
    let diam = d.diameter();
    let tol = 1e-12 * (1.0 + diam);
    let radius = 1e-6 * diam;
    let mut found: Vec<Point> = Vec::new();
    for i in 0..grid_n {
        for j in 0..grid_n {
            let s = (i as f64 + 0.5) / grid_n as f64;
            let u = (j as f64 + 0.5) / grid_n as f64;
            let seed = [d.lo[0] + s * (d.hi[0] - d.lo[0]), d.lo[1] + u * (d.hi[1] - d.lo[1])];
            if let Some(x) = newton_critical(sys, seed, tol) {
                if !found.iter().any(|y| norm(&[x[0] - y[0], x[1] - y[1]]) < radius) {
                    found.push(x);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(found.len());
    for x in found {
        let h = sys.hess(&x);
        let dt = det(&h);
        let fro2 = h[0][0] * h[0][0] + h[0][1] * h[0][1] + h[1][0] * h[1][0] + h[1][1] * h[1][1];
        if dt.abs() < 1e-8 * (1.0 + fro2) {
            return Err(Error::DegenerateCritical { x: x[0], y: x[1], det: dt });
        }
        let (ev, _) = sym_eigen(&h);
        let kind = if ev[0] > 0.0 {
            CriticalKind::Min
        } else if ev[1] < 0.0 {
            CriticalKind::Max
        } else {
            CriticalKind::Saddle
        };
        out.push(CriticalPoint { location: x, value: sys.h(&x), kind, hessian: h });
    }
    out.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.location[0].total_cmp(&b.location[0])));
    Ok(out)
}

/// Gradient-line field `dx/dh = ±∇H/|∇H|²`, parametrised by the level.
struct LevelFlow<'a> {
    sys: &'a Sys,
    sign: f64,
}

impl Flow<f64, 2> for LevelFlow<'_> {
    fn velocity(&self, x: &Point) -> Point {
        let g = self.sys.grad(x);
        let n2 = g[0] * g[0] + g[1] * g[1];
        [self.sign * g[0] / n2, self.sign * g[1] / n2]
    }

    fn invariants(&self, _x: &Point) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn contains(&self, x: &Point) -> bool {
        self.sys.domain.contains(x)
    }
}

/// Moves `x` along the gradient line through it to the level `target`.
pub fn continue_to_level(sys: &Sys, x: Point, target: f64) -> Result<Point> {
    let h0 = sys.h(&x);
    let gap = target - h0;
    let fail = || Error::TopologyAmbiguous { level: target, detail: format!("continuation from level {h0} failed") };
    let mut y = x;
    if gap != 0.0 {
        let f = LevelFlow { sys, sign: gap.signum() };
        let mut ctl = StepControl::new(1e-10);
        ctl.max_steps = 20_000;
        ctl.h_min = 1e-14 * (1.0 + gap.abs());
        y = ode::integrate(&f, x, gap.abs(), ctl, None).map_err(|_| fail())?.0;
    }
    for _ in 0..6 {
        let g = sys.grad(&y);
        let n2 = g[0] * g[0] + g[1] * g[1];
        if n2 == 0.0 {
            return Err(fail());
        }
        let r = target - sys.h(&y);
        y = [y[0] + r * g[0] / n2, y[1] + r * g[1] / n2];
    }
    if !sys.domain.contains(&y) || (sys.h(&y) - target).abs() > 1e-9 * (1.0 + target.abs()) {
        return Err(fail());
    }
    Ok(y)
}

fn segment_distance(a: &Point, b: &Point, x: &Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let s = if l2 > 0.0 { (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    norm(&[a[0] + s * d[0] - x[0], a[1] + s * d[1] - x[1]])
}

fn polyline_distance(poly: &[Point], x: &Point) -> f64 {
    let n = poly.len();
    (0..n).map(|k| segment_distance(&poly[k], &poly[(k + 1) % n], x)).fold(f64::INFINITY, f64::min)
}

fn bbox_diameter(poly: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in poly {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    norm(&[hi[0] - lo[0], hi[1] - lo[1]])
}

fn nearest(polys: &[Vec<Point>], x: &Point) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, p) in polys.iter().enumerate() {
        let d = polyline_distance(p, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn orbit_opts() -> OrbitOptions<f64> {
    let mut o = OrbitOptions::new(1e-10);
    o.min_samples = 256;
    o.max_samples = 4096;
    o
}

/// All closed components of `{H = level}`, seeded from horizontal scan lines through the
/// critical points (every bounded component encloses one).
fn level_components(sys: &Sys, level: f64, crit: &[CriticalPoint]) -> Result<Vec<Vec<Point>>> {
    let d = sys.domain;
    let width = d.hi[0] - d.lo[0];
    let mut comps: Vec<Vec<Point>> = Vec::new();
    let mut lines: Vec<f64> = crit.iter().map(|c| c.location[1]).collect();
    lines.sort_by(f64::total_cmp);
    lines.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + b.abs()));
    for &y in &lines {
        let mut xs: Vec<f64> = (0..=4096).map(|k| d.lo[0] + width * k as f64 / 4096.0).collect();
        for c in crit {
            let x0 = c.location[0];
            let mut s = 1e-7 * width;
            while s < width {
                for x in [x0 - s, x0 + s] {
                    if x > d.lo[0] && x < d.hi[0] {
                        xs.push(x);
                    }
                }
                s *= 1.03;
            }
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let f = |x: f64| sys.h(&[x, y]) - level;
        let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        for k in 1..xs.len() {
            if (vals[k - 1] < 0.0) == (vals[k] < 0.0) {
                continue;
            }
            let Some(root) = brent(f, xs[k - 1], xs[k], 1e-14 * (1.0 + xs[k].abs()), 200) else { continue };
            let seed = [root, y];
            if comps.iter().any(|p| polyline_distance(p, &seed) < 1e-3 * bbox_diameter(p)) {
                continue;
            }
            let orbit = trace_orbit(sys, seed, &orbit_opts()).map_err(|e| Error::TopologyAmbiguous {
                level,
                detail: format!("component through ({root}, {y}) not traceable: {e}"),
            })?;
            comps.push(orbit.samples);
        }
    }
    Ok(comps)
}

fn steepest(sys: &Sys, poly: &[Point]) -> Point {
    *poly.iter().max_by(|a, b| norm(&sys.grad(a)).total_cmp(&norm(&sys.grad(b)))).unwrap_or(&poly[0])
}

fn mid_anchors(poly: &[Point], n: usize) -> impl Iterator<Item = Point> + '_ {
    let step = (poly.len() / n).max(1);
    poly.iter().step_by(step).copied()
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, i: usize) -> usize {
        let p = self.0[i];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.0[i] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Builds the metric graph and the projection for the critical points `crit`.
pub fn build_graph(sys: &Sys, crit: &[CriticalPoint]) -> Result<(MetricGraph, Projection)> {
    if crit.is_empty() {
        return Err(Error::Invalid("no critical points".into()));
    }
    let mut values: Vec<f64> = Vec::new();
    for c in crit {
        match values.last() {
            Some(&v) if (c.value - v).abs() <= 1e-9 * (1.0 + v.abs()) => {}
            _ => values.push(c.value),
        }
    }
    let m = values.len();
    let top = values[m - 1];
    let top_mid = top + 0.5 * (top - values[0]).max(0.2 * (1.0 + top.abs()));
    let mids: Vec<f64> = (0..m).map(|j| if j + 1 < m { 0.5 * (values[j] + values[j + 1]) } else { top_mid }).collect();

    let mut polys: Vec<Vec<Vec<Point>>> = Vec::with_capacity(m);
    for &mid in &mids {
        polys.push(level_components(sys, mid, crit)?);
    }
    if polys[m - 1].len() > 1 {
        return Err(Error::TopologyAmbiguous { level: top_mid, detail: format!("{} components above the top critical value", polys[m - 1].len()) });
    }

    let mut offset = vec![0usize; m + 1];
    for j in 0..m {
        offset[j + 1] = offset[j] + polys[j].len();
    }
    let mut dsu = Dsu((0..offset[m]).collect());
    let node = |j: usize, k: usize| offset[j] + k;

    // groups at each critical value: (below comps, above comps)
    let mut groups: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    for j in 0..m {
        let above = &polys[j];
        let below: &[Vec<Point>] = if j > 0 { &polys[j - 1] } else { &[] };
        let nb = below.len();
        let mut g = Dsu((0..nb + above.len()).collect());
        for (k, p) in below.iter().enumerate() {
            for a in mid_anchors(p, 16) {
                if let Ok(y) = continue_to_level(sys, a, mids[j]) {
                    g.union(k, nb + nearest(above, &y));
                }
            }
        }
        if j > 0 {
            for (k, p) in above.iter().enumerate() {
                for a in mid_anchors(p, 16) {
                    if let Ok(y) = continue_to_level(sys, a, mids[j - 1]) {
                        g.union(nearest(below, &y), nb + k);
                    }
                }
            }
        }
        let mut roots: Vec<usize> = Vec::new();
        for i in 0..nb + above.len() {
            let r = g.find(i);
            if !roots.contains(&r) {
                roots.push(r);
            }
        }
        for r in roots {
            let lo: Vec<usize> = (0..nb).filter(|&i| g.find(i) == r).collect();
            let hi: Vec<usize> = (0..above.len()).filter(|&i| g.find(nb + i) == r).collect();
            if lo.len() == 1 && hi.len() == 1 {
                dsu.union(node(j - 1, lo[0]), node(j, hi[0]));
            } else {
                groups.push((j, lo, hi));
            }
        }
    }

    let mut edge_of = vec![usize::MAX; offset[m]];
    let mut edges: Vec<Edge> = Vec::new();
    for j in 0..m {
        for k in 0..polys[j].len() {
            let r = dsu.find(node(j, k));
            let id = if edge_of[r] == usize::MAX {
                edge_of[r] = edges.len();
                edges.push(Edge { id: edges.len(), l: values[j], r: f64::INFINITY, anchors: Vec::new() });
                edges.len() - 1
            } else {
                edge_of[r]
            };
            edge_of[node(j, k)] = id;
            let e = &mut edges[id];
            e.r = if j + 1 < m { values[j + 1] } else { f64::INFINITY };
            e.anchors.push(LevelAnchor { level: mids[j], point: steepest(sys, &polys[j][k]) });
        }
    }

    let mut vertices: Vec<Vertex> = Vec::new();
    for (j, lo, hi) in &groups {
        let mut incident = Vec::new();
        for &k in lo {
            incident.push(Incidence { edge: edge_of[node(j - 1, k)], end: End::Minus });
        }
        for &k in hi {
            incident.push(Incidence { edge: edge_of[node(*j, k)], end: End::Plus });
        }
        vertices.push(Vertex { id: vertices.len(), level: values[*j], degree: incident.len(), incident, critical: None });
    }

    let bands: Vec<Band> = (0..m)
        .map(|j| Band {
            lo: values[j],
            hi: if j + 1 < m { values[j + 1] } else { f64::INFINITY },
            mid: mids[j],
            components: polys[j].iter().enumerate().map(|(k, p)| BandComponent { edge: edge_of[node(j, k)], anchor: steepest(sys, p) }).collect(),
        })
        .collect();
    let mut graph = MetricGraph {
        schema_version: GRAPH_SCHEMA_VERSION,
        potential: sys.potential.name(),
        critical_points: crit.to_vec(),
        bands,
        edges,
        vertices,
    };
    let proj = Projection::from_polylines(sys.clone(), graph.clone(), polys);
    assign_critical_points(&mut graph, &proj, &values)?;
    graph.check().map_err(|e| Error::TopologyAmbiguous { level: f64::NAN, detail: e.to_string() })?;
    let proj = Projection { graph: graph.clone(), ..proj };
    Ok((graph, proj))
}

/// Probes each critical point along Hessian eigenvectors to find the vertex it sits in.
fn assign_critical_points(graph: &mut MetricGraph, proj: &Projection, values: &[f64]) -> Result<()> {
    let band_of = |v: f64| values.iter().position(|&c| (c - v).abs() <= 1e-9 * (1.0 + c.abs())).unwrap_or(0);
    for (ci, c) in graph.critical_points.clone().iter().enumerate() {
        let j = band_of(c.value);
        let gap_up = if j + 1 < values.len() { values[j + 1] - values[j] } else { 1.0 + c.value.abs() };
        let gap_dn = if j > 0 { values[j] - values[j - 1] } else { gap_up };
        let dh = 1e-4 * gap_up.min(gap_dn);
        let (ev, vecs) = sym_eigen(&c.hessian);
        let mut hits: Vec<usize> = Vec::new();
        for (lam, v) in ev.iter().zip(vecs.iter()) {
            let eps = (2.0 * dh / lam.abs()).sqrt();
            let probe = [c.location[0] + eps * v[0], c.location[1] + eps * v[1]];
            let edge = proj.edge_of_point(&probe)?;
            let end = if *lam > 0.0 { End::Plus } else { End::Minus };
            let vid = graph
                .vertices
                .iter()
                .position(|vx| (vx.level - c.value).abs() <= 1e-9 * (1.0 + c.value.abs()) && vx.incident.iter().any(|i| i.edge == edge && i.end == end))
                .ok_or_else(|| Error::TopologyAmbiguous { level: c.value, detail: format!("critical point {ci} probe on edge {edge} meets no vertex") })?;
            hits.push(vid);
        }
        if hits[0] != hits[1] {
            return Err(Error::TopologyAmbiguous { level: c.value, detail: format!("critical point {ci} probes reach vertices {hits:?}") });
        }
        let v = &mut graph.vertices[hits[0]];
        if v.critical.is_some() {
            return Err(Error::TopologyAmbiguous { level: c.value, detail: format!("vertex {} holds two critical points", v.id) });
        }
        v.critical = Some(ci);
        let expected = if c.kind == CriticalKind::Saddle { 3 } else { 1 };
        if v.degree != expected {
            return Err(Error::TopologyAmbiguous { level: c.value, detail: format!("{:?} with vertex degree {}", c.kind, v.degree) });
        }
    }
    if let Some(v) = graph.vertices.iter().find(|v| v.critical.is_none()) {
        return Err(Error::TopologyAmbiguous { level: v.level, detail: format!("vertex {} contains no critical point", v.id) });
    }
    Ok(())
}

/// Position on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GraphLoc {
    Edge(usize),
    Vertex(usize),
}

/// `π(x) = (i(x), H(x))`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub graph: MetricGraph,
    sys: Sys,
    polys: Vec<Vec<Vec<Point>>>,
}

impl Projection {
    fn from_polylines(sys: Sys, graph: MetricGraph, polys: Vec<Vec<Vec<Point>>>) -> Self {
        Self { graph, sys, polys }
    }

    /// Rebuilds the component polylines of a stored graph by retracing its band anchors.
    pub fn new(sys: Sys, graph: MetricGraph) -> Result<Self> {
        let mut polys = Vec::with_capacity(graph.bands.len());
        for b in &graph.bands {
            let mut ps = Vec::with_capacity(b.components.len());
            for c in &b.components {
                let anchor = continue_to_level(&sys, c.anchor, b.mid)?;
                ps.push(trace_orbit(&sys, anchor, &orbit_opts())?.samples);
            }
            polys.push(ps);
        }
        Ok(Self { graph, sys, polys })
    }

    pub fn system(&self) -> &Sys {
        &self.sys
    }

    fn band_index(&self, h: f64) -> Option<usize> {
        self.graph.bands.iter().position(|b| h > b.lo && h < b.hi)
    }

    fn edge_of_point(&self, x: &Point) -> Result<usize> {
        let h = self.sys.h(x);
        let j = self.band_index(h).ok_or_else(|| Error::Invalid(format!("level {h} is not a regular value of the graph")))?;
        let band = &self.graph.bands[j];
        if band.components.len() == 1 {
            return Ok(band.components[0].edge);
        }
        let y = continue_to_level(&self.sys, *x, band.mid)?;
        Ok(band.components[nearest(&self.polys[j], &y)].edge)
    }

    /// `(edge or vertex, H(x))`. Levels equal to a critical value map to the vertex whose
    /// critical point is nearest.
    pub fn classify(&self, x: &Point) -> Result<(GraphLoc, f64)> {
        let h = self.sys.h(x);
        let g = &self.graph;
        let at_vertex: Vec<&Vertex> = g.vertices.iter().filter(|v| (h - v.level).abs() <= 1e-12 * (1.0 + v.level.abs())).collect();
        if !at_vertex.is_empty() {
            let dist = |v: &Vertex| v.critical.map(|c| norm(&[x[0] - g.critical_points[c].location[0], x[1] - g.critical_points[c].location[1]])).unwrap_or(f64::INFINITY);
            let v = at_vertex.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).unwrap();
            return Ok((GraphLoc::Vertex(v.id), h));
        }
        Ok((GraphLoc::Edge(self.edge_of_point(x)?), h))
    }

    /// A point on the orbit of edge `edge` at level `h`.
    pub fn anchor(&self, edge: usize, h: f64) -> Result<Point> {
        let e = self.graph.edges.get(edge).ok_or_else(|| Error::Invalid(format!("no edge {edge}")))?;
        if !e.contains(h) {
            return Err(Error::Invalid(format!("level {h} outside edge {edge}")));
        }
        let j = self.band_index(h).ok_or_else(|| Error::Invalid(format!("level {h} is critical")))?;
        let c = self.graph.bands[j]
            .components
            .iter()
            .find(|c| c.edge == edge)
            .ok_or_else(|| Error::Invalid(format!("edge {edge} not present at level {h}")))?;
        continue_to_level(&self.sys, c.anchor, h)
    }

    /// Component polyline of `edge` at the mid level of the band containing `h`.
    pub fn band_polyline(&self, edge: usize, h: f64) -> Option<&[Point]> {
        let j = self.band_index(h)?;
        let k = self.graph.bands[j].components.iter().position(|c| c.edge == edge)?;
        Some(&self.polys[j][k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprField;
    use crate::fields::{flow_step, Drift, Potential, Rect};
    use std::sync::Arc;

    fn duffing() -> Sys {
        HamiltonianSystem2D::preset("duffing-well", 20.0).unwrap()
    }

    #[test]
    fn radial_critical_point() {
        let sys: Sys = HamiltonianSystem2D::preset("radial-quadratic", 20.0).unwrap();
        let c = find_critical_points(&sys, 16).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, CriticalKind::Min);
        assert!(norm(&c[0].location) < 1e-10 && c[0].value.abs() < 1e-20);
    }

    #[test]
    fn duffing_critical_points() {
        let c = find_critical_points(&duffing(), 24).unwrap();
        assert_eq!(c.len(), 3);
        let mins: Vec<_> = c.iter().filter(|p| p.kind == CriticalKind::Min).collect();
        assert_eq!(mins.len(), 2);
        for p in mins {
            assert!((p.location[0].abs() - 1.0).abs() < 1e-10 && p.location[1].abs() < 1e-10 && p.value.abs() < 1e-15);
        }
        let s = c.iter().find(|p| p.kind == CriticalKind::Saddle).unwrap();
        assert!(norm(&s.location) < 1e-10 && (s.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn monkey_saddle_is_degenerate() {
        let f = ExprField::parse("x1^3 - 3*x1*x2^2").unwrap();
        let sys = HamiltonianSystem2D::new(Potential::Expr(Arc::new(f)), Drift::Zero, 0.5, Rect { lo: [-1.0, -1.0], hi: [1.0, 1.0] });
        assert!(matches!(find_critical_points(&sys, 16), Err(Error::DegenerateCritical { .. })));
    }

    #[test]
    fn radial_graph() {
        let sys: Sys = HamiltonianSystem2D::preset("radial-quadratic", 20.0).unwrap();
        let c = find_critical_points(&sys, 16).unwrap();
        let (g, p) = build_graph(&sys, &c).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].l, 0.0);
        assert!(g.edges[0].is_unbounded());
        assert_eq!(g.vertices.len(), 1);
        assert_eq!(g.vertices[0].degree, 1);
        assert_eq!(g.vertices[0].incident, vec![Incidence { edge: 0, end: End::Plus }]);
        assert_eq!(p.classify(&[2.0, -1.0]).unwrap(), (GraphLoc::Edge(0), 2.5));
    }

    #[test]
    fn duffing_graph() {
        let sys = duffing();
        let c = find_critical_points(&sys, 24).unwrap();
        let (g, p) = build_graph(&sys, &c).unwrap();
        assert_eq!(g.edges.len(), 3);
        assert_eq!(g.vertices.len(), 3);
        let mut degrees: Vec<usize> = g.vertices.iter().map(|v| v.degree).collect();
        degrees.sort();
        assert_eq!(degrees, vec![1, 1, 3]);
        let saddle = g.vertices.iter().find(|v| v.degree == 3).unwrap();
        assert!((saddle.level - 0.25).abs() < 1e-15);
        let outer = g.unbounded_edge().unwrap();
        assert!((g.edges[outer].l - 0.25).abs() < 1e-15);
        let inner: Vec<_> = g.edges.iter().filter(|e| !e.is_unbounded()).collect();
        assert_eq!(inner.len(), 2);
        for e in inner {
            assert!(e.l.abs() < 1e-15 && (e.r - 0.25).abs() < 1e-15);
        }

        let (loc, h) = p.classify(&[1.5, 0.0]).unwrap();
        assert_eq!(loc, GraphLoc::Edge(outer));
        assert_eq!(h, sys.h(&[1.5, 0.0]));
        let (l, _) = p.classify(&[1.2, 0.1]).unwrap();
        let (r, _) = p.classify(&[-0.9, -0.2]).unwrap();
        assert!(l != r && l != GraphLoc::Edge(outer) && r != GraphLoc::Edge(outer));
        assert_eq!(p.classify(&[0.0, 0.0]).unwrap().0, GraphLoc::Vertex(saddle.id));
    }

    #[test]
    fn classification_is_constant_along_orbits() {
        let sys = duffing();
        let c = find_critical_points(&sys, 24).unwrap();
        let (_, p) = build_graph(&sys, &c).unwrap();
        for x0 in [[1.5, 0.0], [0.7, 0.1], [-1.3, 0.2], [0.1, 0.9]] {
            let l0 = p.classify(&x0).unwrap().0;
            let mut x = x0;
            for _ in 0..12 {
                x = flow_step(&sys, x, 0.37, 1e-10).unwrap();
                assert_eq!(p.classify(&x).unwrap().0, l0);
            }
        }
    }

    #[test]
    fn json_round_trip_and_rebuild() {
        let sys = duffing();
        let c = find_critical_points(&sys, 24).unwrap();
        let (g, p) = build_graph(&sys, &c).unwrap();
        let back = MetricGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.edges.len(), 3);
        assert!(back.edges[g.unbounded_edge().unwrap()].r.is_infinite());
        let q = Projection::new(sys.clone(), back).unwrap();
        for x in [[1.5, 0.0], [0.7, 0.1], [-1.3, 0.2]] {
            assert_eq!(p.classify(&x).unwrap(), q.classify(&x).unwrap());
        }
        let a = q.anchor(1, 0.1).unwrap();
        assert!((sys.h(&a) - 0.1).abs() < 1e-12);
        assert_eq!(q.classify(&a).unwrap().0, GraphLoc::Edge(1));
    }
}
