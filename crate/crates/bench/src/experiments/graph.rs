use super::{model, plot_from_csv, projection};
use crate::config::ExperimentConfig;
use crate::manifest::OutDir;
use crate::plot::Chart;
use crate::Check;
use anyhow::Result;
use fwlab::ambient::tightness_level;
use fwlab::coeffs::{asymptotic_fit, transmissions_to_json, FitReport};
use fwlab::rng::{self, tag};
use serde::Serialize;

#[derive(Serialize)]
struct GraphSummary {
    potential: String,
    edges: usize,
    vertices: usize,
    degrees: Vec<usize>,
    h_max: f64,
    mean_h0: f64,
    horizon: f64,
    /// Level exceeded before `horizon` with probability at most 1e-4, from the supermartingale bound.
    tightness_level: f64,
}

pub(super) fn build_graph_cmd(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let (sys, proj) = projection(cfg)?;
    let g = &proj.graph;
    dir.write("graph.json", g.to_json()?.as_bytes())?;
    let mut r = rng::stream(cfg.seed, tag::MONTE_CARLO, 0);
    let n = 10_000;
    let mean_h0 = (0..n).map(|_| sys.h(&cfg.experiment.init.sample::<2>(&mut r))).sum::<f64>() / n as f64;
    let horizon = cfg.experiment.times.last().copied().unwrap_or(1.0);
    let summary = GraphSummary {
        potential: g.potential.clone(),
        edges: g.edges.len(),
        vertices: g.vertices.len(),
        degrees: g.vertices.iter().map(|v| v.degree).collect(),
        h_max: cfg.system.h_max,
        mean_h0,
        horizon,
        tightness_level: tightness_level(&sys, &cfg.ambient(0.0), mean_h0, horizon, 1e-4),
    };
    dir.write_json("graph_summary.json", &summary)?;
    let check = g.check();
    Ok(vec![Check::flag("graph invariants", None, check.is_ok(), check.err().map(|e| e.to_string()).unwrap_or_default())])
}

#[derive(Serialize)]
struct FitRow {
    edge: usize,
    vertex: usize,
    fit: Option<FitReport>,
    error: Option<String>,
}

pub(super) fn coeffs_cmd(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let m = model(cfg)?;
    let g = &m.graph.graph;
    dir.write("graph.json", g.to_json()?.as_bytes())?;
    let mut checks = Vec::new();
    let mut long = String::from("edge,h,T,a,sigma2,c,b\n");
    for tab in &m.graph.tables {
        let name = format!("coeffs_edge{}.csv", tab.edge);
        let csv = tab.to_csv();
        for line in csv.lines().skip(1) {
            long.push_str(&format!("{},{line}\n", tab.edge));
        }
        dir.write(&name, csv.as_bytes())?;
        let positive = tab.t.iter().chain(&tab.a).chain(&tab.sigma2).all(|&v| v > 0.0);
        let finite_b = tab.b.iter().all(|v| v.is_finite());
        checks.push(Check::flag(format!("edge {}: T, a, σ² positive and b finite", tab.edge), None, positive && finite_b, format!("{} nodes on ({}, {})", tab.h.len(), tab.l, tab.r)));
    }
    dir.write("coeffs.csv", long.as_bytes())?;
    dir.write("transmissions.json", transmissions_to_json(&m.graph.transmissions)?.as_bytes())?;
    for tr in &m.graph.transmissions {
        let v = &g.vertices[tr.vertex];
        if v.degree == 1 {
            let a = tr.weights.iter().map(|w| w.alpha.abs()).fold(0.0, f64::max);
            checks.push(Check::at_most(format!("vertex {}: α vanishes at the extremum", v.id), None, a, 0.0, ""));
        } else {
            let s: f64 = tr.weights.iter().map(|w| w.probability).sum();
            let nonneg = tr.weights.iter().all(|w| w.alpha >= 0.0);
            checks.push(Check::at_most(format!("vertex {}: probabilities sum to 1", v.id), None, (s - 1.0).abs(), 1e-12, if nonneg { "all α ≥ 0" } else { "negative α" }));
        }
    }
    let mut fits = Vec::new();
    for v in &g.vertices {
        for inc in &v.incident {
            let tab = &m.graph.tables[inc.edge];
            let row = match asymptotic_fit(tab, g, v.id, cfg.validate.decades) {
                Ok(f) => FitRow { fit: Some(f), edge: inc.edge, vertex: v.id, error: None },
                Err(e) => FitRow { fit: None, edge: inc.edge, vertex: v.id, error: Some(e.to_string()) },
            };
            fits.push(row);
        }
    }
    dir.write_json("fits.json", &fits)?;
    plot_from_csv(dir, "coeffs.csv", "coeffs_T.svg", "h", "T", Some("edge"), Chart { title: "period T(h)".into(), x_label: "h".into(), y_label: "T".into(), ..Chart::default() })?;
    plot_from_csv(dir, "coeffs.csv", "coeffs_sigma2.svg", "h", "sigma2", Some("edge"), Chart { title: "σ²(h)".into(), x_label: "h".into(), y_label: "σ²".into(), ..Chart::default() })?;
    Ok(checks)
}
