//! The subcommands. Each writes its files into an [`OutDir`] and returns its checks.

mod book;
mod compare;
mod flow;
mod graph;
mod validate;

use crate::config::ExperimentConfig;
use crate::manifest::OutDir;
use crate::plot::{render_svg, series_from_csv, Chart};
use crate::{Check, Command};
use anyhow::Result;
use fwlab::graphsim::GraphModel;
use fwlab::pathio::Ensemble;
use fwlab::reeb::{build_graph, find_critical_points, Projection};
use fwlab::stats::chi2_test;
use fwlab::Hamiltonian;
use std::collections::BTreeMap;

pub fn dispatch(cmd: Command, cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    match cmd {
        Command::BuildGraph => graph::build_graph_cmd(cfg, dir),
        Command::Coeffs => graph::coeffs_cmd(cfg, dir),
        Command::SimulateAmbient => compare::simulate_ambient(cfg, dir),
        Command::SimulateGraph => compare::simulate_graph(cfg, dir),
        Command::Compare => compare::compare(cfg, dir),
        Command::Book => book::book(cfg, dir),
        Command::Flow => flow::flow(cfg, dir),
        Command::Validate => validate::validate(cfg, dir),
    }
}

pub(crate) struct Model {
    pub sys: Hamiltonian,
    pub proj: Projection,
    pub graph: GraphModel,
}

pub(crate) fn projection_of(sys: &Hamiltonian, critical_grid: usize) -> Result<Projection> {
    let crit = find_critical_points(sys, critical_grid)?;
    let (_, proj) = build_graph(sys, &crit)?;
    Ok(proj)
}

pub(crate) fn projection(cfg: &ExperimentConfig) -> Result<(Hamiltonian, Projection)> {
    let sys = cfg.system()?;
    let proj = projection_of(&sys, cfg.system.critical_grid)?;
    Ok((sys, proj))
}

pub(crate) fn model(cfg: &ExperimentConfig) -> Result<Model> {
    let (sys, proj) = projection(cfg)?;
    let graph = GraphModel::build(&proj, &cfg.grid_spec(cfg.system.h_max), &cfg.transmission())?;
    Ok(Model { sys, proj, graph })
}

pub(crate) fn write_ensemble(dir: &mut OutDir, stem: &str, e: &Ensemble) -> Result<()> {
    let mut buf = Vec::new();
    e.write_binary(&mut buf)?;
    dir.write(&format!("{stem}.bin"), &buf)?;
    dir.write(&format!("{stem}_marginals.csv"), e.marginals_csv().as_bytes())
}

pub(crate) fn flagged_check(name: &str, e: &Ensemble) -> Check {
    let frac = e.n_flagged() as f64 / e.n_paths().max(1) as f64;
    Check::at_most(format!("{name}: flagged paths"), None, frac, 0.01, format!("{} of {}", e.n_flagged(), e.n_paths()))
}

/// `(loc, coord)` pairs at time index `t`; `second` selects `coord2`.
pub(crate) fn located(e: &Ensemble, t: usize, second: bool) -> Vec<(u32, f64)> {
    e.samples(t).into_iter().map(|s| (s.0, if second { s.2 } else { s.1 })).collect()
}

/// p-value of the χ² homogeneity test of two label samples.
pub(crate) fn label_homogeneity(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let mut counts: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    for s in a {
        counts.entry(s.0).or_default()[0] += 1.0;
    }
    for s in b {
        counts.entry(s.0).or_default()[1] += 1.0;
    }
    let k = counts.len();
    if k < 2 {
        return 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mut obs = Vec::with_capacity(2 * k);
    let mut exp = Vec::with_capacity(2 * k);
    for c in counts.values() {
        let col = c[0] + c[1];
        obs.extend_from_slice(c);
        exp.push(na * col / n);
        exp.push(nb * col / n);
    }
    chi2_test(&obs, &exp, k).1
}

pub(crate) fn fmt_kappa(k: f64) -> String {
    format!("{k}")
}

/// Renders `svg_name` from the CSV file `csv_name` already written to `dir`.
pub(crate) fn plot_from_csv(dir: &mut OutDir, csv_name: &str, svg_name: &str, x: &str, y: &str, group: Option<&str>, chart: Chart) -> Result<()> {
    let text = dir.read_to_string(csv_name)?;
    let series = series_from_csv(&text, x, y, group)?;
    dir.write(svg_name, render_svg(&chart, &series).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneity_of_equal_and_unequal_labels() {
        let a: Vec<(u32, f64)> = (0..3000).map(|i| ((i % 3) as u32, 0.0)).collect();
        assert!(label_homogeneity(&a, &a) > 0.99);
        let b: Vec<(u32, f64)> = (0..3000).map(|i| (if i % 2 == 0 { 0 } else { 1 + (i % 3) as u32 % 2 }, 0.0)).collect();
        assert!(label_homogeneity(&a, &b) < 1e-6);
        assert_eq!(label_homogeneity(&[(0, 1.0)], &[(0, 2.0)]), 1.0);
    }
}
