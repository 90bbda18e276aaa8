use super::{label_homogeneity, located, projection_of};
use crate::config::{system_from, ExperimentConfig};
use crate::manifest::OutDir;
use crate::Check;
use anyhow::{ensure, Result};
use fwlab::ambient::{projected_init, simulate_projected};
use fwlab::flows::{AmbientFlow, AveragedNoise, GraphFlow, NPointEnsemble, NoiseModel};
use fwlab::graphsim::{GraphModel, GraphSim, GraphState};
use fwlab::pathio::Ensemble;
use fwlab::rng::{self, tag};
use fwlab::stats::graph_distance;
use serde::Serialize;
use std::fmt::Write;

#[derive(Serialize)]
struct IncrementReport {
    states: [(usize, f64); 2],
    draws: usize,
    rho: f64,
    empirical: f64,
    bound: f64,
}

#[derive(Serialize)]
struct FlowSummary {
    margin_sup: f64,
    margin_bound: f64,
    fields: usize,
    graph_max_clamp: f64,
    graph_ok_reps: usize,
    ambient_ok_reps: usize,
    /// Replicates per flag code: ok, domain exit, coefficient range, other.
    graph_flags: [usize; 4],
    ambient_flags: [usize; 4],
    increment: IncrementReport,
}

fn flag_counts(e: &NPointEnsemble) -> [usize; 4] {
    let mut c = [0; 4];
    for &f in &e.particles[0].flags {
        c[(f as usize).min(3)] += 1;
    }
    c
}

fn increment_check(flow: &GraphFlow, states: [(usize, f64); 2], draws: usize, seed: u64) -> Result<IncrementReport> {
    let st: Vec<GraphState> = states.iter().map(|&(e, h)| GraphState::on_edge(e, h)).collect();
    let cov = flow.covariance(&st)?;
    let rho = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
    let mut common = rng::stream(seed, tag::MONTE_CARLO, 10);
    let mut parts = vec![rng::stream(seed, tag::MONTE_CARLO, 11), rng::stream(seed, tag::MONTE_CARLO, 12)];
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let d = flow.increments(&st, &mut common, &mut parts)?;
        sab += d[0] * d[1];
        saa += d[0] * d[0];
        sbb += d[1] * d[1];
    }
    Ok(IncrementReport { states, draws, rho, empirical: sab / (saa * sbb).sqrt(), bound: (1.0 - rho * rho) / (draws as f64).sqrt() })
}

/// Particle 0 of an n-point ensemble against an independent one-point ensemble.
fn consistency(tag_name: &str, n: &NPointEnsemble, one: &Ensemble, times: &[f64], csv: &mut String) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (ti, t) in times.iter().enumerate() {
        let (a, b) = (located(&n.particles[0], ti, false), located(one, ti, false));
        let d = graph_distance(&a, &b)?;
        let p = label_homogeneity(&a, &b);
        let rejected: Vec<String> = d.per_loc.iter().filter(|l| l.ks.as_ref().is_some_and(|k| !k.passes())).map(|l| l.loc.to_string()).collect();
        let worst = d.per_loc.iter().filter_map(|l| l.ks.as_ref().map(|k| k.statistic / k.threshold_99)).fold(0.0, f64::max);
        let _ = writeln!(csv, "{tag_name},{t},{:e},{:e},{:e},{p:e}", d.tv, d.weighted_ks, worst);
        let ok = rejected.is_empty() && p > 0.01;
        out.push(Check::flag(format!("{tag_name} t={t}: one-point marginal of the flow"), Some(9), ok, format!("label p = {p:.3}, KS rejected at [{}]", rejected.join(" "))));
    }
    Ok(out)
}

pub(super) fn flow(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let f = &cfg.flow;
    let crit = Some(9);
    let mut sys_cfg = cfg.system.clone();
    sys_cfg.h_max = f.h_max;
    let sys = system_from(&sys_cfg)?;
    let proj = projection_of(&sys, cfg.system.critical_grid)?;
    let mut spec = cfg.grid_spec(f.h_max);
    spec.nodes = f.nodes;
    let gm = GraphModel::build(&proj, &spec, &cfg.transmission())?;
    let noise = NoiseModel::fourier(&f.noise, cfg.seed)?;
    let margin = noise.margin(&sys, f.margin_grid);
    let mut checks = vec![Check::at_most("common noise within the pure-diffusion margin", crit, margin.sup, margin.bound, format!("δ = {}", noise.delta))];
    ensure!(margin.ok(), "common noise rate {} exceeds the bound {}", margin.sup, margin.bound);
    let avg = AveragedNoise::build(&proj, &gm, &noise, cfg.ambient.flow_tol)?;
    let gflow = GraphFlow::new(GraphSim::new(gm, cfg.scheme()), avg);

    let inc = increment_check(&gflow, f.increment_states, f.increment_draws, cfg.seed)?;
    checks.push(Check::at_most("increment correlation matches Q̃/σ²", crit, (inc.empirical - inc.rho).abs(), f.sigmas * inc.bound, format!("ρ = {:.4}, empirical {:.4}", inc.rho, inc.empirical)));

    let init = projected_init(&proj, &f.init);
    let g = gflow.simulate(&init, f.particles, &f.times, f.reps, cfg.seed);
    let amb_cfg = cfg.ambient(f.kappa);
    let a = AmbientFlow::new(&sys, &noise, &amb_cfg).simulate(&proj, &f.init, f.particles, &f.times, f.reps, cfg.seed);
    dir.write("flow_graph_joint.csv", g.joint_csv().as_bytes())?;
    dir.write("flow_ambient_joint.csv", a.joint_csv().as_bytes())?;
    for (name, e) in [("graph", &g), ("ambient", &a)] {
        let ok = e.ok_reps().len();
        let frac = 1.0 - ok as f64 / e.reps().max(1) as f64;
        checks.push(Check::at_most(format!("{name} flow: flagged replicates"), None, frac, 0.01, format!("{ok} of {} usable", e.reps())));
    }

    let one_seed = cfg.seed.wrapping_add(1);
    let one_g = gflow.sim.simulate_paths(&init, &f.times, f.reps, one_seed);
    let one_a = simulate_projected(&sys, &proj, &amb_cfg, &f.init, &f.times, f.reps, one_seed);
    let mut cons = String::from("model,t,tv,weighted_ks,max_ks_over_threshold,label_p\n");
    checks.extend(consistency("graph", &g, &one_g, &f.times, &mut cons)?);
    checks.extend(consistency("ambient", &a, &one_a, &f.times, &mut cons)?);
    dir.write("flow_consistency.csv", cons.as_bytes())?;

    let mut mom = String::from("pair,t,graph_mean,graph_se,ambient_mean,ambient_se,z\n");
    if f.particles >= 2 {
        for (pi, [p, q]) in f.pairs.iter().enumerate() {
            for (ti, t) in f.times.iter().enumerate() {
                let (Some((mg, sg)), Some((ma, sa))) = (g.joint_moment(ti, 0, 1, |l, h| p.eval(l, h), |l, h| q.eval(l, h)), a.joint_moment(ti, 0, 1, |l, h| p.eval(l, h), |l, h| q.eval(l, h))) else {
                    checks.push(Check::flag(format!("pair {pi}, t={t}: joint moment"), crit, false, "too few usable replicates"));
                    continue;
                };
                let se = sg.hypot(sa);
                let z = if se > 0.0 { (mg - ma) / se } else if mg == ma { 0.0 } else { f64::INFINITY };
                let _ = writeln!(mom, "{pi},{t},{mg:e},{sg:e},{ma:e},{sa:e},{z:e}");
                checks.push(Check::at_most(format!("pair {pi}, t={t}: E[f(Y¹)g(Y²)] graph vs ambient"), crit, z.abs(), f.sigmas, format!("graph {mg:.5} ± {sg:.5}, ambient {ma:.5} ± {sa:.5}")));
            }
        }
    }
    dir.write("flow_moments.csv", mom.as_bytes())?;
    let summary = FlowSummary {
        margin_sup: margin.sup,
        margin_bound: margin.bound,
        fields: noise.len(),
        graph_max_clamp: g.max_clamp,
        graph_ok_reps: g.ok_reps().len(),
        ambient_ok_reps: a.ok_reps().len(),
        graph_flags: flag_counts(&g),
        ambient_flags: flag_counts(&a),
        increment: inc,
    };
    dir.write_json("flow_summary.json", &summary)?;
    Ok(checks)
}
