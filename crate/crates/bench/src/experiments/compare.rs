use super::{flagged_check, fmt_kappa, label_homogeneity, located, model, plot_from_csv, write_ensemble, Model};
use crate::config::{ExperimentConfig, Expect};
use crate::manifest::OutDir;
use crate::plot::Chart;
use crate::Check;
use anyhow::Result;
use fwlab::ambient::{projected_init, simulate_projected};
use fwlab::graphsim::GraphSim;
use fwlab::pathio::Ensemble;
use fwlab::stats::{graph_distance, ks_threshold_99, GraphDistance};
use std::fmt::Write;

fn ambient_runs(cfg: &ExperimentConfig, m: &Model, dir: &mut OutDir) -> Result<Vec<(f64, Ensemble)>> {
    let run = &cfg.experiment;
    let mut out = Vec::new();
    for &k in &cfg.ambient.kappa {
        let e = simulate_projected(&m.sys, &m.proj, &cfg.ambient(k), &run.init, &run.times, run.n_paths, cfg.seed);
        write_ensemble(dir, &format!("ambient_k{}", fmt_kappa(k)), &e)?;
        out.push((k, e));
    }
    Ok(out)
}

fn graph_run(cfg: &ExperimentConfig, m: &Model, dir: &mut OutDir) -> Result<Ensemble> {
    let run = &cfg.experiment;
    let sim = GraphSim::new(m.graph.clone(), cfg.scheme());
    let e = sim.simulate_paths(projected_init(&m.proj, &run.init), &run.times, run.n_paths, cfg.seed);
    write_ensemble(dir, "graph", &e)?;
    Ok(e)
}

pub(super) fn simulate_ambient(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let m = model(cfg)?;
    let runs = ambient_runs(cfg, &m, dir)?;
    Ok(runs.iter().map(|(k, e)| flagged_check(&format!("ambient κ={}", fmt_kappa(*k)), e)).collect())
}

pub(super) fn simulate_graph(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let m = model(cfg)?;
    let e = graph_run(cfg, &m, dir)?;
    Ok(vec![flagged_check("graph", &e)])
}

struct Row {
    kappa: f64,
    t: usize,
    d: GraphDistance,
    threshold: f64,
    label_p: f64,
}

fn distances(a: &Ensemble, b: &Ensemble, kappa: f64) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for t in 0..a.times.len() {
        let (xa, xb) = (located(a, t, false), located(b, t, false));
        let d = graph_distance(&xa, &xb)?;
        rows.push(Row { kappa, t, threshold: ks_threshold_99(xa.len(), xb.len()), label_p: label_homogeneity(&xa, &xb), d });
    }
    Ok(rows)
}

fn distances_csv(rows: &[Row], times: &[f64]) -> String {
    let mut s = String::from("kappa,t,tv,weighted_ks,combined,ks_threshold,label_p\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e},{:e},{:e},{:e}", r.kappa, times[r.t], r.d.tv, r.d.weighted_ks, r.d.combined, r.threshold, r.label_p);
    }
    s
}

fn per_loc_csv(rows: &[Row], times: &[f64]) -> String {
    let mut s = String::from("kappa,t,loc,weight,count_a,count_b,ks,ks_threshold,w1\n");
    for r in rows {
        for l in &r.d.per_loc {
            let (ks, thr) = l.ks.map_or((String::new(), String::new()), |k| (format!("{:e}", k.statistic), format!("{:e}", k.threshold_99)));
            let w1 = l.w1.map(|w| format!("{w:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{:e},{},{},{ks},{thr},{w1}", r.kappa, times[r.t], l.loc, l.weight, l.count_a, l.count_b);
        }
    }
    s
}

/// Every location seen by both samples passes KS, and the labels pass the homogeneity test.
fn indistinguishable(r: &Row) -> (bool, String) {
    let failed: Vec<String> = r.d.per_loc.iter().filter(|l| l.ks.is_some_and(|k| !k.passes())).map(|l| l.loc.to_string()).collect();
    let ok = failed.is_empty() && r.label_p > 0.01;
    (ok, format!("label p = {:.3}, KS rejected at [{}]", r.label_p, failed.join(" ")))
}

pub(super) fn compare(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let m = model(cfg)?;
    let run = &cfg.experiment;
    let graph = graph_run(cfg, &m, dir)?;
    let mut checks = vec![flagged_check("graph", &graph)];
    let ambient = ambient_runs(cfg, &m, dir)?;
    if ambient.is_empty() {
        return Ok(checks);
    }
    checks.extend(ambient.iter().map(|(k, e)| flagged_check(&format!("ambient κ={}", fmt_kappa(*k)), e)));
    let mut rows = Vec::new();
    for (k, e) in &ambient {
        rows.extend(distances(e, &graph, *k)?);
    }
    let mut vs_first = Vec::new();
    for (k, e) in &ambient[1..] {
        vs_first.extend(distances(e, &ambient[0].1, *k)?);
    }
    dir.write("distances.csv", distances_csv(&rows, &run.times).as_bytes())?;
    dir.write("distances_per_edge.csv", per_loc_csv(&rows, &run.times).as_bytes())?;
    if !vs_first.is_empty() {
        dir.write("distances_vs_first_kappa.csv", distances_csv(&vs_first, &run.times).as_bytes())?;
    }
    let kappas: Vec<f64> = ambient.iter().map(|a| a.0).collect();
    let chart = Chart {
        title: "ambient vs graph law".into(),
        x_label: "κ".into(),
        y_label: "max(TV, weighted KS)".into(),
        log_x: kappas.iter().all(|&k| k > 0.0),
        log_y: rows.iter().all(|r| r.d.combined > 0.0),
        reference: (run.expect == Expect::Decreasing).then_some(run.max_distance),
    };
    plot_from_csv(dir, "distances.csv", "convergence.svg", "kappa", "combined", Some("t"), chart)?;

    match run.expect {
        Expect::Decreasing => {
            let crit = Some(5);
            for (ti, t) in run.times.iter().enumerate() {
                let seq: Vec<f64> = rows.iter().filter(|r| r.t == ti).map(|r| r.d.combined).collect();
                let dec = seq.windows(2).all(|w| w[1] < w[0]);
                let mut text = format!("{:.4}", seq[0]);
                for w in seq.windows(2) {
                    let _ = write!(text, " {} {:.4}", if w[1] < w[0] { ">" } else { "≤" }, w[1]);
                }
                checks.push(Check::flag(format!("t={t}: distance strictly decreasing in κ"), crit, dec, text));
                let last = *seq.last().expect("nonempty sweep");
                checks.push(Check::at_most(format!("t={t}: distance at κ={}", fmt_kappa(*kappas.last().expect("nonempty"))), crit, last, run.max_distance, ""));
            }
        }
        Expect::Flat => {
            let crit = Some(1);
            for r in &rows {
                let (ok, detail) = indistinguishable(r);
                checks.push(Check::flag(format!("κ={}, t={}: ambient matches graph law", fmt_kappa(r.kappa), run.times[r.t]), crit, ok, detail));
            }
            for r in &vs_first {
                let (ok, detail) = indistinguishable(r);
                checks.push(Check::flag(format!("κ={}, t={}: matches κ={}", fmt_kappa(r.kappa), run.times[r.t], fmt_kappa(kappas[0])), crit, ok, detail));
            }
        }
    }
    Ok(checks)
}
