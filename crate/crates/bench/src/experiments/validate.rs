use super::projection_of;
use crate::config::ExperimentConfig;
use crate::manifest::OutDir;
use crate::Check;
use anyhow::{anyhow, Result};
use fwlab::ambient::{simulate_projected, InitLaw};
use fwlab::book3d::weights::weight_validations;
use fwlab::book3d::{a_matrix, ellip, nu_average, period_numeric, period_page1};
use fwlab::coeffs::{asymptotic_fit, form_contraction_check, stokes_check, GridSpec, Regime};
use fwlab::fields::HamiltonianSystem2D;
use fwlab::graphsim::{GraphModel, GraphSim, GraphState, Scheme};
use fwlab::pathio::Ensemble;
use fwlab::reeb::Projection;
use fwlab::rng::{self, tag};
use fwlab::stats::within_binomial;
use fwlab::Hamiltonian;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write;

fn preset_model(cfg: &ExperimentConfig, name: &str, h_max: f64, nodes: usize, critical_grid: usize) -> Result<(Hamiltonian, Projection, GraphModel)> {
    let sys = HamiltonianSystem2D::preset(name, h_max).ok_or_else(|| anyhow!("no preset {name}"))?;
    let proj = projection_of(&sys, critical_grid)?;
    let gm = GraphModel::build(&proj, &GridSpec::new(nodes, h_max), &cfg.transmission())?;
    Ok((sys, proj, gm))
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Closed-form radial coefficients: `T = 2π`, `a = 4πh`, `σ² = 2h`, `b = 1`.
fn radial_coefficients(gm: &GraphModel, dir: &mut OutDir) -> Result<Vec<Check>> {
    let crit = Some(3);
    let tab = &gm.tables[0];
    let mut csv = String::from("h,T,T_exact,a,a_exact,sigma2,sigma2_exact,b,b_exact\n");
    let (mut et, mut ea, mut eb) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..tab.h.len() {
        let h = tab.h[k];
        et = et.max(rel(tab.t[k], 2.0 * PI));
        eb = eb.max((tab.b[k] - 1.0).abs());
        let _ = writeln!(csv, "{h:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},1", tab.t[k], 2.0 * PI, tab.a[k], 4.0 * PI * h, tab.sigma2[k], 2.0 * h, tab.b[k]);
    }
    for i in 0..=60 {
        let h = 0.1 * 10f64.powf(2.0 * i as f64 / 60.0);
        ea = ea.max(rel(tab.a_at(h), 4.0 * PI * h));
    }
    dir.write("validate_radial.csv", csv.as_bytes())?;
    Ok(vec![
        Check::at_most("radial: T = 2π at every node (relative)", crit, et, 1e-6, format!("{} nodes", tab.h.len())),
        Check::at_most("radial: interpolated a(h) = 4πh on [0.1, 10] (relative)", crit, ea, 1e-4, "61 log-spaced levels"),
        Check::at_most("radial: b = 1 at every node", crit, eb, 1e-3, ""),
        Check::at_most("radial: Stokes identity a' = ∫ΔH", None, stokes_check(tab, 0.5, 0.0), 1e-6, ""),
    ])
}

fn contraction(cfg: &ExperimentConfig, proj: &Projection, gm: &GraphModel) -> Result<Check> {
    let bump = |_: usize, h: f64| {
        let u = (h - 1.0) / 0.3;
        let v = (-u * u).exp();
        (v, -2.0 * u / 0.3 * v)
    };
    let r = form_contraction_check(proj, &gm.tables, bump, bump, cfg.validate.contraction_samples, cfg.seed)?;
    Ok(Check::at_most("radial: graph energy equals ambient energy of the lift", None, (r.lhs - r.rhs).abs(), 3.0 * r.mc_stderr, format!("graph {:.6}, ambient {:.6}", r.lhs, r.rhs)))
}

fn duffing_asymptotics(cfg: &ExperimentConfig, gm: &GraphModel, dir: &mut OutDir) -> Result<Vec<Check>> {
    let crit = Some(4);
    let g = &gm.graph;
    let mut checks = Vec::new();
    let mut fits = Vec::new();
    for v in &g.vertices {
        for inc in &v.incident {
            let tab = &gm.tables[inc.edge];
            if tab.unbounded {
                continue;
            }
            let f = asymptotic_fit(tab, g, v.id, cfg.validate.decades)?;
            let name = format!("duffing: edge {} at vertex {}", inc.edge, v.id);
            match f.regime {
                Regime::Saddle => {
                    checks.push(Check::at_least(format!("{name}: T linear in |log|h − h_v|| (R²)"), crit, f.r2, 0.99, format!("slope {:.5}", f.t_coef)));
                    checks.push(Check::at_least(format!("{name}: logarithmic slope positive"), crit, f.t_coef, f64::MIN_POSITIVE, ""));
                }
                Regime::Entrance => {
                    checks.push(Check::at_least(format!("{name}: a linear in |h − h_v| (R²)"), crit, f.r2, 0.999, format!("slope {:.5}, T limit {:.6}", f.a_coef, f.t_coef)));
                }
            }
            fits.push(f);
        }
    }
    for tab in gm.tables.iter().filter(|t| !t.unbounded) {
        checks.push(Check::at_most(format!("duffing: edge {} Stokes identity", tab.edge), None, stokes_check(tab, 0.5, 0.05), 1e-4, ""));
    }
    dir.write_json("validate_fits.json", &fits)?;
    Ok(checks)
}

/// Exit frequencies at the saddle against the transmission probabilities, at `dt` and `dt/2`
/// with common random numbers.
fn vertex_flux(cfg: &ExperimentConfig, gm: &GraphModel, dir: &mut OutDir) -> Result<Vec<Check>> {
    let crit = Some(6);
    let v = &cfg.validate;
    let saddle = gm.graph.vertices.iter().find(|x| x.degree == 3).ok_or_else(|| anyhow!("no saddle"))?;
    let weights = &gm.transmissions[saddle.id].weights;
    let n_edges = gm.graph.edges.len();
    let mut freq = Vec::new();
    for dt in [v.flux_dt, v.flux_dt / 2.0] {
        let mut s = Scheme::new(dt);
        s.kappa_cfl = cfg.graph.kappa_cfl;
        s.bridge = cfg.graph.bridge;
        let sim = GraphSim::new(gm.clone(), s);
        let counts: Vec<usize> = {
            use rayon::prelude::*;
            let exits: Vec<usize> = (0..v.flux_trials)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(cfg.seed, tag::MONTE_CARLO, 1000 + i as u64);
                    sim.exit_edge(saddle.id, v.flux_eps, &mut r)
                })
                .collect::<fwlab::Result<_>>()?;
            (0..n_edges).map(|e| exits.iter().filter(|&&x| x == e).count()).collect()
        };
        freq.push(counts.iter().map(|&c| c as f64 / v.flux_trials as f64).collect::<Vec<f64>>());
    }
    let n = v.flux_trials;
    let mut csv = String::from("edge,probability,freq_dt,freq_half_dt,sigma\n");
    let mut checks = Vec::new();
    for w in weights {
        let p = w.probability;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let (f1, f2) = (freq[0][w.edge], freq[1][w.edge]);
        let _ = writeln!(csv, "{},{p:e},{f1:e},{f2:e},{sigma:e}", w.edge);
        for (label, f) in [("dt", f1), ("dt/2", f2)] {
            let ok = within_binomial(f, p, n, 3.0);
            checks.push(Check::flag(format!("saddle exit into edge {} at {label}", w.edge), crit, ok, format!("frequency {f:.4}, probability {p:.4}, 3σ = {:.4}", 3.0 * sigma)));
        }
        checks.push(Check::at_most(format!("saddle exit into edge {}: dt halving", w.edge), crit, (f1 - f2).abs(), 2.0 * sigma, "common random numbers"));
    }
    dir.write("validate_flux.csv", csv.as_bytes())?;
    Ok(checks)
}

/// `E H(X_t) = 1 + t` from `H(X₀) = 1` on the radial preset.
fn moments(cfg: &ExperimentConfig, sys: &Hamiltonian, proj: &Projection, gm: &GraphModel, dir: &mut OutDir) -> Result<Vec<Check>> {
    let crit = Some(2);
    let v = &cfg.validate;
    let sim = GraphSim::new(gm.clone(), cfg.scheme());
    let g = sim.simulate_paths(|_, _| Ok(GraphState::on_edge(0, 1.0)), &v.moment_times, v.moment_paths, cfg.seed);
    let init = InitLaw::Point { x: vec![SQRT_2, 0.0] };
    let a = simulate_projected(sys, proj, &cfg.ambient(v.moment_kappa), &init, &v.moment_times, v.moment_paths, cfg.seed);
    let mut csv = String::from("model,t,mean,stderr,exact\n");
    let mut checks = Vec::new();
    for (name, e) in [("graph", &g), ("ambient", &a)] {
        checks.push(Check::at_most(format!("moments {name}: flagged paths"), crit, e.n_flagged() as f64, 0.0, ""));
        for (ti, t) in v.moment_times.iter().enumerate() {
            let (m, se) = mean_se(e, ti);
            let _ = writeln!(csv, "{name},{t},{m:e},{se:e},{}", 1.0 + t);
            checks.push(Check::at_most(format!("moments {name} t={t}: |E H − (1 + t)| / se"), crit, (m - (1.0 + t)).abs() / se, 3.0, format!("mean {m:.5} ± {se:.5}")));
        }
    }
    dir.write("validate_moments.csv", csv.as_bytes())?;
    Ok(checks)
}

fn mean_se(e: &Ensemble, t: usize) -> (f64, f64) {
    let xs: Vec<f64> = e.samples(t).iter().map(|s| s.1).collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn eig2(a: [[f64; 2]; 2]) -> [f64; 2] {
    let c = 0.5 * (a[0][0] + a[1][1]);
    let r = (0.5 * (a[0][0] - a[1][1])).hypot(0.5 * (a[0][1] + a[1][0]));
    [c - r, c + r]
}

fn book_formulas(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let crit = Some(7);
    let v = &cfg.validate;
    let mut csv = String::from("y1,y2,period,period_exact,x3_sq,x3_sq_exact,eig_lo,eig_hi,lambda\n");
    let (mut ep, mut ex, mut ee) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..v.book_points {
        let y1 = 1.0 + 0.1 * k as f64;
        let y = [y1, y1 * (0.05 + 0.1 * k as f64)];
        let t = y[1] / y[0];
        let el = ellip(t);
        let p = period_numeric(y, v.book_tol)?;
        let p0 = period_page1(y);
        let x3 = nu_average(y, v.book_tol, |x| x[2] * x[2])?;
        let x3e = 2.0 * y1 * y1 * el.alpha;
        let eg = eig2(a_matrix(y)?);
        let mut want = [1.0, el.lambda];
        want.sort_by(f64::total_cmp);
        ep = ep.max(rel(p, p0));
        ex = ex.max((x3 - x3e).abs() / (1.0 + x3e));
        ee = ee.max((eg[0] - want[0]).abs().max((eg[1] - want[1]).abs()));
        let _ = writeln!(csv, "{},{},{p:e},{p0:e},{x3:e},{x3e:e},{:e},{:e},{:e}", y[0], y[1], eg[0], eg[1], el.lambda);
    }
    dir.write("validate_book.csv", csv.as_bytes())?;
    let w = weight_validations(&v.a2);
    dir.write_json("validate_weights.json", &w)?;
    Ok(vec![
        Check::at_most("book: numerical period matches the closed form (relative)", crit, ep, 1e-6, format!("{} points on page 1", v.book_points)),
        Check::at_most("book: ν_y(x₃²) = 2y₁²α", crit, ex, 1e-6, ""),
        Check::at_most("book: eigenvalues of a(y) are 1 and λ", crit, ee, 1e-10, ""),
        Check::at_most("book: λ_θ h_θ → 4 at the binding", crit, w.lambda_h_error, 1e-3, ""),
        Check::flag("book: A₂ bounded and stable under refinement", crit, w.a2_ok(), format!("max {:.4}, change {:.2e}", w.a2_fine.value, w.a2_change)),
    ])
}

pub(super) fn validate(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let v = &cfg.validate;
    let (rsys, rproj, rgm) = preset_model(cfg, "radial-quadratic", v.radial_h_max, v.radial_nodes, 16)?;
    let mut checks = radial_coefficients(&rgm, dir)?;
    checks.push(contraction(cfg, &rproj, &rgm)?);
    checks.extend(moments(cfg, &rsys, &rproj, &rgm, dir)?);
    let (_, _, dgm) = preset_model(cfg, "duffing-well", v.duffing_h_max, v.duffing_nodes, 32)?;
    checks.extend(duffing_asymptotics(cfg, &dgm, dir)?);
    checks.extend(vertex_flux(cfg, &dgm, dir)?);
    checks.extend(book_formulas(cfg, dir)?);
    Ok(checks)
}
