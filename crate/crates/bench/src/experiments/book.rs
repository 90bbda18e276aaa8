use super::{flagged_check, fmt_kappa, located, plot_from_csv, write_ensemble};
use crate::config::ExperimentConfig;
use crate::manifest::OutDir;
use crate::plot::Chart;
use crate::Check;
use anyhow::{bail, Result};
use fwlab::book3d::{simulate_book_ambient, BookAmbientConfig, BookPoint, BookScheme, BookSim};
use fwlab::pathio::Ensemble;
use fwlab::rng::{self, tag};
use fwlab::stats::{chi2_test, graph_distance};
use std::fmt::Write;

pub(crate) fn book_sim(cfg: &ExperimentConfig) -> BookSim {
    let mut sc = BookScheme::new(cfg.book.dt);
    sc.kappa_cfl = cfg.book.kappa_cfl;
    BookSim::new(cfg.confinement(), sc)
}

pub(crate) fn book_ambient(cfg: &ExperimentConfig, kappa: f64) -> BookAmbientConfig {
    let mut a = BookAmbientConfig::new(kappa, cfg.book.ambient_dt, cfg.confinement());
    a.flow_tol = cfg.book.flow_tol;
    a.radius = cfg.book.radius;
    a
}

/// Page counts at the first `visits` binding crossings of one long path.
fn binding_pages(sim: &BookSim, visits: usize, seed: u64) -> Result<[u64; 4]> {
    let mut counts = [0u64; 4];
    let mut seen = 0usize;
    let mut r = rng::stream(seed, tag::MONTE_CARLO, 1);
    let mut s = BookPoint::new(1, 1.0, 0.7);
    let dt = sim.scheme.dt;
    let max_steps = 200 * visits + 1_000_000;
    for _ in 0..max_steps {
        s = sim.step_observed(s, dt, &mut r, &mut |p| {
            if seen < visits {
                counts[(p - 1) as usize] += 1;
                seen += 1;
            }
        })?;
        if seen >= visits {
            return Ok(counts);
        }
    }
    bail!("only {seen} binding visits in {max_steps} steps")
}

fn book_distance(a: &Ensemble, b: &Ensemble, t: usize) -> Result<(f64, f64, f64, f64)> {
    let dr = graph_distance(&located(a, t, false), &located(b, t, false))?;
    let dth = graph_distance(&located(a, t, true), &located(b, t, true))?;
    Ok((dr.tv, dr.weighted_ks, dth.weighted_ks, dr.combined.max(dth.combined)))
}

pub(super) fn book(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<Vec<Check>> {
    let b = &cfg.book;
    let crit = Some(8);
    let sim = book_sim(cfg);
    let limit = sim.simulate(&b.init, &b.times, b.n_paths, cfg.seed);
    write_ensemble(dir, "book", &limit)?;
    let mut checks = vec![flagged_check("book diffusion", &limit)];
    let mut csv = String::from("kappa,t,tv,ks_r,ks_theta,combined\n");
    let mut last = None;
    for &k in &b.kappa {
        let amb = simulate_book_ambient(&book_ambient(cfg, k), &b.init, &b.times, b.n_paths, cfg.seed);
        write_ensemble(dir, &format!("book_ambient_k{}", fmt_kappa(k)), &amb)?;
        checks.push(flagged_check(&format!("book ambient κ={}", fmt_kappa(k)), &amb));
        for (ti, t) in b.times.iter().enumerate() {
            let (tv, kr, kt, comb) = book_distance(&amb, &limit, ti)?;
            let _ = writeln!(csv, "{k},{t},{tv:e},{kr:e},{kt:e},{comb:e}");
            last = Some((k, comb));
        }
    }
    dir.write("book_distances.csv", csv.as_bytes())?;
    if !b.kappa.is_empty() {
        let chart = Chart {
            title: "book: ambient vs limit".into(),
            x_label: "κ".into(),
            y_label: "max(TV, weighted KS)".into(),
            log_x: b.kappa.iter().all(|&k| k > 0.0),
            reference: Some(b.max_distance),
            ..Chart::default()
        };
        plot_from_csv(dir, "book_distances.csv", "book_convergence.svg", "kappa", "combined", Some("t"), chart)?;
    }
    if let Some((k, comb)) = last {
        let t = b.times.last().expect("checked nonempty");
        checks.push(Check::at_most(format!("κ={}, t={t}: book distance", fmt_kappa(k)), crit, comb, b.max_distance, "max over (page, r) and (page, θ)"));
    }
    let counts = binding_pages(&sim, b.binding_visits, cfg.seed)?;
    let n: u64 = counts.iter().sum();
    let mut pages = String::from("page,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(pages, "{},{c}", i + 1);
    }
    dir.write("binding_pages.csv", pages.as_bytes())?;
    let obs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (stat, p) = chi2_test(&obs, &[n as f64 / 4.0; 4], 0);
    checks.push(Check::at_least("pages after binding visits uniform", crit, p, 0.01, format!("χ² = {stat:.3} over {n} visits")));
    Ok(checks)
}
