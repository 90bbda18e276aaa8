//! The limiting diffusion on the book and the ambient ℝ³ diffusion `dX = κV dt − ∇𝒲 dt + √2 dB`.

use super::elliptic::ellip_delta;
use super::geometry::{project_book, BookPoint, BookShear, P3};
use crate::ambient::{for_each_step, Confinement, InitLaw};
use crate::error::{Error, Result};
use crate::numerics::ode::{integrate, StepControl};
use crate::pathio::{Ensemble, PathKind, PathRecord, FLAG_DOMAIN_EXIT, FLAG_OK, FLAG_OTHER};
use crate::rng::{self, StreamRng};
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

/// Distance to the binding below which the coefficients are frozen.
const EPS_MIN: f64 = 1e-17;

/// `(λ_θ, b_θ − 1/θ)`, with `π/4 − θ` floored at `EPS_MIN`.
pub fn theta_coefficients(theta: f64) -> (f64, f64) {
    let eps = (FRAC_PI_4 - theta).max(EPS_MIN);
    if eps < 0.3 {
        let te = eps.tan();
        let e = ellip_delta(2.0 * te / (1.0 + te));
        let th = FRAC_PI_4 - eps;
        (e.lambda, (1.0 + e.t * e.t) * e.dlk / e.lk + 1.0 / th.tan() - 1.0 / th)
    } else {
        let (_, reg) = super::geometry::b_theta(theta);
        (super::elliptic::ellip(theta.tan()).lambda, reg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookScheme {
    pub dt: f64,
    /// Substep factor: `dt_loc ≤ κ_cfl·r²`, so the angular step has variance at most `(3/2)κ_cfl`.
    pub kappa_cfl: f64,
    pub floor: f64,
    pub r_floor: f64,
    /// Multiplies `λ_θ`; 0 freezes the angular motion.
    pub lambda_scale: f64,
}

impl BookScheme {
    pub fn new(dt: f64) -> Self {
        Self { dt, kappa_cfl: 0.01, floor: 1e-7, r_floor: 1e-12, lambda_scale: 1.0 }
    }
}

/// Euler–Maruyama for `(r, θ)` on each page. The radial part `∂²_rr + (2/r − W′)∂_r` is stepped
/// as the norm of a three-dimensional Euler step from `(r, 0, 0)`, and the `θ⁻¹` part of `b_θ`
/// as the norm of a planar step, which folds at `θ = 0` automatically. Binding visits inside a
/// step are detected with the Brownian-bridge crossing probability `exp(−2d₀d₁/σ²dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookSim {
    pub confinement: Confinement,
    pub scheme: BookScheme,
}

impl BookSim {
    pub fn new(confinement: Confinement, scheme: BookScheme) -> Self {
        Self { confinement, scheme }
    }

    fn radial(&self, r: f64, dt: f64, rng: &mut StreamRng) -> f64 {
        let s = (2.0 * dt).sqrt();
        let z0 = r - self.confinement.deriv_r(r) * dt + s * rng::normal(rng);
        let z1 = s * rng::normal(rng);
        let z2 = s * rng::normal(rng);
        (z0 * z0 + z1 * z1 + z2 * z2).sqrt()
    }

    fn new_page(rng: &mut StreamRng) -> u8 {
        1 + ((4.0 * rng::uniform(rng)) as u8).min(3)
    }

    pub fn step(&self, s: BookPoint, dt: f64, rng: &mut StreamRng) -> Result<BookPoint> {
        self.step_observed(s, dt, rng, &mut |_| {})
    }

    /// Advances by `dt`; `obs` receives the page drawn at each binding crossing.
    pub fn step_observed(&self, s: BookPoint, dt: f64, rng: &mut StreamRng, obs: &mut impl FnMut(u8)) -> Result<BookPoint> {
        if dt == 0.0 {
            return Ok(s);
        }
        let sc = &self.scheme;
        let BookPoint { mut page, mut r, mut theta } = s;
        if page == 0 {
            page = Self::new_page(rng);
            obs(page);
            theta = FRAC_PI_4;
        }
        let mut remaining = dt;
        while remaining > 0.0 {
            let (lam, breg) = theta_coefficients(theta);
            let lam = lam * sc.lambda_scale;
            let dt_loc = remaining.min((sc.kappa_cfl * r * r).max(sc.floor));
            let r_new = self.radial(r, dt_loc, rng);
            if lam > 0.0 {
                let var = 2.0 * lam * dt_loc / (r * r);
                let q = var.sqrt();
                let v1 = theta + lam / (r * r) * breg * dt_loc + q * rng::normal(rng);
                let v2 = q * rng::normal(rng);
                let next = v1.hypot(v2);
                if next > FRAC_PI_4 {
                    page = Self::new_page(rng);
                    obs(page);
                    theta = (FRAC_PI_2 - next).abs().min(FRAC_PI_4);
                } else {
                    // bridge crossing of the binding within the step
                    let (d0, d1) = (FRAC_PI_4 - theta, FRAC_PI_4 - next);
                    if rng::uniform(rng) < (-2.0 * d0 * d1 / var).exp() {
                        page = Self::new_page(rng);
                        obs(page);
                    }
                    theta = next;
                }
            }
            r = r_new;
            if !(r >= sc.r_floor) {
                return Err(Error::RadialCollapse { r });
            }
            remaining -= dt_loc;
            if remaining < 1e-15 * dt {
                remaining = 0.0;
            }
        }
        Ok(BookPoint { page, r, theta })
    }

    pub fn run_path(&self, init: BookPoint, times: &[f64], rng: &mut StreamRng) -> PathRecord {
        let mut s = init;
        let mut out = Vec::with_capacity(times.len());
        let res = for_each_step(self.scheme.dt, times, |step| {
            match step {
                Some(h) => s = self.step(s, h, rng)?,
                None => out.push((s.page as u32, s.r, s.theta)),
            }
            Ok(())
        });
        (if res.is_ok() { FLAG_OK } else { FLAG_OTHER }, out)
    }

    /// Path `i` starts at the projection of a draw from `init` on stream `(seed, INIT, i)`, the
    /// same draw the ambient simulation uses, and moves with stream `(seed, BOOK_PATH, i)`.
    pub fn simulate(&self, init: &InitLaw, times: &[f64], n_paths: usize, seed: u64) -> Ensemble {
        let paths: Vec<PathRecord> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut ri = rng::stream(seed, rng::tag::INIT, i as u64);
                let x0: P3 = init.sample(&mut ri);
                let mut r = rng::stream(seed, rng::tag::BOOK_PATH, i as u64);
                self.run_path(project_book(&x0), times, &mut r)
            })
            .collect();
        Ensemble::from_paths(PathKind::Book, seed, times.to_vec(), paths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookAmbientConfig {
    pub kappa: f64,
    pub dt: f64,
    pub flow_tol: f64,
    pub confinement: Confinement,
    /// Paths leaving the ball of this radius are flagged.
    pub radius: f64,
}

impl BookAmbientConfig {
    pub fn new(kappa: f64, dt: f64, confinement: Confinement) -> Self {
        Self { kappa, dt, flow_tol: 1e-9, confinement, radius: 20.0 }
    }
}

fn half_step(cfg: &BookAmbientConfig, x: P3, half: f64, rng: &mut StreamRng) -> Result<P3> {
    let g = cfg.confinement.grad(&x);
    let s = (2.0 * half).sqrt();
    let y: P3 = std::array::from_fn(|i| x[i] - g[i] * half + s * rng::normal(rng));
    if y.iter().map(|v| v * v).sum::<f64>() > cfg.radius * cfg.radius || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::OutOfDomain { x: y.to_vec() });
    }
    Ok(y)
}

/// Strang step: half diffusion, flow of `κV` for `dt`, half diffusion.
pub fn book_ambient_step(cfg: &BookAmbientConfig, x: P3, dt: f64, rng: &mut StreamRng, hint: &mut Option<f64>) -> Result<P3> {
    if dt == 0.0 {
        return Ok(x);
    }
    let half = 0.5 * dt;
    let mut y = half_step(cfg, x, half, rng)?;
    if cfg.kappa > 0.0 {
        let (z, h) = integrate(&BookShear { radius: cfg.radius }, y, cfg.kappa * dt, StepControl::new(cfg.flow_tol), *hint)?;
        *hint = Some(h);
        y = z;
    }
    half_step(cfg, y, half, rng)
}

/// Projected ambient paths; path `i` uses streams `(seed, INIT, i)` and `(seed, BOOK_AMBIENT, i)`.
pub fn simulate_book_ambient(cfg: &BookAmbientConfig, init: &InitLaw, times: &[f64], n_paths: usize, seed: u64) -> Ensemble {
    let paths: Vec<PathRecord> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut ri = rng::stream(seed, rng::tag::INIT, i as u64);
            let mut x: P3 = init.sample(&mut ri);
            let mut r = rng::stream(seed, rng::tag::BOOK_AMBIENT, i as u64);
            let mut hint = None;
            let mut out = Vec::with_capacity(times.len());
            let res = for_each_step(cfg.dt, times, |step| {
                match step {
                    Some(h) => x = book_ambient_step(cfg, x, h, &mut r, &mut hint)?,
                    None => {
                        let p = project_book(&x);
                        out.push((p.page as u32, p.r, p.theta));
                    }
                }
                Ok(())
            });
            match res {
                Ok(()) => (FLAG_OK, out),
                Err(Error::OutOfDomain { .. }) => (FLAG_DOMAIN_EXIT, out),
                Err(_) => (FLAG_OTHER, out),
            }
        })
        .collect();
    Ensemble::from_paths(PathKind::BookAmbient, seed, times.to_vec(), paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi2_test, within_binomial};

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn coefficients_match_closed_forms() {
        for th in [0.01, 0.2, 0.5, 0.7, 0.78] {
            let (lam, reg) = theta_coefficients(th);
            let (b, breg) = super::super::geometry::b_theta(th);
            assert!((reg - breg).abs() < 1e-9 * (1.0 + b.abs()), "θ = {th}");
            assert!((lam - super::super::elliptic::ellip_angle(th).lambda).abs() < 1e-12);
        }
        let (lam, reg) = theta_coefficients(FRAC_PI_4);
        assert!(lam > 0.04 && lam < 0.06 && reg.is_finite());
    }

    #[test]
    fn zero_step_is_identity() {
        let sim = BookSim::new(Confinement { alpha: 2.5 }, BookScheme::new(0.01));
        let mut r = rng::stream(1, rng::tag::BOOK_PATH, 0);
        let p = BookPoint::new(2, 0.8, 0.3);
        assert_eq!(sim.step(p, 0.0, &mut r).unwrap(), p);
    }

    #[test]
    fn binding_pages_are_uniform() {
        let sim = BookSim::new(Confinement { alpha: 2.5 }, BookScheme::new(0.01));
        let mut r = rng::stream(2, rng::tag::BOOK_PATH, 0);
        let mut counts = [0usize; 4];
        let mut s = BookPoint::new(1, 0.8, 0.7);
        while counts.iter().sum::<usize>() < 20_000 {
            s = sim.step_observed(s, 0.01, &mut r, &mut |p| counts[p as usize - 1] += 1).unwrap();
        }
        let n = counts.iter().sum::<usize>();
        for c in counts {
            assert!(within_binomial(c as f64 / n as f64, 0.25, n, 3.0), "{counts:?}");
        }
    }

    #[test]
    fn free_radial_part_is_bessel3() {
        // 𝒲 ≡ 1: r is the norm of a 3d Brownian motion with generator Δ, E r_t² = r₀² + 6t.
        let mut sc = BookScheme::new(0.02);
        sc.lambda_scale = 0.0;
        let sim = BookSim::new(Confinement { alpha: 0.0 }, sc);
        let init = InitLaw::Point { x: vec![0.7, 0.2, 0.1] };
        let r0 = project_book(&[0.7, 0.2, 0.1]);
        let ens = sim.simulate(&init, &[0.5], 20_000, 3);
        let r2: Vec<f64> = ens.samples(0).iter().map(|s| s.1 * s.1).collect();
        let (m, se) = mean_se(&r2);
        assert!((m - (r0.r * r0.r + 3.0)).abs() < 3.0 * se, "{m} ± {se}");
        assert!(ens.samples(0).iter().all(|s| s.0 == r0.page as u32 && s.2 == r0.theta));
    }

    #[test]
    fn confined_radial_part_matches_1d_reference() {
        let w = Confinement { alpha: 2.5 };
        let mut sc = BookScheme::new(0.01);
        sc.lambda_scale = 0.0;
        let sim = BookSim::new(w, sc);
        let ens = sim.simulate(&InitLaw::Point { x: vec![1.0, 0.0, 0.0] }, &[0.5], 8000, 4);
        let a: Vec<f64> = ens.samples(0).iter().map(|s| s.1 * s.1).collect();
        let mut rr = rng::stream(4, rng::tag::MONTE_CARLO, 0);
        let dt = 2e-4;
        let b: Vec<f64> = (0..4000)
            .map(|_| {
                let mut r: f64 = 1.0;
                for _ in 0..2500 {
                    r = (r + (2.0 / r - w.deriv_r(r)) * dt + (2.0 * dt).sqrt() * rng::normal(&mut rr)).abs();
                }
                r * r
            })
            .collect();
        let (ma, sa) = mean_se(&a);
        let (mb, sb) = mean_se(&b);
        assert!((ma - mb).abs() < 3.0 * sa.hypot(sb), "{ma} ± {sa} vs {mb} ± {sb}");
    }

    #[test]
    fn long_run_page_occupation_is_uniform() {
        let sim = BookSim::new(Confinement { alpha: 2.5 }, BookScheme::new(0.01));
        let ens = sim.simulate(&InitLaw::Point { x: vec![1.0, 0.2, 0.1] }, &[4.0], 4000, 5);
        let mut counts = [0.0; 4];
        for s in ens.samples(0) {
            counts[s.0 as usize - 1] += 1.0;
        }
        let n: f64 = counts.iter().sum();
        let (_, p) = chi2_test(&counts, &[n / 4.0; 4], 0);
        assert!(p > 0.01, "{counts:?}");
    }

    #[test]
    fn ambient_radius_is_kappa_invariant() {
        let w = Confinement { alpha: 2.5 };
        let init = InitLaw::Gaussian { mean: vec![0.8, 0.3, 0.2], std: 0.3, radius: 0.6 };
        let a = simulate_book_ambient(&BookAmbientConfig::new(0.0, 0.005, w), &init, &[0.5], 3000, 6);
        let b = simulate_book_ambient(&BookAmbientConfig::new(20.0, 0.005, w), &init, &[0.5], 3000, 6);
        assert_eq!(a.n_flagged() + b.n_flagged(), 0);
        let ra: Vec<f64> = a.samples(0).iter().map(|s| s.1).collect();
        let rb: Vec<f64> = b.samples(0).iter().map(|s| s.1).collect();
        let ks = crate::stats::ks_two_sample(&ra, &rb).unwrap();
        assert!(ks.passes(), "{ks:?}");
    }
}
