//! Weight functions of the book's change of variables: `c`, `φ(t)`, `k(φ)`, their asymptotic
//! slopes, and the A₂ functional of `ω_n(z) = |z|·k_n(arg z)`.

use super::elliptic::{ellip, ellip_delta, Ellip};
use super::geometry::lambda_h;
use crate::numerics::interp::Pchip;
use crate::numerics::quad::integrate;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

const DELTA_MIN: f64 = 1e-300;

fn g(e: &Ellip) -> f64 {
    1.0 / ((1.0 + e.t * e.t) * e.lambda.sqrt())
}

/// `∫_a^b g(t(δ)) dδ` over `δ = 1 − t`, in `log δ` near zero.
fn g_integral_delta(a: f64, b: f64) -> f64 {
    let f = |s: f64| {
        let d = s.exp();
        g(&ellip_delta(d)) * d
    };
    integrate(f, a.ln(), b.ln(), 1e-300, 1e-13, 4000).value
}

fn g_integral_t(a: f64, b: f64) -> f64 {
    integrate(|t| g(&ellip(t)), a, b, 1e-300, 1e-13, 4000).value
}

/// `k` evaluated from its definition at modulus data `e`.
fn k_formula(e: &Ellip, c: f64) -> f64 {
    4.0 * SQRT_2 * e.t * e.k * e.lambda.sqrt() / (c * (1.0 + e.t * e.t).sqrt())
}

/// Tabulated `φ ↦ k(φ)` and the normalising constant `c = π/(2𝓘)`.
#[derive(Debug, Clone)]
pub struct WeightFunctions {
    pub integral: f64,
    pub c: f64,
    /// `k` against `log φ`.
    table: Pchip,
}

impl WeightFunctions {
    /// `n_t` nodes uniform in `t ∈ [0, 0.9]` and `n_delta` nodes geometric in `δ ∈ [1e-300, 0.1]`.
    pub fn build(n_t: usize, n_delta: usize) -> Self {
        let mut deltas: Vec<f64> = (0..n_delta).map(|j| DELTA_MIN * (0.1 / DELTA_MIN).powf(j as f64 / (n_delta - 1) as f64)).collect();
        deltas.extend((0..n_t).rev().map(|j| 1.0 - 0.9 * j as f64 / (n_t - 1) as f64).filter(|&d| d > 0.1));
        // cumulative ∫₀^δ g, starting from the tail estimate at δ_min
        let mut cum = Vec::with_capacity(deltas.len());
        let mut acc = g(&ellip_delta(deltas[0])) * deltas[0];
        cum.push(acc);
        for w in deltas.windows(2) {
            acc += if w[1] <= 0.1 { g_integral_delta(w[0], w[1]) } else { g_integral_t(1.0 - w[1], 1.0 - w[0]) };
            cum.push(acc);
        }
        let integral = acc;
        let c = FRAC_PI_2 / integral;
        let phis: Vec<f64> = cum.iter().map(|v| c * v).collect();
        let ks: Vec<f64> = deltas.iter().map(|&d| k_formula(&ellip_delta(d), c)).collect();
        let mut x: Vec<f64> = phis.iter().map(|p| p.ln()).collect();
        let n = x.len();
        x[n - 1] = FRAC_PI_2.ln();
        Self { integral, c, table: Pchip::new(x, ks) }
    }

    /// `φ(t) = c ∫_t^1 du / ((1+u²)√λ(u))`.
    pub fn phi(&self, t: f64) -> f64 {
        if t < 0.5 {
            FRAC_PI_2 - self.c * g_integral_t(0.0, t)
        } else {
            self.phi_delta(1.0 - t)
        }
    }

    /// `φ` at `t = 1 − δ`.
    pub fn phi_delta(&self, delta: f64) -> f64 {
        if delta > 0.5 {
            return self.phi(1.0 - delta);
        }
        let tail = g(&ellip_delta(DELTA_MIN)) * DELTA_MIN;
        self.c * (tail + g_integral_delta(DELTA_MIN, delta.max(DELTA_MIN)))
    }

    /// `k` at modulus `t` from its definition.
    pub fn k_of_t(&self, t: f64) -> f64 {
        k_formula(&ellip(t), self.c)
    }

    pub fn k_of_delta(&self, delta: f64) -> f64 {
        k_formula(&ellip_delta(delta), self.c)
    }

    /// `k(φ)` for `φ ∈ (0, π/2]` by monotone interpolation, extended below the table by the
    /// `|log φ|^{1/2}` law.
    pub fn k(&self, phi: f64) -> f64 {
        let (x, lo) = (phi.ln(), self.table.lo());
        if phi >= FRAC_PI_2 {
            0.0
        } else if x >= lo {
            self.table.eval(x)
        } else {
            self.table.values()[0] * (x / lo).sqrt()
        }
    }

    /// Even extension to `(−π, π]`, frozen at `k(π/2 − 1/n)` beyond `|φ| = π/2 − 1/n`.
    pub fn k_n(&self, phi: f64, n: u32) -> f64 {
        let cut = FRAC_PI_2 - 1.0 / n as f64;
        self.k(phi.abs().min(cut))
    }

    /// `(∫_B ω_n, ∫_B ω_n⁻¹)` for the ball of radius `rho` around `(cos φ₀, sin φ₀)`, or around
    /// the origin when `phi0` is `None`.
    pub fn ball_integrals(&self, phi0: Option<f64>, rho: f64, n: u32) -> (f64, f64) {
        let tol = 1e-9;
        let cut = FRAC_PI_2 - 1.0 / n as f64;
        let Some(p0) = phi0 else {
            let mut a = 0.0;
            let mut b = 0.0;
            for (lo, hi) in [(0.0, cut), (cut, PI)] {
                a += integrate(|s| self.k_n(s, n), lo, hi, 1e-14, tol, 4000).value;
                b += integrate(|s| 1.0 / self.k_n(s, n), lo, hi, 1e-14, tol, 4000).value;
            }
            return (2.0 * a * rho.powi(3) / 3.0, 2.0 * b * rho);
        };
        let dmax = if rho < 1.0 { rho.asin() } else { PI };
        let radii = |d: f64| {
            let (s, c) = d.sin_cos();
            let q = (rho * rho - s * s).max(0.0).sqrt();
            ((c + q).max(0.0), (c - q).max(0.0))
        };
        let mut cuts = vec![-dmax, dmax];
        for m in -2..=2 {
            for base in [0.0, cut, -cut, PI] {
                let d = base + 2.0 * PI * m as f64 - p0;
                if d > -dmax && d < dmax {
                    cuts.push(d);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let wrap = |d: f64| {
            let mut p = (d + p0) % (2.0 * PI);
            if p > PI {
                p -= 2.0 * PI;
            } else if p < -PI {
                p += 2.0 * PI;
            }
            p
        };
        let (mut a, mut b) = (0.0, 0.0);
        for w in cuts.windows(2) {
            a += integrate(
                |d| {
                    let (rp, rm) = radii(d);
                    self.k_n(wrap(d), n) * (rp.powi(3) - rm.powi(3)) / 3.0
                },
                w[0],
                w[1],
                1e-300,
                tol,
                4000,
            )
            .value;
            b += integrate(
                |d| {
                    let (rp, rm) = radii(d);
                    (rp - rm) / self.k_n(wrap(d), n)
                },
                w[0],
                w[1],
                1e-300,
                tol,
                4000,
            )
            .value;
        }
        (a, b)
    }

    /// `C(z, ρ) = (π²ρ⁴)⁻¹ ∫_B ω_n ∫_B ω_n⁻¹` with `|z| = 1` (or `z = 0`).
    pub fn a2(&self, phi0: Option<f64>, rho: f64, n: u32) -> f64 {
        let (a, b) = self.ball_integrals(phi0, rho, n);
        a * b / (PI * PI * rho.powi(4))
    }
}

/// Grid for the A₂ search: `n_phi + 1` centres `φ₀ = jπ/n_phi` on the unit circle and `n_rho`
/// radii geometric in `[rho_min, rho_max]`, plus the centre `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2Grid {
    pub n_phi: usize,
    pub n_rho: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Truncation index of `k_n`.
    pub n: u32,
}

impl Default for A2Grid {
    fn default() -> Self {
        Self { n_phi: 48, n_rho: 33, rho_min: 1e-3, rho_max: 30.0, n: 8 }
    }
}

impl A2Grid {
    pub fn refined(&self) -> Self {
        Self { n_phi: 2 * self.n_phi, n_rho: 2 * self.n_rho - 1, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct A2Max {
    pub value: f64,
    /// `None` for the ball centred at the origin.
    pub phi0: Option<f64>,
    pub rho: f64,
    pub at_origin: f64,
}

pub fn a2_max(w: &WeightFunctions, grid: &A2Grid) -> A2Max {
    let at_origin = w.a2(None, 1.0, grid.n);
    let mut best = A2Max { value: at_origin, phi0: None, rho: 1.0, at_origin };
    for j in 0..=grid.n_phi {
        let p0 = PI * j as f64 / grid.n_phi as f64;
        for i in 0..grid.n_rho {
            let rho = grid.rho_min * (grid.rho_max / grid.rho_min).powf(i as f64 / (grid.n_rho - 1) as f64);
            let v = w.a2(Some(p0), rho, grid.n);
            if v > best.value {
                best = A2Max { value: v, phi0: Some(p0), rho, at_origin };
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeCheck {
    /// Least-squares slope on the sampled window.
    pub fitted: f64,
    /// Leading constant obtained by expanding the definition of `k`.
    pub from_definition: f64,
    /// Constant as usually stated for this asymptotic law.
    pub stated: f64,
    pub rel_error: f64,
}

fn slope(x: &[f64], y: &[f64], through_origin: bool) -> f64 {
    if through_origin {
        x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>()
    } else {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
    }
}

/// Slope of `k` against `π/2 − φ` as `φ → π/2` (`t ∈ [1e-5, 1e-3]`).
pub fn slope_at_half_pi(w: &WeightFunctions) -> SlopeCheck {
    let ts: Vec<f64> = (0..20).map(|j| 1e-5 * 100f64.powf(j as f64 / 19.0)).collect();
    let x: Vec<f64> = ts.iter().map(|&t| w.c * g_integral_t(0.0, t)).collect();
    let y: Vec<f64> = ts.iter().map(|&t| w.k_of_t(t)).collect();
    let fitted = slope(&x, &y, true);
    let stated = 3.0 * PI / (8.0 * w.c * w.c);
    let from_definition = 4.0 * SQRT_2 * stated;
    SlopeCheck { fitted, from_definition, stated, rel_error: (fitted / from_definition - 1.0).abs() }
}

/// Slope of `k` against `|log φ|^{1/2}` as `φ → 0` (`δ ∈ [1e-300, 1e-100]`).
pub fn slope_at_zero(w: &WeightFunctions) -> SlopeCheck {
    let ds: Vec<f64> = (0..30).map(|j| 1e-300 * 1e200f64.powf(j as f64 / 29.0)).collect();
    let x: Vec<f64> = ds.iter().map(|&d| w.phi_delta(d).ln().abs().sqrt()).collect();
    let y: Vec<f64> = ds.iter().map(|&d| w.k_of_delta(d)).collect();
    let fitted = slope(&x, &y, false);
    let stated = 1.0 / (2.0 * w.c);
    let from_definition = 4.0 * SQRT_2 * stated;
    SlopeCheck { fitted, from_definition, stated, rel_error: (fitted / from_definition - 1.0).abs() }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightReport {
    pub k0: f64,
    pub e0: f64,
    pub integral: f64,
    pub c: f64,
    /// `(π/4 − θ, λ_θh_θ)` samples approaching the binding.
    pub lambda_h: Vec<(f64, f64)>,
    pub lambda_h_error: f64,
    pub slope_half_pi: SlopeCheck,
    pub slope_zero: SlopeCheck,
    pub grid: A2Grid,
    pub a2_coarse: A2Max,
    pub a2_fine: A2Max,
    /// `|fine − coarse| / coarse`
    pub a2_change: f64,
}

impl WeightReport {
    pub fn lambda_h_ok(&self) -> bool {
        self.lambda_h_error < 1e-3
    }

    pub fn a2_ok(&self) -> bool {
        self.a2_fine.value.is_finite() && self.a2_change <= 0.05
    }
}

pub fn weight_validations(grid: &A2Grid) -> WeightReport {
    let w = WeightFunctions::build(400, 600);
    let lambda_h: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4, 1e-6, 1e-8].iter().map(|&e| (e, lambda_h(FRAC_PI_4 - e))).collect();
    let lambda_h_error = (lambda_h.last().expect("samples").1 - 4.0).abs();
    let a2_coarse = a2_max(&w, grid);
    let a2_fine = a2_max(&w, &grid.refined());
    WeightReport {
        k0: ellip(0.0).k,
        e0: ellip(0.0).e,
        integral: w.integral,
        c: w.c,
        lambda_h,
        lambda_h_error,
        slope_half_pi: slope_at_half_pi(&w),
        slope_zero: slope_at_zero(&w),
        grid: *grid,
        a2_coarse,
        a2_fine,
        a2_change: (a2_fine.value - a2_coarse.value).abs() / a2_coarse.value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf() -> WeightFunctions {
        WeightFunctions::build(200, 300)
    }

    #[test]
    fn phi_endpoints_and_monotone() {
        let w = wf();
        assert!((w.phi(0.0) - FRAC_PI_2).abs() < 1e-14);
        assert!(w.phi_delta(1e-300) < 1e-290);
        let ts = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999999];
        for p in ts.windows(2) {
            assert!(w.phi(p[0]) > w.phi(p[1]));
        }
        assert!((w.phi(0.6) - w.phi_delta(0.4)).abs() < 1e-12);
        let direct = FRAC_PI_2 / (g_integral_t(0.0, 0.9) + g_integral_delta(1e-300, 0.1));
        assert!((w.c - direct).abs() < 1e-10);
    }

    #[test]
    fn table_reproduces_definition() {
        let w = wf();
        for t in [0.05, 0.3, 0.6, 0.9, 0.999] {
            let k = w.k(w.phi(t));
            assert!((k - w.k_of_t(t)).abs() < 1e-4 * (1.0 + k), "t = {t}");
        }
        assert!(w.k(1e-305) > w.k(1e-200));
        assert_eq!(w.k(FRAC_PI_2), 0.0);
        assert_eq!(w.k_n(3.0, 8), w.k_n(FRAC_PI_2 - 0.125, 8));
        assert_eq!(w.k_n(-0.4, 8), w.k_n(0.4, 8));
    }

    #[test]
    fn slopes_follow_definition() {
        let w = wf();
        let a = slope_at_half_pi(&w);
        assert!(a.rel_error < 1e-3, "{a:?}");
        let b = slope_at_zero(&w);
        assert!(b.rel_error < 0.05, "{b:?}");
    }

    #[test]
    fn a2_functional_properties() {
        let w = wf();
        // scale invariance for balls around the origin
        assert!((w.a2(None, 1.0, 8) - w.a2(None, 3.0, 8)).abs() < 1e-9);
        // large balls around a unit point approach the origin value
        assert!((w.a2(Some(0.3), 1e4, 8) / w.a2(None, 1.0, 8) - 1.0).abs() < 1e-2);
        // tiny balls away from the singular rays see a nearly constant weight
        assert!((w.a2(Some(0.8), 1e-4, 8) - 1.0).abs() < 1e-3);
        // symmetry φ₀ ↔ −φ₀
        assert!((w.a2(Some(0.5), 0.7, 8) - w.a2(Some(-0.5), 0.7, 8)).abs() < 1e-8);
        // Cauchy–Schwarz
        for p in [0.0, 0.5, 1.5, 3.0] {
            for r in [0.01, 0.5, 1.0, 2.0] {
                assert!(w.a2(Some(p), r, 8) >= 1.0 - 1e-8);
            }
        }
    }
}
