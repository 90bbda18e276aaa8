//! Planar Hamiltonian systems, the shear flow, closed orbits and orbit averages.

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprField};
use crate::numerics::ode::{self, hermite, Flow, StepControl, Stepper};
use crate::scalar::Scalar;
use std::sync::Arc;

pub type P2<S> = [S; 2];

/// Scalar potential with analytic gradient and Hessian.
#[derive(Debug, Clone)]
pub enum Potential {
    /// `½|x|²`
    RadialQuadratic,
    /// `(x1² − 1)²/4 + x2²/2`
    DuffingWell,
    Expr(Arc<ExprField>),
}

impl Potential {
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "radial-quadratic" => Some(Self::RadialQuadratic),
            "duffing-well" => Some(Self::DuffingWell),
            _ => None,
        }
    }

    /// Preset name or an expression in the documented grammar.
    pub fn parse(spec: &str) -> Result<Self> {
        match Self::preset(spec.trim()) {
            Some(p) => Ok(p),
            None => Ok(Self::Expr(Arc::new(ExprField::parse(spec)?))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::RadialQuadratic => "radial-quadratic".into(),
            Self::DuffingWell => "duffing-well".into(),
            Self::Expr(e) => e.source.clone(),
        }
    }

    #[inline]
    pub fn value<S: Scalar>(&self, x: &P2<S>) -> S {
        let half = S::c(0.5);
        match self {
            Self::RadialQuadratic => half * (x[0] * x[0] + x[1] * x[1]),
            Self::DuffingWell => {
                let u = x[0] * x[0] - S::one();
                S::c(0.25) * u * u + half * x[1] * x[1]
            }
            Self::Expr(e) => e.f.eval(x),
        }
    }

    #[inline]
    pub fn grad<S: Scalar>(&self, x: &P2<S>) -> P2<S> {
        match self {
            Self::RadialQuadratic => *x,
            Self::DuffingWell => [x[0] * x[0] * x[0] - x[0], x[1]],
            Self::Expr(e) => [e.grad[0].eval(x), e.grad[1].eval(x)],
        }
    }

    #[inline]
    pub fn hess<S: Scalar>(&self, x: &P2<S>) -> [[S; 2]; 2] {
        let (o, z) = (S::one(), S::zero());
        match self {
            Self::RadialQuadratic => [[o, z], [z, o]],
            Self::DuffingWell => [[S::c(3.0) * x[0] * x[0] - o, z], [z, o]],
            Self::Expr(e) => [[e.hess[0][0].eval(x), e.hess[0][1].eval(x)], [e.hess[1][0].eval(x), e.hess[1][1].eval(x)]],
        }
    }
}

/// Perturbation drift `V0`.
#[derive(Debug, Clone)]
pub enum Drift {
    Zero,
    Expr(Arc<[Expr; 2]>),
}

impl Drift {
    pub fn parse(c1: &str, c2: &str) -> Result<Self> {
        let a = Expr::parse(c1)?;
        let b = Expr::parse(c2)?;
        if a.constant() == Some(0.0) && b.constant() == Some(0.0) {
            Ok(Self::Zero)
        } else {
            Ok(Self::Expr(Arc::new([a, b])))
        }
    }

    #[inline]
    pub fn eval<S: Scalar>(&self, x: &P2<S>) -> P2<S> {
        match self {
            Self::Zero => [S::zero(), S::zero()],
            Self::Expr(e) => [e[0].eval(x), e[1].eval(x)],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<S> {
    pub lo: P2<S>,
    pub hi: P2<S>,
}

impl<S: Scalar> Rect<S> {
    pub fn contains(&self, x: &P2<S>) -> bool {
        x[0] >= self.lo[0] && x[0] <= self.hi[0] && x[1] >= self.lo[1] && x[1] <= self.hi[1]
    }

    pub fn diameter(&self) -> S {
        let a = self.hi[0] - self.lo[0];
        let b = self.hi[1] - self.lo[1];
        (a * a + b * b).sqrt()
    }

    pub fn area(&self) -> S {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }
}

/// Ambient model: generator `νΔ + V0·∇` perturbed by the fast shear `κV`, `V = (−∂₂H, ∂₁H)`.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem2D<S> {
    pub potential: Potential,
    pub v0: Drift,
    pub nu: S,
    pub domain: Rect<S>,
}

impl<S: Scalar> HamiltonianSystem2D<S> {
    pub fn new(potential: Potential, v0: Drift, nu: S, domain: Rect<S>) -> Self {
        Self { potential, v0, nu, domain }
    }

    /// Preset with `ν = ½`, `V0 = 0` and a box containing `{H ≤ h_max}`.
    pub fn preset(name: &str, h_max: S) -> Option<Self> {
        let potential = Potential::preset(name)?;
        let domain = match potential {
            Potential::RadialQuadratic => {
                let r = (S::c(2.0) * h_max).sqrt() * S::c(1.05) + S::one();
                Rect { lo: [-r, -r], hi: [r, r] }
            }
            Potential::DuffingWell => {
                let a = (S::one() + S::c(2.0) * h_max.sqrt()).sqrt() * S::c(1.05) + S::c(0.5);
                let b = (S::c(2.0) * h_max).sqrt() * S::c(1.05) + S::c(0.5);
                Rect { lo: [-a, -b], hi: [a, b] }
            }
            Potential::Expr(_) => return None,
        };
        Some(Self::new(potential, Drift::Zero, S::c(0.5), domain))
    }

    #[inline]
    pub fn h(&self, x: &P2<S>) -> S {
        self.potential.value(x)
    }

    #[inline]
    pub fn grad(&self, x: &P2<S>) -> P2<S> {
        self.potential.grad(x)
    }

    #[inline]
    pub fn hess(&self, x: &P2<S>) -> [[S; 2]; 2] {
        self.potential.hess(x)
    }

    /// Shear field `(−∂₂H, ∂₁H)`.
    #[inline]
    pub fn shear(&self, x: &P2<S>) -> P2<S> {
        let g = self.grad(x);
        [-g[1], g[0]]
    }

    #[inline]
    pub fn drift(&self, x: &P2<S>) -> P2<S> {
        self.v0.eval(x)
    }

    /// `Γ(f, f) = ν|∇f|²` applied to `f = H`.
    #[inline]
    pub fn gamma_h(&self, x: &P2<S>) -> S {
        let g = self.grad(x);
        self.nu * (g[0] * g[0] + g[1] * g[1])
    }

    pub fn laplacian_h(&self, x: &P2<S>) -> S {
        let hs = self.hess(x);
        hs[0][0] + hs[1][1]
    }

    fn near_critical_threshold(&self, x: &P2<S>) -> S {
        let hs = self.hess(x);
        let norm = (hs[0][0] * hs[0][0] + S::c(2.0) * hs[0][1] * hs[0][1] + hs[1][1] * hs[1][1]).sqrt();
        S::c(1e-8) * (S::one() + norm * self.domain.diameter())
    }
}

impl<S: Scalar> Flow<S, 2> for HamiltonianSystem2D<S> {
    #[inline]
    fn velocity(&self, x: &P2<S>) -> P2<S> {
        self.shear(x)
    }

    #[inline]
    fn invariants(&self, x: &P2<S>) -> [S; 2] {
        [self.h(x), S::zero()]
    }

    #[inline]
    fn contains(&self, x: &P2<S>) -> bool {
        self.domain.contains(x)
    }
}

fn control<S: Scalar>(tol: S, span: S) -> StepControl<S> {
    let mut c = StepControl::new(tol);
    c.drift_rate = if span > S::zero() { tol / span } else { tol };
    c
}

/// `φ_dt(x)` with `|H(out) − H(x)| ≤ tol·(1 + |H(x)|)`.
pub fn flow_step<S: Scalar>(sys: &HamiltonianSystem2D<S>, x: P2<S>, dt: S, tol: S) -> Result<P2<S>> {
    flow_step_hinted(sys, x, dt, tol, None).map(|r| r.0)
}

/// As [`flow_step`], reusing a step size proposal across calls.
pub fn flow_step_hinted<S: Scalar>(sys: &HamiltonianSystem2D<S>, x: P2<S>, dt: S, tol: S, hint: Option<S>) -> Result<(P2<S>, S)> {
    if !dt.is_finite() || dt < S::zero() {
        return Err(Error::Invalid(format!("flow duration {dt}")));
    }
    if !sys.domain.contains(&x) {
        return Err(Error::OutOfDomain { x: x.iter().map(|v| v.to_f64_lossy()).collect() });
    }
    if dt == S::zero() {
        return Ok((x, hint.unwrap_or(S::zero())));
    }
    ode::integrate(sys, x, dt, control(tol, dt), hint)
}

#[derive(Debug, Clone, Copy)]
pub struct OrbitOptions<S> {
    pub tol: S,
    pub max_time: S,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl<S: Scalar> OrbitOptions<S> {
    pub fn new(tol: S) -> Self {
        Self { tol, max_time: S::c(1e3), min_samples: 64, max_samples: 1 << 16 }
    }
}

/// One traced period, sampled uniformly in flow time.
#[derive(Debug, Clone)]
pub struct Orbit<S> {
    pub anchor: P2<S>,
    pub level: S,
    pub period: S,
    /// `x_k = φ_{kT/N}(anchor)`, `k = 0..N`.
    pub samples: Vec<P2<S>>,
    /// Largest `|H(x_k) − level|`.
    pub energy_drift: S,
    /// Distance between the polished return point and the anchor.
    pub closure: S,
}

impl<S: Scalar> Orbit<S> {
    pub fn times(&self) -> impl Iterator<Item = S> + '_ {
        let n = S::from_usize(self.samples.len()).unwrap_or(S::one());
        let t = self.period;
        (0..self.samples.len()).map(move |k| S::from_usize(k).unwrap_or(S::zero()) * t / n)
    }

    /// Period recomputed as `∮ dℓ/|∇H|` along the sample polygon (Richardson on two resolutions).
    pub fn period_by_arclength(&self, sys: &HamiltonianSystem2D<S>) -> S {
        let poly = |stride: usize| {
            let n = self.samples.len();
            let mut acc = S::zero();
            let mut k = 0;
            while k < n {
                let a = self.samples[k];
                let b = self.samples[(k + stride) % n];
                let m = [S::c(0.5) * (a[0] + b[0]), S::c(0.5) * (a[1] + b[1])];
                let g = sys.grad(&m);
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                acc = acc + len / (g[0] * g[0] + g[1] * g[1]).sqrt();
                k += stride;
            }
            acc
        };
        let fine = poly(1);
        if !self.samples.len().is_multiple_of(2) {
            return fine;
        }
        let coarse = poly(2);
        (S::c(4.0) * fine - coarse) / S::c(3.0)
    }
}

/// Traces the closed orbit through `x0`.
pub fn trace_orbit<S: Scalar>(sys: &HamiltonianSystem2D<S>, x0: P2<S>, opts: &OrbitOptions<S>) -> Result<Orbit<S>> {
    let g0 = sys.grad(&x0);
    let gn = (g0[0] * g0[0] + g0[1] * g0[1]).sqrt();
    if gn < sys.near_critical_threshold(&x0) {
        return Err(Error::NearCritical { grad: gn.to_f64_lossy() });
    }
    if !sys.domain.contains(&x0) {
        return Err(Error::OutOfDomain { x: x0.iter().map(|v| v.to_f64_lossy()).collect() });
    }
    let level = sys.h(&x0);
    let n = sys.shear(&x0);
    let sec = |x: &P2<S>| (x[0] - x0[0]) * n[0] + (x[1] - x0[1]) * n[1];
    let dist = |x: &P2<S>| ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2)).sqrt();

    let mut ctl = StepControl::new(opts.tol);
    ctl.drift_rate = opts.tol;
    let mut st: Stepper<S, 2> = Stepper::new(sys, x0, ctl, None);
    let mut dmax = S::zero();
    let mut period = None;
    while st.t < opts.max_time {
        let (t0, xa, va) = (st.t, st.x, st.v);
        st.step(sys, opts.max_time)?;
        let (t1, xb, vb) = (st.t, st.x, st.v);
        dmax = dmax.max(dist(&xb));
        let (sa, sb) = (sec(&xa), sec(&xb));
        let forward = vb[0] * n[0] + vb[1] * n[1] > S::zero();
        if sa < S::zero() && sb >= S::zero() && forward {
            let h = t1 - t0;
            let (mut lo, mut hi) = (S::zero(), S::one());
            for _ in 0..60 {
                let mid = S::c(0.5) * (lo + hi);
                if sec(&hermite(&xa, &va, &xb, &vb, h, mid)) < S::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = S::c(0.5) * (lo + hi);
            let xc = hermite(&xa, &va, &xb, &vb, h, s);
            if dist(&xc) <= S::c(1e-3) * dmax {
                let mut tau = t0 + s * h;
                let tight = control(opts.tol * S::c(1e-2), S::one());
                for _ in 0..4 {
                    let (xt, _) = ode::integrate(sys, xa, tau - t0, tight, None)?;
                    let vt = sys.shear(&xt);
                    let ds = vt[0] * n[0] + vt[1] * n[1];
                    let corr = sec(&xt) / ds;
                    tau = tau - corr;
                    if corr.abs() <= S::epsilon() * S::c(4.0) * tau {
                        break;
                    }
                }
                period = Some(tau);
                break;
            }
        }
    }
    let period = period.ok_or(Error::NotClosed { max_time: opts.max_time.to_f64_lossy() })?;

    let mut samples = chain(sys, x0, period, opts.min_samples, opts.tol)?;
    let stats = |xs: &[P2<S>]| {
        let nn = S::from_usize(xs.len()).unwrap_or(S::one());
        let mut m = [S::zero(); 3];
        for x in xs {
            let g = sys.grad(x);
            m[0] = m[0] + g[0] * g[0] + g[1] * g[1];
            m[1] = m[1] + x[0];
            m[2] = m[2] + x[1];
        }
        m.map(|v| v / nn)
    };
    let scale = dmax.max(S::epsilon());
    let mut prev = stats(&samples);
    let avg_tol = opts.tol.max(S::c(1e-13)) * S::c(10.0);
    while samples.len() < opts.max_samples {
        let dt = period / S::from_usize(2 * samples.len()).unwrap_or(S::one());
        let mut finer = Vec::with_capacity(2 * samples.len());
        let mut hint = None;
        for x in &samples {
            finer.push(*x);
            let (xm, h) = ode::integrate(sys, *x, dt, control(opts.tol, dt), hint)?;
            hint = Some(h);
            finer.push(xm);
        }
        samples = finer;
        let cur = stats(&samples);
        let ok = (cur[0] - prev[0]).abs() <= avg_tol * (S::one() + cur[0].abs())
            && (cur[1] - prev[1]).abs() <= avg_tol * (scale + cur[1].abs())
            && (cur[2] - prev[2]).abs() <= avg_tol * (scale + cur[2].abs());
        prev = cur;
        if ok {
            break;
        }
    }
    let energy_drift = samples.iter().fold(S::zero(), |m, x| m.max((sys.h(x) - level).abs()));
    let last = samples[samples.len() - 1];
    let (xend, _) = ode::integrate(sys, last, period / S::from_usize(samples.len()).unwrap_or(S::one()), control(opts.tol, period), None)?;
    Ok(Orbit { anchor: x0, level, period, samples, energy_drift, closure: dist(&xend) })
}

fn chain<S: Scalar>(sys: &HamiltonianSystem2D<S>, x0: P2<S>, period: S, n: usize, tol: S) -> Result<Vec<P2<S>>> {
    let dt = period / S::from_usize(n).unwrap_or(S::one());
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    let mut hint = None;
    for _ in 0..n {
        out.push(x);
        let (xn, h) = ode::integrate(sys, x, dt, control(tol, period), hint)?;
        hint = Some(h);
        x = xn;
    }
    Ok(out)
}

/// `μ_γ(g) = (1/T)∫₀ᵀ g(φ_t x₀) dt`, periodic trapezoid rule on the stored samples.
pub fn orbit_average<S: Scalar, G: FnMut(&P2<S>) -> S>(orbit: &Orbit<S>, mut g: G) -> S {
    let mut acc = S::zero();
    for x in &orbit.samples {
        acc = acc + g(x);
    }
    acc / S::from_usize(orbit.samples.len()).unwrap_or(S::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn radial() -> HamiltonianSystem2D<f64> {
        HamiltonianSystem2D::preset("radial-quadratic", 50.0).unwrap()
    }

    fn duffing() -> HamiltonianSystem2D<f64> {
        HamiltonianSystem2D::preset("duffing-well", 50.0).unwrap()
    }

    /// Classical RK4 with a fixed step, used only as an independent reference.
    fn rk4(sys: &HamiltonianSystem2D<f64>, mut x: P2<f64>, dt: f64, n: usize) -> P2<f64> {
        let h = dt / n as f64;
        for _ in 0..n {
            let k1 = sys.shear(&x);
            let k2 = sys.shear(&[x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
            let k3 = sys.shear(&[x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
            let k4 = sys.shear(&[x[0] + h * k3[0], x[1] + h * k3[1]]);
            for i in 0..2 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }

    #[test]
    fn rigid_rotation_quarter_turn() {
        let y = flow_step(&radial(), [1.0, 0.0], PI / 2.0, 1e-11).unwrap();
        assert!(y[0].abs() < 1e-8 && (y[1] - 1.0).abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn zero_duration_is_identity() {
        let x = [0.3, -0.7];
        assert_eq!(flow_step(&duffing(), x, 0.0, 1e-9).unwrap(), x);
    }

    #[test]
    fn duffing_step_matches_fine_rk4() {
        let sys = duffing();
        let x = [1.5, 0.0];
        let y = flow_step(&sys, x, 0.1, 1e-12).unwrap();
        let r = rk4(&sys, x, 0.1, 100_000);
        assert!((sys.h(&y) - sys.h(&x)).abs() < 1e-10);
        assert!((y[0] - r[0]).abs() < 1e-10 && (y[1] - r[1]).abs() < 1e-10);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let sys = HamiltonianSystem2D::new(
            Potential::parse("x1").unwrap(),
            Drift::Zero,
            0.5,
            Rect { lo: [-1.0, -1.0], hi: [1.0, 1.0] },
        );
        assert!(matches!(flow_step(&sys, [0.0, 0.0], 5.0, 1e-9), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn radial_period_is_two_pi() {
        let sys = radial();
        for r in [0.01, 0.5, 1.0, 3.0, 7.0] {
            let o = trace_orbit(&sys, [r, 0.0], &OrbitOptions::new(1e-11)).unwrap();
            assert!((o.period - 2.0 * PI).abs() < 1e-8, "r = {r}: {}", o.period);
            let o2 = trace_orbit(&sys, [0.0, r], &OrbitOptions::new(1e-11)).unwrap();
            assert!((o.period - o2.period).abs() < 1e-8);
        }
    }

    #[test]
    fn duffing_center_frequency() {
        let sys = duffing();
        let target = 2.0 * PI / 2f64.sqrt();
        let mut errs = vec![];
        for d in [1e-1, 1e-2, 1e-3] {
            let o = trace_orbit(&sys, [1.0 + d, 0.0], &OrbitOptions::new(1e-11)).unwrap();
            errs.push((o.period - target).abs());
        }
        assert!(errs[2] < 1e-5 && errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn critical_anchor_is_rejected() {
        assert!(matches!(trace_orbit(&duffing(), [0.0, 0.0], &OrbitOptions::new(1e-10)), Err(Error::NearCritical { .. })));
        assert!(matches!(trace_orbit(&radial(), [0.0, 0.0], &OrbitOptions::new(1e-10)), Err(Error::NearCritical { .. })));
    }

    #[test]
    fn radial_averages() {
        let sys = radial();
        let h: f64 = 1.7;
        let o = trace_orbit(&sys, [(2.0 * h).sqrt(), 0.0], &OrbitOptions::new(1e-11)).unwrap();
        assert_eq!(orbit_average(&o, |_| 1.0), 1.0);
        let g2 = orbit_average(&o, |x| {
            let g = sys.grad(x);
            g[0] * g[0] + g[1] * g[1]
        });
        assert!((g2 - 2.0 * h).abs() < 1e-9);
        assert!(orbit_average(&o, |x| x[0]).abs() < 1e-8);
        assert!(o.energy_drift < 1e-9);
    }

    #[test]
    fn arclength_period_agrees_with_return_time() {
        let sys = duffing();
        for x0 in [[1.5, 0.0], [1.2, 0.0], [0.0, 1.0], [-0.4, 0.0]] {
            let mut opts = OrbitOptions::new(1e-11);
            opts.min_samples = 1024;
            let o = trace_orbit(&sys, x0, &opts).unwrap();
            let t2 = o.period_by_arclength(&sys);
            assert!(((t2 - o.period) / o.period).abs() < 1e-6, "{x0:?}: {} vs {}", o.period, t2);
        }
    }

    #[test]
    fn single_precision_rotation() {
        let sys: HamiltonianSystem2D<f32> = HamiltonianSystem2D::preset("radial-quadratic", 10.0).unwrap();
        let y = flow_step(&sys, [1.0f32, 0.0], std::f32::consts::FRAC_PI_2, 1e-5).unwrap();
        assert!(y[0].abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4);
        let o = trace_orbit(&sys, [1.0f32, 0.0], &OrbitOptions::new(1e-5)).unwrap();
        assert!((o.period - 2.0 * std::f32::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn expression_matches_preset() {
        let e = Potential::parse("(x1^2 - 1)^2/4 + x2^2/2").unwrap();
        let p = Potential::DuffingWell;
        for x in [[0.3f64, 0.4], [-1.2, 2.0]] {
            assert!((e.value(&x) - p.value(&x)).abs() < 1e-14);
            let (ge, gp) = (e.grad(&x), p.grad(&x));
            assert!((ge[0] - gp[0]).abs() < 1e-14 && (ge[1] - gp[1]).abs() < 1e-14);
        }
    }
}
