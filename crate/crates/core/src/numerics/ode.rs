//! Dormand–Prince 5(4) with PI step control and invariant monitoring.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Autonomous vector field with up to two monitored first integrals.
pub trait Flow<S: Scalar, const N: usize>: Sync {
    fn velocity(&self, x: &[S; N]) -> [S; N];
    /// Quantities conserved by the exact flow. Unused slots return zero.
    fn invariants(&self, x: &[S; N]) -> [S; 2];
    fn contains(&self, _x: &[S; N]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl<S> {
    /// Mixed absolute/relative tolerance on positions.
    pub tol: S,
    /// Allowed invariant drift per unit time, relative to `1 + |I|`.
    pub drift_rate: S,
    pub h_min: S,
    pub max_steps: usize,
}

impl<S: Scalar> StepControl<S> {
    pub fn new(tol: S) -> Self {
        Self { tol, drift_rate: tol, h_min: S::c(1e-14), max_steps: 10_000_000 }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Stateful integrator positioned at `(t, x)` with cached velocity (FSAL).
#[derive(Debug, Clone)]
pub struct Stepper<S: Scalar, const N: usize> {
    pub t: S,
    pub x: [S; N],
    pub v: [S; N],
    pub h: S,
    inv_ref: [S; 2],
    inv_cur: [S; 2],
    err_prev: S,
    ctl: StepControl<S>,
    steps: usize,
}

impl<S: Scalar, const N: usize> Stepper<S, N> {
    pub fn new<F: Flow<S, N>>(f: &F, x: [S; N], ctl: StepControl<S>, h_hint: Option<S>) -> Self {
        let v = f.velocity(&x);
        let inv_ref = f.invariants(&x);
        let mut st = Self { t: S::zero(), x, v, h: S::zero(), inv_ref, inv_cur: inv_ref, err_prev: S::c(1e-4), ctl, steps: 0 };
        st.h = match h_hint {
            Some(h) if h > S::zero() => h,
            _ => st.initial_step(f),
        };
        st
    }

    fn scale(&self, a: S, b: S) -> S {
        self.ctl.tol * (S::one() + a.abs().max(b.abs()))
    }

    fn initial_step<F: Flow<S, N>>(&self, f: &F) -> S {
        let mut d0 = S::zero();
        let mut d1 = S::zero();
        for i in 0..N {
            let sc = self.scale(self.x[i], self.x[i]);
            d0 = d0.max((self.x[i] / sc).abs());
            d1 = d1.max((self.v[i] / sc).abs());
        }
        let h0 = if d0 < S::c(1e-5) || d1 < S::c(1e-5) { S::c(1e-6) } else { S::c(0.01) * d0 / d1 };
        let mut x1 = self.x;
        for i in 0..N {
            x1[i] = self.x[i] + h0 * self.v[i];
        }
        let v1 = f.velocity(&x1);
        let mut d2 = S::zero();
        for i in 0..N {
            let sc = self.scale(self.x[i], self.x[i]);
            d2 = d2.max(((v1[i] - self.v[i]) / sc).abs() / h0);
        }
        let m = d1.max(d2);
        let h1 = if m <= S::c(1e-15) { (h0 * S::c(1e-3)).max(S::c(1e-6)) } else { (S::c(0.01) / m).powf(S::c(0.2)) };
        (S::c(100.0) * h0).min(h1)
    }

    pub fn invariant_ref(&self) -> [S; 2] {
        self.inv_ref
    }

    /// Advances by one accepted step, never past `t_end`.
    pub fn step<F: Flow<S, N>>(&mut self, f: &F, t_end: S) -> Result<()> {
        loop {
            self.steps += 1;
            if self.steps > self.ctl.max_steps {
                return Err(Error::StepFailure { t: self.t.to_f64_lossy(), h: self.h.to_f64_lossy() });
            }
            let remaining = t_end - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h.min(remaining) };
            let mut k = [[S::zero(); N]; 7];
            k[0] = self.v;
            let mut xs = self.x;
            for s in 1..7 {
                for i in 0..N {
                    let mut acc = S::zero();
                    for j in 0..s {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc = acc + S::c(a) * k[j][i];
                        }
                    }
                    xs[i] = self.x[i] + h * acc;
                }
                k[s] = f.velocity(&xs);
            }
            let x_new = xs;
            let mut err = S::zero();
            for i in 0..N {
                let mut e = S::zero();
                for s in 0..7 {
                    if E[s] != 0.0 {
                        e = e + S::c(E[s]) * k[s][i];
                    }
                }
                let sc = self.scale(self.x[i], x_new[i]);
                err = err.max((h * e / sc).abs());
            }
            let inv_new = f.invariants(&x_new);
            for j in 0..2 {
                let budget = self.ctl.drift_rate * (S::one() + self.inv_ref[j].abs()) * h
                    + S::c(8.0) * S::epsilon() * (S::one() + self.inv_ref[j].abs());
                err = err.max((inv_new[j] - self.inv_cur[j]).abs() / budget);
            }
            if !err.is_finite() {
                err = S::c(1e10);
            }
            if err <= S::one() {
                if !f.contains(&x_new) {
                    return Err(Error::OutOfDomain { x: x_new.iter().map(|v| v.to_f64_lossy()).collect() });
                }
                let e = err.max(S::c(1e-10));
                let fac = S::c(0.9) * e.powf(S::c(-0.7 / 5.0)) * self.err_prev.powf(S::c(0.4 / 5.0));
                let fac = fac.max(S::c(0.2)).min(S::c(5.0));
                self.err_prev = e;
                self.t = if last { t_end } else { self.t + h };
                self.x = x_new;
                self.v = k[6];
                self.inv_cur = inv_new;
                if !last {
                    self.h = h * fac;
                }
                return Ok(());
            }
            let fac = (S::c(0.9) * err.powf(S::c(-0.2))).max(S::c(0.1));
            self.h = h * fac;
            if self.h < self.ctl.h_min {
                return Err(Error::StepFailure { t: self.t.to_f64_lossy(), h: self.h.to_f64_lossy() });
            }
        }
    }

    /// Integrates to `t_end` exactly.
    pub fn advance_to<F: Flow<S, N>>(&mut self, f: &F, t_end: S) -> Result<()> {
        while self.t < t_end {
            self.step(f, t_end)?;
        }
        Ok(())
    }
}

/// Flows `x` for time `dt`. Returns the endpoint and the last proposed step size.
pub fn integrate<S: Scalar, const N: usize, F: Flow<S, N>>(
    f: &F,
    x: [S; N],
    dt: S,
    ctl: StepControl<S>,
    h_hint: Option<S>,
) -> Result<([S; N], S)> {
    if dt == S::zero() {
        return Ok((x, h_hint.unwrap_or(S::zero())));
    }
    let mut st = Stepper::new(f, x, ctl, h_hint);
    st.advance_to(f, dt)?;
    Ok((st.x, st.h))
}

/// Cubic Hermite interpolation between `(x0, v0)` and `(x1, v1)` over a step `h`, at fraction `s`.
pub fn hermite<S: Scalar, const N: usize>(x0: &[S; N], v0: &[S; N], x1: &[S; N], v1: &[S; N], h: S, s: S) -> [S; N] {
    let one = S::one();
    let two = S::c(2.0);
    let three = S::c(3.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = two * s3 - three * s2 + one;
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    let mut out = [S::zero(); N];
    for i in 0..N {
        out[i] = h00 * x0[i] + h10 * h * v0[i] + h01 * x1[i] + h11 * h * v1[i];
    }
    out
}
