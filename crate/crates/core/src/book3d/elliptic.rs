//! Complete elliptic integrals of modulus `t` and the derived book coefficients
//! `α = 1 − E/K`, `λ = 1 − α(1+t²)/(2t²)`.
//!
//! Small moduli use the hypergeometric series (no cancellation in `α/t²`); larger moduli use the
//! arithmetic–geometric mean. Moduli near 1 are passed as `δ = 1 − t` so that `1 − t²` keeps
//! full precision.

use std::f64::consts::FRAC_PI_2;

const SERIES_BELOW: f64 = 0.3;
const SERIES_TERMS: usize = 40;

/// `K`, `E`, the book coefficients and their `t`-derivatives at one modulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellip {
    pub t: f64,
    /// `1 − t²`
    pub kp2: f64,
    pub k: f64,
    pub e: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// `λ·K`
    pub lk: f64,
    /// `dK/dt`
    pub dk: f64,
    /// `dλ/dt`
    pub dlambda: f64,
    /// `d(λK)/dt`
    pub dlk: f64,
}

fn agm(t: f64, kp: f64) -> (f64, f64) {
    let (mut a, mut b) = (1.0f64, kp);
    let mut sum = 0.5 * t * t;
    let mut pow = 0.5;
    for _ in 0..64 {
        let c = 0.5 * (a - b);
        pow *= 2.0;
        sum += pow * c * c;
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
        if c.abs() <= 1e-17 * a {
            break;
        }
    }
    let k = FRAC_PI_2 / a;
    (k, k * (1.0 - sum))
}

fn from_agm(t: f64, kp2: f64) -> Ellip {
    let (k, e) = agm(t, kp2.sqrt());
    let g = (1.0 + t * t) / (2.0 * t * t);
    let one_minus_g = -kp2 / (2.0 * t * t);
    let alpha = 1.0 - e / k;
    let lk = k * one_minus_g + e * g;
    let lambda = lk / k;
    let dk = e / (t * kp2) - k / t;
    let de = (e - k) / t;
    let dalpha = (e * dk - de * k) / (k * k);
    let dlambda = -dalpha * g + alpha / (t * t * t);
    let dlk = (2.0 * k * kp2 - e * (2.0 - t * t)) / (2.0 * t * t * t);
    Ellip { t, kp2, k, e, alpha, lambda, lk, dk, dlambda, dlk }
}

fn from_series(t: f64) -> Ellip {
    let m = t * t;
    // Kn = Σ c²ₙ mⁿ, En = Σ c²ₙ mⁿ/(1−2n), S = (K − E)/((π/2)·m) = Σₙ≥₁ c²ₙ·2n/(2n−1)·mⁿ⁻¹
    let (mut kn, mut en, mut s, mut dkn, mut ds) = (1.0, 1.0, 0.0, 0.0, 0.0);
    let mut c2 = 1.0;
    let (mut p1, mut p2) = (1.0, 0.0);
    for n in 1..SERIES_TERMS {
        let nf = n as f64;
        let c = (2.0 * nf - 1.0) / (2.0 * nf);
        c2 *= c * c;
        let w = c2 * 2.0 * nf / (2.0 * nf - 1.0);
        kn += c2 * p1 * m;
        en += c2 * p1 * m / (1.0 - 2.0 * nf);
        dkn += nf * c2 * p1;
        s += w * p1;
        ds += w * (nf - 1.0) * p2;
        p2 = p1;
        p1 *= m;
    }
    let k = FRAC_PI_2 * kn;
    let e = FRAC_PI_2 * en;
    let alpha = m * s / kn;
    let lambda = 1.0 - (1.0 + m) * s / (2.0 * kn);
    let dlam_dm = -(s / (2.0 * kn) + (1.0 + m) * (ds * kn - s * dkn) / (2.0 * kn * kn));
    let dk = FRAC_PI_2 * 2.0 * t * dkn;
    let dlambda = 2.0 * t * dlam_dm;
    Ellip { t, kp2: 1.0 - m, k, e, alpha, lambda, lk: lambda * k, dk, dlambda, dlk: dk * lambda + k * dlambda }
}

/// Values at modulus `t ∈ [0, 1)`.
pub fn ellip(t: f64) -> Ellip {
    if t < SERIES_BELOW {
        from_series(t)
    } else {
        from_agm(t, (1.0 - t) * (1.0 + t))
    }
}

/// Values at modulus `t = 1 − δ`, `δ ∈ (0, 1]`.
pub fn ellip_delta(delta: f64) -> Ellip {
    let t = 1.0 - delta;
    if t < SERIES_BELOW {
        from_series(t)
    } else {
        from_agm(t, delta * (2.0 - delta))
    }
}

/// Values at `t = tan θ`, `θ ∈ [0, π/4)`, resolving `1 − t` from `π/4 − θ`.
pub fn ellip_angle(theta: f64) -> Ellip {
    let eps = std::f64::consts::FRAC_PI_4 - theta;
    if eps < 0.3 {
        let te = eps.tan();
        ellip_delta(2.0 * te / (1.0 + te))
    } else {
        ellip(theta.tan())
    }
}

pub fn elliptic_k(t: f64) -> f64 {
    ellip(t).k
}

pub fn elliptic_e(t: f64) -> f64 {
    ellip(t).e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::quad;

    fn k_quad(t: f64) -> f64 {
        quad(|s: f64| 1.0 / (1.0 - t * t * s.sin().powi(2)).sqrt(), 0.0, FRAC_PI_2, 1e-14)
    }

    fn e_quad(t: f64) -> f64 {
        quad(|s: f64| (1.0 - t * t * s.sin().powi(2)).sqrt(), 0.0, FRAC_PI_2, 1e-14)
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(elliptic_k(0.0), FRAC_PI_2);
        assert_eq!(elliptic_e(0.0), FRAC_PI_2);
        let z = ellip(0.0);
        assert_eq!(z.lambda, 0.75);
        assert_eq!(z.alpha, 0.0);
    }

    #[test]
    fn agrees_with_quadrature() {
        for &t in &[1e-3, 0.1, 0.29, 0.3, 0.31, 0.5, 0.8, 0.95, 0.999] {
            let e = ellip(t);
            assert!((e.k - k_quad(t)).abs() < 1e-12 * e.k, "K({t})");
            assert!((e.e - e_quad(t)).abs() < 1e-12, "E({t})");
        }
    }

    #[test]
    fn branches_are_continuous() {
        let a = from_series(SERIES_BELOW);
        let b = from_agm(SERIES_BELOW, 1.0 - SERIES_BELOW * SERIES_BELOW);
        for (x, y) in [(a.k, b.k), (a.e, b.e), (a.lambda, b.lambda), (a.dk, b.dk), (a.dlambda, b.dlambda), (a.dlk, b.dlk)] {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn derivatives_match_differences() {
        for &t in &[0.05, 0.2, 0.4, 0.7, 0.9, 0.99] {
            let h = 1e-6;
            let (p, m, c) = (ellip(t + h), ellip(t - h), ellip(t));
            assert!(((p.k - m.k) / (2.0 * h) - c.dk).abs() < 1e-6 * (1.0 + c.dk.abs()));
            assert!(((p.lambda - m.lambda) / (2.0 * h) - c.dlambda).abs() < 1e-6 * (1.0 + c.dlambda.abs()));
            assert!(((p.lk - m.lk) / (2.0 * h) - c.dlk).abs() < 1e-6 * (1.0 + c.dlk.abs()));
        }
    }

    #[test]
    fn small_and_unit_modulus_asymptotics() {
        let t = 1e-4;
        let e = ellip(t);
        assert!((e.alpha / (t * t) - 0.5).abs() < 1e-7);
        assert!((e.lambda - 0.75).abs() < 1e-7);
        for d in [1e-8, 1e-20, 1e-100] {
            let e = ellip_delta(d);
            let log = (2.0 * d).ln();
            assert!((e.k - (4f64.ln() - 0.5 * log)).abs() < 1e-6);
            assert!((e.lambda * e.k - 1.0).abs() < 1e-6);
            assert!((e.dlk + 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn angle_resolution() {
        let th = std::f64::consts::FRAC_PI_4 - 1e-13;
        let e = ellip_angle(th);
        assert!(e.kp2 > 0.0 && e.kp2 < 1e-12);
        let f = ellip_angle(0.5);
        assert!((f.k - ellip(0.5f64.tan()).k).abs() < 1e-13);
    }
}
