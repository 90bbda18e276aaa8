//! Book coordinates, the projection of ℝ³ onto the four pages, orbit parametrisations and
//! orbit averages.

use super::elliptic::{ellip, ellip_angle};
use crate::error::{Error, Result};
use crate::numerics::ode::{hermite, Flow, StepControl, Stepper};
use crate::numerics::quad::integrate;
use crate::numerics::roots::brent;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

pub type P3 = [f64; 3];

/// `V(x) = (x₂x₃, x₁x₃, −2x₁x₂)`, tangent to spheres and to the level sets of `x₁² − x₂²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookShear {
    /// Radius of the admissible ball.
    pub radius: f64,
}

impl BookShear {
    pub fn velocity_at(x: &P3) -> P3 {
        [x[1] * x[2], x[0] * x[2], -2.0 * x[0] * x[1]]
    }
}

impl Flow<f64, 3> for BookShear {
    fn velocity(&self, x: &P3) -> P3 {
        Self::velocity_at(x)
    }

    fn invariants(&self, x: &P3) -> [f64; 2] {
        [x[0] * x[0] + x[1] * x[1] + x[2] * x[2], x[0] * x[0] - x[1] * x[1]]
    }

    fn contains(&self, x: &P3) -> bool {
        x.iter().map(|v| v * v).sum::<f64>() <= self.radius * self.radius
    }
}

/// A point of the book in polar coordinates: `r = |y|`, `θ = arctan(t)` with `t` the ratio of the
/// smaller to the larger `|yᵢ|`. Page 0 is the binding, where `θ = π/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookPoint {
    pub page: u8,
    pub r: f64,
    pub theta: f64,
}

impl BookPoint {
    pub fn new(page: u8, r: f64, theta: f64) -> Self {
        Self { page, r, theta }
    }

    /// Locates `y` in the cones `C₁…C₄`. Points with `y₁y₂ < 0` are not in the book.
    pub fn from_y(y: [f64; 2]) -> Result<Self> {
        let (a, b) = (y[0].abs(), y[1].abs());
        let r = a.hypot(b);
        if y[0] * y[1] < 0.0 {
            return Err(Error::Invalid(format!("({}, {}) is outside the book", y[0], y[1])));
        }
        if a == b {
            return Ok(Self { page: if r == 0.0 { 1 } else { 0 }, r, theta: if r == 0.0 { 0.0 } else { FRAC_PI_4 } });
        }
        let neg = y[0] < 0.0 || y[1] < 0.0;
        let page = match (neg, a > b) {
            (false, true) => 1,
            (false, false) => 2,
            (true, true) => 3,
            (true, false) => 4,
        };
        let theta = (a.min(b) / a.max(b)).atan();
        Ok(Self { page, r, theta })
    }

    pub fn y(&self) -> [f64; 2] {
        let (c, s) = (self.r * self.theta.cos(), self.r * self.theta.sin());
        match self.page {
            1 => [c, s],
            2 => [s, c],
            3 => [-c, -s],
            4 => [-s, -c],
            _ => {
                let d = self.r * std::f64::consts::FRAC_1_SQRT_2;
                [d, d]
            }
        }
    }

    pub fn is_binding(&self) -> bool {
        self.page == 0
    }
}

/// `π(x)`: `±(√(x₁² + x₃²/2), √(x₂² + x₃²/2))`, positive on the closure of `{x₁ + x₂ > 0}`.
pub fn project_y(x: &P3) -> [f64; 2] {
    let h = 0.5 * x[2] * x[2];
    let y = [(x[0] * x[0] + h).sqrt(), (x[1] * x[1] + h).sqrt()];
    if x[0] + x[1] >= 0.0 {
        y
    } else {
        [-y[0], -y[1]]
    }
}

pub fn project_book(x: &P3) -> BookPoint {
    let y = project_y(x);
    BookPoint::from_y(y).expect("projection lands in the book")
}

fn canonical(page: u8, y: [f64; 2]) -> [f64; 2] {
    match page {
        1 => y,
        2 => [y[1], y[0]],
        3 => [-y[0], -y[1]],
        _ => [-y[1], -y[0]],
    }
}

/// `Φ₁(y, θ) = (√(y₁² − y₂² sin²θ), y₂ cos θ, √2 y₂ sin θ)` for `y ∈ C₁`.
fn phi1(y: [f64; 2], th: f64) -> P3 {
    let s = th.sin();
    [(y[0] * y[0] - y[1] * y[1] * s * s).max(0.0).sqrt(), y[1] * th.cos(), SQRT_2 * y[1] * s]
}

/// Orbit parametrisation `Φᵢ(y, θ)` on page `i`, mapped back from `C₁` by the reflections
/// `r₁(x) = (x₂, x₁, x₃)` and `r₂(x) = (−x₁, −x₂, x₃)`.
pub fn phi(page: u8, y: [f64; 2], th: f64) -> P3 {
    let x = phi1(canonical(page, y), th);
    match page {
        1 => x,
        2 => [x[1], x[0], x[2]],
        3 => [-x[0], -x[1], x[2]],
        _ => [-x[1], -x[0], x[2]],
    }
}

/// `|Jᵢ(y, θ)| = √2|y₁y₂| / |first coordinate of Φ₁(canonical y, θ)|`.
pub fn jacobian(page: u8, y: [f64; 2], th: f64) -> f64 {
    let c = canonical(page, y);
    SQRT_2 * (y[0] * y[1]).abs() / phi1(c, th)[0]
}

/// `hᵢ(y) = 4√2·min(|y₁|,|y₂|)·K(t)`.
pub fn orbit_weight(y: [f64; 2]) -> f64 {
    let (a, b) = (y[0].abs(), y[1].abs());
    let (lo, hi) = (a.min(b), a.max(b));
    4.0 * SQRT_2 * lo * ellip(lo / hi).k
}

/// Period of the flow orbit through `Φᵢ(y, ·)`: `h(y)/(2|y₁y₂|)`.
pub fn period(y: [f64; 2]) -> f64 {
    orbit_weight(y) / (2.0 * (y[0] * y[1]).abs())
}

/// `ν_y(f) = h(y)⁻¹ ∫₀^{2π} f(Φᵢ(y,θ)) |Jᵢ| dθ`, on the interior of a page.
pub fn nu_average<F: FnMut(&P3) -> f64>(y: [f64; 2], tol: f64, mut f: F) -> Result<f64> {
    let p = BookPoint::from_y(y)?;
    if p.is_binding() {
        return Err(Error::BindingPoint);
    }
    if p.theta == 0.0 {
        return Err(Error::Invalid("orbit average on the page edge".into()));
    }
    let mut total = 0.0;
    for q in 0..4 {
        let a = q as f64 * FRAC_PI_2;
        let r = integrate(|th| f(&phi(p.page, y, th)) * jacobian(p.page, y, th), a, a + FRAC_PI_2, tol, tol, 2000);
        total += r.value;
    }
    Ok(total / orbit_weight(y))
}

/// Diffusion matrix `a(y) = ν_y(∇π ⊗ ∇π)` in closed form.
pub fn a_matrix(y: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    let p = BookPoint::from_y(y)?;
    if p.is_binding() {
        return Err(Error::BindingPoint);
    }
    let e = ellip_angle(p.theta);
    let t = e.t;
    if t == 0.0 {
        return Ok([[1.0, 0.0], [0.0, 1.0]]);
    }
    let f = e.alpha / (2.0 * t * t);
    let m = if p.page == 1 || p.page == 3 { [[-t * t, t], [t, -1.0]] } else { [[-1.0, t], [t, -t * t]] };
    Ok([[1.0 + f * m[0][0], f * m[0][1]], [f * m[1][0], 1.0 + f * m[1][1]]])
}

/// Orbit average of `∇π ⊗ ∇π` by quadrature, for checking `a_matrix`.
pub fn a_matrix_quadrature(y: [f64; 2], tol: f64) -> Result<[[f64; 2]; 2]> {
    let grad = |x: &P3| {
        let y = project_y(x);
        [[x[0] / y[0], 0.0, 0.5 * x[2] / y[0]], [0.0, x[1] / y[1], 0.5 * x[2] / y[1]]]
    };
    let mut a = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            a[i][j] = nu_average(y, tol, |x| {
                let g = grad(x);
                g[i][0] * g[j][0] + g[i][1] * g[j][1] + g[i][2] * g[j][2]
            })?;
        }
    }
    Ok(a)
}

/// Period of the orbit through `(y₁, y₂, 0)`, `y₁ > y₂ > 0`, by integrating the flow to the next
/// downward crossing of `x₃ = 0` on the same side.
pub fn period_numeric(y: [f64; 2], tol: f64) -> Result<f64> {
    let f = BookShear { radius: f64::INFINITY };
    let mut st = Stepper::new(&f, [y[0], y[1], 0.0], StepControl::new(tol), None);
    let horizon = 100.0 * period(y);
    let mut left_start = false;
    while st.t < horizon {
        let (t0, x0, v0) = (st.t, st.x, st.v);
        st.step(&f, horizon)?;
        let h = st.t - t0;
        if !left_start && st.x[2] < 0.0 {
            left_start = true;
            continue;
        }
        if left_start && x0[2] > 0.0 && st.x[2] <= 0.0 && st.x[1] > 0.0 {
            let (x1, v1) = (st.x, st.v);
            let s = brent(|s| hermite(&x0, &v0, &x1, &v1, h, s)[2], 0.0, 1.0, 1e-15, 200).ok_or(Error::NotClosed { max_time: horizon })?;
            return Ok(t0 + s * h);
        }
    }
    Err(Error::NotClosed { max_time: horizon })
}

/// `λ_θ h_θ` in polar form, `h_θ = 4√2 K(tan θ) sin θ`.
pub fn lambda_h(theta: f64) -> f64 {
    let e = ellip_angle(theta);
    4.0 * SQRT_2 * theta.sin() * e.lk
}

/// `b_θ = ∂_θ log(λ_θ h_θ)` and its regular part `b_θ − 1/θ`.
pub fn b_theta(theta: f64) -> (f64, f64) {
    let e = ellip_angle(theta);
    let sec2 = 1.0 + e.t * e.t;
    let cot_minus = if theta < 1e-2 {
        let t2 = theta * theta;
        -theta / 3.0 - t2 * theta / 45.0 - 2.0 * t2 * t2 * theta / 945.0
    } else {
        1.0 / theta.tan() - 1.0 / theta
    };
    let regular = sec2 * e.dlk / e.lk + cot_minus;
    (regular + 1.0 / theta, regular)
}

/// `T` on page 1 in closed form, `(2√2/y₁)·K(y₂/y₁)`.
pub fn period_page1(y: [f64; 2]) -> f64 {
    2.0 * SQRT_2 / y[0] * ellip(y[1] / y[0]).k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ode::integrate as flow;

    #[test]
    fn invariants_conserved() {
        let f = BookShear { radius: 10.0 };
        let x0 = [1.0, 0.5, 0.3];
        let (x, _) = flow(&f, x0, 1.0, StepControl::new(1e-11), None).unwrap();
        let (a, b) = (f.invariants(&x0), f.invariants(&x));
        assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
    }

    #[test]
    fn projection_is_constant_along_orbits() {
        let f = BookShear { radius: 10.0 };
        for x0 in [[1.0, 0.5, 0.3], [-0.2, 0.9, -0.4], [-1.0, -0.3, 0.2], [0.1, -0.8, 0.5]] {
            let p0 = project_book(&x0);
            let (x, _) = flow(&f, x0, 0.7, StepControl::new(1e-11), None).unwrap();
            let p = project_book(&x);
            assert_eq!(p.page, p0.page);
            assert!((p.r - p0.r).abs() < 1e-8 && (p.theta - p0.theta).abs() < 1e-8);
        }
    }

    #[test]
    fn pages_and_binding() {
        assert_eq!(project_book(&[1.0, 0.5, 0.0]).page, 1);
        assert_eq!(project_book(&[0.5, 1.0, 0.0]).page, 2);
        assert_eq!(project_book(&[-1.0, 0.5, 0.0]).page, 3);
        assert_eq!(project_book(&[0.5, -1.0, 0.0]).page, 4);
        assert!(project_book(&[1.0, -1.0, 0.3]).is_binding());
        assert!(project_book(&[1.0, 1.0, 0.0]).is_binding());
        assert!(matches!(nu_average([1.0, 1.0], 1e-10, |_| 1.0), Err(Error::BindingPoint)));
        assert!(BookPoint::from_y([1.0, -0.5]).is_err());
        for p in 1..=4u8 {
            let b = BookPoint::new(p, 1.3, 0.4);
            let back = BookPoint::from_y(b.y()).unwrap();
            assert_eq!(back.page, p);
            assert!((back.theta - 0.4).abs() < 1e-14 && (back.r - 1.3).abs() < 1e-14);
        }
    }

    #[test]
    fn orbit_maps_project_back() {
        for p in 1..=4u8 {
            let y = BookPoint::new(p, 1.1, 0.3).y();
            for k in 0..12 {
                let x = phi(p, y, k as f64 * 0.5);
                let yb = project_y(&x);
                assert!((yb[0] - y[0]).abs() < 1e-12 && (yb[1] - y[1]).abs() < 1e-12, "page {p}");
            }
        }
    }

    #[test]
    fn constant_average_is_one() {
        let y = [1.2, 0.7];
        assert!((nu_average(y, 1e-12, |_| 1.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn x3_squared_average() {
        for y in [[1.0, 0.5], [2.0, 0.1], [1.0, 0.95], [0.4, 0.3]] {
            let v = nu_average(y, 1e-13, |x| x[2] * x[2]).unwrap();
            let exact = 2.0 * y[0] * y[0] * ellip(y[1] / y[0]).alpha;
            assert!((v - exact).abs() < 1e-6 * (1.0 + exact), "{y:?}: {v} vs {exact}");
        }
    }

    #[test]
    fn a_matrix_closed_form() {
        for p in 1..=4u8 {
            for th in [0.1, 0.4, 0.7] {
                let y = BookPoint::new(p, 1.0, th).y();
                let a = a_matrix(y).unwrap();
                let q = a_matrix_quadrature(y, 1e-12).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((a[i][j] - q[i][j]).abs() < 1e-7, "page {p} θ {th}: {a:?} vs {q:?}");
                    }
                }
                let lam = ellip_angle(th).lambda;
                let av = [a[0][0] * y[0] + a[0][1] * y[1], a[1][0] * y[0] + a[1][1] * y[1]];
                assert!((av[0] - y[0]).abs() < 1e-10 && (av[1] - y[1]).abs() < 1e-10);
                let w = [-y[1], y[0]];
                let aw = [a[0][0] * w[0] + a[0][1] * w[1], a[1][0] * w[0] + a[1][1] * w[1]];
                assert!((aw[0] - lam * w[0]).abs() < 1e-10 && (aw[1] - lam * w[1]).abs() < 1e-10);
            }
        }
        let near = a_matrix([1.0, 1.0 - 1e-12]).unwrap();
        assert!(near.iter().flatten().all(|v| (v - 0.5).abs() < 0.05));
    }

    #[test]
    fn period_matches_elliptic_formula() {
        for y in [[1.0, 0.5], [1.5, 0.2], [1.0, 0.9]] {
            let t = period_numeric(y, 1e-12).unwrap();
            assert!((t - period_page1(y)).abs() < 1e-6 * t, "{y:?}: {t} vs {}", period_page1(y));
            assert!((period(y) - period_page1(y)).abs() < 1e-12 * t);
        }
    }

    #[test]
    fn b_theta_is_log_derivative() {
        for th in [0.05, 0.3, 0.6, 0.78] {
            let h = 1e-6;
            let fd = (lambda_h(th + h).ln() - lambda_h(th - h).ln()) / (2.0 * h);
            assert!((b_theta(th).0 - fd).abs() < 1e-6 * (1.0 + fd.abs()), "θ = {th}");
        }
        assert!((b_theta(1e-6).1).abs() < 1e-3);
        assert!((lambda_h(FRAC_PI_4 - 1e-7) - 4.0).abs() < 1e-3);
        assert!(b_theta(FRAC_PI_4 - 1e-12).0.abs() < 1e-6);
    }

    #[test]
    fn field_and_projection_examples() {
        assert_eq!(BookShear::velocity_at(&[1.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(BookShear::velocity_at(&[1.0, 1.0, 1.0]), [1.0, 1.0, -2.0]);
        let b = project_book(&[0.0, 0.0, -0.6]);
        assert!(b.is_binding() && (b.r - 0.6).abs() < 1e-15);
        assert!(project_y(&[0.0, 0.0, -0.6]).iter().all(|v| (v - 0.6 / SQRT_2).abs() < 1e-15));
        assert_eq!(project_y(&[2.0, 1.0, 0.0]), [2.0, 1.0]);
        assert_eq!(project_book(&[2.0, 1.0, 0.0]).page, 1);
    }

    #[test]
    fn odd_average_and_orbit_weight() {
        for y in [[1.0, 0.5], [1.3, 1.2], [2.0, 0.01]] {
            assert!(nu_average(y, 1e-13, |x| x[1]).unwrap().abs() < 1e-10);
            let mut h = 0.0;
            for q in 0..4 {
                let a = q as f64 * FRAC_PI_2;
                h += integrate(|th| jacobian(1, y, th), a, a + FRAC_PI_2, 1e-14, 1e-14, 2000).value;
            }
            assert!((h - orbit_weight(y)).abs() < 1e-8 * h);
        }
    }
}
