//! Monotone piecewise cubic Hermite interpolation (Fritsch–Carlson slopes).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

impl Pchip {
    /// Requires strictly increasing `x` and at least two nodes.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() == y.len() && x.len() >= 2, "pchip needs matching nodes");
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().all(|&v| v > 0.0), "pchip nodes must increase");
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = m[0];
            d[1] = m[0];
        } else {
            for k in 1..n - 1 {
                if m[k - 1] * m[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], m[0], m[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Self { x, y, d }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    pub fn hi(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.x.len();
        if t <= self.x[0] {
            return 0;
        }
        if t >= self.x[n - 1] {
            return n - 2;
        }
        self.x.partition_point(|&v| v <= t).saturating_sub(1).min(n - 2)
    }

    /// Value and first derivative; constant extrapolation of the end values outside the nodes.
    pub fn eval_d(&self, t: f64) -> (f64, f64) {
        let n = self.x.len();
        if t <= self.x[0] {
            return (self.y[0], 0.0);
        }
        if t >= self.x[n - 1] {
            return (self.y[n - 1], 0.0);
        }
        let k = self.locate(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0 + (-6.0 * s2 + 6.0 * s) * y1) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1;
        (v, dv)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_d(t).0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.eval_d(t).1
    }

    /// Node slopes.
    pub fn slopes(&self) -> &[f64] {
        &self.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_lines() {
        let x: Vec<f64> = (0..10).map(|k| (k as f64).powf(1.3)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let p = Pchip::new(x.clone(), y.clone());
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(p.eval(*a), *b);
        }
        for t in [0.3, 1.7, 5.2, 11.0] {
            let (v, d) = p.eval_d(t);
            assert!((v - (3.0 * t - 1.0)).abs() < 1e-12);
            assert!((d - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_data_stays_monotone() {
        let x = vec![0.0, 1.0, 1.1, 3.0, 3.2, 7.0];
        let y = vec![0.0, 0.1, 2.0, 2.05, 5.0, 5.1];
        let p = Pchip::new(x, y);
        let mut prev = p.eval(0.0);
        for k in 1..=700 {
            let v = p.eval(k as f64 * 0.01);
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }
}
