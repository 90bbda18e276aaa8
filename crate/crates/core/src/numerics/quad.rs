//! Adaptive Gauss–Kronrod (7, 15) quadrature.

use crate::scalar::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<S: Scalar, F: FnMut(S) -> S>(f: &mut F, a: S, b: S) -> (S, S) {
    let half = S::c(0.5);
    let c = half * (a + b);
    let r = half * (b - a);
    let fc = f(c);
    let mut kron = fc * S::c(WGK[7]);
    let mut gauss = fc * S::c(WG[3]);
    for j in 0..7 {
        let dx = r * S::c(XGK[j]);
        let s = f(c - dx) + f(c + dx);
        kron = kron + S::c(WGK[j]) * s;
        if j % 2 == 1 {
            gauss = gauss + S::c(WG[j / 2]) * s;
        }
    }
    (kron * r, ((kron - gauss) * r).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<S> {
    pub value: S,
    pub error: S,
    pub intervals: usize,
}

/// Integrates `f` on `[a, b]` to `max(abs_tol, rel_tol·|I|)`, bisecting the worst interval.
pub fn integrate<S: Scalar, F: FnMut(S) -> S>(mut f: F, a: S, b: S, abs_tol: S, rel_tol: S, max_intervals: usize) -> QuadResult<S> {
    if a == b {
        return QuadResult { value: S::zero(), error: S::zero(), intervals: 0 };
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) && parts.len() < max_intervals {
        let (idx, _) = parts
            .iter()
            .enumerate()
            .fold((0, S::neg_infinity()), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, pv, _) = parts.swap_remove(idx);
        let mid = S::c(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            parts.push((lo, hi, pv, S::zero()));
            err = parts.iter().fold(S::zero(), |s, p| s + p.3);
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
        total = parts.iter().fold(S::zero(), |s, p| s + p.2);
        err = parts.iter().fold(S::zero(), |s, p| s + p.3);
    }
    QuadResult { value: total, error: err, intervals: parts.len() }
}

/// Shorthand for `integrate` with the usual defaults.
pub fn quad<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    integrate(f, a, b, tol, tol, 4000).value
}
