//! Distances between empirical laws on ℝ and on graph-like state spaces.

use crate::error::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;

/// Asymptotic two-sample Kolmogorov constant at the 1% level.
pub const KS_C99: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold_99: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.threshold_99
    }
}

fn sorted(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::EmptyLaw);
    }
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn ks_threshold_99(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_C99 * ((n + m) / (n * m)).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(KsResult { statistic: d, threshold_99: ks_threshold_99(n, m) })
}

/// `∫ |F_a − F_b| dx`, exact for empirical CDFs of any sizes.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut w = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        w += (i as f64 / n - j as f64 / m).abs() * (x - prev);
        prev = x;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(w)
}

fn frequencies(locs: impl Iterator<Item = u32>) -> (BTreeMap<u32, f64>, usize) {
    let mut m = BTreeMap::new();
    let mut n = 0;
    for l in locs {
        *m.entry(l).or_insert(0.0) += 1.0;
        n += 1;
    }
    for v in m.values_mut() {
        *v /= n as f64;
    }
    (m, n)
}

/// Total variation between two discrete laws given as label samples.
pub fn total_variation(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyLaw);
    }
    let (fa, _) = frequencies(a.iter().copied());
    let (fb, _) = frequencies(b.iter().copied());
    let keys: std::collections::BTreeSet<u32> = fa.keys().chain(fb.keys()).copied().collect();
    Ok(0.5 * keys.iter().map(|k| (fa.get(k).unwrap_or(&0.0) - fb.get(k).unwrap_or(&0.0)).abs()).sum::<f64>())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LocDistance {
    pub loc: u32,
    pub weight: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub ks: Option<KsResult>,
    pub w1: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GraphDistance {
    pub tv: f64,
    pub per_loc: Vec<LocDistance>,
    /// Mass-weighted mean of the conditional KS statistics.
    pub weighted_ks: f64,
    /// `max(tv, weighted_ks)`
    pub combined: f64,
}

/// Distance between two laws on a glued space, each sample being `(location label, coordinate)`.
/// Labels are compared by total variation, coordinates by KS conditionally on the label.
pub fn graph_distance(a: &[(u32, f64)], b: &[(u32, f64)]) -> Result<GraphDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyLaw);
    }
    let la: Vec<u32> = a.iter().map(|s| s.0).collect();
    let lb: Vec<u32> = b.iter().map(|s| s.0).collect();
    let tv = total_variation(&la, &lb)?;
    let (fa, _) = frequencies(la.into_iter());
    let (fb, _) = frequencies(lb.into_iter());
    let keys: std::collections::BTreeSet<u32> = fa.keys().chain(fb.keys()).copied().collect();
    let mut per_loc = Vec::new();
    let mut weighted_ks = 0.0;
    for loc in keys {
        let xa: Vec<f64> = a.iter().filter(|s| s.0 == loc).map(|s| s.1).collect();
        let xb: Vec<f64> = b.iter().filter(|s| s.0 == loc).map(|s| s.1).collect();
        let weight = 0.5 * (fa.get(&loc).unwrap_or(&0.0) + fb.get(&loc).unwrap_or(&0.0));
        let (ks, w1) = if xa.is_empty() || xb.is_empty() { (None, None) } else { (Some(ks_two_sample(&xa, &xb)?), Some(wasserstein1(&xa, &xb)?)) };
        weighted_ks += weight * ks.map_or(1.0, |k| k.statistic);
        per_loc.push(LocDistance { loc, weight, count_a: xa.len(), count_b: xb.len(), ks, w1 });
    }
    Ok(GraphDistance { tv, per_loc, weighted_ks, combined: tv.max(weighted_ks) })
}

/// Pearson χ² statistic and upper-tail p-value with `observed.len() − 1 − fitted` degrees of freedom.
pub fn chi2_test(observed: &[f64], expected: &[f64], fitted: usize) -> (f64, f64) {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (observed.len() - 1 - fitted) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);
    (stat, p)
}

/// Binomial `k`-sigma check for an observed frequency against probability `p` over `n` trials.
pub fn within_binomial(freq: f64, p: f64, n: usize, k: f64) -> bool {
    (freq - p).abs() <= k * (p * (1.0 - p) / n as f64).sqrt() + 1e-15
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

pub fn summarize(a: &[f64]) -> Result<Summary> {
    let s = sorted(a)?;
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let q = |p: f64| s[((p * (n - 1) as f64).round() as usize).min(n - 1)];
    Ok(Summary { n, mean, stderr: (var / n as f64).sqrt(), q10: q(0.1), q50: q(0.5), q90: q(0.9) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, uniform};

    fn uniforms(seed: u64, n: usize, shift: f64, scale: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::tag::MONTE_CARLO, 0);
        (0..n).map(|_| shift + scale * uniform(&mut r)).collect()
    }

    #[test]
    fn ks_identical_is_zero() {
        let a = uniforms(1, 1000, 0.0, 1.0);
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ks_shifted_uniforms() {
        let a = uniforms(1, 200_000, 0.0, 1.0);
        let b = uniforms(2, 200_000, 0.5, 1.0);
        assert!((ks_two_sample(&a, &b).unwrap().statistic - 0.5).abs() < 0.01);
    }

    #[test]
    fn ks_calibration() {
        let mut rejections = 0;
        for rep in 0..200u64 {
            let a = uniforms(100 + 2 * rep, 10_000, 0.0, 1.0);
            let b = uniforms(101 + 2 * rep, 10_000, 0.0, 1.0);
            if !ks_two_sample(&a, &b).unwrap().passes() {
                rejections += 1;
            }
        }
        assert!(rejections <= 6, "{rejections} rejections in 200");
    }

    #[test]
    fn w1_oracles() {
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        let a = uniforms(3, 200_000, 0.0, 1.0);
        let b = uniforms(4, 200_000, 0.0, 2.0);
        assert!((wasserstein1(&a, &b).unwrap() - 0.5).abs() < 0.01);
        assert!(matches!(wasserstein1(&[], &[1.0]), Err(Error::EmptyLaw)));
    }

    #[test]
    fn graph_distance_symmetric() {
        let a: Vec<(u32, f64)> = uniforms(5, 500, 0.0, 1.0).into_iter().enumerate().map(|(i, x)| ((i % 3) as u32, x)).collect();
        let b: Vec<(u32, f64)> = uniforms(6, 700, 0.0, 1.0).into_iter().enumerate().map(|(i, x)| ((i % 2) as u32, x)).collect();
        let d1 = graph_distance(&a, &b).unwrap();
        let d2 = graph_distance(&b, &a).unwrap();
        assert_eq!(d1.combined, d2.combined);
        assert!((d1.tv - 1.0 / 3.0).abs() < 0.01);
        assert_eq!(graph_distance(&a, &a).unwrap().combined, 0.0);
    }

    #[test]
    fn chi2_p_value() {
        let (s, p) = chi2_test(&[10.0, 10.0], &[10.0, 10.0], 0);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi2_test(&[30.0, 10.0], &[20.0, 20.0], 0);
        assert!(p < 0.01);
    }
}
