//! Goodness-of-fit and dependence tests shared by the test suites.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// One statistical check, serialized into JSON reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

impl TestReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64, name: &str) -> TestReport {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    TestReport {
        test: name.to_string(),
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
        sample_size: x.len(),
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64], name: &str) -> TestReport {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    TestReport {
        test: name.to_string(),
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
        sample_size: n + m,
    }
}

/// Pearson chi-square test of observed counts against expected counts.
pub fn chi_square_gof(observed: &[f64], expected: &[f64], name: &str) -> Result<TestReport> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return invalid("chi-square needs matching bins (at least two)");
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let df = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("df > 0").cdf(stat);
    Ok(TestReport {
        test: name.to_string(),
        statistic: stat,
        p_value: p,
        sample_size: observed.iter().sum::<f64>() as usize,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy-distance two-sample test with a permutation p-value.
pub fn energy_test(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, rng: &mut Rng, name: &str) -> Result<TestReport> {
    let (n, m) = (x.len(), y.len());
    if n < 2 || m < 2 {
        return invalid("energy test needs at least two samples per group");
    }
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y.iter()).collect();
    let t = n + m;
    let mut dist = vec![0.0; t * t];
    for i in 0..t {
        for j in i + 1..t {
            let d = euclid(pooled[i], pooled[j]);
            dist[i * t + j] = d;
            dist[j * t + i] = d;
        }
    }
    let stat = |idx: &[usize]| -> f64 {
        let (a, b) = idx.split_at(n);
        let mut xy = 0.0;
        for &i in a {
            for &j in b {
                xy += dist[i * t + j];
            }
        }
        let mut xx = 0.0;
        for (p, &i) in a.iter().enumerate() {
            for &j in &a[p + 1..] {
                xx += dist[i * t + j];
            }
        }
        let mut yy = 0.0;
        for (p, &i) in b.iter().enumerate() {
            for &j in &b[p + 1..] {
                yy += dist[i * t + j];
            }
        }
        let (nf, mf) = (n as f64, m as f64);
        let e = 2.0 * xy / (nf * mf) - 2.0 * xx / (nf * nf) - 2.0 * yy / (mf * mf);
        nf * mf / (nf + mf) * e
    };
    let mut idx: Vec<usize> = (0..t).collect();
    let observed = stat(&idx);
    let mut exceed = 0;
    for _ in 0..permutations {
        idx.shuffle(rng);
        if stat(&idx) >= observed {
            exceed += 1;
        }
    }
    Ok(TestReport {
        test: name.to_string(),
        statistic: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        sample_size: t,
    })
}

fn row_sums(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut r = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (x[i] - x[j]).abs();
            r[i] += d;
            r[j] += d;
        }
    }
    let tot = r.iter().sum();
    (r, tot)
}

fn u_inner(x: &[f64], y: &[f64], rx: &(Vec<f64>, f64), ry: &(Vec<f64>, f64)) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let mut s1 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s1 += (x[i] - x[j]).abs() * (y[i] - y[j]).abs();
        }
    }
    s1 *= 2.0;
    let s2: f64 = rx.0.iter().zip(&ry.0).map(|(a, b)| a * b).sum();
    let s3 = rx.1 * ry.1;
    (s1 - 2.0 * s2 / (nf - 2.0) + s3 / ((nf - 1.0) * (nf - 2.0))) / (nf * (nf - 3.0))
}

/// Bias-corrected distance correlation (U-centered), near 0 for
/// independent samples and 1 for a variable against itself.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 4 {
        return invalid("distance correlation needs paired samples, n >= 4");
    }
    let rx = row_sums(x);
    let ry = row_sums(y);
    let vx = u_inner(x, x, &rx, &rx);
    let vy = u_inner(y, y, &ry, &ry);
    let cxy = u_inner(x, y, &rx, &ry);
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    Ok(cxy / (vx * vy).sqrt())
}

/// Distance correlation for many variables at once; `cols[v]` holds variable v.
pub fn distance_correlation_matrix(cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = cols.len();
    let sums: Vec<_> = cols.iter().map(|c| row_sums(c)).collect();
    let vars: Vec<f64> = (0..k).map(|v| u_inner(&cols[v], &cols[v], &sums[v], &sums[v])).collect();
    let mut out = vec![vec![1.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let c = u_inner(&cols[a], &cols[b], &sums[a], &sums[b]);
            let r = if vars[a] > 0.0 && vars[b] > 0.0 { c / (vars[a] * vars[b]).sqrt() } else { 0.0 };
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    Ok(out)
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Mean and standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Ordinary least-squares slope and intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Empirical quantile with linear interpolation on sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn kolmogorov_reference_values() {
        // classical critical values: P(K > 1.36) ~ 0.05, P(K > 1.63) ~ 0.01
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_detects_shift() {
        let mut r = seeded(3);
        let a: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal) + 0.3).collect();
        assert!(ks_two_sample(&a, &b, "shift").p_value < 1e-6);
        let c: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &c, "same").p_value > 0.001);
    }

    #[test]
    fn dcor_self_and_independent() {
        let mut r = seeded(4);
        let x: Vec<f64> = (0..1500).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..1500).map(|_| r.random::<f64>()).collect();
        assert!((distance_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        assert!(distance_correlation(&x, &y).unwrap().abs() < 0.02);
        let z: Vec<f64> = x.iter().map(|v| (v - 0.5).powi(2)).collect();
        assert!(distance_correlation(&x, &z).unwrap() > 0.2);
    }

    #[test]
    fn simpson_integrates() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
    }
}
