//! Goodness-of-fit and trend tests used by the suites.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Normal, Poisson};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn sorted(data: &[f64]) -> Result<Vec<f64>> {
    if data.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("NaN in sample".into()));
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample KS distance to a continuous CDF, with the Stephens-corrected
/// asymptotic p-value.
pub fn ks_one_sample(data: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if data.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let v = sorted(data)?;
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d) })
}

/// Two-sample KS distance sup |F_a − F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let (x, y) = (sorted(a)?, sorted(b)?);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
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
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Pearson statistic against expected counts; `ddof` parameters were fitted.
pub fn chi_square(observed: &[f64], expected: &[f64], ddof: usize) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::Domain("observed and expected differ in length".into()));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Domain("expected counts must be positive".into()));
    }
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let bins = observed.len();
    if bins <= 1 + ddof {
        return Err(Error::Underpowered(format!("{bins} bins leave no degrees of freedom")));
    }
    let df = bins - 1 - ddof;
    let p = ChiSquared::new(df as f64).map_err(|e| Error::Numerical(e.to_string()))?.sf(stat);
    Ok(ChiSquareResult { statistic: stat, df, p_value: p, bins })
}

/// Merges adjacent bins, scanning from the right, until each expected count
/// reaches `min_expected`.
pub fn merge_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    let mut o_out: Vec<f64> = Vec::new();
    let mut e_out: Vec<f64> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected).rev() {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            o_out.push(o_acc);
            e_out.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match (o_out.last_mut(), e_out.last_mut()) {
            (Some(o), Some(e)) => {
                *o += o_acc;
                *e += e_acc;
            }
            _ => {
                o_out.push(o_acc);
                e_out.push(e_acc);
            }
        }
    }
    o_out.reverse();
    e_out.reverse();
    (o_out, e_out)
}

/// Chi-square test that `counts` are i.i.d. Poisson(μ) with μ known.
pub fn poisson_gof(counts: &[u64], mu: f64) -> Result<ChiSquareResult> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("Poisson mean {mu}")));
    }
    let n = counts.len() as f64;
    let kmax = counts.iter().copied().max().unwrap_or(0).max((mu + 10.0 * mu.sqrt() + 10.0) as u64);
    let pois = Poisson::new(mu).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut obs = vec![0.0; kmax as usize + 1];
    for &c in counts {
        obs[c as usize] += 1.0;
    }
    let mut exp: Vec<f64> = (0..=kmax).map(|k| n * pois.pmf(k)).collect();
    // The last bin collects the whole upper tail.
    *exp.last_mut().unwrap() = n * pois.sf(kmax - 1);
    let (o, e) = merge_bins(&obs, &exp, 5.0);
    chi_square(&o, &e, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trend {
    Increasing,
    Decreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub s: f64,
    pub var_s: f64,
    pub z: f64,
    /// One-sided p-value for the requested direction.
    pub p_value: f64,
    /// Every value identical: no ordering information at all.
    pub degenerate: bool,
}

/// Mann–Kendall S between the group index and the values, over all pairs of
/// observations in different groups; ties in both the values and the group
/// index enter the variance.
pub fn mann_kendall_groups(groups: &[Vec<f64>], direction: Trend) -> Result<MannKendall> {
    if groups.len() < 2 {
        return Err(Error::Domain("trend test needs at least two groups".into()));
    }
    let mut obs: Vec<(usize, f64)> = Vec::new();
    for (g, v) in groups.iter().enumerate() {
        for &x in v {
            if x.is_nan() {
                return Err(Error::Domain("NaN in trend data".into()));
            }
            obs.push((g, x));
        }
    }
    let n = obs.len();
    if n < 3 {
        return Err(Error::Underpowered(format!("{n} observations")));
    }
    // S through sorting by value: count concordant minus discordant pairs.
    let mut s = 0.0f64;
    for (i, &(gi, xi)) in obs.iter().enumerate() {
        for &(gj, xj) in &obs[i + 1..] {
            if gi == gj || xi == xj {
                continue;
            }
            let dg = if gj > gi { 1.0 } else { -1.0 };
            let dx = if xj > xi { 1.0 } else { -1.0 };
            s += dg * dx;
        }
    }
    let nf = n as f64;
    let mut vals: Vec<f64> = obs.iter().map(|o| o.1).collect();
    vals.sort_by(f64::total_cmp);
    let mut u: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && vals[j] == vals[i] {
            j += 1;
        }
        u.push((j - i) as f64);
        i = j;
    }
    let v: Vec<f64> = groups.iter().map(|g| g.len() as f64).filter(|&x| x > 0.0).collect();
    let degenerate = u.len() == 1;
    let a = |w: &[f64]| w.iter().map(|x| x * (x - 1.0) * (2.0 * x + 5.0)).sum::<f64>();
    let b = |w: &[f64]| w.iter().map(|x| x * (x - 1.0) * (x - 2.0)).sum::<f64>();
    let c = |w: &[f64]| w.iter().map(|x| x * (x - 1.0)).sum::<f64>();
    let mut var_s = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - a(&u) - a(&v)) / 18.0;
    if n > 2 {
        var_s += b(&u) * b(&v) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    var_s += c(&u) * c(&v) / (2.0 * nf * (nf - 1.0));
    if degenerate || !(var_s > 0.0) {
        return Ok(MannKendall { s, var_s: 0.0, z: 0.0, p_value: 1.0, degenerate: true });
    }
    let z = if s > 0.0 {
        (s - 1.0) / var_s.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var_s.sqrt()
    } else {
        0.0
    };
    let norm = Normal::new(0.0, 1.0).unwrap();
    let p_value = match direction {
        Trend::Increasing => norm.sf(z),
        Trend::Decreasing => norm.cdf(z),
    };
    Ok(MannKendall { s, var_s, z, p_value, degenerate })
}

pub fn median(data: &[f64]) -> Option<f64> {
    let v = sorted(data).ok()?;
    let n = v.len();
    if n == 0 {
        return None;
    }
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn quantile(data: &[f64], p: f64) -> Option<f64> {
    let v = sorted(data).ok()?;
    if v.is_empty() {
        return None;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Distribution-free confidence interval for the median from binomial order
/// statistics; coverage ≥ `level`.
pub fn median_ci(data: &[f64], level: f64) -> Option<(f64, f64)> {
    let v = sorted(data).ok()?;
    let n = v.len();
    if n < 6 {
        return None;
    }
    let bin = Binomial::new(0.5, n as u64).ok()?;
    let alpha = 1.0 - level;
    // Largest k with P(Bin ≤ k − 1) ≤ α/2; interval [x_(k), x_(n+1−k)].
    let mut k = 0u64;
    while k < n as u64 / 2 && bin.cdf(k) <= alpha / 2.0 {
        k += 1;
    }
    if k == 0 {
        return Some((v[0], v[n - 1]));
    }
    Some((v[(k - 1) as usize], v[n - k as usize]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and unbiased variance by Welford updates.
pub fn moments(data: &[f64]) -> Option<Moments> {
    if data.len() < 2 {
        return None;
    }
    let (mut m, mut s) = (0.0, 0.0);
    for (i, &x) in data.iter().enumerate() {
        let d = x - m;
        m += d / (i + 1) as f64;
        s += d * (x - m);
    }
    Some(Moments { mean: m, variance: s / (data.len() - 1) as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_samples() {
        let a = [0.3, 1.2, -0.5, 2.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn ks_uniform_grid() {
        let n = 100;
        let data: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let r = ks_one_sample(&data, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((r.statistic - 0.005).abs() < 1e-12);
        assert!(r.p_value > 0.999);
    }

    #[test]
    fn chi_square_exact_expectation() {
        let e = [10.0, 20.0, 30.0];
        let r = chi_square(&e, &e, 0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_known_value() {
        // Q(1) = 0.2699996716735...
        assert!((kolmogorov_sf(1.0) - 0.26999967167735456).abs() < 1e-12);
    }

    #[test]
    fn mann_kendall_small_series() {
        let g: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let r = mann_kendall_groups(&g, Trend::Increasing).unwrap();
        assert_eq!(r.s, 45.0);
        // n = 10 without ties: Var S = n(n−1)(2n+5)/18 = 125.
        assert!((r.var_s - 125.0).abs() < 1e-9);
        assert!(r.p_value < 1e-4);
        let flat = vec![vec![0.0; 5], vec![0.0; 5]];
        assert!(mann_kendall_groups(&flat, Trend::Decreasing).unwrap().degenerate);
    }

    #[test]
    fn bin_merging() {
        let (o, e) = merge_bins(&[1.0, 2.0, 3.0, 1.0], &[6.0, 4.0, 3.0, 1.0], 5.0);
        assert_eq!(e, vec![6.0, 8.0]);
        assert_eq!(o, vec![1.0, 6.0]);
    }

    #[test]
    fn median_interval_contains_median() {
        let d: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let (lo, hi) = median_ci(&d, 0.95).unwrap();
        assert!(lo < 50.0 && hi > 50.0);
        assert_eq!(median(&d), Some(50.0));
    }
}
