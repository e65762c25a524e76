//! Exact path contributions to the Feynman–Kac representation and a brute
//! force path-sum solver for tiny lattices.
//!
//! The contribution of a geometric path y = (y₀, …, y_ℓ) is
//! U(t, y) = e^{−2t} I_ℓ(t; ξ(y₀), …, ξ(y_ℓ)), where I_n is the divided
//! difference of s ↦ e^{ts} over the nodes. It is read off the matrix
//! exponential of an upper bidiagonal matrix.

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::model::Potential;
use crate::solver::LogSum;

/// log I_n(t; c₀, …, c_n).
///
/// exp(tJ) for J = bidiag(c; 1) carries the divided differences of e^{ts} in
/// its first row. After shifting by min c and a diagonal similarity the
/// matrix is entrywise non-negative, so Taylor terms and squarings never
/// cancel and clustered or repeated nodes need no special treatment.
pub fn simplex_integral(t: f64, c: &[f64]) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t = {t}")));
    }
    if c.is_empty() {
        return Err(Error::Domain("at least one node is required".into()));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("nodes must be finite".into()));
    }
    let m = c.len();
    let n = m - 1;
    let cmin = c.iter().cloned().fold(f64::INFINITY, f64::min);
    if n == 0 {
        return Ok(t * c[0]);
    }
    // B = D⁻¹ t(J − c_min) D with D = diag(t^{−i}): diagonal t(c_i − c_min), superdiagonal 1.
    let diag: Vec<f64> = c.iter().map(|x| t * (x - cmin)).collect();
    let norm = diag.iter().cloned().fold(0.0, f64::max) + 1.0;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let tau = 0.5f64.powi(s);
    let mut e = triangular_taylor(&diag, tau, m);
    let mut log_scale = 0.0f64;
    for _ in 0..s {
        e = triangular_square(&e, m);
        let mx = e.iter().cloned().fold(0.0, f64::max);
        if !(mx > 0.0) || !mx.is_finite() {
            return Err(Error::Numerical("simplex integral overflow".into()));
        }
        for v in e.iter_mut() {
            *v /= mx;
        }
        log_scale = 2.0 * log_scale + mx.ln();
    }
    let top = e[n];
    if !(top > 0.0) {
        return Err(Error::Numerical(format!("simplex integral underflow at n = {n}")));
    }
    Ok(t * cmin + n as f64 * t.ln() + log_scale + top.ln())
}

/// Taylor series of exp(τB) for B = diag(d) + superdiagonal ones, row-major
/// m×m, upper triangle only.
fn triangular_taylor(d: &[f64], tau: f64, m: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; m * m];
    let mut term = vec![0.0f64; m * m];
    for i in 0..m {
        acc[i * m + i] = 1.0;
        term[i * m + i] = 1.0;
    }
    for k in 1..80 {
        let f = tau / k as f64;
        let mut next = vec![0.0f64; m * m];
        for i in 0..m {
            for j in i..m {
                // (term·B)_{ij} = term_{ij} d_j + term_{i,j−1}
                let mut v = term[i * m + j] * d[j];
                if j > i {
                    v += term[i * m + j - 1];
                }
                next[i * m + j] = v * f;
            }
        }
        let mut done = k >= m;
        for (a, &v) in acc.iter_mut().zip(&next) {
            if v > 1e-18 * *a {
                done = false;
            }
            *a += v;
        }
        term = next;
        if done {
            break;
        }
    }
    acc
}

fn triangular_square(a: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * m];
    for i in 0..m {
        for k in i..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for j in k..m {
                out[i * m + j] += aik * a[k * m + j];
            }
        }
    }
    out
}

/// Nearest-neighbour path y₀ → … → y_ℓ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometricPath {
    pub sites: Vec<i64>,
}

impl GeometricPath {
    pub fn new(sites: Vec<i64>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Domain("empty path".into()));
        }
        if sites.windows(2).any(|w| (w[1] - w[0]).abs() != 1) {
            return Err(Error::Domain("path steps must be ±1".into()));
        }
        Ok(GeometricPath { sites })
    }

    /// Path from 0 following a step string of '+' and '-'.
    pub fn from_steps(steps: &str) -> Result<Self> {
        let mut sites = vec![0i64];
        for ch in steps.chars() {
            let last = *sites.last().unwrap();
            match ch {
                '+' => sites.push(last + 1),
                '-' => sites.push(last - 1),
                _ => return Err(Error::Format(format!("bad step character {ch:?}"))),
            }
        }
        Ok(GeometricPath { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> String {
        self.sites.windows(2).map(|w| if w[1] > w[0] { '+' } else { '-' }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathContribution {
    pub path: GeometricPath,
    /// log U(t, y).
    pub log_value: f64,
    /// Spread max ξ − min ξ along the path.
    pub node_spread: f64,
}

pub fn path_contribution(field: &dyn Potential, t: f64, path: &GeometricPath) -> Result<PathContribution> {
    let w = field.window();
    if let Some(&z) = path.sites.iter().find(|z| z.unsigned_abs() > w) {
        return Err(Error::OutOfWindow { site: z, window: w });
    }
    let c: Vec<f64> = path.sites.iter().map(|&z| field.xi(z)).collect();
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(PathContribution { path: path.clone(), log_value: -2.0 * t + simplex_integral(t, &c)?, node_spread: hi - lo })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSumOptions {
    pub cap: u128,
}

impl Default for PathSumOptions {
    fn default() -> Self {
        PathSumOptions { cap: 10_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSum {
    pub target: i64,
    pub max_len: usize,
    pub paths: u128,
    /// log of the sum over all enumerated paths.
    pub log_u_lower: f64,
    /// Upper bound on the omitted mass, e^{tξ_max}·P(Poisson(2t) > max_len).
    pub tail_bound: f64,
    pub log_tail_bound: f64,
}

/// Number of paths 0 → target of length ≤ max_len inside [−w, w].
pub fn count_paths(window: u64, target: i64, max_len: usize) -> u128 {
    let w = window as i64;
    let n = (2 * w + 1) as usize;
    let mut cur = vec![0u128; n];
    cur[w as usize] = 1;
    let mut total = if target == 0 { 1u128 } else { 0 };
    for _ in 0..max_len {
        let mut next = vec![0u128; n];
        for i in 0..n {
            if cur[i] == 0 {
                continue;
            }
            if i > 0 {
                next[i - 1] = next[i - 1].saturating_add(cur[i]);
            }
            if i + 1 < n {
                next[i + 1] = next[i + 1].saturating_add(cur[i]);
            }
        }
        cur = next;
        total = total.saturating_add(cur[(target + w) as usize]);
    }
    total
}

/// Sums the contributions of every path 0 → target of length ≤ max_len that
/// stays in the field window (the absorbing lattice of the dense oracle).
/// `visit` sees each path and its log contribution in enumeration order.
pub fn truncated_path_sum_with(
    field: &dyn Potential,
    t: f64,
    target: i64,
    max_len: usize,
    opts: &PathSumOptions,
    visit: &mut dyn FnMut(&[i64], f64),
) -> Result<PathSum> {
    let w = field.window();
    if target.unsigned_abs() > w {
        return Err(Error::OutOfWindow { site: target, window: w });
    }
    if (max_len as u64) < target.unsigned_abs() {
        return Err(Error::Precondition(format!("max_len {max_len} < |target| {}", target.abs())));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t = {t}")));
    }
    let count = count_paths(w, target, max_len);
    if count > opts.cap {
        return Err(Error::EnumerationCap { count, cap: opts.cap });
    }
    let wi = w as i64;
    let xi: Vec<f64> = (-wi..=wi).map(|z| field.xi(z)).collect();
    let mut acc = LogSum::default();
    let mut sites = vec![0i64];
    let mut nodes = vec![xi[wi as usize]];
    let mut err: Option<Error> = None;
    // Depth-first, '−' before '+', so the order is fixed.
    fn rec(
        t: f64,
        target: i64,
        max_len: usize,
        wi: i64,
        xi: &[f64],
        sites: &mut Vec<i64>,
        nodes: &mut Vec<f64>,
        acc: &mut LogSum,
        visit: &mut dyn FnMut(&[i64], f64),
        err: &mut Option<Error>,
    ) {
        if err.is_some() {
            return;
        }
        let here = *sites.last().unwrap();
        if here == target {
            match simplex_integral(t, nodes) {
                Ok(v) => {
                    let lv = v - 2.0 * t;
                    acc.add(lv);
                    visit(sites, lv);
                }
                Err(e) => {
                    *err = Some(e);
                    return;
                }
            }
        }
        let used = sites.len() - 1;
        if used == max_len {
            return;
        }
        for step in [-1i64, 1] {
            let next = here + step;
            if next.abs() > wi || ((next - target).unsigned_abs() as usize) > max_len - used - 1 {
                continue;
            }
            sites.push(next);
            nodes.push(xi[(next + wi) as usize]);
            rec(t, target, max_len, wi, xi, sites, nodes, acc, visit, err);
            sites.pop();
            nodes.pop();
        }
    }
    rec(t, target, max_len, wi, &xi, &mut sites, &mut nodes, &mut acc, visit, &mut err);
    if let Some(e) = err {
        return Err(e);
    }
    let xmax = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_tail = t * xmax + poisson_log_sf(2.0 * t, max_len as u64);
    Ok(PathSum {
        target,
        max_len,
        paths: count,
        log_u_lower: acc.value(),
        tail_bound: log_tail.exp(),
        log_tail_bound: log_tail,
    })
}

pub fn truncated_path_sum(field: &dyn Potential, t: f64, target: i64, max_len: usize) -> Result<PathSum> {
    truncated_path_sum_with(field, t, target, max_len, &PathSumOptions::default(), &mut |_, _| {})
}

/// log P(Poisson(m) > k), summed directly in the far tail where the CDF
/// complement would round to zero.
fn poisson_log_sf(m: f64, k: u64) -> f64 {
    let sf = Poisson::new(m).map(|p| p.sf(k)).unwrap_or(0.0);
    if sf > 1e-250 {
        return sf.ln();
    }
    // Σ_{j>k} e^{−m} m^j / j!, terms decreasing once j > m.
    let mut acc = LogSum::default();
    let mut lt = -m + (k + 1) as f64 * m.ln() - ln_factorial(k + 1);
    for j in (k + 1)..(k + 2000) {
        acc.add(lt);
        lt += m.ln() - ((j + 1) as f64).ln();
        if lt < acc.value() - 40.0 {
            break;
        }
    }
    acc.value()
}

fn ln_factorial(n: u64) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_and_linear_case() {
        assert!((simplex_integral(2.0, &[1.5]).unwrap() - 3.0).abs() < 1e-15);
        let v = simplex_integral(1.0, &[1.0, 0.0]).unwrap().exp();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn confluent_nodes() {
        for n in 0..8usize {
            let c = vec![0.7; n + 1];
            let got = simplex_integral(3.0, &c).unwrap();
            let want = 0.7 * 3.0 + n as f64 * 3f64.ln() - ln_factorial(n as u64);
            assert!((got - want).abs() < 1e-12, "n={n} {got} {want}");
        }
    }

    #[test]
    fn path_counts() {
        assert_eq!(count_paths(3, 0, 0), 1);
        assert_eq!(count_paths(3, 0, 2), 3);
        assert_eq!(count_paths(1, 1, 3), 1 + 2);
    }

    #[test]
    fn poisson_tail_far() {
        let direct = Poisson::new(2.0).unwrap().sf(10).ln();
        assert!((poisson_log_sf(2.0, 10) - direct).abs() < 1e-12);
        let far = poisson_log_sf(0.5, 200);
        assert!(far.is_finite() && far < -700.0);
    }
}
