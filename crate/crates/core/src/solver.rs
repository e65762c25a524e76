//! Time integration of ∂_t u = Δu + ξu on [−L, L] with absorbing boundary and
//! u(0, ·) = δ₀, plus a dense matrix-exponential oracle for small windows.
//!
//! The solver state is ℓ(z) = log u(t, z); the normalised profile v and the log
//! total mass are read off by log-sum-exp. In these coordinates
//! dℓ(z)/dt = e^{ℓ(z+1)−ℓ(z)} + e^{ℓ(z−1)−ℓ(z)} − 2 + ξ(z),
//! which stays representable when u itself spans thousands of orders of
//! magnitude. Integration is linearly implicit Euler with a tridiagonal
//! Jacobian, extrapolated in the step size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localisation::LocalisationSites;
use crate::model::Potential;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionState {
    pub t: f64,
    pub log_mass: f64,
    /// Half-width of the solve window; entry i is z = i − window.
    pub window: u64,
    /// log v(z), v = u/U.
    pub log_v: Vec<f64>,
    pub steps: u64,
    pub rejected: u64,
    pub max_err_est: f64,
    /// Largest boundary loss rate seen so far, as a fraction of current mass per unit time.
    pub leakage: f64,
    pub leakage_warning: bool,
}

impl SolutionState {
    pub fn idx(&self, z: i64) -> Option<usize> {
        (z.unsigned_abs() <= self.window).then(|| (z + self.window as i64) as usize)
    }

    pub fn log_v_at(&self, z: i64) -> f64 {
        self.idx(z).map(|i| self.log_v[i]).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn v_at(&self, z: i64) -> f64 {
        self.log_v_at(z).exp()
    }

    pub fn v(&self) -> Vec<f64> {
        self.log_v.iter().map(|x| x.exp()).collect()
    }

    fn from_log_u(t: f64, window: u64, log_u: &[f64]) -> Self {
        let lm = log_sum_exp(log_u);
        SolutionState {
            t,
            log_mass: lm,
            window,
            log_v: log_u.iter().map(|x| x - lm).collect(),
            steps: 0,
            rejected: 0,
            max_err_est: 0.0,
            leakage: 0.0,
            leakage_warning: false,
        }
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-space accumulator for sums of positive terms.
#[derive(Clone, Copy, Debug)]
pub struct LogSum {
    max: f64,
    acc: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        LogSum { max: f64::NEG_INFINITY, acc: 0.0 }
    }
}

impl LogSum {
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.acc = self.acc * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.acc += (x - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            self.max
        } else {
            self.max + self.acc.ln()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Local error tolerance on log u, i.e. relative tolerance on u.
    pub tol: f64,
    pub leak_limit: f64,
    pub max_steps: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, leak_limit: 1e-6, max_steps: 5_000_000 }
    }
}

/// Window values [ξ(−L), …, ξ(L)] of a potential.
pub fn window_values(field: &dyn Potential, l: u64) -> Result<Vec<f64>> {
    if l > field.window() {
        return Err(Error::InsufficientWindow { window: field.window(), radius: l });
    }
    Ok((-(l as i64)..=l as i64).map(|z| field.xi(z)).collect())
}

pub fn solve_pam(field: &dyn Potential, t_grid: &[f64], l_solve: u64) -> Result<Vec<SolutionState>> {
    solve_values(&window_values(field, l_solve)?, t_grid, &SolveOptions::default())
}

/// Solves on the window described by `xi` (length 2L+1, centred on 0).
pub fn solve_values(xi: &[f64], t_grid: &[f64], opts: &SolveOptions) -> Result<Vec<SolutionState>> {
    if xi.len() % 2 != 1 {
        return Err(Error::Domain("window values must have odd length".into()));
    }
    if t_grid.is_empty() || !(t_grid[0] > 0.0) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("t_grid must be positive and strictly increasing".into()));
    }
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite potential".into()));
    }
    let n = xi.len();
    let l = (n / 2) as u64;
    let xmax = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let xmin = xi.iter().cloned().fold(f64::INFINITY, f64::min);
    let t0 = (0.25 / (xmax.abs().max(xmin.abs()) + 4.0)).min(t_grid[0] * 0.5).min(1e-2);
    let mut y = taylor_start(xi, t0);
    let mut integ = Extrapolator::new(xi, opts.tol);
    let mut t = t0;
    let mut h = t0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut leakage = boundary_leak(&y);
    let mut steps = 0u64;
    let mut rejected = 0u64;
    let mut max_err = 0.0f64;
    for &target in t_grid {
        while t < target {
            if steps + rejected >= opts.max_steps {
                return Err(Error::Numerical(format!("step budget exhausted at t={t}")));
            }
            let hh = h.min(target - t);
            let last = hh >= target - t;
            match integ.step(&y, hh) {
                Some((y_new, err, h_next)) => {
                    y = y_new;
                    t = if last { target } else { t + hh };
                    steps += 1;
                    max_err = max_err.max(err * opts.tol);
                    leakage = leakage.max(boundary_leak(&y));
                    if !last || h_next < h {
                        h = h_next;
                    }
                }
                None => {
                    rejected += 1;
                    h = hh * 0.25;
                }
            }
            if h < 1e-14 * t.max(1.0) {
                return Err(Error::Stiffness { t, h });
            }
        }
        let mut s = SolutionState::from_log_u(target, l, &y);
        s.steps = steps;
        s.rejected = rejected;
        s.max_err_est = max_err;
        s.leakage = leakage;
        s.leakage_warning = leakage > opts.leak_limit;
        out.push(s);
    }
    Ok(out)
}

/// Loss rate through the absorbing sites ±(L+1), relative to current mass.
fn boundary_leak(y: &[f64]) -> f64 {
    if y.len() == 1 {
        // Both neighbours of the single site are absorbing.
        return 2.0;
    }
    let lm = log_sum_exp(y);
    (y[0] - lm).exp() + (y[y.len() - 1] - lm).exp()
}

/// log u(t0, ·) from the exponential series, scaled by t0^d/d! per site so that
/// every site with d = |z| is computed to full relative precision.
fn taylor_start(xi: &[f64], t0: f64) -> Vec<f64> {
    let n = xi.len();
    let l = n / 2;
    let dist = |i: usize| (i as i64 - l as i64).unsigned_abs() as usize;
    let mut c = vec![0.0f64; n];
    let mut total = vec![0.0f64; n];
    c[l] = 1.0;
    total[l] = 1.0;
    let mut next = vec![0.0f64; n];
    let mut k = 0usize;
    loop {
        let reach = (k + 1).min(l);
        let mut biggest = 0.0f64;
        for i in (l - reach)..=(l + reach) {
            let d = dist(i);
            let mut acc = (xi[i] - 2.0) * c[i];
            for j in [i.wrapping_sub(1), i + 1] {
                if j >= n {
                    continue;
                }
                let dj = dist(j);
                let ratio = if dj + 1 == d { d as f64 / t0 } else { t0 / (d + 1) as f64 };
                acc += ratio * c[j];
            }
            next[i] = acc * t0 / (k + 1) as f64;
        }
        for i in (l - reach)..=(l + reach) {
            c[i] = next[i];
            total[i] += c[i];
            if total[i] != 0.0 {
                biggest = biggest.max((c[i] / total[i]).abs());
            }
        }
        k += 1;
        if k > l + 2 && biggest < 1e-18 {
            break;
        }
    }
    let mut log_fact = vec![0.0f64; l + 1];
    for d in 1..=l {
        log_fact[d] = log_fact[d - 1] + (d as f64).ln();
    }
    (0..n)
        .map(|i| {
            let d = dist(i);
            d as f64 * t0.ln() - log_fact[d] + total[i].ln()
        })
        .collect()
}

/// Row-scaled exponential of neighbour differences: (e^{ℓ_{i−1}−ℓ_i}, e^{ℓ_{i+1}−ℓ_i}).
fn neighbour_ratios(y: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = y.len();
    for i in 0..n {
        lo[i] = if i > 0 { (y[i - 1] - y[i]).min(700.0).exp() } else { 0.0 };
        hi[i] = if i + 1 < n { (y[i + 1] - y[i]).min(700.0).exp() } else { 0.0 };
    }
}

struct Extrapolator<'a> {
    xi: &'a [f64],
    tol: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    jd: Vec<f64>,
    jl: Vec<f64>,
    ju: Vec<f64>,
    f: Vec<f64>,
    cp: Vec<f64>,
    dp: Vec<f64>,
    table: Vec<Vec<f64>>,
    k_target: usize,
}

const SEQ: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
const K_MAX: usize = 8;

impl<'a> Extrapolator<'a> {
    fn new(xi: &'a [f64], tol: f64) -> Self {
        let n = xi.len();
        Extrapolator {
            xi,
            tol,
            lo: vec![0.0; n],
            hi: vec![0.0; n],
            jd: vec![0.0; n],
            jl: vec![0.0; n],
            ju: vec![0.0; n],
            f: vec![0.0; n],
            cp: vec![0.0; n],
            dp: vec![0.0; n],
            table: vec![vec![0.0; n]; K_MAX],
            k_target: 5,
        }
    }

    fn rhs(&mut self, y: &[f64]) {
        neighbour_ratios(y, &mut self.lo, &mut self.hi);
        for i in 0..y.len() {
            self.f[i] = self.lo[i] + self.hi[i] - 2.0 + self.xi[i];
        }
    }

    /// Solves (I − hJ)x = b in place for the frozen Jacobian.
    fn solve_tri(&mut self, h: f64, b: &mut [f64]) {
        let n = b.len();
        let diag = |i: usize, s: &Self| 1.0 - h * s.jd[i];
        let mut denom = diag(0, self);
        self.cp[0] = if n > 1 { -h * self.ju[0] / denom } else { 0.0 };
        self.dp[0] = b[0] / denom;
        for i in 1..n {
            let a = -h * self.jl[i];
            denom = diag(i, self) - a * self.cp[i - 1];
            self.cp[i] = if i + 1 < n { -h * self.ju[i] / denom } else { 0.0 };
            self.dp[i] = (b[i] - a * self.dp[i - 1]) / denom;
        }
        b[n - 1] = self.dp[n - 1];
        for i in (0..n - 1).rev() {
            b[i] = self.dp[i] - self.cp[i] * b[i + 1];
        }
    }

    /// One extrapolated step; None when rejected.
    fn step(&mut self, y0: &[f64], h_big: f64) -> Option<(Vec<f64>, f64, f64)> {
        let n = y0.len();
        self.rhs(y0);
        let f0 = self.f.clone();
        for i in 0..n {
            self.jl[i] = self.lo[i];
            self.ju[i] = self.hi[i];
            self.jd[i] = -(self.lo[i] + self.hi[i]);
        }
        let mut y = vec![0.0; n];
        let mut b = vec![0.0; n];
        let kt = self.k_target;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..(kt + 1).min(K_MAX) {
            let nj = SEQ[j];
            let h = h_big / nj as f64;
            y.copy_from_slice(y0);
            for m in 0..nj {
                if m == 0 {
                    for i in 0..n {
                        b[i] = h * f0[i];
                    }
                } else {
                    self.rhs(&y);
                    for i in 0..n {
                        b[i] = h * self.f[i];
                    }
                }
                self.solve_tri(h, &mut b);
                for i in 0..n {
                    y[i] += b[i];
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // Aitken–Neville in h for the first-order base method.
            let mut prev = std::mem::take(&mut self.table[0]);
            self.table[0] = y.clone();
            for k in 1..=j {
                let ratio = SEQ[j] as f64 / SEQ[j - k] as f64 - 1.0;
                let mut cur = std::mem::take(&mut self.table[k]);
                if cur.len() != n {
                    cur = vec![0.0; n];
                }
                let lower = &self.table[k - 1];
                for i in 0..n {
                    let v = lower[i] + (lower[i] - prev[i]) / ratio;
                    prev[i] = cur[i];
                    cur[i] = v;
                }
                self.table[k] = cur;
            }
            if j >= 1 {
                let a = &self.table[j];
                let c = &self.table[j - 1];
                let err = a.iter().zip(c).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / self.tol;
                if err <= 1.0 && j + 1 >= kt {
                    best = Some((j, err));
                    break;
                }
                if j == kt {
                    best = if err <= 1.0 { Some((j, err)) } else { None };
                    if best.is_none() {
                        return None;
                    }
                }
            }
        }
        let (j, err) = best?;
        let fac = (0.94 * (0.65 / err.max(1e-10)).powf(1.0 / (j as f64 + 1.0))).clamp(0.2, 4.0);
        Some((self.table[j].clone(), err, h_big * fac))
    }
}

/// Dense oracle: u(t) = exp(tA)δ₀ for A = tridiag(1, ξ − 2, 1) on the window.
///
/// A + cI is entrywise non-negative for c = max(0, 2 − min ξ), so the Taylor
/// block and every squaring add non-negative terms only; each entry keeps full
/// relative precision. Squarings are renormalised and the scale kept in logs.
pub fn dense_oracle_values(xi: &[f64], t: f64) -> Result<SolutionState> {
    if xi.len() % 2 != 1 || xi.len() > 25 {
        return Err(Error::Domain("dense oracle needs 1 <= 2L+1 <= 25 sites".into()));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t = {t}")));
    }
    let n = xi.len();
    let l = n / 2;
    let xmin = xi.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = (2.0 - xmin).max(0.0);
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        b[i * n + i] = xi[i] - 2.0 + c;
        if i + 1 < n {
            b[i * n + i + 1] = 1.0;
            b[(i + 1) * n + i] = 1.0;
        }
    }
    let norm = (0..n).map(|i| (0..n).map(|j| b[i * n + j]).sum::<f64>()).fold(0.0, f64::max) * t;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let tau = t / 2f64.powi(s);
    // Taylor series of exp(τB), all terms non-negative.
    let mut term = vec![0.0f64; n * n];
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        term[i * n + i] = 1.0;
        m[i * n + i] = 1.0;
    }
    for k in 1..60 {
        let mut next = matmul(&term, &b, n);
        for v in next.iter_mut() {
            *v *= tau / k as f64;
        }
        let mut done = true;
        for (acc, &v) in m.iter_mut().zip(&next) {
            if v > 1e-18 * *acc {
                done = false;
            }
            *acc += v;
        }
        term = next;
        if done {
            break;
        }
    }
    let mut log_scale = 0.0f64;
    for _ in 0..s {
        m = matmul(&m, &m, n);
        let mx = m.iter().cloned().fold(0.0, f64::max);
        if !(mx > 0.0) || !mx.is_finite() {
            return Err(Error::Numerical("dense oracle overflow".into()));
        }
        for v in m.iter_mut() {
            *v /= mx;
        }
        log_scale = 2.0 * log_scale + mx.ln();
    }
    let shift = log_scale - c * t;
    let log_u: Vec<f64> = (0..n).map(|i| m[i * n + l].ln() + shift).collect();
    if log_u.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Numerical("dense oracle produced a non-finite entry".into()));
    }
    Ok(SolutionState::from_log_u(t, l as u64, &log_u))
}

pub fn dense_oracle(field: &dyn Potential, t: f64, l_small: u64) -> Result<SolutionState> {
    if l_small > 12 {
        return Err(Error::Domain(format!("dense oracle window {l_small} > 12")));
    }
    dense_oracle_values(&window_values(field, l_small)?, t)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub log_ratio: f64,
    pub two_site_mass: f64,
    pub top_site_mass: f64,
    /// v(−z1) or v(z1) vanished numerically; log_ratio is ±∞.
    pub infinite_ratio: bool,
}

/// Any profile that can report log v at a site.
pub trait Profile {
    fn log_v_at(&self, z: i64) -> f64;
}

impl Profile for SolutionState {
    fn log_v_at(&self, z: i64) -> f64 {
        SolutionState::log_v_at(self, z)
    }
}

pub fn observables(state: &dyn Profile, sites: &LocalisationSites) -> Observables {
    observables_at(state, sites.z1.z)
}

pub fn observables_at(state: &dyn Profile, z1: i64) -> Observables {
    let lp = state.log_v_at(z1);
    let lm = state.log_v_at(-z1);
    let (vp, vm) = (lp.exp(), lm.exp());
    let infinite = !(lp.is_finite() && lm.is_finite());
    Observables {
        log_ratio: if infinite {
            if lp == lm {
                0.0
            } else if lp > lm {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        } else {
            lp - lm
        },
        two_site_mass: if z1 == 0 { vp } else { vp + vm },
        top_site_mass: vp.max(vm),
        infinite_ratio: infinite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_oracle() {
        let s = dense_oracle_values(&[3.5], 2.0).unwrap();
        assert!((s.log_mass - (3.5 - 2.0) * 2.0).abs() < 1e-13);
    }

    #[test]
    fn ratio_arithmetic() {
        struct P;
        impl Profile for P {
            fn log_v_at(&self, z: i64) -> f64 {
                if z > 0 {
                    0.6f64.ln()
                } else {
                    0.3f64.ln()
                }
            }
        }
        let o = observables_at(&P, 4);
        assert!((o.log_ratio - 2f64.ln()).abs() < 1e-15);
        assert!((o.two_site_mass - 0.9).abs() < 1e-15);
        assert!((o.top_site_mass - 0.6).abs() < 1e-15);
    }

    #[test]
    fn constant_potential_growth() {
        let xi = vec![2.5; 121];
        let s = solve_values(&xi, &[1.0, 2.0], &SolveOptions::default()).unwrap();
        for st in &s {
            assert!((st.log_mass - 2.5 * st.t).abs() < 1e-6, "{} {}", st.t, st.log_mass);
        }
    }

    #[test]
    fn matches_dense_small() {
        let xi = [1.0, 3.0, 7.0, 3.0, 1.0];
        let a = solve_values(&xi, &[0.5], &SolveOptions::default()).unwrap();
        let b = dense_oracle_values(&xi, 0.5).unwrap();
        for i in 0..5 {
            let ra = a[0].log_v[i].exp();
            let rb = b.log_v[i].exp();
            assert!((ra / rb - 1.0).abs() < 1e-6, "{i}: {ra} {rb}");
        }
        assert!((a[0].log_mass - b.log_mass).abs() < 1e-8);
    }
}
