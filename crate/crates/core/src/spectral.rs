//! Spectral evaluation of u(t, ·) = exp(tH)δ₀ for large t, H = Δ + ξ on [−T, T]
//! with absorbing boundary.
//!
//! Only eigenpairs with λ above a cut-off λ_c can matter: a rigorous lower bound
//! LB on log U comes from a single path, and the discarded modes contribute at
//! most N·e^{tλ_c} ≤ e^{LB − margin} to the mass. Eigenvalues above λ_c live in
//! short blocks around sites with ξ > λ_c − 2 and are found by Sturm bisection.
//! Eigenvector components far from a block are products of pivot ratios, which
//! keeps full relative precision however small the component is.
//!
//! Each mode is followed on its own half-line: modes of a block right of the
//! origin are never evaluated at negative sites (and vice versa). The neglected
//! terms are tunnelling amplitudes below any representable scale, and this is
//! what keeps mirror pairs of duplicated sites from mixing numerically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Potential;
use crate::solver::Profile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Padding around every block core, in sites.
    pub pad: u64,
    /// Dropped contributions stay below e^{LB − margin}.
    pub margin: f64,
    pub leak_limit: f64,
    /// The margin is widened until every requested target sits this far above
    /// the dropped-mode floor, up to `max_margin`.
    pub resolve: f64,
    pub max_margin: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { pad: 30, margin: 40.0, leak_limit: 1e-6, resolve: 30.0, max_margin: 1e4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSite {
    pub z: i64,
    pub log_v: f64,
}

/// Normalised profile on a sparse set of sites: the requested targets and the
/// blocks carrying the retained modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseState {
    pub t: f64,
    pub window: u64,
    pub log_mass: f64,
    /// Sorted by z.
    pub sites: Vec<SparseSite>,
    pub lambda_cut: f64,
    pub log_lower_bound: f64,
    pub modes: usize,
    pub heavy_modes: usize,
    pub leakage: f64,
    pub leakage_warning: bool,
    pub symmetric: bool,
    pub margin: f64,
    /// Every requested target is at least `resolve` above the floor log u = tλ_cut.
    pub resolved: bool,
}

impl SparseState {
    /// log v(z); −∞ for sites outside the sparse set.
    pub fn log_v_at(&self, z: i64) -> f64 {
        self.sites
            .binary_search_by_key(&z, |s| s.z)
            .map(|i| self.sites[i].log_v)
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn top_site(&self) -> Option<SparseSite> {
        self.sites.iter().copied().max_by(|a, b| a.log_v.total_cmp(&b.log_v))
    }
}

impl Profile for SparseState {
    fn log_v_at(&self, z: i64) -> f64 {
        SparseState::log_v_at(self, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Signed {
    log: f64,
    sign: f64,
}

impl Signed {
    fn from_value(x: f64) -> Self {
        Signed { log: x.abs().ln(), sign: if x < 0.0 { -1.0 } else { 1.0 } }
    }
}

/// Running log|Π x| and sign of a long product without per-factor logarithms.
#[derive(Clone, Copy, Debug)]
struct LogProd {
    acc: f64,
    prod: f64,
    sign: f64,
}

impl LogProd {
    fn new() -> Self {
        LogProd { acc: 0.0, prod: 1.0, sign: 1.0 }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        if x < 0.0 {
            self.sign = -self.sign;
        }
        let ax = x.abs();
        if !(ax > 1e-100 && ax < 1e100) {
            self.acc += ax.ln();
            return;
        }
        self.prod *= ax;
        if !(self.prod > 1e-200 && self.prod < 1e200) {
            self.acc += self.prod.ln();
            self.prod = 1.0;
        }
    }

    fn value(&self) -> f64 {
        self.acc + self.prod.ln()
    }
}

const TINY_PIVOT: f64 = 1e-280;

/// Non-core sites appended past a block end before the local right pivots
/// are started, so that the truncation does not bias ψ at the block end.
const EXTENSION: i64 = 24;

#[inline]
fn guard(p: f64) -> f64 {
    if p == 0.0 {
        TINY_PIVOT
    } else {
        p
    }
}

/// Number of eigenvalues greater than x of the block with diagonal ξ − 2 and
/// off-diagonal `b`.
fn count_above(xi: &[f64], b: &[f64], x: f64) -> usize {
    let mut below = 0usize;
    let mut d = 0.0f64;
    for i in 0..xi.len() {
        d = xi[i] - 2.0 - x - if i > 0 { b[i - 1] * b[i - 1] / d } else { 0.0 };
        d = if d == 0.0 { -TINY_PIVOT } else { d };
        if d < 0.0 {
            below += 1;
        }
    }
    xi.len() - below
}

/// Eigenvalues above `cut`, in decreasing order.
fn eigenvalues_above(xi: &[f64], b: &[f64], cut: f64) -> Vec<f64> {
    let m = count_above(xi, b, cut);
    let hi0 = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.5;
    let mut out = Vec::with_capacity(m);
    for j in 1..=m {
        let (mut lo, mut hi) = (cut, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if count_above(xi, b, mid) >= j {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

/// Twisted representation of one eigenvector over a block: log|ψ| and sign,
/// normalised to ψ = 1 at the twist index.
struct BlockVector {
    logs: Vec<f64>,
    signs: Vec<f64>,
}

/// Left pivots from the block start (Dirichlet) unless `left` is supplied.
fn left_pivots(xi: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    let mut l = vec![0.0; xi.len()];
    for i in 0..xi.len() {
        let m = lambda + 2.0 - xi[i];
        l[i] = guard(if i == 0 { m } else { m - b[i - 1] * b[i - 1] / l[i - 1] });
    }
    l
}

fn right_pivots(xi: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    let n = xi.len();
    let mut r = vec![0.0; n];
    for i in (0..n).rev() {
        let m = lambda + 2.0 - xi[i];
        r[i] = guard(if i + 1 == n { m } else { m - b[i] * b[i] / r[i + 1] });
    }
    r
}

fn gammas(xi: &[f64], l: &[f64], r: &[f64], lambda: f64) -> Vec<f64> {
    (0..xi.len()).map(|i| l[i] + r[i] - (lambda + 2.0 - xi[i])).collect()
}

fn twisted_vector(b: &[f64], l: &[f64], r: &[f64], k: usize, lo: usize, hi: usize) -> BlockVector {
    let n = l.len();
    let mut logs = vec![f64::NEG_INFINITY; n];
    let mut signs = vec![0.0; n];
    logs[k] = 0.0;
    signs[k] = 1.0;
    for i in (lo..k).rev() {
        // ψ_i = b_i ψ_{i+1} / L_i
        logs[i] = logs[i + 1] + b[i].ln() - l[i].abs().ln();
        signs[i] = signs[i + 1] * l[i].signum();
    }
    for i in (k + 1)..=hi {
        logs[i] = logs[i - 1] + b[i - 1].ln() - r[i].abs().ln();
        signs[i] = signs[i - 1] * r[i].signum();
    }
    BlockVector { logs, signs }
}

fn argmin_abs(g: &[f64]) -> usize {
    let mut k = 0;
    for i in 1..g.len() {
        if g[i].abs() < g[k].abs() {
            k = i;
        }
    }
    k
}

/// One retained mode in field coordinates.
#[derive(Clone, Debug)]
struct Mode {
    lambda: f64,
    /// ψ(0) in the mode's own scale.
    psi0: Signed,
    log_n2: f64,
    sum: Signed,
    vals: Vec<(i64, Signed)>,
}

impl Mode {
    fn coef(&self, t: f64) -> f64 {
        t * self.lambda + self.psi0.log - self.log_n2
    }
}

/// Lower bound on log u(t, p) from the straight path 0 → p, each intermediate
/// holding time restricted to [0, t/n].
pub fn straight_path_bound(field: &dyn Potential, t: f64, p: i64) -> f64 {
    path_bound_with(t, p, |z| field.xi(z))
}

fn path_bound_with(t: f64, p: i64, xi: impl Fn(i64) -> f64) -> f64 {
    let n = p.unsigned_abs();
    let xs = xi(p);
    if n == 0 {
        return t * (xs - 2.0);
    }
    let h = t / n as f64;
    let step = p.signum();
    let mut acc = -2.0 * t + t * xs;
    for i in 0..n as i64 {
        let d = xs - xi(i * step);
        acc += if d == 0.0 { h.ln() } else { (-(-h * d).exp_m1() / d).ln() };
    }
    acc
}

/// Side sweep bookkeeping for one mode of a block on that side.
struct SideMode {
    lambda: f64,
    s: i64,
    e: i64,
    /// Last site fed to the local right pivots; sites past `e` only damp the
    /// Dirichlet cut.
    stop: i64,
    own: bool,
    alive: bool,
    done: bool,
    l_prev: f64,
    started: bool,
    prefix: LogProd,
    a1: f64,
    a2: f64,
    tvals: Vec<(i64, f64, f64)>,
    lbuf: Vec<f64>,
    xbuf: Vec<f64>,
}

struct Env<'a> {
    field: &'a dyn Potential,
    /// ξ(σy) for y in [0, window], indexed [σ > 0, σ < 0].
    views: &'a [Vec<f64>; 2],
    t: f64,
    lb: f64,
    margin: f64,
    log_n: f64,
    window: i64,
}

/// Tail request: extend a mode from its block end `e` (view coordinates)
/// outwards to the targets beyond it.
struct TailReq {
    mode: usize,
    lambda: f64,
    e: i64,
    psi_e: Signed,
    /// Store values at −σy instead of σy.
    flip: bool,
}

impl<'a> Env<'a> {
    #[inline]
    fn xi_view(&self, sigma: i64, y: i64) -> f64 {
        let z = sigma * y;
        if z < 0 && self.views[1].is_empty() {
            self.views[0][z.unsigned_abs() as usize]
        } else {
            self.views[(z < 0) as usize][z.unsigned_abs() as usize]
        }
    }

    /// Outward sweep from `y0` ≤ 0 on view side `sigma`; returns finished modes
    /// and, for each, its block end and ψ there.
    fn sweep_side(
        &self,
        sigma: i64,
        y0: i64,
        blocks: &[(i64, i64, i64, Vec<f64>, bool)],
        targets: &[i64],
    ) -> Vec<(Mode, i64, Signed, bool)> {
        let mut modes: Vec<SideMode> = Vec::new();
        for (s, e, ext, lams, own) in blocks {
            for &lambda in lams {
                modes.push(SideMode {
                    lambda,
                    s: *s,
                    e: *e,
                    stop: e + ext,
                    own: *own,
                    alive: true,
                    done: false,
                    l_prev: 0.0,
                    started: false,
                    prefix: LogProd::new(),
                    a1: 1.0,
                    a2: 1.0,
                    tvals: Vec::new(),
                    lbuf: Vec::new(),
                    xbuf: Vec::new(),
                });
            }
        }
        let mut out = Vec::new();
        let y_end = modes.iter().map(|m| m.stop).max().unwrap_or(y0);
        let mut ti = 0usize;
        let half_log_n = 0.5 * self.log_n;
        let target_floor = self.lb - self.margin;
        for y in y0..=y_end {
            while ti < targets.len() && targets[ti] < y {
                ti += 1;
            }
            let is_target = ti < targets.len() && targets[ti] == y;
            let mut any = false;
            let x = self.xi_view(sigma, y);
            for md in modes.iter_mut() {
                if !md.alive || md.done {
                    continue;
                }
                any = true;
                let m = md.lambda + 2.0 - x;
                let l = guard(if md.started { m - 1.0 / md.l_prev } else { m });
                md.started = true;
                md.l_prev = l;
                if y < md.s {
                    if y >= 0 {
                        if is_target {
                            md.tvals.push((y, md.prefix.value(), md.prefix.sign));
                        }
                        md.prefix.push(l);
                        md.a2 = md.a2 / (l * l) + 1.0;
                        md.a1 = md.a1 / l + 1.0;
                        if !md.own
                            && y % 64 == 0
                            && self.t * md.lambda - md.prefix.value() + half_log_n < target_floor
                        {
                            md.alive = false;
                        }
                    }
                } else {
                    if y <= md.e {
                        md.lbuf.push(l);
                    }
                    md.xbuf.push(x);
                    if y == md.stop {
                        md.done = true;
                    }
                }
            }
            if !any {
                break;
            }
        }
        for md in modes.into_iter().filter(|m| m.alive && m.done) {
            out.push(self.finish_side_mode(sigma, md));
        }
        out
    }

    fn finish_side_mode(&self, sigma: i64, md: SideMode) -> (Mode, i64, Signed, bool) {
        let nb = md.lbuf.len();
        let ones = vec![1.0; md.xbuf.len().saturating_sub(1)];
        let mut r = right_pivots(&md.xbuf, &ones, md.lambda);
        r.truncate(nb);
        let g = gammas(&md.xbuf[..nb], &md.lbuf, &r, md.lambda);
        let k = argmin_abs(&g);
        let v = twisted_vector(&ones, &md.lbuf, &r, k, 0, nb - 1);
        let mut n2 = md.a2 * (2.0 * v.logs[0]).exp();
        let mut sum = md.a1 * v.signs[0] * v.logs[0].exp();
        for i in 1..nb {
            n2 += (2.0 * v.logs[i]).exp();
            sum += v.signs[i] * v.logs[i].exp();
        }
        let p_s = md.prefix.value();
        let psi0 = Signed { log: v.logs[0] - p_s, sign: v.signs[0] * md.prefix.sign };
        let log_n2 = n2.ln();
        let mut vals = Vec::new();
        for (y, p, sg) in &md.tvals {
            vals.push((sigma * y, Signed { log: psi0.log + p, sign: psi0.sign * sg }));
        }
        for i in 0..nb {
            vals.push((sigma * (md.s + i as i64), Signed { log: v.logs[i], sign: v.signs[i] }));
        }
        let mode = Mode { lambda: md.lambda, psi0, log_n2, sum: Signed::from_value(sum), vals };
        let heavy = md.own || self.t * mode.lambda + mode.psi0.log - 0.5 * log_n2 >= self.lb - self.margin;
        let psi_e = Signed { log: v.logs[nb - 1], sign: v.signs[nb - 1] };
        (mode, md.e, psi_e, heavy)
    }

    /// Inward sweep from the window edge for the right tails of `reqs`.
    fn sweep_tails(&self, sigma: i64, reqs: &[TailReq], targets: &[i64]) -> Vec<(usize, Vec<(i64, Signed)>)> {
        struct Live {
            r_prev: f64,
            started: bool,
            lam: LogProd,
            rec: Vec<(i64, f64, f64)>,
            done: bool,
        }
        let big_t = self.window;
        let mut live: Vec<Live> =
            reqs.iter().map(|_| Live { r_prev: 0.0, started: false, lam: LogProd::new(), rec: vec![], done: false }).collect();
        let mut out = Vec::new();
        let e_min = reqs.iter().map(|r| r.e).min();
        let Some(e_min) = e_min else { return out };
        let mut ti = targets.len();
        let mut y = big_t;
        while y > e_min {
            while ti > 0 && targets[ti - 1] > y {
                ti -= 1;
            }
            let is_target = ti > 0 && targets[ti - 1] == y;
            let x = self.xi_view(sigma, y);
            for (q, lv) in reqs.iter().zip(live.iter_mut()) {
                if lv.done || y <= q.e {
                    continue;
                }
                let m = q.lambda + 2.0 - x;
                let r = guard(if lv.started { m - 1.0 / lv.r_prev } else { m });
                lv.started = true;
                lv.r_prev = r;
                if is_target {
                    lv.rec.push((y, lv.lam.value(), lv.lam.sign));
                }
                lv.lam.push(r);
                if y == q.e + 1 {
                    lv.done = true;
                }
            }
            y -= 1;
        }
        for (q, lv) in reqs.iter().zip(live) {
            if !lv.started {
                continue;
            }
            let base = lv.lam.value();
            let vals = lv
                .rec
                .iter()
                .map(|(yt, lt, st)| {
                    (if q.flip { -sigma * yt } else { sigma * yt }, Signed { log: q.psi_e.log - (base - lt), sign: q.psi_e.sign * lv.lam.sign * st })
                })
                .collect();
            out.push((q.mode, vals));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    s: i64,
    e: i64,
}

fn make_blocks(mut cores: Vec<i64>, pad: i64, window: i64) -> Vec<Block> {
    cores.sort_unstable();
    cores.dedup();
    let mut blocks: Vec<Block> = Vec::new();
    for c in cores {
        let s = (c - pad).max(-window);
        let e = (c + pad).min(window);
        match blocks.last_mut() {
            Some(b) if s <= b.e + 1 => b.e = b.e.max(e),
            _ => blocks.push(Block { s, e }),
        }
    }
    blocks
}

/// Modes of the block containing the origin.
fn origin_modes(
    env: &Env,
    blk: Block,
    ext: (i64, i64),
    symmetric: bool,
    cut: f64,
) -> Vec<(Mode, Option<Signed>, Option<Signed>, bool)> {
    let mut out = Vec::new();
    let (lo_z, el) = if symmetric { (0, 0) } else { (blk.s, ext.0) };
    let er = ext.1;
    let xe: Vec<f64> = (lo_z - el..=blk.e + er).map(|z| env.field.xi(z)).collect();
    let mut be = vec![1.0; xe.len().saturating_sub(1)];
    if symmetric && !be.is_empty() {
        be[0] = std::f64::consts::SQRT_2;
    }
    let eu = el as usize;
    let n = (blk.e - lo_z + 1) as usize;
    let xi = &xe[eu..eu + n];
    let b = &be[eu..eu + n - 1];
    let lams = eigenvalues_above(xi, b, cut);
    let i0 = (-lo_z) as usize;
    // Members of a near-degenerate group are pinned to distinct humps of
    // |γ| so that each twisted vector starts on its own well.
    let mut j = 0;
    while j < lams.len() {
        let mut k = j + 1;
        while k < lams.len() && lams[k - 1] - lams[k] <= 1e-6 * lams[k - 1].abs().max(1.0) {
            k += 1;
        }
        let group = &lams[j..k];
        let mut taken: Vec<usize> = Vec::new();
        for &lambda in group {
            let l = left_pivots(&xe, &be, lambda);
            let r = right_pivots(&xe, &be, lambda);
            let g = gammas(&xe, &l, &r, lambda);
            let free = |i: usize| taken.iter().all(|&q| q.abs_diff(i) > 3);
            let mut tw = None;
            for i in 0..n {
                if free(i) && tw.is_none_or(|q: usize| g[eu + i].abs() < g[eu + q].abs()) {
                    tw = Some(i);
                }
            }
            let Some(tw) = tw else { continue };
            taken.push(tw);
            let ve = twisted_vector(&be, &l, &r, eu + tw, 0, xe.len() - 1);
            let v = BlockVector { logs: ve.logs[eu..eu + n].to_vec(), signs: ve.signs[eu..eu + n].to_vec() };
            let (lo, hi) = (0, n - 1);
            let half = if symmetric { -0.5 * std::f64::consts::LN_2 } else { 0.0 };
            let mut n2 = 0.0;
            let mut sum = 0.0;
            let mut vals = Vec::new();
            for i in lo..=hi {
                let z = lo_z + i as i64;
                n2 += (2.0 * v.logs[i]).exp();
                if symmetric && z > 0 {
                    sum += std::f64::consts::SQRT_2 * v.signs[i] * v.logs[i].exp();
                    let s = Signed { log: v.logs[i] + half, sign: v.signs[i] };
                    vals.push((z, s));
                    vals.push((-z, s));
                } else {
                    sum += v.signs[i] * v.logs[i].exp();
                    vals.push((z, Signed { log: v.logs[i], sign: v.signs[i] }));
                }
            }
            let psi0 = Signed { log: v.logs[i0], sign: v.signs[i0] };
            let right = (hi == n - 1).then(|| Signed { log: v.logs[n - 1] + half, sign: v.signs[n - 1] });
            let left = (!symmetric && lo == 0).then(|| Signed { log: v.logs[0], sign: v.signs[0] });
            let mode = Mode { lambda, psi0, log_n2: n2.ln(), sum: Signed::from_value(sum), vals };
            let heavy = env.t * lambda + psi0.log - 0.5 * mode.log_n2 >= env.lb - env.margin;
            out.push((mode, right, left, heavy));
        }
        j = k;
    }
    out
}

/// Evaluates the normalised profile at `targets` (and on the retained
/// blocks) at time t on the window [−window, window]. `peak` should be the
/// global maximiser of Ψ_t on the window; any site gives a valid but weaker
/// cut-off.
pub fn solve_spectral(
    field: &dyn Potential,
    t: f64,
    window: u64,
    peak: i64,
    targets: &[i64],
    opts: &SpectralOptions,
) -> Result<SparseState> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t = {t}")));
    }
    if window > field.window() {
        return Err(Error::InsufficientWindow { window: field.window(), radius: window });
    }
    for &z in targets.iter().chain([&peak]) {
        if z.unsigned_abs() > window {
            return Err(Error::OutOfWindow { site: z, window });
        }
    }
    let symmetric = field.count_nondup(window)? == 0;
    let mut views = [Vec::new(), Vec::new()];
    field.fill_view(1, 0, window, &mut views[0]);
    if !symmetric {
        field.fill_view(-1, 0, window, &mut views[1]);
    }
    let lb = path_bound_with(t, peak, |z| views[(z < 0 && !symmetric) as usize][z.unsigned_abs() as usize]);
    let mut margin = opts.margin;
    loop {
        let st = solve_with_margin(field, &views, symmetric, lb, t, window, targets, opts, margin)?;
        let floor = t * st.lambda_cut - st.log_mass;
        let worst = targets.iter().map(|&z| st.log_v_at(z)).fold(f64::INFINITY, f64::min);
        let deficit = floor + opts.resolve - worst;
        if deficit <= 0.0 {
            return Ok(SparseState { resolved: true, ..st });
        }
        if margin >= opts.max_margin || !deficit.is_finite() {
            return Ok(st);
        }
        margin = (margin + deficit + 10.0).min(opts.max_margin);
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_with_margin(
    field: &dyn Potential,
    views: &[Vec<f64>; 2],
    symmetric: bool,
    lb: f64,
    t: f64,
    window: u64,
    targets: &[i64],
    opts: &SpectralOptions,
    margin: f64,
) -> Result<SparseState> {
    let w = window as i64;
    let pad = opts.pad as i64;
    let n_sites = 2.0 * window as f64 + 1.0;
    let log_n = n_sites.ln();

    let lambda_cut = (lb - margin - log_n) / t;
    let core_thr = lambda_cut - 2.0;

    let mut all_targets: Vec<i64> = targets.to_vec();
    all_targets.extend([0, w, -w]);
    all_targets.sort_unstable();
    all_targets.dedup();

    let mut cores = vec![0i64];
    field.scan(0, window, core_thr, core_thr, &mut |s| {
        let n = s.n as i64;
        if s.xi_pos > core_thr {
            cores.push(n);
        }
        if s.xi_neg > core_thr && n > 0 {
            cores.push(-n);
        }
    });
    let forced: Vec<i64> = targets.iter().copied().filter(|z| z.unsigned_abs() < window).collect();
    cores.extend(forced.iter().copied());
    if symmetric {
        let mirrored: Vec<i64> = cores.iter().map(|z| -z).collect();
        cores.extend(mirrored);
    }
    let blocks = make_blocks(cores, pad, w);
    let oi = blocks.iter().position(|b| b.s <= 0 && 0 <= b.e).expect("origin block");
    let ob = blocks[oi];

    let env = Env { field, views, t, lb, margin, log_n, window: w };
    let mut modes: Vec<Mode> = Vec::new();
    let mut tails_pos: Vec<TailReq> = Vec::new();
    let mut tails_neg: Vec<TailReq> = Vec::new();
    let mut heavy_count = 0usize;

    let ext_right = |i: usize| {
        let e = blocks[i].e;
        let lim = blocks.get(i + 1).map_or(w, |nb| nb.s - 1);
        (lim - e).clamp(0, EXTENSION)
    };
    let ext_left = |i: usize| {
        let s = blocks[i].s;
        let lim = if i > 0 { blocks[i - 1].e + 1 } else { -w };
        (s - lim).clamp(0, EXTENSION)
    };
    for (mode, right, left, heavy) in origin_modes(&env, ob, (ext_left(oi), ext_right(oi)), symmetric, lambda_cut) {
        let idx = modes.len();
        if heavy {
            heavy_count += 1;
            if let Some(p) = right {
                tails_pos.push(TailReq { mode: idx, lambda: mode.lambda, e: ob.e, psi_e: p, flip: false });
            }
            if let Some(p) = left {
                tails_neg.push(TailReq { mode: idx, lambda: mode.lambda, e: -ob.s, psi_e: p, flip: false });
            }
        }
        modes.push(mode);
    }

    let n_origin = modes.len();
    let is_own = |b: &Block| forced.iter().any(|&z| z != 0 && b.s <= z && z <= b.e);
    let sides: &[i64] = if symmetric { &[1] } else { &[1, -1] };
    let view_targets = |sigma: i64| {
        let mut v: Vec<i64> = if symmetric {
            all_targets.iter().map(|z| z.abs()).collect()
        } else {
            all_targets.iter().filter(|&&z| sigma * z >= 0).map(|z| sigma * z).collect()
        };
        v.sort_unstable();
        v.dedup();
        v
    };
    for &sigma in sides {
        let mut side_blocks = Vec::new();
        let side_iter: Vec<(Block, i64)> = if sigma > 0 {
            (oi + 1..blocks.len()).map(|i| (blocks[i], ext_right(i))).collect()
        } else {
            (0..oi).rev().map(|i| (Block { s: -blocks[i].e, e: -blocks[i].s }, ext_left(i))).collect()
        };
        for (b, ext) in side_iter {
            let xi: Vec<f64> = (b.s..=b.e).map(|y| field.xi(sigma * y)).collect();
            let ones = vec![1.0; xi.len() - 1];
            let own = is_own(&if sigma > 0 { b } else { Block { s: -b.e, e: -b.s } });
            let cut = if own {
                lambda_cut.min(xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 4.0)
            } else {
                lambda_cut
            };
            let lams = eigenvalues_above(&xi, &ones, cut);
            if !lams.is_empty() {
                side_blocks.push((b.s, b.e, ext, lams, own));
            }
        }
        let y0 = if sigma > 0 { ob.s } else { -ob.e };
        for (mode, e, psi_e, heavy) in env.sweep_side(sigma, y0, &side_blocks, &view_targets(sigma)) {
            let idx = modes.len();
            if heavy {
                heavy_count += 1;
                let own_side = TailReq { mode: idx, lambda: mode.lambda, e, psi_e, flip: false };
                // The same mode continued through the origin onto the other half-line.
                let cross = TailReq { mode: idx, lambda: mode.lambda, e: 0, psi_e: mode.psi0, flip: symmetric };
                if sigma > 0 {
                    tails_pos.push(own_side);
                    if symmetric {
                        tails_pos.push(cross);
                    } else {
                        tails_neg.push(cross);
                    }
                } else {
                    tails_neg.push(own_side);
                    tails_pos.push(cross);
                }
            }
            modes.push(mode);
        }
    }
    for &sigma in sides {
        let reqs = if sigma > 0 { &tails_pos } else { &tails_neg };
        for (idx, vals) in env.sweep_tails(sigma, reqs, &view_targets(sigma)) {
            modes[idx].vals.extend(vals);
        }
    }
    if symmetric {
        let n0 = modes.len();
        for i in 0..n0 {
            if i < n_origin {
                // Origin modes already carry both signs; mirror their tails.
                let extra: Vec<(i64, Signed)> =
                    modes[i].vals.iter().filter(|(z, _)| *z > ob.e).map(|(z, s)| (-z, *s)).collect();
                modes[i].vals.extend(extra);
            } else {
                let mut m = modes[i].clone();
                m.vals = m.vals.iter().map(|(z, s)| (-z, *s)).collect();
                modes.push(m);
            }
        }
    }

    // Assemble.
    let mut mass_terms: Vec<(f64, f64)> = Vec::with_capacity(modes.len());
    let mut site_terms: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for m in &modes {
        let c = m.coef(t);
        mass_terms.push((c + m.sum.log, m.psi0.sign * m.sum.sign));
        let mut seen = std::collections::HashSet::new();
        for (z, s) in &m.vals {
            if seen.insert(*z) {
                site_terms.entry(*z).or_default().push((c + s.log, m.psi0.sign * s.sign));
            }
        }
    }
    for &z in &all_targets {
        site_terms.entry(z).or_default();
    }
    let log_mass = signed_log_sum(&mass_terms);
    if !log_mass.is_finite() {
        return Err(Error::Numerical("spectral mass is not positive".into()));
    }
    let sites: Vec<SparseSite> =
        site_terms.iter().map(|(z, terms)| SparseSite { z: *z, log_v: signed_log_sum(terms) - log_mass }).collect();
    let st = SparseState {
        t,
        window,
        log_mass,
        sites,
        lambda_cut,
        log_lower_bound: lb,
        modes: modes.len(),
        heavy_modes: heavy_count,
        leakage: 0.0,
        leakage_warning: false,
        symmetric,
        margin,
        resolved: false,
    };
    let leakage = st.log_v_at(w).exp() + st.log_v_at(-w).exp();
    Ok(SparseState { leakage, leakage_warning: leakage > opts.leak_limit, ..st })
}

/// log Σ sign·e^{log}; −∞ when the sum is not positive.
fn signed_log_sum(terms: &[(f64, f64)]) -> f64 {
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().map(|(l, sg)| sg * (l - m).exp()).sum();
    if s > 0.0 {
        m + s.ln()
    } else {
        f64::NEG_INFINITY
    }
}
