//! Maximisers of Ψ_t, the threshold set K_t, moment statistics, Q_t and the
//! typicality events.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify_regime, eta, Potential, RegimeClass, RegimeKind, RegimeProfile};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub t: f64,
    pub alpha: f64,
    pub r_t: f64,
    pub a_t: f64,
    pub lambda_t: f64,
    pub f_t: f64,
    pub g_t: f64,
}

impl Scales {
    /// ⌈4·g_t·r_t⌉.
    pub fn search_radius(&self) -> u64 {
        (4.0 * self.g_t * self.r_t).ceil() as u64
    }

    /// λ evaluated at r_t.
    pub fn lambda_r(&self) -> f64 {
        if self.alpha > 2.0 {
            1.0
        } else {
            self.r_t.ln()
        }
    }

    /// R_t = Z¹_t(1 + f_t).
    pub fn big_r(&self, z1: i64) -> f64 {
        z1 as f64 * (1.0 + self.f_t)
    }
}

pub fn make_scales(t: f64, alpha: f64) -> Result<Scales> {
    if !(t > std::f64::consts::E.powi(2)) || !t.is_finite() {
        return Err(Error::Domain(format!("scales need t > e^2, got {t}")));
    }
    if !(alpha >= 2.0) {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    let base = t / t.ln();
    let a_t = base.powf(1.0 / (alpha - 1.0));
    let r_t = base.powf(alpha / (alpha - 1.0));
    let ll = t.ln().ln();
    Ok(Scales {
        t,
        alpha,
        r_t,
        a_t,
        lambda_t: if alpha > 2.0 { 1.0 } else { t.ln() },
        f_t: ll.powf(-0.5),
        g_t: ll.sqrt(),
    })
}

/// Ψ_t(z) = ξ(z) − (|z|/t)·log ξ(z).
#[inline]
pub fn psi(t: f64, z: i64, xi_z: f64) -> f64 {
    xi_z - (z.unsigned_abs() as f64 / t) * xi_z.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub z: i64,
    pub xi: f64,
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalisationSites {
    pub t: f64,
    pub radius: u64,
    /// Argmax of Ψ_t over D.
    pub z1: Site,
    /// Argmax over D \ {z1}.
    pub z2: Site,
    /// Argmax over +E (positive sites), if E meets the radius.
    pub ze_plus: Option<Site>,
    /// Argmax over −E (negative sites).
    pub ze_minus: Option<Site>,
    /// First and second argmax over ℕ₀.
    pub z1_star: Site,
    pub z2_star: Site,
    /// Argmax over all of [−radius, radius].
    pub z_global: Site,
    /// Maximisers unchanged when the radius is doubled; None when the window
    /// does not allow the check.
    pub stable: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Top2 {
    best: Option<Site>,
    second: Option<Site>,
}

impl Top2 {
    // Sites arrive in increasing |z|, so strict comparison keeps the smaller |z| on ties.
    fn push(&mut self, s: Site) {
        match self.best {
            None => self.best = Some(s),
            Some(b) if s.psi > b.psi => {
                self.second = self.best;
                self.best = Some(s);
            }
            _ => match self.second {
                None => self.second = Some(s),
                Some(c) if s.psi > c.psi => self.second = Some(s),
                _ => {}
            },
        }
    }
}

#[derive(Default)]
struct Cats {
    d: Top2,
    nat: Top2,
    e_plus: Top2,
    e_minus: Top2,
}

fn better(a: Option<Site>, b: Option<Site>) -> Option<Site> {
    match (a, b) {
        (Some(x), Some(y)) => {
            let ka = (x.z.unsigned_abs(), x.z < 0);
            let kb = (y.z.unsigned_abs(), y.z < 0);
            if x.psi > y.psi || (x.psi == y.psi && ka < kb) {
                Some(x)
            } else {
                Some(y)
            }
        }
        (x, None) => x,
        (None, y) => y,
    }
}

/// Exact maximisers of Ψ_t within radius ⌈4 g_t r_t⌉; stability checked at
/// twice the radius when the window allows it.
pub fn find_maximisers(field: &dyn Potential, t: f64, scales: &Scales) -> Result<LocalisationSites> {
    find_maximisers_radius(field, t, scales.search_radius())
}

pub fn find_maximisers_radius(field: &dyn Potential, t: f64, radius: u64) -> Result<LocalisationSites> {
    find_maximisers_checked(field, t, radius, true)
}

/// As [`find_maximisers_radius`]; the doubled-radius stability scan runs only
/// when `stability` is set.
pub fn find_maximisers_checked(field: &dyn Potential, t: f64, radius: u64, stability: bool) -> Result<LocalisationSites> {
    if field.window() < radius {
        return Err(Error::InsufficientWindow { window: field.window(), radius });
    }
    if radius < 1 {
        return Err(Error::Domain("radius must be >= 1".into()));
    }
    let check = stability && field.window() >= 2 * radius;
    let outer = if check { 2 * radius } else { radius };

    // Non-duplicated categories: every E site is visited exactly once.
    let mut e_in = (Top2::default(), Top2::default());
    let mut e_out = (Top2::default(), Top2::default());
    field.scan_nondup(1, outer, &mut |s| {
        let p = Site { z: s.n as i64, xi: s.xi_pos, psi: psi(t, s.n as i64, s.xi_pos) };
        let m = Site { z: -(s.n as i64), xi: s.xi_neg, psi: psi(t, -(s.n as i64), s.xi_neg) };
        if s.n <= radius {
            e_in.0.push(p);
            e_in.1.push(m);
        }
        e_out.0.push(p);
        e_out.1.push(m);
    });

    // D and ℕ₀: threshold scan, lowered until the needed maxima are certified.
    let a_est = (t / t.ln().max(1.0)).powf(1.0 / (field.alpha() - 1.0).max(1.0));
    let mut thr = (0.25 * a_est).max(1.0);
    loop {
        let mut cin = Cats::default();
        let mut cout = Cats::default();
        let no_thr = thr <= 1.0;
        let scan_thr = if no_thr { 0.0 } else { thr };
        field.scan(0, outer, scan_thr, f64::INFINITY, &mut |s| {
            let z = s.n as i64;
            let site = Site { z, xi: s.xi_pos, psi: psi(t, z, s.xi_pos) };
            for (c, inside) in [(&mut cin, s.n <= radius), (&mut cout, true)] {
                if !inside {
                    continue;
                }
                c.nat.push(site);
                if s.dup {
                    c.d.push(site);
                }
            }
        });
        let certified = |c: &Cats| {
            no_thr
                || [c.d.second, c.nat.second]
                    .iter()
                    .all(|s| s.map(|s| s.psi > thr).unwrap_or(false))
        };
        if !(certified(&cin) && (!check || certified(&cout))) {
            thr = if thr > 1.5 { thr / 2.0 } else { 0.0 };
            continue;
        }
        cin.e_plus = e_in.0;
        cin.e_minus = e_in.1;
        cout.e_plus = e_out.0;
        cout.e_minus = e_out.1;
        let a = assemble(t, radius, &cin)?;
        let stable = if check {
            let b = assemble(t, 2 * radius, &cout)?;
            Some(a.z1.z == b.z1.z && a.z2.z == b.z2.z && a.z1_star.z == b.z1_star.z && a.z_global.z == b.z_global.z)
        } else {
            None
        };
        return Ok(LocalisationSites { stable, ..a });
    }
}

fn assemble(t: f64, radius: u64, c: &Cats) -> Result<LocalisationSites> {
    let need = |s: Option<Site>, what: &str| {
        s.ok_or_else(|| Error::DegenerateMaximiser(format!("no {what} within radius {radius}")))
    };
    let z1 = need(c.d.best, "duplicated site")?;
    let z2 = need(c.d.second, "second duplicated site")?;
    let z1_star = need(c.nat.best, "site")?;
    let z2_star = need(c.nat.second, "second site")?;
    let z_global = better(Some(z1_star), c.e_minus.best).unwrap();
    Ok(LocalisationSites {
        t,
        radius,
        z1,
        z2,
        ze_plus: c.e_plus.best,
        ze_minus: c.e_minus.best,
        z1_star,
        z2_star,
        z_global,
        stable: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Regime of a profile: the built-in kind, or the classification of a custom law.
pub fn regime_of(profile: &RegimeProfile) -> Result<Regime> {
    Ok(match profile.kind {
        RegimeKind::Subcritical => Regime::Subcritical,
        RegimeKind::Critical => Regime::Critical,
        RegimeKind::Supercritical => Regime::Supercritical,
        RegimeKind::Custom => match classify_regime(profile, &[1_000, 10_000, 100_000, 1_000_000])? {
            RegimeClass::Subcritical => Regime::Subcritical,
            RegimeClass::Critical { .. } => Regime::Critical,
            RegimeClass::Supercritical => Regime::Supercritical,
        },
    })
}

/// η(⌊r_t⌋), the only profile statistic the threshold and events need.
pub fn eta_at_r(scales: &Scales, profile: &RegimeProfile) -> f64 {
    eta(profile, scales.r_t.floor() as u64)
}

/// θ_t given η(r_t); clamped to at least 1.
pub fn theta_with_eta(scales: &Scales, regime: Regime, eta_r: f64) -> f64 {
    let th = match regime {
        Regime::Subcritical | Regime::Critical => 1.0,
        Regime::Supercritical => {
            let a = scales.alpha;
            if a > 2.0 {
                scales.f_t * (eta_r / scales.r_t.powf(2.0 / a)).powf(1.0 / (a - 2.0))
            } else {
                scales.a_t * (-scales.r_t / (eta_r * scales.f_t)).exp()
            }
        }
    };
    if th.is_nan() {
        1.0
    } else {
        th.max(1.0)
    }
}

pub fn theta(scales: &Scales, profile: &RegimeProfile, regime: Regime) -> f64 {
    let eta_r = if regime == Regime::Supercritical { eta_at_r(scales, profile) } else { 0.0 };
    theta_with_eta(scales, regime, eta_r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSetK {
    pub theta_t: f64,
    pub z1: i64,
    pub xi_z1: f64,
    /// (z, ξ(z)) for z ∈ (0, z1) non-duplicated with ξ(z) > θ_t.
    pub k_plus: Vec<(i64, f64)>,
    /// Mirror list in (−z1, 0).
    pub k_minus: Vec<(i64, f64)>,
    /// N(z1) = |E ∩ [1, z1]|.
    pub n_z1: u64,
    /// max{ξ(z): |z| ∈ E, |z| < z1}, if any.
    pub zeta: Option<f64>,
    /// Σ over all of E ∩ [1, z1) of log(1 − ξ(−z)/ξ(z1)) − log(1 − ξ(z)/ξ(z1)),
    /// with the Q_t convention for values at or above ξ(z1).
    pub heur_log: f64,
    /// ξ(z1)^{−1} Σ over E ∩ [1, z1) of ξ(z) − ξ(−z).
    pub heur_taylor: f64,
    /// ξ(z1)^{−1} Σ over E ∩ [1, z1) of ξ(z) + ξ(−z).
    pub heur_abs: f64,
}

impl SiteSetK {
    pub fn size(&self) -> usize {
        self.k_plus.len() + self.k_minus.len()
    }
}

pub fn build_k(field: &dyn Potential, sites: &LocalisationSites, theta_t: f64) -> Result<SiteSetK> {
    let z1 = sites.z1.z;
    if z1 <= 0 {
        return Err(Error::DegenerateMaximiser(format!("z1 = {z1}")));
    }
    let mut k_plus = Vec::new();
    let mut k_minus = Vec::new();
    let mut n_e = 0u64;
    let mut zeta: Option<f64> = None;
    let x1 = sites.z1.xi;
    let (mut heur_log, mut diff, mut total) = (0.0, 0.0, 0.0);
    field.scan_nondup(1, (z1 - 1) as u64, &mut |s| {
        n_e += 1;
        heur_log += q_site(s.xi_pos, x1) - q_site(s.xi_neg, x1);
        diff += s.xi_pos - s.xi_neg;
        total += s.xi_pos + s.xi_neg;
        let m = s.xi_pos.max(s.xi_neg);
        zeta = Some(zeta.map_or(m, |z| z.max(m)));
        if s.xi_pos > theta_t {
            k_plus.push((s.n as i64, s.xi_pos));
        }
        if s.xi_neg > theta_t {
            k_minus.push((-(s.n as i64), s.xi_neg));
        }
    });
    Ok(SiteSetK {
        theta_t,
        z1,
        xi_z1: x1,
        k_plus,
        k_minus,
        n_z1: n_e,
        zeta,
        heur_log,
        heur_taylor: diff / x1,
        heur_abs: total / x1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub m_plus: f64,
    pub m_minus: f64,
    pub sig_plus: f64,
    pub sig_minus: f64,
    pub m_bar: f64,
    pub s_bar_inv: f64,
    pub gamma: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub q_t: f64,
    /// Sites of K with ξ(z) ≥ ξ(z1): Q = 0 and excluded from M, Σ.
    pub excluded: u64,
    pub empty_k: bool,
}

/// Q_t(z) = −log(1 − ξ(z)/ξ(z1)) for ξ(z) < ξ(z1), else 0.
#[inline]
pub fn q_site(xi_z: f64, xi_z1: f64) -> f64 {
    if xi_z < xi_z1 {
        -(-xi_z / xi_z1).ln_1p()
    } else {
        0.0
    }
}

pub fn m_bar(n_z1: u64, xi_z1: f64, gamma: f64) -> f64 {
    n_z1 as f64 / xi_z1 * (1.0 + gamma / xi_z1)
}

pub fn s_bar_inv(n_z1: u64, xi_z1: f64, gamma: f64) -> f64 {
    xi_z1 / (n_z1 as f64).sqrt() * (1.0 - gamma / xi_z1)
}

pub fn moment_stats(kset: &SiteSetK, alpha: f64) -> MomentStats {
    let x1 = kset.xi_z1;
    let mut excluded = 0u64;
    let mut side = |list: &[(i64, f64)]| {
        let (mut m, mut s2, mut q) = (0.0, 0.0, 0.0);
        for &(_, x) in list {
            if x < x1 {
                let d = x1 - x;
                m += 1.0 / d;
                s2 += 1.0 / (d * d);
                q += q_site(x, x1);
            } else {
                excluded += 1;
            }
        }
        (m, s2.sqrt(), q)
    };
    let (m_plus, sig_plus, q_plus) = side(&kset.k_plus);
    let (m_minus, sig_minus, q_minus) = side(&kset.k_minus);
    let gamma = alpha / (alpha - 1.0);
    MomentStats {
        m_plus,
        m_minus,
        sig_plus,
        sig_minus,
        m_bar: m_bar(kset.n_z1, x1, gamma),
        s_bar_inv: s_bar_inv(kset.n_z1, x1, gamma),
        gamma,
        q_plus,
        q_minus,
        q_t: q_plus - q_minus,
        excluded,
        empty_k: kset.size() == 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventFlags {
    pub e1: bool,
    pub e2: bool,
    pub ecr: bool,
    pub ecr_applicable: bool,
    /// f < z1/r < g, f < ξ(z1)/a < g, Ψ-gap to z2, Ψ(ze±) < Ψ(z2), ξ-gap on |z| ≤ R_t.
    pub e1_clauses: [bool; 5],
    /// K-size window, [z1−α, z1+α] ∩ ℕ ⊆ D, 2ξ(z) < ξ(z1) near z1.
    pub e2_clauses: [bool; 3],
    /// λM̄/a < g, a|M±−M̄| < g (two), f < 1/(√λ S̄) < g, a²|1/Σ± − 1/S̄| < g (two).
    pub ecr_clauses: [bool; 6],
    /// R_t exceeded the window, so the ξ-gap clause was checked on the window only.
    pub gap_truncated: bool,
}

pub fn check_events(
    field: &dyn Potential,
    sites: &LocalisationSites,
    kset: &SiteSetK,
    stats: &MomentStats,
    scales: &Scales,
    regime: Regime,
    eta_r: f64,
) -> EventFlags {
    let (f, g, a) = (scales.f_t, scales.g_t, scales.a_t);
    let z1 = sites.z1.z;
    let x1 = sites.z1.xi;
    let within = |v: f64| f < v && v < g;

    let ze_ok = [sites.ze_plus, sites.ze_minus]
        .iter()
        .all(|s| s.map(|s| s.psi < sites.z2.psi).unwrap_or(true));
    let big_r = scales.big_r(z1).floor().max(0.0) as u64;
    let gap_truncated = big_r > field.window();
    let mut gap_ok = true;
    let thr = x1 - a * f;
    field.scan(0, big_r.min(field.window()), thr, thr, &mut |s| {
        if s.n as i64 == z1 {
            // ±z1 are excluded; only a non-duplicated mirror could still violate.
            if !s.dup && s.xi_neg >= thr {
                gap_ok = false;
            }
        } else if s.xi_pos >= thr || (!s.dup && s.xi_neg >= thr) {
            gap_ok = false;
        }
    });
    let e1_clauses = [
        within(z1 as f64 / scales.r_t),
        within(x1 / a),
        (sites.z1.psi - sites.z2.psi) / a > f,
        ze_ok,
        gap_ok,
    ];

    let alpha = scales.alpha;
    let k_ratio = kset.theta_t.powf(alpha) * kset.size() as f64 / eta_r;
    let lo = ((z1 as f64 - alpha).ceil() as i64).max(1);
    let hi = (z1 as f64 + alpha).floor() as i64;
    let dup_ok = (lo..=hi).all(|n| n as u64 <= field.window() && field.is_dup(n as u64));
    let near_ok = (lo.min(z1 - alpha.floor() as i64)..=hi)
        .filter(|&z| z != z1 && (z - z1).unsigned_abs() as f64 <= alpha)
        .all(|z| z.unsigned_abs() <= field.window() && 2.0 * field.xi(z) < x1);
    let e2_clauses = [within(k_ratio), dup_ok, near_ok];

    let ecr_applicable = regime == Regime::Critical;
    let ecr_clauses = if ecr_applicable {
        let lr = scales.lambda_r();
        let sbi = stats.s_bar_inv;
        [
            lr / a * stats.m_bar < g,
            a * (stats.m_plus - stats.m_bar).abs() < g,
            a * (stats.m_minus - stats.m_bar).abs() < g,
            within(sbi / lr.sqrt()),
            a * a * (1.0 / stats.sig_plus - sbi).abs() < g,
            a * a * (1.0 / stats.sig_minus - sbi).abs() < g,
        ]
    } else {
        [true; 6]
    };
    EventFlags {
        e1: e1_clauses.iter().all(|&c| c),
        e2: e2_clauses.iter().all(|&c| c),
        ecr: ecr_clauses.iter().all(|&c| c),
        ecr_applicable,
        e1_clauses,
        e2_clauses,
        ecr_clauses,
        gap_truncated,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QMoment {
    pub exact: f64,
    pub asymptotic: f64,
    pub rel_gap: f64,
}

/// Conditional moment E[Q_t(z)^n] for ξ(z) Pareto(α) conditioned above θ, by
/// quadrature, next to its small-θ/ξ asymptotic form.
pub fn analytic_q_moments(theta_t: f64, xi_z1: f64, alpha: f64, n: u32) -> Result<QMoment> {
    if !(n == 1 || n == 2) {
        return Err(Error::Domain(format!("moment order {n} not in {{1, 2}}")));
    }
    let b = theta_t / xi_z1;
    if !(b > 0.0 && b < 0.5) {
        return Err(Error::Domain(format!("theta/xi = {b} must lie in (0, 1/2)")));
    }
    if !(alpha >= 2.0) {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    let exact = q_moment_quadrature(b, alpha, n)?;
    let asymptotic = if alpha == 2.0 && n == 2 {
        2.0 * b * b * (1.0 / b).ln()
    } else {
        alpha / (alpha - n as f64) * b.powi(n as i32)
    };
    Ok(QMoment { exact, asymptotic, rel_gap: (exact - asymptotic).abs() / asymptotic })
}

/// ∫_0^{−log b} [−log(1 − b e^s)]^n α e^{−αs} ds, the moment after y = b e^s.
fn q_moment_quadrature(b: f64, alpha: f64, n: u32) -> Result<f64> {
    let s_max = -b.ln();
    let f = |s: f64| {
        let y = b * s.exp();
        if y >= 1.0 {
            return 0.0;
        }
        (-(-y).ln_1p()).powi(n as i32) * alpha * (-alpha * s).exp()
    };
    // Bulk on [0, s_max − 1] where the integrand is smooth; the log singularity
    // at the upper end is left to the double-exponential rule.
    let split = (s_max - 1.0).max(0.0);
    let mut total = 0.0;
    let mut err = 0.0;
    for (lo, hi) in [(0.0, split), (split, s_max)] {
        if hi > lo {
            let out = quadrature::double_exponential::integrate(f, lo, hi, 1e-14);
            total += out.integral;
            err += out.error_estimate;
        }
    }
    if !total.is_finite() || err > 1e-8 * total.abs().max(1e-300) {
        return Err(Error::Numerical(format!("quadrature did not converge (est. error {err:e})")));
    }
    Ok(total)
}

/// Variance of Q_t(z) under the conditional law.
pub fn q_variance(theta_t: f64, xi_z1: f64, alpha: f64) -> Result<f64> {
    let m1 = analytic_q_moments(theta_t, xi_z1, alpha, 1)?.exact;
    let m2 = analytic_q_moments(theta_t, xi_z1, alpha, 2)?.exact;
    Ok(m2 - m1 * m1)
}

/// σ² = α/((α−2)(α−1)²) for α > 2 and 1 for α = 2.
pub fn sigma2(alpha: f64) -> f64 {
    if alpha > 2.0 {
        alpha / ((alpha - 2.0) * (alpha - 1.0).powi(2))
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalisationReport {
    pub seed: u64,
    pub t: f64,
    pub alpha: f64,
    pub scales: Scales,
    pub sites: LocalisationSites,
    pub theta_t: f64,
    pub k_plus: usize,
    pub k_minus: usize,
    pub n_z1: u64,
    pub eta_r: f64,
    pub moments: MomentStats,
    pub events: EventFlags,
}

/// Runs the whole localisation pipeline on one field.
pub fn localise(
    field: &dyn Potential,
    seed: u64,
    t: f64,
    profile: &RegimeProfile,
    eta_r: Option<f64>,
) -> Result<(LocalisationReport, SiteSetK)> {
    let scales = make_scales(t, field.alpha())?;
    let sites = find_maximisers(field, t, &scales)?;
    let regime = regime_of(profile)?;
    let eta_r = eta_r.unwrap_or_else(|| eta_at_r(&scales, profile));
    let th = theta_with_eta(&scales, regime, eta_r);
    let kset = build_k(field, &sites, th)?;
    let moments = moment_stats(&kset, field.alpha());
    let events = check_events(field, &sites, &kset, &moments, &scales, regime, eta_r);
    Ok((
        LocalisationReport {
            seed,
            t,
            alpha: field.alpha(),
            scales,
            theta_t: th,
            k_plus: kset.k_plus.len(),
            k_minus: kset.k_minus.len(),
            n_z1: kset.n_z1,
            eta_r,
            sites,
            moments,
            events,
        },
        kset,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_identities() {
        let s = make_scales(1e6, 3.0).unwrap();
        assert!((s.r_t / s.a_t.powi(3) - 1.0).abs() < 1e-12);
        assert!((s.a_t - 269.0).abs() < 0.2);
        let s2 = make_scales(500.0, 2.0).unwrap();
        let b = 500.0 / 500f64.ln();
        assert!((s2.a_t - b).abs() < 1e-9 * b);
        assert!((s2.r_t - b * b).abs() < 1e-9 * b * b);
        assert!(make_scales(7.0, 3.0).is_err());
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(10.0, 0, 3.5), 3.5);
        assert_eq!(psi(10.0, 17, 1.0), 1.0);
        assert!((psi(1.0, 1, std::f64::consts::E) - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn moment_arithmetic() {
        let k = SiteSetK {
            theta_t: 1.0,
            z1: 20,
            xi_z1: 10.0,
            k_plus: vec![(3, 5.0)],
            k_minus: vec![(-4, 10.0)],
            n_z1: 100,
            zeta: Some(10.0),
            heur_log: 0.0,
            heur_taylor: 0.0,
            heur_abs: 0.0,
        };
        let m = moment_stats(&k, 3.0);
        assert!((m.m_plus - 0.2).abs() < 1e-15);
        assert!((m.sig_plus.powi(2) - 0.04).abs() < 1e-15);
        assert!((m.q_plus - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.q_minus, 0.0);
        assert_eq!(m.excluded, 1);
        assert!((m.m_bar - 11.5).abs() < 1e-12);
        assert!((m.s_bar_inv - 0.85).abs() < 1e-12);
    }

    #[test]
    fn sigma_at_three() {
        assert!((sigma2(3.0) - 0.75).abs() < 1e-15);
        assert_eq!(sigma2(2.0), 1.0);
    }
}
