//! Replicate pipeline and the Monte Carlo suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::limit::{mu_box, mu_hat_box, sample_limit_b, PpBox};
use crate::localisation::{
    build_k, check_events, find_maximisers_checked, make_scales, moment_stats, q_site, q_variance,
    regime_of, sigma2, theta_with_eta, analytic_q_moments, EventFlags, LocalisationSites, Regime, Scales,
};
use crate::model::{eta_approx, FieldGen, Potential, RegimeKind, RegimeProfile};
use crate::rng::derive_seed;
use crate::solver::{observables_at, solve_values, window_values, Observables, SolveOptions};
use crate::spectral::{solve_spectral, SpectralOptions};
use crate::stats::{
    ks_one_sample, ks_two_sample, mann_kendall_groups, median, median_ci, poisson_gof, quantile, Trend,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Log-space ODE for t ≤ `ode_max_t`, spectral above.
    Auto,
    Ode,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowPolicy {
    /// ⌈factor·max|Z|⌉ + pad over all maximisers, capped at the search radius.
    Auto { factor: f64, pad: u64 },
    /// Fixed half-width; must still cover every maximiser.
    Fixed { l: u64 },
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::Auto { factor: 1.25, pad: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Trend tests pass below this p-value.
    pub trend: f64,
    /// Goodness-of-fit tests pass above this p-value.
    pub gof: f64,
}

impl Default for Significance {
    fn default() -> Self {
        Significance { trend: 0.05, gof: 0.001 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub profile: RegimeProfile,
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    pub window: WindowPolicy,
    pub solver: SolverChoice,
    pub ode_max_t: f64,
    /// Relative tolerance of the ODE solver.
    pub tolerance: f64,
    pub significance: Significance,
    /// Re-scan the maximisers at twice the radius.
    pub stability_check: bool,
    /// Size of simulated limit-law reference samples.
    pub reference_size: usize,
}

impl ExperimentConfig {
    pub fn new(profile: RegimeProfile, t_grid: Vec<f64>, replicates: usize, base_seed: u64) -> Self {
        ExperimentConfig {
            alpha: profile.alpha,
            profile,
            t_grid,
            replicates,
            base_seed,
            window: WindowPolicy::default(),
            solver: SolverChoice::Auto,
            ode_max_t: 100.0,
            tolerance: 1e-8,
            significance: Significance::default(),
            stability_check: false,
            reference_size: 20_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.alpha != self.profile.alpha {
            return Err(Error::Precondition(format!(
                "alpha {} differs from the profile's {}",
                self.alpha, self.profile.alpha
            )));
        }
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("t_grid must be non-empty and strictly increasing".into()));
        }
        if self.t_grid.iter().any(|&t| !(t > std::f64::consts::E.powi(2)) || !t.is_finite()) {
            return Err(Error::Domain("every t must exceed e^2".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Precondition("replicates must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1e-2) {
            return Err(Error::Domain(format!("tolerance {}", self.tolerance)));
        }
        if let WindowPolicy::Auto { factor, .. } = self.window {
            if !(factor >= 1.0) {
                return Err(Error::Domain(format!("window factor {factor} < 1")));
            }
        }
        Ok(())
    }

    pub fn seed_of(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }

    fn require_statistical(&self) -> Result<()> {
        if self.replicates < 30 {
            return Err(Error::Underpowered(format!("{} replicates; at least 30 needed", self.replicates)));
        }
        Ok(())
    }
}

/// Per-t quantities shared by all replicates.
#[derive(Clone, Debug)]
pub struct TContext {
    pub t: f64,
    pub scales: Scales,
    pub regime: Regime,
    pub eta_r: f64,
    pub theta_t: f64,
}

pub fn contexts(config: &ExperimentConfig) -> Result<Vec<TContext>> {
    let regime = regime_of(&config.profile)?;
    config
        .t_grid
        .iter()
        .map(|&t| {
            let scales = make_scales(t, config.alpha)?;
            let eta_r = eta_approx(&config.profile, scales.r_t.floor() as u64);
            Ok(TContext { t, scales, regime, eta_r, theta_t: theta_with_eta(&scales, regime, eta_r) })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverUsed {
    Ode,
    Spectral,
}

/// Everything recorded for one (seed, t). Non-finite values are stored as
/// `None` with a flag saying why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TValues {
    pub solver: SolverUsed,
    pub window: u64,
    /// The solver resolved both ±z1 above its dropped-mode floor.
    pub resolved: bool,
    pub log_mass: f64,
    /// log u(z1)/u(−z1); `None` when one side underflowed.
    pub log_ratio: Option<f64>,
    pub infinite_ratio: bool,
    /// Sign of the log-ratio, also for the infinite case.
    pub ratio_sign: i8,
    pub two_site_mass: f64,
    pub top_site_mass: f64,
    pub z1: i64,
    pub xi_z1: f64,
    pub psi_z1: f64,
    pub z2: i64,
    pub xi_z2: f64,
    pub psi_z2: f64,
    pub z_global: i64,
    pub theta_t: f64,
    pub k_plus: usize,
    pub k_minus: usize,
    /// N(z1) = |E ∩ [1, z1)|.
    pub n_z1: u64,
    pub eta_z1: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub sig_plus: f64,
    pub sig_minus: f64,
    pub m_bar: f64,
    pub s_bar_inv: f64,
    pub q_t: f64,
    /// Var Q_t(z) for one site under the conditional law; `None` when θ/ξ(z1) ≥ 1/2.
    pub var_q_site: Option<f64>,
    /// |K⁺ ∪ K⁻|·Var Q_t(z).
    pub var_q: Option<f64>,
    pub heur_log: f64,
    pub heur_taylor: f64,
    pub heur_abs: f64,
    pub zeta: Option<f64>,
    pub events: EventFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TRecord {
    pub t: f64,
    pub status: Status,
    pub error: Option<String>,
    pub values: Option<TValues>,
}

impl TRecord {
    pub fn ok(&self) -> Option<&TValues> {
        self.values.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub per_t: Vec<TRecord>,
}

fn window_for(config: &ExperimentConfig, scales: &Scales, sites: &LocalisationSites) -> Result<u64> {
    let mut zs = vec![sites.z1.z, sites.z2.z, sites.z1_star.z, sites.z2_star.z, sites.z_global.z];
    zs.extend(sites.ze_plus.map(|s| s.z));
    zs.extend(sites.ze_minus.map(|s| s.z));
    let zmax = zs.iter().map(|z| z.unsigned_abs()).max().unwrap_or(0);
    let l = match config.window {
        WindowPolicy::Auto { factor, pad } => ((factor * zmax as f64).ceil() as u64 + pad).min(scales.search_radius()),
        WindowPolicy::Fixed { l } => l,
    };
    if l < zmax.max(1) {
        return Err(Error::InsufficientWindow { window: l, radius: zmax });
    }
    Ok(l.max(1))
}

/// Full pipeline for one field at one t.
pub fn run_replicate_at(config: &ExperimentConfig, ctx: &TContext, seed: u64) -> Result<TValues> {
    let field = FieldGen::new(config.profile.clone(), seed)?;
    let t = ctx.t;
    let sc = &ctx.scales;
    let sites = find_maximisers_checked(&field, t, sc.search_radius(), config.stability_check)?;
    let l = window_for(config, sc, &sites)?;
    let z1 = sites.z1.z;
    let use_ode = match config.solver {
        SolverChoice::Ode => true,
        SolverChoice::Spectral => false,
        SolverChoice::Auto => t <= config.ode_max_t,
    };
    let (obs, solver, resolved, log_mass): (Observables, SolverUsed, bool, f64) = if use_ode {
        let opts = SolveOptions { tol: config.tolerance, ..SolveOptions::default() };
        let st = solve_values(&window_values(&field, l)?, &[t], &opts)?.remove(0);
        (observables_at(&st, z1), SolverUsed::Ode, true, st.log_mass)
    } else {
        let sp = solve_spectral(&field, t, l, sites.z_global.z, &[z1, -z1], &SpectralOptions::default())?;
        (observables_at(&sp, z1), SolverUsed::Spectral, sp.resolved, sp.log_mass)
    };
    let kset = build_k(&field, &sites, ctx.theta_t)?;
    let m = moment_stats(&kset, config.alpha);
    let events = check_events(&field, &sites, &kset, &m, sc, ctx.regime, ctx.eta_r);
    let var_q_site = q_variance(ctx.theta_t, sites.z1.xi, config.alpha).ok();
    let ratio_sign = if obs.log_ratio > 0.0 {
        1
    } else if obs.log_ratio < 0.0 {
        -1
    } else {
        0
    };
    Ok(TValues {
        solver,
        window: l,
        resolved,
        log_mass,
        log_ratio: obs.log_ratio.is_finite().then_some(obs.log_ratio),
        infinite_ratio: obs.infinite_ratio,
        ratio_sign,
        two_site_mass: obs.two_site_mass,
        top_site_mass: obs.top_site_mass,
        z1,
        xi_z1: sites.z1.xi,
        psi_z1: sites.z1.psi,
        z2: sites.z2.z,
        xi_z2: sites.z2.xi,
        psi_z2: sites.z2.psi,
        z_global: sites.z_global.z,
        theta_t: ctx.theta_t,
        k_plus: kset.k_plus.len(),
        k_minus: kset.k_minus.len(),
        n_z1: kset.n_z1,
        eta_z1: eta_approx(&config.profile, (z1 - 1).max(0) as u64),
        m_plus: m.m_plus,
        m_minus: m.m_minus,
        sig_plus: m.sig_plus,
        sig_minus: m.sig_minus,
        m_bar: m.m_bar,
        s_bar_inv: m.s_bar_inv,
        q_t: m.q_t,
        var_q_site,
        var_q: var_q_site.map(|v| kset.size() as f64 * v),
        heur_log: kset.heur_log,
        heur_taylor: kset.heur_taylor,
        heur_abs: kset.heur_abs,
        zeta: kset.zeta,
        events,
    })
}

/// All t of one replicate; errors become failure records.
pub fn run_replicate(config: &ExperimentConfig, ctxs: &[TContext], index: usize) -> ReplicateResult {
    let seed = config.seed_of(index);
    let per_t = ctxs
        .iter()
        .map(|ctx| match run_replicate_at(config, ctx, seed) {
            Ok(v) => TRecord { t: ctx.t, status: Status::Ok, error: None, values: Some(v) },
            Err(e) => TRecord { t: ctx.t, status: Status::Failed, error: Some(e.to_string()), values: None },
        })
        .collect();
    ReplicateResult { index, seed, per_t }
}

/// Runs every replicate on a pool of `threads` workers (0: rayon's default).
/// The output order is the replicate order whatever the thread count.
pub fn run_batch(
    config: &ExperimentConfig,
    threads: usize,
    progress: Option<&(dyn Fn(usize) + Sync)>,
) -> Result<Vec<ReplicateResult>> {
    config.validate()?;
    let ctxs = contexts(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<ReplicateResult> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|i| {
                let r = run_replicate(config, &ctxs, i);
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                if let Some(p) = progress {
                    p(k);
                }
                r
            })
            .collect()
    });
    out.sort_by_key(|r| r.seed);
    Ok(out)
}

/// Values of one observable per t, failures skipped.
fn column(results: &[ReplicateResult], ti: usize, f: impl Fn(&TValues) -> Option<f64>) -> Vec<f64> {
    results.iter().filter_map(|r| r.per_t.get(ti).and_then(|rec| rec.ok()).and_then(&f)).collect()
}

/// |log_ratio| with ∞ for an underflowed side.
fn abs_log_ratio(v: &TValues) -> Option<f64> {
    Some(match v.log_ratio {
        Some(x) => x.abs(),
        None => f64::INFINITY,
    })
}

fn signed_log_ratio(v: &TValues) -> Option<f64> {
    Some(match v.log_ratio {
        Some(x) => x,
        None => v.ratio_sign as f64 * f64::INFINITY,
    })
}

fn failures(results: &[ReplicateResult], ti: usize) -> usize {
    results.iter().filter(|r| r.per_t.get(ti).is_none_or(|rec| rec.status == Status::Failed)).count()
}

/// Per-t aggregates written to summary.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: f64,
    pub ok: usize,
    pub failed: usize,
    pub unresolved: usize,
    pub median_log_ratio: Option<f64>,
    pub median_abs_log_ratio: Option<f64>,
    pub median_two_site_mass: Option<f64>,
    pub two_site_mass_ci_lo: Option<f64>,
    pub two_site_mass_ci_hi: Option<f64>,
    pub median_q_t: Option<f64>,
    pub median_var_q: Option<f64>,
    /// Fraction of replicates with N(z1)/η(z1) in [0.8, 1.25].
    pub nn_in_band: Option<f64>,
    pub median_heur_gap: Option<f64>,
    pub e1_rate: Option<f64>,
    pub e2_rate: Option<f64>,
}

pub fn summarise(config: &ExperimentConfig, results: &[ReplicateResult]) -> Vec<SummaryRow> {
    config
        .t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let recs: Vec<&TValues> = results.iter().filter_map(|r| r.per_t.get(ti).and_then(|x| x.ok())).collect();
            let n = recs.len();
            let rate = |f: &dyn Fn(&TValues) -> bool| (n > 0).then(|| recs.iter().filter(|v| f(v)).count() as f64 / n as f64);
            let two = column(results, ti, |v| Some(v.two_site_mass));
            let ci = median_ci(&two, 0.95);
            let nn: Vec<f64> = column(results, ti, |v| (v.eta_z1 > 0.0).then(|| v.n_z1 as f64 / v.eta_z1));
            SummaryRow {
                t,
                ok: n,
                failed: failures(results, ti),
                unresolved: recs.iter().filter(|v| !v.resolved).count(),
                median_log_ratio: median(&column(results, ti, signed_log_ratio)),
                median_abs_log_ratio: median(&column(results, ti, abs_log_ratio)),
                median_two_site_mass: median(&two),
                two_site_mass_ci_lo: ci.map(|c| c.0),
                two_site_mass_ci_hi: ci.map(|c| c.1),
                median_q_t: median(&column(results, ti, |v| Some(v.q_t))),
                median_var_q: median(&column(results, ti, |v| v.var_q)),
                nn_in_band: (!nn.is_empty())
                    .then(|| nn.iter().filter(|&&x| (0.8..=1.25).contains(&x)).count() as f64 / nn.len() as f64),
                median_heur_gap: median(&column(results, ti, |v| v.log_ratio.map(|x| (x - v.q_t).abs()))),
                e1_rate: rate(&|v| v.events.e1),
                e2_rate: rate(&|v| v.events.e2),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub suite: String,
    pub pass: bool,
    pub statistics: Value,
}

const MAX_FAILURE_RATE: f64 = 0.05;

fn failure_rates(config: &ExperimentConfig, results: &[ReplicateResult]) -> (Vec<f64>, bool) {
    let rates: Vec<f64> = (0..config.t_grid.len())
        .map(|ti| failures(results, ti) as f64 / results.len().max(1) as f64)
        .collect();
    let ok = rates.iter().all(|&r| r <= MAX_FAILURE_RATE);
    (rates, ok)
}

fn check_batch(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<()> {
    config.validate()?;
    if results.iter().any(|r| r.per_t.len() != config.t_grid.len()) {
        return Err(Error::Precondition("results do not match the t grid".into()));
    }
    Ok(())
}

/// Median two-site mass non-decreasing in t and above 0.9 at the largest t.
pub fn localisation_suite(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Verdict> {
    check_batch(config, results)?;
    if config.t_grid.len() < 3 {
        return Err(Error::Precondition("localisation suite needs at least 3 t values".into()));
    }
    config.require_statistical()?;
    let nt = config.t_grid.len();
    let cols: Vec<Vec<f64>> = (0..nt).map(|ti| column(results, ti, |v| Some(v.two_site_mass))).collect();
    let medians: Vec<f64> = cols.iter().map(|c| median(c).unwrap_or(f64::NAN)).collect();
    let ci = median_ci(&cols[nt - 1], 0.95);
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let last = medians[nt - 1];
    let (rates, fail_ok) = failure_rates(config, results);
    Ok(Verdict {
        suite: "localisation".into(),
        pass: monotone && last > 0.9 && fail_ok,
        statistics: json!({
            "t_grid": config.t_grid,
            "median_two_site_mass": medians,
            "non_decreasing": monotone,
            "last_median": last,
            "last_median_ci95": ci.map(|c| [c.0, c.1]),
            "failure_rates": rates,
        }),
    })
}

/// Trend of `f` across t: replicate-level Mann–Kendall plus monotone medians.
fn trend_verdict(
    suite: &str,
    config: &ExperimentConfig,
    results: &[ReplicateResult],
    f: impl Fn(&TValues) -> Option<f64> + Copy,
    direction: Trend,
    degenerate_passes: bool,
) -> Result<Verdict> {
    let nt = config.t_grid.len();
    let groups: Vec<Vec<f64>> = (0..nt).map(|ti| column(results, ti, f)).collect();
    let medians: Vec<f64> = groups.iter().map(|g| median(g).unwrap_or(f64::NAN)).collect();
    let mk = mann_kendall_groups(&groups, direction)?;
    let monotone = match direction {
        Trend::Decreasing => medians.windows(2).all(|w| w[1] < w[0]),
        Trend::Increasing => medians.windows(2).all(|w| w[1] > w[0]),
    };
    let (rates, fail_ok) = failure_rates(config, results);
    let pass = if mk.degenerate {
        degenerate_passes && fail_ok
    } else {
        mk.p_value < config.significance.trend && monotone && fail_ok
    };
    Ok(Verdict {
        suite: suite.into(),
        pass,
        statistics: json!({
            "t_grid": config.t_grid,
            "direction": format!("{direction:?}").to_lowercase(),
            "medians": medians,
            "medians_monotone": monotone,
            "mann_kendall_s": mk.s,
            "mann_kendall_var": mk.var_s,
            "mann_kendall_z": mk.z,
            "p_value": mk.p_value,
            "degenerate_constant": mk.degenerate,
            "failure_rates": rates,
        }),
    })
}

fn phase_direction(config: &ExperimentConfig, suite: &str) -> Result<(Regime, Trend)> {
    let regime = regime_of(&config.profile)?;
    match regime {
        Regime::Subcritical => Ok((regime, Trend::Decreasing)),
        Regime::Supercritical => Ok((regime, Trend::Increasing)),
        Regime::Critical => Err(Error::WrongSuite(format!("{suite} needs a subcritical or supercritical profile"))),
    }
}

/// Median |log_ratio| decreasing (subcritical) or increasing (supercritical).
pub fn phase_suite(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Verdict> {
    let (regime, dir) = phase_direction(config, "phase suite")?;
    check_batch(config, results)?;
    config.require_statistical()?;
    if config.t_grid.len() < 2 {
        return Err(Error::Precondition("phase suite needs at least 2 t values".into()));
    }
    trend_verdict("phase", config, results, abs_log_ratio, dir, regime == Regime::Subcritical)
}

fn require_critical(config: &ExperimentConfig, suite: &str) -> Result<f64> {
    if regime_of(&config.profile)? != Regime::Critical {
        return Err(Error::WrongSuite(format!("{suite} needs a critical profile")));
    }
    config.profile.beta.ok_or_else(|| Error::Precondition("critical profile without beta".into()))
}

/// √(2β)·σ·B·N with B from the limit sampler and N standard normal.
pub fn critical_reference(alpha: f64, beta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let b = sample_limit_b(alpha, n, derive_seed(seed, 0xb))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4e));
    let scale = (2.0 * beta).sqrt() * sigma2(alpha).sqrt();
    Ok(b.iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * s.b * z
        })
        .collect())
}

/// 2β·σ²·B².
pub fn variance_reference(alpha: f64, beta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let b = sample_limit_b(alpha, n, derive_seed(seed, 0xb))?;
    let scale = 2.0 * beta * sigma2(alpha);
    Ok(b.iter().map(|s| scale * s.b * s.b).collect())
}

fn ks_trend_verdict(
    suite: &str,
    config: &ExperimentConfig,
    results: &[ReplicateResult],
    reference: &[f64],
    f: impl Fn(&TValues) -> Option<f64> + Copy,
) -> Result<Verdict> {
    let nt = config.t_grid.len();
    let mut ks = Vec::with_capacity(nt);
    let mut pv = Vec::with_capacity(nt);
    for ti in 0..nt {
        let r = ks_two_sample(&column(results, ti, f), reference)?;
        ks.push(r.statistic);
        pv.push(r.p_value);
    }
    let non_increasing = ks.windows(2).all(|w| w[1] <= w[0]);
    let last = ks[nt - 1];
    let (rates, fail_ok) = failure_rates(config, results);
    Ok(Verdict {
        suite: suite.into(),
        pass: non_increasing && last <= 0.15 && fail_ok,
        statistics: json!({
            "t_grid": config.t_grid,
            "ks_distance": ks,
            "ks_p_value": pv,
            "non_increasing": non_increasing,
            "last_ks": last,
            "threshold": 0.15,
            "reference_size": reference.len(),
            "failure_rates": rates,
        }),
    })
}

/// KS distance of log_ratio to the √(2β)σBN reference, non-increasing in t
/// and at most 0.15 at the largest t.
pub fn critical_suite(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Verdict> {
    let beta = require_critical(config, "critical suite")?;
    check_batch(config, results)?;
    if config.replicates < 200 || results.len() < 200 {
        return Err(Error::Underpowered(format!("{} replicates; critical suite needs 200", results.len())));
    }
    let reference = critical_reference(config.alpha, beta, config.reference_size, config.base_seed)?;
    ks_trend_verdict("critical", config, results, &reference, signed_log_ratio)
}

/// Conditional variance |K|·Var Q_t(z): trend by regime, or KS to 2βσ²B².
pub fn variance_suite(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Verdict> {
    check_batch(config, results)?;
    if results.len() < 200 {
        return Err(Error::Underpowered(format!("{} replicates; variance suite needs 200", results.len())));
    }
    let var = |v: &TValues| v.var_q.or(if v.k_plus + v.k_minus == 0 { Some(0.0) } else { None });
    match regime_of(&config.profile)? {
        Regime::Subcritical => trend_verdict("variance", config, results, var, Trend::Decreasing, true),
        Regime::Supercritical => trend_verdict("variance", config, results, var, Trend::Increasing, false),
        Regime::Critical => {
            let beta = require_critical(config, "variance suite")?;
            let reference = variance_reference(config.alpha, beta, config.reference_size, config.base_seed)?;
            ks_trend_verdict("variance", config, results, &reference, var)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltOutcome {
    pub ks: f64,
    pub p_value: f64,
    pub sums: usize,
    pub mean_q: f64,
    pub var_q: f64,
}

/// Direct simulation of the conditional CLT: 500 sums of k i.i.d. Q_t(z)
/// (half on each side of the origin) for ξ(z) Pareto(α) above θ and
/// ξ(z1) = θ/(θ/ξ), centred and scaled by the quadrature moments.
pub fn clt_suite(alpha: f64, theta_over_xi: f64, k_size: usize, seed: u64) -> Result<(Verdict, CltOutcome)> {
    const SUMS: usize = 500;
    if k_size < 1000 {
        return Err(Error::Underpowered(format!("k_size {k_size} < 1000")));
    }
    if !(theta_over_xi > 0.0 && theta_over_xi <= 1e-2) {
        return Err(Error::Precondition(format!("theta/xi = {theta_over_xi} must lie in (0, 1e-2]")));
    }
    if !(alpha >= 2.0) {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    let xi1 = 1.0;
    let theta = theta_over_xi * xi1;
    let m1 = analytic_q_moments(theta, xi1, alpha, 1)?.exact;
    let var = analytic_q_moments(theta, xi1, alpha, 2)?.exact - m1 * m1;
    if !(var > 0.0) {
        return Err(Error::Domain("zero conditional variance".into()));
    }
    let (kp, km) = (k_size - k_size / 2, k_size / 2);
    let centre = (kp as f64 - km as f64) * m1;
    let scale = (k_size as f64 * var).sqrt();
    let v: Vec<f64> = (0..SUMS)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut draw = || {
                let u: f64 = rand::Rng::random(&mut rng);
                q_site(theta * (1.0 - u).powf(-1.0 / alpha), xi1)
            };
            let plus: f64 = (0..kp).map(|_| draw()).sum();
            let minus: f64 = (0..km).map(|_| draw()).sum();
            (plus - minus - centre) / scale
        })
        .collect();
    let norm = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let r = ks_one_sample(&v, |x| statrs::distribution::ContinuousCDF::cdf(&norm, x))?;
    let outcome = CltOutcome { ks: r.statistic, p_value: r.p_value, sums: SUMS, mean_q: m1, var_q: var };
    Ok((
        Verdict {
            suite: "clt".into(),
            pass: r.statistic < 0.05,
            statistics: json!({
                "alpha": alpha,
                "theta_over_xi": theta_over_xi,
                "k_size": k_size,
                "ks": r.statistic,
                "ks_p_value": r.p_value,
                "threshold": 0.05,
                "sums": SUMS,
            }),
        },
        outcome,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    /// Duplicated sites, scaled by (s, s^{1/α}); limit Π.
    Dup,
    /// Non-duplicated sites under the critical scaling; limit Π̂.
    Excl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub kind: BoxKind,
    pub bx: PpBox,
}

pub fn default_boxes(profile: &RegimeProfile) -> Vec<BoxSpec> {
    let inf = f64::INFINITY;
    let mut v = vec![
        BoxSpec { kind: BoxKind::Dup, bx: PpBox::new(0.0, 1.0, 1.0, inf) },
        BoxSpec { kind: BoxKind::Dup, bx: PpBox::new(1.0, 2.0, 1.5, inf) },
        BoxSpec { kind: BoxKind::Dup, bx: PpBox::new(0.0, 1.0, 0.7, 1.0) },
        BoxSpec { kind: BoxKind::Dup, bx: PpBox::new(2.0, 4.0, 2.5, inf) },
    ];
    if profile.kind == RegimeKind::Critical {
        v.push(BoxSpec { kind: BoxKind::Excl, bx: PpBox::new(0.0, 1.0, 1.0, inf) });
    }
    v
}

/// y-scale of the non-duplicated process in the critical regime.
pub fn excl_scale(alpha: f64, s: f64) -> f64 {
    if alpha > 2.0 {
        s.powf(2.0 / (alpha * alpha))
    } else {
        (s / s.ln()).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxOutcome {
    pub spec: BoxSpec,
    pub mu: f64,
    pub mean_count: f64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Point counts of the rescaled field in each box over `n_fields` fields,
/// each compared with Poisson(μ) by chi-square.
pub fn point_process_suite(
    profile: &RegimeProfile,
    s: f64,
    n_fields: usize,
    boxes: &[BoxSpec],
    base_seed: u64,
    significance: &Significance,
) -> Result<(Verdict, Vec<BoxOutcome>)> {
    profile.validate()?;
    let alpha = profile.alpha;
    if !(s > 1.0) {
        return Err(Error::Domain(format!("scale s = {s}")));
    }
    if n_fields < 30 {
        return Err(Error::Underpowered(format!("{n_fields} fields")));
    }
    let beta = if boxes.iter().any(|b| b.kind == BoxKind::Excl) {
        if profile.kind != RegimeKind::Critical {
            return Err(Error::WrongSuite("non-duplicated boxes need a critical profile".into()));
        }
        profile.beta.ok_or_else(|| Error::Precondition("critical profile without beta".into()))?
    } else {
        0.0
    };
    let mus: Vec<f64> = boxes
        .iter()
        .map(|b| match b.kind {
            BoxKind::Dup => mu_box(alpha, &b.bx),
            BoxKind::Excl => mu_hat_box(alpha, beta, &b.bx),
        })
        .collect::<Result<_>>()?;
    let yd = s.powf(1.0 / alpha);
    let ye = excl_scale(alpha, s);
    let n_max = boxes.iter().map(|b| (b.bx.x1 * s).ceil() as u64).max().unwrap_or(0);
    let thr = boxes
        .iter()
        .map(|b| b.bx.y0 * if b.kind == BoxKind::Dup { yd } else { ye })
        .fold(f64::INFINITY, f64::min);
    let counts: Vec<Vec<u64>> = (0..n_fields)
        .into_par_iter()
        .map(|i| -> Result<Vec<u64>> {
            let field = FieldGen::new(profile.clone(), base_seed.wrapping_add(i as u64))?;
            let mut c = vec![0u64; boxes.len()];
            field.scan(0, n_max, thr, f64::INFINITY, &mut |p| {
                let x = p.n as f64 / s;
                for (k, b) in boxes.iter().enumerate() {
                    let hit = match b.kind {
                        BoxKind::Dup => p.dup && b.bx.contains(x, p.xi_pos / yd),
                        BoxKind::Excl => !p.dup && p.n > 0 && b.bx.contains(x, p.xi_pos / ye),
                    };
                    if hit {
                        c[k] += 1;
                    }
                }
            });
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut outcomes = Vec::new();
    for (k, spec) in boxes.iter().enumerate() {
        let col: Vec<u64> = counts.iter().map(|c| c[k]).collect();
        let r = poisson_gof(&col, mus[k])?;
        outcomes.push(BoxOutcome {
            spec: *spec,
            mu: mus[k],
            mean_count: col.iter().sum::<u64>() as f64 / n_fields as f64,
            chi2: r.statistic,
            df: r.df,
            p_value: r.p_value,
        });
    }
    let pass = outcomes.iter().all(|o| o.p_value > significance.gof);
    Ok((
        Verdict {
            suite: "point_process".into(),
            pass,
            statistics: json!({
                "s": s,
                "n_fields": n_fields,
                "boxes": outcomes,
                "threshold": significance.gof,
            }),
        },
        outcomes,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicReport {
    pub log_ratio: Option<f64>,
    /// Q_t over K.
    pub q_t: f64,
    /// Full sum over E ∩ [1, z1).
    pub heur_log: f64,
    /// First-order Taylor proxy.
    pub heur_taylor: f64,
    pub gap_ratio_q: Option<f64>,
    pub gap_ratio_heur: Option<f64>,
    pub gap_taylor: f64,
    /// Bound on |heur_taylor − heur_log| from ζ/ξ(z1); `None` when ζ ≥ ξ(z1).
    pub second_order_bound: Option<f64>,
}

/// Side-by-side heuristic quantities for one record; no verdict.
pub fn heuristic_diagnostics(v: &TValues) -> HeuristicReport {
    let bound = v.zeta.map_or(Some(0.0), |z| {
        let x = z / v.xi_z1;
        (x < 1.0).then(|| x / (2.0 * (1.0 - x)) * v.heur_abs)
    });
    HeuristicReport {
        log_ratio: v.log_ratio,
        q_t: v.q_t,
        heur_log: v.heur_log,
        heur_taylor: v.heur_taylor,
        gap_ratio_q: v.log_ratio.map(|x| (x - v.q_t).abs()),
        gap_ratio_heur: v.log_ratio.map(|x| (x - v.heur_log).abs()),
        gap_taylor: (v.heur_taylor - v.heur_log).abs(),
        second_order_bound: bound,
    }
}

/// λ(t)^{1/2}·ζ_t / a_t^{2/α}, or `None` when E is empty below z1.
pub fn zeta_statistic(v: &TValues, scales: &Scales) -> Option<f64> {
    v.zeta.map(|z| scales.lambda_t.sqrt() * z / scales.a_t.powf(2.0 / scales.alpha))
}

/// Percentiles of the ζ statistic per t and the spread ratio between t's.
pub fn zeta_report(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Verdict> {
    require_critical(config, "zeta report")?;
    check_batch(config, results)?;
    let ctxs = contexts(config)?;
    let mut rows = Vec::new();
    let mut bounded = true;
    let mut iqrs = Vec::new();
    for (ti, ctx) in ctxs.iter().enumerate() {
        let vals = column(results, ti, |v| zeta_statistic(v, &ctx.scales));
        let empty = results.len() - vals.len() - failures(results, ti);
        let p01 = quantile(&vals, 0.01);
        let p99 = quantile(&vals, 0.99);
        let iqr = quantile(&vals, 0.75).zip(quantile(&vals, 0.25)).map(|(a, b)| a - b);
        bounded &= matches!((p01, p99), (Some(a), Some(b)) if a >= 1e-3 && b <= 1e3);
        iqrs.extend(iqr);
        rows.push(json!({ "t": ctx.t, "p01": p01, "p99": p99, "iqr": iqr, "empty_e": empty }));
    }
    let stable = iqrs.windows(2).all(|w| w[0] > 0.0 && (1.0 / 3.0..=3.0).contains(&(w[1] / w[0])));
    Ok(Verdict { suite: "zeta".into(), pass: bounded && stable, statistics: json!({ "per_t": rows, "iqr_stable": stable }) })
}

/// Median gap |log_ratio − Q_t| per t; diagnostic only.
pub fn heuristic_report(config: &ExperimentConfig, results: &[ReplicateResult]) -> Result<Value> {
    check_batch(config, results)?;
    if regime_of(&config.profile)? == Regime::Supercritical {
        return Err(Error::WrongSuite("heuristics apply to sub- and critical profiles".into()));
    }
    let rows: Vec<Value> = (0..config.t_grid.len())
        .map(|ti| {
            let reps: Vec<HeuristicReport> = results
                .iter()
                .filter_map(|r| r.per_t[ti].ok().map(heuristic_diagnostics))
                .collect();
            let gq: Vec<f64> = reps.iter().filter_map(|h| h.gap_ratio_q).collect();
            let gh: Vec<f64> = reps.iter().filter_map(|h| h.gap_ratio_heur).collect();
            let gt: Vec<f64> = reps.iter().map(|h| h.gap_taylor).collect();
            let within = reps
                .iter()
                .filter(|h| h.second_order_bound.is_some_and(|b| h.gap_taylor <= b * (1.0 + 1e-9) + 1e-12))
                .count();
            json!({
                "t": config.t_grid[ti],
                "median_gap_ratio_q": median(&gq),
                "median_gap_ratio_heur": median(&gh),
                "median_gap_taylor": median(&gt),
                "taylor_within_bound": within,
                "records": reps.len(),
            })
        })
        .collect();
    Ok(json!({ "per_t": rows }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffled_grid_is_rejected() {
        let c = ExperimentConfig::new(RegimeProfile::critical(3.0, 1.0), vec![1e4, 1e3, 1e5], 40, 0);
        assert!(matches!(c.validate(), Err(Error::Precondition(_))));
    }

    #[test]
    fn critical_profile_rejected_by_phase_suite() {
        let c = ExperimentConfig::new(RegimeProfile::critical(3.0, 1.0), vec![1e2, 1e3], 40, 0);
        assert!(matches!(phase_suite(&c, &[]), Err(Error::WrongSuite(_))));
    }

    #[test]
    fn clt_rejects_small_k() {
        assert!(matches!(clt_suite(3.0, 1e-3, 10, 0), Err(Error::Underpowered(_))));
    }

    #[test]
    fn reference_scales_with_beta() {
        let a = critical_reference(3.0, 1.0, 200, 4).unwrap();
        let b = critical_reference(3.0, 2.0, 200, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 2f64.sqrt()).abs() < 1e-12);
        }
    }
}
