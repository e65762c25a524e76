//! Duplicated Pareto potential: profiles q(n), counting functions and fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Stream, StreamKey};

/// Inverse CDF of F(x) = 1 − x^{−α} on [1, ∞).
pub fn pareto_quantile(u: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!("uniform {u} not in [0,1)")));
    }
    if !(alpha >= 2.0) {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    Ok(pareto_unchecked(u, alpha))
}

#[inline]
pub(crate) fn pareto_unchecked(u: f64, alpha: f64) -> f64 {
    (1.0 - u).powf(-1.0 / alpha)
}

/// Uniform level above which the Pareto draw exceeds `x`.
#[inline]
pub(crate) fn pareto_u_level(x: f64, alpha: f64) -> f64 {
    if x <= 1.0 {
        -1.0
    } else {
        1.0 - x.powf(-alpha)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    Subcritical,
    Critical,
    Supercritical,
    Custom,
}

/// Functional form of the duplication-failure probability q(n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum QLaw {
    /// q ≡ q.
    Const { q: f64 },
    /// min(1, c·n^{−eps}).
    Power { c: f64, eps: f64 },
    /// min(1, (2β/α)·n^{2/α−1}) for α > 2, min(1, β/log(n+2)) for α = 2.
    Critical { beta: f64 },
    /// min(1, log(n+2)^{−p}).
    LogPower { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeProfile {
    pub alpha: f64,
    pub kind: RegimeKind,
    pub beta: Option<f64>,
    pub law: QLaw,
    pub n0: u64,
}

const DEFAULT_N0: u64 = 8;

impl RegimeProfile {
    pub fn critical(alpha: f64, beta: f64) -> Self {
        RegimeProfile {
            alpha,
            kind: RegimeKind::Critical,
            beta: Some(beta),
            law: QLaw::Critical { beta },
            n0: DEFAULT_N0,
        }
    }

    /// Built-in profile with η(n) ≪ κ(n): q = n^{−0.9} at α = 3.
    pub fn subcritical(alpha: f64) -> Self {
        let law = if alpha > 2.0 {
            QLaw::Power { c: 1.0, eps: 1.0 - 0.15 * (2.0 / alpha) }
        } else {
            QLaw::Power { c: 1.0, eps: 0.5 }
        };
        RegimeProfile { alpha, kind: RegimeKind::Subcritical, beta: None, law, n0: DEFAULT_N0 }
    }

    /// Built-in profile with η(n) ≫ κ(n): q = n^{−0.1} at α = 3.
    pub fn supercritical(alpha: f64) -> Self {
        let law = if alpha > 2.0 {
            let k = 2.0 / alpha;
            QLaw::Power { c: 1.0, eps: 1.0 - (k + 0.7 * (1.0 - k)) }
        } else {
            QLaw::LogPower { p: 0.5 }
        };
        RegimeProfile { alpha, kind: RegimeKind::Supercritical, beta: None, law, n0: DEFAULT_N0 }
    }

    pub fn custom(alpha: f64, law: QLaw) -> Self {
        RegimeProfile { alpha, kind: RegimeKind::Custom, beta: None, law, n0: DEFAULT_N0 }
    }

    /// Fully duplicated potential, q ≡ 0.
    pub fn symmetric(alpha: f64) -> Self {
        Self::custom(alpha, QLaw::Const { q: 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 2.0) || !self.alpha.is_finite() {
            return Err(Error::Unsupported(format!("alpha = {} < 2", self.alpha)));
        }
        if self.n0 < 1 {
            return Err(Error::Domain("n0 must be at least 1".into()));
        }
        let ok = match self.law {
            QLaw::Const { q } => q.is_finite(),
            QLaw::Power { c, eps } => c.is_finite() && c >= 0.0 && eps.is_finite(),
            QLaw::Critical { beta } => beta.is_finite() && beta > 0.0,
            QLaw::LogPower { p } => p.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!("invalid q law {:?}", self.law)));
        }
        Ok(())
    }

    fn raw_q(&self, n: u64) -> f64 {
        self.raw_q_at(n as f64)
    }

    fn raw_q_at(&self, x: f64) -> f64 {
        match self.law {
            QLaw::Const { q } => q,
            QLaw::Power { c, eps } => c * x.powf(-eps),
            QLaw::Critical { beta } => {
                if self.alpha > 2.0 {
                    (2.0 * beta / self.alpha) * x.powf(2.0 / self.alpha - 1.0)
                } else {
                    beta / (x + 2.0).ln()
                }
            }
            QLaw::LogPower { p } => (x + 2.0).ln().powf(-p),
        }
    }

    /// Duplication-failure probability, clamped to [0, 1] and non-increasing past n0.
    pub fn q(&self, n: u64) -> f64 {
        let mut v = self.raw_q(n.max(1));
        if n > self.n0 {
            v = v.min(self.raw_q(self.n0));
        }
        v.clamp(0.0, 1.0)
    }

    /// Duplication probability p(n) = 1 − q(n); p(0) = 1 by convention.
    pub fn p(&self, n: u64) -> f64 {
        if n == 0 {
            1.0
        } else {
            1.0 - self.q(n)
        }
    }
}

/// η(n) = Σ_{z=1}^{n} q(z), compensated summation.
pub fn eta(profile: &RegimeProfile, n: u64) -> f64 {
    if let QLaw::Const { q } = profile.law {
        return q.clamp(0.0, 1.0) * n as f64;
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for z in 1..=n {
        let y = profile.q(z) - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    sum
}

/// η(n) summed exactly up to 2^17 and by the trapezoidal Euler–Maclaurin
/// estimate beyond; the relative error there is far below 10⁻⁶.
pub fn eta_approx(profile: &RegimeProfile, n: u64) -> f64 {
    const EXACT: u64 = 1 << 17;
    if n <= EXACT || matches!(profile.law, QLaw::Const { .. }) {
        return eta(profile, n);
    }
    let head = eta(profile, EXACT);
    let q = |x: f64| profile.raw_q_at(x).clamp(0.0, 1.0);
    let (a, b) = (EXACT as f64, n as f64);
    // Integrate in log x, where the laws are smooth and slowly varying.
    let integral = quadrature::double_exponential::integrate(|u| q(u.exp()) * u.exp(), a.ln(), b.ln(), 1e-12).integral;
    head + integral + 0.5 * (q(b) - q(a))
}

/// κ(n) = n^{2/α} for α > 2 and n/log n for α = 2.
pub fn kappa(alpha: f64, n: f64) -> Result<f64> {
    if !(alpha >= 2.0) {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    if alpha > 2.0 {
        if n < 0.0 {
            return Err(Error::Domain(format!("kappa at n = {n}")));
        }
        Ok(n.powf(2.0 / alpha))
    } else {
        if !(n >= 2.0) {
            return Err(Error::Domain(format!("kappa(2, {n}) needs n >= 2")));
        }
        Ok(n / n.ln())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegimeClass {
    Subcritical,
    Critical { beta_hat: f64 },
    Supercritical,
}

/// Classifies the limit of η(n)/κ(n) from its values at increasing probes.
///
/// The ratio must move monotonically (2% slack). A total change by more than a
/// factor 1.25 across the probes decides sub/supercriticality; otherwise the
/// last ratio is reported as β̂.
pub fn classify_regime(profile: &RegimeProfile, n_probe: &[u64]) -> Result<RegimeClass> {
    if n_probe.len() < 3 {
        return Err(Error::Precondition("need at least 3 probes".into()));
    }
    if n_probe.windows(2).any(|w| w[1] <= w[0]) || n_probe[0] < 2 {
        return Err(Error::Precondition("probes must be increasing and >= 2".into()));
    }
    let mut ratios = Vec::with_capacity(n_probe.len());
    let mut last_n = 0u64;
    let mut acc = 0.0f64;
    for &n in n_probe {
        acc += eta_range(profile, last_n + 1, n);
        last_n = n;
        ratios.push(acc / kappa(profile.alpha, n as f64)?);
    }
    let first = ratios[0];
    let last = *ratios.last().unwrap();
    if last == 0.0 && first == 0.0 {
        return Ok(RegimeClass::Subcritical);
    }
    let up = ratios.windows(2).all(|w| w[1] >= w[0] * 0.98);
    let down = ratios.windows(2).all(|w| w[1] <= w[0] * 1.02);
    if !up && !down {
        return Err(Error::Inconclusive(format!("ratios {ratios:?} are not monotone")));
    }
    let change = last / first;
    Ok(if change > 1.25 {
        RegimeClass::Supercritical
    } else if change < 0.8 {
        RegimeClass::Subcritical
    } else {
        RegimeClass::Critical { beta_hat: last }
    })
}

fn eta_range(profile: &RegimeProfile, lo: u64, hi: u64) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for z in lo..=hi {
        let y = profile.q(z) - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    sum
}

/// One index n ≥ 0 of the field: the pair of values at ±n and the duplication flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SitePair {
    pub n: u64,
    pub xi_pos: f64,
    pub xi_neg: f64,
    pub dup: bool,
}

/// Read access to a potential on a symmetric window.
pub trait Potential: Sync {
    fn alpha(&self) -> f64;
    /// Largest |z| that can be queried.
    fn window(&self) -> u64;
    fn xi(&self, z: i64) -> f64;
    fn is_dup(&self, n: u64) -> bool;

    /// Calls `f` for every n in [lo, hi] with ξ(n) > thr_pos, or with n ∈ E and
    /// ξ(−n) > thr_neg.
    fn scan(&self, lo: u64, hi: u64, thr_pos: f64, thr_neg: f64, f: &mut dyn FnMut(SitePair)) {
        for n in lo..=hi {
            let xp = self.xi(n as i64);
            let dup = self.is_dup(n);
            let xn = if dup { xp } else { self.xi(-(n as i64)) };
            if xp > thr_pos || (!dup && xn > thr_neg) {
                f(SitePair { n, xi_pos: xp, xi_neg: xn, dup });
            }
        }
    }

    /// Calls `f` for every non-duplicated n in [lo, hi].
    fn scan_nondup(&self, lo: u64, hi: u64, f: &mut dyn FnMut(SitePair)) {
        for n in lo.max(1)..=hi {
            if !self.is_dup(n) {
                f(SitePair { n, xi_pos: self.xi(n as i64), xi_neg: self.xi(-(n as i64)), dup: false });
            }
        }
    }

    /// Appends ξ(σy) for y in [lo, hi] to `out`.
    fn fill_view(&self, sigma: i64, lo: u64, hi: u64, out: &mut Vec<f64>) {
        out.extend((lo..=hi).map(|y| self.xi(sigma * y as i64)));
    }

    /// N(n) = |E ∩ [1, n]|.
    fn count_nondup(&self, n: u64) -> Result<u64> {
        if n > self.window() {
            return Err(Error::OutOfWindow { site: n as i64, window: self.window() });
        }
        let mut c = 0u64;
        self.scan_nondup(1, n, &mut |_| c += 1);
        Ok(c)
    }
}

/// Lazily evaluated field; every site is a pure function of (profile, seed, z).
#[derive(Clone, Debug)]
pub struct FieldGen {
    profile: RegimeProfile,
    seed: u64,
    alpha: f64,
    neg_inv_alpha: f64,
    kb: StreamKey,
    km: StreamKey,
    kd: StreamKey,
}

impl FieldGen {
    pub fn new(profile: RegimeProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        Ok(FieldGen {
            alpha: profile.alpha,
            neg_inv_alpha: -1.0 / profile.alpha,
            kb: StreamKey::new(seed, Stream::Base),
            km: StreamKey::new(seed, Stream::Mirror),
            kd: StreamKey::new(seed, Stream::Dup),
            profile,
            seed,
        })
    }

    pub fn profile(&self) -> &RegimeProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn from_u(&self, u: f64) -> f64 {
        (1.0 - u).powf(self.neg_inv_alpha)
    }

    #[inline]
    pub fn xi0_pos(&self, n: u64) -> f64 {
        self.from_u(self.kb.uniform(n as i64))
    }

    #[inline]
    pub fn xi0_neg(&self, n: u64) -> f64 {
        self.from_u(self.km.uniform(n as i64))
    }

    #[inline]
    fn dup_with(&self, n: u64, u: f64) -> bool {
        n == 0 || u < self.profile.p(n)
    }
}

impl Potential for FieldGen {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn window(&self) -> u64 {
        u64::MAX >> 2
    }

    #[inline]
    fn xi(&self, z: i64) -> f64 {
        let n = z.unsigned_abs();
        if z >= 0 || self.is_dup(n) {
            self.xi0_pos(n)
        } else {
            self.xi0_neg(n)
        }
    }

    #[inline]
    fn is_dup(&self, n: u64) -> bool {
        self.dup_with(n, self.kd.uniform(n as i64))
    }

    fn scan(&self, lo: u64, hi: u64, thr_pos: f64, thr_neg: f64, f: &mut dyn FnMut(SitePair)) {
        let up = pareto_u_level(thr_pos, self.alpha);
        let un = pareto_u_level(thr_neg, self.alpha);
        for n in lo..=hi {
            let ub = self.kb.uniform(n as i64);
            let um = self.km.uniform(n as i64);
            let hit_pos = ub > up;
            let hit_neg = um > un;
            if !(hit_pos || hit_neg) {
                continue;
            }
            let dup = self.is_dup(n);
            if hit_pos || !dup {
                let xp = self.from_u(ub);
                let xn = if dup { xp } else { self.from_u(um) };
                if xp > thr_pos || (!dup && xn > thr_neg) {
                    f(SitePair { n, xi_pos: xp, xi_neg: xn, dup });
                }
            }
        }
    }

    fn fill_view(&self, sigma: i64, lo: u64, hi: u64, out: &mut Vec<f64>) {
        out.reserve((hi - lo + 1) as usize);
        if sigma > 0 {
            out.extend((lo..=hi).map(|n| self.xi0_pos(n)));
            return;
        }
        const CHUNK: u64 = 4096;
        let n0 = self.profile.n0;
        let mut a = lo;
        while a <= hi {
            let b = hi.min(a.saturating_add(CHUNK - 1));
            let sure_dup = if a > n0 { 1.0 - self.profile.q(a) - 1e-12 } else { -1.0 };
            for n in a..=b {
                let u = self.kd.uniform(n as i64);
                let dup = u < sure_dup || self.dup_with(n, u);
                out.push(if dup { self.xi0_pos(n) } else { self.xi0_neg(n) });
            }
            a = b + 1;
        }
    }

    fn scan_nondup(&self, lo: u64, hi: u64, f: &mut dyn FnMut(SitePair)) {
        const CHUNK: u64 = 4096;
        let n0 = self.profile.n0;
        let mut a = lo.max(1);
        while a <= hi {
            let b = hi.min(a.saturating_add(CHUNK - 1));
            // For n ≥ a ≥ n0, q(n) ≤ q(a); a coin below 1 − q(a) is surely duplicated.
            let sure_dup = if a > n0 { 1.0 - self.profile.q(a) - 1e-12 } else { -1.0 };
            for n in a..=b {
                let u = self.kd.uniform(n as i64);
                if u < sure_dup || self.dup_with(n, u) {
                    continue;
                }
                f(SitePair { n, xi_pos: self.xi0_pos(n), xi_neg: self.xi0_neg(n), dup: false });
            }
            a = b + 1;
        }
    }
}

/// Materialised field on [−L, L].
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub alpha: f64,
    pub window: u64,
    pub seed: u64,
    pub profile: RegimeProfile,
    xi: Vec<f64>,
    dup: Vec<bool>,
    nondup_prefix: Vec<u32>,
}

impl PotentialField {
    /// Field from explicit values; `xi[i]` is the site i − L.
    pub fn from_parts(profile: RegimeProfile, seed: u64, xi: Vec<f64>, dup: Vec<bool>) -> Result<Self> {
        if xi.len() % 2 != 1 {
            return Err(Error::Domain("xi must have odd length 2L+1".into()));
        }
        let l = (xi.len() / 2) as u64;
        if dup.len() as u64 != l + 1 {
            return Err(Error::Domain("dup mask length must be L+1".into()));
        }
        if xi.iter().any(|&x| !(x >= 1.0) || !x.is_finite()) {
            return Err(Error::Domain("potential values must be finite and >= 1".into()));
        }
        if !dup[0] {
            return Err(Error::Domain("site 0 must be duplicated".into()));
        }
        for n in 1..=l as usize {
            if dup[n] && xi[l as usize + n].to_bits() != xi[l as usize - n].to_bits() {
                return Err(Error::Domain(format!("site {n} in D but not mirrored")));
            }
        }
        let mut nondup_prefix = Vec::with_capacity(dup.len());
        let mut c = 0u32;
        for (n, &d) in dup.iter().enumerate() {
            if n > 0 && !d {
                c += 1;
            }
            nondup_prefix.push(c);
        }
        Ok(PotentialField { alpha: profile.alpha, window: l, seed, profile, xi, dup, nondup_prefix })
    }

    /// Synthetic symmetric field with given values at sites 0..=L mirrored to −L..−1.
    pub fn symmetric_from_half(alpha: f64, half: &[f64]) -> Result<Self> {
        let l = half.len() - 1;
        let mut xi = vec![0.0; 2 * l + 1];
        for (n, &v) in half.iter().enumerate() {
            xi[l + n] = v;
            xi[l - n] = v;
        }
        Self::from_parts(RegimeProfile::symmetric(alpha), 0, xi, vec![true; l + 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.xi
    }

    pub fn dup_mask(&self) -> &[bool] {
        &self.dup
    }

    pub fn try_xi(&self, z: i64) -> Result<f64> {
        if z.unsigned_abs() > self.window {
            return Err(Error::OutOfWindow { site: z, window: self.window });
        }
        Ok(self.xi(z))
    }

    /// Copy of the sub-window [−l, l].
    pub fn restrict(&self, l: u64) -> Result<PotentialField> {
        if l > self.window {
            return Err(Error::InsufficientWindow { window: self.window, radius: l });
        }
        let c = self.window as usize;
        let l = l as usize;
        Self::from_parts(
            self.profile.clone(),
            self.seed,
            self.xi[c - l..=c + l].to_vec(),
            self.dup[..=l].to_vec(),
        )
    }
}

impl Potential for PotentialField {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn window(&self) -> u64 {
        self.window
    }

    #[inline]
    fn xi(&self, z: i64) -> f64 {
        self.xi[(z + self.window as i64) as usize]
    }

    #[inline]
    fn is_dup(&self, n: u64) -> bool {
        self.dup[n as usize]
    }

    fn count_nondup(&self, n: u64) -> Result<u64> {
        if n > self.window {
            return Err(Error::OutOfWindow { site: n as i64, window: self.window });
        }
        Ok(self.nondup_prefix[n as usize] as u64)
    }
}

/// Materialises the field on [−L, L] from the site-addressed streams.
pub fn build_potential(profile: &RegimeProfile, l: u64, seed: u64) -> Result<PotentialField> {
    if l < 1 {
        return Err(Error::Domain("window L must be >= 1".into()));
    }
    let gen = FieldGen::new(profile.clone(), seed)?;
    let lu = l as usize;
    let mut xi = vec![0.0; 2 * lu + 1];
    let mut dup = vec![false; lu + 1];
    for n in 0..=lu {
        let d = gen.is_dup(n as u64);
        let xp = gen.xi0_pos(n as u64);
        dup[n] = d;
        xi[lu + n] = xp;
        if n > 0 {
            xi[lu - n] = if d { xp } else { gen.xi0_neg(n as u64) };
        }
    }
    PotentialField::from_parts(profile.clone(), seed, xi, dup)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        assert_eq!(pareto_quantile(0.0, 3.0).unwrap(), 1.0);
        assert!((pareto_quantile(0.5, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(pareto_quantile(1.0, 3.0), Err(Error::Domain(_))));
        assert!(matches!(pareto_quantile(-0.1, 3.0), Err(Error::Domain(_))));
        assert!(matches!(pareto_quantile(0.3, 1.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn kappa_examples() {
        assert!((kappa(3.0, 8.0).unwrap() - 4.0).abs() < 1e-12);
        let e2 = std::f64::consts::E.powi(2);
        assert!((kappa(2.0, e2).unwrap() - e2 / 2.0).abs() < 1e-12);
        assert!((kappa(4.0, 1e6).unwrap() - 1e3).abs() < 1e-9);
        assert!(kappa(2.0, 1.5).is_err());
    }

    #[test]
    fn builtin_exponents_at_alpha_three() {
        match RegimeProfile::subcritical(3.0).law {
            QLaw::Power { eps, .. } => assert!((eps - 0.9).abs() < 1e-12),
            _ => panic!(),
        }
        match RegimeProfile::supercritical(3.0).law {
            QLaw::Power { eps, .. } => assert!((eps - 0.1).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn stored_and_lazy_agree() {
        let prof = RegimeProfile::critical(3.0, 1.0);
        let f = build_potential(&prof, 300, 42).unwrap();
        let g = FieldGen::new(prof, 42).unwrap();
        for z in -300i64..=300 {
            assert_eq!(f.xi(z).to_bits(), g.xi(z).to_bits());
        }
        let mut a = vec![];
        f.scan(0, 300, 3.0, 2.0, &mut |s| a.push(s));
        let mut b = vec![];
        g.scan(0, 300, 3.0, 2.0, &mut |s| b.push(s));
        assert_eq!(a, b);
        let mut a = vec![];
        f.scan_nondup(1, 300, &mut |s| a.push(s));
        let mut b = vec![];
        g.scan_nondup(1, 300, &mut |s| b.push(s));
        assert_eq!(a, b);
        assert_eq!(f.count_nondup(300).unwrap(), g.count_nondup(300).unwrap());
    }
}
