//! Limit objects: the Poisson process Π on {y > ρx ≥ 0} with intensity
//! dx ⊗ αy^{−α−1}dy, its maximiser of y − ρx, and the inhomogeneous process
//! Π̂ of the critical regime.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stats::{chi_square, merge_bins, ChiSquareResult};

const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    /// B = x1^{1/α} / y1.
    pub b: f64,
    pub x1: f64,
    pub y1: f64,
}

#[inline]
pub fn rho(alpha: f64) -> f64 {
    1.0 / (alpha - 1.0)
}

/// μ(G_ε) for G_ε = {y > ρx + ε}.
pub fn wedge_mass(alpha: f64, eps: f64) -> f64 {
    eps.powf(1.0 - alpha)
}

/// One point of Π conditioned on G_ε: x by inverting
/// 1 − (1 + ρx/ε)^{1−α}, then y Pareto above ρx + ε.
pub fn sample_wedge_point(alpha: f64, eps: f64, rng: &mut impl Rng) -> (f64, f64) {
    let r = rho(alpha);
    let u: f64 = rng.random();
    let x = eps / r * ((1.0 - u).powf(1.0 / (1.0 - alpha)) - 1.0);
    let v: f64 = 1.0 - rng.random::<f64>();
    let y = (r * x + eps) * v.powf(-1.0 / alpha);
    (x, y)
}

/// Exact draw of the maximiser of y − ρx over Π. Bands of the gap g = y − ρx
/// are filled from the top: (ε_k, ε_{k−1}] with ε_k halving, each band an
/// independent Poisson batch. The first non-empty band holds the maximiser.
pub fn sample_argmax(alpha: f64, rng: &mut impl Rng) -> Result<LimitSample> {
    let r = rho(alpha);
    let mut upper = f64::INFINITY;
    let mut eps = 1.0f64;
    for _ in 0..MAX_HALVINGS {
        let band = wedge_mass(alpha, eps) - if upper.is_finite() { wedge_mass(alpha, upper) } else { 0.0 };
        let count = Poisson::new(band).map_err(|e| Error::Sampler(e.to_string()))?.sample(rng) as u64;
        let mut best: Option<(f64, f64, f64)> = None;
        for _ in 0..count {
            // Rejection from G_ε onto the band.
            let (x, y) = loop {
                let (x, y) = sample_wedge_point(alpha, eps, rng);
                if y - r * x <= upper {
                    break (x, y);
                }
            };
            let g = y - r * x;
            if best.is_none_or(|b| g > b.2) {
                best = Some((x, y, g));
            }
        }
        if let Some((x, y, _)) = best {
            return Ok(LimitSample { b: x.powf(1.0 / alpha) / y, x1: x, y1: y });
        }
        upper = eps;
        eps *= 0.5;
    }
    Err(Error::Sampler(format!("no point of Π above gap 2^-{MAX_HALVINGS}")))
}

/// `n` independent draws; draw i uses its own generator seeded from (seed, i).
pub fn sample_limit_b(alpha: f64, n: usize, seed: u64) -> Result<Vec<LimitSample>> {
    if !(alpha >= 2.0) || !alpha.is_finite() {
        return Err(Error::Unsupported(format!("alpha = {alpha} < 2")));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            sample_argmax(alpha, &mut rng)
        })
        .collect()
}

/// p(x, y) = αy^{−α−1} exp(−(y − ρx)^{1−α}) on y > ρx > 0.
pub fn density(alpha: f64, x: f64, y: f64) -> f64 {
    let g = y - rho(alpha) * x;
    if !(x > 0.0 && g > 0.0) {
        return 0.0;
    }
    alpha * y.powf(-alpha - 1.0) * (-g.powf(1.0 - alpha)).exp()
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    quadrature::double_exponential::integrate(f, a, b, tol).integral
}

/// ∫_a^∞ f through x = a + s/(1 − s); the integrand must decay at least like x^{−2}.
fn integrate_to_inf(f: impl Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    integrate(
        |s| {
            if s >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - s;
            f(a + s / w) / (w * w)
        },
        0.0,
        1.0,
        tol,
    )
}

/// P(X¹ ∈ [x0, x1), Y¹ ∈ [y0, y1)) by nested quadrature in (x, g = y − ρx);
/// y1 and x1 may be infinite.
pub fn cell_probability(alpha: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let r = rho(alpha);
    let tol = 1e-13;
    let inner = |x: f64| {
        let f = |g: f64| {
            let y = g + r * x;
            if g <= 0.0 {
                return 0.0;
            }
            alpha * y.powf(-alpha - 1.0) * (-g.powf(1.0 - alpha)).exp()
        };
        let glo = (y0 - r * x).max(0.0);
        if y1.is_finite() {
            integrate(f, glo, (y1 - r * x).max(glo), tol)
        } else {
            integrate_to_inf(f, glo, tol)
        }
    };
    if x1.is_finite() {
        integrate(inner, x0, x1, tol)
    } else {
        integrate_to_inf(inner, x0, tol)
    }
}

/// ∬p over the whole support.
pub fn density_total_mass(alpha: f64) -> f64 {
    cell_probability(alpha, 0.0, f64::INFINITY, 0.0, f64::INFINITY)
}

/// Rectangle [x0, x1) × [y0, y1); `y1` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl PpBox {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        PpBox { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    fn check_shape(&self) -> Result<()> {
        let ok = self.x0 >= 0.0 && self.x1 > self.x0 && self.x1.is_finite() && self.y1 > self.y0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!("{self:?} is not a bounded rectangle in x ≥ 0")))
        }
    }
}

/// μ(box) for Π. The box must stay a positive distance above y = ρx.
pub fn mu_box(alpha: f64, b: &PpBox) -> Result<f64> {
    b.check_shape()?;
    if !(b.y0 > rho(alpha) * b.x1) {
        return Err(Error::InvalidBox(format!("{b:?} touches the line y = ρx")));
    }
    Ok((b.x1 - b.x0) * (b.y0.powf(-alpha) - b.y1.powf(-alpha)))
}

/// μ̂(box) = β(x1^{2/α} − x0^{2/α})(y0^{−α} − y1^{−α}) for Π̂.
pub fn mu_hat_box(alpha: f64, beta: f64, b: &PpBox) -> Result<f64> {
    b.check_shape()?;
    if !(b.y0 > 0.0) {
        return Err(Error::InvalidBox(format!("{b:?} is not bounded below in y")));
    }
    let k = 2.0 / alpha;
    Ok(beta * (b.x1.powf(k) - b.x0.powf(k)) * (b.y0.powf(-alpha) - b.y1.powf(-alpha)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGridTest {
    pub nx: usize,
    pub ny: usize,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Σ of the cell probabilities; 1 up to quadrature error.
    pub covered_mass: f64,
    pub chi2: ChiSquareResult,
}

fn pilot_quantiles(v: &mut [f64], bins: usize) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    let mut e = vec![0.0];
    for i in 1..bins {
        e.push(v[i * v.len() / bins]);
    }
    e.push(f64::INFINITY);
    e
}

/// Chi-square of binned samples against p(x, y) on an nx × ny grid. Edges
/// are marginal quantiles of an independent pilot sample; expected counts
/// come from quadrature of p over each cell; cells with expectation below 5
/// are merged with their neighbours in row-major order.
pub fn density_grid_test(alpha: f64, samples: &[LimitSample], nx: usize, ny: usize, seed: u64) -> Result<DensityGridTest> {
    if samples.len() < 10 * nx * ny {
        return Err(Error::Underpowered(format!("{} samples for {nx}x{ny} cells", samples.len())));
    }
    let pilot = sample_limit_b(alpha, 20_000, derive_seed(seed, 0x009e_1107))?;
    let x_edges = pilot_quantiles(&mut pilot.iter().map(|s| s.x1).collect::<Vec<_>>(), nx);
    let y_edges = pilot_quantiles(&mut pilot.iter().map(|s| s.y1).collect::<Vec<_>>(), ny);
    let mut observed = vec![0.0; nx * ny];
    for s in samples {
        let i = x_edges.partition_point(|&e| e <= s.x1).clamp(1, nx) - 1;
        let j = y_edges.partition_point(|&e| e <= s.y1).clamp(1, ny) - 1;
        observed[i * ny + j] += 1.0;
    }
    let n = samples.len() as f64;
    let mut probs = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            probs[i * ny + j] = cell_probability(alpha, x_edges[i], x_edges[i + 1], y_edges[j], y_edges[j + 1]);
        }
    }
    let covered_mass: f64 = probs.iter().sum();
    let expected: Vec<f64> = probs.iter().map(|p| p * n).collect();
    let (o, e) = merge_bins(&observed, &expected, 5.0);
    let chi2 = chi_square(&o, &e, 0)?;
    Ok(DensityGridTest { nx, ny, x_edges, y_edges, covered_mass, chi2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_of_samples() {
        for s in sample_limit_b(3.0, 2000, 5).unwrap() {
            assert!(s.x1 > 0.0 && s.y1 > 0.5 * s.x1 && s.b > 0.0);
        }
        for s in sample_limit_b(2.0, 500, 6).unwrap() {
            assert!(s.x1 > 0.0 && s.y1 > s.x1 && s.b > 0.0);
        }
    }

    #[test]
    fn density_is_normalised() {
        for alpha in [2.0, 2.5, 3.0, 4.0] {
            let m = density_total_mass(alpha);
            assert!((m - 1.0).abs() < 1e-6, "alpha {alpha}: {m}");
        }
    }

    #[test]
    fn box_masses() {
        let b = PpBox::new(0.0, 1.0, 2.0, f64::INFINITY);
        assert!((mu_box(3.0, &b).unwrap() - 0.125).abs() < 1e-15);
        assert!((mu_hat_box(3.0, 1.0, &b).unwrap() - 0.125).abs() < 1e-15);
        let touching = PpBox::new(0.0, 2.0, 1.0, f64::INFINITY);
        assert!(matches!(mu_box(3.0, &touching), Err(Error::InvalidBox(_))));
    }
}
