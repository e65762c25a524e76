//! Limit-process intensities and the argmax sampler.

use dupam::limit::*;
use proptest::prelude::*;

#[test]
fn argmax_gap_law() {
    // The largest gap y − ρx over Π has P(G ≤ g) = exp(−g^{1−α}).
    for alpha in [2.0, 3.0] {
        let s = sample_limit_b(alpha, 20_000, 8).unwrap();
        let r = rho(alpha);
        let gaps: Vec<f64> = s.iter().map(|p| p.y1 - r * p.x1).collect();
        let ks = dupam::stats::ks_one_sample(&gaps, |g| if g > 0.0 { (-g.powf(1.0 - alpha)).exp() } else { 0.0 }).unwrap();
        assert!(ks.p_value > 0.001, "alpha {alpha}: {ks:?}");
    }
}

#[test]
fn grid_test_accepts_the_sampler() {
    let s = sample_limit_b(3.0, 100_000, 21).unwrap();
    let g = density_grid_test(3.0, &s, 20, 20, 21).unwrap();
    assert!((g.covered_mass - 1.0).abs() < 1e-6, "{}", g.covered_mass);
    assert!(g.chi2.p_value > 0.001, "{:?}", g.chi2);
}

#[test]
fn sampling_is_reproducible() {
    assert_eq!(sample_limit_b(3.0, 50, 2).unwrap(), sample_limit_b(3.0, 50, 2).unwrap());
    assert_ne!(sample_limit_b(3.0, 50, 2).unwrap(), sample_limit_b(3.0, 50, 3).unwrap());
}

proptest! {
    #[test]
    fn box_mass_is_additive(x0 in 0.0f64..2.0, w1 in 0.01f64..2.0, w2 in 0.01f64..2.0, dy in 0.1f64..3.0) {
        let alpha = 3.0;
        let y0 = rho(alpha) * (x0 + w1 + w2) + dy;
        let whole = mu_box(alpha, &PpBox::new(x0, x0 + w1 + w2, y0, f64::INFINITY)).unwrap();
        let left = mu_box(alpha, &PpBox::new(x0, x0 + w1, y0, f64::INFINITY)).unwrap();
        let right = mu_box(alpha, &PpBox::new(x0 + w1, x0 + w1 + w2, y0, f64::INFINITY)).unwrap();
        prop_assert!((whole - left - right).abs() <= 1e-12 * whole);
        let lo = mu_hat_box(alpha, 1.0, &PpBox::new(x0, x0 + w1, y0, y0 + 1.0)).unwrap();
        let hi = mu_hat_box(alpha, 1.0, &PpBox::new(x0, x0 + w1, y0 + 1.0, f64::INFINITY)).unwrap();
        let all = mu_hat_box(alpha, 1.0, &PpBox::new(x0, x0 + w1, y0, f64::INFINITY)).unwrap();
        prop_assert!((all - lo - hi).abs() <= 1e-12 * all);
    }

    #[test]
    fn cells_partition_the_mass(xs in 0.05f64..3.0, ys in 0.2f64..3.0) {
        let a = 3.0;
        let inf = f64::INFINITY;
        let total = cell_probability(a, 0.0, xs, 0.0, ys) + cell_probability(a, 0.0, xs, ys, inf)
            + cell_probability(a, xs, inf, 0.0, ys) + cell_probability(a, xs, inf, ys, inf);
        prop_assert!((total - 1.0).abs() < 1e-8);
    }
}
