//! Simplex integrals against independent quadrature and closed forms.

use dupam::pathsum::simplex_integral;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::double_exponential::integrate(f, a, b, 1e-14).integral
}

/// I_1 = ∫_0^t e^{c0 (t−s) + c1 s} ds.
fn i1_quad(t: f64, c: &[f64]) -> f64 {
    quad(|s| (c[0] * (t - s) + c[1] * s).exp(), 0.0, t)
}

/// I_2 = ∫∫_{s1+s2 ≤ t} e^{c0 (t−s1−s2) + c1 s1 + c2 s2}.
fn i2_quad(t: f64, c: &[f64]) -> f64 {
    quad(|s1| quad(|s2| (c[0] * (t - s1 - s2) + c[1] * s1 + c[2] * s2).exp(), 0.0, t - s1), 0.0, t)
}

#[test]
fn zero_order_is_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let t: f64 = rng.random_range(0.1..10.0);
        let c: f64 = rng.random_range(0.0..20.0);
        let got = simplex_integral(t, &[c]).unwrap().exp();
        assert!((got / (t * c).exp() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn confluent_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let t: f64 = rng.random_range(0.1..10.0);
        let c: f64 = rng.random_range(0.0..5.0);
        let n = rng.random_range(1..12usize);
        let got = simplex_integral(t, &vec![c; n + 1]).unwrap();
        let log_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
        let want = t * c + n as f64 * t.ln() - log_fact;
        assert!((got.exp() / want.exp() - 1.0).abs() <= 1e-12, "t={t} c={c} n={n}");
    }
}

#[test]
fn first_and_second_order_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t: f64 = rng.random_range(0.1..4.0);
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..6.0)).collect();
        let e1 = simplex_integral(t, &c[..2]).unwrap().exp() / i1_quad(t, &c[..2]) - 1.0;
        let e2 = simplex_integral(t, &c).unwrap().exp() / i2_quad(t, &c) - 1.0;
        worst = worst.max(e1.abs()).max(e2.abs());
    }
    assert!(worst <= 1e-10, "worst relative error {worst:e}");
}

#[test]
fn single_jump_closed_form() {
    // (e^{t a} − e^{t b}) / (a − b)
    for (t, a, b) in [(1.0f64, 3.0f64, 1.0f64), (5.0, 2.5, 2.4), (0.3, 10.0, 1.0)] {
        let want = ((t * a).exp() - (t * b).exp()) / (a - b);
        let got = simplex_integral(t, &[a, b]).unwrap().exp();
        assert!((got / want - 1.0).abs() < 1e-12);
    }
}

#[test]
fn nearly_repeated_nodes_are_continuous() {
    let t = 2.0;
    let base = simplex_integral(t, &[1.0, 1.0, 1.0]).unwrap();
    let near = simplex_integral(t, &[1.0, 1.0 + 1e-9, 1.0 - 1e-9]).unwrap();
    assert!((base - near).abs() < 1e-8);
}

proptest! {
    #[test]
    fn symmetric_in_nodes(t in 0.05f64..8.0, mut c in prop::collection::vec(0.0f64..8.0, 2..7), k in 0usize..100) {
        let a = simplex_integral(t, &c).unwrap();
        let n = c.len();
        c.swap(k % n, (k / n) % n);
        c.reverse();
        let b = simplex_integral(t, &c).unwrap();
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn monotone_in_every_node(t in 0.05f64..5.0, c in prop::collection::vec(0.0f64..5.0, 1..6), i in 0usize..6, d in 0.01f64..1.0) {
        let i = i % c.len();
        let mut up = c.clone();
        up[i] += d;
        prop_assert!(simplex_integral(t, &up).unwrap() > simplex_integral(t, &c).unwrap());
    }

    #[test]
    fn shift_factors_out(t in 0.05f64..5.0, c in prop::collection::vec(0.0f64..5.0, 1..6), s in 0.0f64..3.0) {
        let shifted: Vec<f64> = c.iter().map(|x| x + s).collect();
        let a = simplex_integral(t, &shifted).unwrap();
        let b = simplex_integral(t, &c).unwrap() + t * s;
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
    }
}
