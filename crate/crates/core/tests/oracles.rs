//! The three solvers against each other: ODE vs dense matrix exponential,
//! path sum vs dense, spectral vs ODE.

use dupam::localisation::find_maximisers_radius;
use dupam::model::{build_potential, Potential, RegimeProfile};
use dupam::pathsum::truncated_path_sum;
use dupam::solver::{dense_oracle, solve_pam};
use dupam::spectral::{solve_spectral, SpectralOptions};
use proptest::prelude::*;

fn profile(k: u8) -> RegimeProfile {
    match k % 4 {
        0 => RegimeProfile::critical(3.0, 1.0),
        1 => RegimeProfile::subcritical(3.0),
        2 => RegimeProfile::supercritical(2.5),
        _ => RegimeProfile::symmetric(2.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ode_matches_dense(seed in 0u64..1_000_000, l in 1u64..=5, k in 0u8..4, ti in 0usize..3) {
        let t = [0.25, 1.0, 4.0][ti];
        let f = build_potential(&profile(k), l, seed).unwrap();
        let a = &solve_pam(&f, &[t], l).unwrap()[0];
        let b = dense_oracle(&f, t, l).unwrap();
        prop_assert!((a.log_mass - b.log_mass).abs() <= 1e-8);
        for (x, y) in a.log_v.iter().zip(&b.log_v) {
            prop_assert!(((x - y).exp() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn path_sum_within_its_tail_bound(seed in 0u64..1_000_000, l in 1u64..=3, ti in 0usize..3, target in -3i64..=3) {
        let t = [0.25, 1.0, 4.0][ti];
        let target = target.clamp(-(l as i64), l as i64);
        let f = build_potential(&RegimeProfile::critical(3.0, 1.0), l, seed).unwrap();
        let d = dense_oracle(&f, t, l).unwrap();
        let exact = (d.log_mass + d.log_v_at(target)).exp();
        let max_len = if t > 2.0 { 16 } else { 12 };
        let ps = truncated_path_sum(&f, t, target, max_len).unwrap();
        let lower = ps.log_u_lower.exp();
        prop_assert!(lower <= exact * (1.0 + 1e-10));
        prop_assert!(exact - lower <= ps.tail_bound * (1.0 + 1e-9) + 1e-12 * exact);
    }
}

#[test]
fn spectral_matches_ode() {
    for (t, l, seeds) in [(30.0, 150u64, 6u64), (100.0, 300, 4), (300.0, 500, 2)] {
        for seed in 0..seeds {
            let f = build_potential(&RegimeProfile::critical(3.0, 1.0), l, seed).unwrap();
            let s = find_maximisers_radius(&f, t, l).unwrap();
            let targets = [s.z1.z, -s.z1.z, s.z2.z];
            let sp = solve_spectral(&f, t, l, s.z_global.z, &targets, &SpectralOptions::default()).unwrap();
            let o = &solve_pam(&f, &[t], l).unwrap()[0];
            assert!((sp.log_mass - o.log_mass).abs() <= 1e-6 * o.log_mass.abs().max(1.0), "t={t} seed={seed}");
            for z in targets {
                let (a, b) = (sp.log_v_at(z), o.log_v_at(z));
                if b > -600.0 {
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "t={t} seed={seed} z={z}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn symmetric_field_gives_symmetric_profile() {
    let f = build_potential(&RegimeProfile::symmetric(3.0), 40, 11).unwrap();
    let o = &solve_pam(&f, &[20.0], 40).unwrap()[0];
    for z in 1..=40i64 {
        assert!((o.log_v_at(z) - o.log_v_at(-z)).abs() <= 1e-9 * o.log_v_at(z).abs().max(1.0));
    }
    assert!(f.xi(7) == f.xi(-7));
}
