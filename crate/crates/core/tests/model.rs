//! Field generation invariants and the η approximation.

use dupam::model::{build_potential, eta, eta_approx, FieldGen, Potential, RegimeProfile};
use proptest::prelude::*;

fn profile(k: u8) -> RegimeProfile {
    match k % 5 {
        0 => RegimeProfile::critical(3.0, 1.0),
        1 => RegimeProfile::subcritical(3.0),
        2 => RegimeProfile::supercritical(3.0),
        3 => RegimeProfile::critical(2.0, 0.5),
        _ => RegimeProfile::symmetric(2.5),
    }
}

#[test]
fn eta_approx_tracks_exact_sum() {
    for k in 0..5u8 {
        let p = profile(k);
        for n in [10u64, 1 << 17, 300_000, 2_000_000, 10_000_000] {
            let a = eta_approx(&p, n);
            let e = eta(&p, n);
            assert!((a - e).abs() <= 1e-9 * e.max(1.0), "profile {k} n={n}: {a} vs {e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn materialised_equals_lazy(seed in any::<u64>(), k in 0u8..5, l in 0u64..200) {
        let p = profile(k);
        let g = FieldGen::new(p.clone(), seed).unwrap();
        let f = build_potential(&p, l, seed).unwrap();
        for z in -(l as i64)..=l as i64 {
            prop_assert_eq!(f.xi(z).to_bits(), g.xi(z).to_bits());
        }
        for n in 0..=l {
            prop_assert_eq!(f.is_dup(n), g.is_dup(n));
        }
    }

    #[test]
    fn duplicated_sites_mirror(seed in any::<u64>(), k in 0u8..5, n in 0u64..10_000) {
        let g = FieldGen::new(profile(k), seed).unwrap();
        if g.is_dup(n) {
            prop_assert_eq!(g.xi(n as i64), g.xi(-(n as i64)));
        }
        prop_assert!(g.xi(n as i64) >= 1.0 && g.xi(-(n as i64)) >= 1.0);
    }

    #[test]
    fn window_does_not_change_values(seed in any::<u64>(), k in 0u8..5, l in 1u64..100, extra in 1u64..100) {
        let p = profile(k);
        let small = build_potential(&p, l, seed).unwrap();
        let big = build_potential(&p, l + extra, seed).unwrap();
        prop_assert_eq!(big.restrict(l).unwrap(), small);
    }

    #[test]
    fn fill_view_equals_pointwise(seed in any::<u64>(), k in 0u8..5, lo in 0u64..500, len in 0u64..300, neg in any::<bool>()) {
        let g = FieldGen::new(profile(k), seed).unwrap();
        let sigma = if neg { -1 } else { 1 };
        let mut v = Vec::new();
        g.fill_view(sigma, lo, lo + len, &mut v);
        for (i, x) in v.iter().enumerate() {
            prop_assert_eq!(x.to_bits(), g.xi(sigma * (lo + i as u64) as i64).to_bits());
        }
    }

    #[test]
    fn nondup_count_matches_scan(seed in any::<u64>(), k in 0u8..5, n in 0u64..3000) {
        let p = profile(k);
        let g = FieldGen::new(p.clone(), seed).unwrap();
        let direct = (1..=n).filter(|&m| !g.is_dup(m)).count() as u64;
        let f = build_potential(&p, n, seed).unwrap();
        prop_assert_eq!(f.count_nondup(n).unwrap(), direct);
    }
}
