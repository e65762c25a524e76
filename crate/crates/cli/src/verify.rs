//! `dupam verify`: a quick battery over the numerical core.

use anyhow::Result;
use dupam::experiments::{self as ex, ExperimentConfig};
use dupam::limit::{density_grid_test, density_total_mass, sample_limit_b};
use dupam::model::{build_potential, FieldGen, RegimeProfile};
use dupam::pathsum::{simplex_integral, truncated_path_sum};
use dupam::solver::{dense_oracle, solve_pam};
use dupam::stats::moments;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn oracle() -> Result<Check> {
    let mut worst_site = 0.0f64;
    let mut worst_mass = 0.0f64;
    for seed in 0..12u64 {
        let l = 3 + seed % 3;
        let f = build_potential(&RegimeProfile::critical(3.0, 1.0), l, seed)?;
        for t in [0.25, 1.0, 4.0] {
            let a = &solve_pam(&f, &[t], l)?[0];
            let b = dense_oracle(&f, t, l)?;
            worst_mass = worst_mass.max((a.log_mass - b.log_mass).abs());
            for (x, y) in a.log_v.iter().zip(&b.log_v) {
                worst_site = worst_site.max(((x - y).exp() - 1.0).abs());
            }
        }
    }
    Ok(Check {
        name: "ode-vs-dense",
        pass: worst_site <= 1e-6 && worst_mass <= 1e-8,
        detail: format!("site rel {worst_site:.2e}, log-mass {worst_mass:.2e}"),
    })
}

fn pathsum() -> Result<Check> {
    let mut pass = true;
    let mut worst = 0.0f64;
    for seed in 0..6u64 {
        let f = build_potential(&RegimeProfile::critical(3.0, 1.0), 2, seed)?;
        for (t, len) in [(0.25, 10), (1.0, 16)] {
            let d = dense_oracle(&f, t, 2)?;
            for z in -2..=2i64 {
                let exact = d.log_mass + d.log_v_at(z);
                let ps = truncated_path_sum(&f, t, z, len)?;
                let gap = exact.exp() - ps.log_u_lower.exp();
                worst = worst.max(gap / ps.tail_bound);
                pass &= gap >= -1e-12 * exact.exp() && gap <= ps.tail_bound * (1.0 + 1e-9) + 1e-12 * exact.exp();
            }
        }
    }
    Ok(Check { name: "pathsum-tail", pass, detail: format!("max gap/bound {worst:.3}") })
}

fn simplex() -> Result<Check> {
    let (t, c) = (1.7, 0.6f64);
    let i0 = simplex_integral(t, &[c])?.exp();
    let conf = simplex_integral(t, &[c, c, c])?.exp();
    let e0 = ((i0 - (t * c).exp()) / (t * c).exp()).abs();
    let want = (t * c).exp() * t * t / 2.0;
    let e2 = ((conf - want) / want).abs();
    Ok(Check { name: "simplex", pass: e0 <= 1e-12 && e2 <= 1e-12, detail: format!("I0 {e0:.1e}, confluent {e2:.1e}") })
}

fn pareto() -> Result<Check> {
    let g = FieldGen::new(RegimeProfile::symmetric(3.0), 0)?;
    let xs: Vec<f64> = (1..=1_000_000u64).map(|n| g.xi0_pos(n)).collect();
    let m = moments(&xs).ok_or_else(|| anyhow::anyhow!("empty sample"))?;
    Ok(Check {
        name: "pareto-moments",
        pass: (m.mean - 1.5).abs() <= 0.01 && (m.variance - 0.75).abs() <= 0.02,
        detail: format!("mean {:.4}, var {:.4}", m.mean, m.variance),
    })
}

fn symmetry(threads: usize) -> Result<Check> {
    let c = ExperimentConfig::new(RegimeProfile::symmetric(3.0), vec![1e3], 6, 100);
    let res = ex::run_batch(&c, threads, None)?;
    let mut worst = 0.0f64;
    let mut ok = true;
    for r in &res {
        match r.per_t[0].values.as_ref().and_then(|v| v.log_ratio) {
            Some(x) => worst = worst.max(x.abs()),
            None => ok = false,
        }
    }
    Ok(Check { name: "symmetry-null", pass: ok && worst <= 1e-9, detail: format!("max |log ratio| {worst:.1e}") })
}

fn limit_density() -> Result<Check> {
    let mass = density_total_mass(3.0);
    let s = sample_limit_b(3.0, 100_000, 3)?;
    let g = density_grid_test(3.0, &s, 20, 20, 3)?;
    Ok(Check {
        name: "limit-density",
        pass: (mass - 1.0).abs() <= 1e-6 && g.chi2.p_value > 0.001,
        detail: format!("mass {mass:.9}, grid p {:.3}", g.chi2.p_value),
    })
}

fn clt() -> Result<Check> {
    let (v, o) = ex::clt_suite(3.0, 1e-3, 10_000, 5)?;
    Ok(Check { name: "clt", pass: v.pass, detail: format!("KS {:.4}", o.ks) })
}

fn determinism(threads: usize) -> Result<Check> {
    let c = ExperimentConfig::new(RegimeProfile::critical(3.0, 1.0), vec![1e3], 4, 7);
    let a = serde_json::to_string(&ex::run_batch(&c, 1, None)?)?;
    let b = serde_json::to_string(&ex::run_batch(&c, threads.max(2), None)?)?;
    Ok(Check { name: "determinism", pass: a == b, detail: format!("{} bytes", a.len()) })
}

pub fn run(threads: usize, verbose: bool) -> Result<bool> {
    let checks: Vec<Check> = vec![
        oracle()?,
        pathsum()?,
        simplex()?,
        pareto()?,
        symmetry(threads)?,
        limit_density()?,
        clt()?,
        determinism(threads)?,
    ];
    let mut all = true;
    for c in &checks {
        all &= c.pass;
        println!("{:<16} {}  {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    if verbose {
        eprintln!("{} of {} checks passed", checks.iter().filter(|c| c.pass).count(), checks.len());
    }
    Ok(all)
}
