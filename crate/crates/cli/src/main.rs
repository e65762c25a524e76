mod config;
mod verify;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dupam::experiments::{self as ex, ExperimentConfig, ReplicateResult, SummaryRow, Verdict};
use dupam::localisation::localise;
use dupam::model::{build_potential, FieldGen, Potential, PotentialField};
use dupam::pathsum::{truncated_path_sum_with, GeometricPath, PathSumOptions};
use dupam::{io as dio, Error};
use serde_json::json;

use config::{FileConfig, Overrides, UsageError};

#[derive(Parser, Debug)]
#[command(name = "dupam", version, about = "Parabolic Anderson model with partially duplicated Pareto potential")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// subcritical | critical | supercritical | symmetric
    #[arg(long, global = true)]
    regime: Option<String>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Comma-separated, strictly increasing.
    #[arg(long, global = true, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window half-width L.
    #[arg(long, global = true)]
    window: Option<u64>,
    /// Output directory (experiment) or file (other commands); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump a materialised field as JSONL.
    Generate,
    /// Solve on a field (file or seed) and dump the state CSV.
    Solve {
        /// Field dump produced by `generate`.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Keep only the k largest sites per time.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Localisation report (JSONL, one record per t).
    Localise,
    /// Tiny-lattice path-sum oracle; per-path CSV.
    Pathsum {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        target: i64,
        #[arg(long, default_value_t = 10)]
        max_len: usize,
    },
    /// Run a Monte Carlo suite.
    Experiment {
        suite: Suite,
        /// Also write per-figure CSVs.
        #[arg(long)]
        emit_plotdata: bool,
    },
    /// Fast self-test battery; prints a verdict table.
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Localisation,
    Phase,
    Critical,
    Variance,
    Clt,
    PointProcess,
    Heuristics,
    Zeta,
}

struct Ctx {
    cfg: FileConfig,
    out: Option<PathBuf>,
    threads: usize,
    log: LogLevel,
}

impl Ctx {
    fn info(&self, msg: &str) {
        if self.log >= LogLevel::Info {
            eprintln!("{msg}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::WrongSuite(_) | Error::Precondition(_) | Error::Underpowered(_) | Error::Unsupported(_)) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    let mut cfg = FileConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        alpha: c.alpha,
        regime: c.regime.clone(),
        beta: c.beta,
        t_grid: c.t_grid.clone(),
        replicates: c.replicates,
        seed: c.seed,
        window: c.window,
        tolerance: c.tolerance,
    });
    let ctx = Ctx { cfg, out: c.out.clone(), threads: c.threads, log: c.log_level };
    match cli.command {
        Command::Generate => generate(&ctx),
        Command::Solve { field, top } => solve(&ctx, field.as_deref(), top),
        Command::Localise => localise_cmd(&ctx),
        Command::Pathsum { field, t, target, max_len } => pathsum(&ctx, field.as_deref(), t, target, max_len),
        Command::Experiment { suite, emit_plotdata } => experiment(&ctx, suite, emit_plotdata),
        Command::Verify => verify::run(ctx.threads, ctx.log >= LogLevel::Info),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn fixed_window(ctx: &Ctx) -> Result<u64> {
    match ctx.cfg.window {
        config::WindowSetting::Fixed(l) => Ok(l),
        _ => Err(anyhow!(UsageError("this command needs --window L".into()))),
    }
}

fn field_from(ctx: &Ctx, path: Option<&Path>) -> Result<PotentialField> {
    match path {
        Some(p) => Ok(dio::load_field(p)?),
        None => Ok(build_potential(&ctx.cfg.profile()?, fixed_window(ctx)?, ctx.cfg.seed)?),
    }
}

fn generate(ctx: &Ctx) -> Result<bool> {
    let f = build_potential(&ctx.cfg.profile()?, fixed_window(ctx)?, ctx.cfg.seed)?;
    let mut w = output(ctx.out.as_deref())?;
    dio::write_field(&f, &mut w)?;
    w.flush()?;
    Ok(true)
}

fn solve(ctx: &Ctx, field: Option<&Path>, top: Option<usize>) -> Result<bool> {
    let f = field_from(ctx, field)?;
    let grid = &ctx.cfg.t_grid;
    let use_ode = match ctx.cfg.solver {
        ex::SolverChoice::Ode => true,
        ex::SolverChoice::Spectral => false,
        ex::SolverChoice::Auto => grid.iter().all(|&t| t <= ctx.cfg.ode_max_t),
    };
    let mut w = output(ctx.out.as_deref())?;
    if use_ode {
        let opts = dupam::solver::SolveOptions { tol: ctx.cfg.tolerance, ..Default::default() };
        let states = dupam::solver::solve_values(f.values(), grid, &opts)?;
        for s in &states {
            if s.leakage_warning {
                ctx.info(&format!("warning: boundary leakage {:.3e} at t = {}", s.leakage, s.t));
            }
        }
        dio::write_state_csv(&states, top, &mut w)?;
    } else {
        writeln!(w, "t,z,v,log_v,log_mass")?;
        for &t in grid {
            let peak = (-(f.window as i64)..=f.window as i64)
                .max_by(|a, b| {
                    let pa = dupam::localisation::psi(t, *a, f.xi(*a));
                    let pb = dupam::localisation::psi(t, *b, f.xi(*b));
                    pa.total_cmp(&pb)
                })
                .unwrap_or(0);
            let sp = dupam::spectral::solve_spectral(&f, t, f.window, peak, &[peak], &Default::default())?;
            let mut buf = Vec::new();
            dio::write_sparse_csv(&sp, top, &mut buf)?;
            // Drop the per-call header.
            let text = String::from_utf8(buf)?;
            for line in text.lines().skip(1) {
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()?;
    Ok(true)
}

fn localise_cmd(ctx: &Ctx) -> Result<bool> {
    let profile = ctx.cfg.profile()?;
    let field = FieldGen::new(profile.clone(), ctx.cfg.seed)?;
    let mut w = output(ctx.out.as_deref())?;
    for &t in &ctx.cfg.t_grid {
        let (report, _) = localise(&field, ctx.cfg.seed, t, &profile, None)?;
        serde_json::to_writer(&mut w, &report)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(true)
}

fn pathsum(ctx: &Ctx, field: Option<&Path>, t: f64, target: i64, max_len: usize) -> Result<bool> {
    let f = field_from(ctx, field)?;
    let mut rows: Vec<(GeometricPath, f64)> = Vec::new();
    let mut err = None;
    let ps = truncated_path_sum_with(&f, t, target, max_len, &PathSumOptions::default(), &mut |sites, lv| {
        match GeometricPath::new(sites.to_vec()) {
            Ok(p) => rows.push((p, lv)),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    let mut w = output(ctx.out.as_deref())?;
    dio::write_path_csv(&rows, &mut w)?;
    w.flush()?;
    ctx.info(&format!(
        "paths {} log_u_lower {} log_tail_bound {}",
        ps.paths, ps.log_u_lower, ps.log_tail_bound
    ));
    Ok(true)
}

fn version_string() -> String {
    let v = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match git {
        Some(g) if !g.is_empty() => format!("dupam {v} ({g})"),
        _ => format!("dupam {v}"),
    }
}

fn write_record(dir: &Path, ctx: &Ctx, suite: Suite) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = format!("# suite = {:?}\n", format!("{suite:?}").to_lowercase());
    text.push_str(&format!("# version = {:?}\n", version_string()));
    text.push_str(&toml::to_string(&ctx.cfg)?);
    fs::write(dir.join("effective_config.toml"), text)?;
    fs::write(dir.join("version.txt"), version_string() + "\n")?;
    let started = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&json!({ "timestamp_unix": started, "threads": ctx.threads }))?)?;
    Ok(())
}

fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("summary.csv"))?);
    writeln!(
        w,
        "t,ok,failed,unresolved,median_log_ratio,median_abs_log_ratio,median_two_site_mass,two_site_mass_ci_lo,two_site_mass_ci_hi,median_q_t,median_var_q,nn_in_band,median_heur_gap,e1_rate,e2_rate"
    )?;
    let o = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.ok,
            r.failed,
            r.unresolved,
            o(r.median_log_ratio),
            o(r.median_abs_log_ratio),
            o(r.median_two_site_mass),
            o(r.two_site_mass_ci_lo),
            o(r.two_site_mass_ci_hi),
            o(r.median_q_t),
            o(r.median_var_q),
            o(r.nn_in_band),
            o(r.median_heur_gap),
            o(r.e1_rate),
            o(r.e2_rate)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_plotdata(dir: &Path, rows: &[SummaryRow], verdict: &Verdict) -> Result<()> {
    let o = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut a = String::from("t,median_abs_log_ratio,median_log_ratio\n");
    let mut b = String::from("t,median_two_site_mass,ci_lo,ci_hi\n");
    for r in rows {
        a.push_str(&format!("{},{},{}\n", r.t, o(r.median_abs_log_ratio), o(r.median_log_ratio)));
        b.push_str(&format!("{},{},{},{}\n", r.t, o(r.median_two_site_mass), o(r.two_site_mass_ci_lo), o(r.two_site_mass_ci_hi)));
    }
    fs::write(dir.join("plot_log_ratio.csv"), a)?;
    fs::write(dir.join("plot_two_site_mass.csv"), b)?;
    if let (Some(ts), Some(ks)) = (verdict.statistics.get("t_grid"), verdict.statistics.get("ks_distance")) {
        let mut c = String::from("t,ks_distance\n");
        for (t, k) in ts.as_array().into_iter().flatten().zip(ks.as_array().into_iter().flatten()) {
            c.push_str(&format!("{t},{k}\n"));
        }
        fs::write(dir.join("plot_ks.csv"), c)?;
    }
    Ok(())
}

fn write_verdicts(dir: &Path, verdicts: &[Verdict]) -> Result<()> {
    let mut map = serde_json::Map::new();
    for v in verdicts {
        map.insert(
            v.suite.clone(),
            json!({ "verdict": if v.pass { "PASS" } else { "FAIL" }, "statistics": v.statistics }),
        );
    }
    fs::write(dir.join("verdicts.json"), serde_json::to_string_pretty(&serde_json::Value::Object(map))? + "\n")?;
    Ok(())
}

fn run_batch(ctx: &Ctx, config: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    let total = config.replicates;
    let done = AtomicUsize::new(0);
    let verbose = ctx.log >= LogLevel::Info;
    let step = (total / 20).max(1);
    let progress = |k: usize| {
        done.store(k, Ordering::Relaxed);
        if verbose && (k % step == 0 || k == total) {
            eprintln!("  replicates {k}/{total}");
        }
    };
    Ok(ex::run_batch(config, ctx.threads, Some(&progress))?)
}

fn experiment(ctx: &Ctx, suite: Suite, plot: bool) -> Result<bool> {
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from(format!("out-{}", format!("{suite:?}").to_lowercase())));
    let cfg = &ctx.cfg;
    let config = cfg.experiment()?;
    config.validate()?;
    // Reject a mismatched regime before spending any compute.
    match suite {
        Suite::Phase => {
            if dupam::localisation::regime_of(&config.profile)? == dupam::localisation::Regime::Critical {
                return Err(Error::WrongSuite("phase suite needs a subcritical or supercritical profile".into()).into());
            }
        }
        Suite::Critical | Suite::Zeta => {
            if dupam::localisation::regime_of(&config.profile)? != dupam::localisation::Regime::Critical {
                return Err(Error::WrongSuite(format!("{suite:?} suite needs a critical profile")).into());
            }
        }
        _ => {}
    }
    write_record(&dir, ctx, suite)?;
    ctx.info(&format!("suite {suite:?} -> {}", dir.display()));
    let verdict: Verdict = match suite {
        Suite::Clt => {
            let (v, _) = ex::clt_suite(cfg.alpha, cfg.clt.theta_over_xi, cfg.clt.k_size, cfg.seed)?;
            v
        }
        Suite::PointProcess => {
            let profile = cfg.profile()?;
            let boxes = ex::default_boxes(&profile);
            let (v, _) = ex::point_process_suite(
                &profile,
                cfg.point_process.s,
                cfg.point_process.fields,
                &boxes,
                cfg.seed,
                &cfg.significance,
            )?;
            v
        }
        _ => {
            let results = run_batch(ctx, &config)?;
            let mut w = BufWriter::new(File::create(dir.join("replicates.jsonl"))?);
            dio::write_jsonl(&results, &mut w)?;
            w.flush()?;
            let rows = ex::summarise(&config, &results);
            write_summary(&dir, &rows)?;
            let v = match suite {
                Suite::Localisation => ex::localisation_suite(&config, &results)?,
                Suite::Phase => ex::phase_suite(&config, &results)?,
                Suite::Critical => ex::critical_suite(&config, &results)?,
                Suite::Variance => ex::variance_suite(&config, &results)?,
                Suite::Zeta => ex::zeta_report(&config, &results)?,
                Suite::Heuristics => {
                    let stats = ex::heuristic_report(&config, &results)?;
                    Verdict { suite: "heuristics".into(), pass: true, statistics: stats }
                }
                Suite::Clt | Suite::PointProcess => unreachable!(),
            };
            if plot {
                write_plotdata(&dir, &rows, &v)?;
            }
            v
        }
    };
    write_verdicts(&dir, std::slice::from_ref(&verdict))?;
    println!("{} {}", verdict.suite, if verdict.pass { "PASS" } else { "FAIL" });
    Ok(verdict.pass)
}
