//! Command-line driver: simulate experiments from configuration files,
//! evaluate estimate reports on stored runs, sweep run families, and export
//! plot-ready data series.

mod sweep;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fracflow_core::grid::SignPart;
use fracflow_core::harnack;
use fracflow_core::kernel::{
    assemble_weights, load_weights_cache, save_weights_cache, weights_cache_key,
};
use fracflow_core::oracles;
use fracflow_core::problem::ProblemSpec;
use fracflow_core::stepper::{load_run, save_run, simulate_with_weights, Trajectory};
use fracflow_core::{functionals, operator, BallWindow};

#[derive(Parser)]
#[command(name = "fracflow", version, about = "Singular nonlocal diffusion simulator and estimate harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment described by a TOML configuration file.
    Run(RunArgs),
    /// Evaluate one estimate on a stored run and emit a JSON report.
    Verify(VerifyArgs),
    /// Evaluate a single windowed functional on a stored run.
    Measure(MeasureArgs),
    /// Run a family of experiments and verifications; emits CSV + summary.
    Sweep(sweep::SweepArgs),
    /// Independent oracles: ODE envelopes, mollification, iteration lemmas,
    /// inequality suites and the exact scaling transform.
    Oracle(OracleArgs),
    /// Compare the discrete operator against the quadrature oracle over a
    /// refinement ladder.
    CheckOperator(CheckOperatorArgs),
    /// Export plot-ready CSV series from a stored run.
    ExportPlots(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Output run directory
    #[arg(long)]
    out: PathBuf,
    /// Print the fully resolved configuration and exit
    #[arg(long)]
    print_config: bool,
    /// Kernel-weight cache directory (defaults to $FRACFLOW_CACHE)
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Theorem {
    Lr,
    L1l1,
    L1linf,
    Back,
    Decay,
    Extinction,
    Energy,
    Embedding,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PartArg {
    Pos,
    Neg,
    Abs,
}

impl From<PartArg> for SignPart {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Pos => SignPart::Positive,
            PartArg::Neg => SignPart::Negative,
            PartArg::Abs => SignPart::Absolute,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Stored run directory
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    theorem: Theorem,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Integrability exponent for the lr/back estimates
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Inner/outer radii for the energy and embedding audits
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
    /// Truncation level for the energy audit
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_enum, default_value = "pos")]
    sign: PartArg,
    /// Extinction time override for the decay fit
    #[arg(long)]
    t_star: Option<f64>,
    /// Decay-fit window in remaining time (lower edge)
    #[arg(long)]
    window_lo: Option<f64>,
    #[arg(long)]
    window_hi: Option<f64>,
    /// Exit nonzero on a regime-check failure
    #[arg(long)]
    strict: bool,
    /// Report file (defaults to <run>/reports/<theorem>.json)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    run: PathBuf,
    /// tail | mass-sup | mass-inf | sup-cylinder | perturbation | exponents
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    t1: f64,
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long, value_enum, default_value = "abs")]
    part: PartArg,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Use this tail value instead of measuring it (perturbation only)
    #[arg(long)]
    tail_value: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    verb: OracleVerb,
}

#[derive(Subcommand)]
enum OracleVerb {
    /// Closed-form envelope of `U' = -c U^alpha`
    Ode {
        #[arg(long)]
        u0: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        t: f64,
    },
    /// ODE comparison of a stored run's `L^q` decay
    Compare {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        q: f64,
    },
    /// Exponential time mollification of a stored run
    Mollify {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value = "forward")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iteration-lemma checkers (fast convergence and interpolation)
    Lemmas {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        y0: Option<f64>,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
        /// Comma-separated sequence for the interpolation check
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Elementary inequality suite with sup-searched constants
    Inequalities {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact scaling transform of a stored run
    Scale {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CheckOperatorArgs {
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    s: f64,
    #[arg(long, default_value = "128,256,512")]
    cells: String,
    #[arg(long, default_value_t = -8.0)]
    a: f64,
    #[arg(long, default_value_t = 8.0)]
    b: f64,
    /// Evaluation point (the nearest cell center is used)
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory (defaults to <run>/plots)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Measure(args) => cmd_measure(args),
        Command::Sweep(args) => sweep::cmd_sweep(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::CheckOperator(args) => cmd_check_operator(args),
        Command::ExportPlots(args) => cmd_export(args),
    }
}

fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let (traj, _) = load_run(dir).with_context(|| format!("loading run from {}", dir.display()))?;
    Ok(traj)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let spec = ProblemSpec::from_toml(&text)?;
    if args.print_config {
        print!("{}", spec.resolved_toml()?);
        return Ok(());
    }
    let cache_dir = args
        .cache
        .or_else(|| std::env::var_os("FRACFLOW_CACHE").map(PathBuf::from));

    let start = std::time::Instant::now();
    let weights = match &cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let key = weights_cache_key(&spec.domain, &spec.kernel)?;
            let path = dir.join(format!("weights_{key}.bin"));
            let mut w = assemble_weights(&spec.domain, &spec.kernel)?;
            if path.exists() {
                if let Some(cached) = load_weights_cache(&path, &spec.domain, &spec.kernel)? {
                    w.w = cached;
                }
            } else {
                save_weights_cache(&path, &spec.domain, &spec.kernel, &w)?;
            }
            w
        }
        None => assemble_weights(&spec.domain, &spec.kernel)?,
    };
    if let Some(warning) = &weights.conditioning_warning {
        eprintln!("warning: {warning}");
    }
    let traj = simulate_with_weights(&spec, &weights)?;
    let manifest = save_run(&args.out, &traj, start.elapsed().as_secs_f64())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "run": args.out,
            "snapshots": manifest.snapshots.len(),
            "steps": manifest.dt_history.len(),
            "extinction_time": manifest.extinction_time,
            "aborted": manifest.aborted,
            "content_hash": manifest.content_hash,
        }))?
    );
    if let Some(reason) = manifest.aborted {
        bail!("run aborted: {reason}");
    }
    Ok(())
}

fn emit_report(
    run: &Path,
    name: &str,
    out: Option<PathBuf>,
    value: &serde_json::Value,
) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    let path = match out {
        Some(p) => p,
        None => {
            let dir = run.join("reports");
            std::fs::create_dir_all(&dir)?;
            dir.join(format!("{name}.json"))
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let traj = load_trajectory(&args.run)?;
    let (name, report, regime_pass): (&str, serde_json::Value, bool) = match args.theorem {
        Theorem::Lr => {
            let r = harnack::verify_lr(&traj, args.x0, args.rho, args.t, args.r)?;
            let pass = r.regime_check.pass;
            ("lr", serde_json::to_value(&r)?, pass)
        }
        Theorem::L1l1 => {
            let r = harnack::verify_l1l1(&traj, args.x0, args.rho, args.t)?;
            let pass = r.regime_check.pass;
            ("l1l1", serde_json::to_value(&r)?, pass)
        }
        Theorem::L1linf => {
            let r = harnack::verify_l1linf(&traj, args.x0, args.rho, args.t)?;
            let pass = r.regime_check.pass;
            ("l1linf", serde_json::to_value(&r)?, pass)
        }
        Theorem::Back => {
            let r = harnack::verify_backward(&traj, args.x0, args.rho, args.t, args.r)?;
            let pass = r.regime_check.pass;
            ("back", serde_json::to_value(&r)?, pass)
        }
        Theorem::Decay => {
            let t_star = args
                .t_star
                .or(traj.extinction_time)
                .context("no extinction detected; pass --t-star explicitly")?;
            let window = match (args.window_lo, args.window_hi) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                _ => None,
            };
            let r = harnack::verify_decay(&traj, args.x0, args.rho, t_star, window)?;
            ("decay", serde_json::to_value(&r)?, true)
        }
        Theorem::Extinction => {
            let u0 = &traj.snapshots[0];
            let bound = harnack::extinction_bound(u0, &traj.problem)?;
            let t_num = traj.extinction_time;
            let gamma_star_obs = t_num.map(|t| {
                if bound.bound_factor > 0.0 {
                    t / bound.bound_factor
                } else {
                    0.0
                }
            });
            (
                "extinction",
                json!({
                    "bound_factor": bound.bound_factor,
                    "regime": bound.regime,
                    "norm_exponent": bound.norm_exponent,
                    "t_num": t_num,
                    "gamma_star_obs": gamma_star_obs,
                }),
                true,
            )
        }
        Theorem::Energy => {
            let (rho1, rho2) = (
                args.rho1.context("--rho1 required for the energy audit")?,
                args.rho2.context("--rho2 required for the energy audit")?,
            );
            let (t1, t2) = (
                args.t1.context("--t1 required for the energy audit")?,
                args.t2.context("--t2 required for the energy audit")?,
            );
            let level = args.level.context("--level required for the energy audit")?;
            let r = harnack::audit_energy_estimate(
                &traj,
                args.x0,
                rho1,
                rho2,
                t1,
                t2,
                args.t,
                level,
                args.sign.into(),
            )?;
            let pass = r.regime_check.pass;
            ("energy", serde_json::to_value(&r)?, pass)
        }
        Theorem::Embedding => {
            let (rho1, rho2) = (
                args.rho1.context("--rho1 required for the embedding audit")?,
                args.rho2.context("--rho2 required for the embedding audit")?,
            );
            let (t1, t2) = (args.t1.unwrap_or(0.0), args.t2.unwrap_or(args.t));
            let r = harnack::audit_embedding(&traj, args.x0, rho1, rho2, t1, t2)?;
            let k = &traj.problem.kernel;
            let first = traj
                .window_indices(t1, t2)
                .first()
                .copied()
                .context("no snapshots in the window")?;
            let sob =
                harnack::audit_sobolev(traj.domain(), &traj.snapshots[first], k.p, k.s)?;
            let pass = r.regime_check.pass;
            (
                "embedding",
                json!({ "embedding": r, "sobolev": sob }),
                pass,
            )
        }
    };
    emit_report(&args.run, name, args.out, &report)?;
    if args.strict && !regime_pass {
        bail!("regime check failed");
    }
    Ok(())
}

fn cmd_measure(args: MeasureArgs) -> Result<()> {
    let traj = load_trajectory(&args.run)?;
    let t2 = args.t2.unwrap_or_else(|| traj.final_time());
    let window = BallWindow::new(args.x0, args.rho, args.t1, t2)?;
    let k = &traj.problem.kernel;
    let report = match args.name.as_str() {
        "tail" => {
            let part: SignPart = args.part.into();
            let parts = functionals::tail_parts_mapped(&traj, &window, &|v| match part {
                SignPart::Positive => v.max(0.0),
                SignPart::Negative => (-v).max(0.0),
                SignPart::Absolute => v.abs(),
            })?;
            json!({
                "name": "tail", "window": window, "value": parts.value,
                "parts": {
                    "sup_grid_part": parts.sup_grid_part,
                    "exterior_part": parts.exterior_part,
                    "snapshot_count": parts.snapshot_count,
                }
            })
        }
        "mass-sup" | "mass-inf" => {
            let mode = if args.name == "mass-sup" {
                functionals::WindowMode::Sup
            } else {
                functionals::WindowMode::Inf
            };
            let value = functionals::mass_window(&traj, args.x0, args.rho, args.t1, t2, mode)?;
            json!({ "name": args.name, "window": window, "value": value, "parts": {} })
        }
        "sup-cylinder" => {
            let value = functionals::sup_cylinder(
                &traj,
                args.x0,
                args.rho,
                args.t1,
                t2,
                args.part == PartArg::Abs,
            )?;
            json!({ "name": "sup-cylinder", "window": window, "value": value, "parts": {} })
        }
        "perturbation" => {
            let tail_value = match args.tail_value {
                Some(v) => v,
                None => {
                    let tw = BallWindow::new(args.x0, 0.5 * args.rho, args.t1, t2)?;
                    functionals::tail(&traj, &tw, args.part.into())?
                }
            };
            let p = functionals::perturbation(t2, args.rho, k.p, k.s, tail_value)?;
            json!({
                "name": "perturbation", "window": window, "value": p.value,
                "parts": {
                    "time_ratio_power": p.time_ratio_power,
                    "tail_factor": p.tail_factor,
                    "max_selector_branch": p.max_selector_branch,
                    "tail_value": tail_value,
                }
            })
        }
        "exponents" => {
            let e = functionals::compute_exponents(traj.domain().dim, k.p, k.s, args.r)?;
            json!({ "name": "exponents", "window": window, "value": e.lambda_r, "parts": e })
        }
        other => bail!("unknown measurement '{other}'"),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let report = match args.verb {
        OracleVerb::Ode { u0, c, alpha, t } => {
            let env = oracles::OdeEnvelope::new(u0, c, alpha)?;
            json!({
                "envelope": env,
                "value_at_t": env.eval(t)?,
            })
        }
        OracleVerb::Compare { run, q } => {
            let traj = load_trajectory(&run)?;
            serde_json::to_value(oracles::check_ode_comparison(&traj, q)?)?
        }
        OracleVerb::Mollify {
            run,
            h,
            direction,
            out,
        } => {
            let traj = load_trajectory(&run)?;
            let dir = match direction.as_str() {
                "forward" | "fwd" => oracles::MollifierDirection::Forward,
                "backward" | "bwd" => oracles::MollifierDirection::Backward,
                other => bail!("unknown direction '{other}'"),
            };
            let params = oracles::MollifierParams::new(h, dir)?;
            let moll = oracles::mollify(&traj, &params)?;
            save_run(&out, &moll.trajectory, 0.0)?;
            json!({ "out": out, "warning": moll.warning })
        }
        OracleVerb::Lemmas {
            c,
            b,
            eta,
            y0,
            n_max,
            sequence,
        } => match sequence {
            Some(seq) => {
                let values: Vec<f64> = seq
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .context("parsing --sequence")?;
                serde_json::to_value(oracles::check_interpolation(c, b, eta, &values)?)?
            }
            None => {
                let y0 = y0.context("--y0 required for the fast-convergence check")?;
                serde_json::to_value(oracles::check_fast_convergence(c, b, eta, y0, n_max)?)?
            }
        },
        OracleVerb::Inequalities { p, q, samples, seed } => {
            serde_json::to_value(oracles::algebraic_inequality_suite(p, q, samples, seed)?)?
        }
        OracleVerb::Scale { run, k, out } => {
            let traj = load_trajectory(&run)?;
            let scaled = oracles::scaled_trajectory(&traj, k)?;
            save_run(&out, &scaled, 0.0)?;
            json!({ "out": out, "time_factor": k.powf(2.0 - traj.problem.kernel.p) })
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_check_operator(args: CheckOperatorArgs) -> Result<()> {
    let cells: Vec<usize> = args
        .cells
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --cells")?;
    let gaussian = |x: f64| (-x * x).exp();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &m in &cells {
        let domain = fracflow_core::Domain::build(args.a, args.b, 1, m)?;
        // p = 2 is admitted here for validation against the linear theory
        let kspec = fracflow_core::KernelSpec {
            p: args.p,
            s: args.s,
            c1: 1.0,
            c2: 1.0,
            multiplier: fracflow_core::Multiplier::Constant { value: 1.0 },
        };
        let weights = assemble_weights(&domain, &kspec)?;
        let ctx = operator::OperatorContext::new(&weights);
        let u = fracflow_core::GridFunction::new(domain.centers().iter().map(|&x| gaussian(x)).collect(), 0.0)?;
        let lu = ctx.apply(&u, 0.0)?;
        let i0 = (0..m).min_by(|&i, &j| {
            (domain.center(i) - args.x0)
                .abs()
                .partial_cmp(&(domain.center(j) - args.x0).abs())
                .unwrap()
        })
        .unwrap();
        let x = domain.center(i0);
        let oracle = operator::reference_apply(
            &gaussian,
            x,
            args.p,
            args.s,
            operator::ReferenceOptions::default(),
        )?;
        let rel = (lu.values[i0] - oracle).abs() / oracle.abs();
        errors.push(rel);
        rows.push(json!({
            "cells": m, "x": x, "discrete": lu.values[i0], "oracle": oracle,
            "rel_error": rel,
        }));
    }
    let order = if cells.len() >= 2 {
        let hs: Vec<f64> = cells.iter().map(|&m| (args.b - args.a) / m as f64).collect();
        let (slope, _, _) = harnack::log_log_fit(&hs, &errors)?;
        Some(slope)
    } else {
        None
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "p": args.p, "s": args.s, "points": rows, "order": order,
        }))?
    );
    Ok(())
}

fn write_series(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for (a, b) in rows {
        text.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let traj = load_trajectory(&args.run)?;
    let out = args.out.unwrap_or_else(|| args.run.join("plots"));
    std::fs::create_dir_all(&out)?;
    let rho = args
        .rho
        .unwrap_or_else(|| 0.25 * traj.domain().measure());
    let ball = traj.domain().ball_indices(args.x0, rho)?;
    let h = traj.domain().cell_measure();

    let sup_series: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .map(|s| (s.time, s.sup_abs()))
        .collect();
    write_series(&out.join("sup_series.csv"), "t,sup_u", &sup_series)?;

    let mass_series: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .map(|s| (s.time, ball.iter().map(|&i| h * s.values[i]).sum()))
        .collect();
    write_series(&out.join("mass_series.csv"), "t,mass", &mass_series)?;

    match traj.extinction_time {
        Some(t_star) if t_star > 0.0 => {
            let rows: Vec<(f64, f64)> = mass_series
                .iter()
                .filter(|(t, m)| *t < t_star && *m > 0.0)
                .map(|(t, m)| ((t_star - t).ln(), m.ln()))
                .collect();
            write_series(&out.join("decay_loglog.csv"), "log_remaining,log_mass", &rows)?;
        }
        _ => {
            std::fs::write(
                out.join("decay_loglog.missing.txt"),
                "no extinction detected; the log-log decay series is not available\n",
            )?;
        }
    }

    // profile snapshots, thinned to at most 33 slices
    let n = traj.snapshots.len();
    let stride = n.div_ceil(33).max(1);
    let mut text = String::from("t,x,u\n");
    for (k, snap) in traj.snapshots.iter().enumerate() {
        if k % stride != 0 && k != n - 1 {
            continue;
        }
        for (i, v) in snap.values.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", snap.time, traj.domain().center(i), v));
        }
    }
    std::fs::write(out.join("snapshots.csv"), text)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "out": out,
            "series": ["sup_series.csv", "mass_series.csv", "decay_loglog.csv", "snapshots.csv"],
            "extinct": traj.extinction_time.is_some(),
        }))?
    );
    Ok(())
}
