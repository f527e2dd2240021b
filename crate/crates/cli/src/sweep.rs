//! Sweep driver: runs a cartesian family of experiments, verifies the
//! requested estimates on each run at matched windows, and emits one CSV row
//! per (run, estimate) instance plus summary statistics.
//!
//! Along the amplitude axis the driver applies the exact scaling map of the
//! equation (datum times `k`, all times by `k^{2-p}`), so the implied
//! constants of scale-equivariant estimates must agree across that axis;
//! the summary records the observed deviation.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use fracflow_core::harnack::{self, EstimateReport};
use fracflow_core::problem::{InitialDatum, ProblemSpec};
use fracflow_core::stepper::{save_run, simulate};
use fracflow_core::Multiplier;

#[derive(Args)]
pub struct SweepArgs {
    /// Sweep configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Concurrent run limit
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Deserialize)]
struct SweepConfig {
    /// path of the base experiment config, relative to the sweep file
    config: String,
    #[serde(default)]
    axes: SweepAxes,
    verify: VerifySpec,
}

#[derive(Deserialize, Default)]
struct SweepAxes {
    #[serde(default)]
    scales: Vec<f64>,
    #[serde(default)]
    cells: Vec<usize>,
    #[serde(default)]
    multipliers: Vec<Multiplier>,
    #[serde(default)]
    data: Vec<InitialDatum>,
    #[serde(default)]
    p: Vec<f64>,
    #[serde(default)]
    s: Vec<f64>,
}

#[derive(Deserialize, Clone)]
struct VerifySpec {
    theorems: Vec<String>,
    x0: f64,
    rho: f64,
    /// base-run time window, scaled by `k^{2-p}` along the amplitude axis
    t: f64,
    #[serde(default = "default_r")]
    r: f64,
}

fn default_r() -> f64 {
    1.0
}

struct Combo {
    index: usize,
    scale: f64,
    group: String,
    label: String,
    spec: ProblemSpec,
    window_t: f64,
}

#[derive(Clone)]
struct Row {
    index: usize,
    group: String,
    label: String,
    scale: f64,
    theorem: String,
    regime_pass: bool,
    lhs: f64,
    rhs: f64,
    gamma: Option<f64>,
    extinction_time: Option<f64>,
    error: Option<String>,
}

fn non_empty<T: Clone>(v: &[T], fallback: T) -> Vec<T> {
    if v.is_empty() {
        vec![fallback]
    } else {
        v.to_vec()
    }
}

fn build_combos(base: &ProblemSpec, cfg: &SweepConfig) -> Vec<Combo> {
    let scales = non_empty(&cfg.axes.scales, 1.0);
    let cells = non_empty(&cfg.axes.cells, base.domain.cells);
    let multipliers = non_empty(&cfg.axes.multipliers, base.kernel.multiplier.clone());
    let data = non_empty(&cfg.axes.data, base.initial.clone());
    let ps = non_empty(&cfg.axes.p, base.kernel.p);
    let ss = non_empty(&cfg.axes.s, base.kernel.s);

    let mut combos = Vec::new();
    let mut index = 0;
    for (di, datum) in data.iter().enumerate() {
        for (mi, mult) in multipliers.iter().enumerate() {
            for (ci, &m) in cells.iter().enumerate() {
                for (pi, &p) in ps.iter().enumerate() {
                    for (si, &s) in ss.iter().enumerate() {
                        for &k in &scales {
                            let mut spec = base.clone();
                            spec.domain.cells = m;
                            spec.kernel.p = p;
                            spec.kernel.s = s;
                            spec.kernel.multiplier = mult.clone();
                            // widen the structural bounds to the multiplier range
                            let (lo, hi) = match mult {
                                Multiplier::Constant { value } => (*value, *value),
                                Multiplier::Checkerboard { low, high, .. } => (*low, *high),
                                Multiplier::TimeModulated { low, high, .. } => (*low, *high),
                            };
                            spec.kernel.c1 = spec.kernel.c1.min(lo);
                            spec.kernel.c2 = spec.kernel.c2.max(hi);
                            spec.initial = datum.scaled(k);
                            let tau = k.powf(2.0 - p);
                            spec.horizon *= tau;
                            spec.stepping.dt_init *= tau;
                            spec.stepping.dt_min *= tau;
                            let group = format!("d{di}_m{mi}_c{ci}_p{pi}_s{si}");
                            combos.push(Combo {
                                index,
                                scale: k,
                                group: group.clone(),
                                label: format!("{group}_k{k}"),
                                spec,
                                window_t: cfg.verify.t * tau,
                            });
                            index += 1;
                        }
                    }
                }
            }
        }
    }
    combos
}

fn verify_one(
    theorem: &str,
    traj: &fracflow_core::Trajectory,
    v: &VerifySpec,
    window_t: f64,
) -> Result<EstimateReport> {
    let rep = match theorem {
        "lr" => harnack::verify_lr(traj, v.x0, v.rho, window_t, v.r)?,
        "l1l1" => harnack::verify_l1l1(traj, v.x0, v.rho, window_t)?,
        "l1linf" => harnack::verify_l1linf(traj, v.x0, v.rho, window_t)?,
        "back" => harnack::verify_backward(traj, v.x0, v.rho, window_t, v.r.max(1.5))?,
        other => anyhow::bail!("sweeps support lr|l1l1|l1linf|back, got '{other}'"),
    };
    Ok(rep)
}

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: SweepConfig = toml::from_str(&text).context("parsing sweep config")?;
    let base_path = args
        .config
        .parent()
        .unwrap_or(std::path::Path::new("."))
        .join(&cfg.config);
    let base_text = std::fs::read_to_string(&base_path)
        .with_context(|| format!("reading base config {}", base_path.display()))?;
    let base = ProblemSpec::from_toml(&base_text)?;
    let combos = build_combos(&base, &cfg);
    std::fs::create_dir_all(args.out.join("runs"))?;

    let run_one = |combo: &Combo| -> Vec<Row> {
        let mut rows = Vec::new();
        let outcome = simulate(&combo.spec).and_then(|traj| {
            save_run(
                &args.out.join("runs").join(format!("{:04}", combo.index)),
                &traj,
                0.0,
            )?;
            Ok(traj)
        });
        match outcome {
            Ok(traj) => {
                for theorem in &cfg.verify.theorems {
                    let row = match verify_one(theorem, &traj, &cfg.verify, combo.window_t) {
                        Ok(rep) => Row {
                            index: combo.index,
                            group: combo.group.clone(),
                            label: combo.label.clone(),
                            scale: combo.scale,
                            theorem: theorem.clone(),
                            regime_pass: rep.regime_check.pass,
                            lhs: rep.lhs,
                            rhs: rep.rhs_unit_gamma,
                            gamma: rep.gamma_obs,
                            extinction_time: traj.extinction_time,
                            error: None,
                        },
                        Err(e) => Row {
                            index: combo.index,
                            group: combo.group.clone(),
                            label: combo.label.clone(),
                            scale: combo.scale,
                            theorem: theorem.clone(),
                            regime_pass: false,
                            lhs: f64::NAN,
                            rhs: f64::NAN,
                            gamma: None,
                            extinction_time: traj.extinction_time,
                            error: Some(e.to_string()),
                        },
                    };
                    rows.push(row);
                }
            }
            Err(e) => {
                // partial failures are recorded per row; the sweep continues
                for theorem in &cfg.verify.theorems {
                    rows.push(Row {
                        index: combo.index,
                        group: combo.group.clone(),
                        label: combo.label.clone(),
                        scale: combo.scale,
                        theorem: theorem.clone(),
                        regime_pass: false,
                        lhs: f64::NAN,
                        rhs: f64::NAN,
                        gamma: None,
                        extinction_time: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        rows
    };

    let mut rows: Vec<Row> = if args.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| combos.par_iter().flat_map_iter(run_one).collect())
    } else {
        combos.par_iter().flat_map_iter(run_one).collect()
    };
    rows.sort_by(|a, b| (a.index, &a.theorem).cmp(&(b.index, &b.theorem)));

    // CSV
    let mut csv = String::from(
        "index,group,label,scale,theorem,regime_pass,lhs,rhs_unit_gamma,gamma_obs,extinction_time,error\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            r.group,
            r.label,
            r.scale,
            r.theorem,
            r.regime_pass,
            r.lhs,
            r.rhs,
            r.gamma.map(|g| g.to_string()).unwrap_or_default(),
            r.extinction_time.map(|t| t.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ));
    }
    std::fs::write(args.out.join("sweep.csv"), csv)?;

    // summary: per-theorem gamma statistics and scale invariance per group
    let mut summary = serde_json::Map::new();
    for theorem in &cfg.verify.theorems {
        let gammas: Vec<f64> = rows
            .iter()
            .filter(|r| &r.theorem == theorem)
            .filter_map(|r| r.gamma)
            .filter(|g| g.is_finite() && *g > 0.0)
            .collect();
        let mut sorted = gammas.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.is_empty() {
            f64::NAN
        } else {
            sorted[sorted.len() / 2]
        };
        // max relative gamma deviation across the scale axis within groups
        let mut max_dev = 0.0f64;
        let mut groups: Vec<&str> = rows
            .iter()
            .filter(|r| &r.theorem == theorem)
            .map(|r| r.group.as_str())
            .collect();
        groups.sort_unstable();
        groups.dedup();
        for g in groups {
            let in_group: Vec<f64> = rows
                .iter()
                .filter(|r| &r.theorem == theorem && r.group == g)
                .filter_map(|r| r.gamma)
                .filter(|v| v.is_finite() && *v > 0.0)
                .collect();
            if in_group.len() >= 2 {
                let lo = in_group.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = in_group.iter().cloned().fold(0.0f64, f64::max);
                if lo > 0.0 {
                    max_dev = max_dev.max(hi / lo - 1.0);
                }
            }
        }
        summary.insert(
            theorem.clone(),
            json!({
                "count": gammas.len(),
                "min": sorted.first(),
                "max": sorted.last(),
                "median": median,
                "max_over_min": match (sorted.first(), sorted.last()) {
                    (Some(lo), Some(hi)) if *lo > 0.0 => Some(hi / lo),
                    _ => None,
                },
                "scale_invariance_max_rel_dev": max_dev,
            }),
        );
    }
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let summary = json!({
        "runs": combos.len(),
        "rows": rows.len(),
        "row_failures": failures,
        "estimates": summary,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(args.out.join("summary.json"), &text)?;
    println!("{text}");
    Ok(())
}
