//! The `table`, `verify` and `sample` subcommands.

use clap::ValueEnum;
use pointdiff::doob::{
    conditional_drift, hit_time_law, survival_probability, transition_density, DensityEval,
};
use pointdiff::families::{drift_eval, h_radial, volterra_v_radial, FamilyKind, FamilySpec};
use pointdiff::hmap::{h_map, moment_scaling_sweep, HEval};
use pointdiff::kernel::{full_kernel, KernelParams};
use pointdiff::sampler::{
    fan_out, path_diagnostics, sample_conditional_path, sample_hit_times, sample_path_marginal, sample_transitions,
    submartingale_probe,
};
use pointdiff::specfun::bessel_k;
use pointdiff::verify::{run_suite, Suite, VerifyConfig};
use pointdiff::{Error, PlanarPoint};
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    /// `K_t(x, y)` with `x = (x0, 0)` and `y = (r, 0)`.
    Kernel,
    /// `h_t(r)`.
    H,
    /// Radial part of the drift `b_t(r)`.
    Drift,
    /// Radial part of the survival-conditioned drift.
    Conddrift,
    /// `d_{s,t}(x, y)` with `x = (x0, 0)` and `y = (r, 0)`.
    Density,
    /// `p_t(r)`; at `t = T` the probability of never hitting the origin.
    Survival,
    /// Density of the hitting time at `t` for a start at radius `r`.
    Hitdensity,
    /// `|H_t(x)|` at `x = (r, 0)`.
    Hmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleKind {
    /// Exact draws from `d_{s,t}(x, .)`.
    Transition,
    /// Hitting times (empty when the path survives).
    Hit,
    /// Survival-conditioned paths on a uniform grid.
    Conditional,
    /// Exact marginal paths on a uniform grid.
    Marginal,
    /// Means of `p_{T-t}(X_t)` along marginal paths.
    Submartingale,
    /// Drift integral, small-ball occupation and excursion counts.
    Diagnostics,
    /// Normalized moments of increments of `H` over a dyadic sweep.
    Moments,
}

/// Outcome of a command that did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    /// A numeric error, with the rows produced so far and a diagnostic row.
    Numeric(Error, Option<Table>),
    VerifyFailed(usize),
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn numeric(e: Error) -> Failure {
    Failure::Numeric(e, None)
}

pub fn meta(cfg: &RunConfig, command: &str, what: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), Value::String(command.into()));
    m.insert("what".into(), Value::String(what.into()));
    m.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    m
}

/// Positional options of `table`.
#[derive(Debug, Clone)]
pub struct TableArgs {
    pub quantity: Quantity,
    pub r: Vec<f64>,
    pub t: Option<Vec<f64>>,
    pub s: f64,
    pub x0: f64,
}

pub fn cmd_table(cfg: &RunConfig, a: &TableArgs) -> Result<Table, Failure> {
    let f = cfg.family_spec().map_err(|e| Failure::Usage(e.to_string()))?;
    let horizon = f.horizon;
    let times = match &a.t {
        Some(t) => t.clone(),
        None if a.quantity == Quantity::Hitdensity => (0..=2000).map(|k| horizon * k as f64 / 2000.0).collect(),
        None => vec![horizon],
    };
    let name = a.quantity.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let mut table = Table::new(&["t", "r", "value", "err_estimate"], meta(cfg, "table", &name));
    let d = DensityEval::new(f).map_err(numeric)?;
    let hit_laws: Vec<_> = if a.quantity == Quantity::Hitdensity {
        a.r.iter()
            .map(|&r| hit_time_law(&d, PlanarPoint::on_axis(r)))
            .collect::<Result<_, _>>()
            .map_err(numeric)?
    } else {
        vec![]
    };
    for &t in &times {
        for (j, &r) in a.r.iter().enumerate() {
            let row = match a.quantity {
                Quantity::Hitdensity => hit_laws[j].density(t).map(|v| (v, nominal(&f, v))),
                _ => table_value(&f, &d, a, t, r),
            };
            match row {
                Ok((v, err)) => table.push(vec![t.into(), r.into(), v.into(), err.into()]),
                Err(e) => {
                    table.push(vec![t.into(), r.into(), Cell::Num(f64::NAN), Cell::Num(f64::NAN)]);
                    table.meta.insert("error".into(), Value::String(e.to_string()));
                    return Err(Failure::Numeric(e, Some(table)));
                }
            }
        }
    }
    Ok(table)
}

// Requested relative tolerance times the value, for quantities without an
// error estimate of their own.
fn nominal(f: &FamilySpec, v: f64) -> f64 {
    f.quad.tolerance_for(v)
}

fn table_value(f: &FamilySpec, d: &DensityEval, a: &TableArgs, t: f64, r: f64) -> Result<(f64, f64), Error> {
    let y = PlanarPoint::on_axis(r);
    let x = PlanarPoint::on_axis(a.x0);
    match a.quantity {
        Quantity::Kernel => {
            let k = full_kernel(&KernelParams::new(f.theta, f.quad)?, t, x, y)?;
            Ok((k.value, k.err_estimate))
        }
        Quantity::H => {
            let v = h_radial(f, t, r)?;
            let err = match f.kind {
                _ if t == 0.0 => 0.0,
                FamilyKind::GSt => (f.theta * t).exp() * bessel_k(0, f.ground_rate() * r, &f.quad)?.err_estimate,
                _ => volterra_v_radial(f, t, r)?.err_estimate,
            };
            Ok((v, err))
        }
        Quantity::Drift => {
            let b = drift_eval(f, t, y)?.radial_part;
            Ok((b, nominal(f, b)))
        }
        Quantity::Conddrift => {
            let b = conditional_drift(d, t, y)?.radial_part;
            Ok((b, nominal(f, b)))
        }
        Quantity::Density => {
            let v = transition_density(d, a.s, t, x, y)?;
            Ok((v, nominal(f, v)))
        }
        Quantity::Survival => {
            let v = survival_probability(d, t, y)?;
            Ok((v, nominal(f, v)))
        }
        Quantity::Hmap => {
            let v = h_map(&HEval::new(*f), t, y)?.norm();
            Ok((v, nominal(f, v)))
        }
        Quantity::Hitdensity => unreachable!("hit densities are tabulated per start"),
    }
}

pub fn cmd_verify(cfg: &RunConfig, suite: Suite) -> Result<Table, Failure> {
    let family = cfg.family_spec().map_err(|e| Failure::Usage(e.to_string()))?;
    let vc = VerifyConfig {
        family,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        workers: cfg.workers,
    };
    let checks = run_suite(suite, &vc);
    let mut table = Table::new(&["name", "target", "measured", "pass", "note"], meta(cfg, "verify", &suite.to_string()));
    for c in &checks {
        println!("{c}");
        table.push(vec![
            c.name.as_str().into(),
            c.target.as_str().into(),
            c.measured.into(),
            if c.pass { "pass" } else { "fail" }.into(),
            c.note.as_deref().map(Cell::from).unwrap_or(Cell::Missing),
        ]);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {} failed", checks.len(), failed);
    table.meta.insert("failed".into(), Value::from(failed));
    Ok(table)
}

/// Options of `sample`.
#[derive(Debug, Clone)]
pub struct SampleArgs {
    pub kind: SampleKind,
    pub s: f64,
    pub t: Option<f64>,
    pub x0: f64,
    pub steps: usize,
    pub eps: Vec<f64>,
}

pub fn cmd_sample(cfg: &RunConfig, a: &SampleArgs) -> Result<Table, Failure> {
    let f = cfg.family_spec().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.steps == 0 {
        return Err(Failure::Usage("--steps must be positive".into()));
    }
    let d = DensityEval::new(f).map_err(numeric)?;
    let horizon = f.horizon;
    let x0 = PlanarPoint::on_axis(a.x0);
    let (n, seed, workers) = (cfg.n_paths, cfg.seed, cfg.workers);
    let grid: Vec<f64> = (0..=a.steps).map(|k| horizon * k as f64 / a.steps as f64).collect();
    let name = a.kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let meta = meta(cfg, "sample", &name);
    let table = match a.kind {
        SampleKind::Transition => {
            let t = a.t.unwrap_or(horizon);
            let ys = sample_transitions(&d, a.s, t, x0, n, seed, workers).map_err(numeric)?;
            let mut table = Table::new(&["index", "x", "y", "radius"], meta);
            for (i, y) in ys.iter().enumerate() {
                table.push(vec![Cell::Int(i as u64), y.x.into(), y.y.into(), y.norm().into()]);
            }
            table
        }
        SampleKind::Hit => {
            let hits = sample_hit_times(&d, x0, n, seed, workers).map_err(numeric)?;
            let mut table = Table::new(&["index", "tau"], meta);
            for (i, h) in hits.iter().enumerate() {
                table.push(vec![Cell::Int(i as u64), h.map(Cell::Num).unwrap_or(Cell::Missing)]);
            }
            table
        }
        SampleKind::Conditional | SampleKind::Marginal => {
            let conditional = a.kind == SampleKind::Conditional;
            let paths = fan_out(n, seed, workers, |rng, _| {
                if conditional {
                    sample_conditional_path(&d, x0, &grid, rng)
                } else {
                    sample_path_marginal(&d, x0, &grid, rng)
                }
            })
            .map_err(numeric)?;
            let mut table = Table::new(&["path", "t", "x", "y"], meta);
            for (i, p) in paths.iter().enumerate() {
                for (&t, y) in p.grid.iter().zip(&p.points) {
                    table.push(vec![Cell::Int(i as u64), t.into(), y.x.into(), y.y.into()]);
                }
            }
            table
        }
        SampleKind::Submartingale => {
            let est = submartingale_probe(&d, x0, &grid, n, seed, workers).map_err(numeric)?;
            let mut table = Table::new(&["t", "mean", "std_error", "n"], meta);
            for (&t, e) in grid.iter().zip(&est) {
                table.push(vec![t.into(), e.mean.into(), e.std_error.into(), Cell::Int(e.n as u64)]);
            }
            table
        }
        SampleKind::Diagnostics => {
            let diag = path_diagnostics(&d, x0, &grid, &a.eps, n, seed, workers).map_err(numeric)?;
            let mut table = Table::new(
                &[
                    "eps",
                    "excursions",
                    "excursions_se",
                    "occupation",
                    "occupation_se",
                    "small_ball_drift",
                    "small_ball_drift_se",
                ],
                meta,
            );
            table.meta.insert("drift_integral".into(), Value::from(diag.drift_integral.mean));
            table.meta.insert("drift_integral_se".into(), Value::from(diag.drift_integral.std_error));
            for row in &diag.rows {
                table.push(vec![
                    row.eps.into(),
                    row.excursions.mean.into(),
                    row.excursions.std_error.into(),
                    row.occupation.mean.into(),
                    row.occupation.std_error.into(),
                    row.small_ball_drift.mean.into(),
                    row.small_ball_drift.std_error.into(),
                ]);
            }
            table
        }
        SampleKind::Moments => {
            if matches!(f.kind, FamilyKind::Dir { .. }) {
                return Err(Failure::Usage("moment probes need a family with a nonzero H".into()));
            }
            let dts: Vec<f64> = (1..=6).map(|k| horizon * 0.5f64.powi(k)).collect();
            let rows = moment_scaling_sweep(&HEval::new(f), 0.0, x0, &dts, n, seed, workers).map_err(numeric)?;
            let mut table = Table::new(&["dt", "second", "second_se", "fourth", "fourth_se"], meta);
            for r in &rows {
                table.push(vec![
                    r.dt.into(),
                    r.second.mean.into(),
                    r.second.std_error.into(),
                    r.fourth.mean.into(),
                    r.fourth.std_error.into(),
                ]);
            }
            table
        }
    };
    Ok(table)
}
