//! `pointdiff`: tables, verification suites and sampling experiments.

mod commands;
mod config;
mod grid;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pointdiff::verify::Suite;

use commands::{cmd_sample, cmd_table, cmd_verify, Failure, Quantity, SampleArgs, SampleKind, TableArgs};
use config::{Overrides, RunConfig, RTOL_ENV};
use grid::parse_grid;

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pointdiff", version, about = "Planar diffusions with a point interaction at the origin")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// File of key=value lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// gst, leb, dir:eps=<f> or gau:alpha=<f>.
    #[arg(long, global = true)]
    family: Option<String>,
    /// Coupling constant.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Horizon.
    #[arg(long = "T", global = true)]
    horizon: Option<f64>,
    /// Relative quadrature tolerance (default from POINTDIFF_RTOL if set).
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Absolute quadrature tolerance.
    #[arg(long, global = true)]
    atol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "n-paths", global = true)]
    n_paths: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate a quantity over a (t, r) grid.
    Table {
        #[arg(value_enum)]
        quantity: Quantity,
        /// Radii: a,b,c or lin:lo:hi:n or log:lo:hi:n.
        #[arg(long, default_value = "1")]
        r: String,
        /// Times, same grammar; defaults to T (a fine grid for hitdensity).
        #[arg(long)]
        t: Option<String>,
        /// Start time for densities.
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        /// Radius of the first point for kernel and density.
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
    },
    /// Run a verification suite; exit status 1 if any check fails.
    Verify {
        /// specfun, kernel, families, doob, hmap, sampler or all.
        suite: String,
    },
    /// Run a sampling experiment.
    Sample {
        #[arg(value_enum)]
        kind: SampleKind,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        /// End time for transitions; defaults to T.
        #[arg(long)]
        t: Option<f64>,
        /// Starting radius.
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Number of grid steps for path experiments.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Radii for diagnostics.
        #[arg(long, default_value = "0.1,0.05,0.025")]
        eps: String,
    },
}

fn overrides(g: &GlobalArgs) -> Overrides {
    Overrides {
        family: g.family.clone(),
        theta: g.theta,
        horizon: g.horizon,
        rtol: g.rtol,
        atol: g.atol,
        seed: g.seed,
        n_paths: g.n_paths,
        workers: g.workers,
        format: g.format.clone(),
        out: g.out.clone(),
    }
}

fn resolve(g: &GlobalArgs) -> Result<RunConfig, String> {
    let file = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            Some(Overrides::parse_file(&text)?)
        }
        None => None,
    };
    let env = std::env::var(RTOL_ENV).ok();
    RunConfig::resolve(env.as_deref(), file.as_ref(), &overrides(g))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli.global).map_err(Failure::Usage)?;
    log::debug!("resolved configuration:\n{}", cfg.to_config_string());
    let out = cfg.out.clone();
    let result = match &cli.command {
        Command::Table { quantity, r, t, s, x0 } => {
            let args = TableArgs {
                quantity: *quantity,
                r: parse_grid(r).map_err(Failure::Usage)?,
                t: t.as_deref().map(parse_grid).transpose().map_err(Failure::Usage)?,
                s: *s,
                x0: *x0,
            };
            cmd_table(&cfg, &args)
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse().map_err(|e: pointdiff::Error| Failure::Usage(e.to_string()))?;
            let table = cmd_verify(&cfg, suite)?;
            if let Some(p) = &out {
                table.write(cfg.format, Some(p))?;
            }
            let failed = table.meta.get("failed").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
            return if failed > 0 { Err(Failure::VerifyFailed(failed)) } else { Ok(()) };
        }
        Command::Sample { kind, s, t, x0, steps, eps } => {
            let args = SampleArgs {
                kind: *kind,
                s: *s,
                t: *t,
                x0: *x0,
                steps: *steps,
                eps: parse_grid(eps).map_err(Failure::Usage)?,
            };
            cmd_sample(&cfg, &args)
        }
    };
    match result {
        Ok(table) => Ok(table.write(cfg.format, out.as_deref())?),
        Err(Failure::Numeric(e, Some(partial))) => {
            partial.write(cfg.format, out.as_deref())?;
            Err(Failure::Numeric(e, None))
        }
        Err(other) => Err(other),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numeric(e, _)) => {
            eprintln!("numeric failure: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::VerifyFailed(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
