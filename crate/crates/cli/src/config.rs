//! Run configuration: defaults, `POINTDIFF_RTOL`, a `key=value` config file,
//! and command-line flags, applied in that order.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pointdiff::families::{FamilyKind, FamilySpec};
use pointdiff::QuadratureSpec;
use serde::Serialize;

pub const RTOL_ENV: &str = "POINTDIFF_RTOL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format '{s}' (expected csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(serialize_with = "as_display")]
    pub family: FamilyKind,
    pub theta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub workers: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn as_display<S: serde::Serializer>(v: &FamilyKind, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl Default for RunConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self {
            family: FamilyKind::GSt,
            theta: 1.0,
            horizon: 1.0,
            rtol: q.rel_tol,
            atol: q.abs_tol,
            seed: 0,
            n_paths: 10_000,
            workers: 1,
            format: Format::Csv,
            out: None,
        }
    }
}

/// Settings that may come from the config file or the command line; unset
/// entries leave the lower-precedence value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub family: Option<String>,
    pub theta: Option<f64>,
    pub horizon: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub workers: Option<usize>,
    pub format: Option<String>,
    pub out: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.trim().parse().map_err(|e| format!("invalid value '{v}' for '{key}': {e}"))
}

impl Overrides {
    /// Parse `key=value` lines; blank lines and lines starting with `#` are
    /// ignored.
    pub fn parse_file(text: &str) -> Result<Self, String> {
        let mut o = Overrides::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got '{line}'", no + 1))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "family" => o.family = Some(v.to_string()),
                "theta" => o.theta = Some(parse_value(k, v)?),
                "T" => o.horizon = Some(parse_value(k, v)?),
                "rtol" => o.rtol = Some(parse_value(k, v)?),
                "atol" => o.atol = Some(parse_value(k, v)?),
                "seed" => o.seed = Some(parse_value(k, v)?),
                "n_paths" | "n-paths" => o.n_paths = Some(parse_value(k, v)?),
                "workers" => o.workers = Some(parse_value(k, v)?),
                "format" => o.format = Some(v.to_string()),
                "out" => o.out = Some(PathBuf::from(v)),
                _ => return Err(format!("line {}: unknown key '{k}'", no + 1)),
            }
        }
        Ok(o)
    }

    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), String> {
        if let Some(f) = &self.family {
            cfg.family = f.parse::<FamilyKind>().map_err(|e| e.to_string())?;
        }
        if let Some(f) = &self.format {
            cfg.format = f.parse()?;
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )* };
        }
        set!(theta, horizon, rtol, atol, seed, n_paths, workers);
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        Ok(())
    }
}

impl RunConfig {
    /// Defaults, then the environment, then the config file, then flags.
    pub fn resolve(env_rtol: Option<&str>, file: Option<&Overrides>, flags: &Overrides) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        if let Some(v) = env_rtol {
            cfg.rtol = parse_value(RTOL_ENV, v)?;
        }
        if let Some(f) = file {
            f.apply(&mut cfg)?;
        }
        flags.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_paths == 0 {
            return Err("n_paths must be positive".into());
        }
        if self.workers == 0 {
            return Err("workers must be positive".into());
        }
        self.family_spec().map(|_| ()).map_err(|e| e.to_string())
    }

    pub fn quad(&self) -> Result<QuadratureSpec, pointdiff::Error> {
        QuadratureSpec::new(self.atol, self.rtol)
    }

    pub fn family_spec(&self) -> Result<FamilySpec, pointdiff::Error> {
        FamilySpec::new(self.family, self.theta, self.horizon, self.quad()?)
    }

    /// Canonical `key=value` form; parsing it back gives the same config.
    pub fn to_config_string(&self) -> String {
        let mut s = format!(
            "family={}\ntheta={}\nT={}\nrtol={}\natol={}\nseed={}\nn_paths={}\nworkers={}\nformat={}\n",
            self.family, self.theta, self.horizon, self.rtol, self.atol, self.seed, self.n_paths, self.workers, self.format
        );
        if let Some(p) = &self.out {
            s.push_str(&format!("out={}\n", p.display()));
        }
        s
    }
}
