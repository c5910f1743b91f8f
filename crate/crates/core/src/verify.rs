//! Named suites of numerical checks, and the goodness-of-fit helpers they
//! share with the acceptance tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::doob::{
    chapman_kolmogorov_residual, forward_equation_residual, gradient_identity_residual, hit_time_law,
    lambda_process, survival_probability, survival_probability_fast, survival_pde_residual, transition_radial_density, DensityEval,
};
use crate::error::{domain, Error, Result};
use crate::families::{
    base_conv_radial, diffusion_residual, drift_eval, h_eval, h_radial, CompositeFamily, FamilyKind, FamilySpec,
};
use crate::hmap::{eigen_bound_sweep, h_map, h_map_inverse, harmonicity_residual, jacobian_eigs, HEval};
use crate::kernel::{
    full_kernel_fast, gst_convolution_residual, gst_eigen_residual, gst_iterated_residual, radial_integral,
    semigroup_residual, KernelParams,
};
use crate::point::PlanarPoint;
use crate::quad::{integrate_to_infinity, QuadratureSpec};
use crate::sampler::{
    fan_out, path_rng, sample_conditional_path, sample_hit_times, sample_transitions, submartingale_probe,
};
use crate::specfun::{
    bessel_k, gauss, heat_kernel, incomplete_bessel_k, renewal_integral, volterra_nu, volterra_nu_prime,
};
use crate::stats::{chi_square_equal_prob, ChiSquareResult, McEstimate, TabulatedLaw};

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub target: String,
    pub measured: f64,
    pub pass: bool,
    /// Error message when the measurement itself failed.
    pub note: Option<String>,
}

impl Check {
    fn from_result(name: impl Into<String>, target: String, measured: Result<f64>, ok: impl Fn(f64) -> bool) -> Self {
        match measured {
            Ok(m) => Self {
                name: name.into(),
                target,
                measured: m,
                pass: ok(m),
                note: None,
            },
            Err(e) => Self {
                name: name.into(),
                target,
                measured: f64::NAN,
                pass: false,
                note: Some(e.to_string()),
            },
        }
    }

    /// Passes when `measured < tol`.
    pub fn below(name: impl Into<String>, measured: Result<f64>, tol: f64) -> Self {
        Self::from_result(name, format!("< {tol:e}"), measured, |m| m < tol)
    }

    /// Passes when `measured >= lo`.
    pub fn at_least(name: impl Into<String>, measured: Result<f64>, lo: f64) -> Self {
        Self::from_result(name, format!(">= {lo}"), measured, |m| m >= lo)
    }

    /// Passes when `lo <= measured <= hi`.
    pub fn within(name: impl Into<String>, measured: Result<f64>, lo: f64, hi: f64) -> Self {
        Self::from_result(name, format!("in [{lo}, {hi}]"), measured, |m| lo <= m && m <= hi)
    }

    /// Passes whenever the measurement succeeds and is finite.
    pub fn report(name: impl Into<String>, measured: Result<f64>) -> Self {
        Self::from_result(name, "report".into(), measured, f64::is_finite)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<48} target {:<16} measured {:<24.6e} {}",
            self.name,
            self.target,
            self.measured,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if let Some(n) = &self.note {
            write!(f, " ({n})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Specfun,
    Kernel,
    Families,
    Doob,
    Hmap,
    Sampler,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Specfun,
        Suite::Kernel,
        Suite::Families,
        Suite::Doob,
        Suite::Hmap,
        Suite::Sampler,
    ];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Specfun => "specfun",
            Suite::Kernel => "kernel",
            Suite::Families => "families",
            Suite::Doob => "doob",
            Suite::Hmap => "hmap",
            Suite::Sampler => "sampler",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "specfun" => Ok(Suite::Specfun),
            "kernel" => Ok(Suite::Kernel),
            "families" => Ok(Suite::Families),
            "doob" => Ok(Suite::Doob),
            "hmap" => Ok(Suite::Hmap),
            "sampler" => Ok(Suite::Sampler),
            "all" => Ok(Suite::All),
            _ => Err(domain("Suite", format!("unknown suite '{s}'"))),
        }
    }
}

/// Inputs shared by every suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub family: FamilySpec,
    pub seed: u64,
    pub n_paths: usize,
    pub workers: usize,
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Vec<Check> {
    match suite {
        Suite::Specfun => specfun_checks(&cfg.family.quad),
        Suite::Kernel => kernel_checks(cfg),
        Suite::Families => family_checks(cfg),
        Suite::Doob => doob_checks(cfg),
        Suite::Hmap => hmap_checks(cfg),
        Suite::Sampler => sampler_checks(cfg),
        Suite::All => Suite::EACH.iter().flat_map(|&s| run_suite(s, cfg)).collect(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn with_kind(f: &FamilySpec, kind: FamilyKind) -> Result<FamilySpec> {
    FamilySpec::new(kind, f.theta, f.horizon, f.quad)
}

fn specfun_checks(quad: &QuadratureSpec) -> Vec<Check> {
    let mut out = vec![];
    for x in [0.25, 1.0, 4.0] {
        let r = renewal_integral(x, quad).map(|v| rel(v.value, x.exp()));
        out.push(Check::below(format!("renewal identity x={x}"), r, 1e-6));
    }
    for a in [0.5, 1.0, 2.0, 5.0] {
        let r = (|| {
            let h = 1e-5 * a;
            let fd = (volterra_nu(a + h, quad)?.value - volterra_nu(a - h, quad)?.value) / (2.0 * h);
            Ok(rel(volterra_nu_prime(a, quad)?.value, fd))
        })();
        out.push(Check::below(format!("nu' vs finite difference a={a}"), r, 1e-5));
    }
    let small = bessel_k(0, 1e-6, quad).map(|k| k.value / 1e6f64.ln());
    out.push(Check::within("K0 small-z ratio z=1e-6", small, 0.9, 1.1));
    let large = bessel_k(0, 20.0, quad).map(|k| k.value / ((std::f64::consts::PI / 40.0).sqrt() * (-20f64).exp()));
    out.push(Check::within("K0 large-z ratio z=20", large, 0.95, 1.05));
    for z in [0.5, 1.0, 3.0] {
        for y in [0.1, 1.0] {
            let r = (|| {
                // int_0^y (1/2) a^{-1} e^{-a - z^2/(4a)} da with a = y e^{-w}
                let head = integrate_to_infinity(
                    |w| {
                        let a = y * (-w).exp();
                        Ok(0.5 * (-a - z * z / (4.0 * a)).exp())
                    },
                    0.0,
                    quad,
                )?
                .value;
                let full = bessel_k(0, z, quad)?.value;
                Ok(rel(incomplete_bessel_k(0, z, y, quad)?.value + head, full))
            })();
            out.push(Check::below(format!("incomplete K0 complement z={z} y={y}"), r, 1e-7));
        }
    }
    out.push(Check::below(
        "heat kernel g_1(0) = 1/(2 pi)",
        heat_kernel(1.0, PlanarPoint::ORIGIN).map(|g| rel(g, 0.5 / std::f64::consts::PI)),
        1e-15,
    ));
    out
}

fn kernel_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let f = &cfg.family;
    let theta = f.theta;
    let mut out = vec![];
    let p = match KernelParams::new(theta, f.quad) {
        Ok(p) => p,
        Err(e) => return vec![Check::report("kernel parameters", Err(e))],
    };
    let tol = if theta < 1e-6 { 1e-6 } else { 5e-4 };
    for (x, y) in [
        (PlanarPoint::on_axis(1.0), PlanarPoint::new(0.0, 1.0)),
        (PlanarPoint::on_axis(2.0), PlanarPoint::on_axis(2.0)),
    ] {
        out.push(Check::below(
            format!("semigroup residual s=0.5 t=1 x={:.1},{:.1} y={:.1},{:.1}", x.x, x.y, y.x, y.y),
            semigroup_residual(&p, 0.5, 1.0, x, y),
            tol,
        ));
    }
    let mut rng = path_rng(cfg.seed, 0);
    let mut sym = 0.0f64;
    let mut lower = f64::INFINITY;
    let pts = (0..20)
        .map(|_| {
            use rand::Rng;
            let a = PlanarPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b = PlanarPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let t = rng.random_range(0.05..1.0);
            (a, b, t)
        })
        .collect::<Vec<_>>();
    let sweep = (|| {
        for &(a, b, t) in &pts {
            let k1 = full_kernel_fast(theta, t, a, b)?;
            let k2 = full_kernel_fast(theta, t, b, a)?;
            sym = sym.max(rel(k1, k2));
            lower = lower.min(k1 - gauss(t, (a - b).norm_sq()));
        }
        Ok(())
    })();
    out.push(Check::below("kernel symmetry on 20 random pairs", sweep.clone().map(|_| sym), 1e-15));
    out.push(Check::at_least("kernel minus heat kernel on 20 random pairs", sweep.map(|_| lower), 0.0));
    for (t, r) in [(0.5, 1.0), (1e-3, 1.0), (0.25, 0.5)] {
        let tol = if t < 0.01 { 1e-4 } else { 1e-5 };
        out.push(Check::below(
            format!("ground-state eigenrelation t={t} |x|={r}"),
            gst_eigen_residual(&p, t, PlanarPoint::on_axis(r)),
            tol,
        ));
    }
    for t in [0.25, 1.0] {
        for r in [0.5, 2.0] {
            let x = PlanarPoint::on_axis(r);
            out.push(Check::below(
                format!("Bessel convolution identity t={t} |x|={r}"),
                gst_convolution_residual(&p, t, x),
                1e-5,
            ));
            out.push(Check::below(
                format!("iterated Bessel identity t={t} |x|={r}"),
                gst_iterated_residual(&p, t * 0.5, t, x),
                1e-5,
            ));
        }
    }
    out
}

fn family_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let f = &cfg.family;
    let (theta, horizon) = (f.theta, f.horizon);
    let mut out = vec![];
    let gst = with_kind(f, FamilyKind::GSt);
    let leb = with_kind(f, FamilyKind::Leb);
    for t in [0.5 * horizon, horizon] {
        let r = gst.as_ref().map_err(Clone::clone).and_then(|g| h_radial(g, t, 1e-8)).map(|h| {
            h / 1e8f64.ln() / (theta * t).exp()
        });
        out.push(Check::within(format!("GSt small-radius law t={t} r=1e-8"), r, 0.9, 1.1));
    }
    let r = leb.as_ref().map_err(Clone::clone).and_then(|l| {
        let nu = volterra_nu(theta * horizon, &l.quad)?.value;
        Ok(h_radial(l, horizon, 1e-8)? / (2.0 * nu * 1e8f64.ln()))
    });
    out.push(Check::within("Leb small-radius law t=T r=1e-8", r, 0.85, 1.15));

    let name = f.kind.to_string();
    if !matches!(f.kind, FamilyKind::Dir { .. }) {
        for r in [1e-8, 1e-6, 1e-4] {
            let ratio = drift_eval(f, horizon, PlanarPoint::on_axis(r))
                .map(|b| b.radial_part.abs() * r * (1.0 / r).ln());
            out.push(Check::within(format!("{name} drift blow-up ratio |x|={r:e}"), ratio, 0.5, 2.0));
        }
    }
    let fd = (|| {
        let (t, r) = (0.7 * horizon, 0.8);
        let h = 1e-4;
        let lg = |rr: f64| h_radial(f, t, rr).map(f64::ln);
        let fd = (lg(r + h)? - lg(r - h)?) / (2.0 * h);
        Ok(rel(drift_eval(f, t, PlanarPoint::on_axis(r))?.radial_part, fd))
    })();
    out.push(Check::below(format!("{name} drift vs finite difference"), fd, 1e-5));
    for (t, r) in [(0.5 * horizon, 0.7), (horizon, 1.5)] {
        out.push(Check::below(
            format!("{name} diffusion equation t={t} r={r}"),
            diffusion_residual(f, t, r),
            1e-2,
        ));
    }
    let comp = (|| {
        let g = gst.clone()?;
        let l = leb.clone()?;
        let c = CompositeFamily::new(vec![(0.3, g), (1.7, l)])?;
        let x = PlanarPoint::new(0.4, 0.9);
        let t = 0.5 * horizon;
        let direct = 0.3 * h_eval(&g, t, x)? + 1.7 * h_eval(&l, t, x)?;
        Ok((c.h_eval(t, x)? - direct).abs())
    })();
    out.push(Check::below("positive combination is exact", comp, 1e-300));
    out
}

fn doob_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let f = &cfg.family;
    let horizon = f.horizon;
    let name = f.kind.to_string();
    let mut out = vec![];
    let d = match DensityEval::new(*f) {
        Ok(d) => d,
        Err(e) => return vec![Check::report("density evaluator", Err(e))],
    };
    let x = PlanarPoint::on_axis(1.0);
    if !matches!(f.kind, FamilyKind::Dir { .. }) {
        out.push(Check::below(
            format!("{name} transition density normalization"),
            transition_mass(&d, 0.0, 0.5 * horizon, x).map(|m| (m - 1.0).abs()),
            1e-4,
        ));
        out.push(Check::below(
            format!("{name} Chapman-Kolmogorov residual"),
            chapman_kolmogorov_residual(&d, 0.0, 0.5 * horizon, horizon, PlanarPoint::on_axis(0.5), PlanarPoint::new(0.3, 0.6)),
            5e-4,
        ));
        out.push(Check::below(
            format!("{name} forward equation residual"),
            forward_equation_residual(&d, 0.0, 0.5 * horizon, PlanarPoint::on_axis(0.8), PlanarPoint::new(0.5, 0.4)),
            5e-2,
        ));
    }
    for kind in [FamilyKind::GSt, FamilyKind::Leb] {
        let r = with_kind(f, kind).and_then(DensityEval::new);
        let t = 0.6 * horizon;
        let pde = r.clone().and_then(|g| survival_pde_residual(&g, t, x));
        out.push(Check::below(format!("{kind} survival PDE residual"), pde, 1e-3));
        let grad = r.and_then(|g| gradient_identity_residual(&g, t, x));
        out.push(Check::below(format!("{kind} gradient identity"), grad, 1e-4));
    }
    let bounds = (|| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in [0.01, 0.3, 1.0, 3.0] {
            let p = survival_probability(&d, horizon, PlanarPoint::on_axis(r))?;
            lo = lo.min(p);
            hi = hi.max(p);
        }
        Ok(lo.min(1.0 - hi))
    })();
    out.push(Check::from_result(
        format!("{name} survival strictly inside (0, 1)"),
        "> 0".into(),
        bounds,
        |m| m > 0.0,
    ));
    let lam = (|| {
        let y = PlanarPoint::new(0.2, -0.6);
        let t = 0.3 * horizon;
        Ok(rel(lambda_process(&d, t, y)? * survival_probability_fast(&d, horizon - t, y)?, 1.0))
    })();
    out.push(Check::below(format!("{name} Lambda = 1/p"), lam, 1e-12));
    if !matches!(f.kind, FamilyKind::Dir { .. }) {
        out.push(Check::below(
            format!("{name} hit-time density normalization"),
            hit_density_mass(&d, x).map(|m| (m - 1.0).abs()),
            1e-5,
        ));
    }
    out
}

fn hmap_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let f = &cfg.family;
    let horizon = f.horizon;
    let name = f.kind.to_string();
    if matches!(f.kind, FamilyKind::Dir { .. }) {
        let e = HEval::new(*f);
        let z = h_map(&e, 0.5 * horizon, PlanarPoint::on_axis(1.0)).map(|h| h.norm());
        return vec![Check::below("dir H vanishes off the origin", z, 1e-300)];
    }
    let tight = QuadratureSpec::new(1e-14, 1e-12).expect("valid tolerances");
    let e = HEval::new(*f);
    let et = match HEval::with_quad(*f, tight) {
        Ok(e) => e,
        Err(err) => return vec![Check::report("H evaluator", Err(err))],
    };
    let t = 0.5 * horizon;
    let mut out = vec![];
    let cross = (|| {
        let mut worst = 0.0f64;
        for x in [PlanarPoint::new(0.3, 0.4), PlanarPoint::new(-2.0, 1.0), PlanarPoint::new(0.0, -0.01)] {
            let h = h_map(&e, t, x)?;
            worst = worst.max(h.cross(x).abs() / (h.norm() * x.norm()));
        }
        Ok(worst)
    })();
    out.push(Check::below(format!("{name} H parallel to x"), cross, 1e-14));
    let fd = (|| {
        let mut worst = 0.0f64;
        for r in [0.3, 1.0, 2.5] {
            let j = jacobian_eigs(&et, t, PlanarPoint::on_axis(r))?;
            let (a, b) = finite_difference_eigs(&et, t, r)?;
            worst = worst.max(rel(j.lambda_radial, a)).max(rel(j.lambda_tangential, b));
        }
        Ok(worst)
    })();
    out.push(Check::below(format!("{name} Jacobian vs finite differences"), fd, 1e-5));
    let trip = (|| {
        let mut worst = 0.0f64;
        for x in [PlanarPoint::on_axis(2.0), PlanarPoint::new(-0.1, 0.05), PlanarPoint::new(3.0, 4.0)] {
            let back = h_map_inverse(&e, t, h_map(&e, t, x)?)?;
            worst = worst.max((back - x).norm() / (1.0 + x.norm()));
        }
        Ok(worst)
    })();
    out.push(Check::below(format!("{name} inverse round trip"), trip, 1e-8));
    let harm = harmonicity_residual(&e, 0.0, t, PlanarPoint::on_axis(1.0));
    out.push(Check::below(
        format!("{name} h harmonicity residual"),
        harm.clone().map(|h| h.h_residual),
        5e-4,
    ));
    out.push(Check::below(format!("{name} H harmonicity residual"), harm.map(|h| h.h_map_residual), 1e-3));
    let times: Vec<f64> = [0.1, 0.4, 0.7, 1.0].iter().map(|k| k * horizon).collect();
    let radii = [1e-3, 1e-2, 0.1, 1.0, 10.0];
    let sweep = eigen_bound_sweep(&e, &times, &radii);
    out.push(Check::report(
        format!("{name} max radial Jacobian eigenvalue"),
        sweep.clone().map(|b| b.max_radial),
    ));
    out.push(Check::report(format!("{name} max tangential Jacobian eigenvalue"), sweep.map(|b| b.max_tangential)));
    out
}

fn sampler_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let f = &cfg.family;
    let horizon = f.horizon;
    let name = f.kind.to_string();
    let n = cfg.n_paths;
    let mut out = vec![];
    let d = match DensityEval::new(*f) {
        Ok(d) => d,
        Err(e) => return vec![Check::report("density evaluator", Err(e))],
    };
    let x = PlanarPoint::on_axis(1.0);
    let repro = (|| {
        let a = sample_transitions(&d, 0.0, 0.5 * horizon, x, 64, cfg.seed, 1)?;
        let b = sample_transitions(&d, 0.0, 0.5 * horizon, x, 64, cfg.seed, 3)?;
        Ok(if a == b { 0.0 } else { 1.0 })
    })();
    out.push(Check::below(format!("{name} reproducible across worker counts"), repro, 0.5));
    if !matches!(f.kind, FamilyKind::Dir { .. }) {
        let chi = transition_chi_square(&d, 0.0, 0.5 * horizon, x, n, cfg.seed, cfg.workers, 20);
        out.push(Check::at_least(
            format!("{name} transition radial chi-square p (n={n})"),
            chi.map(|c| c.p_value),
            0.01,
        ));
        let hits = hit_time_check(&d, x, n, cfg.seed, cfg.workers, 20);
        let label = if f.kind == FamilyKind::GSt { "GIG hit-time" } else { "hit-time" };
        out.push(Check::at_least(
            format!("{name} {label} chi-square p (n={n})"),
            hits.clone().map(|h| h.chi_square.p_value),
            0.01,
        ));
        out.push(Check::below(
            format!("{name} hit fraction in SE"),
            hits.map(|h| h.fraction.z_score(h.expected_fraction).abs()),
            4.0,
        ));
        let grid: Vec<f64> = (0..5).map(|k| horizon * k as f64 / 4.0).collect();
        let sub = submartingale_probe(&d, x, &grid, n.min(20_000), cfg.seed, cfg.workers);
        out.push(Check::below(
            format!("{name} submartingale means (max drop in SE)"),
            sub.map(|s| max_drop(&s)),
            3.0,
        ));
    }
    out.extend(conditional_checks(&d, n.min(20_000), cfg.seed, cfg.workers));
    out
}

/// Largest decrease between consecutive means, in combined standard errors;
/// a sequence is nondecreasing within `k` SE iff this is at most `k`.
pub fn max_drop(means: &[McEstimate]) -> f64 {
    means
        .windows(2)
        .map(|w| {
            let drop = w[0].mean - w[1].mean;
            let se = w[0].combined_se(&w[1]);
            if drop <= 0.0 {
                0.0
            } else if se > 0.0 {
                drop / se
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Checks of the survival-conditioned path law of one family.
pub fn conditional_checks(d: &DensityEval, n: usize, seed: u64, workers: usize) -> Vec<Check> {
    let f = &d.family;
    let horizon = f.horizon;
    let name = f.kind.to_string();
    let x0 = PlanarPoint::on_axis(1.0);
    let steps = 10;
    let grid: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    let paths = match fan_out(n, seed, workers, |rng, _| sample_conditional_path(d, x0, &grid, rng)) {
        Ok(p) => p,
        Err(e) => return vec![Check::report(format!("{name} conditional paths"), Err(e))],
    };
    let mut out = vec![];
    match f.kind {
        FamilyKind::Leb => {
            let m = gaussian_increment_z(&paths.iter().map(|p| p.points.clone()).collect::<Vec<_>>(), &grid);
            out.push(Check::below("leb conditional increments Gaussian (max |z|)", Ok(m), 4.0));
        }
        FamilyKind::Dir { .. } => {
            let mut worst = 0.0f64;
            for k in [2, 5, 8] {
                let t = grid[k];
                let e = McEstimate::from_samples(&paths.iter().map(|p| p.points[k].x).collect::<Vec<_>>());
                worst = worst.max(e.z_score(x0.x * (horizon - t) / horizon).abs());
            }
            out.push(Check::below("dir bridge mean (max |z|)", Ok(worst), 4.0));
            let pinned = paths.iter().all(|p| p.points[steps] == PlanarPoint::ORIGIN);
            out.push(Check::below("dir bridge pinned at T", Ok(if pinned { 0.0 } else { 1.0 }), 0.5));
        }
        FamilyKind::Gau { alpha } => {
            let k = steps / 2;
            let fit = drift_regression(
                &paths.iter().map(|p| (p.points[k], p.points[k + 1])).collect::<Vec<_>>(),
                grid[k + 1] - grid[k],
            );
            let expect = -1.0 / (alpha + horizon - grid[k]);
            out.push(Check::below(
                "gau drift regression slope (|z|)",
                Ok(((fit.slope - expect) / fit.std_error).abs()),
                3.0,
            ));
        }
        FamilyKind::GSt => {
            let mid = steps / 2;
            let mc = McEstimate::from_samples(&paths.iter().map(|p| p.points[mid].norm()).collect::<Vec<_>>());
            let exact = conditional_mean_radius(d, grid[mid], x0);
            out.push(Check::below(
                "gst conditional mean radius (|error| - 3 SE)",
                exact.map(|m| (mc.mean - m).abs() - 3.0 * mc.std_error),
                2e-2,
            ));
        }
    }
    out
}

/// `int d_{s,t}(x, y) dy`.
pub fn transition_mass(d: &DensityEval, s: f64, t: f64, x: PlanarPoint) -> Result<f64> {
    let quad = QuadratureSpec::new(1e-10, 1e-8)?;
    Ok(radial_integral(|rho| transition_radial_density(d, s, t, x, rho), &[x.norm()], (t - s).sqrt(), &quad)?.value)
}

/// `int_0^T` of the hit-time density by adaptive quadrature, independent of
/// the law's own tabulation.
pub fn hit_density_mass(d: &DensityEval, x0: PlanarPoint) -> Result<f64> {
    let law = hit_time_law(d, x0)?;
    let horizon = law.horizon();
    let quad = QuadratureSpec::new(1e-13, 1e-10)?;
    let mut points = vec![0.0];
    points.extend([1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999].iter().map(|k| k * horizon));
    points.push(horizon);
    Ok(crate::quad::integrate(|t| law.density(t), &points, &quad)?.value)
}

/// Radial marginal `rho -> int d_{s,t}(x, rho e^{i phi}) rho d phi` as a
/// tabulated law.
pub fn radial_marginal_law<'a>(
    d: &'a DensityEval,
    s: f64,
    t: f64,
    x: PlanarPoint,
) -> Result<TabulatedLaw<impl Fn(f64) -> Result<f64> + 'a>> {
    let tau = t - s;
    let r1 = x.norm();
    let r_max = r1 + 12.0 * tau.sqrt() + 1.0;
    let core = 0.1 * tau.sqrt().min(r1.max(1e-3));
    let mut knots = vec![0.0];
    knots.extend((0..=24).map(|k| core * 10f64.powf(-12.0 + 0.5 * k as f64)));
    let panels = 600;
    knots.extend((1..=panels).map(|k| core + (r_max - core) * k as f64 / panels as f64));
    TabulatedLaw::new(
        move |rho: f64| if rho > 0.0 { transition_radial_density(d, s, t, x, rho) } else { Ok(0.0) },
        knots,
    )
}

/// Pearson test of `n` exact draws from `d_{s,t}(x, .)` on the radius.
#[allow(clippy::too_many_arguments)]
pub fn transition_chi_square(
    d: &DensityEval,
    s: f64,
    t: f64,
    x: PlanarPoint,
    n: usize,
    seed: u64,
    workers: usize,
    bins: usize,
) -> Result<ChiSquareResult> {
    let law = radial_marginal_law(d, s, t, x)?;
    let radii: Vec<f64> = sample_transitions(d, s, t, x, n, seed, workers)?
        .iter()
        .map(|y| y.norm())
        .collect();
    chi_square_equal_prob(&radii, bins, |u| law.quantile(u))
}

/// Outcome of the hit-time sampling checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitCheck {
    pub chi_square: ChiSquareResult,
    /// Fraction of trials that hit the origin before `T`.
    pub fraction: McEstimate,
    pub expected_fraction: f64,
}

/// Sampled hit times against the hit-time law of `d` started at `x0`.
pub fn hit_time_check(d: &DensityEval, x0: PlanarPoint, n: usize, seed: u64, workers: usize, bins: usize) -> Result<HitCheck> {
    let law = hit_time_law(d, x0)?;
    let draws = sample_hit_times(d, x0, n, seed, workers)?;
    let times: Vec<f64> = draws.iter().flatten().copied().collect();
    let flags: Vec<f64> = draws.iter().map(|h| if h.is_some() { 1.0 } else { 0.0 }).collect();
    Ok(HitCheck {
        chi_square: chi_square_equal_prob(&times, bins, |u| law.quantile(u))?,
        fraction: McEstimate::from_samples(&flags),
        expected_fraction: 1.0 - law.survive_prob,
    })
}

/// Largest `|z|` over the Gaussian moment tests of the increments of
/// paths sampled on `grid`: mean 0, variance `dt` per component, and zero
/// cross-covariance.
pub fn gaussian_increment_z(paths: &[Vec<PlanarPoint>], grid: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..grid.len() - 1 {
        let dt = grid[k + 1] - grid[k];
        let inc: Vec<PlanarPoint> = paths.iter().map(|p| p[k + 1] - p[k]).collect();
        let col = |g: &dyn Fn(PlanarPoint) -> f64| McEstimate::from_samples(&inc.iter().map(|&v| g(v)).collect::<Vec<_>>());
        let z = [
            col(&|v| v.x).z_score(0.0),
            col(&|v| v.y).z_score(0.0),
            col(&|v| v.x * v.x).z_score(dt),
            col(&|v| v.y * v.y).z_score(dt),
            col(&|v| v.x * v.y).z_score(0.0),
        ];
        worst = z.iter().fold(worst, |w, z| w.max(z.abs()));
    }
    worst
}

/// Least-squares fit of `(X_{t+dt} - X_t)/dt = slope * X_t + noise` over both
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
}

pub fn drift_regression(pairs: &[(PlanarPoint, PlanarPoint)], dt: f64) -> SlopeFit {
    let mut xs = vec![];
    let mut ys = vec![];
    for &(a, b) in pairs {
        xs.extend([a.x, a.y]);
        ys.extend([(b.x - a.x) / dt, (b.y - a.y) / dt]);
    }
    // regression through the origin: the drift is linear with no offset
    let sxx = crate::stats::kahan_sum(xs.iter().map(|x| x * x));
    let sxy = crate::stats::kahan_sum(xs.iter().zip(&ys).map(|(x, y)| x * y));
    let slope = sxy / sxx;
    let rss = crate::stats::kahan_sum(xs.iter().zip(&ys).map(|(x, y)| (y - slope * x).powi(2)));
    let sigma2 = rss / (xs.len() - 1) as f64;
    SlopeFit {
        slope,
        std_error: (sigma2 / sxx).sqrt(),
    }
}

/// `E|X_t|` under the survival-conditioned law started at `x0`, by quadrature.
pub fn conditional_mean_radius(d: &DensityEval, t: f64, x0: PlanarPoint) -> Result<f64> {
    let f = &d.family;
    let horizon = f.horizon;
    let quad = QuadratureSpec::new(1e-10, 1e-8)?;
    let r1 = x0.norm();
    let den = base_conv_radial(f, horizon, r1)?;
    let radial = |rho: f64, w: f64| -> Result<f64> {
        Ok(base_conv_radial(f, horizon - t, rho)? / den * crate::kernel::circle_heat(t, rho, r1) * rho * w)
    };
    let mass = radial_integral(|r| radial(r, 1.0), &[r1], t.sqrt(), &quad)?.value;
    let mean = radial_integral(|r| radial(r, r), &[r1], t.sqrt(), &quad)?.value;
    Ok(mean / mass)
}

/// Central differences of the components of `H_t` at `(r, 0)`: the radial
/// and tangential Jacobian eigenvalues.
pub fn finite_difference_eigs(e: &HEval, t: f64, r: f64) -> Result<(f64, f64)> {
    let step = 1e-4 * r;
    let x = PlanarPoint::on_axis(r);
    let dx = PlanarPoint::on_axis(step);
    let dy = PlanarPoint::new(0.0, step);
    let radial = (h_map(e, t, x + dx)?.x - h_map(e, t, x - dx)?.x) / (2.0 * step);
    let tangential = (h_map(e, t, x + dy)?.y - h_map(e, t, x - dy)?.y) / (2.0 * step);
    Ok((radial, tangential))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: FamilyKind, theta: f64) -> VerifyConfig {
        VerifyConfig {
            family: FamilySpec::new(kind, theta, 1.0, QuadratureSpec::default()).unwrap(),
            seed: 1,
            n_paths: 4000,
            workers: 1,
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::EACH.iter().chain([&Suite::All]) {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), *s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn specfun_suite_passes() {
        let checks = specfun_checks(&QuadratureSpec::default());
        assert!(checks.iter().any(|c| c.name.starts_with("renewal identity x=4")));
        for c in &checks {
            assert!(c.pass, "{c}");
        }
    }

    #[test]
    fn failures_carry_notes() {
        let c = Check::below("x", Err(Error::Unsupported("no".into())), 1.0);
        assert!(!c.pass && c.measured.is_nan() && c.note.is_some());
        assert!(c.to_string().contains("FAIL"));
    }

    #[test]
    fn regression_recovers_linear_drift() {
        let mut rng = path_rng(3, 0);
        use rand::Rng;
        use rand_distr::StandardNormal;
        let dt = 0.01;
        let pairs: Vec<_> = (0..20_000)
            .map(|_| {
                let a = PlanarPoint::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                let nz = PlanarPoint::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
                (a, a + a * (-0.5 * dt) + nz * dt.sqrt())
            })
            .collect();
        let fit = drift_regression(&pairs, dt);
        assert!(((fit.slope + 0.5) / fit.std_error).abs() < 4.0, "{fit:?}");
    }

    #[test]
    fn drop_measure_matches_monotone_check() {
        let e = |m| McEstimate { mean: m, std_error: 0.01, n: 100 };
        let a = [e(0.5), e(0.49), e(0.6)];
        assert!(max_drop(&a) <= 3.0);
        assert_eq!(crate::stats::nondecreasing_within(&a, 3.0), max_drop(&a) <= 3.0);
        assert!(max_drop(&[e(0.5), e(0.4)]) > 3.0);
    }

    #[test]
    fn hmap_suite_passes_for_leb() {
        for c in hmap_checks(&cfg(FamilyKind::Leb, 1.0)) {
            assert!(c.pass, "{c}");
        }
    }
}
