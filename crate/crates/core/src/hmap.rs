//! The transformation `H_t(x) = (x h_0 * g_t)(x) / h_t(x)`, its Jacobian,
//! inverse, and the harmonicity and moment diagnostics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::doob::DensityEval;
use crate::error::{domain, Error, Result};
use crate::families::{
    base_conv_radial, base_conv_radial_deriv, base_conv_radial_deriv2, h_radial, h_radial_cached, h_radial_deriv,
    FamilyKind, FamilySpec,
};
use crate::kernel::{circle_heat, interaction_rule, radial_integral};
use crate::point::PlanarPoint;
use crate::quad::QuadratureSpec;
use crate::specfun::{bessel_i1_scaled, bessel_k_scaled, gauss, incomplete_bessel_k_scaled};
use crate::stats::McEstimate;

/// Evaluator for `H_t` of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct HEval {
    pub family: FamilySpec,
    pub quad: QuadratureSpec,
}

impl HEval {
    pub fn new(family: FamilySpec) -> Self {
        let quad = family.quad;
        Self { family, quad }
    }

    pub fn with_quad(family: FamilySpec, quad: QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        Ok(Self { family, quad })
    }

    fn spec(&self) -> FamilySpec {
        FamilySpec { quad: self.quad, ..self.family }
    }

    fn check_t(&self, name: &'static str, t: f64) -> Result<()> {
        if (0.0..=self.family.horizon).contains(&t) {
            Ok(())
        } else {
            Err(domain(name, format!("need 0 <= t <= T={}, got {t}", self.family.horizon)))
        }
    }
}

/// Eigenvalues of the Jacobian of `H_t` at `x != 0`: along `x` and across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianEigs {
    pub lambda_radial: f64,
    pub lambda_tangential: f64,
}

// `N_t(r) = B + t B'/r` with `B = h_0 * g_t`, so that `x h_0 * g_t = N_t(|x|) x`.
fn numerator(f: &FamilySpec, t: f64, r: f64) -> Result<f64> {
    if t == 0.0 {
        return base_conv_radial(f, 0.0, r);
    }
    match f.kind {
        FamilyKind::Leb => Ok(1.0),
        FamilyKind::Dir { .. } => Ok(0.0),
        FamilyKind::Gau { alpha } => Ok(alpha / (alpha + t) * gauss(alpha + t, r * r)),
        FamilyKind::GSt => Ok(base_conv_radial(f, t, r)? + t * base_conv_radial_deriv(f, t, r)? / r),
    }
}

fn numerator_deriv(f: &FamilySpec, t: f64, r: f64) -> Result<f64> {
    if t == 0.0 {
        return h_radial_deriv(f, 0.0, r);
    }
    match f.kind {
        FamilyKind::Leb | FamilyKind::Dir { .. } => Ok(0.0),
        FamilyKind::Gau { alpha } => Ok(-r / (alpha + t) * numerator(f, t, r)?),
        FamilyKind::GSt => {
            let b1 = base_conv_radial_deriv(f, t, r)?;
            let b2 = base_conv_radial_deriv2(f, t, r)?;
            Ok(b1 + t * b2 / r - t * b1 / (r * r))
        }
    }
}

// GSt profile from scaled Bessel functions, valid for large `c r` as well.
fn gst_h_bar(f: &FamilySpec, t: f64, r: f64) -> Result<f64> {
    let c = f.ground_rate();
    let z = c * r;
    let y = f.theta * t;
    let k0 = bessel_k_scaled(0, z, &f.quad)?.value;
    let k0y = incomplete_bessel_k_scaled(0, z, y, &f.quad)?.value;
    let k1y = incomplete_bessel_k_scaled(1, z, y, &f.quad)?.value;
    Ok((k0y - c * t * k1y / r) / k0)
}

/// Radial profile `Hbar_t(r)` with `H_t(x) = Hbar_t(|x|) x`.
pub fn h_bar(e: &HEval, t: f64, r: f64) -> Result<f64> {
    e.check_t("h_bar", t)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(domain("h_bar", format!("need a finite radius r > 0, got {r}")));
    }
    let f = e.spec();
    match f.kind {
        FamilyKind::Dir { .. } => Ok(0.0),
        _ if t == 0.0 => Ok(1.0),
        FamilyKind::GSt => gst_h_bar(&f, t, r),
        _ => Ok(numerator(&f, t, r)? / h_radial(&f, t, r)?),
    }
}

// Same as `h_bar` with `h_t` read from the shared radial table.
fn h_bar_fast(e: &HEval, t: f64, r: f64) -> Result<f64> {
    let f = e.spec();
    match f.kind {
        FamilyKind::Dir { .. } => Ok(0.0),
        _ if t == 0.0 => Ok(1.0),
        FamilyKind::GSt => gst_h_bar(&f, t, r),
        _ => Ok(numerator(&f, t, r)? / h_radial_cached(&f, t, r)?),
    }
}

/// `d Hbar_t / dr`.
pub fn h_bar_deriv(e: &HEval, t: f64, r: f64) -> Result<f64> {
    e.check_t("h_bar_deriv", t)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(domain("h_bar_deriv", format!("need a finite radius r > 0, got {r}")));
    }
    let f = e.spec();
    if t == 0.0 || matches!(f.kind, FamilyKind::Dir { .. }) {
        return Ok(0.0);
    }
    let h = h_radial(&f, t, r)?;
    let dh = h_radial_deriv(&f, t, r)?;
    Ok(numerator_deriv(&f, t, r)? / h - numerator(&f, t, r)? * dh / (h * h))
}

/// `H_t(x)`, with `H_t(0) = 0`.
pub fn h_map(e: &HEval, t: f64, x: PlanarPoint) -> Result<PlanarPoint> {
    e.check_t("h_map", t)?;
    if x.is_origin() {
        return Ok(PlanarPoint::ORIGIN);
    }
    Ok(x * h_bar(e, t, x.norm())?)
}

/// Jacobian eigenvalues `lambda = d(r Hbar)/dr` (along `x`) and
/// `lambda_perp = Hbar` (across `x`).
pub fn jacobian_eigs(e: &HEval, t: f64, x: PlanarPoint) -> Result<JacobianEigs> {
    if x.is_origin() {
        return Err(Error::Infinite("the Jacobian of H is not defined at the origin".into()));
    }
    let r = x.norm();
    let hb = h_bar(e, t, r)?;
    Ok(JacobianEigs {
        lambda_radial: hb + r * h_bar_deriv(e, t, r)?,
        lambda_tangential: hb,
    })
}

// Points at which monotonicity of `r Hbar(r)` is checked on a bracket.
const MONOTONE_SAMPLES: usize = 16;

/// Inverse of `H_t`: the point `r y/|y|` with `r Hbar_t(r) = |y|`.
///
/// Fails with [`Error::HypothesisViolation`] if `r Hbar_t(r)` is not
/// increasing on the bracket that contains the root.
pub fn h_map_inverse(e: &HEval, t: f64, y: PlanarPoint) -> Result<PlanarPoint> {
    e.check_t("h_map_inverse", t)?;
    if y.is_origin() {
        return Err(domain("h_map_inverse", "y must be nonzero"));
    }
    if matches!(e.family.kind, FamilyKind::Dir { .. }) {
        return Err(Error::Unsupported("H is identically zero for the Dirac family".into()));
    }
    let target = y.norm();
    let phi = |r: f64| Ok::<f64, Error>(r * h_bar(e, t, r)? - target);
    let (mut lo, mut hi) = (target, target);
    let (mut f_lo, mut f_hi) = (phi(lo)?, phi(hi)?);
    if f_lo == 0.0 {
        return Ok(y);
    }
    for _ in 0..200 {
        if f_lo <= 0.0 {
            break;
        }
        hi = lo;
        f_hi = f_lo;
        lo *= 0.5;
        f_lo = phi(lo)?;
    }
    for _ in 0..200 {
        if f_hi >= 0.0 {
            break;
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = phi(hi)?;
    }
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(domain("h_map_inverse", format!("|y| = {target} is outside the range of r Hbar(r)")));
    }
    let mut prev = f_lo;
    for k in 1..=MONOTONE_SAMPLES {
        let r = lo + (hi - lo) * k as f64 / MONOTONE_SAMPLES as f64;
        let v = if k == MONOTONE_SAMPLES { f_hi } else { phi(r)? };
        if v <= prev {
            return Err(Error::HypothesisViolation { lo, hi });
        }
        prev = v;
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if phi(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..20 {
        let slope = jacobian_eigs(e, t, PlanarPoint::on_axis(r))?.lambda_radial;
        if !(slope > 0.0) {
            return Err(Error::HypothesisViolation { lo, hi });
        }
        let next = (r - phi(r)? / slope).clamp(lo, hi);
        let step = (next - r).abs();
        r = next;
        if step <= 1e-15 * r {
            break;
        }
    }
    Ok(y * (r / target))
}

/// Relative residuals of the space-time harmonicity of `h` and of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityResidual {
    /// `int K_{t-s}(x, y) h_{T-t}(y) dy` against `h_{T-s}(x)`.
    pub h_residual: f64,
    /// `int d_{s,t}(x, y) H_{T-t}(y) dy` against `H_{T-s}(x)`.
    pub h_map_residual: f64,
}

/// Harmonicity residuals at `(s, t, x)`.
///
/// For `H` the identity is multiplied through by `h_{T-s}(x)`, which turns
/// it into `int K_{t-s}(x, y) (y h_0 * g_{T-t})(y) dy = (y h_0 * g_{T-s})(x)`.
/// The interaction part of `K` depends on `|y|` only, so its integral
/// against the odd field vanishes; the Gaussian part reduces to a radial
/// integral against `I_1`.
pub fn harmonicity_residual(e: &HEval, s: f64, t: f64, x: PlanarPoint) -> Result<HarmonicityResidual> {
    let horizon = e.family.horizon;
    if !(0.0 <= s && s < t && t <= horizon) {
        return Err(domain("harmonicity_residual", format!("need 0 <= s < t <= T, got s={s}, t={t}")));
    }
    if x.is_origin() {
        return Err(domain("harmonicity_residual", "x must be nonzero"));
    }
    let f = e.spec();
    let r1 = x.norm();
    let tau = t - s;
    let quad = e.quad.scaled(0.1);
    let width = tau.sqrt();

    let h_residual = if matches!(f.kind, FamilyKind::Dir { .. }) && t == horizon {
        // h_0 is a point mass; the identity is the definition of h_{T-s}
        0.0
    } else {
        let rule = interaction_rule(f.theta, tau)?;
        let h_in = |rho: f64| if t == horizon { h_radial(&f, 0.0, rho) } else { h_radial_cached(&f, horizon - t, rho) };
        let lhs = radial_integral(
            |rho| Ok((circle_heat(tau, rho, r1) + 2.0 * PI * rule.eval(r1, rho)?) * h_in(rho)? * rho),
            &[r1],
            width,
            &quad,
        )?
        .value;
        let rhs = h_radial(&f, horizon - s, r1)?;
        (lhs - rhs).abs() / rhs
    };

    let rhs = r1 * numerator(&f, horizon - s, r1)?;
    let lhs = gaussian_odd_integral(&f, horizon - t, tau, r1, &quad)?;
    let h_map_residual = if rhs == 0.0 { lhs.abs() } else { (lhs - rhs).abs() / rhs.abs() };
    Ok(HarmonicityResidual { h_residual, h_map_residual })
}

// `x/|x| . int g_tau(x - y) (y h_0 * g_u)(y) dy`.
fn gaussian_odd_integral(f: &FamilySpec, u: f64, tau: f64, r1: f64, quad: &QuadratureSpec) -> Result<f64> {
    if matches!(f.kind, FamilyKind::Dir { .. }) {
        return Ok(0.0);
    }
    Ok(radial_integral(
        |rho| {
            let d = r1 - rho;
            let ring = (-0.5 * d * d / tau).exp() * bessel_i1_scaled(r1 * rho / tau) / tau;
            Ok(ring * rho * rho * numerator(f, u, rho)?)
        },
        &[r1],
        tau.sqrt(),
        quad,
    )?
    .value)
}

/// Relative residual of `int K_t(x, y) (y h_0 * g_{T-t})(y) dy = (y h_0 * g_T)(x)`.
pub fn convolution_identity_residual(e: &HEval, t: f64, x: PlanarPoint) -> Result<f64> {
    Ok(harmonicity_residual(e, 0.0, t, x)?.h_map_residual)
}

/// Extremes of the Jacobian eigenvalues over a `(t, r)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBound {
    pub max_radial: f64,
    pub max_tangential: f64,
    pub min_radial: f64,
    pub min_tangential: f64,
    pub points: usize,
}

pub fn eigen_bound_sweep(e: &HEval, times: &[f64], radii: &[f64]) -> Result<EigenBound> {
    let mut b = EigenBound {
        max_radial: f64::NEG_INFINITY,
        max_tangential: f64::NEG_INFINITY,
        min_radial: f64::INFINITY,
        min_tangential: f64::INFINITY,
        points: 0,
    };
    for &t in times {
        for &r in radii {
            let j = jacobian_eigs(e, t, PlanarPoint::on_axis(r))?;
            if !(j.lambda_radial.is_finite() && j.lambda_tangential.is_finite()) {
                return Err(Error::Divergence(format!("Jacobian of H not finite at t={t}, r={r}")));
            }
            b.max_radial = b.max_radial.max(j.lambda_radial);
            b.max_tangential = b.max_tangential.max(j.lambda_tangential);
            b.min_radial = b.min_radial.min(j.lambda_radial);
            b.min_tangential = b.min_tangential.min(j.lambda_tangential);
            b.points += 1;
        }
    }
    Ok(b)
}

/// One entry of a moment-scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub dt: f64,
    /// `E|H_{T-t}(Y) - H_{T-s}(x)|^2 / (t - s)`.
    pub second: McEstimate,
    /// `E|H_{T-t}(Y) - H_{T-s}(x)|^4 / (t - s)^2`.
    pub fourth: McEstimate,
}

/// Normalized second and fourth moments of the increment of `H` between
/// `s` and `s + dt`, for each `dt`, from exact transition draws.
pub fn moment_scaling_sweep(
    e: &HEval,
    s: f64,
    x: PlanarPoint,
    dts: &[f64],
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<MomentRow>> {
    let d = DensityEval::new(e.spec())?;
    let horizon = e.family.horizon;
    let h_at = |tt: f64, p: PlanarPoint| -> Result<PlanarPoint> {
        if p.is_origin() {
            Ok(PlanarPoint::ORIGIN)
        } else {
            Ok(p * h_bar_fast(e, tt, p.norm())?)
        }
    };
    let start = h_at(horizon - s, x)?;
    dts.iter()
        .enumerate()
        .map(|(k, &dt)| {
            let t = s + dt;
            let ys = crate::sampler::sample_transitions(&d, s, t, x, n_paths, seed.wrapping_add(k as u64), workers)?;
            let sq = ys
                .iter()
                .map(|&y| Ok((h_at(horizon - t, y)? - start).norm_sq()))
                .collect::<Result<Vec<f64>>>()?;
            let second: Vec<f64> = sq.iter().map(|q| q / dt).collect();
            let fourth: Vec<f64> = sq.iter().map(|q| q * q / (dt * dt)).collect();
            Ok(MomentRow {
                dt,
                second: McEstimate::from_samples(&second),
                fourth: McEstimate::from_samples(&fourth),
            })
        })
        .collect()
}

/// `E|H_{T-t}(Y) - H_{T-s}(x)|^{2m} / (t - s)^m` for `m` in {1, 2}.
#[allow(clippy::too_many_arguments)]
pub fn moment_scaling_probe(
    e: &HEval,
    m: u32,
    s: f64,
    t: f64,
    x: PlanarPoint,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<McEstimate> {
    if !(m == 1 || m == 2) {
        return Err(domain("moment_scaling_probe", format!("m must be 1 or 2, got {m}")));
    }
    if !(0.0 <= s && s < t && t <= e.family.horizon) {
        return Err(domain("moment_scaling_probe", format!("need 0 <= s < t <= T, got s={s}, t={t}")));
    }
    let row = moment_scaling_sweep(e, s, x, &[t - s], n_paths, seed, workers)?[0];
    Ok(if m == 1 { row.second } else { row.fourth })
}

/// Ratio of largest to smallest mean in a sweep.
pub fn sweep_ratio(values: &[McEstimate]) -> f64 {
    let max = values.iter().map(|v| v.mean).fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().map(|v| v.mean).fold(f64::INFINITY, f64::min);
    max / min
}
