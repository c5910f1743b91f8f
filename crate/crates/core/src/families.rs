//! Driving families `h_t` for the Doob transform: ground state, Lebesgue,
//! (regularized) Dirac and Gaussian initial profiles.
//!
//! Every family is radial. For the measure-driven families
//! `h_t(x) = (mu * g_t)(x) + V_t(x)` with `V_t(x) = int_0^t g_r(x) k(t - r) dr`
//! for a family-specific time kernel `k`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::point::PlanarPoint;
use crate::quad::{integrate, QuadratureSpec, SpecialValue};
use crate::specfun::{
    bessel_k, bessel_k01_scaled_fast, exp_integral_e1, gauss, incomplete_bessel_k, incomplete_k_general_scaled,
    volterra_nu_fast, volterra_nu_prime_fast,
};

/// Which initial profile drives the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FamilyKind {
    /// `h_t = e^{theta t} K_0(sqrt(2 theta) |x|)`.
    GSt,
    /// `h_0 = 1`.
    Leb,
    /// `h_0 = delta_0`, with the time kernel cut off below `eps`.
    Dir { eps: f64 },
    /// `h_0 = g_alpha`.
    Gau { alpha: f64 },
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::GSt => write!(f, "gst"),
            FamilyKind::Leb => write!(f, "leb"),
            FamilyKind::Dir { eps } => write!(f, "dir:eps={eps}"),
            FamilyKind::Gau { alpha } => write!(f, "gau:alpha={alpha}"),
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    /// Grammar: `gst`, `leb`, `dir:eps=<float>`, `gau:alpha=<float>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || domain("FamilyKind", format!("expected gst, leb, dir:eps=<f> or gau:alpha=<f>, got {s:?}"));
        let param = |rest: &str, key: &str| -> Result<f64> {
            let v = rest.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(bad)?;
            v.trim().parse::<f64>().map_err(|_| bad())
        };
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("gst") => Ok(FamilyKind::GSt),
            None if s.eq_ignore_ascii_case("leb") => Ok(FamilyKind::Leb),
            Some((name, rest)) if name.eq_ignore_ascii_case("dir") => {
                Ok(FamilyKind::Dir { eps: param(rest.trim(), "eps")? })
            }
            Some((name, rest)) if name.eq_ignore_ascii_case("gau") => {
                Ok(FamilyKind::Gau { alpha: param(rest.trim(), "alpha")? })
            }
            _ => Err(bad()),
        }
    }
}

/// A driving family at coupling `theta` on the horizon `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub theta: f64,
    pub horizon: f64,
    pub quad: QuadratureSpec,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, theta: f64, horizon: f64, quad: QuadratureSpec) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(domain("FamilySpec", format!("theta must be > 0, got {theta}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(domain("FamilySpec", format!("horizon must be > 0, got {horizon}")));
        }
        match kind {
            FamilyKind::Dir { eps } if !(eps > 0.0 && eps < horizon) => {
                return Err(Error::Divergence(format!(
                    "the Dirac time kernel needs a cutoff eps in (0, T), got {eps}"
                )))
            }
            FamilyKind::Gau { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(domain("FamilySpec", format!("alpha must be > 0, got {alpha}")))
            }
            _ => {}
        }
        quad.validate()?;
        Ok(Self {
            kind,
            theta,
            horizon,
            quad,
        })
    }

    /// Parse the family grammar and attach the remaining parameters.
    pub fn parse(family: &str, theta: f64, horizon: f64, quad: QuadratureSpec) -> Result<Self> {
        Self::new(family.parse()?, theta, horizon, quad)
    }

    /// `sqrt(2 theta)`, the decay rate of the ground state.
    pub fn ground_rate(&self) -> f64 {
        (2.0 * self.theta).sqrt()
    }

    /// Whether the quantities carrying `V` depend on an artificial cutoff.
    pub fn is_regularized(&self) -> bool {
        matches!(self.kind, FamilyKind::Dir { .. })
    }

    /// Hashable identity of `(family, t)` for the process-wide caches.
    pub fn cache_key(&self, t: f64) -> CacheKey {
        let (tag, param) = match self.kind {
            FamilyKind::GSt => (0, 0.0),
            FamilyKind::Leb => (1, 0.0),
            FamilyKind::Dir { eps } => (2, eps),
            FamilyKind::Gau { alpha } => (3, alpha),
        };
        CacheKey([
            tag,
            param.to_bits(),
            self.theta.to_bits(),
            self.horizon.to_bits(),
            t.to_bits(),
            self.quad.rel_tol.to_bits(),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u64; 6]);

/// A drift field value; every family here produces a radial drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVector {
    pub components: PlanarPoint,
    pub radial_part: f64,
}

impl DriftVector {
    pub fn radial(x: PlanarPoint, radial_part: f64) -> Self {
        let u = x.unit().unwrap_or(PlanarPoint::ORIGIN);
        Self {
            components: u * radial_part,
            radial_part,
        }
    }

    pub fn zero() -> Self {
        Self {
            components: PlanarPoint::ORIGIN,
            radial_part: 0.0,
        }
    }
}

fn check_t(f: &FamilySpec, t: f64, name: &'static str) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        let _ = f;
        Err(domain(name, format!("t must be >= 0, got {t}")))
    }
}

/// `int_lo^a theta nu'(theta (a - s)) / (s + shift) ds`.
///
/// Split at the midpoint `a - delta`: the left part is taken directly in
/// `log(s + shift)`, the right part by parts against `nu`.
fn measure_kernel(theta: f64, a: f64, lo: f64, shift: f64, quad: &QuadratureSpec) -> Result<f64> {
    if a <= lo {
        return Ok(0.0);
    }
    let delta = 0.5 * (a - lo);
    let direct = if lo + shift >= delta {
        // the pole at s = -shift is far away: integrate in log(a - s)
        integrate(
            |sig| {
                let u = sig.exp();
                Ok(theta * volterra_nu_prime_fast(theta * u) * u / (a - u + shift))
            },
            &[delta.ln(), (a - lo).ln()],
            quad,
        )?
    } else {
        integrate(
            |sig| Ok(theta * volterra_nu_prime_fast(theta * (a - (sig.exp() - shift)))),
            &[(lo + shift).ln(), (a - delta + shift).ln()],
            quad,
        )?
    };
    let boundary = volterra_nu_fast(theta * delta) / (a - delta + shift);
    let tail = integrate(
        |w| {
            let u = delta * (-w).exp();
            let d = a - u + shift;
            Ok(volterra_nu_fast(theta * u) * u / (d * d))
        },
        &[0.0, 2.0, 6.0, 15.0, 40.0, 80.0],
        quad,
    )?;
    Ok(direct.value + boundary - tail.value)
}

/// The time kernel `k(a)` with `V_t(x) = int_0^t g_r(x) k(t - r) dr`.
/// For the Lebesgue family `k(a) = 2 pi nu(theta a)`.
pub fn time_kernel(f: &FamilySpec, a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(domain("time_kernel", format!("a must be >= 0, got {a}")));
    }
    let q = f.quad.scaled(0.1);
    match f.kind {
        FamilyKind::Leb => Ok(2.0 * PI * volterra_nu_fast(f.theta * a)),
        FamilyKind::Dir { eps } => measure_kernel(f.theta, a, eps, 0.0, &q),
        FamilyKind::Gau { alpha } => measure_kernel(f.theta, a, 0.0, alpha, &q),
        FamilyKind::GSt => Err(Error::Unsupported(
            "the ground-state family has no measure time kernel".into(),
        )),
    }
}

/// `time_kernel` through a shared table of `log k` against `log(a - a0)`,
/// where `a0` is the Dirac cutoff (zero otherwise). Arguments below the table
/// are evaluated directly.
pub fn time_kernel_cached(f: &FamilySpec, a: f64) -> Result<f64> {
    // a0: lower end of the time integral; pole: distance of 1/(s + shift)'s pole
    let (a0, pole) = match f.kind {
        FamilyKind::Leb => return time_kernel(f, a),
        FamilyKind::GSt => return time_kernel(f, a),
        FamilyKind::Dir { eps } => (eps, eps),
        FamilyKind::Gau { alpha } => (0.0, alpha),
    };
    if a <= a0 {
        return Ok(0.0);
    }
    type Cache = RwLock<HashMap<CacheKey, Arc<RadialProfile>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = f.cache_key(f64::NAN);
    let found = cache.read().expect("kernel cache poisoned").get(&key).cloned();
    let table = match found {
        Some(t) => t,
        None => {
            let span = f.horizon - a0;
            // a - a0 carries an absolute rounding error of order 1e-16 a0
            let lo = (1e-12 * span).max(1e-6 * a0);
            let built = Arc::new(RadialProfile::build(|d| time_kernel(f, a0 + d), lo, span, 1e-10)?);
            let mut w = cache.write().expect("kernel cache poisoned");
            if w.len() > 256 {
                w.clear();
            }
            w.entry(key).or_insert(built).clone()
        }
    };
    let d = a - a0;
    match table.eval(d) {
        Some(v) => Ok(v),
        // k(a) = nu(theta d) / pole * (1 + O(d / pole)) just above a0
        None if d < table.range().0 => Ok(volterra_nu_fast(f.theta * d) / (pole + 0.5 * d)),
        None => time_kernel(f, a),
    }
}

// Gaussian factor g_r(rho) vanishes in f64 once rho^2 / 2r exceeds this.
const EXP_CUTOFF: f64 = 745.0;

/// `int_0^t w(r) k(t - r) dr` where `w(r)` is `g_r(rho)` times `r^power`
/// (power 0 gives `V`, power -1 with a factor `-rho` gives `dV/drho`).
fn kernel_convolution(f: &FamilySpec, t: f64, rho: f64, power: i32) -> Result<SpecialValue> {
    let a0 = match f.kind {
        FamilyKind::Dir { eps } => eps,
        _ => 0.0,
    };
    if t <= a0 {
        return Ok(SpecialValue::exact(0.0));
    }
    let len = t - a0;
    let r_mid = 0.5 * len;
    let r2 = rho * rho;
    let weight = |r: f64| gauss(r, r2) * r.powi(power);
    let q = f.quad.scaled(0.5);

    let r_min = r2 / (2.0 * EXP_CUTOFF);
    let head = if r_min < r_mid {
        let lo = r_min.ln();
        let hi = r_mid.ln();
        let mut breaks = vec![lo];
        let peak = (0.5 * r2).ln();
        for k in [-3.0, 0.0, 3.0] {
            let b = peak + k;
            if b > lo && b < hi {
                breaks.push(b);
            }
        }
        breaks.push(hi);
        integrate(
            |s| {
                let r = s.exp();
                Ok(weight(r) * time_kernel_cached(f, t - r)? * r)
            },
            &breaks,
            &q,
        )?
    } else {
        SpecialValue::exact(0.0)
    };
    // a - a0 = (len / 2) e^{-w}
    let tail = integrate(
        |w| {
            let da = r_mid * (-w).exp();
            let r = t - a0 - da;
            let wr = weight(r);
            if wr == 0.0 {
                return Ok(0.0);
            }
            Ok(wr * time_kernel_cached(f, a0 + da)? * da)
        },
        &[0.0, 1.0, 4.0, 10.0, 25.0, 50.0],
        &q,
    )?;
    Ok(head + tail)
}

/// The Volterra-type term `V_t(x)`. For the ground state this is
/// `h_t - (h_0 * g_t) = e^{theta t} (K_0(c|x|) - K_0(c|x|, theta t))`.
pub fn volterra_v(f: &FamilySpec, t: f64, x: PlanarPoint) -> Result<SpecialValue> {
    volterra_v_radial(f, t, x.norm())
}

pub fn volterra_v_radial(f: &FamilySpec, t: f64, rho: f64) -> Result<SpecialValue> {
    check_t(f, t, "volterra_v")?;
    if rho == 0.0 && t > 0.0 {
        return Err(Error::Infinite("V_t diverges at the origin".into()));
    }
    if t == 0.0 {
        return Ok(SpecialValue::exact(0.0));
    }
    match f.kind {
        FamilyKind::GSt => {
            let z = f.ground_rate() * rho;
            let full = bessel_k(0, z, &f.quad)?;
            let tail = incomplete_bessel_k(0, z, f.theta * t, &f.quad)?;
            Ok((full - tail).scale((f.theta * t).exp()))
        }
        _ => kernel_convolution(f, t, rho, 0),
    }
}

/// `d V_t / d rho`.
pub fn volterra_v_radial_deriv(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "volterra_v_radial_deriv")?;
    if rho == 0.0 {
        return Err(Error::Infinite("dV/drho diverges at the origin".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    match f.kind {
        FamilyKind::GSt => {
            let c = f.ground_rate();
            let z = c * rho;
            let q = &f.quad;
            let full = bessel_k(1, z, q)?.value;
            let tail = crate::specfun::incomplete_bessel_k(1, z, f.theta * t, q)?.value;
            Ok(-c * (f.theta * t).exp() * (full - tail))
        }
        _ => Ok(-rho * kernel_convolution(f, t, rho, -1)?.value),
    }
}

/// `h_t(x)`.
pub fn h_eval(f: &FamilySpec, t: f64, x: PlanarPoint) -> Result<f64> {
    h_radial(f, t, x.norm())
}

/// Radial profile `h_t(rho)`.
pub fn h_radial(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "h_eval")?;
    if !(rho >= 0.0) {
        return Err(domain("h_eval", format!("radius must be >= 0, got {rho}")));
    }
    if t == 0.0 {
        return h_initial(f, rho);
    }
    if rho == 0.0 {
        return Err(Error::Infinite(format!("h_t({}) is infinite at the origin", f.kind)));
    }
    let v = || volterra_v_radial(f, t, rho).map(|v| v.value);
    match f.kind {
        FamilyKind::GSt => Ok((f.theta * t).exp() * bessel_k(0, f.ground_rate() * rho, &f.quad)?.value),
        FamilyKind::Leb => Ok(1.0 + v()?),
        FamilyKind::Dir { .. } => Ok(gauss(t, rho * rho) + v()?),
        FamilyKind::Gau { alpha } => Ok(gauss(t + alpha, rho * rho) + v()?),
    }
}

fn h_initial(f: &FamilySpec, rho: f64) -> Result<f64> {
    match f.kind {
        FamilyKind::Leb => Ok(1.0),
        FamilyKind::Gau { alpha } => Ok(gauss(alpha, rho * rho)),
        FamilyKind::GSt if rho > 0.0 => Ok(bessel_k(0, f.ground_rate() * rho, &f.quad)?.value),
        FamilyKind::Dir { .. } if rho > 0.0 => Ok(0.0),
        _ => Err(Error::Infinite(format!("h_0({}) is infinite at the origin", f.kind))),
    }
}

/// `d h_t / d rho`.
pub fn h_radial_deriv(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "h_radial_deriv")?;
    if rho == 0.0 {
        return Err(Error::Infinite("the radial derivative of h is singular at the origin".into()));
    }
    if t == 0.0 {
        return match f.kind {
            FamilyKind::Leb | FamilyKind::Dir { .. } => Ok(0.0),
            FamilyKind::Gau { alpha } => Ok(-rho / alpha * gauss(alpha, rho * rho)),
            FamilyKind::GSt => {
                let c = f.ground_rate();
                Ok(-c * bessel_k(1, c * rho, &f.quad)?.value)
            }
        };
    }
    match f.kind {
        FamilyKind::GSt => {
            let c = f.ground_rate();
            Ok(-c * (f.theta * t).exp() * bessel_k(1, c * rho, &f.quad)?.value)
        }
        FamilyKind::Leb => volterra_v_radial_deriv(f, t, rho),
        FamilyKind::Dir { .. } => Ok(-rho / t * gauss(t, rho * rho) + volterra_v_radial_deriv(f, t, rho)?),
        FamilyKind::Gau { alpha } => {
            let s = t + alpha;
            Ok(-rho / s * gauss(s, rho * rho) + volterra_v_radial_deriv(f, t, rho)?)
        }
    }
}

/// Drift `b_t(x) = grad log h_t(x)`.
pub fn drift_eval(f: &FamilySpec, t: f64, x: PlanarPoint) -> Result<DriftVector> {
    let rho = x.norm();
    if rho == 0.0 {
        return Err(Error::Infinite("the drift is singular at the origin".into()));
    }
    let radial = match f.kind {
        FamilyKind::GSt => {
            let c = f.ground_rate();
            let k0 = crate::specfun::bessel_k_scaled(0, c * rho, &f.quad)?.value;
            let k1 = crate::specfun::bessel_k_scaled(1, c * rho, &f.quad)?.value;
            -c * k1 / k0
        }
        _ => h_radial_deriv(f, t, rho)? / h_radial(f, t, rho)?,
    };
    Ok(DriftVector::radial(x, radial))
}

/// `(h_0 * g_t)(x)`.
pub fn base_conv(f: &FamilySpec, t: f64, x: PlanarPoint) -> Result<f64> {
    base_conv_radial(f, t, x.norm())
}

pub fn base_conv_radial(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "base_conv")?;
    if t == 0.0 {
        return h_initial(f, rho);
    }
    match f.kind {
        FamilyKind::Leb => Ok(1.0),
        FamilyKind::Dir { .. } => Ok(gauss(t, rho * rho)),
        FamilyKind::Gau { alpha } => Ok(gauss(alpha + t, rho * rho)),
        FamilyKind::GSt => {
            let y = f.theta * t;
            let growth = y.exp();
            if rho == 0.0 {
                // K_0(0, y) = E1(y) / 2
                return Ok(growth * 0.5 * exp_integral_e1(y)?);
            }
            Ok(growth * incomplete_bessel_k(0, f.ground_rate() * rho, y, &f.quad)?.value)
        }
    }
}

/// `d/d rho (h_0 * g_t)`.
pub fn base_conv_radial_deriv(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "base_conv_radial_deriv")?;
    if t == 0.0 {
        return h_radial_deriv(f, 0.0, rho);
    }
    match f.kind {
        FamilyKind::Leb => Ok(0.0),
        FamilyKind::Dir { .. } => Ok(-rho / t * gauss(t, rho * rho)),
        FamilyKind::Gau { alpha } => {
            let s = alpha + t;
            Ok(-rho / s * gauss(s, rho * rho))
        }
        FamilyKind::GSt => {
            if rho == 0.0 {
                return Ok(0.0);
            }
            let c = f.ground_rate();
            let y = f.theta * t;
            Ok(-c * y.exp() * incomplete_bessel_k(1, c * rho, y, &f.quad)?.value)
        }
    }
}

/// `d^2/d rho^2 (h_0 * g_t)`.
pub fn base_conv_radial_deriv2(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    check_t(f, t, "base_conv_radial_deriv2")?;
    if !(t > 0.0 && rho > 0.0) {
        return Err(domain("base_conv_radial_deriv2", "need t > 0 and rho > 0"));
    }
    let gauss2 = |s: f64| gauss(s, rho * rho) * (rho * rho / (s * s) - 1.0 / s);
    match f.kind {
        FamilyKind::Leb => Ok(0.0),
        FamilyKind::Dir { .. } => Ok(gauss2(t)),
        FamilyKind::Gau { alpha } => Ok(gauss2(alpha + t)),
        FamilyKind::GSt => {
            // d/dz K_1(z, y) = K_1(z, y)/z - K_2(z, y)
            let c = f.ground_rate();
            let z = c * rho;
            let y = f.theta * t;
            let scale = (y - z).exp();
            let k1 = incomplete_k_general_scaled(1.0, z, y, &f.quad)?.value;
            let k2 = incomplete_k_general_scaled(2.0, z, y, &f.quad)?.value;
            Ok(-c * c * scale * (k1 / z - k2))
        }
    }
}

/// A positive linear combination of families sharing `theta` and `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeFamily {
    terms: Vec<(f64, FamilySpec)>,
}

impl CompositeFamily {
    pub fn new(terms: Vec<(f64, FamilySpec)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| domain("CompositeFamily", "need at least one term"))?
            .1;
        for (w, f) in &terms {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(domain("CompositeFamily", format!("weights must be > 0, got {w}")));
            }
            if f.theta != first.theta || f.horizon != first.horizon {
                return Err(domain("CompositeFamily", "all terms must share theta and T"));
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(f64, FamilySpec)] {
        &self.terms
    }

    pub fn h_eval(&self, t: f64, x: PlanarPoint) -> Result<f64> {
        self.terms
            .iter()
            .map(|(w, f)| Ok(w * h_eval(f, t, x)?))
            .sum()
    }

    pub fn base_conv(&self, t: f64, x: PlanarPoint) -> Result<f64> {
        self.terms
            .iter()
            .map(|(w, f)| Ok(w * base_conv(f, t, x)?))
            .sum()
    }

    pub fn drift_eval(&self, t: f64, x: PlanarPoint) -> Result<DriftVector> {
        let rho = x.norm();
        if rho == 0.0 {
            return Err(Error::Infinite("the drift is singular at the origin".into()));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, f) in &self.terms {
            num += w * h_radial_deriv(f, t, rho)?;
            den += w * h_radial(f, t, rho)?;
        }
        Ok(DriftVector::radial(x, num / den))
    }
}

/// A radial function tabulated as `log f` against `log r` on an adaptively
/// refined grid, with four-point Lagrange interpolation between nodes.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    log_r: Vec<f64>,
    log_f: Vec<f64>,
}

impl RadialProfile {
    /// Tabulate the positive function `f` on `[r_lo, r_hi]` until the
    /// interpolant predicts each new midpoint to within `rel_tol`.
    pub fn build(mut f: impl FnMut(f64) -> Result<f64>, r_lo: f64, r_hi: f64, rel_tol: f64) -> Result<Self> {
        if !(r_lo > 0.0 && r_hi > r_lo) {
            return Err(domain("RadialProfile", "need 0 < r_lo < r_hi"));
        }
        let mut log_f_at = |s: f64| -> Result<f64> {
            let v = f(s.exp())?;
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(domain("RadialProfile", format!("profile must be positive, got {v} at {}", s.exp())))
            }
        };
        let (a, b) = (r_lo.ln(), r_hi.ln());
        let n0 = 48;
        let mut log_r: Vec<f64> = (0..=n0).map(|i| a + (b - a) * i as f64 / n0 as f64).collect();
        let mut log_f: Vec<f64> = log_r.iter().map(|&s| log_f_at(s)).collect::<Result<_>>()?;
        const MAX_NODES: usize = 8192;
        loop {
            let mut inserts = Vec::new();
            for i in 0..log_r.len() - 1 {
                let mid = 0.5 * (log_r[i] + log_r[i + 1]);
                let truth = log_f_at(mid)?;
                let pred = lagrange4(&log_r, &log_f, i, mid);
                if (pred - truth).abs() > rel_tol * truth.abs().max(1.0) {
                    inserts.push((i + 1, mid, truth));
                }
            }
            if inserts.is_empty() {
                break;
            }
            if log_r.len() + inserts.len() > MAX_NODES {
                return Err(Error::Tolerance {
                    best: f64::NAN,
                    err_estimate: f64::NAN,
                    requested: rel_tol,
                });
            }
            for (k, (idx, s, v)) in inserts.into_iter().enumerate() {
                log_r.insert(idx + k, s);
                log_f.insert(idx + k, v);
            }
        }
        Ok(Self { log_r, log_f })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.log_r[0].exp(), self.log_r[self.log_r.len() - 1].exp())
    }

    pub fn len(&self) -> usize {
        self.log_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_r.is_empty()
    }

    /// Interpolated value, or `None` outside the tabulated range.
    pub fn eval(&self, r: f64) -> Option<f64> {
        if !(r > 0.0) {
            return None;
        }
        let s = r.ln();
        let n = self.log_r.len();
        if s < self.log_r[0] || s > self.log_r[n - 1] {
            return None;
        }
        let i = self.log_r.partition_point(|&x| x <= s).clamp(1, n - 1) - 1;
        Some(lagrange4(&self.log_r, &self.log_f, i, s).exp())
    }
}

// Cubic through the nodes i-1..=i+2 (shifted at the ends), evaluated at s.
fn lagrange4(x: &[f64], y: &[f64], i: usize, s: f64) -> f64 {
    let n = x.len();
    let start = i.saturating_sub(1).min(n.saturating_sub(4));
    let end = (start + 4).min(n);
    let mut sum = 0.0;
    for j in start..end {
        let mut l = 1.0;
        for k in start..end {
            if k != j {
                l *= (s - x[k]) / (x[j] - x[k]);
            }
        }
        sum += l * y[j];
    }
    sum
}

/// Shared, lazily populated radial profile of `h_t` for a family.
///
/// The table spans `[1e-6 sqrt(T), 12 max(1, sqrt(T))]`; callers evaluate
/// directly outside that range.
pub fn h_profile(f: &FamilySpec, t: f64) -> Result<Arc<RadialProfile>> {
    type Cache = RwLock<HashMap<CacheKey, Arc<RadialProfile>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = f.cache_key(t);
    if let Some(p) = cache.read().expect("profile cache poisoned").get(&key) {
        return Ok(p.clone());
    }
    let sq = f.horizon.sqrt();
    let profile = Arc::new(RadialProfile::build(
        |r| h_radial(f, t, r),
        1e-6 * sq,
        12.0 * sq.max(1.0),
        1e-9,
    )?);
    let mut w = cache.write().expect("profile cache poisoned");
    if w.len() > 256 {
        w.clear();
    }
    Ok(w.entry(key).or_insert(profile).clone())
}

/// `h_t(rho)` through the shared profile, falling back to direct evaluation.
pub fn h_radial_cached(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    if t == 0.0 || rho == 0.0 {
        return h_radial(f, t, rho);
    }
    if f.kind == FamilyKind::GSt {
        let z = f.ground_rate() * rho;
        return Ok((f.theta * t - z).exp() * bessel_k01_scaled_fast(z).0);
    }
    match h_profile(f, t)?.eval(rho) {
        Some(v) => Ok(v),
        None => h_radial(f, t, rho),
    }
}

/// Finite-difference residual `|d_t h - (1/2) Lap h| / |d_t h|` at `(t, rho)`.
pub fn diffusion_residual(f: &FamilySpec, t: f64, rho: f64) -> Result<f64> {
    let ht = |tt: f64| h_radial(f, tt, rho);
    let dt = 1e-3 * t;
    let d_t = (-ht(t + 2.0 * dt)? + 8.0 * ht(t + dt)? - 8.0 * ht(t - dt)? + ht(t - 2.0 * dt)?) / (12.0 * dt);
    let dr = 1e-3 * rho;
    let hp = |r: f64| h_radial_deriv(f, t, r);
    let h2 = (-hp(rho + 2.0 * dr)? + 8.0 * hp(rho + dr)? - 8.0 * hp(rho - dr)? + hp(rho - 2.0 * dr)?) / (12.0 * dr);
    let lap = h2 + hp(rho)? / rho;
    Ok((d_t - 0.5 * lap).abs() / d_t.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::interaction_rule;
    use crate::specfun::volterra_nu;

    fn fam(kind: FamilyKind, theta: f64, horizon: f64) -> FamilySpec {
        FamilySpec::new(kind, theta, horizon, QuadratureSpec::default()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn grammar_round_trip() {
        for s in ["gst", "leb", "dir:eps=0.01", "gau:alpha=0.5", "GAU:alpha=2"] {
            let k: FamilyKind = s.parse().unwrap();
            let again: FamilyKind = k.to_string().parse().unwrap();
            assert_eq!(k, again);
        }
        for s in ["", "foo", "dir", "dir:eps", "gau:beta=1", "gau:alpha=x", "leb:1"] {
            assert!(s.parse::<FamilyKind>().is_err(), "{s}");
        }
        assert!(FamilySpec::parse("dir:eps=2", 1.0, 1.0, QuadratureSpec::default()).is_err());
        assert!(FamilySpec::parse("gau:alpha=-1", 1.0, 1.0, QuadratureSpec::default()).is_err());
        assert!(FamilySpec::parse("leb", 0.0, 1.0, QuadratureSpec::default()).is_err());
    }

    #[test]
    fn initial_profiles() {
        let leb = fam(FamilyKind::Leb, 1.0, 1.0);
        assert_eq!(h_eval(&leb, 0.0, PlanarPoint::new(0.3, 0.1)).unwrap(), 1.0);
        let gst = fam(FamilyKind::GSt, 1.0, 1.0);
        let k0 = bessel_k(0, 2f64.sqrt(), &QuadratureSpec::default()).unwrap().value;
        let h = h_eval(&gst, 1.0, PlanarPoint::on_axis(1.0)).unwrap();
        assert!(rel(h, std::f64::consts::E * k0) < 1e-12);
        assert!(matches!(h_eval(&gst, 1.0, PlanarPoint::ORIGIN), Err(Error::Infinite(_))));
        let dir = fam(FamilyKind::Dir { eps: 0.01 }, 1.0, 1.0);
        assert!(matches!(h_eval(&dir, 0.0, PlanarPoint::ORIGIN), Err(Error::Infinite(_))));
    }

    #[test]
    fn leb_v_matches_simpson_oracle() {
        let f = fam(FamilyKind::Leb, 1.0, 1.0);
        let v = volterra_v(&f, 1.0, PlanarPoint::on_axis(1.0)).unwrap().value;
        let q = QuadratureSpec::new(1e-14, 1e-12).unwrap();
        // r = 1 - e^{-w}
        let oracle = simpson(
            |w| {
                let r = 1.0 - (-w).exp();
                if r <= 0.0 {
                    return 0.0;
                }
                (-0.5 / r).exp() / r * volterra_nu((-w).exp(), &q).unwrap().value * (-w).exp()
            },
            0.0,
            60.0,
            12_000,
        );
        assert!(rel(v, oracle) < 1e-6, "{v} vs {oracle}");
        let small = volterra_v(&f, 1e-3, PlanarPoint::on_axis(1.0)).unwrap().value;
        assert!(small < 1e-8);
    }

    // V for a measure mu equals int v_t(x, y) mu(dy); for the Gaussian measure
    // this is a radial integral of the interaction term.
    #[test]
    fn gau_v_matches_interaction_average() {
        let alpha = 1.0;
        let f = fam(FamilyKind::Gau { alpha }, 1.0, 1.0);
        let v = volterra_v(&f, 1.0, PlanarPoint::on_axis(1.0)).unwrap().value;
        let rule = interaction_rule(1.0, 1.0).unwrap();
        let oracle = crate::kernel::radial_integral(
            |rho| Ok(rule.eval(1.0, rho)? * gauss(alpha, rho * rho) * 2.0 * PI * rho),
            &[1.0],
            1.0,
            &QuadratureSpec::new(1e-13, 1e-11).unwrap(),
        )
        .unwrap()
        .value;
        assert!(rel(v, oracle) < 1e-5, "{v} vs {oracle}");
    }

    #[test]
    fn leb_v_matches_interaction_integral() {
        let f = fam(FamilyKind::Leb, 1.3, 1.0);
        let v = volterra_v(&f, 0.8, PlanarPoint::on_axis(0.6)).unwrap().value;
        let rule = interaction_rule(1.3, 0.8).unwrap();
        let oracle = crate::kernel::radial_integral(
            |rho| Ok(rule.eval(0.6, rho)? * 2.0 * PI * rho),
            &[0.6],
            0.8f64.sqrt(),
            &QuadratureSpec::new(1e-13, 1e-11).unwrap(),
        )
        .unwrap()
        .value;
        assert!(rel(v, oracle) < 1e-6, "{v} vs {oracle}");
    }

    #[test]
    fn dir_kernel_against_direct_quadrature() {
        let (theta, eps, a) = (1.0, 0.05, 0.7);
        let f = fam(FamilyKind::Dir { eps }, theta, 1.0);
        let k = time_kernel(&f, a).unwrap();
        // u = a - s = (a - eps) e^{-w}; the part u < (a - eps) e^{-W} is nu(theta u) / a.
        let q = QuadratureSpec::default();
        let w_max = 40.0;
        let body = simpson(
            |w| {
                let u = (a - eps) * (-w).exp();
                theta * crate::specfun::volterra_nu_prime(theta * u, &q).unwrap().value * u / (a - u)
            },
            0.0,
            w_max,
            8000,
        );
        let tail = volterra_nu(theta * (a - eps) * (-w_max).exp(), &q).unwrap().value / a;
        assert!(rel(k, body + tail) < 1e-5, "{k} vs {}", body + tail);
        assert_eq!(time_kernel(&f, 0.5 * eps).unwrap(), 0.0);
    }

    #[test]
    fn cached_time_kernel_agrees() {
        for kind in [FamilyKind::Gau { alpha: 0.4 }, FamilyKind::Dir { eps: 0.02 }] {
            let f = fam(kind, 1.7, 1.0);
            for a in [1e-9, 0.0200001, 0.021, 0.05, 0.3, 0.999] {
                let direct = time_kernel(&f, a).unwrap();
                let cached = time_kernel_cached(&f, a).unwrap();
                assert!((cached - direct).abs() <= 1e-9 * direct.abs().max(1e-300), "{kind} a={a}");
            }
        }
    }

    #[test]
    fn gau_kernel_small_argument() {
        // k(a) ~ nu(theta a) / alpha as a -> 0
        let f = fam(FamilyKind::Gau { alpha: 2.0 }, 1.0, 1.0);
        for a in [1e-12, 1e-9, 1e-6] {
            let k = time_kernel(&f, a).unwrap();
            let lead = volterra_nu_fast(a) / 2.0;
            assert!(rel(k, lead) < 1e-4, "a={a}: {k} vs {lead}");
        }
    }

    #[test]
    fn drift_matches_finite_difference() {
        let f = fam(FamilyKind::Leb, 1.0, 1.0);
        let x = PlanarPoint::on_axis(1.0);
        let b = drift_eval(&f, 1.0, x).unwrap();
        let h = 1e-4;
        let fd = ((h_radial(&f, 1.0, 1.0 + h).unwrap()).ln() - (h_radial(&f, 1.0, 1.0 - h).unwrap()).ln()) / (2.0 * h);
        assert!(rel(b.radial_part, fd) < 1e-5, "{} vs {fd}", b.radial_part);
        for kind in [FamilyKind::Gau { alpha: 0.5 }, FamilyKind::Dir { eps: 0.05 }] {
            let f = fam(kind, 1.0, 1.0);
            let b = drift_eval(&f, 0.8, PlanarPoint::new(0.3, 0.4)).unwrap();
            let r = 0.5;
            let fd = (h_radial(&f, 0.8, r + h).unwrap().ln() - h_radial(&f, 0.8, r - h).unwrap().ln()) / (2.0 * h);
            assert!(rel(b.radial_part, fd) < 1e-5, "{kind}");
            assert!(b.components.cross(PlanarPoint::new(0.3, 0.4)).abs() < 1e-15);
        }
    }

    #[test]
    fn gst_drift_is_time_independent() {
        let f = fam(FamilyKind::GSt, 1.0, 1.0);
        let x = PlanarPoint::new(0.6, -0.2);
        let a = drift_eval(&f, 0.1, x).unwrap();
        let b = drift_eval(&f, 0.9, x).unwrap();
        assert_eq!(a, b);
        let h = 1e-5;
        let r = x.norm();
        let fd = (h_radial(&f, 0.5, r + h).unwrap().ln() - h_radial(&f, 0.5, r - h).unwrap().ln()) / (2.0 * h);
        assert!(rel(a.radial_part, fd) < 1e-7);
    }

    #[test]
    fn base_convolutions() {
        let leb = fam(FamilyKind::Leb, 1.0, 1.0);
        assert_eq!(base_conv(&leb, 0.4, PlanarPoint::new(3.0, 1.0)).unwrap(), 1.0);
        let gau = fam(FamilyKind::Gau { alpha: 0.5 }, 1.0, 1.0);
        let b = base_conv(&gau, 0.5, PlanarPoint::on_axis(1.0)).unwrap();
        assert!(rel(b, (-0.5f64).exp() / (2.0 * PI)) < 1e-15);
        // ground state: compare with the radial convolution of g_t against K_0
        let gst = fam(FamilyKind::GSt, 1.0, 1.0);
        let b = base_conv(&gst, 1.0, PlanarPoint::on_axis(1.0)).unwrap();
        let k = incomplete_bessel_k(0, 2f64.sqrt(), 1.0, &QuadratureSpec::default()).unwrap().value;
        assert!(rel(b, std::f64::consts::E * k) < 1e-14);
        let oracle = crate::kernel::radial_integral(
            |rho| {
                Ok(crate::kernel::circle_heat(1.0, rho, 1.0)
                    * bessel_k(0, 2f64.sqrt() * rho, &QuadratureSpec::default())?.value
                    * rho)
            },
            &[1.0],
            1.0,
            &QuadratureSpec::new(1e-12, 1e-10).unwrap(),
        )
        .unwrap()
        .value;
        assert!(rel(b, oracle) < 1e-5);
        // limit at the origin
        let at0 = base_conv_radial(&gst, 1.0, 0.0).unwrap();
        let near0 = base_conv_radial(&gst, 1.0, 1e-9).unwrap();
        assert!(rel(at0, near0) < 1e-6);
    }

    #[test]
    fn base_conv_derivatives() {
        let h = 1e-4;
        for kind in [FamilyKind::GSt, FamilyKind::Gau { alpha: 0.3 }, FamilyKind::Dir { eps: 0.1 }] {
            let f = fam(kind, 1.5, 1.0);
            let (t, r) = (0.6, 0.8);
            let b = |r| base_conv_radial(&f, t, r).unwrap();
            let d1 = |r| base_conv_radial_deriv(&f, t, r).unwrap();
            let fd1 = (b(r + h) - b(r - h)) / (2.0 * h);
            assert!(rel(d1(r), fd1) < 1e-6, "{kind}");
            let fd2 = (d1(r + h) - d1(r - h)) / (2.0 * h);
            assert!(rel(base_conv_radial_deriv2(&f, t, r).unwrap(), fd2) < 1e-6, "{kind}");
        }
    }

    #[test]
    fn small_radius_laws() {
        let gst = fam(FamilyKind::GSt, 1.0, 1.0);
        for t in [0.5, 1.0] {
            let r = 1e-8f64;
            let ratio = h_radial(&gst, t, r).unwrap() / (1.0f64 / r).ln();
            assert!(rel(ratio, t.exp()) < 0.1);
        }
        let leb = fam(FamilyKind::Leb, 1.0, 1.0);
        let nu = volterra_nu(1.0, &QuadratureSpec::default()).unwrap().value;
        for r in [1e-6f64, 1e-8] {
            let ratio = h_radial(&leb, 1.0, r).unwrap() / (2.0 * nu * (1.0 / r).ln());
            assert!((0.85..=1.15).contains(&ratio), "r={r}: {ratio}");
        }
    }

    #[test]
    fn drift_blow_up_band() {
        for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 1.0 }] {
            let f = fam(kind, 1.0, 1.0);
            for r in [1e-8f64, 1e-6, 1e-4] {
                let b = drift_eval(&f, 1.0, PlanarPoint::on_axis(r)).unwrap();
                let ratio = b.radial_part.abs() * r * (1.0 / r).ln();
                assert!((0.5..=2.0).contains(&ratio), "{kind} r={r}: {ratio}");
                assert!(b.radial_part < 0.0);
            }
        }
    }

    #[test]
    fn ground_state_envelope_band() {
        // h_t(a) / (e^{theta t} a^{-1/2} e^{-c a}) stays in a fixed band
        let f = fam(FamilyKind::GSt, 1.0, 1.0);
        let c = f.ground_rate();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..10 {
            let a = 1.0 + i as f64;
            for t in [0.1, 0.5, 1.0] {
                let ratio = h_radial(&f, t, a).unwrap() / (t.exp() * a.powf(-0.5) * (-c * a).exp());
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        // sqrt(pi / 2c) (1 - 1/(8 c a)) bounds
        let lead = (PI / (2.0 * c)).sqrt();
        assert!(lo > 0.85 * lead && hi < lead, "[{lo}, {hi}] vs {lead}");
    }

    #[test]
    fn diffusion_equation_holds() {
        for kind in [FamilyKind::Leb, FamilyKind::Gau { alpha: 0.5 }, FamilyKind::GSt] {
            let f = fam(kind, 1.0, 1.0);
            for (t, r) in [(0.5, 0.7), (0.9, 1.5)] {
                let res = diffusion_residual(&f, t, r).unwrap();
                assert!(res < 1e-2, "{kind} t={t} r={r}: {res}");
            }
        }
    }

    #[test]
    fn composite_is_linear() {
        let a = fam(FamilyKind::Leb, 1.0, 1.0);
        let b = fam(FamilyKind::GSt, 1.0, 1.0);
        let c = CompositeFamily::new(vec![(0.3, a), (2.0, b)]).unwrap();
        let x = PlanarPoint::new(0.4, 0.9);
        let expect = 0.3 * h_eval(&a, 0.7, x).unwrap() + 2.0 * h_eval(&b, 0.7, x).unwrap();
        assert_eq!(c.h_eval(0.7, x).unwrap(), expect);
        assert!(CompositeFamily::new(vec![(-1.0, a)]).is_err());
        let d = c.drift_eval(0.7, x).unwrap();
        assert!(d.radial_part < 0.0);
    }

    #[test]
    fn profile_cache_interpolates() {
        let f = fam(FamilyKind::Leb, 1.0, 1.0);
        let p = h_profile(&f, 0.7).unwrap();
        for r in [1e-5, 3e-3, 0.2, 0.77, 2.5, 9.0] {
            let direct = h_radial(&f, 0.7, r).unwrap();
            assert!(rel(p.eval(r).unwrap(), direct) < 1e-8, "r={r}");
        }
        assert!(p.eval(100.0).is_none());
        assert!(rel(h_radial_cached(&f, 0.7, 100.0).unwrap(), 1.0) < 1e-12);
    }
}
