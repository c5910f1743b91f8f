//! The point-interaction heat kernel `K_t(x, y) = g_t(x - y) + v_t(x, y)`.
//!
//! The interaction term depends on `x` and `y` only through their norms.
//! Writing `u = s - r` in the double time integral leaves the inner integral
//! in closed form,
//!
//! ```text
//! A(q) = int_0^q g_r(x) g_{q-r}(y) dr
//!      = exp(-(|x| + |y|)^2 / 2q) * Kt_0(|x||y| / q) / (2 pi^2 q),
//! ```
//!
//! with `Kt_0(z) = e^z K_0(z)`, so that `v = 2 pi theta int_0^t nu'(theta u) A(t - u) du`.
//! For `u < t/2` the singular factor `nu'` is integrated by parts onto `A'`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::point::PlanarPoint;
use crate::quad::{integrate, scale_result, FixedRule, QuadratureSpec, SpecialValue};
use crate::specfun::{
    bessel_i0_scaled, bessel_k01_scaled_fast, bessel_k_scaled, gauss, incomplete_bessel_k,
    volterra_nu, volterra_nu_fast, volterra_nu_prime, volterra_nu_prime_fast,
};

/// Coupling and tolerances for kernel evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta: f64,
    pub quad: QuadratureSpec,
}

impl KernelParams {
    pub fn new(theta: f64, quad: QuadratureSpec) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(domain("KernelParams", format!("theta must be > 0, got {theta}")));
        }
        quad.validate()?;
        Ok(Self { theta, quad })
    }
}

fn check_time(f: &'static str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(f, format!("t must be > 0, got {t}")))
    }
}

// Beyond this exponent the Gaussian factor exp(-(r1 + r2)^2 / 2q) is zero in f64.
const EXP_CUTOFF: f64 = 745.0;
const RELATIVE_CUTOFF: f64 = 40.0;

/// `A(q)` for radii `r1, r2 > 0`.
#[inline]
fn a_fast(q: f64, d2: f64, m: f64) -> f64 {
    let e = 0.5 * d2 / q;
    if e > EXP_CUTOFF {
        return 0.0;
    }
    let (k0, _) = bessel_k01_scaled_fast(m / q);
    (-e).exp() * k0 / (2.0 * PI * PI * q)
}

/// `A'(q) = exp(-D^2 / 2q) [(p - q) Kt_0 + m Kt_1] / (2 pi^2 q^3)`.
#[inline]
fn a_prime_fast(q: f64, d2: f64, p: f64, m: f64) -> f64 {
    let e = 0.5 * d2 / q;
    if e > EXP_CUTOFF {
        return 0.0;
    }
    let (k0, k1) = bessel_k01_scaled_fast(m / q);
    (-e).exp() * ((p - q) * k0 + m * k1) / (2.0 * PI * PI * q * q * q)
}

struct Radii {
    d2: f64,
    p: f64,
    m: f64,
}

fn radii(f: &'static str, r1: f64, r2: f64) -> Result<Radii> {
    if !(r1.is_finite() && r2.is_finite()) || r1 < 0.0 || r2 < 0.0 {
        return Err(domain(f, format!("radii must be finite and >= 0, got {r1}, {r2}")));
    }
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::Divergence(format!(
            "{f}: the interaction term diverges when an argument is the origin"
        )));
    }
    Ok(Radii {
        d2: (r1 + r2) * (r1 + r2),
        p: 0.5 * (r1 * r1 + r2 * r2),
        m: r1 * r2,
    })
}

/// Interaction term `v_t(x, y)` by nested adaptive quadrature.
pub fn interaction_v(p: &KernelParams, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<SpecialValue> {
    interaction_v_radial(p, t, x.norm(), y.norm())
}

/// Interaction term as a function of the radii `|x|, |y|`.
pub fn interaction_v_radial(p: &KernelParams, t: f64, r1: f64, r2: f64) -> Result<SpecialValue> {
    check_time("interaction_v", t)?;
    let r = radii("interaction_v", r1, r2)?;
    // Order the radii so that the result is exactly symmetric.
    let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    let theta = p.theta;
    let inner = p.quad.scaled(0.1);
    let half = 0.5 * t;
    let tol = p.quad.scaled(0.5);

    let a_exact = |q: f64| -> Result<f64> {
        let e = 0.5 * r.d2 / q;
        if e > EXP_CUTOFF {
            return Ok(0.0);
        }
        let k0 = bessel_k_scaled(0, r1 * r2 / q, &inner)?.value;
        Ok((-e).exp() * k0 / (2.0 * PI * PI * q))
    };
    let a_prime_exact = |q: f64| -> Result<f64> {
        let e = 0.5 * r.d2 / q;
        if e > EXP_CUTOFF {
            return Ok(0.0);
        }
        let z = r.m / q;
        let k0 = bessel_k_scaled(0, z, &inner)?.value;
        let k1 = bessel_k_scaled(1, z, &inner)?.value;
        Ok((-e).exp() * ((r.p - q) * k0 + r.m * k1) / (2.0 * PI * PI * q * q * q))
    };

    // q in (0, t/2] in the variable s = ln q.
    let s_hi = half.ln();
    let s_lo = (r.d2 / (2.0 * EXP_CUTOFF)).ln();
    let direct = if s_lo < s_hi {
        let mut breaks = vec![s_lo];
        for k in [-2.0f64, 0.0, 2.0] {
            let s = r.d2.ln() + k;
            if s > s_lo && s < s_hi {
                breaks.push(s);
            }
        }
        breaks.push(s_hi);
        let v = integrate(
            |s| {
                let q = s.exp();
                let a = a_exact(q)?;
                if a == 0.0 {
                    return Ok(0.0);
                }
                Ok(theta * volterra_nu_prime(theta * (t - q), &inner)?.value * a * q)
            },
            &breaks,
            &tol,
        )?;
        v
    } else {
        SpecialValue::exact(0.0)
    };

    let boundary = volterra_nu(theta * half, &inner)?.value * a_exact(half)?;

    // u = t - q in [0, t/2] with u = (t/2) e^{-w}.
    let by_parts = integrate(
        |w| {
            let u = half * (-w).exp();
            let ap = a_prime_exact(t - u)?;
            if ap == 0.0 {
                return Ok(0.0);
            }
            Ok(volterra_nu(theta * u, &inner)?.value * ap * u)
        },
        &[0.0, 1.0, 4.0, 12.0, 30.0, 50.0],
        &tol,
    )?;

    let total = direct + SpecialValue::exact(boundary) + by_parts;
    Ok(total.scale(2.0 * PI))
}

/// A precomputed quadrature rule for `v_t(r1, r2)` at fixed `(theta, t)`.
///
/// The Volterra factors are tabulated once on fixed nodes, after which each
/// evaluation costs a few hundred exponentials and table lookups.
#[derive(Debug, Clone)]
pub struct InteractionRule {
    pub theta: f64,
    pub t: f64,
    // (q, weight * theta nu'(theta (t - q)) * q), sorted by q.
    direct: Vec<(f64, f64)>,
    boundary_nu: f64,
    // (q = t - u, weight * nu(theta u) * u)
    by_parts: Vec<(f64, f64)>,
    q_min: f64,
    fallback: QuadratureSpec,
}

// Span of ln q covered below t/2 by the fixed rule.
const FIXED_S_SPAN: f64 = 64.0;

impl InteractionRule {
    pub fn new(theta: f64, t: f64, quad: &QuadratureSpec) -> Result<Self> {
        check_time("InteractionRule", t)?;
        let half = 0.5 * t;
        let s_hi = half.ln();
        let s_lo = s_hi - FIXED_S_SPAN;
        let rule = FixedRule::uniform(s_lo, s_hi, (FIXED_S_SPAN * 2.0) as usize);
        let mut direct = Vec::with_capacity(rule.len());
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let q = s.exp();
            let nup = volterra_nu_prime_fast(theta * (t - q));
            direct.push((q, w * theta * nup * q));
        }
        direct.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut wrule = FixedRule::uniform(0.0, 6.0, 6);
        wrule.append(FixedRule::uniform(6.0, 27.0, 7));
        let mut by_parts = Vec::with_capacity(wrule.len());
        for (&w, &wt) in wrule.nodes.iter().zip(&wrule.weights) {
            let u = half * (-w).exp();
            let nu = volterra_nu_fast(theta * u);
            by_parts.push((t - u, wt * nu * u));
        }
        Ok(Self {
            theta,
            t,
            direct,
            boundary_nu: volterra_nu_fast(theta * half),
            by_parts,
            q_min: s_lo.exp(),
            fallback: *quad,
        })
    }

    /// `v_t(r1, r2)`; falls back to adaptive quadrature when the radii are so
    /// small that the rule's time range is insufficient.
    pub fn eval(&self, r1: f64, r2: f64) -> Result<f64> {
        let r = radii("InteractionRule::eval", r1, r2)?;
        let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        if 0.5 * r.d2 / self.t > EXP_CUTOFF {
            return Ok(0.0);
        }
        // nodes whose Gaussian factor is below e^-40 of the largest one are dropped
        let q_needed = r.d2 / (r.d2 / self.t + 2.0 * RELATIVE_CUTOFF);
        if q_needed < self.q_min {
            let p = KernelParams::new(self.theta, self.fallback)?;
            return Ok(interaction_v_radial(&p, self.t, r1, r2)?.value);
        }
        let start = self.direct.partition_point(|&(q, _)| q < q_needed);
        let mut sum = 0.0;
        for &(q, c) in &self.direct[start..] {
            sum += c * a_fast(q, r.d2, r.m);
        }
        sum += self.boundary_nu * a_fast(0.5 * self.t, r.d2, r.m);
        for &(q, c) in &self.by_parts {
            sum += c * a_prime_fast(q, r.d2, r.p, r.m);
        }
        Ok(2.0 * PI * sum)
    }
}

/// Shared cache of interaction rules keyed by `(theta, t)`.
pub fn interaction_rule(theta: f64, t: f64) -> Result<Arc<InteractionRule>> {
    type Cache = RwLock<HashMap<(u64, u64), Arc<InteractionRule>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (theta.to_bits(), t.to_bits());
    if let Some(r) = cache.read().expect("rule cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    let rule = Arc::new(InteractionRule::new(theta, t, &QuadratureSpec::default())?);
    let mut w = cache.write().expect("rule cache poisoned");
    if w.len() > 512 {
        w.clear();
    }
    Ok(w.entry(key).or_insert(rule).clone())
}

/// Fast interaction term through the shared rule cache.
pub fn interaction_v_fast(theta: f64, t: f64, r1: f64, r2: f64) -> Result<f64> {
    interaction_rule(theta, t)?.eval(r1, r2)
}

/// Full kernel `K_t(x, y) = g_t(x - y) + v_t(x, y)`.
pub fn full_kernel(p: &KernelParams, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<SpecialValue> {
    check_time("full_kernel", t)?;
    let g = gauss(t, (x - y).norm_sq());
    Ok(SpecialValue::exact(g) + interaction_v(p, t, x, y)?)
}

/// Full kernel using the cached fixed rule for the interaction term.
pub fn full_kernel_fast(theta: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    check_time("full_kernel", t)?;
    Ok(gauss(t, (x - y).norm_sq()) + interaction_v_fast(theta, t, x.norm(), y.norm())?)
}

/// Angular integral of the heat kernel over the circle of radius `rho`:
/// `int_0^{2 pi} g_t(rho e^{i phi} - y) d phi` with `|y| = r`.
pub fn circle_heat(t: f64, rho: f64, r: f64) -> f64 {
    let d = rho - r;
    (-0.5 * d * d / t).exp() * bessel_i0_scaled(rho * r / t) / t
}

/// `int_0^inf f(rho) d rho` for integrands concentrated near `centers` with
/// Gaussian spread `width`. The first panel uses `rho = rho_1 e^{-w}` so that
/// logarithmic behaviour at the origin is harmless.
pub fn radial_integral<F>(mut f: F, centers: &[f64], width: f64, quad: &QuadratureSpec) -> Result<SpecialValue>
where
    F: FnMut(f64) -> Result<f64>,
{
    let c_max = centers.iter().cloned().fold(0.0, f64::max);
    let r_max = c_max + 12.0 * width;
    let mut breaks: Vec<f64> = vec![];
    for &c in centers {
        for k in [-6.0, -3.0, -1.5, 0.0, 1.5, 3.0, 6.0] {
            let b = c + k * width;
            if b > 0.0 && b < r_max {
                breaks.push(b);
            }
        }
    }
    for k in [0.25, 1.0, 3.0] {
        let b = k * width;
        if b < r_max {
            breaks.push(b);
        }
    }
    breaks.push(r_max);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    let rho1 = breaks[0];
    let head = scale_result(
        integrate(
            |w| {
                let rho = rho1 * (-w).exp();
                Ok(f(rho)? * rho)
            },
            &[0.0, 2.0, 6.0, 15.0, 40.0],
            quad,
        ),
        1.0,
    )?;
    let body = if breaks.len() > 1 {
        integrate(&mut f, &breaks, quad)?
    } else {
        SpecialValue::exact(0.0)
    };
    Ok(head + body)
}

/// Relative residual of `int K_s(x, z) K_{t-s}(z, y) dz = K_t(x, y)`.
///
/// The Gaussian-Gaussian part is the heat semigroup and is taken in closed
/// form. The remaining terms are radial in `z` once the angle is integrated.
pub fn semigroup_residual(p: &KernelParams, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(domain("semigroup_residual", format!("need 0 < s < t, got s={s}, t={t}")));
    }
    let (r1, r2) = (x.norm(), y.norm());
    radii("semigroup_residual", r1, r2)?;
    let theta = p.theta;
    let rule_s = interaction_rule(theta, s)?;
    let rule_ts = interaction_rule(theta, t - s)?;
    let tau = t - s;
    let quad = p.quad.scaled(0.1);
    let cross = radial_integral(
        |rho| {
            let a = rule_s.eval(r1, rho)? * circle_heat(tau, rho, r2);
            let b = circle_heat(s, rho, r1) * rule_ts.eval(rho, r2)?;
            let c = 2.0 * PI * rule_s.eval(r1, rho)? * rule_ts.eval(rho, r2)?;
            Ok((a + b + c) * rho)
        },
        &[r1, r2],
        t.sqrt(),
        &quad,
    )?;
    let g = gauss(t, (x - y).norm_sq());
    let lhs = g + cross.value;
    let rhs = g + interaction_rule(theta, t)?.eval(r1, r2)?;
    Ok((lhs - rhs).abs() / rhs)
}

/// Relative residual of the ground-state eigenrelation
/// `int K_t(x, y) K_0(c |y|) dy = e^{theta t} K_0(c |x|)` with `c = sqrt(2 theta)`.
pub fn gst_eigen_residual(p: &KernelParams, t: f64, x: PlanarPoint) -> Result<f64> {
    check_time("gst_eigen_residual", t)?;
    let r1 = x.norm();
    if r1 == 0.0 {
        return Err(Error::Infinite("gst_eigen_residual at the origin".into()));
    }
    let theta = p.theta;
    let c = (2.0 * theta).sqrt();
    let rule = interaction_rule(theta, t)?;
    let k0 = |z: f64| bessel_k01_scaled_fast(z).0 * (-z).exp();
    let lhs = radial_integral(
        |rho| {
            let kz = k0(c * rho);
            Ok((circle_heat(t, rho, r1) + 2.0 * PI * rule.eval(r1, rho)?) * kz * rho)
        },
        &[r1],
        t.sqrt(),
        &p.quad.scaled(0.1),
    )?;
    let rhs = (theta * t).exp() * bessel_k(0, c * r1, &p.quad)?;
    Ok((lhs.value - rhs).abs() / rhs)
}

fn bessel_k(order: u32, z: f64, quad: &QuadratureSpec) -> Result<f64> {
    Ok(crate::specfun::bessel_k(order, z, quad)?.value)
}

/// Relative residual of `int g_t(x - y) K_0(c |y|) dy = e^{theta t} K_0(c |x|, theta t)`.
pub fn gst_convolution_residual(p: &KernelParams, t: f64, x: PlanarPoint) -> Result<f64> {
    check_time("gst_convolution_residual", t)?;
    let r1 = x.norm();
    let theta = p.theta;
    let c = (2.0 * theta).sqrt();
    let lhs = radial_integral(
        |rho| Ok(circle_heat(t, rho, r1) * bessel_k(0, c * rho, &p.quad.scaled(0.01))? * rho),
        &[r1],
        t.sqrt(),
        &p.quad.scaled(0.1),
    )?;
    let rhs = (theta * t).exp() * incomplete_bessel_k(0, c * r1, theta * t, &p.quad)?.value;
    Ok((lhs.value - rhs).abs() / rhs)
}

/// Relative residual of
/// `int g_t(x - y) K_0(c |y|, theta (T - t)) dy = e^{theta t} K_0(c |x|, theta T)`.
pub fn gst_iterated_residual(p: &KernelParams, t: f64, horizon: f64, x: PlanarPoint) -> Result<f64> {
    check_time("gst_iterated_residual", t)?;
    if !(horizon > t) {
        return Err(domain("gst_iterated_residual", "need T > t"));
    }
    let r1 = x.norm();
    let theta = p.theta;
    let c = (2.0 * theta).sqrt();
    let inner = p.quad.scaled(0.01);
    let lhs = radial_integral(
        |rho| {
            let k = incomplete_bessel_k(0, (c * rho).max(1e-300), theta * (horizon - t), &inner)?.value;
            Ok(circle_heat(t, rho, r1) * k * rho)
        },
        &[r1],
        t.sqrt(),
        &p.quad.scaled(0.1),
    )?;
    let rhs = (theta * t).exp() * incomplete_bessel_k(0, c * r1, theta * horizon, &p.quad)?.value;
    Ok((lhs.value - rhs).abs() / rhs)
}
