//! Doob-transformed transition densities and the laws derived from them:
//! survival probabilities, hitting times, conditional densities and drifts,
//! and the Radon-Nikodym derivative between two families.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::families::{
    base_conv_radial, base_conv_radial_deriv, drift_eval, h_radial, h_radial_cached, time_kernel_cached,
    volterra_v_radial, DriftVector, FamilyKind, FamilySpec,
};
use crate::kernel::{circle_heat, interaction_rule, radial_integral, KernelParams};
use crate::point::PlanarPoint;
use crate::quad::{FixedRule, QuadratureSpec};
use crate::specfun::{bessel_k_scaled, gauss, incomplete_bessel_k_scaled};

/// Binds a driving family to the kernel with the same coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEval {
    pub family: FamilySpec,
    pub kernel: KernelParams,
    pub quad: QuadratureSpec,
}

impl DensityEval {
    pub fn new(family: FamilySpec) -> Result<Self> {
        Ok(Self {
            family,
            kernel: KernelParams::new(family.theta, family.quad)?,
            quad: family.quad,
        })
    }

    pub fn with_kernel(family: FamilySpec, kernel: KernelParams, quad: QuadratureSpec) -> Result<Self> {
        if family.theta != kernel.theta {
            return Err(domain(
                "DensityEval",
                format!("family theta {} differs from kernel theta {}", family.theta, kernel.theta),
            ));
        }
        quad.validate()?;
        Ok(Self { family, kernel, quad })
    }

    pub fn theta(&self) -> f64 {
        self.family.theta
    }

    pub fn horizon(&self) -> f64 {
        self.family.horizon
    }

    fn check_times(&self, name: &'static str, s: f64, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if 0.0 <= s && s < t && t <= horizon {
            Ok(())
        } else {
            Err(domain(name, format!("need 0 <= s < t <= T={horizon}, got s={s}, t={t}")))
        }
    }

    fn check_time(&self, name: &'static str, t: f64) -> Result<()> {
        if (0.0..=self.horizon()).contains(&t) {
            Ok(())
        } else {
            Err(domain(name, format!("need 0 <= t <= T={}, got {t}", self.horizon())))
        }
    }
}

/// A density value, flagged when it comes from extrapolation rather than
/// direct evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub value: f64,
    pub approximate: bool,
}

// Radii used to extrapolate d_{s,t}(x, y) to x = 0.
const ORIGIN_RADII: [f64; 3] = [1e-4, 5e-5, 2.5e-5];

/// `d_{s,t}(x, y) = h_{T-t}(y) / h_{T-s}(x) * K_{t-s}(x, y)`.
///
/// At `x = 0` the value is the limit as `x -> 0`, extrapolated from
/// [`ORIGIN_RADII`]; see [`transition_density_eval`] for the flag.
pub fn transition_density(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    transition_density_eval(d, s, t, x, y).map(|e| e.value)
}

pub fn transition_density_eval(
    d: &DensityEval,
    s: f64,
    t: f64,
    x: PlanarPoint,
    y: PlanarPoint,
) -> Result<Evaluated> {
    d.check_times("transition_density", s, t)?;
    if y.is_origin() {
        return Err(Error::Infinite("the transition density is not evaluable at y = 0".into()));
    }
    if !x.is_origin() {
        return Ok(Evaluated {
            value: density_off_origin(d, s, t, x, y)?,
            approximate: false,
        });
    }
    // Both h_{T-s}(x) and K(x, y) grow like log(1/|x|), so the ratio is a
    // Moebius function of l = log(1/|x|) up to O(|x|^2). Three points fix it.
    let mut rows = [[0.0; 4]; 3];
    for (row, &r) in rows.iter_mut().zip(&ORIGIN_RADII) {
        let l = -r.ln();
        let f = density_off_origin(d, s, t, PlanarPoint::on_axis(r), y)?;
        // p l + q - beta f = f l
        *row = [l, 1.0, -f, f * l];
    }
    let limit = solve3(rows)?[0];
    log::debug!("transition density at the origin extrapolated to {limit}");
    Ok(Evaluated {
        value: limit,
        approximate: true,
    })
}

fn solve3(mut m: [[f64; 4]; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        m.swap(col, piv);
        if m[col][col] == 0.0 {
            return Err(Error::Divergence("singular extrapolation system".into()));
        }
        for row in 0..3 {
            if row != col {
                let k = m[row][col] / m[col][col];
                for c in col..4 {
                    m[row][c] -= k * m[col][c];
                }
            }
        }
    }
    Ok([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

fn density_off_origin(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    let f = &d.family;
    let horizon = f.horizon;
    let num = h_radial_cached(f, horizon - t, y.norm())?;
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = h_radial_cached(f, horizon - s, x.norm())?;
    let tau = t - s;
    let k = gauss(tau, (x - y).norm_sq()) + interaction_rule(d.theta(), tau)?.eval(x.norm(), y.norm())?;
    Ok(num / den * k)
}

/// `d_{s,t}(x, y)` with every factor from adaptive quadrature; slower than
/// [`transition_density`] but independent of the cached tables.
pub fn transition_density_precise(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    d.check_times("transition_density_precise", s, t)?;
    if x.is_origin() || y.is_origin() {
        return Err(Error::Infinite("precise transition density needs x, y != 0".into()));
    }
    let f = &d.family;
    let num = h_radial(f, f.horizon - t, y.norm())?;
    let den = h_radial(f, f.horizon - s, x.norm())?;
    let k = crate::kernel::full_kernel(&d.kernel, t - s, x, y)?.value;
    Ok(num / den * k)
}

/// Radial marginal of `d_{s,t}(x, .)`: the density of `|Y|`, i.e.
/// `rho * int_0^{2 pi} d_{s,t}(x, rho e^{i phi}) d phi`.
pub fn transition_radial_density(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, rho: f64) -> Result<f64> {
    d.check_times("transition_radial_density", s, t)?;
    if x.is_origin() || !(rho > 0.0) {
        return Err(domain("transition_radial_density", "need x != 0 and rho > 0"));
    }
    let f = &d.family;
    let tau = t - s;
    let r1 = x.norm();
    let num = h_radial_cached(f, f.horizon - t, rho)?;
    let den = h_radial_cached(f, f.horizon - s, r1)?;
    let v = interaction_rule(d.theta(), tau)?.eval(r1, rho)?;
    Ok(num / den * (circle_heat(tau, rho, r1) + 2.0 * PI * v) * rho)
}

/// Conditional (survival) density
/// `[(h_0 * g_{T-t})(y) / (h_0 * g_{T-s})(x)] g_{t-s}(x - y)`.
pub fn conditional_density(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    d.check_times("conditional_density", s, t)?;
    let f = &d.family;
    let num = base_conv_radial(f, f.horizon - t, y.norm())?;
    let den = base_conv_radial(f, f.horizon - s, x.norm())?;
    Ok(num / den * gauss(t - s, (x - y).norm_sq()))
}

/// `p_t(x) = (h_0 * g_t)(x) / h_t(x)`; at `t = T` this is the probability of
/// never reaching the origin. Extended by 0 at the origin.
pub fn survival_probability(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<f64> {
    d.check_time("survival_probability", t)?;
    if x.is_origin() {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let f = &d.family;
    let rho = x.norm();
    match f.kind {
        FamilyKind::GSt => {
            // both factors carry e^{theta t}
            let z = f.ground_rate() * rho;
            let tail = incomplete_bessel_k_scaled(0, z, f.theta * t, &d.quad)?.value;
            let full = bessel_k_scaled(0, z, &d.quad)?.value;
            Ok(tail / full)
        }
        _ => {
            let b = base_conv_radial(f, t, rho)?;
            let v = volterra_v_radial(f, t, rho)?.value;
            Ok(b / (b + v))
        }
    }
}

/// `p_t(x)` from the cached tables, for use inside Monte Carlo loops.
pub fn survival_probability_fast(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<f64> {
    d.check_time("survival_probability", t)?;
    if x.is_origin() {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let f = &d.family;
    let rho = x.norm();
    // the table's interpolation error can push values within 1e-10 of 1 above it
    Ok((base_conv_radial(f, t, rho)? / h_radial_cached(f, t, rho)?).min(1.0))
}

/// Law of the first visit to the origin, started from `x0`.
///
/// `density` is the law of `tau` given `tau <= T`; `survive_prob` is
/// `P[tau > T]`.
#[derive(Debug, Clone)]
pub struct HitLaw {
    pub x0: PlanarPoint,
    pub survive_prob: f64,
    family: FamilySpec,
    // Normalizer of the unnormalized density `numerator`.
    normalizer: f64,
    // Exponential scale factored out of numerator and normalizer (GSt only).
    log_scale: f64,
    knots: Vec<f64>,
    cumulative: Vec<f64>,
    /// True when the law depends on the artificial Dirac cutoff.
    pub regularized: bool,
}

// Unnormalized hit-time density.
fn hit_numerator(f: &FamilySpec, r2: f64, log_scale: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Ok(0.0);
    }
    match f.kind {
        FamilyKind::GSt => Ok((log_scale - f.theta * t - 0.5 * r2 / t).exp() / (2.0 * t)),
        _ => Ok(gauss(t, r2) * time_kernel_cached(f, f.horizon - t)?),
    }
}

impl HitLaw {
    pub fn horizon(&self) -> f64 {
        self.family.horizon
    }

    fn numerator(&self, t: f64) -> Result<f64> {
        hit_numerator(&self.family, self.x0.norm_sq(), self.log_scale, t)
    }

    /// Density of `tau` on `(0, T)` given a hit.
    pub fn density(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < self.horizon()) {
            return Ok(0.0);
        }
        Ok(self.numerator(t)? / self.normalizer)
    }

    fn partial(&self, a: f64, b: f64) -> Result<f64> {
        let rule = FixedRule::uniform(a, b, 1);
        let mut sum = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            sum += w * self.numerator(x)?;
        }
        Ok(sum)
    }

    /// `P[tau <= t | tau <= T]`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        if t <= 0.0 {
            return Ok(0.0);
        }
        if t >= horizon {
            return Ok(1.0);
        }
        if self.family.kind == FamilyKind::GSt {
            // (K_0(z) - K_0(z, theta t)) / (K_0(z) - K_0(z, theta T))
            let f = &self.family;
            let z = f.ground_rate() * self.x0.norm();
            let q = f.quad;
            let full = bessel_k_scaled(0, z, &q)?.value;
            let at = |y: f64| -> Result<f64> { Ok(full - incomplete_bessel_k_scaled(0, z, y, &q)?.value) };
            return Ok(at(f.theta * t)? / at(f.theta * horizon)?);
        }
        let i = self.knots.partition_point(|&k| k <= t).max(1) - 1;
        Ok((self.cumulative[i] + self.partial(self.knots[i], t)?) / self.normalizer)
    }

    /// `int_0^T density`, from the panel table (independent of the
    /// normalizer's own quadrature).
    pub fn total_mass(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1] / self.normalizer
    }

    /// Inverse CDF: the `tau` with `P[tau <= t | hit] = u`, solved to 1e-12
    /// in CDF value.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain("HitLaw::quantile", format!("u must be in [0, 1], got {u}")));
        }
        let total = self.cumulative[self.cumulative.len() - 1];
        let target = u * total;
        let n = self.knots.len();
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (self.knots[i], self.knots[i + 1]);
        let base = self.cumulative[i];
        let tol = 1e-12 * total;
        let mut t = 0.5 * (lo + hi);
        for _ in 0..100 {
            let g = base + self.partial(self.knots[i], t)? - target;
            if g.abs() <= tol {
                break;
            }
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = self.numerator(t)?;
            let newton = t - g / slope;
            t = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(t)
    }
}

/// The hitting-time law from `x0`.
pub fn hit_time_law(d: &DensityEval, x0: PlanarPoint) -> Result<HitLaw> {
    if x0.is_origin() {
        return Err(domain("hit_time_law", "x0 must be away from the origin"));
    }
    let f = d.family;
    let horizon = f.horizon;
    let rho = x0.norm();
    let r2 = rho * rho;
    let survive_prob = survival_probability(d, horizon, x0)?;
    let (normalizer, log_scale) = match f.kind {
        FamilyKind::GSt => {
            let z = f.ground_rate() * rho;
            let full = bessel_k_scaled(0, z, &d.quad)?.value;
            let tail = incomplete_bessel_k_scaled(0, z, f.theta * horizon, &d.quad)?.value;
            (full - tail, z)
        }
        _ => (volterra_v_radial(&f, horizon, rho)?.value, 0.0),
    };
    if !(normalizer > 0.0) || !(survive_prob < 1.0) {
        return Err(Error::Domain {
            function: "hit_time_law",
            message: format!("the origin is not reachable from |x0| = {rho} in floating point"),
        });
    }
    let knots = hit_knots(&f, r2);
    let mut cumulative = Vec::with_capacity(knots.len());
    cumulative.push(0.0);
    let mut acc = 0.0;
    for w in knots.windows(2) {
        let rule = FixedRule::uniform(w[0], w[1], 1);
        let mut part = 0.0;
        for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
            part += wt * hit_numerator(&f, r2, log_scale, x)?;
        }
        acc += part;
        cumulative.push(acc);
    }
    if let FamilyKind::Dir { eps } = f.kind {
        log::info!("Dirac hit-time law depends on the cutoff eps = {eps}");
    }
    Ok(HitLaw {
        x0,
        survive_prob,
        family: f,
        normalizer,
        log_scale,
        knots,
        cumulative,
        regularized: f.is_regularized(),
    })
}

fn hit_knots(f: &FamilySpec, r2: f64) -> Vec<f64> {
    let horizon = f.horizon;
    let mut knots = vec![0.0, horizon];
    for i in 1..256 {
        knots.push(horizon * i as f64 / 256.0);
    }
    // geometric resolution near the density's onset at t ~ |x|^2 / 2
    let onset = (r2 / 1490.0).max(1e-300);
    if onset < horizon {
        let (a, b) = (onset.ln(), horizon.ln());
        for i in 0..=200 {
            knots.push((a + (b - a) * i as f64 / 200.0).exp());
        }
    }
    // and near t = T, where the time kernel has a logarithmic singularity
    let mut end_points = vec![horizon];
    if let FamilyKind::Dir { eps } = f.kind {
        end_points.push(horizon - eps);
    }
    for e in end_points {
        for k in 1..=48 {
            knots.push(e - horizon * 0.5f64.powi(k));
        }
    }
    knots.retain(|&k| (0.0..=horizon).contains(&k));
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * horizon);
    knots
}

/// `dP^h / dP^hbar` on paths from `x0` ending at `xT`:
/// `[h_0(xT) / hbar_0(xT)] [hbar_T(x0) / h_T(x0)]`.
pub fn rn_derivative(dh: &DensityEval, dhbar: &DensityEval, x0: PlanarPoint, x_t: PlanarPoint) -> Result<f64> {
    if dh.theta() != dhbar.theta() || dh.horizon() != dhbar.horizon() {
        return Err(domain("rn_derivative", "both families must share theta and T"));
    }
    if x0.is_origin() || x_t.is_origin() {
        return Err(Error::Infinite("rn_derivative at the origin".into()));
    }
    let horizon = dh.horizon();
    let end = h_radial_cached(&dh.family, 0.0, x_t.norm())? / h_radial_cached(&dhbar.family, 0.0, x_t.norm())?;
    let start = h_radial_cached(&dhbar.family, horizon, x0.norm())? / h_radial_cached(&dh.family, horizon, x0.norm())?;
    Ok(end * start)
}

/// Drift of the survival-conditioned process with remaining time `t`:
/// `grad log (h_0 * g_t)(x)`.
pub fn conditional_drift(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<DriftVector> {
    if !(t > 0.0 && t <= d.horizon()) {
        return Err(domain("conditional_drift", format!("need 0 < t <= T, got {t}")));
    }
    if x.is_origin() {
        return Err(domain("conditional_drift", "x must be away from the origin"));
    }
    let f = &d.family;
    let radial = match f.kind {
        FamilyKind::Leb => 0.0,
        FamilyKind::Dir { .. } => -x.norm() / t,
        FamilyKind::Gau { alpha } => -x.norm() / (alpha + t),
        FamilyKind::GSt => {
            let c = f.ground_rate();
            let z = c * x.norm();
            let y = f.theta * t;
            let k0 = incomplete_bessel_k_scaled(0, z, y, &d.quad)?.value;
            let k1 = incomplete_bessel_k_scaled(1, z, y, &d.quad)?.value;
            -c * k1 / k0
        }
    };
    Ok(DriftVector::radial(x, radial))
}

/// `Lambda_t = h_{T-t}(x) / (h_0 * g_{T-t})(x)`, the density of the
/// survival-conditioned law against the original one at time `t`.
pub fn lambda_process(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<f64> {
    d.check_time("lambda_process", t)?;
    let f = &d.family;
    let rem = f.horizon - t;
    Ok(h_radial_cached(f, rem, x.norm())? / base_conv_radial(f, rem, x.norm())?)
}

/// Relative residual of `int d_{s,u}(x, z) d_{u,t}(z, y) dz = d_{s,t}(x, y)`.
///
/// The factor `h_{T-u}(z)` cancels between the two densities, leaving the
/// kernel semigroup times `h_{T-t}(y) / h_{T-s}(x)`.
pub fn chapman_kolmogorov_residual(
    d: &DensityEval,
    s: f64,
    u: f64,
    t: f64,
    x: PlanarPoint,
    y: PlanarPoint,
) -> Result<f64> {
    d.check_times("chapman_kolmogorov_residual", s, t)?;
    if !(s < u && u < t) {
        return Err(domain("chapman_kolmogorov_residual", "need s < u < t"));
    }
    if x.is_origin() || y.is_origin() {
        return Err(Error::Infinite("chapman_kolmogorov_residual needs x, y != 0".into()));
    }
    let f = &d.family;
    let (r1, r2) = (x.norm(), y.norm());
    let (a, b) = (u - s, t - u);
    let rule_a = interaction_rule(d.theta(), a)?;
    let rule_b = interaction_rule(d.theta(), b)?;
    let h_mid = |rho: f64| h_radial_cached(f, f.horizon - u, rho);
    let cross = radial_integral(
        |rho| {
            let hz = h_mid(rho)?;
            let va = rule_a.eval(r1, rho)?;
            let vb = rule_b.eval(rho, r2)?;
            let gv = circle_heat(a, rho, r1) * vb;
            let vg = va * circle_heat(b, rho, r2);
            let vv = 2.0 * PI * va * vb;
            // d_{s,u}(x, z) d_{u,t}(z, y) with the h(z) factors kept explicit
            Ok((hz * (gv + vg + vv) / hz) * rho)
        },
        &[r1, r2],
        (t - s).sqrt(),
        &d.quad.scaled(0.1),
    )?;
    let ratio = h_radial_cached(f, f.horizon - t, r2)? / h_radial_cached(f, f.horizon - s, r1)?;
    let lhs = ratio * (gauss(t - s, (x - y).norm_sq()) + cross.value);
    let rhs = transition_density(d, s, t, x, y)?;
    Ok((lhs - rhs).abs() / rhs)
}

/// Finite-difference residual of the forward equation
/// `d_t d = (1/2) Lap_y d - div_y(b_{T-t} d)` at `(t, y)`, relative to `|d_t d|`.
pub fn forward_equation_residual(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, y: PlanarPoint) -> Result<f64> {
    let dens = |tt: f64, yy: PlanarPoint| transition_density_precise(d, s, tt, x, yy);
    let ht = 1e-3 * (t - s).min(d.horizon() - t).max(1e-6);
    let hy = 1e-3 * y.norm().max(1e-3);
    let d_t = (dens(t + ht, y)? - dens(t - ht, y)?) / (2.0 * ht);
    let e1 = PlanarPoint::new(hy, 0.0);
    let e2 = PlanarPoint::new(0.0, hy);
    let c = dens(t, y)?;
    let lap = (dens(t, y + e1)? + dens(t, y - e1)? + dens(t, y + e2)? + dens(t, y - e2)? - 4.0 * c) / (hy * hy);
    let flux = |yy: PlanarPoint| -> Result<PlanarPoint> {
        let b = drift_eval(&d.family, d.horizon() - t, yy)?;
        Ok(b.components * dens(t, yy)?)
    };
    let div = (flux(y + e1)?.x - flux(y - e1)?.x + flux(y + e2)?.y - flux(y - e2)?.y) / (2.0 * hy);
    Ok((d_t - 0.5 * lap + div).abs() / d_t.abs())
}

/// Finite-difference residual of `d_t p = (1/2) Lap p + b_t . grad p`,
/// relative to `|d_t p|`.
pub fn survival_pde_residual(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<f64> {
    let p = |tt: f64, r: f64| survival_probability(d, tt, PlanarPoint::on_axis(r));
    let rho = x.norm();
    let ht = 1e-3 * t;
    let hr = 1e-3 * rho;
    let d_t = (-p(t + 2.0 * ht, rho)? + 8.0 * p(t + ht, rho)? - 8.0 * p(t - ht, rho)? + p(t - 2.0 * ht, rho)?)
        / (12.0 * ht);
    let c = p(t, rho)?;
    let (pp, pm) = (p(t, rho + hr)?, p(t, rho - hr)?);
    let (pp2, pm2) = (p(t, rho + 2.0 * hr)?, p(t, rho - 2.0 * hr)?);
    let d_r = (-pp2 + 8.0 * pp - 8.0 * pm + pm2) / (12.0 * hr);
    let d_rr = (-pp2 + 16.0 * pp - 30.0 * c + 16.0 * pm - pm2) / (12.0 * hr * hr);
    let lap = d_rr + d_r / rho;
    let b = drift_eval(&d.family, t, x)?.radial_part;
    Ok((d_t - 0.5 * lap - b * d_r).abs() / d_t.abs())
}

/// Relative mismatch between `grad p_t = p_t (bcirc_t - b_t)` and a central
/// difference of `p_t` along `x`.
pub fn gradient_identity_residual(d: &DensityEval, t: f64, x: PlanarPoint) -> Result<f64> {
    let rho = x.norm();
    let p = |r: f64| survival_probability(d, t, PlanarPoint::on_axis(r));
    let h = 1e-4 * rho;
    let fd = (-p(rho + 2.0 * h)? + 8.0 * p(rho + h)? - 8.0 * p(rho - h)? + p(rho - 2.0 * h)?) / (12.0 * h);
    let f = &d.family;
    let bcirc = base_conv_radial_deriv(f, t, rho)? / base_conv_radial(f, t, rho)?;
    let b = drift_eval(f, t, x)?.radial_part;
    let analytic = p(rho)? * (bcirc - b);
    Ok((analytic - fd).abs() / fd.abs())
}
