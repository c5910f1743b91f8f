//! Adaptive Gauss–Kronrod quadrature with error estimates, plus the fixed
//! composite rules and periodic trapezoid sums used by the nested integrals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an integrator should treat an endpoint singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EndpointRule {
    /// Plain adaptive bisection.
    #[default]
    None,
    /// Map `x = a + (b - a) e^{-w}` so that an integrable singularity at the
    /// left endpoint becomes an exponentially decaying tail.
    LogSubstitution,
    /// Map a semi-infinite range `[a, inf)` with `x = a + u / (1 - u)`.
    ExpTail,
}

/// Tolerances and limits shared by every quadrature in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub endpoint_rule: EndpointRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            endpoint_rule: EndpointRule::None,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Result<Self> {
        let spec = Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol >= 0.0
            && self.rel_tol >= 0.0
            && self.abs_tol + self.rel_tol > 0.0
            && self.abs_tol.is_finite()
            && self.rel_tol.is_finite()
            && self.max_subdivisions > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::error::domain(
                "QuadratureSpec",
                format!(
                    "need abs_tol, rel_tol >= 0 with positive sum and max_subdivisions > 0, got {self:?}"
                ),
            ))
        }
    }

    pub fn with_rule(mut self, rule: EndpointRule) -> Self {
        self.endpoint_rule = rule;
        self
    }

    /// Tolerances scaled by `factor` (used to give inner integrals a tighter budget).
    pub fn scaled(mut self, factor: f64) -> Self {
        self.abs_tol *= factor;
        self.rel_tol *= factor;
        self
    }

    pub fn tolerance_for(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// A numerical value together with the error estimate reported by the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialValue {
    pub value: f64,
    pub err_estimate: f64,
}

impl SpecialValue {
    pub const fn exact(value: f64) -> Self {
        Self {
            value,
            err_estimate: 0.0,
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            err_estimate: self.err_estimate * k.abs(),
        }
    }
}

/// Scale a quadrature outcome by `k`, including the best estimate carried by a
/// tolerance error.
pub fn scale_result(r: Result<SpecialValue>, k: f64) -> Result<SpecialValue> {
    r.map(|v| v.scale(k)).map_err(|e| e.rescaled(k))
}

impl std::ops::Add for SpecialValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            value: self.value + o.value,
            err_estimate: self.err_estimate + o.err_estimate,
        }
    }
}

impl std::ops::Sub for SpecialValue {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            value: self.value - o.value,
            err_estimate: self.err_estimate + o.err_estimate,
        }
    }
}

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_600_525_204,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk21<F>(f: &mut F, a: f64, b: f64) -> Result<Segment>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = checked(f, center)?;
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv = [(0.0, 0.0); 10];
    for (j, &x) in XGK[..10].iter().enumerate() {
        let dx = half * x;
        let f1 = checked(f, center - dx)?;
        let f2 = checked(f, center + dx)?;
        fv[j] = (f1, f2);
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        res_asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment { a, b, value, err })
}

fn checked<F>(f: &mut F, x: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("non-finite integrand {v} at {x}")))
    }
}

/// Globally adaptive Gauss–Kronrod integration of a fallible integrand over the
/// partition given by `points` (at least two increasing abscissae).
pub fn integrate<F>(mut f: F, points: &[f64], spec: &QuadratureSpec) -> Result<SpecialValue>
where
    F: FnMut(f64) -> Result<f64>,
{
    if points.len() < 2 {
        return Err(crate::error::domain("integrate", "need at least two points"));
    }
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(gk21(&mut f, w[0], w[1])?);
        } else if w[1] < w[0] {
            return Err(crate::error::domain("integrate", "points must be increasing"));
        }
    }
    if heap.is_empty() {
        return Ok(SpecialValue::exact(0.0));
    }
    let limit = spec.max_subdivisions.max(heap.len());
    loop {
        let (value, err) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
        let tol = spec.tolerance_for(value);
        if err <= tol {
            return Ok(SpecialValue {
                value,
                err_estimate: err,
            });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        let too_small = (worst.b - worst.a).abs() <= 1e3 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE);
        if heap.len() + 2 > limit || too_small {
            heap.push(worst);
            let (value, err) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
            return Err(Error::Tolerance {
                best: value,
                err_estimate: err,
                requested: spec.tolerance_for(value),
            });
        }
        heap.push(gk21(&mut f, worst.a, mid)?);
        heap.push(gk21(&mut f, mid, worst.b)?);
    }
}

/// Convenience wrapper for an infallible integrand on `[a, b]`.
pub fn integrate_plain<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<SpecialValue>
where
    F: FnMut(f64) -> f64,
{
    integrate(|x| Ok(f(x)), &[a, b], spec)
}

/// Integrate over `[a, inf)` via `x = a + u / (1 - u)`.
pub fn integrate_to_infinity<F>(mut f: F, a: f64, spec: &QuadratureSpec) -> Result<SpecialValue>
where
    F: FnMut(f64) -> Result<f64>,
{
    integrate(
        |u| {
            let d = 1.0 - u;
            let x = a + u / d;
            let fx = f(x)?;
            Ok(if fx == 0.0 { 0.0 } else { fx / (d * d) })
        },
        &[0.0, 1.0],
        spec,
    )
}

/// Integrate over `[a, b]` honouring `spec.endpoint_rule` for the left endpoint.
pub fn integrate_with_rule<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<SpecialValue>
where
    F: FnMut(f64) -> Result<f64>,
{
    match spec.endpoint_rule {
        EndpointRule::None => integrate(f, &[a, b], spec),
        EndpointRule::LogSubstitution => {
            let len = b - a;
            integrate(
                |w| {
                    let d = len * (-w).exp();
                    Ok(f(a + d)? * d)
                },
                &[0.0, 2.0, 8.0, 40.0],
                spec,
            )
        }
        EndpointRule::ExpTail => {
            if b.is_infinite() {
                integrate_to_infinity(f, a, spec)
            } else {
                integrate(f, &[a, b], spec)
            }
        }
    }
}

/// Mean of a `2 pi`-periodic function over one period by trapezoid sums with
/// doubling until two successive sums agree.
pub fn periodic_mean<F>(mut f: F, abs_tol: f64, rel_tol: f64) -> Result<SpecialValue>
where
    F: FnMut(f64) -> f64,
{
    const MAX_POINTS: usize = 1 << 18;
    let mut n = 32usize;
    let mut sum: f64 = (0..n)
        .map(|k| f(std::f64::consts::TAU * k as f64 / n as f64))
        .sum();
    let mut mean = sum / n as f64;
    loop {
        // Midpoints of the current grid.
        let extra: f64 = (0..n)
            .map(|k| f(std::f64::consts::TAU * (k as f64 + 0.5) / n as f64))
            .sum();
        sum += extra;
        n *= 2;
        let next = sum / n as f64;
        let diff = (next - mean).abs();
        mean = next;
        if !mean.is_finite() {
            return Err(Error::Divergence("non-finite periodic integrand".into()));
        }
        if diff <= abs_tol.max(rel_tol * mean.abs()) && n >= 64 {
            return Ok(SpecialValue {
                value: mean,
                err_estimate: diff,
            });
        }
        if n >= MAX_POINTS {
            return Err(Error::Tolerance {
                best: mean,
                err_estimate: diff,
                requested: abs_tol.max(rel_tol * mean.abs()),
            });
        }
    }
}

/// A fixed composite quadrature rule: nodes and weights such that
/// `sum w_i f(x_i)` approximates an integral. Built from 21-point Kronrod panels.
#[derive(Debug, Clone, Default)]
pub struct FixedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FixedRule {
    /// Kronrod-21 panels on the given breakpoints.
    pub fn on_breaks(breaks: &[f64]) -> Self {
        let mut rule = Self::default();
        for w in breaks.windows(2) {
            rule.push_panel(w[0], w[1]);
        }
        rule
    }

    /// `panels` equal Kronrod-21 panels on `[a, b]`.
    pub fn uniform(a: f64, b: f64, panels: usize) -> Self {
        let breaks: Vec<f64> = (0..=panels)
            .map(|k| a + (b - a) * k as f64 / panels as f64)
            .collect();
        Self::on_breaks(&breaks)
    }

    fn push_panel(&mut self, a: f64, b: f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for j in 0..10 {
            self.nodes.push(c - h * XGK[j]);
            self.weights.push(h * WGK[j]);
            self.nodes.push(c + h * XGK[j]);
            self.weights.push(h * WGK[j]);
        }
        self.nodes.push(c);
        self.weights.push(h * WGK[10]);
    }

    /// Change variables: returns the rule for `x = map(u)` with Jacobian `jac(u)`.
    pub fn mapped(&self, map: impl Fn(f64) -> f64, jac: impl Fn(f64) -> f64) -> Self {
        Self {
            nodes: self.nodes.iter().map(|&u| map(u)).collect(),
            weights: self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(&u, &w)| w * jac(u))
                .collect(),
        }
    }

    pub fn append(&mut self, other: Self) {
        self.nodes.extend(other.nodes);
        self.weights.extend(other.weights);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Chebyshev interpolant of a smooth function on `[a, b]`.
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    /// Interpolate `f` at `n` Chebyshev points of the first kind.
    pub fn fit(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> Self {
        let values: Vec<f64> = (0..n)
            .map(|j| {
                let x = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
                f(0.5 * (a + b) + 0.5 * (b - a) * x)
            })
            .collect();
        let coeffs = (0..n)
            .map(|k| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
                    })
                    .sum();
                let c = 2.0 * s / n as f64;
                if k == 0 {
                    0.5 * c
                } else {
                    c
                }
            })
            .collect();
        Self { a, b, coeffs }
    }

    /// Clenshaw evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let u = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * u * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        u * b1 - b2 + self.coeffs[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::new(1e-13, 1e-12).unwrap()
    }

    #[test]
    fn polynomial_exact() {
        let v = integrate_plain(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &spec()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((v.value - exact).abs() < 1e-13);
    }

    #[test]
    fn log_singularity_at_left_endpoint() {
        let s = spec().with_rule(EndpointRule::LogSubstitution);
        let v = integrate_with_rule(|x| Ok(x.ln()), 0.0, 1.0, &s).unwrap();
        assert!((v.value + 1.0).abs() < 1e-11, "{v:?}");
    }

    #[test]
    fn semi_infinite_exponential() {
        let v = integrate_to_infinity(|x| Ok((-x).exp()), 0.0, &spec()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tolerance_error_carries_best_estimate() {
        let s = QuadratureSpec {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_subdivisions: 3,
            endpoint_rule: EndpointRule::None,
        };
        match integrate_plain(|x| x.abs().sqrt().recip(), 0.0, 1.0, &s) {
            Err(Error::Tolerance { best, .. }) => assert!(best > 1.0 && best < 2.1),
            other => panic!("expected tolerance error, got {other:?}"),
        }
    }

    #[test]
    fn periodic_mean_of_exponential_cosine() {
        // mean of e^{z cos} is I0(z); I0(1) = 1.2660658777520084
        let v = periodic_mean(|p| p.cos().exp(), 1e-15, 1e-15).unwrap();
        assert!((v.value - 1.266_065_877_752_008_4).abs() < 1e-14);
    }

    #[test]
    fn fixed_rule_integrates_gaussian() {
        let rule = FixedRule::uniform(-10.0, 10.0, 8);
        let v = rule.apply(|x| (-0.5 * x * x).exp());
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let c = Chebyshev::fit(|x| (3.0 * x).sin() + x * x, -1.0, 2.0, 30);
        for i in 0..50 {
            let x = -1.0 + 3.0 * i as f64 / 49.0;
            assert!((c.eval(x) - ((3.0 * x).sin() + x * x)).abs() < 1e-13);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(QuadratureSpec::new(0.0, 0.0).is_err());
        assert!(QuadratureSpec::new(-1.0, 1e-3).is_err());
    }
}
