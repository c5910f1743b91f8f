//! Monte Carlo engines: rejection sampling from the transition density,
//! survival-conditioned path samplers, hitting times and path diagnostics.
//!
//! Every path draws from its own ChaCha stream selected by
//! `(master seed, path index)`, so batch results do not depend on the number
//! of workers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doob::{hit_time_law, survival_probability_fast, DensityEval, HitLaw};
use crate::error::{domain, Error, Result};
use crate::families::{drift_eval, h_radial_cached, CacheKey, FamilyKind};
use crate::kernel::{interaction_rule, InteractionRule};
use crate::point::PlanarPoint;
use crate::specfun::{gauss, incomplete_bessel_k_scaled};
use crate::stats::{kahan_sum, McEstimate};

pub use crate::stats::McEstimate as Estimate;

pub type PathRng = ChaCha8Rng;

/// The generator for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Run `job(rng, index)` for `n` independent paths on `workers` threads;
/// results come back in index order.
pub fn fan_out<T, F>(n: usize, seed: u64, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut PathRng, usize) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Sampler(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                job(&mut rng, i)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    MarginalExact,
    ConditionalExact,
    EulerApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub grid: Vec<f64>,
    pub points: Vec<PlanarPoint>,
    pub tau: Option<f64>,
    pub mode: PathMode,
    pub seed: Option<SeedRecord>,
}

fn check_grid(d: &DensityEval, grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) {
        return Err(domain("sampler", "the grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("sampler", "the grid must be strictly increasing"));
    }
    if grid[grid.len() - 1] > d.horizon() {
        return Err(domain("sampler", "the grid must end at or before T"));
    }
    Ok(())
}

const MIX_LOCAL: f64 = 0.45;
const MIX_CENTRAL: f64 = 0.45;
const MIX_CORE: f64 = 0.10;
const SAFETY: f64 = 1.5;

/// Rejection sampler for `d_{s,t}(x, .)`.
///
/// The proposal mixes a Gaussian at `x`, a wider Gaussian at the origin and a
/// `1/|y|` core on the disc of radius `sqrt(t - s)` that dominates the
/// logarithmic peak of `h` at the origin.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    d: DensityEval,
    t: f64,
    x: PlanarPoint,
    tau: f64,
    sigma2: f64,
    core_radius: f64,
    h_den: f64,
    rule: Arc<InteractionRule>,
    envelope: f64,
    resweeps: u32,
    /// Proposals drawn and accepted so far.
    pub proposals: u64,
    pub accepted: u64,
    point_mass_at_origin: bool,
}

impl TransitionSampler {
    pub fn new(d: &DensityEval, s: f64, t: f64, x: PlanarPoint) -> Result<Self> {
        let horizon = d.horizon();
        if !(0.0 <= s && s < t && t <= horizon) {
            return Err(domain("sample_transition", format!("need 0 <= s < t <= T, got s={s}, t={t}")));
        }
        if x.is_origin() {
            return Err(domain("sample_transition", "x must be away from the origin"));
        }
        let tau = t - s;
        let r = x.norm();
        let mut me = Self {
            d: *d,
            t,
            x,
            tau,
            sigma2: tau + r.min(1.0).powi(2),
            core_radius: tau.sqrt(),
            h_den: h_radial_cached(&d.family, horizon - s, r)?,
            rule: interaction_rule(d.theta(), tau)?,
            envelope: 0.0,
            resweeps: 0,
            proposals: 0,
            accepted: 0,
            // the Dirac family's terminal profile is a point mass
            point_mass_at_origin: matches!(d.family.kind, FamilyKind::Dir { .. }) && t == horizon,
        };
        if !me.point_mass_at_origin {
            me.envelope = SAFETY * me.sweep(1)?;
        }
        Ok(me)
    }

    /// Same as [`TransitionSampler::new`], with the envelope shared between
    /// starting points of similar radius through a process-wide cache.
    pub fn cached(d: &DensityEval, s: f64, t: f64, x: PlanarPoint) -> Result<Self> {
        let mut me = Self::new_without_sweep(d, s, t, x)?;
        if !me.point_mass_at_origin {
            me.envelope = envelope_for(&me, s)?;
        }
        Ok(me)
    }

    fn new_without_sweep(d: &DensityEval, s: f64, t: f64, x: PlanarPoint) -> Result<Self> {
        let horizon = d.horizon();
        if !(0.0 <= s && s < t && t <= horizon) {
            return Err(domain("sample_transition", format!("need 0 <= s < t <= T, got s={s}, t={t}")));
        }
        if x.is_origin() {
            return Err(domain("sample_transition", "x must be away from the origin"));
        }
        let tau = t - s;
        let r = x.norm();
        Ok(Self {
            d: *d,
            t,
            x,
            tau,
            sigma2: tau + r.min(1.0).powi(2),
            core_radius: tau.sqrt(),
            h_den: h_radial_cached(&d.family, horizon - s, r)?,
            rule: interaction_rule(d.theta(), tau)?,
            envelope: 0.0,
            resweeps: 0,
            proposals: 0,
            accepted: 0,
            point_mass_at_origin: matches!(d.family.kind, FamilyKind::Dir { .. }) && t == horizon,
        })
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }

    /// Target density `d_{s,t}(x, y)`.
    pub fn target(&self, y: PlanarPoint) -> Result<f64> {
        let rho = y.norm();
        if rho == 0.0 {
            return Ok(0.0);
        }
        let f = &self.d.family;
        let h_num = h_radial_cached(f, f.horizon - self.t, rho)?;
        if h_num == 0.0 {
            return Ok(0.0);
        }
        let k = gauss(self.tau, (self.x - y).norm_sq()) + self.rule.eval(self.x.norm(), rho)?;
        Ok(h_num / self.h_den * k)
    }

    /// Proposal density.
    pub fn proposal(&self, y: PlanarPoint) -> f64 {
        let rho = y.norm();
        let core = if rho > 0.0 && rho < self.core_radius {
            MIX_CORE / (2.0 * PI * rho * self.core_radius)
        } else {
            0.0
        };
        MIX_LOCAL * gauss(self.tau, (y - self.x).norm_sq()) + MIX_CENTRAL * gauss(self.sigma2, y.norm_sq()) + core
    }

    fn draw_proposal<R: Rng>(&self, rng: &mut R) -> PlanarPoint {
        let u: f64 = rng.random();
        if u < MIX_LOCAL {
            let sd = self.tau.sqrt();
            self.x + normal2(rng) * sd
        } else if u < MIX_LOCAL + MIX_CENTRAL {
            normal2(rng) * self.sigma2.sqrt()
        } else {
            let rho = self.core_radius * rng.random::<f64>();
            PlanarPoint::from_polar(rho, 2.0 * PI * rng.random::<f64>())
        }
    }

    /// Largest target/proposal ratio along the line through `x` and the
    /// origin. For a fixed radius the ratio is monotone in `g(x - y)`, so its
    /// supremum over angles sits on this line.
    fn sweep(&self, refine: usize) -> Result<f64> {
        let r = self.x.norm();
        let sd = self.tau.sqrt();
        let u = self.x.unit().unwrap_or(PlanarPoint::on_axis(1.0));
        let mut radii = Vec::new();
        let n_log = 16 * refine;
        let top = (0.5 * sd.min(r)).max(1e-300);
        let bottom = 1e-6 * sd;
        for i in 0..n_log {
            radii.push(bottom * (top / bottom).powf(i as f64 / (n_log - 1) as f64));
        }
        let n_lin = 64 * refine;
        let far = r + 10.0 * sd;
        for i in 1..=n_lin {
            radii.push(far * i as f64 / n_lin as f64);
        }
        for k in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
            let c = r + k * sd;
            if c > 0.0 {
                radii.push(c);
            }
        }
        radii.push(self.core_radius * (1.0 - 1e-12));
        radii.push(self.core_radius * (1.0 + 1e-12));
        let mut best = 0.0f64;
        for &rho in &radii {
            for sign in [1.0, -1.0] {
                let y = u * (sign * rho);
                let q = self.proposal(y);
                if q > 0.0 {
                    best = best.max(self.target(y)? / q);
                }
            }
        }
        if !(best > 0.0 && best.is_finite()) {
            return Err(Error::Sampler(format!("envelope sweep failed (sup ratio {best})")));
        }
        Ok(best)
    }

    /// One exact draw from `d_{s,t}(x, .)`.
    pub fn draw<R: Rng>(&mut self, rng: &mut R) -> Result<PlanarPoint> {
        if self.point_mass_at_origin {
            return Ok(PlanarPoint::ORIGIN);
        }
        loop {
            let y = self.draw_proposal(rng);
            self.proposals += 1;
            let q = self.proposal(y);
            let p = self.target(y)?;
            let ratio = p / q;
            if ratio > self.envelope {
                if self.resweeps >= 1 {
                    return Err(Error::Sampler(format!(
                        "envelope {} exceeded ({ratio}) at y = ({}, {}) after a refined sweep",
                        self.envelope, y.x, y.y
                    )));
                }
                self.resweeps += 1;
                let finer = self.sweep(4)?;
                log::warn!("envelope {} exceeded by ratio {ratio}; refined sweep gives {finer}", self.envelope);
                self.envelope = SAFETY * finer.max(ratio);
                continue;
            }
            if rng.random::<f64>() * self.envelope < ratio {
                self.accepted += 1;
                return Ok(y);
            }
        }
    }
}

fn normal2<R: Rng>(rng: &mut R) -> PlanarPoint {
    PlanarPoint::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

// Envelope cache keyed by (family, s, t, radius bucket). A bucket's envelope
// is the larger of the sweeps at its two ends; draws still check every ratio.
const BUCKETS_PER_UNIT: f64 = 20.0;

fn envelope_for(sampler: &TransitionSampler, s: f64) -> Result<f64> {
    type Cache = RwLock<HashMap<(CacheKey, u64, i64), f64>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let r = sampler.x.norm();
    let bucket = (r.ln() * BUCKETS_PER_UNIT).floor();
    let f = &sampler.d.family;
    let key = (f.cache_key(sampler.t), s.to_bits(), bucket as i64);
    if let Some(&e) = cache.read().expect("envelope cache poisoned").get(&key) {
        return Ok(e);
    }
    let mut best = 0.0f64;
    for edge in [bucket, bucket + 1.0] {
        let re = (edge / BUCKETS_PER_UNIT).exp();
        let probe = TransitionSampler::new_without_sweep(&sampler.d, s, sampler.t, PlanarPoint::on_axis(re))?;
        best = best.max(probe.sweep(1)?);
    }
    best = best.max(sampler.sweep(1)?);
    let e = SAFETY * best;
    let mut w = cache.write().expect("envelope cache poisoned");
    if w.len() > 100_000 {
        w.clear();
    }
    w.insert(key, e);
    Ok(e)
}

/// One exact draw from `d_{s,t}(x, .)`.
pub fn sample_transition<R: Rng>(d: &DensityEval, s: f64, t: f64, x: PlanarPoint, rng: &mut R) -> Result<PlanarPoint> {
    let mut sampler = TransitionSampler::cached(d, s, t, x)?;
    let y = sampler.draw(rng)?;
    log::trace!("transition draw accepted after {} proposals", sampler.proposals);
    Ok(y)
}

/// `n` independent draws from `d_{s,t}(x, .)`, path `i` using stream `i`.
pub fn sample_transitions(
    d: &DensityEval,
    s: f64,
    t: f64,
    x: PlanarPoint,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<PlanarPoint>> {
    let base = TransitionSampler::new(d, s, t, x)?;
    let results = fan_out(n, seed, workers, |rng, _| {
        let mut sampler = base.clone();
        let y = sampler.draw(rng)?;
        Ok((y, sampler.proposals))
    })?;
    let proposals: u64 = results.iter().map(|r| r.1).sum();
    let rate = n as f64 / proposals.max(1) as f64;
    log::info!("rejection sampler acceptance rate {rate:.3} over {n} draws (envelope {:.3e})", base.envelope);
    if rate < 0.01 {
        log::warn!("acceptance rate {rate} below 0.01");
    }
    Ok(results.into_iter().map(|r| r.0).collect())
}

/// Exact finite-dimensional sample along `grid` via the Markov property.
pub fn sample_path_marginal<R: Rng>(d: &DensityEval, x0: PlanarPoint, grid: &[f64], rng: &mut R) -> Result<PathSample> {
    check_grid(d, grid)?;
    if x0.is_origin() {
        return Err(domain("sample_path_marginal", "x0 must be away from the origin"));
    }
    let mut points = Vec::with_capacity(grid.len());
    points.push(x0);
    let mut x = x0;
    for w in grid.windows(2) {
        if x.is_origin() {
            // only the Dirac family reaches the origin, at t = T
            return Err(Error::Sampler("marginal path reached the origin before T".into()));
        }
        x = sample_transition(d, w[0], w[1], x, rng)?;
        points.push(x);
    }
    Ok(PathSample {
        grid: grid.to_vec(),
        points,
        tau: None,
        mode: PathMode::MarginalExact,
        seed: None,
    })
}

/// Drift of the survival-conditioned ground-state process at remaining time
/// `rem`: `grad log K_0(c |x|, theta rem)`.
fn gst_conditional_drift(d: &DensityEval, rem: f64, x: PlanarPoint) -> Result<PlanarPoint> {
    let f = &d.family;
    let c = f.ground_rate();
    let rho = x.norm();
    let z = c * rho;
    let y = f.theta * rem;
    let k0 = incomplete_bessel_k_scaled(0, z, y, &d.quad)?.value;
    let k1 = incomplete_bessel_k_scaled(1, z, y, &d.quad)?.value;
    Ok(x * (-c * k1 / (k0 * rho)))
}

// Cap on Euler substeps for one grid step of the ground-state sampler.
const MAX_SUBSTEPS: usize = 1_000_000;

/// A path of the survival-conditioned process along `grid`.
pub fn sample_conditional_path<R: Rng>(
    d: &DensityEval,
    x0: PlanarPoint,
    grid: &[f64],
    rng: &mut R,
) -> Result<PathSample> {
    check_grid(d, grid)?;
    if x0.is_origin() {
        return Err(domain("sample_conditional_path", "x0 must be away from the origin"));
    }
    let horizon = d.horizon();
    let mut points = Vec::with_capacity(grid.len());
    points.push(x0);
    let mut x = x0;
    let mut mode = PathMode::ConditionalExact;
    for w in grid.windows(2) {
        let (s, t) = (w[0], w[1]);
        let dt = t - s;
        x = match d.family.kind {
            FamilyKind::Leb => x + normal2(rng) * dt.sqrt(),
            FamilyKind::Dir { .. } => {
                // Brownian bridge to the origin at T
                let (a, b) = (horizon - t, horizon - s);
                if a == 0.0 {
                    PlanarPoint::ORIGIN
                } else {
                    x * (a / b) + normal2(rng) * (dt * a / b).sqrt()
                }
            }
            FamilyKind::Gau { alpha } => {
                let a = alpha + horizon - t;
                let b = alpha + horizon - s;
                x * (a / b) + normal2(rng) * (dt * a / b).sqrt()
            }
            FamilyKind::GSt => {
                mode = PathMode::EulerApprox;
                let mut now = s;
                let mut y = x;
                let mut steps = 0;
                while now < t {
                    let rho2 = y.norm_sq();
                    if rho2 == 0.0 || steps >= MAX_SUBSTEPS {
                        return Err(Error::Sampler(format!(
                            "Euler stepping stuck at t = {now}, x = ({}, {})",
                            y.x, y.y
                        )));
                    }
                    // keep |b| h below a tenth of the distance to the origin
                    let b = gst_conditional_drift(d, horizon - now, y)?;
                    let h = (t - now).min(0.1 * rho2.sqrt() / b.norm().max(1e-300));
                    if h < 1e-14 * horizon {
                        return Err(Error::Sampler(format!(
                            "Euler step collapsed at t = {now}, x = ({}, {})",
                            y.x, y.y
                        )));
                    }
                    y = y + b * h + normal2(rng) * h.sqrt();
                    now = if h == t - now { t } else { now + h };
                    steps += 1;
                }
                y
            }
        };
        points.push(x);
    }
    Ok(PathSample {
        grid: grid.to_vec(),
        points,
        tau: None,
        mode,
        seed: None,
    })
}

/// Hitting-time sampler built once per starting point.
#[derive(Debug, Clone)]
pub struct HitSampler {
    pub law: Option<HitLaw>,
}

impl HitSampler {
    pub fn new(d: &DensityEval, x0: PlanarPoint) -> Result<Self> {
        if let FamilyKind::Dir { eps } = d.family.kind {
            log::info!("Dirac hit times depend on the cutoff eps = {eps}");
        }
        match hit_time_law(d, x0) {
            Ok(law) => Ok(Self { law: Some(law) }),
            // the origin is out of reach in floating point
            Err(Error::Domain { function: "hit_time_law", .. }) => Ok(Self { law: None }),
            Err(e) => Err(e),
        }
    }

    /// `None` if the path survives to `T`, else the hitting time.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<Option<f64>> {
        let Some(law) = &self.law else {
            return Ok(None);
        };
        if rng.random::<f64>() < law.survive_prob {
            return Ok(None);
        }
        law.quantile(rng.random::<f64>()).map(Some)
    }
}

/// `None` with probability `P[tau > T]`, else a hitting time by inverse CDF.
pub fn sample_hit_time<R: Rng>(d: &DensityEval, x0: PlanarPoint, rng: &mut R) -> Result<Option<f64>> {
    HitSampler::new(d, x0)?.draw(rng)
}

pub fn sample_hit_times(d: &DensityEval, x0: PlanarPoint, n: usize, seed: u64, workers: usize) -> Result<Vec<Option<f64>>> {
    let sampler = HitSampler::new(d, x0)?;
    fan_out(n, seed, workers, |rng, _| sampler.draw(rng))
}

/// Monte Carlo means of `S_t = p_{T-t}(X_t)` along marginal paths.
pub fn submartingale_probe(
    d: &DensityEval,
    x0: PlanarPoint,
    grid: &[f64],
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<McEstimate>> {
    check_grid(d, grid)?;
    let horizon = d.horizon();
    let values = fan_out(n_paths, seed, workers, |rng, _| {
        let path = sample_path_marginal(d, x0, grid, rng)?;
        grid.iter()
            .zip(&path.points)
            .map(|(&t, &x)| survival_probability_fast(d, horizon - t, x))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok((0..grid.len())
        .map(|j| McEstimate::from_samples(&values.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect())
}

/// `E^{hbar}[f(X_T) rn]` and `E^{h}[f(X_T)]` from `n` exact endpoint draws
/// under each family.
pub fn reweighting_check(
    dh: &DensityEval,
    dhbar: &DensityEval,
    x0: PlanarPoint,
    f: impl Fn(PlanarPoint) -> f64 + Sync,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<(McEstimate, McEstimate)> {
    let horizon = dh.horizon();
    let under_hbar = sample_transitions(dhbar, 0.0, horizon, x0, n, seed, workers)?;
    let weighted = under_hbar
        .iter()
        .map(|&y| Ok(f(y) * crate::doob::rn_derivative(dh, dhbar, x0, y)?))
        .collect::<Result<Vec<f64>>>()?;
    let under_h = sample_transitions(dh, 0.0, horizon, x0, n, seed.wrapping_add(1), workers)?;
    let direct: Vec<f64> = under_h.iter().map(|&y| f(y)).collect();
    Ok((McEstimate::from_samples(&weighted), McEstimate::from_samples(&direct)))
}

/// Path functionals behind the excursion and small-ball hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRow {
    pub eps: f64,
    /// Mean number of upcrossings from `|X| <= eps / 10` to `|X| >= eps`.
    pub excursions: McEstimate,
    /// Mean time spent in `|X| <= eps`.
    pub occupation: McEstimate,
    /// Mean of `int 1{|X_s| <= eps} |b_{T-s}(X_s)| ds`.
    pub small_ball_drift: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    /// Mean of `int_0^T |b_{T-s}(X_s)| ds`.
    pub drift_integral: McEstimate,
    pub rows: Vec<ExcursionRow>,
}

/// Riemann-sum estimates of the diagnostics along exact marginal paths.
pub fn path_diagnostics(
    d: &DensityEval,
    x0: PlanarPoint,
    grid: &[f64],
    eps: &[f64],
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<PathDiagnostics> {
    check_grid(d, grid)?;
    let horizon = d.horizon();
    let per_path = fan_out(n_paths, seed, workers, |rng, _| {
        let path = sample_path_marginal(d, x0, grid, rng)?;
        let mut drift_total = 0.0;
        let mut rows = vec![(0.0, 0.0, 0.0); eps.len()];
        let mut inside = vec![false; eps.len()];
        for (k, w) in grid.windows(2).enumerate() {
            let dt = w[1] - w[0];
            let x = path.points[k];
            let rem = horizon - w[0];
            let b = if x.is_origin() {
                0.0
            } else {
                drift_eval(&d.family, rem, x)?.radial_part.abs()
            };
            drift_total += b * dt;
            for (j, &e) in eps.iter().enumerate() {
                let rho = x.norm();
                if rho <= e {
                    rows[j].1 += dt;
                    rows[j].2 += b * dt;
                }
                if rho <= 0.1 * e {
                    inside[j] = true;
                } else if inside[j] && rho >= e {
                    inside[j] = false;
                    rows[j].0 += 1.0;
                }
            }
        }
        Ok((drift_total, rows))
    })?;
    let drift_integral = McEstimate::from_samples(&per_path.iter().map(|p| p.0).collect::<Vec<_>>());
    let rows = eps
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let col = |f: fn(&(f64, f64, f64)) -> f64| {
                McEstimate::from_samples(&per_path.iter().map(|p| f(&p.1[j])).collect::<Vec<_>>())
            };
            ExcursionRow {
                eps: e,
                excursions: col(|r| r.0),
                occupation: col(|r| r.1),
                small_ball_drift: col(|r| r.2),
            }
        })
        .collect();
    Ok(PathDiagnostics { drift_integral, rows })
}

/// Mean of `f` over a sample, with standard error.
pub fn estimate(xs: &[f64]) -> McEstimate {
    McEstimate::from_samples(xs)
}

/// Sum with compensation, for callers aggregating per-path values.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    kahan_sum(xs.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilySpec;
    use crate::quad::QuadratureSpec;

    fn eval(kind: FamilyKind, theta: f64, horizon: f64) -> DensityEval {
        DensityEval::new(FamilySpec::new(kind, theta, horizon, QuadratureSpec::default()).unwrap()).unwrap()
    }

    #[test]
    fn streams_are_reproducible_across_workers() {
        let d = eval(FamilyKind::Leb, 1.0, 1.0);
        let x = PlanarPoint::on_axis(1.0);
        let a = sample_transitions(&d, 0.0, 0.5, x, 200, 42, 1).unwrap();
        let b = sample_transitions(&d, 0.0, 0.5, x, 200, 42, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_transitions(&d, 0.0, 0.5, x, 200, 43, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_theta_transition_is_gaussian() {
        let d = eval(FamilyKind::Leb, 1e-12, 1.0);
        let x = PlanarPoint::new(1.0, 0.5);
        let ys = sample_transitions(&d, 0.0, 0.5, x, 20_000, 1, 1).unwrap();
        let mx = McEstimate::from_samples(&ys.iter().map(|y| y.x).collect::<Vec<_>>());
        let my = McEstimate::from_samples(&ys.iter().map(|y| y.y).collect::<Vec<_>>());
        assert!(mx.z_score(1.0).abs() < 4.0 && my.z_score(0.5).abs() < 4.0);
        let vx = McEstimate::from_samples(&ys.iter().map(|y| (y.x - 1.0).powi(2)).collect::<Vec<_>>());
        // the interaction still carries ~4% of the mass at this theta; allow it
        assert!((vx.mean - 0.5).abs() < 0.05, "{}", vx.mean);
    }

    #[test]
    fn envelope_holds_and_acceptance_is_reasonable() {
        for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 0.3 }, FamilyKind::Dir { eps: 0.05 }] {
            let d = eval(kind, 1.0, 1.0);
            let mut s = TransitionSampler::new(&d, 0.0, 0.5, PlanarPoint::on_axis(0.3)).unwrap();
            let mut rng = path_rng(5, 0);
            for _ in 0..2000 {
                s.draw(&mut rng).unwrap();
            }
            assert!(s.acceptance_rate() > 0.01, "{kind}: {}", s.acceptance_rate());
            assert_eq!(s.resweeps, 0, "{kind}");
        }
    }

    #[test]
    fn dirac_marginal_ends_at_origin() {
        let d = eval(FamilyKind::Dir { eps: 0.05 }, 1.0, 1.0);
        let mut rng = path_rng(1, 0);
        let p = sample_path_marginal(&d, PlanarPoint::on_axis(0.5), &[0.0, 0.5, 1.0], &mut rng).unwrap();
        assert_eq!(p.points[2], PlanarPoint::ORIGIN);
        assert_eq!(p.mode, PathMode::MarginalExact);
    }

    #[test]
    fn conditional_samplers() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let x0 = PlanarPoint::on_axis(1.0);
        let dir = eval(FamilyKind::Dir { eps: 0.05 }, 1.0, 1.0);
        let paths = fan_out(4000, 9, 1, |rng, _| sample_conditional_path(&dir, x0, &grid, rng)).unwrap();
        let mid = McEstimate::from_samples(&paths.iter().map(|p| p.points[5].x).collect::<Vec<_>>());
        assert!(mid.z_score(0.5).abs() < 4.0);
        assert!(paths.iter().all(|p| p.points[10] == PlanarPoint::ORIGIN));
        let leb = eval(FamilyKind::Leb, 1.0, 1.0);
        let paths = fan_out(4000, 9, 1, |rng, _| sample_conditional_path(&leb, x0, &grid, rng)).unwrap();
        let inc = McEstimate::from_samples(&paths.iter().map(|p| (p.points[3] - p.points[2]).y).collect::<Vec<_>>());
        assert!(inc.z_score(0.0).abs() < 4.0);
    }

    #[test]
    fn gst_conditional_mean_radius() {
        // E|X_{1/2}| under the conditioned ground state against quadrature of
        // the conditional density
        let d = eval(FamilyKind::GSt, 1.0, 1.0);
        let x0 = PlanarPoint::on_axis(1.0);
        let grid: Vec<f64> = (0..=25).map(|i| 0.02 * i as f64).collect();
        let paths = fan_out(3000, 3, 1, |rng, _| sample_conditional_path(&d, x0, &grid, rng)).unwrap();
        assert!(paths.iter().all(|p| p.mode == PathMode::EulerApprox));
        let mc = McEstimate::from_samples(&paths.iter().map(|p| p.points[25].norm()).collect::<Vec<_>>());
        let quad = QuadratureSpec::new(1e-10, 1e-8).unwrap();
        let radial = |rho: f64, w: f64| -> Result<f64> {
            let y = PlanarPoint::on_axis(rho);
            let base = crate::families::base_conv_radial(&d.family, 0.5, rho)?
                / crate::families::base_conv_radial(&d.family, 1.0, 1.0)?;
            let _ = y;
            Ok(base * crate::kernel::circle_heat(0.5, rho, 1.0) * rho * w)
        };
        let mass = crate::kernel::radial_integral(|r| radial(r, 1.0), &[1.0], 0.7, &quad).unwrap().value;
        let mean = crate::kernel::radial_integral(|r| radial(r, r), &[1.0], 0.7, &quad).unwrap().value;
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((mc.mean - mean).abs() < 3.0 * mc.std_error + 2e-2, "{} vs {mean}", mc.mean);
    }

    #[test]
    fn hit_sampler_far_start() {
        let d = eval(FamilyKind::GSt, 1.0, 1.0);
        let hits = sample_hit_times(&d, PlanarPoint::on_axis(20.0), 10_000, 2, 1).unwrap();
        let frac = hits.iter().filter(|h| h.is_some()).count() as f64 / 1e4;
        assert!(frac < 1e-3);
        let near = sample_hit_times(&d, PlanarPoint::on_axis(0.5), 2000, 2, 1).unwrap();
        assert!(near.iter().flatten().all(|&t| t > 0.0 && t < 1.0));
    }

    #[test]
    fn submartingale_start_is_exact() {
        let d = eval(FamilyKind::Leb, 1.0, 1.0);
        let x0 = PlanarPoint::on_axis(0.7);
        let est = submartingale_probe(&d, x0, &[0.0, 0.5, 1.0], 500, 4, 1).unwrap();
        let p = survival_probability_fast(&d, 1.0, x0).unwrap();
        assert_eq!(est[0].mean, p);
        assert_eq!(est[0].std_error, 0.0);
        assert!((est[2].mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_table_shape() {
        let d = eval(FamilyKind::Leb, 1.0, 1.0);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let diag = path_diagnostics(&d, PlanarPoint::on_axis(0.3), &grid, &[0.1, 0.05, 0.025], 50, 1, 1).unwrap();
        assert_eq!(diag.rows.len(), 3);
        assert!(diag.drift_integral.mean > 0.0);
        assert!(diag.rows[0].occupation.mean >= diag.rows[2].occupation.mean);
    }

    #[test]
    fn grid_validation() {
        let d = eval(FamilyKind::Leb, 1.0, 1.0);
        let mut rng = path_rng(0, 0);
        assert!(sample_path_marginal(&d, PlanarPoint::on_axis(1.0), &[0.1, 0.5], &mut rng).is_err());
        assert!(sample_path_marginal(&d, PlanarPoint::on_axis(1.0), &[0.0, 0.5, 0.5], &mut rng).is_err());
        assert!(sample_path_marginal(&d, PlanarPoint::on_axis(1.0), &[0.0, 2.0], &mut rng).is_err());
        assert!(sample_path_marginal(&d, PlanarPoint::ORIGIN, &[0.0, 0.5], &mut rng).is_err());
    }
}
