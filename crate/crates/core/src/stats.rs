//! Monte Carlo summaries and goodness-of-fit helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Result};
use crate::quad::FixedRule;

/// Mean of a Monte Carlo sample with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    /// Compensated (Kahan) sums of `x` and `x^2`; independent of evaluation
    /// order only through the fixed input order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = kahan_sum(xs.iter().copied()) / n as f64;
        let ss = kahan_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Whether `|self - other| <= k` combined standard errors.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.combined_se(other)
    }

    pub fn combined_se(&self, other: &McEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// Number of standard errors separating the mean from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value) / self.std_error
    }
}

pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Whether a sequence of means is nondecreasing up to `k` combined standard
/// errors between consecutive entries.
pub fn nondecreasing_within(estimates: &[McEstimate], k: f64) -> bool {
    estimates
        .windows(2)
        .all(|w| w[1].mean >= w[0].mean - k * w[0].combined_se(&w[1]))
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of `samples` against a law with the given quantile function,
/// using `bins` equal-probability bins.
pub fn chi_square_equal_prob(
    samples: &[f64],
    bins: usize,
    mut quantile: impl FnMut(f64) -> Result<f64>,
) -> Result<ChiSquareResult> {
    if bins < 2 || samples.is_empty() {
        return Err(domain("chi_square_equal_prob", "need at least 2 bins and one sample"));
    }
    let mut edges = Vec::with_capacity(bins - 1);
    for i in 1..bins {
        edges.push(quantile(i as f64 / bins as f64)?);
    }
    let mut counts = vec![0usize; bins];
    for &x in samples {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| domain("chi_square_equal_prob", e.to_string()))?;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// A one-dimensional law given by an unnormalized density on `[knots[0],
/// knots[last]]`, integrated panel by panel with a 21-point Kronrod rule.
#[derive(Debug, Clone)]
pub struct TabulatedLaw<F> {
    density: F,
    knots: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<F: Fn(f64) -> Result<f64>> TabulatedLaw<F> {
    pub fn new(density: F, mut knots: Vec<f64>) -> Result<Self> {
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        if knots.len() < 2 {
            return Err(domain("TabulatedLaw", "need at least two knots"));
        }
        let mut cumulative = vec![0.0];
        let mut acc = 0.0;
        for w in knots.windows(2) {
            acc += panel(&density, w[0], w[1])?;
            cumulative.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(domain("TabulatedLaw", format!("total mass must be positive, got {acc}")));
        }
        Ok(Self {
            density,
            knots,
            cumulative,
        })
    }

    /// Unnormalized total mass.
    pub fn mass(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return Ok(0.0);
        }
        if x >= self.knots[n - 1] {
            return Ok(1.0);
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        Ok((self.cumulative[i] + panel(&self.density, self.knots[i], x)?) / self.mass())
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        let target = u.clamp(0.0, 1.0) * self.mass();
        let n = self.knots.len();
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (self.knots[i], self.knots[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative[i] + panel(&self.density, self.knots[i], mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn panel<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let rule = FixedRule::uniform(a, b, 1);
    let mut s = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        s += w * f(x)?;
    }
    Ok(s)
}
