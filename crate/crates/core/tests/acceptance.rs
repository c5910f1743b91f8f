//! End-to-end acceptance run: every criterion prints one PASS/FAIL line with
//! its measured value and runtime, and the test fails if any criterion fails.

use std::time::{Duration, Instant};

use pointdiff::doob::DensityEval;
use pointdiff::families::{drift_eval, h_radial, FamilyKind, FamilySpec};
use pointdiff::hmap::{convolution_identity_residual, h_map, h_map_inverse, jacobian_eigs, moment_scaling_sweep, sweep_ratio, HEval};
use pointdiff::kernel::{gst_eigen_residual, semigroup_residual, KernelParams};
use pointdiff::sampler::{reweighting_check, sample_hit_times, submartingale_probe};
use pointdiff::specfun::{bessel_k, renewal_integral};
use pointdiff::verify::{
    conditional_checks, finite_difference_eigs, hit_density_mass, max_drop, transition_chi_square, transition_mass,
};
use pointdiff::{PlanarPoint, QuadratureSpec, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const WORKERS: usize = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn family(kind: FamilyKind, theta: f64, horizon: f64) -> FamilySpec {
    FamilySpec::new(kind, theta, horizon, QuadratureSpec::default()).unwrap()
}

fn density(kind: FamilyKind) -> DensityEval {
    DensityEval::new(family(kind, 1.0, 1.0)).unwrap()
}

fn x1() -> PlanarPoint {
    PlanarPoint::on_axis(1.0)
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `K_0(z) = int_0^inf exp(-z cosh u) du`.
fn k0_oracle(z: f64) -> f64 {
    simpson(|u| (-z * u.cosh()).exp(), 0.0, 12.0, 40_000)
}

/// `K_0(z, y) = (1/2) int_y^inf a^{-1} exp(-a - z^2 / 4a) da`, with `a = e^s`.
fn k0_incomplete_oracle(z: f64, y: f64) -> f64 {
    simpson(|s| 0.5 * (-s.exp() - z * z / (4.0 * s.exp())).exp(), y.ln(), 60f64.ln(), 40_000)
}

/// `nu(a) = int_0^inf a^s / Gamma(s + 1) ds`.
fn nu_oracle(a: f64) -> f64 {
    simpson(|s| (s * a.ln() - statrs::function::gamma::ln_gamma(s + 1.0)).exp(), 0.0, 80.0, 80_000)
}

fn c1_renewal() -> Result<Outcome> {
    let quad = QuadratureSpec::default();
    let mut worst = 0.0f64;
    for x in [0.25, 1.0, 4.0] {
        worst = worst.max(rel(renewal_integral(x, &quad)?.value, x.exp()));
    }
    Ok(outcome(worst < 1e-6, format!("max relative residual {worst:.3e} (< 1e-6)")))
}

fn c2_semigroup() -> Result<Outcome> {
    let pairs = [
        (PlanarPoint::on_axis(1.0), PlanarPoint::new(0.0, 1.0)),
        (PlanarPoint::on_axis(2.0), PlanarPoint::on_axis(2.0)),
        (PlanarPoint::new(0.3, -0.4), PlanarPoint::new(-1.2, 0.5)),
    ];
    let mut worst = [0.0f64; 2];
    for (k, theta) in [1.0, 1e-8].into_iter().enumerate() {
        let p = KernelParams::new(theta, QuadratureSpec::default())?;
        for &(x, y) in &pairs {
            worst[k] = worst[k].max(semigroup_residual(&p, 0.5, 1.0, x, y)?);
        }
    }
    Ok(outcome(
        worst[0] < 5e-4 && worst[1] < 1e-6,
        format!("theta=1: {:.3e} (< 5e-4); theta=1e-8: {:.3e} (< 1e-6)", worst[0], worst[1]),
    ))
}

fn c3_eigenrelation() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for theta in [1.0, 2.0] {
        let p = KernelParams::new(theta, QuadratureSpec::default())?;
        for t in [0.25, 0.5] {
            worst = worst.max(gst_eigen_residual(&p, t, x1())?);
        }
    }
    Ok(outcome(worst < 1e-5, format!("max relative residual {worst:.3e} (< 1e-5)")))
}

fn c4_transition_mass() -> Result<Outcome> {
    let g = (transition_mass(&density(FamilyKind::GSt), 0.0, 0.5, x1())? - 1.0).abs();
    let l = (transition_mass(&density(FamilyKind::Leb), 0.25, 0.75, PlanarPoint::new(0.3, 0.4))? - 1.0).abs();
    Ok(outcome(g < 1e-4 && l < 1e-4, format!("|mass - 1|: gst {g:.3e}, leb {l:.3e} (< 1e-4)")))
}

fn c5_hit_mass() -> Result<Outcome> {
    let mut parts = vec![];
    let mut pass = true;
    for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 0.5 }] {
        let err = (hit_density_mass(&density(kind), x1())? - 1.0).abs();
        pass &= err < 1e-5;
        parts.push(format!("{kind} {err:.3e}"));
    }
    Ok(outcome(pass, format!("|mass - 1|: {} (< 1e-5)", parts.join(", "))))
}

fn c6_gig_sampling() -> Result<Outcome> {
    let n = 200_000;
    let bins = 20;
    let d = density(FamilyKind::GSt);
    let draws = sample_hit_times(&d, x1(), n, 6, WORKERS)?;
    let times: Vec<f64> = draws.iter().flatten().copied().collect();

    // closed-form GIG law of tau given tau <= T = 1 with theta = 1, |x| = 1:
    // density proportional to t^{-1} exp(-t - 1/(2t)); cdf in s = ln t
    let g = |s: f64| (-s.exp() - 0.5 * (-s).exp()).exp();
    let (lo, hi, m) = (1e-4f64.ln(), 0.0, 400_000);
    let step = (hi - lo) / m as f64;
    let mut cdf = vec![0.0; m + 1];
    for k in 0..m {
        let a = lo + k as f64 * step;
        cdf[k + 1] = cdf[k] + step / 6.0 * (g(a) + 4.0 * g(a + 0.5 * step) + g(a + step));
    }
    let total = cdf[m];
    let edges: Vec<f64> = (1..bins)
        .map(|j| {
            let target = total * j as f64 / bins as f64;
            let k = cdf.partition_point(|&c| c < target);
            let w = (target - cdf[k - 1]) / (cdf[k] - cdf[k - 1]);
            (lo + (k as f64 - 1.0 + w) * step).exp()
        })
        .collect();
    let mut counts = vec![0usize; bins];
    for &t in &times {
        counts[edges.partition_point(|&e| e < t)] += 1;
    }
    let expected = times.len() as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);

    let z = 2f64.sqrt();
    let expect_frac = 1.0 - k0_incomplete_oracle(z, 1.0) / k0_oracle(z);
    let frac = times.len() as f64 / n as f64;
    let se = (expect_frac * (1.0 - expect_frac) / n as f64).sqrt();
    let zscore = (frac - expect_frac) / se;
    Ok(outcome(
        p > 0.01 && zscore.abs() < 4.0,
        format!(
            "chi-square p {p:.4} (> 0.01); hit fraction {frac:.5} vs {expect_frac:.5}, {:.2} SE (< 4)",
            zscore.abs()
        ),
    ))
}

fn c7_transition_sampling() -> Result<Outcome> {
    let n = 200_000;
    let g = transition_chi_square(&density(FamilyKind::GSt), 0.0, 0.5, x1(), n, 7, WORKERS, 20)?;
    let l = transition_chi_square(&density(FamilyKind::Leb), 0.0, 0.5, x1(), n, 8, WORKERS, 20)?;
    Ok(outcome(
        g.p_value > 0.01 && l.p_value > 0.01,
        format!("radial chi-square p: gst {:.4}, leb {:.4} (> 0.01)", g.p_value, l.p_value),
    ))
}

fn c8_reweighting() -> Result<Outcome> {
    let gst = density(FamilyKind::GSt);
    let leb = density(FamilyKind::Leb);
    let (weighted, direct) = reweighting_check(&gst, &leb, x1(), |y| (-y.norm_sq()).exp(), 100_000, 9, WORKERS)?;
    let se = weighted.combined_se(&direct);
    let gap = (weighted.mean - direct.mean).abs();
    Ok(outcome(
        gap < 3.0 * se,
        format!(
            "E_leb[f rn] {:.5}, E_gst[f] {:.5}, gap {:.2} SE (< 3)",
            weighted.mean,
            direct.mean,
            gap / se
        ),
    ))
}

fn c9_conditional() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = vec![];
    for kind in [FamilyKind::Leb, FamilyKind::Dir { eps: 0.05 }, FamilyKind::Gau { alpha: 0.5 }] {
        for c in conditional_checks(&density(kind), 20_000, 10, WORKERS) {
            pass &= c.pass;
            parts.push(format!("{} {:.3}", c.name, c.measured));
        }
    }
    Ok(outcome(pass, parts.join("; ")))
}

fn c10_hmap() -> Result<Outcome> {
    let tight = QuadratureSpec::new(1e-14, 1e-12)?;
    let gst = HEval::new(family(FamilyKind::GSt, 1.0, 1.0));
    let mut conv = 0.0f64;
    for (t, r) in [(0.25, 0.5), (0.5, 1.0), (1.0, 2.0)] {
        conv = conv.max(convolution_identity_residual(&gst, t, PlanarPoint::on_axis(r))?);
    }
    let mut fd = 0.0f64;
    let mut trip = 0.0f64;
    for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 0.5 }] {
        let spec = family(kind, 1.0, 1.0);
        let e = HEval::new(spec);
        let et = HEval::with_quad(spec, tight)?;
        for r in [0.3, 1.0, 2.5] {
            let j = jacobian_eigs(&et, 0.5, PlanarPoint::on_axis(r))?;
            let (a, b) = finite_difference_eigs(&et, 0.5, r)?;
            fd = fd.max(rel(j.lambda_radial, a)).max(rel(j.lambda_tangential, b));
        }
        for x in [PlanarPoint::on_axis(2.0), PlanarPoint::new(-0.1, 0.05), PlanarPoint::new(3.0, 4.0)] {
            let back = h_map_inverse(&e, 0.5, h_map(&e, 0.5, x)?)?;
            trip = trip.max((back - x).norm() / (1.0 + x.norm()));
        }
    }
    Ok(outcome(
        conv < 1e-4 && fd < 1e-5 && trip < 1e-8,
        format!("convolution {conv:.3e} (< 1e-4); Jacobian vs FD {fd:.3e} (< 1e-5); round trip {trip:.3e} (< 1e-8)"),
    ))
}

fn c11_moments() -> Result<Outcome> {
    let dts: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
    let mut pass = true;
    let mut parts = vec![];
    for kind in [FamilyKind::GSt, FamilyKind::Leb] {
        let e = HEval::new(family(kind, 1.0, 1.0));
        let rows = moment_scaling_sweep(&e, 0.0, x1(), &dts, 20_000, 11, WORKERS)?;
        let second = sweep_ratio(&rows.iter().map(|r| r.second).collect::<Vec<_>>());
        let fourth = sweep_ratio(&rows.iter().map(|r| r.fourth).collect::<Vec<_>>());
        pass &= second < 10.0 && fourth < 10.0;
        let by_dt: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.fourth.mean)).collect();
        parts.push(format!("{kind} 2nd {second:.3}, 4th {fourth:.3} [4th by dt: {}]", by_dt.join(", ")));
    }
    Ok(outcome(pass, format!("max/min: {} (< 10)", parts.join("; "))))
}

fn c12_submartingale() -> Result<Outcome> {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut pass = true;
    let mut parts = vec![];
    for kind in [FamilyKind::GSt, FamilyKind::Leb] {
        let means = submartingale_probe(&density(kind), x1(), &grid, 50_000, 12, WORKERS)?;
        let drop = max_drop(&means);
        pass &= drop <= 3.0;
        let m: Vec<String> = means.iter().map(|m| format!("{:.4}", m.mean)).collect();
        parts.push(format!("{kind} [{}] max drop {drop:.2} SE", m.join(", ")));
    }
    Ok(outcome(pass, format!("{} (<= 3)", parts.join("; "))))
}

fn c13_asymptotics() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = vec![];
    let gst = family(FamilyKind::GSt, 1.0, 1.0);
    let leb = family(FamilyKind::Leb, 1.0, 1.0);
    let nu = nu_oracle(1.0);
    for r in [1e-6f64, 1e-8] {
        let log = (1.0 / r).ln();
        for t in [0.5, 1.0] {
            let ratio = h_radial(&gst, t, r)? / (log * t.exp());
            pass &= (0.9..=1.1).contains(&ratio);
            parts.push(format!("gst h t={t} r={r:e} {ratio:.4}"));
        }
        let ratio = h_radial(&leb, 1.0, r)? / (2.0 * nu * log);
        pass &= (0.85..=1.15).contains(&ratio);
        parts.push(format!("leb h r={r:e} {ratio:.4}"));
    }
    for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 0.5 }] {
        let f = family(kind, 1.0, 1.0);
        for r in [1e-8f64, 1e-6, 1e-4] {
            let b = drift_eval(&f, 1.0, PlanarPoint::on_axis(r))?;
            let ratio = b.radial_part.abs() * r * (1.0 / r).ln();
            pass &= (0.5..=2.0).contains(&ratio);
            parts.push(format!("{kind} drift r={r:e} {ratio:.4}"));
        }
    }
    let quad = QuadratureSpec::default();
    let small = bessel_k(0, 1e-6, &quad)?.value / 1e6f64.ln();
    let large = bessel_k(0, 20.0, &quad)?.value / ((std::f64::consts::PI / 40.0).sqrt() * (-20f64).exp());
    pass &= (0.9..=1.1).contains(&small) && (0.95..=1.05).contains(&large);
    parts.push(format!("K0 small-z {small:.4}, large-z {large:.4}"));
    Ok(outcome(pass, parts.join("; ")))
}

type Criterion = (u32, &'static str, u64, fn() -> Result<Outcome>);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 13] = [
        (1, "renewal identity", 10, c1_renewal),
        (2, "semigroup property", 300, c2_semigroup),
        (3, "ground-state eigenrelation", 120, c3_eigenrelation),
        (4, "transition density normalization", 120, c4_transition_mass),
        (5, "hit-time density normalization", 30, c5_hit_mass),
        (6, "GIG hit-time sampling", 60, c6_gig_sampling),
        (7, "rejection sampler fidelity", 600, c7_transition_sampling),
        (8, "cross-family reweighting", 600, c8_reweighting),
        (9, "conditional laws", 120, c9_conditional),
        (10, "H-map machinery", 120, c10_hmap),
        (11, "moment scaling", 600, c11_moments),
        (12, "submartingale probe", 600, c12_submartingale),
        (13, "asymptotic bands", 30, c13_asymptotics),
    ];
    let mut failed = vec![];
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "criterion {id:2} {} {name}: {detail} [{:.1} s, budget {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
