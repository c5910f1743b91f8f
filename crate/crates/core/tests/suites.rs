use pointdiff::doob::{hit_time_law, DensityEval};
use pointdiff::families::{FamilyKind, FamilySpec};
use pointdiff::sampler::{sample_conditional_path, sample_hit_time, sample_path_marginal, path_rng};
use pointdiff::verify::{run_suite, Suite, VerifyConfig};
use pointdiff::{PlanarPoint, QuadratureSpec};

const KINDS: [FamilyKind; 4] = [
    FamilyKind::GSt,
    FamilyKind::Leb,
    FamilyKind::Dir { eps: 0.05 },
    FamilyKind::Gau { alpha: 0.5 },
];

fn config(kind: FamilyKind, theta: f64) -> VerifyConfig {
    VerifyConfig {
        family: FamilySpec::new(kind, theta, 1.0, QuadratureSpec::default()).unwrap(),
        seed: 3,
        n_paths: 2000,
        workers: 1,
    }
}

#[test]
fn analytic_suites_pass_for_every_family() {
    for kind in KINDS {
        for suite in [Suite::Kernel, Suite::Families, Suite::Doob, Suite::Hmap] {
            let failed: Vec<String> = run_suite(suite, &config(kind, 1.0))
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.to_string())
                .collect();
            assert!(failed.is_empty(), "{kind} {suite}:\n{}", failed.join("\n"));
        }
    }
}

#[test]
fn special_function_suite_passes() {
    assert!(run_suite(Suite::Specfun, &config(FamilyKind::GSt, 1.0)).iter().all(|c| c.pass));
}

#[test]
fn kernel_suite_passes_at_other_couplings() {
    for theta in [1e-8, 2.0] {
        let checks = run_suite(Suite::Kernel, &config(FamilyKind::GSt, theta));
        assert!(checks.iter().all(|c| c.pass), "theta={theta}");
    }
}

#[test]
fn samplers_respect_their_support() {
    for kind in KINDS {
        let d = DensityEval::new(FamilySpec::new(kind, 1.0, 1.0, QuadratureSpec::default()).unwrap()).unwrap();
        let x0 = PlanarPoint::on_axis(1.0);
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        for i in 0..20 {
            let mut rng = path_rng(5, i);
            let c = sample_conditional_path(&d, x0, &grid, &mut rng).unwrap();
            assert_eq!(c.points.len(), grid.len());
            assert_eq!(c.points[0], x0);
            if let FamilyKind::Dir { .. } = kind {
                assert_eq!(c.points[4], PlanarPoint::ORIGIN);
                let m = sample_path_marginal(&d, x0, &grid, &mut rng).unwrap();
                assert_eq!(m.points[4], PlanarPoint::ORIGIN);
            } else {
                assert!(c.points.iter().all(|p| p.is_finite() && !p.is_origin()));
                let m = sample_path_marginal(&d, x0, &grid, &mut rng).unwrap();
                assert!(m.points.iter().all(|p| p.is_finite()));
                if let Some(tau) = sample_hit_time(&d, x0, &mut rng).unwrap() {
                    assert!(tau > 0.0 && tau < 1.0);
                }
            }
        }
    }
}

#[test]
fn hit_law_cdf_is_monotone_and_matches_quantiles() {
    for kind in [FamilyKind::GSt, FamilyKind::Leb, FamilyKind::Gau { alpha: 0.5 }] {
        let d = DensityEval::new(FamilySpec::new(kind, 1.0, 1.0, QuadratureSpec::default()).unwrap()).unwrap();
        let law = hit_time_law(&d, PlanarPoint::on_axis(0.7)).unwrap();
        let mut last = 0.0;
        for k in 1..=50 {
            let c = law.cdf(k as f64 / 50.0).unwrap();
            assert!(c >= last - 1e-12, "{kind}");
            last = c;
        }
        assert!((last - 1.0).abs() < 1e-6, "{kind}: {last}");
        for u in [0.05, 0.5, 0.95] {
            let q = law.quantile(u).unwrap();
            assert!((law.cdf(q).unwrap() - u).abs() < 1e-8, "{kind} u={u}");
        }
    }
}
