use std::f64::consts::PI;

use pointdiff::doob::{survival_probability_fast, transition_density, DensityEval};
use pointdiff::families::{h_radial, FamilyKind, FamilySpec};
use pointdiff::hmap::{h_bar, h_map, h_map_inverse, jacobian_eigs, HEval};
use pointdiff::kernel::full_kernel_fast;
use pointdiff::sampler::sample_transitions;
use pointdiff::specfun::gauss;
use pointdiff::stats::TabulatedLaw;
use pointdiff::{PlanarPoint, QuadratureSpec};
use proptest::prelude::*;

fn spec(kind: FamilyKind) -> FamilySpec {
    FamilySpec::new(kind, 1.0, 1.0, QuadratureSpec::default()).unwrap()
}

fn kind() -> impl Strategy<Value = FamilyKind> {
    prop_oneof![
        Just(FamilyKind::GSt),
        Just(FamilyKind::Leb),
        (0.1f64..2.0).prop_map(|alpha| FamilyKind::Gau { alpha }),
    ]
}

fn point(lo: f64, hi: f64) -> impl Strategy<Value = PlanarPoint> {
    (lo..hi, 0.0..2.0 * PI).prop_map(|(r, a)| PlanarPoint::from_polar(r, a))
}

fn rotate(p: PlanarPoint, a: f64) -> PlanarPoint {
    let (s, c) = a.sin_cos();
    PlanarPoint::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_symmetric_and_dominates_heat(x in point(0.05, 3.0), y in point(0.05, 3.0), t in 0.05f64..1.5) {
        let a = full_kernel_fast(1.0, t, x, y).unwrap();
        let b = full_kernel_fast(1.0, t, y, x).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a);
        prop_assert!(a >= gauss(t, (x - y).norm_sq()));
    }

    #[test]
    fn transition_density_is_rotation_invariant(
        k in kind(), x in point(0.1, 2.0), y in point(0.1, 2.0), a in 0.0..2.0 * PI
    ) {
        let d = DensityEval::new(spec(k)).unwrap();
        let p = transition_density(&d, 0.2, 0.7, x, y).unwrap();
        let q = transition_density(&d, 0.2, 0.7, rotate(x, a), rotate(y, a)).unwrap();
        prop_assert!(p > 0.0);
        prop_assert!((p - q).abs() <= 1e-9 * p, "{p} vs {q}");
    }

    #[test]
    fn h_is_positive_and_decreasing_in_radius(k in kind(), t in 0.1f64..1.0, r in 0.01f64..3.0) {
        let f = spec(k);
        let near = h_radial(&f, t, r).unwrap();
        let far = h_radial(&f, t, 1.5 * r).unwrap();
        prop_assert!(far > 0.0 && near > far);
    }

    #[test]
    fn survival_probability_is_a_probability(k in kind(), t in 0.05f64..1.0, x in point(0.01, 4.0)) {
        let d = DensityEval::new(spec(k)).unwrap();
        let p = survival_probability_fast(&d, t, x).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0, "{p}");
    }

    #[test]
    fn h_map_is_radial(k in kind(), t in 0.05f64..1.0, x in point(0.01, 4.0), a in 0.0..2.0 * PI) {
        let e = HEval::new(spec(k));
        let h = h_map(&e, t, x).unwrap();
        prop_assert!(h.cross(x).abs() <= 1e-13 * h.norm() * x.norm());
        prop_assert!((h.norm() - h_bar(&e, t, x.norm()).unwrap() * x.norm()).abs() <= 1e-12 * h.norm());
        let hr = h_map(&e, t, rotate(x, a)).unwrap();
        prop_assert!((hr - rotate(h, a)).norm() <= 1e-12 * h.norm());
    }

    #[test]
    fn h_map_inverse_round_trips(k in kind(), t in 0.05f64..1.0, x in point(0.01, 5.0)) {
        let e = HEval::new(spec(k));
        let back = h_map_inverse(&e, t, h_map(&e, t, x).unwrap()).unwrap();
        prop_assert!((back - x).norm() <= 1e-8 * (1.0 + x.norm()));
    }

    #[test]
    fn jacobian_eigenvalues_are_positive(k in kind(), t in 0.05f64..1.0, r in 0.01f64..5.0) {
        let e = HEval::new(spec(k));
        let j = jacobian_eigs(&e, t, PlanarPoint::on_axis(r)).unwrap();
        prop_assert!(j.lambda_radial > 0.0 && j.lambda_tangential > 0.0);
    }

    #[test]
    fn tabulated_quantile_inverts_cdf(u in 0.001f64..0.999) {
        let law = TabulatedLaw::new(|x: f64| Ok(x * (-x).exp()), (0..=400).map(|k| k as f64 * 0.1).collect()).unwrap();
        let q = law.quantile(u).unwrap();
        prop_assert!((law.cdf(q).unwrap() - u).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn draws_do_not_depend_on_worker_count(seed in any::<u64>(), workers in 2usize..5) {
        let d = DensityEval::new(spec(FamilyKind::GSt)).unwrap();
        let x = PlanarPoint::on_axis(0.8);
        let a = sample_transitions(&d, 0.0, 0.5, x, 24, seed, 1).unwrap();
        let b = sample_transitions(&d, 0.0, 0.5, x, 24, seed, workers).unwrap();
        prop_assert_eq!(a, b);
    }
}
