use majorant::matrix_model::singular_profile;
use majorant::oracle::{
    feasibility_search_2x2, gen_dominance, gen_feasible, gen_infeasible, kyfan_bruteforce, predicate_margin_2x2, sweep_2x2,
    thompson_predicate_2x2, InstanceKind, InstanceSpec,
};
use majorant::profile::{partial_integral, submajorizes};
use majorant::{FactorElement, C64};
use proptest::prelude::*;

#[test]
fn identity_feasible_diagonals_at_two_cells() {
    // diag(U·I·V) for 2×2 unitaries: |α₁| = |α₂| ≤ 1.
    let c = |x: f64| C64::new(x, 0.0);
    assert!(thompson_predicate_2x2([1.0, 1.0], [c(0.6), c(0.6)], 1e-12));
    assert!(!thompson_predicate_2x2([1.0, 1.0], [c(0.6), c(0.5)], 1e-12));
    assert!(feasibility_search_2x2([1.0, 1.0], [c(0.6), c(0.6)], 200));
    assert!(!feasibility_search_2x2([1.0, 1.0], [c(0.9), c(0.2)], 200));
}

#[test]
fn small_sweep_agrees() {
    let r = sweep_2x2(2, 50, 120, 17);
    assert_eq!(r.points, 100);
    assert_eq!(r.disagreements, 0);
    assert!(r.excluded < r.points);
}

#[test]
fn margin_sign_matches_predicate() {
    let c = |x: f64| C64::new(x, 0.0);
    let sigma = [2.0, 1.0];
    for alpha in [[c(1.5), c(1.2)], [c(0.1), c(0.1)], [c(2.9), c(0.0)], [c(2.0), c(0.5)], [c(1.0), c(2.5)]] {
        let m = predicate_margin_2x2(sigma, alpha);
        if m.abs() > 1e-9 {
            assert_eq!(m > 0.0, thompson_predicate_2x2(sigma, alpha, 0.0), "{alpha:?}");
        }
    }
}

#[test]
fn instance_specs_are_reproducible() {
    for kind in [
        InstanceKind::ExpectationGenerated,
        InstanceKind::SpectralPrescribed,
        InstanceKind::Boundary,
        InstanceKind::Infeasible,
    ] {
        let spec = InstanceSpec { seed: 42, n: 6, kind, gap: Some(0.2) };
        let json = serde_json::to_string(&spec).unwrap();
        let back: InstanceSpec = serde_json::from_str(&json).unwrap();
        let (x, y) = (spec.generate(), back.generate());
        assert_eq!(x.a, y.a);
        assert_eq!(x.t, y.t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generators_satisfy_their_claims(seed in any::<u64>(), n in 1usize..20) {
        let f = gen_feasible(seed, n);
        let rep = submajorizes(&f.a.singular_profile(), &singular_profile(&f.t), 1e-10).unwrap();
        prop_assert!(rep.submajorized);
        let d = gen_dominance(seed, n);
        let rep = submajorizes(&d.a.singular_profile(), &singular_profile(&d.t), 1e-10).unwrap();
        prop_assert!(rep.submajorized);
        let bad = gen_infeasible(seed, n);
        let rep = submajorizes(&bad.a.singular_profile(), &singular_profile(&bad.t), 1e-9).unwrap();
        prop_assert!(rep.worst_margin().1 <= -10.0 * 1e-9);
    }

    #[test]
    fn sampled_projections_never_beat_the_partial_sum(seed in any::<u64>(), n in 1usize..10, k in 1usize..10) {
        prop_assume!(k <= n);
        let t = gen_feasible(seed, n).t;
        let exact = partial_integral(&singular_profile(&t), k as f64 / n as f64).unwrap();
        let brute = kyfan_bruteforce(&t, k, 8, seed).unwrap();
        prop_assert!(brute <= exact + 1e-10);
        prop_assert!(brute >= exact - 1e-10);
    }

    #[test]
    fn identity_kyfan_is_rank_over_n(n in 1usize..10, k in 1usize..10) {
        prop_assume!(k <= n);
        let v = kyfan_bruteforce(&FactorElement::identity(n), k, 4, 0).unwrap();
        prop_assert!((v - k as f64 / n as f64).abs() < 1e-12);
    }
}
