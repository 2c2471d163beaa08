use majorant::matrix_model::{expect_diagonal, in_two_sided_orbit, in_unitary_orbit, singular_profile, singular_values};
use majorant::oracle::{gen_complete_dominance, gen_dominance, gen_feasible, gen_infeasible, gen_schur_horn, haar_unitary, rng};
use majorant::profile::submajorizes;
use majorant::schur_horn::{realize_schur_horn, SchurHornInstance, Source};
use majorant::thompson::{complete_dominance_solve, dominance_solve, general_solve, strict_dominance_solve};
use majorant::{DiagonalElement, Error, FactorElement, RealizationResult, StageKind, Strategy, C64};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn assert_sound(r: &RealizationResult, a: &DiagonalElement, t: &FactorElement) {
    let n = t.n() as f64;
    assert!(r.unitarity_defect() <= n * TOL, "unitarity {}", r.unitarity_defect());
    assert!(r.sv_drift <= n * TOL * t.op_norm().max(1.0), "drift {}", r.sv_drift);
    assert!(r.diag_residual <= r.truncation_error + n * TOL);
    let product = r.u.mul(t).mul(&r.v);
    let defect = (product.matrix() - r.s.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(defect <= n * TOL);
    // The residual is measured against A, independently of the solver.
    let measured = r
        .s
        .diagonal()
        .iter()
        .zip(a.entries())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    assert!((measured - r.diag_residual).abs() <= 1e-12);
}

#[test]
fn feasible_instances_are_realized() {
    for (seed, n) in [(1, 8), (2, 16), (3, 32), (4, 64), (5, 5), (6, 12)] {
        let inst = gen_feasible(seed, n);
        for strategy in [Strategy::Partition, Strategy::Multiplicative] {
            let r = general_solve(&inst.a, &inst.t, strategy, TOL).unwrap();
            assert_sound(&r, &inst.a, &inst.t);
            assert!(in_two_sided_orbit(&r.s, &inst.t, 1e-7).unwrap());
            assert!(r.trace.count(StageKind::Reduce) == 1);
        }
    }
}

#[test]
fn infeasible_instances_report_the_margin() {
    for seed in 0..10 {
        let inst = gen_infeasible(seed, 8);
        match general_solve(&inst.a, &inst.t, Strategy::Partition, TOL) {
            Err(Error::Infeasible { cell, margin }) => {
                assert_eq!(cell, 0);
                let s1 = singular_values(&inst.t)[0];
                assert!((margin + 0.1 * s1 / 8.0).abs() < 1e-12, "margin {margin}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}

#[test]
fn complete_dominance_at_64_cells() {
    let inst = gen_complete_dominance(11, 64, 0.1);
    let r = complete_dominance_solve(&inst.a, &inst.t, TOL).unwrap();
    assert_sound(&r, &inst.a, &inst.t);
    assert!(r.truncation_error <= 2.0 * inst.t.op_norm() / 64.0);
    let levels: Vec<usize> = r.halving_increments().iter().map(|x| x.0).collect();
    assert_eq!(levels, vec![0, 1, 2, 3, 4]);
}

#[test]
fn strict_dominance_with_tenth_of_norm() {
    let mut r0 = rng(4);
    let sigma: Vec<f64> = {
        let mut s: Vec<f64> = (0..64).map(|_| rand::Rng::random_range(&mut r0, 0.5..2.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    };
    let norm = sigma[0];
    let a: Vec<f64> = sigma.iter().map(|s| (s - 0.1 * norm) * 0.7).collect();
    let t = FactorElement::from_real_diagonal(&sigma).unwrap();
    let a = DiagonalElement::from_real(&a).unwrap();
    let r = strict_dominance_solve(&a, &t, 0.1 * norm, TOL).unwrap();
    assert_sound(&r, &a, &t);
}

#[test]
fn strategies_share_the_singular_profile() {
    let inst = gen_dominance(9, 32);
    let p = dominance_solve(&inst.a, &inst.t, Strategy::Partition, TOL).unwrap();
    let m = dominance_solve(&inst.a, &inst.t, Strategy::Multiplicative, TOL).unwrap();
    assert!(in_two_sided_orbit(&p.s, &m.s, 1e-8).unwrap());
    let allowed = p.truncation_error + m.truncation_error + 2.0 * inst.t.op_norm() / 32.0;
    for (x, y) in p.s.diagonal().iter().zip(m.s.diagonal()) {
        assert!((x - y).norm() <= allowed);
    }
}

#[test]
fn schur_horn_route_for_random_hermitian() {
    let inst = gen_schur_horn(21, 8);
    let target: Vec<f64> = inst.a.entries().iter().map(|z| z.re).collect();
    let sh = SchurHornInstance {
        target: target.clone(),
        source: Source::Element(inst.t.clone()),
    };
    let r = realize_schur_horn(&sh, TOL).unwrap();
    for (z, a) in r.s.diagonal().iter().zip(&target) {
        assert!((z.re - a).abs() < 1e-8 && z.im.abs() < 1e-8);
    }
    assert!(in_unitary_orbit(&r.s, &inst.t, 1e-8).unwrap());
    assert_eq!(r.rotations, 7);

    let g = general_solve(&inst.a, &inst.t, Strategy::Partition, TOL).unwrap();
    assert!(g.truncation_error <= 8.0 * TOL, "{:?}", g.trace.stages.iter().map(|s| (s.kind, s.block, s.truncation)).collect::<Vec<_>>());
    assert!(g.trace.count(StageKind::SchurHorn) >= 1);
}

#[test]
fn reduction_of_complex_targets() {
    let a = DiagonalElement::new(vec![C64::new(-1.0, 0.0), C64::new(0.0, 2.0)]).unwrap();
    let t = FactorElement::from_real_diagonal(&[3.0, 2.0]).unwrap();
    let r = general_solve(&a, &t, Strategy::Partition, TOL).unwrap();
    assert_sound(&r, &a, &t);
    assert!(r.diag_residual <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_two_sided_product_is_submajorized(seed in any::<u64>(), n in 1usize..12) {
        let t = gen_feasible(seed, n).t;
        let mut r = rng(seed ^ 0xabc);
        let u = haar_unitary(&mut r, n);
        let v = haar_unitary(&mut r, n);
        let s = u.mul(&t).mul(&v);
        let rep = submajorizes(&expect_diagonal(&s).singular_profile(), &singular_profile(&t), 1e-10).unwrap();
        prop_assert!(rep.submajorized);
    }

    #[test]
    fn general_solve_is_sound(seed in any::<u64>(), n in 2usize..24, multiplicative in any::<bool>()) {
        let inst = gen_feasible(seed, n);
        let strategy = if multiplicative { Strategy::Multiplicative } else { Strategy::Partition };
        let r = general_solve(&inst.a, &inst.t, strategy, TOL).unwrap();
        assert_sound(&r, &inst.a, &inst.t);
    }
}
