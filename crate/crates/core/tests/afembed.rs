use afgauge::afembed::{
    adapted_basis, compose, family_count_formula, k0_push, phi_apply, validate_step, BratteliStep, Family,
};
use afgauge::liebasis::{build_basis, StructureConstants};
use afgauge::matcore::{alg_mul, AlgElement, AlgebraShape, CMat, C64};
use afgauge::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cases() -> Vec<BratteliStep> {
    vec![
        BratteliStep::simple(&[2], &[1], 3).unwrap(),
        BratteliStep::simple(&[2, 2], &[1, 1], 4).unwrap(),
        BratteliStep::simple(&[2, 2], &[1, 1], 5).unwrap(),
        BratteliStep::simple(&[2, 3], &[1, 1], 5).unwrap(),
    ]
}

fn multi() -> BratteliStep {
    // two target factors, one with repeated copies and slack
    BratteliStep::new(
        AlgebraShape::new(vec![2, 1]).unwrap(),
        AlgebraShape::new(vec![7, 3]).unwrap(),
        vec![vec![2, 2], vec![1, 0]],
        None,
    )
    .unwrap()
}

#[test]
fn dimension_identity() {
    let s = BratteliStep::simple(&[2], &[1], 3).unwrap();
    assert!(validate_step(&s).is_ok());
    assert_eq!(s.slack(0), 1);
    let s = BratteliStep::simple(&[2, 3], &[1, 1], 5).unwrap();
    assert_eq!(s.slack(0), 0);
    match BratteliStep::simple(&[2], &[2], 3) {
        Err(Error::DimensionMismatch { k: 0, .. }) => {}
        other => panic!("expected a dimension mismatch, got {other:?}"),
    }
}

#[test]
fn explicit_slack_must_balance() {
    let r = BratteliStep::new(
        AlgebraShape::new(vec![2]).unwrap(),
        AlgebraShape::new(vec![3]).unwrap(),
        vec![vec![1]],
        Some(vec![2]),
    );
    assert!(matches!(r, Err(Error::DimensionMismatch { lhs: 3, rhs: 4, .. })));
}

#[test]
fn step_files_round_trip() {
    let s = multi();
    let back = BratteliStep::from_json(&s.to_json()).unwrap();
    assert_eq!(back.mult(), s.mult());
    assert_eq!(back.shape_b(), s.shape_b());
    let flat = r#"{ "shapeA": [2, 1], "shapeB": [7, 3], "mult": [2, 2, 1, 0] }"#;
    assert_eq!(BratteliStep::from_json(flat).unwrap().mult(), s.mult());
    assert!(BratteliStep::from_json(r#"{ "shapeA": [2] }"#).is_err());
    assert!(BratteliStep::from_json(r#"{ "shapeA": [2], "shapeB": [3], "mult": [[2]] }"#).is_err());
}

#[test]
fn unit_plus_slack_projector_is_unit() {
    for s in cases().into_iter().chain([multi()]) {
        let one = phi_apply(&s, &AlgElement::unit(s.shape_a()), false).unwrap();
        for k in 0..s.shape_b().len() {
            let m = s.shape_b().dims()[k];
            let sum = one.block(k) + &s.slack_projector(k);
            assert!((&sum - &CMat::identity(m)).max_abs() == 0.0);
        }
    }
}

#[test]
fn copies_multiply_to_zero() {
    let s = multi();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x = CMat::random(2, 2, &mut r);
    let y = CMat::random(2, 2, &mut r);
    let z = CMat::random(1, 1, &mut r);
    let p = &s.phi_component(0, 0, 0, &x) * &s.phi_component(0, 0, 1, &y);
    assert_eq!(p.max_abs(), 0.0);
    let p = &s.phi_component(0, 0, 1, &x) * &s.phi_component(0, 1, 0, &z);
    assert_eq!(p.max_abs(), 0.0);
    let p = &s.phi_component(0, 0, 1, &x) * &s.phi_component(0, 0, 1, &y);
    assert!((&p - &s.phi_component(0, 0, 1, &(&x * &y))).max_abs() < 1e-15);
}

#[test]
fn unital_lift_maps_unitaries_to_unitaries() {
    let s = multi();
    let u = AlgElement::random_unitary(s.shape_a(), &mut ChaCha8Rng::seed_from_u64(2));
    let lu = phi_apply(&s, &u, true).unwrap();
    for b in lu.blocks() {
        assert!(b.unitarity_defect() < 1e-12);
    }
}

#[test]
fn k0_pushforward() {
    let s = BratteliStep::simple(&[2], &[1], 3).unwrap();
    assert_eq!(k0_push(&s, &[1]).unwrap(), vec![1]);
    let s = BratteliStep::simple(&[2, 2], &[1, 1], 4).unwrap();
    assert_eq!(k0_push(&s, &[3, -5]).unwrap(), vec![-2]);
    assert_eq!(k0_push(&s, &[0, 0]).unwrap(), vec![0]);
    assert!(k0_push(&s, &[1]).is_err());
    assert_eq!(k0_push(&multi(), &[1, 2]).unwrap(), vec![6, 1]);
}

#[test]
fn composition_multiplies_multiplicities() {
    let first = BratteliStep::simple(&[2], &[1], 3).unwrap();
    let second = BratteliStep::new(
        AlgebraShape::new(vec![3]).unwrap(),
        AlgebraShape::new(vec![7, 6]).unwrap(),
        vec![vec![2], vec![1]],
        None,
    )
    .unwrap();
    let c = compose(&first, &second).unwrap();
    assert_eq!(c.mult(), &[vec![2], vec![1]]);
    assert_eq!((c.slack(0), c.slack(1)), (3, 4));
    // both routes embed the unit with the same rank in every target factor
    let via = phi_apply(&second, &phi_apply(&first, &AlgElement::unit(first.shape_a()), false).unwrap(), false).unwrap();
    let direct = phi_apply(&c, &AlgElement::unit(c.shape_a()), false).unwrap();
    for k in 0..2 {
        assert_eq!(via.block(k).trace(), direct.block(k).trace());
    }
    assert!(compose(&second, &first).is_err());
}

#[test]
fn adapted_counts_for_the_four_cases() {
    let expect = [
        (3, 5, [0, 4, 0, 0, 1]),
        (6, 9, [0, 8, 0, 0, 1]),
        (6, 18, [0, 16, 0, 0, 2]),
        (11, 13, [0, 12, 0, 0, 1]),
    ];
    for (s, (inh, comp, fam)) in cases().iter().zip(expect) {
        let ab = adapted_basis(s, &build_basis(s.shape_a())).unwrap();
        let f = &ab.factors[0];
        assert_eq!((f.inherited.len(), f.complement.len()), (inh, comp));
        assert_eq!(f.family_sizes(), fam);
        assert_eq!(family_count_formula(s, 0), fam);
    }
}

#[test]
fn adapted_counts_with_repeated_copies() {
    let s = multi();
    let ab = adapted_basis(&s, &build_basis(s.shape_a())).unwrap();
    for (k, f) in ab.factors.iter().enumerate() {
        let m = s.shape_b().dims()[k];
        assert_eq!(f.inherited.len() + f.complement.len(), m * m - 1);
        assert_eq!(f.family_sizes(), family_count_formula(&s, k));
    }
    // k = 0: two copies each of M_2 and M_1 plus a 1×1 slack inside M_7
    assert_eq!(family_count_formula(&s, 0), [0, 28, 10, 2, 2]);
    assert_eq!(ab.factors[0].inherited.len(), 6);
}

fn orthonormal(gens: &[CMat]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, x) in gens.iter().enumerate() {
        for (b, y) in gens.iter().enumerate() {
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((x.hs_inner(y) - C64::new(want, 0.0)).norm());
        }
    }
    worst
}

#[test]
fn adapted_basis_is_orthonormal_and_traceless() {
    for s in cases().into_iter().chain([multi()]) {
        let ab = adapted_basis(&s, &build_basis(s.shape_a())).unwrap();
        for f in &ab.factors {
            let g = f.generators();
            assert!(orthonormal(&g) < 1e-12);
            for e in &g {
                assert!(e.is_anti_hermitean(1e-13));
                assert!(e.trace().norm() < 1e-13);
            }
        }
    }
}

#[test]
fn inherited_brackets_close_on_their_copy() {
    let s = multi();
    let ba = build_basis(s.shape_a());
    let ab = adapted_basis(&s, &ba).unwrap();
    let f = &ab.factors[0];
    for (ia, ea) in &f.inherited {
        for (ib, eb) in &f.inherited {
            let br = &(ea * eb) - &(eb * ea);
            if (ia.i, ia.alpha) != (ib.i, ib.alpha) {
                assert!(br.max_abs() < 1e-14);
                continue;
            }
            let sc: &StructureConstants = ba.structconst(ia.i);
            let mut want = CMat::zeros(f.m, f.m);
            for (ic, ec) in &f.inherited {
                if (ic.i, ic.alpha) == (ia.i, ia.alpha) {
                    want.axpy(C64::new(sc.get(ia.kappa, ib.kappa, ic.kappa), 0.0), ec);
                }
            }
            assert!((&br - &want).max_abs() < 1e-12);
        }
    }
}

#[test]
fn cross_and_slack_diagonals_match_the_standard_pair() {
    // M_2 ⊕ M_2 → M_5: the two diagonal complement directions
    let s = BratteliStep::simple(&[2, 2], &[1, 1], 5).unwrap();
    let ab = adapted_basis(&s, &build_basis(s.shape_a())).unwrap();
    let diag: Vec<&CMat> = ab.factors[0]
        .complement
        .iter()
        .filter(|(f, _)| *f == Family::CrossDiagonal)
        .map(|(_, e)| e)
        .collect();
    let d = [0.5, 0.5, -0.5, -0.5, 0.0];
    let e = [1.0, 1.0, 1.0, 1.0, -4.0].map(|x: f64| x / 20f64.sqrt());
    for (got, want) in diag.iter().zip([d, e]) {
        let w: Vec<C64> = want.iter().map(|&x| C64::new(0.0, x)).collect();
        let w = CMat::diag(&w);
        let sign = if (got.hs_inner(&w)).re < 0.0 { -1.0 } else { 1.0 };
        assert!((&got.scale_re(sign) - &w).max_abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_a_morphism_and_kills_slack(seed in any::<u64>()) {
        let s = multi();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = AlgElement::random(s.shape_a(), &mut r);
        let b = AlgElement::random(s.shape_a(), &mut r);
        let lhs = alg_mul(&phi_apply(&s, &a, false).unwrap(), &phi_apply(&s, &b, false).unwrap()).unwrap();
        let rhs = phi_apply(&s, &alg_mul(&a, &b).unwrap(), false).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-13);
        let fa = phi_apply(&s, &a, false).unwrap();
        for k in 0..2 {
            prop_assert!((fa.block(k) * &s.slack_projector(k)).max_abs() == 0.0);
        }
    }

    #[test]
    fn inherited_and_complement_are_orthogonal(n0 in 0usize..3, a1 in 1usize..3, a2 in 0usize..3) {
        let m = n0 + 2 * a1 + 3 * a2;
        let s = BratteliStep::simple(&[2, 3], &[a1, a2], m).unwrap();
        let ab = adapted_basis(&s, &build_basis(s.shape_a())).unwrap();
        let f = &ab.factors[0];
        prop_assert_eq!(f.inherited.len() + f.complement.len(), m * m - 1);
        prop_assert_eq!(f.inherited.len(), a1 * 3 + a2 * 8);
        prop_assert_eq!(f.family_sizes(), family_count_formula(&s, 0));
        for (_, x) in &f.inherited {
            for (_, y) in &f.complement {
                prop_assert!(x.hs_inner(y).norm() < 1e-12);
            }
        }
    }
}
