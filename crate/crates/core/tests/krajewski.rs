use std::collections::BTreeMap;

use afgauge::afembed::{phi_apply, BratteliStep};
use afgauge::krajewski::*;
use afgauge::matcore::{AlgElement, AlgebraShape, CMat, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn m2_to_m3() -> BratteliStep {
    BratteliStep::simple(&[2], &[1], 3).unwrap()
}

fn dist(a: &CMat, b: &CMat) -> f64 {
    (a - b).max_abs()
}

/// Random operator on `H` that is not required to respect any structure.
fn random_op(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::random(n, n, rng)
}

#[test]
fn ko_table_rows() {
    let rows: [(i8, i8, Option<i8>); 8] = [
        (1, 1, Some(1)),
        (1, -1, None),
        (-1, 1, Some(-1)),
        (-1, 1, None),
        (-1, 1, Some(1)),
        (-1, -1, None),
        (1, 1, Some(-1)),
        (1, 1, None),
    ];
    for (d, &(e, e1, e2)) in rows.iter().enumerate() {
        let s = ko_signs(d as u8).unwrap();
        assert_eq!((s.eps, s.eps_prime, s.eps_second), (e, e1, e2), "d = {d}");
    }
    assert!(ko_signs(8).is_err());
}

fn lone_vertex(n: usize, d: u8) -> KrajewskiDiagram {
    KrajewskiDiagram {
        shape: AlgebraShape::new(vec![n]).unwrap(),
        ko_dim: d,
        vertices: vec![Vertex { i: 0, j: 0, p: 0, s: Some(1), chi: None, jv: 0 }],
        edges: vec![],
    }
}

#[test]
fn single_self_paired_vertex_is_valid() {
    assert!(lone_vertex(2, 0).validate().is_ok());
}

#[test]
fn edge_changing_both_factors_is_rejected() {
    let k = KrajewskiDiagram {
        shape: AlgebraShape::new(vec![1, 1]).unwrap(),
        ko_dim: 1,
        vertices: vec![
            Vertex { i: 0, j: 0, p: 0, s: None, chi: None, jv: 0 },
            Vertex { i: 1, j: 1, p: 0, s: None, chi: None, jv: 1 },
        ],
        edges: vec![
            Edge { from: 0, to: 1, d: CMat::identity(1) },
            Edge { from: 1, to: 0, d: CMat::identity(1) },
        ],
    };
    let errs = k.validate().unwrap_err();
    assert!(errs.iter().any(|v| v.rule == "edge-adjacency" && v.site == Site::Edge(0)));
}

#[test]
fn odd_diagonal_multiplicity_in_ko6_is_rejected() {
    let mut k = lone_vertex(2, 6);
    k.vertices[0].chi = Some(0);
    let errs = k.validate().unwrap_err();
    assert!(errs.iter().any(|v| v.rule == "multiplicity"));
}

#[test]
fn broken_real_structure_relation_is_reported() {
    let mut r = rng(7);
    let shape = AlgebraShape::new(vec![2, 1]).unwrap();
    let mut k = random_diagram(&shape, 1, 2, 1.0, &mut r).unwrap();
    while !k.edges.iter().any(|e| e.from != e.to) {
        k = random_diagram(&shape, 1, 2, 1.0, &mut r).unwrap();
    }
    let e = k.edges.iter().find(|e| e.from != e.to).unwrap().clone();
    // Keep the adjoint rule intact so only the 𝔍-relation can fail.
    let bump = CMat::random(e.d.rows(), e.d.cols(), &mut r).scale_re(0.1);
    let pos = |a: usize, b: usize| k.edges.iter().position(|x| x.from == a && x.to == b).unwrap();
    let (n, m) = (pos(e.from, e.to), pos(e.to, e.from));
    k.edges[n].d += &bump;
    k.edges[m].d += &bump.adjoint();
    let errs = k.validate().unwrap_err();
    assert!(errs.iter().any(|v| v.rule == "edge-real-structure"), "{errs:?}");
}

#[test]
fn diagram_json_round_trip() {
    let mut r = rng(11);
    let shape = AlgebraShape::new(vec![1, 2]).unwrap();
    let k = random_diagram(&shape, 6, 2, 0.7, &mut r).unwrap();
    let back = KrajewskiDiagram::from_json(&k.to_json()).unwrap();
    assert_eq!(k, back);
}

/// The operator identities of a real spectral triple, checked on the
/// assembled matrices rather than on the edge rules.
fn assert_real_triple(k: &KrajewskiDiagram, r: &mut ChaCha8Rng) {
    let sg = ko_signs(k.ko_dim).unwrap();
    let n = k.hilbert_dim();
    let kj = k.real_structure();
    let d = k.dirac();
    let id = CMat::identity(n);
    // J² = ε
    assert!(dist(&(&kj * &kj.conj()), &id.scale_re(f64::from(sg.eps))) < 1e-13);
    // D = D†, JD = ε′DJ
    assert!(dist(&d, &d.adjoint()) < 1e-12);
    assert!(dist(&(&kj * &d.conj()), &(&d * &kj).scale_re(f64::from(sg.eps_prime))) < 1e-12);
    if let Some(g) = k.gamma() {
        let e2 = f64::from(sg.eps_second.unwrap());
        assert!(dist(&(&kj * &g), &(&g * &kj).scale_re(e2)) < 1e-13);
        assert!(dist(&(&g * &d), &(&d * &g).scale_re(-1.0)) < 1e-12);
    }
    // Order zero and first order against J b J⁻¹.
    let a = AlgElement::random(&k.shape, r);
    let b = AlgElement::random(&k.shape, r);
    let pa = k.pi(&a);
    let jbj = &(&kj * &k.pi(&b).conj()) * &kj.adjoint();
    assert!(dist(&(&pa * &jbj), &(&jbj * &pa)) < 1e-12);
    let da = &(&d * &pa) - &(&pa * &d);
    assert!(dist(&(&da * &jbj), &(&jbj * &da)) < 1e-11);
    // J π(b) J⁻¹ is the right action of b*.
    let bstar = afgauge::matcore::alg_adjoint(&b);
    assert!(dist(&jbj, &k.pi_opposite(&bstar)) < 1e-13);
}

#[test]
fn random_diagrams_are_real_spectral_triples() {
    let mut r = rng(5);
    for d in 0..8 {
        for dims in [vec![1], vec![2], vec![1, 2], vec![2, 1, 1]] {
            let shape = AlgebraShape::new(dims).unwrap();
            let k = random_diagram(&shape, d, 2, 0.6, &mut r).unwrap();
            k.validate().unwrap_or_else(|e| panic!("d={d}: {e:?}"));
            assert_real_triple(&k, &mut r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn epsilon_pairs_to_epsilon(seed in any::<u64>(), d in 0u8..8) {
        let mut r = rng(seed);
        let shape = AlgebraShape::new(vec![1, 2, 1]).unwrap();
        let k = random_diagram(&shape, d, 2, 0.3, &mut r).unwrap();
        prop_assert!(k.validate().is_ok());
        let eps = f64::from(ko_signs(d).unwrap().eps);
        for v in 0..k.vertices.len() {
            prop_assert_eq!(k.epsilon(v) * k.epsilon(k.vertices[v].jv), eps);
        }
    }
}

/// `M_2 → M_3` with one self-paired vertex on `𝒜` and `receivers` on `ℬ`.
fn fan_out(receivers: usize) -> (LiftData, KrajewskiDiagram, KrajewskiDiagram) {
    let ka = lone_vertex(2, 0);
    let kb = KrajewskiDiagram {
        shape: AlgebraShape::new(vec![3]).unwrap(),
        ko_dim: 0,
        vertices: (0..receivers).map(|p| Vertex { i: 0, j: 0, p, s: Some(1), chi: None, jv: p }).collect(),
        edges: vec![],
    };
    let u = (0..receivers).map(|w| ((0, w), CMat::identity(1))).collect();
    (LiftData { step: m2_to_m3(), u }, ka, kb)
}

#[test]
fn scalar_lift_norms_count_receivers() {
    for n in 1..4 {
        let (lift, ka, kb) = fan_out(n);
        let phi = build_phi_h(&lift, &ka, &kb).unwrap();
        assert_eq!(phi.norms, vec![n as f64]);
        let p = &phi.matrix;
        assert!(dist(&(&p.adjoint() * p), &CMat::identity(4)) < 1e-14);
    }
}

#[test]
fn vertex_without_image_is_not_one_to_one() {
    let (mut lift, ka, kb) = fan_out(2);
    lift.u.clear();
    let err = build_phi_h(&lift, &ka, &kb).unwrap_err().to_string();
    assert!(err.contains("not one-to-one"), "{err}");
}

#[test]
fn normalized_lift_preserves_norms() {
    let mut r = rng(21);
    for d in [0u8, 1, 2, 6, 7] {
        for step in [m2_to_m3(), BratteliStep::simple(&[1, 2], &[2, 1], 4).unwrap()] {
            let (lift, ka, kb) = random_lift(&step, d, 1, true, &mut r).unwrap();
            let phi = build_phi_h(&lift, &ka, &kb).unwrap();
            let psi = CMat::random(ka.hilbert_dim(), 1, &mut r);
            let out = &phi.matrix * &psi;
            assert!((out.frob_norm() - psi.frob_norm()).abs() < 1e-12 * psi.frob_norm());
            let gram = &phi.matrix.adjoint() * &phi.matrix;
            assert!(dist(&gram, &CMat::identity(ka.hilbert_dim())) < 1e-12, "d = {d}");
        }
    }
}

/// Two vertices of one fiber landing on the same receiver makes `σ`
/// off-diagonal; re-basing must restore orthogonality.
fn overlapping(d: u8) -> (LiftData, KrajewskiDiagram, KrajewskiDiagram) {
    let shape = AlgebraShape::new(vec![1]).unwrap();
    let ka = KrajewskiDiagram {
        shape: shape.clone(),
        ko_dim: d,
        vertices: vec![
            Vertex { i: 0, j: 0, p: 0, s: None, chi: None, jv: 0 },
            Vertex { i: 0, j: 0, p: 1, s: None, chi: None, jv: 1 },
        ],
        edges: vec![],
    };
    let kb = KrajewskiDiagram {
        shape: AlgebraShape::new(vec![2]).unwrap(),
        ko_dim: d,
        vertices: (0..2).map(|p| Vertex { i: 0, j: 0, p, s: None, chi: None, jv: p }).collect(),
        edges: vec![],
    };
    let one = |x: f64| CMat::from_fn(2, 2, |r, c| if r == c { C64::new(x, 0.0) } else { C64::new(0.0, 0.0) });
    let mut u = BTreeMap::new();
    u.insert((0, 0), one(1.0));
    u.insert((1, 0), one(0.5));
    u.insert((1, 1), one(1.0));
    let step = BratteliStep::simple(&[1], &[2], 2).unwrap();
    (LiftData { step, u }, ka, kb)
}

#[test]
fn off_diagonal_sigma_is_rebased_in_ko_1() {
    let (lift, ka, kb) = overlapping(1);
    let sigma = lift.sigma(&[0, 1], 2);
    assert!(sigma[(0, 1)].norm() > 0.5);
    let phi = build_phi_h(&lift, &ka, &kb).unwrap();
    let gram = &phi.matrix.adjoint() * &phi.matrix;
    assert!(dist(&gram, &CMat::identity(2)) < 1e-12);
    assert!(phi.basis_change.unitarity_defect() < 1e-12);
    // Eigenvalues of σ = [[2, 1], [1, 2.5]].
    let mut n = phi.norms.clone();
    n.sort_by(f64::total_cmp);
    let (tr, det) = (4.5f64, 4.0f64);
    let disc = (tr * tr - 4.0 * det).sqrt();
    assert!((n[0] - (tr - disc) / 2.0).abs() < 1e-12);
    assert!((n[1] - (tr + disc) / 2.0).abs() < 1e-12);
}

#[test]
fn off_diagonal_sigma_is_refused_in_ko_3() {
    let (lift, mut ka, mut kb) = overlapping(3);
    ka.vertices[0].chi = Some(0);
    ka.vertices[0].jv = 1;
    ka.vertices[1].chi = Some(1);
    ka.vertices[1].jv = 0;
    kb.vertices[0].chi = Some(0);
    kb.vertices[0].jv = 1;
    kb.vertices[1].chi = Some(1);
    kb.vertices[1].jv = 0;
    assert!(ka.validate().is_ok() && kb.validate().is_ok());
    let err = build_phi_h(&lift, &ka, &kb).unwrap_err().to_string();
    assert!(err.contains("no constructive diagonalization"), "{err}");
}

#[test]
fn algebra_action_is_strong_compatible() {
    let mut r = rng(33);
    for d in [0u8, 2, 6, 7] {
        let step = BratteliStep::simple(&[1, 2], &[1, 1], 3).unwrap();
        let (lift, ka, kb) = random_lift(&step, d, 2, true, &mut r).unwrap();
        let phi = build_phi_h(&lift, &ka, &kb).unwrap();
        let a = AlgElement::random(step.shape_a(), &mut r);
        let fa = phi_apply(&step, &a, false).unwrap();
        let rep = check_compat(&ka.pi(&a), &kb.pi(&fa), &phi.matrix, CompatMode::Strong).unwrap();
        assert!(rep.ok, "{rep:?}");
        let rep = check_compat(&ka.pi_opposite(&a), &kb.pi_opposite(&fa), &phi.matrix, CompatMode::Strong).unwrap();
        assert!(rep.ok, "{rep:?}");
        if let (Some(ga), Some(gb)) = (ka.gamma(), kb.gamma()) {
            assert!(check_compat(&ga, &gb, &phi.matrix, CompatMode::Strong).unwrap().ok);
        }
    }
}

#[test]
fn lifted_unitary_is_strong_compatible_and_diagonal() {
    let mut r = rng(34);
    let step = m2_to_m3();
    let (lift, ka, kb) = random_lift(&step, 0, 1, true, &mut r).unwrap();
    let phi = build_phi_h(&lift, &ka, &kb).unwrap();
    let u = AlgElement::random_unitary(step.shape_a(), &mut r);
    let ub = phi_apply(&step, &u, true).unwrap();
    let b = kb.pi(&ub);
    let rep = check_compat(&ka.pi(&u), &b, &phi.matrix, CompatMode::Strong).unwrap();
    assert!(rep.ok);
    // B_φ^⊥ vanishes too.
    let q = complement(&phi.matrix).unwrap();
    let cross = &(&phi.matrix.adjoint() * &b) * &q;
    assert!(cross.max_abs() < 1e-12);
}

/// `(A, B)` strong compatible: `B = Φ A Φ† + Q C Q†`.
fn strong_pair(phi: &CMat, r: &mut ChaCha8Rng) -> (CMat, CMat) {
    let q = complement(phi).unwrap();
    let a = random_op(phi.cols(), r);
    let c = random_op(q.cols(), r);
    let b = &(&(phi * &a) * &phi.adjoint()) + &(&(&q * &c) * &q.adjoint());
    (a, b)
}

/// `(A, B)` compatible only in the weak sense: extra `⊥ ← φ` and `φ ← ⊥` blocks.
fn weak_pair(phi: &CMat, r: &mut ChaCha8Rng) -> (CMat, CMat) {
    let q = complement(phi).unwrap();
    let (a, b) = strong_pair(phi, r);
    let x = CMat::random(q.cols(), phi.cols(), r);
    let y = CMat::random(phi.cols(), q.cols(), r);
    let b = &(&b + &(&(&q * &x) * &phi.adjoint())) + &(&(phi * &y) * &q.adjoint());
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn strong_implies_weak_and_composes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (lift, ka, kb) = random_lift(&m2_to_m3(), 6, 1, true, &mut r).unwrap();
        let phi = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
        let (a1, b1) = strong_pair(&phi, &mut r);
        let (a2, b2) = strong_pair(&phi, &mut r);
        let s1 = check_compat(&a1, &b1, &phi, CompatMode::Strong).unwrap();
        prop_assert!(s1.ok);
        prop_assert!(check_compat(&a1, &b1, &phi, CompatMode::Weak).unwrap().ok);
        let prod = check_compat(&(&a1 * &a2), &(&b1 * &b2), &phi, CompatMode::Strong).unwrap();
        prop_assert!(prod.ok, "{:?}", prod);
        let (aw, bw) = weak_pair(&phi, &mut r);
        let w = check_compat(&aw, &bw, &phi, CompatMode::Weak).unwrap();
        prop_assert!(w.ok);
        prop_assert!(!check_compat(&aw, &bw, &phi, CompatMode::Strong).unwrap().ok);
    }
}

#[test]
fn j_compatible_lift_intertwines_real_structures() {
    let mut r = rng(40);
    for d in 0..8u8 {
        let step = BratteliStep::simple(&[1, 2], &[1, 1], 3).unwrap();
        let (lift, ka, kb) = random_lift(&step, d, 1, true, &mut r).unwrap();
        assert!(check_j_compat(&lift, &ka, &kb).unwrap().is_empty(), "d = {d}");
        // φ_H J_𝒜 = J_ℬ φ_H on the unnormalized map: Φ K_𝒜 = K_ℬ conj(Φ).
        let phi = lift.matrix(&ka, &kb).unwrap();
        let lhs = &phi * &ka.real_structure();
        let rhs = &kb.real_structure() * &phi.conj();
        assert!(dist(&lhs, &rhs) < 1e-12, "d = {d}");
        if matches!(d, 0 | 1 | 2 | 6 | 7) {
            let n = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
            let lhs = &n * &ka.real_structure();
            let rhs = &kb.real_structure() * &n.conj();
            assert!(dist(&lhs, &rhs) < 1e-10, "normalized, d = {d}");
        }
    }
}

#[test]
fn real_u_with_unit_signs_satisfies_j_relation() {
    let (lift, ka, kb) = fan_out(2);
    assert!(check_j_compat(&lift, &ka, &kb).unwrap().is_empty());
}

#[test]
fn perturbed_lift_entry_is_reported() {
    let mut r = rng(41);
    let (mut lift, ka, kb) = random_lift(&m2_to_m3(), 0, 0, true, &mut r).unwrap();
    let (&key, m) = lift.u.iter_mut().next().unwrap();
    m[(0, 0)] += C64::new(0.0, 0.25);
    let bad = check_j_compat(&lift, &ka, &kb).unwrap();
    assert!(bad.iter().any(|x| (x.v, x.w) == key || (ka.vertices[x.v].jv, kb.vertices[x.w].jv) == key));
}

#[test]
fn different_ko_dimensions_are_rejected() {
    let (lift, ka, mut kb) = fan_out(1);
    kb.ko_dim = 4;
    assert!(check_j_compat(&lift, &ka, &kb).is_err());
}

/// Brute-force `Tr(Π_t X_t)`.
fn trace_of_product(ms: &[&CMat]) -> C64 {
    let mut acc = ms[0].clone();
    for m in &ms[1..] {
        acc = &acc * *m;
    }
    (0..acc.rows()).map(|i| acc[(i, i)]).sum()
}

#[test]
fn inherited_operator_has_no_remainder() {
    let mut r = rng(50);
    let (lift, ka, kb) = random_lift(&m2_to_m3(), 0, 1, true, &mut r).unwrap();
    let phi = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
    let a = random_op(phi.cols(), &mut r);
    let b = &(&phi * &a) * &phi.adjoint();
    let t = trace_compare(&[(a, b)], &phi).unwrap();
    assert!(t.tnic.norm() < 1e-12);
    assert!((t.tr_a - t.tr_b).norm() < 1e-12);
}

#[test]
fn three_factor_traces_match_brute_force() {
    let mut r = rng(51);
    for _ in 0..10 {
        let (lift, ka, kb) = random_lift(&m2_to_m3(), 6, 1, true, &mut r).unwrap();
        let phi = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
        let pairs: Vec<(CMat, CMat)> = (0..3).map(|_| weak_pair(&phi, &mut r)).collect();
        let t = trace_compare(&pairs, &phi).unwrap();
        let ta = trace_of_product(&pairs.iter().map(|p| &p.0).collect::<Vec<_>>());
        let tb = trace_of_product(&pairs.iter().map(|p| &p.1).collect::<Vec<_>>());
        assert!((t.tr_a - ta).norm() < 1e-10);
        assert!((t.tr_b - tb).norm() < 1e-10);
        assert!((tb - ta - t.tnic).norm() < 1e-10, "{t:?}");
    }
}

#[test]
fn perp_perp_perturbation_contributes_its_own_trace() {
    let mut r = rng(52);
    let (lift, ka, kb) = random_lift(&m2_to_m3(), 0, 1, true, &mut r).unwrap();
    let phi = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
    let q = complement(&phi).unwrap();
    let mut pairs = Vec::new();
    let mut perts = Vec::new();
    for _ in 0..2 {
        let a = random_op(phi.cols(), &mut r);
        let c = random_op(q.cols(), &mut r);
        let pert = &(&q * &c) * &q.adjoint();
        let b = &(&(&phi * &a) * &phi.adjoint()) + &pert;
        pairs.push((a, b));
        perts.push(pert);
    }
    let t = trace_compare(&pairs, &phi).unwrap();
    let want = trace_of_product(&[&perts[0], &perts[1]]);
    assert!((t.tnic - want).norm() < 1e-10);
    assert!((t.tr_b - t.tr_a - want).norm() < 1e-10);
}

#[test]
fn incompatible_pair_is_refused() {
    let mut r = rng(53);
    let (lift, ka, kb) = random_lift(&m2_to_m3(), 0, 1, true, &mut r).unwrap();
    let phi = build_phi_h(&lift, &ka, &kb).unwrap().matrix;
    let a = random_op(phi.cols(), &mut r);
    let b = random_op(phi.rows(), &mut r);
    assert!(trace_compare(&[(a, b)], &phi).is_err());
}

#[test]
fn lift_file_round_trip() {
    let mut r = rng(60);
    let (lift, ka, kb) = random_lift(&m2_to_m3(), 2, 1, true, &mut r).unwrap();
    let file = LiftFile::new(&lift, &ka, &kb);
    let json = serde_json::to_string(&file).unwrap();
    let back: LiftFile = serde_json::from_str(&json).unwrap();
    let (l2, a2, b2) = back.into_parts().unwrap();
    assert_eq!(l2, lift);
    assert_eq!((a2, b2), (ka, kb));
}
