use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dss_core::image::Image;
use dss_core::kernels::SpatialBoundary;
use dss_core::semigroup::{
    check_equivariance_finite, semigroup_correlate, verify_left_action, ActionTable, FiniteSemigroup,
    ScaleShiftElement,
};
use dss_core::Error;

/// Maps `x -> a x + b` on Z_3 with `a` in {1, 2}: flips and shifts of a
/// triangle. Element index is `3 * (a - 1) + b`.
fn flip_shift() -> FiniteSemigroup {
    let decode = |e: usize| (e / 3 + 1, e % 3);
    FiniteSemigroup::from_fn(6, |s, t| {
        let ((a1, b1), (a2, b2)) = (decode(s), decode(t));
        3 * ((a1 * a2) % 3 - 1) + (a1 * b2 + b1) % 3
    })
    .unwrap()
}

/// `[L_s f](x) = f(s x)`, which composes in the wrong order.
fn left_multiplication(s: &FiniteSemigroup) -> ActionTable {
    let n = s.order();
    ActionTable::new(n, (0..n).map(|a| (0..n).map(|x| s.compose(a, x)).collect()).collect(), None).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn test_flip_shift_is_a_noncommutative_group() {
    let s = flip_shift();
    assert_eq!(s.identity(), Some(0));
    assert!(!s.is_commutative());
}

#[test]
fn test_right_multiplication_is_a_left_action() {
    let s = flip_shift();
    let act = ActionTable::right_multiplication(&s);
    assert_eq!(verify_left_action(&s, &act), Ok(()));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (psi, f) = (normal(&mut rng, 6), normal(&mut rng, 6));
        for t in 0..6 {
            assert_eq!(check_equivariance_finite(&s, &act, &psi, &f, t).unwrap(), 0.0);
        }
    }
}

#[test]
fn test_wrong_handed_action_is_caught() {
    let s = flip_shift();
    let act = left_multiplication(&s);
    assert!(verify_left_action(&s, &act).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (psi, f) = (normal(&mut rng, 6), normal(&mut rng, 6));
        for t in 0..6 {
            worst = worst.max(check_equivariance_finite(&s, &act, &psi, &f, t).unwrap());
        }
    }
    assert!(worst > 0.1, "{worst}");
}

#[test]
fn test_truncated_shift_monoid() {
    // Shifts that stop at the last index: a monoid with no inverses, acting
    // like a scale shift with a replicated top level.
    let n = 6;
    let s = FiniteSemigroup::from_fn(n, |a, b| (a + b).min(n - 1)).unwrap();
    assert_eq!(s.identity(), Some(0));
    let maps = (0..n).map(|a| (0..n).map(|x| (x + a).min(n - 1)).collect()).collect();
    let act = ActionTable::new(n, maps, None).unwrap();
    assert_eq!(verify_left_action(&s, &act), Ok(()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (psi, f) = (normal(&mut rng, n), normal(&mut rng, n));
    for t in 0..n {
        assert_eq!(check_equivariance_finite(&s, &act, &psi, &f, t).unwrap(), 0.0);
    }
}

#[test]
fn test_shape_errors() {
    let z3 = FiniteSemigroup::cyclic(3).unwrap();
    let act = ActionTable::right_multiplication(&z3);
    assert!(matches!(semigroup_correlate(&z3, &act, &[1.0; 2], &[1.0; 3]), Err(Error::ShapeMismatch(_))));
    assert!(check_equivariance_finite(&z3, &act, &[1.0; 3], &[1.0; 3], 3).is_err());
    assert!(ActionTable::new(3, vec![vec![0, 1, 3]], None).is_err());
}

fn element() -> impl Strategy<Value = ScaleShiftElement> {
    (0u32..4, -20i64..20, -20i64..20).prop_map(|(k, x, y)| ScaleShiftElement::new(k, [x, y]))
}

proptest! {
    #[test]
    fn prop_compose_is_associative(a in element(), b in element(), c in element()) {
        let left = a.compose(&b).and_then(|ab| ab.compose(&c));
        let right = b.compose(&c).and_then(|bc| a.compose(&bc));
        if let (Ok(l), Ok(r)) = (&left, &right) {
            prop_assert_eq!(l, r);
        }
    }

    #[test]
    fn prop_identity_is_neutral(a in element()) {
        let e = ScaleShiftElement::identity();
        prop_assert_eq!(e.compose(&a).unwrap(), a);
        prop_assert_eq!(a.compose(&e).unwrap(), a);
    }

    #[test]
    fn prop_compose_representable_iff_divisible(a in element(), b in element()) {
        let step = 1i64 << a.k;
        let divisible = b.z.iter().all(|c| c % step == 0);
        prop_assert_eq!(a.compose(&b).is_ok(), divisible);
    }

    #[test]
    fn prop_shift_then_scale_matches_product_on_torus(
        seed in any::<u64>(),
        k in 0u32..3,
        z1 in (-5i64..5, -5i64..5),
        z2 in (-5i64..5, -5i64..5),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::new(16, 16, 1, (0..256).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let shift = ScaleShiftElement::new(0, [z1.0, z1.1]);
        let scaled = ScaleShiftElement::new(k, [z2.0, z2.1]);
        let chained = shift
            .apply(&scaled.apply(&img, 0.25, SpatialBoundary::Periodic).unwrap(), 0.25, SpatialBoundary::Periodic)
            .unwrap();
        let direct = shift.compose(&scaled).unwrap().apply(&img, 0.25, SpatialBoundary::Periodic).unwrap();
        prop_assert_eq!(chained, direct);
    }
}
