use proptest::prelude::*;

use hycomp::expr::{parse, Expr};
use hycomp::geometry::HyperBox;
use rand::SeedableRng;

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        (0..3usize).prop_map(|i| format!("x{i}")),
        (-5.0..5.0f64).prop_map(|c| format!("{c:.4}")),
    ]
}

fn expr_src() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("max({a}, {b})")),
        ]
    })
}

fn vars() -> Vec<String> {
    (0..3).map(|i| format!("x{i}")).collect()
}

fn eval(e: &Expr, x: &[f64]) -> f64 {
    e.bind(&vars()).unwrap().eval(x)
}

proptest! {
    #[test]
    fn printing_then_parsing_preserves_values(src in expr_src(), x in prop::array::uniform3(-2.0..2.0f64)) {
        let e = parse(&src).unwrap();
        let again = parse(&e.to_string()).unwrap();
        let (a, b) = (eval(&e, &x), eval(&again, &x));
        prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{src} -> {e}: {a} vs {b}");
    }

    #[test]
    fn affine_coefficients_reproduce_values(
        c in prop::array::uniform3(-3.0..3.0f64),
        k in -3.0..3.0f64,
        x in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let src = format!("{} * x0 - ({} * x1 - x2 / 4) + {}", c[0], c[1], k);
        let e = parse(&src).unwrap();
        let (coef, off) = e.affine_in(&vars()).expect("affine");
        let lin: f64 = coef.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + off;
        prop_assert!((lin - eval(&e, &x)).abs() <= 1e-12 * (1.0 + lin.abs()));
    }

    #[test]
    fn nonlinear_terms_are_not_affine(src in expr_src()) {
        let e = parse(&format!("sin({src}) * x0 + x1 * x2")).unwrap();
        prop_assert!(e.affine_in(&vars()).is_none());
    }

    #[test]
    fn box_samples_stay_inside(
        bounds in prop::collection::vec((-10.0..10.0f64, 0.001..5.0f64), 1..5),
        seed in any::<u64>(),
    ) {
        let b: Vec<(f64, f64)> = bounds.iter().map(|&(lo, w)| (lo, lo + w)).collect();
        let bx = HyperBox::from_bounds(&b).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for p in bx.sample(20, &mut rng) {
            prop_assert!(bx.contains(&p, 0.0).unwrap(), "{p:?} outside {b:?}");
        }
    }
}
