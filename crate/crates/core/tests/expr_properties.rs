use evoscope::expr::random_expr;
use evoscope::{canonicalize, evaluate, parse, EvalContext};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 2] = ["x", "v"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn canonical_text_is_a_fixed_point(seed in any::<u64>(), depth in 1usize..6) {
        let e = random_expr(&mut ChaCha8Rng::seed_from_u64(seed), &VARS, depth);
        let text = canonicalize(&e);
        let reparsed = parse(&text, &VARS).unwrap();
        prop_assert_eq!(canonicalize(&reparsed), text);
    }

    #[test]
    fn canonical_form_preserves_values(seed in any::<u64>(), x in -3.0..3.0f64, v in -3.0..3.0f64) {
        let e = random_expr(&mut ChaCha8Rng::seed_from_u64(seed), &VARS, 4);
        let ctx = EvalContext::new().scalar("x", x).scalar("v", v);
        let reparsed = parse(&canonicalize(&e), &VARS).unwrap();
        match (evaluate(&e, &ctx), evaluate(&reparsed, &ctx)) {
            (Ok(a), Ok(b)) => {
                let (a, b) = (a[0], b[0]);
                prop_assert!(a == b || (a - b).abs() <= 1e-9 * a.abs().max(1.0) || (a.is_nan() && b.is_nan()));
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn parser_never_panics(text in "[xv0-9+*/() .^-]{0,40}") {
        let _ = parse(&text, &VARS);
    }
}

#[test]
fn grammar_examples() {
    let ctx = EvalContext::new().scalar("x", 2.0).scalar("v", 3.0);
    let eval = |s: &str| evaluate(&parse(s, &VARS).unwrap(), &ctx).unwrap()[0];
    assert_eq!(eval("x + v * 2"), 8.0);
    assert_eq!(eval("2 ** 3 ** 2"), 512.0);
    assert_eq!(eval("-x ** 2"), -4.0);
    assert!((eval("sin(x) + exp(0)") - (2f64.sin() + 1.0)).abs() < 1e-15);
    assert!(parse("y + 1", &VARS).is_err());
    assert!(parse("x +", &VARS).is_err());
}
