use super::{format_constant, BinOp, Expr, Func};
use rand::seq::IndexedRandom;
use rand::Rng;

/// A random leaf: a variable (70%) or a short positive constant in [0.1, 3).
pub fn random_terminal<R: Rng + ?Sized, S: AsRef<str>>(rng: &mut R, vars: &[S]) -> Expr {
    if !vars.is_empty() && rng.random_bool(0.7) {
        let v = vars.choose(rng).expect("non-empty");
        Expr::var(v.as_ref())
    } else {
        short_constant(rng.random_range(0.1..3.0))
    }
}

/// Constants are kept to three significant digits so they print compactly.
pub(crate) fn short_constant(value: f64) -> Expr {
    let s = format!("{value:.2e}");
    let v: f64 = s.parse().unwrap_or(value);
    Expr::Const(format_constant(v).parse().unwrap_or(v))
}

/// Random expression of depth at most `max_depth` over `vars` and the full
/// function whitelist.
pub fn random_expr<R: Rng + ?Sized, S: AsRef<str>>(rng: &mut R, vars: &[S], max_depth: usize) -> Expr {
    if max_depth <= 1 || rng.random_bool(0.3) {
        return random_terminal(rng, vars);
    }
    let roll: f64 = rng.random();
    if roll < 0.25 {
        let f = *Func::ALL.choose(rng).expect("non-empty");
        Expr::call(f, random_expr(rng, vars, max_depth - 1))
    } else if roll < 0.3 {
        Expr::neg(random_expr(rng, vars, max_depth - 1))
    } else {
        // `^` is rare: it blows up easily.
        let op = if rng.random_bool(0.05) {
            BinOp::Pow
        } else {
            *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]
                .choose(rng)
                .expect("non-empty")
        };
        let l = random_expr(rng, vars, max_depth - 1);
        let r = random_expr(rng, vars, max_depth - 1);
        Expr::binary(op, l, r)
    }
}
