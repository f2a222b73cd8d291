//! A small arithmetic expression language used as the genome representation
//! for equation-discovery and bin-packing heuristics.
//!
//! The grammar is published in `docs/expr.ebnf`. In short: infix `+ - * / ^`
//! with precedence `^` > unary `-` > `* /` > `+ -`, right-associative `^`
//! (`**` is accepted as a synonym), parentheses, decimal literals with an
//! optional exponent, variables from a caller-supplied set, and the
//! single-argument functions `sin cos exp log sqrt abs tanh`.

mod eval;
mod parse;
mod random;

pub use eval::{evaluate, Binding, EvalContext, EvalError};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use random::{random_expr, random_terminal};
pub(crate) use random::short_constant;

use std::fmt;

pub const MAX_DEPTH: usize = 32;
pub const MAX_NODES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Mul)
    }

    pub const ALL: [BinOp; 5] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
            Func::Tanh => x.tanh(),
        }
    }
}

/// Expression tree. Children are boxed; trees are small (≤ 512 nodes).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn neg(inner: Expr) -> Expr {
        Expr::Neg(Box::new(inner))
    }

    pub fn call(func: Func, arg: Expr) -> Expr {
        Expr::Call(func, Box::new(arg))
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(e) | Expr::Call(_, e) => 1 + e.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(e) | Expr::Call(_, e) => 1 + e.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Variable names referenced by the tree, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(v) => out.push(v.clone()),
                Expr::Neg(c) | Expr::Call(_, c) => walk(c, out),
                Expr::Binary(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// Subtree at a pre-order index (root is 0).
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        fn go<'a>(e: &'a Expr, target: usize, next: &mut usize) -> Option<&'a Expr> {
            if *next == target {
                return Some(e);
            }
            *next += 1;
            match e {
                Expr::Const(_) | Expr::Var(_) => None,
                Expr::Neg(c) | Expr::Call(_, c) => go(c, target, next),
                Expr::Binary(_, l, r) => go(l, target, next).or_else(|| go(r, target, next)),
            }
        }
        go(self, index, &mut 0)
    }

    /// Copy of the tree with the subtree at pre-order `index` replaced.
    pub fn replace_subtree(&self, index: usize, replacement: &Expr) -> Expr {
        fn go(e: &Expr, target: usize, next: &mut usize, rep: &Expr) -> Expr {
            if *next == target {
                *next += e.node_count();
                return rep.clone();
            }
            *next += 1;
            match e {
                Expr::Const(_) | Expr::Var(_) => e.clone(),
                Expr::Neg(c) => Expr::Neg(Box::new(go(c, target, next, rep))),
                Expr::Call(f, c) => Expr::Call(*f, Box::new(go(c, target, next, rep))),
                Expr::Binary(op, l, r) => {
                    let l = go(l, target, next, rep);
                    let r = go(r, target, next, rep);
                    Expr::Binary(*op, Box::new(l), Box::new(r))
                }
            }
        }
        go(self, index, &mut 0, replacement)
    }

    pub fn within_limits(&self) -> bool {
        self.depth() <= MAX_DEPTH && self.node_count() <= MAX_NODES
    }
}

/// Format a constant with 12 significant digits, shortest form.
pub fn format_constant(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{value:.11e}").parse().unwrap_or(value);
    let magnitude = rounded.abs();
    if (1e-4..1e15).contains(&magnitude) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Deterministic string form of an expression. Every compound node is
/// parenthesized, operands of `+` and `*` are ordered lexicographically by
/// their own canonical strings, and constants carry 12 significant digits.
/// No constant folding or algebraic simplification happens here.
pub fn canonicalize(expr: &Expr) -> String {
    match expr {
        Expr::Const(c) => {
            let s = format_constant(*c);
            if *c < 0.0 {
                format!("({s})")
            } else {
                s
            }
        }
        Expr::Var(v) => v.clone(),
        Expr::Neg(e) => format!("(-{})", canonicalize(e)),
        Expr::Call(f, e) => format!("{}({})", f.name(), canonicalize(e)),
        Expr::Binary(op, l, r) => {
            let mut a = canonicalize(l);
            let mut b = canonicalize(r);
            if op.is_commutative() && b < a {
                std::mem::swap(&mut a, &mut b);
            }
            format!("({a} {} {b})", op.symbol())
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonicalize(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XV: [&str; 2] = ["x", "v"];

    fn canon(s: &str) -> String {
        canonicalize(&parse(s, &XV).unwrap())
    }

    #[test]
    fn commutative_operands_are_ordered() {
        assert_eq!(canon("v + x"), canon("x + v"));
        assert_eq!(canon("x*2"), canon("2*x"));
        assert_ne!(canon("x - v"), canon("v - x"));
        assert_ne!(canon("x / v"), canon("v / x"));
    }

    #[test]
    fn constants_are_not_folded() {
        assert_ne!(canon("2*x"), canon("(1+1)*x"));
        assert_eq!(canon("0.5000000000001 * x"), canon("0.5 * x"));
        assert_eq!(canon("1.23456789012345"), "1.23456789012");
    }

    #[test]
    fn constant_formatting() {
        assert_eq!(format_constant(2.0), "2");
        assert_eq!(format_constant(1e-6), "1e-6");
        assert_eq!(format_constant(0.8), "0.8");
        assert_eq!(format_constant(1.5e20), "1.5e20");
    }

    #[test]
    fn canonical_form_reparses_to_itself() {
        for s in [
            "1.2*x + 0.8*v + sin(x)",
            "-x^2^v",
            "exp(-(x - v)) / (1 + abs(v))",
            "2^-x",
            "-(bins - item)",
        ] {
            let vars = ["x", "v", "bins", "item"];
            let c1 = canonicalize(&parse(s, &vars).unwrap());
            let c2 = canonicalize(&parse(&c1, &vars).unwrap());
            assert_eq!(c1, c2, "{s}");
        }
    }

    #[test]
    fn negative_constants_round_trip() {
        let e = Expr::binary(BinOp::Add, Expr::var("x"), Expr::Const(-2.5));
        let c = canonicalize(&e);
        let back = parse(&c, &XV).unwrap();
        assert_eq!(canonicalize(&back), c);
    }

    #[test]
    fn subtree_indexing() {
        let e = parse("sin(x) + v*2", &XV).unwrap();
        assert_eq!(e.node_count(), 6);
        assert_eq!(e.subtree(1), Some(&parse("sin(x)", &XV).unwrap()));
        assert_eq!(e.subtree(3), Some(&parse("v*2", &XV).unwrap()));
        assert_eq!(e.subtree(6), None);
        let r = e.replace_subtree(3, &Expr::var("x"));
        assert_eq!(canonicalize(&r), canon("sin(x) + x"));
        let r = e.replace_subtree(2, &Expr::Const(1.0));
        assert_eq!(canonicalize(&r), canon("sin(1) + v*2"));
    }

    #[test]
    fn variables_listed_once() {
        let e = parse("x*x + v", &XV).unwrap();
        assert_eq!(e.variables(), vec!["v".to_string(), "x".to_string()]);
    }
}
