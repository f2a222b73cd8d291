use super::{BinOp, Expr};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable {0:?}")]
    Unbound(String),
    #[error("binding {name:?} has length {len}, expected {expected}")]
    LengthMismatch {
        name: String,
        len: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Variable bindings. Vector bindings share one length; scalars broadcast.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    bindings: BTreeMap<String, Binding>,
    len: Option<usize>,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(mut self, name: &str, value: f64) -> Self {
        self.bindings.insert(name.to_string(), Binding::Scalar(value));
        self
    }

    pub fn vector(mut self, name: &str, values: Vec<f64>) -> Result<Self, EvalError> {
        match self.len {
            Some(expected) if expected != values.len() => {
                return Err(EvalError::LengthMismatch {
                    name: name.to_string(),
                    len: values.len(),
                    expected,
                })
            }
            _ => self.len = Some(values.len()),
        }
        self.bindings.insert(name.to_string(), Binding::Vector(values));
        Ok(self)
    }

    /// Broadcast length: the shared vector length, or 1 if all bindings are scalar.
    pub fn len(&self) -> usize {
        self.len.unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.bindings.get(name)
    }
}

enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Value {
    fn map(self, f: impl Fn(f64) -> f64) -> Value {
        match self {
            Value::Scalar(x) => Value::Scalar(f(x)),
            Value::Vector(mut v) => {
                v.iter_mut().for_each(|x| *x = f(*x));
                Value::Vector(v)
            }
        }
    }

    fn zip(self, other: Value, f: impl Fn(f64, f64) -> f64) -> Value {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(f(a, b)),
            (Value::Scalar(a), Value::Vector(mut b)) => {
                b.iter_mut().for_each(|y| *y = f(a, *y));
                Value::Vector(b)
            }
            (Value::Vector(mut a), Value::Scalar(b)) => {
                a.iter_mut().for_each(|x| *x = f(*x, b));
                Value::Vector(a)
            }
            (Value::Vector(mut a), Value::Vector(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x = f(*x, y));
                Value::Vector(a)
            }
        }
    }
}

fn apply(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
    }
}

fn eval_node(expr: &Expr, ctx: &EvalContext) -> Result<Value, EvalError> {
    Ok(match expr {
        Expr::Const(c) => Value::Scalar(*c),
        Expr::Var(name) => match ctx.get(name) {
            Some(Binding::Scalar(x)) => Value::Scalar(*x),
            Some(Binding::Vector(v)) => Value::Vector(v.clone()),
            None => return Err(EvalError::Unbound(name.clone())),
        },
        Expr::Neg(e) => eval_node(e, ctx)?.map(|x| -x),
        Expr::Call(f, e) => eval_node(e, ctx)?.map(|x| f.apply(x)),
        Expr::Binary(op, l, r) => {
            let a = eval_node(l, ctx)?;
            let b = eval_node(r, ctx)?;
            let op = *op;
            a.zip(b, move |x, y| apply(op, x, y))
        }
    })
}

/// Elementwise evaluation over the context's broadcast length. Domain
/// violations (division by zero, log of non-positive, overflow) come back as
/// non-finite elements rather than errors.
pub fn evaluate(expr: &Expr, ctx: &EvalContext) -> Result<Vec<f64>, EvalError> {
    Ok(match eval_node(expr, ctx)? {
        Value::Scalar(x) => vec![x; ctx.len()],
        Value::Vector(v) => v,
    })
}
