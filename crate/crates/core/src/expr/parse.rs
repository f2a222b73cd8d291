use super::{BinOp, Expr, Func, MAX_DEPTH, MAX_NODES};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    InvalidNumber(String),
    UnknownVariable(String),
    UnknownFunction(String),
    DepthLimit,
    SizeLimit,
}

/// Parse failure with the byte offset at which it was detected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => {
                write!(f, "syntax error at offset {}: unexpected character {c:?}", self.offset)
            }
            ParseErrorKind::UnexpectedToken(t) => {
                write!(f, "syntax error at offset {}: unexpected {t}", self.offset)
            }
            ParseErrorKind::UnexpectedEnd => {
                write!(f, "syntax error at offset {}: unexpected end of input", self.offset)
            }
            ParseErrorKind::InvalidNumber(s) => {
                write!(f, "syntax error at offset {}: invalid number {s:?}", self.offset)
            }
            ParseErrorKind::UnknownVariable(v) => {
                write!(f, "unknown variable {v:?} at offset {}", self.offset)
            }
            ParseErrorKind::UnknownFunction(v) => {
                write!(f, "unknown function {v:?} at offset {}", self.offset)
            }
            ParseErrorKind::DepthLimit => {
                write!(f, "expression deeper than {MAX_DEPTH} (offset {})", self.offset)
            }
            ParseErrorKind::SizeLimit => {
                write!(f, "expression has more than {MAX_NODES} nodes (offset {})", self.offset)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Op(c) => format!("operator {c:?}"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'*' if bytes.get(i + 1) == Some(&b'*') => {
                out.push((Tok::Op('^'), i));
                i += 2;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| ParseError {
                    kind: ParseErrorKind::InvalidNumber(lit.to_string()),
                    offset: start,
                })?;
                out.push((Tok::Num(value), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('\u{fffd}');
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedChar(ch),
                    offset: i,
                });
            }
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

// Recursion guard for the descent itself; tree depth is checked separately.
const MAX_NESTING: usize = 8 * MAX_DEPTH;

struct Parser<'a, S> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [S],
    nesting: usize,
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ParseError {
        let kind = match self.peek() {
            Tok::End => ParseErrorKind::UnexpectedEnd,
            t => ParseErrorKind::UnexpectedToken(t.describe()),
        };
        ParseError {
            kind,
            offset: self.offset(),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(ParseError {
                kind: ParseErrorKind::DepthLimit,
                offset: self.offset(),
            });
        }
        Ok(())
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    // unary := '-' unary | '+' unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let out = match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Expr::neg(self.unary()?)
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()?
            }
            _ => self.power()?,
        };
        self.nesting -= 1;
        Ok(out)
    }

    // power := atom ('^' unary)?
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    // atom := number | ident | ident '(' expr ')' | '(' expr ')'
    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let (_, at) = self.bump();
                if let Tok::LParen = self.peek() {
                    let func = Func::from_name(&name).ok_or(ParseError {
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                        offset: at,
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::call(func, arg))
                } else if self.vars.iter().any(|v| v.as_ref() == name) {
                    Ok(Expr::Var(name))
                } else {
                    Err(ParseError {
                        kind: ParseErrorKind::UnknownVariable(name),
                        offset: at,
                    })
                }
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Parse `text` into an expression over `allowed_vars`.
pub fn parse<S: AsRef<str>>(text: &str, allowed_vars: &[S]) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        vars: allowed_vars,
        nesting: 0,
    };
    let ast = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected());
    }
    if ast.node_count() > MAX_NODES {
        return Err(ParseError {
            kind: ParseErrorKind::SizeLimit,
            offset: 0,
        });
    }
    if ast.depth() > MAX_DEPTH {
        return Err(ParseError {
            kind: ParseErrorKind::DepthLimit,
            offset: 0,
        });
    }
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use super::*;

    const XV: [&str; 2] = ["x", "v"];

    #[test]
    fn base_case() {
        let e = parse("x + v", &XV).unwrap();
        assert_eq!(e, Expr::binary(BinOp::Add, Expr::var("x"), Expr::var("v")));
    }

    #[test]
    fn oscillator_style_expression() {
        let e = parse("1.2*x + 0.8*v + sin(x)", &XV).unwrap();
        assert_eq!(e.node_count(), 10);
    }

    #[test]
    fn incomplete_input_reports_offset() {
        let err = parse("x +", &XV).unwrap_err();
        assert_eq!(err.offset, 3);
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
        assert!(err.to_string().contains("offset 3"));
    }

    #[test]
    fn precedence_and_associativity() {
        let c = |s: &str| super::super::canonicalize(&parse(s, &XV).unwrap());
        assert_eq!(c("-x^2"), "(-(x ^ 2))");
        assert_eq!(c("x^v^2"), "(x ^ (v ^ 2))");
        assert_eq!(c("-x*v"), "((-x) * v)");
        assert_eq!(c("x - v - 1"), "((x - v) - 1)");
        assert_eq!(c("x**2"), "(x ^ 2)");
        assert_eq!(c("2^-x"), "(2 ^ (-x))");
        assert_eq!(c("1e-6 + x"), "(1e-6 + x)");
    }

    #[test]
    fn unknown_names() {
        let err = parse("x + y", &XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownVariable("y".into()));
        assert_eq!(err.offset, 4);
        let err = parse("foo(x)", &XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownFunction("foo".into()));
        let err = parse("sin", &XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownVariable("sin".into()));
    }

    #[test]
    fn stray_characters() {
        let err = parse("x $ v", &XV).unwrap_err();
        assert_eq!(err.offset, 2);
        let err = parse("(x + v", &XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
        let err = parse("x v", &XV).unwrap_err();
        assert_eq!(err.offset, 2);
        let err = parse("1.2.3", &XV).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::InvalidNumber(_)));
    }

    #[test]
    fn limits_are_enforced() {
        let deep = format!("{}x{}", "sin(".repeat(40), ")".repeat(40));
        assert_eq!(parse(&deep, &XV).unwrap_err().kind, ParseErrorKind::DepthLimit);
        let wide = vec!["x"; 300].join(" + ");
        assert_eq!(parse(&wide, &XV).unwrap_err().kind, ParseErrorKind::SizeLimit);
        let nested = format!("{}x{}", "(".repeat(1000), ")".repeat(1000));
        assert_eq!(parse(&nested, &XV).unwrap_err().kind, ParseErrorKind::DepthLimit);
    }
}
