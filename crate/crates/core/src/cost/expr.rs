//! A small arithmetic language for user-supplied costs.
//!
//! Grammar (lowest precedence first):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 'x' | 'xbar' | ident '[' int ']' | func '(' args ')' | '(' sum ')'
//! func    := exp | log | sqrt | norm | dot
//! ```
//!
//! `x` and `xbar` are vectors; `x[i]` is a component (zero-based). Vectors support
//! `+`, `-`, negation and scaling by a scalar; `norm(v)` and `dot(u, v)` reduce to scalars.

use std::fmt;

use super::dual::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    XBar,
    Comp(Box<Expr>, usize),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Norm,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Scalar,
    Vector,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{text}'")))?;
            out.push(Tok::Num(v));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()[],".contains(ch) {
            out.push(Tok::Sym(ch));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character '{ch}'")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Expression(format!("expected '{c}' at token {}", self.pos)))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| Error::Expression("unexpected end of input".into()))?;
        self.pos += 1;
        let node = match tok {
            Tok::Num(v) => Expr::Num(v),
            Tok::Sym('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                e
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Expr::X,
                "xbar" => Expr::XBar,
                "pi" => Expr::Num(std::f64::consts::PI),
                "exp" | "log" | "sqrt" | "norm" | "dot" => {
                    let func = match name.as_str() {
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sqrt" => Func::Sqrt,
                        "norm" => Func::Norm,
                        _ => Func::Dot,
                    };
                    self.expect('(')?;
                    let mut args = vec![self.sum()?];
                    while self.eat(',') {
                        args.push(self.sum()?);
                    }
                    self.expect(')')?;
                    Expr::Call(func, args)
                }
                other => return Err(Error::Expression(format!("unknown identifier '{other}'"))),
            },
            Tok::Sym(c) => return Err(Error::Expression(format!("unexpected '{c}'"))),
        };
        if self.eat('[') {
            let idx = match self.peek().cloned() {
                Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => v as usize,
                _ => return Err(Error::Expression("index must be a non-negative integer".into())),
            };
            self.pos += 1;
            self.expect(']')?;
            return Ok(Expr::Comp(Box::new(node), idx));
        }
        Ok(node)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { toks: lex(src)?, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expression(format!("trailing input at token {}", p.pos)));
        }
        if e.kind()? != Kind::Scalar {
            return Err(Error::Expression("cost expression must be scalar-valued".into()));
        }
        Ok(e)
    }

    fn kind(&self) -> Result<Kind> {
        use Kind::*;
        Ok(match self {
            Expr::Num(_) => Scalar,
            Expr::X | Expr::XBar => Vector,
            Expr::Comp(e, _) => {
                if e.kind()? != Vector {
                    return Err(Error::Expression("indexing a scalar".into()));
                }
                Scalar
            }
            Expr::Neg(e) => e.kind()?,
            Expr::Bin(op, a, b) => {
                let (ka, kb) = (a.kind()?, b.kind()?);
                match op {
                    Op::Add | Op::Sub if ka == kb => ka,
                    Op::Add | Op::Sub => {
                        return Err(Error::Expression("adding a scalar to a vector".into()))
                    }
                    Op::Mul if ka == Vector && kb == Vector => {
                        return Err(Error::Expression("use dot(u, v) for vector products".into()))
                    }
                    Op::Mul => {
                        if ka == Vector || kb == Vector {
                            Vector
                        } else {
                            Scalar
                        }
                    }
                    Op::Div | Op::Pow if kb == Vector => {
                        return Err(Error::Expression("vector in denominator or exponent".into()))
                    }
                    Op::Div => ka,
                    Op::Pow if ka == Vector => {
                        return Err(Error::Expression("vector raised to a power".into()))
                    }
                    Op::Pow => Scalar,
                }
            }
            Expr::Call(f, args) => {
                let kinds = args.iter().map(|a| a.kind()).collect::<Result<Vec<_>>>()?;
                match (f, kinds.as_slice()) {
                    (Func::Exp | Func::Log | Func::Sqrt, [Scalar]) => Scalar,
                    (Func::Norm, [Vector]) => Scalar,
                    (Func::Dot, [Vector, Vector]) => Scalar,
                    _ => return Err(Error::Expression(format!("bad arguments to {f:?}"))),
                }
            }
        })
    }

    /// Largest component index used, so the dimension can be validated up front.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            Expr::Comp(e, i) => Some(e.max_index().map_or(*i, |j| j.max(*i))),
            Expr::Neg(e) => e.max_index(),
            Expr::Bin(_, a, b) => match (a.max_index(), b.max_index()) {
                (Some(i), Some(j)) => Some(i.max(j)),
                (i, j) => i.or(j),
            },
            Expr::Call(_, args) => args.iter().filter_map(|a| a.max_index()).max(),
            _ => None,
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S], xbar: &[S]) -> S {
        match self.eval_value(x, xbar) {
            Value::S(s) => s,
            Value::V(_) => unreachable!("kind check guarantees a scalar"),
        }
    }

    fn eval_value<S: Scalar>(&self, x: &[S], xbar: &[S]) -> Value<S> {
        match self {
            Expr::Num(v) => Value::S(S::constant(*v)),
            Expr::X => Value::V(x.to_vec()),
            Expr::XBar => Value::V(xbar.to_vec()),
            Expr::Comp(e, i) => match e.eval_value(x, xbar) {
                Value::V(v) => Value::S(v[*i].clone()),
                Value::S(_) => unreachable!(),
            },
            Expr::Neg(e) => match e.eval_value(x, xbar) {
                Value::S(s) => Value::S(-s),
                Value::V(v) => Value::V(v.into_iter().map(|c| -c).collect()),
            },
            Expr::Bin(op, a, b) => {
                let (va, vb) = (a.eval_value(x, xbar), b.eval_value(x, xbar));
                binary(*op, va, vb, b)
            }
            Expr::Call(f, args) => {
                let vals: Vec<Value<S>> = args.iter().map(|a| a.eval_value(x, xbar)).collect();
                match (f, vals.as_slice()) {
                    (Func::Exp, [Value::S(s)]) => Value::S(s.exp()),
                    (Func::Log, [Value::S(s)]) => Value::S(s.ln()),
                    (Func::Sqrt, [Value::S(s)]) => Value::S(s.sqrt()),
                    (Func::Norm, [Value::V(v)]) => Value::S(dot(v, v).sqrt()),
                    (Func::Dot, [Value::V(u), Value::V(v)]) => Value::S(dot(u, v)),
                    _ => unreachable!(),
                }
            }
        }
    }
}

enum Value<S> {
    S(S),
    V(Vec<S>),
}

fn dot<S: Scalar>(u: &[S], v: &[S]) -> S {
    let mut acc = S::constant(0.0);
    for (a, b) in u.iter().zip(v) {
        acc = acc + a.clone() * b.clone();
    }
    acc
}

fn binary<S: Scalar>(op: Op, a: Value<S>, b: Value<S>, b_expr: &Expr) -> Value<S> {
    use Value::*;
    match (op, a, b) {
        (Op::Add, S(p), S(q)) => S(p + q),
        (Op::Sub, S(p), S(q)) => S(p - q),
        (Op::Add, V(p), V(q)) => V(p.into_iter().zip(q).map(|(u, v)| u + v).collect()),
        (Op::Sub, V(p), V(q)) => V(p.into_iter().zip(q).map(|(u, v)| u - v).collect()),
        (Op::Mul, S(p), S(q)) => S(p * q),
        (Op::Mul, S(k), V(v)) | (Op::Mul, V(v), S(k)) => {
            V(v.into_iter().map(|c| c * k.clone()).collect())
        }
        (Op::Div, S(p), S(q)) => S(p / q),
        (Op::Div, V(v), S(k)) => V(v.into_iter().map(|c| c / k.clone()).collect()),
        (Op::Pow, S(p), S(q)) => match b_expr.constant_value() {
            Some(e) => S(p.powf(e)),
            None => S((q * p.ln()).exp()),
        },
        _ => unreachable!("kind check rejects the remaining combinations"),
    }
}

impl Expr {
    fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Neg(e) => e.constant_value().map(|v| -v),
            Expr::Bin(op, a, b) => {
                let (p, q) = (a.constant_value()?, b.constant_value()?);
                Some(match op {
                    Op::Add => p + q,
                    Op::Sub => p - q,
                    Op::Mul => p * q,
                    Op::Div => p / q,
                    Op::Pow => p.powf(q),
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::X => write!(f, "x"),
            Expr::XBar => write!(f, "xbar"),
            Expr::Comp(e, i) => write!(f, "{e}[{i}]"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                    Op::Div => "/",
                    Op::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, args) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                    Func::Norm => "norm",
                    Func::Dot => "dot",
                };
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}
