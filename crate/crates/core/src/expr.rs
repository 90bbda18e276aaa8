//! Closed-form scalar fields in `x1, x2` with symbolic first and second derivatives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

use Expr::*;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Parse { pos: self.pos, msg: msg.to_string() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && matches!(self.src[self.pos], b' ' | b'\t' | b'\n' | b'\r') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected '{}'", c as char))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Add(b(lhs), b(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Sub(b(lhs), b(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Mul(b(lhs), b(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Div(b(lhs), b(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Neg(b(self.factor()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.factor()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let at = self.pos;
            let ex = self.factor()?;
            match ex.constant() {
                Some(p) => Ok(Pow(b(base), p)),
                None => Err(Error::Parse { pos: at, msg: "exponent must be constant".into() }),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                match word {
                    "x1" => Ok(Var(0)),
                    "x2" => Ok(Var(1)),
                    "sin" | "cos" | "exp" => {
                        self.expect(b'(')?;
                        let e = self.expr()?;
                        self.expect(b')')?;
                        Ok(match word {
                            "sin" => Sin(b(e)),
                            "cos" => Cos(b(e)),
                            _ => Exp(b(e)),
                        })
                    }
                    _ => {
                        self.pos = start;
                        self.err(&format!("unknown identifier '{word}'"))
                    }
                }
            }
            Some(_) => self.err("unexpected character"),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let int = digits(self);
        let mut frac = false;
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            frac = digits(self);
        }
        if !int && !frac {
            self.pos = start;
            return self.err("malformed number");
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = save;
                return self.err("malformed exponent");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Num).or_else(|_| self.err("malformed number"))
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        Ok(e.simplify())
    }

    /// Value when the expression does not depend on `x1, x2`.
    pub fn constant(&self) -> Option<f64> {
        if self.has_var() {
            None
        } else {
            Some(self.eval::<f64>(&[0.0, 0.0]))
        }
    }

    fn has_var(&self) -> bool {
        match self {
            Num(_) => false,
            Var(_) => true,
            Neg(a) | Pow(a, _) | Sin(a) | Cos(a) | Exp(a) => a.has_var(),
            Add(a, c) | Sub(a, c) | Mul(a, c) | Div(a, c) => a.has_var() || c.has_var(),
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S; 2]) -> S {
        match self {
            Num(v) => S::c(*v),
            Var(i) => x[*i],
            Neg(a) => -a.eval(x),
            Add(a, c) => a.eval(x) + c.eval(x),
            Sub(a, c) => a.eval(x) - c.eval(x),
            Mul(a, c) => a.eval(x) * c.eval(x),
            Div(a, c) => a.eval(x) / c.eval(x),
            Pow(a, p) => {
                let v = a.eval(x);
                if p.fract() == 0.0 && p.abs() <= 64.0 {
                    v.powi(*p as i32)
                } else {
                    v.powf(S::c(*p))
                }
            }
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            Exp(a) => a.eval(x).exp(),
        }
    }

    /// Symbolic partial derivative with respect to `x1` (`i = 0`) or `x2` (`i = 1`).
    pub fn diff(&self, i: usize) -> Expr {
        let d = match self {
            Num(_) => Num(0.0),
            Var(j) => Num(if *j == i { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.diff(i))),
            Add(a, c) => Add(b(a.diff(i)), b(c.diff(i))),
            Sub(a, c) => Sub(b(a.diff(i)), b(c.diff(i))),
            Mul(a, c) => Add(b(Mul(b(a.diff(i)), c.clone())), b(Mul(a.clone(), b(c.diff(i))))),
            Div(a, c) => Div(
                b(Sub(b(Mul(b(a.diff(i)), c.clone())), b(Mul(a.clone(), b(c.diff(i)))))),
                b(Pow(c.clone(), 2.0)),
            ),
            Pow(a, p) => Mul(b(Mul(b(Num(*p)), b(Pow(a.clone(), p - 1.0)))), b(a.diff(i))),
            Sin(a) => Mul(b(Cos(a.clone())), b(a.diff(i))),
            Cos(a) => Neg(b(Mul(b(Sin(a.clone())), b(a.diff(i))))),
            Exp(a) => Mul(b(Exp(a.clone())), b(a.diff(i))),
        };
        d.simplify()
    }

    /// Constant folding and removal of neutral elements.
    pub fn simplify(&self) -> Expr {
        
        match self {
            Num(v) => Num(*v),
            Var(i) => Var(*i),
            Neg(a) => match a.simplify() {
                Num(v) => Num(-v),
                Neg(inner) => *inner,
                e => Neg(b(e)),
            },
            Add(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x + y),
                (Num(z), e) | (e, Num(z)) if z == 0.0 => e,
                (x, Neg(y)) => Sub(b(x), y),
                (x, y) => Add(b(x), b(y)),
            },
            Sub(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x - y),
                (e, Num(z)) if z == 0.0 => e,
                (Num(z), e) if z == 0.0 => Neg(b(e)),
                (x, Neg(y)) => Add(b(x), y),
                (x, y) => Sub(b(x), b(y)),
            },
            Mul(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x * y),
                (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
                (Num(o), e) | (e, Num(o)) if o == 1.0 => e,
                (Num(m), e) | (e, Num(m)) if m == -1.0 => Neg(b(e)),
                (Num(x), Mul(l, r)) if matches!(*l, Num(_)) => {
                    let Num(y) = *l else { unreachable!() };
                    Mul(b(Num(x * y)), r)
                }
                (x, y) => Mul(b(x), b(y)),
            },
            Div(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x / y),
                (Num(z), _) if z == 0.0 => Num(0.0),
                (e, Num(o)) if o == 1.0 => e,
                (x, y) => Div(b(x), b(y)),
            },
            Pow(a, p) => match (a.simplify(), *p) {
                (Num(x), p) => Num(x.powf(p)),
                (_, p) if p == 0.0 => Num(1.0),
                (e, p) if p == 1.0 => e,
                (Pow(inner, q), p) if p.fract() == 0.0 && q.fract() == 0.0 => Pow(inner, p * q),
                (e, p) => Pow(b(e), p),
            },
            Sin(a) => match a.simplify() {
                Num(v) => Num(v.sin()),
                e => Sin(b(e)),
            },
            Cos(a) => match a.simplify() {
                Num(v) => Num(v.cos()),
                e => Cos(b(e)),
            },
            Exp(a) => match a.simplify() {
                Num(v) => Num(v.exp()),
                e => Exp(b(e)),
            },
        }
    }
}

fn fmt_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v < 0.0 {
        write!(f, "(0-{})", -v)
    } else {
        write!(f, "{v:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num(v) => fmt_num(*v, f),
            Var(i) => write!(f, "x{}", i + 1),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, c) => write!(f, "({a} + {c})"),
            Sub(a, c) => write!(f, "({a} - {c})"),
            Mul(a, c) => write!(f, "({a} * {c})"),
            Div(a, c) => write!(f, "({a} / {c})"),
            Pow(a, p) => {
                write!(f, "({a}^")?;
                fmt_num(*p, f)?;
                write!(f, ")")
            }
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Exp(a) => write!(f, "exp({a})"),
        }
    }
}

/// A parsed field with its gradient and Hessian expressions.
#[derive(Debug, Clone)]
pub struct ExprField {
    pub source: String,
    pub f: Expr,
    pub grad: [Expr; 2],
    pub hess: [[Expr; 2]; 2],
}

impl ExprField {
    pub fn parse(src: &str) -> Result<Self> {
        let f = Expr::parse(src)?;
        let g0 = f.diff(0);
        let g1 = f.diff(1);
        let h00 = g0.diff(0);
        let h01 = g0.diff(1);
        let h11 = g1.diff(1);
        Ok(Self { source: src.to_string(), f, grad: [g0, g1], hess: [[h00, h01.clone()], [h01, h11]] })
    }
}
