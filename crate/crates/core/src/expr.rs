//! Arithmetic expressions over lagged signals, used by custom dictionary
//! terms.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | signal | '(' expr ')'
//! signal  := ('y' | 'u') index '[' lag ']'
//! ```
//!
//! `index` and `lag` are positive integers (1-based); `y2[3]` is node 2 three
//! samples back. `^` is right-associative and binds tighter than unary minus,
//! so `-x^2 = -(x^2)`. Whitespace is ignored.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Node,
    Input,
}

/// A lagged sample `y_j(t - lag)` or `u_j(t - lag)`; `index` is 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignalRef {
    pub kind: SignalKind,
    pub index: usize,
    pub lag: usize,
}

impl fmt::Display for SignalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            SignalKind::Node => 'y',
            SignalKind::Input => 'u',
        };
        write!(f, "{c}{}[{}]", self.index + 1, self.lag)
    }
}

impl std::str::FromStr for SignalRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser::new(s);
        p.skip_ws();
        let sig = p.signal()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing characters after signal"));
        }
        match sig {
            Expr::Signal(r) => Ok(r),
            _ => unreachable!("signal() only yields signals"),
        }
    }
}

impl Serialize for SignalRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SignalRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    Signal(SignalRef),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser::new(src);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, lookup: &impl Fn(SignalRef) -> f64) -> f64 {
        match self {
            Expr::Number(v) => *v,
            Expr::Signal(r) => lookup(*r),
            Expr::Neg(a) => -a.eval(lookup),
            Expr::Add(a, b) => a.eval(lookup) + b.eval(lookup),
            Expr::Sub(a, b) => a.eval(lookup) - b.eval(lookup),
            Expr::Mul(a, b) => a.eval(lookup) * b.eval(lookup),
            Expr::Div(a, b) => a.eval(lookup) / b.eval(lookup),
            Expr::Pow(a, b) => a.eval(lookup).powf(b.eval(lookup)),
        }
    }

    /// Every signal referenced, in order of first appearance.
    pub fn signals(&self) -> Vec<SignalRef> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<SignalRef>) {
        match self {
            Expr::Number(_) => {}
            Expr::Signal(r) => {
                if !out.contains(r) {
                    out.push(*r);
                }
            }
            Expr::Neg(a) => a.collect(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Expression {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some('y') | Some('u') => self.signal(),
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(self.error(format!("unexpected character '{c}'"))),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut e = end + 1;
            if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                e += 1;
            }
            if e < bytes.len() && bytes[e].is_ascii_digit() {
                while e < bytes.len() && bytes[e].is_ascii_digit() {
                    e += 1;
                }
                end = e;
            }
        }
        let text = &self.src[start..end];
        let v: f64 = text
            .parse()
            .map_err(|_| self.error(format!("invalid number '{text}'")))?;
        self.pos = end;
        Ok(Expr::Number(v))
    }

    fn integer(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        self.src[start..self.pos]
            .parse()
            .map_err(|_| self.error(format!("{what} out of range")))
    }

    fn signal(&mut self) -> Result<Expr> {
        let kind = match self.peek() {
            Some('y') => SignalKind::Node,
            Some('u') => SignalKind::Input,
            _ => return Err(self.error("expected signal name 'y<i>[lag]' or 'u<j>[lag]'")),
        };
        self.pos += 1;
        let at = self.pos;
        let index = self.integer("signal index")?;
        if index == 0 {
            self.pos = at;
            return Err(self.error("signal indices are 1-based"));
        }
        if !self.eat('[') {
            return Err(self.error("expected '[' after signal name"));
        }
        self.skip_ws();
        let at = self.pos;
        let lag = self.integer("lag")?;
        if lag == 0 {
            self.pos = at;
            return Err(self.error("lag must be at least 1 (current samples are not allowed)"));
        }
        if !self.eat(']') {
            return Err(self.error("expected ']'"));
        }
        Ok(Expr::Signal(SignalRef {
            kind,
            index: index - 1,
            lag,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str) -> f64 {
        Expr::parse(src).unwrap().eval(&|r: SignalRef| match r.kind {
            SignalKind::Node => (r.index + 1) as f64 * 10.0 + r.lag as f64,
            SignalKind::Input => -(r.lag as f64),
        })
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 + 2 * 3"), 7.0);
        assert_eq!(eval("(1 + 2) * 3"), 9.0);
        assert_eq!(eval("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(eval("-2 ^ 2"), -4.0);
        assert_eq!(eval("8 / 4 / 2"), 1.0);
        assert_eq!(eval("10 - 4 - 3"), 3.0);
        assert_eq!(eval("1.5e1 + .5"), 15.5);
    }

    #[test]
    fn signals_resolve() {
        assert_eq!(eval("y2[3]"), 23.0);
        assert_eq!(eval("y1[1]^2 * u1[2]"), 11.0 * 11.0 * -2.0);
        let e = Expr::parse("y1[1] * y1[1] + u2[4]").unwrap();
        assert_eq!(e.signals().len(), 2);
    }

    #[test]
    fn errors_carry_offsets() {
        for (src, offset) in [("1 +", 3), ("y0[1]", 1), ("y1[0]", 3), ("2 * (3", 6), ("x", 0), ("1 2", 2)] {
            match Expr::parse(src) {
                Err(Error::Expression { offset: o, .. }) => assert_eq!(o, offset, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn signal_ref_round_trip() {
        let r: SignalRef = "u3[2]".parse().unwrap();
        assert_eq!(r, SignalRef { kind: SignalKind::Input, index: 2, lag: 2 });
        assert_eq!(r.to_string(), "u3[2]");
    }
}
