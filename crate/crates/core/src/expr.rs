//! A small expression language for scenario configs and model files.
//!
//! Grammar: floating literals, `pi`, named variables, `+ - * / ^` (constant
//! exponent), unary minus, and the functions `sin cos exp sqrt bump`.
//! `bump(x)` is the standard smooth cutoff `exp(1 - 1/(1-x^2))` for |x| < 1
//! and 0 outside, normalized so `bump(0) = 1`.
//!
//! Expressions differentiate symbolically, which is what makes analytic
//! gradients and Hessians of configured Hamiltonians possible. Third
//! derivatives of `bump` are not implemented; nothing in the crate needs them.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Bump,
    BumpD1,
    BumpD2,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Neg(Arc<Node>),
    Pow(Arc<Node>, f64),
    Call(Func, Arc<Node>),
}

fn bump_raw(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

fn bump_d1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        let u = 1.0 - x * x;
        bump_raw(x) * (-2.0 * x / (u * u))
    } else {
        0.0
    }
}

fn bump_d2(x: f64) -> f64 {
    if x.abs() < 1.0 {
        let u = 1.0 - x * x;
        bump_raw(x) * (4.0 * x * x - 2.0 * u * u - 8.0 * x * x * u) / (u * u * u * u)
    } else {
        0.0
    }
}

impl Node {
    fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Var(i) => vals[*i],
            Node::Add(a, b) => a.eval(vals) + b.eval(vals),
            Node::Sub(a, b) => a.eval(vals) - b.eval(vals),
            Node::Mul(a, b) => a.eval(vals) * b.eval(vals),
            Node::Div(a, b) => a.eval(vals) / b.eval(vals),
            Node::Neg(a) => -a.eval(vals),
            Node::Pow(a, p) => {
                let base = a.eval(vals);
                if *p == p.round() && p.abs() < 64.0 {
                    base.powi(*p as i32)
                } else {
                    base.powf(*p)
                }
            }
            Node::Call(f, a) => {
                let x = a.eval(vals);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Sqrt => x.sqrt(),
                    Func::Bump => bump_raw(x),
                    Func::BumpD1 => bump_d1(x),
                    Func::BumpD2 => bump_d2(x),
                }
            }
        }
    }

    fn constant(&self) -> Option<f64> {
        if let Node::Num(c) = self {
            Some(*c)
        } else {
            None
        }
    }

    fn diff(&self, var: usize) -> Result<Node> {
        Ok(match self {
            Node::Num(_) => Node::Num(0.0),
            Node::Var(i) => Node::Num(if *i == var { 1.0 } else { 0.0 }),
            Node::Add(a, b) => add(a.diff(var)?, b.diff(var)?),
            Node::Sub(a, b) => sub(a.diff(var)?, b.diff(var)?),
            Node::Mul(a, b) => add(
                mul(a.diff(var)?, (**b).clone()),
                mul((**a).clone(), b.diff(var)?),
            ),
            Node::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.diff(var)?, (**b).clone()),
                    mul((**a).clone(), b.diff(var)?),
                );
                div(num, Node::Pow(b.clone(), 2.0))
            }
            Node::Neg(a) => neg(a.diff(var)?),
            Node::Pow(a, p) => {
                if *p == 0.0 {
                    Node::Num(0.0)
                } else {
                    mul(
                        mul(Node::Num(*p), Node::Pow(a.clone(), p - 1.0)),
                        a.diff(var)?,
                    )
                }
            }
            Node::Call(f, a) => {
                let inner = a.diff(var)?;
                let outer = match f {
                    Func::Sin => Node::Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Node::Call(Func::Sin, a.clone())),
                    Func::Exp => Node::Call(Func::Exp, a.clone()),
                    Func::Sqrt => div(
                        Node::Num(0.5),
                        Node::Call(Func::Sqrt, a.clone()),
                    ),
                    Func::Bump => Node::Call(Func::BumpD1, a.clone()),
                    Func::BumpD1 => Node::Call(Func::BumpD2, a.clone()),
                    Func::BumpD2 => {
                        return Err(Error::ExprParse(
                            "third derivative of bump is not implemented".into(),
                        ))
                    }
                };
                mul(outer, inner)
            }
        })
    }
}

// Folding constructors: keep derivative trees from ballooning.
fn add(a: Node, b: Node) -> Node {
    match (a.constant(), b.constant()) {
        (Some(x), Some(y)) => Node::Num(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Add(Arc::new(a), Arc::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a.constant(), b.constant()) {
        (Some(x), Some(y)) => Node::Num(x - y),
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => Node::Sub(Arc::new(a), Arc::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a.constant(), b.constant()) {
        (Some(x), Some(y)) => Node::Num(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => Node::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Node::Mul(Arc::new(a), Arc::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a.constant(), b.constant()) {
        (Some(x), Some(y)) => Node::Num(x / y),
        (Some(0.0), _) => Node::Num(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Div(Arc::new(a), Arc::new(b)),
    }
}

fn neg(a: Node) -> Node {
    match a.constant() {
        Some(x) => Node::Num(-x),
        None => Node::Neg(Arc::new(a)),
    }
}

/// A parsed scalar expression over a fixed, named variable list.
#[derive(Clone)]
pub struct ScalarExpr {
    src: String,
    vars: Vec<String>,
    root: Arc<Node>,
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarExpr({:?} over {:?})", self.src, self.vars)
    }
}

impl ScalarExpr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<ScalarExpr> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            vars,
            src,
        };
        let root = p.expression()?;
        if p.pos != p.tokens.len() {
            return Err(Error::ExprParse(format!(
                "unexpected trailing input at token {} in `{}`",
                p.pos, src
            )));
        }
        Ok(ScalarExpr {
            src: src.to_string(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root: Arc::new(root),
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        debug_assert_eq!(vals.len(), self.vars.len());
        self.root.eval(vals)
    }

    /// Partial derivative with respect to the `var`-th variable.
    pub fn diff(&self, var: usize) -> Result<ScalarExpr> {
        Ok(ScalarExpr {
            src: format!("d/d{}({})", self.vars[var], self.src),
            vars: self.vars.clone(),
            root: Arc::new(self.root.diff(var)?),
        })
    }

    /// All first partials.
    pub fn gradient(&self) -> Result<Vec<ScalarExpr>> {
        (0..self.vars.len()).map(|i| self.diff(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i + 1 < bytes.len()
                        && ((bytes[i + 1] as char).is_ascii_digit()
                            || bytes[i + 1] == b'+'
                            || bytes[i + 1] == b'-')
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::ExprParse(format!("bad number `{text}`")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::ExprParse(format!(
                    "unexpected character `{other}` in `{src}`"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump_tok(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        match self.bump_tok() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(Error::ExprParse(format!(
                "expected {:?}, got {:?} in `{}`",
                t, got, self.src
            ))),
        }
    }

    fn expression(&mut self) -> Result<Node> {
        let mut node = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    node = add(node, self.term()?);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    node = sub(node, self.term()?);
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut node = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    node = mul(node, self.unary()?);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    node = div(node, self.unary()?);
                }
                _ => return Ok(node),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Token::Minus) = self.peek() {
            self.pos += 1;
            return Ok(neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.pos += 1;
            // exponent must fold to a constant
            let exp = self.unary()?;
            match exp.constant() {
                Some(p) => Ok(Node::Pow(Arc::new(base), p)),
                None => Err(Error::ExprParse(format!(
                    "exponent must be a constant in `{}`",
                    self.src
                ))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.bump_tok() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expression()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "bump" => Func::Bump,
                        other => {
                            return Err(Error::ExprParse(format!(
                                "unknown function `{other}` in `{}`",
                                self.src
                            )))
                        }
                    };
                    self.pos += 1;
                    let arg = self.expression()?;
                    self.expect(Token::RParen)?;
                    Ok(Node::Call(f, Arc::new(arg)))
                } else if name == "pi" {
                    Ok(Node::Num(std::f64::consts::PI))
                } else if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    Ok(Node::Var(idx))
                } else {
                    Err(Error::ExprParse(format!(
                        "unknown identifier `{name}` in `{}` (variables: {:?})",
                        self.src, self.vars
                    )))
                }
            }
            got => Err(Error::ExprParse(format!(
                "unexpected token {:?} in `{}`",
                got, self.src
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_and_evaluates() {
        let e = ScalarExpr::parse("0.5*(x^2 + y^2) - sin(2*pi*x)/3", &["x", "y"]).unwrap();
        let v = e.eval(&[0.25, -1.0]);
        let expect = 0.5 * (0.0625 + 1.0) - (0.5 * std::f64::consts::PI).sin() / 3.0;
        assert_relative_eq!(v, expect, epsilon = 1e-15);
    }

    #[test]
    fn symbolic_derivative_matches_finite_differences() {
        let e = ScalarExpr::parse("exp(x*y) + cos(3*x)^2 - sqrt(x + 2)", &["x", "y"]).unwrap();
        let dx = e.diff(0).unwrap();
        let p = [0.37, -0.61];
        let h = 1e-6;
        let fd = (e.eval(&[p[0] + h, p[1]]) - e.eval(&[p[0] - h, p[1]])) / (2.0 * h);
        assert_relative_eq!(dx.eval(&p), fd, epsilon = 1e-8);
    }

    #[test]
    fn bump_is_smooth_at_support_boundary() {
        let e = ScalarExpr::parse("bump(x/0.5)", &["x"]).unwrap();
        assert_relative_eq!(e.eval(&[0.0]), 1.0);
        assert_eq!(e.eval(&[0.5]), 0.0);
        assert_eq!(e.eval(&[0.75]), 0.0);
        let d1 = e.diff(0).unwrap();
        let d2 = d1.diff(0).unwrap();
        // derivatives vanish continuously at the cutoff, and never produce NaN
        assert_eq!(d1.eval(&[0.5]), 0.0);
        assert_eq!(d2.eval(&[0.5]), 0.0);
        assert!(d1.eval(&[0.49999]).is_finite());
        assert!(d2.eval(&[0.49999]).is_finite());
        // second derivative against finite differences of the first
        let p = 0.21;
        let h = 1e-6;
        let fd = (d1.eval(&[p + h]) - d1.eval(&[p - h])) / (2.0 * h);
        assert_relative_eq!(d2.eval(&[p]), fd, epsilon = 1e-6, max_relative = 1e-6);
    }

    #[test]
    fn third_bump_derivative_is_rejected() {
        let e = ScalarExpr::parse("bump(x)", &["x"]).unwrap();
        let d3 = e.diff(0).and_then(|d| d.diff(0)).and_then(|d| d.diff(0));
        assert!(d3.is_err());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(ScalarExpr::parse("sin(x", &["x"]).is_err());
        assert!(ScalarExpr::parse("x + * y", &["x", "y"]).is_err());
        assert!(ScalarExpr::parse("foo(x)", &["x"]).is_err());
        assert!(ScalarExpr::parse("x + z", &["x", "y"]).is_err());
        assert!(ScalarExpr::parse("x ^ y", &["x", "y"]).is_err());
    }
}
