//! Operator expressions over a [`FockSpace`].
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' integer)?
//! atom   := number | symbol | '(' expr ')' | ':' expr ':'
//! ```
//!
//! Symbols: `P`, `Q`, `N`, `a`, `ad` (optionally followed by a 1-based mode
//! index, required on multi-mode spaces), `J1`..`J3` (angular momentum on a
//! three-mode space), `I` (identity) and `i` (imaginary unit).
//!
//! Outside colons, products are products of the truncated matrices. Inside
//! `:...:` the enclosed expression is treated as a classical polynomial in
//! `z_j = (q_j + i p_j)/sqrt 2` and its conjugate, and quantised in normal
//! order (`zbar^m z^n -> (a^dagger)^m a^n`). So `"P^2+Q^2"` is
//! `2N + 1` while `":P^2+Q^2:"` is `2N`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock::{angular_momentum, build_ladder, canonical_ops, number_op, FockSpace};
use crate::operator::{OperatorMatrix, C64};

#[derive(Clone, Debug, PartialEq)]
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
    Colon,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1
            }
            '-' => {
                out.push(Token::Minus);
                i += 1
            }
            '*' => {
                out.push(Token::Star);
                i += 1
            }
            '/' => {
                out.push(Token::Slash);
                i += 1
            }
            '^' => {
                out.push(Token::Caret);
                i += 1
            }
            '(' => {
                out.push(Token::LParen);
                i += 1
            }
            ')' => {
                out.push(Token::RParen);
                i += 1
            }
            ':' => {
                out.push(Token::Colon);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // exponent part
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
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| Error::Expression(format!("bad number `{s}`")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Expression(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SymbolKind {
    P,
    Q,
    N,
    A,
    Ad,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Imag,
    Identity,
    Mode(SymbolKind, Option<usize>),
    Angular(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
    Normal(Box<Node>),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    in_normal: bool,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            match self.next() {
                Some(Token::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 => {
                    return Ok(Node::Pow(Box::new(base), v as u32));
                }
                other => {
                    return Err(Error::Expression(format!(
                        "exponent must be a small non-negative integer, found {other:?}"
                    )))
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(Error::Expression("missing `)`".into())),
                }
            }
            Some(Token::Colon) => {
                if self.in_normal {
                    return Err(Error::Expression("nested normal ordering `:...:`".into()));
                }
                self.in_normal = true;
                let inner = self.expr()?;
                self.in_normal = false;
                match self.next() {
                    Some(Token::Colon) => Ok(Node::Normal(Box::new(inner))),
                    _ => Err(Error::Expression("unterminated `:...:`".into())),
                }
            }
            Some(Token::Ident(name)) => parse_symbol(&name),
            Some(t) => Err(Error::Expression(format!("unexpected token {t:?}"))),
            None => Err(Error::Expression("unexpected end of expression".into())),
        }
    }
}

fn parse_symbol(name: &str) -> Result<Node> {
    let split = name
        .find(|c: char| c.is_ascii_digit())
        .unwrap_or(name.len());
    let (head, digits) = name.split_at(split);
    let index = if digits.is_empty() {
        None
    } else {
        let k: usize = digits
            .parse()
            .map_err(|_| Error::Expression(format!("bad mode index in `{name}`")))?;
        if k == 0 {
            return Err(Error::Expression(format!(
                "mode indices are 1-based (`{name}`)"
            )));
        }
        Some(k - 1)
    };
    let kind = match head {
        "P" => SymbolKind::P,
        "Q" => SymbolKind::Q,
        "N" => SymbolKind::N,
        "a" => SymbolKind::A,
        "ad" => SymbolKind::Ad,
        "J" => {
            return match index {
                Some(k) if k < 3 => Ok(Node::Angular(k)),
                _ => Err(Error::Expression(format!(
                    "angular momentum needs a component 1..3 (`{name}`)"
                ))),
            }
        }
        "I" if index.is_none() => return Ok(Node::Identity),
        "i" if index.is_none() => return Ok(Node::Imag),
        _ => return Err(Error::Expression(format!("unknown symbol `{name}`"))),
    };
    Ok(Node::Mode(kind, index))
}

/// A parsed operator expression, independent of any space.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = tokenize(text)?;
        if tokens.is_empty() {
            return Err(Error::Expression("empty expression".into()));
        }
        let mut parser = Parser {
            tokens,
            pos: 0,
            in_normal: false,
        };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!(
                "trailing input after position {}",
                parser.pos
            )));
        }
        Ok(Self {
            root,
            source: text.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn evaluate(&self, space: &FockSpace) -> Result<OperatorMatrix> {
        let mut ctx = Context::new(space);
        match ctx.eval(&self.root)? {
            Value::Scalar(s) => Ok(OperatorMatrix::identity(space.dim()).scale(s)),
            Value::Op(op) => Ok(op),
        }
    }
}

/// Parses and evaluates in one go.
pub fn parse_operator(space: &FockSpace, text: &str) -> Result<OperatorMatrix> {
    Expr::parse(text)?.evaluate(space)
}

enum Value {
    Scalar(C64),
    Op(OperatorMatrix),
}

struct Context<'a> {
    space: &'a FockSpace,
    ladders: Vec<Option<(OperatorMatrix, OperatorMatrix)>>,
}

/// Exponents `[m_0, n_0, m_1, n_1, ..]` of `zbar_j^m_j z_j^n_j`.
type Monomial = Vec<u32>;

#[derive(Clone, Debug, Default)]
struct Poly(BTreeMap<Monomial, C64>);

impl Poly {
    fn constant(modes: usize, c: C64) -> Self {
        let mut m = BTreeMap::new();
        m.insert(vec![0; 2 * modes], c);
        Poly(m)
    }

    fn var(modes: usize, mode: usize, conj: bool, c: C64) -> Self {
        let mut key = vec![0; 2 * modes];
        key[2 * mode + usize::from(!conj)] = 1;
        let mut m = BTreeMap::new();
        m.insert(key, c);
        Poly(m)
    }

    fn add(&self, other: &Self, sign: f64) -> Self {
        let mut out = self.0.clone();
        for (k, v) in &other.0 {
            *out.entry(k.clone()).or_default() += v * sign;
        }
        out.retain(|_, v| *v != C64::new(0.0, 0.0));
        Poly(out)
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out: BTreeMap<Monomial, C64> = BTreeMap::new();
        for (ka, va) in &self.0 {
            for (kb, vb) in &other.0 {
                let key: Monomial = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                *out.entry(key).or_default() += va * vb;
            }
        }
        out.retain(|_, v| *v != C64::new(0.0, 0.0));
        Poly(out)
    }

    fn scale(&self, c: C64) -> Self {
        Poly(self.0.iter().map(|(k, v)| (k.clone(), v * c)).collect())
    }

    fn as_constant(&self) -> Option<C64> {
        match self.0.len() {
            0 => Some(C64::new(0.0, 0.0)),
            1 => {
                let (k, v) = self.0.iter().next().unwrap();
                k.iter().all(|&e| e == 0).then_some(*v)
            }
            _ => None,
        }
    }
}

impl<'a> Context<'a> {
    fn new(space: &'a FockSpace) -> Self {
        Self {
            space,
            ladders: vec![None; space.modes()],
        }
    }

    fn resolve_mode(&self, index: Option<usize>) -> Result<usize> {
        match index {
            Some(k) => {
                self.space.check_mode(k)?;
                Ok(k)
            }
            None if self.space.modes() == 1 => Ok(0),
            None => Err(Error::Expression(
                "multi-mode space: symbols need a mode index (e.g. P2)".into(),
            )),
        }
    }

    fn ladder(&mut self, mode: usize) -> Result<&(OperatorMatrix, OperatorMatrix)> {
        if self.ladders[mode].is_none() {
            self.ladders[mode] = Some(build_ladder(self.space, mode)?);
        }
        Ok(self.ladders[mode].as_ref().unwrap())
    }

    fn eval(&mut self, node: &Node) -> Result<Value> {
        Ok(match node {
            Node::Num(v) => Value::Scalar(C64::new(*v, 0.0)),
            Node::Imag => Value::Scalar(C64::new(0.0, 1.0)),
            Node::Identity => Value::Op(OperatorMatrix::identity(self.space.dim())),
            Node::Mode(kind, index) => {
                let mode = self.resolve_mode(*index)?;
                Value::Op(match kind {
                    SymbolKind::P => canonical_ops(self.space, mode)?.0,
                    SymbolKind::Q => canonical_ops(self.space, mode)?.1,
                    SymbolKind::N => number_op(self.space, mode)?,
                    SymbolKind::A => self.ladder(mode)?.0.clone(),
                    SymbolKind::Ad => self.ladder(mode)?.1.clone(),
                })
            }
            Node::Angular(k) => {
                let mut j = angular_momentum(self.space)?;
                Value::Op(std::mem::replace(&mut j[*k], OperatorMatrix::zeros(0)))
            }
            Node::Neg(inner) => match self.eval(inner)? {
                Value::Scalar(s) => Value::Scalar(-s),
                Value::Op(op) => Value::Op(-&op),
            },
            Node::Add(l, r) => self.combine(l, r, 1.0)?,
            Node::Sub(l, r) => self.combine(l, r, -1.0)?,
            Node::Mul(l, r) => match (self.eval(l)?, self.eval(r)?) {
                (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a * b),
                (Value::Scalar(s), Value::Op(op)) | (Value::Op(op), Value::Scalar(s)) => {
                    Value::Op(op.scale(s))
                }
                (Value::Op(a), Value::Op(b)) => Value::Op(a.try_mul(&b)?),
            },
            Node::Div(l, r) => {
                let divisor = match self.eval(r)? {
                    Value::Scalar(s) if s.norm() > 0.0 => s,
                    _ => {
                        return Err(Error::Expression(
                            "division only by non-zero scalars".into(),
                        ))
                    }
                };
                match self.eval(l)? {
                    Value::Scalar(s) => Value::Scalar(s / divisor),
                    Value::Op(op) => Value::Op(op.scale(C64::new(1.0, 0.0) / divisor)),
                }
            }
            Node::Pow(base, e) => match self.eval(base)? {
                Value::Scalar(s) => Value::Scalar(s.powu(*e)),
                Value::Op(op) => {
                    let mut acc = OperatorMatrix::identity(op.dim());
                    for _ in 0..*e {
                        acc = acc.try_mul(&op)?;
                    }
                    Value::Op(acc)
                }
            },
            Node::Normal(inner) => {
                let poly = self.classical(inner)?;
                Value::Op(self.normal_order(&poly)?)
            }
        })
    }

    fn combine(&mut self, l: &Node, r: &Node, sign: f64) -> Result<Value> {
        let dim = self.space.dim();
        let as_op = |v: Value| match v {
            Value::Scalar(s) => OperatorMatrix::identity(dim).scale(s),
            Value::Op(op) => op,
        };
        Ok(match (self.eval(l)?, self.eval(r)?) {
            (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a + b * sign),
            (a, b) => {
                let (a, b) = (as_op(a), as_op(b));
                Value::Op(if sign > 0.0 {
                    a.try_add(&b)?
                } else {
                    a.try_sub(&b)?
                })
            }
        })
    }

    fn classical(&self, node: &Node) -> Result<Poly> {
        let j = self.space.modes();
        let r = FRAC_1_SQRT_2;
        Ok(match node {
            Node::Num(v) => Poly::constant(j, C64::new(*v, 0.0)),
            Node::Imag => Poly::constant(j, C64::new(0.0, 1.0)),
            Node::Identity => Poly::constant(j, C64::new(1.0, 0.0)),
            Node::Mode(kind, index) => {
                let m = self.resolve_mode(*index)?;
                let zbar = |c| Poly::var(j, m, true, c);
                let z = |c| Poly::var(j, m, false, c);
                match kind {
                    // q = (z + zbar)/sqrt2, p = i (zbar - z)/sqrt2
                    SymbolKind::Q => zbar(C64::new(r, 0.0)).add(&z(C64::new(r, 0.0)), 1.0),
                    SymbolKind::P => zbar(C64::new(0.0, r)).add(&z(C64::new(0.0, r)), -1.0),
                    SymbolKind::N => zbar(C64::new(1.0, 0.0)).mul(&z(C64::new(1.0, 0.0))),
                    SymbolKind::A => z(C64::new(1.0, 0.0)),
                    SymbolKind::Ad => zbar(C64::new(1.0, 0.0)),
                }
            }
            Node::Angular(k) => {
                if j != 3 {
                    return Err(Error::Expression(
                        "angular momentum needs a three-mode space".into(),
                    ));
                }
                let (b, c) = ((k + 1) % 3, (k + 2) % 3);
                // J_k = -i (zbar_b z_c - zbar_c z_b)
                let t1 = Poly::var(j, b, true, C64::new(0.0, -1.0)).mul(&Poly::var(
                    j,
                    c,
                    false,
                    C64::new(1.0, 0.0),
                ));
                let t2 = Poly::var(j, c, true, C64::new(0.0, -1.0)).mul(&Poly::var(
                    j,
                    b,
                    false,
                    C64::new(1.0, 0.0),
                ));
                t1.add(&t2, -1.0)
            }
            Node::Neg(inner) => self.classical(inner)?.scale(C64::new(-1.0, 0.0)),
            Node::Add(l, r) => self.classical(l)?.add(&self.classical(r)?, 1.0),
            Node::Sub(l, r) => self.classical(l)?.add(&self.classical(r)?, -1.0),
            Node::Mul(l, r) => self.classical(l)?.mul(&self.classical(r)?),
            Node::Div(l, r) => {
                let d = self
                    .classical(r)?
                    .as_constant()
                    .filter(|d| d.norm() > 0.0)
                    .ok_or_else(|| Error::Expression("division only by non-zero scalars".into()))?;
                self.classical(l)?.scale(C64::new(1.0, 0.0) / d)
            }
            Node::Pow(base, e) => {
                let b = self.classical(base)?;
                let mut acc = Poly::constant(j, C64::new(1.0, 0.0));
                for _ in 0..*e {
                    acc = acc.mul(&b);
                }
                acc
            }
            Node::Normal(_) => {
                return Err(Error::Expression("nested normal ordering `:...:`".into()))
            }
        })
    }

    fn normal_order(&mut self, poly: &Poly) -> Result<OperatorMatrix> {
        let dim = self.space.dim();
        let modes = self.space.modes();
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for (key, coeff) in &poly.0 {
            // annihilators act first, creators last
            let mut m = DMatrix::<C64>::identity(dim, dim);
            for mode in 0..modes {
                let (a, _) = self.ladder(mode)?;
                for _ in 0..key[2 * mode + 1] {
                    m = a.matrix() * m;
                }
            }
            for mode in 0..modes {
                let (_, ad) = self.ladder(mode)?;
                for _ in 0..key[2 * mode] {
                    m = ad.matrix() * m;
                }
            }
            acc += m * *coeff;
        }
        OperatorMatrix::new(acc)
    }
}
