//! A small arithmetic expression grammar over `u_i` and `theta_k` with
//! symbolic partial derivatives. Supports `+ - * / ^`, `pow`, `exp`, `log`,
//! numeric literals, and parentheses. Indices are 1-based in the source text
//! (`u_1`, `theta_2`; the underscore is optional).

use std::fmt;

use crate::error::{ImError, Result};

/// A variable the grammar can differentiate against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    /// Auxiliary coordinate (0-based).
    U(usize),
    /// Parameter coordinate (0-based).
    Theta(usize),
}

/// Parsed expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    U(usize),
    Theta(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(ImError::Parse(format!(
                "unexpected trailing input at token {}",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, u: &[f64], theta: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::U(i) => u[*i],
            Expr::Theta(k) => theta[*k],
            Expr::Neg(a) => -a.eval(u, theta),
            Expr::Add(a, b) => a.eval(u, theta) + b.eval(u, theta),
            Expr::Sub(a, b) => a.eval(u, theta) - b.eval(u, theta),
            Expr::Mul(a, b) => a.eval(u, theta) * b.eval(u, theta),
            Expr::Div(a, b) => a.eval(u, theta) / b.eval(u, theta),
            Expr::Pow(a, b) => a.eval(u, theta).powf(b.eval(u, theta)),
            Expr::Exp(a) => a.eval(u, theta).exp(),
            Expr::Log(a) => a.eval(u, theta).ln(),
        }
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::U(i) => Expr::Const(if var == Var::U(*i) { 1.0 } else { 0.0 }),
            Expr::Theta(k) => Expr::Const(if var == Var::Theta(*k) { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(
                mul(a.diff(var), (**b).clone()),
                mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.diff(var), (**b).clone()),
                    mul((**a).clone(), b.diff(var)),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Expr::Pow(a, b) => match &**b {
                Expr::Const(c) => mul(
                    mul(Expr::Const(*c), Expr::Pow(a.clone(), Box::new(Expr::Const(c - 1.0)))),
                    a.diff(var),
                ),
                _ => mul(
                    Expr::Pow(a.clone(), b.clone()),
                    add(
                        mul(b.diff(var), Expr::Log(a.clone())),
                        div(mul((**b).clone(), a.diff(var)), (**a).clone()),
                    ),
                ),
            },
            Expr::Exp(a) => mul(Expr::Exp(a.clone()), a.diff(var)),
            Expr::Log(a) => div(a.diff(var), (**a).clone()),
        }
    }

    /// Largest 1-based index used per variable family `(max_u, max_theta)`.
    pub fn arity(&self) -> (usize, usize) {
        match self {
            Expr::Const(_) => (0, 0),
            Expr::U(i) => (i + 1, 0),
            Expr::Theta(k) => (0, k + 1),
            Expr::Neg(a) | Expr::Exp(a) | Expr::Log(a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                let (au, at) = a.arity();
                let (bu, bt) = b.arity();
                (au.max(bu), at.max(bt))
            }
        }
    }
}

// Constructors with trivial constant folding; keeps derivative trees small.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (_, Expr::Const(y)) if *y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 0.0 => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match &a {
        Expr::Const(x) => Expr::Const(-x),
        _ => Expr::Neg(Box::new(a)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::U(i) => write!(f, "u_{}", i + 1),
            Expr::Theta(k) => write!(f, "theta_{}", k + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "pow({a}, {b})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Log(a) => write!(f, "log({a})"),
        }
    }
}

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
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' | '−' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' | '×' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' | '÷' => {
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
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| ImError::Parse(format!("bad number literal '{s}'")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Token::Ident(s));
            }
            other => {
                return Err(ImError::Parse(format!("unexpected character '{other}'")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        match self.bump() {
            Some(got) if got == t => Ok(()),
            got => Err(ImError::Parse(format!("expected {t:?}, got {got:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    lhs = add(lhs, self.term()?);
                }
                Some(Token::Minus) => {
                    self.bump();
                    lhs = sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    lhs = mul(lhs, self.factor()?);
                }
                Some(Token::Slash) => {
                    self.bump();
                    lhs = div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            // right-associative exponent
            let exponent = self.factor()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            return Ok(neg(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => self.ident(name),
            got => Err(ImError::Parse(format!("expected a primary, got {got:?}"))),
        }
    }

    fn ident(&mut self, name: String) -> Result<Expr> {
        match name.as_str() {
            "exp" => {
                self.expect(Token::LParen)?;
                let a = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(Expr::Exp(Box::new(a)))
            }
            "log" | "ln" => {
                self.expect(Token::LParen)?;
                let a = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(Expr::Log(Box::new(a)))
            }
            "pow" => {
                self.expect(Token::LParen)?;
                let a = self.expr()?;
                self.expect(Token::Comma)?;
                let b = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(Expr::Pow(Box::new(a), Box::new(b)))
            }
            _ => parse_indexed(&name),
        }
    }
}

fn parse_indexed(name: &str) -> Result<Expr> {
    let (family, idx_str) = if let Some(rest) = name.strip_prefix("theta") {
        ("theta", rest)
    } else if let Some(rest) = name.strip_prefix('u') {
        ("u", rest)
    } else {
        return Err(ImError::Parse(format!("unknown identifier '{name}'")));
    };
    let idx_str = idx_str.strip_prefix('_').unwrap_or(idx_str);
    let idx: usize = idx_str
        .parse()
        .map_err(|_| ImError::Parse(format!("bad index in '{name}'")))?;
    if idx == 0 {
        return Err(ImError::Parse(format!("indices are 1-based in '{name}'")));
    }
    Ok(match family {
        "theta" => Expr::Theta(idx - 1),
        _ => Expr::U(idx - 1),
    })
}
