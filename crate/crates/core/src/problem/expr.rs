//! A small arithmetic expression language in the variables `x` and `t`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          (right associative)
//! primary := number | 'x' | 't' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := 'sin' | 'cos' | 'exp' | 'sqrt'
//! ```
//!
//! Expressions are closed under symbolic differentiation in `x` and `t` as long
//! as every power has either a constant exponent or a constant positive base.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("expression is not differentiable: {0}")]
    NotDifferentiable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    T,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> Result<f64, ExprError> {
        match self {
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Exp => Ok(v.exp()),
            Func::Sqrt if v < 0.0 => Err(ExprError::Domain(format!("sqrt of negative value {v}"))),
            Func::Sqrt => Ok(v.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed coefficient expression `e(x, t)`.
///
/// Values are immutable; cloning is cheap enough for configuration-time use.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    root: Node,
    source: String,
}

impl CoefficientExpr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let tokens = lex(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            end: source.len(),
        };
        if tokens.is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                msg: "empty expression".into(),
            });
        }
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                msg: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(CoefficientExpr {
            root,
            source: source.to_string(),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self::from_node(Node::Num(value))
    }

    pub fn var(v: Var) -> Self {
        Self::from_node(Node::Var(v))
    }

    fn from_node(root: Node) -> Self {
        let source = print_node(&root);
        CoefficientExpr { root, source }
    }

    /// The text this expression was parsed from, or its canonical print if it
    /// was built programmatically.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<f64, ExprError> {
        let v = eval_node(&self.root, x, t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain(format!(
                "non-finite value at x={x}, t={t}"
            )))
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        fn walk(n: &Node, v: Var) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(w) => *w == v,
                Node::Neg(a) | Node::Call(_, a) => walk(a, v),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => walk(a, v) || walk(b, v),
            }
        }
        walk(&self.root, v)
    }

    /// Returns the value if the expression contains no variables.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn derivative(&self, wrt: Var) -> Result<Self, ExprError> {
        Ok(Self::from_node(diff(&self.root, wrt)?))
    }

    /// Replaces every occurrence of `var` with `with`.
    pub fn substitute(&self, var: Var, with: &CoefficientExpr) -> Self {
        fn walk(n: &Node, var: Var, with: &Node) -> Node {
            match n {
                Node::Num(v) => Node::Num(*v),
                Node::Var(w) if *w == var => with.clone(),
                Node::Var(w) => Node::Var(*w),
                Node::Neg(a) => neg(walk(a, var, with)),
                Node::Add(a, b) => add(walk(a, var, with), walk(b, var, with)),
                Node::Sub(a, b) => sub(walk(a, var, with), walk(b, var, with)),
                Node::Mul(a, b) => mul(walk(a, var, with), walk(b, var, with)),
                Node::Div(a, b) => div(walk(a, var, with), walk(b, var, with)),
                Node::Pow(a, b) => pow(walk(a, var, with), walk(b, var, with)),
                Node::Call(f, a) => call(*f, walk(a, var, with)),
            }
        }
        Self::from_node(walk(&self.root, var, &with.root))
    }

    pub fn pow(&self, exponent: &CoefficientExpr) -> Self {
        Self::from_node(pow(self.root.clone(), exponent.root.clone()))
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_node(&self.root))
    }
}

impl std::str::FromStr for CoefficientExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

macro_rules! expr_binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl $trait for &CoefficientExpr {
            type Output = CoefficientExpr;
            fn $method(self, rhs: &CoefficientExpr) -> CoefficientExpr {
                CoefficientExpr::from_node($ctor(self.root.clone(), rhs.root.clone()))
            }
        }
        impl $trait for CoefficientExpr {
            type Output = CoefficientExpr;
            fn $method(self, rhs: CoefficientExpr) -> CoefficientExpr {
                CoefficientExpr::from_node($ctor(self.root, rhs.root))
            }
        }
    };
}

expr_binop!(Add, add, add);
expr_binop!(Sub, sub, sub);
expr_binop!(Mul, mul, mul);
expr_binop!(Div, div, div);

impl Neg for &CoefficientExpr {
    type Output = CoefficientExpr;
    fn neg(self) -> CoefficientExpr {
        CoefficientExpr::from_node(neg(self.root.clone()))
    }
}

// ---------------------------------------------------------------------------
// evaluation

fn eval_node(n: &Node, x: f64, t: f64) -> Result<f64, ExprError> {
    Ok(match n {
        Node::Num(v) => *v,
        Node::Var(Var::X) => x,
        Node::Var(Var::T) => t,
        Node::Neg(a) => -eval_node(a, x, t)?,
        Node::Add(a, b) => eval_node(a, x, t)? + eval_node(b, x, t)?,
        Node::Sub(a, b) => eval_node(a, x, t)? - eval_node(b, x, t)?,
        Node::Mul(a, b) => eval_node(a, x, t)? * eval_node(b, x, t)?,
        Node::Div(a, b) => {
            let num = eval_node(a, x, t)?;
            let den = eval_node(b, x, t)?;
            if den == 0.0 {
                return Err(ExprError::Domain(format!(
                    "division by zero at x={x}, t={t}"
                )));
            }
            num / den
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, x, t)?;
            let exp = eval_node(b, x, t)?;
            let v = base.powf(exp);
            if v.is_nan() || (base == 0.0 && exp < 0.0) {
                return Err(ExprError::Domain(format!(
                    "{base}^{exp} undefined at x={x}, t={t}"
                )));
            }
            v
        }
        Node::Call(f, a) => f.apply(eval_node(a, x, t)?)?,
    })
}

// ---------------------------------------------------------------------------
// simplifying constructors; folding performs the same f64 operations eval would

fn num(n: &Node) -> Option<f64> {
    match n {
        Node::Num(v) => Some(*v),
        _ => None,
    }
}

fn fold(v: f64) -> Option<Node> {
    v.is_finite().then_some(Node::Num(v))
}

fn neg(a: Node) -> Node {
    match a {
        Node::Num(v) => Node::Num(-v),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => fold(x + y).unwrap_or_else(|| Node::Add(Box::new(a), Box::new(b))),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => fold(x - y).unwrap_or_else(|| Node::Sub(Box::new(a), Box::new(b))),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => fold(x * y).unwrap_or_else(|| Node::Mul(Box::new(a), Box::new(b))),
        (Some(0.0), _) | (_, Some(0.0)) => Node::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(m), _) if m == -1.0 => neg(b),
        (_, Some(m)) if m == -1.0 => neg(a),
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) if y != 0.0 => {
            fold(x / y).unwrap_or_else(|| Node::Div(Box::new(a), Box::new(b)))
        }
        (Some(z), Some(y)) if z == 0.0 && y != 0.0 => Node::Num(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => {
            let v = x.powf(y);
            if v.is_finite() && !(x == 0.0 && y < 0.0) {
                Node::Num(v)
            } else {
                Node::Pow(Box::new(a), Box::new(b))
            }
        }
        (_, Some(1.0)) => a,
        (_, Some(0.0)) => Node::Num(1.0),
        _ => Node::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Node) -> Node {
    if let Some(v) = num(&a) {
        if let Ok(r) = f.apply(v) {
            if let Some(n) = fold(r) {
                return n;
            }
        }
    }
    Node::Call(f, Box::new(a))
}

// ---------------------------------------------------------------------------
// differentiation

fn is_constant(n: &Node) -> bool {
    match n {
        Node::Num(_) => true,
        Node::Var(_) => false,
        Node::Neg(a) | Node::Call(_, a) => is_constant(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            is_constant(a) && is_constant(b)
        }
    }
}

fn diff(n: &Node, wrt: Var) -> Result<Node, ExprError> {
    Ok(match n {
        Node::Num(_) => Node::Num(0.0),
        Node::Var(v) => Node::Num(if *v == wrt { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff(a, wrt)?),
        Node::Add(a, b) => add(diff(a, wrt)?, diff(b, wrt)?),
        Node::Sub(a, b) => sub(diff(a, wrt)?, diff(b, wrt)?),
        Node::Mul(a, b) => add(
            mul(diff(a, wrt)?, (**b).clone()),
            mul((**a).clone(), diff(b, wrt)?),
        ),
        Node::Div(a, b) => div(
            sub(
                mul(diff(a, wrt)?, (**b).clone()),
                mul((**a).clone(), diff(b, wrt)?),
            ),
            mul((**b).clone(), (**b).clone()),
        ),
        Node::Pow(a, b) => {
            if is_constant(b) {
                let e = eval_node(b, 0.0, 0.0)?;
                mul(
                    mul(Node::Num(e), pow((**a).clone(), Node::Num(e - 1.0))),
                    diff(a, wrt)?,
                )
            } else if is_constant(a) {
                let base = eval_node(a, 0.0, 0.0)?;
                if base <= 0.0 {
                    return Err(ExprError::NotDifferentiable(format!(
                        "power with non-positive base {base} and variable exponent"
                    )));
                }
                mul(mul(n.clone(), Node::Num(base.ln())), diff(b, wrt)?)
            } else {
                return Err(ExprError::NotDifferentiable(
                    "power with variable base and variable exponent".into(),
                ));
            }
        }
        Node::Call(f, a) => {
            let inner = diff(a, wrt)?;
            let outer = match f {
                Func::Sin => call(Func::Cos, (**a).clone()),
                Func::Cos => neg(call(Func::Sin, (**a).clone())),
                Func::Exp => n.clone(),
                Func::Sqrt => div(Node::Num(1.0), mul(Node::Num(2.0), n.clone())),
            };
            mul(outer, inner)
        }
    })
}

// ---------------------------------------------------------------------------
// printing

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(n: &Node) -> u8 {
    match n {
        Node::Num(v) if v.is_sign_negative() => PREC_UNARY,
        Node::Num(_) | Node::Var(_) | Node::Call(..) => PREC_ATOM,
        Node::Neg(_) => PREC_UNARY,
        Node::Add(..) | Node::Sub(..) => PREC_SUM,
        Node::Mul(..) | Node::Div(..) => PREC_PRODUCT,
        Node::Pow(..) => PREC_POWER,
    }
}

fn print_node(n: &Node) -> String {
    let mut out = String::new();
    write_node(n, &mut out);
    out
}

fn write_child(n: &Node, min_prec: u8, out: &mut String) {
    if precedence(n) < min_prec {
        out.push('(');
        write_node(n, out);
        out.push(')');
    } else {
        write_node(n, out);
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

fn write_node(n: &Node, out: &mut String) {
    match n {
        Node::Num(v) => {
            if v.is_sign_negative() {
                out.push('-');
                out.push_str(&format_number(-v));
            } else {
                out.push_str(&format_number(*v));
            }
        }
        Node::Var(v) => out.push_str(v.name()),
        Node::Neg(a) => {
            out.push('-');
            write_child(a, PREC_UNARY, out);
        }
        Node::Add(a, b) => {
            write_child(a, PREC_SUM, out);
            out.push_str(" + ");
            write_child(b, PREC_PRODUCT, out);
        }
        Node::Sub(a, b) => {
            write_child(a, PREC_SUM, out);
            out.push_str(" - ");
            write_child(b, PREC_PRODUCT, out);
        }
        Node::Mul(a, b) => {
            write_child(a, PREC_PRODUCT, out);
            out.push('*');
            write_child(b, PREC_UNARY, out);
        }
        Node::Div(a, b) => {
            write_child(a, PREC_PRODUCT, out);
            out.push('/');
            write_child(b, PREC_UNARY, out);
        }
        Node::Pow(a, b) => {
            write_child(a, PREC_ATOM, out);
            out.push('^');
            write_child(b, PREC_UNARY, out);
        }
        Node::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_node(a, out);
            out.push(')');
        }
    }
}

// ---------------------------------------------------------------------------
// lexing and parsing

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("'{c}'"),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                msg: format!("malformed number `{text}`"),
            })?;
            tokens.push(Token {
                kind: TokenKind::Num(value),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        offset: start,
                        msg: format!("unexpected character '{c}'"),
                    })
                }
            };
            i += c.len_utf8();
            tokens.push(Token {
                kind,
                offset: start,
            });
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                offset: self.offset(),
                msg: "expected ')'".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                offset: self.end,
                msg: "unexpected end of expression".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "x" => Ok(Node::Var(Var::X)),
                "t" => Ok(Node::Var(Var::T)),
                "pi" => Ok(Node::Num(PI)),
                _ => {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ExprError::UnknownIdentifier {
                            name,
                            offset: tok.offset,
                        });
                    };
                    match self.peek() {
                        Some(Token {
                            kind: TokenKind::LParen,
                            ..
                        }) => self.pos += 1,
                        _ => {
                            return Err(ExprError::Syntax {
                                offset: self.offset(),
                                msg: format!("expected '(' after `{name}`"),
                            })
                        }
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(func, Box::new(arg)))
                }
            },
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                msg: format!("unexpected {}", other.describe()),
            }),
        }
    }
}
