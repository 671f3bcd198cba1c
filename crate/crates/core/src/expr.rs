//! Scalar expression language: parser, pretty-printer and Taylor evaluator.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = unary { ("*" | "/") unary } ;
//! unary    = "-" unary | power ;
//! power    = primary { "^" exponent } ;
//! exponent = [ "-" | "+" ] number
//!          | "(" [ "-" | "+" ] number [ "/" number ] ")" ;
//! primary  = number | "pi" | ident | func "(" expr ")" | "(" expr ")" ;
//! func     = "sqrt" | "sin" | "cos" | "exp" ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-s1^2` is `-(s1^2)`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::jets::{JetError, Rational, TaylorValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown variable '{name}' at position {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("variable '{0}' is not bound")]
    Unbound(String),
    #[error("binding count {got} does not match {expected} declared variables")]
    BindingCount { got: usize, expected: usize },
    #[error("evaluation failed at position {pos}: {source}")]
    Eval {
        pos: usize,
        #[source]
        source: JetError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sqrt,
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(f64),
    /// `index` is the position of the variable in the declaration list.
    Var { name: String, index: usize },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rational),
}

/// AST node; `pos` is the 1-based character position it was parsed from.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: usize,
}

impl PartialEq for Expr {
    // positions are bookkeeping only
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{:?}", c)
                }
            }
            ExprKind::Var { name, .. } => write!(f, "{}", name),
            ExprKind::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", a),
            ExprKind::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{}({})", name, a)
            }
            ExprKind::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                };
                write!(f, "({} {} {})", a, sym, b)
            }
            ExprKind::Pow(a, r) => {
                if r.is_integer() && r.num() >= 0 {
                    write!(f, "({}^{})", a, r.num())
                } else {
                    write!(f, "({}^({}))", a, r)
                }
            }
        }
    }
}

/// Declared variables: each name maps to a positional slot. Several names may
/// share a slot (aliases).
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    slots: usize,
    names: HashMap<String, usize>,
}

impl VarTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> VarTable {
        let mut t = VarTable::default();
        for (i, n) in names.iter().enumerate() {
            t.names.insert(n.as_ref().to_string(), i);
        }
        t.slots = names.len();
        t
    }

    pub fn alias(mut self, name: &str, slot: usize) -> VarTable {
        self.names.insert(name.to_string(), slot);
        self.slots = self.slots.max(slot + 1);
        self
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Op(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

fn lex(text: &str) -> Result<Lexer, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                pos,
                message: format!("malformed number '{}'", s),
            })?;
            toks.push((Tok::Num(v, s), pos));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else if "+-*/^()".contains(c) {
            toks.push((Tok::Op(c), pos));
            i += 1;
        } else {
            return Err(ExprError::Syntax {
                pos,
                message: format!("unexpected character '{}'", c),
            });
        }
    }
    toks.push((Tok::End, chars.len() + 1));
    Ok(Lexer { toks })
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vars: &'a VarTable,
}

/// Exact rational for a decimal literal such as `0.25` or `2e-1`.
fn decimal_to_rational(text: &str, pos: usize) -> Result<Rational, ExprError> {
    let bad = || ExprError::Syntax {
        pos,
        message: format!("exponent '{}' is not representable as a rational", text),
    };
    let lower = text.to_ascii_lowercase();
    let (mantissa, exp10) = match lower.split_once('e') {
        Some((m, e)) => (m.to_string(), e.parse::<i32>().map_err(|_| bad())?),
        None => (lower.clone(), 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => (mantissa.clone(), String::new()),
    };
    let digits = format!("{}{}", int_part, frac_part);
    let mut num: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
    let mut scale = exp10 - frac_part.len() as i32;
    let mut den: i64 = 1;
    while scale > 0 {
        num = num.checked_mul(10).ok_or_else(bad)?;
        scale -= 1;
    }
    while scale < 0 {
        den = den.checked_mul(10).ok_or_else(bad)?;
        scale += 1;
    }
    Ok(Rational::new(num, den))
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.at]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        let (tok, pos) = self.peek();
        let mut message = message.into();
        if *tok == Tok::End {
            message.push_str(" (at end of input)");
        }
        Err(ExprError::Syntax { pos: *pos, message })
    }

    fn is_op(&self, c: char) -> bool {
        self.peek().0 == Tok::Op(c)
    }

    fn expect_op(&mut self, c: char) -> Result<(), ExprError> {
        if self.is_op(c) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected '{}'", c))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_op('+') {
                BinaryOp::Add
            } else if self.is_op('-') {
                BinaryOp::Sub
            } else {
                break;
            };
            let (_, pos) = self.bump();
            let rhs = self.term()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_op('*') {
                BinaryOp::Mul
            } else if self.is_op('/') {
                BinaryOp::Div
            } else {
                break;
            };
            let (_, pos) = self.bump();
            let rhs = self.unary()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.is_op('-') {
            let (_, pos) = self.bump();
            let inner = self.unary()?;
            return Ok(Expr { kind: ExprKind::Unary(UnaryOp::Neg, Box::new(inner)), pos });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.primary()?;
        while self.is_op('^') {
            let (_, pos) = self.bump();
            let r = self.exponent()?;
            base = Expr { kind: ExprKind::Pow(Box::new(base), r), pos };
        }
        Ok(base)
    }

    fn signed_number(&mut self) -> Result<Rational, ExprError> {
        let mut sign = 1;
        if self.is_op('-') {
            self.bump();
            sign = -1;
        } else if self.is_op('+') {
            self.bump();
        }
        match self.peek().clone() {
            (Tok::Num(_, text), pos) => {
                self.bump();
                let r = decimal_to_rational(&text, pos)?;
                Ok(Rational::new(sign * r.num(), r.den()))
            }
            _ => self.err("exponent must be a rational literal"),
        }
    }

    fn exponent(&mut self) -> Result<Rational, ExprError> {
        if self.is_op('(') {
            self.bump();
            let num = self.signed_number()?;
            let r = if self.is_op('/') {
                self.bump();
                let pos = self.peek().1;
                let den = self.signed_number()?;
                if den.num() == 0 {
                    return Err(ExprError::Syntax { pos, message: "zero denominator in exponent".into() });
                }
                Rational::new(num.num() * den.den(), num.den() * den.num())
            } else {
                num
            };
            self.expect_op(')')?;
            Ok(r)
        } else {
            self.signed_number()
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let (tok, pos) = self.peek().clone();
        match tok {
            Tok::Num(v, _) => {
                self.bump();
                Ok(Expr { kind: ExprKind::Const(v), pos })
            }
            Tok::Ident(name) => {
                self.bump();
                let func = match name.as_str() {
                    "sqrt" => Some(UnaryOp::Sqrt),
                    "sin" => Some(UnaryOp::Sin),
                    "cos" => Some(UnaryOp::Cos),
                    "exp" => Some(UnaryOp::Exp),
                    _ => None,
                };
                if let Some(op) = func {
                    if !self.is_op('(') {
                        return self.err(format!("expected '(' after '{}'", name));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_op(')')?;
                    return Ok(Expr { kind: ExprKind::Unary(op, Box::new(arg)), pos });
                }
                if let Some(index) = self.vars.lookup(&name) {
                    return Ok(Expr { kind: ExprKind::Var { name, index }, pos });
                }
                if name == "pi" {
                    return Ok(Expr { kind: ExprKind::Const(std::f64::consts::PI), pos });
                }
                Err(ExprError::UnknownVariable { name, pos })
            }
            Tok::Op('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Tok::End => self.err("unexpected end of input"),
            Tok::Op(c) => self.err(format!("unexpected '{}'", c)),
        }
    }
}

/// Parses `text` with the given declared variable names (positional slots).
pub fn parse<S: AsRef<str>>(text: &str, declared_vars: &[S]) -> Result<Expr, ExprError> {
    parse_with(text, &VarTable::new(declared_vars))
}

pub fn parse_with(text: &str, vars: &VarTable) -> Result<Expr, ExprError> {
    let lexer = lex(text)?;
    let mut p = Parser { toks: lexer.toks, at: 0, vars };
    if p.peek().0 == Tok::End {
        return p.err("empty expression");
    }
    let e = p.expr()?;
    if p.peek().0 != Tok::End {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

fn pow_scalar(a: f64, r: Rational) -> Result<f64, JetError> {
    if r.is_integer() && r.num() >= 0 {
        // same multiplication sequence as TaylorValue::powu
        let mut result = 1.0;
        let mut base = a;
        let mut e = r.num() as u32;
        while e > 0 {
            if e & 1 == 1 {
                result *= base;
            }
            e >>= 1;
            if e > 0 {
                base *= base;
            }
        }
        return Ok(result);
    }
    let t = TaylorValue::constant(a, 0, 0)?;
    Ok(t.pow_rational(r)?.value())
}

impl Expr {
    /// Largest variable slot referenced, plus one.
    pub fn arity(&self) -> usize {
        match &self.kind {
            ExprKind::Const(_) => 0,
            ExprKind::Var { index, .. } => index + 1,
            ExprKind::Unary(_, a) | ExprKind::Pow(a, _) => a.arity(),
            ExprKind::Binary(_, a, b) => a.arity().max(b.arity()),
        }
    }

    /// Replaces every variable in slot `i` by `replacements[i]`.
    pub fn substitute(&self, replacements: &[Expr]) -> Result<Expr, ExprError> {
        Ok(match &self.kind {
            ExprKind::Const(_) => self.clone(),
            ExprKind::Var { index, .. } => replacements
                .get(*index)
                .cloned()
                .ok_or(ExprError::BindingCount { got: replacements.len(), expected: index + 1 })?,
            ExprKind::Unary(op, a) => Expr {
                kind: ExprKind::Unary(*op, Box::new(a.substitute(replacements)?)),
                pos: self.pos,
            },
            ExprKind::Pow(a, r) => Expr {
                kind: ExprKind::Pow(Box::new(a.substitute(replacements)?), *r),
                pos: self.pos,
            },
            ExprKind::Binary(op, a, b) => Expr {
                kind: ExprKind::Binary(
                    *op,
                    Box::new(a.substitute(replacements)?),
                    Box::new(b.substitute(replacements)?),
                ),
                pos: self.pos,
            },
        })
    }

    /// Names of all variables appearing in the tree.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match &self.kind {
            ExprKind::Const(_) => {}
            ExprKind::Var { name, .. } => out.push(name.clone()),
            ExprKind::Unary(_, a) | ExprKind::Pow(a, _) => a.collect_vars(out),
            ExprKind::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Taylor evaluation with positional bindings (slot `i` ↦ `vars[i]`).
    pub fn eval_series(&self, vars: &[TaylorValue]) -> Result<TaylorValue, ExprError> {
        let proto = vars.first().ok_or(ExprError::BindingCount { got: 0, expected: self.arity() })?;
        if vars.len() < self.arity() {
            return Err(ExprError::BindingCount { got: vars.len(), expected: self.arity() });
        }
        self.eval_series_inner(vars, proto)
    }

    fn eval_series_inner(&self, vars: &[TaylorValue], proto: &TaylorValue) -> Result<TaylorValue, ExprError> {
        let wrap = |pos: usize| move |source: JetError| ExprError::Eval { pos, source };
        Ok(match &self.kind {
            ExprKind::Const(c) => {
                TaylorValue::constant(*c, proto.num_vars(), proto.order()).map_err(wrap(self.pos))?
            }
            ExprKind::Var { index, .. } => vars[*index].clone(),
            ExprKind::Unary(op, a) => {
                let a = a.eval_series_inner(vars, proto)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sqrt => a.sqrt().map_err(wrap(self.pos))?,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let a = a.eval_series_inner(vars, proto)?;
                let b = b.eval_series_inner(vars, proto)?;
                match op {
                    BinaryOp::Add => a.try_add(&b),
                    BinaryOp::Sub => a.try_sub(&b),
                    BinaryOp::Mul => a.try_mul(&b),
                    BinaryOp::Div => a.try_div(&b),
                }
                .map_err(wrap(self.pos))?
            }
            ExprKind::Pow(a, r) => a
                .eval_series_inner(vars, proto)?
                .pow_rational(*r)
                .map_err(wrap(self.pos))?,
        })
    }

    /// Plain real evaluation; bit-identical to order-0 Taylor evaluation.
    pub fn eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        if values.len() < self.arity() {
            return Err(ExprError::BindingCount { got: values.len(), expected: self.arity() });
        }
        self.eval_inner(values)
    }

    fn eval_inner(&self, values: &[f64]) -> Result<f64, ExprError> {
        let wrap = |pos: usize| move |source: JetError| ExprError::Eval { pos, source };
        Ok(match &self.kind {
            ExprKind::Const(c) => *c,
            ExprKind::Var { index, .. } => values[*index],
            ExprKind::Unary(op, a) => {
                let a = a.eval_inner(values)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sqrt => {
                        if a < crate::jets::EPSILON_DIV {
                            return Err(ExprError::Eval {
                                pos: self.pos,
                                source: JetError::Domain { function: "sqrt", value: a },
                            });
                        }
                        a.sqrt()
                    }
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let a = a.eval_inner(values)?;
                let b = b.eval_inner(values)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b.abs() < crate::jets::EPSILON_DIV {
                            return Err(ExprError::Eval { pos: self.pos, source: JetError::DivisionNearZero(b) });
                        }
                        a / b
                    }
                }
            }
            ExprKind::Pow(a, r) => pow_scalar(a.eval_inner(values)?, *r).map_err(wrap(self.pos))?,
        })
    }
}

/// Taylor evaluation with named bindings.
pub fn eval_taylor(e: &Expr, bindings: &HashMap<String, TaylorValue>) -> Result<TaylorValue, ExprError> {
    let mut slots: Vec<Option<TaylorValue>> = vec![None; e.arity()];
    fn fill(e: &Expr, b: &HashMap<String, TaylorValue>, slots: &mut Vec<Option<TaylorValue>>) -> Result<(), ExprError> {
        match &e.kind {
            ExprKind::Const(_) => Ok(()),
            ExprKind::Var { name, index } => {
                let v = b.get(name).ok_or_else(|| ExprError::Unbound(name.clone()))?;
                slots[*index] = Some(v.clone());
                Ok(())
            }
            ExprKind::Unary(_, a) | ExprKind::Pow(a, _) => fill(a, b, slots),
            ExprKind::Binary(_, a, c) => {
                fill(a, b, slots)?;
                fill(c, b, slots)
            }
        }
    }
    fill(e, bindings, &mut slots)?;
    let proto = match bindings.values().next() {
        Some(p) => p.clone(),
        None => TaylorValue::constant(0.0, 0, 0).map_err(|source| ExprError::Eval { pos: e.pos, source })?,
    };
    let full: Vec<TaylorValue> = slots.into_iter().map(|s| s.unwrap_or_else(|| proto.clone())).collect();
    if full.is_empty() {
        return e.eval_series_inner(&[], &proto);
    }
    e.eval_series_inner(&full, &proto)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    pub degree: i32,
    pub lambda: f64,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks `f(t, λs) = λ^degree f(t, s)` on sample points given as full
/// positional value vectors. `s_slots` lists the fiber slots that are scaled.
pub fn check_homogeneity(
    e: &Expr,
    s_slots: &[usize],
    degree: i32,
    sample_points: &[Vec<f64>],
    lambda: f64,
    tolerance: f64,
) -> Result<HomogeneityReport, ExprError> {
    let mut worst = 0.0f64;
    for pt in sample_points {
        let base = e.eval(pt)?;
        let mut scaled = pt.clone();
        for &i in s_slots {
            scaled[i] *= lambda;
        }
        let f_scaled = e.eval(&scaled)?;
        let r = (f_scaled - lambda.powi(degree) * base).abs() / base.abs().max(1.0);
        worst = worst.max(r);
    }
    Ok(HomogeneityReport {
        degree,
        lambda,
        max_residual: worst,
        tolerance,
        pass: worst <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::lift_variable;

    const V: [&str; 4] = ["t1", "t2", "s1", "s2"];

    fn var(name: &str, index: usize) -> Expr {
        Expr { kind: ExprKind::Var { name: name.into(), index }, pos: 0 }
    }

    fn cnst(v: f64) -> Expr {
        Expr { kind: ExprKind::Const(v), pos: 0 }
    }

    #[test]
    fn parse_sum_of_squares() {
        let e = parse("s1^2 + s2^2", &V).unwrap();
        let want = Expr {
            kind: ExprKind::Binary(
                BinaryOp::Add,
                Box::new(Expr { kind: ExprKind::Pow(Box::new(var("s1", 2)), Rational::integer(2)), pos: 0 }),
                Box::new(Expr { kind: ExprKind::Pow(Box::new(var("s2", 3)), Rational::integer(2)), pos: 0 }),
            ),
            pos: 0,
        };
        assert_eq!(e, want);
    }

    #[test]
    fn parse_randers_shape() {
        let e = parse("sqrt(s1^2+s2^2) + 0.3*s1", &V).unwrap();
        match &e.kind {
            ExprKind::Binary(BinaryOp::Add, a, b) => {
                assert!(matches!(a.kind, ExprKind::Unary(UnaryOp::Sqrt, _)));
                match &b.kind {
                    ExprKind::Binary(BinaryOp::Mul, c, v) => {
                        assert_eq!(**c, cnst(0.3));
                        assert_eq!(**v, var("s1", 2));
                    }
                    other => panic!("unexpected {:?}", other),
                }
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn trailing_operator_is_syntax_error_at_end() {
        let err = parse("s1 + ", &V).unwrap_err();
        match err {
            ExprError::Syntax { pos, message } => {
                assert_eq!(pos, 6);
                assert!(message.contains("end of input"));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn unknown_variable_reports_position() {
        let err = parse("s1 + q7", &V).unwrap_err();
        assert_eq!(err, ExprError::UnknownVariable { name: "q7".into(), pos: 6 });
    }

    #[test]
    fn precedence_rules() {
        let e = parse("-s1^2", &V).unwrap();
        assert!(matches!(e.kind, ExprKind::Unary(UnaryOp::Neg, _)));
        assert_eq!(e.eval(&[0.0, 0.0, 3.0, 0.0]).unwrap(), -9.0);
        let e = parse("t1 - t2 - s1", &V).unwrap();
        assert_eq!(e.eval(&[10.0, 3.0, 2.0, 0.0]).unwrap(), 5.0);
        let e = parse("t1 / t2 / s1", &V).unwrap();
        assert_eq!(e.eval(&[12.0, 3.0, 2.0, 0.0]).unwrap(), 2.0);
        let e = parse("t1 + t2 * s1", &V).unwrap();
        assert_eq!(e.eval(&[1.0, 3.0, 2.0, 0.0]).unwrap(), 7.0);
    }

    #[test]
    fn rational_exponents() {
        let e = parse("s1^(1/2)", &V).unwrap();
        assert!(matches!(e.kind, ExprKind::Pow(_, r) if r == Rational::new(1, 2)));
        let e = parse("s1^0.25", &V).unwrap();
        assert!(matches!(e.kind, ExprKind::Pow(_, r) if r == Rational::new(1, 4)));
        let e = parse("s1^-1", &V).unwrap();
        assert!(matches!(e.kind, ExprKind::Pow(_, r) if r == Rational::integer(-1)));
        let e = parse("s1^(-3/6)", &V).unwrap();
        assert!(matches!(e.kind, ExprKind::Pow(_, r) if r == Rational::new(-1, 2)));
        assert!(parse("s1^t1", &V).is_err());
    }

    #[test]
    fn eval_examples() {
        let e = parse("s1^2+s2^2", &V).unwrap();
        let vars: Vec<_> = [0.0, 0.0, 3.0, 4.0]
            .iter()
            .map(|&v| TaylorValue::constant(v, 4, 0).unwrap())
            .collect();
        assert_eq!(e.eval_series(&vars).unwrap().value(), 25.0);

        let e = parse("sqrt(s1^2+s2^2)", &V).unwrap();
        let vals = [0.0, 0.0, 3.0, 4.0];
        let vars: Vec<_> = (0..4).map(|i| lift_variable(i, vals[i], 4, 1).unwrap()).collect();
        let r = e.eval_series(&vars).unwrap();
        assert!((r.gradient(2) - 0.6).abs() < 1e-15);

        let e = parse("t1*s1", &V).unwrap();
        let vars: Vec<_> = (0..4).map(|i| lift_variable(i, 0.5, 4, 2).unwrap()).collect();
        let r = e.eval_series(&vars).unwrap();
        assert_eq!(r.partial_coeff(&[1, 0, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn eval_with_named_bindings() {
        let e = parse("t1*s1 + s2", &V).unwrap();
        let mut b = HashMap::new();
        b.insert("t1".to_string(), lift_variable(0, 2.0, 3, 1).unwrap());
        b.insert("s1".to_string(), lift_variable(1, 3.0, 3, 1).unwrap());
        b.insert("s2".to_string(), lift_variable(2, 1.0, 3, 1).unwrap());
        let r = eval_taylor(&e, &b).unwrap();
        assert_eq!(r.value(), 7.0);
        assert_eq!(r.gradient(0), 3.0);
        b.remove("s2");
        assert_eq!(eval_taylor(&e, &b).unwrap_err(), ExprError::Unbound("s2".into()));
    }

    #[test]
    fn evaluation_error_carries_position() {
        let e = parse("1 + sqrt(s1)", &V).unwrap();
        match e.eval(&[0.0, 0.0, -1.0, 0.0]).unwrap_err() {
            ExprError::Eval { pos, .. } => assert_eq!(pos, 5),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn homogeneity_examples() {
        let pts = vec![vec![0.2, -0.1, 0.7, 0.4], vec![1.0, 0.5, -0.3, 0.9]];
        let e = parse("s1^2+s2^2", &V).unwrap();
        let r = check_homogeneity(&e, &[2, 3], 2, &pts, 2.0, 1e-12).unwrap();
        assert_eq!(r.max_residual, 0.0);

        let e = parse("(s1^4+s2^4)^(1/2)", &V).unwrap();
        let r = check_homogeneity(&e, &[2, 3], 2, &pts, 3.0, 1e-12).unwrap();
        assert!(r.pass, "{}", r.max_residual);

        let e = parse("s1^2+t1", &V).unwrap();
        let r = check_homogeneity(&e, &[2, 3], 2, &pts, 2.0, 1e-12).unwrap();
        assert!(!r.pass);
        assert!(r.max_residual > 0.1);
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "s1^2 + s2^2",
            "sqrt(s1^2+s2^2) + 0.3*s1",
            "-t1^(1/3) * exp(-s2) / cos(t2 - pi)",
            "(s1^4 + s2^4)^(-1/2) - 1e-3*t1",
        ] {
            let e = parse(text, &V).unwrap();
            let again = parse(&e.to_string(), &V).unwrap();
            assert_eq!(e, again, "{}", e);
        }
    }

    #[test]
    fn aliases_share_slots() {
        let table = VarTable::new(&V).alias("x1", 0).alias("y1", 2);
        let e = parse_with("x1*y1", &table).unwrap();
        assert_eq!(e.eval(&[2.0, 0.0, 5.0, 0.0]).unwrap(), 10.0);
    }
}
