//! Minimal symbolic expression engine.
//!
//! Expressions are immutable trees over named symbols, exact rational or
//! floating constants, and a handful of elementary functions. The
//! constructors canonicalize as they build: nested sums and products are
//! flattened, constants are folded (rationals stay exact), `x^0 -> 1`,
//! `x^1 -> x`, `log(exp(a)) -> a`, and `0`/`1` are absorbed. There is no
//! general simplifier; zero-testing downstream is numeric.
//!
//! `Log` is always `log|.|`. `ApplyF`/`ApplyFPrime` stand for an abstract
//! scalar source `f` and its derivative; evaluating them requires a
//! [`SourceFunction`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("no derivative rule for {0}")]
    UnsupportedDerivative(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unbound symbols: {}", .0.join(", "))]
    UnboundSymbol(Vec<String>),
    #[error("expression uses the abstract source f but no implementation was supplied")]
    MissingSource,
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// A concrete scalar function standing in for the abstract source `f`.
pub trait SourceFunction {
    fn value(&self, z: f64) -> f64;
    fn derivative(&self, z: f64) -> f64;
}

impl<F, G> SourceFunction for (F, G)
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    fn value(&self, z: f64) -> f64 {
        (self.0)(z)
    }
    fn derivative(&self, z: f64) -> f64 {
        (self.1)(z)
    }
}

/// Constant leaf: exact rational or IEEE double.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Rational(Rational64),
    Float(f64),
}

impl Number {
    pub fn to_f64(self) -> f64 {
        match self {
            Number::Rational(q) => *q.numer() as f64 / *q.denom() as f64,
            Number::Float(v) => v,
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            Number::Rational(q) => q.is_zero(),
            Number::Float(v) => v == 0.0,
        }
    }

    pub fn is_one(self) -> bool {
        match self {
            Number::Rational(q) => q.is_one(),
            Number::Float(v) => v == 1.0,
        }
    }

    fn add(self, other: Number) -> Number {
        match (self, other) {
            (Number::Rational(a), Number::Rational(b)) => match a.checked_add(&b) {
                Some(c) => Number::Rational(c),
                None => Number::Float(self.to_f64() + other.to_f64()),
            },
            _ => Number::Float(self.to_f64() + other.to_f64()),
        }
    }

    fn mul(self, other: Number) -> Number {
        match (self, other) {
            (Number::Rational(a), Number::Rational(b)) => match a.checked_mul(&b) {
                Some(c) => Number::Rational(c),
                None => Number::Float(self.to_f64() * other.to_f64()),
            },
            _ => Number::Float(self.to_f64() * other.to_f64()),
        }
    }

    /// Exact power when it stays rational; `None` when it must stay symbolic.
    fn pow(self, exponent: Number) -> Option<Number> {
        match (self, exponent) {
            (Number::Rational(b), Number::Rational(e)) => {
                if !e.is_integer() {
                    return None;
                }
                let n = *e.numer();
                if b.is_zero() && n < 0 {
                    return None;
                }
                let mut acc = Rational64::one();
                let base = if n < 0 { b.recip() } else { b };
                for _ in 0..n.unsigned_abs().min(64) {
                    acc = acc.checked_mul(&base)?;
                }
                if n.unsigned_abs() > 64 {
                    return None;
                }
                Some(Number::Rational(acc))
            }
            _ => {
                let b = self.to_f64();
                let e = exponent.to_f64();
                if b == 0.0 && e < 0.0 {
                    return None;
                }
                let v = b.powf(e);
                v.is_finite().then_some(Number::Float(v))
            }
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Rational(q) if q.is_integer() => write!(f, "{}", q.numer()),
            Number::Rational(q) => write!(f, "{}/{}", q.numer(), q.denom()),
            Number::Float(v) => write!(f, "{v:?}"),
        }
    }
}

/// Symbolic expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Number),
    Symbol(Arc<str>),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    /// `log|arg|`.
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
    ApplyF(Box<Expr>),
    ApplyFPrime(Box<Expr>),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Const(Number::Rational(Rational64::from_integer(v)))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::Const(Number::Rational(Rational64::new(n, d)))
    }

    pub fn float(v: f64) -> Expr {
        Expr::Const(Number::Float(v))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn sym(name: &str) -> Expr {
        Expr::Symbol(Arc::from(name))
    }

    pub fn as_const(&self) -> Option<Number> {
        match self {
            Expr::Const(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Number::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(Number::is_one)
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut constant = Number::Rational(Rational64::zero());
        let mut out = Vec::with_capacity(terms.len());
        let mut stack: Vec<Expr> = terms.into_iter().rev().collect();
        while let Some(term) = stack.pop() {
            match term {
                Expr::Sum(inner) => stack.extend(inner.into_iter().rev()),
                Expr::Const(n) => constant = constant.add(n),
                other => out.push(other),
            }
        }
        if !constant.is_zero() {
            out.insert(0, Expr::Const(constant));
        }
        match out.len() {
            0 => Expr::Const(constant),
            1 => out.pop().unwrap(),
            _ => Expr::Sum(out),
        }
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut constant = Number::Rational(Rational64::one());
        let mut out = Vec::with_capacity(factors.len());
        let mut stack: Vec<Expr> = factors.into_iter().rev().collect();
        while let Some(factor) = stack.pop() {
            match factor {
                Expr::Product(inner) => stack.extend(inner.into_iter().rev()),
                Expr::Const(n) => {
                    if n.is_zero() {
                        return Expr::Const(n);
                    }
                    constant = constant.mul(n);
                }
                other => out.push(other),
            }
        }
        if !constant.is_one() {
            out.insert(0, Expr::Const(constant));
        }
        match out.len() {
            0 => Expr::Const(constant),
            1 => out.pop().unwrap(),
            _ => Expr::Product(out),
        }
    }

    pub fn pow(base: Expr, exponent: Expr) -> Expr {
        if exponent.is_zero() {
            return Expr::one();
        }
        if exponent.is_one() {
            return base;
        }
        if base.is_one() {
            return Expr::one();
        }
        if let (Some(b), Some(e)) = (base.as_const(), exponent.as_const()) {
            if let Some(v) = b.pow(e) {
                return Expr::Const(v);
            }
        }
        Expr::Pow(Box::new(base), Box::new(exponent))
    }

    pub fn exp(arg: Expr) -> Expr {
        match arg {
            a if a.is_zero() => Expr::one(),
            Expr::Const(Number::Float(v)) => Expr::float(v.exp()),
            a => Expr::Exp(Box::new(a)),
        }
    }

    pub fn log(arg: Expr) -> Expr {
        match arg {
            a if a.is_one() => Expr::zero(),
            Expr::Exp(inner) => *inner,
            Expr::Const(Number::Float(v)) if v != 0.0 => Expr::float(v.abs().ln()),
            a => Expr::Log(Box::new(a)),
        }
    }

    pub fn sqrt(arg: Expr) -> Expr {
        match arg {
            Expr::Const(Number::Rational(q)) if !q.is_negative() => {
                match (exact_isqrt(*q.numer()), exact_isqrt(*q.denom())) {
                    (Some(n), Some(d)) => Expr::rational(n, d),
                    _ => Expr::Sqrt(Box::new(Expr::Const(Number::Rational(q)))),
                }
            }
            Expr::Const(Number::Float(v)) if v >= 0.0 => Expr::float(v.sqrt()),
            a => Expr::Sqrt(Box::new(a)),
        }
    }

    pub fn apply_f(arg: Expr) -> Expr {
        Expr::ApplyF(Box::new(arg))
    }

    pub fn apply_f_prime(arg: Expr) -> Expr {
        Expr::ApplyFPrime(Box::new(arg))
    }

    pub fn powi(self, n: i64) -> Expr {
        Expr::pow(self, Expr::int(n))
    }

    pub fn recip(self) -> Expr {
        self.powi(-1)
    }

    /// Rebuild bottom-up through the canonicalizing constructors.
    pub fn fold(&self) -> Expr {
        self.map_children(Expr::fold)
    }

    fn map_children(&self, mut f: impl FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Const(_) | Expr::Symbol(_) => self.clone(),
            Expr::Sum(ts) => Expr::sum(ts.iter().map(&mut f).collect()),
            Expr::Product(ts) => Expr::product(ts.iter().map(&mut f).collect()),
            Expr::Pow(b, e) => Expr::pow(f(b), f(e)),
            Expr::Exp(a) => Expr::exp(f(a)),
            Expr::Log(a) => Expr::log(f(a)),
            Expr::Sqrt(a) => Expr::sqrt(f(a)),
            Expr::ApplyF(a) => Expr::apply_f(f(a)),
            Expr::ApplyFPrime(a) => Expr::apply_f_prime(f(a)),
        }
    }

    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Symbol(s) => {
                out.insert(s.to_string());
            }
            Expr::Sum(ts) | Expr::Product(ts) => ts.iter().for_each(|t| t.collect_symbols(out)),
            Expr::Pow(b, e) => {
                b.collect_symbols(out);
                e.collect_symbols(out);
            }
            Expr::Exp(a)
            | Expr::Log(a)
            | Expr::Sqrt(a)
            | Expr::ApplyF(a)
            | Expr::ApplyFPrime(a) => a.collect_symbols(out),
        }
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Symbol(s) => &**s == name,
            Expr::Sum(ts) | Expr::Product(ts) => ts.iter().any(|t| t.depends_on(name)),
            Expr::Pow(b, e) => b.depends_on(name) || e.depends_on(name),
            Expr::Exp(a)
            | Expr::Log(a)
            | Expr::Sqrt(a)
            | Expr::ApplyF(a)
            | Expr::ApplyFPrime(a) => a.depends_on(name),
        }
    }

    pub fn uses_source(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Symbol(_) => false,
            Expr::ApplyF(_) | Expr::ApplyFPrime(_) => true,
            Expr::Sum(ts) | Expr::Product(ts) => ts.iter().any(Expr::uses_source),
            Expr::Pow(b, e) => b.uses_source() || e.uses_source(),
            Expr::Exp(a) | Expr::Log(a) | Expr::Sqrt(a) => a.uses_source(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + match self {
            Expr::Const(_) | Expr::Symbol(_) => 0,
            Expr::Sum(ts) | Expr::Product(ts) => ts.iter().map(Expr::node_count).sum(),
            Expr::Pow(b, e) => b.node_count() + e.node_count(),
            Expr::Exp(a)
            | Expr::Log(a)
            | Expr::Sqrt(a)
            | Expr::ApplyF(a)
            | Expr::ApplyFPrime(a) => a.node_count(),
        }
    }

    /// Additive terms after distributing products over sums, capped at
    /// `limit` terms. Used for residual scale estimates, never for identity
    /// decisions.
    pub fn expanded_terms(&self, limit: usize) -> Vec<Expr> {
        match self {
            Expr::Sum(ts) => {
                let mut out = Vec::new();
                for t in ts {
                    out.extend(t.expanded_terms(limit));
                    if out.len() > limit {
                        return vec![self.clone()];
                    }
                }
                out
            }
            Expr::Product(fs) => {
                let mut acc = vec![Expr::one()];
                for f in fs {
                    let parts = f.expanded_terms(limit);
                    if acc.len() * parts.len() > limit {
                        return vec![self.clone()];
                    }
                    acc = acc
                        .iter()
                        .flat_map(|a| parts.iter().map(move |p| a.clone() * p.clone()))
                        .collect();
                }
                acc
            }
            other => vec![other.clone()],
        }
    }
}

fn exact_isqrt(v: i64) -> Option<i64> {
    if v < 0 {
        return None;
    }
    let r = (v as f64).sqrt().round() as i64;
    (r.checked_mul(r) == Some(v)).then_some(r)
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, rhs])
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, -rhs])
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::product(vec![self, rhs])
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::product(vec![self, rhs.recip()])
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::product(vec![Expr::int(-1), self])
    }
}

impl Add<f64> for Expr {
    type Output = Expr;
    fn add(self, rhs: f64) -> Expr {
        self + Expr::float(rhs)
    }
}

impl Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::float(self) * rhs
    }
}

impl Mul<Expr> for i64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::int(self) * rhs
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::float(v)
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Expr {
        Expr::int(v)
    }
}

/// Value bound to a symbol during substitution or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundValue {
    Number(f64),
    Expr(Expr),
}

/// Map from symbol name to a number or another expression.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding {
    map: BTreeMap<String, BoundValue>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_number(mut self, name: &str, value: f64) -> Self {
        self.set_number(name, value);
        self
    }

    pub fn with_expr(mut self, name: &str, value: Expr) -> Self {
        self.map.insert(name.to_string(), BoundValue::Expr(value));
        self
    }

    pub fn set_number(&mut self, name: &str, value: f64) {
        match self.map.get_mut(name) {
            Some(BoundValue::Number(v)) => *v = value,
            _ => {
                self.map.insert(name.to_string(), BoundValue::Number(value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&BoundValue> {
        self.map.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn merged(&self, other: &Binding) -> Binding {
        let mut map = self.map.clone();
        map.extend(other.map.iter().map(|(k, v)| (k.clone(), v.clone())));
        Binding { map }
    }
}

impl FromIterator<(&'static str, f64)> for Binding {
    fn from_iter<I: IntoIterator<Item = (&'static str, f64)>>(iter: I) -> Self {
        let mut b = Binding::new();
        for (k, v) in iter {
            b.set_number(k, v);
        }
        b
    }
}

/// Exact partial derivative with respect to symbol `s`.
pub fn differentiate(e: &Expr, s: &str) -> Result<Expr, ExprError> {
    if !e.depends_on(s) {
        return Ok(Expr::zero());
    }
    Ok(match e {
        Expr::Const(_) => Expr::zero(),
        Expr::Symbol(name) => {
            if &**name == s {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Sum(ts) => Expr::sum(
            ts.iter()
                .map(|t| differentiate(t, s))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Expr::Product(fs) => {
            let mut terms = Vec::new();
            for (i, fi) in fs.iter().enumerate() {
                if !fi.depends_on(s) {
                    continue;
                }
                let mut factors: Vec<Expr> = Vec::with_capacity(fs.len());
                for (j, fj) in fs.iter().enumerate() {
                    if i != j {
                        factors.push(fj.clone());
                    }
                }
                factors.push(differentiate(fi, s)?);
                terms.push(Expr::product(factors));
            }
            Expr::sum(terms)
        }
        Expr::Pow(b, ex) => {
            if !ex.depends_on(s) {
                let reduced = Expr::sum(vec![(**ex).clone(), Expr::int(-1)]);
                Expr::product(vec![
                    (**ex).clone(),
                    Expr::pow((**b).clone(), reduced),
                    differentiate(b, s)?,
                ])
            } else {
                // d(b^e) = b^e (e' log|b| + e b'/b)
                let inner = Expr::sum(vec![
                    differentiate(ex, s)? * Expr::log((**b).clone()),
                    (**ex).clone() * differentiate(b, s)? * (**b).clone().recip(),
                ]);
                e.clone() * inner
            }
        }
        Expr::Exp(a) => e.clone() * differentiate(a, s)?,
        Expr::Log(a) => differentiate(a, s)? * (**a).clone().recip(),
        Expr::Sqrt(a) => differentiate(a, s)? * Expr::rational(1, 2) * e.clone().recip(),
        Expr::ApplyF(a) => Expr::apply_f_prime((**a).clone()) * differentiate(a, s)?,
        Expr::ApplyFPrime(_) => {
            return Err(ExprError::UnsupportedDerivative(
                "second derivative of the abstract source f".into(),
            ))
        }
    })
}

/// Simultaneous substitution; replacement expressions are not re-scanned.
pub fn substitute(e: &Expr, b: &Binding) -> Expr {
    if b.is_empty() {
        return e.clone();
    }
    match e {
        Expr::Symbol(name) => match b.get(name) {
            Some(BoundValue::Number(v)) => Expr::float(*v),
            Some(BoundValue::Expr(x)) => x.clone(),
            None => e.clone(),
        },
        other => other.map_children(|c| substitute(c, b)),
    }
}

/// IEEE double evaluation; `Log` evaluates `log|.|`.
pub fn evaluate(
    e: &Expr,
    b: &Binding,
    source: Option<&dyn SourceFunction>,
) -> Result<f64, ExprError> {
    let missing: Vec<String> = e
        .free_symbols()
        .into_iter()
        .filter(|s| b.get(s).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(ExprError::UnboundSymbol(missing));
    }
    eval_inner(e, b, source, 0)
}

fn eval_inner(
    e: &Expr,
    b: &Binding,
    source: Option<&dyn SourceFunction>,
    depth: usize,
) -> Result<f64, ExprError> {
    let rec = |x: &Expr| eval_inner(x, b, source, depth);
    let v = match e {
        Expr::Const(n) => n.to_f64(),
        Expr::Symbol(name) => match b.get(name) {
            Some(BoundValue::Number(v)) => *v,
            Some(BoundValue::Expr(x)) => {
                if depth > 32 {
                    return Err(ExprError::Domain(format!("binding cycle through {name}")));
                }
                eval_inner(x, b, source, depth + 1)?
            }
            None => return Err(ExprError::UnboundSymbol(vec![name.to_string()])),
        },
        Expr::Sum(ts) => {
            let mut acc = 0.0;
            for t in ts {
                acc += rec(t)?;
            }
            acc
        }
        Expr::Product(fs) => {
            let mut acc = 1.0;
            for f in fs {
                acc *= rec(f)?;
            }
            acc
        }
        Expr::Pow(base, ex) => {
            let bv = rec(base)?;
            let ev = rec(ex)?;
            if bv == 0.0 && ev < 0.0 {
                return Err(ExprError::Domain("zero raised to a negative power".into()));
            }
            match ex.as_const() {
                Some(Number::Rational(q)) if q.is_integer() => {
                    bv.powi(q.numer().to_i32().unwrap_or(i32::MAX))
                }
                _ if ev.fract() == 0.0 && ev.abs() < 1e9 => bv.powi(ev as i32),
                _ => {
                    if bv < 0.0 {
                        return Err(ExprError::Domain(format!(
                            "negative base {bv} with non-integer exponent"
                        )));
                    }
                    bv.powf(ev)
                }
            }
        }
        Expr::Exp(a) => rec(a)?.exp(),
        Expr::Log(a) => {
            let v = rec(a)?;
            if v == 0.0 {
                return Err(ExprError::Domain("log of zero".into()));
            }
            v.abs().ln()
        }
        Expr::Sqrt(a) => {
            let v = rec(a)?;
            if v < 0.0 {
                return Err(ExprError::Domain(format!("sqrt of negative value {v}")));
            }
            v.sqrt()
        }
        Expr::ApplyF(a) => source.ok_or(ExprError::MissingSource)?.value(rec(a)?),
        Expr::ApplyFPrime(a) => source.ok_or(ExprError::MissingSource)?.derivative(rec(a)?),
    };
    if v.is_nan() {
        return Err(ExprError::Domain(format!("NaN while evaluating {e}")));
    }
    Ok(v)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, head: &str, items: &[&Expr]) -> fmt::Result {
            write!(f, "({head}")?;
            for it in items {
                write!(f, " {it}")?;
            }
            write!(f, ")")
        }
        match self {
            Expr::Const(n) => write!(f, "{n}"),
            Expr::Symbol(s) => write!(f, "{s}"),
            Expr::Sum(ts) => list(f, "+", &ts.iter().collect::<Vec<_>>()),
            Expr::Product(ts) => list(f, "*", &ts.iter().collect::<Vec<_>>()),
            Expr::Pow(b, e) => list(f, "^", &[b, e]),
            Expr::Exp(a) => list(f, "exp", &[a]),
            Expr::Log(a) => list(f, "log", &[a]),
            Expr::Sqrt(a) => list(f, "sqrt", &[a]),
            Expr::ApplyF(a) => list(f, "f", &[a]),
            Expr::ApplyFPrime(a) => list(f, "fp", &[a]),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    /// Parses the parenthesized prefix form produced by `Display`. The tree
    /// is taken literally (no folding), so printing and parsing round-trip.
    fn from_str(s: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(s);
        let mut pos = 0;
        let e = parse_tokens(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(ExprError::Parse {
                pos: tokens[pos].0,
                msg: "trailing input".into(),
            });
        }
        Ok(e)
    }
}

fn tokenize(s: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push((st, &s[st..i]));
            }
            if !c.is_whitespace() {
                out.push((i, &s[i..i + 1]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push((st, &s[st..]));
    }
    out
}

fn parse_tokens(tokens: &[(usize, &str)], pos: &mut usize) -> Result<Expr, ExprError> {
    let err = |p: usize, m: &str| ExprError::Parse {
        pos: p,
        msg: m.to_string(),
    };
    let &(at, tok) = tokens
        .get(*pos)
        .ok_or_else(|| err(usize::MAX, "unexpected end"))?;
    *pos += 1;
    if tok == ")" {
        return Err(err(at, "unexpected ')'"));
    }
    if tok != "(" {
        return parse_atom(at, tok);
    }
    let &(hat, head) = tokens
        .get(*pos)
        .ok_or_else(|| err(at, "missing operator"))?;
    *pos += 1;
    let mut args = Vec::new();
    loop {
        match tokens.get(*pos) {
            None => return Err(err(at, "unclosed '('")),
            Some((_, ")")) => {
                *pos += 1;
                break;
            }
            Some(_) => args.push(parse_tokens(tokens, pos)?),
        }
    }
    let unary = |args: Vec<Expr>| -> Result<Box<Expr>, ExprError> {
        let [a]: [Expr; 1] = args
            .try_into()
            .map_err(|_| err(hat, "expected one argument"))?;
        Ok(Box::new(a))
    };
    Ok(match head {
        "+" => Expr::Sum(args),
        "*" => Expr::Product(args),
        "^" => {
            let [b, e]: [Expr; 2] = args
                .try_into()
                .map_err(|_| err(hat, "'^' takes two arguments"))?;
            Expr::Pow(Box::new(b), Box::new(e))
        }
        "exp" => Expr::Exp(unary(args)?),
        "log" => Expr::Log(unary(args)?),
        "sqrt" => Expr::Sqrt(unary(args)?),
        "f" => Expr::ApplyF(unary(args)?),
        "fp" => Expr::ApplyFPrime(unary(args)?),
        other => return Err(err(hat, &format!("unknown operator '{other}'"))),
    })
}

fn parse_atom(at: usize, tok: &str) -> Result<Expr, ExprError> {
    let looks_numeric = tok
        .strip_prefix('-')
        .unwrap_or(tok)
        .starts_with(|c: char| c.is_ascii_digit())
        || matches!(tok, "inf" | "-inf" | "NaN");
    if !looks_numeric {
        if tok.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Ok(Expr::sym(tok));
        }
        return Err(ExprError::Parse {
            pos: at,
            msg: format!("bad symbol '{tok}'"),
        });
    }
    let bad = || ExprError::Parse {
        pos: at,
        msg: format!("bad number '{tok}'"),
    };
    if let Some((n, d)) = tok.split_once('/') {
        let n: i64 = n.parse().map_err(|_| bad())?;
        let d: i64 = d.parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Expr::Const(Number::Rational(Rational64::new_raw(n, d))));
    }
    if let Ok(i) = tok.parse::<i64>() {
        return Ok(Expr::int(i));
    }
    tok.parse::<f64>().map(Expr::float).map_err(|_| bad())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::sym("x")
    }
    fn t() -> Expr {
        Expr::sym("t")
    }

    #[test]
    fn power_rule() {
        let d = differentiate(&(x() * x()), "x").unwrap();
        let b = Binding::new().with_number("x", 1.7);
        assert!((evaluate(&d, &b, None).unwrap() - 3.4).abs() < 1e-14);
        assert_eq!(d.fold(), d);
    }

    #[test]
    fn chain_rule_exp() {
        let g = Expr::sym("gamma");
        let e = Expr::exp(g.clone() * t());
        let d = differentiate(&e, "t").unwrap();
        let b = Binding::new()
            .with_number("gamma", 0.7)
            .with_number("t", 0.3);
        let expect = 0.7 * (0.21f64).exp();
        assert!((evaluate(&d, &b, None).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn abstract_source_derivative() {
        let e = Expr::apply_f(Expr::sym("u"));
        assert_eq!(
            differentiate(&e, "u").unwrap(),
            Expr::apply_f_prime(Expr::sym("u"))
        );
        let second = differentiate(&Expr::apply_f_prime(Expr::sym("u")), "u");
        assert!(matches!(second, Err(ExprError::UnsupportedDerivative(_))));
        // independent of the variable: fine
        assert!(differentiate(&Expr::apply_f_prime(Expr::sym("u")), "x")
            .unwrap()
            .is_zero());
    }

    #[test]
    fn substitution_examples() {
        let e = x() + t();
        assert_eq!(substitute(&e, &Binding::new().with_number("x", 0.0)), t());
        let composed = substitute(
            &Expr::apply_f(Expr::sym("u")),
            &Binding::new().with_expr("u", Expr::exp(x() / Expr::int(2)) * Expr::sym("v")),
        );
        assert_eq!(
            composed,
            Expr::apply_f(Expr::exp(x() * Expr::rational(1, 2)) * Expr::sym("v"))
        );
        let y = Expr::sym("y");
        let l = substitute(
            &Expr::log(x()),
            &Binding::new().with_expr("x", Expr::exp(y.clone())),
        );
        assert_eq!(l, y);
    }

    #[test]
    fn substitution_is_simultaneous() {
        let e = x() + t() * Expr::int(2);
        let b = Binding::new().with_expr("x", t()).with_expr("t", x());
        assert_eq!(substitute(&e, &b), t() + x() * Expr::int(2));
        assert_eq!(substitute(&e, &Binding::new()), e);
    }

    #[test]
    fn evaluation_examples() {
        let b = Binding::new().with_number("x", 3.0);
        assert!((evaluate(&Expr::exp(Expr::log(x())), &b, None).unwrap() - 3.0).abs() < 1e-14);
        let neg = Binding::new().with_number("x", -2.0);
        let v = evaluate(&Expr::log(x()), &neg, None).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);

        let quad = (|z: f64| z * z, |z: f64| 2.0 * z);
        let u = Binding::new().with_number("u", 2.0);
        let v = evaluate(&Expr::apply_f(Expr::sym("u")), &u, Some(&quad)).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn evaluation_errors() {
        let zero = Binding::new().with_number("x", 0.0);
        assert!(matches!(
            evaluate(&Expr::log(x()), &zero, None),
            Err(ExprError::Domain(_))
        ));
        assert!(matches!(
            evaluate(&x().powi(-2), &zero, None),
            Err(ExprError::Domain(_))
        ));
        match evaluate(
            &(x() + t() + Expr::sym("q")),
            &Binding::new().with_number("t", 1.0),
            None,
        ) {
            Err(ExprError::UnboundSymbol(names)) => assert_eq!(names, vec!["q", "x"]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            evaluate(
                &Expr::apply_f(x()),
                &Binding::new().with_number("x", 1.0),
                None
            ),
            Err(ExprError::MissingSource)
        );
    }

    #[test]
    fn folding_rules() {
        assert_eq!(Expr::pow(x(), Expr::zero()), Expr::one());
        assert_eq!(Expr::pow(x(), Expr::one()), x());
        assert_eq!(x() * Expr::zero(), Expr::zero());
        assert_eq!(x() * Expr::one(), x());
        assert_eq!(x() + Expr::zero(), x());
        assert_eq!(Expr::log(Expr::exp(t())), t());
        assert_eq!(
            Expr::rational(1, 3) + Expr::rational(1, 6),
            Expr::rational(1, 2)
        );
        assert_eq!(Expr::sqrt(Expr::rational(9, 4)), Expr::rational(3, 2));
        assert!(matches!(Expr::sqrt(Expr::int(2)), Expr::Sqrt(_)));
        let nested = Expr::Sum(vec![Expr::Sum(vec![x(), Expr::int(1)]), Expr::int(2)]);
        assert_eq!(nested.fold(), Expr::Sum(vec![Expr::int(3), x()]));
    }

    #[test]
    fn text_form_round_trip() {
        let e: Expr = "(+ (^ x 2) (exp t))".parse().unwrap();
        assert_eq!(e, Expr::Sum(vec![x().powi(2), Expr::exp(t())]));
        assert_eq!(e.to_string(), "(+ (^ x 2) (exp t))");
        let g: Expr = "(* -3/4 (f (* 1.5 u)) (fp u) (sqrt x) (log y))"
            .parse()
            .unwrap();
        assert_eq!(g.to_string().parse::<Expr>().unwrap(), g);
        assert!("(+ x".parse::<Expr>().is_err());
        assert!("(bogus x)".parse::<Expr>().is_err());
        assert!("(^ x)".parse::<Expr>().is_err());
    }

    #[test]
    fn expanded_terms_distributes() {
        let e = (x() + t()) * (x() + Expr::int(2));
        assert_eq!(e.expanded_terms(100).len(), 4);
    }
}
