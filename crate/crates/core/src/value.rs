//! Slot values, variable bindings and the small arithmetic template language
//! shared by chunks, production patterns, guards and actions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Signed, Zero};
use thiserror::Error;

/// Exact number type used for slot values. Decimal literals such as `0.8`
/// are read as exact fractions so arithmetic folding never drifts.
pub type Number = Rational64;

/// Unique, stable identifier of a chunk. Chunks loaded from a model keep
/// their model name; chunks created at run time are named `kind.N`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkId(Arc<str>);

impl ChunkId {
    pub fn new(name: impl AsRef<str>) -> Self {
        ChunkId(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A slot value: a symbol, an exact number, or a reference to another chunk.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Sym(String),
    Num(Number),
    Chunk(ChunkId),
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Num(Number::from_integer(n))
    }

    pub fn sym(s: impl Into<String>) -> Self {
        Value::Sym(s.into())
    }

    pub fn chunk(name: impl AsRef<str>) -> Self {
        Value::Chunk(ChunkId::new(name))
    }

    pub fn as_chunk(&self) -> Option<&ChunkId> {
        match self {
            Value::Chunk(id) => Some(id),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<Number> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }
}

fn fmt_number(n: &Number, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if n.is_integer() {
        write!(f, "{}", n.numer())
    } else {
        write!(f, "{}/{}", n.numer(), n.denom())
    }
}

/// Literal syntax, re-readable by [`parse_value`]: `36`, `5/4`, `start`, `@goal1`.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) => f.write_str(s),
            Value::Num(n) => fmt_number(n, f),
            Value::Chunk(id) => write!(f, "@{id}"),
        }
    }
}

/// Variable name without the leading `?`.
pub type Var = String;

/// Variable bindings of one instantiation, ordered by variable name.
pub type Bindings = BTreeMap<Var, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn apply(self, a: Number, b: Number) -> Result<Number, EvalError> {
        let r = match self {
            BinOp::Add => a.checked_add(&b),
            BinOp::Sub => a.checked_sub(&b),
            BinOp::Mul => a.checked_mul(&b),
            BinOp::Div => {
                if b.is_zero() {
                    return Err(EvalError::DivisionByZero);
                }
                a.checked_div(&b)
            }
        };
        r.ok_or(EvalError::Overflow)
    }
}

/// Arithmetic template over bound variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(Value),
    Var(Var),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable ?{0}")]
    Unbound(String),
    #[error("arithmetic on non-number {0}")]
    NotANumber(Value),
    #[error("division by zero")]
    DivisionByZero,
    #[error("arithmetic overflow")]
    Overflow,
}

impl Expr {
    pub fn num(n: i64) -> Self {
        Expr::Const(Value::int(n))
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Expr::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<Value, EvalError> {
        match self {
            Expr::Const(v) => Ok(v.clone()),
            Expr::Var(v) => bindings
                .get(v)
                .cloned()
                .ok_or_else(|| EvalError::Unbound(v.clone())),
            Expr::Bin(op, a, b) => {
                let a = a.eval(bindings)?;
                let b = b.eval(bindings)?;
                let a = a.as_num().ok_or(EvalError::NotANumber(a))?;
                let b = b.as_num().ok_or(EvalError::NotANumber(b))?;
                Ok(Value::Num(op.apply(a, b)?))
            }
        }
    }

    /// Variables referenced, in first-occurrence order.
    pub fn vars(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replace variables with expressions; unmapped variables are kept.
    pub fn substitute(&self, map: &BTreeMap<Var, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(map), b.substitute(map)),
        }
    }

    /// Constant folding plus the linear rewrites used when composing
    /// productions: `(e * a) * b -> e * ab`, `e / c -> e * 1/c`,
    /// `(e + a) + b -> e + (a+b)`, `e - c -> e + -c`, unit elimination.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Bin(op, a, b) => {
                let a = a.simplify();
                let b = b.simplify();
                let an = a.as_const().and_then(Value::as_num);
                let bn = b.as_const().and_then(Value::as_num);
                if let (Some(x), Some(y)) = (an, bn) {
                    if let Ok(r) = op.apply(x, y) {
                        return Expr::Const(Value::Num(r));
                    }
                }
                match (op, bn) {
                    (BinOp::Div, Some(c)) if !c.is_zero() => {
                        return Expr::bin(BinOp::Mul, a, Expr::Const(Value::Num(c.recip())))
                            .simplify();
                    }
                    (BinOp::Sub, Some(c)) => {
                        return Expr::bin(BinOp::Add, a, Expr::Const(Value::Num(-c))).simplify();
                    }
                    (BinOp::Mul, Some(c)) if c == Number::from_integer(1) => return a,
                    (BinOp::Add, Some(c)) if c.is_zero() => return a,
                    _ => {}
                }
                if let Some(c2) = bn {
                    if let Expr::Bin(inner, e, c1) = &a {
                        if let Some(c1) = c1.as_const().and_then(Value::as_num) {
                            let folded = match (op, inner) {
                                (BinOp::Mul, BinOp::Mul) => c1.checked_mul(&c2),
                                (BinOp::Add, BinOp::Add) => c1.checked_add(&c2),
                                _ => None,
                            };
                            if let Some(c) = folded {
                                return Expr::bin(*op, (**e).clone(), Expr::Const(Value::Num(c)))
                                    .simplify();
                            }
                        }
                    }
                }
                Expr::bin(*op, a, b)
            }
        }
    }

    fn is_atomic(&self) -> bool {
        match self {
            Expr::Var(_) => true,
            Expr::Const(Value::Num(n)) => n.is_integer() && !n.is_negative(),
            Expr::Const(_) => true,
            Expr::Bin(..) => false,
        }
    }

    /// Rendering for a `slot=value` position: atoms bare, anything else
    /// parenthesised so the line tokenizer keeps it as one token.
    pub fn slot_form(&self) -> String {
        match self {
            Expr::Const(v) => v.to_string(),
            e if e.is_atomic() => e.to_string(),
            e => format!("({e})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => write!(f, "?{v}"),
            Expr::Const(v) if self.is_atomic() => write!(f, "{v}"),
            Expr::Const(v) => write!(f, "({v})"),
            Expr::Bin(op, a, b) => {
                let wrap = |e: &Expr| {
                    if e.is_atomic() || matches!(e, Expr::Const(_)) {
                        e.to_string()
                    } else {
                        format!("({e})")
                    }
                };
                write!(f, "{} {} {}", wrap(a), op.symbol(), wrap(b))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    /// Binds an unbound left-hand variable, otherwise tests equality.
    Assign,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Assign => "=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

// ---------------------------------------------------------------------------
// Literal and expression syntax
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {message}")]
pub struct SyntaxError {
    /// 1-based character offset inside the parsed text.
    pub column: usize,
    pub message: String,
}

fn syntax(column: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        column: column + 1,
        message: message.into(),
    }
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Number),
    Var(String),
    Sym(String),
    Chunk(String),
    Op(char),
    Cmp(CmpOp),
    LParen,
    RParen,
}

fn parse_decimal(text: &str) -> Option<Number> {
    let (int, frac) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{int}{frac}");
    let numer: i64 = digits.parse().ok()?;
    let denom = 10i64.checked_pow(frac.len() as u32)?;
    Some(Number::new(numer, denom))
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '+' | '-' | '*' | '/' => {
                i += 1;
                Tok::Op(c)
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('=', _) => (CmpOp::Assign, 1),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(syntax(start, "expected `!=`")),
                };
                i += len;
                Tok::Cmp(op)
            }
            '?' | '@' => {
                i += 1;
                let s = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                if s == i || !(is_ident_start(chars[s]) || chars[s].is_ascii_digit()) {
                    return Err(syntax(start, format!("expected a name after `{c}`")));
                }
                let name: String = chars[s..i].iter().collect();
                if c == '?' {
                    Tok::Var(name)
                } else {
                    Tok::Chunk(name)
                }
            }
            c if c.is_ascii_digit() => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                Tok::Num(
                    parse_decimal(&s).ok_or_else(|| syntax(start, format!("bad number `{s}`")))?,
                )
            }
            c if is_ident_start(c) => {
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                Tok::Sym(chars[start..i].iter().collect())
            }
            c => return Err(syntax(start, format!("unexpected character `{c}`"))),
        };
        out.push((start, tok));
    }
    Ok(out)
}

struct ExprParser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl ExprParser {
    fn new(text: &str) -> Result<Self, SyntaxError> {
        let toks = lex(text)?;
        Ok(ExprParser {
            toks,
            pos: 0,
            end: text.chars().count(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(c, _)| *c).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = fold(Expr::bin(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = fold(Expr::bin(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(fold(Expr::bin(BinOp::Sub, Expr::num(0), inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        let col = self.col();
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Tok::Num(n)) => Ok(Expr::Const(Value::Num(n))),
            Some(Tok::Var(v)) => Ok(Expr::Var(v)),
            Some(Tok::Sym(s)) => Ok(Expr::Const(Value::Sym(s))),
            Some(Tok::Chunk(c)) => Ok(Expr::Const(Value::chunk(c))),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(syntax(self.col(), "expected `)`")),
                }
            }
            _ => Err(syntax(col, "expected a value, variable or `(`")),
        }
    }

    fn finish(&self) -> Result<(), SyntaxError> {
        if self.pos < self.toks.len() {
            Err(syntax(self.col(), "unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

/// Fold a binary node whose operands are both numeric constants. Negative
/// and fractional literals therefore parse to single constants.
fn fold(e: Expr) -> Expr {
    if let Expr::Bin(op, a, b) = &e {
        if let (Some(x), Some(y)) = (
            a.as_const().and_then(Value::as_num),
            b.as_const().and_then(Value::as_num),
        ) {
            if let Ok(r) = op.apply(x, y) {
                return Expr::Const(Value::Num(r));
            }
        }
    }
    e
}

/// Parse an arithmetic expression such as `?x + ?y + ?c` or `5/4`.
pub fn parse_expr(text: &str) -> Result<Expr, SyntaxError> {
    let mut p = ExprParser::new(text)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parse a single literal value (`36`, `-5/4`, `start`, `@goal1`).
pub fn parse_value(text: &str) -> Result<Value, SyntaxError> {
    match parse_expr(text)? {
        Expr::Const(v) => Ok(v),
        _ => Err(syntax(0, format!("`{text}` is not a constant"))),
    }
}

/// Parse `lhs OP rhs` where OP is one of `= == != < <= > >=`.
pub fn parse_comparison(text: &str) -> Result<(Expr, CmpOp, Expr), SyntaxError> {
    let mut p = ExprParser::new(text)?;
    let lhs = p.expr()?;
    let op = match p.peek() {
        Some(Tok::Cmp(op)) => *op,
        _ => return Err(syntax(p.col(), "expected a comparison operator")),
    };
    p.pos += 1;
    let rhs = p.expr()?;
    p.finish()?;
    Ok((lhs, op, rhs))
}

/// Evaluate a comparison. `Ok(false)` for a failed test, `Err` when the
/// operands cannot be evaluated or ordered.
pub fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<bool, EvalError> {
    Ok(match op {
        CmpOp::Assign | CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        _ => {
            let x = a.as_num().ok_or_else(|| EvalError::NotANumber(a.clone()))?;
            let y = b.as_num().ok_or_else(|| EvalError::NotANumber(b.clone()))?;
            match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
                _ => unreachable!(),
            }
        }
    })
}
