//! Recursive-descent parser for the scalar expression grammar.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?          -- right associative
//! atom   := number | ident '(' expr ')' | ident | '(' expr ')'
//! ```
//!
//! Identifiers resolve to the variables `t`, `q1..qn`, `dq1..dqn`, to the
//! function names `sin cos exp log sqrt abs`, or to named constants from the
//! symbol table (resolved at parse time, so evaluation never sees names).

use alloc::collections::BTreeMap;
use alloc::string::String;

use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{ParseError, ParseErrorKind};

/// Named constants available to expressions; resolved while parsing.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    values: BTreeMap<String, f64>,
}

impl SymbolTable {
    pub fn new() -> Self {
        SymbolTable::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.values.iter()
    }
}

/// Parse `text` as an expression over at most `n` spatial coordinates.
pub fn parse(text: &str, n: usize, symbols: &SymbolTable) -> Result<Expr, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        n,
        symbols,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.fail_here(ParseErrorKind::UnexpectedEnd {
            expected: "an expression",
        }));
    }
    let expr = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.fail_here(ParseErrorKind::TrailingInput));
    }
    Ok(expr)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    n: usize,
    symbols: &'a SymbolTable,
}

const ATOM_EXPECTED: &str = "a number, an identifier, '(' or '-'";

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r')) {
            self.pos += 1;
        }
    }

    fn fail_here(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn fail_at(&self, offset: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { offset, kind }
    }

    fn expect_atom_or_end(&self, expected: &'static str) -> ParseError {
        match self.peek() {
            Some(c) => self.fail_here(ParseErrorKind::UnexpectedChar {
                found: c as char,
                expected,
            }),
            None => self.fail_here(ParseErrorKind::UnexpectedEnd { expected }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term()?;
                    acc = Expr::Binary(BinaryOp::Add, acc.into(), rhs.into());
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term()?;
                    acc = Expr::Binary(BinaryOp::Sub, acc.into(), rhs.into());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.factor()?;
                    acc = Expr::Binary(BinaryOp::Mul, acc.into(), rhs.into());
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.factor()?;
                    acc = Expr::Binary(BinaryOp::Div, acc.into(), rhs.into());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            self.skip_ws();
            let inner = self.factor()?;
            return Ok(Expr::neg(inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinaryOp::Pow, base.into(), exponent.into()));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(inner)
                } else {
                    Err(self.expect_atom_or_end("')'"))
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.expect_atom_or_end(ATOM_EXPECTED)),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. "2e" followed by a name)
                self.pos = mark;
            }
        }
        let text = core::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
            _ => Err(self.fail_at(start, ParseErrorKind::InvalidNumber(text.into()))),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = core::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");

        if let Some(func) = function_op(name) {
            self.skip_ws();
            if self.peek() != Some(b'(') {
                return Err(self.expect_atom_or_end("'(' after a function name"));
            }
            self.pos += 1;
            let inner = self.expr()?;
            self.skip_ws();
            if self.peek() != Some(b')') {
                return Err(self.expect_atom_or_end("')'"));
            }
            self.pos += 1;
            return Ok(Expr::unary(func, inner));
        }

        if name == "t" {
            return Ok(Expr::time());
        }
        if let Some(idx) = indexed(name, "q") {
            return self.coord_var(start, name, idx, false);
        }
        if let Some(idx) = indexed(name, "dq") {
            return self.coord_var(start, name, idx, true);
        }
        if let Some(v) = self.symbols.get(name) {
            return Ok(Expr::Const(v));
        }
        Err(self.fail_at(start, ParseErrorKind::UnknownIdentifier(name.into())))
    }

    fn coord_var(
        &self,
        start: usize,
        name: &str,
        idx: usize,
        velocity: bool,
    ) -> Result<Expr, ParseError> {
        if idx == 0 || idx > self.n {
            return Err(self.fail_at(
                start,
                ParseErrorKind::IndexOutOfRange {
                    name: name.into(),
                    dim: self.n,
                },
            ));
        }
        Ok(if velocity {
            Expr::velocity(idx)
        } else {
            Expr::coord(idx)
        })
    }
}

fn function_op(name: &str) -> Option<UnaryOp> {
    Some(match name {
        "sin" => UnaryOp::Sin,
        "cos" => UnaryOp::Cos,
        "exp" => UnaryOp::Exp,
        "log" => UnaryOp::Log,
        "sqrt" => UnaryOp::Sqrt,
        "abs" => UnaryOp::Abs,
        _ => return None,
    })
}

/// `indexed("q12", "q") == Some(12)`; `None` unless the rest is all digits.
fn indexed(name: &str, prefix: &str) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}
