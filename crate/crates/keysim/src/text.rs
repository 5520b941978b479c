//! Canonical token rendering of symbolic expressions, and the inverse parser.
//!
//! The canonical grammar (also accepted by `keysim simplify`):
//!
//! ```text
//! expr  := xor ('|' xor)*
//! xor   := and ('^' and)*
//! and   := shift ('&' shift)*
//! shift := sum (('<<' | '>>' | '>>>') sum)*     // >>> is arithmetic shift
//! sum   := prod (('+' | '-') prod)*
//! prod  := unary ('*' unary)*
//! unary := ('~' | '-') unary | atom
//! atom  := varN | 'reg(' name ')' | 0x-hex | 'mem'W '(' expr ')'
//!        | 'iter(' expr ')' | 'ret(' name ['.' name] '#' N ')'
//!        | ('zext'|'sext'|'trunc')W '(' expr ')' | '(' expr ')'
//! ```
//!
//! Widths are implicit except at `mem`/`zext`/`sext`/`trunc` markers. The
//! parser fills unmarked widths from context: the top level and memory
//! addresses use the caller-supplied default width, and an extension whose
//! argument carries no marker reads it as 32 bits (the only unmarked
//! widening the lifters produce).

use std::fmt;

use thiserror::Error;

use crate::expr::{BinOp, ExprNode, SymExpr, UnOp, Width};

/// A rendered expression as a sequence of tokens.
///
/// Tokens are the unit of the edit-distance similarity metric: identifiers,
/// hex literals, operators, parentheses, and punctuation each count as one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenString {
    tokens: Vec<String>,
}

impl TokenString {
    pub fn from_tokens(tokens: Vec<String>) -> TokenString {
        TokenString { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for TokenString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut prev: Option<&str> = None;
        let mut prev_prev: Option<&str> = None;
        for tok in &self.tokens {
            if let Some(p) = prev {
                let glue = matches!(tok.as_str(), ")" | "," | "#" | ".")
                    || matches!(p, "(" | "#" | "." | "~")
                    || (tok == "(" && p.chars().next().is_some_and(|c| c.is_ascii_alphanumeric()))
                    || (p == "-" && unary_position(prev_prev));
                if !glue {
                    f.write_str(" ")?;
                }
            }
            f.write_str(tok)?;
            prev_prev = prev;
            prev = Some(tok.as_str());
        }
        Ok(())
    }
}

fn unary_position(before: Option<&str>) -> bool {
    match before {
        None => true,
        Some(t) => matches!(
            t,
            "(" | "," | "+" | "-" | "*" | "&" | "|" | "^" | "<<" | ">>" | ">>>" | "~"
        ),
    }
}

fn op_token(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::And => "&",
        BinOp::Or => "|",
        BinOp::Xor => "^",
        BinOp::Shl => "<<",
        BinOp::Shr => ">>",
        BinOp::Sar => ">>>",
    }
}

fn prec(e: &SymExpr) -> u8 {
    match e.node() {
        ExprNode::Binop { op, .. } => match op {
            BinOp::Or => 1,
            BinOp::Xor => 2,
            BinOp::And => 3,
            BinOp::Shl | BinOp::Shr | BinOp::Sar => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul => 6,
        },
        ExprNode::Unop { .. } => 7,
        _ => 8,
    }
}

fn render(e: &SymExpr, out: &mut Vec<String>) {
    match e.node() {
        ExprNode::Var { index, .. } => out.push(format!("var{index}")),
        ExprNode::Reg { name, .. } => {
            out.push("reg".into());
            out.push("(".into());
            out.push(name.clone());
            out.push(")".into());
        }
        ExprNode::Const { value, .. } => out.push(format!("0x{value:x}")),
        ExprNode::Mem { addr, width } => {
            out.push(format!("mem{}", width.bits()));
            out.push("(".into());
            render(addr, out);
            out.push(")".into());
        }
        ExprNode::Ret {
            callee,
            reg,
            ordinal,
            ..
        } => {
            out.push("ret".into());
            out.push("(".into());
            out.push(callee.clone());
            if let Some(r) = reg {
                out.push(".".into());
                out.push(r.clone());
            }
            out.push("#".into());
            out.push(ordinal.to_string());
            out.push(")".into());
        }
        ExprNode::Iter { body } => {
            out.push("iter".into());
            out.push("(".into());
            render(body, out);
            out.push(")".into());
        }
        ExprNode::Ext { arg, width, signed } => {
            out.push(format!(
                "{}{}",
                if *signed { "sext" } else { "zext" },
                width.bits()
            ));
            out.push("(".into());
            render(arg, out);
            out.push(")".into());
        }
        ExprNode::Trunc { arg, width } => {
            out.push(format!("trunc{}", width.bits()));
            out.push("(".into());
            render(arg, out);
            out.push(")".into());
        }
        ExprNode::Unop { op, arg, .. } => {
            out.push(match op {
                UnOp::Not => "~".into(),
                UnOp::Neg => "-".into(),
            });
            if prec(arg) < 7 {
                out.push("(".into());
                render(arg, out);
                out.push(")".into());
            } else {
                render(arg, out);
            }
        }
        ExprNode::Binop { op, lhs, rhs, .. } => {
            let p = prec(e);
            if prec(lhs) < p {
                out.push("(".into());
                render(lhs, out);
                out.push(")".into());
            } else {
                render(lhs, out);
            }
            out.push(op_token(*op).into());
            if prec(rhs) <= p {
                out.push("(".into());
                render(rhs, out);
                out.push(")".into());
            } else {
                render(rhs, out);
            }
        }
    }
}

/// Render an expression to its canonical token sequence.
pub fn tokenize(e: &SymExpr) -> TokenString {
    let mut tokens = Vec::new();
    render(e, &mut tokens);
    TokenString { tokens }
}

/// Deterministic canonical rendering; structurally equal expressions render
/// identically.
pub fn canonical_text(e: &SymExpr) -> String {
    tokenize(e).to_string()
}

/// Ordering key for commutative operand sorting: node-kind rank, then the
/// recursive canonical text. Constants rank last so `var0 + 0x8` reads the
/// usual way round.
pub fn canonical_key(e: &SymExpr) -> (u8, String) {
    let rank = match e.node() {
        ExprNode::Var { .. } => 0,
        ExprNode::Reg { .. } => 1,
        ExprNode::Mem { .. } => 2,
        ExprNode::Ret { .. } => 3,
        ExprNode::Iter { .. } => 4,
        ExprNode::Ext { .. } => 5,
        ExprNode::Trunc { .. } => 6,
        ExprNode::Unop { .. } => 7,
        ExprNode::Binop { .. } => 8,
        ExprNode::Const { .. } => 9,
    };
    (rank, canonical_text(e))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expression syntax error at token {pos}: {message}")]
pub struct ExprParseError {
    pub pos: usize,
    pub message: String,
}

/// Parse a canonical expression text back into a [`SymExpr`].
///
/// `default_width` fills every width the text leaves implicit; pass the word
/// width of the architecture the text came from.
pub fn parse_expr(text: &str, default_width: Width) -> Result<SymExpr, ExprParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let ast = parser.parse_or()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("trailing tokens"));
    }
    let resolved = resolve(&ast, default_width, default_width)?;
    Ok(resolved)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(u64),
    Op(&'static str),
}

fn lex(text: &str) -> Result<Vec<Tok>, ExprParseError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Tok::Ident(text[start..i].to_string()));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let hex = text[i..].starts_with("0x") || text[i..].starts_with("0X");
            if hex {
                i += 2;
                while i < bytes.len() && (bytes[i] as char).is_ascii_hexdigit() {
                    i += 1;
                }
                let v =
                    u64::from_str_radix(&text[start + 2..i], 16).map_err(|_| ExprParseError {
                        pos: out.len(),
                        message: format!("bad hex literal `{}`", &text[start..i]),
                    })?;
                out.push(Tok::Number(v));
            } else {
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let v = text[start..i].parse::<u64>().map_err(|_| ExprParseError {
                    pos: out.len(),
                    message: format!("bad literal `{}`", &text[start..i]),
                })?;
                out.push(Tok::Number(v));
            }
            continue;
        }
        let two = &text[i..text.len().min(i + 3)];
        let op: &'static str = if two.starts_with(">>>") {
            ">>>"
        } else if two.starts_with(">>") {
            ">>"
        } else if two.starts_with("<<") {
            "<<"
        } else {
            match c {
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '&' => "&",
                '|' => "|",
                '^' => "^",
                '~' => "~",
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '#' => "#",
                '.' => ".",
                _ => {
                    return Err(ExprParseError {
                        pos: out.len(),
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        i += op.len();
        out.push(Tok::Op(op));
    }
    Ok(out)
}

/// Parse tree with unresolved widths.
#[derive(Debug)]
enum Ast {
    Var(u32),
    Reg(String),
    Const(u64),
    Mem(Width, Box<Ast>),
    Ret(String, Option<String>, u32),
    Iter(Box<Ast>),
    Ext(Width, bool, Box<Ast>),
    Trunc(Width, Box<Ast>),
    Unop(UnOp, Box<Ast>),
    Binop(BinOp, Box<Ast>, Box<Ast>),
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> ExprParseError {
        ExprParseError {
            pos: self.pos,
            message: message.into(),
        }
    }

    fn peek_op(&self) -> Option<&'static str> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(o)) => Some(o),
            _ => None,
        }
    }

    fn eat_op(&mut self, op: &str) -> Result<(), ExprParseError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{op}`")))
        }
    }

    fn parse_or(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_xor()?;
        while self.peek_op() == Some("|") {
            self.pos += 1;
            let rhs = self.parse_xor()?;
            lhs = Ast::Binop(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_xor(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_and()?;
        while self.peek_op() == Some("^") {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = Ast::Binop(BinOp::Xor, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_shift()?;
        while self.peek_op() == Some("&") {
            self.pos += 1;
            let rhs = self.parse_shift()?;
            lhs = Ast::Binop(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_shift(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_sum()?;
        loop {
            let op = match self.peek_op() {
                Some("<<") => BinOp::Shl,
                Some(">>>") => BinOp::Sar,
                Some(">>") => BinOp::Shr,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_sum()?;
            lhs = Ast::Binop(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_sum(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_prod()?;
        loop {
            let op = match self.peek_op() {
                Some("+") => BinOp::Add,
                Some("-") => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_prod()?;
            lhs = Ast::Binop(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_prod(&mut self) -> Result<Ast, ExprParseError> {
        let mut lhs = self.parse_unary()?;
        while self.peek_op() == Some("*") {
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Ast::Binop(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Ast, ExprParseError> {
        match self.peek_op() {
            Some("~") => {
                self.pos += 1;
                Ok(Ast::Unop(UnOp::Not, Box::new(self.parse_unary()?)))
            }
            Some("-") => {
                self.pos += 1;
                Ok(Ast::Unop(UnOp::Neg, Box::new(self.parse_unary()?)))
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<Ast, ExprParseError> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(Ast::Const(v))
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.eat_op(")")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                self.parse_ident_atom(&name)
            }
            _ => Err(self.error("expected expression")),
        }
    }

    fn parse_ident_atom(&mut self, name: &str) -> Result<Ast, ExprParseError> {
        if let Some(rest) = name.strip_prefix("var") {
            if let Ok(index) = rest.parse::<u32>() {
                return Ok(Ast::Var(index));
            }
        }
        if name == "reg" {
            self.eat_op("(")?;
            let reg = self.parse_name()?;
            self.eat_op(")")?;
            return Ok(Ast::Reg(reg));
        }
        if name == "iter" {
            self.eat_op("(")?;
            let body = self.parse_or()?;
            self.eat_op(")")?;
            return Ok(Ast::Iter(Box::new(body)));
        }
        if name == "ret" {
            self.eat_op("(")?;
            let callee = self.parse_name()?;
            let reg = if self.peek_op() == Some(".") {
                self.pos += 1;
                Some(self.parse_name()?)
            } else {
                None
            };
            self.eat_op("#")?;
            let ordinal = match self.tokens.get(self.pos) {
                Some(Tok::Number(n)) => *n as u32,
                _ => return Err(self.error("expected call ordinal")),
            };
            self.pos += 1;
            self.eat_op(")")?;
            return Ok(Ast::Ret(callee, reg, ordinal));
        }
        for (prefix, ctor) in [("mem", 0u8), ("zext", 1), ("sext", 2), ("trunc", 3)] {
            if let Some(rest) = name.strip_prefix(prefix) {
                if let Ok(bits) = rest.parse::<u32>() {
                    let width = Width::from_bits(bits)
                        .ok_or_else(|| self.error(format!("bad width {bits}")))?;
                    self.eat_op("(")?;
                    let inner = self.parse_or()?;
                    self.eat_op(")")?;
                    return Ok(match ctor {
                        0 => Ast::Mem(width, Box::new(inner)),
                        1 => Ast::Ext(width, false, Box::new(inner)),
                        2 => Ast::Ext(width, true, Box::new(inner)),
                        _ => Ast::Trunc(width, Box::new(inner)),
                    });
                }
            }
        }
        Err(self.error(format!("unknown identifier `{name}`")))
    }

    fn parse_name(&mut self) -> Result<String, ExprParseError> {
        match self.tokens.get(self.pos) {
            Some(Tok::Ident(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.error("expected name")),
        }
    }
}

/// Intrinsic width carried by markers inside the tree, if any.
fn intrinsic(ast: &Ast) -> Option<Width> {
    match ast {
        Ast::Var(_) | Ast::Reg(_) | Ast::Const(_) | Ast::Ret(..) => None,
        Ast::Mem(w, _) | Ast::Ext(w, _, _) | Ast::Trunc(w, _) => Some(*w),
        Ast::Iter(b) | Ast::Unop(_, b) => intrinsic(b),
        Ast::Binop(op, l, r) => {
            if matches!(op, BinOp::Shl | BinOp::Shr | BinOp::Sar) {
                intrinsic(l)
            } else {
                intrinsic(l).or_else(|| intrinsic(r))
            }
        }
    }
}

fn resolve(ast: &Ast, ctx: Width, default: Width) -> Result<SymExpr, ExprParseError> {
    let err = |m: String| ExprParseError { pos: 0, message: m };
    Ok(match ast {
        Ast::Var(i) => SymExpr::var(*i, ctx),
        Ast::Reg(n) => SymExpr::reg(n.clone(), ctx),
        Ast::Const(v) => SymExpr::constant(*v, ctx),
        Ast::Ret(callee, reg, ordinal) => match reg {
            Some(r) => SymExpr::ret_reg(callee.clone(), r.clone(), *ordinal, ctx),
            None => SymExpr::ret(callee.clone(), *ordinal, ctx),
        },
        Ast::Mem(w, addr) => SymExpr::mem(resolve(addr, default, default)?, *w),
        Ast::Iter(b) => SymExpr::iter(resolve(b, ctx, default)?),
        Ast::Unop(op, a) => SymExpr::unop(*op, resolve(a, ctx, default)?),
        Ast::Ext(w, signed, a) => {
            let from = intrinsic(a).unwrap_or(Width::W32);
            if from.bits() >= w.bits() {
                return Err(err(format!("extension from {from} to {w} does not widen")));
            }
            SymExpr::ext(resolve(a, from, default)?, *w, *signed)
        }
        Ast::Trunc(w, a) => {
            let from = intrinsic(a).unwrap_or(default);
            if from.bits() <= w.bits() {
                return Err(err(format!(
                    "truncation from {from} to {w} does not narrow"
                )));
            }
            SymExpr::trunc(resolve(a, from, default)?, *w)
        }
        Ast::Binop(op, l, r) => {
            let w = intrinsic(ast).unwrap_or(ctx);
            let lhs = resolve(l, w, default)?;
            let rhs = if matches!(op, BinOp::Shl | BinOp::Shr | BinOp::Sar) {
                resolve(r, intrinsic(r).unwrap_or(w), default)?
            } else {
                resolve(r, w, default)?
            };
            if !matches!(op, BinOp::Shl | BinOp::Shr | BinOp::Sar) && lhs.width() != rhs.width() {
                return Err(err(format!(
                    "operand width mismatch: {} vs {}",
                    lhs.width(),
                    rhs.width()
                )));
            }
            SymExpr::binop(*op, lhs, rhs)
        }
    })
}
