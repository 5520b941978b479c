//! Per-architecture operand grammars.
//!
//! x86-64 operands: register names (64/32/16/8-bit low parts; the high-byte
//! forms `ah`..`dh` are outside the grammar), `0x..` immediates with an
//! optional sign, `[base+index*scale+disp]` memory references, and bare
//! symbol names for call/branch targets.
//!
//! ARM32 operands: `r0..r12`/`sp`/`lr`/`pc` (with `r13`/`r14`/`r15`
//! normalized to the named forms), `#imm` immediates (decimal or `0x` hex,
//! optional sign), `[rn]` / `[rn, #off]` memory references, `{...}` register
//! lists for push/pop, and symbol names for branch targets.

use std::fmt;

use thiserror::Error;

use crate::arch::Arch;
use crate::expr::Width;

/// A reference to (part of) an architectural register, normalized to the
/// full-width parent name plus an access width.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegRef {
    pub name: String,
    pub width: Width,
}

impl RegRef {
    pub fn new(name: impl Into<String>, width: Width) -> RegRef {
        RegRef {
            name: name.into(),
            width,
        }
    }
}

impl fmt::Display for RegRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.width)
    }
}

/// A memory reference `[base + index*scale + disp]`. ARM32 references only
/// ever populate `base` and `disp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemRef {
    pub base: Option<RegRef>,
    pub index: Option<(RegRef, u8)>,
    pub disp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Reg(RegRef),
    Imm(i64),
    Mem(MemRef),
    RegList(Vec<RegRef>),
    Symbol(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad operand `{text}`: {message}")]
pub struct OperandError {
    pub text: String,
    pub message: String,
}

fn err(text: &str, message: impl Into<String>) -> OperandError {
    OperandError {
        text: text.to_string(),
        message: message.into(),
    }
}

/// Look up an x86-64 register name, returning the parent register and the
/// access width.
pub fn x86_register(name: &str) -> Option<RegRef> {
    const GP64: [&str; 16] = [
        "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r8", "r9", "r10", "r11", "r12",
        "r13", "r14", "r15",
    ];
    const GP32: [&str; 16] = [
        "eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp", "r8d", "r9d", "r10d", "r11d",
        "r12d", "r13d", "r14d", "r15d",
    ];
    const GP16: [&str; 16] = [
        "ax", "bx", "cx", "dx", "si", "di", "bp", "sp", "r8w", "r9w", "r10w", "r11w", "r12w",
        "r13w", "r14w", "r15w",
    ];
    const GP8: [&str; 16] = [
        "al", "bl", "cl", "dl", "sil", "dil", "bpl", "spl", "r8b", "r9b", "r10b", "r11b", "r12b",
        "r13b", "r14b", "r15b",
    ];
    for (table, width) in [
        (&GP64, Width::W64),
        (&GP32, Width::W32),
        (&GP16, Width::W16),
        (&GP8, Width::W8),
    ] {
        if let Some(i) = table.iter().position(|r| *r == name) {
            return Some(RegRef::new(GP64[i], width));
        }
    }
    None
}

/// Look up an ARM32 register name (aliases normalized).
pub fn arm_register(name: &str) -> Option<RegRef> {
    let canonical = match name {
        "r13" => "sp",
        "r14" => "lr",
        "r15" => "pc",
        other => other,
    };
    Arch::Arm32
        .register_file()
        .iter()
        .find(|r| **r == canonical)
        .map(|r| RegRef::new(*r, Width::W32))
}

pub fn register(name: &str, arch: Arch) -> Option<RegRef> {
    match arch {
        Arch::X86_64 => x86_register(name),
        Arch::Arm32 => arm_register(name),
    }
}

fn is_symbol(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_int(text: &str) -> Option<i64> {
    let (neg, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text),
    };
    let v = if let Some(hex) = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        rest.parse::<u64>().ok()?
    };
    let v = v as i64;
    Some(if neg { v.wrapping_neg() } else { v })
}

/// Parse one operand under the grammar for `arch`.
pub fn parse_operand(text: &str, arch: Arch) -> Result<Operand, OperandError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(err(text, "empty operand"));
    }
    match arch {
        Arch::X86_64 => parse_x86_operand(text),
        Arch::Arm32 => parse_arm_operand(text),
    }
}

fn parse_x86_operand(text: &str) -> Result<Operand, OperandError> {
    if let Some(reg) = x86_register(text) {
        return Ok(Operand::Reg(reg));
    }
    if text.starts_with('[') {
        return parse_x86_mem(text).map(Operand::Mem);
    }
    // immediates are hex-only in this grammar
    if text.starts_with("0x") || text.starts_with("-0x") {
        return parse_int(text)
            .map(Operand::Imm)
            .ok_or_else(|| err(text, "bad immediate"));
    }
    if is_symbol(text) {
        return Ok(Operand::Symbol(text.to_string()));
    }
    Err(err(
        text,
        "not a register, 0x-immediate, memory reference, or symbol",
    ))
}

fn parse_x86_mem(text: &str) -> Result<MemRef, OperandError> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| err(text, "unterminated memory reference"))?;
    let mut mem = MemRef {
        base: None,
        index: None,
        disp: 0,
    };
    // split into signed terms
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut cur = String::new();
    let mut neg = false;
    for c in inner.chars() {
        match c {
            '+' | '-' if !cur.trim().is_empty() => {
                terms.push((neg, cur.trim().to_string()));
                cur = String::new();
                neg = c == '-';
            }
            '-' if cur.trim().is_empty() => neg = true,
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        terms.push((neg, cur.trim().to_string()));
    }
    if terms.is_empty() {
        return Err(err(text, "empty memory reference"));
    }
    for (negated, term) in terms {
        if let Some((reg_text, scale_text)) = term.split_once('*') {
            let reg = x86_register(reg_text.trim())
                .ok_or_else(|| err(text, format!("bad index register `{}`", reg_text.trim())))?;
            if reg.width != Width::W64 {
                return Err(err(text, "index register must be 64-bit"));
            }
            let scale: u8 = scale_text
                .trim()
                .parse()
                .map_err(|_| err(text, "bad scale"))?;
            if !matches!(scale, 1 | 2 | 4 | 8) {
                return Err(err(text, "scale must be 1, 2, 4, or 8"));
            }
            if negated {
                return Err(err(text, "negated index term"));
            }
            if mem.index.is_some() {
                return Err(err(text, "two index terms"));
            }
            mem.index = Some((reg, scale));
        } else if let Some(reg) = x86_register(&term) {
            if reg.width != Width::W64 {
                return Err(err(text, "address register must be 64-bit"));
            }
            if negated {
                return Err(err(text, "negated register term"));
            }
            if mem.base.is_none() {
                mem.base = Some(reg);
            } else if mem.index.is_none() {
                mem.index = Some((reg, 1));
            } else {
                return Err(err(text, "too many register terms"));
            }
        } else if let Some(v) = parse_int(&term) {
            let v = if negated { v.wrapping_neg() } else { v };
            mem.disp = mem.disp.wrapping_add(v);
        } else {
            return Err(err(text, format!("bad address term `{term}`")));
        }
    }
    Ok(mem)
}

fn parse_arm_operand(text: &str) -> Result<Operand, OperandError> {
    if let Some(reg) = arm_register(text) {
        return Ok(Operand::Reg(reg));
    }
    if let Some(imm) = text.strip_prefix('#') {
        return parse_int(imm)
            .map(Operand::Imm)
            .ok_or_else(|| err(text, "bad immediate"));
    }
    if text.starts_with('[') {
        let inner = text
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(|| err(text, "unterminated memory reference"))?;
        let mut parts = inner.splitn(2, ',');
        let base_text = parts.next().unwrap_or("").trim();
        let base = arm_register(base_text)
            .ok_or_else(|| err(text, format!("bad base register `{base_text}`")))?;
        let disp = match parts.next() {
            None => 0,
            Some(offset) => {
                let offset = offset.trim();
                let imm = offset
                    .strip_prefix('#')
                    .ok_or_else(|| err(text, "offset must be an immediate"))?;
                parse_int(imm).ok_or_else(|| err(text, "bad offset"))?
            }
        };
        return Ok(Operand::Mem(MemRef {
            base: Some(base),
            index: None,
            disp,
        }));
    }
    if text.starts_with('{') {
        let inner = text
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| err(text, "unterminated register list"))?;
        let mut regs = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            let reg =
                arm_register(part).ok_or_else(|| err(text, format!("bad register `{part}`")))?;
            regs.push(reg);
        }
        if regs.is_empty() {
            return Err(err(text, "empty register list"));
        }
        return Ok(Operand::RegList(regs));
    }
    if text.starts_with("0x") {
        // bare hex: branch target address (ignored semantically)
        return parse_int(text)
            .map(Operand::Imm)
            .ok_or_else(|| err(text, "bad address"));
    }
    if is_symbol(text) {
        return Ok(Operand::Symbol(text.to_string()));
    }
    Err(err(
        text,
        "not a register, #immediate, memory reference, register list, or symbol",
    ))
}
