//! The textual CFG bundle format and its parser.
//!
//! A bundle is a UTF-8 document of records:
//!
//! ```text
//! # full-line comments only
//! program <name>
//! function <name> arch=<x86_64|arm32> [cc=<sysv64|win64|aapcs32>] entry=<id>
//! block <id> @<hex-addr> [succ=<id:kind,...>]     kind in {ft, taken, jmp}
//! <hex-addr> <mnemonic> <operand>{, <operand>}
//! ```
//!
//! The calling convention defaults from the architecture (sysv64 / aapcs32)
//! and may be overridden. The grammar is normative: anything outside it is
//! rejected with a line/column error. Parsing establishes every structural
//! invariant (unique ids, resolving successors, at most two successors with
//! a conditional branch terminator, strictly increasing instruction
//! addresses, operands well-formed per the function's architecture);
//! [`validate_cfg`] re-checks them on arbitrary values and adds
//! reachability warnings.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::arch::{Arch, CallConv};
use crate::diag::Diagnostic;
use crate::lift::is_conditional_branch;
use crate::operand::parse_operand;

pub type BlockId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub source_name: String,
    pub functions: Vec<Function>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub arch: Arch,
    pub convention: CallConv,
    pub entry: BlockId,
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Blocks reachable from entry, in ascending id order.
    pub fn reachable_blocks(&self) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        if self.block(self.entry).is_some() {
            queue.push_back(self.entry);
            seen.insert(self.entry);
        }
        while let Some(id) = queue.pop_front() {
            if let Some(block) = self.block(id) {
                for (succ, _) in &block.successors {
                    if seen.insert(*succ) {
                        queue.push_back(*succ);
                    }
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Unconditional,
}

impl EdgeKind {
    pub fn tag(self) -> &'static str {
        match self {
            EdgeKind::Fallthrough => "ft",
            EdgeKind::Taken => "taken",
            EdgeKind::Unconditional => "jmp",
        }
    }

    fn from_tag(tag: &str) -> Option<EdgeKind> {
        match tag {
            "ft" => Some(EdgeKind::Fallthrough),
            "taken" => Some(EdgeKind::Taken),
            "jmp" => Some(EdgeKind::Unconditional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub address: u64,
    pub instructions: Vec<Instruction>,
    pub successors: Vec<(BlockId, EdgeKind)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub address: u64,
    pub mnemonic: String,
    pub operands: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}, col {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Cursor<'a> {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            })
            .collect();
        Cursor { lines, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.peek();
        self.pos += 1;
        item
    }
}

fn perr(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        col,
        message: message.into(),
    }
}

fn parse_hex_addr(text: &str, line: usize, col: usize) -> Result<u64, ParseError> {
    let digits = text
        .strip_prefix("0x")
        .ok_or_else(|| perr(line, col, format!("expected 0x-address, got `{text}`")))?;
    u64::from_str_radix(digits, 16)
        .map_err(|_| perr(line, col, format!("bad hex address `{text}`")))
}

fn is_name(text: &str) -> bool {
    let mut chars = text.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse a bundle document into a [`Program`], establishing all invariants.
pub fn parse_bundle(text: &str) -> Result<Program, ParseError> {
    let mut cursor = Cursor::new(text);
    let (line, header) = cursor
        .next()
        .ok_or_else(|| perr(1, 1, "empty bundle: expected `program <name>`"))?;
    let header = header.trim();
    let source_name = header
        .strip_prefix("program ")
        .map(str::trim)
        .ok_or_else(|| perr(line, 1, "expected `program <name>` header"))?;
    if !is_name(source_name) {
        return Err(perr(line, 9, format!("bad program name `{source_name}`")));
    }

    let mut functions: Vec<Function> = Vec::new();
    while let Some((line, text)) = cursor.peek() {
        if !text.trim().starts_with("function ") {
            return Err(perr(
                line,
                1,
                format!("expected `function`, got `{}`", text.trim()),
            ));
        }
        let function = parse_function(&mut cursor)?;
        if functions.iter().any(|f| f.name == function.name) {
            return Err(perr(
                line,
                1,
                format!("duplicate function name `{}`", function.name),
            ));
        }
        functions.push(function);
    }
    Ok(Program {
        source_name: source_name.to_string(),
        functions,
    })
}

fn parse_function(cursor: &mut Cursor) -> Result<Function, ParseError> {
    let (line, text) = cursor.next().expect("caller peeked");
    let rest = text
        .trim()
        .strip_prefix("function ")
        .expect("caller peeked");
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() < 3 || fields.len() > 4 {
        return Err(perr(
            line,
            1,
            "expected `function <name> arch=<a> [cc=<c>] entry=<id>`",
        ));
    }
    let name = fields[0];
    if !is_name(name) {
        return Err(perr(line, 10, format!("bad function name `{name}`")));
    }
    let arch_tag = fields[1]
        .strip_prefix("arch=")
        .ok_or_else(|| perr(line, 1, "expected arch=<x86_64|arm32>"))?;
    let arch = Arch::from_tag(arch_tag)
        .ok_or_else(|| perr(line, 1, format!("unknown arch tag `{arch_tag}`")))?;
    let (cc, entry_field) = if fields.len() == 4 {
        let cc_tag = fields[2]
            .strip_prefix("cc=")
            .ok_or_else(|| perr(line, 1, "expected cc=<sysv64|win64|aapcs32>"))?;
        let cc = CallConv::from_tag(cc_tag)
            .ok_or_else(|| perr(line, 1, format!("unknown cc tag `{cc_tag}`")))?;
        (cc, fields[3])
    } else {
        (arch.default_convention(), fields[2])
    };
    if !cc.matches_arch(arch) {
        return Err(perr(line, 1, format!("cc {cc} does not fit arch {arch}")));
    }
    let entry: BlockId = entry_field
        .strip_prefix("entry=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| perr(line, 1, "expected entry=<id>"))?;

    let mut blocks: Vec<BasicBlock> = Vec::new();
    while let Some((bline, btext)) = cursor.peek() {
        let btext = btext.trim();
        if btext.starts_with("function ") {
            break;
        }
        if !btext.starts_with("block ") {
            return Err(perr(bline, 1, format!("expected `block`, got `{btext}`")));
        }
        let block = parse_block(cursor, arch)?;
        if blocks.iter().any(|b| b.id == block.id) {
            return Err(perr(bline, 7, format!("duplicate block id {}", block.id)));
        }
        blocks.push(block);
    }

    let function = Function {
        name: name.to_string(),
        arch,
        convention: cc,
        entry,
        blocks,
    };
    // structural invariants; reachability is validate_cfg's business
    for d in structural_diagnostics(&function) {
        if d.is_error() {
            return Err(perr(line, 1, format!("function `{name}`: {d}")));
        }
    }
    Ok(function)
}

fn parse_block(cursor: &mut Cursor, arch: Arch) -> Result<BasicBlock, ParseError> {
    let (line, text) = cursor.next().expect("caller peeked");
    let rest = text.trim().strip_prefix("block ").expect("caller peeked");
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(perr(
            line,
            1,
            "expected `block <id> @<hex-addr> [succ=...]`",
        ));
    }
    let id: BlockId = fields[0]
        .parse()
        .map_err(|_| perr(line, 7, format!("bad block id `{}`", fields[0])))?;
    let address = parse_hex_addr(
        fields[1]
            .strip_prefix('@')
            .ok_or_else(|| perr(line, 1, "expected @<hex-addr>"))?,
        line,
        1,
    )?;
    let mut successors = Vec::new();
    if let Some(succ_field) = fields.get(2) {
        let list = succ_field
            .strip_prefix("succ=")
            .ok_or_else(|| perr(line, 1, "expected succ=<id:kind,...>"))?;
        for part in list.split(',') {
            let (id_text, kind_text) = part
                .split_once(':')
                .ok_or_else(|| perr(line, 1, format!("bad successor `{part}`")))?;
            let succ_id: BlockId = id_text
                .parse()
                .map_err(|_| perr(line, 1, format!("bad successor id `{id_text}`")))?;
            let kind = EdgeKind::from_tag(kind_text)
                .ok_or_else(|| perr(line, 1, format!("bad edge kind `{kind_text}`")))?;
            successors.push((succ_id, kind));
        }
    }

    let mut instructions = Vec::new();
    while let Some((iline, itext)) = cursor.peek() {
        let itext = itext.trim();
        if itext.starts_with("block ") || itext.starts_with("function ") {
            break;
        }
        cursor.next();
        instructions.push(parse_instruction(itext, iline, arch)?);
    }
    if instructions.is_empty() {
        return Err(perr(line, 1, format!("block {id} has no instructions")));
    }
    Ok(BasicBlock {
        id,
        address,
        instructions,
        successors,
    })
}

fn parse_instruction(text: &str, line: usize, arch: Arch) -> Result<Instruction, ParseError> {
    let (addr_text, rest) = text
        .split_once(char::is_whitespace)
        .ok_or_else(|| perr(line, 1, "expected `<hex-addr> <mnemonic> ...`"))?;
    let address = parse_hex_addr(addr_text, line, 1)?;
    let rest = rest.trim();
    let (mnemonic, operand_text) = match rest.split_once(char::is_whitespace) {
        Some((m, o)) => (m, o.trim()),
        None => (rest, ""),
    };
    if mnemonic.is_empty()
        || !mnemonic
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
    {
        return Err(perr(
            line,
            1,
            format!("bad mnemonic `{mnemonic}` (lowercase required)"),
        ));
    }
    let operands = split_operands(operand_text);
    for op in &operands {
        parse_operand(op, arch).map_err(|e| perr(line, 1, e.to_string()))?;
    }
    Ok(Instruction {
        address,
        mnemonic: mnemonic.to_string(),
        operands,
    })
}

/// Split on top-level commas, respecting `[...]` and `{...}` groups.
fn split_operands(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '[' | '{' => {
                depth += 1;
                cur.push(c);
            }
            ']' | '}' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out.retain(|s| !s.is_empty());
    out
}

/// Invariant checks shared by the parser (errors abort the parse) and
/// `validate_cfg` (errors and warnings are returned).
fn structural_diagnostics(f: &Function) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let ids: BTreeMap<BlockId, usize> = f.blocks.iter().map(|b| (b.id, 0)).collect();
    if ids.len() != f.blocks.len() {
        let mut seen = BTreeSet::new();
        for b in &f.blocks {
            if !seen.insert(b.id) {
                out.push(Diagnostic::error(format!("duplicate block id {}", b.id)));
            }
        }
    }
    if f.block(f.entry).is_none() {
        out.push(Diagnostic::error(format!(
            "entry block {} does not exist",
            f.entry
        )));
    }
    for block in &f.blocks {
        for (succ, _) in &block.successors {
            if f.block(*succ).is_none() {
                out.push(Diagnostic::error(format!(
                    "block {} lists dangling successor {succ}",
                    block.id
                )));
            }
        }
        if block.successors.len() > 2 {
            out.push(Diagnostic::error(format!(
                "block {} has {} successors (at most 2 allowed)",
                block.id,
                block.successors.len()
            )));
        }
        if block.instructions.is_empty() {
            out.push(Diagnostic::error(format!("block {} is empty", block.id)));
            continue;
        }
        if block.successors.len() == 2 {
            let last = block.instructions.last().expect("non-empty");
            if !is_conditional_branch(&last.mnemonic, f.arch) {
                out.push(Diagnostic::error(format!(
                    "block {} has two successors but ends in `{}`, not a conditional branch",
                    block.id, last.mnemonic
                )));
            }
        }
        for pair in block.instructions.windows(2) {
            if pair[1].address <= pair[0].address {
                out.push(
                    Diagnostic::error(format!(
                        "instruction addresses not strictly increasing in block {}",
                        block.id
                    ))
                    .at(pair[1].address),
                );
            }
        }
    }
    out
}

/// Check all `Function`/`BasicBlock` invariants plus reachability.
///
/// Invariant breaks come back as errors, unreachable blocks as warnings; an
/// empty list means the function is well-formed.
pub fn validate_cfg(f: &Function) -> Vec<Diagnostic> {
    let mut out = structural_diagnostics(f);
    let reachable = f.reachable_blocks();
    for block in &f.blocks {
        if !reachable.contains(&block.id) {
            out.push(Diagnostic::warning(format!(
                "block {} is unreachable from entry {}",
                block.id, f.entry
            )));
        }
    }
    out
}

/// Render a program back to bundle text; `parse_bundle` of the output yields
/// a structurally equal program.
pub fn serialize(program: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "program {}", program.source_name);
    for f in &program.functions {
        let _ = writeln!(
            out,
            "function {} arch={} cc={} entry={}",
            f.name, f.arch, f.convention, f.entry
        );
        for b in &f.blocks {
            let _ = write!(out, "block {} @{:#x}", b.id, b.address);
            if !b.successors.is_empty() {
                let succ: Vec<String> = b
                    .successors
                    .iter()
                    .map(|(id, kind)| format!("{id}:{}", kind.tag()))
                    .collect();
                let _ = write!(out, " succ={}", succ.join(","));
            }
            let _ = writeln!(out);
            for i in &b.instructions {
                let _ = write!(out, "  {:#x} {}", i.address, i.mnemonic);
                if !i.operands.is_empty() {
                    let _ = write!(out, " {}", i.operands.join(", "));
                }
                let _ = writeln!(out);
            }
        }
    }
    out
}
