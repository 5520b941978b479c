//! Translation of the supported x86-64 and ARM32 instruction subsets into a
//! common micro-IR.
//!
//! Supported x86-64 mnemonics: mov movzx movsx lea add sub imul and or xor
//! not neg shl shr sar inc dec cmp test push pop call ret jmp jcc.
//! Supported ARM32 mnemonics: mov mvn add sub rsb mul and orr eor lsl lsr
//! asr cmp tst ldr str push pop b b<cond> bl bx, plus the s-suffixed forms
//! of the data instructions (movs, adds, ...), which set the comparison
//! record like `cmp <result>, #0`.
//!
//! Unsupported instructions lift to an `Unsupported` marker that havocs the
//! first register operand instead of aborting. x86-64 flag-setting
//! arithmetic (add sub and or xor neg inc dec shl shr sar) overwrites the
//! last-comparison record with (result, 0); `imul`, whose zero flag is
//! undefined, does not. ARM32 data instructions only set it with the `s`
//! suffix. Register-specified shift counts are supported on x86-64 (counts
//! mask modulo the width, matching the hardware) but not on ARM32, where
//! counts of 32 and above saturate in ways the IR does not model.

use std::collections::BTreeMap;

use crate::arch::Arch;
use crate::diag::Diagnostic;
use crate::expr::{BinOp, UnOp, Width};
use crate::ingest::Function;
use crate::operand::{parse_operand, MemRef, Operand, RegRef};

/// Condition codes for conditional branches, shared by both architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Ult,
    Ule,
    Ugt,
    Uge,
    Neg,
    Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpFlavor {
    SubCmp,
    AndTst,
}

impl CmpFlavor {
    pub fn tag(self) -> &'static str {
        match self {
            CmpFlavor::SubCmp => "cmp",
            CmpFlavor::AndTst => "tst",
        }
    }
}

/// A value template resolved against the symbolic state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rvalue {
    Reg(RegRef),
    Imm(u64, Width),
    /// Effective address of a memory reference (`lea`).
    Addr(MemRef),
    /// Contents of a memory reference, at an explicit width.
    Mem(MemRef, Width),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallTarget {
    Name(String),
    Reg(RegRef),
}

impl CallTarget {
    /// Callee label: symbol name, or the register name for indirect calls.
    pub fn label(&self) -> &str {
        match self {
            CallTarget::Name(n) => n,
            CallTarget::Reg(r) => &r.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MicroOp {
    Move {
        dst: RegRef,
        src: Rvalue,
        /// `Some(signed)` widens the source to the destination width
        /// (movzx/movsx); `None` requires matching widths.
        extend: Option<bool>,
    },
    Binop {
        op: BinOp,
        dst: RegRef,
        lhs: Rvalue,
        rhs: Rvalue,
        set_flags: bool,
    },
    Unop {
        op: UnOp,
        dst: RegRef,
        arg: Rvalue,
        set_flags: bool,
    },
    Load {
        dst: RegRef,
        addr: MemRef,
        width: Width,
    },
    Store {
        addr: MemRef,
        src: Rvalue,
        width: Width,
    },
    Compare {
        lhs: Rvalue,
        rhs: Rvalue,
        flavor: CmpFlavor,
    },
    Branch {
        cond: Option<Cond>,
    },
    Call {
        target: CallTarget,
    },
    Ret,
    Push {
        src: Rvalue,
    },
    Pop {
        dst: RegRef,
    },
    Unsupported {
        mnemonic: String,
        havoc: Option<RegRef>,
    },
}

/// A function together with the micro-op sequence of every instruction.
#[derive(Debug, Clone)]
pub struct LiftedFunction {
    pub function: Function,
    pub micro: BTreeMap<u64, Vec<MicroOp>>,
    /// Call and unsupported-havoc sites, numbered in address order; the
    /// ordinal tags the `ret(...)` seeds those sites produce.
    pub call_ordinals: BTreeMap<u64, u32>,
}

impl LiftedFunction {
    pub fn micro_at(&self, address: u64) -> &[MicroOp] {
        self.micro.get(&address).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn is_conditional_branch(mnemonic: &str, arch: Arch) -> bool {
    match arch {
        Arch::X86_64 => x86_branch_cond(mnemonic).is_some(),
        Arch::Arm32 => arm_branch_cond(mnemonic).is_some(),
    }
}

fn x86_branch_cond(mnemonic: &str) -> Option<Cond> {
    Some(match mnemonic {
        "je" | "jz" => Cond::Eq,
        "jne" | "jnz" => Cond::Ne,
        "jl" => Cond::Lt,
        "jle" => Cond::Le,
        "jg" => Cond::Gt,
        "jge" => Cond::Ge,
        "jb" => Cond::Ult,
        "jbe" => Cond::Ule,
        "ja" => Cond::Ugt,
        "jae" => Cond::Uge,
        "js" => Cond::Neg,
        "jns" => Cond::Pos,
        _ => return None,
    })
}

fn arm_branch_cond(mnemonic: &str) -> Option<Cond> {
    Some(match mnemonic {
        "beq" => Cond::Eq,
        "bne" => Cond::Ne,
        "blt" => Cond::Lt,
        "ble" => Cond::Le,
        "bgt" => Cond::Gt,
        "bge" => Cond::Ge,
        "blo" | "bcc" => Cond::Ult,
        "bls" => Cond::Ule,
        "bhi" => Cond::Ugt,
        "bhs" | "bcs" => Cond::Uge,
        "bmi" => Cond::Neg,
        "bpl" => Cond::Pos,
        _ => return None,
    })
}

/// Lift one instruction. Unsupported mnemonics or operand shapes produce an
/// `Unsupported` marker plus a diagnostic rather than an error.
pub fn lift_instruction(
    instr: &crate::ingest::Instruction,
    arch: Arch,
) -> (Vec<MicroOp>, Option<Diagnostic>) {
    let operands: Result<Vec<Operand>, _> = instr
        .operands
        .iter()
        .map(|o| parse_operand(o, arch))
        .collect();
    let operands = match operands {
        Ok(ops) => ops,
        Err(e) => return unsupported(instr, &[], format!("operand error: {e}")),
    };
    let lifted = match arch {
        Arch::X86_64 => lift_x86(&instr.mnemonic, &operands),
        Arch::Arm32 => lift_arm(&instr.mnemonic, &operands),
    };
    match lifted {
        Ok(ops) => (ops, None),
        Err(reason) => unsupported(instr, &operands, reason),
    }
}

fn unsupported(
    instr: &crate::ingest::Instruction,
    operands: &[Operand],
    reason: String,
) -> (Vec<MicroOp>, Option<Diagnostic>) {
    let havoc = operands.iter().find_map(|o| match o {
        Operand::Reg(r) => Some(r.clone()),
        _ => None,
    });
    let diag = Diagnostic::warning(format!(
        "unsupported mnemonic '{}' ({reason})",
        instr.mnemonic
    ))
    .at(instr.address);
    (
        vec![MicroOp::Unsupported {
            mnemonic: instr.mnemonic.clone(),
            havoc,
        }],
        Some(diag),
    )
}

/// Lift every instruction of a validated function.
pub fn lift_function(f: &Function) -> (LiftedFunction, Vec<Diagnostic>) {
    let mut micro = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut ret_seed_sites = Vec::new();
    for block in &f.blocks {
        for instr in &block.instructions {
            let (ops, diag) = lift_instruction(instr, f.arch);
            if ops.iter().any(|op| {
                matches!(op, MicroOp::Call { .. })
                    || matches!(op, MicroOp::Unsupported { havoc: Some(_), .. })
            }) {
                ret_seed_sites.push(instr.address);
            }
            micro.insert(instr.address, ops);
            diagnostics.extend(diag);
        }
    }
    ret_seed_sites.sort_unstable();
    ret_seed_sites.dedup();
    let call_ordinals = ret_seed_sites
        .into_iter()
        .enumerate()
        .map(|(i, addr)| (addr, i as u32))
        .collect();
    (
        LiftedFunction {
            function: f.clone(),
            micro,
            call_ordinals,
        },
        diagnostics,
    )
}

// ---- x86-64 ----

fn x86_src(op: &Operand, width: Width) -> Result<Rvalue, String> {
    Ok(match op {
        Operand::Reg(r) => Rvalue::Reg(r.clone()),
        Operand::Imm(v) => Rvalue::Imm(*v as u64, width),
        Operand::Mem(m) => Rvalue::Mem(m.clone(), width),
        _ => return Err("bad source operand".into()),
    })
}

fn dst_reg(op: &Operand) -> Result<RegRef, String> {
    match op {
        Operand::Reg(r) => Ok(r.clone()),
        _ => Err("destination must be a register".into()),
    }
}

fn lift_x86(mnemonic: &str, ops: &[Operand]) -> Result<Vec<MicroOp>, String> {
    let two = |ops: &[Operand]| -> Result<(), String> {
        if ops.len() == 2 {
            Ok(())
        } else {
            Err(format!("expected 2 operands, got {}", ops.len()))
        }
    };
    match mnemonic {
        "mov" => {
            two(ops)?;
            match (&ops[0], &ops[1]) {
                (Operand::Reg(d), Operand::Mem(m)) => Ok(vec![MicroOp::Load {
                    dst: d.clone(),
                    addr: m.clone(),
                    width: d.width,
                }]),
                (Operand::Mem(m), src) => {
                    let width = match src {
                        Operand::Reg(r) => r.width,
                        Operand::Imm(_) => Width::W64, // unannotated imm-to-mem stores the full word
                        _ => return Err("bad store source".into()),
                    };
                    Ok(vec![MicroOp::Store {
                        addr: m.clone(),
                        src: x86_src(src, width)?,
                        width,
                    }])
                }
                (Operand::Reg(d), src) => {
                    if let Operand::Reg(s) = src {
                        if s.width != d.width {
                            return Err("mov register width mismatch".into());
                        }
                    }
                    Ok(vec![MicroOp::Move {
                        dst: d.clone(),
                        src: x86_src(src, d.width)?,
                        extend: None,
                    }])
                }
                _ => Err("bad mov operands".into()),
            }
        }
        "movzx" | "movsx" => {
            two(ops)?;
            let d = dst_reg(&ops[0])?;
            let s = match &ops[1] {
                Operand::Reg(r) if r.width.bits() < d.width.bits() => r.clone(),
                Operand::Reg(_) => return Err("source must be narrower".into()),
                // the bundle grammar carries no memory size annotations
                _ => return Err("memory source needs a size annotation".into()),
            };
            Ok(vec![MicroOp::Move {
                dst: d,
                src: Rvalue::Reg(s),
                extend: Some(mnemonic == "movsx"),
            }])
        }
        "lea" => {
            two(ops)?;
            let d = dst_reg(&ops[0])?;
            match &ops[1] {
                Operand::Mem(m) => Ok(vec![MicroOp::Move {
                    dst: d,
                    src: Rvalue::Addr(m.clone()),
                    extend: None,
                }]),
                _ => Err("lea source must be a memory reference".into()),
            }
        }
        "add" | "sub" | "and" | "or" | "xor" => {
            two(ops)?;
            let d = dst_reg(&ops[0])?;
            let op = match mnemonic {
                "add" => BinOp::Add,
                "sub" => BinOp::Sub,
                "and" => BinOp::And,
                "or" => BinOp::Or,
                _ => BinOp::Xor,
            };
            Ok(vec![MicroOp::Binop {
                op,
                dst: d.clone(),
                lhs: Rvalue::Reg(d.clone()),
                rhs: x86_src(&ops[1], d.width)?,
                set_flags: true,
            }])
        }
        // two- and three-operand forms only; hardware has no 8-bit variant
        "imul" => match ops.len() {
            2 => {
                let d = dst_reg(&ops[0])?;
                if d.width == Width::W8 {
                    return Err("8-bit imul does not exist".into());
                }
                Ok(vec![MicroOp::Binop {
                    op: BinOp::Mul,
                    dst: d.clone(),
                    lhs: Rvalue::Reg(d.clone()),
                    rhs: x86_src(&ops[1], d.width)?,
                    set_flags: false,
                }])
            }
            3 => {
                let d = dst_reg(&ops[0])?;
                if d.width == Width::W8 {
                    return Err("8-bit imul does not exist".into());
                }
                Ok(vec![MicroOp::Binop {
                    op: BinOp::Mul,
                    dst: d.clone(),
                    lhs: x86_src(&ops[1], d.width)?,
                    rhs: x86_src(&ops[2], d.width)?,
                    set_flags: false,
                }])
            }
            n => Err(format!("expected 2 or 3 operands, got {n}")),
        },
        "not" | "neg" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            let d = dst_reg(&ops[0])?;
            Ok(vec![MicroOp::Unop {
                op: if mnemonic == "not" {
                    UnOp::Not
                } else {
                    UnOp::Neg
                },
                dst: d.clone(),
                arg: Rvalue::Reg(d),
                set_flags: mnemonic == "neg",
            }])
        }
        "shl" | "shr" | "sar" => {
            two(ops)?;
            let d = dst_reg(&ops[0])?;
            if d.width.bits() < 32 {
                // hardware masks counts by 31, so an 8/16-bit operand can
                // shift out entirely; the mod-width IR shift cannot say that
                return Err("8/16-bit shift destinations are not modeled".into());
            }
            let op = match mnemonic {
                "shl" => BinOp::Shl,
                "shr" => BinOp::Shr,
                _ => BinOp::Sar,
            };
            let count = match &ops[1] {
                Operand::Imm(v) => Rvalue::Imm(*v as u64 % d.width.bits() as u64, Width::W8),
                Operand::Reg(r) if r.name == "rcx" && r.width == Width::W8 => {
                    Rvalue::Reg(r.clone())
                }
                Operand::Reg(_) => return Err("shift count register must be cl".into()),
                _ => return Err("bad shift count".into()),
            };
            Ok(vec![MicroOp::Binop {
                op,
                dst: d.clone(),
                lhs: Rvalue::Reg(d),
                rhs: count,
                set_flags: true,
            }])
        }
        "inc" | "dec" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            let d = dst_reg(&ops[0])?;
            Ok(vec![MicroOp::Binop {
                op: if mnemonic == "inc" {
                    BinOp::Add
                } else {
                    BinOp::Sub
                },
                dst: d.clone(),
                lhs: Rvalue::Reg(d.clone()),
                rhs: Rvalue::Imm(1, d.width),
                set_flags: true,
            }])
        }
        "cmp" | "test" => {
            two(ops)?;
            let width = match (&ops[0], &ops[1]) {
                (Operand::Reg(r), _) | (_, Operand::Reg(r)) => r.width,
                _ => Width::W64,
            };
            Ok(vec![MicroOp::Compare {
                lhs: x86_src(&ops[0], width)?,
                rhs: x86_src(&ops[1], width)?,
                flavor: if mnemonic == "cmp" {
                    CmpFlavor::SubCmp
                } else {
                    CmpFlavor::AndTst
                },
            }])
        }
        "push" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            Ok(vec![MicroOp::Push {
                src: x86_src(&ops[0], Width::W64)?,
            }])
        }
        "pop" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            Ok(vec![MicroOp::Pop {
                dst: dst_reg(&ops[0])?,
            }])
        }
        "call" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            let target = match &ops[0] {
                Operand::Symbol(s) => CallTarget::Name(s.clone()),
                Operand::Reg(r) => CallTarget::Reg(r.clone()),
                _ => return Err("bad call target".into()),
            };
            Ok(vec![MicroOp::Call { target }])
        }
        "ret" => Ok(vec![MicroOp::Ret]),
        "jmp" => Ok(vec![MicroOp::Branch { cond: None }]),
        _ => match x86_branch_cond(mnemonic) {
            Some(cond) => Ok(vec![MicroOp::Branch { cond: Some(cond) }]),
            None => Err("unknown mnemonic".into()),
        },
    }
}

// ---- ARM32 ----

fn arm_src(op: &Operand) -> Result<Rvalue, String> {
    Ok(match op {
        Operand::Reg(r) => Rvalue::Reg(r.clone()),
        Operand::Imm(v) => Rvalue::Imm(*v as u64, Width::W32),
        _ => return Err("bad source operand".into()),
    })
}

fn lift_arm(mnemonic: &str, ops: &[Operand]) -> Result<Vec<MicroOp>, String> {
    // the s suffix requests the comparison record
    let (base, set_flags) = match mnemonic {
        "mov" | "mvn" | "add" | "sub" | "rsb" | "mul" | "and" | "orr" | "eor" | "lsl" | "lsr"
        | "asr" | "cmp" | "tst" | "ldr" | "str" | "push" | "pop" | "b" | "bl" | "bx" => {
            (mnemonic, false)
        }
        _ => match mnemonic.strip_suffix('s') {
            Some(base)
                if matches!(
                    base,
                    "mov"
                        | "add"
                        | "sub"
                        | "rsb"
                        | "mul"
                        | "and"
                        | "orr"
                        | "eor"
                        | "lsl"
                        | "lsr"
                        | "asr"
                        | "mvn"
                ) =>
            {
                (base, true)
            }
            _ => (mnemonic, false),
        },
    };
    match base {
        "mov" if set_flags => {
            // movs rd, op2 == orrs rd, op2, #0: keeps MOVE flag-free
            if ops.len() != 2 {
                return Err("expected 2 operands".into());
            }
            Ok(vec![MicroOp::Binop {
                op: BinOp::Or,
                dst: dst_reg(&ops[0])?,
                lhs: arm_src(&ops[1])?,
                rhs: Rvalue::Imm(0, Width::W32),
                set_flags: true,
            }])
        }
        "mov" => {
            if ops.len() != 2 {
                return Err("expected 2 operands".into());
            }
            Ok(vec![MicroOp::Move {
                dst: dst_reg(&ops[0])?,
                src: arm_src(&ops[1])?,
                extend: None,
            }])
        }
        "mvn" => {
            if ops.len() != 2 {
                return Err("expected 2 operands".into());
            }
            Ok(vec![MicroOp::Unop {
                op: UnOp::Not,
                dst: dst_reg(&ops[0])?,
                arg: arm_src(&ops[1])?,
                set_flags,
            }])
        }
        "add" | "sub" | "rsb" | "and" | "orr" | "eor" | "mul" | "lsl" | "lsr" | "asr" => {
            // rd, rn, op2 or the two-operand shorthand rd, op2
            let (dst, lhs, rhs) = match ops.len() {
                3 => (dst_reg(&ops[0])?, arm_src(&ops[1])?, arm_src(&ops[2])?),
                2 => {
                    let d = dst_reg(&ops[0])?;
                    (d.clone(), Rvalue::Reg(d), arm_src(&ops[1])?)
                }
                n => return Err(format!("expected 2 or 3 operands, got {n}")),
            };
            if matches!(base, "lsl" | "lsr" | "asr") && !matches!(rhs, Rvalue::Imm(..)) {
                return Err("register-specified shift counts are not modeled".into());
            }
            if base == "mul" && !matches!(rhs, Rvalue::Reg(_)) {
                return Err("mul operands must be registers".into());
            }
            let (op, lhs, rhs) = match base {
                "add" => (BinOp::Add, lhs, rhs),
                "sub" => (BinOp::Sub, lhs, rhs),
                "rsb" => (BinOp::Sub, rhs, lhs),
                "and" => (BinOp::And, lhs, rhs),
                "orr" => (BinOp::Or, lhs, rhs),
                "eor" => (BinOp::Xor, lhs, rhs),
                "mul" => (BinOp::Mul, lhs, rhs),
                "lsl" => (BinOp::Shl, lhs, rhs),
                "lsr" => (BinOp::Shr, lhs, rhs),
                _ => (BinOp::Sar, lhs, rhs),
            };
            let rhs = match (op, rhs) {
                (BinOp::Shl | BinOp::Shr | BinOp::Sar, Rvalue::Imm(v, _)) => {
                    Rvalue::Imm(v % 32, Width::W8)
                }
                (_, r) => r,
            };
            Ok(vec![MicroOp::Binop {
                op,
                dst,
                lhs,
                rhs,
                set_flags,
            }])
        }
        "cmp" | "tst" => {
            if ops.len() != 2 {
                return Err("expected 2 operands".into());
            }
            Ok(vec![MicroOp::Compare {
                lhs: arm_src(&ops[0])?,
                rhs: arm_src(&ops[1])?,
                flavor: if base == "cmp" {
                    CmpFlavor::SubCmp
                } else {
                    CmpFlavor::AndTst
                },
            }])
        }
        "ldr" | "str" => {
            if ops.len() != 2 {
                return Err("expected 2 operands".into());
            }
            let reg = dst_reg(&ops[0])?;
            let mem = match &ops[1] {
                Operand::Mem(m) => m.clone(),
                _ => return Err("expected a memory reference".into()),
            };
            if base == "ldr" {
                Ok(vec![MicroOp::Load {
                    dst: reg,
                    addr: mem,
                    width: Width::W32,
                }])
            } else {
                Ok(vec![MicroOp::Store {
                    addr: mem,
                    src: Rvalue::Reg(reg),
                    width: Width::W32,
                }])
            }
        }
        "push" | "pop" => {
            if ops.len() != 1 {
                return Err("expected a register list".into());
            }
            let regs = match &ops[0] {
                Operand::RegList(regs) => regs.clone(),
                Operand::Reg(r) => vec![r.clone()],
                _ => return Err("expected a register list".into()),
            };
            if base == "push" {
                // lowest-numbered register ends up at the lowest address
                Ok(regs
                    .iter()
                    .rev()
                    .map(|r| MicroOp::Push {
                        src: Rvalue::Reg(r.clone()),
                    })
                    .collect())
            } else {
                Ok(regs
                    .iter()
                    .map(|r| MicroOp::Pop { dst: r.clone() })
                    .collect())
            }
        }
        "b" => Ok(vec![MicroOp::Branch { cond: None }]),
        "bl" => {
            if ops.len() != 1 {
                return Err("expected 1 operand".into());
            }
            let target = match &ops[0] {
                Operand::Symbol(s) => CallTarget::Name(s.clone()),
                Operand::Reg(r) => CallTarget::Reg(r.clone()),
                _ => return Err("bad call target".into()),
            };
            Ok(vec![MicroOp::Call { target }])
        }
        "bx" => match ops {
            [Operand::Reg(r)] if r.name == "lr" => Ok(vec![MicroOp::Ret]),
            _ => Err("only `bx lr` is modeled".into()),
        },
        _ => match arm_branch_cond(base) {
            Some(cond) => Ok(vec![MicroOp::Branch { cond: Some(cond) }]),
            None => Err("unknown mnemonic".into()),
        },
    }
}
