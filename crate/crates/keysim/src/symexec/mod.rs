//! Path-sampled symbolic execution.
//!
//! One [`SymState`] models a single execution path: a total register file
//! over the architecture's registers, a symbolic memory keyed by canonical
//! simplified address text, the last comparison record, and an append-only
//! trace of observations. At function entry the convention's argument
//! registers are seeded `var0..varN` and every other register gets a
//! `reg(<name>)` seed. The engine never evaluates branch conditions; path
//! choice is the sampler's business.

pub mod loops;
pub mod path;
pub mod run;

use std::collections::{BTreeMap, BTreeSet};

use crate::arch::{Arch, CallConv};
use crate::expr::{BinOp, SymExpr, Width};
use crate::lift::{CmpFlavor, LiftedFunction, MicroOp, Rvalue};
use crate::operand::{MemRef, RegRef};
use crate::simplify::simplify;

pub use loops::{detect_loops, dominators, LoopInfo};
pub use path::{cover_residual, plan_run, sample_main_path, AuxPath, RunPlan};
pub use run::{execute, run_once, ExecConfig, ExecResult, RunOutcome, ValueSets, DEFAULT_SEED};

/// One recorded fact about an instruction's operands on one path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Observation {
    /// Value written by a data instruction.
    Value(SymExpr),
    Compare {
        lhs: SymExpr,
        rhs: SymExpr,
        flavor: CmpFlavor,
    },
    Call {
        callee: String,
        args: Vec<SymExpr>,
    },
    Return {
        value: SymExpr,
    },
    Store {
        addr: SymExpr,
        value: SymExpr,
        width: Width,
    },
    /// Control flow only; keeps the instruction present in the value sets.
    Marker,
}

impl Observation {
    pub fn exprs(&self) -> Vec<&SymExpr> {
        match self {
            Observation::Value(v) => vec![v],
            Observation::Compare { lhs, rhs, .. } => vec![lhs, rhs],
            Observation::Call { args, .. } => args.iter().collect(),
            Observation::Return { value } => vec![value],
            Observation::Store { addr, value, .. } => vec![addr, value],
            Observation::Marker => vec![],
        }
    }

    pub fn same_shape(&self, other: &Observation) -> bool {
        match (self, other) {
            (Observation::Value(_), Observation::Value(_)) => true,
            (Observation::Compare { flavor: a, .. }, Observation::Compare { flavor: b, .. }) => {
                a == b
            }
            (
                Observation::Call { callee: a, args: x },
                Observation::Call { callee: b, args: y },
            ) => a == b && x.len() == y.len(),
            (Observation::Return { .. }, Observation::Return { .. }) => true,
            (Observation::Store { width: a, .. }, Observation::Store { width: b, .. }) => a == b,
            (Observation::Marker, Observation::Marker) => true,
            _ => false,
        }
    }

    pub fn map_exprs(&self, mut f: impl FnMut(&SymExpr) -> SymExpr) -> Observation {
        match self {
            Observation::Value(v) => Observation::Value(f(v)),
            Observation::Compare { lhs, rhs, flavor } => Observation::Compare {
                lhs: f(lhs),
                rhs: f(rhs),
                flavor: *flavor,
            },
            Observation::Call { callee, args } => Observation::Call {
                callee: callee.clone(),
                args: args.iter().map(&mut f).collect(),
            },
            Observation::Return { value } => Observation::Return { value: f(value) },
            Observation::Store { addr, value, width } => Observation::Store {
                addr: f(addr),
                value: f(value),
                width: *width,
            },
            Observation::Marker => Observation::Marker,
        }
    }
}

/// Symbolic machine state along one execution path.
#[derive(Debug, Clone)]
pub struct SymState {
    arch: Arch,
    conv: CallConv,
    regs: BTreeMap<String, SymExpr>,
    memory: BTreeMap<String, (Width, SymExpr)>,
    pub lastcmp: Option<(SymExpr, SymExpr, CmpFlavor)>,
    written_since_call: BTreeSet<String>,
    /// Append-only log of every observation this state made.
    pub trace: Vec<(u64, Observation)>,
}

impl SymState {
    /// Entry state: argument registers seeded `var0..varN`, everything else
    /// seeded by register name.
    pub fn entry(arch: Arch, conv: CallConv) -> SymState {
        let word = arch.word();
        let params = conv.param_registers();
        let mut regs = BTreeMap::new();
        for &name in arch.register_file() {
            let value = match params.iter().position(|p| *p == name) {
                Some(i) => SymExpr::var(i as u32, word),
                None => SymExpr::reg(arch.seed_name(name), word),
            };
            regs.insert(name.to_string(), value);
        }
        SymState {
            arch,
            conv,
            regs,
            memory: BTreeMap::new(),
            lastcmp: None,
            written_since_call: BTreeSet::new(),
            trace: Vec::new(),
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn convention(&self) -> CallConv {
        self.conv
    }

    /// The stored expression for a full register, unwidened.
    pub fn read_reg_raw(&self, name: &str) -> SymExpr {
        self.regs
            .get(name)
            .cloned()
            .unwrap_or_else(|| SymExpr::reg(name, self.arch.word()))
    }

    /// Read a (sub-)register at its access width. A 32-bit x86-64 store is
    /// implicitly zero-extended on a wider read.
    pub fn read_reg(&self, r: &RegRef) -> SymExpr {
        let stored = self.read_reg_raw(&r.name);
        coerce_zext(stored, r.width)
    }

    /// Write a (sub-)register. x86-64 32-bit writes zero-extend into the
    /// parent (stored at width 32); 8/16-bit writes merge into it.
    pub fn write_reg(&mut self, r: &RegRef, value: SymExpr) {
        let word = self.arch.word();
        let stored = if r.width == word || (self.arch == Arch::X86_64 && r.width == Width::W32) {
            coerce_zext(value, r.width)
        } else {
            let old = coerce_zext(self.read_reg_raw(&r.name), word);
            let keep = !r.width.mask() & word.mask();
            let merged = SymExpr::binop(
                BinOp::Or,
                SymExpr::binop(BinOp::And, old, SymExpr::constant(keep, word)),
                coerce_zext(value, word),
            );
            simplify(&merged)
        };
        self.regs.insert(r.name.clone(), stored);
        self.written_since_call.insert(r.name.clone());
    }

    /// Effective address of a memory reference, simplified, at word width.
    pub fn addr_value(&self, m: &MemRef) -> SymExpr {
        let word = self.arch.word();
        let mut acc: Option<SymExpr> = m.base.as_ref().map(|b| self.read_reg_at_word(b));
        if let Some((index, scale)) = &m.index {
            let scaled = SymExpr::binop(
                BinOp::Mul,
                self.read_reg_at_word(index),
                SymExpr::constant(*scale as u64, word),
            );
            acc = Some(match acc {
                None => scaled,
                Some(a) => SymExpr::binop(BinOp::Add, a, scaled),
            });
        }
        let disp = m.disp as u64 & word.mask();
        let expr = match acc {
            None => SymExpr::constant(disp, word),
            Some(a) if disp == 0 => a,
            Some(a) => SymExpr::binop(BinOp::Add, a, SymExpr::constant(disp, word)),
        };
        simplify(&expr)
    }

    fn read_reg_at_word(&self, r: &RegRef) -> SymExpr {
        coerce_zext(self.read_reg_raw(&r.name), self.arch.word())
    }

    /// Load from symbolic memory. A canonical-text hit at the stored width
    /// returns the stored value; a narrower load truncates it; anything else
    /// is a fresh `mem` leaf over the address.
    pub fn load(&self, addr: &SymExpr, width: Width) -> SymExpr {
        let key = crate::text::canonical_text(addr);
        if let Some((stored_width, value)) = self.memory.get(&key) {
            if *stored_width == width {
                return value.clone();
            }
            if stored_width.bits() > width.bits() {
                return simplify(&SymExpr::trunc(value.clone(), width));
            }
        }
        SymExpr::mem(addr.clone(), width)
    }

    pub fn store(&mut self, addr: &SymExpr, width: Width, value: SymExpr) {
        let key = crate::text::canonical_text(addr);
        self.memory.insert(key, (width, value));
    }

    /// Resolve a micro-op value template.
    pub fn resolve(&self, rv: &Rvalue) -> SymExpr {
        match rv {
            Rvalue::Reg(r) => self.read_reg(r),
            Rvalue::Imm(v, w) => SymExpr::constant(*v, *w),
            Rvalue::Addr(m) => self.addr_value(m),
            Rvalue::Mem(m, w) => self.load(&self.addr_value(m), *w),
        }
    }

    /// Recover call arguments: the convention's argument registers up to the
    /// last one written since entry or the previous call, capped at the
    /// arity budget.
    pub fn call_args(&self, budget: usize) -> Vec<SymExpr> {
        let params = self.conv.param_registers();
        let last_written = params
            .iter()
            .rposition(|reg| self.written_since_call.contains(*reg));
        match last_written {
            None => Vec::new(),
            Some(last) => params[..=last]
                .iter()
                .take(budget)
                .map(|reg| self.read_reg_raw(reg))
                .collect(),
        }
    }

    fn record(&mut self, site: u64, obs: Observation) -> Observation {
        self.trace.push((site, obs.clone()));
        obs
    }
}

/// Zero-extending width coercion (truncates when narrowing), simplified.
fn coerce_zext(e: SymExpr, width: Width) -> SymExpr {
    use std::cmp::Ordering;
    match e.width().bits().cmp(&width.bits()) {
        Ordering::Equal => e,
        Ordering::Less => simplify(&SymExpr::ext(e, width, false)),
        Ordering::Greater => simplify(&SymExpr::trunc(e, width)),
    }
}

/// Flag-setting arithmetic records the implied comparison of its result
/// against zero, so `dec`/`jnz` idioms carry a comparison value and every
/// payload expression is genuinely observed.
fn flag_observation(state: &mut SymState, value: SymExpr, set_flags: bool) -> Observation {
    if set_flags {
        let zero = SymExpr::constant(0, value.width());
        state.lastcmp = Some((value.clone(), zero.clone(), CmpFlavor::SubCmp));
        Observation::Compare {
            lhs: value,
            rhs: zero,
            flavor: CmpFlavor::SubCmp,
        }
    } else {
        Observation::Value(value)
    }
}

/// Result of stepping one micro-op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub observation: Observation,
    pub ends_path: bool,
}

/// Execute one micro-op against the state, recording its observation for
/// `site` in the trace.
pub fn step(state: &mut SymState, op: &MicroOp, site: u64, lf: &LiftedFunction) -> StepResult {
    let word = state.arch.word();
    let mut ends_path = false;
    let obs = match op {
        MicroOp::Move { dst, src, extend } => {
            let raw = state.resolve(src);
            let value = match extend {
                Some(signed) if raw.width().bits() < dst.width.bits() => {
                    simplify(&SymExpr::ext(raw, dst.width, *signed))
                }
                _ => coerce_zext(raw, dst.width),
            };
            state.write_reg(dst, value.clone());
            Observation::Value(value)
        }
        MicroOp::Binop {
            op,
            dst,
            lhs,
            rhs,
            set_flags,
        } => {
            let l = state.resolve(lhs);
            let r = match op {
                BinOp::Shl | BinOp::Shr | BinOp::Sar => state.resolve(rhs),
                _ => coerce_zext(state.resolve(rhs), l.width()),
            };
            let value = simplify(&SymExpr::binop(*op, l, r));
            state.write_reg(dst, value.clone());
            flag_observation(state, value, *set_flags)
        }
        MicroOp::Unop {
            op,
            dst,
            arg,
            set_flags,
        } => {
            let value = simplify(&SymExpr::unop(*op, state.resolve(arg)));
            state.write_reg(dst, value.clone());
            flag_observation(state, value, *set_flags)
        }
        MicroOp::Load { dst, addr, width } => {
            let addr = state.addr_value(addr);
            let value = state.load(&addr, *width);
            state.write_reg(dst, coerce_zext(value.clone(), dst.width));
            Observation::Value(value)
        }
        MicroOp::Store { addr, src, width } => {
            let addr = state.addr_value(addr);
            let value = coerce_zext(state.resolve(src), *width);
            state.store(&addr, *width, value.clone());
            Observation::Store {
                addr,
                value,
                width: *width,
            }
        }
        MicroOp::Compare { lhs, rhs, flavor } => {
            let l = state.resolve(lhs);
            let r = coerce_zext(state.resolve(rhs), l.width());
            state.lastcmp = Some((l.clone(), r.clone(), *flavor));
            Observation::Compare {
                lhs: l,
                rhs: r,
                flavor: *flavor,
            }
        }
        MicroOp::Branch { .. } => Observation::Marker,
        MicroOp::Call { target } => {
            let callee = target.label().to_string();
            let ordinal = lf.call_ordinals.get(&site).copied().unwrap_or(0);
            let args = state.call_args(state.conv.arity_budget());
            let obs = Observation::Call {
                callee: callee.clone(),
                args,
            };
            if state.arch == Arch::Arm32 {
                let lr = RegRef::new("lr", Width::W32);
                state.write_reg(&lr, SymExpr::constant(site.wrapping_add(4), Width::W32));
            }
            let ret_reg = state.conv.return_register();
            for &reg in state.conv.havoc_registers() {
                let seed = if reg == ret_reg {
                    SymExpr::ret(callee.clone(), ordinal, word)
                } else {
                    SymExpr::ret_reg(callee.clone(), reg, ordinal, word)
                };
                state.regs.insert(reg.to_string(), seed);
            }
            state.written_since_call.clear();
            obs
        }
        MicroOp::Ret => {
            ends_path = true;
            let value = state.read_reg_raw(state.conv.return_register());
            Observation::Return { value }
        }
        MicroOp::Push { src } => {
            let slot = word.bits() as u64 / 8;
            let sp = RegRef::new(
                if state.arch == Arch::X86_64 {
                    "rsp"
                } else {
                    "sp"
                },
                word,
            );
            let value = coerce_zext(state.resolve(src), word);
            let new_sp = simplify(&SymExpr::binop(
                BinOp::Sub,
                state.read_reg_raw(&sp.name),
                SymExpr::constant(slot, word),
            ));
            state.write_reg(&sp, new_sp.clone());
            state.store(&new_sp, word, value.clone());
            Observation::Value(value)
        }
        MicroOp::Pop { dst } => {
            let slot = word.bits() as u64 / 8;
            let sp = RegRef::new(
                if state.arch == Arch::X86_64 {
                    "rsp"
                } else {
                    "sp"
                },
                word,
            );
            let sp_val = simplify(&state.read_reg_raw(&sp.name));
            let value = state.load(&sp_val, word);
            state.write_reg(dst, coerce_zext(value.clone(), dst.width));
            let new_sp = simplify(&SymExpr::binop(
                BinOp::Add,
                state.read_reg_raw(&sp.name),
                SymExpr::constant(slot, word),
            ));
            state.write_reg(&sp, new_sp);
            Observation::Value(value)
        }
        MicroOp::Unsupported { mnemonic, havoc } => match havoc {
            Some(r) => {
                let ordinal = lf.call_ordinals.get(&site).copied().unwrap_or(0);
                let fresh = SymExpr::ret_reg(mnemonic.clone(), r.name.clone(), ordinal, word);
                state.regs.insert(r.name.clone(), fresh.clone());
                state.written_since_call.insert(r.name.clone());
                Observation::Value(fresh)
            }
            None => Observation::Marker,
        },
    };
    let observation = state.record(site, obs);
    StepResult {
        observation,
        ends_path,
    }
}
