//! Shared test oracles: hand-written reference instruction semantics, a
//! concrete micro-op interpreter, a concrete whole-function runner, brute
//! force graph oracles, an optimal-assignment matcher, and random expression
//! generators. Everything here is independent of the code paths it checks:
//! the reference semantics never touch the lifter templates, and the brute
//! force oracles re-derive graph facts from first principles.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use keysim::arch::{Arch, CallConv};
use keysim::expr::{BinOp, Bindings, ExprNode, SymExpr, UnOp, Width};
use keysim::ingest::{parse_bundle, Function, Instruction, Program};
use keysim::keyir::{KeyGraph, KeyKind};
use keysim::lift::{CallTarget, MicroOp, Rvalue};
use keysim::operand::{parse_operand, MemRef, Operand, RegRef};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_fixture(name: &str) -> Program {
    let text = std::fs::read_to_string(fixture_path(name)).expect("fixture exists");
    parse_bundle(&text).expect("fixture parses")
}

/// Every fixture bundle in the corpus.
pub const ALL_BUNDLES: &[&str] = &[
    "straightline_x86.bundle",
    "straightline_arm.bundle",
    "loops.bundle",
    "keygraph.bundle",
    "bench_x86.bundle",
    "bench_arm.bundle",
    "bench_x86_variants.bundle",
];

pub fn all_fixture_functions() -> Vec<(String, Function)> {
    let mut out = Vec::new();
    for bundle in ALL_BUNDLES {
        let program = load_fixture(bundle);
        for f in program.functions {
            out.push((format!("{bundle}:{}", f.name), f));
        }
    }
    out
}

// ---- deterministic hashing ----

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn str_hash(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uninitialized memory byte at `addr` for a given trial seed.
pub fn uninit_byte(mem_seed: u64, addr: u64) -> u8 {
    splitmix64(mem_seed ^ splitmix64(addr)) as u8
}

/// The deterministic value an unanalyzed call leaves in a havocked
/// register. Shared by the reference semantics and the micro interpreter.
pub fn havoc_value(callee: &str, reg: Option<&str>) -> u64 {
    splitmix64(str_hash(callee) ^ reg.map(str_hash).unwrap_or(0x5eed))
}

// ---- concrete machine ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    pub arch: Arch,
    pub conv: CallConv,
    pub regs: BTreeMap<String, u64>,
    pub mem: BTreeMap<u64, u8>,
    pub mem_seed: u64,
}

impl Machine {
    pub fn random(arch: Arch, conv: CallConv, rng: &mut ChaCha8Rng, mem_seed: u64) -> Machine {
        let mask = arch.word().mask();
        let regs = arch
            .register_file()
            .iter()
            .map(|r| (r.to_string(), rng.gen::<u64>() & mask))
            .collect();
        Machine {
            arch,
            conv,
            regs,
            mem: BTreeMap::new(),
            mem_seed,
        }
    }

    pub fn read_reg(&self, r: &RegRef) -> u64 {
        self.regs[&r.name] & r.width.mask()
    }

    pub fn write_reg(&mut self, r: &RegRef, v: u64) {
        let word = self.arch.word();
        let stored = match r.width {
            w if w == word => v & word.mask(),
            Width::W32 => v & Width::W32.mask(), // x86-64 zero-extension
            w => {
                let old = self.regs[&r.name];
                (old & !w.mask()) | (v & w.mask())
            }
        };
        self.regs.insert(r.name.clone(), stored);
    }

    pub fn read_byte(&mut self, addr: u64) -> u8 {
        let seed = self.mem_seed;
        *self
            .mem
            .entry(addr)
            .or_insert_with(|| uninit_byte(seed, addr))
    }

    pub fn read_mem(&mut self, addr: u64, width: Width) -> u64 {
        let mut v = 0u64;
        for i in 0..(width.bits() / 8) as u64 {
            v |= (self.read_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    pub fn write_mem(&mut self, addr: u64, width: Width, v: u64) {
        for i in 0..(width.bits() / 8) as u64 {
            self.mem.insert(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
    }

    pub fn addr(&self, m: &MemRef) -> u64 {
        let mut a = m.disp as u64;
        if let Some(base) = &m.base {
            a = a.wrapping_add(self.regs[&base.name]);
        }
        if let Some((index, scale)) = &m.index {
            a = a.wrapping_add(self.regs[&index.name].wrapping_mul(*scale as u64));
        }
        a & self.arch.word().mask()
    }
}

// ---- reference semantics (hand-written, per mnemonic) ----

fn ops_of(instr: &Instruction, arch: Arch) -> Vec<Operand> {
    instr
        .operands
        .iter()
        .map(|o| parse_operand(o, arch).expect("fixture operands parse"))
        .collect()
}

fn imm_u64(v: i64, width: Width) -> u64 {
    v as u64 & width.mask()
}

fn src_value(m: &mut Machine, op: &Operand, width: Width) -> u64 {
    match op {
        Operand::Reg(r) => m.read_reg(r),
        Operand::Imm(v) => imm_u64(*v, width),
        Operand::Mem(mr) => {
            let a = m.addr(mr);
            m.read_mem(a, width)
        }
        _ => panic!("bad source operand"),
    }
}

/// Execute one instruction with hand-written architecture semantics.
/// Control-flow instructions change no data state except the modeled call
/// havoc (and `bl` writing the link register).
pub fn reference_step(m: &mut Machine, instr: &Instruction) {
    match m.arch {
        Arch::X86_64 => reference_x86(m, instr),
        Arch::Arm32 => reference_arm(m, instr),
    }
}

fn reference_call(m: &mut Machine, callee: &str) {
    let ret_reg = m.conv.return_register();
    for &reg in m.conv.havoc_registers() {
        let v = if reg == ret_reg {
            havoc_value(callee, None)
        } else {
            havoc_value(callee, Some(reg))
        };
        m.regs.insert(reg.to_string(), v & m.arch.word().mask());
    }
}

fn reference_x86(m: &mut Machine, instr: &Instruction) {
    let ops = ops_of(instr, Arch::X86_64);
    let mn = instr.mnemonic.as_str();
    match mn {
        "mov" => match (&ops[0], &ops[1]) {
            (Operand::Reg(d), src) => {
                let v = src_value(m, src, d.width);
                m.write_reg(d, v);
            }
            (Operand::Mem(mr), Operand::Reg(s)) => {
                let a = m.addr(mr);
                let v = m.read_reg(s);
                m.write_mem(a, s.width, v);
            }
            (Operand::Mem(mr), Operand::Imm(v)) => {
                let a = m.addr(mr);
                m.write_mem(a, Width::W64, *v as u64);
            }
            _ => panic!("bad mov"),
        },
        "movzx" | "movsx" => {
            let (Operand::Reg(d), Operand::Reg(s)) = (&ops[0], &ops[1]) else {
                panic!("bad movzx/movsx");
            };
            let raw = m.read_reg(s);
            let v = if mn == "movsx" {
                s.width.sext(raw)
            } else {
                raw
            };
            m.write_reg(d, v & d.width.mask());
        }
        "lea" => {
            let (Operand::Reg(d), Operand::Mem(mr)) = (&ops[0], &ops[1]) else {
                panic!("bad lea");
            };
            let a = m.addr(mr);
            m.write_reg(d, a & d.width.mask());
        }
        "add" | "sub" | "and" | "or" | "xor" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let a = m.read_reg(d);
            let b = src_value(m, &ops[1], d.width);
            let v = match mn {
                "add" => a.wrapping_add(b),
                "sub" => a.wrapping_sub(b),
                "and" => a & b,
                "or" => a | b,
                _ => a ^ b,
            };
            m.write_reg(d, v & d.width.mask());
        }
        "imul" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let v = if ops.len() == 2 {
                m.read_reg(d).wrapping_mul(src_value(m, &ops[1], d.width))
            } else {
                src_value(m, &ops[1], d.width).wrapping_mul(src_value(m, &ops[2], d.width))
            };
            m.write_reg(d, v & d.width.mask());
        }
        "not" | "neg" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let a = m.read_reg(d);
            let v = if mn == "not" { !a } else { a.wrapping_neg() };
            m.write_reg(d, v & d.width.mask());
        }
        "shl" | "shr" | "sar" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let count = match &ops[1] {
                Operand::Imm(v) => *v as u32,
                Operand::Reg(cl) => m.read_reg(cl) as u32,
                _ => panic!("bad count"),
            } % d.width.bits();
            let a = m.read_reg(d);
            let v = match mn {
                "shl" => a << count,
                "shr" => a >> count,
                _ => ((d.width.sext(a) as i64) >> count) as u64,
            };
            m.write_reg(d, v & d.width.mask());
        }
        "inc" | "dec" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let a = m.read_reg(d);
            let v = if mn == "inc" {
                a.wrapping_add(1)
            } else {
                a.wrapping_sub(1)
            };
            m.write_reg(d, v & d.width.mask());
        }
        "cmp" | "test" => {}
        "push" => {
            let v = src_value(m, &ops[0], Width::W64);
            let sp = m.regs["rsp"].wrapping_sub(8);
            m.regs.insert("rsp".into(), sp);
            m.write_mem(sp, Width::W64, v);
        }
        "pop" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let sp = m.regs["rsp"];
            let v = m.read_mem(sp, Width::W64);
            m.write_reg(d, v);
            m.regs.insert("rsp".into(), sp.wrapping_add(8));
        }
        "call" => {
            let callee = match &ops[0] {
                Operand::Symbol(s) => s.clone(),
                Operand::Reg(r) => r.name.clone(),
                _ => panic!("bad call target"),
            };
            reference_call(m, &callee);
        }
        "ret" | "jmp" => {}
        _ if keysim::lift::is_conditional_branch(mn, Arch::X86_64) => {}
        other => panic!("no reference semantics for x86 `{other}`"),
    }
}

fn arm_src(m: &Machine, op: &Operand) -> u64 {
    match op {
        Operand::Reg(r) => m.read_reg(r),
        Operand::Imm(v) => *v as u64 & Width::W32.mask(),
        _ => panic!("bad arm source"),
    }
}

fn reference_arm(m: &mut Machine, instr: &Instruction) {
    let ops = ops_of(instr, Arch::Arm32);
    let mn = instr.mnemonic.as_str();
    let base = mn.strip_suffix('s').filter(|b| {
        matches!(
            *b,
            "mov"
                | "mvn"
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
        )
    });
    let mn = base.unwrap_or(mn);
    let mask = Width::W32.mask();
    match mn {
        "mov" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let v = arm_src(m, &ops[1]);
            m.write_reg(d, v);
        }
        "mvn" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let v = !arm_src(m, &ops[1]) & mask;
            m.write_reg(d, v);
        }
        "add" | "sub" | "rsb" | "and" | "orr" | "eor" | "mul" | "lsl" | "lsr" | "asr" => {
            let Operand::Reg(d) = &ops[0] else {
                panic!("bad dst")
            };
            let (a, b) = if ops.len() == 3 {
                (arm_src(m, &ops[1]), arm_src(m, &ops[2]))
            } else {
                (m.read_reg(d), arm_src(m, &ops[1]))
            };
            let v = match mn {
                "add" => a.wrapping_add(b),
                "sub" => a.wrapping_sub(b),
                "rsb" => b.wrapping_sub(a),
                "and" => a & b,
                "orr" => a | b,
                "eor" => a ^ b,
                "mul" => a.wrapping_mul(b),
                "lsl" => a << (b as u32 % 32),
                "lsr" => (a & mask) >> (b as u32 % 32),
                _ => ((Width::W32.sext(a) as i64) >> (b as u32 % 32)) as u64,
            };
            m.write_reg(d, v & mask);
        }
        "cmp" | "tst" => {}
        "ldr" => {
            let (Operand::Reg(d), Operand::Mem(mr)) = (&ops[0], &ops[1]) else {
                panic!("bad ldr");
            };
            let a = m.addr(mr);
            let v = m.read_mem(a, Width::W32);
            m.write_reg(d, v);
        }
        "str" => {
            let (Operand::Reg(s), Operand::Mem(mr)) = (&ops[0], &ops[1]) else {
                panic!("bad str");
            };
            let a = m.addr(mr);
            let v = m.read_reg(s);
            m.write_mem(a, Width::W32, v);
        }
        "push" | "pop" => {
            let regs: Vec<RegRef> = match &ops[0] {
                Operand::RegList(rs) => rs.clone(),
                Operand::Reg(r) => vec![r.clone()],
                _ => panic!("bad register list"),
            };
            if mn == "push" {
                for r in regs.iter().rev() {
                    let sp = m.regs["sp"].wrapping_sub(4) & mask;
                    m.regs.insert("sp".into(), sp);
                    let v = m.read_reg(r);
                    m.write_mem(sp, Width::W32, v);
                }
            } else {
                for r in &regs {
                    let sp = m.regs["sp"];
                    let v = m.read_mem(sp, Width::W32);
                    m.write_reg(r, v);
                    m.regs.insert("sp".into(), sp.wrapping_add(4) & mask);
                }
            }
        }
        "b" => {}
        "bl" => {
            let callee = match &ops[0] {
                Operand::Symbol(s) => s.clone(),
                Operand::Reg(r) => r.name.clone(),
                _ => panic!("bad bl target"),
            };
            m.regs
                .insert("lr".into(), instr.address.wrapping_add(4) & mask);
            reference_call(m, &callee);
        }
        "bx" => {}
        _ if keysim::lift::is_conditional_branch(mn, Arch::Arm32) => {}
        other => panic!("no reference semantics for arm `{other}`"),
    }
}

// ---- concrete micro-op interpreter ----

fn rvalue(m: &mut Machine, rv: &Rvalue) -> u64 {
    match rv {
        Rvalue::Reg(r) => m.read_reg(r),
        Rvalue::Imm(v, w) => v & w.mask(),
        Rvalue::Addr(mr) => m.addr(mr),
        Rvalue::Mem(mr, w) => {
            let a = m.addr(mr);
            m.read_mem(a, *w)
        }
    }
}

fn rvalue_width(m: &Machine, rv: &Rvalue) -> Width {
    match rv {
        Rvalue::Reg(r) => r.width,
        Rvalue::Imm(_, w) => *w,
        Rvalue::Addr(_) => m.arch.word(),
        Rvalue::Mem(_, w) => *w,
    }
}

/// Interpret lifted micro-ops concretely. This defines the IR's concrete
/// semantics; criterion 1 holds it against the hand-written reference.
pub fn interp_micro(m: &mut Machine, ops: &[MicroOp], site: u64) {
    for op in ops {
        match op {
            MicroOp::Move { dst, src, extend } => {
                let raw = rvalue(m, src);
                let v = match extend {
                    Some(true) => rvalue_width(m, src).sext(raw),
                    _ => raw,
                };
                m.write_reg(dst, v & dst.width.mask());
            }
            MicroOp::Binop {
                op, dst, lhs, rhs, ..
            } => {
                let a = rvalue(m, lhs);
                let b = rvalue(m, rhs);
                let v = keysim::expr::apply_binop(*op, a, b, dst.width);
                m.write_reg(dst, v);
            }
            MicroOp::Unop { op, dst, arg, .. } => {
                let a = rvalue(m, arg);
                let v = match op {
                    UnOp::Not => !a,
                    UnOp::Neg => a.wrapping_neg(),
                };
                m.write_reg(dst, v & dst.width.mask());
            }
            MicroOp::Load { dst, addr, width } => {
                let a = m.addr(addr);
                let v = m.read_mem(a, *width);
                m.write_reg(dst, v & dst.width.mask());
            }
            MicroOp::Store { addr, src, width } => {
                let a = m.addr(addr);
                let v = rvalue(m, src);
                m.write_mem(a, *width, v & width.mask());
            }
            MicroOp::Compare { .. } | MicroOp::Branch { .. } | MicroOp::Ret => {}
            MicroOp::Call { target } => {
                if m.arch == Arch::Arm32 {
                    let lr = RegRef::new("lr", Width::W32);
                    m.write_reg(&lr, site.wrapping_add(4));
                }
                let callee = match target {
                    CallTarget::Name(n) => n.clone(),
                    CallTarget::Reg(r) => r.name.clone(),
                };
                reference_call(m, &callee);
            }
            MicroOp::Push { src } => {
                let word = m.arch.word();
                let slot = word.bits() as u64 / 8;
                let sp_name = if m.arch == Arch::X86_64 { "rsp" } else { "sp" };
                let v = rvalue(m, src);
                let sp = m.regs[sp_name].wrapping_sub(slot) & word.mask();
                m.regs.insert(sp_name.into(), sp);
                m.write_mem(sp, word, v & word.mask());
            }
            MicroOp::Pop { dst } => {
                let word = m.arch.word();
                let slot = word.bits() as u64 / 8;
                let sp_name = if m.arch == Arch::X86_64 { "rsp" } else { "sp" };
                let sp = m.regs[sp_name];
                let v = m.read_mem(sp, word);
                m.write_reg(dst, v & dst.width.mask());
                m.regs
                    .insert(sp_name.into(), sp.wrapping_add(slot) & word.mask());
            }
            MicroOp::Unsupported { mnemonic, havoc } => {
                if let Some(r) = havoc {
                    let v = havoc_value(mnemonic, Some(&r.name));
                    m.regs.insert(r.name.clone(), v & m.arch.word().mask());
                }
            }
        }
    }
}

/// Run a straight-line (single-path) function to its return with reference
/// semantics, returning the final machine.
pub fn run_reference(f: &Function, mut m: Machine) -> Machine {
    let mut block = f.block(f.entry).expect("entry exists");
    loop {
        for instr in &block.instructions {
            if instr.mnemonic == "ret"
                || (instr.mnemonic == "bx"
                    && instr.operands.first().map(String::as_str) == Some("lr"))
            {
                return m;
            }
            reference_step(&mut m, instr);
        }
        assert!(
            block.successors.len() <= 1,
            "straight-line runner hit a branch in `{}`",
            f.name
        );
        match block.successors.first() {
            Some((succ, _)) => block = f.block(*succ).expect("successor exists"),
            None => return m,
        }
    }
}

/// Bindings matching a machine's entry state: parameters from the argument
/// registers, register seeds from the rest, uninitialized memory from the
/// shared byte hash.
pub fn bindings_for_machine(initial: &Machine) -> Bindings {
    let mut b = Bindings::new();
    let params = initial.conv.param_registers();
    for (i, reg) in params.iter().enumerate() {
        b.vars.insert(i as u32, initial.regs[*reg]);
    }
    for name in initial.arch.register_file() {
        if !params.contains(name) {
            b.regs.insert(
                initial.arch.seed_name(name).to_string(),
                initial.regs[*name],
            );
        }
    }
    let seed = initial.mem_seed;
    b.default_mem = Some(Box::new(move |addr| uninit_byte(seed, addr)));
    b
}

// ---- brute-force graph oracles ----

/// Instruction-level successor map derived directly from the CFG.
pub fn instruction_successors(f: &Function) -> BTreeMap<u64, Vec<u64>> {
    let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for block in &f.blocks {
        for pair in block.instructions.windows(2) {
            out.entry(pair[0].address)
                .or_default()
                .push(pair[1].address);
        }
        if let Some(last) = block.instructions.last() {
            let entry = out.entry(last.address).or_default();
            for (succ, _) in &block.successors {
                if let Some(sb) = f.block(*succ) {
                    entry.push(sb.instructions[0].address);
                }
            }
        }
    }
    out
}

/// Does a control-flow path from `from` to `to` exist that passes through no
/// other key instruction? BFS over the instruction graph with interior key
/// instructions removed.
pub fn keyfree_path_exists(
    f: &Function,
    kinds: &BTreeMap<u64, KeyKind>,
    from: u64,
    to: u64,
) -> bool {
    let succs = instruction_successors(f);
    let mut queue: VecDeque<u64> = succs.get(&from).into_iter().flatten().copied().collect();
    let mut seen = BTreeSet::new();
    while let Some(addr) = queue.pop_front() {
        if !seen.insert(addr) {
            continue;
        }
        if addr == to {
            return true;
        }
        if kinds.contains_key(&addr) {
            continue; // some other key instruction blocks this path
        }
        queue.extend(succs.get(&addr).into_iter().flatten().copied());
    }
    false
}

/// Dominators computed from first principles: enumerate acyclic paths from
/// entry and intersect. Usable on small fixtures only.
pub fn brute_dominators(f: &Function) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut paths_to: BTreeMap<u32, Vec<BTreeSet<u32>>> = BTreeMap::new();
    let mut stack = vec![(f.entry, vec![f.entry])];
    while let Some((block, path)) = stack.pop() {
        paths_to
            .entry(block)
            .or_default()
            .push(path.iter().copied().collect());
        if let Some(b) = f.block(block) {
            for (succ, _) in &b.successors {
                if !path.contains(succ) {
                    let mut next = path.clone();
                    next.push(*succ);
                    stack.push((*succ, next));
                }
            }
        }
    }
    // a block dominates b iff it is on every path that can be extended to b;
    // for dominators it suffices to intersect over all simple paths
    paths_to
        .into_iter()
        .map(|(block, paths)| {
            let mut iter = paths.into_iter();
            let first = iter.next().expect("reachable");
            let dom = iter.fold(first, |acc, p| acc.intersection(&p).copied().collect());
            (block, dom)
        })
        .collect()
}

/// Exhaustive best-assignment aggregate over the same pairwise scores the
/// product uses; the oracle replaces the greedy selection with optimal
/// search. Only sensible for small graphs.
#[allow(clippy::needless_range_loop)]
pub fn optimal_aggregate(
    ga: &KeyGraph,
    gb: &KeyGraph,
    params: &keysim::compare::CompareParams,
) -> f64 {
    let (n, m) = (ga.nodes.len(), gb.nodes.len());
    if n == 0 && m == 0 {
        return 1.0;
    }
    if n == 0 || m == 0 {
        return 0.0;
    }
    let mut combined = vec![vec![None::<f64>; m]; n];
    for i in 0..n {
        for j in 0..m {
            let node = keysim::compare::node_similarity(&ga.nodes[i], &gb.nodes[j]);
            if node >= params.node_threshold {
                let ctx = keysim::compare::context_similarity(
                    ga,
                    i,
                    gb,
                    j,
                    params.context_boundary,
                    params.node_threshold,
                );
                combined[i][j] =
                    Some((1.0 - params.context_weight) * node + params.context_weight * ctx);
            }
        }
    }
    fn best(i: usize, used: &mut Vec<bool>, combined: &[Vec<Option<f64>>]) -> f64 {
        if i == combined.len() {
            return 0.0;
        }
        // skip node i
        let mut best_score = best(i + 1, used, combined);
        for j in 0..used.len() {
            if !used[j] {
                if let Some(c) = combined[i][j] {
                    used[j] = true;
                    best_score = best_score.max(c + best(i + 1, used, combined));
                    used[j] = false;
                }
            }
        }
        best_score
    }
    let mut used = vec![false; m];
    best(0, &mut used, &combined) / n.max(m) as f64
}

// ---- random expressions ----

const REG_POOL: [&str; 4] = ["rbx", "rbp", "r12", "sp"];

fn random_leaf(rng: &mut ChaCha8Rng, width: Width) -> SymExpr {
    match rng.gen_range(0..5) {
        0 => SymExpr::var(rng.gen_range(0..4), width),
        1 => SymExpr::reg(REG_POOL[rng.gen_range(0..REG_POOL.len())], width),
        2 => SymExpr::constant(rng.gen(), width),
        3 => SymExpr::ret("callee", rng.gen_range(0..2), width),
        _ => SymExpr::mem(SymExpr::var(rng.gen_range(0..4), width), width),
    }
}

const BINOPS: [BinOp; 9] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::And,
    BinOp::Or,
    BinOp::Xor,
    BinOp::Shl,
    BinOp::Shr,
    BinOp::Sar,
];

/// Random expression of the given width with every node at that width
/// (memory addresses included), parseable back at the same default width.
pub fn random_expr(rng: &mut ChaCha8Rng, depth: u32, width: Width) -> SymExpr {
    if depth == 0 || rng.gen_ratio(1, 3) {
        return random_leaf(rng, width);
    }
    match rng.gen_range(0..10) {
        0..=5 => {
            let op = BINOPS[rng.gen_range(0..BINOPS.len())];
            let lhs = random_expr(rng, depth - 1, width);
            let rhs = random_expr(rng, depth - 1, width);
            SymExpr::binop(op, lhs, rhs)
        }
        6 => SymExpr::unop(
            if rng.gen() { UnOp::Not } else { UnOp::Neg },
            random_expr(rng, depth - 1, width),
        ),
        7 => SymExpr::mem(random_expr(rng, depth - 1, width), width),
        8 => SymExpr::iter(random_expr(rng, depth - 1, width)),
        _ => random_expr(rng, depth - 1, width),
    }
}

/// Like [`random_expr`] but mixing in extensions and truncations across
/// widths; for soundness checking only (not width-uniform).
pub fn random_expr_mixed(rng: &mut ChaCha8Rng, depth: u32, width: Width) -> SymExpr {
    if depth == 0 || rng.gen_ratio(1, 4) {
        return random_leaf(rng, width);
    }
    match rng.gen_range(0..12) {
        0..=5 => {
            let op = BINOPS[rng.gen_range(0..BINOPS.len())];
            SymExpr::binop(
                op,
                random_expr_mixed(rng, depth - 1, width),
                random_expr_mixed(rng, depth - 1, width),
            )
        }
        6 => SymExpr::unop(
            if rng.gen() { UnOp::Not } else { UnOp::Neg },
            random_expr_mixed(rng, depth - 1, width),
        ),
        7 => SymExpr::mem(random_expr_mixed(rng, depth - 1, width), width),
        8 => SymExpr::iter(random_expr_mixed(rng, depth - 1, width)),
        9 if width.bits() > 8 => {
            let from = if width == Width::W64 {
                Width::W32
            } else {
                Width::W8
            };
            SymExpr::ext(random_expr_mixed(rng, depth - 1, from), width, rng.gen())
        }
        10 if width.bits() < 64 => {
            let from = if width == Width::W8 {
                Width::W32
            } else {
                Width::W64
            };
            SymExpr::trunc(random_expr_mixed(rng, depth - 1, from), width)
        }
        _ => random_expr_mixed(rng, depth - 1, width),
    }
}

/// A random instance on which the named rewrite rule fires. Returns `None`
/// for unknown rule names so the suite can prove sampler coverage.
pub fn rule_sample(name: &str, rng: &mut ChaCha8Rng, width: Width) -> Option<SymExpr> {
    let leaf = |rng: &mut ChaCha8Rng| SymExpr::var(rng.gen_range(0..4), width);
    let konst = |rng: &mut ChaCha8Rng| SymExpr::constant(rng.gen(), width);
    Some(match name {
        "const-fold-binop" => {
            let op = BINOPS[rng.gen_range(0..BINOPS.len())];
            SymExpr::binop(op, konst(rng), konst(rng))
        }
        "const-fold-unop" => {
            SymExpr::unop(if rng.gen() { UnOp::Not } else { UnOp::Neg }, konst(rng))
        }
        "const-fold-cast" => {
            if width == Width::W8 {
                SymExpr::trunc(SymExpr::constant(rng.gen(), Width::W64), width)
            } else {
                let from = if width == Width::W64 {
                    Width::W32
                } else {
                    Width::W8
                };
                SymExpr::ext(SymExpr::constant(rng.gen(), from), width, rng.gen())
            }
        }
        "double-not" => SymExpr::unop(UnOp::Not, SymExpr::unop(UnOp::Not, leaf(rng))),
        "double-neg" => SymExpr::unop(UnOp::Neg, SymExpr::unop(UnOp::Neg, leaf(rng))),
        "shift-zero" => {
            let op = [BinOp::Shl, BinOp::Shr, BinOp::Sar][rng.gen_range(0..3)];
            if rng.gen() {
                SymExpr::binop(op, leaf(rng), SymExpr::constant(0, width))
            } else {
                SymExpr::binop(op, SymExpr::constant(0, width), leaf(rng))
            }
        }
        "shl-const-to-mul" => {
            let c = rng.gen_range(1..width.bits() as u64);
            SymExpr::binop(BinOp::Shl, leaf(rng), SymExpr::constant(c, width))
        }
        "cast-cancel" => match width {
            Width::W8 => SymExpr::trunc(
                SymExpr::trunc(SymExpr::var(rng.gen_range(0..4), Width::W64), Width::W32),
                Width::W8,
            ),
            Width::W32 => SymExpr::trunc(
                SymExpr::ext(
                    SymExpr::var(rng.gen_range(0..4), Width::W32),
                    Width::W64,
                    rng.gen(),
                ),
                Width::W32,
            ),
            _ => SymExpr::ext(
                SymExpr::ext(
                    SymExpr::var(rng.gen_range(0..4), Width::W8),
                    Width::W32,
                    false,
                ),
                Width::W64,
                rng.gen(),
            ),
        },
        "add-chain-normalize" => {
            // constant first and a cancelling pair: always non-canonical
            let x = leaf(rng);
            let sum = SymExpr::binop(BinOp::Add, konst(rng), x.clone());
            SymExpr::binop(BinOp::Sub, sum, x)
        }
        "mul-chain-normalize" => SymExpr::binop(
            BinOp::Mul,
            konst(rng),
            SymExpr::binop(BinOp::Mul, leaf(rng), konst(rng)),
        ),
        "bit-chain-normalize" => {
            let op = if rng.gen() { BinOp::And } else { BinOp::Or };
            let x = leaf(rng);
            SymExpr::binop(op, x.clone(), SymExpr::binop(op, x, konst(rng)))
        }
        "xor-chain-normalize" => {
            let x = leaf(rng);
            let y = leaf(rng);
            SymExpr::binop(
                BinOp::Xor,
                SymExpr::unop(UnOp::Not, x.clone()),
                SymExpr::binop(BinOp::Xor, x, y),
            )
        }
        _ => return None,
    })
}

fn collect_leaves(
    e: &SymExpr,
    out: &mut BTreeSet<String>,
    rets: &mut BTreeSet<(String, Option<String>, u32)>,
    vars: &mut BTreeSet<u32>,
) {
    match e.node() {
        ExprNode::Var { index, .. } => {
            vars.insert(*index);
        }
        ExprNode::Reg { name, .. } => {
            out.insert(name.clone());
        }
        ExprNode::Ret {
            callee,
            reg,
            ordinal,
            ..
        } => {
            rets.insert((callee.clone(), reg.clone(), *ordinal));
        }
        ExprNode::Const { .. } => {}
        ExprNode::Mem { addr, .. } => collect_leaves(addr, out, rets, vars),
        ExprNode::Binop { lhs, rhs, .. } => {
            collect_leaves(lhs, out, rets, vars);
            collect_leaves(rhs, out, rets, vars);
        }
        ExprNode::Unop { arg, .. } | ExprNode::Ext { arg, .. } | ExprNode::Trunc { arg, .. } => {
            collect_leaves(arg, out, rets, vars)
        }
        ExprNode::Iter { body } => collect_leaves(body, out, rets, vars),
    }
}

/// Random valuation of every leaf of `e` plus a default-memory function so
/// nested memory reads stay consistent.
pub fn random_bindings(e: &SymExpr, rng: &mut ChaCha8Rng) -> Bindings {
    let mut regs = BTreeSet::new();
    let mut rets = BTreeSet::new();
    let mut vars = BTreeSet::new();
    collect_leaves(e, &mut regs, &mut rets, &mut vars);
    let mut b = Bindings::new();
    for v in vars {
        b.vars.insert(v, rng.gen());
    }
    for r in regs {
        let val = rng.gen();
        b.regs.insert(r, val);
    }
    for key in rets {
        b.rets.insert(key, rng.gen());
    }
    let seed: u64 = rng.gen();
    b.default_mem = Some(Box::new(move |addr| uninit_byte(seed, addr)));
    b
}

// ---- random program generation (proptest strategies) ----

use proptest::prelude::*;

use keysim::ingest::{BasicBlock, EdgeKind};

fn x86_instruction(pick: usize, addr: u64) -> Instruction {
    let make = |mn: &str, ops: &[&str]| Instruction {
        address: addr,
        mnemonic: mn.into(),
        operands: ops.iter().map(|s| s.to_string()).collect(),
    };
    match pick % 10 {
        0 => make("mov", &["rax", "rbx"]),
        1 => make("add", &["rcx", "0x10"]),
        2 => make("lea", &["rdx", "[rdi+rsi*4+0x10]"]),
        3 => make("mov", &["[rbp-0x8]", "rax"]),
        4 => make("push", &["rbx"]),
        5 => make("pop", &["rcx"]),
        6 => make("test", &["rax", "rax"]),
        7 => make("call", &["helper"]),
        8 => make("xor", &["rax", "rax"]),
        _ => make("cmp", &["rdi", "rsi"]),
    }
}

fn arm_instruction(pick: usize, addr: u64) -> Instruction {
    let make = |mn: &str, ops: &[&str]| Instruction {
        address: addr,
        mnemonic: mn.into(),
        operands: ops.iter().map(|s| s.to_string()).collect(),
    };
    match pick % 10 {
        0 => make("mov", &["r0", "r1"]),
        1 => make("add", &["r2", "r3", "#0x10"]),
        2 => make("ldr", &["r0", "[sp, #4]"]),
        3 => make("str", &["r1", "[r2]"]),
        4 => make("push", &["{r4, lr}"]),
        5 => make("pop", &["{r4}"]),
        6 => make("tst", &["r0", "r1"]),
        7 => make("bl", &["helper"]),
        8 => make("eor", &["r0", "r0", "r1"]),
        _ => make("cmp", &["r0", "#0"]),
    }
}

fn terminator(arch: Arch, successors: usize, addr: u64) -> Instruction {
    let (mn, ops): (&str, Vec<String>) = match (arch, successors) {
        (Arch::X86_64, 2) => ("jne", vec!["0x0".into()]),
        (Arch::X86_64, 1) => ("jmp", vec!["0x0".into()]),
        (Arch::X86_64, _) => ("ret", vec![]),
        (Arch::Arm32, 2) => ("bne", vec!["0x0".into()]),
        (Arch::Arm32, 1) => ("b", vec!["0x0".into()]),
        (Arch::Arm32, _) => ("bx", vec!["lr".into()]),
    };
    Instruction {
        address: addr,
        mnemonic: mn.into(),
        operands: ops,
    }
}

prop_compose! {
    fn gen_block(arch: Arch, block_count: u32)(
        id in 0u32..block_count,
        body in prop::collection::vec(0usize..10, 0..4),
        succ_shape in 0usize..4,
        succ_a in 0u32..block_count,
        succ_b in 0u32..block_count,
    ) -> BasicBlock {
        let base = 0x1000u64 + id as u64 * 0x100;
        let mut instructions = Vec::new();
        for (i, pick) in body.iter().enumerate() {
            let addr = base + i as u64 * 4;
            instructions.push(match arch {
                Arch::X86_64 => x86_instruction(*pick, addr),
                Arch::Arm32 => arm_instruction(*pick, addr),
            });
        }
        let term_addr = base + body.len() as u64 * 4;
        let successors = match succ_shape {
            0 => vec![],
            1 => vec![(succ_a, EdgeKind::Unconditional)],
            2 => vec![(succ_a, EdgeKind::Fallthrough)],
            _ => vec![(succ_a, EdgeKind::Taken), (succ_b, EdgeKind::Fallthrough)],
        };
        // a comparison so two-way blocks read plausibly
        if successors.len() == 2 {
            let cmp_addr = term_addr;
            instructions.push(match arch {
                Arch::X86_64 => x86_instruction(9, cmp_addr),
                Arch::Arm32 => arm_instruction(9, cmp_addr),
            });
        }
        instructions.push(terminator(arch, successors.len(), term_addr + 4));
        BasicBlock { id, address: base, instructions, successors }
    }
}

prop_compose! {
    fn gen_function(index: usize)(
        arch in prop::sample::select(vec![Arch::X86_64, Arch::Arm32]),
    )(
        block_count in 1u32..5,
        arch in Just(arch),
        win64 in any::<bool>(),
    ) -> (Arch, u32, CallConv, usize) {
        let cc = match arch {
            Arch::X86_64 if win64 => CallConv::Win64,
            other => other.default_convention(),
        };
        (arch, block_count, cc, index)
    }
}

pub fn gen_program() -> impl Strategy<Value = Program> {
    prop::collection::vec(gen_function(0), 1..4).prop_flat_map(|specs| {
        let block_strategies: Vec<_> = specs
            .iter()
            .map(|(arch, count, cc, _)| {
                let (arch, count, cc) = (*arch, *count, *cc);
                prop::collection::vec(gen_block(arch, count), count as usize..=count as usize)
                    .prop_map(move |mut blocks| {
                        // force unique, dense ids so successors resolve
                        for (i, b) in blocks.iter_mut().enumerate() {
                            b.id = i as u32;
                            b.address = 0x1000 + i as u64 * 0x100;
                            for (j, instr) in b.instructions.iter_mut().enumerate() {
                                instr.address = b.address + j as u64 * 4;
                            }
                        }
                        (arch, cc, blocks)
                    })
            })
            .collect();
        block_strategies.prop_map(|functions| Program {
            source_name: "generated".into(),
            functions: functions
                .into_iter()
                .enumerate()
                .map(|(i, (arch, cc, blocks))| Function {
                    name: format!("f{i}"),
                    arch,
                    convention: cc,
                    entry: 0,
                    blocks,
                })
                .collect(),
        })
    })
}
