//! Key-instruction extraction and the key IR graph.
//!
//! Key instructions are the consumers of prepared values: subfunction calls,
//! comparisons, returns, and memory writes (the last being control-flow
//! irrelevant, the rest control-flow impacting). Each key instruction keeps
//! every symbolic value observed for it; the graph wires key instructions
//! along control flow with all non-key instructions removed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::arch::Arch;
use crate::diag::Diagnostic;
use crate::expr::{SymExpr, Width};
use crate::ingest::Function;
use crate::lift::{CmpFlavor, LiftedFunction, MicroOp};
use crate::symexec::{Observation, ValueSets};
use crate::text::TokenString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyKind {
    Call,
    Compare,
    Return,
    MemWrite,
}

impl KeyKind {
    pub fn tag(self) -> &'static str {
        match self {
            KeyKind::Call => "call",
            KeyKind::Compare => "compare",
            KeyKind::Return => "return",
            KeyKind::MemWrite => "memwrite",
        }
    }

    /// Memory writes are the one control-flow-irrelevant kind.
    pub fn control_flow_impacting(self) -> bool {
        self != KeyKind::MemWrite
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyPayload {
    Call {
        callee: String,
        args: Vec<SymExpr>,
    },
    Compare {
        lhs: SymExpr,
        rhs: SymExpr,
        flavor: CmpFlavor,
    },
    Return {
        value: SymExpr,
    },
    MemWrite {
        addr: SymExpr,
        value: SymExpr,
        width: Width,
    },
}

impl KeyPayload {
    pub fn kind(&self) -> KeyKind {
        match self {
            KeyPayload::Call { .. } => KeyKind::Call,
            KeyPayload::Compare { .. } => KeyKind::Compare,
            KeyPayload::Return { .. } => KeyKind::Return,
            KeyPayload::MemWrite { .. } => KeyKind::MemWrite,
        }
    }

    /// Canonical token rendering used by textual similarity.
    pub fn token_string(&self) -> TokenString {
        match self {
            KeyPayload::Call { callee, args } => {
                let mut tokens = vec![callee.clone(), "(".into()];
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        tokens.push(",".into());
                    }
                    tokens.extend(crate::text::tokenize(a).tokens().to_vec());
                }
                tokens.push(")".into());
                TokenString::from_tokens(tokens)
            }
            KeyPayload::Compare { lhs, rhs, flavor } => {
                let mut tokens = vec![flavor.tag().to_string(), "(".into()];
                tokens.extend(crate::text::tokenize(lhs).tokens().to_vec());
                tokens.push(",".into());
                tokens.extend(crate::text::tokenize(rhs).tokens().to_vec());
                tokens.push(")".into());
                TokenString::from_tokens(tokens)
            }
            KeyPayload::Return { value } => crate::text::tokenize(value),
            KeyPayload::MemWrite { addr, value, width } => {
                let mut tokens = vec![format!("store{}", width.bits()), "(".into()];
                tokens.extend(crate::text::tokenize(addr).tokens().to_vec());
                tokens.push(",".into());
                tokens.extend(crate::text::tokenize(value).tokens().to_vec());
                tokens.push(")".into());
                TokenString::from_tokens(tokens)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyNode {
    pub id: usize,
    pub address: u64,
    pub kind: KeyKind,
    pub payloads: BTreeSet<KeyPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyGraph {
    pub function: String,
    pub nodes: Vec<KeyNode>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl KeyGraph {
    pub fn node_at(&self, address: u64) -> Option<&KeyNode> {
        self.nodes.iter().find(|n| n.address == address)
    }

    /// Undirected neighbors within `k` hops of `node`, excluding it.
    pub fn neighborhood(&self, node: usize, k: u32) -> BTreeSet<usize> {
        let mut adjacency: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (a, b) in &self.edges {
            adjacency.entry(*a).or_default().insert(*b);
            adjacency.entry(*b).or_default().insert(*a);
        }
        let mut out = BTreeSet::new();
        let mut frontier = BTreeSet::from([node]);
        for _ in 0..k {
            let mut next = BTreeSet::new();
            for n in frontier {
                if let Some(adj) = adjacency.get(&n) {
                    for &m in adj {
                        if m != node && out.insert(m) {
                            next.insert(m);
                        }
                    }
                }
            }
            frontier = next;
        }
        out
    }
}

/// Classify one lifted instruction from its micro-ops alone. Calls win over
/// stores when both appear; push-slot stores are `Push` micro-ops, never
/// `Store`, so stack setup does not classify as a memory write. Flag-setting
/// arithmetic feeding a branch is classified by [`build_key_graph`], which
/// has the block context.
pub fn classify(micro: &[MicroOp], _arch: Arch) -> Option<KeyKind> {
    if micro.iter().any(|m| matches!(m, MicroOp::Call { .. })) {
        return Some(KeyKind::Call);
    }
    if micro.iter().any(|m| matches!(m, MicroOp::Compare { .. })) {
        return Some(KeyKind::Compare);
    }
    if micro.iter().any(|m| matches!(m, MicroOp::Ret)) {
        return Some(KeyKind::Return);
    }
    if micro.iter().any(|m| matches!(m, MicroOp::Store { .. })) {
        return Some(KeyKind::MemWrite);
    }
    None
}

fn sets_flags(micro: &[MicroOp]) -> bool {
    micro.iter().any(|m| {
        matches!(
            m,
            MicroOp::Binop {
                set_flags: true,
                ..
            } | MicroOp::Unop {
                set_flags: true,
                ..
            }
        )
    })
}

/// Per-address key kinds for a lifted function, including the implicit
/// comparisons: in a block that ends with a conditional branch, the nearest
/// preceding flag-setter is a comparison even when it is ordinary
/// arithmetic (`dec`/`jnz` and `subs`/`bne` idioms).
pub fn classify_function(lf: &LiftedFunction) -> BTreeMap<u64, KeyKind> {
    let mut kinds = BTreeMap::new();
    for block in &lf.function.blocks {
        for instr in &block.instructions {
            if let Some(kind) = classify(lf.micro_at(instr.address), lf.function.arch) {
                kinds.insert(instr.address, kind);
            }
        }
        let ends_conditional = block.instructions.last().is_some_and(|last| {
            lf.micro_at(last.address)
                .iter()
                .any(|m| matches!(m, MicroOp::Branch { cond: Some(_) }))
        });
        if ends_conditional {
            for instr in block.instructions.iter().rev().skip(1) {
                let micro = lf.micro_at(instr.address);
                if micro.iter().any(|m| matches!(m, MicroOp::Compare { .. })) {
                    break; // explicit comparison already classified
                }
                if sets_flags(micro) {
                    kinds.entry(instr.address).or_insert(KeyKind::Compare);
                    break;
                }
            }
        }
    }
    kinds
}

/// The observed return values: rax on x86-64, r0 on ARM32, at every return
/// site. Empty (with a diagnostic) when the function never returns.
pub fn return_values(lf: &LiftedFunction, vs: &ValueSets) -> (BTreeSet<SymExpr>, Vec<Diagnostic>) {
    let mut out = BTreeSet::new();
    let mut has_ret = false;
    for block in &lf.function.blocks {
        for instr in &block.instructions {
            if lf
                .micro_at(instr.address)
                .iter()
                .any(|m| matches!(m, MicroOp::Ret))
            {
                has_ret = true;
                if let Some(observations) = vs.values.get(&instr.address) {
                    for obs in observations {
                        if let Observation::Return { value } = obs {
                            out.insert(value.clone());
                        }
                    }
                }
            }
        }
    }
    let mut diagnostics = Vec::new();
    if !has_ret {
        diagnostics.push(Diagnostic::warning(format!(
            "function `{}` has no return instruction",
            lf.function.name
        )));
    }
    (out, diagnostics)
}

fn payloads_for(kind: KeyKind, observations: &BTreeSet<Observation>) -> BTreeSet<KeyPayload> {
    let mut out = BTreeSet::new();
    for obs in observations {
        match (kind, obs) {
            (KeyKind::Call, Observation::Call { callee, args }) => {
                out.insert(KeyPayload::Call {
                    callee: callee.clone(),
                    args: args.clone(),
                });
            }
            (KeyKind::Compare, Observation::Compare { lhs, rhs, flavor }) => {
                out.insert(KeyPayload::Compare {
                    lhs: lhs.clone(),
                    rhs: rhs.clone(),
                    flavor: *flavor,
                });
            }
            (KeyKind::Return, Observation::Return { value }) => {
                out.insert(KeyPayload::Return {
                    value: value.clone(),
                });
            }
            (KeyKind::MemWrite, Observation::Store { addr, value, width }) => {
                out.insert(KeyPayload::MemWrite {
                    addr: addr.clone(),
                    value: value.clone(),
                    width: *width,
                });
            }
            _ => {}
        }
    }
    out
}

/// Instruction-level successor map: within a block instructions chain, and
/// the last instruction flows to the first instruction of each successor.
fn instruction_successors(f: &Function) -> BTreeMap<u64, Vec<u64>> {
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
                    if let Some(first) = sb.instructions.first() {
                        entry.push(first.address);
                    }
                }
            }
        }
    }
    out
}

/// Build the key IR graph: classified key instructions carrying their
/// observed values, wired by control-flow paths that traverse no other key
/// instruction.
pub fn build_key_graph(lf: &LiftedFunction, vs: &ValueSets) -> (KeyGraph, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();
    let kinds = classify_function(lf);

    let mut nodes = Vec::new();
    for (&address, &kind) in &kinds {
        let Some(observations) = vs.values.get(&address) else {
            diagnostics.push(
                Diagnostic::warning("key instruction never executed; dropped from graph")
                    .at(address),
            );
            continue;
        };
        let payloads = payloads_for(kind, observations);
        if payloads.is_empty() {
            diagnostics.push(
                Diagnostic::warning("key instruction has no usable observations").at(address),
            );
            continue;
        }
        nodes.push(KeyNode {
            id: nodes.len(),
            address,
            kind,
            payloads,
        });
    }
    if nodes.is_empty() {
        diagnostics.push(Diagnostic::warning(format!(
            "function `{}` yields an empty key graph",
            lf.function.name
        )));
    }

    let id_by_address: BTreeMap<u64, usize> = nodes.iter().map(|n| (n.address, n.id)).collect();
    let succs = instruction_successors(&lf.function);
    let mut edges = BTreeSet::new();
    for node in &nodes {
        // BFS over instructions, stopping expansion at key instructions
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<u64> = succs
            .get(&node.address)
            .into_iter()
            .flatten()
            .copied()
            .collect();
        while let Some(addr) = queue.pop_front() {
            if !seen.insert(addr) {
                continue;
            }
            if let Some(&target) = id_by_address.get(&addr) {
                edges.insert((node.id, target));
                continue;
            }
            if let Some(next) = succs.get(&addr) {
                queue.extend(next.iter().copied());
            }
        }
    }

    (
        KeyGraph {
            function: lf.function.name.clone(),
            nodes,
            edges,
        },
        diagnostics,
    )
}
