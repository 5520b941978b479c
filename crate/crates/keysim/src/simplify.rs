//! Rule-based canonicalization and simplification of symbolic expressions.
//!
//! Innermost rewriting to a fixpoint under a firing budget. Every rule is
//! semantics-preserving under modular bitvector arithmetic at the node's
//! width; the soundness suite checks each named rule against random
//! valuations. `Iter` bodies are simplified but no rule looks through an
//! `Iter` boundary, so iteration-dependent values never merge with invariant
//! ones.

use crate::expr::{BinOp, ExprNode, SymExpr, UnOp, Width};
use crate::text::canonical_key;

/// Default rewrite budget (rule firings per `simplify` call).
pub const DEFAULT_REWRITE_BUDGET: u64 = 10_000;

/// A named rewrite rule. `apply` returns `Some` iff the rule fires at the
/// given node (side conditions included).
pub struct Rule {
    pub name: &'static str,
    pub apply: fn(&SymExpr) -> Option<SymExpr>,
}

/// What happened during a `simplify_budgeted` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplifyOutcome {
    pub fired: u64,
    pub exhausted: bool,
}

/// The rule table, in application order.
pub fn rules() -> &'static [Rule] {
    &RULES
}

static RULES: [Rule; 12] = [
    Rule {
        name: "const-fold-binop",
        apply: const_fold_binop,
    },
    Rule {
        name: "const-fold-unop",
        apply: const_fold_unop,
    },
    Rule {
        name: "const-fold-cast",
        apply: const_fold_cast,
    },
    Rule {
        name: "double-not",
        apply: double_not,
    },
    Rule {
        name: "double-neg",
        apply: double_neg,
    },
    Rule {
        name: "shift-zero",
        apply: shift_zero,
    },
    Rule {
        name: "shl-const-to-mul",
        apply: shl_const_to_mul,
    },
    Rule {
        name: "cast-cancel",
        apply: cast_cancel,
    },
    Rule {
        name: "add-chain-normalize",
        apply: add_chain_normalize,
    },
    Rule {
        name: "mul-chain-normalize",
        apply: mul_chain_normalize,
    },
    Rule {
        name: "bit-chain-normalize",
        apply: bit_chain_normalize,
    },
    Rule {
        name: "xor-chain-normalize",
        apply: xor_chain_normalize,
    },
];

/// Simplify with the default budget.
pub fn simplify(e: &SymExpr) -> SymExpr {
    simplify_budgeted(e, DEFAULT_REWRITE_BUDGET).0
}

/// Simplify with an explicit budget; on exhaustion the best-so-far tree is
/// returned and `exhausted` is set.
pub fn simplify_budgeted(e: &SymExpr, budget: u64) -> (SymExpr, SimplifyOutcome) {
    let mut driver = Driver { budget, fired: 0 };
    let out = driver.rewrite(e);
    let outcome = SimplifyOutcome {
        fired: driver.fired,
        exhausted: driver.budget == 0,
    };
    (out, outcome)
}

struct Driver {
    budget: u64,
    fired: u64,
}

impl Driver {
    fn rewrite(&mut self, e: &SymExpr) -> SymExpr {
        if self.budget == 0 {
            return e.clone();
        }
        let mut cur = self.rewrite_children(e);
        'outer: loop {
            if self.budget == 0 {
                return cur;
            }
            for rule in &RULES {
                if let Some(next) = (rule.apply)(&cur) {
                    debug_assert!(next != cur, "rule {} fired without change", rule.name);
                    self.budget -= 1;
                    self.fired += 1;
                    cur = self.rewrite_children(&next);
                    continue 'outer;
                }
            }
            return cur;
        }
    }

    fn rewrite_children(&mut self, e: &SymExpr) -> SymExpr {
        match e.node() {
            ExprNode::Var { .. }
            | ExprNode::Reg { .. }
            | ExprNode::Const { .. }
            | ExprNode::Ret { .. } => e.clone(),
            ExprNode::Mem { addr, width } => {
                let a = self.rewrite(addr);
                if &a == addr {
                    e.clone()
                } else {
                    SymExpr::mem(a, *width)
                }
            }
            ExprNode::Binop { op, lhs, rhs, .. } => {
                let l = self.rewrite(lhs);
                let r = self.rewrite(rhs);
                if &l == lhs && &r == rhs {
                    e.clone()
                } else {
                    SymExpr::binop(*op, l, r)
                }
            }
            ExprNode::Unop { op, arg, .. } => {
                let a = self.rewrite(arg);
                if &a == arg {
                    e.clone()
                } else {
                    SymExpr::unop(*op, a)
                }
            }
            ExprNode::Ext { arg, width, signed } => {
                let a = self.rewrite(arg);
                if &a == arg {
                    e.clone()
                } else {
                    SymExpr::ext(a, *width, *signed)
                }
            }
            ExprNode::Trunc { arg, width } => {
                let a = self.rewrite(arg);
                if &a == arg {
                    e.clone()
                } else {
                    SymExpr::trunc(a, *width)
                }
            }
            ExprNode::Iter { body } => {
                let b = self.rewrite(body);
                if &b == body {
                    e.clone()
                } else {
                    SymExpr::iter(b)
                }
            }
        }
    }
}

fn const_fold_binop(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Binop {
        op,
        lhs,
        rhs,
        width,
    } = e.node()
    {
        let (a, b) = (lhs.as_const()?, rhs.as_const()?);
        return Some(SymExpr::constant(
            crate::expr::apply_binop(*op, a, b, *width),
            *width,
        ));
    }
    None
}

fn const_fold_unop(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Unop { op, arg, width } = e.node() {
        let a = arg.as_const()?;
        let v = match op {
            UnOp::Not => !a,
            UnOp::Neg => a.wrapping_neg(),
        };
        return Some(SymExpr::constant(v, *width));
    }
    None
}

fn const_fold_cast(e: &SymExpr) -> Option<SymExpr> {
    match e.node() {
        ExprNode::Ext { arg, width, signed } => {
            let a = arg.as_const()?;
            let v = if *signed { arg.width().sext(a) } else { a };
            Some(SymExpr::constant(v, *width))
        }
        ExprNode::Trunc { arg, width } => Some(SymExpr::constant(arg.as_const()?, *width)),
        _ => None,
    }
}

fn double_not(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Unop {
        op: UnOp::Not, arg, ..
    } = e.node()
    {
        if let ExprNode::Unop {
            op: UnOp::Not,
            arg: inner,
            ..
        } = arg.node()
        {
            return Some(inner.clone());
        }
    }
    None
}

fn double_neg(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Unop {
        op: UnOp::Neg, arg, ..
    } = e.node()
    {
        if let ExprNode::Unop {
            op: UnOp::Neg,
            arg: inner,
            ..
        } = arg.node()
        {
            return Some(inner.clone());
        }
    }
    None
}

fn shift_zero(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Binop {
        op,
        lhs,
        rhs,
        width,
    } = e.node()
    {
        if !matches!(op, BinOp::Shl | BinOp::Shr | BinOp::Sar) {
            return None;
        }
        if rhs.as_const().map(|c| c as u32 % width.bits()) == Some(0) {
            return Some(lhs.clone());
        }
        if lhs.is_const(0) {
            return Some(SymExpr::constant(0, *width));
        }
    }
    None
}

fn shl_const_to_mul(e: &SymExpr) -> Option<SymExpr> {
    if let ExprNode::Binop {
        op: BinOp::Shl,
        lhs,
        rhs,
        width,
    } = e.node()
    {
        let c = rhs.as_const()? as u32 % width.bits();
        if c == 0 {
            return None; // shift-zero handles it
        }
        return Some(SymExpr::binop(
            BinOp::Mul,
            lhs.clone(),
            SymExpr::constant(1u64 << c, *width),
        ));
    }
    None
}

fn cast_cancel(e: &SymExpr) -> Option<SymExpr> {
    match e.node() {
        ExprNode::Trunc { arg, width } => match arg.node() {
            // trunc_w(ext_W(x)): compare w to the pre-extension width.
            ExprNode::Ext { arg: x, signed, .. } => {
                let xw = x.width();
                Some(match xw.bits().cmp(&width.bits()) {
                    std::cmp::Ordering::Equal => x.clone(),
                    std::cmp::Ordering::Greater => SymExpr::trunc(x.clone(), *width),
                    std::cmp::Ordering::Less => SymExpr::ext(x.clone(), *width, *signed),
                })
            }
            ExprNode::Trunc { arg: x, .. } => Some(SymExpr::trunc(x.clone(), *width)),
            _ => None,
        },
        ExprNode::Ext { arg, width, signed } => match arg.node() {
            ExprNode::Ext {
                arg: x,
                signed: inner_signed,
                ..
            } => {
                if *signed == *inner_signed {
                    Some(SymExpr::ext(x.clone(), *width, *signed))
                } else if *signed && !*inner_signed {
                    // sign-extending a zero-extended value copies zeros
                    Some(SymExpr::ext(x.clone(), *width, false))
                } else {
                    None
                }
            }
            _ => None,
        },
        _ => None,
    }
}

/// Signed multiplicity of a term at `width`: `Mul(t, c)` decomposes so that
/// `x + x*2` fuses to `x*3` and `lea`-style address math matches shifts.
fn decompose_term(e: &SymExpr) -> (SymExpr, u64) {
    if let ExprNode::Binop {
        op: BinOp::Mul,
        lhs,
        rhs,
        ..
    } = e.node()
    {
        if let Some(c) = rhs.as_const() {
            return (lhs.clone(), c);
        }
    }
    (e.clone(), 1)
}

fn flatten_sum(
    e: &SymExpr,
    negate: bool,
    terms: &mut Vec<(SymExpr, bool)>,
    konst: &mut u64,
    width: Width,
) {
    match e.node() {
        ExprNode::Binop {
            op: BinOp::Add,
            lhs,
            rhs,
            ..
        } => {
            flatten_sum(lhs, negate, terms, konst, width);
            flatten_sum(rhs, negate, terms, konst, width);
        }
        ExprNode::Binop {
            op: BinOp::Sub,
            lhs,
            rhs,
            ..
        } => {
            flatten_sum(lhs, negate, terms, konst, width);
            flatten_sum(rhs, !negate, terms, konst, width);
        }
        ExprNode::Unop {
            op: UnOp::Neg, arg, ..
        } => {
            flatten_sum(arg, !negate, terms, konst, width);
        }
        ExprNode::Const { value, .. } => {
            let v = if negate { value.wrapping_neg() } else { *value };
            *konst = konst.wrapping_add(v) & width.mask();
        }
        _ => terms.push((e.clone(), negate)),
    }
}

fn add_chain_normalize(e: &SymExpr) -> Option<SymExpr> {
    let width = e.width();
    if !matches!(
        e.node(),
        ExprNode::Binop {
            op: BinOp::Add | BinOp::Sub,
            ..
        }
    ) {
        return None;
    }
    let mut raw = Vec::new();
    let mut konst = 0u64;
    flatten_sum(e, false, &mut raw, &mut konst, width);

    // net signed multiplicity per distinct term, in canonical order
    let mut order: Vec<SymExpr> = Vec::new();
    let mut mult: Vec<u64> = Vec::new();
    for (term, negated) in raw {
        let (base, m) = decompose_term(&term);
        let m = if negated { m.wrapping_neg() } else { m } & width.mask();
        match order.iter().position(|t| *t == base) {
            Some(i) => mult[i] = mult[i].wrapping_add(m) & width.mask(),
            None => {
                order.push(base);
                mult.push(m);
            }
        }
    }
    let mut entries: Vec<(SymExpr, u64)> = order
        .into_iter()
        .zip(mult)
        .filter(|(_, m)| *m != 0)
        .collect();
    entries.sort_by_cached_key(|(t, _)| canonical_key(t));

    let mut positives: Vec<SymExpr> = Vec::new();
    let mut negatives: Vec<SymExpr> = Vec::new();
    for (term, m) in entries {
        let neg = m.wrapping_neg() & width.mask();
        if (width.sext(m) as i64) < 0 && (width.sext(neg) as i64) > 0 {
            negatives.push(scale(term, neg, width));
        } else {
            positives.push(scale(term, m, width));
        }
    }

    let result = rebuild_sum(positives, negatives, konst, width);
    if result == *e {
        None
    } else {
        Some(result)
    }
}

fn scale(term: SymExpr, m: u64, width: Width) -> SymExpr {
    if m == 1 {
        term
    } else {
        SymExpr::binop(BinOp::Mul, term, SymExpr::constant(m, width))
    }
}

fn rebuild_sum(
    positives: Vec<SymExpr>,
    negatives: Vec<SymExpr>,
    konst: u64,
    width: Width,
) -> SymExpr {
    let mut acc: Option<SymExpr> = None;
    for p in positives {
        acc = Some(match acc {
            None => p,
            Some(a) => SymExpr::binop(BinOp::Add, a, p),
        });
    }
    let mut acc = match acc {
        Some(a) => a,
        None => {
            // no positive terms: start from the constant
            let base = SymExpr::constant(konst, width);
            if negatives.is_empty() {
                return base;
            }
            if konst == 0 {
                let mut n = negatives.into_iter();
                let first = n.next().expect("nonempty");
                let mut acc = SymExpr::unop(UnOp::Neg, first);
                for t in n {
                    acc = SymExpr::binop(BinOp::Sub, acc, t);
                }
                return acc;
            }
            let mut acc = base;
            for t in negatives {
                acc = SymExpr::binop(BinOp::Sub, acc, t);
            }
            return acc;
        }
    };
    for t in negatives {
        acc = SymExpr::binop(BinOp::Sub, acc, t);
    }
    if konst != 0 {
        let neg = konst.wrapping_neg() & width.mask();
        if (width.sext(konst) as i64) < 0 && (width.sext(neg) as i64) > 0 {
            acc = SymExpr::binop(BinOp::Sub, acc, SymExpr::constant(neg, width));
        } else {
            acc = SymExpr::binop(BinOp::Add, acc, SymExpr::constant(konst, width));
        }
    }
    acc
}

fn flatten_assoc(e: &SymExpr, op: BinOp, out: &mut Vec<SymExpr>) {
    match e.node() {
        ExprNode::Binop {
            op: o, lhs, rhs, ..
        } if *o == op => {
            flatten_assoc(lhs, op, out);
            flatten_assoc(rhs, op, out);
        }
        _ => out.push(e.clone()),
    }
}

fn mul_chain_normalize(e: &SymExpr) -> Option<SymExpr> {
    let width = e.width();
    if !matches!(e.node(), ExprNode::Binop { op: BinOp::Mul, .. }) {
        return None;
    }
    let mut flat = Vec::new();
    flatten_assoc(e, BinOp::Mul, &mut flat);
    let mut konst = 1u64;
    let mut terms: Vec<SymExpr> = Vec::new();
    let mut neg_parity = false;
    for t in flat {
        match t.node() {
            ExprNode::Const { value, .. } => konst = konst.wrapping_mul(*value) & width.mask(),
            ExprNode::Unop {
                op: UnOp::Neg, arg, ..
            } => {
                neg_parity = !neg_parity;
                terms.push(arg.clone());
            }
            _ => terms.push(t),
        }
    }
    if neg_parity {
        konst = konst.wrapping_neg() & width.mask();
    }
    if konst == 0 {
        let zero = SymExpr::constant(0, width);
        return if *e == zero { None } else { Some(zero) };
    }
    terms.sort_by_cached_key(canonical_key);
    let mut acc: Option<SymExpr> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => SymExpr::binop(BinOp::Mul, a, t),
        });
    }
    let result = match acc {
        None => SymExpr::constant(konst, width),
        Some(a) if konst == 1 => a,
        Some(a) => SymExpr::binop(BinOp::Mul, a, SymExpr::constant(konst, width)),
    };
    if result == *e {
        None
    } else {
        Some(result)
    }
}

/// AND/OR: flatten, fold constants, dedupe (idempotence), complement
/// detection, identity and absorbing elements.
fn bit_chain_normalize(e: &SymExpr) -> Option<SymExpr> {
    let width = e.width();
    let op = match e.node() {
        ExprNode::Binop {
            op: op @ (BinOp::And | BinOp::Or),
            ..
        } => *op,
        _ => return None,
    };
    let ones = width.mask();
    let (identity, absorbing) = match op {
        BinOp::And => (ones, 0),
        BinOp::Or => (0, ones),
        _ => unreachable!(),
    };
    let mut flat = Vec::new();
    flatten_assoc(e, op, &mut flat);
    let mut konst = identity;
    let mut terms: Vec<SymExpr> = Vec::new();
    for t in flat {
        match t.node() {
            ExprNode::Const { value, .. } => {
                konst = match op {
                    BinOp::And => konst & value,
                    BinOp::Or => konst | value,
                    _ => unreachable!(),
                };
            }
            _ => {
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
        }
    }
    if konst == absorbing {
        let c = SymExpr::constant(absorbing, width);
        return if *e == c { None } else { Some(c) };
    }
    // t op ~t collapses to the absorbing element
    for t in &terms {
        let complement = SymExpr::unop(UnOp::Not, t.clone());
        if terms.contains(&complement) {
            return Some(SymExpr::constant(absorbing, width));
        }
    }
    terms.sort_by_cached_key(canonical_key);
    let mut acc: Option<SymExpr> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => SymExpr::binop(op, a, t),
        });
    }
    let result = match acc {
        None => SymExpr::constant(konst, width),
        Some(a) if konst == identity => a,
        Some(a) => SymExpr::binop(op, a, SymExpr::constant(konst, width)),
    };
    if result == *e {
        None
    } else {
        Some(result)
    }
}

/// XOR: flatten (expanding `~x` to `x ^ ones`), cancel equal pairs, fold
/// constants; a residual all-ones constant folds back into a leading NOT.
fn xor_chain_normalize(e: &SymExpr) -> Option<SymExpr> {
    let width = e.width();
    if !matches!(e.node(), ExprNode::Binop { op: BinOp::Xor, .. }) {
        return None;
    }
    fn flatten_xor(e: &SymExpr, konst: &mut u64, terms: &mut Vec<SymExpr>, width: Width) {
        match e.node() {
            ExprNode::Binop {
                op: BinOp::Xor,
                lhs,
                rhs,
                ..
            } => {
                flatten_xor(lhs, konst, terms, width);
                flatten_xor(rhs, konst, terms, width);
            }
            ExprNode::Unop {
                op: UnOp::Not, arg, ..
            } => {
                *konst ^= width.mask();
                flatten_xor(arg, konst, terms, width);
            }
            ExprNode::Const { value, .. } => *konst ^= value,
            _ => terms.push(e.clone()),
        }
    }
    let mut konst = 0u64;
    let mut terms = Vec::new();
    flatten_xor(e, &mut konst, &mut terms, width);

    // cancel pairs (multiset mod 2)
    let mut kept: Vec<SymExpr> = Vec::new();
    for t in terms {
        match kept.iter().position(|k| *k == t) {
            Some(i) => {
                kept.remove(i);
            }
            None => kept.push(t),
        }
    }
    kept.sort_by_cached_key(canonical_key);

    let wrap_not = konst == width.mask() && !kept.is_empty();
    if wrap_not {
        konst = 0;
    }
    let mut acc: Option<SymExpr> = None;
    for t in kept {
        acc = Some(match acc {
            None => t,
            Some(a) => SymExpr::binop(BinOp::Xor, a, t),
        });
    }
    let mut result = match acc {
        None => SymExpr::constant(konst, width),
        Some(a) if konst == 0 => a,
        Some(a) => SymExpr::binop(BinOp::Xor, a, SymExpr::constant(konst, width)),
    };
    if wrap_not {
        result = SymExpr::unop(UnOp::Not, result);
    }
    if result == *e {
        None
    } else {
        Some(result)
    }
}
