//! Symbolic bitvector expression trees.
//!
//! Expressions are immutable and cheaply cloneable (`Arc` internally).
//! Structural equality is deep; canonical ordering and rendering live in
//! [`crate::text`], the rewrite engine in [`crate::simplify`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Bit width of a value. ARM32 lifts never produce 64-bit widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
            Width::W64 => 64,
        }
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::W64 => u64::MAX,
            w => (1u64 << w.bits()) - 1,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Width> {
        match bits {
            8 => Some(Width::W8),
            16 => Some(Width::W16),
            32 => Some(Width::W32),
            64 => Some(Width::W64),
            _ => None,
        }
    }

    /// Sign-extend `value` (valid at `self`) to a full 64-bit two's-complement value.
    pub fn sext(self, value: u64) -> u64 {
        let bits = self.bits();
        if bits == 64 {
            return value;
        }
        let sign = 1u64 << (bits - 1);
        if value & sign != 0 {
            value | !self.mask()
        } else {
            value & self.mask()
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Binary operator kinds. `Shr` is logical, `Sar` arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Sar,
}

impl BinOp {
    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

/// One node of a symbolic expression tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExprNode {
    /// Seed for the n-th function parameter.
    Var {
        index: u32,
        width: Width,
    },
    /// Seed for the entry value of a non-parameter register.
    Reg {
        name: String,
        width: Width,
    },
    Const {
        value: u64,
        width: Width,
    },
    /// Value loaded from a memory cell identified by its symbolic address.
    Mem {
        addr: SymExpr,
        width: Width,
    },
    /// Value produced by an unanalyzed callee. `reg: None` is the return
    /// register itself; `Some(name)` is a caller-saved register havocked at
    /// the same site. `ordinal` is the index of the call site within the
    /// function, in address order.
    Ret {
        callee: String,
        reg: Option<String>,
        ordinal: u32,
        width: Width,
    },
    Binop {
        op: BinOp,
        lhs: SymExpr,
        rhs: SymExpr,
        width: Width,
    },
    Unop {
        op: UnOp,
        arg: SymExpr,
        width: Width,
    },
    /// Zero- or sign-extension of `arg` to a wider `width`.
    Ext {
        arg: SymExpr,
        width: Width,
        signed: bool,
    },
    /// Truncation of `arg` to a narrower `width`.
    Trunc {
        arg: SymExpr,
        width: Width,
    },
    /// Marker around a value that changes across loop iterations.
    Iter {
        body: SymExpr,
    },
}

/// An immutable symbolic expression. Clones share the underlying tree.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymExpr(Arc<ExprNode>);

impl fmt::Debug for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::text::canonical_text(self))
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::text::canonical_text(self))
    }
}

impl SymExpr {
    pub fn node(&self) -> &ExprNode {
        &self.0
    }

    pub fn var(index: u32, width: Width) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Var { index, width }))
    }

    pub fn reg(name: impl Into<String>, width: Width) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Reg {
            name: name.into(),
            width,
        }))
    }

    /// Constant, masked to `width` on construction.
    pub fn constant(value: u64, width: Width) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Const {
            value: value & width.mask(),
            width,
        }))
    }

    pub fn mem(addr: SymExpr, width: Width) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Mem { addr, width }))
    }

    pub fn ret(callee: impl Into<String>, ordinal: u32, width: Width) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Ret {
            callee: callee.into(),
            reg: None,
            ordinal,
            width,
        }))
    }

    pub fn ret_reg(
        callee: impl Into<String>,
        reg: impl Into<String>,
        ordinal: u32,
        width: Width,
    ) -> SymExpr {
        SymExpr(Arc::new(ExprNode::Ret {
            callee: callee.into(),
            reg: Some(reg.into()),
            ordinal,
            width,
        }))
    }

    /// Binary operation. For non-shift operators both operands must share a
    /// width; shifts take their width from the left operand.
    pub fn binop(op: BinOp, lhs: SymExpr, rhs: SymExpr) -> SymExpr {
        let width = lhs.width();
        debug_assert!(
            matches!(op, BinOp::Shl | BinOp::Shr | BinOp::Sar) || rhs.width() == width,
            "operand width mismatch: {op:?} {} vs {}",
            lhs.width(),
            rhs.width()
        );
        SymExpr(Arc::new(ExprNode::Binop {
            op,
            lhs,
            rhs,
            width,
        }))
    }

    pub fn unop(op: UnOp, arg: SymExpr) -> SymExpr {
        let width = arg.width();
        SymExpr(Arc::new(ExprNode::Unop { op, arg, width }))
    }

    pub fn ext(arg: SymExpr, width: Width, signed: bool) -> SymExpr {
        debug_assert!(width.bits() > arg.width().bits());
        SymExpr(Arc::new(ExprNode::Ext { arg, width, signed }))
    }

    pub fn trunc(arg: SymExpr, width: Width) -> SymExpr {
        debug_assert!(width.bits() < arg.width().bits());
        SymExpr(Arc::new(ExprNode::Trunc { arg, width }))
    }

    /// ITER marker; collapses on construction so `iter(iter(x))` never exists.
    pub fn iter(body: SymExpr) -> SymExpr {
        if matches!(body.node(), ExprNode::Iter { .. }) {
            return body;
        }
        SymExpr(Arc::new(ExprNode::Iter { body }))
    }

    pub fn width(&self) -> Width {
        match self.node() {
            ExprNode::Var { width, .. }
            | ExprNode::Reg { width, .. }
            | ExprNode::Const { width, .. }
            | ExprNode::Mem { width, .. }
            | ExprNode::Ret { width, .. }
            | ExprNode::Binop { width, .. }
            | ExprNode::Unop { width, .. }
            | ExprNode::Ext { width, .. }
            | ExprNode::Trunc { width, .. } => *width,
            ExprNode::Iter { body } => body.width(),
        }
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.node() {
            ExprNode::Const { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_const(&self, value: u64) -> bool {
        self.as_const() == Some(value & self.width().mask())
    }

    /// Number of nodes in the tree; used by rewrite budgeting and tests.
    pub fn size(&self) -> usize {
        match self.node() {
            ExprNode::Var { .. }
            | ExprNode::Reg { .. }
            | ExprNode::Const { .. }
            | ExprNode::Ret { .. } => 1,
            ExprNode::Mem { addr, .. } => 1 + addr.size(),
            ExprNode::Binop { lhs, rhs, .. } => 1 + lhs.size() + rhs.size(),
            ExprNode::Unop { arg, .. }
            | ExprNode::Ext { arg, .. }
            | ExprNode::Trunc { arg, .. } => 1 + arg.size(),
            ExprNode::Iter { body } => 1 + body.size(),
        }
    }

    /// True if an `Iter` node appears anywhere in the tree.
    pub fn contains_iter(&self) -> bool {
        match self.node() {
            ExprNode::Iter { .. } => true,
            ExprNode::Var { .. }
            | ExprNode::Reg { .. }
            | ExprNode::Const { .. }
            | ExprNode::Ret { .. } => false,
            ExprNode::Mem { addr, .. } => addr.contains_iter(),
            ExprNode::Binop { lhs, rhs, .. } => lhs.contains_iter() || rhs.contains_iter(),
            ExprNode::Unop { arg, .. }
            | ExprNode::Ext { arg, .. }
            | ExprNode::Trunc { arg, .. } => arg.contains_iter(),
        }
    }
}

/// Evaluation error: a leaf with no binding.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("unbound leaf `{leaf}`")]
pub struct UnboundLeaf {
    pub leaf: String,
}

/// Concrete valuation for the leaves of an expression.
///
/// `Mem` leaves are looked up by the canonical text of the whole leaf; when
/// absent, `default_mem` (if set) derives the cell's contents from the
/// concrete address value, byte per byte, which keeps overlapping
/// uninitialized reads consistent with a byte-addressed interpreter.
#[derive(Default)]
pub struct Bindings {
    pub vars: BTreeMap<u32, u64>,
    pub regs: BTreeMap<String, u64>,
    /// Keyed by (callee, havoc register tag, call ordinal).
    pub rets: BTreeMap<(String, Option<String>, u32), u64>,
    pub mem: BTreeMap<String, u64>,
    pub default_mem: Option<Box<dyn Fn(u64) -> u8>>,
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    pub fn with_default_mem(mut self, f: impl Fn(u64) -> u8 + 'static) -> Bindings {
        self.default_mem = Some(Box::new(f));
        self
    }

    fn mem_value(&self, leaf_text: &str, addr: u64, width: Width) -> Result<u64, UnboundLeaf> {
        if let Some(v) = self.mem.get(leaf_text) {
            return Ok(*v & width.mask());
        }
        if let Some(f) = &self.default_mem {
            let mut v = 0u64;
            for i in 0..(width.bits() / 8) as u64 {
                v |= (f(addr.wrapping_add(i)) as u64) << (8 * i);
            }
            return Ok(v);
        }
        Err(UnboundLeaf {
            leaf: leaf_text.to_string(),
        })
    }
}

/// Modular bitvector evaluation at the declared widths.
///
/// Every node evaluates to its value zero-extended to `u64`. Shift counts are
/// taken modulo the left operand's width. `Iter(x)` evaluates as `x`.
pub fn eval_concrete(expr: &SymExpr, bindings: &Bindings) -> Result<u64, UnboundLeaf> {
    let width = expr.width();
    let mask = width.mask();
    let v = match expr.node() {
        ExprNode::Var { index, .. } => *bindings.vars.get(index).ok_or_else(|| UnboundLeaf {
            leaf: format!("var{index}"),
        })?,
        ExprNode::Reg { name, .. } => *bindings.regs.get(name).ok_or_else(|| UnboundLeaf {
            leaf: format!("reg({name})"),
        })?,
        ExprNode::Const { value, .. } => *value,
        ExprNode::Mem { addr, .. } => {
            let addr_v = eval_concrete(addr, bindings)?;
            let text = crate::text::canonical_text(expr);
            bindings.mem_value(&text, addr_v, width)?
        }
        ExprNode::Ret {
            callee,
            reg,
            ordinal,
            ..
        } => *bindings
            .rets
            .get(&(callee.clone(), reg.clone(), *ordinal))
            .ok_or_else(|| UnboundLeaf {
                leaf: crate::text::canonical_text(expr),
            })?,
        ExprNode::Binop { op, lhs, rhs, .. } => {
            let a = eval_concrete(lhs, bindings)?;
            let b = eval_concrete(rhs, bindings)?;
            apply_binop(*op, a, b, width)
        }
        ExprNode::Unop { op, arg, .. } => {
            let a = eval_concrete(arg, bindings)?;
            match op {
                UnOp::Not => !a,
                UnOp::Neg => a.wrapping_neg(),
            }
        }
        ExprNode::Ext { arg, signed, .. } => {
            let a = eval_concrete(arg, bindings)?;
            if *signed {
                arg.width().sext(a)
            } else {
                a
            }
        }
        ExprNode::Trunc { arg, .. } => eval_concrete(arg, bindings)?,
        ExprNode::Iter { body } => eval_concrete(body, bindings)?,
    };
    Ok(v & mask)
}

/// Shared binop semantics for symbolic evaluation and concrete interpretation.
pub fn apply_binop(op: BinOp, a: u64, b: u64, width: Width) -> u64 {
    let mask = width.mask();
    let out = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a << (b as u32 % width.bits()),
        BinOp::Shr => (a & mask) >> (b as u32 % width.bits()),
        BinOp::Sar => {
            let shift = b as u32 % width.bits();
            ((width.sext(a) as i64) >> shift) as u64
        }
    };
    out & mask
}
