//! keysim: cross-architecture binary function similarity.
//!
//! The pipeline lifts disassembled x86-64 and ARM32 functions (ingested from
//! a textual CFG bundle) into a common micro-IR, symbolically executes them
//! along randomly sampled paths, extracts the key instructions (calls,
//! comparisons, returns, memory writes) with their accumulated symbolic
//! values into a key-instruction graph, and scores function pairs by fuzzy
//! graph matching over canonical expression texts.

pub mod arch;
pub mod bench;
pub mod compare;
pub mod diag;
pub mod expr;
pub mod ingest;
pub mod keyir;
pub mod lift;
pub mod operand;
pub mod report;
pub mod simplify;
pub mod symexec;
pub mod text;

pub use expr::{Bindings, SymExpr, Width};
pub use ingest::{parse_bundle, validate_cfg, Program};
pub use simplify::simplify;
pub use text::{canonical_text, parse_expr, TokenString};
