//! JSON artifact documents. Every document carries a `schema_version` field
//! and serializes deterministically (ordered maps, fixed field order).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compare::{CompareParams, MatchReport};
use crate::diag::Diagnostic;
use crate::keyir::KeyGraph;
use crate::symexec::ValueSets;

pub const SCHEMA_VERSION: u32 = 1;

fn hex(addr: u64) -> String {
    format!("{addr:#x}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ValuesDoc {
    pub schema_version: u32,
    pub bundle: String,
    pub function: String,
    pub runs: u32,
    pub seed: u64,
    pub values: BTreeMap<String, Vec<String>>,
    pub diagnostics: Vec<String>,
}

impl ValuesDoc {
    pub fn new(
        bundle: &str,
        function: &str,
        runs: u32,
        seed: u64,
        vs: &ValueSets,
        diagnostics: &[Diagnostic],
    ) -> ValuesDoc {
        ValuesDoc {
            schema_version: SCHEMA_VERSION,
            bundle: bundle.to_string(),
            function: function.to_string(),
            runs,
            seed,
            values: vs
                .values
                .keys()
                .map(|&addr| (hex(addr), vs.texts_at(addr)))
                .collect(),
            diagnostics: diagnostics.iter().map(|d| d.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphNodeDoc {
    pub id: usize,
    pub address: String,
    pub kind: String,
    pub payloads: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphDoc {
    pub schema_version: u32,
    pub bundle: String,
    pub function: String,
    pub nodes: Vec<GraphNodeDoc>,
    pub edges: Vec<[usize; 2]>,
    pub diagnostics: Vec<String>,
}

impl GraphDoc {
    pub fn new(bundle: &str, graph: &KeyGraph, diagnostics: &[Diagnostic]) -> GraphDoc {
        GraphDoc {
            schema_version: SCHEMA_VERSION,
            bundle: bundle.to_string(),
            function: graph.function.clone(),
            nodes: graph
                .nodes
                .iter()
                .map(|n| GraphNodeDoc {
                    id: n.id,
                    address: hex(n.address),
                    kind: n.kind.tag().to_string(),
                    payloads: n
                        .payloads
                        .iter()
                        .map(|p| p.token_string().to_string())
                        .collect(),
                })
                .collect(),
            edges: graph.edges.iter().map(|&(a, b)| [a, b]).collect(),
            diagnostics: diagnostics.iter().map(|d| d.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SideDoc {
    pub bundle: String,
    pub function: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnchorDoc {
    pub left_address: String,
    pub right_address: String,
    pub node_score: f64,
    pub context_score: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub left: SideDoc,
    pub right: SideDoc,
    pub params: CompareParams,
    pub runs: u32,
    pub seed: u64,
    pub anchors: Vec<AnchorDoc>,
    pub aggregate: f64,
    pub verdict: crate::compare::Verdict,
    pub diagnostics: Vec<String>,
}

impl ReportDoc {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        left: SideDoc,
        right: SideDoc,
        report: &MatchReport,
        runs: u32,
        seed: u64,
        diagnostics: &[Diagnostic],
    ) -> ReportDoc {
        ReportDoc {
            schema_version: SCHEMA_VERSION,
            left,
            right,
            params: report.params,
            runs,
            seed,
            anchors: report
                .anchors
                .iter()
                .map(|a| AnchorDoc {
                    left_address: hex(a.left_address),
                    right_address: hex(a.right_address),
                    node_score: a.node_score,
                    context_score: a.context_score,
                    combined: a.combined,
                })
                .collect(),
            aggregate: report.aggregate,
            verdict: report.verdict,
            diagnostics: report
                .diagnostics
                .iter()
                .cloned()
                .chain(diagnostics.iter().map(|d| d.to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfusionDoc {
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    pub fn_: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRowDoc {
    pub left_bundle: String,
    pub left_function: String,
    pub right_bundle: String,
    pub right_function: String,
    pub label: u8,
    pub aggregate: f64,
    pub verdict: crate::compare::Verdict,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchDoc {
    pub schema_version: u32,
    pub params: CompareParams,
    pub runs: u32,
    pub seed: u64,
    pub pairs: Vec<BenchRowDoc>,
    pub accuracy: f64,
    pub confusion: ConfusionDoc,
}

/// Stable pretty rendering with a trailing newline.
pub fn to_json_string<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents always serialize");
    s.push('\n');
    s
}
