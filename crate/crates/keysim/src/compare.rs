//! Fuzzy matching of key IR graphs.
//!
//! Two phases per anchor pair: single-node textual similarity over canonical
//! payload tokens, then context similarity over the k-hop neighborhoods
//! (relations between neighbors are deliberately ignored; compilation
//! options mutate them too freely). Anchors are selected greedily by node
//! score with deterministic tie-breaking; the orientation of the two graphs
//! is canonicalized first so the aggregate is symmetric by construction.

use serde::{Deserialize, Serialize};

use crate::keyir::{KeyGraph, KeyNode};
use crate::text::TokenString;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    /// Minimum node similarity for a pair to anchor (θ).
    pub node_threshold: f64,
    /// Neighborhood hop radius for context similarity (k).
    pub context_boundary: u32,
    /// Aggregate at or above this classifies the pair similar (τ).
    pub pair_threshold: f64,
    /// Weight of context vs node score in the combined score (w).
    pub context_weight: f64,
}

impl Default for CompareParams {
    fn default() -> CompareParams {
        CompareParams {
            node_threshold: 0.8,
            context_boundary: 1,
            pair_threshold: 0.5,
            context_weight: 0.5,
        }
    }
}

impl CompareParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("node-threshold", self.node_threshold),
            ("pair-threshold", self.pair_threshold),
            ("context-weight", self.context_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be within [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPair {
    pub left_id: usize,
    pub right_id: usize,
    pub left_address: u64,
    pub right_address: u64,
    pub node_score: f64,
    pub context_score: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub anchors: Vec<AnchorPair>,
    pub aggregate: f64,
    pub verdict: Verdict,
    pub params: CompareParams,
    pub diagnostics: Vec<String>,
}

/// Token-level normalized edit-distance similarity: 1 − d / max(|a|, |b|).
pub fn token_similarity(a: &TokenString, b: &TokenString) -> f64 {
    let (a, b) = (a.tokens(), b.tokens());
    let max = a.len().max(b.len());
    if max == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / max as f64
}

fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Single-node similarity: zero across kinds; otherwise the best payload
/// pairing. Call payloads average exact callee-name match with
/// argument-list text similarity.
pub fn node_similarity(a: &KeyNode, b: &KeyNode) -> f64 {
    use crate::keyir::KeyPayload;
    if a.kind != b.kind {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for pa in &a.payloads {
        for pb in &b.payloads {
            let score = match (pa, pb) {
                (
                    KeyPayload::Call {
                        callee: ca,
                        args: aa,
                    },
                    KeyPayload::Call {
                        callee: cb,
                        args: ab,
                    },
                ) => {
                    let name = if ca == cb { 1.0 } else { 0.0 };
                    let args = token_similarity(&args_tokens(aa), &args_tokens(ab));
                    (name + args) / 2.0
                }
                _ => token_similarity(&pa.token_string(), &pb.token_string()),
            };
            best = best.max(score);
        }
    }
    best
}

fn args_tokens(args: &[crate::expr::SymExpr]) -> TokenString {
    let mut tokens = Vec::new();
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            tokens.push(",".to_string());
        }
        tokens.extend(crate::text::tokenize(a).tokens().to_vec());
    }
    TokenString::from_tokens(tokens)
}

/// Context similarity of an anchor pair: greedily pair the k-hop neighbor
/// sets one-to-one at node similarity ≥ θ; the score is the pair count over
/// the larger neighborhood. Two empty contexts are perfectly similar, one
/// empty context is entirely dissimilar.
pub fn context_similarity(
    ga: &KeyGraph,
    a: usize,
    gb: &KeyGraph,
    b: usize,
    k: u32,
    theta: f64,
) -> f64 {
    let na: Vec<usize> = ga.neighborhood(a, k).into_iter().collect();
    let nb: Vec<usize> = gb.neighborhood(b, k).into_iter().collect();
    match (na.is_empty(), nb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut pairs: Vec<(f64, u64, u64, usize, usize)> = Vec::new();
    for &i in &na {
        for &j in &nb {
            let score = node_similarity(&ga.nodes[i], &gb.nodes[j]);
            if score >= theta {
                pairs.push((score, ga.nodes[i].address, gb.nodes[j].address, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut used_a = vec![false; ga.nodes.len()];
    let mut used_b = vec![false; gb.nodes.len()];
    let mut matched = 0usize;
    for (_, _, _, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched += 1;
        }
    }
    matched as f64 / na.len().max(nb.len()) as f64
}

/// Orientation-independent key for graph canonicalization.
fn graph_key(g: &KeyGraph) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for n in &g.nodes {
        let _ = write!(out, "{:x}/{}:", n.address, n.kind.tag());
        for p in &n.payloads {
            let _ = write!(out, "{};", p.token_string());
        }
    }
    for (a, b) in &g.edges {
        let _ = write!(out, "{a}-{b},");
    }
    out
}

/// Greedy anchor matching of two key graphs.
///
/// Repeatedly select the highest-node-similarity unmatched cross pair at or
/// above θ (ties broken toward lower addresses), score its context, combine
/// as `(1−w)·node + w·context`, and remove both nodes. The aggregate is the
/// combined sum over the larger node count; two empty graphs are similar by
/// convention (with a diagnostic), one empty graph is dissimilar.
pub fn match_graphs(ga: &KeyGraph, gb: &KeyGraph, params: &CompareParams) -> MatchReport {
    if graph_key(gb) < graph_key(ga) {
        let mut report = match_graphs_oriented(gb, ga, params);
        for anchor in &mut report.anchors {
            std::mem::swap(&mut anchor.left_id, &mut anchor.right_id);
            std::mem::swap(&mut anchor.left_address, &mut anchor.right_address);
        }
        report
            .anchors
            .sort_by_key(|a| (a.left_address, a.right_address));
        return report;
    }
    match_graphs_oriented(ga, gb, params)
}

fn match_graphs_oriented(ga: &KeyGraph, gb: &KeyGraph, params: &CompareParams) -> MatchReport {
    let mut diagnostics = Vec::new();
    let (n, m) = (ga.nodes.len(), gb.nodes.len());
    if n == 0 && m == 0 {
        diagnostics.push("both key graphs are empty; similar by convention".to_string());
        return MatchReport {
            anchors: Vec::new(),
            aggregate: 1.0,
            verdict: classify_aggregate(1.0, params.pair_threshold),
            params: *params,
            diagnostics,
        };
    }
    if n == 0 || m == 0 {
        diagnostics.push("one key graph is empty".to_string());
        return MatchReport {
            anchors: Vec::new(),
            aggregate: 0.0,
            verdict: classify_aggregate(0.0, params.pair_threshold),
            params: *params,
            diagnostics,
        };
    }

    let mut scores = vec![vec![0.0f64; m]; n];
    for (i, a) in ga.nodes.iter().enumerate() {
        for (j, b) in gb.nodes.iter().enumerate() {
            scores[i][j] = node_similarity(a, b);
        }
    }
    let mut used_a = vec![false; n];
    let mut used_b = vec![false; m];
    let mut anchors = Vec::new();
    loop {
        let mut best: Option<(f64, u64, u64, usize, usize)> = None;
        for i in 0..n {
            if used_a[i] {
                continue;
            }
            for j in 0..m {
                if used_b[j] {
                    continue;
                }
                let s = scores[i][j];
                if s < params.node_threshold {
                    continue;
                }
                let key = (s, ga.nodes[i].address, gb.nodes[j].address, i, j);
                best = match best {
                    None => Some(key),
                    Some(cur) => {
                        let better =
                            key.0 > cur.0 || (key.0 == cur.0 && (key.1, key.2) < (cur.1, cur.2));
                        Some(if better { key } else { cur })
                    }
                };
            }
        }
        let Some((node_score, _, _, i, j)) = best else {
            break;
        };
        used_a[i] = true;
        used_b[j] = true;
        let context_score =
            context_similarity(ga, i, gb, j, params.context_boundary, params.node_threshold);
        let combined =
            (1.0 - params.context_weight) * node_score + params.context_weight * context_score;
        anchors.push(AnchorPair {
            left_id: i,
            right_id: j,
            left_address: ga.nodes[i].address,
            right_address: gb.nodes[j].address,
            node_score,
            context_score,
            combined,
        });
    }
    // an empty f64 sum is -0.0; keep aggregates at plain zero
    let aggregate = if anchors.is_empty() {
        0.0
    } else {
        anchors.iter().map(|a| a.combined).sum::<f64>() / n.max(m) as f64
    };
    MatchReport {
        anchors,
        aggregate,
        verdict: classify_aggregate(aggregate, params.pair_threshold),
        params: *params,
        diagnostics,
    }
}

/// Threshold verdict; aggregates exactly at τ count as similar.
pub fn classify_aggregate(aggregate: f64, pair_threshold: f64) -> Verdict {
    if aggregate >= pair_threshold {
        Verdict::Similar
    } else {
        Verdict::Dissimilar
    }
}
