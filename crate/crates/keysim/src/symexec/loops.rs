//! Dominator analysis and natural-loop detection.

use std::collections::{BTreeMap, BTreeSet};

use crate::diag::Diagnostic;
use crate::ingest::{BlockId, Function};

#[derive(Debug, Clone, Default)]
pub struct LoopInfo {
    /// (latch, header) pairs where the header dominates the latch.
    pub back_edges: Vec<(BlockId, BlockId)>,
    /// Natural loop body per back edge (header included).
    pub bodies: BTreeMap<(BlockId, BlockId), BTreeSet<BlockId>>,
    /// Union of the bodies of all back edges sharing a header.
    pub header_bodies: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Retreating edges whose target does not dominate the source; treated
    /// as plain edges with a traversal cap.
    pub irreducible_edges: Vec<(BlockId, BlockId)>,
    /// Loop nesting depth per block (0 outside any loop).
    pub depth: BTreeMap<BlockId, u32>,
}

impl LoopInfo {
    pub fn is_back_edge(&self, from: BlockId, to: BlockId) -> bool {
        self.back_edges.contains(&(from, to))
    }

    pub fn is_irreducible_edge(&self, from: BlockId, to: BlockId) -> bool {
        self.irreducible_edges.contains(&(from, to))
    }
}

/// Dominator sets over the reachable subgraph, by iteration to fixpoint.
pub fn dominators(f: &Function) -> BTreeMap<BlockId, BTreeSet<BlockId>> {
    let reachable = f.reachable_blocks();
    let mut preds: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for &b in &reachable {
        preds.entry(b).or_default();
    }
    for &b in &reachable {
        if let Some(block) = f.block(b) {
            for (succ, _) in &block.successors {
                if reachable.contains(succ) {
                    preds.entry(*succ).or_default().push(b);
                }
            }
        }
    }
    let mut dom: BTreeMap<BlockId, BTreeSet<BlockId>> = BTreeMap::new();
    for &b in &reachable {
        if b == f.entry {
            dom.insert(b, BTreeSet::from([b]));
        } else {
            dom.insert(b, reachable.clone());
        }
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &reachable {
            if b == f.entry {
                continue;
            }
            let mut new: Option<BTreeSet<BlockId>> = None;
            for p in &preds[&b] {
                let pd = &dom[p];
                new = Some(match new {
                    None => pd.clone(),
                    Some(acc) => acc.intersection(pd).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(b);
            if new != dom[&b] {
                dom.insert(b, new);
                changed = true;
            }
        }
    }
    dom
}

/// Identify back edges and their natural loop bodies; retreating edges that
/// are not dominator back edges are reported as irreducible.
pub fn detect_loops(f: &Function) -> (LoopInfo, Vec<Diagnostic>) {
    let mut info = LoopInfo::default();
    let mut diagnostics = Vec::new();
    let reachable = f.reachable_blocks();
    if reachable.is_empty() {
        return (info, diagnostics);
    }
    let dom = dominators(f);

    // retreating edges via DFS stack membership
    let mut retreating: Vec<(BlockId, BlockId)> = Vec::new();
    {
        let mut visited = BTreeSet::new();
        let mut on_stack = BTreeSet::new();
        // iterative DFS with explicit enter/leave events
        let mut stack = vec![(f.entry, false)];
        while let Some((b, leaving)) = stack.pop() {
            if leaving {
                on_stack.remove(&b);
                continue;
            }
            if !visited.insert(b) {
                continue;
            }
            on_stack.insert(b);
            stack.push((b, true));
            if let Some(block) = f.block(b) {
                for (succ, _) in block.successors.iter().rev() {
                    if on_stack.contains(succ) {
                        retreating.push((b, *succ));
                    } else if !visited.contains(succ) {
                        stack.push((*succ, false));
                    }
                }
            }
        }
    }

    for &(latch, header) in &retreating {
        if dom[&latch].contains(&header) {
            info.back_edges.push((latch, header));
            // body: header plus everything reaching the latch without
            // passing through the header
            let mut body = BTreeSet::from([header, latch]);
            let mut work = vec![latch];
            while let Some(b) = work.pop() {
                if b == header {
                    continue;
                }
                for &p in reachable.iter() {
                    if let Some(pb) = f.block(p) {
                        if pb.successors.iter().any(|(s, _)| *s == b) && body.insert(p) {
                            work.push(p);
                        }
                    }
                }
            }
            info.bodies.insert((latch, header), body);
        } else {
            info.irreducible_edges.push((latch, header));
            diagnostics.push(Diagnostic::warning(format!(
                "irreducible edge {latch} -> {header}: treating as a plain edge with a visit cap"
            )));
        }
    }
    info.back_edges.sort_unstable();
    info.irreducible_edges.sort_unstable();

    for ((_, header), body) in &info.bodies {
        info.header_bodies
            .entry(*header)
            .or_default()
            .extend(body.iter().copied());
    }
    for &b in &reachable {
        let d = info
            .header_bodies
            .values()
            .filter(|body| body.contains(&b))
            .count() as u32;
        info.depth.insert(b, d);
    }
    (info, diagnostics)
}
