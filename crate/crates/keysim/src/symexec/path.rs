//! Random path sampling with two-pass loop traversal.
//!
//! A walk starts at a block and repeatedly picks a successor uniformly at
//! random, except where the loop rule constrains the choice: the first pass
//! through a loop takes the back edge when it reaches a latch, the second
//! pass replays the first pass's choices, and afterwards the back edge is
//! barred so the walk exits. Pre-test loops need one extra header visit on
//! the way out; that exit transit is part of the walk but records no
//! observations downstream. Irreducible retreating edges are plain edges
//! with a per-edge traversal cap, and every block has a hard visit cap so
//! walks always terminate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{BlockId, Function};

use super::loops::LoopInfo;

/// Per-block hard visit cap: two passes per loop level, capped at the
/// depth-product of 4.
pub const BLOCK_VISIT_CAP: u32 = 4;
/// Traversal cap for irreducible retreating edges.
pub const IRREDUCIBLE_EDGE_CAP: u32 = 2;

/// One planned execution path plus coverage bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxPath {
    /// Covered block whose stored exit state seeds this path.
    pub fork_after: BlockId,
    /// Walked block sequence, starting at the first uncovered block.
    pub blocks: Vec<BlockId>,
    /// Blocks this path newly covers; only their observations are recorded.
    pub record: BTreeSet<BlockId>,
}

/// The paths of one run: a main path plus auxiliary paths that cover the
/// remaining reachable blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPlan {
    pub main_path: Vec<BlockId>,
    pub aux_paths: Vec<AuxPath>,
    pub seed: u64,
}

impl RunPlan {
    /// All blocks any path of this run touches.
    pub fn touched_blocks(&self) -> BTreeSet<BlockId> {
        let mut out: BTreeSet<BlockId> = self.main_path.iter().copied().collect();
        for aux in &self.aux_paths {
            out.extend(aux.blocks.iter().copied());
        }
        out
    }
}

struct Activation {
    header: BlockId,
    pass: u32,
    /// Blocks traversed after the header during pass 1; replayed in pass 2.
    pass1_path: Vec<BlockId>,
    replay_pos: usize,
}

struct Walker<'a> {
    f: &'a Function,
    loops: &'a LoopInfo,
    visits: BTreeMap<BlockId, u32>,
    edge_visits: BTreeMap<(BlockId, BlockId), u32>,
    stack: Vec<Activation>,
    seq: Vec<BlockId>,
    max_len: usize,
}

impl<'a> Walker<'a> {
    fn new(f: &'a Function, loops: &'a LoopInfo) -> Walker<'a> {
        Walker {
            f,
            loops,
            visits: BTreeMap::new(),
            edge_visits: BTreeMap::new(),
            stack: Vec::new(),
            seq: Vec::new(),
            max_len: 64 + 8 * f.blocks.len(),
        }
    }

    fn body(&self, header: BlockId) -> Option<&BTreeSet<BlockId>> {
        self.loops.header_bodies.get(&header)
    }

    fn arrive(&mut self, block: BlockId) {
        *self.visits.entry(block).or_insert(0) += 1;
        self.seq.push(block);
        while let Some(top) = self.stack.last() {
            if self.body(top.header).is_some_and(|b| b.contains(&block)) {
                break;
            }
            self.stack.pop();
        }
        if self.body(block).is_some() {
            match self.stack.last_mut() {
                Some(top) if top.header == block => {
                    top.pass += 1;
                    if top.pass == 2 {
                        top.replay_pos = 0;
                    }
                }
                _ => self.stack.push(Activation {
                    header: block,
                    pass: 1,
                    pass1_path: Vec::new(),
                    replay_pos: 0,
                }),
            }
        }
        for act in &mut self.stack {
            if act.pass == 1 && act.header != block {
                act.pass1_path.push(block);
            }
        }
    }

    /// Pick the next block, or `None` to end the walk.
    fn choose(&mut self, at: BlockId, rng: &mut ChaCha8Rng) -> Option<BlockId> {
        if self.seq.len() >= self.max_len {
            return None;
        }
        let succs: Vec<BlockId> = self
            .f
            .block(at)?
            .successors
            .iter()
            .map(|(s, _)| *s)
            .collect();
        if succs.is_empty() {
            return None;
        }

        // an activation in pass 2 drives by replay (the outermost one has the
        // complete pass-1 path, inner loops included)
        if let Some(act) = self.stack.iter_mut().find(|a| a.pass == 2) {
            if act.replay_pos < act.pass1_path.len() {
                let next = act.pass1_path[act.replay_pos];
                act.replay_pos += 1;
                if succs.contains(&next) {
                    return Some(next);
                }
                // replay diverged: fall through to the random walk
            } else {
                // replay exhausted: we are back at the latch and the second
                // pass is complete, so leave the body; continuing into
                // another in-body arm would start a third partial pass
                let header = act.header;
                let body = self.body(header).cloned().unwrap_or_default();
                let outside: Vec<BlockId> = succs
                    .iter()
                    .copied()
                    .filter(|s| !body.contains(s))
                    .collect();
                if !outside.is_empty() {
                    return Some(outside[rng.gen_range(0..outside.len())]);
                }
                if succs.contains(&header) {
                    // pre-test loop: one more header visit on the way out
                    return Some(header);
                }
                // replay diverged: fall through to the capped random walk
            }
        }

        if let Some(act) = self.stack.last() {
            if act.pass >= 3 {
                // exit transit: leave the body as soon as possible
                let body = self.body(act.header).cloned().unwrap_or_default();
                let outside: Vec<BlockId> = succs
                    .iter()
                    .copied()
                    .filter(|s| !body.contains(s))
                    .collect();
                if !outside.is_empty() {
                    return Some(outside[rng.gen_range(0..outside.len())]);
                }
                // no way out here; fall through to the capped random walk
            }
        }

        // pass 1 (or no activation): back edges to an active pass-1 header
        // are forced, back edges to a finished header are barred
        let mut forced: Vec<BlockId> = Vec::new();
        let mut candidates: Vec<BlockId> = Vec::new();
        for &s in &succs {
            if self.loops.is_back_edge(at, s) {
                match self.stack.iter().rev().find(|a| a.header == s) {
                    Some(act) if act.pass == 1 => forced.push(s),
                    Some(_) => {} // completed its two passes: barred
                    None => {
                        // fork landed mid-body: plain capped edge
                        if self.under_caps(at, s) {
                            candidates.push(s);
                        }
                    }
                }
            } else if self.under_caps(at, s) {
                candidates.push(s);
            }
        }
        if !forced.is_empty() {
            // innermost loop first when latches coincide
            let deepest = forced
                .iter()
                .copied()
                .max_by_key(|h| self.loops.depth.get(h).copied().unwrap_or(0))?;
            return Some(deepest);
        }
        if candidates.is_empty() {
            return None;
        }
        let next = candidates[rng.gen_range(0..candidates.len())];
        Some(next)
    }

    fn under_caps(&self, from: BlockId, to: BlockId) -> bool {
        if self.visits.get(&to).copied().unwrap_or(0) >= BLOCK_VISIT_CAP {
            return false;
        }
        if self.loops.is_irreducible_edge(from, to)
            && self.edge_visits.get(&(from, to)).copied().unwrap_or(0) >= IRREDUCIBLE_EDGE_CAP
        {
            return false;
        }
        true
    }

    fn walk(
        mut self,
        start: BlockId,
        rng: &mut ChaCha8Rng,
        mut stop: impl FnMut(BlockId, &[BlockId], bool) -> bool,
    ) -> Vec<BlockId> {
        let mut at = start;
        self.arrive(at);
        loop {
            if stop(at, &self.seq, self.stack.is_empty()) {
                return self.seq;
            }
            let Some(next) = self.choose(at, rng) else {
                return self.seq;
            };
            *self.edge_visits.entry((at, next)).or_insert(0) += 1;
            self.arrive(next);
            at = next;
        }
    }
}

/// Sample a main path: start at entry, follow random successors under the
/// loop rule, end at a block with no successors or when caps bar every
/// successor.
pub fn sample_main_path(f: &Function, loops: &LoopInfo, rng: &mut ChaCha8Rng) -> Vec<BlockId> {
    Walker::new(f, loops).walk(f.entry, rng, |_, _, _| false)
}

/// Shortest path from `from` to `to` following successor edges, by BFS with
/// deterministic expansion order.
fn bfs_path(f: &Function, from: BlockId, to: BlockId) -> Option<Vec<BlockId>> {
    let mut parent: BTreeMap<BlockId, BlockId> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = BTreeSet::from([from]);
    while let Some(b) = queue.pop_front() {
        if b == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = parent[&cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        if let Some(block) = f.block(b) {
            for (succ, _) in &block.successors {
                if seen.insert(*succ) {
                    parent.insert(*succ, b);
                    queue.push_back(*succ);
                }
            }
        }
    }
    None
}

/// Plan auxiliary paths until every reachable block is covered.
///
/// Each path forks from the stored exit state of a covered block, starts at
/// the first uncovered block on a shortest path there, and walks under the
/// usual rules until it enters a block (outside any open loop activation)
/// whose successors are all covered.
pub fn cover_residual(
    f: &Function,
    loops: &LoopInfo,
    covered: &mut BTreeSet<BlockId>,
    rng: &mut ChaCha8Rng,
) -> Vec<AuxPath> {
    let reachable = f.reachable_blocks();
    let mut aux_paths = Vec::new();
    while let Some(&target) = reachable.difference(covered).next() {
        let Some(path) = bfs_path(f, f.entry, target) else {
            break; // not actually reachable; nothing more to cover
        };
        let first_new = path
            .iter()
            .position(|b| !covered.contains(b))
            .expect("target is uncovered");
        debug_assert!(first_new > 0, "entry is always covered by the main path");
        let fork_after = path[first_new - 1];
        let start = path[first_new];

        let walked = Walker::new(f, loops).walk(start, rng, |block, _, stack_empty| {
            stack_empty
                && f.block(block)
                    .map(|b| b.successors.iter().all(|(s, _)| covered.contains(s)))
                    .unwrap_or(true)
        });
        let mut record = BTreeSet::new();
        for &b in &walked {
            if covered.insert(b) {
                record.insert(b);
            }
        }
        aux_paths.push(AuxPath {
            fork_after,
            blocks: walked,
            record,
        });
    }
    aux_paths
}

/// Plan one run: a main path plus residual coverage.
pub fn plan_run(f: &Function, loops: &LoopInfo, seed: u64, rng: &mut ChaCha8Rng) -> RunPlan {
    let main_path = sample_main_path(f, loops, rng);
    let mut covered: BTreeSet<BlockId> = main_path.iter().copied().collect();
    let aux_paths = cover_residual(f, loops, &mut covered, rng);
    RunPlan {
        main_path,
        aux_paths,
        seed,
    }
}
