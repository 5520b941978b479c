//! Whole-run execution: main path, residual coverage, two-pass loop
//! reconciliation, and the accumulation of value sets over multiple runs.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diag::Diagnostic;
use crate::expr::SymExpr;
use crate::ingest::BlockId;
use crate::lift::LiftedFunction;

use super::loops::{detect_loops, LoopInfo};
use super::path::{plan_run, RunPlan};
use super::{step, Observation, SymState};

/// Fixed default seed: randomized sampling, reproducible by default.
pub const DEFAULT_SEED: u64 = 0x6b65_7973_696d_0001;

/// Default per-run micro-op budget.
pub const DEFAULT_STEP_BUDGET: u64 = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub runs: u32,
    pub seed: u64,
    pub step_budget: u64,
}

impl Default for ExecConfig {
    fn default() -> ExecConfig {
        ExecConfig {
            runs: 8,
            seed: DEFAULT_SEED,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

/// Accumulated observations: every reachable instruction address maps to the
/// set of canonical observations seen across runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValueSets {
    pub values: BTreeMap<u64, BTreeSet<Observation>>,
    pub run_count: u32,
}

impl ValueSets {
    /// Distinct expression texts observed at an address (the flat view).
    pub fn texts_at(&self, address: u64) -> Vec<String> {
        let mut out: BTreeSet<String> = BTreeSet::new();
        if let Some(set) = self.values.get(&address) {
            for obs in set {
                for e in obs.exprs() {
                    out.insert(crate::text::canonical_text(e));
                }
            }
        }
        out.into_iter().collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub observations: BTreeMap<u64, Vec<Observation>>,
    pub plan: RunPlan,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    pub value_sets: ValueSets,
    pub plans: Vec<RunPlan>,
    pub diagnostics: Vec<Diagnostic>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-run RNG seed derivation.
pub fn run_seed(seed: u64, run_index: u32) -> u64 {
    splitmix64(seed ^ splitmix64(run_index as u64 + 1))
}

/// A loop activation's observation buffers during execution.
struct Frame {
    header: BlockId,
    pass: u32,
    pass1: Vec<(u64, Observation)>,
    pass2: Vec<(u64, Observation)>,
}

/// Routes observations through the activation stack so loop bodies can be
/// reconciled pass against pass before anything reaches the run's log.
struct ObsRouter<'a> {
    loops: &'a LoopInfo,
    frames: Vec<Frame>,
    root: Vec<(u64, Observation)>,
}

impl<'a> ObsRouter<'a> {
    fn new(loops: &'a LoopInfo) -> ObsRouter<'a> {
        ObsRouter {
            loops,
            frames: Vec::new(),
            root: Vec::new(),
        }
    }

    fn enter_block(&mut self, block: BlockId) {
        loop {
            match self.frames.last() {
                Some(f)
                    if !self
                        .loops
                        .header_bodies
                        .get(&f.header)
                        .is_some_and(|b| b.contains(&block)) =>
                {
                    let frame = self.frames.pop().expect("just peeked");
                    self.close_frame(frame);
                }
                _ => break,
            }
        }
        if self.loops.header_bodies.contains_key(&block) {
            match self.frames.last_mut() {
                Some(top) if top.header == block => top.pass += 1,
                _ => self.frames.push(Frame {
                    header: block,
                    pass: 1,
                    pass1: Vec::new(),
                    pass2: Vec::new(),
                }),
            }
        }
    }

    fn push(&mut self, site: u64, obs: Observation) {
        match self.frames.last_mut() {
            None => self.root.push((site, obs)),
            Some(f) => match f.pass {
                1 => f.pass1.push((site, obs)),
                2 => f.pass2.push((site, obs)),
                _ => {} // exit transit: state only, no observations
            },
        }
    }

    fn close_frame(&mut self, frame: Frame) {
        for entry in reconcile(frame.pass1, frame.pass2) {
            match self.frames.last_mut() {
                None => self.root.push(entry),
                Some(parent) => match parent.pass {
                    1 => parent.pass1.push(entry),
                    2 => parent.pass2.push(entry),
                    _ => {}
                },
            }
        }
    }

    fn finish(mut self) -> Vec<(u64, Observation)> {
        while let Some(frame) = self.frames.pop() {
            self.close_frame(frame);
        }
        self.root
    }
}

/// Merge the two passes of a loop activation: operands whose canonical value
/// changed between passes get wrapped in `iter(...)` (around the pass-1
/// value); invariant operands keep their pass-1 value. A body that never
/// reached its second pass is emitted as observed.
fn reconcile(
    pass1: Vec<(u64, Observation)>,
    pass2: Vec<(u64, Observation)>,
) -> Vec<(u64, Observation)> {
    if pass2.is_empty() {
        return pass1;
    }
    let aligned = pass1.len() == pass2.len()
        && pass1
            .iter()
            .zip(&pass2)
            .all(|((s1, o1), (s2, o2))| s1 == s2 && o1.same_shape(o2));
    if !aligned {
        // replay diverged (capped or irregular control flow): be conservative
        return pass1
            .into_iter()
            .map(|(s, o)| (s, o.map_exprs(|e| SymExpr::iter(e.clone()))))
            .collect();
    }
    pass1
        .into_iter()
        .zip(pass2)
        .map(|((site, o1), (_, o2))| {
            let e2 = o2.exprs();
            let mut i = 0;
            let merged = o1.map_exprs(|e1| {
                let out = if *e1 == *e2[i] {
                    e1.clone()
                } else {
                    SymExpr::iter(e1.clone())
                };
                i += 1;
                out
            });
            (site, merged)
        })
        .collect()
}

struct Executor<'a> {
    lf: &'a LiftedFunction,
    loops: &'a LoopInfo,
    exit_states: BTreeMap<BlockId, SymState>,
    budget: u64,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Executor<'a> {
    /// Execute a planned block sequence from `state`, returning the routed
    /// observations. `record` filters which blocks' observations are kept.
    fn execute_path(
        &mut self,
        mut state: SymState,
        blocks: &[BlockId],
        record: Option<&BTreeSet<BlockId>>,
    ) -> Vec<(u64, Observation)> {
        let mut router = ObsRouter::new(self.loops);
        'path: for &block_id in blocks {
            router.enter_block(block_id);
            let Some(block) = self.lf.function.block(block_id) else {
                break;
            };
            let keep = record.is_none_or(|r| r.contains(&block_id));
            for instr in &block.instructions {
                for op in self.lf.micro_at(instr.address).to_vec() {
                    if self.budget == 0 {
                        self.diagnostics.push(
                            Diagnostic::warning("step budget exceeded; partial run")
                                .at(instr.address),
                        );
                        self.exit_states.insert(block_id, state.clone());
                        break 'path;
                    }
                    self.budget -= 1;
                    let result = step(&mut state, &op, instr.address, self.lf);
                    if keep {
                        router.push(instr.address, result.observation);
                    }
                    if result.ends_path {
                        self.exit_states.insert(block_id, state.clone());
                        break 'path;
                    }
                }
            }
            self.exit_states.insert(block_id, state.clone());
        }
        router.finish()
    }
}

/// One run: sample paths, execute them, reconcile loop passes, and collect
/// per-address observations covering every reachable block.
pub fn run_once(lf: &LiftedFunction, loops: &LoopInfo, seed: u64, step_budget: u64) -> RunOutcome {
    let f = &lf.function;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = plan_run(f, loops, seed, &mut rng);
    let mut executor = Executor {
        lf,
        loops,
        exit_states: BTreeMap::new(),
        budget: step_budget,
        diagnostics: Vec::new(),
    };

    let mut collected: Vec<(u64, Observation)> = Vec::new();
    let entry_state = SymState::entry(f.arch, f.convention);
    collected.extend(executor.execute_path(entry_state, &plan.main_path, None));

    for aux in &plan.aux_paths {
        let Some(state) = executor.exit_states.get(&aux.fork_after).cloned() else {
            executor.diagnostics.push(Diagnostic::warning(format!(
                "no stored state to fork block {} from",
                aux.fork_after
            )));
            continue;
        };
        let mut forked = state;
        forked.trace.clear();
        collected.extend(executor.execute_path(forked, &aux.blocks, Some(&aux.record)));
    }

    let mut observations: BTreeMap<u64, Vec<Observation>> = BTreeMap::new();
    for (site, obs) in collected {
        observations.entry(site).or_default().push(obs);
    }
    RunOutcome {
        observations,
        plan,
        diagnostics: executor.diagnostics,
    }
}

/// Execute `config.runs` independent runs and union their observations.
/// Deterministic in (lifted function, runs, seed).
pub fn execute(lf: &LiftedFunction, config: &ExecConfig) -> ExecResult {
    let (loops, mut diagnostics) = detect_loops(&lf.function);
    let mut value_sets = ValueSets {
        values: BTreeMap::new(),
        run_count: config.runs,
    };
    let mut plans = Vec::new();
    for i in 0..config.runs {
        let outcome = run_once(lf, &loops, run_seed(config.seed, i), config.step_budget);
        for (site, observations) in outcome.observations {
            value_sets
                .values
                .entry(site)
                .or_default()
                .extend(observations);
        }
        plans.push(outcome.plan);
        for d in outcome.diagnostics {
            if !diagnostics.contains(&d) {
                diagnostics.push(d);
            }
        }
    }
    ExecResult {
        value_sets,
        plans,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_bundle;
    use crate::lift::lift_function;

    fn lifted(text: &str) -> LiftedFunction {
        let p = parse_bundle(text).unwrap();
        lift_function(&p.functions[0]).0
    }

    const STRAIGHT: &str = "program p\nfunction f arch=x86_64 entry=0\n\
        block 0 @0x0\n  0x0 mov rax, rdi\n  0x3 ret\n";

    const SELF_LOOP_ARM: &str = "program p\nfunction f arch=arm32 entry=0\n\
        block 0 @0x0 succ=1:ft\n  0x0 mov r4, r0\n\
        block 1 @0x10 succ=1:taken,2:ft\n  0x10 add r0, r0, #1\n  0x14 cmp r0, #100\n  0x18 bne 0x10\n\
        block 2 @0x20\n  0x20 bx lr\n";

    const DIAMOND: &str = "program p\nfunction f arch=x86_64 entry=0\n\
        block 0 @0x0 succ=1:taken,2:ft\n  0x0 cmp rdi, 0x0\n  0x1 je 0x20\n\
        block 1 @0x10 succ=3:jmp\n  0x10 mov rax, rsi\n  0x13 jmp 0x30\n\
        block 2 @0x20 succ=3:jmp\n  0x20 mov rax, rdx\n  0x23 jmp 0x30\n\
        block 3 @0x30\n  0x30 add rax, 0x1\n  0x34 ret\n";

    #[test]
    fn straight_line_returns_var0() {
        let lf = lifted(STRAIGHT);
        let result = execute(
            &lf,
            &ExecConfig {
                runs: 1,
                ..Default::default()
            },
        );
        let ret_obs = &result.value_sets.values[&0x3];
        assert_eq!(ret_obs.len(), 1);
        match ret_obs.iter().next().unwrap() {
            Observation::Return { value } => {
                assert_eq!(crate::text::canonical_text(value), "var0")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn self_loop_wraps_updated_operand_in_iter() {
        let lf = lifted(SELF_LOOP_ARM);
        let result = execute(
            &lf,
            &ExecConfig {
                runs: 4,
                ..Default::default()
            },
        );
        let add_texts = result.value_sets.texts_at(0x10);
        assert_eq!(add_texts, vec!["iter(var0 + 0x1)"]);
        // the comparison's left side is loop carried, its right side constant
        let cmp = &result.value_sets.values[&0x14];
        assert_eq!(cmp.len(), 1);
        match cmp.iter().next().unwrap() {
            Observation::Compare { lhs, rhs, .. } => {
                assert_eq!(crate::text::canonical_text(lhs), "iter(var0 + 0x1)");
                assert_eq!(crate::text::canonical_text(rhs), "0x64");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diamond_join_accumulates_both_values() {
        let lf = lifted(DIAMOND);
        let result = execute(
            &lf,
            &ExecConfig {
                runs: 16,
                ..Default::default()
            },
        );
        // the flag-setting add also records its implied compare against zero
        let join_texts = result.value_sets.texts_at(0x30);
        assert_eq!(join_texts, vec!["0x0", "var1 + 0x1", "var2 + 0x1"]);
        // every reachable instruction address is present
        for addr in [0x0u64, 0x1, 0x10, 0x13, 0x20, 0x23, 0x30, 0x34] {
            assert!(result.value_sets.values.contains_key(&addr), "{addr:#x}");
        }
    }

    #[test]
    fn identical_seeds_are_deterministic() {
        let lf = lifted(DIAMOND);
        let config = ExecConfig {
            runs: 2,
            ..Default::default()
        };
        let a = execute(&lf, &config);
        let b = execute(&lf, &config);
        assert_eq!(a.value_sets, b.value_sets);
        assert_eq!(a.plans, b.plans);
    }

    #[test]
    fn no_nested_iter_in_nested_loops() {
        let nested = "program p\nfunction f arch=arm32 entry=0\n\
            block 0 @0x0 succ=1:ft\n  0x0 mov r4, #0\n\
            block 1 @0x10 succ=2:ft\n  0x10 add r4, r4, #1\n\
            block 2 @0x20 succ=2:taken,3:ft\n  0x20 add r5, r5, #1\n  0x24 cmp r5, #10\n  0x28 bne 0x20\n\
            block 3 @0x30 succ=1:taken,4:ft\n  0x30 cmp r4, #10\n  0x34 bne 0x10\n\
            block 4 @0x40\n  0x40 bx lr\n";
        let lf = lifted(nested);
        let result = execute(
            &lf,
            &ExecConfig {
                runs: 8,
                ..Default::default()
            },
        );
        for obs_set in result.value_sets.values.values() {
            for obs in obs_set {
                for e in obs.exprs() {
                    assert!(!crate::text::canonical_text(e).contains("iter(iter("));
                }
            }
        }
        // the inner counter is loop carried
        let inner = result.value_sets.texts_at(0x20);
        assert!(
            inner.iter().all(|t| t.starts_with("iter(")),
            "inner loop add should be iter-wrapped: {inner:?}"
        );
    }
}
