//! Reachability pipelines: composes the model-indexed automata into
//! iterated lock-sensitive (or insensitive) post* queries, decides emptiness
//! directed or naively, and extracts witness executions by a two-phase
//! scheduler that closes open uses along the release order and performs
//! final acquisitions along the acquisition order.

use crate::automata::{
    accepts_tree, directed_is_empty_with, erase_unary, inverse_image, is_empty_with,
    lift_over_cuts, product, Alphabet, AutomatonError, CancelToken, EmptinessOptions, Erased,
    Singleton, TreeAutomaton,
};
use crate::builders::{t_ah, t_cwf, t_ct, t_delta, t_delta_cut, t_ht, t_rh, t_mhp, t_top, tm, Tm};
use crate::model::{
    check_no_empty_stack, step, Configuration, Execution, MonitorDpn, RuleSet, Sensitivity,
    ThreadId,
};
use crate::symbols::{ControlId, LockGraph, LockId, RuleId, StackId};
use crate::tree::{flatten_tree, ExecTree, FlatItem, FlatKind, TreeSymbol};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum QueryError {
    #[error("model violates the no-empty-stack assumption at {0:?}")]
    StackEmptyable(Vec<(ControlId, StackId)>),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("query has no stages")]
    NoStages,
    #[error("raw target automaton is not over the model's cut-free alphabet")]
    BadTarget,
    #[error("accepted tree has no schedule; this indicates a pipeline defect")]
    Unschedulable,
    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),
}

/// What a stage must reach.
#[derive(Clone)]
pub enum TargetSpec {
    /// One stack-symbol set per thread that must simultaneously be at top.
    MhpPatterns(Vec<BTreeSet<StackId>>),
    /// Some thread has just reached one of these stack symbols.
    TopSymbols(BTreeSet<StackId>),
    /// An arbitrary automaton over the model's cut-free alphabet.
    RawAutomaton(Erased),
}

#[derive(Clone)]
pub struct QueryStage {
    pub target: TargetSpec,
    pub allowed: RuleSet,
}

/// An iterated reachability query: visit each stage's target in order, using
/// only that stage's allowed rules to get there.
#[derive(Clone)]
pub struct Query {
    pub dpn: Arc<MonitorDpn>,
    pub stages: Vec<QueryStage>,
    pub sensitivity: Sensitivity,
}

#[derive(Clone, Debug, Default)]
pub struct QueryOptions {
    /// Use the naive product emptiness check instead of the directed one.
    pub naive_emptiness: bool,
    /// Enable answer subsumption during saturation.
    pub subsumption: bool,
    pub cancel: Option<CancelToken>,
}

#[derive(Clone, Debug, Default)]
pub struct QueryStats {
    /// Product states finalized by the final emptiness check.
    pub states_explored: usize,
    /// Top-down states of the directed check (0 for the naive one).
    pub top_down_states: usize,
}

/// A non-empty query's evidence: the accepted tree with stage boundaries
/// marked by indexed cuts, and a replayable execution visiting them in
/// order.
#[derive(Clone, Debug)]
pub struct Witness {
    pub tree: ExecTree,
    pub execution: Execution,
}

#[derive(Clone, Debug)]
pub struct QueryResult {
    pub nonempty: bool,
    pub witness: Option<Witness>,
    pub stats: QueryStats,
}

fn target_automaton(
    dpn: &Arc<MonitorDpn>,
    target: &TargetSpec,
) -> Result<Erased, QueryError> {
    match target {
        TargetSpec::MhpPatterns(patterns) => Ok(Erased::new(t_mhp(
            Arc::clone(dpn),
            patterns.clone(),
            false,
        ))),
        TargetSpec::TopSymbols(symbols) => {
            Ok(Erased::new(t_top(Arc::clone(dpn), symbols.clone(), false)))
        }
        TargetSpec::RawAutomaton(a) => {
            if *a.alphabet() != Alphabet::cut_free(Arc::clone(dpn)) {
                return Err(QueryError::BadTarget);
            }
            Ok(a.clone())
        }
    }
}

fn product_all(mut parts: Vec<Erased>) -> Result<Erased, QueryError> {
    let mut acc = parts.remove(0);
    for p in parts {
        acc = Erased::new(product(acc, p)?);
    }
    Ok(acc)
}

/// The lock-insensitive or lock-sensitive reachable-tree language restricted
/// to a rule subset, over the cut-free alphabet.
pub fn reachable_trees(
    dpn: &Arc<MonitorDpn>,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
) -> Erased {
    let mut parts = vec![
        Erased::new(tm(Arc::clone(dpn), false)),
        Erased::new(t_delta(Arc::clone(dpn), allowed.clone(), false)),
    ];
    if sensitivity.is_sensitive() {
        parts.push(Erased::new(t_ah(Arc::clone(dpn), false)));
    }
    product_all(parts).expect("factors share one alphabet")
}

/// The non-`Tm` factors of the cut-alphabet pipeline product for one
/// iteration step from language `a`, plus the `Tm` factor.
fn cut_pipeline_parts(
    dpn: &Arc<MonitorDpn>,
    a: &Erased,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
) -> Result<(Vec<Erased>, Tm), QueryError> {
    if *a.alphabet() != Alphabet::cut_free(Arc::clone(dpn)) {
        return Err(QueryError::Automaton(AutomatonError::AlphabetMismatch));
    }
    // Cheap factors first: the product short-circuits left to right, so the
    // inverse image (which evaluates the whole previous stage) goes last.
    let mut parts = vec![
        Erased::new(t_cwf(Arc::clone(dpn))),
        Erased::new(t_delta_cut(Arc::clone(dpn), allowed.clone())),
    ];
    if sensitivity.is_sensitive() {
        parts.push(Erased::new(t_rh(Arc::clone(dpn))));
        parts.push(Erased::new(t_ht(Arc::clone(dpn))));
        parts.push(Erased::new(t_ah(Arc::clone(dpn), true)));
    }
    parts.push(Erased::new(inverse_image(t_ct(Arc::clone(dpn)), a.clone())?));
    Ok((parts, tm(Arc::clone(dpn), true)))
}

/// The full cut-alphabet product accepting exactly the wellformed cut trees
/// whose marked prefix lies in `a` and whose suffix uses only `allowed`
/// (and, sensitively, is schedulable from the cut). Exposed for tests.
pub fn cut_pipeline(
    dpn: &Arc<MonitorDpn>,
    a: &Erased,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
) -> Result<Erased, QueryError> {
    let (mut parts, tm_part) = cut_pipeline_parts(dpn, a, allowed, sensitivity)?;
    parts.push(Erased::new(tm_part));
    product_all(parts)
}

/// One iteration of post*: the successors of the tree-regular set `a` via
/// the allowed rules, as a cut-free language. Refuses models on which some
/// start frame can empty its stack.
pub fn post_step(
    dpn: &Arc<MonitorDpn>,
    a: &Erased,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
) -> Result<Erased, QueryError> {
    let offenders = check_no_empty_stack(dpn);
    if !offenders.is_empty() {
        return Err(QueryError::StackEmptyable(offenders));
    }
    let full = cut_pipeline(dpn, a, allowed, sensitivity)?;
    let cut_symbols = full.alphabet().cut_symbols();
    Ok(Erased::new(erase_unary(full, cut_symbols)?))
}

fn emptiness_options(options: &QueryOptions) -> EmptinessOptions {
    EmptinessOptions {
        subsumption: options.subsumption,
        cancel: options.cancel.clone(),
    }
}

/// Emptiness of `(a_up factors) ∩ tm_part`, honoring the option flags.
fn check_emptiness(
    a_parts: Vec<Erased>,
    tm_part: Tm,
    options: &QueryOptions,
) -> Result<(Option<ExecTree>, QueryStats), QueryError> {
    let a_up = product_all(a_parts)?;
    let opts = emptiness_options(options);
    if options.naive_emptiness {
        // Tm first: its structural constraints cull most combinations
        // before the expensive factors run.
        let prod = product(tm_part, a_up)?;
        let report = is_empty_with(&prod, &opts)?;
        Ok((
            report.witness.map(|w| w.to_tree()),
            QueryStats {
                states_explored: report.states_explored,
                top_down_states: 0,
            },
        ))
    } else {
        let report = directed_is_empty_with(a_up, tm_part, &opts)?;
        Ok((
            report.witness.map(|w| w.to_tree()),
            QueryStats {
                states_explored: report.states_explored,
                top_down_states: report.top_down_states,
            },
        ))
    }
}

pub fn run_query(query: &Query) -> Result<QueryResult, QueryError> {
    run_query_with(query, &QueryOptions::default())
}

pub fn run_query_with(query: &Query, options: &QueryOptions) -> Result<QueryResult, QueryError> {
    let dpn = &query.dpn;
    if query.stages.is_empty() {
        return Err(QueryError::NoStages);
    }
    if query.stages.len() > 1 {
        let offenders = check_no_empty_stack(dpn);
        if !offenders.is_empty() {
            return Err(QueryError::StackEmptyable(offenders));
        }
    }

    // Languages A_i after each non-final stage, and the A_{i-1} feeding each
    // stage (needed again for witness reconstruction).
    let n = query.stages.len();
    let mut feeding: Vec<Option<Erased>> = Vec::with_capacity(n);
    let mut prev: Option<Erased> = None;
    for stage in &query.stages[..n - 1] {
        feeding.push(prev.clone());
        let base = match &prev {
            None => reachable_trees(dpn, &stage.allowed, query.sensitivity),
            Some(a) => post_step(dpn, a, &stage.allowed, query.sensitivity)?,
        };
        let with_target = Erased::new(product(base, target_automaton(dpn, &stage.target)?)?);
        prev = Some(with_target);
    }
    feeding.push(prev.clone());

    // Final stage: emptiness over the product, keeping the Tm factor
    // separate so the directed check can explore it top-down. For iterated
    // stages the check runs over the cut alphabet, so the witness keeps its
    // cut nodes.
    let last = &query.stages[n - 1];
    let target = target_automaton(dpn, &last.target)?;
    let (witness_tree, stats) = match &prev {
        None => {
            let mut parts = vec![Erased::new(t_delta(
                Arc::clone(dpn),
                last.allowed.clone(),
                false,
            ))];
            if query.sensitivity.is_sensitive() {
                parts.push(Erased::new(t_ah(Arc::clone(dpn), false)));
            }
            parts.push(target);
            check_emptiness(parts, tm(Arc::clone(dpn), false), options)?
        }
        Some(a) => {
            let (mut parts, tm_part) =
                cut_pipeline_parts(dpn, a, &last.allowed, query.sensitivity)?;
            parts.push(Erased::new(lift_over_cuts(target, 1)));
            check_emptiness(parts, tm_part, options)?
        }
    };

    let Some(final_tree) = witness_tree else {
        return Ok(QueryResult { nonempty: false, witness: None, stats });
    };

    // Reconstruct the multi-level witness: walk the stages backwards,
    // finding for each one a cut tree whose stripped form is the next
    // stage's marked prefix, then merge the cut markers into one tree with
    // stage-indexed levels.
    let mut merged = final_tree.with_cut_level((n - 1) as u32);
    for i in (1..n.max(2) - 1).rev() {
        // merged currently carries cuts of levels i+1 and above; the prefix
        // at level i+1 is the tree reached after stage i (0-indexed), whose
        // own cut tree is found by intersecting that stage's pipeline with
        // the singleton of the prefix.
        let s_i = prefix_at_level(&merged, (i + 1) as u32)?;
        let a_prev = feeding[i].as_ref().expect("stage i >= 1 has a feeder");
        let stage = &query.stages[i];
        let (mut parts, tm_part) =
            cut_pipeline_parts(dpn, a_prev, &stage.allowed, query.sensitivity)?;
        let sing = Singleton::new(Alphabet::cut_free(Arc::clone(dpn)), &s_i);
        parts.push(Erased::new(lift_over_cuts(Erased::new(sing), 1)));
        let (w, _) = check_emptiness(parts, tm_part, options)?;
        let w = w.ok_or(QueryError::Unschedulable)?;
        merged = merge_cuts(&merged, &w.with_cut_level(i as u32));
    }

    let execution = schedule(dpn, &merged, query.sensitivity)?;
    Ok(QueryResult {
        nonempty: true,
        witness: Some(Witness { tree: merged, execution }),
        stats,
    })
}

/// The marked prefix with respect to the cuts of exactly `level`, ignoring
/// (and keeping) cuts of lower levels in the prefix part.
fn prefix_at_level(tree: &ExecTree, level: u32) -> Result<ExecTree, QueryError> {
    // Temporarily strip lower-level cuts, take the prefix at `level`, then
    // re-merge is not needed: lower-level cuts live strictly inside the
    // prefix. We instead compute the prefix directly by treating lower
    // cuts as transparent unary nodes.
    fn go(tree: &ExecTree, level: u32) -> Result<(bool, ExecTree), QueryError> {
        match tree.sym {
            TreeSymbol::Cut { control, stack, level: l } => {
                if l == level {
                    Ok((true, ExecTree::nil(control, stack)))
                } else {
                    let (marked, child) = go(&tree.children[0], level)?;
                    Ok((marked, ExecTree::cut(control, stack, l, child)))
                }
            }
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => Ok((false, tree.clone())),
            TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
                let (m, c) = go(&tree.children[0], level)?;
                Ok((m, ExecTree::new(tree.sym, vec![c])))
            }
            TreeSymbol::RCall { rule } | TreeSymbol::Use { rule, .. } => {
                let (bm, body) = go(&tree.children[0], level)?;
                let (cm, cont) = go(&tree.children[1], level)?;
                match (bm, cm) {
                    (true, false) => {
                        let sym = match tree.sym {
                            TreeSymbol::Use { lock, reentrant, .. } => {
                                TreeSymbol::Acq { rule, lock, reentrant }
                            }
                            _ => TreeSymbol::NCall { rule },
                        };
                        Ok((true, ExecTree::new(sym, vec![body])))
                    }
                    (false, m) => Ok((m, ExecTree::new(tree.sym, vec![body, cont]))),
                    (true, true) => Err(QueryError::Unschedulable),
                }
            }
            TreeSymbol::Spawn { .. } => {
                let (_, sp) = go(&tree.children[0], level)?;
                let (m, cont) = go(&tree.children[1], level)?;
                Ok((m, ExecTree::new(tree.sym, vec![sp, cont])))
            }
        }
    }
    let (marked, prefix) = go(tree, level)?;
    if !marked {
        return Err(QueryError::Unschedulable);
    }
    Ok(prefix)
}

/// Merges the lower-level cut markers of `m` into `w`. `w` carries cuts of
/// one level; `m` is the multi-level tree of `w`'s prefix:
/// `strip(m) = marked_prefix(w)` up to lower-level cuts.
fn merge_cuts(w: &ExecTree, m: &ExecTree) -> ExecTree {
    // m's own cuts mark earlier boundaries: emit them first.
    if let TreeSymbol::Cut { control, stack, level } = m.sym {
        return ExecTree::cut(control, stack, level, merge_cuts(w, &m.children[0]));
    }
    match w.sym {
        TreeSymbol::Cut { control, stack, level } => {
            debug_assert!(matches!(m.sym, TreeSymbol::Nil { .. }));
            ExecTree::cut(control, stack, level, w.children[0].clone())
        }
        _ if !w.contains_cut() => m.clone(),
        TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
            debug_assert_eq!(m.sym, w.sym);
            ExecTree::new(w.sym, vec![merge_cuts(&w.children[0], &m.children[0])])
        }
        TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } => {
            let (body, cont) = (&w.children[0], &w.children[1]);
            if body.contains_cut() {
                // The prefix rewrote this node to NCALL/ACQ with one child.
                ExecTree::new(w.sym, vec![merge_cuts(body, &m.children[0]), cont.clone()])
            } else {
                ExecTree::new(
                    w.sym,
                    vec![m.children[0].clone(), merge_cuts(cont, &m.children[1])],
                )
            }
        }
        TreeSymbol::Spawn { .. } => ExecTree::new(
            w.sym,
            vec![
                merge_cuts(&w.children[0], &m.children[0]),
                merge_cuts(&w.children[1], &m.children[1]),
            ],
        ),
        _ => {
            debug_assert!(false, "cut-free leaf handled above");
            m.clone()
        }
    }
}

/// A lock-sensitively (or insensitively) replayable execution whose tree
/// equals the cut-stripped input and which passes through each cut level's
/// marked configuration in order.
///
/// Within each phase, open uses left over from the previous boundary are
/// closed first (their order emerges from lock availability, which the
/// acyclic release structure guarantees), then remaining uses run, and
/// final acquisitions are performed in acquisition-graph order, each
/// followed by its subsequent uses. Tie-breaks: smallest thread id, then
/// smallest rule id.
pub fn schedule(
    dpn: &MonitorDpn,
    tree: &ExecTree,
    sensitivity: Sensitivity,
) -> Result<Execution, QueryError> {
    let flat = flatten_tree(dpn, tree)?;
    let levels = tree.max_cut_level();
    let mut scheduler = Scheduler::new(dpn, &flat, sensitivity, levels);
    scheduler.run()
}

struct Scheduler<'a> {
    dpn: &'a MonitorDpn,
    flat: &'a crate::tree::FlatTree,
    sensitivity: Sensitivity,
    levels: u32,
    /// Phase of each item: the level of the nearest cut at or after it.
    phase_of: BTreeMap<ThreadId, Vec<u32>>,
    positions: BTreeMap<ThreadId, usize>,
    conf: Configuration,
    steps: Vec<(ThreadId, RuleId)>,
}

enum Move {
    /// One always-runnable step (or a feasible single acquire).
    Block { tid: ThreadId, until: usize },
    /// A phase-final acquisition, deferred until no block moves remain.
    FinalAcq { tid: ThreadId, lock: LockId },
}

impl<'a> Scheduler<'a> {
    fn new(
        dpn: &'a MonitorDpn,
        flat: &'a crate::tree::FlatTree,
        sensitivity: Sensitivity,
        levels: u32,
    ) -> Scheduler<'a> {
        let mut phase_of = BTreeMap::new();
        for (tid, items) in &flat.threads {
            let mut phases = vec![levels + 1; items.len()];
            let mut next_phase = levels + 1;
            for (i, item) in items.iter().enumerate().rev() {
                if let FlatKind::Cut { level, .. } = item.kind {
                    next_phase = level;
                }
                phases[i] = next_phase;
            }
            phase_of.insert(tid.clone(), phases);
        }
        Scheduler {
            dpn,
            flat,
            sensitivity,
            levels,
            phase_of,
            positions: BTreeMap::new(),
            conf: crate::model::initial_configuration(dpn),
            steps: Vec::new(),
        }
    }

    fn items(&self, tid: &ThreadId) -> &[FlatItem] {
        &self.flat.threads[tid]
    }

    fn pos(&self, tid: &ThreadId) -> usize {
        self.positions.get(tid).copied().unwrap_or(0)
    }

    /// End position of `tid`'s segment for the given phase: the index of its
    /// cut mark of that level, or the trace end in the last phase.
    fn target(&self, tid: &ThreadId, phase: u32) -> usize {
        let items = self.items(tid);
        if phase > self.levels {
            return items.len();
        }
        items
            .iter()
            .position(|it| matches!(it.kind, FlatKind::Cut { level, .. } if level == phase))
            .unwrap_or(items.len())
    }

    fn held_by_others(&self, tid: &ThreadId) -> crate::symbols::LockSet {
        let mut held = crate::symbols::LockSet::new();
        for (other, thread) in self.conf.threads() {
            if other != tid {
                for l in thread.held_locks().iter() {
                    held.insert(l);
                }
            }
        }
        held
    }

    /// Phase-relative acquisition graph: an edge `x → y` when `y` is touched
    /// non-reentrantly within phase `phase` below the phase-final
    /// acquisition of `x`.
    fn phase_acq_graph(&self, phase: u32) -> LockGraph {
        let mut graph = LockGraph::new();
        for (tid, items) in &self.flat.threads {
            for (i, item) in items.iter().enumerate() {
                if self.phase_of[tid][i] != phase {
                    continue;
                }
                let FlatKind::Step { rule, reentrant: false, .. } = item.kind else { continue };
                let Some(lock) = self.dpn.rule(rule).lock() else { continue };
                if !self.is_phase_final(tid, i, phase) {
                    continue;
                }
                for (other_tid, other_items) in &self.flat.threads {
                    for (j, other) in other_items.iter().enumerate() {
                        if self.phase_of[other_tid][j] != phase {
                            continue;
                        }
                        let FlatKind::Step { rule: r2, reentrant: false, .. } = other.kind
                        else {
                            continue;
                        };
                        let Some(lock2) = self.dpn.rule(r2).lock() else { continue };
                        if other.dfs_id > item.dfs_id && other.dfs_id <= item.subtree_end {
                            graph.insert(lock, lock2);
                        }
                    }
                }
            }
        }
        graph
    }

    /// Whether the monitor step at `idx` keeps its lock past this phase.
    fn is_phase_final(&self, tid: &ThreadId, idx: usize, phase: u32) -> bool {
        match self.items(tid)[idx].matching_return {
            None => true,
            Some(ret) => self.phase_of[tid][ret] > phase,
        }
    }

    /// Locks of not-yet-executed phase-final acquisitions of this phase.
    fn remaining_final_locks(&self, phase: u32) -> BTreeSet<LockId> {
        let mut out = BTreeSet::new();
        for (tid, items) in &self.flat.threads {
            for (i, item) in items.iter().enumerate() {
                if i < self.pos(tid) || self.phase_of[tid][i] != phase {
                    continue;
                }
                let FlatKind::Step { rule, reentrant: false, .. } = item.kind else { continue };
                let Some(lock) = self.dpn.rule(rule).lock() else { continue };
                if self.is_phase_final(tid, i, phase) {
                    out.insert(lock);
                }
            }
        }
        out
    }

    fn next_move(&self, tid: &ThreadId, phase: u32) -> Option<Move> {
        let items = self.items(tid);
        let pos = self.pos(tid);
        let target = self.target(tid, phase);
        if pos >= target || self.conf.thread(tid).is_none() {
            return None;
        }
        let item = &items[pos];
        let FlatKind::Step { rule, reentrant, .. } = item.kind else {
            return None;
        };
        let lock = self.dpn.rule(rule).lock();
        match lock {
            Some(lock) if !reentrant => {
                if self.is_phase_final(tid, pos, phase) {
                    Some(Move::FinalAcq { tid: tid.clone(), lock })
                } else {
                    // A use closing within this phase runs atomically
                    // through its matching return.
                    let until = items[pos].matching_return.expect("not phase-final");
                    Some(Move::Block { tid: tid.clone(), until })
                }
            }
            _ => Some(Move::Block { tid: tid.clone(), until: pos }),
        }
    }

    /// Whether all locks the block touches non-reentrantly are free.
    fn block_feasible(&self, tid: &ThreadId, until: usize) -> bool {
        if !self.sensitivity.is_sensitive() {
            return true;
        }
        let held = self.held_by_others(tid);
        let items = self.items(tid);
        for item in &items[self.pos(tid)..=until] {
            if let FlatKind::Step { rule, reentrant: false, .. } = item.kind {
                if let Some(lock) = self.dpn.rule(rule).lock() {
                    if held.contains(lock) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn execute(&mut self, tid: &ThreadId, until: usize) -> Result<(), QueryError> {
        let end = until + 1;
        while self.pos(tid) < end {
            let pos = self.pos(tid);
            let kind = self.items(tid)[pos].kind.clone();
            match kind {
                FlatKind::Cut { .. } => return Err(QueryError::Unschedulable),
                FlatKind::Step { rule, .. } => {
                    self.conf = step(self.dpn, &self.conf, tid, rule, self.sensitivity)
                        .map_err(|_| QueryError::Unschedulable)?;
                    self.steps.push((tid.clone(), rule));
                }
            }
            self.positions.insert(tid.clone(), pos + 1);
        }
        Ok(())
    }

    fn run(&mut self) -> Result<Execution, QueryError> {
        for phase in 1..=self.levels + 1 {
            self.run_phase(phase)?;
            // Check the cut annotations and advance past the marks.
            if phase <= self.levels {
                let tids: Vec<ThreadId> = self.conf.thread_ids().cloned().collect();
                for tid in tids {
                    let pos = self.pos(&tid);
                    let items = self.items(&tid);
                    if pos >= items.len() {
                        continue;
                    }
                    if let FlatKind::Cut { level, control, stack } = items[pos].kind {
                        if level != phase {
                            continue;
                        }
                        let thread = self.conf.thread(&tid).ok_or(QueryError::Unschedulable)?;
                        let top = thread.top().ok_or(QueryError::Unschedulable)?;
                        if thread.control != control || top.stack != stack {
                            return Err(QueryError::Unschedulable);
                        }
                        self.positions.insert(tid.clone(), pos + 1);
                    }
                }
            }
        }
        // Everything must be consumed.
        for (tid, items) in &self.flat.threads {
            if self.pos(tid) != items.len() {
                return Err(QueryError::Unschedulable);
            }
        }
        Ok(Execution::new(self.steps.clone()))
    }

    fn run_phase(&mut self, phase: u32) -> Result<(), QueryError> {
        let acq_graph = self.phase_acq_graph(phase);
        loop {
            let live: Vec<ThreadId> = self.conf.thread_ids().cloned().collect();
            let mut moves: Vec<Move> = Vec::new();
            for tid in &live {
                if let Some(m) = self.next_move(tid, phase) {
                    moves.push(m);
                }
            }
            if moves.is_empty() {
                // All threads are at their marks (or waiting to be spawned,
                // which cannot happen with empty moves and unfinished
                // spawners).
                for tid in &live {
                    if self.pos(tid) < self.target(tid, phase) {
                        return Err(QueryError::Unschedulable);
                    }
                }
                return Ok(());
            }

            // Sub-phase B: feasible blocks first, smallest (tid, rule).
            let block = moves
                .iter()
                .filter_map(|m| match m {
                    Move::Block { tid, until } if self.block_feasible(tid, *until) => {
                        let rule = self.items(tid)[self.pos(tid)].rule();
                        Some((tid.clone(), *until, rule))
                    }
                    _ => None,
                })
                .min_by(|a, b| (a.0.clone(), a.2).cmp(&(b.0.clone(), b.2)));
            if let Some((tid, until, _)) = block {
                self.execute(&tid, until)?;
                continue;
            }

            // Sub-phase C: a minimal pending final acquisition.
            let remaining = self.remaining_final_locks(phase);
            let acq = moves
                .iter()
                .filter_map(|m| match m {
                    Move::FinalAcq { tid, lock } => {
                        // The acquisition order only constrains lock-
                        // sensitive schedules.
                        let blocked = self.sensitivity.is_sensitive()
                            && remaining.iter().any(|y| {
                                *y != *lock && acq_graph.successors(*y).any(|s| s == *lock)
                            });
                        let feasible = !self.sensitivity.is_sensitive()
                            || !self.held_by_others(tid).contains(*lock);
                        if blocked || !feasible {
                            None
                        } else {
                            let rule = self.items(tid)[self.pos(tid)].rule();
                            Some((tid.clone(), rule))
                        }
                    }
                    _ => None,
                })
                .min();
            match acq {
                Some((tid, _)) => {
                    let pos = self.pos(&tid);
                    self.execute(&tid, pos)?;
                }
                None => return Err(QueryError::Unschedulable),
            }
        }
    }
}

/// Convenience: whether a single tree is accepted by the full sensitive (or
/// insensitive) cut pipeline for the given feeder language.
pub fn cut_tree_accepted(
    dpn: &Arc<MonitorDpn>,
    a: &Erased,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
    tree: &ExecTree,
) -> Result<bool, QueryError> {
    let pipeline = cut_pipeline(dpn, a, allowed, sensitivity)?;
    Ok(accepts_tree(&pipeline, tree)?)
}
