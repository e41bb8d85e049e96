//! The model-indexed tree automata and the transducer of the analysis:
//! lock-insensitive tree acceptance, rule-set restriction, acquisition
//! structures, cut wellformedness, prefix extraction, post-cut rule
//! restriction, release structures, holds-through checking, and the
//! may-happen-in-parallel and top-of-stack target automata.
//!
//! All constructors emit transitions lazily; nominal state spaces of size
//! `2^X` are never materialized.

use crate::automata::{
    Alphabet, Template, TopDownAutomaton, TransducerRule, TreeAutomaton, TreeTransducer,
};
use crate::model::{MonitorDpn, Rule, RuleKind, RuleSet};
use crate::symbols::{ControlId, LockId, LockSet, LockGraph, StackId};
use crate::tree::TreeSymbol;
use std::collections::BTreeSet;
use std::sync::Arc;

fn rule_of(dpn: &MonitorDpn, sym: &TreeSymbol) -> Option<Rule> {
    sym.rule().map(|r| dpn.rule(r).clone())
}

/// State of the lock-insensitive execution-tree automaton: the control and
/// stack the subtree's main thread started on, the control reached by its
/// last action, whether that action was a return, and the locks the thread
/// holds on entry to the subtree.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TmState {
    pub start_control: ControlId,
    pub start_stack: StackId,
    pub reached: ControlId,
    pub returned: bool,
    pub held: LockSet,
}

/// Accepts the lock-insensitive execution trees of the model; with
/// `with_cut` it additionally passes well-annotated cut nodes through.
pub struct Tm {
    dpn: Arc<MonitorDpn>,
    alphabet: Alphabet,
    /// Lock-set guesses for leaves, restricted to locks that occur in some
    /// monitor rule; other locks can never be removed on the way up, so the
    /// accepted language is unchanged.
    leaf_sets: Vec<LockSet>,
}

pub fn tm(dpn: Arc<MonitorDpn>, with_cut: bool) -> Tm {
    let alphabet = if with_cut {
        Alphabet::with_cuts(Arc::clone(&dpn), 1)
    } else {
        Alphabet::cut_free(Arc::clone(&dpn))
    };
    let leaf_sets = dpn.used_locks().subsets();
    Tm { dpn, alphabet, leaf_sets }
}

impl TreeAutomaton for Tm {
    type State = TmState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[TmState]) -> Vec<TmState> {
        let dpn = &self.dpn;
        match *sym {
            TreeSymbol::Nil { control, stack } => self
                .leaf_sets
                .iter()
                .map(|ls| TmState {
                    start_control: control,
                    start_stack: stack,
                    reached: control,
                    returned: false,
                    held: ls.clone(),
                })
                .collect(),
            TreeSymbol::Ret { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Return { to_control } = r.kind else { return vec![] };
                self.leaf_sets
                    .iter()
                    .map(|ls| TmState {
                        start_control: r.from_control,
                        start_stack: r.from_stack,
                        reached: to_control,
                        returned: true,
                        held: ls.clone(),
                    })
                    .collect()
            }
            TreeSymbol::Base { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Base { to_control, to_stack } = r.kind else { return vec![] };
                let c = &children[0];
                if c.start_control != to_control || c.start_stack != to_stack {
                    return vec![];
                }
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    ..c.clone()
                }]
            }
            TreeSymbol::NCall { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Call { to_control, to_stack, .. } = r.kind else { return vec![] };
                let c = &children[0];
                if c.start_control != to_control || c.start_stack != to_stack || c.returned {
                    return vec![];
                }
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    reached: to_control,
                    returned: false,
                    held: c.held.clone(),
                }]
            }
            TreeSymbol::RCall { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Call { to_control, to_stack, ret_stack } = r.kind else {
                    return vec![];
                };
                let (body, cont) = (&children[0], &children[1]);
                if body.start_control != to_control
                    || body.start_stack != to_stack
                    || !body.returned
                    || cont.start_control != body.reached
                    || cont.start_stack != ret_stack
                    || cont.held != body.held
                {
                    return vec![];
                }
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    reached: cont.reached,
                    returned: cont.returned,
                    held: cont.held.clone(),
                }]
            }
            TreeSymbol::Spawn { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Spawn { spawn_control, spawn_stack, to_control, to_stack } = r.kind
                else {
                    return vec![];
                };
                let (sp, cont) = (&children[0], &children[1]);
                if sp.start_control != spawn_control
                    || sp.start_stack != spawn_stack
                    || !sp.held.is_empty()
                    || cont.start_control != to_control
                    || cont.start_stack != to_stack
                {
                    return vec![];
                }
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    reached: cont.reached,
                    returned: cont.returned,
                    held: cont.held.clone(),
                }]
            }
            TreeSymbol::Acq { rule, lock, reentrant } => {
                let r = dpn.rule(rule);
                let RuleKind::Monitor { lock: x, to_control, to_stack, .. } = r.kind else {
                    return vec![];
                };
                let c = &children[0];
                if x != lock
                    || c.start_control != to_control
                    || c.start_stack != to_stack
                    || c.returned
                    || !c.held.contains(lock)
                {
                    return vec![];
                }
                let held = if reentrant { c.held.clone() } else { c.held.without(lock) };
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    reached: c.reached,
                    returned: false,
                    held,
                }]
            }
            TreeSymbol::Use { rule, lock, reentrant } => {
                let r = dpn.rule(rule);
                let RuleKind::Monitor { lock: x, to_control, to_stack, ret_stack } = r.kind
                else {
                    return vec![];
                };
                let (body, cont) = (&children[0], &children[1]);
                if x != lock
                    || body.start_control != to_control
                    || body.start_stack != to_stack
                    || !body.returned
                    || cont.start_control != body.reached
                    || cont.start_stack != ret_stack
                    || reentrant != cont.held.contains(lock)
                    || body.held != cont.held.with(lock)
                {
                    return vec![];
                }
                vec![TmState {
                    start_control: r.from_control,
                    start_stack: r.from_stack,
                    reached: cont.reached,
                    returned: cont.returned,
                    held: cont.held.clone(),
                }]
            }
            TreeSymbol::Cut { control, stack, .. } => {
                let c = &children[0];
                if c.start_control != control || c.start_stack != stack {
                    return vec![];
                }
                vec![c.clone()]
            }
        }
    }

    fn accepting(&self, state: &TmState) -> bool {
        state.start_control == self.dpn.init_control
            && state.start_stack == self.dpn.init_stack
            && state.held.is_empty()
    }
}

impl TopDownAutomaton for Tm {
    fn root_states(&self) -> Vec<TmState> {
        let mut out = Vec::new();
        for reached in 0..self.dpn.controls.len() as u32 {
            for returned in [false, true] {
                out.push(TmState {
                    start_control: self.dpn.init_control,
                    start_stack: self.dpn.init_stack,
                    reached: ControlId(reached),
                    returned,
                    held: LockSet::new(),
                });
            }
        }
        out
    }

    fn expansions(&self, sym: &TreeSymbol, parent: &TmState) -> Vec<Vec<TmState>> {
        let dpn = &self.dpn;
        let controls = || (0..dpn.controls.len() as u32).map(ControlId);
        let matches_head = |r: &Rule, p: &TmState| {
            r.from_control == p.start_control && r.from_stack == p.start_stack
        };
        match *sym {
            TreeSymbol::Nil { control, stack } => {
                if parent.start_control == control
                    && parent.start_stack == stack
                    && parent.reached == control
                    && !parent.returned
                {
                    vec![vec![]]
                } else {
                    vec![]
                }
            }
            TreeSymbol::Ret { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Return { to_control } = r.kind else { return vec![] };
                if matches_head(r, parent) && parent.reached == to_control && parent.returned {
                    vec![vec![]]
                } else {
                    vec![]
                }
            }
            TreeSymbol::Base { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Base { to_control, to_stack } = r.kind else { return vec![] };
                if !matches_head(r, parent) {
                    return vec![];
                }
                vec![vec![TmState {
                    start_control: to_control,
                    start_stack: to_stack,
                    ..parent.clone()
                }]]
            }
            TreeSymbol::NCall { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Call { to_control, to_stack, .. } = r.kind else { return vec![] };
                if !matches_head(r, parent) || parent.returned || parent.reached != to_control {
                    return vec![];
                }
                controls()
                    .map(|q| {
                        vec![TmState {
                            start_control: to_control,
                            start_stack: to_stack,
                            reached: q,
                            returned: false,
                            held: parent.held.clone(),
                        }]
                    })
                    .collect()
            }
            TreeSymbol::RCall { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Call { to_control, to_stack, ret_stack } = r.kind else {
                    return vec![];
                };
                if !matches_head(r, parent) {
                    return vec![];
                }
                controls()
                    .map(|q| {
                        vec![
                            TmState {
                                start_control: to_control,
                                start_stack: to_stack,
                                reached: q,
                                returned: true,
                                held: parent.held.clone(),
                            },
                            TmState {
                                start_control: q,
                                start_stack: ret_stack,
                                reached: parent.reached,
                                returned: parent.returned,
                                held: parent.held.clone(),
                            },
                        ]
                    })
                    .collect()
            }
            TreeSymbol::Spawn { rule } => {
                let r = dpn.rule(rule);
                let RuleKind::Spawn { spawn_control, spawn_stack, to_control, to_stack } = r.kind
                else {
                    return vec![];
                };
                if !matches_head(r, parent) {
                    return vec![];
                }
                let mut out = Vec::new();
                for q in controls() {
                    for returned in [false, true] {
                        out.push(vec![
                            TmState {
                                start_control: spawn_control,
                                start_stack: spawn_stack,
                                reached: q,
                                returned,
                                held: LockSet::new(),
                            },
                            TmState {
                                start_control: to_control,
                                start_stack: to_stack,
                                reached: parent.reached,
                                returned: parent.returned,
                                held: parent.held.clone(),
                            },
                        ]);
                    }
                }
                out
            }
            TreeSymbol::Acq { rule, lock, reentrant } => {
                let r = dpn.rule(rule);
                let RuleKind::Monitor { lock: x, to_control, to_stack, .. } = r.kind else {
                    return vec![];
                };
                if x != lock
                    || !matches_head(r, parent)
                    || parent.returned
                    || reentrant != parent.held.contains(lock)
                {
                    return vec![];
                }
                vec![vec![TmState {
                    start_control: to_control,
                    start_stack: to_stack,
                    reached: parent.reached,
                    returned: false,
                    held: parent.held.with(lock),
                }]]
            }
            TreeSymbol::Use { rule, lock, reentrant } => {
                let r = dpn.rule(rule);
                let RuleKind::Monitor { lock: x, to_control, to_stack, ret_stack } = r.kind
                else {
                    return vec![];
                };
                if x != lock
                    || !matches_head(r, parent)
                    || reentrant != parent.held.contains(lock)
                {
                    return vec![];
                }
                controls()
                    .map(|q| {
                        vec![
                            TmState {
                                start_control: to_control,
                                start_stack: to_stack,
                                reached: q,
                                returned: true,
                                held: parent.held.with(lock),
                            },
                            TmState {
                                start_control: q,
                                start_stack: ret_stack,
                                reached: parent.reached,
                                returned: parent.returned,
                                held: parent.held.clone(),
                            },
                        ]
                    })
                    .collect()
            }
            TreeSymbol::Cut { control, stack, .. } => {
                if parent.start_control == control && parent.start_stack == stack {
                    vec![vec![parent.clone()]]
                } else {
                    vec![]
                }
            }
        }
    }
}

/// Single-state automaton admitting only nodes whose rule belongs to the
/// given subset, plus all `NIL` nodes (and cut nodes when the alphabet has
/// them).
pub struct TDelta {
    dpn: Arc<MonitorDpn>,
    alphabet: Alphabet,
    allowed: RuleSet,
}

pub fn t_delta(dpn: Arc<MonitorDpn>, allowed: RuleSet, with_cut: bool) -> TDelta {
    let alphabet = if with_cut {
        Alphabet::with_cuts(Arc::clone(&dpn), 1)
    } else {
        Alphabet::cut_free(Arc::clone(&dpn))
    };
    TDelta { dpn, alphabet, allowed }
}

impl TreeAutomaton for TDelta {
    type State = ();

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, _children: &[()]) -> Vec<()> {
        match sym {
            TreeSymbol::Nil { .. } | TreeSymbol::Cut { .. } => vec![()],
            _ => {
                let rule = rule_of(&self.dpn, sym).expect("node symbols carry rules");
                if self.allowed.contains(rule.id) {
                    vec![()]
                } else {
                    vec![]
                }
            }
        }
    }

    fn accepting(&self, _state: &()) -> bool {
        true
    }
}

/// Acquisition structure: locks finally acquired, locks used, and the
/// acquisition graph. Accepted iff the graph is acyclic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct AcqState {
    pub acquired: LockSet,
    pub used: LockSet,
    pub graph: LockGraph,
}

/// Filters lock-insensitively reachable trees down to the lock-sensitively
/// schedulable ones. Reentrant operations are transparent.
pub struct TAh {
    alphabet: Alphabet,
}

pub fn t_ah(dpn: Arc<MonitorDpn>, with_cut: bool) -> TAh {
    let alphabet = if with_cut {
        Alphabet::with_cuts(dpn, 1)
    } else {
        Alphabet::cut_free(dpn)
    };
    TAh { alphabet }
}

impl TreeAutomaton for TAh {
    type State = AcqState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[AcqState]) -> Vec<AcqState> {
        match *sym {
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => vec![AcqState::default()],
            TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Cut { .. } => {
                vec![children[0].clone()]
            }
            TreeSymbol::Acq { lock, reentrant, .. } => {
                let c = &children[0];
                if reentrant {
                    return vec![c.clone()];
                }
                if c.acquired.contains(lock) {
                    return vec![];
                }
                let mut graph = c.graph.clone();
                for u in c.used.iter() {
                    graph.insert(lock, u);
                }
                vec![AcqState {
                    acquired: c.acquired.with(lock),
                    used: c.used.with(lock),
                    graph,
                }]
            }
            TreeSymbol::RCall { .. } | TreeSymbol::Spawn { .. } | TreeSymbol::Use { .. } => {
                let (l, r) = (&children[0], &children[1]);
                if l.acquired.intersects(&r.acquired) {
                    return vec![];
                }
                let mut used = l.used.union(&r.used);
                if let TreeSymbol::Use { lock, reentrant: false, .. } = *sym {
                    used.insert(lock);
                }
                vec![AcqState {
                    acquired: l.acquired.union(&r.acquired),
                    used,
                    graph: l.graph.union(&r.graph),
                }]
            }
        }
    }

    fn accepting(&self, state: &AcqState) -> bool {
        state.graph.is_acyclic()
    }

    fn subsumes(&self, keep: &AcqState, drop: &AcqState) -> bool {
        keep.acquired.is_subset(&drop.acquired)
            && keep.used.is_subset(&drop.used)
            && keep.graph.is_subgraph(&drop.graph)
    }
}

/// Cut-wellformedness states.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum CwfState {
    /// No cut and no spawn in the subtree.
    Plain,
    /// Cut-wellformed.
    Wellformed,
    /// Spawned parts wellformed but the main thread's cut is missing.
    MissingMain,
    /// Contains spawns but no cuts; must lie after the cut.
    SpawnsOnly,
}

/// Accepts the trees whose cut nodes mark a legitimate intermediate
/// configuration: each thread spawned before the cut carries exactly one
/// cut, threads spawned afterwards carry none.
pub struct TCwf {
    alphabet: Alphabet,
}

pub fn t_cwf(dpn: Arc<MonitorDpn>) -> TCwf {
    TCwf { alphabet: Alphabet::with_cuts(dpn, 1) }
}

impl TreeAutomaton for TCwf {
    type State = CwfState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[CwfState]) -> Vec<CwfState> {
        use CwfState::*;
        let out = match *sym {
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => Some(Plain),
            TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
                Some(children[0])
            }
            TreeSymbol::Cut { .. } => match children[0] {
                Plain | SpawnsOnly => Some(Wellformed),
                _ => None,
            },
            TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } => {
                match (children[0], children[1]) {
                    (Plain | MissingMain, Wellformed) => Some(Wellformed),
                    (Wellformed, Plain | SpawnsOnly) => Some(Wellformed),
                    (MissingMain, Plain | MissingMain) => Some(MissingMain),
                    (Plain, MissingMain) => Some(MissingMain),
                    (SpawnsOnly, Plain | SpawnsOnly) => Some(SpawnsOnly),
                    (Plain, SpawnsOnly) => Some(SpawnsOnly),
                    (Plain, Plain) => Some(Plain),
                    _ => None,
                }
            }
            TreeSymbol::Spawn { .. } => match (children[0], children[1]) {
                (Wellformed, Plain | MissingMain) => Some(MissingMain),
                (Wellformed, Wellformed) => Some(Wellformed),
                (Plain | SpawnsOnly, Plain | SpawnsOnly) => Some(SpawnsOnly),
                _ => None,
            },
        };
        out.into_iter().collect()
    }

    fn accepting(&self, state: &CwfState) -> bool {
        *state == CwfState::Wellformed
    }
}

/// Transducer state: whether the subtree's main thread has produced the
/// marked prefix (contains the cut).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum CtState {
    Passthrough,
    Marked,
}

/// The prefix-extraction transducer: obtains the execution tree marked by
/// the cut from a cut-wellformed tree. Subtrees below a cut are deleted and
/// replaced by the cut's `NIL`; a returning call or use whose body contains
/// the cut becomes a non-returning call or acquisition.
pub fn t_ct(dpn: Arc<MonitorDpn>) -> TreeTransducer<CtState> {
    use CtState::*;
    let input = Alphabet::with_cuts(Arc::clone(&dpn), 1);
    let output = Alphabet::cut_free(dpn);
    TreeTransducer::new(
        input,
        output,
        |sym| {
            let identity = |states: Vec<CtState>, result: CtState| TransducerRule {
                child_states: states,
                result,
                template: Template::Node(*sym, (0..sym.arity()).map(Template::Var).collect()),
            };
            match *sym {
                TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => {
                    vec![identity(vec![], Passthrough)]
                }
                TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
                    vec![identity(vec![Passthrough], Passthrough), identity(vec![Marked], Marked)]
                }
                TreeSymbol::RCall { rule } => vec![
                    TransducerRule {
                        child_states: vec![Marked, Passthrough],
                        result: Marked,
                        template: Template::Node(
                            TreeSymbol::NCall { rule },
                            vec![Template::Var(0)],
                        ),
                    },
                    identity(vec![Passthrough, Passthrough], Passthrough),
                    identity(vec![Passthrough, Marked], Marked),
                ],
                TreeSymbol::Use { rule, lock, reentrant } => vec![
                    TransducerRule {
                        child_states: vec![Marked, Passthrough],
                        result: Marked,
                        template: Template::Node(
                            TreeSymbol::Acq { rule, lock, reentrant },
                            vec![Template::Var(0)],
                        ),
                    },
                    identity(vec![Passthrough, Passthrough], Passthrough),
                    identity(vec![Passthrough, Marked], Marked),
                ],
                TreeSymbol::Spawn { .. } => vec![
                    identity(vec![Passthrough, Passthrough], Passthrough),
                    identity(vec![Marked, Passthrough], Passthrough),
                    identity(vec![Passthrough, Marked], Marked),
                    identity(vec![Marked, Marked], Marked),
                ],
                TreeSymbol::Cut { control, stack, .. } => vec![TransducerRule {
                    child_states: vec![Passthrough],
                    result: Marked,
                    template: Template::Node(TreeSymbol::Nil { control, stack }, vec![]),
                }],
            }
        },
        |state| *state == Marked,
    )
}

/// Post-cut rule restriction states.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DeltaCutState {
    /// No cut in the main thread, no disallowed rule anywhere relevant.
    Clean,
    /// A disallowed rule occurred and no cut in the main thread yet; only
    /// acceptable strictly before the cut.
    Tainted,
    /// The main thread's cut has been passed; only allowed rules below it.
    AfterCut,
}

/// Checks that only rules from the given subset are used after the cut.
pub struct TDeltaCut {
    alphabet: Alphabet,
    allowed: RuleSet,
}

pub fn t_delta_cut(dpn: Arc<MonitorDpn>, allowed: RuleSet) -> TDeltaCut {
    let alphabet = Alphabet::with_cuts(dpn, 1);
    TDeltaCut { alphabet, allowed }
}

impl TreeAutomaton for TDeltaCut {
    type State = DeltaCutState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[DeltaCutState]) -> Vec<DeltaCutState> {
        use DeltaCutState::*;
        let good = |rule| self.allowed.contains(rule);
        let out = match *sym {
            TreeSymbol::Nil { .. } => Some(Clean),
            TreeSymbol::Ret { rule } => Some(if good(rule) { Clean } else { Tainted }),
            TreeSymbol::Base { rule }
            | TreeSymbol::NCall { rule }
            | TreeSymbol::Acq { rule, .. } => match (good(rule), children[0]) {
                (true, q) => Some(q),
                (false, Clean | Tainted) => Some(Tainted),
                (false, AfterCut) => Some(AfterCut),
            },
            TreeSymbol::RCall { rule } | TreeSymbol::Use { rule, .. } => {
                match (children[0], children[1]) {
                    (AfterCut, Clean) => Some(AfterCut),
                    (Clean | Tainted, AfterCut) => Some(AfterCut),
                    (Clean, Clean) => Some(if good(rule) { Clean } else { Tainted }),
                    (Tainted, Clean | Tainted) => Some(Tainted),
                    (Clean, Tainted) => Some(Tainted),
                    _ => None,
                }
            }
            TreeSymbol::Spawn { rule } => match (children[0], children[1]) {
                (Clean, Clean) => Some(if good(rule) { Clean } else { Tainted }),
                (Tainted, Clean | Tainted) => Some(Tainted),
                (Clean, Tainted) => Some(Tainted),
                (AfterCut, Clean) => Some(if good(rule) { Clean } else { Tainted }),
                (AfterCut, AfterCut) => Some(AfterCut),
                (AfterCut, Tainted) => Some(Tainted),
                _ => None,
            },
            TreeSymbol::Cut { .. } => match children[0] {
                Clean => Some(AfterCut),
                _ => None,
            },
        };
        out.into_iter().collect()
    }

    fn accepting(&self, state: &DeltaCutState) -> bool {
        *state == DeltaCutState::AfterCut
    }
}

/// Release structure: cut flag, locks used by the main thread after the cut,
/// and the release graph. Accepted iff the graph is acyclic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct RelState {
    pub cut_seen: bool,
    pub used: LockSet,
    pub graph: LockGraph,
}

/// Computes the release structure of a cut tree: an edge `y → x` means lock
/// `y` must be used before the open use of `x` spanning the cut can be
/// closed.
pub struct TRh {
    alphabet: Alphabet,
}

pub fn t_rh(dpn: Arc<MonitorDpn>) -> TRh {
    TRh { alphabet: Alphabet::with_cuts(dpn, 1) }
}

impl TreeAutomaton for TRh {
    type State = RelState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[RelState]) -> Vec<RelState> {
        let out = match *sym {
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => Some(RelState::default()),
            TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
                Some(children[0].clone())
            }
            TreeSymbol::Cut { .. } => {
                let c = &children[0];
                if c.cut_seen {
                    None
                } else {
                    Some(RelState { cut_seen: true, ..c.clone() })
                }
            }
            TreeSymbol::RCall { .. } => {
                let (l, r) = (&children[0], &children[1]);
                match (l.cut_seen, r.cut_seen) {
                    (_, false) => Some(RelState {
                        cut_seen: l.cut_seen,
                        used: l.used.union(&r.used),
                        graph: l.graph.union(&r.graph),
                    }),
                    (false, true) => Some(RelState {
                        cut_seen: true,
                        used: r.used.clone(),
                        graph: l.graph.union(&r.graph),
                    }),
                    (true, true) => None,
                }
            }
            TreeSymbol::Use { lock, reentrant, .. } => {
                let (l, r) = (&children[0], &children[1]);
                match (l.cut_seen, r.cut_seen, reentrant) {
                    // The cut lies in the continuation: the whole use is
                    // before the cut and its body's uses are discarded.
                    (false, true, _) => Some(RelState {
                        cut_seen: true,
                        used: r.used.clone(),
                        graph: l.graph.union(&r.graph),
                    }),
                    (true, true, _) => None,
                    (_, false, true) => Some(RelState {
                        cut_seen: l.cut_seen,
                        used: l.used.union(&r.used),
                        graph: l.graph.union(&r.graph),
                    }),
                    // A non-reentrant use entirely after the cut.
                    (false, false, false) => Some(RelState {
                        cut_seen: false,
                        used: l.used.union(&r.used).with(lock),
                        graph: l.graph.union(&r.graph),
                    }),
                    // An open use spanning the cut: everything used inside
                    // it after the cut must come before its release.
                    (true, false, false) => {
                        let mut graph = l.graph.union(&r.graph);
                        for y in l.used.iter() {
                            graph.insert(y, lock);
                        }
                        Some(RelState {
                            cut_seen: true,
                            used: l.used.union(&r.used),
                            graph,
                        })
                    }
                }
            }
            TreeSymbol::Spawn { .. } => {
                let (l, r) = (&children[0], &children[1]);
                Some(RelState {
                    cut_seen: r.cut_seen,
                    used: r.used.clone(),
                    graph: l.graph.union(&r.graph),
                })
            }
        };
        out.into_iter().collect()
    }

    fn accepting(&self, state: &RelState) -> bool {
        state.graph.is_acyclic()
    }

    fn subsumes(&self, keep: &RelState, drop: &RelState) -> bool {
        keep.cut_seen == drop.cut_seen
            && keep.used.is_subset(&drop.used)
            && keep.graph.is_subgraph(&drop.graph)
    }
}

/// Holds-through structure: cut flag, locks finally acquired before the cut,
/// locks used or finally acquired after it. Accepted iff disjoint.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct HtState {
    pub cut_seen: bool,
    pub acquired_before: LockSet,
    pub used_after: LockSet,
}

/// Checks that no lock finally acquired before the cut is used afterwards.
pub struct THt {
    alphabet: Alphabet,
}

pub fn t_ht(dpn: Arc<MonitorDpn>) -> THt {
    THt { alphabet: Alphabet::with_cuts(dpn, 1) }
}

impl TreeAutomaton for THt {
    type State = HtState;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[HtState]) -> Vec<HtState> {
        let binary = |l: &HtState, r: &HtState, extra_use: Option<LockId>| {
            match (l.cut_seen, r.cut_seen) {
                (false, false) => Some(HtState {
                    cut_seen: false,
                    acquired_before: l.acquired_before.union(&r.acquired_before),
                    used_after: {
                        let mut u = l.used_after.union(&r.used_after);
                        if let Some(x) = extra_use {
                            u.insert(x);
                        }
                        u
                    },
                }),
                (true, false) => Some(HtState {
                    cut_seen: true,
                    acquired_before: l.acquired_before.clone(),
                    used_after: l.used_after.union(&r.used_after),
                }),
                (false, true) => Some(HtState {
                    cut_seen: true,
                    acquired_before: l.acquired_before.union(&r.acquired_before),
                    used_after: r.used_after.clone(),
                }),
                (true, true) => None,
            }
        };
        let out = match *sym {
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => Some(HtState::default()),
            TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } => Some(children[0].clone()),
            TreeSymbol::Cut { .. } => {
                let c = &children[0];
                if c.cut_seen {
                    None
                } else {
                    Some(HtState { cut_seen: true, ..c.clone() })
                }
            }
            TreeSymbol::Acq { lock, reentrant, .. } => {
                let c = &children[0];
                if reentrant {
                    Some(c.clone())
                } else if c.cut_seen {
                    Some(HtState {
                        cut_seen: true,
                        acquired_before: c.acquired_before.with(lock),
                        used_after: c.used_after.clone(),
                    })
                } else {
                    Some(HtState {
                        cut_seen: false,
                        acquired_before: c.acquired_before.clone(),
                        used_after: c.used_after.with(lock),
                    })
                }
            }
            TreeSymbol::RCall { .. } => binary(&children[0], &children[1], None),
            TreeSymbol::Use { lock, reentrant, .. } => {
                let extra = if reentrant { None } else { Some(lock) };
                // Reentrant uses behave like returning calls; non-reentrant
                // uses additionally record the lock when fully after the cut.
                binary(&children[0], &children[1], extra)
            }
            TreeSymbol::Spawn { .. } => {
                let (l, r) = (&children[0], &children[1]);
                Some(HtState {
                    cut_seen: r.cut_seen,
                    acquired_before: l.acquired_before.union(&r.acquired_before),
                    used_after: l.used_after.union(&r.used_after),
                })
            }
        };
        out.into_iter().collect()
    }

    fn accepting(&self, state: &HtState) -> bool {
        !state.acquired_before.intersects(&state.used_after)
    }

    fn subsumes(&self, keep: &HtState, drop: &HtState) -> bool {
        keep.cut_seen == drop.cut_seen
            && keep.acquired_before.is_subset(&drop.acquired_before)
            && keep.used_after.is_subset(&drop.used_after)
    }
}

/// May-happen-in-parallel target automaton, generalized from two sets to one
/// flag per pattern: a leaf matching several patterns contributes one of its
/// indices per run, so a full flag set always needs as many threads as
/// patterns.
pub struct TMhp {
    alphabet: Alphabet,
    patterns: Vec<BTreeSet<StackId>>,
}

pub fn t_mhp(dpn: Arc<MonitorDpn>, patterns: Vec<BTreeSet<StackId>>, with_cut: bool) -> TMhp {
    assert!(!patterns.is_empty(), "at least one pattern required");
    let alphabet = if with_cut {
        Alphabet::with_cuts(dpn, 1)
    } else {
        Alphabet::cut_free(dpn)
    };
    TMhp { alphabet, patterns }
}

impl TreeAutomaton for TMhp {
    type State = BTreeSet<usize>;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        match *sym {
            TreeSymbol::Nil { stack, .. } => {
                let matching: Vec<usize> = self
                    .patterns
                    .iter()
                    .enumerate()
                    .filter(|(_, pat)| pat.contains(&stack))
                    .map(|(i, _)| i)
                    .collect();
                if matching.is_empty() {
                    vec![BTreeSet::new()]
                } else {
                    matching
                        .into_iter()
                        .map(|i| BTreeSet::from([i]))
                        .collect()
                }
            }
            TreeSymbol::Ret { .. } => vec![BTreeSet::new()],
            TreeSymbol::Base { .. }
            | TreeSymbol::NCall { .. }
            | TreeSymbol::Acq { .. }
            | TreeSymbol::Cut { .. } => vec![children[0].clone()],
            TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } | TreeSymbol::Spawn { .. } => {
                let mut s = children[0].clone();
                s.extend(children[1].iter().copied());
                vec![s]
            }
        }
    }

    fn accepting(&self, state: &Self::State) -> bool {
        state.len() == self.patterns.len()
    }
}

/// Accepts trees in which some thread has just reached a top-of-stack symbol
/// from the given set.
pub struct TTop {
    alphabet: Alphabet,
    targets: BTreeSet<StackId>,
}

pub fn t_top(dpn: Arc<MonitorDpn>, targets: BTreeSet<StackId>, with_cut: bool) -> TTop {
    let alphabet = if with_cut {
        Alphabet::with_cuts(dpn, 1)
    } else {
        Alphabet::cut_free(dpn)
    };
    TTop { alphabet, targets }
}

impl TreeAutomaton for TTop {
    type State = bool;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[bool]) -> Vec<bool> {
        match *sym {
            TreeSymbol::Nil { stack, .. } => vec![self.targets.contains(&stack)],
            TreeSymbol::Ret { .. } => vec![false],
            TreeSymbol::Base { .. }
            | TreeSymbol::NCall { .. }
            | TreeSymbol::Acq { .. }
            | TreeSymbol::Cut { .. } => vec![children[0]],
            TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } | TreeSymbol::Spawn { .. } => {
                vec![children[0] || children[1]]
            }
        }
    }

    fn accepting(&self, state: &bool) -> bool {
        *state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{accepts, accepts_tree, is_empty, product};
    use crate::parse::parse_dpn;
    use crate::symbols::RuleId;
    use crate::tree::ExecTree;

    fn toy() -> Arc<MonitorDpn> {
        Arc::new(parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap())
    }

    fn montoy() -> Arc<MonitorDpn> {
        Arc::new(
            parse_dpn("init q g\nlock a\nrule r1 mon(a) q g -> q g2 h\nrule r2 ret q g2 -> q\n")
                .unwrap(),
        )
    }

    #[test]
    fn tm_accepts_initial_nil() {
        let dpn = toy();
        let a = tm(Arc::clone(&dpn), false);
        let t = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert!(accepts_tree(&a, &t).unwrap());
    }

    #[test]
    fn tm_emptiness_witness_is_initial_nil() {
        let dpn = toy();
        let a = tm(Arc::clone(&dpn), false);
        let report = is_empty(&a);
        let w = report.witness.expect("nonempty");
        assert_eq!(w.to_tree(), ExecTree::nil(dpn.init_control, dpn.init_stack));
        assert_eq!(w.to_tree().node_count(), 1);
    }

    #[test]
    fn tm_rejects_contradictory_reentrance_flag() {
        let dpn = montoy();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        // A reentrant flag on a fresh lock contradicts the side condition.
        let t = ExecTree::use_(
            RuleId(0),
            LockId(0),
            true,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(dpn.init_control, h),
        );
        let a = tm(Arc::clone(&dpn), false);
        assert!(!accepts_tree(&a, &t).unwrap());
        // The correct flag is accepted.
        let good = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(dpn.init_control, h),
        );
        assert!(accepts_tree(&a, &good).unwrap());
    }

    #[test]
    fn tm_state_tracks_held_locks() {
        let dpn = montoy();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        let good = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(dpn.init_control, h),
        );
        let a = tm(Arc::clone(&dpn), false);
        let states = accepts(&a, &good).unwrap();
        let accepting: Vec<_> = states.iter().filter(|s| a.accepting(s)).collect();
        assert!(!accepting.is_empty());
        for s in accepting {
            assert!(s.held.is_empty());
        }
    }

    #[test]
    fn t_delta_empty_set_keeps_only_nil() {
        let dpn = toy();
        let a = t_delta(Arc::clone(&dpn), RuleSet::empty(), false);
        let nil = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert!(accepts_tree(&a, &nil).unwrap());
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        let step = ExecTree::base(RuleId(0), ExecTree::nil(dpn.init_control, h));
        assert!(!accepts_tree(&a, &step).unwrap());
    }

    #[test]
    fn t_ah_rejects_double_final_acquisition() {
        // Two threads both finally acquiring the same lock.
        let dpn = Arc::new(
            parse_dpn(
                "init q m0\n\
                 lock a\n\
                 rule r1 spawn q m0 -> [q t0] q m1\n\
                 rule r2 mon(a) q m1 -> q b0 m2\n\
                 rule r3 mon(a) q t0 -> q c0 t1\n",
            )
            .unwrap(),
        );
        let b0 = StackId(dpn.stacks.lookup("b0").unwrap());
        let c0 = StackId(dpn.stacks.lookup("c0").unwrap());
        let q = dpn.init_control;
        let t = ExecTree::spawn(
            RuleId(0),
            ExecTree::acq(RuleId(2), LockId(0), false, ExecTree::nil(q, c0)),
            ExecTree::acq(RuleId(1), LockId(0), false, ExecTree::nil(q, b0)),
        );
        let ah = t_ah(Arc::clone(&dpn), false);
        assert!(!accepts_tree(&ah, &t).unwrap());
        // It is lock-insensitively fine.
        let m = tm(Arc::clone(&dpn), false);
        assert!(accepts_tree(&m, &t).unwrap());
    }

    #[test]
    fn t_ah_acquisition_graph_cycle_rejected() {
        // Crosswise: left branch finally holds a then uses b, right branch
        // finally holds b then uses a.
        let dpn = Arc::new(
            parse_dpn(
                "init q m0\n\
                 lock a\n\
                 lock b\n\
                 rule r1 spawn q m0 -> [q t0] q m1\n\
                 rule r2 mon(a) q m1 -> q b0 m2\n\
                 rule r3 mon(b) q b0 -> q d0 b1\n\
                 rule r4 ret q d0 -> q\n\
                 rule r5 mon(b) q t0 -> q c0 t1\n\
                 rule r6 mon(a) q c0 -> q e0 c1\n\
                 rule r7 ret q e0 -> q\n",
            )
            .unwrap(),
        );
        let q = dpn.init_control;
        let stack = |n: &str| StackId(dpn.stacks.lookup(n).unwrap());
        let (a, b) = (LockId(0), LockId(1));
        let main_branch = ExecTree::acq(
            RuleId(1),
            a,
            false,
            ExecTree::use_(
                RuleId(2),
                b,
                false,
                ExecTree::ret(RuleId(3)),
                ExecTree::nil(q, stack("b1")),
            ),
        );
        let spawned_branch = ExecTree::acq(
            RuleId(4),
            b,
            false,
            ExecTree::use_(
                RuleId(5),
                a,
                false,
                ExecTree::ret(RuleId(6)),
                ExecTree::nil(q, stack("c1")),
            ),
        );
        let t = ExecTree::spawn(RuleId(0), spawned_branch, main_branch);
        let ah = t_ah(Arc::clone(&dpn), false);
        assert!(!accepts_tree(&ah, &t).unwrap());
        let m = tm(Arc::clone(&dpn), false);
        assert!(accepts_tree(&m, &t).unwrap());
        // The product is what Prop 4 talks about.
        let p = product(m, ah).unwrap();
        assert!(!accepts_tree(&p, &t).unwrap());
    }

    #[test]
    fn t_cwf_accepts_simple_cut() {
        let dpn = toy();
        let cwf = t_cwf(Arc::clone(&dpn));
        let t = ExecTree::cut(
            dpn.init_control,
            dpn.init_stack,
            1,
            ExecTree::nil(dpn.init_control, dpn.init_stack),
        );
        assert!(accepts_tree(&cwf, &t).unwrap());
        // No cut at all: rejected.
        assert!(!accepts_tree(&cwf, &ExecTree::nil(dpn.init_control, dpn.init_stack)).unwrap());
        // Two cuts in one thread: rejected.
        let double = ExecTree::cut(dpn.init_control, dpn.init_stack, 1, t.clone());
        assert!(!accepts_tree(&cwf, &double).unwrap());
    }

    #[test]
    fn t_ct_extracts_initial_nil() {
        let dpn = toy();
        let ct = t_ct(Arc::clone(&dpn));
        let t = ExecTree::cut(
            dpn.init_control,
            dpn.init_stack,
            1,
            ExecTree::nil(dpn.init_control, dpn.init_stack),
        );
        let outs = ct.outputs(&t).unwrap();
        assert_eq!(outs, vec![ExecTree::nil(dpn.init_control, dpn.init_stack)]);
    }

    #[test]
    fn t_ct_agrees_with_marked_prefix() {
        let dpn = montoy();
        let root = crate::model::ThreadId::root();
        let pre = crate::model::Execution::new(vec![(root.clone(), RuleId(0))]);
        let suf = crate::model::Execution::new(vec![(root, RuleId(1))]);
        let cut = crate::tree::cut_tree_of_executions(&dpn, &pre, &suf).unwrap();
        let ct = t_ct(Arc::clone(&dpn));
        let outs = ct.outputs(&cut).unwrap();
        assert_eq!(outs, vec![crate::tree::marked_prefix(&cut).unwrap()]);
    }

    #[test]
    fn t_mhp_single_pattern_on_nil() {
        let dpn = toy();
        let pattern = BTreeSet::from([dpn.init_stack]);
        let a = t_mhp(Arc::clone(&dpn), vec![pattern], false);
        assert!(accepts_tree(&a, &ExecTree::nil(dpn.init_control, dpn.init_stack)).unwrap());
    }

    #[test]
    fn t_mhp_overlapping_patterns_need_two_threads() {
        // One leaf matching both patterns must not satisfy them alone.
        let dpn = toy();
        let g = dpn.init_stack;
        let a = t_mhp(
            Arc::clone(&dpn),
            vec![BTreeSet::from([g]), BTreeSet::from([g])],
            false,
        );
        assert!(!accepts_tree(&a, &ExecTree::nil(dpn.init_control, g)).unwrap());
    }

    #[test]
    fn t_top_examples() {
        let dpn = montoy();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        let a = t_top(Arc::clone(&dpn), BTreeSet::from([h]), false);
        // NIL with target symbol accepted.
        assert!(accepts_tree(&a, &ExecTree::nil(dpn.init_control, h)).unwrap());
        // RET-terminated branch contributes nothing, but the target leaf in
        // the continuation suffices.
        let t = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(dpn.init_control, h),
        );
        assert!(accepts_tree(&a, &t).unwrap());
        let other = t_top(Arc::clone(&dpn), BTreeSet::from([dpn.init_stack]), false);
        assert!(!accepts_tree(&other, &t).unwrap());
    }

    #[test]
    fn t_delta_cut_restricts_suffix_only() {
        let dpn = toy();
        let q = dpn.init_control;
        let g = dpn.init_stack;
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        let none = RuleSet::empty();
        let a = t_delta_cut(Arc::clone(&dpn), none);
        // Base step before the cut: fine even though r1 is disallowed.
        let before = ExecTree::base(RuleId(0), ExecTree::cut(q, h, 1, ExecTree::nil(q, h)));
        assert!(accepts_tree(&a, &before).unwrap());
        // Base step after the cut: rejected.
        let after = ExecTree::cut(q, g, 1, ExecTree::base(RuleId(0), ExecTree::nil(q, h)));
        assert!(!accepts_tree(&a, &after).unwrap());
        // With the rule allowed both are fine.
        let all = t_delta_cut(Arc::clone(&dpn), dpn.all_rules());
        assert!(accepts_tree(&all, &before).unwrap());
        assert!(accepts_tree(&all, &after).unwrap());
    }

    #[test]
    fn t_rh_open_use_edge_direction() {
        let dpn = montoy();
        let q = dpn.init_control;
        let g2 = StackId(dpn.stacks.lookup("g2").unwrap());
        // Open use of `a` spanning the cut, with no inner uses: no edges.
        let t = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::cut(q, g2, 1, ExecTree::ret(RuleId(1))),
            ExecTree::nil(q, StackId(dpn.stacks.lookup("h").unwrap())),
        );
        let rh = t_rh(Arc::clone(&dpn));
        let states = accepts(&rh, &t).unwrap();
        assert!(states.iter().all(|s| s.graph.is_empty() && s.cut_seen));
        assert!(accepts_tree(&rh, &t).unwrap());
    }

    #[test]
    fn t_ht_acq_position_relative_to_cut() {
        let dpn = montoy();
        let q = dpn.init_control;
        let g2 = StackId(dpn.stacks.lookup("g2").unwrap());
        let ht = t_ht(Arc::clone(&dpn));
        // Final acquisition before the cut lands in acquired_before.
        let before = ExecTree::acq(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::cut(q, g2, 1, ExecTree::nil(q, g2)),
        );
        let states = accepts(&ht, &before).unwrap();
        assert!(states
            .iter()
            .all(|s| s.acquired_before.contains(LockId(0)) && s.used_after.is_empty()));
        // Final acquisition after the cut lands in used_after.
        let after = ExecTree::cut(
            q,
            dpn.init_stack,
            1,
            ExecTree::acq(RuleId(0), LockId(0), false, ExecTree::nil(q, g2)),
        );
        let states = accepts(&ht, &after).unwrap();
        assert!(states
            .iter()
            .all(|s| s.used_after.contains(LockId(0)) && s.acquired_before.is_empty()));
    }
}
