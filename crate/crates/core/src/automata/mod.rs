//! Generic bottom-up nondeterministic finite tree automata over the
//! execution-tree alphabet: membership, products, emptiness with minimal
//! witness extraction, a directed emptiness check for products, and erasure
//! of unary symbols.
//!
//! States are opaque values enumerated lazily; no automaton ever materializes
//! its nominal state space. Transitions are given in function form.

mod transducer;

pub use transducer::{inverse_image, InverseImage, Template, TransducerRule, TreeTransducer};

use crate::model::{MonitorDpn, RuleKind};
use crate::tree::{ExecTree, TreeSymbol};
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Debug;
use std::hash::Hash;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("symbol {0:?} is not in the automaton's alphabet")]
    SymbolNotInAlphabet(TreeSymbol),
    #[error("alphabet mismatch between automata")]
    AlphabetMismatch,
    #[error("cannot erase non-unary symbol {0:?}")]
    NonUnaryErased(TreeSymbol),
    #[error("operation cancelled")]
    Cancelled,
}

/// Cooperative cancellation for long saturations.
#[derive(Clone, Debug, Default)]
pub struct CancelToken {
    flag: Arc<AtomicBool>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.flag.store(true, AtomicOrdering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.flag.load(AtomicOrdering::SeqCst)
    }
}

/// The finite ranked alphabet induced by a model and a number of cut levels
/// (0 for the cut-free alphabet).
#[derive(Clone, Debug)]
pub struct Alphabet {
    dpn: Arc<MonitorDpn>,
    cut_levels: u32,
}

impl PartialEq for Alphabet {
    fn eq(&self, other: &Self) -> bool {
        self.cut_levels == other.cut_levels
            && (Arc::ptr_eq(&self.dpn, &other.dpn) || *self.dpn == *other.dpn)
    }
}

impl Alphabet {
    pub fn cut_free(dpn: Arc<MonitorDpn>) -> Alphabet {
        Alphabet { dpn, cut_levels: 0 }
    }

    pub fn with_cuts(dpn: Arc<MonitorDpn>, cut_levels: u32) -> Alphabet {
        Alphabet { dpn, cut_levels }
    }

    pub fn dpn(&self) -> &Arc<MonitorDpn> {
        &self.dpn
    }

    pub fn cut_levels(&self) -> u32 {
        self.cut_levels
    }

    pub fn without_cuts(&self) -> Alphabet {
        Alphabet {
            dpn: Arc::clone(&self.dpn),
            cut_levels: 0,
        }
    }

    pub fn with_cut_levels(&self, cut_levels: u32) -> Alphabet {
        Alphabet {
            dpn: Arc::clone(&self.dpn),
            cut_levels,
        }
    }

    pub fn contains(&self, sym: &TreeSymbol) -> bool {
        let dpn = &self.dpn;
        let valid_control = |c: crate::symbols::ControlId| c.index() < dpn.controls.len();
        let valid_stack = |s: crate::symbols::StackId| s.index() < dpn.stacks.len();
        match *sym {
            TreeSymbol::Nil { control, stack } => valid_control(control) && valid_stack(stack),
            TreeSymbol::Cut { control, stack, level } => {
                valid_control(control)
                    && valid_stack(stack)
                    && level >= 1
                    && level <= self.cut_levels
            }
            TreeSymbol::Ret { rule } => {
                rule.index() < dpn.rules().len()
                    && matches!(dpn.rule(rule).kind, RuleKind::Return { .. })
            }
            TreeSymbol::Base { rule } => {
                rule.index() < dpn.rules().len()
                    && matches!(dpn.rule(rule).kind, RuleKind::Base { .. })
            }
            TreeSymbol::NCall { rule } | TreeSymbol::RCall { rule } => {
                rule.index() < dpn.rules().len()
                    && matches!(dpn.rule(rule).kind, RuleKind::Call { .. })
            }
            TreeSymbol::Acq { rule, lock, .. } | TreeSymbol::Use { rule, lock, .. } => {
                rule.index() < dpn.rules().len()
                    && matches!(dpn.rule(rule).kind, RuleKind::Monitor { lock: l, .. } if l == lock)
            }
            TreeSymbol::Spawn { rule } => {
                rule.index() < dpn.rules().len()
                    && matches!(dpn.rule(rule).kind, RuleKind::Spawn { .. })
            }
        }
    }

    pub fn check(&self, sym: &TreeSymbol) -> Result<(), AutomatonError> {
        if self.contains(sym) {
            Ok(())
        } else {
            Err(AutomatonError::SymbolNotInAlphabet(*sym))
        }
    }

    pub fn check_tree(&self, tree: &ExecTree) -> Result<(), AutomatonError> {
        self.check(&tree.sym)?;
        for c in &tree.children {
            self.check_tree(c)?;
        }
        Ok(())
    }

    /// Enumerates the whole alphabet.
    pub fn symbols(&self) -> Vec<TreeSymbol> {
        let dpn = &self.dpn;
        let mut out = Vec::new();
        for c in 0..dpn.controls.len() as u32 {
            for s in 0..dpn.stacks.len() as u32 {
                out.push(TreeSymbol::Nil {
                    control: crate::symbols::ControlId(c),
                    stack: crate::symbols::StackId(s),
                });
            }
        }
        for rule in dpn.rules() {
            match rule.kind {
                RuleKind::Base { .. } => out.push(TreeSymbol::Base { rule: rule.id }),
                RuleKind::Return { .. } => out.push(TreeSymbol::Ret { rule: rule.id }),
                RuleKind::Spawn { .. } => out.push(TreeSymbol::Spawn { rule: rule.id }),
                RuleKind::Call { .. } => {
                    out.push(TreeSymbol::NCall { rule: rule.id });
                    out.push(TreeSymbol::RCall { rule: rule.id });
                }
                RuleKind::Monitor { lock, .. } => {
                    for reentrant in [false, true] {
                        out.push(TreeSymbol::Acq { rule: rule.id, lock, reentrant });
                        out.push(TreeSymbol::Use { rule: rule.id, lock, reentrant });
                    }
                }
            }
        }
        for level in 1..=self.cut_levels {
            for c in 0..dpn.controls.len() as u32 {
                for s in 0..dpn.stacks.len() as u32 {
                    out.push(TreeSymbol::Cut {
                        control: crate::symbols::ControlId(c),
                        stack: crate::symbols::StackId(s),
                        level,
                    });
                }
            }
        }
        out
    }

    /// All cut symbols of this alphabet.
    pub fn cut_symbols(&self) -> Vec<TreeSymbol> {
        self.symbols().into_iter().filter(TreeSymbol::is_cut).collect()
    }
}

/// A bottom-up nondeterministic finite tree automaton.
pub trait TreeAutomaton {
    type State: Clone + Eq + Ord + Hash + Debug;

    fn alphabet(&self) -> &Alphabet;

    /// Result states for `sym` applied to the given child states.
    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State>;

    fn accepting(&self, state: &Self::State) -> bool;

    /// Optional partial order for answer subsumption: `keep ⊑ drop` means a
    /// saturation that has produced `keep` may drop `drop`.
    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        let _ = (keep, drop);
        false
    }
}

/// Additional top-down interface: enumerable accepting states and child-state
/// expansions, used by the directed emptiness check.
pub trait TopDownAutomaton: TreeAutomaton {
    /// The accepting states, enumerated.
    fn root_states(&self) -> Vec<Self::State>;

    /// All child-state vectors from which `sym` can produce `parent`.
    fn expansions(&self, sym: &TreeSymbol, parent: &Self::State) -> Vec<Vec<Self::State>>;
}

/// Exact bottom-up state sets of a tree; membership holds iff some accepting
/// state is present.
pub fn accepts<A: TreeAutomaton>(
    automaton: &A,
    tree: &ExecTree,
) -> Result<BTreeSet<A::State>, AutomatonError> {
    automaton.alphabet().check(&tree.sym)?;
    let child_sets: Vec<BTreeSet<A::State>> = tree
        .children
        .iter()
        .map(|c| accepts(automaton, c))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeSet::new();
    match child_sets.len() {
        0 => out.extend(automaton.transitions(&tree.sym, &[])),
        1 => {
            for s in &child_sets[0] {
                out.extend(automaton.transitions(&tree.sym, std::slice::from_ref(s)));
            }
        }
        2 => {
            for l in &child_sets[0] {
                for r in &child_sets[1] {
                    out.extend(automaton.transitions(&tree.sym, &[l.clone(), r.clone()]));
                }
            }
        }
        _ => unreachable!("alphabet arity is at most 2"),
    }
    Ok(out)
}

/// Whether some accepting state is reachable at the root of `tree`.
pub fn accepts_tree<A: TreeAutomaton>(
    automaton: &A,
    tree: &ExecTree,
) -> Result<bool, AutomatonError> {
    Ok(accepts(automaton, tree)?
        .iter()
        .any(|s| automaton.accepting(s)))
}

/// An accepting (or partial) run: the tree together with the state assigned
/// to each node.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Run<S> {
    pub sym: TreeSymbol,
    pub state: S,
    pub children: Vec<Rc<Run<S>>>,
}

impl<S: Clone> Run<S> {
    pub fn to_tree(&self) -> ExecTree {
        ExecTree::new(
            self.sym,
            self.children.iter().map(|c| c.to_tree()).collect(),
        )
    }
}

impl<S: Clone + Eq + Ord + Hash + Debug> Run<S> {
    /// Checks that each node's state is produced by its children's states.
    pub fn validate<A: TreeAutomaton<State = S>>(&self, automaton: &A) -> bool {
        let child_states: Vec<S> = self.children.iter().map(|c| c.state.clone()).collect();
        if !automaton
            .transitions(&self.sym, &child_states)
            .contains(&self.state)
        {
            return false;
        }
        self.children.iter().all(|c| c.validate(automaton))
    }
}

/// Compares runs as trees: symbol first, then children, ignoring states.
fn cmp_run_trees<S>(a: &Run<S>, b: &Run<S>) -> Ordering {
    a.sym.cmp(&b.sym).then_with(|| {
        for (x, y) in a.children.iter().zip(b.children.iter()) {
            let o = cmp_run_trees(x, y);
            if o != Ordering::Equal {
                return o;
            }
        }
        a.children.len().cmp(&b.children.len())
    })
}

struct HeapEntry<S> {
    cost: u64,
    run: Rc<Run<S>>,
}

impl<S: Ord> PartialEq for HeapEntry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<S: Ord> Eq for HeapEntry<S> {}
impl<S: Ord> PartialOrd for HeapEntry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Ord> Ord for HeapEntry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want smallest first.
        let forward = self
            .cost
            .cmp(&other.cost)
            .then_with(|| cmp_run_trees(&self.run, &other.run))
            .then_with(|| self.run.state.cmp(&other.run.state));
        forward.reverse()
    }
}

type SiblingPair<'x, S> = (&'x S, &'x Rc<Run<S>>, &'x S, &'x Rc<Run<S>>);
type Finalized<S> = Vec<(S, u64, Rc<Run<S>>)>;
type TransitionMemo = Mutex<HashMap<(TreeSymbol, Vec<u32>), Vec<u32>>>;

/// Verdict and witness of a directed emptiness check over a product.
pub type DirectedResult<A, B> = Result<DirectedReport<(A, B)>, AutomatonError>;

#[derive(Clone, Debug, Default)]
pub struct EmptinessOptions {
    /// Drop a newly productive state when an already kept state subsumes it.
    pub subsumption: bool,
    pub cancel: Option<CancelToken>,
}

#[derive(Clone, Debug)]
pub struct EmptinessReport<S> {
    /// A minimal-node-count accepting run, if the language is non-empty.
    pub witness: Option<Run<S>>,
    /// Number of productive states finalized during saturation.
    pub states_explored: usize,
}

impl<S> EmptinessReport<S> {
    pub fn is_empty(&self) -> bool {
        self.witness.is_none()
    }
}

/// Emptiness by uniform-cost bottom-up saturation. Returns a witness of
/// minimal node count; ties are broken by symbol order, then child order.
pub fn is_empty<A: TreeAutomaton>(automaton: &A) -> EmptinessReport<A::State> {
    is_empty_with(automaton, &EmptinessOptions::default()).expect("no cancellation configured")
}

pub fn is_empty_with<A: TreeAutomaton>(
    automaton: &A,
    options: &EmptinessOptions,
) -> Result<EmptinessReport<A::State>, AutomatonError> {
    let symbols = automaton.alphabet().symbols();
    let mut heap: BinaryHeap<HeapEntry<A::State>> = BinaryHeap::new();
    let mut finalized: Finalized<A::State> = Vec::new();
    let mut finalized_states: HashSet<A::State> = HashSet::new();

    for sym in symbols.iter().filter(|s| s.arity() == 0) {
        for state in automaton.transitions(sym, &[]) {
            heap.push(HeapEntry {
                cost: 1,
                run: Rc::new(Run { sym: *sym, state, children: vec![] }),
            });
        }
    }

    while let Some(entry) = heap.pop() {
        if let Some(cancel) = &options.cancel {
            if cancel.is_cancelled() {
                return Err(AutomatonError::Cancelled);
            }
        }
        let state = entry.run.state.clone();
        if finalized_states.contains(&state) {
            continue;
        }
        if automaton.accepting(&state) {
            return Ok(EmptinessReport {
                witness: Some((*entry.run).clone()),
                states_explored: finalized.len() + 1,
            });
        }
        if options.subsumption
            && finalized
                .iter()
                .any(|(kept, _, _)| kept != &state && automaton.subsumes(kept, &state))
        {
            continue;
        }
        finalized_states.insert(state.clone());
        finalized.push((state, entry.cost, Rc::clone(&entry.run)));
        let (new_state, new_cost, new_run) = finalized.last().cloned().unwrap();

        for sym in &symbols {
            match sym.arity() {
                1 => {
                    for next in automaton.transitions(sym, std::slice::from_ref(&new_state)) {
                        if finalized_states.contains(&next) {
                            continue;
                        }
                        heap.push(HeapEntry {
                            cost: new_cost + 1,
                            run: Rc::new(Run {
                                sym: *sym,
                                state: next,
                                children: vec![Rc::clone(&new_run)],
                            }),
                        });
                    }
                }
                2 => {
                    for (other_state, other_cost, other_run) in &finalized {
                        let pairs: [SiblingPair<'_, A::State>; 2] = [
                            (&new_state, &new_run, other_state, other_run),
                            (other_state, other_run, &new_state, &new_run),
                        ];
                        for (i, (ls, lr, rs, rr)) in pairs.iter().enumerate() {
                            // (new, new) would be handled twice.
                            if i == 1 && *other_state == new_state {
                                continue;
                            }
                            for next in
                                automaton.transitions(sym, &[(*ls).clone(), (*rs).clone()])
                            {
                                if finalized_states.contains(&next) {
                                    continue;
                                }
                                heap.push(HeapEntry {
                                    cost: new_cost + other_cost + 1,
                                    run: Rc::new(Run {
                                        sym: *sym,
                                        state: next,
                                        children: vec![Rc::clone(lr), Rc::clone(rr)],
                                    }),
                                });
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    Ok(EmptinessReport {
        witness: None,
        states_explored: finalized.len(),
    })
}

/// Product automaton: `L(product) = L(A) ∩ L(B)`.
pub struct Product<A, B> {
    a: A,
    b: B,
    alphabet: Alphabet,
}

pub fn product<A: TreeAutomaton, B: TreeAutomaton>(
    a: A,
    b: B,
) -> Result<Product<A, B>, AutomatonError> {
    if a.alphabet() != b.alphabet() {
        return Err(AutomatonError::AlphabetMismatch);
    }
    let alphabet = a.alphabet().clone();
    Ok(Product { a, b, alphabet })
}

impl<A: TreeAutomaton, B: TreeAutomaton> TreeAutomaton for Product<A, B> {
    type State = (A::State, B::State);

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        let a_children: Vec<A::State> = children.iter().map(|c| c.0.clone()).collect();
        let b_children: Vec<B::State> = children.iter().map(|c| c.1.clone()).collect();
        let a_states = self.a.transitions(sym, &a_children);
        if a_states.is_empty() {
            return vec![];
        }
        let b_states = self.b.transitions(sym, &b_children);
        let mut out = Vec::with_capacity(a_states.len() * b_states.len());
        for sa in &a_states {
            for sb in &b_states {
                out.push((sa.clone(), sb.clone()));
            }
        }
        out
    }

    fn accepting(&self, state: &Self::State) -> bool {
        self.a.accepting(&state.0) && self.b.accepting(&state.1)
    }

    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        // Componentwise product of the factors' orders.
        let a_le = keep.0 == drop.0 || self.a.subsumes(&keep.0, &drop.0);
        let b_le = keep.1 == drop.1 || self.b.subsumes(&keep.1, &drop.1);
        a_le && b_le
    }
}

impl<A: TopDownAutomaton, B: TopDownAutomaton> TopDownAutomaton for Product<A, B> {
    fn root_states(&self) -> Vec<Self::State> {
        let mut out = Vec::new();
        for a in self.a.root_states() {
            for b in self.b.root_states() {
                out.push((a.clone(), b));
            }
        }
        out
    }

    fn expansions(&self, sym: &TreeSymbol, parent: &Self::State) -> Vec<Vec<Self::State>> {
        let mut out = Vec::new();
        for ea in self.a.expansions(sym, &parent.0) {
            for eb in self.b.expansions(sym, &parent.1) {
                debug_assert_eq!(ea.len(), eb.len());
                out.push(ea.iter().cloned().zip(eb.iter().cloned()).collect());
            }
        }
        out
    }
}

/// Report of a directed emptiness check.
#[derive(Clone, Debug)]
pub struct DirectedReport<S> {
    pub witness: Option<Run<S>>,
    /// Product states finalized by the constrained bottom-up saturation.
    pub states_explored: usize,
    /// States of the top-down factor reached from its accepting states.
    pub top_down_states: usize,
}

struct TdRestricted<'x, A: TreeAutomaton, B: TreeAutomaton> {
    a: &'x A,
    b: &'x B,
    td: &'x HashSet<B::State>,
    alphabet: Alphabet,
}

impl<'x, A: TreeAutomaton, B: TreeAutomaton> TreeAutomaton for TdRestricted<'x, A, B> {
    type State = (A::State, B::State);

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        // The top-down factor is cheap and near-deterministic: evaluate it
        // first and restrict it to the top-down reachable states, so most
        // sibling combinations die before the expensive factor runs.
        let b_children: Vec<B::State> = children.iter().map(|c| c.1.clone()).collect();
        let b_states: Vec<B::State> = self
            .b
            .transitions(sym, &b_children)
            .into_iter()
            .filter(|s| self.td.contains(s))
            .collect();
        if b_states.is_empty() {
            return vec![];
        }
        let a_children: Vec<A::State> = children.iter().map(|c| c.0.clone()).collect();
        let a_states = self.a.transitions(sym, &a_children);
        let mut out = Vec::with_capacity(a_states.len() * b_states.len());
        for sa in &a_states {
            for sb in &b_states {
                out.push((sa.clone(), sb.clone()));
            }
        }
        out
    }

    fn accepting(&self, state: &Self::State) -> bool {
        self.a.accepting(&state.0) && self.b.accepting(&state.1)
    }

    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        let a_le = keep.0 == drop.0 || self.a.subsumes(&keep.0, &drop.0);
        let b_le = keep.1 == drop.1 || self.b.subsumes(&keep.1, &drop.1);
        a_le && b_le
    }
}

/// Emptiness of `L(a_up) ∩ L(b_down)`: explores `b_down` top-down from its
/// accepting states and saturates the product bottom-up restricted to the
/// top-down reachable states. Verdict-equivalent to
/// `is_empty(product(a_up, b_down))`; an optimization, not a semantics
/// change.
pub fn directed_is_empty<A, B>(a_up: A, b_down: B) -> DirectedResult<A::State, B::State>
where
    A: TreeAutomaton,
    B: TopDownAutomaton,
{
    directed_is_empty_with(a_up, b_down, &EmptinessOptions::default())
}

pub fn directed_is_empty_with<A, B>(
    a_up: A,
    b_down: B,
    options: &EmptinessOptions,
) -> DirectedResult<A::State, B::State>
where
    A: TreeAutomaton,
    B: TopDownAutomaton,
{
    if a_up.alphabet() != b_down.alphabet() {
        return Err(AutomatonError::AlphabetMismatch);
    }
    let symbols = b_down.alphabet().symbols();
    let mut td: HashSet<B::State> = HashSet::new();
    let mut work: Vec<B::State> = b_down.root_states();
    while let Some(q) = work.pop() {
        if let Some(cancel) = &options.cancel {
            if cancel.is_cancelled() {
                return Err(AutomatonError::Cancelled);
            }
        }
        if !td.insert(q.clone()) {
            continue;
        }
        for sym in &symbols {
            for children in b_down.expansions(sym, &q) {
                for child in children {
                    if !td.contains(&child) {
                        work.push(child);
                    }
                }
            }
        }
    }

    let restricted = TdRestricted {
        a: &a_up,
        b: &b_down,
        td: &td,
        alphabet: a_up.alphabet().clone(),
    };
    let report = is_empty_with(&restricted, options)?;
    Ok(DirectedReport {
        witness: report.witness,
        states_explored: report.states_explored,
        top_down_states: td.len(),
    })
}

/// Erasure of a set of unary symbols: `L(result)` is the image of `L(A)`
/// under removal of all nodes labelled by the erased symbols.
pub struct EraseUnary<A> {
    a: A,
    erased: Vec<TreeSymbol>,
    alphabet: Alphabet,
}

pub fn erase_unary<A: TreeAutomaton>(
    a: A,
    erased: Vec<TreeSymbol>,
) -> Result<EraseUnary<A>, AutomatonError> {
    for sym in &erased {
        if sym.arity() != 1 {
            return Err(AutomatonError::NonUnaryErased(*sym));
        }
        a.alphabet().check(sym)?;
    }
    // When every cut symbol is erased the result ranges over the cut-free
    // alphabet; otherwise the alphabet is unchanged.
    let all_cuts = a.alphabet().cut_symbols();
    let alphabet = if !all_cuts.is_empty() && all_cuts.iter().all(|s| erased.contains(s)) {
        a.alphabet().without_cuts()
    } else {
        a.alphabet().clone()
    };
    Ok(EraseUnary { a, erased, alphabet })
}

impl<A: TreeAutomaton> EraseUnary<A> {
    fn silent_closure(&self, seed: Vec<A::State>) -> Vec<A::State> {
        let mut seen: BTreeSet<A::State> = seed.iter().cloned().collect();
        let mut work = seed;
        while let Some(q) = work.pop() {
            for sym in &self.erased {
                for next in self.a.transitions(sym, std::slice::from_ref(&q)) {
                    if seen.insert(next.clone()) {
                        work.push(next);
                    }
                }
            }
        }
        seen.into_iter().collect()
    }
}

impl<A: TreeAutomaton> TreeAutomaton for EraseUnary<A> {
    type State = A::State;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        if self.erased.contains(sym) {
            return vec![];
        }
        self.silent_closure(self.a.transitions(sym, children))
    }

    fn accepting(&self, state: &Self::State) -> bool {
        self.a.accepting(state)
    }

    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        self.a.subsumes(keep, drop)
    }
}

/// The universal automaton: accepts every well-ranked tree.
pub struct Universal {
    alphabet: Alphabet,
}

impl Universal {
    pub fn new(alphabet: Alphabet) -> Self {
        Universal { alphabet }
    }
}

impl TreeAutomaton for Universal {
    type State = ();

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, _sym: &TreeSymbol, _children: &[()]) -> Vec<()> {
        vec![()]
    }

    fn accepting(&self, _state: &()) -> bool {
        true
    }
}

impl TopDownAutomaton for Universal {
    fn root_states(&self) -> Vec<()> {
        vec![()]
    }

    fn expansions(&self, sym: &TreeSymbol, _parent: &()) -> Vec<Vec<()>> {
        vec![vec![(); sym.arity()]]
    }
}

/// Accepts exactly one tree.
pub struct Singleton {
    alphabet: Alphabet,
    /// Post-order node table: symbol and child node indices.
    nodes: Vec<(TreeSymbol, Vec<u32>)>,
}

impl Singleton {
    pub fn new(alphabet: Alphabet, tree: &ExecTree) -> Singleton {
        let mut nodes = Vec::new();
        fn visit(t: &ExecTree, nodes: &mut Vec<(TreeSymbol, Vec<u32>)>) -> u32 {
            let children: Vec<u32> = t.children.iter().map(|c| visit(c, nodes)).collect();
            nodes.push((t.sym, children));
            (nodes.len() - 1) as u32
        }
        visit(tree, &mut nodes);
        Singleton { alphabet, nodes }
    }
}

impl TreeAutomaton for Singleton {
    type State = u32;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[u32]) -> Vec<u32> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, (s, cs))| s == sym && cs.as_slice() == children)
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn accepting(&self, state: &u32) -> bool {
        *state as usize == self.nodes.len() - 1
    }
}

/// Makes a cut-free automaton transparent to cut nodes: accepts exactly the
/// trees whose cut-erasure the inner automaton accepts.
pub struct Lift<A> {
    a: A,
    alphabet: Alphabet,
}

pub fn lift_over_cuts<A: TreeAutomaton>(a: A, cut_levels: u32) -> Lift<A> {
    let alphabet = a.alphabet().with_cut_levels(cut_levels);
    Lift { a, alphabet }
}

impl<A: TreeAutomaton> TreeAutomaton for Lift<A> {
    type State = A::State;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        match sym {
            TreeSymbol::Cut { .. } => vec![children[0].clone()],
            _ => self.a.transitions(sym, children),
        }
    }

    fn accepting(&self, state: &Self::State) -> bool {
        self.a.accepting(state)
    }

    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        self.a.subsumes(keep, drop)
    }
}

trait ErasedOps: Send + Sync {
    fn transitions_dyn(&self, sym: &TreeSymbol, children: &[u32]) -> Vec<u32>;
    fn accepting_dyn(&self, state: u32) -> bool;
    fn subsumes_dyn(&self, keep: u32, drop: u32) -> bool;
}

struct StateInterner<S> {
    values: Vec<S>,
    index: HashMap<S, u32>,
}

impl<S: Clone + Eq + Hash> StateInterner<S> {
    fn new() -> Self {
        StateInterner { values: Vec::new(), index: HashMap::new() }
    }

    fn intern(&mut self, s: S) -> u32 {
        if let Some(&i) = self.index.get(&s) {
            return i;
        }
        let i = self.values.len() as u32;
        self.values.push(s.clone());
        self.index.insert(s, i);
        i
    }

    fn value(&self, i: u32) -> S {
        self.values[i as usize].clone()
    }
}

struct ErasedOf<A: TreeAutomaton> {
    a: A,
    interner: Mutex<StateInterner<A::State>>,
    // Deep pipeline products query the same (symbol, children) pairs over
    // and over; caching here keeps nested stages polynomial in practice.
    memo: TransitionMemo,
}

impl<A> ErasedOps for ErasedOf<A>
where
    A: TreeAutomaton + Send + Sync,
    A::State: Send,
{
    fn transitions_dyn(&self, sym: &TreeSymbol, children: &[u32]) -> Vec<u32> {
        let key = (*sym, children.to_vec());
        if let Some(cached) = self.memo.lock().unwrap().get(&key) {
            return cached.clone();
        }
        let child_states: Vec<A::State> = {
            let interner = self.interner.lock().unwrap();
            children.iter().map(|&i| interner.value(i)).collect()
        };
        let results = self.a.transitions(sym, &child_states);
        let out: Vec<u32> = {
            let mut interner = self.interner.lock().unwrap();
            results.into_iter().map(|s| interner.intern(s)).collect()
        };
        self.memo.lock().unwrap().insert(key, out.clone());
        out
    }

    fn accepting_dyn(&self, state: u32) -> bool {
        let s = self.interner.lock().unwrap().value(state);
        self.a.accepting(&s)
    }

    fn subsumes_dyn(&self, keep: u32, drop: u32) -> bool {
        let (k, d) = {
            let interner = self.interner.lock().unwrap();
            (interner.value(keep), interner.value(drop))
        };
        self.a.subsumes(&k, &d)
    }
}

/// A type-erased automaton with interned states, cheap to clone and share.
/// Lets pipelines of statically different automaton types compose.
#[derive(Clone)]
pub struct Erased {
    ops: Arc<dyn ErasedOps>,
    alphabet: Alphabet,
}

impl Erased {
    pub fn new<A>(a: A) -> Erased
    where
        A: TreeAutomaton + Send + Sync + 'static,
        A::State: Send,
    {
        let alphabet = a.alphabet().clone();
        Erased {
            ops: Arc::new(ErasedOf {
                a,
                interner: Mutex::new(StateInterner::new()),
                memo: Mutex::new(HashMap::new()),
            }),
            alphabet,
        }
    }
}

impl TreeAutomaton for Erased {
    type State = u32;

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[u32]) -> Vec<u32> {
        self.ops.transitions_dyn(sym, children)
    }

    fn accepting(&self, state: &u32) -> bool {
        self.ops.accepting_dyn(*state)
    }

    fn subsumes(&self, keep: &u32, drop: &u32) -> bool {
        self.ops.subsumes_dyn(*keep, *drop)
    }
}

/// Enumerates `L(A)` restricted to trees of at most `max_nodes` nodes, by
/// size-indexed dynamic programming. Intended for desk-scale test oracles.
pub fn enumerate_language<A: TreeAutomaton>(
    automaton: &A,
    max_nodes: usize,
) -> BTreeSet<ExecTree> {
    // by_size[k]: trees of exactly k nodes, with their root state sets.
    let symbols = automaton.alphabet().symbols();
    let mut by_size: Vec<HashMap<ExecTree, BTreeSet<A::State>>> = vec![HashMap::new(); max_nodes + 1];

    for size in 1..=max_nodes {
        let mut level: HashMap<ExecTree, BTreeSet<A::State>> = HashMap::new();
        for sym in &symbols {
            match sym.arity() {
                0 => {
                    if size != 1 {
                        continue;
                    }
                    let states = automaton.transitions(sym, &[]);
                    if !states.is_empty() {
                        level
                            .entry(ExecTree::new(*sym, vec![]))
                            .or_default()
                            .extend(states);
                    }
                }
                1 => {
                    for (child, child_states) in &by_size[size - 1] {
                        let mut states = BTreeSet::new();
                        for cs in child_states {
                            states.extend(
                                automaton.transitions(sym, std::slice::from_ref(cs)),
                            );
                        }
                        if !states.is_empty() {
                            level
                                .entry(ExecTree::new(*sym, vec![child.clone()]))
                                .or_default()
                                .extend(states);
                        }
                    }
                }
                2 => {
                    for left_size in 1..size.saturating_sub(1) {
                        let right_size = size - 1 - left_size;
                        for (left, left_states) in &by_size[left_size] {
                            for (right, right_states) in &by_size[right_size] {
                                let mut states = BTreeSet::new();
                                for ls in left_states {
                                    for rs in right_states {
                                        states.extend(automaton.transitions(
                                            sym,
                                            &[ls.clone(), rs.clone()],
                                        ));
                                    }
                                }
                                if !states.is_empty() {
                                    level
                                        .entry(ExecTree::new(
                                            *sym,
                                            vec![left.clone(), right.clone()],
                                        ))
                                        .or_default()
                                        .extend(states);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        by_size[size] = level;
    }

    let mut out = BTreeSet::new();
    for level in &by_size {
        for (tree, states) in level {
            if states.iter().any(|s| automaton.accepting(s)) {
                out.insert(tree.clone());
            }
        }
    }
    out
}
