//! Linear, possibly deleting bottom-up tree transducers and inverse images
//! of tree-regular sets under them.
//!
//! Rules have the form `f q1(x1)…qn(xn) → q(template)` where the template is
//! a tree over the output alphabet using each variable at most once; unused
//! variables delete the corresponding subtree.

use super::{Alphabet, AutomatonError, TreeAutomaton};
use crate::tree::{ExecTree, TreeSymbol};
use std::collections::BTreeSet;
use std::fmt::Debug;
use std::hash::Hash;
use std::sync::Arc;

/// Output template of a transducer rule.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Template {
    /// The output of the i-th child.
    Var(usize),
    /// An output symbol over sub-templates.
    Node(TreeSymbol, Vec<Template>),
}

impl Template {
    pub fn used_vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Template::Var(i) => {
                out.insert(*i);
            }
            Template::Node(_, subs) => {
                for s in subs {
                    s.collect_vars(out);
                }
            }
        }
    }

    fn instantiate(&self, outputs: &[Option<ExecTree>]) -> ExecTree {
        match self {
            Template::Var(i) => outputs[*i].clone().expect("used variable has an output"),
            Template::Node(sym, subs) => ExecTree::new(
                *sym,
                subs.iter().map(|s| s.instantiate(outputs)).collect(),
            ),
        }
    }
}

/// One transducer rule for a fixed input symbol.
#[derive(Clone, Debug)]
pub struct TransducerRule<S> {
    pub child_states: Vec<S>,
    pub result: S,
    pub template: Template,
}

type RuleFn<S> = dyn Fn(&TreeSymbol) -> Vec<TransducerRule<S>> + Send + Sync;
type AcceptFn<S> = dyn Fn(&S) -> bool + Send + Sync;

/// A linear possibly-deleting bottom-up tree transducer with lazily emitted
/// rules.
pub struct TreeTransducer<S> {
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
    rules: Arc<RuleFn<S>>,
    accepting: Arc<AcceptFn<S>>,
}

impl<S: Clone + Eq + Ord + Hash + Debug> TreeTransducer<S> {
    pub fn new(
        input_alphabet: Alphabet,
        output_alphabet: Alphabet,
        rules: impl Fn(&TreeSymbol) -> Vec<TransducerRule<S>> + Send + Sync + 'static,
        accepting: impl Fn(&S) -> bool + Send + Sync + 'static,
    ) -> Self {
        TreeTransducer {
            input_alphabet,
            output_alphabet,
            rules: Arc::new(rules),
            accepting: Arc::new(accepting),
        }
    }

    pub fn input_alphabet(&self) -> &Alphabet {
        &self.input_alphabet
    }

    pub fn output_alphabet(&self) -> &Alphabet {
        &self.output_alphabet
    }

    pub fn rules_for(&self, sym: &TreeSymbol) -> Vec<TransducerRule<S>> {
        (self.rules)(sym)
    }

    pub fn is_accepting(&self, state: &S) -> bool {
        (self.accepting)(state)
    }

    /// All `(state, output)` pairs of runs on `tree`, concretely.
    pub fn apply(&self, tree: &ExecTree) -> Result<Vec<(S, ExecTree)>, AutomatonError> {
        self.input_alphabet.check(&tree.sym)?;
        let child_results: Vec<Vec<(S, ExecTree)>> = tree
            .children
            .iter()
            .map(|c| self.apply(c))
            .collect::<Result<_, _>>()?;
        let mut out: Vec<(S, ExecTree)> = Vec::new();
        for rule in self.rules_for(&tree.sym) {
            if rule.child_states.len() != child_results.len() {
                continue;
            }
            let used = rule.template.used_vars();
            // Pick, per child, every run with the required state.
            let mut combos: Vec<Vec<Option<ExecTree>>> = vec![vec![]];
            for (i, results) in child_results.iter().enumerate() {
                let mut next = Vec::new();
                for combo in &combos {
                    for (state, output) in results {
                        if *state != rule.child_states[i] {
                            continue;
                        }
                        let mut c = combo.clone();
                        c.push(if used.contains(&i) {
                            Some(output.clone())
                        } else {
                            None
                        });
                        next.push(c);
                    }
                }
                combos = next;
            }
            for combo in combos {
                let produced = rule.template.instantiate(&combo);
                let entry = (rule.result.clone(), produced);
                if !out.contains(&entry) {
                    out.push(entry);
                }
            }
        }
        Ok(out)
    }

    /// Accepting outputs of the transducer on `tree`.
    pub fn outputs(&self, tree: &ExecTree) -> Result<Vec<ExecTree>, AutomatonError> {
        Ok(self
            .apply(tree)?
            .into_iter()
            .filter(|(s, _)| self.is_accepting(s))
            .map(|(_, t)| t)
            .collect())
    }
}

/// State of an inverse-image automaton: the transducer state paired with a
/// state of the target automaton, or `None` for the wildcard tracking
/// deleted subtrees.
pub type InverseState<TS, AS> = (TS, Option<AS>);

/// The inverse image `{t | some run of T on t outputs a tree in L(A)}`.
pub struct InverseImage<TS, A> {
    transducer: TreeTransducer<TS>,
    target: A,
}

pub fn inverse_image<TS, A>(
    transducer: TreeTransducer<TS>,
    target: A,
) -> Result<InverseImage<TS, A>, AutomatonError>
where
    TS: Clone + Eq + Ord + Hash + Debug,
    A: TreeAutomaton,
{
    if target.alphabet() != transducer.output_alphabet() {
        return Err(AutomatonError::AlphabetMismatch);
    }
    Ok(InverseImage { transducer, target })
}

impl<TS, A> InverseImage<TS, A>
where
    TS: Clone + Eq + Ord + Hash + Debug,
    A: TreeAutomaton,
{
    /// Target states reachable on the template given the children's states.
    fn eval_template(&self, template: &Template, children: &[Option<A::State>]) -> Vec<A::State> {
        match template {
            Template::Var(i) => children[*i].clone().into_iter().collect(),
            Template::Node(sym, subs) => {
                let mut combos: Vec<Vec<A::State>> = vec![vec![]];
                for sub in subs {
                    let sub_states = self.eval_template(sub, children);
                    let mut next = Vec::new();
                    for combo in &combos {
                        for s in &sub_states {
                            let mut c = combo.clone();
                            c.push(s.clone());
                            next.push(c);
                        }
                    }
                    combos = next;
                }
                let mut out = Vec::new();
                for combo in combos {
                    out.extend(self.target.transitions(sym, &combo));
                }
                out
            }
        }
    }
}

impl<TS, A> TreeAutomaton for InverseImage<TS, A>
where
    TS: Clone + Eq + Ord + Hash + Debug,
    A: TreeAutomaton,
{
    type State = InverseState<TS, A::State>;

    fn alphabet(&self) -> &Alphabet {
        self.transducer.input_alphabet()
    }

    fn transitions(&self, sym: &TreeSymbol, children: &[Self::State]) -> Vec<Self::State> {
        let mut out = Vec::new();
        for rule in self.transducer.rules_for(sym) {
            if rule.child_states.len() != children.len() {
                continue;
            }
            if !children
                .iter()
                .zip(rule.child_states.iter())
                .all(|((ts, _), rs)| ts == rs)
            {
                continue;
            }
            // Wildcard states are closed under every transducer rule.
            if children.iter().all(|(_, a)| a.is_none()) {
                out.push((rule.result.clone(), None));
            }
            // Product rules pair used children with target states and
            // deleted children with the wildcard.
            let used = rule.template.used_vars();
            let shape_ok = children
                .iter()
                .enumerate()
                .all(|(i, (_, a))| used.contains(&i) == a.is_some());
            if shape_ok {
                let assignments: Vec<Option<A::State>> =
                    children.iter().map(|(_, a)| a.clone()).collect();
                for a_state in self.eval_template(&rule.template, &assignments) {
                    out.push((rule.result.clone(), Some(a_state)));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn accepting(&self, state: &Self::State) -> bool {
        match state {
            (ts, Some(a)) => self.transducer.is_accepting(ts) && self.target.accepting(a),
            (_, None) => false,
        }
    }

    fn subsumes(&self, keep: &Self::State, drop: &Self::State) -> bool {
        keep.0 == drop.0
            && match (&keep.1, &drop.1) {
                (Some(k), Some(d)) => k == d || self.target.subsumes(k, d),
                (None, None) => true,
                _ => false,
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{accepts_tree, Singleton, Universal};
    use crate::parse::parse_dpn;
    use crate::symbols::RuleId;
    use crate::tree::ExecTree;
    use std::sync::Arc;

    fn toy_alphabet() -> Alphabet {
        let dpn = parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap();
        Alphabet::cut_free(Arc::new(dpn))
    }

    /// The identity transducer over a cut-free alphabet.
    fn identity(alphabet: Alphabet) -> TreeTransducer<()> {
        TreeTransducer::new(
            alphabet.clone(),
            alphabet,
            |sym| {
                let arity = sym.arity();
                vec![TransducerRule {
                    child_states: vec![(); arity],
                    result: (),
                    template: Template::Node(*sym, (0..arity).map(Template::Var).collect()),
                }]
            },
            |_| true,
        )
    }

    #[test]
    fn identity_inverse_image_preserves_language() {
        let alphabet = toy_alphabet();
        let dpn = Arc::clone(alphabet.dpn());
        let t = ExecTree::base(
            RuleId(0),
            ExecTree::nil(dpn.init_control, crate::symbols::StackId(1)),
        );
        let target = Singleton::new(alphabet.clone(), &t);
        let inv = inverse_image(identity(alphabet), target).unwrap();
        assert!(accepts_tree(&inv, &t).unwrap());
        let other = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert!(!accepts_tree(&inv, &other).unwrap());
    }

    #[test]
    fn identity_apply_returns_input() {
        let alphabet = toy_alphabet();
        let dpn = Arc::clone(alphabet.dpn());
        let t = ExecTree::nil(dpn.init_control, dpn.init_stack);
        let id = identity(alphabet);
        let outs = id.outputs(&t).unwrap();
        assert_eq!(outs, vec![t]);
    }

    #[test]
    fn deleting_transducer_wildcards() {
        // A transducer that deletes the child of every base node.
        let alphabet = toy_alphabet();
        let dpn = Arc::clone(alphabet.dpn());
        let nil_sym = crate::tree::TreeSymbol::Nil {
            control: dpn.init_control,
            stack: dpn.init_stack,
        };
        let del: TreeTransducer<()> = TreeTransducer::new(
            alphabet.clone(),
            alphabet.clone(),
            move |sym| match sym {
                TreeSymbol::Base { .. } => vec![TransducerRule {
                    child_states: vec![()],
                    result: (),
                    template: Template::Node(nil_sym, vec![]),
                }],
                TreeSymbol::Nil { .. } => vec![TransducerRule {
                    child_states: vec![],
                    result: (),
                    template: Template::Node(*sym, vec![]),
                }],
                _ => vec![],
            },
            |_| true,
        );
        let h = crate::symbols::StackId(1);
        let t = ExecTree::base(RuleId(0), ExecTree::nil(dpn.init_control, h));
        // The output is always (NIL q g) regardless of the child.
        let universal = Universal::new(alphabet);
        let inv = inverse_image(del, universal).unwrap();
        assert!(accepts_tree(&inv, &t).unwrap());
    }
}
