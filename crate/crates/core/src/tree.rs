//! Execution trees: construction from executions, reading configurations
//! back, cut-marked trees for iterated queries, and s-expression text form.
//!
//! Each node of an execution tree corresponds to one transition of the
//! execution, except `NIL` leaves, which stand for a thread's final control
//! and top of stack, and `CUT` nodes, which mark a thread's position at an
//! intermediate configuration. For binary nodes the left child is the
//! returning procedure body (or the spawned thread), the right child the
//! continuation.

use crate::model::{
    Configuration, Execution, MonitorDpn, RuleKind, Sensitivity, ThreadConfig, ThreadId,
};
use crate::symbols::{ControlId, LockId, RuleId, StackId};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// A ranked alphabet symbol for execution trees.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum TreeSymbol {
    Nil { control: ControlId, stack: StackId },
    Ret { rule: RuleId },
    Base { rule: RuleId },
    NCall { rule: RuleId },
    Acq { rule: RuleId, lock: LockId, reentrant: bool },
    RCall { rule: RuleId },
    Use { rule: RuleId, lock: LockId, reentrant: bool },
    Spawn { rule: RuleId },
    Cut { control: ControlId, stack: StackId, level: u32 },
}

impl TreeSymbol {
    pub fn arity(&self) -> usize {
        match self {
            TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => 0,
            TreeSymbol::Base { .. }
            | TreeSymbol::NCall { .. }
            | TreeSymbol::Acq { .. }
            | TreeSymbol::Cut { .. } => 1,
            TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } | TreeSymbol::Spawn { .. } => 2,
        }
    }

    pub fn rule(&self) -> Option<RuleId> {
        match *self {
            TreeSymbol::Ret { rule }
            | TreeSymbol::Base { rule }
            | TreeSymbol::NCall { rule }
            | TreeSymbol::Acq { rule, .. }
            | TreeSymbol::RCall { rule }
            | TreeSymbol::Use { rule, .. }
            | TreeSymbol::Spawn { rule } => Some(rule),
            TreeSymbol::Nil { .. } | TreeSymbol::Cut { .. } => None,
        }
    }

    pub fn is_cut(&self) -> bool {
        matches!(self, TreeSymbol::Cut { .. })
    }
}

/// An execution tree. Arity of `sym` matches `children.len()` by
/// construction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecTree {
    pub sym: TreeSymbol,
    pub children: Vec<ExecTree>,
}

impl ExecTree {
    pub fn new(sym: TreeSymbol, children: Vec<ExecTree>) -> ExecTree {
        debug_assert_eq!(sym.arity(), children.len());
        ExecTree { sym, children }
    }

    pub fn nil(control: ControlId, stack: StackId) -> ExecTree {
        ExecTree::new(TreeSymbol::Nil { control, stack }, vec![])
    }

    pub fn ret(rule: RuleId) -> ExecTree {
        ExecTree::new(TreeSymbol::Ret { rule }, vec![])
    }

    pub fn base(rule: RuleId, child: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::Base { rule }, vec![child])
    }

    pub fn ncall(rule: RuleId, child: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::NCall { rule }, vec![child])
    }

    pub fn acq(rule: RuleId, lock: LockId, reentrant: bool, child: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::Acq { rule, lock, reentrant }, vec![child])
    }

    pub fn rcall(rule: RuleId, body: ExecTree, cont: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::RCall { rule }, vec![body, cont])
    }

    pub fn use_(
        rule: RuleId,
        lock: LockId,
        reentrant: bool,
        body: ExecTree,
        cont: ExecTree,
    ) -> ExecTree {
        ExecTree::new(TreeSymbol::Use { rule, lock, reentrant }, vec![body, cont])
    }

    pub fn spawn(rule: RuleId, spawned: ExecTree, cont: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::Spawn { rule }, vec![spawned, cont])
    }

    pub fn cut(control: ControlId, stack: StackId, level: u32, child: ExecTree) -> ExecTree {
        ExecTree::new(TreeSymbol::Cut { control, stack, level }, vec![child])
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ExecTree::node_count).sum::<usize>()
    }

    pub fn contains_cut(&self) -> bool {
        self.sym.is_cut() || self.children.iter().any(ExecTree::contains_cut)
    }

    /// The maximum cut level occurring in the tree, 0 when cut-free.
    pub fn max_cut_level(&self) -> u32 {
        let own = match self.sym {
            TreeSymbol::Cut { level, .. } => level,
            _ => 0,
        };
        self.children
            .iter()
            .map(ExecTree::max_cut_level)
            .fold(own, u32::max)
    }

    /// Relabels every cut node with the given level.
    pub fn with_cut_level(&self, level: u32) -> ExecTree {
        let sym = match self.sym {
            TreeSymbol::Cut { control, stack, .. } => TreeSymbol::Cut { control, stack, level },
            s => s,
        };
        ExecTree::new(
            sym,
            self.children.iter().map(|c| c.with_cut_level(level)).collect(),
        )
    }
}

impl fmt::Debug for ExecTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.sym)?;
        if !self.children.is_empty() {
            f.debug_list().entries(&self.children).finish()?;
        }
        Ok(())
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("execution is not replayable at step {index}")]
    Replay { index: usize },
    #[error("thread {tid} has an empty stack at the cut")]
    EmptyStackAtCut { tid: ThreadId },
    #[error("tree contains a cut node")]
    HasCut,
    #[error("tree is not cut-wellformed")]
    NotCutWellformed,
    #[error("tree is not an execution tree of this model: {0}")]
    Malformed(String),
    #[error("{line}:{column}: tree syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Clone, Debug)]
enum SeqItem {
    Step {
        rule: RuleId,
        reentrant: bool,
        spawned: Option<ThreadId>,
    },
    NilLeaf(ControlId, StackId),
    CutMark(ControlId, StackId, u32),
}

/// Per-thread transition sequences extracted by replaying an execution.
struct Traces {
    items: BTreeMap<ThreadId, Vec<SeqItem>>,
}

fn trace_execution(
    dpn: &MonitorDpn,
    execution: &Execution,
    cut_after: Option<usize>,
) -> Result<Traces, TreeError> {
    let mut conf = crate::model::initial_configuration(dpn);
    let mut items: BTreeMap<ThreadId, Vec<SeqItem>> = BTreeMap::new();
    items.insert(ThreadId::root(), Vec::new());
    // Position in each thread's item list at which the cut belongs, with the
    // thread's control and top of stack at the intermediate configuration.
    let mut cut_points: Option<Vec<(ThreadId, usize, ControlId, StackId)>> = None;

    let record_cut = |conf: &Configuration,
                          items: &BTreeMap<ThreadId, Vec<SeqItem>>|
     -> Result<Vec<(ThreadId, usize, ControlId, StackId)>, TreeError> {
        let mut points = Vec::new();
        for (tid, thread) in conf.threads() {
            let top = thread
                .top()
                .ok_or_else(|| TreeError::EmptyStackAtCut { tid: tid.clone() })?;
            let len = items.get(tid).map_or(0, Vec::len);
            points.push((tid.clone(), len, thread.control, top.stack));
        }
        Ok(points)
    };

    if cut_after == Some(0) {
        cut_points = Some(record_cut(&conf, &items)?);
    }

    for (index, (tid, rule_id)) in execution.steps.iter().enumerate() {
        let thread = conf
            .thread(tid)
            .ok_or(TreeError::Replay { index })?
            .clone();
        let rule = dpn.rule(*rule_id);
        let reentrant = match rule.kind {
            RuleKind::Monitor { lock, .. } => thread.held_locks().contains(lock),
            _ => false,
        };
        let spawned = match rule.kind {
            RuleKind::Spawn { .. } => Some(tid.child(conf.next_child_index(tid))),
            _ => None,
        };
        conf = crate::model::step(dpn, &conf, tid, *rule_id, Sensitivity::LockInsensitive)
            .map_err(|_| TreeError::Replay { index })?;
        if let Some(child) = &spawned {
            items.insert(child.clone(), Vec::new());
        }
        items.entry(tid.clone()).or_default().push(SeqItem::Step {
            rule: *rule_id,
            reentrant,
            spawned,
        });
        if cut_after == Some(index + 1) {
            cut_points = Some(record_cut(&conf, &items)?);
        }
    }

    if let Some(points) = cut_points {
        for (tid, pos, control, stack) in points {
            items
                .get_mut(&tid)
                .expect("existing thread has an item list")
                .insert(pos, SeqItem::CutMark(control, stack, 1));
        }
    }

    // A trailing NIL leaf for every thread whose final stack is non-empty.
    for (tid, thread) in conf.threads() {
        if let Some(top) = thread.top() {
            items
                .entry(tid.clone())
                .or_default()
                .push(SeqItem::NilLeaf(thread.control, top.stack));
        }
    }

    Ok(Traces { items })
}

fn build_thread(dpn: &MonitorDpn, traces: &Traces, tid: &ThreadId) -> ExecTree {
    let items = &traces.items[tid];
    let mut spawn_count = 0;
    build_seq(dpn, traces, tid, items, &mut spawn_count)
}

fn build_seq(
    dpn: &MonitorDpn,
    traces: &Traces,
    tid: &ThreadId,
    items: &[SeqItem],
    spawn_count: &mut u32,
) -> ExecTree {
    let (first, rest) = items
        .split_first()
        .expect("thread traces are sealed by NIL or RET");
    match first {
        SeqItem::NilLeaf(p, g) => {
            debug_assert!(rest.is_empty());
            ExecTree::nil(*p, *g)
        }
        SeqItem::CutMark(p, g, level) => {
            ExecTree::cut(*p, *g, *level, build_seq(dpn, traces, tid, rest, spawn_count))
        }
        SeqItem::Step { rule, reentrant, spawned } => {
            let r = dpn.rule(*rule);
            match r.kind {
                RuleKind::Return { .. } => {
                    debug_assert!(rest.is_empty());
                    ExecTree::ret(*rule)
                }
                RuleKind::Base { .. } => {
                    ExecTree::base(*rule, build_seq(dpn, traces, tid, rest, spawn_count))
                }
                RuleKind::Spawn { .. } => {
                    *spawn_count += 1;
                    let child_tid = spawned.clone().unwrap_or_else(|| tid.child(*spawn_count));
                    let spawned_tree = build_thread(dpn, traces, &child_tid);
                    ExecTree::spawn(
                        *rule,
                        spawned_tree,
                        build_seq(dpn, traces, tid, rest, spawn_count),
                    )
                }
                RuleKind::Call { .. } | RuleKind::Monitor { .. } => {
                    match matching_return(dpn, rest) {
                        Some(j) => {
                            let body = build_seq(dpn, traces, tid, &rest[..=j], spawn_count);
                            let cont = build_seq(dpn, traces, tid, &rest[j + 1..], spawn_count);
                            match r.kind {
                                RuleKind::Monitor { lock, .. } => {
                                    ExecTree::use_(*rule, lock, *reentrant, body, cont)
                                }
                                _ => ExecTree::rcall(*rule, body, cont),
                            }
                        }
                        None => {
                            let body = build_seq(dpn, traces, tid, rest, spawn_count);
                            match r.kind {
                                RuleKind::Monitor { lock, .. } => {
                                    ExecTree::acq(*rule, lock, *reentrant, body)
                                }
                                _ => ExecTree::ncall(*rule, body),
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Index (into `items`) of the return matching a call that directly precedes
/// `items`, or `None` when the call never returns.
fn matching_return(dpn: &MonitorDpn, items: &[SeqItem]) -> Option<usize> {
    let mut depth = 1usize;
    for (j, item) in items.iter().enumerate() {
        if let SeqItem::Step { rule, .. } = item {
            match dpn.rule(*rule).kind {
                RuleKind::Call { .. } | RuleKind::Monitor { .. } => depth += 1,
                RuleKind::Return { .. } => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(j);
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// The execution tree of a lock-insensitively replayable execution.
pub fn tree_of_execution(dpn: &MonitorDpn, execution: &Execution) -> Result<ExecTree, TreeError> {
    let traces = trace_execution(dpn, execution, None)?;
    Ok(build_thread(dpn, &traces, &ThreadId::root()))
}

/// The tree of `prefix · suffix` with one level-1 cut node per thread
/// existing at the end of `prefix`, marking its control and top of stack at
/// the intermediate configuration.
pub fn cut_tree_of_executions(
    dpn: &MonitorDpn,
    prefix: &Execution,
    suffix: &Execution,
) -> Result<ExecTree, TreeError> {
    let full = prefix.concat(suffix);
    let traces = trace_execution(dpn, &full, Some(prefix.len()))?;
    Ok(build_thread(dpn, &traces, &ThreadId::root()))
}

/// Removes every cut node, replacing it with its child.
pub fn strip_cuts(tree: &ExecTree) -> ExecTree {
    match tree.sym {
        TreeSymbol::Cut { .. } => strip_cuts(&tree.children[0]),
        sym => ExecTree::new(sym, tree.children.iter().map(strip_cuts).collect()),
    }
}

/// The configuration reached by any schedule of a cut-free execution tree.
pub fn conf_of_tree(dpn: &MonitorDpn, tree: &ExecTree) -> Result<Configuration, TreeError> {
    let mut conf = Configuration::default();
    let mut spawn_count = 0;
    let root = ThreadId::root();
    let (control, frames) = conf_segment(dpn, tree, &root, None, &mut spawn_count, &mut conf)?;
    conf.insert(root, ThreadConfig { control, frames });
    Ok(conf)
}

/// Final control and surviving frames of a thread segment that starts on a
/// frame annotated `top_ann`. Spawned threads are added to `out` directly.
fn conf_segment(
    dpn: &MonitorDpn,
    tree: &ExecTree,
    tid: &ThreadId,
    top_ann: Option<LockId>,
    spawn_count: &mut u32,
    out: &mut Configuration,
) -> Result<(ControlId, Vec<crate::model::Frame>), TreeError> {
    use crate::model::Frame;
    match tree.sym {
        TreeSymbol::Cut { .. } => Err(TreeError::HasCut),
        TreeSymbol::Nil { control, stack } => {
            Ok((control, vec![Frame { stack, ann: top_ann }]))
        }
        TreeSymbol::Ret { rule } => match dpn.rule(rule).kind {
            RuleKind::Return { to_control } => Ok((to_control, vec![])),
            _ => Err(TreeError::Malformed("RET node with non-return rule".into())),
        },
        TreeSymbol::Base { .. } => {
            conf_segment(dpn, &tree.children[0], tid, top_ann, spawn_count, out)
        }
        TreeSymbol::NCall { rule } | TreeSymbol::Acq { rule, .. } => {
            let (inner_ann, ret_stack) = match (tree.sym, dpn.rule(rule).kind) {
                (TreeSymbol::Acq { lock, .. }, RuleKind::Monitor { ret_stack, .. }) => {
                    (Some(lock), ret_stack)
                }
                (_, RuleKind::Call { ret_stack, .. }) => (None, ret_stack),
                _ => return Err(TreeError::Malformed("call node with non-call rule".into())),
            };
            let (control, mut frames) =
                conf_segment(dpn, &tree.children[0], tid, inner_ann, spawn_count, out)?;
            frames.push(Frame { stack: ret_stack, ann: top_ann });
            Ok((control, frames))
        }
        TreeSymbol::RCall { .. } | TreeSymbol::Use { .. } => {
            // The body returns: it contributes no frames, but spawns inside
            // it are live and the spawn numbering passes through it.
            let body_ann = match tree.sym {
                TreeSymbol::Use { lock, .. } => Some(lock),
                _ => None,
            };
            conf_segment(dpn, &tree.children[0], tid, body_ann, spawn_count, out)?;
            conf_segment(dpn, &tree.children[1], tid, top_ann, spawn_count, out)
        }
        TreeSymbol::Spawn { rule } => {
            *spawn_count += 1;
            let child_tid = tid.child(*spawn_count);
            let mut child_spawns = 0;
            let (control, frames) = conf_segment(
                dpn,
                &tree.children[0],
                &child_tid,
                None,
                &mut child_spawns,
                out,
            )?;
            if !matches!(dpn.rule(rule).kind, RuleKind::Spawn { .. }) {
                return Err(TreeError::Malformed("SPAWN node with non-spawn rule".into()));
            }
            out.insert(child_tid, ThreadConfig { control, frames });
            conf_segment(dpn, &tree.children[1], tid, top_ann, spawn_count, out)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CtState {
    Below,
    Marked,
}

/// The execution tree marked by the cut: subtrees below a cut become `NIL`
/// leaves and a returning call or use whose body holds the cut becomes a
/// non-returning call or acquisition.
pub fn marked_prefix(tree: &ExecTree) -> Result<ExecTree, TreeError> {
    let (state, out) = mark(tree)?;
    match state {
        CtState::Marked => Ok(out),
        CtState::Below => Err(TreeError::NotCutWellformed),
    }
}

fn mark(tree: &ExecTree) -> Result<(CtState, ExecTree), TreeError> {
    match tree.sym {
        TreeSymbol::Nil { .. } | TreeSymbol::Ret { .. } => {
            Ok((CtState::Below, tree.clone()))
        }
        TreeSymbol::Cut { control, stack, .. } => {
            let (state, _) = mark(&tree.children[0])?;
            if state != CtState::Below {
                return Err(TreeError::NotCutWellformed);
            }
            Ok((CtState::Marked, ExecTree::nil(control, stack)))
        }
        TreeSymbol::Base { .. } | TreeSymbol::NCall { .. } | TreeSymbol::Acq { .. } => {
            let (state, child) = mark(&tree.children[0])?;
            Ok((state, ExecTree::new(tree.sym, vec![child])))
        }
        TreeSymbol::RCall { rule } | TreeSymbol::Use { rule, .. } => {
            let (body_state, body) = mark(&tree.children[0])?;
            let (cont_state, cont) = mark(&tree.children[1])?;
            match (body_state, cont_state) {
                (CtState::Marked, CtState::Below) => {
                    let sym = match tree.sym {
                        TreeSymbol::Use { lock, reentrant, .. } => {
                            TreeSymbol::Acq { rule, lock, reentrant }
                        }
                        _ => TreeSymbol::NCall { rule },
                    };
                    Ok((CtState::Marked, ExecTree::new(sym, vec![body])))
                }
                (CtState::Below, state) => {
                    Ok((state, ExecTree::new(tree.sym, vec![body, cont])))
                }
                (CtState::Marked, CtState::Marked) => Err(TreeError::NotCutWellformed),
            }
        }
        TreeSymbol::Spawn { .. } => {
            let (_, spawned) = mark(&tree.children[0])?;
            let (state, cont) = mark(&tree.children[1])?;
            Ok((state, ExecTree::new(tree.sym, vec![spawned, cont])))
        }
    }
}

/// Renders a tree in s-expression form using the model's symbol names.
pub fn serialize_tree(dpn: &MonitorDpn, tree: &ExecTree) -> String {
    let mut out = String::new();
    write_tree(dpn, tree, &mut out);
    out
}

fn write_tree(dpn: &MonitorDpn, tree: &ExecTree, out: &mut String) {
    let control = |c: ControlId| dpn.controls.name(c.0).to_string();
    let stack = |s: StackId| dpn.stacks.name(s.0).to_string();
    let rule = |r: RuleId| dpn.rule_name(r).to_string();
    let flag = |re: bool| if re { "re" } else { "nr" };
    out.push('(');
    match tree.sym {
        TreeSymbol::Nil { control: p, stack: g } => {
            out.push_str(&format!("NIL {} {}", control(p), stack(g)));
        }
        TreeSymbol::Ret { rule: r } => out.push_str(&format!("RET {}", rule(r))),
        TreeSymbol::Base { rule: r } => out.push_str(&format!("BASE {}", rule(r))),
        TreeSymbol::NCall { rule: r } => out.push_str(&format!("NCALL {}", rule(r))),
        TreeSymbol::Acq { rule: r, lock, reentrant } => out.push_str(&format!(
            "ACQ {} {} {}",
            rule(r),
            dpn.locks.name(lock.0),
            flag(reentrant)
        )),
        TreeSymbol::RCall { rule: r } => out.push_str(&format!("RCALL {}", rule(r))),
        TreeSymbol::Use { rule: r, lock, reentrant } => out.push_str(&format!(
            "USE {} {} {}",
            rule(r),
            dpn.locks.name(lock.0),
            flag(reentrant)
        )),
        TreeSymbol::Spawn { rule: r } => out.push_str(&format!("SPAWN {}", rule(r))),
        TreeSymbol::Cut { control: p, stack: g, level } => {
            out.push_str(&format!("CUT {} {} {}", control(p), stack(g), level));
        }
    }
    for child in &tree.children {
        out.push(' ');
        write_tree(dpn, child, out);
    }
    out.push(')');
}

struct TreeParser<'a> {
    dpn: &'a MonitorDpn,
    text: &'a str,
    pos: usize,
}

impl<'a> TreeParser<'a> {
    fn error(&self, message: impl Into<String>) -> TreeError {
        let consumed = &self.text[..self.pos];
        let line = consumed.lines().count().max(1);
        let column = consumed.lines().last().map_or(0, str::len) + 1;
        TreeError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, ch: u8) -> Result<(), TreeError> {
        self.skip_ws();
        if self.pos < self.text.len() && self.text.as_bytes()[self.pos] == ch {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{}`", ch as char)))
        }
    }

    fn word(&mut self) -> Result<&'a str, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() {
            let b = self.text.as_bytes()[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("expected a token"));
        }
        Ok(&self.text[start..self.pos])
    }

    fn control(&mut self) -> Result<ControlId, TreeError> {
        let w = self.word()?;
        self.dpn
            .controls
            .lookup(w)
            .map(ControlId)
            .ok_or_else(|| self.error(format!("unknown control state `{w}`")))
    }

    fn stack(&mut self) -> Result<StackId, TreeError> {
        let w = self.word()?;
        self.dpn
            .stacks
            .lookup(w)
            .map(StackId)
            .ok_or_else(|| self.error(format!("unknown stack symbol `{w}`")))
    }

    fn lock(&mut self) -> Result<LockId, TreeError> {
        let w = self.word()?;
        self.dpn
            .locks
            .lookup(w)
            .map(LockId)
            .ok_or_else(|| self.error(format!("unknown lock `{w}`")))
    }

    fn rule(&mut self) -> Result<RuleId, TreeError> {
        let w = self.word()?;
        self.dpn
            .rule_by_name(w)
            .ok_or_else(|| self.error(format!("unknown rule `{w}`")))
    }

    fn flag(&mut self) -> Result<bool, TreeError> {
        match self.word()? {
            "re" => Ok(true),
            "nr" => Ok(false),
            other => Err(self.error(format!("expected `nr` or `re`, got `{other}`"))),
        }
    }

    fn node(&mut self) -> Result<ExecTree, TreeError> {
        self.expect(b'(')?;
        let tag = self.word()?;
        let tree = match tag {
            "NIL" => ExecTree::nil(self.control()?, self.stack()?),
            "RET" => ExecTree::ret(self.rule()?),
            "BASE" => ExecTree::base(self.rule()?, self.node()?),
            "NCALL" => ExecTree::ncall(self.rule()?, self.node()?),
            "ACQ" => {
                let (r, l, f) = (self.rule()?, self.lock()?, self.flag()?);
                ExecTree::acq(r, l, f, self.node()?)
            }
            "RCALL" => {
                let r = self.rule()?;
                ExecTree::rcall(r, self.node()?, self.node()?)
            }
            "USE" => {
                let (r, l, f) = (self.rule()?, self.lock()?, self.flag()?);
                ExecTree::use_(r, l, f, self.node()?, self.node()?)
            }
            "SPAWN" => {
                let r = self.rule()?;
                ExecTree::spawn(r, self.node()?, self.node()?)
            }
            "CUT" => {
                let (p, g) = (self.control()?, self.stack()?);
                let level: u32 = self
                    .word()?
                    .parse()
                    .map_err(|_| self.error("expected a cut level"))?;
                if level == 0 {
                    return Err(self.error("cut level must be positive"));
                }
                ExecTree::cut(p, g, level, self.node()?)
            }
            other => return Err(self.error(format!("unknown node tag `{other}`"))),
        };
        self.expect(b')')?;
        Ok(tree)
    }
}

/// Parses the s-expression form produced by [`serialize_tree`].
pub fn parse_tree(dpn: &MonitorDpn, text: &str) -> Result<ExecTree, TreeError> {
    let mut p = TreeParser { dpn, text, pos: 0 };
    let tree = p.node()?;
    p.skip_ws();
    if p.pos != p.text.len() {
        return Err(p.error("trailing input"));
    }
    Ok(tree)
}

/// One step of a flattened tree, in the thread's own program order.
#[derive(Clone, Debug)]
pub enum FlatKind {
    Step {
        rule: RuleId,
        reentrant: bool,
        /// For spawn steps, the spawned thread's id.
        spawned: Option<ThreadId>,
    },
    Cut {
        level: u32,
        control: ControlId,
        stack: StackId,
    },
}

#[derive(Clone, Debug)]
pub struct FlatItem {
    pub kind: FlatKind,
    /// Preorder position of the node in the whole tree; a node's subtree
    /// occupies the id range `dfs_id..=subtree_end`.
    pub dfs_id: u32,
    pub subtree_end: u32,
    /// For returning calls and uses, the index (in the same thread's item
    /// list) of the matching return.
    pub matching_return: Option<usize>,
}

impl FlatItem {
    pub fn rule(&self) -> Option<RuleId> {
        match self.kind {
            FlatKind::Step { rule, .. } => Some(rule),
            FlatKind::Cut { .. } => None,
        }
    }

    pub fn is_cut(&self) -> bool {
        matches!(self.kind, FlatKind::Cut { .. })
    }
}

/// Per-thread linearization of an execution tree: the inverse of tree
/// construction, used by the scheduler and the oracle.
#[derive(Clone, Debug, Default)]
pub struct FlatTree {
    pub threads: BTreeMap<ThreadId, Vec<FlatItem>>,
    /// How each thread's trace ends: `Some` for a `NIL` leaf with that
    /// control and top of stack, `None` when the trace ends in a return.
    pub terminals: BTreeMap<ThreadId, Option<(ControlId, StackId)>>,
}

/// Flattens a tree back into per-thread step sequences.
pub fn flatten_tree(dpn: &MonitorDpn, tree: &ExecTree) -> Result<FlatTree, TreeError> {
    let mut flat = FlatTree::default();
    let root = ThreadId::root();
    flat.threads.insert(root.clone(), Vec::new());
    let mut next_id = 0u32;
    let mut spawn_count = 0;
    flatten_walk(dpn, tree, &root, &mut spawn_count, &mut next_id, &mut flat)?;
    let tids: Vec<ThreadId> = flat.threads.keys().cloned().collect();
    for tid in tids {
        flat.terminals.entry(tid).or_insert(None);
    }
    Ok(flat)
}

fn flatten_walk(
    dpn: &MonitorDpn,
    tree: &ExecTree,
    tid: &ThreadId,
    spawn_count: &mut u32,
    next_id: &mut u32,
    flat: &mut FlatTree,
) -> Result<u32, TreeError> {
    let my_id = *next_id;
    *next_id += 1;

    let push = |flat: &mut FlatTree, kind: FlatKind| -> usize {
        let items = flat.threads.entry(tid.clone()).or_default();
        items.push(FlatItem {
            kind,
            dfs_id: my_id,
            subtree_end: my_id,
            matching_return: None,
        });
        items.len() - 1
    };
    let step = |rule: RuleId, reentrant: bool, spawned: Option<ThreadId>| FlatKind::Step {
        rule,
        reentrant,
        spawned,
    };

    let end = match tree.sym {
        TreeSymbol::Nil { control, stack } => {
            flat.terminals.insert(tid.clone(), Some((control, stack)));
            my_id
        }
        TreeSymbol::Ret { rule } => {
            push(flat, step(rule, false, None));
            my_id
        }
        TreeSymbol::Base { rule } => {
            push(flat, step(rule, false, None));
            flatten_walk(dpn, &tree.children[0], tid, spawn_count, next_id, flat)?
        }
        TreeSymbol::NCall { rule } => {
            push(flat, step(rule, false, None));
            flatten_walk(dpn, &tree.children[0], tid, spawn_count, next_id, flat)?
        }
        TreeSymbol::Acq { rule, reentrant, .. } => {
            push(flat, step(rule, reentrant, None));
            flatten_walk(dpn, &tree.children[0], tid, spawn_count, next_id, flat)?
        }
        TreeSymbol::Cut { control, stack, level } => {
            push(flat, FlatKind::Cut { level, control, stack });
            flatten_walk(dpn, &tree.children[0], tid, spawn_count, next_id, flat)?
        }
        TreeSymbol::RCall { rule } | TreeSymbol::Use { rule, .. } => {
            let reentrant = match tree.sym {
                TreeSymbol::Use { reentrant, .. } => reentrant,
                _ => false,
            };
            let call_index = push(flat, step(rule, reentrant, None));
            flatten_walk(dpn, &tree.children[0], tid, spawn_count, next_id, flat)?;
            let items = &flat.threads[tid];
            let ret_index = items.len().checked_sub(1).filter(|&i| {
                i > call_index
                    && items[i]
                        .rule()
                        .is_some_and(|r| matches!(dpn.rule(r).kind, RuleKind::Return { .. }))
            });
            let ret_index =
                ret_index.ok_or_else(|| TreeError::Malformed("call body lacks a return".into()))?;
            flat.threads.get_mut(tid).unwrap()[call_index].matching_return = Some(ret_index);
            flatten_walk(dpn, &tree.children[1], tid, spawn_count, next_id, flat)?
        }
        TreeSymbol::Spawn { rule } => {
            *spawn_count += 1;
            let child = tid.child(*spawn_count);
            push(flat, step(rule, false, Some(child.clone())));
            flat.threads.insert(child.clone(), Vec::new());
            let mut child_spawns = 0;
            flatten_walk(
                dpn,
                &tree.children[0],
                &child,
                &mut child_spawns,
                next_id,
                flat,
            )?;
            flatten_walk(dpn, &tree.children[1], tid, spawn_count, next_id, flat)?
        }
    };

    let end = end.max(*next_id - 1);
    if let Some(items) = flat.threads.get_mut(tid) {
        for item in items.iter_mut() {
            if item.dfs_id == my_id {
                item.subtree_end = end;
            }
        }
    }
    Ok(end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{held_locks, replay, Execution, ThreadId};
    use crate::symbols::RuleId;
    use crate::parse::parse_dpn;

    fn toy() -> MonitorDpn {
        parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap()
    }

    fn montoy() -> MonitorDpn {
        parse_dpn("init q g\nlock a\nrule r1 mon(a) q g -> q g2 h\nrule r2 ret q g2 -> q\n")
            .unwrap()
    }

    fn exec(steps: &[(ThreadId, u32)]) -> Execution {
        Execution::new(steps.iter().map(|(t, r)| (t.clone(), RuleId(*r))).collect())
    }

    #[test]
    fn empty_execution_is_initial_nil() {
        let dpn = toy();
        let t = tree_of_execution(&dpn, &Execution::default()).unwrap();
        assert_eq!(t, ExecTree::nil(dpn.init_control, dpn.init_stack));
    }

    #[test]
    fn toy_single_base_step() {
        let dpn = toy();
        let t = tree_of_execution(&dpn, &exec(&[(ThreadId::root(), 0)])).unwrap();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        assert_eq!(t, ExecTree::base(RuleId(0), ExecTree::nil(dpn.init_control, h)));
    }

    #[test]
    fn montoy_use_tree() {
        let dpn = montoy();
        let t =
            tree_of_execution(&dpn, &exec(&[(ThreadId::root(), 0), (ThreadId::root(), 1)]))
                .unwrap();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        let expected = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(dpn.init_control, h),
        );
        assert_eq!(t, expected);
        // Cross-check via conf_of_tree: one frame, no locks held.
        let conf = conf_of_tree(&dpn, &t).unwrap();
        assert_eq!(
            conf,
            replay(&dpn, &exec(&[(ThreadId::root(), 0), (ThreadId::root(), 1)]), Sensitivity::LockSensitive)
                .unwrap()
        );
        assert!(held_locks(&conf).is_empty());
    }

    #[test]
    fn conf_of_nil() {
        let dpn = toy();
        let t = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert_eq!(
            conf_of_tree(&dpn, &t).unwrap(),
            crate::model::initial_configuration(&dpn)
        );
    }

    #[test]
    fn cut_at_start_wraps_initial_nil() {
        let dpn = toy();
        let t = cut_tree_of_executions(&dpn, &Execution::default(), &Execution::default())
            .unwrap();
        assert_eq!(
            t,
            ExecTree::cut(
                dpn.init_control,
                dpn.init_stack,
                1,
                ExecTree::nil(dpn.init_control, dpn.init_stack)
            )
        );
    }

    #[test]
    fn cut_with_empty_suffix_sits_above_terminus() {
        let dpn = toy();
        let pre = exec(&[(ThreadId::root(), 0)]);
        let t = cut_tree_of_executions(&dpn, &pre, &Execution::default()).unwrap();
        let h = StackId(dpn.stacks.lookup("h").unwrap());
        assert_eq!(
            t,
            ExecTree::base(
                RuleId(0),
                ExecTree::cut(dpn.init_control, h, 1, ExecTree::nil(dpn.init_control, h))
            )
        );
    }

    #[test]
    fn strip_cuts_removes_all() {
        let dpn = toy();
        let pre = exec(&[(ThreadId::root(), 0)]);
        let cut = cut_tree_of_executions(&dpn, &pre, &Execution::default()).unwrap();
        let plain = tree_of_execution(&dpn, &pre).unwrap();
        assert_eq!(strip_cuts(&cut), plain);
        assert_eq!(strip_cuts(&strip_cuts(&cut)), strip_cuts(&cut));
    }

    #[test]
    fn marked_prefix_of_cut_at_start() {
        let dpn = toy();
        let t = ExecTree::cut(
            dpn.init_control,
            dpn.init_stack,
            1,
            ExecTree::nil(dpn.init_control, dpn.init_stack),
        );
        assert_eq!(
            marked_prefix(&t).unwrap(),
            ExecTree::nil(dpn.init_control, dpn.init_stack)
        );
    }

    #[test]
    fn marked_prefix_rewrites_use_to_acq() {
        let dpn = montoy();
        // Split inside the monitor body: prefix = acquire, suffix = release.
        let pre = exec(&[(ThreadId::root(), 0)]);
        let suf = exec(&[(ThreadId::root(), 1)]);
        let cut = cut_tree_of_executions(&dpn, &pre, &suf).unwrap();
        let marked = marked_prefix(&cut).unwrap();
        assert_eq!(marked, tree_of_execution(&dpn, &pre).unwrap());
        assert!(matches!(marked.sym, TreeSymbol::Acq { .. }));
    }

    #[test]
    fn marked_prefix_missing_cut_is_rejected() {
        let dpn = toy();
        let t = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert_eq!(marked_prefix(&t), Err(TreeError::NotCutWellformed));
    }

    #[test]
    fn sexpr_roundtrip_and_grammar() {
        let dpn = montoy();
        let t = ExecTree::use_(
            RuleId(0),
            LockId(0),
            false,
            ExecTree::ret(RuleId(1)),
            ExecTree::nil(ControlId(0), StackId(2)),
        );
        let text = serialize_tree(&dpn, &t);
        assert_eq!(text, "(USE r1 a nr (RET r2) (NIL q h))");
        assert_eq!(parse_tree(&dpn, &text).unwrap(), t);
        assert_eq!(parse_tree(&dpn, "( USE r1 a nr\n (RET r2) (NIL q h) )").unwrap(), t);
        assert!(parse_tree(&dpn, "(USE r1 a nr (RET r2)").is_err());
    }

    #[test]
    fn nil_sexpr() {
        let dpn = toy();
        let t = ExecTree::nil(dpn.init_control, dpn.init_stack);
        assert_eq!(serialize_tree(&dpn, &t), "(NIL q g)");
    }

    #[test]
    fn flatten_inverts_tree_construction() {
        let dpn = parse_dpn(
            "init q m0\n\
             lock a\n\
             rule r1 spawn q m0 -> [q t0] q m1\n\
             rule r2 mon(a) q m1 -> q b0 m2\n\
             rule r3 ret q b0 -> q\n\
             rule r4 base q t0 -> q t1\n",
        )
        .unwrap();
        let root = ThreadId::root();
        let child = root.child(1);
        let e = exec(&[(root.clone(), 0), (child.clone(), 3), (root.clone(), 1), (root.clone(), 2)]);
        let t = tree_of_execution(&dpn, &e).unwrap();
        let flat = flatten_tree(&dpn, &t).unwrap();
        assert_eq!(flat.threads.len(), 2);
        let root_rules: Vec<_> = flat.threads[&root].iter().filter_map(FlatItem::rule).collect();
        assert_eq!(root_rules, vec![RuleId(0), RuleId(1), RuleId(2)]);
        let child_rules: Vec<_> = flat.threads[&child].iter().filter_map(FlatItem::rule).collect();
        assert_eq!(child_rules, vec![RuleId(3)]);
        // The monitor's matching return is recorded.
        let mon = &flat.threads[&root][1];
        assert_eq!(mon.matching_return, Some(2));
        // The spawn's subtree covers the spawned thread's items.
        let spawn = &flat.threads[&root][0];
        let spawned_item = &flat.threads[&child][0];
        assert!(spawn.dfs_id < spawned_item.dfs_id && spawned_item.dfs_id <= spawn.subtree_end);
    }
}
