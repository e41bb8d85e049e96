//! Monitor-DPN models and their small-step semantics.
//!
//! A model is a set of pushdown rules over interned symbols together with an
//! initial control/stack pair. Configurations map thread identifiers to
//! annotated stacks; the lock-sensitive semantics blocks a monitor rule while
//! its lock is held elsewhere, the lock-insensitive one never blocks.

use crate::symbols::{ActionId, ControlId, LockId, LockSet, RuleId, StackId, SymbolTable};
use smallvec::SmallVec;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// The shape-specific payload of a transition rule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleKind {
    /// `p γ -> p' γ'`
    Base { to_control: ControlId, to_stack: StackId },
    /// `p γ -> p' γ' γr`
    Call {
        to_control: ControlId,
        to_stack: StackId,
        ret_stack: StackId,
    },
    /// `p γ -> p'`
    Return { to_control: ControlId },
    /// `p γ -> ps γs p' γ'`
    Spawn {
        spawn_control: ControlId,
        spawn_stack: StackId,
        to_control: ControlId,
        to_stack: StackId,
    },
    /// `p γ -(x)-> p' γ' γr`
    Monitor {
        lock: LockId,
        to_control: ControlId,
        to_stack: StackId,
        ret_stack: StackId,
    },
}

/// A transition rule; `from_control`/`from_stack` are the `p γ` on the left.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Rule {
    pub id: RuleId,
    pub from_control: ControlId,
    pub from_stack: StackId,
    pub action: Option<ActionId>,
    pub kind: RuleKind,
}

impl Rule {
    pub fn is_monitor(&self) -> bool {
        matches!(self.kind, RuleKind::Monitor { .. })
    }

    pub fn lock(&self) -> Option<LockId> {
        match self.kind {
            RuleKind::Monitor { lock, .. } => Some(lock),
            _ => None,
        }
    }
}

/// A validated Monitor-DPN.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorDpn {
    pub controls: SymbolTable,
    pub stacks: SymbolTable,
    pub locks: SymbolTable,
    pub actions: SymbolTable,
    pub rule_names: SymbolTable,
    rules: Vec<Rule>,
    pub init_control: ControlId,
    pub init_stack: StackId,
}

impl MonitorDpn {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        controls: SymbolTable,
        stacks: SymbolTable,
        locks: SymbolTable,
        actions: SymbolTable,
        rule_names: SymbolTable,
        rules: Vec<Rule>,
        init_control: ControlId,
        init_stack: StackId,
    ) -> Self {
        MonitorDpn {
            controls,
            stacks,
            locks,
            actions,
            rule_names,
            rules,
            init_control,
            init_stack,
        }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.index()]
    }

    pub fn rule_ids(&self) -> impl Iterator<Item = RuleId> + '_ {
        (0..self.rules.len()).map(|i| RuleId(i as u32))
    }

    pub fn rule_name(&self, id: RuleId) -> &str {
        self.rule_names.name(id.0)
    }

    pub fn rule_by_name(&self, name: &str) -> Option<RuleId> {
        self.rule_names.lookup(name).map(RuleId)
    }

    pub fn lock_count(&self) -> usize {
        self.locks.len()
    }

    /// Locks that occur in some monitor rule. Only these can ever be held.
    pub fn used_locks(&self) -> LockSet {
        self.rules.iter().filter_map(Rule::lock).collect()
    }

    pub fn all_rules(&self) -> RuleSet {
        RuleSet::all(self)
    }
}

/// A subset of a model's rules, by id.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct RuleSet {
    members: std::collections::BTreeSet<RuleId>,
}

impl RuleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(dpn: &MonitorDpn) -> Self {
        RuleSet {
            members: dpn.rule_ids().collect(),
        }
    }

    pub fn contains(&self, id: RuleId) -> bool {
        self.members.contains(&id)
    }

    pub fn insert(&mut self, id: RuleId) {
        self.members.insert(id);
    }

    pub fn remove(&mut self, id: RuleId) {
        self.members.remove(&id);
    }

    pub fn without(&self, ids: impl IntoIterator<Item = RuleId>) -> RuleSet {
        let mut s = self.clone();
        for id in ids {
            s.remove(id);
        }
        s
    }

    pub fn is_subset(&self, other: &RuleSet) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn iter(&self) -> impl Iterator<Item = RuleId> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl FromIterator<RuleId> for RuleSet {
    fn from_iter<T: IntoIterator<Item = RuleId>>(iter: T) -> Self {
        RuleSet {
            members: iter.into_iter().collect(),
        }
    }
}

/// A thread identifier: the spawn path from the root thread.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ThreadId {
    path: SmallVec<[u32; 4]>,
}

impl ThreadId {
    pub fn root() -> Self {
        ThreadId::default()
    }

    pub fn child(&self, n: u32) -> ThreadId {
        let mut path = self.path.clone();
        path.push(n);
        ThreadId { path }
    }

    pub fn parent(&self) -> Option<ThreadId> {
        if self.path.is_empty() {
            return None;
        }
        let mut path = self.path.clone();
        path.pop();
        Some(ThreadId { path })
    }

    pub fn is_root(&self) -> bool {
        self.path.is_empty()
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// Parses the `0[.n]*` display form.
    pub fn parse(text: &str) -> Option<ThreadId> {
        let mut parts = text.split('.');
        if parts.next() != Some("0") {
            return None;
        }
        let mut path = SmallVec::new();
        for p in parts {
            let n: u32 = p.parse().ok()?;
            if n == 0 {
                return None;
            }
            path.push(n);
        }
        Some(ThreadId { path })
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0")?;
        for n in &self.path {
            write!(f, ".{}", n)?;
        }
        Ok(())
    }
}

impl fmt::Debug for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self)
    }
}

/// One stack frame: a symbol and the lock annotation of the frame below it,
/// `None` meaning the no-lock marker.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Frame {
    pub stack: StackId,
    pub ann: Option<LockId>,
}

impl Frame {
    pub fn plain(stack: StackId) -> Frame {
        Frame { stack, ann: None }
    }
}

/// One thread's control state and stack, topmost frame first.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ThreadConfig {
    pub control: ControlId,
    pub frames: Vec<Frame>,
}

impl ThreadConfig {
    pub fn top(&self) -> Option<&Frame> {
        self.frames.first()
    }

    pub fn held_locks(&self) -> LockSet {
        self.frames.iter().filter_map(|f| f.ann).collect()
    }
}

/// A DPN configuration: a finite map from thread ids to thread configs.
/// Unchanged threads are shared between successor configurations.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Configuration {
    threads: BTreeMap<ThreadId, Arc<ThreadConfig>>,
}

impl Configuration {
    pub fn thread(&self, tid: &ThreadId) -> Option<&ThreadConfig> {
        self.threads.get(tid).map(|t| t.as_ref())
    }

    pub fn threads(&self) -> impl Iterator<Item = (&ThreadId, &ThreadConfig)> {
        self.threads.iter().map(|(k, v)| (k, v.as_ref()))
    }

    pub fn thread_ids(&self) -> impl Iterator<Item = &ThreadId> {
        self.threads.keys()
    }

    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    pub fn insert(&mut self, tid: ThreadId, config: ThreadConfig) {
        self.threads.insert(tid, Arc::new(config));
    }

    /// Index for the next child spawned by `tid`: one past the largest
    /// existing child index.
    pub fn next_child_index(&self, tid: &ThreadId) -> u32 {
        let mut max = 0;
        for existing in self.threads.keys() {
            if existing.path().len() == tid.path().len() + 1
                && existing.path().starts_with(tid.path())
            {
                max = max.max(existing.path()[tid.path().len()]);
            }
        }
        max + 1
    }
}

/// A replayable sequence of steps from the initial configuration.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Execution {
    pub steps: Vec<(ThreadId, RuleId)>,
}

impl Execution {
    pub fn new(steps: Vec<(ThreadId, RuleId)>) -> Self {
        Execution { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Rules used within the execution, as a set.
    pub fn used_rules(&self) -> RuleSet {
        self.steps.iter().map(|&(_, r)| r).collect()
    }

    pub fn concat(&self, suffix: &Execution) -> Execution {
        let mut steps = self.steps.clone();
        steps.extend(suffix.steps.iter().cloned());
        Execution::new(steps)
    }

    /// Renders the execution as `step <tid> <rule>` lines.
    pub fn to_text(&self, dpn: &MonitorDpn) -> String {
        let mut out = String::new();
        for (tid, rule) in &self.steps {
            out.push_str(&format!("step {} {}\n", tid, dpn.rule_name(*rule)));
        }
        out
    }

    /// Parses `step <tid> <rule>` lines; blank lines and `#` comments allowed.
    pub fn from_text(dpn: &MonitorDpn, text: &str) -> Result<Execution, SemanticsError> {
        let mut steps = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let bad = || SemanticsError::BadStepLine { line: lineno + 1 };
            if parts.next() != Some("step") {
                return Err(bad());
            }
            let tid = parts.next().and_then(ThreadId::parse).ok_or_else(bad)?;
            let rule = parts
                .next()
                .and_then(|n| dpn.rule_by_name(n))
                .ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            steps.push((tid, rule));
        }
        Ok(Execution::new(steps))
    }
}

/// Which semantics to step under.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sensitivity {
    LockSensitive,
    LockInsensitive,
}

impl Sensitivity {
    pub fn is_sensitive(self) -> bool {
        matches!(self, Sensitivity::LockSensitive)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("step ({tid}, {rule:?}) is not enabled")]
    NotEnabled { tid: ThreadId, rule: RuleId },
    #[error("execution is not replayable at step {index}")]
    NotReplayable { index: usize },
    #[error("malformed step line {line}")]
    BadStepLine { line: usize },
}

/// The initial configuration: a single root thread on `(p0, γ0)`.
pub fn initial_configuration(dpn: &MonitorDpn) -> Configuration {
    let mut c = Configuration::default();
    c.insert(
        ThreadId::root(),
        ThreadConfig {
            control: dpn.init_control,
            frames: vec![Frame::plain(dpn.init_stack)],
        },
    );
    c
}

/// Locks held anywhere in the configuration.
pub fn held_locks(conf: &Configuration) -> LockSet {
    let mut s = LockSet::new();
    for (_, t) in conf.threads() {
        for f in &t.frames {
            if let Some(l) = f.ann {
                s.insert(l);
            }
        }
    }
    s
}

fn rule_matches(rule: &Rule, thread: &ThreadConfig) -> bool {
    match thread.top() {
        Some(top) => rule.from_control == thread.control && rule.from_stack == top.stack,
        None => false,
    }
}

fn monitor_allowed(
    conf: &Configuration,
    thread: &ThreadConfig,
    lock: LockId,
    sensitivity: Sensitivity,
) -> bool {
    if !sensitivity.is_sensitive() {
        return true;
    }
    // Reentrant monitors: the holder itself may re-acquire.
    !held_locks(conf).contains(lock) || thread.held_locks().contains(lock)
}

/// All `(tid, rule)` pairs for which `step` would succeed, in deterministic
/// order (thread id, then rule id).
pub fn enabled(
    dpn: &MonitorDpn,
    conf: &Configuration,
    sensitivity: Sensitivity,
) -> Vec<(ThreadId, RuleId)> {
    let mut out = Vec::new();
    for (tid, thread) in conf.threads() {
        for rule in dpn.rules() {
            if !rule_matches(rule, thread) {
                continue;
            }
            if let RuleKind::Monitor { lock, .. } = rule.kind {
                if !monitor_allowed(conf, thread, lock, sensitivity) {
                    continue;
                }
            }
            out.push((tid.clone(), rule.id));
        }
    }
    out
}

/// Applies one transition. Fails with `NotEnabled` when the rule does not
/// match or its lock is blocked under the chosen semantics.
pub fn step(
    dpn: &MonitorDpn,
    conf: &Configuration,
    tid: &ThreadId,
    rule_id: RuleId,
    sensitivity: Sensitivity,
) -> Result<Configuration, SemanticsError> {
    let not_enabled = || SemanticsError::NotEnabled {
        tid: tid.clone(),
        rule: rule_id,
    };
    let thread = conf.thread(tid).ok_or_else(not_enabled)?;
    let rule = dpn.rule(rule_id);
    if !rule_matches(rule, thread) {
        return Err(not_enabled());
    }

    let top_ann = thread.top().expect("matched rule implies a frame").ann;
    let rest = || thread.frames[1..].to_vec();

    let mut next = conf.clone();
    match rule.kind {
        RuleKind::Base { to_control, to_stack } => {
            let mut frames = vec![Frame { stack: to_stack, ann: top_ann }];
            frames.extend(rest());
            next.insert(tid.clone(), ThreadConfig { control: to_control, frames });
        }
        RuleKind::Return { to_control } => {
            next.insert(tid.clone(), ThreadConfig { control: to_control, frames: rest() });
        }
        RuleKind::Call { to_control, to_stack, ret_stack } => {
            let mut frames = vec![
                Frame::plain(to_stack),
                Frame { stack: ret_stack, ann: top_ann },
            ];
            frames.extend(rest());
            next.insert(tid.clone(), ThreadConfig { control: to_control, frames });
        }
        RuleKind::Monitor { lock, to_control, to_stack, ret_stack } => {
            if !monitor_allowed(conf, thread, lock, sensitivity) {
                return Err(not_enabled());
            }
            let mut frames = vec![
                Frame { stack: to_stack, ann: Some(lock) },
                Frame { stack: ret_stack, ann: top_ann },
            ];
            frames.extend(rest());
            next.insert(tid.clone(), ThreadConfig { control: to_control, frames });
        }
        RuleKind::Spawn { spawn_control, spawn_stack, to_control, to_stack } => {
            let mut frames = vec![Frame { stack: to_stack, ann: top_ann }];
            frames.extend(rest());
            next.insert(tid.clone(), ThreadConfig { control: to_control, frames });
            let child = tid.child(conf.next_child_index(tid));
            next.insert(
                child,
                ThreadConfig {
                    control: spawn_control,
                    frames: vec![Frame::plain(spawn_stack)],
                },
            );
        }
    }
    Ok(next)
}

/// Replays an execution from the initial configuration.
pub fn replay(
    dpn: &MonitorDpn,
    execution: &Execution,
    sensitivity: Sensitivity,
) -> Result<Configuration, SemanticsError> {
    replay_from(dpn, initial_configuration(dpn), execution, sensitivity)
}

/// Replays an execution from an arbitrary configuration.
pub fn replay_from(
    dpn: &MonitorDpn,
    start: Configuration,
    execution: &Execution,
    sensitivity: Sensitivity,
) -> Result<Configuration, SemanticsError> {
    let mut conf = start;
    for (index, (tid, rule)) in execution.steps.iter().enumerate() {
        conf = step(dpn, &conf, tid, *rule, sensitivity)
            .map_err(|_| SemanticsError::NotReplayable { index })?;
    }
    Ok(conf)
}

/// The completion relation: `(p, γ, p')` holds when a thread sitting on a
/// single frame `(p, γ)` can pop it and reach control `p'`.
fn completion_relation(dpn: &MonitorDpn) -> std::collections::BTreeSet<(ControlId, StackId, ControlId)> {
    let mut completes = std::collections::BTreeSet::new();
    loop {
        let mut changed = false;
        for rule in dpn.rules() {
            let (p, g) = (rule.from_control, rule.from_stack);
            let new: Vec<(ControlId, StackId, ControlId)> = match rule.kind {
                RuleKind::Return { to_control } => vec![(p, g, to_control)],
                RuleKind::Base { to_control, to_stack }
                | RuleKind::Spawn { to_control, to_stack, .. } => completes
                    .iter()
                    .filter(|&&(p1, g1, _)| p1 == to_control && g1 == to_stack)
                    .map(|&(_, _, p2)| (p, g, p2))
                    .collect(),
                RuleKind::Call { to_control, to_stack, ret_stack }
                | RuleKind::Monitor { to_control, to_stack, ret_stack, .. } => {
                    let inner: Vec<ControlId> = completes
                        .iter()
                        .filter(|&&(p1, g1, _)| p1 == to_control && g1 == to_stack)
                        .map(|&(_, _, p2)| p2)
                        .collect();
                    inner
                        .iter()
                        .flat_map(|&q| {
                            completes
                                .iter()
                                .filter(move |&&(p1, g1, _)| p1 == q && g1 == ret_stack)
                                .map(|&(_, _, p2)| (p, g, p2))
                                .collect::<Vec<_>>()
                        })
                        .collect()
                }
            };
            for entry in new {
                changed |= completes.insert(entry);
            }
        }
        if !changed {
            return completes;
        }
    }
}

/// Start frames (initial pair and spawn targets) whose stack can be emptied.
/// A non-empty result violates the assumption the iterated analysis needs.
pub fn check_no_empty_stack(dpn: &MonitorDpn) -> Vec<(ControlId, StackId)> {
    let completes = completion_relation(dpn);
    let mut starts: Vec<(ControlId, StackId)> = vec![(dpn.init_control, dpn.init_stack)];
    for rule in dpn.rules() {
        if let RuleKind::Spawn { spawn_control, spawn_stack, .. } = rule.kind {
            if !starts.contains(&(spawn_control, spawn_stack)) {
                starts.push((spawn_control, spawn_stack));
            }
        }
    }
    starts
        .into_iter()
        .filter(|&(p, g)| completes.iter().any(|&(p1, g1, _)| p1 == p && g1 == g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_dpn;

    fn toy() -> MonitorDpn {
        parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap()
    }

    fn montoy() -> MonitorDpn {
        parse_dpn(
            "init q g\nlock a\nrule r1 mon(a) q g -> q g2 h\nrule r2 ret q g2 -> q\n",
        )
        .unwrap()
    }

    fn spawntoy() -> MonitorDpn {
        parse_dpn("init q g\nrule r1 spawn q g -> [q s] q h\n").unwrap()
    }

    #[test]
    fn initial_is_single_root() {
        let dpn = toy();
        let c = initial_configuration(&dpn);
        assert_eq!(c.thread_count(), 1);
        let t = c.thread(&ThreadId::root()).unwrap();
        assert_eq!(t.control, dpn.init_control);
        assert_eq!(t.frames, vec![Frame::plain(dpn.init_stack)]);
        assert!(held_locks(&c).is_empty());
    }

    #[test]
    fn toy_enabled_and_step() {
        let dpn = toy();
        let c = initial_configuration(&dpn);
        let en = enabled(&dpn, &c, Sensitivity::LockSensitive);
        assert_eq!(en, vec![(ThreadId::root(), RuleId(0))]);
        let c2 = step(&dpn, &c, &ThreadId::root(), RuleId(0), Sensitivity::LockSensitive).unwrap();
        let t = c2.thread(&ThreadId::root()).unwrap();
        assert_eq!(dpn.stacks.name(t.frames[0].stack.0), "h");
        assert!(enabled(&dpn, &c2, Sensitivity::LockSensitive).is_empty());
    }

    #[test]
    fn spawn_creates_numbered_child() {
        let dpn = spawntoy();
        let c = initial_configuration(&dpn);
        let c2 = step(&dpn, &c, &ThreadId::root(), RuleId(0), Sensitivity::LockSensitive).unwrap();
        assert_eq!(c2.thread_count(), 2);
        let child = ThreadId::root().child(1);
        let t = c2.thread(&child).unwrap();
        assert_eq!(dpn.stacks.name(t.frames[0].stack.0), "s");
        assert_eq!(t.frames[0].ann, None);
    }

    #[test]
    fn monitor_acquires_and_return_releases() {
        let dpn = montoy();
        let c = initial_configuration(&dpn);
        let c1 = step(&dpn, &c, &ThreadId::root(), RuleId(0), Sensitivity::LockSensitive).unwrap();
        assert_eq!(held_locks(&c1).len(), 1);
        assert_eq!(c1.thread(&ThreadId::root()).unwrap().frames.len(), 2);
        let c2 = step(&dpn, &c1, &ThreadId::root(), RuleId(1), Sensitivity::LockSensitive).unwrap();
        assert!(held_locks(&c2).is_empty());
        assert_eq!(c2.thread(&ThreadId::root()).unwrap().frames.len(), 1);
    }

    #[test]
    fn sensitive_blocks_held_lock_but_not_holder() {
        // Two threads race for the same lock; holder may re-enter.
        let dpn = parse_dpn(
            "init q m0\n\
             lock a\n\
             rule r1 spawn q m0 -> [q t0] q m1\n\
             rule r2 mon(a) q m1 -> q b0 m2\n\
             rule r3 mon(a) q t0 -> q c0 t1\n\
             rule r4 mon(a) q b0 -> q d0 b1\n",
        )
        .unwrap();
        let c0 = initial_configuration(&dpn);
        let c1 = step(&dpn, &c0, &ThreadId::root(), RuleId(0), Sensitivity::LockSensitive).unwrap();
        let c2 = step(&dpn, &c1, &ThreadId::root(), RuleId(1), Sensitivity::LockSensitive).unwrap();
        // Root holds `a`: the child's acquisition is blocked sensitively...
        let child = ThreadId::root().child(1);
        let en_s = enabled(&dpn, &c2, Sensitivity::LockSensitive);
        assert!(!en_s.iter().any(|(t, _)| *t == child));
        // ...but the root itself may re-acquire (reentrance),
        assert!(en_s.iter().any(|(t, r)| t.is_root() && *r == RuleId(3)));
        // and insensitively everything is enabled.
        let en_i = enabled(&dpn, &c2, Sensitivity::LockInsensitive);
        assert!(en_i.iter().any(|(t, _)| *t == child));
        assert!(en_s.iter().all(|p| en_i.contains(p)));
    }

    #[test]
    fn step_not_enabled_error() {
        let dpn = toy();
        let c = initial_configuration(&dpn);
        let bad = step(&dpn, &c, &ThreadId::root().child(1), RuleId(0), Sensitivity::LockSensitive);
        assert!(matches!(bad, Err(SemanticsError::NotEnabled { .. })));
    }

    #[test]
    fn no_empty_stack_toy() {
        assert!(check_no_empty_stack(&toy()).is_empty());
    }

    #[test]
    fn returning_init_procedure_flagged() {
        let dpn = parse_dpn("init q g\nrule r1 ret q g -> q\n").unwrap();
        let bad = check_no_empty_stack(&dpn);
        assert_eq!(bad, vec![(dpn.init_control, dpn.init_stack)]);
    }

    #[test]
    fn completion_through_calls() {
        // init calls a procedure that returns, then returns itself.
        let dpn = parse_dpn(
            "init q g\n\
             rule r1 call q g -> q b gr\n\
             rule r2 ret q b -> q\n\
             rule r3 ret q gr -> q\n",
        )
        .unwrap();
        let bad = check_no_empty_stack(&dpn);
        assert_eq!(bad, vec![(dpn.init_control, dpn.init_stack)]);
    }

    #[test]
    fn thread_id_text_roundtrip() {
        let t = ThreadId::root().child(1).child(2);
        assert_eq!(t.to_string(), "0.1.2");
        assert_eq!(ThreadId::parse("0.1.2"), Some(t));
        assert_eq!(ThreadId::parse("0"), Some(ThreadId::root()));
        assert_eq!(ThreadId::parse("1"), None);
    }

    #[test]
    fn execution_text_roundtrip() {
        let dpn = montoy();
        let e = Execution::new(vec![
            (ThreadId::root(), RuleId(0)),
            (ThreadId::root(), RuleId(1)),
        ]);
        let text = e.to_text(&dpn);
        assert_eq!(text, "step 0 r1\nstep 0 r2\n");
        assert_eq!(Execution::from_text(&dpn, &text).unwrap(), e);
        let conf = replay(&dpn, &e, Sensitivity::LockSensitive).unwrap();
        assert!(held_locks(&conf).is_empty());
    }
}
