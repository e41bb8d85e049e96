//! Brute-force ground truth: bounded explicit-state exploration of both
//! semantics, exhaustive execution-tree enumeration, and schedulability
//! checking by interleaving search. Deliberately naive; every automaton
//! construction is property-tested against this module.

use crate::symbols::RuleId;
use crate::model::{
    enabled, initial_configuration, step, Configuration, Execution, MonitorDpn, RuleKind,
    RuleSet, Sensitivity, ThreadId,
};
use crate::tree::{tree_of_execution, ExecTree, FlatKind, FlatTree, TreeError};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

/// Exploration limits. Exploration stops when any bound trips and reports
/// whether truncation occurred.
#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub max_steps: usize,
    pub max_configs: usize,
    pub max_threads: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_steps: 12,
            max_configs: 100_000,
            max_threads: 4,
        }
    }
}

impl Bounds {
    pub fn with_steps(self, max_steps: usize) -> Bounds {
        Bounds { max_steps, ..self }
    }
}

#[derive(Clone, Debug)]
pub struct ExploreResult {
    /// Deduplicated configurations in discovery order, each with a
    /// representative execution reaching it.
    pub configs: Vec<(Configuration, Execution)>,
    pub truncated: bool,
}

impl ExploreResult {
    pub fn contains(&self, conf: &Configuration) -> bool {
        self.configs.iter().any(|(c, _)| c == conf)
    }
}

/// BFS over `step` from the initial configuration.
pub fn explore(dpn: &MonitorDpn, sensitivity: Sensitivity, bounds: &Bounds) -> ExploreResult {
    explore_from(
        dpn,
        initial_configuration(dpn),
        &dpn.all_rules(),
        sensitivity,
        bounds,
    )
}

/// BFS over `step` from an arbitrary configuration, restricted to `allowed`.
pub fn explore_from(
    dpn: &MonitorDpn,
    start: Configuration,
    allowed: &RuleSet,
    sensitivity: Sensitivity,
    bounds: &Bounds,
) -> ExploreResult {
    let mut seen: HashSet<Configuration> = HashSet::new();
    let mut configs = Vec::new();
    let mut truncated = false;
    let mut queue: VecDeque<(Configuration, usize)> = VecDeque::new();

    seen.insert(start.clone());
    configs.push((start.clone(), Execution::default()));
    let mut exec_of: HashMap<Configuration, Execution> = HashMap::new();
    exec_of.insert(start.clone(), Execution::default());
    queue.push_back((start, 0));

    while let Some((conf, depth)) = queue.pop_front() {
        let moves = enabled(dpn, &conf, sensitivity);
        if depth == bounds.max_steps {
            if moves.iter().any(|&(_, r)| allowed.contains(r)) {
                truncated = true;
            }
            continue;
        }
        for (tid, rule) in moves {
            if !allowed.contains(rule) {
                continue;
            }
            if matches!(dpn.rule(rule).kind, RuleKind::Spawn { .. })
                && conf.thread_count() >= bounds.max_threads
            {
                truncated = true;
                continue;
            }
            let next = step(dpn, &conf, &tid, rule, sensitivity).expect("enabled step applies");
            if seen.contains(&next) {
                continue;
            }
            if seen.len() >= bounds.max_configs {
                truncated = true;
                continue;
            }
            let mut exec = exec_of[&conf].clone();
            exec.steps.push((tid, rule));
            seen.insert(next.clone());
            exec_of.insert(next.clone(), exec.clone());
            configs.push((next.clone(), exec));
            queue.push_back((next, depth + 1));
        }
    }

    ExploreResult { configs, truncated }
}

/// All executions of length up to `bounds.max_steps`, in DFS order.
/// `max_configs` bounds the number of executions visited.
pub fn enumerate_executions(
    dpn: &MonitorDpn,
    sensitivity: Sensitivity,
    bounds: &Bounds,
) -> (Vec<Execution>, bool) {
    let mut out = Vec::new();
    let mut truncated = false;
    let mut stack: Vec<(Configuration, Execution)> =
        vec![(initial_configuration(dpn), Execution::default())];
    while let Some((conf, exec)) = stack.pop() {
        if out.len() >= bounds.max_configs {
            truncated = true;
            break;
        }
        out.push(exec.clone());
        if exec.len() == bounds.max_steps {
            if !enabled(dpn, &conf, sensitivity).is_empty() {
                truncated = true;
            }
            continue;
        }
        // Reverse so the smallest (tid, rule) pair is explored first.
        for (tid, rule) in enabled(dpn, &conf, sensitivity).into_iter().rev() {
            if matches!(dpn.rule(rule).kind, RuleKind::Spawn { .. })
                && conf.thread_count() >= bounds.max_threads
            {
                truncated = true;
                continue;
            }
            let next = step(dpn, &conf, &tid, rule, sensitivity).expect("enabled step applies");
            let mut e = exec.clone();
            e.steps.push((tid, rule));
            stack.push((next, e));
        }
    }
    (out, truncated)
}

/// `{∧(π) | π explored within bounds}`, deduplicated.
pub fn enumerate_trees(
    dpn: &MonitorDpn,
    sensitivity: Sensitivity,
    bounds: &Bounds,
) -> (BTreeSet<ExecTree>, bool) {
    let (execs, truncated) = enumerate_executions(dpn, sensitivity, bounds);
    let trees = execs
        .iter()
        .map(|e| tree_of_execution(dpn, e).expect("explored executions replay"))
        .collect();
    (trees, truncated)
}

struct ScheduleSearch<'a> {
    dpn: &'a MonitorDpn,
    flat: &'a FlatTree,
    order: Vec<ThreadId>,
    sensitivity: Sensitivity,
    memo: HashMap<Vec<usize>, u64>,
    early_exit: bool,
    found: bool,
}

impl<'a> ScheduleSearch<'a> {
    fn new(
        dpn: &'a MonitorDpn,
        flat: &'a FlatTree,
        sensitivity: Sensitivity,
        early_exit: bool,
    ) -> Self {
        ScheduleSearch {
            dpn,
            flat,
            order: flat.threads.keys().cloned().collect(),
            sensitivity,
            memo: HashMap::new(),
            early_exit,
            found: false,
        }
    }

    fn positions_key(&self, pos: &BTreeMap<ThreadId, usize>) -> Vec<usize> {
        self.order.iter().map(|t| pos.get(t).copied().unwrap_or(0)).collect()
    }

    /// Whether the final configuration matches the tree's recorded terminals.
    fn terminals_match(&self, conf: &Configuration) -> bool {
        for (tid, terminal) in &self.flat.terminals {
            let Some(thread) = conf.thread(tid) else {
                return false;
            };
            match terminal {
                Some((p, g)) => {
                    if thread.control != *p || thread.top().map(|f| f.stack) != Some(*g) {
                        return false;
                    }
                }
                None => {
                    if !thread.frames.is_empty() {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn count(&mut self, conf: &Configuration, pos: &BTreeMap<ThreadId, usize>) -> u64 {
        if self.early_exit && self.found {
            return 0;
        }
        let key = self.positions_key(pos);
        if let Some(&c) = self.memo.get(&key) {
            return c;
        }
        let done = self
            .flat
            .threads
            .iter()
            .all(|(t, items)| pos.get(t).copied().unwrap_or(0) == items.len());
        if done {
            let ok = self.terminals_match(conf);
            if ok {
                self.found = true;
            }
            let c = ok as u64;
            self.memo.insert(key, c);
            return c;
        }

        let mut total: u64 = 0;
        let live: Vec<ThreadId> = conf.thread_ids().cloned().collect();
        for tid in live {
            let Some(items) = self.flat.threads.get(&tid) else {
                // A thread outside the tree exists in the configuration:
                // this cannot be a schedule of the tree.
                continue;
            };
            let p = pos.get(&tid).copied().unwrap_or(0);
            if p >= items.len() {
                continue;
            }
            let item = &items[p];
            let (rule, tree_reentrant, expected_child) = match &item.kind {
                FlatKind::Step { rule, reentrant, spawned } => (*rule, *reentrant, spawned.clone()),
                FlatKind::Cut { .. } => {
                    // Schedule counting is only defined for cut-free trees.
                    continue;
                }
            };
            let thread = conf.thread(&tid).expect("live thread");
            if let RuleKind::Monitor { lock, .. } = self.dpn.rule(rule).kind {
                let actually_reentrant = thread.held_locks().contains(lock);
                if actually_reentrant != tree_reentrant {
                    continue;
                }
            }
            if let RuleKind::Spawn { .. } = self.dpn.rule(rule).kind {
                let child = tid.child(conf.next_child_index(&tid));
                if Some(child) != expected_child {
                    continue;
                }
            }
            let Ok(next) = step(self.dpn, conf, &tid, rule, self.sensitivity) else {
                continue;
            };
            let mut next_pos = pos.clone();
            next_pos.insert(tid.clone(), p + 1);
            total = total.saturating_add(self.count(&next, &next_pos));
        }
        self.memo.insert(key, total);
        total
    }
}

/// Exhaustive count of interleavings `π` with `∧(π) = t` under the chosen
/// semantics. The tree must be cut-free.
pub fn count_schedules(
    dpn: &MonitorDpn,
    tree: &ExecTree,
    sensitivity: Sensitivity,
) -> Result<u64, TreeError> {
    if tree.contains_cut() {
        return Err(TreeError::HasCut);
    }
    let flat = crate::tree::flatten_tree(dpn, tree)?;
    let mut search = ScheduleSearch::new(dpn, &flat, sensitivity, false);
    let conf = initial_configuration(dpn);
    let pos: BTreeMap<ThreadId, usize> = BTreeMap::new();
    Ok(search.count(&conf, &pos))
}

/// Whether the per-thread step sequences in `suffix` can be interleaved into
/// a valid execution from `start` under the chosen semantics.
pub fn is_schedulable_from(
    dpn: &MonitorDpn,
    start: &Configuration,
    suffix: &BTreeMap<ThreadId, Vec<RuleId>>,
    sensitivity: Sensitivity,
) -> bool {
    let order: Vec<ThreadId> = suffix.keys().cloned().collect();
    let mut memo: HashSet<Vec<usize>> = HashSet::new();
    fn search(
        dpn: &MonitorDpn,
        conf: &Configuration,
        suffix: &BTreeMap<ThreadId, Vec<RuleId>>,
        pos: &BTreeMap<ThreadId, usize>,
        order: &[ThreadId],
        sensitivity: Sensitivity,
        memo: &mut HashSet<Vec<usize>>,
    ) -> bool {
        let key: Vec<usize> = order.iter().map(|t| pos.get(t).copied().unwrap_or(0)).collect();
        if !memo.insert(key) {
            return false;
        }
        if suffix
            .iter()
            .all(|(t, steps)| pos.get(t).copied().unwrap_or(0) == steps.len())
        {
            return true;
        }
        for (tid, steps) in suffix {
            let p = pos.get(tid).copied().unwrap_or(0);
            if p >= steps.len() || conf.thread(tid).is_none() {
                continue;
            }
            let Ok(next) = step(dpn, conf, tid, steps[p], sensitivity) else {
                continue;
            };
            let mut next_pos = pos.clone();
            next_pos.insert(tid.clone(), p + 1);
            if search(dpn, &next, suffix, &next_pos, order, sensitivity, memo) {
                return true;
            }
        }
        false
    }
    search(dpn, start, suffix, &BTreeMap::new(), &order, sensitivity, &mut memo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_dpn;

    fn toy() -> MonitorDpn {
        parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap()
    }

    #[test]
    fn toy_explore_two_configs() {
        let dpn = toy();
        let res = explore(&dpn, Sensitivity::LockSensitive, &Bounds::default());
        assert_eq!(res.configs.len(), 2);
        assert!(!res.truncated);
    }

    #[test]
    fn toy_trees() {
        let dpn = toy();
        let (trees, truncated) = enumerate_trees(&dpn, Sensitivity::LockSensitive, &Bounds::default());
        assert!(!truncated);
        let h = crate::symbols::StackId(dpn.stacks.lookup("h").unwrap());
        let expected: BTreeSet<ExecTree> = [
            ExecTree::nil(dpn.init_control, dpn.init_stack),
            ExecTree::base(RuleId(0), ExecTree::nil(dpn.init_control, h)),
        ]
        .into_iter()
        .collect();
        assert_eq!(trees, expected);
    }

    #[test]
    fn sensitive_configs_subset_of_insensitive() {
        let dpn = parse_dpn(
            "init q m0\n\
             lock a\n\
             rule r1 spawn q m0 -> [q t0] q m1\n\
             rule r2 mon(a) q m1 -> q b0 m2\n\
             rule r3 mon(a) q t0 -> q c0 t1\n\
             rule r4 ret q c0 -> q\n\
             rule r5 ret q b0 -> q\n",
        )
        .unwrap();
        let bounds = Bounds::default().with_steps(8);
        let sens = explore(&dpn, Sensitivity::LockSensitive, &bounds);
        let insens = explore(&dpn, Sensitivity::LockInsensitive, &bounds);
        for (c, _) in &sens.configs {
            assert!(insens.contains(c));
        }
        // Both threads inside the monitor at once is insensitive-only.
        assert!(insens.configs.len() > sens.configs.len());
    }

    #[test]
    fn single_thread_tree_has_one_schedule() {
        let dpn = toy();
        let t = tree_of_execution(
            &dpn,
            &Execution::new(vec![(ThreadId::root(), RuleId(0))]),
        )
        .unwrap();
        assert_eq!(count_schedules(&dpn, &t, Sensitivity::LockSensitive).unwrap(), 1);
    }

    #[test]
    fn schedule_count_agrees_with_execution_enumeration() {
        // Two independent threads: the tree's schedules are all interleavings.
        let dpn = parse_dpn(
            "init q m0\n\
             rule r1 spawn q m0 -> [q t0] q m1\n\
             rule r2 base q m1 -> q m2\n\
             rule r3 base q t0 -> q t1\n",
        )
        .unwrap();
        let root = ThreadId::root();
        let e = Execution::new(vec![
            (root.clone(), RuleId(0)),
            (root.clone(), RuleId(1)),
            (root.child(1), RuleId(2)),
        ]);
        let t = tree_of_execution(&dpn, &e).unwrap();
        // spawn; then {r2, r3} in either order.
        assert_eq!(count_schedules(&dpn, &t, Sensitivity::LockSensitive).unwrap(), 2);
    }

    #[test]
    fn schedulable_from_respects_locks() {
        let dpn = parse_dpn(
            "init q m0\n\
             lock a\n\
             rule r1 spawn q m0 -> [q t0] q m1\n\
             rule r2 mon(a) q m1 -> q b0 m2\n\
             rule r3 mon(a) q t0 -> q c0 t1\n\
             rule r4 ret q c0 -> q\n",
        )
        .unwrap();
        let root = ThreadId::root();
        let child = root.child(1);
        // Main spawns and acquires `a` and never releases.
        let prefix = Execution::new(vec![(root.clone(), RuleId(0)), (root.clone(), RuleId(1))]);
        let conf = crate::model::replay(&dpn, &prefix, Sensitivity::LockSensitive).unwrap();
        let mut suffix = BTreeMap::new();
        suffix.insert(child.clone(), vec![RuleId(2), RuleId(3)]);
        assert!(!is_schedulable_from(&dpn, &conf, &suffix, Sensitivity::LockSensitive));
    }
}
