//! Shared helpers for the integration suites: fixture loading, symbol
//! lookup, query shorthands, and seeded random executions.

#![allow(dead_code)]

use mdpn_core::model::{enabled, step};
use mdpn_core::query::{Query, QueryStage, TargetSpec};
use mdpn_core::{
    initial_configuration, parse_dpn, Configuration, Execution, MonitorDpn, RuleId, RuleSet,
    Sensitivity, StackId, ThreadId, TreeSymbol,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeSet;
use std::sync::Arc;

pub fn fixture(name: &str) -> Arc<MonitorDpn> {
    let path = format!(
        "{}/../../fixtures/{}.dpn",
        env!("CARGO_MANIFEST_DIR"),
        name
    );
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"));
    Arc::new(parse_dpn(&text).unwrap_or_else(|e| panic!("parse {name}: {e}")))
}

pub fn stack(dpn: &MonitorDpn, name: &str) -> StackId {
    StackId(
        dpn.stacks
            .lookup(name)
            .unwrap_or_else(|| panic!("no stack symbol {name}")),
    )
}

pub fn stacks(dpn: &MonitorDpn, names: &[&str]) -> BTreeSet<StackId> {
    names.iter().map(|n| stack(dpn, n)).collect()
}

pub fn rule(dpn: &MonitorDpn, name: &str) -> RuleId {
    dpn.rule_by_name(name)
        .unwrap_or_else(|| panic!("no rule {name}"))
}

pub fn rules(dpn: &MonitorDpn, names: &[&str]) -> RuleSet {
    names.iter().map(|n| rule(dpn, n)).collect()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Rule ids mentioned anywhere in a tree.
pub fn tree_rules(tree: &mdpn_core::ExecTree) -> RuleSet {
    fn walk(t: &mdpn_core::ExecTree, out: &mut Vec<RuleId>) {
        if let Some(r) = t.sym.rule() {
            out.push(r);
        }
        for c in &t.children {
            walk(c, out);
        }
    }
    let mut out = Vec::new();
    walk(tree, &mut out);
    out.into_iter().collect()
}

/// Whether a tree symbol carries a cut.
pub fn is_cut_free(tree: &mdpn_core::ExecTree) -> bool {
    !matches!(tree.sym, TreeSymbol::Cut { .. }) && tree.children.iter().all(is_cut_free)
}

/// A random execution obtained by a bounded random walk.
pub fn random_execution(
    dpn: &MonitorDpn,
    rng: &mut StdRng,
    max_steps: usize,
    sensitivity: Sensitivity,
) -> Execution {
    let mut conf = initial_configuration(dpn);
    let mut steps = Vec::new();
    let len = rng.gen_range(0..=max_steps);
    for _ in 0..len {
        let moves = enabled(dpn, &conf, sensitivity);
        if moves.is_empty() {
            break;
        }
        let (tid, rule) = moves[rng.gen_range(0..moves.len())].clone();
        conf = step(dpn, &conf, &tid, rule, sensitivity).unwrap();
        steps.push((tid, rule));
    }
    Execution::new(steps)
}

/// A random execution split at a random point.
pub fn random_split(
    dpn: &MonitorDpn,
    rng: &mut StdRng,
    max_steps: usize,
    sensitivity: Sensitivity,
) -> (Execution, Execution) {
    let full = random_execution(dpn, rng, max_steps, sensitivity);
    let k = rng.gen_range(0..=full.len());
    (
        Execution::new(full.steps[..k].to_vec()),
        Execution::new(full.steps[k..].to_vec()),
    )
}

/// Per-thread projection of an execution's steps.
pub fn projection(
    execution: &Execution,
) -> std::collections::BTreeMap<ThreadId, Vec<RuleId>> {
    let mut out: std::collections::BTreeMap<ThreadId, Vec<RuleId>> = Default::default();
    for (tid, rule) in &execution.steps {
        out.entry(tid.clone()).or_default().push(*rule);
    }
    out
}

/// The race query used by the CLI: two threads simultaneously at an access
/// point and a write point.
pub fn race_query(
    dpn: &Arc<MonitorDpn>,
    reads: &[&str],
    writes: &[&str],
    sensitivity: Sensitivity,
) -> Query {
    let read_set = stacks(dpn, reads);
    let write_set = stacks(dpn, writes);
    let accesses: BTreeSet<StackId> = read_set.union(&write_set).copied().collect();
    Query {
        dpn: Arc::clone(dpn),
        stages: vec![QueryStage {
            target: TargetSpec::MhpPatterns(vec![accesses, write_set]),
            allowed: dpn.all_rules(),
        }],
        sensitivity,
    }
}

/// The def-use query used by the CLI: reach a generating point, then a use
/// point without passing a killing rule.
pub fn defuse_query(
    dpn: &Arc<MonitorDpn>,
    gen: &[&str],
    kill: &[&str],
    use_points: &[&str],
    sensitivity: Sensitivity,
) -> Query {
    Query {
        dpn: Arc::clone(dpn),
        stages: vec![
            QueryStage {
                target: TargetSpec::TopSymbols(stacks(dpn, gen)),
                allowed: dpn.all_rules(),
            },
            QueryStage {
                target: TargetSpec::TopSymbols(stacks(dpn, use_points)),
                allowed: dpn.all_rules().without(rules(dpn, kill).iter()),
            },
        ],
        sensitivity,
    }
}

/// Replays a witness and checks that the configuration visits the stage
/// targets recorded by the cut levels, in order.
pub fn witness_replays(dpn: &MonitorDpn, witness: &mdpn_core::query::Witness, sensitivity: Sensitivity) -> bool {
    let mut conf = initial_configuration(dpn);
    for (tid, rule) in &witness.execution.steps {
        match step(dpn, &conf, tid, *rule, sensitivity) {
            Ok(next) => conf = next,
            Err(_) => return false,
        }
    }
    true
}

/// The marked configurations of a multi-level cut tree, per level.
pub fn marked_configs(
    dpn: &MonitorDpn,
    witness: &mdpn_core::query::Witness,
    sensitivity: Sensitivity,
) -> Option<Vec<Configuration>> {
    // Replay the execution, checking after each step whether the current
    // configuration matches the next cut level's marks.
    let levels = witness.tree.max_cut_level();
    let mut marks: Vec<std::collections::BTreeMap<ThreadId, (mdpn_core::ControlId, StackId)>> =
        vec![Default::default(); levels as usize];
    collect_marks(&witness.tree, &ThreadId::root(), &mut 0, &mut marks);

    let mut out = Vec::new();
    let mut conf = initial_configuration(dpn);
    let mut next_level = 0usize;
    let mut check = |conf: &Configuration, next_level: &mut usize| {
        while *next_level < levels as usize {
            let want = &marks[*next_level];
            let ok = want.iter().all(|(tid, (p, g))| {
                conf.thread(tid).is_some_and(|t| {
                    t.control == *p && t.top().map(|f| f.stack) == Some(*g)
                })
            }) && conf.thread_count() == want.len();
            if ok {
                out.push(conf.clone());
                *next_level += 1;
            } else {
                break;
            }
        }
    };
    check(&conf, &mut next_level);
    for (tid, rule) in &witness.execution.steps {
        conf = step(dpn, &conf, tid, *rule, sensitivity).ok()?;
        check(&conf, &mut next_level);
    }
    if next_level == levels as usize {
        Some(out)
    } else {
        None
    }
}

fn collect_marks(
    tree: &mdpn_core::ExecTree,
    tid: &ThreadId,
    spawn_count: &mut u32,
    marks: &mut [std::collections::BTreeMap<ThreadId, (mdpn_core::ControlId, StackId)>],
) {
    match tree.sym {
        TreeSymbol::Cut { control, stack, level } => {
            marks[(level - 1) as usize].insert(tid.clone(), (control, stack));
            collect_marks(&tree.children[0], tid, spawn_count, marks);
        }
        TreeSymbol::Spawn { .. } => {
            *spawn_count += 1;
            let child = tid.child(*spawn_count);
            let mut child_spawns = 0;
            collect_marks(&tree.children[0], &child, &mut child_spawns, marks);
            collect_marks(&tree.children[1], tid, spawn_count, marks);
        }
        _ => {
            // Bodies and continuations belong to the same thread; walk both.
            for c in &tree.children {
                collect_marks(c, tid, spawn_count, marks);
            }
        }
    }
}
