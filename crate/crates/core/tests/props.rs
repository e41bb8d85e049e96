//! Property tests over randomized inputs.

mod common;

use common::fixture;
use mdpn_core::model::{enabled, initial_configuration, step};
use mdpn_core::{
    held_locks, parse_tree, serialize_tree, tree_of_execution, Execution, LockId, LockSet,
    Sensitivity, ThreadId,
};
use proptest::prelude::*;

/// Drives a random walk with a list of choice bytes; returns the execution.
fn walk(dpn: &mdpn_core::MonitorDpn, choices: &[u8], sensitivity: Sensitivity) -> Execution {
    let mut conf = initial_configuration(dpn);
    let mut steps = Vec::new();
    for &c in choices {
        let moves = enabled(dpn, &conf, sensitivity);
        if moves.is_empty() {
            break;
        }
        let (tid, rule) = moves[c as usize % moves.len()].clone();
        conf = step(dpn, &conf, &tid, rule, sensitivity).unwrap();
        steps.push((tid, rule));
    }
    Execution::new(steps)
}

proptest! {
    #[test]
    fn lockset_union_is_superset(a in proptest::collection::vec(0u32..100, 0..12),
                                 b in proptest::collection::vec(0u32..100, 0..12)) {
        let sa: LockSet = a.iter().map(|&i| LockId(i)).collect();
        let sb: LockSet = b.iter().map(|&i| LockId(i)).collect();
        let u = sa.union(&sb);
        prop_assert!(sa.is_subset(&u));
        prop_assert!(sb.is_subset(&u));
        prop_assert_eq!(u.len(), u.iter().count());
        for l in sa.iter() {
            prop_assert!(u.contains(l));
        }
    }

    #[test]
    fn thread_id_display_parses_back(path in proptest::collection::vec(1u32..9, 0..5)) {
        let mut tid = ThreadId::root();
        for n in path {
            tid = tid.child(n);
        }
        prop_assert_eq!(ThreadId::parse(&tid.to_string()), Some(tid));
    }

    #[test]
    fn sensitive_moves_are_insensitive_moves(choices in proptest::collection::vec(any::<u8>(), 0..10)) {
        let dpn = fixture("ex6");
        let e = walk(&dpn, &choices, Sensitivity::LockInsensitive);
        let conf = mdpn_core::replay(&dpn, &e, Sensitivity::LockInsensitive).unwrap();
        let sens = enabled(&dpn, &conf, Sensitivity::LockSensitive);
        let insens = enabled(&dpn, &conf, Sensitivity::LockInsensitive);
        for pair in sens {
            prop_assert!(insens.contains(&pair));
        }
    }

    #[test]
    fn tree_text_roundtrips(choices in proptest::collection::vec(any::<u8>(), 0..10)) {
        let dpn = fixture("ex5");
        let e = walk(&dpn, &choices, Sensitivity::LockInsensitive);
        let tree = tree_of_execution(&dpn, &e).unwrap();
        let text = serialize_tree(&dpn, &tree);
        prop_assert_eq!(parse_tree(&dpn, &text).unwrap(), tree);
    }

    #[test]
    fn sensitive_walks_never_double_hold(choices in proptest::collection::vec(any::<u8>(), 0..12)) {
        // Under the lock-sensitive semantics a lock is annotated on at most
        // one thread's stack.
        let dpn = fixture("twolock");
        let e = walk(&dpn, &choices, Sensitivity::LockSensitive);
        let mut conf = initial_configuration(&dpn);
        for (tid, rule) in &e.steps {
            conf = step(&dpn, &conf, tid, *rule, Sensitivity::LockSensitive).unwrap();
            for lock in held_locks(&conf).iter() {
                let holders = conf
                    .threads()
                    .filter(|(_, t)| t.held_locks().contains(lock))
                    .count();
                prop_assert_eq!(holders, 1);
            }
        }
    }
}
