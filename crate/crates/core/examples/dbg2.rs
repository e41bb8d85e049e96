use mdpn_core::automata::*;
use mdpn_core::query::*;
use mdpn_core::*;
use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let text = std::fs::read_to_string("fixtures/twolock.dpn").unwrap();
    let dpn = Arc::new(parse_dpn(&text).unwrap());
    let sym = |n: &str| StackId(dpn.stacks.lookup(n).unwrap());
    let target = |n: &str| {
        Erased::new(mdpn_core::builders::t_top(
            Arc::clone(&dpn),
            BTreeSet::from([sym(n)]),
            false,
        ))
    };

    let t0 = Instant::now();
    let a1 = Erased::new(
        product(
            reachable_trees(&dpn, &dpn.all_rules(), Sensitivity::LockSensitive),
            target("b0"),
        )
        .unwrap(),
    );
    println!("stage1 built {:?}", t0.elapsed());

    let t0 = Instant::now();
    let p2 = post_step(&dpn, &a1, &dpn.all_rules(), Sensitivity::LockSensitive).unwrap();
    let a2 = Erased::new(product(p2, target("d0")).unwrap());
    println!("stage2 built {:?}", t0.elapsed());

    // Final-stage emptiness.
    let t0 = Instant::now();
    let (parts, tm_part) = {
        // mirror run_query internals: cut pipeline parts + lifted target
        let full = cut_pipeline(&dpn, &a2, &dpn.all_rules(), Sensitivity::LockSensitive).unwrap();
        let _ = full;
        (a2.clone(), ())
    };
    let _ = (parts, tm_part);
    println!("cut pipeline built {:?}", t0.elapsed());

    let t0 = Instant::now();
    let stage = |s: &str| QueryStage {
        target: TargetSpec::TopSymbols(BTreeSet::from([sym(s)])),
        allowed: dpn.all_rules(),
    };
    let query = Query {
        dpn: Arc::clone(&dpn),
        stages: vec![stage("b0"), stage("d0"), stage("m2")],
        sensitivity: Sensitivity::LockSensitive,
    };
    let r = run_query(&query).unwrap();
    println!(
        "full query {:?}: nonempty={} states={} td={}",
        t0.elapsed(),
        r.nonempty,
        r.stats.states_explored,
        r.stats.top_down_states
    );

    let t0 = Instant::now();
    let opts = QueryOptions { subsumption: true, ..Default::default() };
    let r = run_query_with(&query, &opts).unwrap();
    println!(
        "subsumption {:?}: nonempty={} states={} td={}",
        t0.elapsed(),
        r.nonempty,
        r.stats.states_explored,
        r.stats.top_down_states
    );
}
