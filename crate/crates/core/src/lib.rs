//! Lock-sensitive forward reachability analysis for monitor-DPNs.
//!
//! Models concurrent programs as dynamic pushdown networks whose lock
//! operations are bound to procedure calls (monitors). Reachable executions
//! are represented by tree-regular sets of execution trees; iterated
//! reachability queries are answered by intersecting and transforming tree
//! automata and checking emptiness, with concrete witness executions
//! recovered by a two-phase scheduler. A bounded brute-force interpreter
//! serves as test oracle.

pub mod automata;
pub mod builders;
pub mod model;
pub mod oracle;
pub mod parse;
pub mod query;
pub mod symbols;
pub mod tree;

pub use model::{
    check_no_empty_stack, enabled, held_locks, initial_configuration, replay, replay_from, step,
    Configuration, Execution, Frame, MonitorDpn, Rule, RuleKind, RuleSet, SemanticsError,
    Sensitivity, ThreadConfig, ThreadId,
};
pub use parse::{parse_dpn, ParseError};
pub use symbols::{ActionId, ControlId, LockGraph, LockId, LockSet, RuleId, StackId, SymbolTable};
pub use tree::{
    conf_of_tree, cut_tree_of_executions, flatten_tree, marked_prefix, parse_tree, serialize_tree,
    strip_cuts, tree_of_execution, ExecTree, FlatItem, FlatKind, FlatTree, TreeError, TreeSymbol,
};
