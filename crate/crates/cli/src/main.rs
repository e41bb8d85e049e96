//! Command-line front end: parse models and queries, run the reachability
//! pipelines, print verdicts and witnesses, and expose the brute-force
//! interpreter for differential runs.
//!
//! Exit codes: 0 property holds / query empty; 1 query nonempty; 2
//! validation diagnostics; 3 I/O or usage errors.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mdpn_core::oracle::{enumerate_trees, explore, Bounds};
use mdpn_core::query::{
    run_query_with, Query, QueryOptions, QueryResult, QueryStage, TargetSpec,
};
use mdpn_core::{
    check_no_empty_stack, cut_tree_of_executions, parse_dpn, serialize_tree, tree_of_execution,
    Configuration, Execution, MonitorDpn, RuleId, RuleSet, Sensitivity, StackId,
};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_HOLDS: u8 = 0;
const EXIT_NONEMPTY: u8 = 1;
const EXIT_DIAGNOSTICS: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mdpn",
    about = "Lock-sensitive reachability analyses for monitor-DPN models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct QueryFlags {
    /// Drop the lock-sensitivity filter.
    #[arg(long)]
    insensitive: bool,
    /// Use the naive product emptiness check instead of the directed one.
    #[arg(long)]
    naive: bool,
    /// Enable answer subsumption during saturation.
    #[arg(long)]
    subsumption: bool,
    /// Also print the witness tree as an s-expression.
    #[arg(long)]
    tree: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model, including the no-empty-stack check.
    Check { model: PathBuf },
    /// Decide whether two threads can race on a variable.
    Race {
        model: PathBuf,
        /// Stack symbols at which the variable is read (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        read: Vec<String>,
        /// Stack symbols at which the variable is written.
        #[arg(long, value_delimiter = ',', required = true)]
        write: Vec<String>,
        #[command(flatten)]
        flags: QueryFlags,
    },
    /// Decide whether the given top-of-stack patterns can hold in parallel.
    Mhp {
        model: PathBuf,
        /// One pattern per occurrence: a comma separated stack-symbol set.
        #[arg(long = "pattern", required = true)]
        patterns: Vec<String>,
        /// Restrict the query to these rules (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[command(flatten)]
        flags: QueryFlags,
    },
    /// Iterated reachability of top-of-stack symbol sets.
    Reach {
        model: PathBuf,
        /// One stage per occurrence: `syms[@rules]`, where `syms` is a comma
        /// separated stack-symbol set and `rules` the allowed rule ids.
        #[arg(long = "stage", required = true)]
        stages: Vec<String>,
        #[command(flatten)]
        flags: QueryFlags,
    },
    /// Feasibility of a def-use dependency: reach a generating point, then a
    /// using point without passing a killing rule.
    Defuse {
        model: PathBuf,
        /// Stack symbols where the value has just been generated.
        #[arg(long, value_delimiter = ',', required = true)]
        gen: Vec<String>,
        /// Rule ids that kill the value on the way to the use.
        #[arg(long, value_delimiter = ',')]
        kill: Vec<String>,
        /// Stack symbols where the value is used.
        #[arg(long = "use", value_delimiter = ',', required = true)]
        use_syms: Vec<String>,
        #[command(flatten)]
        flags: QueryFlags,
    },
    /// Explore configurations with the brute-force interpreter.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value_t = 12)]
        steps: usize,
        /// Explore under the lock-sensitive semantics.
        #[arg(long)]
        sensitive: bool,
        /// Also enumerate and print the execution trees.
        #[arg(long)]
        trees: bool,
        #[arg(long, default_value_t = 100_000)]
        max_configs: usize,
        #[arg(long, default_value_t = 4)]
        max_threads: usize,
    },
    /// Print the execution tree of a `step` listing (file or stdin).
    DumpTree {
        model: PathBuf,
        /// File with `step <tid> <rule>` lines; `-` or absent reads stdin.
        exec: Option<PathBuf>,
        /// Insert cut nodes marking the configuration after this many steps.
        #[arg(long)]
        cut: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_IO,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<std::io::Error>().is_some() {
        EXIT_IO
    } else {
        EXIT_DIAGNOSTICS
    }
}

fn load_model(path: &Path) -> anyhow::Result<Arc<MonitorDpn>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::Error::new(e).context(format!("cannot read {}", path.display())))?;
    let dpn = parse_dpn(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(Arc::new(dpn))
}

fn resolve_stacks(dpn: &MonitorDpn, names: &[String]) -> anyhow::Result<BTreeSet<StackId>> {
    names
        .iter()
        .map(|n| {
            dpn.stacks
                .lookup(n)
                .map(StackId)
                .ok_or_else(|| anyhow::anyhow!("undeclared stack symbol `{n}`"))
        })
        .collect()
}

fn resolve_rules(dpn: &MonitorDpn, names: &[String]) -> anyhow::Result<RuleSet> {
    names
        .iter()
        .map(|n| {
            dpn.rule_by_name(n)
                .ok_or_else(|| anyhow::anyhow!("undeclared rule `{n}`"))
        })
        .collect::<anyhow::Result<Vec<RuleId>>>()
        .map(RuleSet::from_iter)
}

fn sensitivity_of(flags: &QueryFlags) -> Sensitivity {
    if flags.insensitive {
        Sensitivity::LockInsensitive
    } else {
        Sensitivity::LockSensitive
    }
}

fn options_of(flags: &QueryFlags) -> QueryOptions {
    QueryOptions {
        naive_emptiness: flags.naive,
        subsumption: flags.subsumption,
        ..Default::default()
    }
}

fn report(
    dpn: &MonitorDpn,
    what: &str,
    found: &str,
    absent: &str,
    result: &QueryResult,
    flags: &QueryFlags,
) -> u8 {
    if result.nonempty {
        println!("{what}: {found}");
        if let Some(witness) = &result.witness {
            println!("witness execution:");
            print!("{}", witness.execution.to_text(dpn));
            if flags.tree {
                println!("witness tree: {}", serialize_tree(dpn, &witness.tree));
            }
        }
        EXIT_NONEMPTY
    } else {
        println!("{what}: {absent}");
        EXIT_HOLDS
    }
}

fn run_and_report(
    query: &Query,
    flags: &QueryFlags,
    what: &str,
    found: &str,
    absent: &str,
) -> anyhow::Result<u8> {
    let result = run_query_with(query, &options_of(flags))?;
    Ok(report(&query.dpn, what, found, absent, &result, flags))
}

fn format_config(dpn: &MonitorDpn, conf: &Configuration) -> String {
    let mut out = String::new();
    let mut first = true;
    for (tid, thread) in conf.threads() {
        if !first {
            out.push_str("; ");
        }
        first = false;
        let _ = write!(out, "{tid}={}", dpn.controls.name(thread.control.0));
        for frame in &thread.frames {
            let _ = write!(out, " {}", dpn.stacks.name(frame.stack.0));
            if let Some(lock) = frame.ann {
                let _ = write!(out, "@{}", dpn.locks.name(lock.0));
            }
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Check { model } => {
            let dpn = load_model(&model)?;
            let offenders = check_no_empty_stack(&dpn);
            if offenders.is_empty() {
                println!(
                    "ok: {} rules, {} locks, {} controls, {} stack symbols",
                    dpn.rules().len(),
                    dpn.lock_count(),
                    dpn.controls.len(),
                    dpn.stacks.len()
                );
                Ok(EXIT_HOLDS)
            } else {
                for (p, g) in &offenders {
                    println!(
                        "start frame ({}, {}) can empty its stack; iterated queries are unsupported",
                        dpn.controls.name(p.0),
                        dpn.stacks.name(g.0)
                    );
                }
                Ok(EXIT_DIAGNOSTICS)
            }
        }
        Command::Race { model, read, write, flags } => {
            let dpn = load_model(&model)?;
            let reads = resolve_stacks(&dpn, &read)?;
            let writes = resolve_stacks(&dpn, &write)?;
            let accesses: BTreeSet<StackId> = reads.union(&writes).copied().collect();
            let query = Query {
                dpn: Arc::clone(&dpn),
                stages: vec![QueryStage {
                    target: TargetSpec::MhpPatterns(vec![accesses, writes]),
                    allowed: dpn.all_rules(),
                }],
                sensitivity: sensitivity_of(&flags),
            };
            run_and_report(&query, &flags, "race", "found", "none")
        }
        Command::Mhp { model, patterns, rules, flags } => {
            let dpn = load_model(&model)?;
            let parsed: Vec<BTreeSet<StackId>> = patterns
                .iter()
                .map(|p| {
                    let names: Vec<String> =
                        p.split(',').map(|s| s.trim().to_string()).collect();
                    resolve_stacks(&dpn, &names)
                })
                .collect::<anyhow::Result<_>>()?;
            let allowed = if rules.is_empty() {
                dpn.all_rules()
            } else {
                resolve_rules(&dpn, &rules)?
            };
            let query = Query {
                dpn: Arc::clone(&dpn),
                stages: vec![QueryStage {
                    target: TargetSpec::MhpPatterns(parsed),
                    allowed,
                }],
                sensitivity: sensitivity_of(&flags),
            };
            run_and_report(&query, &flags, "mhp", "possible", "impossible")
        }
        Command::Reach { model, stages, flags } => {
            let dpn = load_model(&model)?;
            let mut parsed = Vec::new();
            for stage in &stages {
                let (syms, rules) = match stage.split_once('@') {
                    Some((s, r)) => (s, Some(r)),
                    None => (stage.as_str(), None),
                };
                let names: Vec<String> =
                    syms.split(',').map(|s| s.trim().to_string()).collect();
                let target = TargetSpec::TopSymbols(resolve_stacks(&dpn, &names)?);
                let allowed = match rules {
                    None => dpn.all_rules(),
                    Some(r) => {
                        let names: Vec<String> =
                            r.split(',').map(|s| s.trim().to_string()).collect();
                        resolve_rules(&dpn, &names)?
                    }
                };
                parsed.push(QueryStage { target, allowed });
            }
            let query = Query {
                dpn: Arc::clone(&dpn),
                stages: parsed,
                sensitivity: sensitivity_of(&flags),
            };
            run_and_report(&query, &flags, "reach", "nonempty", "empty")
        }
        Command::Defuse { model, gen, kill, use_syms, flags } => {
            let dpn = load_model(&model)?;
            let gen_syms = resolve_stacks(&dpn, &gen)?;
            let use_points = resolve_stacks(&dpn, &use_syms)?;
            let kill_rules = resolve_rules(&dpn, &kill)?;
            let query = Query {
                dpn: Arc::clone(&dpn),
                stages: vec![
                    QueryStage {
                        target: TargetSpec::TopSymbols(gen_syms),
                        allowed: dpn.all_rules(),
                    },
                    QueryStage {
                        target: TargetSpec::TopSymbols(use_points),
                        allowed: dpn.all_rules().without(kill_rules.iter()),
                    },
                ],
                sensitivity: sensitivity_of(&flags),
            };
            run_and_report(&query, &flags, "defuse", "feasible", "infeasible")
        }
        Command::Simulate { model, steps, sensitive, trees, max_configs, max_threads } => {
            let dpn = load_model(&model)?;
            let sensitivity = if sensitive {
                Sensitivity::LockSensitive
            } else {
                Sensitivity::LockInsensitive
            };
            let bounds = Bounds { max_steps: steps, max_configs, max_threads };
            let result = explore(&dpn, sensitivity, &bounds);
            println!(
                "configs: {} (truncated: {})",
                result.configs.len(),
                result.truncated
            );
            for (i, (conf, _)) in result.configs.iter().enumerate() {
                println!("config {i}: {}", format_config(&dpn, conf));
            }
            if trees {
                let (set, truncated) = enumerate_trees(&dpn, sensitivity, &bounds);
                println!("trees: {} (truncated: {truncated})", set.len());
                for tree in &set {
                    println!("tree: {}", serialize_tree(&dpn, tree));
                }
            }
            Ok(EXIT_HOLDS)
        }
        Command::DumpTree { model, exec, cut } => {
            let dpn = load_model(&model)?;
            let text = match exec.as_deref() {
                None => std::io::read_to_string(std::io::stdin())?,
                Some(p) if p == Path::new("-") => std::io::read_to_string(std::io::stdin())?,
                Some(p) => std::fs::read_to_string(p).map_err(|e| {
                    anyhow::Error::new(e).context(format!("cannot read {}", p.display()))
                })?,
            };
            let execution = Execution::from_text(&dpn, &text)
                .map_err(|e| anyhow::anyhow!("execution listing: {e}"))?;
            let tree = match cut {
                None => tree_of_execution(&dpn, &execution)
                    .map_err(|e| anyhow::anyhow!("building tree: {e}"))?,
                Some(k) => {
                    if k > execution.len() {
                        anyhow::bail!("cut position {k} exceeds execution length");
                    }
                    let prefix = Execution::new(execution.steps[..k].to_vec());
                    let suffix = Execution::new(execution.steps[k..].to_vec());
                    cut_tree_of_executions(&dpn, &prefix, &suffix)
                        .map_err(|e| anyhow::anyhow!("building cut tree: {e}"))?
                }
            };
            println!("{}", serialize_tree(&dpn, &tree));
            Ok(EXIT_HOLDS)
        }
    }
}
