//! Parser for the line-oriented DPN text format.
//!
//! ```text
//! # comment
//! init <control> <stacksym>
//! lock <id>
//! act <id>
//! rule <id> base <p> <g> -> <p'> <g'> [act=<a>]
//! rule <id> call <p> <g> -> <p'> <g'> <gr> [act=<a>]
//! rule <id> ret <p> <g> -> <p'> [act=<a>]
//! rule <id> spawn <p> <g> -> [<ps> <gs>] <p'> <g'> [act=<a>]
//! rule <id> mon(<x>) <p> <g> -> <p'> <g'> <gr> [act=<a>]
//! ```
//!
//! Control states, stack symbols and actions are declared implicitly by use;
//! locks must be declared by a `lock` line before their first use. The four
//! alphabets must use pairwise distinct identifiers.

use crate::model::{MonitorDpn, Rule, RuleKind};
use crate::symbols::{ActionId, ControlId, LockId, RuleId, StackId, SymbolTable};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: `{name}` used before declaration as a {role}")]
    Undeclared {
        line: usize,
        column: usize,
        name: String,
        role: &'static str,
    },
    #[error("{line}:{column}: duplicate rule id `{name}`")]
    DuplicateRule {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: `{name}` already declared as a {previous}, cannot also be a {role}")]
    AlphabetClash {
        line: usize,
        column: usize,
        name: String,
        previous: &'static str,
        role: &'static str,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Role {
    Control,
    Stack,
    Lock,
    Action,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Control => "control state",
            Role::Stack => "stack symbol",
            Role::Lock => "lock",
            Role::Action => "action",
        }
    }
}

struct Cursor<'a> {
    line: &'a str,
    lineno: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.line.len() && self.line.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.line.len()
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.lineno,
            column: self.column(),
            message: message.into(),
        }
    }

    fn peek_rest(&self) -> &'a str {
        &self.line[self.pos..]
    }

    /// An identifier: `[A-Za-z_][A-Za-z0-9_]*`.
    fn ident(&mut self) -> Result<(&'a str, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.line.as_bytes();
        if start >= bytes.len() || !(bytes[start].is_ascii_alphabetic() || bytes[start] == b'_') {
            return Err(self.error("expected identifier"));
        }
        let mut end = start + 1;
        while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
            end += 1;
        }
        self.pos = end;
        Ok((&self.line[start..end], start + 1))
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.peek_rest().starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.error(format!("expected `{token}`")))
        }
    }

    fn try_token(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.peek_rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }
}

struct Builder {
    controls: SymbolTable,
    stacks: SymbolTable,
    locks: SymbolTable,
    actions: SymbolTable,
    rule_names: SymbolTable,
    roles: HashMap<String, Role>,
    rules: Vec<Rule>,
    init: Option<(ControlId, StackId)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            controls: SymbolTable::new(),
            stacks: SymbolTable::new(),
            locks: SymbolTable::new(),
            actions: SymbolTable::new(),
            rule_names: SymbolTable::new(),
            roles: HashMap::new(),
            rules: Vec::new(),
            init: None,
        }
    }

    fn bind(
        &mut self,
        name: &str,
        role: Role,
        lineno: usize,
        column: usize,
    ) -> Result<u32, ParseError> {
        if let Some(&prev) = self.roles.get(name) {
            if prev != role {
                return Err(ParseError::AlphabetClash {
                    line: lineno,
                    column,
                    name: name.to_string(),
                    previous: prev.name(),
                    role: role.name(),
                });
            }
        } else {
            self.roles.insert(name.to_string(), role);
        }
        let table = match role {
            Role::Control => &mut self.controls,
            Role::Stack => &mut self.stacks,
            Role::Lock => &mut self.locks,
            Role::Action => &mut self.actions,
        };
        Ok(table.intern(name))
    }

    fn control(&mut self, cur: &mut Cursor) -> Result<ControlId, ParseError> {
        let (name, col) = cur.ident()?;
        self.bind(name, Role::Control, cur.lineno, col).map(ControlId)
    }

    fn stack(&mut self, cur: &mut Cursor) -> Result<StackId, ParseError> {
        let (name, col) = cur.ident()?;
        self.bind(name, Role::Stack, cur.lineno, col).map(StackId)
    }

    fn lock_use(&mut self, cur: &mut Cursor) -> Result<LockId, ParseError> {
        let (name, col) = cur.ident()?;
        match self.locks.lookup(name) {
            Some(i) => Ok(LockId(i)),
            None => Err(ParseError::Undeclared {
                line: cur.lineno,
                column: col,
                name: name.to_string(),
                role: "lock",
            }),
        }
    }

    fn action(&mut self, cur: &mut Cursor) -> Result<ActionId, ParseError> {
        let (name, col) = cur.ident()?;
        self.bind(name, Role::Action, cur.lineno, col).map(ActionId)
    }
}

/// Parses the DPN text format into a validated model.
pub fn parse_dpn(text: &str) -> Result<MonitorDpn, ParseError> {
    let mut b = Builder::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let mut cur = Cursor { line, lineno, pos: 0 };
        if cur.at_end() {
            continue;
        }
        let (keyword, kw_col) = cur.ident()?;
        match keyword {
            "init" => {
                if b.init.is_some() {
                    return Err(ParseError::Syntax {
                        line: lineno,
                        column: kw_col,
                        message: "duplicate `init` line".to_string(),
                    });
                }
                let p = b.control(&mut cur)?;
                let g = b.stack(&mut cur)?;
                b.init = Some((p, g));
            }
            "lock" => {
                let (name, col) = cur.ident()?;
                b.bind(name, Role::Lock, lineno, col)?;
            }
            "act" => {
                let (name, col) = cur.ident()?;
                b.bind(name, Role::Action, lineno, col)?;
            }
            "rule" => parse_rule(&mut b, &mut cur)?,
            other => {
                return Err(ParseError::Syntax {
                    line: lineno,
                    column: kw_col,
                    message: format!("unknown directive `{other}`"),
                });
            }
        }
        if !cur.at_end() {
            return Err(cur.error("trailing input"));
        }
    }

    let (init_control, init_stack) = b.init.ok_or(ParseError::Syntax {
        line: text.lines().count().max(1),
        column: 1,
        message: "missing `init` line".to_string(),
    })?;

    Ok(MonitorDpn::new(
        b.controls,
        b.stacks,
        b.locks,
        b.actions,
        b.rule_names,
        b.rules,
        init_control,
        init_stack,
    ))
}

fn parse_rule(b: &mut Builder, cur: &mut Cursor) -> Result<(), ParseError> {
    let (name, col) = cur.ident()?;
    if b.rule_names.contains(name) {
        return Err(ParseError::DuplicateRule {
            line: cur.lineno,
            column: col,
            name: name.to_string(),
        });
    }
    let id = RuleId(b.rule_names.intern(name));
    debug_assert_eq!(id.index(), b.rules.len());

    let (kind_word, _) = cur.ident()?;
    let lock = if kind_word == "mon" {
        cur.expect("(")?;
        let l = b.lock_use(cur)?;
        cur.expect(")")?;
        Some(l)
    } else {
        None
    };

    let from_control = b.control(cur)?;
    let from_stack = b.stack(cur)?;
    cur.expect("->")?;

    let kind = match kind_word {
        "base" => RuleKind::Base {
            to_control: b.control(cur)?,
            to_stack: b.stack(cur)?,
        },
        "call" => RuleKind::Call {
            to_control: b.control(cur)?,
            to_stack: b.stack(cur)?,
            ret_stack: b.stack(cur)?,
        },
        "ret" => RuleKind::Return {
            to_control: b.control(cur)?,
        },
        "spawn" => {
            cur.expect("[")?;
            let spawn_control = b.control(cur)?;
            let spawn_stack = b.stack(cur)?;
            cur.expect("]")?;
            RuleKind::Spawn {
                spawn_control,
                spawn_stack,
                to_control: b.control(cur)?,
                to_stack: b.stack(cur)?,
            }
        }
        "mon" => RuleKind::Monitor {
            lock: lock.expect("parsed above"),
            to_control: b.control(cur)?,
            to_stack: b.stack(cur)?,
            ret_stack: b.stack(cur)?,
        },
        other => {
            return Err(cur.error(format!("unknown rule kind `{other}`")));
        }
    };

    let action = if cur.try_token("act=") {
        Some(b.action(cur)?)
    } else {
        None
    };

    b.rules.push(Rule {
        id,
        from_control,
        from_stack,
        action,
        kind,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_model() {
        let dpn = parse_dpn("init q g\nrule r1 base q g -> q h\n").unwrap();
        assert_eq!(dpn.rules().len(), 1);
        assert_eq!(dpn.controls.name(dpn.init_control.0), "q");
        assert_eq!(dpn.stacks.name(dpn.init_stack.0), "g");
    }

    #[test]
    fn comments_and_blank_lines() {
        let dpn = parse_dpn("# a model\n\ninit q g # initial\nrule r1 base q g -> q h\n").unwrap();
        assert_eq!(dpn.rules().len(), 1);
    }

    #[test]
    fn all_rule_shapes_and_actions() {
        let dpn = parse_dpn(
            "init q g\n\
             lock a\n\
             act write\n\
             rule r1 base q g -> q h act=write\n\
             rule r2 call q h -> q b hr\n\
             rule r3 ret q b -> q\n\
             rule r4 spawn q hr -> [q s] q h2\n\
             rule r5 mon(a) q h2 -> q m h3 act=write\n",
        )
        .unwrap();
        assert_eq!(dpn.rules().len(), 5);
        assert_eq!(dpn.lock_count(), 1);
        assert!(dpn.rules()[0].action.is_some());
        assert!(matches!(dpn.rules()[4].kind, RuleKind::Monitor { .. }));
    }

    #[test]
    fn undeclared_lock() {
        let err = parse_dpn("init q g\nrule r1 mon(a) q g -> q m h\n").unwrap_err();
        assert!(matches!(err, ParseError::Undeclared { .. }));
    }

    #[test]
    fn lock_declared_after_use_is_an_error() {
        let err = parse_dpn("init q g\nrule r1 mon(a) q g -> q m h\nlock a\n").unwrap_err();
        assert!(matches!(err, ParseError::Undeclared { .. }));
    }

    #[test]
    fn duplicate_rule_id() {
        let err = parse_dpn(
            "init q g\nrule r1 base q g -> q h\nrule r1 base q h -> q g\n",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::DuplicateRule { .. }));
    }

    #[test]
    fn alphabet_clash() {
        let err = parse_dpn("init q g\nlock q\n").unwrap_err();
        assert!(matches!(err, ParseError::AlphabetClash { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_dpn("init q g\nrule r1 base q g => q h\n").unwrap_err();
        match err {
            ParseError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_init() {
        let err = parse_dpn("rule r1 base q g -> q h\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
    }
}
