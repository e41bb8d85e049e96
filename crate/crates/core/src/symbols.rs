//! Interned identifiers and compact lock sets.
//!
//! Every name occurring in a model (control states, stack symbols, locks,
//! actions, rule names) is interned to a dense index within its own table.
//! Lock sets are bit vectors indexed by `LockId`; models with at most 64
//! locks stay on a single word.

use smallvec::{smallvec, SmallVec};
use std::collections::HashMap;
use std::fmt;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// A control state from `P`.
    ControlId
);
id_type!(
    /// A stack symbol from `Γ`.
    StackId
);
id_type!(
    /// A lock from `X`.
    LockId
);
id_type!(
    /// An action label from `Act`.
    ActionId
);
id_type!(
    /// A transition rule, indexed into the model's rule list.
    RuleId
);

/// Bijective interning of identifier strings to dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `name`, returning its index (existing or fresh).
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn lookup(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: u32) -> &str {
        &self.names[index as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (i as u32, n.as_str()))
    }
}

/// A set of locks as a dynamically sized bit vector.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LockSet {
    words: SmallVec<[u64; 1]>,
}

impl LockSet {
    pub fn new() -> Self {
        LockSet { words: smallvec![] }
    }

    pub fn singleton(lock: LockId) -> Self {
        let mut s = LockSet::new();
        s.insert(lock);
        s
    }

    pub fn insert(&mut self, lock: LockId) {
        let (w, b) = (lock.index() / 64, lock.index() % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    pub fn remove(&mut self, lock: LockId) {
        let (w, b) = (lock.index() / 64, lock.index() % 64);
        if w < self.words.len() {
            self.words[w] &= !(1 << b);
            self.normalize();
        }
    }

    pub fn contains(&self, lock: LockId) -> bool {
        let (w, b) = (lock.index() / 64, lock.index() % 64);
        w < self.words.len() && self.words[w] & (1 << b) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union(&self, other: &LockSet) -> LockSet {
        let mut words: SmallVec<[u64; 1]> = smallvec![];
        let n = self.words.len().max(other.words.len());
        for i in 0..n {
            let a = self.words.get(i).copied().unwrap_or(0);
            let b = other.words.get(i).copied().unwrap_or(0);
            words.push(a | b);
        }
        let mut s = LockSet { words };
        s.normalize();
        s
    }

    pub fn with(&self, lock: LockId) -> LockSet {
        let mut s = self.clone();
        s.insert(lock);
        s
    }

    pub fn without(&self, lock: LockId) -> LockSet {
        let mut s = self.clone();
        s.remove(lock);
        s
    }

    pub fn intersects(&self, other: &LockSet) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .any(|(a, b)| a & b != 0)
    }

    pub fn is_subset(&self, other: &LockSet) -> bool {
        self.words.iter().enumerate().all(|(i, &w)| {
            let o = other.words.get(i).copied().unwrap_or(0);
            w & !o == 0
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = LockId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64)
                .filter(move |b| w & (1u64 << b) != 0)
                .map(move |b| LockId((wi * 64 + b) as u32))
        })
    }

    /// All subsets of this set, smallest bit patterns first.
    pub fn subsets(&self) -> Vec<LockSet> {
        let members: Vec<LockId> = self.iter().collect();
        let mut out = Vec::with_capacity(1 << members.len().min(20));
        for mask in 0u64..(1u64 << members.len()) {
            let mut s = LockSet::new();
            for (i, &l) in members.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s.insert(l);
                }
            }
            out.push(s);
        }
        out
    }

    fn normalize(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }
}

impl FromIterator<LockId> for LockSet {
    fn from_iter<T: IntoIterator<Item = LockId>>(iter: T) -> Self {
        let mut s = LockSet::new();
        for l in iter {
            s.insert(l);
        }
        s
    }
}

impl fmt::Debug for LockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|l| l.0)).finish()
    }
}

/// A directed graph over locks, kept as an ordered edge set.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct LockGraph {
    edges: std::collections::BTreeSet<(LockId, LockId)>,
}

impl LockGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: LockId, to: LockId) {
        self.edges.insert((from, to));
    }

    pub fn union(&self, other: &LockGraph) -> LockGraph {
        let mut g = self.clone();
        g.edges.extend(other.edges.iter().copied());
        g
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (LockId, LockId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn successors(&self, from: LockId) -> impl Iterator<Item = LockId> + '_ {
        self.edges
            .range((from, LockId(0))..=(from, LockId(u32::MAX)))
            .map(|&(_, t)| t)
    }

    pub fn has_incoming(&self, node: LockId) -> bool {
        self.edges.iter().any(|&(_, t)| t == node)
    }

    pub fn is_subgraph(&self, other: &LockGraph) -> bool {
        self.edges.is_subset(&other.edges)
    }

    /// Cycle detection by iterated removal of edge-free sources.
    pub fn is_acyclic(&self) -> bool {
        let mut nodes: std::collections::BTreeSet<LockId> = std::collections::BTreeSet::new();
        for &(a, b) in &self.edges {
            nodes.insert(a);
            nodes.insert(b);
        }
        let mut edges = self.edges.clone();
        loop {
            let source = nodes
                .iter()
                .copied()
                .find(|&n| !edges.iter().any(|&(_, t)| t == n));
            match source {
                Some(n) => {
                    nodes.remove(&n);
                    edges.retain(|&(f, _)| f != n);
                }
                None => return nodes.is_empty(),
            }
        }
    }

    /// Nodes in a topological order (edge sources first). `None` on a cycle.
    pub fn topological_order(&self, nodes: impl IntoIterator<Item = LockId>) -> Option<Vec<LockId>> {
        let mut pending: Vec<LockId> = nodes.into_iter().collect();
        pending.sort_unstable();
        pending.dedup();
        let mut out = Vec::with_capacity(pending.len());
        let mut edges = self.edges.clone();
        while !pending.is_empty() {
            let pos = pending
                .iter()
                .position(|&n| !edges.iter().any(|&(f, t)| t == n && pending.contains(&f)))?;
            let n = pending.remove(pos);
            edges.retain(|&(f, _)| f != n);
            out.push(n);
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_bijective() {
        let mut t = SymbolTable::new();
        let a = t.intern("a");
        let b = t.intern("b");
        assert_ne!(a, b);
        assert_eq!(t.intern("a"), a);
        assert_eq!(t.name(a), "a");
        assert_eq!(t.lookup("b"), Some(b));
    }

    #[test]
    fn lockset_ops() {
        let mut s = LockSet::new();
        assert!(s.is_empty());
        s.insert(LockId(3));
        s.insert(LockId(70));
        assert!(s.contains(LockId(3)));
        assert!(s.contains(LockId(70)));
        assert_eq!(s.len(), 2);
        let t = LockSet::singleton(LockId(3));
        assert!(t.is_subset(&s));
        assert!(s.intersects(&t));
        assert_eq!(s.without(LockId(70)), t);
        assert_eq!(t.subsets().len(), 2);
    }

    #[test]
    fn lockset_normalized_equality() {
        let mut a = LockSet::new();
        a.insert(LockId(70));
        a.remove(LockId(70));
        assert_eq!(a, LockSet::new());
    }

    #[test]
    fn graph_cycles() {
        let mut g = LockGraph::new();
        g.insert(LockId(0), LockId(1));
        assert!(g.is_acyclic());
        g.insert(LockId(1), LockId(0));
        assert!(!g.is_acyclic());
    }

    #[test]
    fn topological_order_respects_edges() {
        let mut g = LockGraph::new();
        g.insert(LockId(0), LockId(1));
        g.insert(LockId(1), LockId(2));
        let order = g
            .topological_order([LockId(2), LockId(0), LockId(1)])
            .unwrap();
        assert_eq!(order, vec![LockId(0), LockId(1), LockId(2)]);
    }
}
