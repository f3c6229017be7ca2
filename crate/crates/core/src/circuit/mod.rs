//! Reduced ordered binary decision diagrams over comparison atoms.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ground::{GroundProgram, Lit, ProofFormula};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;
/// Largest atom count `model_enumerate` accepts.
pub const ENUMERATION_LIMIT: usize = 20;

pub const FALSE: u32 = 0;
pub const TRUE: u32 = 1;
const TERMINAL_LEVEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("circuit exceeds {0} nodes")]
    SizeExceeded(usize),
    #[error("atom {0} is missing from the variable order")]
    MissingFromOrder(usize),
    #[error("atom {0} appears twice in the variable order")]
    DuplicateInOrder(usize),
    #[error("{0} atoms is too many to enumerate (limit {ENUMERATION_LIMIT})")]
    TooLarge(usize),
}

/// Decision node on the atom at `order[level]`; terminals have no level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    pub level: u32,
    pub lo: u32,
    pub hi: u32,
}

/// Node ids are assigned children-first, so iterating the table in index
/// order visits every child before its parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    nodes: Vec<Node>,
    root: u32,
    order: Vec<usize>,
}

struct Builder {
    nodes: Vec<Node>,
    unique: HashMap<Node, u32>,
    cache: HashMap<(u32, u32), u32>,
    cap: usize,
}

impl Builder {
    fn new(cap: usize) -> Self {
        let t = Node { level: TERMINAL_LEVEL, lo: 0, hi: 0 };
        Builder { nodes: vec![t, Node { lo: 1, hi: 1, ..t }], unique: HashMap::new(), cache: HashMap::new(), cap }
    }

    fn mk(&mut self, level: u32, lo: u32, hi: u32) -> Result<u32, CircuitError> {
        if lo == hi {
            return Ok(lo);
        }
        let node = Node { level, lo, hi };
        if let Some(&id) = self.unique.get(&node) {
            return Ok(id);
        }
        if self.nodes.len() >= self.cap {
            return Err(CircuitError::SizeExceeded(self.cap));
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.unique.insert(node, id);
        Ok(id)
    }

    fn or(&mut self, a: u32, b: u32) -> Result<u32, CircuitError> {
        match (a, b) {
            (TRUE, _) | (_, TRUE) => return Ok(TRUE),
            (FALSE, x) | (x, FALSE) => return Ok(x),
            _ if a == b => return Ok(a),
            _ => {}
        }
        let key = (a.min(b), a.max(b));
        if let Some(&r) = self.cache.get(&key) {
            return Ok(r);
        }
        let (na, nb) = (self.nodes[a as usize], self.nodes[b as usize]);
        let level = na.level.min(nb.level);
        let (a_lo, a_hi) = if na.level == level { (na.lo, na.hi) } else { (a, a) };
        let (b_lo, b_hi) = if nb.level == level { (nb.lo, nb.hi) } else { (b, b) };
        let lo = self.or(a_lo, b_lo)?;
        let hi = self.or(a_hi, b_hi)?;
        let r = self.mk(level, lo, hi)?;
        self.cache.insert(key, r);
        Ok(r)
    }

    fn conjunction(&mut self, lits: &[(u32, bool)]) -> Result<u32, CircuitError> {
        let mut sorted = lits.to_vec();
        sorted.sort_unstable_by(|x, y| y.cmp(x));
        sorted.dedup();
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Ok(FALSE);
        }
        let mut node = TRUE;
        for (level, positive) in sorted {
            node = if positive { self.mk(level, FALSE, node)? } else { self.mk(level, node, FALSE)? };
        }
        Ok(node)
    }
}

impl Circuit {
    /// Compiles a disjunction of proofs under a variable order listing every
    /// atom of the formula.
    pub fn compile(f: &ProofFormula, order: &[usize]) -> Result<Circuit, CircuitError> {
        Self::compile_with_cap(f, order, DEFAULT_NODE_CAP)
    }

    pub fn compile_with_cap(f: &ProofFormula, order: &[usize], cap: usize) -> Result<Circuit, CircuitError> {
        let mut level_of: HashMap<usize, u32> = HashMap::with_capacity(order.len());
        for (i, &a) in order.iter().enumerate() {
            if level_of.insert(a, i as u32).is_some() {
                return Err(CircuitError::DuplicateInOrder(a));
            }
        }
        let mut b = Builder::new(cap.max(2));
        let mut root = FALSE;
        for conj in &f.dnf {
            let lits = conj
                .iter()
                .map(|l| level_of.get(&l.atom).map(|&v| (v, l.positive)).ok_or(CircuitError::MissingFromOrder(l.atom)))
                .collect::<Result<Vec<_>, _>>()?;
            let c = b.conjunction(&lits)?;
            root = b.or(root, c)?;
        }
        Ok(Self::canonical(&b.nodes, root, order.to_vec()))
    }

    /// Keeps only nodes reachable from `root`, numbered by a lo-first
    /// post-order walk. Equal functions under one order give equal tables.
    fn canonical(nodes: &[Node], root: u32, order: Vec<usize>) -> Circuit {
        let mut map: HashMap<u32, u32> = HashMap::from([(FALSE, FALSE), (TRUE, TRUE)]);
        let mut out = nodes[..2].to_vec();
        let mut stack = vec![(root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if map.contains_key(&id) {
                continue;
            }
            let n = nodes[id as usize];
            if expanded {
                out.push(Node { level: n.level, lo: map[&n.lo], hi: map[&n.hi] });
                map.insert(id, out.len() as u32 - 1);
            } else {
                stack.push((id, true));
                stack.push((n.hi, false));
                stack.push((n.lo, false));
            }
        }
        Circuit { root: map[&root], nodes: out, order }
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Node {
        self.nodes[id as usize]
    }

    pub fn is_terminal(id: u32) -> bool {
        id == FALSE || id == TRUE
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Atom tested at a decision node.
    pub fn atom(&self, id: u32) -> usize {
        self.order[self.nodes[id as usize].level as usize]
    }

    /// Number of decision nodes.
    pub fn size(&self) -> usize {
        self.nodes.len() - 2
    }

    /// Follows the path selected by a total truth assignment.
    pub fn holds(&self, truth: impl Fn(usize) -> bool) -> bool {
        let mut id = self.root;
        while !Self::is_terminal(id) {
            let n = self.node(id);
            id = if truth(self.order[n.level as usize]) { n.hi } else { n.lo };
        }
        id == TRUE
    }

    /// Root-to-true paths as partial assignments. The paths are pairwise
    /// disjoint and their completions are exactly the models.
    pub fn model_enumerate(&self) -> Result<Vec<Vec<Lit>>, CircuitError> {
        let used = {
            let mut levels: Vec<u32> = self.nodes[2..].iter().map(|n| n.level).collect();
            levels.sort_unstable();
            levels.dedup();
            levels.len()
        };
        if used > ENUMERATION_LIMIT {
            return Err(CircuitError::TooLarge(used));
        }
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.paths(self.root, &mut path, &mut out);
        Ok(out)
    }

    fn paths(&self, id: u32, path: &mut Vec<Lit>, out: &mut Vec<Vec<Lit>>) {
        match id {
            FALSE => {}
            TRUE => out.push(path.clone()),
            _ => {
                let n = self.node(id);
                let atom = self.order[n.level as usize];
                for (child, positive) in [(n.lo, false), (n.hi, true)] {
                    path.push(Lit { atom, positive });
                    self.paths(child, path, out);
                    path.pop();
                }
            }
        }
    }

    /// Graphviz rendering; `label` names each atom.
    pub fn to_dot(&self, label: impl Fn(usize) -> String) -> String {
        let mut s = String::from("digraph circuit {\n  n0 [label=\"0\", shape=box];\n  n1 [label=\"1\", shape=box];\n");
        for id in 2..self.nodes.len() as u32 {
            let n = self.node(id);
            let text = label(self.order[n.level as usize]).replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(s, "  n{id} [label=\"{text}\"];");
            let _ = writeln!(s, "  n{id} -> n{} [style=dashed];", n.lo);
            let _ = writeln!(s, "  n{id} -> n{};", n.hi);
        }
        s.push_str("}\n");
        s
    }
}

/// Default variable order: first appearance in the proofs, with atoms that
/// share a discrete variable (directly or through other atoms) kept
/// contiguous, and continuous atoms grouped by their owner set.
pub fn default_order(g: &GroundProgram) -> Vec<usize> {
    let n_rv = g.rvs.len();
    let mut parent: Vec<usize> = (0..n_rv).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in &g.atoms {
        let discrete: Vec<usize> = a.owners.iter().copied().filter(|&o| g.rvs[o].kind.is_discrete()).collect();
        for w in discrete.windows(2) {
            let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[x.max(y)] = x.min(y);
        }
    }
    #[derive(PartialEq, Eq, Hash, Clone)]
    enum Key {
        Discrete(usize),
        Continuous(Vec<usize>),
    }
    let key: Vec<Key> = g
        .atoms
        .iter()
        .map(|a| match a.owners.iter().find(|&&o| g.rvs[o].kind.is_discrete()) {
            Some(&o) => Key::Discrete(find(&mut parent, o)),
            None => Key::Continuous(a.owners.clone()),
        })
        .collect();
    let mut appearance = g.formula.atoms();
    for a in 0..g.atoms.len() {
        if !appearance.contains(&a) {
            appearance.push(a);
        }
    }
    let mut groups: Vec<(Key, Vec<usize>)> = Vec::new();
    for a in appearance {
        match groups.iter_mut().find(|(k, _)| *k == key[a]) {
            Some((_, members)) => members.push(a),
            None => groups.push((key[a].clone(), vec![a])),
        }
    }
    groups.into_iter().flat_map(|(_, m)| m).collect()
}

/// Compiles a ground program's proofs under its default order.
pub fn compile_program(g: &GroundProgram) -> Result<Circuit, CircuitError> {
    Circuit::compile(&g.formula, &default_order(g))
}
