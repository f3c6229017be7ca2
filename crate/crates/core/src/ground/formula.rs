use serde::Serialize;

/// Signed reference to a comparison atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Lit {
    pub atom: usize,
    pub positive: bool,
}

impl Lit {
    pub fn pos(atom: usize) -> Self {
        Lit { atom, positive: true }
    }

    pub fn neg(atom: usize) -> Self {
        Lit { atom, positive: false }
    }

    pub fn negated(self) -> Self {
        Lit { atom: self.atom, positive: !self.positive }
    }
}

/// Conjunction of literals, sorted by atom and free of duplicates.
pub type Conj = Vec<Lit>;

/// Conjoins two sorted conjunctions; `None` when they contradict.
pub fn conjoin(a: &[Lit], b: &[Lit]) -> Option<Conj> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.atom == y.atom => {
                if x.positive != y.positive {
                    return None;
                }
                i += 1;
                j += 1;
                *x
            }
            (Some(x), Some(y)) if x.atom < y.atom => {
                i += 1;
                *x
            }
            (Some(x), None) => {
                i += 1;
                *x
            }
            (_, Some(y)) => {
                j += 1;
                *y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    Some(out)
}

/// Disjunction of conjunctions. The empty disjunction is false; a
/// disjunction containing the empty conjunction is true.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ProofFormula {
    pub dnf: Vec<Conj>,
}

impl ProofFormula {
    pub fn falsum() -> Self {
        ProofFormula { dnf: Vec::new() }
    }

    pub fn verum() -> Self {
        ProofFormula { dnf: vec![Vec::new()] }
    }

    pub fn is_false(&self) -> bool {
        self.dnf.is_empty()
    }

    pub fn is_true(&self) -> bool {
        self.dnf.iter().any(Vec::is_empty)
    }

    /// Adds a conjunction unless an identical one is present.
    pub fn push(&mut self, c: Conj) {
        if !self.dnf.contains(&c) {
            self.dnf.push(c);
        }
    }

    pub fn atoms(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &self.dnf {
            for l in c {
                if !out.contains(&l.atom) {
                    out.push(l.atom);
                }
            }
        }
        out
    }

    pub fn holds(&self, truth: impl Fn(usize) -> bool) -> bool {
        self.dnf.iter().any(|c| c.iter().all(|l| truth(l.atom) == l.positive))
    }

    /// De Morgan complement, expanded back into disjunctive form. Subsumed
    /// conjunctions are dropped to keep the expansion small.
    pub fn negate(&self) -> ProofFormula {
        let mut acc: Vec<Conj> = vec![Vec::new()];
        for conj in &self.dnf {
            let mut next: Vec<Conj> = Vec::new();
            for partial in &acc {
                for l in conj {
                    if let Some(c) = conjoin(partial, &[l.negated()]) {
                        next.push(c);
                    }
                }
            }
            acc = absorb(next);
            if acc.is_empty() {
                break;
            }
        }
        ProofFormula { dnf: acc }
    }

    pub fn remap_atoms(&mut self, map: &[usize]) {
        for c in &mut self.dnf {
            for l in c.iter_mut() {
                l.atom = map[l.atom];
            }
            c.sort();
        }
    }
}

fn is_subset(small: &[Lit], big: &[Lit]) -> bool {
    small.iter().all(|l| big.binary_search(l).is_ok())
}

/// Drops duplicates and every conjunction implied by a shorter one.
fn absorb(mut cs: Vec<Conj>) -> Vec<Conj> {
    cs.sort_by_key(Vec::len);
    let mut out: Vec<Conj> = Vec::new();
    for c in cs {
        if !out.iter().any(|k| is_subset(k, &c)) {
            out.push(c);
        }
    }
    out
}
