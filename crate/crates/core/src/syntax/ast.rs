use std::fmt;

/// A logic term.
///
/// `Func` and `Param` only appear in numeric positions after validation
/// (comparison operands, distribution parameters, clause probabilities);
/// everywhere else a call-shaped term is a plain `Compound`.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Var(String),
    Sym(String),
    Num(f64),
    Compound(String, Vec<Term>),
    List(Vec<Term>),
    /// Learnable scalar or tensor, written `t(name)`.
    Param(String),
    /// Call of a numeric builtin or a declared network.
    Func(String, Vec<Term>),
}

impl Term {
    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Sym(_) | Term::Num(_) | Term::Param(_) => true,
            Term::Compound(_, args) | Term::Func(_, args) | Term::List(args) => args.iter().all(Term::is_ground),
        }
    }

    /// Variables in order of first occurrence.
    pub fn vars_into(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Compound(_, args) | Term::Func(_, args) | Term::List(args) => {
                for a in args {
                    a.vars_into(out);
                }
            }
            _ => {}
        }
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.vars_into(&mut out);
        out
    }

    /// Functor name and arity for symbol and compound terms.
    pub fn functor(&self) -> Option<(&str, usize)> {
        match self {
            Term::Sym(s) => Some((s, 0)),
            Term::Compound(f, args) => Some((f, args.len())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: impl Into<String>, args: Vec<Term>) -> Self {
        Atom { pred: pred.into(), args }
    }

    pub fn key(&self) -> (String, usize) {
        (self.pred.clone(), self.args.len())
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn to_term(&self) -> Term {
        if self.args.is_empty() {
            Term::Sym(self.pred.clone())
        } else {
            Term::Compound(self.pred.clone(), self.args.clone())
        }
    }

    pub fn from_term(t: &Term) -> Option<Atom> {
        match t {
            Term::Sym(s) => Some(Atom::new(s.clone(), Vec::new())),
            Term::Compound(f, args) => Some(Atom::new(f.clone(), args.clone())),
            _ => None,
        }
    }

    pub fn vars_into(&self, out: &mut Vec<String>) {
        for a in &self.args {
            a.vars_into(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "=<",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=:=",
            CmpOp::Ne => "=\\=",
        }
    }

    /// The complement: `!(a op b) == (a op.negate() b)`.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }

    /// Truth of `g op 0`.
    pub fn holds(self, g: f64) -> bool {
        match self {
            CmpOp::Lt => g < 0.0,
            CmpOp::Le => g <= 0.0,
            CmpOp::Gt => g > 0.0,
            CmpOp::Ge => g >= 0.0,
            CmpOp::Eq => g == 0.0,
            CmpOp::Ne => g != 0.0,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub lhs: Term,
    pub op: CmpOp,
    pub rhs: Term,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Cmp(Comparison),
}

impl Literal {
    pub fn vars_into(&self, out: &mut Vec<String>) {
        match self {
            Literal::Pos(a) | Literal::Neg(a) => a.vars_into(out),
            Literal::Cmp(c) => {
                c.lhs.vars_into(out);
                c.rhs.vars_into(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub head: Atom,
    pub body: Vec<Literal>,
    /// `P :: head :- body` annotation.
    pub prob: Option<Term>,
}

impl Clause {
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.head.vars_into(&mut out);
        for l in &self.body {
            l.vars_into(&mut out);
        }
        if let Some(p) = &self.prob {
            p.vars_into(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Bernoulli,
    Categorical,
    Normal,
    Beta,
    Poisson,
    GeneralizedNormal,
    Uniform,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Bernoulli,
        Family::Categorical,
        Family::Normal,
        Family::Beta,
        Family::Poisson,
        Family::GeneralizedNormal,
        Family::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Categorical => "categorical",
            Family::Normal => "normal",
            Family::Beta => "beta",
            Family::Poisson => "poisson",
            Family::GeneralizedNormal => "generalized_normal",
            Family::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Accepted parameter counts, after network outputs are splatted.
    pub fn arity(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Family::Bernoulli | Family::Poisson => 1..=1,
            Family::Categorical => 1..=2,
            Family::Normal | Family::Beta | Family::Uniform => 2..=2,
            Family::GeneralizedNormal => 2..=3,
        }
    }

    pub fn kind(self) -> RvKind {
        match self {
            Family::Bernoulli | Family::Categorical => RvKind::FiniteDiscrete,
            Family::Poisson => RvKind::CountableDiscrete,
            _ => RvKind::Continuous,
        }
    }

    /// Whether parameter slot `i` must be strictly positive.
    pub fn positive_slot(self, i: usize) -> bool {
        matches!(
            (self, i),
            (Family::Normal, 1)
                | (Family::GeneralizedNormal, 1)
                | (Family::GeneralizedNormal, 2)
                | (Family::Beta, _)
                | (Family::Poisson, 0)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RvKind {
    FiniteDiscrete,
    CountableDiscrete,
    Continuous,
}

impl RvKind {
    pub fn is_discrete(self) -> bool {
        !matches!(self, RvKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistFact {
    pub head: Atom,
    pub family: Family,
    pub params: Vec<Term>,
}

impl DistFact {
    /// Arity of the random-variable term once the value-binding position
    /// (a trailing variable used nowhere else) is stripped.
    pub fn rv_arity(&self) -> usize {
        if self.has_binding_position() {
            self.head.args.len() - 1
        } else {
            self.head.args.len()
        }
    }

    /// Only heads with at least two arguments have one, so `humid(D)` with
    /// constant parameters still names a family of variables.
    pub fn has_binding_position(&self) -> bool {
        if self.head.args.len() < 2 {
            return false;
        }
        let Some(Term::Var(last)) = self.head.args.last() else {
            return false;
        };
        let mut others = Vec::new();
        for a in &self.head.args[..self.head.args.len() - 1] {
            a.vars_into(&mut others);
        }
        for p in &self.params {
            p.vars_into(&mut others);
        }
        !others.contains(last)
    }

    /// Template for the random-variable term itself.
    pub fn rv_template(&self) -> Atom {
        Atom::new(self.head.pred.clone(), self.head.args[..self.rv_arity()].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    Real,
    /// Stored unconstrained, mapped through softplus.
    Positive,
    /// Stored unconstrained, mapped through the logistic sigmoid.
    Unit,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Constraint::Real => "real",
            Constraint::Positive => "positive",
            Constraint::Unit => "unit",
        }
    }

    pub fn from_name(s: &str) -> Option<Constraint> {
        match s {
            "real" => Some(Constraint::Real),
            "positive" => Some(Constraint::Positive),
            "unit" => Some(Constraint::Unit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    /// Initial values in constrained space; one value means a scalar.
    pub init: Vec<f64>,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(s: &str) -> Option<Activation> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "linear" => Some(Activation::Linear),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDecl {
    pub name: String,
    pub arch: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl NetworkDecl {
    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Path(String),
    Inline(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBinding {
    pub name: String,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProgramAst {
    pub clauses: Vec<Clause>,
    pub dist_facts: Vec<DistFact>,
    pub params: Vec<ParamDecl>,
    pub networks: Vec<NetworkDecl>,
    pub queries: Vec<Atom>,
    pub data: Vec<DataBinding>,
}

impl ProgramAst {
    pub fn network(&self, name: &str) -> Option<&NetworkDecl> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Distributional facts whose random-variable term has this functor.
    pub fn dist_facts_for(&self, name: &str, arity: usize) -> impl Iterator<Item = &DistFact> {
        let name = name.to_string();
        self.dist_facts.iter().filter(move |d| d.head.pred == name && d.rv_arity() == arity)
    }

    pub fn is_rv_functor(&self, name: &str, arity: usize) -> bool {
        self.dist_facts_for(name, arity).next().is_some()
    }
}
