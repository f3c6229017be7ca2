//! Ground numeric expressions and their evaluation over any [`Scalar`].

use std::fmt;

use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum NumExpr {
    Const(f64),
    List(Vec<NumExpr>),
    /// Index into the ground random-variable table.
    Rv(usize),
    Param(String),
    /// Builtin function by name.
    Call(String, Vec<NumExpr>),
    /// Network applied to the concatenation of its arguments.
    Neural(String, Vec<NumExpr>),
    Data(String),
}

impl NumExpr {
    pub fn rvs_into(&self, out: &mut Vec<usize>) {
        match self {
            NumExpr::Rv(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            NumExpr::List(xs) | NumExpr::Call(_, xs) | NumExpr::Neural(_, xs) => {
                xs.iter().for_each(|x| x.rvs_into(out))
            }
            _ => {}
        }
    }

    /// True when the value can change with learnable state.
    pub fn is_parametric(&self) -> bool {
        match self {
            NumExpr::Param(_) | NumExpr::Neural(..) => true,
            NumExpr::List(xs) | NumExpr::Call(_, xs) => xs.iter().any(NumExpr::is_parametric),
            _ => false,
        }
    }

    pub fn remap_rvs(&mut self, map: &[usize]) {
        match self {
            NumExpr::Rv(i) => *i = map[*i],
            NumExpr::List(xs) | NumExpr::Call(_, xs) | NumExpr::Neural(_, xs) => {
                xs.iter_mut().for_each(|x| x.remap_rvs(map))
            }
            _ => {}
        }
    }

    /// Renders with random variables shown by name.
    pub fn display<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        Shown(self, names)
    }
}

struct Shown<'a>(&'a NumExpr, &'a [String]);

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, xs: &[NumExpr]| -> fmt::Result {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}", Shown(x, self.1))?;
            }
            Ok(())
        };
        match self.0 {
            NumExpr::Const(c) => write!(f, "{c}"),
            NumExpr::Rv(i) => match self.1.get(*i) {
                Some(name) => f.write_str(name),
                None => write!(f, "rv{i}"),
            },
            NumExpr::Param(p) => write!(f, "t({p})"),
            NumExpr::Data(d) => f.write_str(d),
            NumExpr::List(xs) => {
                f.write_str("[")?;
                list(f, xs)?;
                f.write_str("]")
            }
            NumExpr::Call(name, xs) | NumExpr::Neural(name, xs) => {
                write!(f, "{name}(")?;
                list(f, xs)?;
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unbound reference `{0}`")]
    Unbound(String),
    #[error("network `{0}`: {1}")]
    Network(String, String),
}

/// A scalar or a small vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Val<S> {
    Scalar(S),
    Vector(Vec<S>),
}

impl<S: Scalar> Val<S> {
    pub fn scalar(self) -> Result<S, EvalError> {
        match self {
            Val::Scalar(s) => Ok(s),
            Val::Vector(v) if v.len() == 1 => Ok(v[0]),
            Val::Vector(v) => Err(EvalError::ShapeMismatch(format!("expected a scalar, got {} values", v.len()))),
        }
    }

    pub fn into_vec(self) -> Vec<S> {
        match self {
            Val::Scalar(s) => vec![s],
            Val::Vector(v) => v,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Val::Scalar(_) => 1,
            Val::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lookup of the non-constant leaves of an expression.
pub trait Env<S: Scalar> {
    fn rv(&self, index: usize) -> Result<Val<S>, EvalError>;
    fn param(&self, name: &str) -> Result<Val<S>, EvalError>;
    fn data(&self, name: &str) -> Result<Vec<f64>, EvalError>;
    fn neural(&self, net: &str, input: &[S]) -> Result<Vec<S>, EvalError>;
}

pub fn eval<S: Scalar, E: Env<S> + ?Sized>(e: &NumExpr, env: &E) -> Result<Val<S>, EvalError> {
    Ok(match e {
        NumExpr::Const(c) => Val::Scalar(S::constant(*c)),
        NumExpr::Rv(i) => env.rv(*i)?,
        NumExpr::Param(p) => env.param(p)?,
        NumExpr::Data(d) => Val::Vector(env.data(d)?.into_iter().map(S::constant).collect()),
        NumExpr::List(xs) => {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.extend(eval(x, env)?.into_vec());
            }
            Val::Vector(out)
        }
        NumExpr::Neural(net, xs) => {
            let mut input = Vec::new();
            for x in xs {
                input.extend(eval(x, env)?.into_vec());
            }
            Val::Vector(env.neural(net, &input)?)
        }
        NumExpr::Call(f, xs) => {
            let mut args = Vec::with_capacity(xs.len());
            for x in xs {
                args.push(eval(x, env)?);
            }
            call(f, args)?
        }
    })
}

fn zip<S: Scalar>(a: Val<S>, b: Val<S>, op: impl Fn(S, S) -> S) -> Result<Val<S>, EvalError> {
    Ok(match (a, b) {
        (Val::Scalar(x), Val::Scalar(y)) => Val::Scalar(op(x, y)),
        (Val::Scalar(x), Val::Vector(ys)) => Val::Vector(ys.into_iter().map(|y| op(x, y)).collect()),
        (Val::Vector(xs), Val::Scalar(y)) => Val::Vector(xs.into_iter().map(|x| op(x, y)).collect()),
        (Val::Vector(xs), Val::Vector(ys)) => {
            if xs.len() != ys.len() {
                return Err(EvalError::ShapeMismatch(format!("lengths {} and {}", xs.len(), ys.len())));
            }
            Val::Vector(xs.into_iter().zip(ys).map(|(x, y)| op(x, y)).collect())
        }
    })
}

fn map<S: Scalar>(a: Val<S>, op: impl Fn(S) -> Result<S, EvalError>) -> Result<Val<S>, EvalError> {
    Ok(match a {
        Val::Scalar(x) => Val::Scalar(op(x)?),
        Val::Vector(xs) => Val::Vector(xs.into_iter().map(op).collect::<Result<_, _>>()?),
    })
}

fn squared_distance<S: Scalar>(a: Val<S>, b: Val<S>) -> Result<S, EvalError> {
    let d = zip(a, b, |x, y| x - y)?.into_vec();
    Ok(d.iter().skip(1).fold(d[0] * d[0], |acc, &x| acc + x * x))
}

fn call<S: Scalar>(f: &str, args: Vec<Val<S>>) -> Result<Val<S>, EvalError> {
    let mut it = args.into_iter();
    let mut next = || it.next().ok_or_else(|| EvalError::UnknownFunction(f.to_string()));
    match f {
        "add" => zip(next()?, next()?, |x, y| x + y),
        "sub" => zip(next()?, next()?, |x, y| x - y),
        "mul" => zip(next()?, next()?, |x, y| x * y),
        "div" => {
            let (a, b) = (next()?, next()?);
            if b.clone().into_vec().iter().any(|y| y.value() == 0.0) {
                return Err(EvalError::DomainError("division by zero".into()));
            }
            zip(a, b, |x, y| x / y)
        }
        "neg" => map(next()?, |x| Ok(-x)),
        "abs" => map(next()?, |x| Ok(x.abs())),
        "exp" => map(next()?, |x| Ok(x.exp())),
        "log" => map(next()?, |x| {
            if x.value() > 0.0 {
                Ok(x.ln())
            } else {
                Err(EvalError::DomainError(format!("log of {}", x.value())))
            }
        }),
        "squared_distance" => Ok(Val::Scalar(squared_distance(next()?, next()?)?)),
        "distance" => {
            let d2 = squared_distance(next()?, next()?)?;
            if d2.value() == 0.0 {
                // sqrt has no derivative at 0; the subgradient 0 is used.
                Ok(Val::Scalar(d2.custom(0.0, 0.0)))
            } else {
                Ok(Val::Scalar(d2.sqrt()))
            }
        }
        _ => Err(EvalError::UnknownFunction(f.to_string())),
    }
}

/// Evaluation environment with everything fixed up front; used for
/// deterministic parts of grounding and in tests.
#[derive(Debug, Default, Clone)]
pub struct FixedEnv {
    pub rvs: Vec<Vec<f64>>,
    pub params: Vec<(String, Vec<f64>)>,
    pub data: Vec<(String, Vec<f64>)>,
}

impl Env<f64> for FixedEnv {
    fn rv(&self, index: usize) -> Result<Val<f64>, EvalError> {
        let v = self.rvs.get(index).ok_or_else(|| EvalError::Unbound(format!("rv{index}")))?;
        Ok(if v.len() == 1 { Val::Scalar(v[0]) } else { Val::Vector(v.clone()) })
    }

    fn param(&self, name: &str) -> Result<Val<f64>, EvalError> {
        let (_, v) =
            self.params.iter().find(|(n, _)| n == name).ok_or_else(|| EvalError::Unbound(format!("t({name})")))?;
        Ok(if v.len() == 1 { Val::Scalar(v[0]) } else { Val::Vector(v.clone()) })
    }

    fn data(&self, name: &str) -> Result<Vec<f64>, EvalError> {
        self.data
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| EvalError::Unbound(name.to_string()))
    }

    fn neural(&self, net: &str, _: &[f64]) -> Result<Vec<f64>, EvalError> {
        Err(EvalError::Network(net.to_string(), "no networks in this environment".into()))
    }
}
