use super::ast::*;
use super::lexer::{tokenize, Pos, Spanned, Tok};
use super::validate::validate;
use super::{ParseError, SyntaxError};

/// Parse and validate `.dspl` source text.
pub fn parse(source: &str) -> Result<ProgramAst, ParseError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, i: 0, anon: 0 };
    let mut items = Vec::new();
    while p.peek() != &Tok::Eof {
        items.push(p.item()?);
    }
    validate(items)
}

/// Parse a single term, e.g. a query template from a dataset line.
pub fn parse_term(source: &str) -> Result<Term, SyntaxError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, i: 0, anon: 0 };
    let t = p.expr()?;
    if p.peek() == &Tok::Period {
        p.bump();
    }
    p.expect(Tok::Eof)?;
    Ok(t)
}

pub(crate) enum ItemKind {
    Clause(Clause),
    Dist(DistFact),
    Query(Atom),
    Param(ParamDecl),
    Network(NetworkDecl),
    Data(DataBinding),
}

pub(crate) struct Item {
    pub kind: ItemKind,
    pub pos: Pos,
}

struct Parser {
    toks: Vec<Spanned>,
    i: usize,
    anon: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> SyntaxError {
        let pos = self.pos();
        SyntaxError { line: pos.line, col: pos.col, message: msg.into() }
    }

    fn unexpected(&self, wanted: &str) -> SyntaxError {
        self.err_here(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            let wanted = match &tok {
                Tok::Eof => "end of input".to_string(),
                t => t.describe(),
            };
            Err(self.unexpected(&wanted))
        }
    }

    fn item(&mut self) -> Result<Item, SyntaxError> {
        let pos = self.pos();
        if let Tok::Directive(text) = self.peek().clone() {
            self.bump();
            let kind = directive(&text).map_err(|m| SyntaxError { line: pos.line, col: pos.col, message: m })?;
            return Ok(Item { kind, pos });
        }
        // Variables are clause-scoped, so anonymous numbering restarts per clause.
        self.anon = 0;
        let first = self.expr()?;
        let kind = match self.peek() {
            Tok::Annot => {
                self.bump();
                let head = self.head_atom()?;
                let body = self.opt_body()?;
                ItemKind::Clause(Clause { head, body, prob: Some(first) })
            }
            Tok::Tilde => {
                self.bump();
                let head = self.atom_of(first)?;
                let fpos = self.pos();
                let Tok::Ident(fam) = self.bump() else {
                    return Err(SyntaxError {
                        line: fpos.line,
                        col: fpos.col,
                        message: "expected distribution family".into(),
                    });
                };
                let family = Family::from_name(&fam).ok_or_else(|| SyntaxError {
                    line: fpos.line,
                    col: fpos.col,
                    message: format!("unknown distribution family `{fam}`"),
                })?;
                let params = if self.peek() == &Tok::LParen {
                    self.bump();
                    self.args(Tok::RParen)?
                } else {
                    Vec::new()
                };
                ItemKind::Dist(DistFact { head, family, params })
            }
            _ => {
                let head = self.atom_of(first)?;
                if head.pred == "query" && self.peek() == &Tok::Period {
                    if head.args.len() != 1 {
                        return Err(SyntaxError {
                            line: pos.line,
                            col: pos.col,
                            message: "query/1 takes exactly one atom".into(),
                        });
                    }
                    let q = Atom::from_term(&head.args[0]).ok_or_else(|| SyntaxError {
                        line: pos.line,
                        col: pos.col,
                        message: "query argument must be an atom".into(),
                    })?;
                    ItemKind::Query(q)
                } else {
                    let body = self.opt_body()?;
                    ItemKind::Clause(Clause { head, body, prob: None })
                }
            }
        };
        if matches!(kind, ItemKind::Dist(_) | ItemKind::Query(_)) {
            self.expect(Tok::Period)?;
        }
        Ok(Item { kind, pos })
    }

    fn head_atom(&mut self) -> Result<Atom, SyntaxError> {
        let t = self.expr()?;
        self.atom_of(t)
    }

    fn atom_of(&self, t: Term) -> Result<Atom, SyntaxError> {
        Atom::from_term(&t).ok_or_else(|| self.err_here("expected an atom"))
    }

    /// Optional `:- body` followed by the terminating period.
    fn opt_body(&mut self) -> Result<Vec<Literal>, SyntaxError> {
        let mut body = Vec::new();
        if self.peek() == &Tok::Neck {
            self.bump();
            loop {
                body.push(self.literal()?);
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Period)?;
        Ok(body)
    }

    fn literal(&mut self) -> Result<Literal, SyntaxError> {
        if self.peek() == &Tok::Not {
            self.bump();
            let t = self.primary()?;
            return Ok(Literal::Neg(self.atom_of(t)?));
        }
        let lhs = self.expr()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.expr()?;
            return Ok(Literal::Cmp(Comparison { lhs, op, rhs }));
        }
        Ok(Literal::Pos(self.atom_of(lhs)?))
    }

    fn expr(&mut self) -> Result<Term, SyntaxError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let f = match self.peek() {
                Tok::Plus => "add",
                Tok::Minus => "sub",
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Term::Func(f.into(), vec![lhs, rhs]);
        }
    }

    fn mul_expr(&mut self) -> Result<Term, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let f = match self.peek() {
                Tok::Star => "mul",
                Tok::Slash => "div",
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Term::Func(f.into(), vec![lhs, rhs]);
        }
    }

    fn unary(&mut self) -> Result<Term, SyntaxError> {
        if self.peek() == &Tok::Minus {
            self.bump();
            return Ok(match self.unary()? {
                Term::Num(v) => Term::Num(-v),
                t => Term::Func("neg".into(), vec![t]),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Term, SyntaxError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Term::Num(v)),
            Tok::Var(v) if v == "_" => {
                let name = format!("_G{}", self.anon);
                self.anon += 1;
                Ok(Term::Var(name))
            }
            Tok::Var(v) => Ok(Term::Var(v)),
            Tok::Ident(name) => {
                if self.peek() != &Tok::LParen {
                    return Ok(Term::Sym(name));
                }
                self.bump();
                let args = self.args(Tok::RParen)?;
                if name == "t" && args.len() == 1 {
                    return match &args[0] {
                        Term::Sym(p) => Ok(Term::Param(p.clone())),
                        Term::Var(v) if v.starts_with("_G") => Err(SyntaxError {
                            line: pos.line,
                            col: pos.col,
                            message: "anonymous learnable parameter `t(_)`; name it, e.g. `t(sigma)`".into(),
                        }),
                        _ => Err(SyntaxError {
                            line: pos.line,
                            col: pos.col,
                            message: "learnable parameter name must be a lowercase symbol".into(),
                        }),
                    };
                }
                Ok(Term::Compound(name, args))
            }
            Tok::LBracket => Ok(Term::List(self.args(Tok::RBracket)?)),
            Tok::LParen => {
                let t = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => {
                self.i -= 1;
                Err(self.unexpected("a term"))
            }
        }
    }

    /// Comma-separated terms up to and including `close`.
    fn args(&mut self, close: Tok) -> Result<Vec<Term>, SyntaxError> {
        let mut out = Vec::new();
        if *self.peek() == close {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.peek() == &Tok::Comma {
                self.bump();
            } else {
                self.expect(close)?;
                return Ok(out);
            }
        }
    }
}

fn directive(text: &str) -> Result<ItemKind, String> {
    let text = text.trim();
    let (word, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let rest = rest.trim();
    match word {
        "network" => network_directive(rest).map(ItemKind::Network),
        "param" => param_directive(rest).map(ItemKind::Param),
        "data" => data_directive(rest).map(ItemKind::Data),
        other => Err(format!("unknown directive `#{other}`")),
    }
}

fn directive_name(s: &str) -> Result<(&str, &str), String> {
    let end = s.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(s.len());
    let name = &s[..end];
    if name.is_empty() || !name.starts_with(|c: char| c.is_lowercase()) {
        return Err(format!("expected a lowercase name, found `{s}`"));
    }
    Ok((name, s[end..].trim()))
}

fn number_list(s: &str) -> Result<Vec<f64>, String> {
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected `[...]`, found `{s}`"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|x| number(x.trim())).collect()
}

fn number(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a number, found `{s}`")),
    }
}

fn network_directive(s: &str) -> Result<NetworkDecl, String> {
    let (name, rest) = directive_name(s)?;
    let mut decl =
        NetworkDecl { name: name.to_string(), arch: Vec::new(), hidden: Activation::Relu, output: Activation::Linear };
    // `arch=[...]` may contain spaces after commas, so split on `key=` boundaries.
    let mut rest = rest;
    while !rest.is_empty() {
        let (key, after) = rest.split_once('=').ok_or_else(|| format!("malformed option `{rest}`"))?;
        let after = after.trim_start();
        let (value, next) = if after.starts_with('[') {
            let close = after.find(']').ok_or("unterminated `[`")?;
            (&after[..=close], after[close + 1..].trim_start())
        } else {
            after.split_once(char::is_whitespace).map_or((after, ""), |(v, n)| (v, n.trim_start()))
        };
        match key.trim() {
            "arch" => {
                decl.arch = number_list(value)?
                    .into_iter()
                    .map(|v| {
                        if v >= 1.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(format!("layer width must be a positive integer, found {v}"))
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
            "act" => {
                decl.hidden = Activation::from_name(value)
                    .filter(|a| *a != Activation::Softmax)
                    .ok_or_else(|| format!("unknown hidden activation `{value}`"))?
            }
            "out" => {
                decl.output = Activation::from_name(value)
                    .filter(|a| *a != Activation::Relu && *a != Activation::Tanh)
                    .ok_or_else(|| format!("unknown output activation `{value}`"))?
            }
            other => return Err(format!("unknown network option `{other}`")),
        }
        rest = next;
    }
    if decl.arch.len() < 2 {
        return Err(format!("network `{name}` needs arch=[in, ..., out] with at least two widths"));
    }
    Ok(decl)
}

fn param_directive(s: &str) -> Result<ParamDecl, String> {
    let (name, rest) = directive_name(s)?;
    let rest = rest.strip_prefix('=').ok_or("expected `=` after parameter name")?.trim();
    let (init, rest) = if rest.starts_with('[') {
        let close = rest.find(']').ok_or("unterminated `[`")?;
        (number_list(&rest[..=close])?, rest[close + 1..].trim())
    } else {
        let (v, r) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        (vec![number(v)?], r.trim())
    };
    if init.is_empty() {
        return Err(format!("parameter `{name}` has no initial value"));
    }
    let constraint = if rest.is_empty() {
        Constraint::Real
    } else {
        Constraint::from_name(rest).ok_or_else(|| format!("unknown constraint `{rest}`"))?
    };
    Ok(ParamDecl { name: name.to_string(), init, constraint })
}

fn data_directive(s: &str) -> Result<DataBinding, String> {
    let (name, rest) = directive_name(s)?;
    let rest = rest.strip_prefix('=').ok_or("expected `=` after data name")?.trim();
    let source = if rest.starts_with('[') {
        DataSource::Inline(number_list(rest)?)
    } else if rest.is_empty() {
        return Err(format!("data binding `{name}` has no source"));
    } else {
        DataSource::Path(rest.to_string())
    };
    Ok(DataBinding { name: name.to_string(), source })
}
