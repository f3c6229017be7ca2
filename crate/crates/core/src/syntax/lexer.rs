use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Lowercase-initial identifier.
    Ident(String),
    /// Uppercase- or underscore-initial identifier.
    Var(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Period,
    Neck,
    Annot,
    Tilde,
    Not,
    Cmp(super::CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    /// A whole `#...` directive line, without the `#`.
    Directive(String),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Directive(_) => "directive".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Period => ".",
            Tok::Neck => ":-",
            Tok::Annot => "::",
            Tok::Tilde => "~",
            Tok::Not => "\\+",
            Tok::Cmp(op) => op.symbol(),
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub pos: Pos,
}

pub fn tokenize(src: &str) -> Result<Vec<Spanned>, SyntaxError> {
    Lexer { chars: src.chars().collect(), i: 0, line: 1, col: 1 }.run()
}

struct Lexer {
    chars: Vec<char>,
    i: usize,
    line: usize,
    col: usize,
}

impl Lexer {
    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.i).copied()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn err(&self, pos: Pos, msg: impl Into<String>) -> SyntaxError {
        SyntaxError { line: pos.line, col: pos.col, message: msg.into() }
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(k, c)| self.peek(k) == Some(c))
    }

    fn run(mut self) -> Result<Vec<Spanned>, SyntaxError> {
        let mut out = Vec::new();
        let mut line_start = true;
        loop {
            // Skip whitespace and comments, tracking whether we're at line start.
            while let Some(c) = self.peek(0) {
                if c == '%' {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c == '\n' {
                    line_start = true;
                    self.bump();
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let pos = self.pos();
            let Some(c) = self.peek(0) else {
                out.push(Spanned { tok: Tok::Eof, pos });
                return Ok(out);
            };
            let at_line_start = std::mem::replace(&mut line_start, false);
            let tok = if c == '#' {
                if !at_line_start {
                    return Err(self.err(pos, "directive must start a line"));
                }
                self.bump();
                let mut text = String::new();
                while let Some(c) = self.peek(0) {
                    if c == '\n' || c == '%' {
                        break;
                    }
                    text.push(c);
                    self.bump();
                }
                Tok::Directive(text)
            } else if c.is_ascii_digit() {
                self.number(pos)?
            } else if c.is_alphabetic() || c == '_' {
                let mut s = String::new();
                while let Some(c) = self.peek(0) {
                    if c.is_alphanumeric() || c == '_' {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                let first = s.chars().next().unwrap();
                if first.is_uppercase() || first == '_' {
                    Tok::Var(s)
                } else if first.is_lowercase() {
                    Tok::Ident(s)
                } else {
                    return Err(self.err(pos, format!("identifier `{s}` must start with a letter")));
                }
            } else {
                self.punct(pos)?
            };
            out.push(Spanned { tok, pos });
        }
    }

    fn punct(&mut self, pos: Pos) -> Result<Tok, SyntaxError> {
        use super::CmpOp::*;
        const TABLE: &[(&str, Tok)] = &[
            ("=:=", Tok::Cmp(Eq)),
            ("=\\=", Tok::Cmp(Ne)),
            ("\\+", Tok::Not),
            (":-", Tok::Neck),
            ("::", Tok::Annot),
            ("=<", Tok::Cmp(Le)),
            (">=", Tok::Cmp(Ge)),
            ("<", Tok::Cmp(Lt)),
            (">", Tok::Cmp(Gt)),
            ("(", Tok::LParen),
            (")", Tok::RParen),
            ("[", Tok::LBracket),
            ("]", Tok::RBracket),
            (",", Tok::Comma),
            (".", Tok::Period),
            ("~", Tok::Tilde),
            ("+", Tok::Plus),
            ("-", Tok::Minus),
            ("*", Tok::Star),
            ("/", Tok::Slash),
        ];
        for (text, tok) in TABLE {
            if self.starts_with(text) {
                for _ in 0..text.chars().count() {
                    self.bump();
                }
                return Ok(tok.clone());
            }
        }
        let c = self.peek(0).unwrap();
        Err(self.err(pos, format!("unexpected character `{c}`")))
    }

    fn number(&mut self, pos: Pos) -> Result<Tok, SyntaxError> {
        let mut s = String::new();
        while let Some(c) = self.peek(0).filter(char::is_ascii_digit) {
            s.push(c);
            self.bump();
        }
        // A period only belongs to the number if a digit follows it.
        if self.peek(0) == Some('.') && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            s.push('.');
            self.bump();
            while let Some(c) = self.peek(0).filter(char::is_ascii_digit) {
                s.push(c);
                self.bump();
            }
        }
        if matches!(self.peek(0), Some('e' | 'E')) {
            let sign = matches!(self.peek(1), Some('+' | '-'));
            let digit_at = if sign { 2 } else { 1 };
            if self.peek(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                s.push('e');
                self.bump();
                if sign {
                    s.push(self.bump().unwrap());
                }
                while let Some(c) = self.peek(0).filter(char::is_ascii_digit) {
                    s.push(c);
                    self.bump();
                }
            }
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Tok::Num(v)),
            _ => Err(self.err(pos, format!("malformed number `{s}`"))),
        }
    }
}
