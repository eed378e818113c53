use std::fmt;

use crate::{Error, Result};

/// One column-generating term of a model formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Var(String),
    /// Elementwise product of two distinct variables.
    Interaction(String, String),
}

impl Term {
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Intercept => vec![],
            Term::Var(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    /// `a:b` and `b:a` generate the same column.
    fn same_column(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Interaction(a, b), Term::Interaction(c, d)) => {
                (a == c && b == d) || (a == d && b == c)
            }
            _ => self == other,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::Var(a) => f.write_str(a),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// A parsed `response ~ fixed + (random | group)` formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub response: String,
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
    pub group: String,
}

impl ModelSpec {
    pub fn new(
        response: impl Into<String>,
        fixed: Vec<Term>,
        random: Vec<Term>,
        group: impl Into<String>,
    ) -> Result<Self> {
        check_unique(&fixed, 0)?;
        check_unique(&random, 0)?;
        if fixed.is_empty() || random.is_empty() {
            return Err(Error::Formula {
                offset: 0,
                msg: "fixed and random term lists must be nonempty".into(),
            });
        }
        Ok(ModelSpec {
            response: response.into(),
            fixed,
            random,
            group: group.into(),
        })
    }

    pub fn p(&self) -> usize {
        self.fixed.len()
    }

    pub fn q(&self) -> usize {
        self.random.len()
    }
}

pub fn join_terms(terms: &[Term]) -> String {
    terms
        .iter()
        .map(Term::to_string)
        .collect::<Vec<_>>()
        .join(" + ")
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ~ {} + ({} | {})",
            self.response,
            join_terms(&self.fixed),
            join_terms(&self.random),
            self.group
        )
    }
}

fn check_unique(terms: &[Term], offset: usize) -> Result<()> {
    for (i, t) in terms.iter().enumerate() {
        if terms[..i].iter().any(|u| u.same_column(t)) {
            return Err(Error::Formula {
                offset,
                msg: format!("duplicate term `{t}`"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    One,
    Tilde,
    Plus,
    Colon,
    Bar,
    LParen,
    RParen,
}

fn describe(tok: Option<&(usize, Tok)>) -> String {
    match tok {
        None => "end of input".into(),
        Some((_, Tok::Ident(s))) => format!("`{s}`"),
        Some((_, t)) => format!("{t:?}"),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'~' => Tok::Tilde,
            b'+' => Tok::Plus,
            b':' => Tok::Colon,
            b'|' => Tok::Bar,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'1' if !bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'.') => {
                Tok::One
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(Error::Formula {
                    offset: i,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((i, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Formula {
            offset: self.offset(),
            msg: format!("expected {expected}, found {}", describe(self.toks.get(self.pos))),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(what)
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error("variable name"),
        }
    }

    fn term(&mut self) -> Result<Term> {
        let start = self.offset();
        match self.peek() {
            Some(Tok::One) => {
                self.pos += 1;
                Ok(Term::Intercept)
            }
            Some(Tok::Ident(_)) => {
                let a = self.ident()?;
                if self.peek() == Some(&Tok::Colon) {
                    self.pos += 1;
                    let b = self.ident()?;
                    if a == b {
                        return Err(Error::Formula {
                            offset: start,
                            msg: format!("interaction `{a}:{b}` needs two distinct variables"),
                        });
                    }
                    Ok(Term::Interaction(a, b))
                } else {
                    Ok(Term::Var(a))
                }
            }
            _ => self.error("term (`1`, a variable, or `a:b`)"),
        }
    }

    /// terms := term ("+" term)*, stopping before a `+ (`.
    fn terms(&mut self) -> Result<Vec<Term>> {
        let start = self.offset();
        let mut terms = vec![self.term()?];
        while self.peek() == Some(&Tok::Plus)
            && self.toks.get(self.pos + 1).map(|(_, t)| t) != Some(&Tok::LParen)
        {
            self.pos += 1;
            terms.push(self.term()?);
        }
        check_unique(&terms, start)?;
        Ok(terms)
    }
}

/// Parses `response ~ t1 + t2 + ... + (r1 + ... | group)`.
pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        end: text.len(),
    };
    let response = p.ident()?;
    p.expect(Tok::Tilde, "`~`")?;
    let fixed = p.terms()?;
    p.expect(Tok::Plus, "`+ (random | group)`")?;
    p.expect(Tok::LParen, "`(`")?;
    let random = p.terms()?;
    p.expect(Tok::Bar, "`|`")?;
    let group = p.ident()?;
    p.expect(Tok::RParen, "`)`")?;
    if p.pos != p.toks.len() {
        return p.error("end of formula");
    }
    Ok(ModelSpec {
        response,
        fixed,
        random,
        group,
    })
}

/// Parses a bare term list such as `1 + gender + gender:texp`.
pub fn parse_terms(text: &str) -> Result<Vec<Term>> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        end: text.len(),
    };
    let mut terms = vec![p.term()?];
    while p.peek() == Some(&Tok::Plus) {
        p.pos += 1;
        terms.push(p.term()?);
    }
    if p.pos != p.toks.len() {
        return p.error("`+` or end of term list");
    }
    check_unique(&terms, 0)?;
    Ok(terms)
}
