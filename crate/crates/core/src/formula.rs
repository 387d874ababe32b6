//! Formula mini-language: `response ("|" terms)? "~" terms ("|" terms)?`.
//!
//! `terms` is either `1` (no terms) or `name (+ name)*`. Names are
//! identifiers (`[A-Za-z_.][A-Za-z0-9_.]*`) or backtick-quoted strings.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prelude::*;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Formula {
    pub response: String,
    /// Terms left of `~` after `|`: strata or time-varying shifts.
    pub left: Vec<String>,
    pub shift: Vec<String>,
    pub scale: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    One,
    Plus,
    Bar,
    Tilde,
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::FormulaSyntax {
        offset,
        message: message.into(),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some(&(pos, c)) = it.peek() {
        match c {
            c if c.is_whitespace() => {
                it.next();
            }
            '+' | '|' | '~' => {
                it.next();
                out.push((
                    pos,
                    match c {
                        '+' => Tok::Plus,
                        '|' => Tok::Bar,
                        _ => Tok::Tilde,
                    },
                ));
            }
            '`' => {
                it.next();
                let mut name = String::new();
                loop {
                    match it.next() {
                        Some((_, '`')) => break,
                        Some((_, ch)) => name.push(ch),
                        None => return Err(syntax(pos, "unterminated quoted name")),
                    }
                }
                if name.is_empty() {
                    return Err(syntax(pos, "empty quoted name"));
                }
                out.push((pos, Tok::Name(name)));
            }
            c if c.is_ascii_digit() => {
                let mut lit = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if !is_ident(d) {
                        break;
                    }
                    lit.push(d);
                    it.next();
                }
                if lit != "1" {
                    return Err(syntax(pos, format!("unexpected literal `{lit}`")));
                }
                out.push((pos, Tok::One));
            }
            c if is_ident_start(c) => {
                let mut name = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if !is_ident(d) {
                        break;
                    }
                    name.push(d);
                    it.next();
                }
                out.push((pos, Tok::Name(name)));
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
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

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {what}")))
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Name(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(syntax(self.offset(), "expected a variable name")),
        }
    }

    fn terms(&mut self) -> Result<Vec<(usize, String)>> {
        if self.peek() == Some(&Tok::One) {
            self.pos += 1;
            return Ok(Vec::new());
        }
        let mut out = vec![(self.offset(), self.name()?)];
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            out.push((self.offset(), self.name()?));
        }
        Ok(out)
    }
}

fn check_unique(terms: &[(usize, String)]) -> Result<()> {
    for (i, (off, name)) in terms.iter().enumerate() {
        if terms[..i].iter().any(|(_, n)| n == name) {
            return Err(syntax(*off, format!("variable `{name}` listed twice")));
        }
    }
    Ok(())
}

pub fn parse_formula(text: &str) -> Result<Formula> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(syntax(0, "empty formula"));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let response = p.name()?;
    let mut left = Vec::new();
    if p.peek() == Some(&Tok::Bar) {
        p.pos += 1;
        left = p.terms()?;
    }
    p.expect(Tok::Tilde, "`~`")?;
    let shift = p.terms()?;
    let mut scale = Vec::new();
    if p.peek() == Some(&Tok::Bar) {
        p.pos += 1;
        scale = p.terms()?;
    }
    if p.peek().is_some() {
        return Err(syntax(p.offset(), "unexpected trailing input"));
    }
    for list in [&left, &shift, &scale] {
        check_unique(list)?;
        if let Some((off, _)) = list.iter().find(|(_, n)| *n == response) {
            return Err(syntax(*off, "response used as a term"));
        }
    }
    for (off, name) in &left {
        if shift.iter().chain(&scale).any(|(_, n)| n == name) {
            return Err(syntax(
                *off,
                format!("variable `{name}` used both left of `~` and as a shift or scale term"),
            ));
        }
    }
    let strip = |v: Vec<(usize, String)>| v.into_iter().map(|(_, n)| n).collect();
    Ok(Formula {
        response,
        left: strip(left),
        shift: strip(shift),
        scale: strip(scale),
    })
}

fn write_name(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    let plain = name.chars().next().is_some_and(is_ident_start) && name.chars().all(is_ident);
    if plain {
        f.write_str(name)
    } else {
        write!(f, "`{name}`")
    }
}

fn write_terms(f: &mut fmt::Formatter<'_>, terms: &[String]) -> fmt::Result {
    if terms.is_empty() {
        return f.write_str("1");
    }
    for (i, t) in terms.iter().enumerate() {
        if i > 0 {
            f.write_str(" + ")?;
        }
        write_name(f, t)?;
    }
    Ok(())
}

/// Canonical form; parsing it yields the same [`Formula`].
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_name(f, &self.response)?;
        if !self.left.is_empty() {
            f.write_str(" | ")?;
            write_terms(f, &self.left)?;
        }
        f.write_str(" ~ ")?;
        write_terms(f, &self.shift)?;
        if !self.scale.is_empty() {
            f.write_str(" | ")?;
            write_terms(f, &self.scale)?;
        }
        Ok(())
    }
}
