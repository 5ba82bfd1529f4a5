//! Finite-trace temporal formulas: AST, parser and printer.
//!
//! Grammar (ASCII, whitespace insensitive), loosest binding first:
//!
//! ```text
//! implies := or ("->" implies)?          right associative
//! or      := and ("|" and)*
//! and     := until ("&" until)*
//! until   := unary ("U" until)?          right associative
//! unary   := ("!" | "X" | "F" | "G") unary | primary
//! primary := ident | "true" | "false" | "(" implies ")"
//! ident   := [a-zA-Z_][a-zA-Z0-9_]*     (except X, U, F, G, true, false)
//! ```

use std::collections::BTreeSet;
use std::fmt;

use super::TemporalError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
}

impl Formula {
    pub fn atom(name: &str) -> Self {
        Formula::Atom(name.to_string())
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    /// Proposition names referenced by the formula, sorted.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a) => {
                out.insert(a.clone());
            }
            Formula::Not(f) | Formula::Next(f) | Formula::Eventually(f) | Formula::Always(f) => {
                f.collect_atoms(out)
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Operator nesting depth; constants and atoms have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => 0,
            Formula::Not(f) | Formula::Next(f) | Formula::Eventually(f) | Formula::Always(f) => 1 + f.depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }
}

/// Prints a form that parses back to the same tree: binary operators are always
/// parenthesized.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Atom(a) => f.write_str(a),
            Formula::Not(x) => write!(f, "!{x}"),
            Formula::Next(x) => write!(f, "X {x}"),
            Formula::Eventually(x) => write!(f, "F {x}"),
            Formula::Always(x) => write!(f, "G {x}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Until(a, b) => write!(f, "({a} U {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Arrow,
    Next,
    Until,
    Eventually,
    Always,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::True => "`true`".into(),
            Tok::False => "`false`".into(),
            Tok::Not => "`!`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Next => "`X`".into(),
            Tok::Until => "`U`".into(),
            Tok::Eventually => "`F`".into(),
            Tok::Always => "`G`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, TemporalError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'!' => Tok::Not,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 1;
                Tok::Arrow
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i + 1 < bytes.len() && (bytes[i + 1].is_ascii_alphanumeric() || bytes[i + 1] == b'_') {
                    i += 1;
                }
                match &text[start..=i] {
                    "X" => Tok::Next,
                    "U" => Tok::Until,
                    "F" => Tok::Eventually,
                    "G" => Tok::Always,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    ident => Tok::Ident(ident.to_string()),
                }
            }
            _ => {
                let found = text[start..].chars().next().unwrap_or('?');
                return Err(TemporalError::UnknownOperator { offset: start, found });
            }
        };
        out.push((start, tok));
        i += 1;
    }
    out.push((text.len(), Tok::Eof));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

const PRIMARY_START: &[&str] = &["identifier", "`true`", "`false`", "`(`", "`!`", "`X`", "`F`", "`G`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> TemporalError {
        let (offset, tok) = &self.toks[self.pos];
        TemporalError::Syntax {
            offset: *offset,
            found: tok.describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn implies(&mut self) -> Result<Formula, TemporalError> {
        let lhs = self.or()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, TemporalError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, TemporalError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, TemporalError> {
        let lhs = self.unary()?;
        if *self.peek() == Tok::Until {
            self.bump();
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, TemporalError> {
        let wrap: fn(Formula) -> Formula = match self.peek() {
            Tok::Not => Formula::not,
            Tok::Next => Formula::next,
            Tok::Eventually => Formula::eventually,
            Tok::Always => Formula::always,
            _ => return self.primary(),
        };
        self.bump();
        Ok(wrap(self.unary()?))
    }

    fn primary(&mut self) -> Result<Formula, TemporalError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(Formula::Atom(name))
            }
            Tok::True => {
                self.bump();
                Ok(Formula::True)
            }
            Tok::False => {
                self.bump();
                Ok(Formula::False)
            }
            Tok::LParen => {
                self.bump();
                let inner = self.implies()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["`)`", "`&`", "`|`", "`->`", "`U`"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error(PRIMARY_START)),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<Formula, TemporalError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let f = p.implies()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error(&["end of input", "`&`", "`|`", "`->`", "`U`"]));
    }
    Ok(f)
}

impl std::str::FromStr for Formula {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_spec(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: &str) -> Formula {
        Formula::atom(n)
    }

    #[test]
    fn always_implies_eventually() {
        assert_eq!(
            parse_spec("G (a -> F b)").unwrap(),
            Formula::always(Formula::implies(a("a"), Formula::eventually(a("b"))))
        );
    }

    #[test]
    fn until_right_associative() {
        assert_eq!(
            parse_spec("a U b U c").unwrap(),
            Formula::until(a("a"), Formula::until(a("b"), a("c")))
        );
        assert_eq!(
            parse_spec("a -> b -> c").unwrap(),
            Formula::implies(a("a"), Formula::implies(a("b"), a("c")))
        );
    }

    #[test]
    fn precedence() {
        // unary > U > & > | > ->
        assert_eq!(
            parse_spec("!a U b & c | d -> e").unwrap(),
            Formula::implies(
                Formula::or(
                    Formula::and(Formula::until(Formula::not(a("a")), a("b")), a("c")),
                    a("d")
                ),
                a("e")
            )
        );
        assert_eq!(parse_spec("X a & b").unwrap(), Formula::and(Formula::next(a("a")), a("b")));
        assert_eq!(
            parse_spec("a & b & c").unwrap(),
            Formula::and(Formula::and(a("a"), a("b")), a("c"))
        );
    }

    #[test]
    fn truncated_input_reports_offset() {
        match parse_spec("G (a &").unwrap_err() {
            TemporalError::Syntax { offset, found, expected } => {
                assert_eq!(offset, 6);
                assert_eq!(found, "end of input");
                assert!(expected.contains(&"identifier".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_operator() {
        assert!(matches!(
            parse_spec("a # b"),
            Err(TemporalError::UnknownOperator { offset: 2, found: '#' })
        ));
        assert!(matches!(
            parse_spec("a - b"),
            Err(TemporalError::UnknownOperator { offset: 2, found: '-' })
        ));
    }

    #[test]
    fn trailing_garbage_and_unbalanced() {
        assert!(matches!(parse_spec("a b"), Err(TemporalError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_spec("(a"), Err(TemporalError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_spec(""), Err(TemporalError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn identifiers_containing_operator_letters() {
        assert_eq!(parse_spec("Fx").unwrap(), a("Fx"));
        assert_eq!(parse_spec("F x").unwrap(), Formula::eventually(a("x")));
        assert_eq!(parse_spec("_G1").unwrap(), a("_G1"));
    }

    #[test]
    fn print_parse_roundtrip() {
        for text in ["G (a -> F b)", "a U b U c", "!X (a | true)", "((a U b) U c)", "G F !a"] {
            let f = parse_spec(text).unwrap();
            assert_eq!(parse_spec(&f.to_string()).unwrap(), f, "{text}");
        }
    }

    #[test]
    fn atoms_and_depth() {
        let f = parse_spec("G (vis -> F (cat & X dog))").unwrap();
        assert_eq!(f.atoms().into_iter().collect::<Vec<_>>(), vec!["cat", "dog", "vis"]);
        assert_eq!(f.depth(), 5);
    }
}
