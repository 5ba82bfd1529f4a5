//! Formula progression into a deterministic monitor over proposition valuations.
//!
//! A monitor state is a pair `(residual, accepting)`. The residual is the obligation that must
//! hold from the *next* position if the trace continues; `accepting` records whether the trace
//! read so far satisfies the formula if it ends now. Reading a letter from state
//! `(r, _)` moves to `(progress(r, letter), holds_at_last(r, letter))`.
//!
//! Residuals are kept in a canonical form so that equal obligations share a state: a
//! disjunction of conjunctions of temporal literals (atoms, `X`, `U`, `F`, `G` subterms or their
//! negations), with contradictory and absorbed clauses removed. Only finitely many literals occur
//! for a given formula, so exploration terminates.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use super::formula::Formula;
use super::TemporalError;

pub const DEFAULT_STATE_CAP: usize = 4096;
pub const MAX_ALPHABET: usize = 16;

/// Valuation of the alphabet: bit `i` is the truth of `alphabet[i]`.
pub type Valuation = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Term {
    False,
    True,
    Atom(usize),
    Not(Box<Term>),
    And(Vec<Term>),
    Or(Vec<Term>),
    Next(Box<Term>),
    Until(Box<Term>, Box<Term>),
    Eventually(Box<Term>),
    Always(Box<Term>),
}

impl Term {
    fn not(t: Term) -> Term {
        match t {
            Term::True => Term::False,
            Term::False => Term::True,
            Term::Not(inner) => *inner,
            other => Term::Not(Box::new(other)),
        }
    }

    fn junction(items: Vec<Term>, is_and: bool) -> Term {
        let (unit, zero) = if is_and {
            (Term::True, Term::False)
        } else {
            (Term::False, Term::True)
        };
        let mut flat = Vec::with_capacity(items.len());
        for t in items {
            match t {
                t if t == unit => {}
                t if t == zero => return zero,
                Term::And(inner) if is_and => flat.extend(inner),
                Term::Or(inner) if !is_and => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        // x and !x
        for t in &flat {
            if let Term::Not(inner) = t {
                if flat.binary_search(inner).is_ok() {
                    return zero;
                }
            }
        }
        match flat.len() {
            0 => unit,
            1 => flat.pop().unwrap(),
            _ if is_and => Term::And(flat),
            _ => Term::Or(flat),
        }
    }

    fn and(items: Vec<Term>) -> Term {
        Term::junction(items, true)
    }

    fn or(items: Vec<Term>) -> Term {
        Term::junction(items, false)
    }

    fn from_formula(f: &Formula, index: &HashMap<&str, usize>) -> Term {
        let conv = |g: &Formula| Term::from_formula(g, index);
        match f {
            Formula::True => Term::True,
            Formula::False => Term::False,
            Formula::Atom(a) => Term::Atom(index[a.as_str()]),
            Formula::Not(g) => Term::not(conv(g)),
            Formula::And(a, b) => Term::and(vec![conv(a), conv(b)]),
            Formula::Or(a, b) => Term::or(vec![conv(a), conv(b)]),
            Formula::Implies(a, b) => Term::or(vec![Term::not(conv(a)), conv(b)]),
            Formula::Next(g) => Term::Next(Box::new(conv(g))),
            Formula::Until(a, b) => Term::Until(Box::new(conv(a)), Box::new(conv(b))),
            Formula::Eventually(g) => Term::Eventually(Box::new(conv(g))),
            Formula::Always(g) => Term::Always(Box::new(conv(g))),
        }
    }

    /// Equivalent term in absorbed disjunctive normal form.
    fn canonical(&self) -> Term {
        let clauses = self.dnf(true);
        Term::or(
            clauses
                .into_iter()
                .map(|c| {
                    Term::and(
                        c.into_iter()
                            .map(|(lit, positive)| if positive { lit } else { Term::not(lit) })
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    fn dnf(&self, positive: bool) -> Dnf {
        match (self, positive) {
            (Term::True, true) | (Term::False, false) => [Clause::new()].into_iter().collect(),
            (Term::True, false) | (Term::False, true) => Dnf::new(),
            (Term::Not(t), _) => t.dnf(!positive),
            (Term::And(ts), true) | (Term::Or(ts), false) => ts.iter().fold(
                [Clause::new()].into_iter().collect(),
                |acc, t| conjoin(&acc, &t.dnf(positive)),
            ),
            (Term::And(ts), false) | (Term::Or(ts), true) => {
                absorb(ts.iter().flat_map(|t| t.dnf(positive)).collect())
            }
            (lit, _) => [[(lit.clone(), positive)].into_iter().collect()].into_iter().collect(),
        }
    }

    /// Obligation for the next position, given that one exists.
    fn progress(&self, v: Valuation) -> Term {
        match self {
            Term::True => Term::True,
            Term::False => Term::False,
            Term::Atom(i) => {
                if v >> i & 1 == 1 {
                    Term::True
                } else {
                    Term::False
                }
            }
            Term::Not(t) => Term::not(t.progress(v)),
            Term::And(ts) => Term::and(ts.iter().map(|t| t.progress(v)).collect()),
            Term::Or(ts) => Term::or(ts.iter().map(|t| t.progress(v)).collect()),
            Term::Next(t) => (**t).clone(),
            Term::Until(a, b) => Term::or(vec![
                b.progress(v),
                Term::and(vec![a.progress(v), self.clone()]),
            ]),
            Term::Eventually(t) => Term::or(vec![t.progress(v), self.clone()]),
            Term::Always(t) => Term::and(vec![t.progress(v), self.clone()]),
        }
    }

    /// Truth at a position that is the last one of the trace.
    fn holds_at_last(&self, v: Valuation) -> bool {
        match self {
            Term::True => true,
            Term::False => false,
            Term::Atom(i) => v >> i & 1 == 1,
            Term::Not(t) => !t.holds_at_last(v),
            Term::And(ts) => ts.iter().all(|t| t.holds_at_last(v)),
            Term::Or(ts) => ts.iter().any(|t| t.holds_at_last(v)),
            Term::Next(_) => false,
            Term::Until(_, b) => b.holds_at_last(v),
            Term::Eventually(t) | Term::Always(t) => t.holds_at_last(v),
        }
    }

    fn to_formula(&self, alphabet: &[String]) -> Formula {
        let conv = |t: &Term| t.to_formula(alphabet);
        let fold = |ts: &[Term], join: fn(Formula, Formula) -> Formula| {
            let mut it = ts.iter().map(conv);
            let first = it.next().expect("junction has at least two items");
            it.fold(first, join)
        };
        match self {
            Term::True => Formula::True,
            Term::False => Formula::False,
            Term::Atom(i) => Formula::Atom(alphabet[*i].clone()),
            Term::Not(t) => Formula::not(conv(t)),
            Term::And(ts) => fold(ts, Formula::and),
            Term::Or(ts) => fold(ts, Formula::or),
            Term::Next(t) => Formula::next(conv(t)),
            Term::Until(a, b) => Formula::until(conv(a), conv(b)),
            Term::Eventually(t) => Formula::eventually(conv(t)),
            Term::Always(t) => Formula::always(conv(t)),
        }
    }
}

type Clause = BTreeSet<(Term, bool)>;
type Dnf = BTreeSet<Clause>;

fn conjoin(a: &Dnf, b: &Dnf) -> Dnf {
    let mut out = Dnf::new();
    for x in a {
        for y in b {
            let c: Clause = x.union(y).cloned().collect();
            if !c.iter().any(|(lit, p)| c.contains(&(lit.clone(), !p))) {
                out.insert(c);
            }
        }
    }
    absorb(out)
}

/// Drops every clause that strictly contains another one.
fn absorb(d: Dnf) -> Dnf {
    d.iter()
        .filter(|c| !d.iter().any(|o| o.len() < c.len() && o.is_subset(c)))
        .cloned()
        .collect()
}

/// Deterministic monitor over `2^|alphabet|` letters.
#[derive(Debug, Clone)]
pub struct Monitor {
    alphabet: Vec<String>,
    residuals: Vec<Term>,
    accepting: Vec<bool>,
    dead: Vec<bool>,
    transitions: Vec<Vec<usize>>,
}

impl Monitor {
    pub const INITIAL: usize = 0;

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.residuals.len()
    }

    pub fn num_letters(&self) -> usize {
        1 << self.alphabet.len()
    }

    pub fn step(&self, state: usize, letter: Valuation) -> usize {
        self.transitions[state][letter as usize]
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting[state]
    }

    /// No accepting state is reachable from here.
    pub fn is_dead(&self, state: usize) -> bool {
        self.dead[state]
    }

    pub fn residual(&self, state: usize) -> Formula {
        self.residuals[state].to_formula(&self.alphabet)
    }

    pub fn run(&self, trace: &[Valuation]) -> usize {
        trace.iter().fold(Self::INITIAL, |q, &v| self.step(q, v))
    }

    /// Acceptance of a finite trace. The empty trace is never accepted.
    pub fn accepts(&self, trace: &[Valuation]) -> bool {
        self.is_accepting(self.run(trace))
    }

    /// First position after which the trace can no longer be accepted.
    pub fn earliest_violation(&self, trace: &[Valuation]) -> Option<usize> {
        let mut q = Self::INITIAL;
        for (i, &v) in trace.iter().enumerate() {
            q = self.step(q, v);
            if self.is_dead(q) {
                return Some(i);
            }
        }
        None
    }
}

/// Builds the monitor by exploring progression residuals breadth first.
pub fn spec_to_monitor(spec: &Formula, alphabet: &[String], state_cap: usize) -> Result<Monitor, TemporalError> {
    let mut alphabet: Vec<String> = alphabet.to_vec();
    alphabet.sort();
    alphabet.dedup();
    if alphabet.len() > MAX_ALPHABET {
        return Err(TemporalError::AlphabetTooLarge {
            size: alphabet.len(),
            max: MAX_ALPHABET,
        });
    }
    if let Some(missing) = spec.atoms().into_iter().find(|a| alphabet.binary_search(a).is_err()) {
        return Err(TemporalError::UnknownProposition { name: missing, frame: None });
    }
    let index: HashMap<&str, usize> = alphabet.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let letters = 1usize << alphabet.len();

    let mut ids: HashMap<(Term, bool), usize> = HashMap::new();
    let mut residuals = Vec::new();
    let mut accepting = Vec::new();
    let mut transitions: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();

    let initial = (Term::from_formula(spec, &index).canonical(), false);
    ids.insert(initial.clone(), 0);
    residuals.push(initial.0.clone());
    accepting.push(false);
    transitions.push(Vec::new());
    queue.push_back(0usize);

    while let Some(q) = queue.pop_front() {
        let mut row = Vec::with_capacity(letters);
        for v in 0..letters as Valuation {
            let key = (residuals[q].progress(v).canonical(), residuals[q].holds_at_last(v));
            let next = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let id = residuals.len();
                    if id >= state_cap {
                        return Err(TemporalError::StateCapExceeded {
                            cap: state_cap,
                            spec: spec.to_string(),
                        });
                    }
                    residuals.push(key.0.clone());
                    accepting.push(key.1);
                    transitions.push(Vec::new());
                    ids.insert(key, id);
                    queue.push_back(id);
                    id
                }
            };
            row.push(next);
        }
        transitions[q] = row;
    }

    // backward reachability from accepting states
    let n = residuals.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (q, row) in transitions.iter().enumerate() {
        for &r in row {
            preds[r].push(q);
        }
    }
    let mut live = accepting.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&q| live[q]).collect();
    while let Some(r) = stack.pop() {
        for &q in &preds[r] {
            if !live[q] {
                live[q] = true;
                stack.push(q);
            }
        }
    }

    Ok(Monitor {
        alphabet,
        residuals,
        accepting,
        dead: live.into_iter().map(|l| !l).collect(),
        transitions,
    })
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.num_states() {
            writeln!(
                f,
                "q{q}{}{} [{}]: {:?}",
                if self.accepting[q] { " accept" } else { "" },
                if self.dead[q] { " dead" } else { "" },
                self.residual(q),
                self.transitions[q]
            )?;
        }
        Ok(())
    }
}
