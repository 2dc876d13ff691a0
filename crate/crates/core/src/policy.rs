//! Endorsement policies: parsing, compilation to a flat evaluator over the
//! per-lane register file, and the register file itself.
//!
//! Grammar (whitespace-insensitive; see `docs/policy.md`):
//!
//! ```text
//! expr      := and ('|' and)*
//! and       := atom ('&' atom)*
//! atom      := '(' expr ')' | principal | outof
//! principal := ORG ['.' ROLE]              bare ORG means ORG.Peer
//! outof     := N '-outof-' M 'orgs'        N of Org1.Peer .. OrgM.Peer
//!            | N '-outof-(' expr (',' expr)* ')'
//! ```
//!
//! Policies are monotone: negation is rejected.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::identity::{EncodedId, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown organization {0:?}")]
    UnknownOrg(String),
    #[error("{n}-outof-{m}: threshold must be between 1 and the list length")]
    BadThreshold { n: usize, m: usize },
    #[error("policy references {0} principals; at most 64 are supported")]
    TooManyPrincipals(usize),
    #[error("chaincode {0} declared twice")]
    DuplicateChaincode(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Principal {
    pub org: String,
    pub role: Role,
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.org, self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyExpr {
    Principal(Principal),
    And(Vec<PolicyExpr>),
    Or(Vec<PolicyExpr>),
    NOutOf(usize, Vec<PolicyExpr>),
}

impl PolicyExpr {
    pub fn principal(org: &str, role: Role) -> Self {
        PolicyExpr::Principal(Principal {
            org: org.to_string(),
            role,
        })
    }

    /// Distinct principals in first-appearance order.
    pub fn principals(&self) -> Vec<Principal> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<Principal>) {
        match self {
            PolicyExpr::Principal(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) | PolicyExpr::NOutOf(_, xs) => {
                xs.iter().for_each(|x| x.collect(out))
            }
        }
    }

    /// Direct recursive evaluation; the reference semantics.
    pub fn eval(&self, holds: &dyn Fn(&Principal) -> bool) -> bool {
        match self {
            PolicyExpr::Principal(p) => holds(p),
            PolicyExpr::And(xs) => xs.iter().all(|x| x.eval(holds)),
            PolicyExpr::Or(xs) => xs.iter().any(|x| x.eval(holds)),
            PolicyExpr::NOutOf(n, xs) => xs.iter().filter(|x| x.eval(holds)).count() >= *n,
        }
    }
}

impl fmt::Display for PolicyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, x: &PolicyExpr) -> fmt::Result {
            match x {
                PolicyExpr::And(_) | PolicyExpr::Or(_) => write!(f, "({x})"),
                _ => write!(f, "{x}"),
            }
        }
        match self {
            PolicyExpr::Principal(p) => write!(f, "{p}"),
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) => {
                let op = if matches!(self, PolicyExpr::And(_)) { " & " } else { " | " };
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    child(f, x)?;
                }
                Ok(())
            }
            PolicyExpr::NOutOf(n, xs) => {
                write!(f, "{n}-outof-(")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PolicyError> {
        Err(PolicyError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, word: &str) -> bool {
        self.skip_ws();
        let end = self.pos + word.len();
        if self.src.len() >= end && self.src[self.pos..end].eq_ignore_ascii_case(word.as_bytes()) {
            self.pos = end;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let start = self.pos;
        if !self.src.get(start).is_some_and(u8::is_ascii_alphabetic) {
            return None;
        }
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).ok()
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).ok()?.parse().ok()
    }

    fn expr(&mut self) -> Result<PolicyExpr, PolicyError> {
        let mut arms = vec![self.and()?];
        while self.eat(b'|') {
            arms.push(self.and()?);
        }
        Ok(if arms.len() == 1 { arms.pop().unwrap() } else { PolicyExpr::Or(arms) })
    }

    fn and(&mut self) -> Result<PolicyExpr, PolicyError> {
        let mut terms = vec![self.atom()?];
        while self.eat(b'&') {
            terms.push(self.atom()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { PolicyExpr::And(terms) })
    }

    fn atom(&mut self) -> Result<PolicyExpr, PolicyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(b'!') | Some(b'~') => self.err("negation is not allowed in endorsement policies"),
            Some(c) if c.is_ascii_digit() => self.outof(),
            Some(c) if c.is_ascii_alphabetic() => self.principal(),
            Some(_) => self.err("expected a principal, '(' or N-outof-"),
            None => self.err("unexpected end of policy"),
        }
    }

    fn principal(&mut self) -> Result<PolicyExpr, PolicyError> {
        let at = self.pos;
        let org = self.ident().expect("caller checked for a letter");
        if org.eq_ignore_ascii_case("not") {
            self.pos = at;
            return self.err("negation is not allowed in endorsement policies");
        }
        let role = if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            let role_at = self.pos;
            match self.ident().map(str::parse::<Role>) {
                Some(Ok(r)) => r,
                _ => {
                    self.pos = role_at;
                    return self.err("expected a role: orderer, admin, peer or client");
                }
            }
        } else {
            Role::Peer
        };
        Ok(PolicyExpr::principal(org, role))
    }

    fn outof(&mut self) -> Result<PolicyExpr, PolicyError> {
        let n = match self.number() {
            Some(n) => n,
            None => return self.err("threshold out of range"),
        };
        if !self.eat_word("-outof-") {
            return self.err("expected '-outof-'");
        }
        let items = if self.eat(b'(') {
            let mut items = vec![self.expr()?];
            while self.eat(b',') {
                items.push(self.expr()?);
            }
            if !self.eat(b')') {
                return self.err("expected ')' or ','");
            }
            items
        } else {
            let m = match self.number() {
                Some(m) => m,
                None => return self.err("expected an org count or '('"),
            };
            if !self.eat_word("orgs") {
                return self.err("expected 'orgs'");
            }
            (1..=m).map(|i| PolicyExpr::principal(&format!("Org{i}"), Role::Peer)).collect()
        };
        if n == 0 || n > items.len() {
            return Err(PolicyError::BadThreshold { n, m: items.len() });
        }
        Ok(PolicyExpr::NOutOf(n, items))
    }
}

pub fn parse_policy(text: &str) -> Result<PolicyExpr, PolicyError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// Per-lane endorsement state: one 4-bit register per organization, one bit
/// per role.
#[derive(Debug, Clone)]
pub struct RegisterFile {
    regs: Vec<u8>,
    unknown: u64,
}

/// What [`RegisterFile::record_result`] did with a verification result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Set,
    /// Invalid results never touch the registers.
    Ignored,
    /// The id does not name a configured principal.
    UnknownPrincipal,
}

impl RegisterFile {
    pub fn new(num_orgs: usize) -> Self {
        RegisterFile {
            regs: vec![0; num_orgs.min(256)],
            unknown: 0,
        }
    }

    pub fn clear(&mut self) {
        self.regs.fill(0);
    }

    pub fn get(&self, org: u8, role: Role) -> bool {
        self.regs.get(org as usize).is_some_and(|r| r & (1 << role.code()) != 0)
    }

    pub fn register(&self, org: u8) -> u8 {
        self.regs.get(org as usize).copied().unwrap_or(0)
    }

    pub fn is_clear(&self) -> bool {
        self.regs.iter().all(|&r| r == 0)
    }

    /// Endorsements whose id named no configured principal, over the
    /// register file's lifetime.
    pub fn unknown_principals(&self) -> u64 {
        self.unknown
    }

    pub fn record_result(&mut self, endorser: EncodedId, valid: bool) -> Recorded {
        let known = endorser
            .decode()
            .ok()
            .filter(|(org, _, _)| (*org as usize) < self.regs.len());
        match known {
            None => {
                self.unknown += 1;
                Recorded::UnknownPrincipal
            }
            Some(_) if !valid => Recorded::Ignored,
            Some((org, role, _)) => {
                self.regs[org as usize] |= 1 << role.code();
                Recorded::Set
            }
        }
    }
}

/// Combinational form of a policy.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Gate {
    Input(u8),
    And(Vec<Gate>),
    Or(Vec<Gate>),
    Threshold(usize, Vec<Gate>),
}

impl Gate {
    fn eval(&self, bits: u64) -> bool {
        match self {
            Gate::Input(i) => bits >> i & 1 == 1,
            Gate::And(xs) => xs.iter().all(|x| x.eval(bits)),
            Gate::Or(xs) => xs.iter().any(|x| x.eval(bits)),
            Gate::Threshold(n, xs) => xs.iter().filter(|x| x.eval(bits)).count() >= *n,
        }
    }

    /// Sum of products over input bits, if it stays within `limit` terms.
    fn products(&self, limit: usize) -> Option<Vec<u64>> {
        let terms = match self {
            Gate::Input(i) => vec![1u64 << i],
            Gate::Or(xs) => {
                let mut out = Vec::new();
                for x in xs {
                    out.extend(x.products(limit)?);
                    if out.len() > limit {
                        return None;
                    }
                }
                out
            }
            Gate::And(xs) => {
                let mut out = vec![0u64];
                for x in xs {
                    let rhs = x.products(limit)?;
                    if out.len() * rhs.len() > limit {
                        return None;
                    }
                    out = out.iter().flat_map(|a| rhs.iter().map(move |b| a | b)).collect();
                }
                out
            }
            Gate::Threshold(..) => return None,
        };
        Some(minimize(terms))
    }
}

/// Drops duplicate and absorbed products (a term implied by a smaller one).
fn minimize(mut terms: Vec<u64>) -> Vec<u64> {
    terms.sort_by_key(|t| (t.count_ones(), *t));
    terms.dedup();
    let mut out: Vec<u64> = Vec::with_capacity(terms.len());
    for t in terms {
        if !out.iter().any(|&s| s & t == s) {
            out.push(t);
        }
    }
    out
}

fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < n - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, m, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, m, n, &mut Vec::new(), &mut out);
    out
}

fn binomial(m: usize, n: usize) -> usize {
    (0..n).fold(1usize, |acc, i| acc.saturating_mul(m - i) / (i + 1))
}

/// N-out-of expansions larger than this stay threshold gates.
const MAX_EXPANSION: usize = 256;
/// Sum-of-products forms larger than this fall back to the gate tree.
const MAX_PRODUCTS: usize = 4096;

/// A policy compiled against the network's organization directory.
#[derive(Debug, Clone)]
pub struct CompiledPolicy {
    pub cc_id: u16,
    /// Register-file inputs, indexed by local bit position.
    inputs: Vec<(u8, Role)>,
    names: Vec<Principal>,
    circuit: Gate,
    products: Option<Vec<u64>>,
}

impl CompiledPolicy {
    pub fn compile(cc_id: u16, expr: &PolicyExpr, orgs: &[String]) -> Result<Self, PolicyError> {
        let names = expr.principals();
        if names.len() > 64 {
            return Err(PolicyError::TooManyPrincipals(names.len()));
        }
        let mut inputs = Vec::with_capacity(names.len());
        for p in &names {
            let org = orgs
                .iter()
                .position(|o| *o == p.org)
                .filter(|&i| i < 256)
                .ok_or_else(|| PolicyError::UnknownOrg(p.org.clone()))?;
            inputs.push((org as u8, p.role));
        }
        let circuit = Self::lower(expr, &names);
        let products = circuit.products(MAX_PRODUCTS);
        Ok(CompiledPolicy {
            cc_id,
            inputs,
            names,
            circuit,
            products,
        })
    }

    fn lower(expr: &PolicyExpr, names: &[Principal]) -> Gate {
        match expr {
            PolicyExpr::Principal(p) => Gate::Input(names.iter().position(|n| n == p).unwrap() as u8),
            PolicyExpr::And(xs) => Gate::And(xs.iter().map(|x| Self::lower(x, names)).collect()),
            PolicyExpr::Or(xs) => Gate::Or(xs.iter().map(|x| Self::lower(x, names)).collect()),
            PolicyExpr::NOutOf(n, xs) => {
                let gates: Vec<Gate> = xs.iter().map(|x| Self::lower(x, names)).collect();
                if *n == 1 {
                    Gate::Or(gates)
                } else if *n == gates.len() {
                    Gate::And(gates)
                } else if binomial(gates.len(), *n) <= MAX_EXPANSION {
                    Gate::Or(
                        combinations(*n, gates.len())
                            .into_iter()
                            .map(|c| Gate::And(c.into_iter().map(|i| gates[i].clone()).collect()))
                            .collect(),
                    )
                } else {
                    Gate::Threshold(*n, gates)
                }
            }
        }
    }

    /// Principals read by the policy, in input-bit order.
    pub fn principals(&self) -> &[Principal] {
        &self.names
    }

    /// Packs the principal bits this policy reads.
    pub fn read_inputs(&self, regs: &RegisterFile) -> u64 {
        self.inputs
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &(org, role))| acc | (regs.get(org, role) as u64) << i)
    }

    pub fn evaluate_bits(&self, bits: u64) -> bool {
        match &self.products {
            Some(terms) => terms.iter().any(|&t| t & bits == t),
            None => self.circuit.eval(bits),
        }
    }

    pub fn evaluate(&self, regs: &RegisterFile) -> bool {
        self.evaluate_bits(self.read_inputs(regs))
    }
}

impl fmt::Display for CompiledPolicy {
    /// Sum-of-products form when available, e.g.
    /// `(Org1.Peer & Org2.Peer) | (Org1.Peer & Org3.Peer)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(terms) = &self.products else {
            return write!(f, "{:?}", self.circuit);
        };
        for (i, t) in terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            let names: Vec<String> = (0..self.names.len())
                .filter(|b| t >> b & 1 == 1)
                .map(|b| self.names[b].to_string())
                .collect();
            if names.len() > 1 && terms.len() > 1 {
                write!(f, "({})", names.join(" & "))?;
            } else {
                f.write_str(&names.join(" & "))?;
            }
        }
        Ok(())
    }
}

/// The fixed per-chaincode policy table.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    entries: HashMap<u16, (PolicyExpr, CompiledPolicy)>,
}

impl PolicySet {
    pub fn compile<'a>(
        chaincodes: impl IntoIterator<Item = (u16, &'a str)>,
        orgs: &[String],
    ) -> Result<Self, PolicyError> {
        let mut entries = HashMap::new();
        for (cc_id, text) in chaincodes {
            let expr = parse_policy(text)?;
            let compiled = CompiledPolicy::compile(cc_id, &expr, orgs)?;
            if entries.insert(cc_id, (expr, compiled)).is_some() {
                return Err(PolicyError::DuplicateChaincode(cc_id));
            }
        }
        Ok(PolicySet { entries })
    }

    pub fn get(&self, cc_id: u16) -> Option<&CompiledPolicy> {
        self.entries.get(&cc_id).map(|(_, c)| c)
    }

    pub fn expr(&self, cc_id: u16) -> Option<&PolicyExpr> {
        self.entries.get(&cc_id).map(|(e, _)| e)
    }

    pub fn cc_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.entries.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}
