//! Presentations, derivation sequences, filling expressions and schemes,
//! with replay/validation and the converters between them.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{self, AreaVerdict, SearchBudget};
use crate::words::{ChargeMap, HeightVector, Letter, Symbol, Word, WordError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("move {index}: {reason}")]
    MalformedMove { index: usize, reason: String },
    #[error("boundary mismatch; reduced discrepancy is `{discrepancy}`")]
    BoundaryMismatch { discrepancy: Word },
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("words are not freely equal: `{0}` vs `{1}`")]
    NotFreelyEqual(Word, Word),
    #[error("sequence is not null; it ends at `{0}`")]
    NotNull(Word),
    #[error("no relator has `{0}` as a cyclic conjugate")]
    NoRelatorMatch(Word),
    #[error("relator {0} uses a generator outside the alphabet")]
    RelatorOutsideAlphabet(usize),
    #[error(transparent)]
    Word(#[from] WordError),
    #[error("json: {0}")]
    Json(String),
}

type Result<T> = std::result::Result<T, RewriteError>;

/// Location of a cyclic conjugate of a relator or its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelatorRef {
    pub rel: usize,
    pub sign: i8,
    pub rot: usize,
}

/// Finite presentation `⟨X | R⟩`.
#[derive(Clone, Debug)]
pub struct Presentation {
    generators: Vec<Symbol>,
    relators: Vec<Word>,
    max_len: usize,
    index: OnceLock<HashMap<Word, RelatorRef>>,
}

#[derive(Serialize, Deserialize)]
struct PresentationFile {
    generators: Vec<String>,
    relators: Vec<String>,
}

impl Presentation {
    pub fn new(generators: Vec<Symbol>, relators: Vec<Word>) -> Result<Presentation> {
        let alphabet: HashSet<Symbol> = generators.iter().copied().collect();
        for (i, r) in relators.iter().enumerate() {
            if r.symbols().any(|s| !alphabet.contains(&s)) {
                return Err(RewriteError::RelatorOutsideAlphabet(i));
            }
        }
        let max_len = relators.iter().map(|r| r.len()).max().unwrap_or(0);
        Ok(Presentation { generators, relators, max_len, index: OnceLock::new() })
    }

    /// Builds from literal strings; panics on malformed input.
    pub fn from_strs(generators: &[&str], relators: &[&str]) -> Presentation {
        let gens = generators.iter().map(|g| Symbol::new(g).expect("generator name")).collect();
        let rels = relators.iter().map(|r| Word::parse(r).expect("relator")).collect();
        Presentation::new(gens, rels).expect("valid presentation")
    }

    pub fn from_json(s: &str) -> Result<Presentation> {
        let f: PresentationFile = serde_json::from_str(s).map_err(|e| RewriteError::Json(e.to_string()))?;
        let gens = f.generators.iter().map(|g| Symbol::new(g)).collect::<std::result::Result<Vec<_>, _>>()?;
        let rels = f.relators.iter().map(|r| Word::parse(r)).collect::<std::result::Result<Vec<_>, _>>()?;
        Presentation::new(gens, rels)
    }

    pub fn to_json(&self) -> String {
        let f = PresentationFile {
            generators: self.generators.iter().map(|g| g.name().to_string()).collect(),
            relators: self.relators.iter().map(|r| r.to_string()).collect(),
        };
        serde_json::to_string_pretty(&f).expect("serializable")
    }

    pub fn generators(&self) -> &[Symbol] {
        &self.generators
    }

    pub fn relators(&self) -> &[Word] {
        &self.relators
    }

    pub fn relator(&self, i: usize) -> &Word {
        &self.relators[i]
    }

    /// `L`, the maximal relator length.
    pub fn max_relator_len(&self) -> usize {
        self.max_len
    }

    pub fn contains_word(&self, w: &Word) -> bool {
        w.symbols().all(|s| self.generators.contains(&s))
    }

    /// `rel^sign`.
    pub fn signed_relator(&self, rel: usize, sign: i8) -> Word {
        if sign < 0 {
            self.relators[rel].inverse()
        } else {
            self.relators[rel].clone()
        }
    }

    /// Map from every cyclic conjugate of every `r^{±1}` to its location.
    pub fn conjugate_index(&self) -> &HashMap<Word, RelatorRef> {
        self.index.get_or_init(|| {
            let mut m = HashMap::new();
            for (rel, r) in self.relators.iter().enumerate() {
                if r.is_empty() {
                    continue;
                }
                for sign in [1i8, -1] {
                    let rho = self.signed_relator(rel, sign);
                    for rot in 0..rho.len() {
                        m.entry(rho.rotate(rot)).or_insert(RelatorRef { rel, sign, rot });
                    }
                }
            }
            m
        })
    }

    /// Finds `(rel, sign, rot)` whose rotation equals `c` literally.
    pub fn locate(&self, c: &Word) -> Option<RelatorRef> {
        self.conjugate_index().get(c).copied()
    }

    /// The pair `(r, s)` replaced by an `ApplyRelator` move.
    pub fn relator_parts(&self, rel: usize, sign: i8, rot: usize, split: usize) -> std::result::Result<(Word, Word), String> {
        if rel >= self.relators.len() {
            return Err(format!("relator index {rel} out of range"));
        }
        if sign != 1 && sign != -1 {
            return Err(format!("sign {sign} is not ±1"));
        }
        let rho = self.signed_relator(rel, sign);
        if rot >= rho.len().max(1) {
            return Err(format!("rotation {rot} out of range"));
        }
        if split > rho.len() {
            return Err(format!("split {split} out of range"));
        }
        let c = rho.rotate(rot);
        Ok((c.prefix(split), c.suffix_from(split).inverse()))
    }
}

/// One rewriting step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Move {
    Expand { pos: usize, letter: Letter },
    Contract { pos: usize },
    Relator { pos: usize, rel: usize, sign: i8, rot: usize, split: usize },
}

impl Move {
    pub fn is_relator(&self) -> bool {
        matches!(self, Move::Relator { .. })
    }

    pub fn shifted(&self, offset: usize) -> Move {
        match *self {
            Move::Expand { pos, letter } => Move::Expand { pos: pos + offset, letter },
            Move::Contract { pos } => Move::Contract { pos: pos + offset },
            Move::Relator { pos, rel, sign, rot, split } => Move::Relator { pos: pos + offset, rel, sign, rot, split },
        }
    }
}

/// Applies one move, returning the new word or a reason for rejection.
pub fn apply_move(p: &Presentation, word: &[Letter], m: &Move) -> std::result::Result<Vec<Letter>, String> {
    match *m {
        Move::Expand { pos, letter } => {
            if pos > word.len() {
                return Err(format!("expand position {pos} beyond length {}", word.len()));
            }
            let mut v = Vec::with_capacity(word.len() + 2);
            v.extend_from_slice(&word[..pos]);
            v.push(letter);
            v.push(letter.inverse());
            v.extend_from_slice(&word[pos..]);
            Ok(v)
        }
        Move::Contract { pos } => {
            if pos + 1 >= word.len() {
                return Err(format!("contract position {pos} beyond length {}", word.len()));
            }
            if word[pos] != word[pos + 1].inverse() {
                return Err(format!("letters at {pos} do not cancel"));
            }
            let mut v = Vec::with_capacity(word.len() - 2);
            v.extend_from_slice(&word[..pos]);
            v.extend_from_slice(&word[pos + 2..]);
            Ok(v)
        }
        Move::Relator { pos, rel, sign, rot, split } => {
            let (r, s) = p.relator_parts(rel, sign, rot, split)?;
            if pos + r.len() > word.len() || &word[pos..pos + r.len()] != r.letters() {
                return Err(format!("subword at {pos} does not match `{r}`"));
            }
            let mut v = Vec::with_capacity(word.len() + s.len());
            v.extend_from_slice(&word[..pos]);
            v.extend_from_slice(s.letters());
            v.extend_from_slice(&word[pos + r.len()..]);
            Ok(v)
        }
    }
}

/// A P-sequence: start word plus moves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub start: Word,
    pub moves: Vec<Move>,
}

impl Sequence {
    pub fn new(start: Word) -> Sequence {
        Sequence { start, moves: Vec::new() }
    }

    pub fn area(&self) -> u64 {
        self.moves.iter().filter(|m| m.is_relator()).count() as u64
    }

    pub fn from_json(s: &str) -> Result<Sequence> {
        serde_json::from_str(s).map_err(|e| RewriteError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    /// All words `σ_0, …, σ_m`.
    pub fn words(&self, p: &Presentation) -> Result<Vec<Word>> {
        let mut out = Vec::with_capacity(self.moves.len() + 1);
        let mut cur = self.start.letters().to_vec();
        out.push(self.start.clone());
        for (index, m) in self.moves.iter().enumerate() {
            cur = apply_move(p, &cur, m).map_err(|reason| RewriteError::MalformedMove { index, reason })?;
            out.push(Word::from_letters(cur.clone()));
        }
        Ok(out)
    }

    pub fn end(&self, p: &Presentation) -> Result<Word> {
        let mut cur = self.start.letters().to_vec();
        for (index, m) in self.moves.iter().enumerate() {
            cur = apply_move(p, &cur, m).map_err(|reason| RewriteError::MalformedMove { index, reason })?;
        }
        Ok(Word::from_letters(cur))
    }

    /// Concatenation; `other` must start where `self` ends.
    pub fn then(mut self, other: &Sequence) -> Sequence {
        self.moves.extend(other.moves.iter().cloned());
        self
    }
}

/// One term `x ρ^ε x⁻¹` of an expression.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub conj: Word,
    pub rel: usize,
    pub sign: i8,
}

/// A P-expression: product of conjugates of relators.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expression {
    pub terms: Vec<Term>,
}

impl Expression {
    pub fn area(&self) -> u64 {
        self.terms.len() as u64
    }

    pub fn radius(&self) -> usize {
        self.terms.iter().map(|t| t.conj.len()).max().unwrap_or(0)
    }

    /// `∂E = Π x_i r_i^{ε_i} x_i⁻¹`.
    pub fn boundary(&self, p: &Presentation) -> Word {
        let mut v = Vec::new();
        for t in &self.terms {
            v.extend_from_slice(t.conj.letters());
            v.extend_from_slice(p.signed_relator(t.rel, t.sign).letters());
            v.extend(t.conj.inverse().into_letters());
        }
        Word::from_letters(v)
    }

    /// Heights of the expression: maximum over conjugators.
    pub fn heights(&self, theta: &ChargeMap) -> Result<HeightVector> {
        let mut h = HeightVector::zeros(theta.rank());
        for t in &self.terms {
            h = h.join(&theta.heights(&t.conj)?);
        }
        Ok(h)
    }

    pub fn concat(&self, other: &Expression) -> Expression {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Expression { terms }
    }

    /// Left-multiplies every conjugator by `u`.
    pub fn conjugated(&self, u: &Word) -> Expression {
        Expression {
            terms: self
                .terms
                .iter()
                .map(|t| Term { conj: u.concat(&t.conj), rel: t.rel, sign: t.sign })
                .collect(),
        }
    }

    /// Freely reduces every conjugator.
    pub fn reduced(&self) -> Expression {
        Expression {
            terms: self
                .terms
                .iter()
                .map(|t| Term { conj: t.conj.free_reduce(), rel: t.rel, sign: t.sign })
                .collect(),
        }
    }
}

/// One row of a scheme: a word and the claimed cost of reaching the next.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub word: Word,
    pub area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heights: Option<HeightVector>,
}

/// A P-scheme. The last row is followed by `target` (empty for null schemes).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub rows: Vec<SchemeRow>,
    #[serde(default)]
    pub target: Word,
}

impl Scheme {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.area).sum()
    }

    pub fn from_json(s: &str) -> Result<Scheme> {
        serde_json::from_str(s).map_err(|e| RewriteError::Json(e.to_string()))
    }

    /// The words `σ_1, …, σ_N, target`.
    pub fn endpoints(&self, i: usize) -> (&Word, &Word) {
        let next = self.rows.get(i + 1).map(|r| &r.word).unwrap_or(&self.target);
        (&self.rows[i].word, next)
    }
}

/// Area, radius and height accounting for a witness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub area: u64,
    pub radius: Option<usize>,
    pub heights: Option<HeightVector>,
    pub start: Word,
    pub end: Word,
}

fn relators_charge_free(p: &Presentation, theta: &ChargeMap) -> Result<bool> {
    for r in p.relators() {
        if theta.charge(r)?.iter().any(|&c| c != 0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Replays a sequence, reporting area, final word and (when defined) heights.
pub fn replay_sequence(p: &Presentation, seq: &Sequence, theta: Option<&ChargeMap>) -> Result<Accounting> {
    let heights_defined = match theta {
        Some(t) => relators_charge_free(p, t)?,
        None => false,
    };
    let mut cur = seq.start.letters().to_vec();
    let mut h = match (theta, heights_defined) {
        (Some(t), true) => Some(t.heights(&seq.start)?),
        _ => None,
    };
    let mut area = 0;
    for (index, m) in seq.moves.iter().enumerate() {
        cur = apply_move(p, &cur, m).map_err(|reason| RewriteError::MalformedMove { index, reason })?;
        if m.is_relator() {
            area += 1;
        }
        if let (Some(t), Some(acc)) = (theta, h.as_mut()) {
            *acc = acc.join(&t.heights(&Word::from_letters(cur.clone()))?);
        }
    }
    Ok(Accounting { area, radius: None, heights: h, start: seq.start.clone(), end: Word::from_letters(cur) })
}

/// Checks that `∂E` freely equals `w`.
pub fn validate_expression(p: &Presentation, e: &Expression, w: &Word, theta: Option<&ChargeMap>) -> Result<Accounting> {
    for t in &e.terms {
        if t.rel >= p.relators().len() || (t.sign != 1 && t.sign != -1) {
            return Err(RewriteError::InvalidSequence(format!("bad term relator {} sign {}", t.rel, t.sign)));
        }
    }
    let disc = e.boundary(p).concat(&w.inverse()).free_reduce();
    if !disc.is_empty() {
        return Err(RewriteError::BoundaryMismatch { discrepancy: disc });
    }
    let heights = match theta {
        Some(t) => Some(e.heights(t)?),
        None => None,
    };
    Ok(Accounting { area: e.area(), radius: Some(e.radius()), heights, start: w.clone(), end: Word::empty() })
}

/// Converts a sequence from `τ` to `τ′` into an expression for `τ τ′⁻¹`
/// with the same area; each conjugator is a prefix of an adjacent word.
pub fn sequence_to_expression(p: &Presentation, seq: &Sequence) -> Result<Expression> {
    let mut terms = Vec::new();
    let mut cur = seq.start.letters().to_vec();
    for (index, m) in seq.moves.iter().enumerate() {
        if let Move::Relator { pos, rel, sign, rot, split } = *m {
            let rho = p.signed_relator(rel, sign);
            let alpha = Word::from_letters(cur[..pos.min(cur.len())].to_vec());
            let c1 = rho.suffix_from(rot.min(rho.len()));
            let conj = if rot == 0 {
                alpha
            } else if c1.len() <= split {
                alpha.concat(&c1)
            } else {
                alpha.concat(&rho.prefix(rot).inverse())
            };
            terms.push(Term { conj, rel, sign });
        }
        cur = apply_move(p, &cur, m).map_err(|reason| RewriteError::MalformedMove { index, reason })?;
    }
    Ok(Expression { terms })
}

/// Stack reduction of `w` as a list of contractions, each with the removed
/// letter (for reversal).
fn reduction_moves(w: &Word) -> Vec<(usize, Letter)> {
    let mut stack: Vec<Letter> = Vec::new();
    let mut moves = Vec::new();
    for &l in w.letters() {
        if stack.last() == Some(&l.inverse()) {
            let top = stack.pop().unwrap();
            moves.push((stack.len(), top));
        } else {
            stack.push(l);
        }
    }
    moves
}

/// Area-0 sequence from `w1` to `w2`: reduce `w1`, then un-reduce to `w2`.
pub fn free_equality_sequence(w1: &Word, w2: &Word) -> Result<Sequence> {
    if w1.free_reduce() != w2.free_reduce() {
        return Err(RewriteError::NotFreelyEqual(w1.clone(), w2.clone()));
    }
    let mut moves: Vec<Move> = reduction_moves(w1).into_iter().map(|(pos, _)| Move::Contract { pos }).collect();
    moves.extend(reduction_moves(w2).into_iter().rev().map(|(pos, letter)| Move::Expand { pos, letter }));
    Ok(Sequence { start: w1.clone(), moves })
}

/// Sequence from `w` to the empty word realizing the expression `E`.
pub fn expression_to_sequence(p: &Presentation, e: &Expression, w: &Word) -> Result<Sequence> {
    let boundary = e.boundary(p);
    let mut seq = free_equality_sequence(w, &boundary)?;
    for t in &e.terms {
        let rho_len = p.relator(t.rel).len();
        let k = t.conj.len();
        seq.moves.push(Move::Relator { pos: k, rel: t.rel, sign: t.sign, rot: 0, split: rho_len });
        for j in (0..k).rev() {
            seq.moves.push(Move::Contract { pos: j });
        }
    }
    Ok(seq)
}

/// Maps each word `σ_i` of the sequence to `σ_i⁻¹`.
pub fn mirror_sequence(p: &Presentation, seq: &Sequence) -> Result<Sequence> {
    let words = seq.words(p)?;
    let mut moves = Vec::with_capacity(seq.moves.len());
    for (i, m) in seq.moves.iter().enumerate() {
        let n = words[i].len();
        moves.push(match *m {
            Move::Contract { pos } => Move::Contract { pos: n - 2 - pos },
            Move::Expand { pos, letter } => Move::Expand { pos: n - pos, letter },
            Move::Relator { pos, rel, sign, rot, split } => {
                let (r, s) = p.relator_parts(rel, sign, rot, split).expect("validated by replay");
                let c = r.inverse().concat(&s);
                let loc = p.locate(&c).ok_or_else(|| RewriteError::NoRelatorMatch(c.clone()))?;
                Move::Relator { pos: n - pos - r.len(), rel: loc.rel, sign: loc.sign, rot: loc.rot, split: r.len() }
            }
        });
    }
    Ok(Sequence { start: seq.start.inverse(), moves })
}

/// Null sequence for `w⁻¹` from a null sequence for `w`.
pub fn invert_sequence(p: &Presentation, seq: &Sequence) -> Result<Sequence> {
    let end = seq.end(p)?;
    if !end.is_empty() {
        return Err(RewriteError::NotNull(end));
    }
    mirror_sequence(p, seq)
}

/// The same chain of words traversed backwards.
pub fn reverse_sequence(p: &Presentation, seq: &Sequence) -> Result<Sequence> {
    let words = seq.words(p)?;
    let mut moves = Vec::with_capacity(seq.moves.len());
    for (i, m) in seq.moves.iter().enumerate().rev() {
        moves.push(match *m {
            Move::Contract { pos } => Move::Expand { pos, letter: words[i][pos] },
            Move::Expand { pos, .. } => Move::Contract { pos },
            Move::Relator { pos, rel, sign, rot, split } => {
                let (r, s) = p.relator_parts(rel, sign, rot, split).expect("validated by replay");
                let c = s.concat(&r.inverse());
                let loc = p.locate(&c).ok_or_else(|| RewriteError::NoRelatorMatch(c.clone()))?;
                Move::Relator { pos, rel: loc.rel, sign: loc.sign, rot: loc.rot, split: s.len() }
            }
        });
    }
    Ok(Sequence { start: words.last().cloned().unwrap_or_default(), moves })
}

/// Outcome of checking one scheme row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RowStatus {
    Pass { measured: u64 },
    NotNullHomotopic,
    AreaExceedsClaim { measured: u64 },
    BudgetExhausted { lower_bound: u64 },
    BadWitness { reason: String },
}

impl std::fmt::Display for RowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowStatus::Pass { measured } => write!(f, "pass (measured {measured})"),
            RowStatus::NotNullHomotopic => write!(f, "not null-homotopic"),
            RowStatus::AreaExceedsClaim { measured } => write!(f, "area {measured} exceeds claim"),
            RowStatus::BudgetExhausted { lower_bound } => write!(f, "budget exhausted (area >= {lower_bound})"),
            RowStatus::BadWitness { reason } => write!(f, "bad witness: {reason}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowVerdict {
    pub index: usize,
    pub claimed: u64,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub rows: Vec<RowVerdict>,
    pub total_claimed: u64,
    pub pass: bool,
}

impl SchemeReport {
    pub fn first_failure(&self) -> Option<&RowVerdict> {
        self.rows.iter().find(|r| !matches!(r.status, RowStatus::Pass { .. }))
    }
}

/// How scheme rows are checked.
pub enum SchemeStrategy {
    /// One sequence per row, converting that row's word to the next.
    BySequence(Vec<Sequence>),
    /// Exact area search on the transition word `σ_i σ_{i+1}⁻¹`.
    ByOracle(SearchBudget),
}

pub fn verify_scheme(p: &Presentation, scheme: &Scheme, strategy: &SchemeStrategy) -> SchemeReport {
    let check = |i: usize| -> RowVerdict {
        let claimed = scheme.rows[i].area;
        let (from, to) = scheme.endpoints(i);
        let status = match strategy {
            SchemeStrategy::BySequence(seqs) => match seqs.get(i) {
                None => RowStatus::BadWitness { reason: "no sequence supplied".into() },
                Some(s) if &s.start != from => RowStatus::BadWitness { reason: "sequence does not start at row word".into() },
                Some(s) => match s.end(p) {
                    Err(e) => RowStatus::BadWitness { reason: e.to_string() },
                    Ok(end) if end.free_reduce() != to.free_reduce() => {
                        RowStatus::BadWitness { reason: format!("sequence ends at `{end}`") }
                    }
                    Ok(_) => {
                        let measured = s.area();
                        if measured <= claimed {
                            RowStatus::Pass { measured }
                        } else {
                            RowStatus::AreaExceedsClaim { measured }
                        }
                    }
                },
            },
            SchemeStrategy::ByOracle(budget) => {
                let t = from.concat(&to.inverse());
                let budget = budget.clone().with_max_area(claimed + 1);
                match oracle::area_exact(p, &t, &budget) {
                    AreaVerdict::Area { area, .. } if area <= claimed => RowStatus::Pass { measured: area },
                    AreaVerdict::Area { area, .. } => RowStatus::AreaExceedsClaim { measured: area },
                    AreaVerdict::NotNullHomotopic => RowStatus::NotNullHomotopic,
                    AreaVerdict::BudgetExhausted { lower_bound } if lower_bound > claimed => {
                        RowStatus::AreaExceedsClaim { measured: lower_bound }
                    }
                    AreaVerdict::BudgetExhausted { lower_bound } => RowStatus::BudgetExhausted { lower_bound },
                }
            }
        };
        RowVerdict { index: i + 1, claimed, status }
    };
    let rows: Vec<RowVerdict> = (0..scheme.rows.len()).into_par_iter().map(check).collect();
    let pass = rows.iter().all(|r| matches!(r.status, RowStatus::Pass { .. }));
    SchemeReport { rows, total_claimed: scheme.total(), pass }
}

/// Incremental construction of a sequence with validation at every step.
#[derive(Clone, Debug)]
pub struct SeqBuilder<'a> {
    p: &'a Presentation,
    start: Word,
    cur: Vec<Letter>,
    moves: Vec<Move>,
}

impl<'a> SeqBuilder<'a> {
    pub fn new(p: &'a Presentation, start: &Word) -> SeqBuilder<'a> {
        SeqBuilder { p, start: start.clone(), cur: start.letters().to_vec(), moves: Vec::new() }
    }

    pub fn presentation(&self) -> &'a Presentation {
        self.p
    }

    pub fn current(&self) -> Word {
        Word::from_letters(self.cur.clone())
    }

    pub fn len(&self) -> usize {
        self.cur.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cur.is_empty()
    }

    pub fn letter_at(&self, i: usize) -> Letter {
        self.cur[i]
    }

    pub fn area(&self) -> u64 {
        self.moves.iter().filter(|m| m.is_relator()).count() as u64
    }

    pub fn finish(self) -> Sequence {
        Sequence { start: self.start, moves: self.moves }
    }

    pub fn push(&mut self, m: Move) -> Result<()> {
        let index = self.moves.len();
        self.cur = apply_move(self.p, &self.cur, &m).map_err(|reason| RewriteError::MalformedMove { index, reason })?;
        self.moves.push(m);
        Ok(())
    }

    pub fn contract(&mut self, pos: usize) -> Result<()> {
        self.push(Move::Contract { pos })
    }

    pub fn expand(&mut self, pos: usize, letter: Letter) -> Result<()> {
        self.push(Move::Expand { pos, letter })
    }

    /// Inserts `u u⁻¹` at `pos` by free expansions.
    pub fn insert_trivial(&mut self, pos: usize, u: &Word) -> Result<()> {
        for (i, &l) in u.letters().iter().enumerate() {
            self.expand(pos + i, l)?;
        }
        Ok(())
    }

    /// Replaces the subword `r` at `pos` with `s`, where `r s⁻¹` is a
    /// cyclic conjugate of a relator or its inverse.
    pub fn replace(&mut self, pos: usize, r: &Word, s: &Word) -> Result<()> {
        let c = r.concat(&s.inverse());
        let loc = self.p.locate(&c).ok_or(RewriteError::NoRelatorMatch(c))?;
        self.push(Move::Relator { pos, rel: loc.rel, sign: loc.sign, rot: loc.rot, split: r.len() })
    }

    /// Appends the moves of `seq`, acting on the subword at `offset`.
    pub fn embed(&mut self, offset: usize, seq: &Sequence) -> Result<()> {
        let n = seq.start.len();
        if offset + n > self.cur.len() || &self.cur[offset..offset + n] != seq.start.letters() {
            return Err(RewriteError::InvalidSequence(format!(
                "embedded sequence start `{}` not found at {offset}",
                seq.start
            )));
        }
        for m in &seq.moves {
            self.push(m.shifted(offset))?;
        }
        Ok(())
    }

    /// Free moves turning the subword `[lo, hi)` into `target`.
    pub fn free_segment_to(&mut self, lo: usize, hi: usize, target: &Word) -> Result<()> {
        let seg = Word::from_letters(self.cur[lo..hi].to_vec());
        let s = free_equality_sequence(&seg, target)?;
        self.embed(lo, &s)
    }

    /// Free moves turning the whole word into `target`.
    pub fn free_to(&mut self, target: &Word) -> Result<()> {
        let n = self.cur.len();
        self.free_segment_to(0, n, target)
    }

    /// Swaps the letters at `pos` and `pos + 1`: free moves when they are
    /// equal or mutually inverse, otherwise one relator or two relators
    /// through a single intermediate letter.
    pub fn swap(&mut self, pos: usize) -> Result<()> {
        let (a, b) = (self.cur[pos], self.cur[pos + 1]);
        if a == b {
            return Ok(());
        }
        if a == b.inverse() {
            self.contract(pos)?;
            return self.expand(pos, b);
        }
        let ab = Word::from_letters(vec![a, b]);
        let ba = Word::from_letters(vec![b, a]);
        if self.p.locate(&ab.concat(&ba.inverse())).is_some() {
            return self.replace(pos, &ab, &ba);
        }
        for &g in self.p.generators() {
            for c in [g.letter(), g.inv()] {
                let cw = Word::letter(c);
                if self.p.locate(&ab.concat(&cw.inverse())).is_some() && self.p.locate(&cw.concat(&ba.inverse())).is_some() {
                    self.replace(pos, &ab, &cw)?;
                    return self.replace(pos, &cw, &ba);
                }
            }
        }
        Err(RewriteError::NoRelatorMatch(ab.concat(&ba.inverse())))
    }

    /// Moves the letter at `from` leftwards to position `to` by swaps.
    pub fn bubble_left(&mut self, from: usize, to: usize) -> Result<()> {
        for j in (to..from).rev() {
            self.swap(j)?;
        }
        Ok(())
    }

    /// Moves the letter at `from` rightwards to position `to` by swaps.
    pub fn bubble_right(&mut self, from: usize, to: usize) -> Result<()> {
        for j in from..to {
            self.swap(j)?;
        }
        Ok(())
    }

    /// Rewrites the subword `[lo, hi)` into `target` in a partially
    /// commutative group whose commuting letter pairs are given by
    /// `commutes`. Relators are spent only on swaps.
    pub fn commute_transition(
        &mut self,
        lo: usize,
        hi: usize,
        target: &Word,
        commutes: &dyn Fn(Letter, Letter) -> bool,
    ) -> Result<()> {
        let seg = &self.cur[lo..hi];
        let t = target.letters();
        let mut pre = 0;
        while pre < seg.len() && pre < t.len() && seg[pre] == t[pre] {
            pre += 1;
        }
        let mut suf = 0;
        while suf < seg.len() - pre && suf < t.len() - pre && seg[seg.len() - 1 - suf] == t[t.len() - 1 - suf] {
            suf += 1;
        }
        let lo = lo + pre;
        let tail = self.cur.len() - (hi - suf);
        let target = Word::from_letters(t[pre..t.len() - suf].to_vec());
        let seg = Word::from_letters(self.cur[lo..self.cur.len() - tail].to_vec());
        if seg == target {
            return Ok(());
        }
        if seg.free_reduce() == target.free_reduce() {
            let hi = self.cur.len() - tail;
            return self.free_segment_to(lo, hi, &target);
        }
        let red = seg.free_reduce();
        if red.len() < seg.len() {
            let hi = self.cur.len() - tail;
            self.free_segment_to(lo, hi, &red)?;
        }
        let mut need: HashMap<Letter, i64> = HashMap::new();
        for &l in target.letters() {
            *need.entry(l).or_default() -= 1;
        }
        for &l in &self.cur[lo..self.cur.len() - tail] {
            *need.entry(l).or_default() += 1;
        }
        loop {
            let end = self.cur.len() - tail;
            let Some((q1, q2)) = self.closest_cancellable(lo, end, commutes, &|l| need.get(&l).is_some_and(|&c| c > 0)) else {
                break;
            };
            let a = self.cur[q1];
            *need.get_mut(&a).expect("counted") -= 1;
            *need.get_mut(&a.inverse()).expect("counted") -= 1;
            self.bubble_right(q1, q2 - 1)?;
            self.contract(q2 - 1)?;
        }
        let mut i = lo;
        for &tl in target.letters() {
            let end = self.cur.len() - tail;
            let mut found = None;
            for q in i..end {
                if self.cur[q] == tl {
                    found = Some(q);
                    break;
                }
                if !commutes(self.cur[q], tl) {
                    break;
                }
            }
            match found {
                Some(q) => self.bubble_left(q, i)?,
                None => self.expand(i, tl)?,
            }
            i += 1;
        }
        let end = self.cur.len() - tail;
        self.cancel_trivial(i, end, commutes)
    }

    /// The closest pair `a … a⁻¹` in `[lo, end)` with `a` accepted by `keep`
    /// and commuting with everything in between.
    fn closest_cancellable(
        &self,
        lo: usize,
        end: usize,
        commutes: &dyn Fn(Letter, Letter) -> bool,
        keep: &dyn Fn(Letter) -> bool,
    ) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for q1 in lo..end {
            let a = self.cur[q1];
            if !keep(a) {
                continue;
            }
            for q2 in q1 + 1..end {
                let b = self.cur[q2];
                if b == a.inverse() {
                    if best.is_none_or(|(x, y)| q2 - q1 < y - x) {
                        best = Some((q1, q2));
                    }
                    break;
                }
                if !commutes(a, b) {
                    break;
                }
            }
        }
        best
    }

    /// Reduces a subword that is trivial in the partially commutative group
    /// to the empty word.
    pub fn cancel_trivial(&mut self, lo: usize, hi: usize, commutes: &dyn Fn(Letter, Letter) -> bool) -> Result<()> {
        let tail = self.cur.len() - hi;
        loop {
            let end = self.cur.len() - tail;
            if end == lo {
                return Ok(());
            }
            let (q1, q2) = self.closest_cancellable(lo, end, commutes, &|_| true).ok_or_else(|| {
                RewriteError::InvalidSequence(format!(
                    "subword `{}` is not trivial under the given commutations",
                    Word::from_letters(self.cur[lo..end].to_vec())
                ))
            })?;
            self.bubble_right(q1, q2 - 1)?;
            self.contract(q2 - 1)?;
        }
    }
}

/// A scheme together with a sequence realizing it and the measured cost
/// of each row transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedScheme {
    pub scheme: Scheme,
    pub sequence: Sequence,
    pub row_costs: Vec<u64>,
}

impl RealizedScheme {
    pub fn area(&self) -> u64 {
        self.sequence.area()
    }

    /// Rows whose measured cost exceeds the claim, as 0-based indices.
    pub fn overruns(&self) -> Vec<usize> {
        (0..self.row_costs.len()).filter(|&i| self.row_costs[i] > self.scheme.rows[i].area).collect()
    }
}

/// Realizes every row transition of `scheme` by commutations and free moves.
pub fn realize_scheme(
    p: &Presentation,
    scheme: &Scheme,
    commutes: &dyn Fn(Letter, Letter) -> bool,
) -> Result<RealizedScheme> {
    realize_scheme_with(p, scheme, &|b, _, next| {
        let n = b.len();
        b.commute_transition(0, n, next, commutes)
    })
}

/// Realizes a scheme with a caller-supplied step `(builder, row index, next word)`.
pub fn realize_scheme_with(
    p: &Presentation,
    scheme: &Scheme,
    step: &dyn Fn(&mut SeqBuilder, usize, &Word) -> Result<()>,
) -> Result<RealizedScheme> {
    let start = scheme.rows.first().map(|r| r.word.clone()).unwrap_or_else(|| scheme.target.clone());
    let mut b = SeqBuilder::new(p, &start);
    let mut row_costs = Vec::with_capacity(scheme.rows.len());
    for i in 0..scheme.rows.len() {
        let next = scheme.endpoints(i).1;
        let before = b.area();
        step(&mut b, i, next)?;
        if &b.current() != next {
            return Err(RewriteError::InvalidSequence(format!("row {} does not reach `{next}`", i + 1)));
        }
        row_costs.push(b.area() - before);
    }
    Ok(RealizedScheme { scheme: scheme.clone(), sequence: b.finish(), row_costs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::{commutator, w};
    use proptest::prelude::*;

    fn z2() -> Presentation {
        Presentation::from_strs(&["x", "y"], &["x y x' y'"])
    }

    #[test]
    fn json_round_trip() {
        let p = Presentation::from_json(r#"{"generators":["x","y"],"relators":["x y x' y'"]}"#).unwrap();
        assert_eq!(p.max_relator_len(), 4);
        let q = Presentation::from_json(&p.to_json()).unwrap();
        assert_eq!(q.relators(), p.relators());
        let s = Sequence::from_json(
            r#"{"start":"x y x' y'","moves":[{"op":"relator","pos":0,"rel":0,"sign":1,"rot":0,"split":4}]}"#,
        )
        .unwrap();
        assert_eq!(Sequence::from_json(&s.to_json()).unwrap(), s);
        let e = Sequence::from_json(r#"{"start":"x","moves":[{"op":"expand","pos":1,"letter":"x'"}]}"#).unwrap();
        assert_eq!(e.end(&p).unwrap(), w("x x' x"));
    }

    #[test]
    fn replay_examples() {
        let p = z2();
        let s = Sequence { start: w("x x'"), moves: vec![Move::Contract { pos: 0 }] };
        let a = replay_sequence(&p, &s, None).unwrap();
        assert_eq!((a.area, a.end), (0, Word::empty()));
        let s = Sequence {
            start: w("x y x' y'"),
            moves: vec![Move::Relator { pos: 0, rel: 0, sign: 1, rot: 0, split: 4 }],
        };
        assert_eq!(replay_sequence(&p, &s, None).unwrap().area, 1);
        let bad = Sequence { start: w("x y"), moves: vec![Move::Contract { pos: 0 }] };
        assert!(matches!(replay_sequence(&p, &bad, None), Err(RewriteError::MalformedMove { index: 0, .. })));
    }

    #[test]
    fn heights_undefined_for_charged_relators() {
        let p = Presentation::from_strs(&["x"], &["x x"]);
        let theta = ChargeMap::new(1).with(Symbol::intern("x"), vec![1]).unwrap();
        let s = Sequence::new(w("x x"));
        assert_eq!(replay_sequence(&p, &s, Some(&theta)).unwrap().heights, None);
    }

    #[test]
    fn expression_examples() {
        let p = z2();
        let e = Expression::default();
        let a = validate_expression(&p, &e, &Word::empty(), None).unwrap();
        assert_eq!((a.area, a.radius), (0, Some(0)));
        let e = Expression { terms: vec![Term { conj: Word::empty(), rel: 0, sign: 1 }] };
        let a = validate_expression(&p, &e, &w("x y x' y'"), None).unwrap();
        assert_eq!((a.area, a.radius), (1, Some(0)));
        assert!(matches!(
            validate_expression(&p, &e, &w("x"), None),
            Err(RewriteError::BoundaryMismatch { .. })
        ));
    }

    #[test]
    fn single_move_expression_uses_prefix() {
        let p = z2();
        let s = Sequence {
            start: w("y y x y x' y'"),
            moves: vec![Move::Relator { pos: 2, rel: 0, sign: 1, rot: 0, split: 4 }],
        };
        let e = sequence_to_expression(&p, &s).unwrap();
        assert_eq!(e.terms[0].conj, w("y y"));
        validate_expression(&p, &e, &w("y y x y x' y' y' y'"), None).unwrap();
    }

    #[test]
    fn free_equality_examples() {
        let s = free_equality_sequence(&w("x x'"), &Word::empty()).unwrap();
        assert_eq!(s.moves, vec![Move::Contract { pos: 0 }]);
        let s = free_equality_sequence(&w("a b b' c"), &w("a c")).unwrap();
        assert_eq!(s.moves.len(), 1);
        let p = Presentation::from_strs(&["a", "b", "c"], &[]);
        assert_eq!(s.end(&p).unwrap(), w("a c"));
        let x = w("a b b' a' c");
        let s = free_equality_sequence(&x, &x).unwrap();
        assert_eq!(s.end(&p).unwrap(), x);
        assert!(free_equality_sequence(&w("a"), &w("b")).is_err());
    }

    #[test]
    fn invert_commutator_filling() {
        let p = z2();
        let s = Sequence {
            start: w("x y x' y'"),
            moves: vec![Move::Relator { pos: 0, rel: 0, sign: 1, rot: 0, split: 4 }],
        };
        let inv = invert_sequence(&p, &s).unwrap();
        assert_eq!(inv.start, w("y x y' x'"));
        let a = replay_sequence(&p, &inv, None).unwrap();
        assert_eq!((a.area, a.end), (1, Word::empty()));
        let empty = Sequence::new(Word::empty());
        assert_eq!(invert_sequence(&p, &empty).unwrap(), empty);
        assert!(invert_sequence(&p, &Sequence::new(w("x"))).is_err());
    }

    #[test]
    fn three_row_scheme_by_sequences() {
        let p = z2();
        let rows = ["x x y x' y x y x' x' y' y' y'", "x x y x' y x' y' y'", "x x y x' x' y'"];
        let claims = [2, 1, 2];
        let scheme = Scheme {
            rows: rows
                .iter()
                .zip(claims)
                .map(|(r, a)| SchemeRow { word: w(r), area: a, heights: None })
                .collect(),
            target: Word::empty(),
        };
        assert_eq!(scheme.total(), 5);
        let x = Symbol::intern("x");
        let y = Symbol::intern("y");
        let commutes = |a: Letter, b: Letter| a.gen() != b.gen() && [x, y].contains(&a.gen()) && [x, y].contains(&b.gen());
        let mut seqs = Vec::new();
        for i in 0..3 {
            let (from, to) = scheme.endpoints(i);
            let mut b = SeqBuilder::new(&p, from);
            let n = b.len();
            b.commute_transition(0, n, to, &commutes).unwrap();
            assert_eq!(b.current(), *to);
            seqs.push(b.finish());
        }
        let report = verify_scheme(&p, &scheme, &SchemeStrategy::BySequence(seqs));
        assert!(report.pass, "{report:?}");
    }

    fn arb_z2_word(max: usize) -> impl Strategy<Value = Word> {
        prop::collection::vec((any::<bool>(), any::<bool>()), 0..max).prop_map(|v| {
            let x = Symbol::intern("x");
            let y = Symbol::intern("y");
            Word::from_letters(v.into_iter().map(|(g, inv)| Letter::new(if g { x } else { y }, inv)).collect())
        })
    }

    proptest! {
        #[test]
        fn free_equality_height_bound(u in arb_z2_word(10), v in arb_z2_word(10)) {
            let p = Presentation::from_strs(&["x", "y"], &[]);
            let w1 = u.concat(&v).concat(&v.inverse());
            let w2 = u.concat(&u.inverse()).concat(&u);
            let theta = ChargeMap::new(2)
                .with(Symbol::intern("x"), vec![1, 0]).unwrap()
                .with(Symbol::intern("y"), vec![0, 1]).unwrap();
            let s = free_equality_sequence(&w1, &w2).unwrap();
            let a = replay_sequence(&p, &s, Some(&theta)).unwrap();
            prop_assert_eq!(a.area, 0);
            prop_assert_eq!(&a.end, &w2);
            let bound = theta.heights(&w1).unwrap().join(&theta.heights(&w2).unwrap());
            prop_assert!(a.heights.unwrap().dominated_by(&bound));
        }

        #[test]
        fn conversions_round_trip(u in arb_z2_word(8), v in arb_z2_word(6)) {
            // Build a sequence by commuting; check expression round trip,
            // mirror, reverse and area additivity.
            let p = z2();
            let start = u.concat(&commutator(&v, &u)).concat(&v);
            let x = Symbol::intern("x");
            let y = Symbol::intern("y");
            let commutes = |a: Letter, b: Letter| a.gen() != b.gen() && [x, y].contains(&a.gen()) && [x, y].contains(&b.gen());
            let target = u.concat(&v);
            let mut b = SeqBuilder::new(&p, &start);
            let n = b.len();
            b.commute_transition(0, n, &target, &commutes).unwrap();
            let mid = b.area();
            let target2 = v.concat(&u);
            let n = b.len();
            b.commute_transition(0, n, &target2, &commutes).unwrap();
            let s = b.finish();
            let acc = replay_sequence(&p, &s, None).unwrap();
            prop_assert_eq!(&acc.end, &target2);
            prop_assert!(acc.area >= mid);
            let e = sequence_to_expression(&p, &s).unwrap();
            let va = validate_expression(&p, &e, &start.concat(&target2.inverse()), None).unwrap();
            prop_assert_eq!(va.area, acc.area);
            let m = mirror_sequence(&p, &s).unwrap();
            let ma = replay_sequence(&p, &m, None).unwrap();
            prop_assert_eq!(ma.area, acc.area);
            prop_assert_eq!(ma.end, target2.inverse());
            let r = reverse_sequence(&p, &s).unwrap();
            let ra = replay_sequence(&p, &r, None).unwrap();
            prop_assert_eq!(ra.area, acc.area);
            prop_assert_eq!(ra.end, start.clone());
            let back = expression_to_sequence(&p, &e, &start.concat(&target2.inverse())).unwrap();
            let ba = replay_sequence(&p, &back, None).unwrap();
            prop_assert_eq!(ba.area, acc.area);
            prop_assert!(ba.end.is_empty());
        }
    }
}
