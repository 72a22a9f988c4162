//! Exact search oracles: filling area, Dehn-function samples, word problems
//! for direct products of free groups and right-angled Artin groups, word
//! metrics, distortion and low-noise expressions.
//!
//! Area search works on cyclically reduced words up to rotation. A
//! relator move replaces a prefix of some rotation by the complementary
//! part of a relator conjugate, then reduces again. All verdicts are
//! relative to the word-length cap in the budget.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewriting::{
    expression_to_sequence, free_equality_sequence, sequence_to_expression, validate_expression, Expression,
    Presentation, RelatorRef, RewriteError, Sequence, Term,
};
use crate::words::{ChargeMap, Letter, Symbol, Word, WordError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("generator `{0}` is not in any factor")]
    AlphabetMismatch(String),
    #[error("search budget exhausted (lower bound {lower_bound})")]
    BudgetExhausted { lower_bound: u64 },
    #[error("word is not null-homotopic within the length cap")]
    NotNullHomotopic,
    #[error("no membership procedure supplied")]
    MembershipUndecidable,
    #[error("no low-noise expression found within budget")]
    NotFound,
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Word(#[from] WordError),
}

type Result<T> = std::result::Result<T, OracleError>;

/// Limits for exhaustive searches. Exhaustion is always reported.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Word-length cap; `None` means `|w| + 2L + 4`.
    pub max_len: Option<usize>,
    pub max_states: usize,
    pub max_area: Option<u64>,
    pub wall_clock_ms: Option<u64>,
}

impl Default for SearchBudget {
    fn default() -> SearchBudget {
        SearchBudget { max_len: None, max_states: 2_000_000, max_area: None, wall_clock_ms: None }
    }
}

impl SearchBudget {
    pub fn with_max_len(mut self, n: usize) -> SearchBudget {
        self.max_len = Some(n);
        self
    }

    pub fn with_max_states(mut self, n: usize) -> SearchBudget {
        self.max_states = n;
        self
    }

    pub fn with_max_area(mut self, n: u64) -> SearchBudget {
        self.max_area = Some(n);
        self
    }

    pub fn with_wall_clock_ms(mut self, ms: u64) -> SearchBudget {
        self.wall_clock_ms = Some(ms);
        self
    }

    pub fn len_cap(&self, p: &Presentation, w: &Word) -> usize {
        self.max_len.unwrap_or(w.len() + 2 * p.max_relator_len() + 4)
    }

    fn timed_out(&self, start: Instant) -> bool {
        self.wall_clock_ms.is_some_and(|ms| start.elapsed().as_millis() as u64 >= ms)
    }
}

/// Result of an area search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum AreaVerdict {
    Area { area: u64, witness: Sequence },
    NotNullHomotopic,
    BudgetExhausted { lower_bound: u64 },
}

impl AreaVerdict {
    pub fn area(&self) -> Option<u64> {
        match self {
            AreaVerdict::Area { area, .. } => Some(*area),
            _ => None,
        }
    }
}

/// Smallest rotation of a word and the rotation offset.
pub fn min_rotation(w: &Word) -> (Word, usize) {
    let l = w.letters();
    let n = l.len();
    let mut best = 0;
    for k in 1..n {
        for t in 0..n {
            let (a, b) = (l[(k + t) % n], l[(best + t) % n]);
            if a != b {
                if a < b {
                    best = k;
                }
                break;
            }
        }
    }
    (w.rotate(best), best)
}

/// `(state, D)` with `w` freely equal to `D state D⁻¹`.
fn settle(raw: &Word) -> (Word, Word) {
    let (q, core) = raw.cyclic_reduce();
    let (state, k) = min_rotation(&core);
    (state, q.concat(&core.prefix(k)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Step {
    rot: usize,
    conj: usize,
    split: usize,
}

/// Every cyclic conjugate of every relator and inverse, with a prefix trie.
struct MoveTable {
    conjugates: Vec<(Word, RelatorRef)>,
    children: Vec<HashMap<Letter, usize>>,
    ends: Vec<Vec<usize>>,
}

impl MoveTable {
    fn new(p: &Presentation) -> MoveTable {
        let mut conjugates: Vec<(Word, RelatorRef)> = p.conjugate_index().iter().map(|(w, r)| (w.clone(), *r)).collect();
        conjugates.sort_by(|a, b| a.0.cmp(&b.0));
        let mut t = MoveTable { conjugates: Vec::new(), children: vec![HashMap::new()], ends: vec![Vec::new()] };
        for (ci, (c, _)) in conjugates.iter().enumerate() {
            let mut node = 0;
            for &l in c.letters() {
                node = match t.children[node].get(&l) {
                    Some(&n) => n,
                    None => {
                        t.children.push(HashMap::new());
                        t.ends.push(Vec::new());
                        let n = t.children.len() - 1;
                        t.children[node].insert(l, n);
                        n
                    }
                };
                t.ends[node].push(ci);
            }
        }
        t.conjugates = conjugates;
        t
    }

    /// Cyclic successors of a state.
    fn successors(&self, u: &Word, cap: usize) -> Vec<(Word, Step)> {
        let l = u.letters();
        let n = l.len();
        let mut out = Vec::new();
        for rot in 0..n {
            let mut node = 0;
            for t in 0..n {
                match self.children[node].get(&l[(rot + t) % n]) {
                    Some(&next) => node = next,
                    None => break,
                }
                let split = t + 1;
                for &ci in &self.ends[node] {
                    let c = &self.conjugates[ci].0;
                    let mut raw: Vec<Letter> = c.letters()[split..].iter().rev().map(|x| x.inverse()).collect();
                    raw.extend((split..n).map(|i| l[(rot + i) % n]));
                    let (v, _) = settle(&Word::from_letters(raw));
                    if v.len() <= cap {
                        out.push((v, Step { rot, conj: ci, split }));
                    }
                }
            }
        }
        out
    }

    /// Expression term and the new prefix factor for one step.
    fn decode(&self, p: &Presentation, u: &Word, st: Step) -> (Word, Word, Term) {
        let (c, loc) = &self.conjugates[st.conj];
        let rho = p.signed_relator(loc.rel, loc.sign);
        let pre = u.prefix(st.rot);
        let rotated = u.rotate(st.rot);
        let raw = c.suffix_from(st.split).inverse().concat(&rotated.suffix_from(st.split));
        let (v, d) = settle(&raw);
        let t = pre.concat(&rho.prefix(loc.rot).inverse());
        (v, pre.concat(&d), Term { conj: t, rel: loc.rel, sign: loc.sign })
    }
}

type Parents = HashMap<Word, Option<(Word, Step)>>;

fn reconstruct(p: &Presentation, table: &MoveTable, w: &Word, parents: &Parents) -> Result<(Expression, Sequence)> {
    let mut chain = Vec::new();
    let mut cur = Word::empty();
    while let Some(Some((prev, st))) = parents.get(&cur) {
        chain.push((prev.clone(), *st));
        cur = prev.clone();
    }
    chain.reverse();
    let (_, mut prefix) = settle(w);
    let mut terms = Vec::with_capacity(chain.len());
    for (u, st) in chain {
        let (_, d, mut term) = table.decode(p, &u, st);
        term.conj = prefix.concat(&term.conj).free_reduce();
        terms.push(term);
        prefix = prefix.concat(&d).free_reduce();
    }
    let e = Expression { terms };
    validate_expression(p, &e, w, None)?;
    let seq = expression_to_sequence(p, &e, w)?;
    Ok((e, seq))
}

struct Found {
    verdict: AreaVerdict,
    expression: Option<Expression>,
}

fn trivial_found(w: &Word) -> Found {
    let witness = free_equality_sequence(w, &Word::empty()).expect("freely trivial");
    Found { verdict: AreaVerdict::Area { area: 0, witness }, expression: Some(Expression::default()) }
}

fn exact_search(p: &Presentation, w: &Word, budget: &SearchBudget) -> Result<Found> {
    let clock = Instant::now();
    let (s0, _) = settle(w);
    if s0.is_empty() {
        return Ok(trivial_found(w));
    }
    let cap = budget.len_cap(p, w);
    let table = MoveTable::new(p);
    let mut parents: Parents = HashMap::new();
    parents.insert(s0.clone(), None);
    let mut frontier = vec![s0];
    let mut level = 0u64;
    loop {
        if frontier.is_empty() {
            return Ok(Found { verdict: AreaVerdict::NotNullHomotopic, expression: None });
        }
        let exhausted = Found { verdict: AreaVerdict::BudgetExhausted { lower_bound: level + 1 }, expression: None };
        if budget.max_area.is_some_and(|m| level + 1 > m) || budget.timed_out(clock) {
            return Ok(exhausted);
        }
        let mut succ: Vec<(Word, usize, Step)> = frontier
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, u)| table.successors(u, cap).into_iter().map(move |(v, st)| (v, i, st)))
            .collect();
        succ.par_sort_unstable();
        succ.dedup_by(|a, b| a.0 == b.0);
        let mut next = Vec::new();
        for (v, i, st) in succ {
            if parents.contains_key(&v) {
                continue;
            }
            parents.insert(v.clone(), Some((frontier[i].clone(), st)));
            if v.is_empty() {
                let (e, seq) = reconstruct(p, &table, w, &parents)?;
                return Ok(Found { verdict: AreaVerdict::Area { area: level + 1, witness: seq }, expression: Some(e) });
            }
            if parents.len() > budget.max_states {
                return Ok(exhausted);
            }
            next.push(v);
        }
        frontier = next;
        level += 1;
    }
}

/// Minimal area of `w` over all fillings whose intermediate cyclic words
/// stay within the length cap, with a replay-valid witness.
pub fn area_exact(p: &Presentation, w: &Word, budget: &SearchBudget) -> AreaVerdict {
    match exact_search(p, w, budget) {
        Ok(f) => f.verdict,
        Err(e) => panic!("witness reconstruction failed: {e}"),
    }
}

/// Best-first search for any filling, shortest words first. The reported
/// area is an upper bound, not a minimum.
pub fn null_homotopy_search(p: &Presentation, w: &Word, budget: &SearchBudget) -> AreaVerdict {
    let clock = Instant::now();
    let (s0, _) = settle(w);
    if s0.is_empty() {
        return trivial_found(w).verdict;
    }
    let cap = budget.len_cap(p, w);
    let table = MoveTable::new(p);
    let mut parents: Parents = HashMap::new();
    parents.insert(s0.clone(), None);
    let mut depth: HashMap<Word, u64> = HashMap::new();
    depth.insert(s0.clone(), 0);
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    heap.push(Reverse((s0.len(), 0u64, counter, s0)));
    while let Some(Reverse((_, d, _, u))) = heap.pop() {
        if budget.timed_out(clock) || parents.len() > budget.max_states {
            break;
        }
        if budget.max_area.is_some_and(|m| d >= m) {
            continue;
        }
        for (v, st) in table.successors(&u, cap) {
            if parents.contains_key(&v) {
                continue;
            }
            parents.insert(v.clone(), Some((u.clone(), st)));
            if v.is_empty() {
                let (e, seq) = reconstruct(p, &table, w, &parents).expect("witness reconstruction");
                return AreaVerdict::Area { area: e.area(), witness: seq };
            }
            counter += 1;
            depth.insert(v.clone(), d + 1);
            heap.push(Reverse((v.len(), d + 1, counter, v)));
        }
    }
    if heap.is_empty() && parents.len() <= budget.max_states && !budget.timed_out(clock) && budget.max_area.is_none() {
        AreaVerdict::NotNullHomotopic
    } else {
        AreaVerdict::BudgetExhausted { lower_bound: 1 }
    }
}

/// Cyclically reduced words of length `1..=l`, one per class under
/// rotation and inversion.
pub fn cyclic_word_classes(generators: &[Symbol], l: usize) -> Vec<Word> {
    let letters: Vec<Letter> = generators.iter().flat_map(|g| [g.letter(), g.inv()]).collect();
    let mut out = Vec::new();
    let mut cur: Vec<Letter> = Vec::new();
    fn rec(letters: &[Letter], l: usize, cur: &mut Vec<Letter>, out: &mut Vec<Word>) {
        if !cur.is_empty() && cur[0] != cur[cur.len() - 1].inverse() {
            let w = Word::from_letters(cur.clone());
            if min_rotation(&w).0 == w && min_rotation(&w.inverse()).0 >= w {
                out.push(w);
            }
        }
        if cur.len() == l {
            return;
        }
        for &x in letters {
            if cur.last() == Some(&x.inverse()) {
                continue;
            }
            cur.push(x);
            rec(letters, l, cur, out);
            cur.pop();
        }
    }
    rec(&letters, l, &mut cur, &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn exponent_vector(generators: &[Symbol], w: &Word) -> Vec<i64> {
    let mut v = vec![0; generators.len()];
    for l in w.letters() {
        if let Some(i) = generators.iter().position(|&g| g == l.gen()) {
            v[i] += l.sign();
        }
    }
    v
}

/// True when `w` is provably nontrivial: its exponent-sum vector lies
/// outside the rational span of the relator exponent sums.
pub fn abelian_obstruction(p: &Presentation, w: &Word) -> bool {
    let g = p.generators();
    let mut rows: Vec<Vec<i64>> = p.relators().iter().map(|r| exponent_vector(g, r)).collect();
    let before = crate::constructors::rational_rank(&rows);
    rows.push(exponent_vector(g, w));
    crate::constructors::rational_rank(&rows) > before
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DehnSample {
    pub l: usize,
    pub value: u64,
    pub witness: Option<Word>,
    pub null_words: usize,
}

/// `δ_P(l)`: maximal area over null-homotopic words of length at most `l`.
/// `is_null` is an optional exact word-problem filter; without it words
/// with an abelian obstruction are skipped and any other word whose search
/// exhausts the budget aborts the sample.
pub fn dehn_sample(
    p: &Presentation,
    l: usize,
    budget: &SearchBudget,
    is_null: Option<&(dyn Fn(&Word) -> bool + Sync)>,
) -> Result<DehnSample> {
    let words: Vec<Word> = cyclic_word_classes(p.generators(), l)
        .into_iter()
        .filter(|w| match is_null {
            Some(f) => f(w),
            None => !abelian_obstruction(p, w),
        })
        .collect();
    let results: Vec<(Word, AreaVerdict)> = words
        .into_par_iter()
        .map(|w| {
            let b = budget.clone().with_max_len(budget.max_len.unwrap_or(l + 2 * p.max_relator_len() + 4));
            let v = area_exact(p, &w, &b);
            (w, v)
        })
        .collect();
    let mut best = DehnSample { l, value: 0, witness: None, null_words: 0 };
    for (w, v) in results {
        match v {
            AreaVerdict::Area { area, .. } => {
                best.null_words += 1;
                if area > best.value {
                    best.value = area;
                    best.witness = Some(w);
                }
            }
            AreaVerdict::NotNullHomotopic => {}
            AreaVerdict::BudgetExhausted { lower_bound } => {
                return Err(OracleError::BudgetExhausted { lower_bound: lower_bound.max(best.value) })
            }
        }
    }
    Ok(best)
}

/// `D = F(X_1) × … × F(X_n)` with the cross-factor commutator set `C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectProductSpec {
    factors: Vec<Vec<Symbol>>,
    factor_of: HashMap<Symbol, usize>,
    theta: Option<ChargeMap>,
}

impl DirectProductSpec {
    pub fn new(factors: Vec<Vec<Symbol>>) -> Result<DirectProductSpec> {
        let mut factor_of = HashMap::new();
        for (i, f) in factors.iter().enumerate() {
            for &s in f {
                if factor_of.insert(s, i).is_some() {
                    return Err(OracleError::AlphabetMismatch(s.name().to_string()));
                }
            }
        }
        Ok(DirectProductSpec { factors, factor_of, theta: None })
    }

    /// Builds from generator names, one slice per factor.
    pub fn from_names(factors: &[&[&str]]) -> DirectProductSpec {
        let f = factors.iter().map(|names| names.iter().map(|n| Symbol::intern(n)).collect()).collect();
        DirectProductSpec::new(f).expect("disjoint factors")
    }

    pub fn with_theta(mut self, theta: ChargeMap) -> DirectProductSpec {
        self.theta = Some(theta);
        self
    }

    pub fn theta(&self) -> Option<&ChargeMap> {
        self.theta.as_ref()
    }

    pub fn factors(&self) -> &[Vec<Symbol>] {
        &self.factors
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_of(&self, s: Symbol) -> Option<usize> {
        self.factor_of.get(&s).copied()
    }

    pub fn generators(&self) -> Vec<Symbol> {
        self.factors.iter().flatten().copied().collect()
    }

    /// `C = {[x, y] : x ∈ X_i, y ∈ X_j, i < j}`.
    pub fn commutator_relators(&self) -> Vec<Word> {
        let mut out = Vec::new();
        for i in 0..self.factors.len() {
            for j in i + 1..self.factors.len() {
                for &x in &self.factors[i] {
                    for &y in &self.factors[j] {
                        out.push(crate::words::commutator(&Word::letter(x.letter()), &Word::letter(y.letter())));
                    }
                }
            }
        }
        out
    }

    pub fn presentation(&self) -> Presentation {
        Presentation::new(self.generators(), self.commutator_relators()).expect("closed alphabet")
    }

    /// Letters from different factors commute.
    pub fn commutes(&self, a: Letter, b: Letter) -> bool {
        match (self.factor_of(a.gen()), self.factor_of(b.gen())) {
            (Some(i), Some(j)) => i != j,
            _ => false,
        }
    }

    fn check(&self, w: &Word) -> Result<()> {
        match w.symbols().find(|s| !self.factor_of.contains_key(s)) {
            Some(s) => Err(OracleError::AlphabetMismatch(s.name().to_string())),
            None => Ok(()),
        }
    }

    /// The projection `p_i` onto factor `i`.
    pub fn project(&self, w: &Word, i: usize) -> Result<Word> {
        self.check(w)?;
        Ok(Word::from_letters(w.letters().iter().copied().filter(|l| self.factor_of[&l.gen()] == i).collect()))
    }

    /// Canonical representative: reduced projections in factor order.
    pub fn normal_form(&self, w: &Word) -> Result<Word> {
        let mut v = Vec::new();
        for i in 0..self.factors.len() {
            v.extend(self.project(w, i)?.free_reduce().into_letters());
        }
        Ok(Word::from_letters(v))
    }
}

/// Exact word problem in a direct product of free groups.
pub fn dp_equal(spec: &DirectProductSpec, w1: &Word, w2: &Word) -> Result<bool> {
    let d = w1.concat(&w2.inverse());
    for i in 0..spec.factor_count() {
        if !spec.project(&d, i)?.is_freely_trivial() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Reduced form in a right-angled Artin group: each new letter cancels
/// against the nearest earlier inverse it commutes past.
pub fn raag_reduce(w: &Word, commutes: &dyn Fn(Symbol, Symbol) -> bool) -> Word {
    let mut out: Vec<Letter> = Vec::with_capacity(w.len());
    for &x in w.letters() {
        let mut cancelled = false;
        for i in (0..out.len()).rev() {
            let y = out[i];
            if y == x.inverse() {
                out.remove(i);
                cancelled = true;
                break;
            }
            if y.gen() == x.gen() || !commutes(x.gen(), y.gen()) {
                break;
            }
        }
        if !cancelled {
            out.push(x);
        }
    }
    Word::from_letters(out)
}

/// Exact word problem in a right-angled Artin group.
pub fn raag_equal_by(commutes: &dyn Fn(Symbol, Symbol) -> bool, w1: &Word, w2: &Word) -> bool {
    raag_reduce(&w1.concat(&w2.inverse()), commutes).is_empty()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum CayleyVerdict {
    /// Distance with a geodesic as `(generator index, ±1)` pairs.
    Distance { n: u64, path: Vec<(usize, i8)> },
    NotReached { radius: u64 },
}

/// Word-metric distance from the identity to `target` with respect to
/// `generators` (and inverses). `normal` must be a canonical form. Uses
/// bidirectional breadth-first search; `max_len` caps the distance.
pub fn cayley_distance(
    generators: &[Word],
    target: &Word,
    normal: &(dyn Fn(&Word) -> Word + Sync),
    budget: &SearchBudget,
) -> CayleyVerdict {
    let goal = normal(target);
    let start = normal(&Word::empty());
    if goal == start {
        return CayleyVerdict::Distance { n: 0, path: Vec::new() };
    }
    let steps: Vec<(usize, i8, Word)> =
        generators.iter().enumerate().flat_map(|(i, g)| [(i, 1i8, g.clone()), (i, -1, g.inverse())]).collect();
    // Each side maps a normal form to (parent key, step) and keeps a
    // frontier of (key, representative).
    struct Side {
        parent: HashMap<Word, Option<(Word, usize, i8)>>,
        frontier: Vec<(Word, Word)>,
        depth: u64,
    }
    let mut sides = [
        Side { parent: HashMap::from([(start.clone(), None)]), frontier: vec![(start, Word::empty())], depth: 0 },
        Side { parent: HashMap::from([(goal.clone(), None)]), frontier: vec![(goal, target.clone())], depth: 0 },
    ];
    let max = budget.max_len.map(|m| m as u64);
    loop {
        let radius = sides[0].depth + sides[1].depth;
        if max.is_some_and(|m| radius >= m) {
            return CayleyVerdict::NotReached { radius };
        }
        let s = if sides[0].frontier.len() <= sides[1].frontier.len() { 0 } else { 1 };
        if sides[s].frontier.is_empty() || sides[0].parent.len() + sides[1].parent.len() > budget.max_states {
            return CayleyVerdict::NotReached { radius };
        }
        // The backward side multiplies by inverse steps.
        let sign = if s == 0 { 1 } else { -1 };
        let mut cand: Vec<(Word, Word, usize, usize, i8)> = sides[s]
            .frontier
            .par_iter()
            .enumerate()
            .flat_map_iter(|(fi, (_, rep))| {
                steps.iter().map(move |(i, e, g)| {
                    let r = if sign == 1 { rep.concat(g) } else { rep.concat(&g.inverse()) };
                    (normal(&r), r, fi, *i, *e)
                })
            })
            .collect();
        cand.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)).then(a.4.cmp(&b.4)));
        cand.dedup_by(|a, b| a.0 == b.0);
        let mut next = Vec::new();
        let mut meet: Option<(u64, Word)> = None;
        for (key, rep, fi, i, e) in cand {
            if sides[s].parent.contains_key(&key) {
                continue;
            }
            let from = sides[s].frontier[fi].0.clone();
            sides[s].parent.insert(key.clone(), Some((from, i, e)));
            if sides[1 - s].parent.contains_key(&key) {
                let other = trace(&sides[1 - s].parent, &key).len() as u64;
                if meet.as_ref().is_none_or(|(d, _)| other < *d) {
                    meet = Some((other, key.clone()));
                }
            }
            next.push((key, rep));
        }
        sides[s].frontier = next;
        sides[s].depth += 1;
        if let Some((_, key)) = meet {
            let mut path = trace(&sides[0].parent, &key);
            path.reverse();
            path.extend(trace(&sides[1].parent, &key));
            return CayleyVerdict::Distance { n: path.len() as u64, path };
        }
    }
}

/// Steps from `key` back to the root of one search side, nearest first.
fn trace(parent: &HashMap<Word, Option<(Word, usize, i8)>>, key: &Word) -> Vec<(usize, i8)> {
    let mut out = Vec::new();
    let mut cur = key.clone();
    while let Some(Some((prev, i, e))) = parent.get(&cur) {
        out.push((*i, *e));
        cur = prev.clone();
    }
    out
}

/// Ball of radius `l` keyed by normal form, with the distance and a
/// representative of each element.
fn ball(
    generators: &[Word],
    l: usize,
    normal: &(dyn Fn(&Word) -> Word + Sync),
    budget: &SearchBudget,
) -> Result<BTreeMap<Word, (u64, Word)>> {
    let steps: Vec<Word> = generators.iter().flat_map(|g| [g.clone(), g.inverse()]).collect();
    let mut out = BTreeMap::new();
    out.insert(normal(&Word::empty()), (0, Word::empty()));
    let mut frontier = vec![Word::empty()];
    for r in 1..=l as u64 {
        let cand: Vec<(Word, Word)> = frontier
            .par_iter()
            .flat_map_iter(|rep| {
                steps.iter().map(move |g| {
                    let x = rep.concat(g);
                    (normal(&x), x)
                })
            })
            .collect();
        let mut next = Vec::new();
        for (k, x) in cand {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(k) {
                e.insert((r, x.clone()));
                next.push(x);
            }
        }
        if out.len() > budget.max_states {
            return Err(OracleError::BudgetExhausted { lower_bound: r });
        }
        frontier = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionSample {
    pub l: usize,
    pub value: u64,
    pub witness: Option<Word>,
}

/// `Δ(l)`: the largest subgroup-metric length among subgroup elements in
/// the ambient ball of radius `l`.
pub fn distortion_sample(
    sub_gens: &[Word],
    ambient_gens: &[Word],
    l: usize,
    normal: &(dyn Fn(&Word) -> Word + Sync),
    membership: Option<&(dyn Fn(&Word) -> bool + Sync)>,
    budget: &SearchBudget,
) -> Result<DistortionSample> {
    let member = membership.ok_or(OracleError::MembershipUndecidable)?;
    let amb = ball(ambient_gens, l, normal, budget)?;
    let targets: Vec<(&Word, &Word)> = amb.iter().filter(|(_, (_, x))| member(x)).map(|(k, (_, x))| (k, x)).collect();
    let mut remaining: HashSet<&Word> = targets.iter().map(|(k, _)| *k).collect();
    let steps: Vec<Word> = sub_gens.iter().flat_map(|g| [g.clone(), g.inverse()]).collect();
    let mut seen: HashSet<Word> = HashSet::new();
    let id = normal(&Word::empty());
    seen.insert(id.clone());
    remaining.remove(&id);
    let mut best = DistortionSample { l, value: 0, witness: None };
    let mut frontier = vec![Word::empty()];
    let mut r = 0u64;
    while !remaining.is_empty() {
        if frontier.is_empty() {
            return Err(OracleError::MembershipUndecidable);
        }
        r += 1;
        let cand: Vec<(Word, Word)> = frontier
            .par_iter()
            .flat_map_iter(|rep| {
                steps.iter().map(move |g| {
                    let x = rep.concat(g);
                    (normal(&x), x)
                })
            })
            .collect();
        let mut next = Vec::new();
        for (k, x) in cand {
            if seen.insert(k.clone()) {
                if remaining.remove(&k) {
                    best.value = r;
                    best.witness = Some(amb[&k].1.clone());
                }
                next.push(x);
            }
        }
        if seen.len() > budget.max_states {
            return Err(OracleError::BudgetExhausted { lower_bound: r });
        }
        frontier = next;
    }
    Ok(best)
}

/// Exact departure of `w` from `ker θ` in the word metric on
/// `generators`: the largest over prefixes of the distance to the kernel.
pub fn departure_exact(theta: &ChargeMap, generators: &[Symbol], w: &Word, budget: &SearchBudget) -> Result<u64> {
    let r = theta.rank();
    let mut needed: HashSet<Vec<i64>> = HashSet::new();
    let mut acc = vec![0i64; r];
    needed.insert(acc.clone());
    for &l in w.letters() {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += theta.letter_charge(l, i)?;
        }
        needed.insert(acc.clone());
    }
    let mut steps: Vec<Vec<i64>> = Vec::new();
    for &g in generators {
        let c = theta.of_symbol(g)?.to_vec();
        if c.iter().any(|&x| x != 0) {
            steps.push(c.iter().map(|x| -x).collect());
            steps.push(c);
        }
    }
    let mut dist: HashMap<Vec<i64>, u64> = HashMap::new();
    dist.insert(vec![0; r], 0);
    let mut frontier = vec![vec![0i64; r]];
    let mut d = 0;
    let mut best = 0;
    needed.remove(&vec![0; r]);
    while !needed.is_empty() {
        if frontier.is_empty() || dist.len() > budget.max_states {
            return Err(OracleError::BudgetExhausted { lower_bound: d });
        }
        d += 1;
        let mut next = Vec::new();
        for v in &frontier {
            for s in &steps {
                let u: Vec<i64> = v.iter().zip(s).map(|(a, b)| a + b).collect();
                if !dist.contains_key(&u) {
                    dist.insert(u.clone(), d);
                    if needed.remove(&u) {
                        best = d;
                    }
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    Ok(best)
}

/// `‖u₁‖ + Σ‖u_i⁻¹u_{i+1}‖ + ‖u_N‖` for the conjugators of `E`.
pub fn noise(e: &Expression) -> u64 {
    let mut total = 0u64;
    let mut prev = Word::empty();
    for t in &e.terms {
        total += prev.inverse().concat(&t.conj).reduced_len() as u64;
        prev = t.conj.clone();
    }
    total + prev.reduced_len() as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowNoise {
    pub expression: Expression,
    pub area: u64,
    pub noise: u64,
    pub bound: u64,
}

/// Finds a minimal-area expression for `w` whose conjugator noise is at
/// most `|w| + 2LN`.
pub fn low_noise_search(p: &Presentation, w: &Word, budget: &SearchBudget) -> Result<LowNoise> {
    let found = exact_search(p, w, budget)?;
    let (area, witness) = match found.verdict {
        AreaVerdict::Area { area, witness } => (area, witness),
        AreaVerdict::NotNullHomotopic => return Err(OracleError::NotNullHomotopic),
        AreaVerdict::BudgetExhausted { lower_bound } => return Err(OracleError::BudgetExhausted { lower_bound }),
    };
    let bound = w.len() as u64 + 2 * p.max_relator_len() as u64 * area;
    let mut candidates = vec![sequence_to_expression(p, &witness)?.reduced()];
    if let Some(e) = found.expression {
        candidates.push(e.reduced());
    }
    let best = candidates.into_iter().min_by_key(noise).expect("nonempty");
    if noise(&best) <= bound {
        return Ok(LowNoise { noise: noise(&best), expression: best, area, bound });
    }
    let e = bounded_noise_expression(p, w, area, bound, budget)?;
    validate_expression(p, &e, w, None)?;
    Ok(LowNoise { noise: noise(&e), expression: e, area, bound })
}

/// Search over peelings `z = x ρ x⁻¹ · z′` with `x` built from a prefix of
/// the current reduced word, deepest first, for an expression of area
/// exactly `n` with noise at most `bound`.
fn bounded_noise_expression(p: &Presentation, w: &Word, n: u64, bound: u64, budget: &SearchBudget) -> Result<Expression> {
    let table = MoveTable::new(p);
    let cap = budget.len_cap(p, w);
    let mut areas: HashMap<(Word, u64), bool> = HashMap::new();
    let mut has_area = |z: &Word, want: u64| -> bool {
        let key = settle(z).0;
        *areas.entry((key.clone(), want)).or_insert_with(|| {
            let b = budget.clone().with_max_len(cap).with_max_area(want);
            area_exact(p, &key, &b).area() == Some(want)
        })
    };
    type Node = (Word, u64, Word);
    let start: Node = (w.free_reduce(), 0, Word::empty());
    let mut best: HashMap<Node, u64> = HashMap::new();
    let mut back: HashMap<Node, (Node, Term)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    best.insert(start.clone(), 0);
    heap.push((0u64, Reverse(0u64), Reverse(counter), start));
    while let Some((_, Reverse(cost), _, node)) = heap.pop() {
        if best.get(&node).is_some_and(|&c| c < cost) {
            continue;
        }
        let (z, a, prev) = &node;
        if z.is_empty() && *a == n {
            let mut terms = Vec::new();
            let mut cur = node.clone();
            while let Some((par, t)) = back.get(&cur) {
                terms.push(t.clone());
                cur = par.clone();
            }
            terms.reverse();
            return Ok(Expression { terms });
        }
        if *a >= n || best.len() > budget.max_states {
            continue;
        }
        let zl = z.letters();
        for pos in 0..zl.len() {
            let mut t = 0;
            let mut trie_node = 0;
            while pos + t < zl.len() {
                match table.children[trie_node].get(&zl[pos + t]) {
                    Some(&nx) => trie_node = nx,
                    None => break,
                }
                t += 1;
                for &ci in &table.ends[trie_node] {
                    let (c, loc) = &table.conjugates[ci];
                    let rho = p.signed_relator(loc.rel, loc.sign);
                    let alpha = z.prefix(pos);
                    let c1 = rho.suffix_from(loc.rot);
                    let conj = if loc.rot == 0 {
                        alpha.clone()
                    } else if c1.len() <= t {
                        alpha.concat(&c1)
                    } else {
                        alpha.concat(&rho.prefix(loc.rot).inverse())
                    }
                    .free_reduce();
                    let z2 = alpha.concat(&c.suffix_from(t).inverse()).concat(&z.suffix_from(pos + t)).free_reduce();
                    if !has_area(&z2, n - a - 1) {
                        continue;
                    }
                    let mut step = prev.inverse().concat(&conj).reduced_len() as u64;
                    if a + 1 == n {
                        step += conj.len() as u64;
                    }
                    let nn: Node = (z2, a + 1, conj.clone());
                    let nc = cost + step;
                    if nc <= bound && best.get(&nn).is_none_or(|&c| nc < c) {
                        best.insert(nn.clone(), nc);
                        back.insert(nn.clone(), (node.clone(), Term { conj, rel: loc.rel, sign: loc.sign }));
                        counter += 1;
                        heap.push((a + 1, Reverse(nc), Reverse(counter), nn));
                    }
                }
            }
        }
    }
    Err(OracleError::NotFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewriting::replay_sequence;
    use crate::words::{commutator, w};
    use proptest::prelude::*;

    fn z2() -> Presentation {
        Presentation::from_strs(&["x", "y"], &["x y x' y'"])
    }

    fn abelian_null(word: &Word) -> bool {
        let mut c: HashMap<Symbol, i64> = HashMap::new();
        for l in word.letters() {
            *c.entry(l.gen()).or_default() += l.sign();
        }
        c.values().all(|&v| v == 0)
    }

    fn xy_commutator(l: i64) -> Word {
        commutator(&w("x").pow(l), &w("y").pow(l))
    }

    #[test]
    fn area_examples() {
        let p = z2();
        let b = SearchBudget::default();
        assert_eq!(area_exact(&p, &w("x y x' y'"), &b).area(), Some(1));
        assert_eq!(area_exact(&p, &xy_commutator(2), &b.clone().with_max_len(12)).area(), Some(4));
        assert_eq!(area_exact(&p, &w("x x'"), &b).area(), Some(0));
        assert_eq!(area_exact(&p, &w("x"), &b), AreaVerdict::NotNullHomotopic);
    }

    #[test]
    fn witness_replays_with_reported_area() {
        let p = z2();
        for l in 1..=3 {
            let word = xy_commutator(l);
            let b = SearchBudget::default().with_max_len(word.len());
            let AreaVerdict::Area { area, witness } = area_exact(&p, &word, &b) else { panic!("no area for l={l}") };
            assert_eq!(area, (l * l) as u64);
            let acc = replay_sequence(&p, &witness, None).unwrap();
            assert_eq!(acc.area, area);
            assert!(acc.end.is_empty());
            assert_eq!(witness.start, word);
        }
    }

    #[test]
    fn area_is_conjugation_and_inversion_invariant() {
        let p = z2();
        let b = SearchBudget::default();
        let word = w("x x y x' y x y x' x' y' y' y'");
        let a = area_exact(&p, &word, &b).area().unwrap();
        assert!(a <= 5);
        assert_eq!(area_exact(&p, &word.inverse(), &b).area(), Some(a));
        for k in 0..word.len() {
            assert_eq!(area_exact(&p, &word.rotate(k), &b).area(), Some(a));
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let p = z2();
        let b = SearchBudget::default().with_max_area(2);
        assert_eq!(area_exact(&p, &xy_commutator(2), &b), AreaVerdict::BudgetExhausted { lower_bound: 3 });
        let b = SearchBudget::default().with_max_states(3);
        assert!(matches!(area_exact(&p, &xy_commutator(3), &b), AreaVerdict::BudgetExhausted { .. }));
    }

    #[test]
    fn heuristic_search_finds_fillings() {
        let p = z2();
        let v = null_homotopy_search(&p, &xy_commutator(3), &SearchBudget::default());
        let AreaVerdict::Area { area, witness } = v else { panic!() };
        assert!(area >= 9);
        assert_eq!(replay_sequence(&p, &witness, None).unwrap().area, area);
    }

    #[test]
    fn dehn_samples() {
        let free = Presentation::from_strs(&["x"], &[]);
        assert_eq!(dehn_sample(&free, 5, &SearchBudget::default(), None).unwrap().value, 0);
        let p = z2();
        let f: &(dyn Fn(&Word) -> bool + Sync) = &abelian_null;
        assert_eq!(dehn_sample(&p, 4, &SearchBudget::default(), Some(f)).unwrap().value, 1);
        let s = dehn_sample(&p, 8, &SearchBudget::default(), Some(f)).unwrap();
        assert_eq!(s.value, 4);
    }

    #[test]
    fn abelian_screen() {
        let p = z2();
        assert!(abelian_obstruction(&p, &w("x")));
        assert!(abelian_obstruction(&p, &w("x x y'")));
        assert!(!abelian_obstruction(&p, &w("x y x' y'")));
        let q = Presentation::from_strs(&["x"], &["x x"]);
        assert!(!abelian_obstruction(&q, &w("x x x x")));
        assert!(abelian_obstruction(&Presentation::from_strs(&["x", "y"], &["x x"]), &w("y")));
    }

    #[test]
    fn word_class_enumeration() {
        let g = [Symbol::intern("x")];
        assert_eq!(cyclic_word_classes(&g, 3), vec![w("x"), w("x x"), w("x x x")]);
    }

    #[test]
    fn direct_product_examples() {
        let spec = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"]]);
        assert!(dp_equal(&spec, &w("x1 y2 x1' y2'"), &Word::empty()).unwrap());
        assert!(!dp_equal(&spec, &w("x1 y1 x1' y1'"), &Word::empty()).unwrap());
        assert!(matches!(dp_equal(&spec, &w("z"), &w("z")), Err(OracleError::AlphabetMismatch(_))));
        assert_eq!(spec.commutator_relators().len(), 4);
    }

    #[test]
    fn raag_examples() {
        let (u, v) = (Symbol::intern("u"), Symbol::intern("v"));
        let edge = move |a: Symbol, b: Symbol| (a == u && b == v) || (a == v && b == u);
        let none = |_: Symbol, _: Symbol| false;
        assert!(raag_equal_by(&edge, &w("u v"), &w("v u")));
        assert!(!raag_equal_by(&none, &w("u v"), &w("v u")));
        assert!(raag_equal_by(&edge, &w("u v u' v'"), &Word::empty()));
    }

    #[test]
    fn cayley_examples() {
        let spec = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"]]);
        let nf = |x: &Word| spec.normal_form(x).unwrap();
        let b = [w("x1 x2'"), w("y1 y2'"), commutator(&w("x1"), &w("y1"))];
        let budget = SearchBudget::default();
        assert!(matches!(cayley_distance(&b, &Word::empty(), &nf, &budget), CayleyVerdict::Distance { n: 0, .. }));
        assert!(matches!(cayley_distance(&b, &b[1], &nf, &budget), CayleyVerdict::Distance { n: 1, .. }));
        let h2 = commutator(&w("x1 x1"), &w("y1 y1"));
        match cayley_distance(&b, &h2, &nf, &budget) {
            CayleyVerdict::Distance { n, path } => {
                assert!(n >= 4);
                let mut prod = Word::empty();
                for (i, s) in path {
                    prod = prod.concat(&b[i].pow(s as i64));
                }
                assert!(dp_equal(&spec, &prod, &h2).unwrap());
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn distortion_examples() {
        let nf = |x: &Word| x.free_reduce();
        let g = [w("x"), w("y")];
        let all = |_: &Word| true;
        let b = SearchBudget::default();
        let s = distortion_sample(&g, &g, 4, &nf, Some(&all), &b).unwrap();
        assert_eq!(s.value, 4);
        let xs = Symbol::intern("x");
        let even_x = move |x: &Word| {
            x.letters().iter().filter(|l| l.gen() == xs).map(|l| l.sign()).sum::<i64>() % 2 == 0
                && x.free_reduce().letters().iter().filter(|l| l.gen() == xs).count() % 2 == 0
        };
        let h = [w("x x"), w("y")];
        let s = distortion_sample(&h, &g, 4, &nf, Some(&even_x), &b);
        assert!(s.is_err() || s.unwrap().value <= 5);
        assert_eq!(
            distortion_sample(&g, &g, 2, &nf, None, &b),
            Err(OracleError::MembershipUndecidable)
        );
    }

    #[test]
    fn exact_departure() {
        let e1 = Symbol::intern("e_1^{(1)}");
        let e2 = Symbol::intern("e_2^{(1)}");
        let theta = ChargeMap::new(2).with(e1, vec![1, 0]).unwrap().with(e2, vec![0, 1]).unwrap();
        let word = Word::from_letters(vec![e1.letter(), e2.letter()]);
        assert_eq!(theta.departure(&word).unwrap(), (1, 2));
        assert_eq!(departure_exact(&theta, &[e1, e2], &word, &SearchBudget::default()).unwrap(), 2);
    }

    #[test]
    fn low_noise_examples() {
        let p = z2();
        for word in [w("x y x' y'"), xy_commutator(2), w("x x y x' y x y x' x' y' y' y'"), xy_commutator(3)] {
            let b = SearchBudget::default().with_max_len(word.len());
            let r = low_noise_search(&p, &word, &b).unwrap();
            assert!(r.noise <= r.bound, "{word}: {} > {}", r.noise, r.bound);
            validate_expression(&p, &r.expression, &word, None).unwrap();
            assert_eq!(r.area, area_exact(&p, &word, &b).area().unwrap());
        }
        assert_eq!(low_noise_search(&p, &w("x"), &SearchBudget::default()), Err(OracleError::NotNullHomotopic));
    }

    fn arb_dp_word(max: usize) -> impl Strategy<Value = Word> {
        let names = ["x1", "y1", "x2", "y2", "x3"];
        prop::collection::vec((0usize..5, any::<bool>()), 0..max).prop_map(move |v| {
            Word::from_letters(v.into_iter().map(|(i, inv)| Letter::new(Symbol::intern(names[i]), inv)).collect())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn dp_equal_is_a_congruence(a in arb_dp_word(8), u in arb_dp_word(5), v in arb_dp_word(5)) {
            let spec = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"], &["x3"]]);
            let shuffled = spec.normal_form(&a).unwrap();
            prop_assert!(dp_equal(&spec, &a, &shuffled).unwrap());
            prop_assert!(dp_equal(&spec, &u.concat(&a).concat(&v), &u.concat(&shuffled).concat(&v)).unwrap());
            prop_assert!(dp_equal(&spec, &a, &a).unwrap());
        }

        #[test]
        fn raag_agrees_with_direct_product(a in arb_dp_word(10), b in arb_dp_word(10)) {
            let spec = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"], &["x3"]]);
            let commutes = |s: Symbol, t: Symbol| spec.factor_of(s) != spec.factor_of(t);
            prop_assert_eq!(raag_equal_by(&commutes, &a, &b), dp_equal(&spec, &a, &b).unwrap());
            let nf = spec.normal_form(&a).unwrap();
            prop_assert!(raag_equal_by(&commutes, &a, &nf));
        }
    }
}
