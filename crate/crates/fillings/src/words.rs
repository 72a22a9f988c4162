//! Letters, words, free reduction, charges and heights.

use std::collections::HashMap;
use std::fmt;
use std::sync::{LazyLock, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("invalid generator name `{0}`")]
    BadName(String),
    #[error("generator `{0}` is not in the domain of the charge map")]
    UnknownGenerator(String),
    #[error("charge vector for `{gen}` has length {got}, expected {rank}")]
    RankMismatch { gen: String, got: usize, rank: usize },
}

struct Interner {
    names: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

static INTERNER: LazyLock<RwLock<Interner>> = LazyLock::new(|| {
    RwLock::new(Interner {
        names: Vec::new(),
        ids: HashMap::new(),
    })
});

/// Interned generator name. Compared by id only.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(u32);

impl Symbol {
    /// Interns `name`, validating it against the generator grammar.
    pub fn new(name: &str) -> Result<Symbol, WordError> {
        if !valid_name(name) {
            return Err(WordError::BadName(name.to_string()));
        }
        Ok(Symbol::intern(name))
    }

    /// Interns without validation; for internally generated names.
    pub fn intern(name: &str) -> Symbol {
        if let Some(&id) = INTERNER.read().unwrap().ids.get(name) {
            return Symbol(id);
        }
        let mut guard = INTERNER.write().unwrap();
        if let Some(&id) = guard.ids.get(name) {
            return Symbol(id);
        }
        let leaked: &'static str = Box::leak(name.to_string().into_boxed_str());
        let id = guard.names.len() as u32;
        guard.names.push(leaked);
        guard.ids.insert(leaked, id);
        Symbol(id)
    }

    pub fn name(self) -> &'static str {
        INTERNER.read().unwrap().names[self.0 as usize]
    }

    pub fn id(self) -> u32 {
        self.0
    }

    pub fn letter(self) -> Letter {
        Letter::new(self, false)
    }

    pub fn inv(self) -> Letter {
        Letter::new(self, true)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || "_^(){}".contains(c))
}

/// A generator or its inverse, packed as `id << 1 | inverted`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter(u32);

impl Letter {
    pub fn new(gen: Symbol, inverted: bool) -> Letter {
        Letter(gen.0 << 1 | inverted as u32)
    }

    pub fn gen(self) -> Symbol {
        Symbol(self.0 >> 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// +1 for a generator, -1 for an inverse.
    pub fn sign(self) -> i64 {
        if self.is_inverse() {
            -1
        } else {
            1
        }
    }

    pub fn inverse(self) -> Letter {
        Letter(self.0 ^ 1)
    }

    pub fn parse(token: &str) -> Result<Letter, WordError> {
        match token.strip_suffix('\'') {
            Some(name) => Ok(Symbol::new(name)?.inv()),
            None => Ok(Symbol::new(token)?.letter()),
        }
    }
}

impl fmt::Debug for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.gen().name())?;
        if self.is_inverse() {
            f.write_str("'")?;
        }
        Ok(())
    }
}

/// Finite sequence of letters. Not necessarily freely reduced.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn empty() -> Word {
        Word(Vec::new())
    }

    pub fn from_letters(letters: Vec<Letter>) -> Word {
        Word(letters)
    }

    pub fn letter(l: Letter) -> Word {
        Word(vec![l])
    }

    /// Parses the literal syntax: whitespace separated tokens, `'` for
    /// inverse, `1` for the empty word.
    pub fn parse(s: &str) -> Result<Word, WordError> {
        let mut letters = Vec::new();
        for tok in s.split_whitespace() {
            if tok == "1" {
                continue;
            }
            letters.push(Letter::parse(tok)?);
        }
        Ok(Word(letters))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn into_letters(self) -> Vec<Letter> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inverse()).collect())
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// The prefix `w[i]` of length `i`.
    pub fn prefix(&self, i: usize) -> Word {
        Word(self.0[..i].to_vec())
    }

    pub fn suffix_from(&self, i: usize) -> Word {
        Word(self.0[i..].to_vec())
    }

    pub fn slice(&self, start: usize, end: usize) -> Word {
        Word(self.0[start..end].to_vec())
    }

    /// `w^n`; negative exponents use the inverse.
    pub fn pow(&self, n: i64) -> Word {
        let base = if n < 0 { self.inverse() } else { self.clone() };
        let mut v = Vec::with_capacity(base.len() * n.unsigned_abs() as usize);
        for _ in 0..n.unsigned_abs() {
            v.extend_from_slice(&base.0);
        }
        Word(v)
    }

    /// Rotation `w[k..] w[..k]`.
    pub fn rotate(&self, k: usize) -> Word {
        let k = if self.is_empty() { 0 } else { k % self.len() };
        let mut v = self.0[k..].to_vec();
        v.extend_from_slice(&self.0[..k]);
        Word(v)
    }

    pub fn free_reduce(&self) -> Word {
        let mut out: Vec<Letter> = Vec::with_capacity(self.len());
        for &l in &self.0 {
            if out.last() == Some(&l.inverse()) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    /// Length of the free reduction.
    pub fn reduced_len(&self) -> usize {
        self.free_reduce().len()
    }

    pub fn is_freely_reduced(&self) -> bool {
        self.0.windows(2).all(|p| p[0] != p[1].inverse())
    }

    pub fn is_freely_trivial(&self) -> bool {
        self.free_reduce().is_empty()
    }

    /// Returns `(c, core)` with `self` freely equal to `c core c⁻¹` and
    /// `core` cyclically reduced.
    pub fn cyclic_reduce(&self) -> (Word, Word) {
        let r = self.free_reduce().0;
        let mut i = 0;
        let mut j = r.len();
        while j >= i + 2 && r[i] == r[j - 1].inverse() {
            i += 1;
            j -= 1;
        }
        (Word(r[..i].to_vec()), Word(r[i..j].to_vec()))
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.0.iter().map(|l| l.gen())
    }

    /// Applies a letter substitution `a ↦ f(a)`, extended to inverses.
    pub fn substitute(&self, f: impl Fn(Symbol) -> Word) -> Word {
        let mut v = Vec::new();
        for &l in &self.0 {
            let img = f(l.gen());
            if l.is_inverse() {
                v.extend(img.inverse().0);
            } else {
                v.extend(img.0);
            }
        }
        Word(v)
    }
}

impl From<Vec<Letter>> for Word {
    fn from(v: Vec<Letter>) -> Word {
        Word(v)
    }
}

impl std::ops::Index<usize> for Word {
    type Output = Letter;
    fn index(&self, i: usize) -> &Letter {
        &self.0[i]
    }
}

impl std::ops::Mul for &Word {
    type Output = Word;
    fn mul(self, rhs: &Word) -> Word {
        self.concat(rhs)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("1");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word({self})")
    }
}

impl std::str::FromStr for Word {
    type Err = WordError;
    fn from_str(s: &str) -> Result<Word, WordError> {
        Word::parse(s)
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Word, D::Error> {
        let s = String::deserialize(d)?;
        Word::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Letter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Letter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Letter, D::Error> {
        let s = String::deserialize(d)?;
        Letter::parse(s.trim()).map_err(serde::de::Error::custom)
    }
}

/// `[a, b] = a b a⁻¹ b⁻¹`.
pub fn commutator(a: &Word, b: &Word) -> Word {
    let mut v = a.0.clone();
    v.extend_from_slice(&b.0);
    v.extend(a.inverse().0);
    v.extend(b.inverse().0);
    Word(v)
}

/// `a^b = b a b⁻¹`.
pub fn conjugate(a: &Word, b: &Word) -> Word {
    b.concat(a).concat(&b.inverse())
}

/// Parses a word, panicking on malformed input. For literals in code.
pub fn w(s: &str) -> Word {
    Word::parse(s).unwrap_or_else(|e| panic!("bad word literal `{s}`: {e}"))
}

/// Per-direction heights.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeightVector(pub Vec<u64>);

impl HeightVector {
    pub fn zeros(r: usize) -> HeightVector {
        HeightVector(vec![0; r])
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn sum(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn join(&self, other: &HeightVector) -> HeightVector {
        let n = self.0.len().max(other.0.len());
        HeightVector(
            (0..n)
                .map(|i| {
                    self.0.get(i).copied().unwrap_or(0).max(other.0.get(i).copied().unwrap_or(0))
                })
                .collect(),
        )
    }

    pub fn get(&self, i: usize) -> u64 {
        self.0.get(i).copied().unwrap_or(0)
    }

    pub fn dominated_by(&self, bound: &HeightVector) -> bool {
        self.0.iter().enumerate().all(|(i, &h)| h <= bound.get(i))
    }
}

/// Homomorphism θ from the free group on the generators to ℤʳ.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChargeMap {
    rank: usize,
    charges: HashMap<Symbol, Vec<i64>>,
}

impl ChargeMap {
    pub fn new(rank: usize) -> ChargeMap {
        ChargeMap { rank, charges: HashMap::new() }
    }

    pub fn with(mut self, gen: Symbol, charge: Vec<i64>) -> Result<ChargeMap, WordError> {
        self.set(gen, charge)?;
        Ok(self)
    }

    pub fn set(&mut self, gen: Symbol, charge: Vec<i64>) -> Result<(), WordError> {
        if charge.len() != self.rank {
            return Err(WordError::RankMismatch {
                gen: gen.name().to_string(),
                got: charge.len(),
                rank: self.rank,
            });
        }
        self.charges.insert(gen, charge);
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn generators(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.charges.keys().copied()
    }

    pub fn contains(&self, gen: Symbol) -> bool {
        self.charges.contains_key(&gen)
    }

    pub fn of_symbol(&self, gen: Symbol) -> Result<&[i64], WordError> {
        self.charges
            .get(&gen)
            .map(|v| v.as_slice())
            .ok_or_else(|| WordError::UnknownGenerator(gen.name().to_string()))
    }

    /// Charge of one letter in direction `i`.
    pub fn letter_charge(&self, l: Letter, i: usize) -> Result<i64, WordError> {
        Ok(self.of_symbol(l.gen())?[i] * l.sign())
    }

    pub fn charge(&self, w: &Word) -> Result<Vec<i64>, WordError> {
        let mut acc = vec![0i64; self.rank];
        for &l in w.letters() {
            let c = self.of_symbol(l.gen())?;
            for i in 0..self.rank {
                acc[i] += c[i] * l.sign();
            }
        }
        Ok(acc)
    }

    /// Charge in direction `i` of the prefix of length `j`, for all j.
    pub fn prefix_charges(&self, w: &Word, i: usize) -> Result<Vec<i64>, WordError> {
        let mut out = Vec::with_capacity(w.len() + 1);
        let mut acc = 0i64;
        out.push(0);
        for &l in w.letters() {
            acc += self.letter_charge(l, i)?;
            out.push(acc);
        }
        Ok(out)
    }

    pub fn heights(&self, w: &Word) -> Result<HeightVector, WordError> {
        let mut acc = vec![0i64; self.rank];
        let mut h = vec![0u64; self.rank];
        for &l in w.letters() {
            let c = self.of_symbol(l.gen())?;
            for i in 0..self.rank {
                acc[i] += c[i] * l.sign();
                h[i] = h[i].max(acc[i].unsigned_abs());
            }
        }
        Ok(HeightVector(h))
    }

    pub fn height(&self, w: &Word, i: usize) -> Result<u64, WordError> {
        Ok(self.heights(w)?.0[i])
    }

    /// Bounds on the departure from `ker θ`: `(max_i h_i, Σ_i h_i)`.
    pub fn departure(&self, w: &Word) -> Result<(u64, u64), WordError> {
        let h = self.heights(w)?;
        Ok((h.max(), h.sum()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gens() -> Vec<Symbol> {
        ["a", "b", "c"].iter().map(|s| Symbol::intern(s)).collect()
    }

    fn arb_word(max: usize) -> impl Strategy<Value = Word> {
        prop::collection::vec((0usize..3, any::<bool>()), 0..max).prop_map(|v| {
            let g = gens();
            Word::from_letters(v.into_iter().map(|(i, inv)| Letter::new(g[i], inv)).collect())
        })
    }

    #[test]
    fn parse_and_display() {
        let x = w("x x' y");
        assert_eq!(x.len(), 3);
        assert_eq!(x.to_string(), "x x' y");
        assert_eq!(w("1"), Word::empty());
        assert_eq!(Word::empty().to_string(), "1");
        assert!(Word::parse("2x").is_err());
        assert_eq!(w("e_1^{(2)}'").len(), 1);
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(w("x x' y").free_reduce(), w("y"));
        assert_eq!(w("x y x' y'").free_reduce(), w("x y x' y'"));
        assert_eq!(w("a b b' a'").pow(3).free_reduce(), Word::empty());
    }

    #[test]
    fn reduction_matches_exhaustive_free_moves() {
        // Independent check: breadth-first closure under single cancellations
        // always reaches the stack-reduced word.
        let word = w("a b b' a'").pow(3);
        let mut frontier = vec![word.clone()];
        let mut seen = std::collections::HashSet::new();
        let mut minimal = word.clone();
        while let Some(cur) = frontier.pop() {
            if cur.len() < minimal.len() {
                minimal = cur.clone();
            }
            for i in 0..cur.len().saturating_sub(1) {
                if cur[i] == cur[i + 1].inverse() {
                    let mut v = cur.letters().to_vec();
                    v.drain(i..i + 2);
                    let n = Word::from_letters(v);
                    if seen.insert(n.clone()) {
                        frontier.push(n);
                    }
                }
            }
        }
        assert_eq!(minimal, word.free_reduce());
        assert!(minimal.is_empty());
    }

    #[test]
    fn charges_and_heights() {
        let e11 = Symbol::intern("e_1^{(1)}");
        let e12 = Symbol::intern("e_1^{(2)}");
        let theta = ChargeMap::new(1).with(e11, vec![1]).unwrap().with(e12, vec![1]).unwrap();
        assert_eq!(theta.charge(&Word::empty()).unwrap(), vec![0]);
        let u = Word::from_letters(vec![e11.letter(), e12.inv()]);
        assert_eq!(theta.charge(&u).unwrap(), vec![0]);
        let v = Word::from_letters(vec![e11.letter(), e11.letter()]);
        assert_eq!(theta.charge(&v).unwrap(), vec![2]);
        let z = Word::from_letters(vec![e11.letter(), e11.inv()]);
        assert_eq!(theta.heights(&z).unwrap(), HeightVector(vec![1]));
        assert!(theta.charge(&w("zz")).is_err());
    }

    #[test]
    fn departure_sandwich() {
        let e11 = Symbol::intern("e_1^{(1)}");
        let e21 = Symbol::intern("e_2^{(1)}");
        let theta = ChargeMap::new(2)
            .with(e11, vec![1, 0])
            .unwrap()
            .with(e21, vec![0, 1])
            .unwrap();
        assert_eq!(theta.departure(&Word::empty()).unwrap(), (0, 0));
        let u = Word::from_letters(vec![e11.letter(), e21.letter()]);
        assert_eq!(theta.departure(&u).unwrap(), (1, 2));
    }

    #[test]
    fn cyclic_reduce_conjugates() {
        let x = w("a b c b' a'");
        let (c, core) = x.cyclic_reduce();
        assert_eq!(core, w("c"));
        assert_eq!(c, w("a b"));
    }

    proptest! {
        #[test]
        fn reduce_idempotent(x in arb_word(16)) {
            let r = x.free_reduce();
            prop_assert_eq!(r.free_reduce(), r.clone());
            prop_assert!(r.len() <= x.len());
            prop_assert_eq!(r.len() % 2, x.len() % 2);
            prop_assert!(r.is_freely_reduced());
        }

        #[test]
        fn inverse_involution(x in arb_word(16)) {
            prop_assert_eq!(x.inverse().inverse(), x.clone());
            prop_assert!(x.concat(&x.inverse()).is_freely_trivial());
        }

        #[test]
        fn charge_additive(x in arb_word(12), y in arb_word(12)) {
            let g = gens();
            let theta = ChargeMap::new(2)
                .with(g[0], vec![1, 0]).unwrap()
                .with(g[1], vec![0, 1]).unwrap()
                .with(g[2], vec![1, -1]).unwrap();
            let cx = theta.charge(&x).unwrap();
            let cy = theta.charge(&y).unwrap();
            let cxy = theta.charge(&x.concat(&y)).unwrap();
            prop_assert_eq!(cxy, vec![cx[0] + cy[0], cx[1] + cy[1]]);
            let ci = theta.charge(&x.inverse()).unwrap();
            prop_assert_eq!(ci, vec![-cx[0], -cx[1]]);
            let h = theta.heights(&x).unwrap();
            for i in 0..2 {
                prop_assert!(h.0[i] >= cx[i].unsigned_abs());
            }
            if cx == vec![0, 0] {
                prop_assert_eq!(theta.heights(&x.inverse()).unwrap(), h);
            }
            prop_assert!(theta.charge(&x.free_reduce()).unwrap() == cx);
        }
    }
}
