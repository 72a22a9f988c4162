//! Presentation and generating-set factories: the kernels `K^n_m(r)`,
//! basis adaptation, fibre products, infinite presentations of kernels of
//! cyclic extensions, the fixed presentations of `K^3_2(1)` and `K^3_2(2)`,
//! commutator witness words and the depth of coabelian subgroups.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{DirectProductSpec, OracleError};
use crate::rewriting::{Presentation, RewriteError};
use crate::words::{commutator, conjugate, ChargeMap, Letter, Symbol, Word, WordError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstructError {
    #[error("need n >= 2 factors, got {0}")]
    TooFewFactors(usize),
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("matrix does not surject onto Z^{0}")]
    NotSurjective(usize),
    #[error("no lift matches the image of `{0}`")]
    ImagesNotMatched(String),
    #[error("missing choice word: {0}")]
    MissingChoiceWords(String),
    #[error("negative index requires w_minus for `{0}`")]
    NegativeIndexRequiresWMinus(String),
    #[error("integer overflow during column reduction")]
    Overflow,
    #[error(transparent)]
    Word(#[from] WordError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

type Result<T> = std::result::Result<T, ConstructError>;

const LETTERS: &[&str] = &["x", "y", "z", "u", "v", "w", "p", "q", "s", "c"];

/// Shape of `K^n_m(r)`: `n` free factors of rank `m`, the first `r` basis
/// letters of every factor charged along the coordinate directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnmrSpec {
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

impl KnmrSpec {
    pub fn new(n: usize, m: usize, r: usize) -> Result<KnmrSpec> {
        if n == 0 || m == 0 || r == 0 || r > m || m > LETTERS.len() {
            return Err(ConstructError::BadSpec(format!("(n, m, r) = ({n}, {m}, {r})")));
        }
        Ok(KnmrSpec { n, m, r })
    }

    /// `e_j^(i)`, both indices 1-based; `x_i`, `y_i`, … in factor `i`.
    pub fn basis(&self, j: usize, i: usize) -> Symbol {
        Symbol::intern(&format!("{}{}", LETTERS[j - 1], i))
    }

    pub fn factors(&self) -> Vec<Vec<Symbol>> {
        (1..=self.n).map(|i| (1..=self.m).map(|j| self.basis(j, i)).collect()).collect()
    }

    pub fn direct_product(&self) -> DirectProductSpec {
        DirectProductSpec::new(self.factors()).expect("distinct names").with_theta(knmr_charge(self))
    }
}

/// `θ(e_j^(i)) = t_j` for `j ≤ r`, else 0.
pub fn knmr_charge(spec: &KnmrSpec) -> ChargeMap {
    let mut theta = ChargeMap::new(spec.r);
    for i in 1..=spec.n {
        for j in 1..=spec.m {
            let mut c = vec![0; spec.r];
            if j <= spec.r {
                c[j - 1] = 1;
            }
            theta.set(spec.basis(j, i), c).expect("rank matches");
        }
    }
    theta
}

/// Generators of `K^n_m(r)` as words in the ambient basis.
pub fn knmr_generators(spec: &KnmrSpec) -> Result<Vec<Word>> {
    if spec.n < 2 {
        return Err(ConstructError::TooFewFactors(spec.n));
    }
    let e = |j, i| Word::letter(spec.basis(j, i).letter());
    let mut out = Vec::new();
    for j in 1..=spec.r {
        for k in 2..=spec.n {
            out.push(e(j, 1).concat(&e(j, k).inverse()));
        }
    }
    for j in spec.r + 1..=spec.m {
        for k in 1..=spec.n {
            out.push(e(j, k));
        }
    }
    if spec.n == 2 {
        for i in 1..=spec.r {
            for j in i + 1..=spec.r {
                out.push(commutator(&e(i, 1), &e(j, 1)));
            }
        }
    }
    Ok(out)
}

/// Unimodular `B` with `φ B = [I_r | 0]`, by integer column operations.
pub fn adapt_basis(phi: &[Vec<i64>]) -> Result<Vec<Vec<i64>>> {
    let r = phi.len();
    let m = phi.first().map_or(0, |row| row.len());
    if phi.iter().any(|row| row.len() != m) || r > m {
        return Err(ConstructError::BadSpec(format!("{r}x{m} matrix with ragged rows or r > m")));
    }
    let mut a: Vec<Vec<i128>> = phi.iter().map(|row| row.iter().map(|&x| x as i128).collect()).collect();
    let mut b: Vec<Vec<i128>> = (0..m).map(|i| (0..m).map(|j| (i == j) as i128).collect()).collect();
    let col_op = |a: &mut Vec<Vec<i128>>, b: &mut Vec<Vec<i128>>, dst: usize, src: usize, q: i128| -> Result<()> {
        for mat in [a, b] {
            for row in mat.iter_mut() {
                row[dst] = row[dst].checked_sub(q.checked_mul(row[src]).ok_or(ConstructError::Overflow)?).ok_or(ConstructError::Overflow)?;
            }
        }
        Ok(())
    };
    let swap = |a: &mut Vec<Vec<i128>>, b: &mut Vec<Vec<i128>>, i: usize, j: usize| {
        for row in a.iter_mut().chain(b.iter_mut()) {
            row.swap(i, j);
        }
    };
    for i in 0..r {
        loop {
            let nz: Vec<usize> = (i..m).filter(|&j| a[i][j] != 0).collect();
            let Some(&p) = nz.iter().min_by_key(|&&j| a[i][j].abs()) else {
                return Err(ConstructError::NotSurjective(r));
            };
            swap(&mut a, &mut b, i, p);
            if nz.len() == 1 {
                break;
            }
            for j in i + 1..m {
                let q = a[i][j].div_euclid(a[i][i]);
                if q != 0 {
                    col_op(&mut a, &mut b, j, i, q)?;
                }
            }
        }
        if a[i][i].abs() != 1 {
            return Err(ConstructError::NotSurjective(r));
        }
        if a[i][i] < 0 {
            for row in a.iter_mut().chain(b.iter_mut()) {
                row[i] = -row[i];
            }
        }
        for j in 0..i {
            let q = a[i][j];
            if q != 0 {
                col_op(&mut a, &mut b, j, i, q)?;
            }
        }
    }
    b.iter().map(|row| row.iter().map(|&x| i64::try_from(x).map_err(|_| ConstructError::Overflow)).collect()).collect()
}

pub fn mat_mul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let k = b.len();
    let m = b.first().map_or(0, |r| r.len());
    a.iter().map(|row| (0..m).map(|j| (0..k).map(|t| row[t] * b[t][j]).sum()).collect()).collect()
}

/// Determinant by fraction-free elimination.
pub fn determinant(a: &[Vec<i64>]) -> i128 {
    let n = a.len();
    let mut m: Vec<Vec<i128>> = a.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n {
        let Some(p) = (k..n).find(|&i| m[i][k] != 0) else {
            return 0;
        };
        if p != k {
            m.swap(p, k);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
            m[i][k] = 0;
        }
        prev = m[k][k];
    }
    if n == 0 {
        1
    } else {
        sign * m[n - 1][n - 1]
    }
}

/// Rank over `Q` of a list of integer row vectors.
pub fn rational_rank(rows: &[Vec<i64>]) -> usize {
    let mut m: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(p, rank);
        for i in rank + 1..m.len() {
            if m[i][c] != 0 {
                let (a, b) = (m[rank][c], m[i][c]);
                let g = gcd(a, b);
                for j in c..cols {
                    m[i][j] = m[i][j] * (a / g) - m[rank][j] * (b / g);
                }
            }
        }
        rank += 1;
    }
    rank
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Depth of `H = ker θ` in `D`: `n` minus the largest `k` such that every
/// projection of `H` to `k` factors has finite index. The projection to
/// the factors `S` has finite index iff the charges of the remaining
/// factors span a finite-index subgroup of `θ(D)`.
pub fn depth_coabelian(spec: &DirectProductSpec, theta: &ChargeMap) -> Result<usize> {
    let n = spec.factor_count();
    let charges: Vec<Vec<Vec<i64>>> = spec
        .factors()
        .iter()
        .map(|f| f.iter().map(|&s| theta.of_symbol(s).map(|c| c.to_vec())).collect::<std::result::Result<_, _>>())
        .collect::<std::result::Result<_, _>>()?;
    let span_rank = |mask: u64| -> usize {
        let rows: Vec<Vec<i64>> = (0..n).filter(|i| mask >> i & 1 == 1).flat_map(|i| charges[i].iter().cloned()).collect();
        rational_rank(&rows)
    };
    let full = span_rank((1u64 << n) - 1);
    for j in 0..=n {
        let ok = (0u64..1 << n).into_par_iter().filter(|m| m.count_ones() as usize == j).all(|m| span_rank(m) == full);
        if ok {
            return Ok(j);
        }
    }
    Ok(n)
}

/// `ChargeMap` plus factor structure from a depth input file.
#[derive(Debug, Deserialize)]
pub struct ThetaFile {
    pub rank: usize,
    pub charges: BTreeMap<String, Vec<i64>>,
    #[serde(default)]
    pub factors: Option<Vec<Vec<String>>>,
}

impl ThetaFile {
    /// Factors default to grouping generators by their trailing digits.
    pub fn into_parts(self) -> Result<(DirectProductSpec, ChargeMap)> {
        let mut theta = ChargeMap::new(self.rank);
        for (g, c) in &self.charges {
            theta.set(Symbol::new(g)?, c.clone())?;
        }
        let factors: Vec<Vec<Symbol>> = match self.factors {
            Some(f) => f.iter().map(|names| names.iter().map(|n| Symbol::new(n)).collect::<std::result::Result<_, _>>()).collect::<std::result::Result<_, _>>()?,
            None => {
                let mut groups: BTreeMap<String, Vec<Symbol>> = BTreeMap::new();
                for g in self.charges.keys() {
                    let suffix: String = g.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<Vec<_>>().into_iter().rev().collect();
                    if suffix.is_empty() {
                        return Err(ConstructError::BadSpec(format!("generator `{g}` has no factor suffix; supply \"factors\"")));
                    }
                    groups.entry(suffix).or_default().push(Symbol::new(g)?);
                }
                let mut v: Vec<(u64, Vec<Symbol>)> = groups.into_iter().map(|(k, v)| (k.parse().unwrap_or(u64::MAX), v)).collect();
                v.sort_by_key(|(k, _)| *k);
                v.into_iter().map(|(_, s)| s).collect()
            }
        };
        Ok((DirectProductSpec::new(factors)?, theta))
    }
}

/// One side of a fibre product: a generating set and its images in `Z^q`.
#[derive(Clone, Debug)]
pub struct FiberMap {
    pub generators: Vec<Symbol>,
    pub images: ChargeMap,
}

/// Generating set of a fibre product, as words over both alphabets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberGenerators {
    pub x_bar: Vec<(Word, Word)>,
    pub a_bar: Vec<Word>,
    pub r_bar: Vec<Word>,
}

impl FiberGenerators {
    pub fn words(&self) -> Vec<Word> {
        self.x_bar.iter().map(|(a, b)| a.concat(b)).chain(self.a_bar.iter().cloned()).chain(self.r_bar.iter().cloned()).collect()
    }
}

fn neg(v: &[i64]) -> Vec<i64> {
    v.iter().map(|x| -x).collect()
}

fn matching_letters(side: &FiberMap, image: &[i64]) -> Result<Vec<Letter>> {
    let mut out = Vec::new();
    for &g in &side.generators {
        let c = side.images.of_symbol(g)?;
        if c == image {
            out.push(g.letter());
        } else if c == neg(image).as_slice() {
            out.push(g.inv());
        }
    }
    Ok(out)
}

/// Generators of `{(γ_1, γ_2) : p_1(γ_1) = p_2(γ_2)}` for `p_i` onto
/// `Z^q`; `quotient` presents the image with generators matched to images
/// by `quotient_images`.
pub fn fiber_generators(p1: &FiberMap, p2: &FiberMap, quotient: &Presentation, quotient_images: &ChargeMap) -> Result<FiberGenerators> {
    let mut x_bar = Vec::new();
    for &x in &p1.generators {
        let c = p1.images.of_symbol(x)?;
        let left = Word::letter(x.letter());
        if c.iter().all(|&v| v == 0) {
            x_bar.push((left, Word::empty()));
            continue;
        }
        let lifts = matching_letters(p2, c)?;
        if lifts.is_empty() {
            return Err(ConstructError::ImagesNotMatched(x.name().to_string()));
        }
        x_bar.extend(lifts.into_iter().map(|l| (left.clone(), Word::letter(l))));
    }
    let mut a_bar = Vec::new();
    for &g in &p2.generators {
        let c = p2.images.of_symbol(g)?;
        if c.iter().all(|&v| v == 0) {
            a_bar.push(Word::letter(g.letter()));
        } else if matching_letters(p1, c)?.is_empty() {
            return Err(ConstructError::ImagesNotMatched(g.name().to_string()));
        }
    }
    let mut lift: HashMap<Symbol, Letter> = HashMap::new();
    for &q in quotient.generators() {
        let c = quotient_images.of_symbol(q)?;
        let l = *matching_letters(p1, c)?.first().ok_or_else(|| ConstructError::ImagesNotMatched(q.name().to_string()))?;
        lift.insert(q, l);
    }
    let r_bar = quotient.relators().iter().map(|r| r.substitute(|s| Word::letter(lift[&s]))).collect();
    Ok(FiberGenerators { x_bar, a_bar, r_bar })
}

/// Peiffer sequence `(u_1 r_1 u_1⁻¹, …)`: conjugators over the quotient
/// generators and relator indices into the quotient presentation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeifferSequence(pub Vec<(Word, usize)>);

/// Inputs of the fibre-product presentation. Quotient generators are
/// matched by position with `x1` and with the lifts `x2`.
#[derive(Clone, Debug)]
pub struct FiberSpec {
    pub x1: Vec<Symbol>,
    pub a1: Vec<Symbol>,
    pub x2: Vec<Symbol>,
    pub a2: Vec<Symbol>,
    pub quotient: Presentation,
    /// `w_{axε}` with `x^ε a x^{-ε} = w_{axε}`, keyed by `(a, x, ε)`.
    pub conj_words: HashMap<(Symbol, Symbol, i8), Word>,
    /// `w_r` with `r(X_1) = w_r`, one per quotient relator.
    pub quotient_relator_words: Vec<Word>,
    /// Relators of `N_1` among the `A_1`.
    pub r3: Vec<Word>,
    /// Relators of `Γ_2` over `X_2 ∪ A_2`.
    pub r4: Vec<Word>,
    /// `w_r` over `A_1` with `r(X̄, Ā_2) = w_r(Ā_1)`, one per `r4` entry.
    pub gamma2_relator_words: Vec<Word>,
}

#[derive(Clone, Debug)]
pub struct FiberPresentation {
    pub presentation: Presentation,
    /// Relator counts of `S_1 … S_6`.
    pub family_sizes: [usize; 6],
    /// False when no Peiffer data was supplied and `S_6` is absent.
    pub complete: bool,
}

#[derive(Debug, Deserialize)]
struct ConjWordEntry {
    a: String,
    x: String,
    eps: i8,
    word: Word,
}

#[derive(Debug, Deserialize)]
pub struct FiberSpecFile {
    x1: Vec<String>,
    #[serde(default)]
    a1: Vec<String>,
    x2: Vec<String>,
    #[serde(default)]
    a2: Vec<String>,
    quotient_generators: Vec<String>,
    #[serde(default)]
    quotient_relators: Vec<Word>,
    #[serde(default)]
    conj_words: Vec<ConjWordEntry>,
    #[serde(default)]
    quotient_relator_words: Vec<Word>,
    #[serde(default)]
    r3: Vec<Word>,
    #[serde(default)]
    r4: Vec<Word>,
    #[serde(default)]
    gamma2_relator_words: Vec<Word>,
    #[serde(default)]
    pub peiffer: Option<Vec<PeifferSequence>>,
}

impl FiberSpecFile {
    pub fn into_spec(self) -> Result<(FiberSpec, Option<Vec<PeifferSequence>>)> {
        let syms = |v: &[String]| v.iter().map(|s| Symbol::new(s)).collect::<std::result::Result<Vec<_>, _>>();
        let quotient = Presentation::new(syms(&self.quotient_generators)?, self.quotient_relators)?;
        let mut conj_words = HashMap::new();
        for e in self.conj_words {
            conj_words.insert((Symbol::new(&e.a)?, Symbol::new(&e.x)?, e.eps.signum()), e.word);
        }
        let spec = FiberSpec {
            x1: syms(&self.x1)?,
            a1: syms(&self.a1)?,
            x2: syms(&self.x2)?,
            a2: syms(&self.a2)?,
            quotient,
            conj_words,
            quotient_relator_words: self.quotient_relator_words,
            r3: self.r3,
            r4: self.r4,
            gamma2_relator_words: self.gamma2_relator_words,
        };
        Ok((spec, self.peiffer))
    }
}

/// Generator names of the fibre product: `{x1}_{x2}`, `{a}_L`, `{a}_R`.
pub fn pair_symbol(x1: Symbol, x2: Symbol) -> Symbol {
    Symbol::intern(&format!("{x1}_{x2}"))
}

pub fn left_symbol(a: Symbol) -> Symbol {
    Symbol::intern(&format!("{a}_L"))
}

pub fn right_symbol(a: Symbol) -> Symbol {
    Symbol::intern(&format!("{a}_R"))
}

impl FiberSpec {
    fn check(&self) -> Result<()> {
        let q = self.quotient.generators().len();
        if self.x1.len() != q || self.x2.len() != q {
            return Err(ConstructError::BadSpec(format!("|X_1| = {}, |X_2| = {}, quotient has {q} generators", self.x1.len(), self.x2.len())));
        }
        if self.quotient_relator_words.len() != self.quotient.relators().len() {
            return Err(ConstructError::MissingChoiceWords("w_r for quotient relators".into()));
        }
        if self.gamma2_relator_words.len() != self.r4.len() {
            return Err(ConstructError::MissingChoiceWords("w_r for relators of the second factor".into()));
        }
        for &a in &self.a1 {
            for &x in &self.x1 {
                for e in [1, -1] {
                    if !self.conj_words.contains_key(&(a, x, e)) {
                        return Err(ConstructError::MissingChoiceWords(format!("w_{{{a},{x},{e}}}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn pair_of(&self) -> HashMap<Symbol, Symbol> {
        let mut m = HashMap::new();
        for (i, &q) in self.quotient.generators().iter().enumerate() {
            m.insert(q, self.x1[i]);
        }
        m
    }

    /// `x^ε v x^{-ε}` rewritten over `A_1` with the choice words.
    fn conjugate_a1(&self, x: Letter, v: &Word) -> Word {
        let eps = if x.is_inverse() { -1 } else { 1 };
        v.substitute(|a| self.conj_words[&(a, x.gen(), eps)].clone())
    }

    /// `Z_σ` over `A_1`.
    pub fn peiffer_word(&self, sigma: &PeifferSequence) -> Result<Word> {
        let lift = self.pair_of();
        let mut out = Word::empty();
        for (u, ri) in &sigma.0 {
            let mut v = self
                .quotient_relator_words
                .get(*ri)
                .ok_or_else(|| ConstructError::BadSpec(format!("relator index {ri} out of range")))?
                .clone();
            for &l in u.letters().iter().rev() {
                let x = *lift.get(&l.gen()).ok_or_else(|| ConstructError::BadSpec(format!("`{}` is not a quotient generator", l.gen())))?;
                v = self.conjugate_a1(Letter::new(x, l.is_inverse()), &v);
            }
            out = out.concat(&v);
        }
        Ok(out)
    }
}

/// Finite presentation of the fibre product from the relator families
/// `S_1 … S_6`.
pub fn fiber_presentation(spec: &FiberSpec, peiffer: Option<&[PeifferSequence]>) -> Result<FiberPresentation> {
    spec.check()?;
    let xbar: HashMap<Symbol, Symbol> = spec.x1.iter().zip(&spec.x2).map(|(&a, &b)| (a, pair_symbol(a, b))).collect();
    let xbar2: HashMap<Symbol, Symbol> = spec.x1.iter().zip(&spec.x2).map(|(&a, &b)| (b, pair_symbol(a, b))).collect();
    let left = |w: &Word| -> Word { w.substitute(|s| Word::letter(xbar.get(&s).copied().unwrap_or_else(|| left_symbol(s)).letter())) };
    let right = |w: &Word| -> Word { w.substitute(|s| Word::letter(xbar2.get(&s).copied().unwrap_or_else(|| right_symbol(s)).letter())) };
    let gens: Vec<Symbol> = spec
        .x1
        .iter()
        .map(|x| xbar[x])
        .chain(spec.a1.iter().map(|&a| left_symbol(a)))
        .chain(spec.a2.iter().map(|&a| right_symbol(a)))
        .collect();
    let lw = |s: Symbol| Word::letter(s.letter());

    let s1: Vec<Word> = spec.a1.iter().flat_map(|&a| spec.a2.iter().map(move |&b| commutator(&lw(left_symbol(a)), &lw(right_symbol(b))))).collect();
    let mut r1 = Vec::new();
    for &a in &spec.a1 {
        for &x in &spec.x1 {
            for e in [1i8, -1] {
                let xe = Word::letter(Letter::new(x, e < 0));
                r1.push(conjugate(&lw(a), &xe).concat(&spec.conj_words[&(a, x, e)].inverse()));
            }
        }
    }
    let s2: Vec<Word> = r1.iter().map(left).collect();
    let s3: Vec<Word> = spec.r3.iter().map(left).collect();
    let lift = spec.pair_of();
    let r2: Vec<Word> = spec
        .quotient
        .relators()
        .iter()
        .zip(&spec.quotient_relator_words)
        .map(|(r, wr)| r.substitute(|q| lw(lift[&q])).concat(&wr.inverse()))
        .collect();
    let s4: Vec<Word> = r2.iter().flat_map(|r| spec.a1.iter().map(|&a| commutator(&left(r), &lw(left_symbol(a))))).collect();
    let s5: Vec<Word> = spec.r4.iter().zip(&spec.gamma2_relator_words).map(|(r, wr)| right(r).concat(&left(wr).inverse())).collect();
    let s6: Vec<Word> = match peiffer {
        Some(ps) => ps.iter().map(|s| spec.peiffer_word(s).map(|z| left(&z))).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let family_sizes = [s1.len(), s2.len(), s3.len(), s4.len(), s5.len(), s6.len()];
    let relators = [s1, s2, s3, s4, s5, s6].concat();
    Ok(FiberPresentation { presentation: Presentation::new(gens, relators)?, family_sizes, complete: peiffer.is_some() })
}

/// `⟨A, t | R, t a t⁻¹ (w_a⁺)⁻¹⟩` with optional inverse words `w_a⁻`
/// satisfying `t⁻¹ a t = w_a⁻` in the kernel.
#[derive(Clone, Debug)]
pub struct PositiveNormalFormData {
    pub base: Presentation,
    pub stable: Symbol,
    pub w_plus: HashMap<Symbol, Word>,
    pub w_minus: Option<HashMap<Symbol, Word>>,
}

#[derive(Debug, Deserialize)]
pub struct PnfFile {
    generators: Vec<String>,
    #[serde(default)]
    relators: Vec<Word>,
    #[serde(default = "default_stable")]
    stable: String,
    w_plus: BTreeMap<String, Word>,
    #[serde(default)]
    w_minus: Option<BTreeMap<String, Word>>,
}

fn default_stable() -> String {
    "t".into()
}

impl PnfFile {
    pub fn into_data(self) -> Result<PositiveNormalFormData> {
        let gens = self.generators.iter().map(|s| Symbol::new(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let conv = |m: BTreeMap<String, Word>| -> Result<HashMap<Symbol, Word>> { m.into_iter().map(|(k, v)| Ok((Symbol::new(&k)?, v))).collect() };
        Ok(PositiveNormalFormData {
            base: Presentation::new(gens, self.relators)?,
            stable: Symbol::new(&self.stable)?,
            w_plus: conv(self.w_plus)?,
            w_minus: self.w_minus.map(conv).transpose()?,
        })
    }
}

impl PositiveNormalFormData {
    /// The positive normal form presentation of the extension.
    pub fn extension(&self) -> Result<Presentation> {
        let t = Word::letter(self.stable.letter());
        let mut rels = self.base.relators().to_vec();
        for &a in self.base.generators() {
            rels.push(conjugate(&Word::letter(a.letter()), &t).concat(&self.w_plus[&a].inverse()));
        }
        let mut gens = self.base.generators().to_vec();
        gens.push(self.stable);
        Ok(Presentation::new(gens, rels)?)
    }

    /// `Φ_k`: `k`-fold substitution by `w⁺` (or `w⁻` for `k < 0`).
    pub fn phi(&self, k: i64, w: &Word) -> Result<Word> {
        let table = if k >= 0 {
            &self.w_plus
        } else {
            self.w_minus.as_ref().ok_or_else(|| ConstructError::NegativeIndexRequiresWMinus(self.stable.name().to_string()))?
        };
        let mut out = w.clone();
        for _ in 0..k.unsigned_abs() {
            out = out.substitute(|a| table.get(&a).cloned().unwrap_or_else(|| Word::letter(a.letter())));
        }
        Ok(out)
    }

    fn check(&self, bound: u64) -> Result<()> {
        for &a in self.base.generators() {
            if !self.w_plus.contains_key(&a) {
                return Err(ConstructError::MissingChoiceWords(format!("w_plus for `{a}`")));
            }
            if bound >= 1 {
                match &self.w_minus {
                    Some(m) if m.contains_key(&a) => {}
                    _ => return Err(ConstructError::NegativeIndexRequiresWMinus(a.name().to_string())),
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RelatorFamily {
    /// `Φ_k(r)` for the base relator with this index.
    R { relator: usize, k: i64 },
    /// `Φ_{k+1}(a) Φ_k(w_a)⁻¹`.
    S { letter: String, k: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IndexedRelator {
    pub word: Word,
    pub index: u64,
    pub tag: RelatorFamily,
}

/// Members of `R̄ ∪ S̄` with index at most `bound`, deduplicated by word
/// keeping the smallest index.
pub fn cyclic_infinite_presentation(data: &PositiveNormalFormData, bound: u64) -> Result<Vec<IndexedRelator>> {
    data.check(bound)?;
    let b = bound as i64;
    let mut ks: Vec<i64> = (-b..=b).collect();
    ks.sort_by_key(|k| (k.unsigned_abs(), *k < 0));
    let mut seen: HashMap<Word, usize> = HashMap::new();
    let mut out: Vec<IndexedRelator> = Vec::new();
    let mut push = |word: Word, index: u64, tag: RelatorFamily| {
        if !seen.contains_key(&word) {
            seen.insert(word.clone(), out.len());
            out.push(IndexedRelator { word, index, tag });
        }
    };
    for &k in &ks {
        for (i, r) in data.base.relators().iter().enumerate() {
            push(data.phi(k, r)?, k.unsigned_abs(), RelatorFamily::R { relator: i, k });
        }
        for &a in data.base.generators() {
            let word = data.phi(k + 1, &Word::letter(a.letter()))?.concat(&data.phi(k, &data.w_plus[&a])?.inverse());
            push(word, k.unsigned_abs(), RelatorFamily::S { letter: a.name().to_string(), k });
        }
    }
    Ok(out)
}

fn sym(s: &str) -> Word {
    Word::letter(Symbol::intern(s).letter())
}

fn comm(a: &Word, b: &Word) -> Word {
    commutator(a, b)
}

/// The six relators `R` shared by `P_3` and `Q_1`.
fn relators_r1() -> Vec<Word> {
    let (a1, a2, b1, b2) = (sym("alpha1"), sym("alpha2"), sym("beta1"), sym("beta2"));
    let mixed = |s: bool, t: bool| {
        let f = |w: &Word, inv: bool| if inv { w.inverse() } else { w.clone() };
        comm(&f(&a1, s), &f(&b2, t)).concat(&comm(&f(&a2, s), &f(&b1, t)).inverse())
    };
    vec![comm(&a1, &a2), comm(&b1, &b2), mixed(false, false), mixed(true, false), mixed(false, true), mixed(true, true)]
}

fn relators_r2() -> Vec<Word> {
    let (a1, a2, b1, b2) = (sym("alpha1"), sym("alpha2"), sym("beta1"), sym("beta2"));
    vec![
        comm(&a1, &a2),
        comm(&b1, &b2),
        comm(&conjugate(&b2, &a1), &b2.inverse().concat(&b1)),
        comm(&conjugate(&b2, &a1.inverse()), &b2.inverse().concat(&b1)),
        comm(&conjugate(&a2, &b1), &a2.inverse().concat(&a1)),
        comm(&conjugate(&a2, &b1.inverse()), &a2.inverse().concat(&a1)),
        comm(&a1, &b2).concat(&comm(&a2, &b1).inverse()),
    ]
}

/// Fixed presentations of `K^3_2(1)` (`P_1`, `P_2`, `P_3`) and `K^3_2(2)`
/// (`Q_1`, `Q_2`) over `alpha_i = x_1 x_{i+1}⁻¹`, `beta_i = y_1 y_{i+1}⁻¹`,
/// `t = y_1` and `y_i`.
#[derive(Clone, Debug)]
pub struct K32Presentations {
    pub p1: Presentation,
    pub p2: Presentation,
    pub p3: Presentation,
    pub q1: Presentation,
    pub q2: Presentation,
}

impl K32Presentations {
    pub fn by_name(&self, name: &str) -> Option<&Presentation> {
        match name.to_ascii_lowercase().as_str() {
            "p1" => Some(&self.p1),
            "p2" => Some(&self.p2),
            "p3" => Some(&self.p3),
            "q1" => Some(&self.q1),
            "q2" => Some(&self.q2),
            _ => None,
        }
    }
}

pub fn k32_presentations() -> K32Presentations {
    let (a1, a2, b1, b2, t) = (sym("alpha1"), sym("alpha2"), sym("beta1"), sym("beta2"), sym("t"));
    let (y1, y2, y3) = (sym("y1"), sym("y2"), sym("y3"));
    let g = |names: &[&str]| names.iter().map(|n| Symbol::intern(n)).collect::<Vec<_>>();
    let p1 = Presentation::new(
        g(&["alpha1", "alpha2", "y1", "y2", "y3"]),
        vec![
            comm(&a1, &a2),
            comm(&y1, &y2),
            comm(&y1, &y3),
            comm(&y2, &y3),
            comm(&a1, &y3),
            comm(&a2, &y2),
            comm(&a1.inverse().concat(&a2), &y1),
        ],
    )
    .expect("closed alphabet");
    let p2 = Presentation::new(
        g(&["alpha1", "alpha2", "beta1", "beta2", "t"]),
        vec![
            comm(&a1, &a2),
            comm(&b1, &b2),
            comm(&t, &b1),
            comm(&t, &b2),
            comm(&a1, &t.concat(&b2.inverse())),
            comm(&a2, &t.concat(&b1.inverse())),
            comm(&a1.inverse().concat(&a2), &t),
        ],
    )
    .expect("closed alphabet");
    let mut r3 = relators_r1();
    r3.push(comm(&t, &b1));
    r3.push(comm(&t, &b2));
    r3.push(conjugate(&a1, &t).concat(&conjugate(&a1, &b2).inverse()));
    r3.push(conjugate(&a2, &t).concat(&conjugate(&a2, &b1).inverse()));
    let p3 = Presentation::new(g(&["alpha1", "alpha2", "beta1", "beta2", "t"]), r3).expect("closed alphabet");
    let x = g(&["alpha1", "alpha2", "beta1", "beta2"]);
    let q1 = Presentation::new(x.clone(), relators_r1()).expect("closed alphabet");
    let q2 = Presentation::new(x, relators_r2()).expect("closed alphabet");
    K32Presentations { p1, p2, p3, q1, q2 }
}

/// `R_2 \ R_1` and `R_1 \ R_2`: the relators each of `Q_1`, `Q_2` must
/// derive from the other.
pub fn k32_cross_relators() -> (Vec<Word>, Vec<Word>) {
    let (r1, r2) = (relators_r1(), relators_r2());
    let extra2 = r2.iter().filter(|w| !r1.contains(w)).cloned().collect();
    let extra1 = r1.iter().filter(|w| !r2.contains(w)).cloned().collect();
    (extra2, extra1)
}

/// Positive normal form data for `K^3_2(1)` over `K^3_2(2)`, with `t = y_1`.
pub fn k32_normal_form_data() -> PositiveNormalFormData {
    let (a1, a2, b1, b2) = (sym("alpha1"), sym("alpha2"), sym("beta1"), sym("beta2"));
    let s = |n: &str| Symbol::intern(n);
    let w_plus = HashMap::from([
        (s("alpha1"), conjugate(&a1, &b2)),
        (s("alpha2"), conjugate(&a2, &b1)),
        (s("beta1"), b1.clone()),
        (s("beta2"), b2.clone()),
    ]);
    let w_minus = HashMap::from([
        (s("alpha1"), conjugate(&a1, &b2.inverse())),
        (s("alpha2"), conjugate(&a2, &b1.inverse())),
        (s("beta1"), b1.clone()),
        (s("beta2"), b2.clone()),
    ]);
    PositiveNormalFormData { base: k32_presentations().q1, stable: s("t"), w_plus, w_minus: Some(w_minus) }
}

/// Words in `x_i`, `y_i` represented by the named generators.
pub fn k32_embedding(s: Symbol) -> Option<Word> {
    let w = |t: &str| Word::parse(t).expect("literal");
    Some(match s.name() {
        "alpha1" => w("x1 x2'"),
        "alpha2" => w("x1 x3'"),
        "beta1" => w("y1 y2'"),
        "beta2" => w("y1 y3'"),
        "t" | "y1" => w("y1"),
        "y2" => w("y2"),
        "y3" => w("y3"),
        _ => return None,
    })
}

/// `[w, (uv)^n]`.
pub fn witness_word(w: &Word, u: &Word, v: &Word, n: u32) -> Word {
    commutator(w, &u.concat(v).pow(n as i64))
}

/// The commutator witness for the amalgam splitting of `K^3_2(2)`.
#[derive(Clone, Debug)]
pub struct AmalgamWitness {
    /// `[w_l, (y_2 x_2)^n]` in the ambient letters `x_i`, `y_i`.
    pub ambient: Word,
    /// The same word over the vertex-group generators `A_1 ∪ A_2`.
    pub word: Word,
    /// `h_l = [x_1^l, y_1^l]`.
    pub h: Word,
}

pub fn k32_witness(l: u32, n: u32) -> AmalgamWitness {
    let p = |s: &str| Word::parse(s).expect("literal");
    let li = l as i64;
    let ambient = witness_word(&commutator(&p("x1 x2'").pow(li), &p("y1").pow(li)), &p("y2"), &p("x2"), n);
    let word = witness_word(&commutator(&p("a").pow(li), &p("y1").pow(li)), &p("y2"), &p("x2"), n);
    AmalgamWitness { ambient, word, h: commutator(&p("x1").pow(li), &p("y1").pow(li)) }
}

/// Relators over `A_1 = {a, y1, y2}` and `A_2 = {x1, x2, b}`, where
/// `a = x1 x2⁻¹` and `b = y1 y2⁻¹`, that hold in the two vertex groups,
/// plus the identifications of the edge-group generators. Every relator
/// lies in one vertex group's alphabet or identifies the two images of an
/// edge generator.
pub fn amalgam_presentation() -> Presentation {
    let p = |s: &str| Word::parse(s).expect("literal");
    let h1 = commutator(&p("a"), &p("y1"));
    let h2 = commutator(&p("x1"), &p("b"));
    Presentation::new(
        ["a", "y1", "y2", "x1", "x2", "b"].iter().map(|s| Symbol::intern(s)).collect(),
        vec![
            commutator(&p("y1"), &p("y2")),
            commutator(&h1, &p("y2")),
            commutator(&p("x1"), &p("x2")),
            commutator(&h2, &p("x2")),
            p("a x2 x1'"),
            p("b y2 y1'"),
            h1.concat(&h2.inverse()),
        ],
    )
    .expect("closed alphabet")
}

/// Ambient words for the amalgam generators.
pub fn amalgam_embedding(s: Symbol) -> Word {
    match s.name() {
        "a" => Word::parse("x1 x2'").expect("literal"),
        "b" => Word::parse("y1 y2'").expect("literal"),
        _ => Word::letter(s.letter()),
    }
}

/// `B = {x1 x2⁻¹, y1 y2⁻¹, [x1, y1]}` over fresh names `m1, m2, m3`, with
/// their ambient values.
pub fn amalgam_edge_generators() -> Vec<(Symbol, Word)> {
    let p = |s: &str| Word::parse(s).expect("literal");
    vec![
        (Symbol::intern("m1"), p("x1 x2'")),
        (Symbol::intern("m2"), p("y1 y2'")),
        (Symbol::intern("m3"), commutator(&p("x1"), &p("y1"))),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dp_equal;
    use crate::words::w;

    #[test]
    fn knmr_charges_and_generators() {
        let s = KnmrSpec::new(3, 2, 1).unwrap();
        let th = knmr_charge(&s);
        assert_eq!(th.of_symbol(Symbol::intern("x2")).unwrap(), &[1]);
        assert_eq!(th.of_symbol(Symbol::intern("y2")).unwrap(), &[0]);
        assert_eq!(th.charge(&w("x1 y2 x3' y1 x2 x2'")).unwrap(), vec![0]);
        let g = knmr_generators(&KnmrSpec::new(3, 2, 2).unwrap()).unwrap();
        assert_eq!(g, vec![w("x1 x2'"), w("x1 x3'"), w("y1 y2'"), w("y1 y3'")]);
        let g = knmr_generators(&KnmrSpec::new(2, 2, 1).unwrap()).unwrap();
        assert_eq!(g, vec![w("x1 x2'"), w("y1"), w("y2")]);
        let g = knmr_generators(&KnmrSpec::new(2, 3, 2).unwrap()).unwrap();
        assert_eq!(g.last().unwrap(), &w("x1 y1 x1' y1'"));
        assert!(matches!(knmr_generators(&KnmrSpec::new(1, 2, 1).unwrap()), Err(ConstructError::TooFewFactors(1))));
        for (n, m, r) in [(2, 3, 2), (3, 3, 3), (4, 2, 1)] {
            let s = KnmrSpec::new(n, m, r).unwrap();
            let th = knmr_charge(&s);
            for g in knmr_generators(&s).unwrap() {
                assert!(th.charge(&g).unwrap().iter().all(|&c| c == 0));
            }
        }
    }

    #[test]
    fn adapt_basis_examples() {
        assert_eq!(adapt_basis(&[vec![1, 0], vec![0, 1]]).unwrap(), vec![vec![1, 0], vec![0, 1]]);
        for phi in [vec![vec![1, 1]], vec![vec![2, 1]], vec![vec![6, 10, 15]], vec![vec![3, 5, 0], vec![1, 2, 7]]] {
            let b = adapt_basis(&phi).unwrap();
            let prod = mat_mul(&phi, &b);
            for (i, row) in prod.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    assert_eq!(v, (i == j) as i64, "{phi:?}");
                }
            }
            assert_eq!(determinant(&b).abs(), 1);
        }
        assert!(matches!(adapt_basis(&[vec![2, 4]]), Err(ConstructError::NotSurjective(1))));
        assert!(matches!(adapt_basis(&[vec![1, 0], vec![1, 0]]), Err(ConstructError::NotSurjective(2))));
    }

    #[test]
    fn depth_examples() {
        let s = KnmrSpec::new(3, 2, 1).unwrap();
        assert_eq!(depth_coabelian(&s.direct_product(), &knmr_charge(&s)).unwrap(), 1);
        let mut zero = ChargeMap::new(1);
        for g in s.direct_product().generators() {
            zero.set(g, vec![0]).unwrap();
        }
        assert_eq!(depth_coabelian(&s.direct_product(), &zero).unwrap(), 0);
        let mut th = knmr_charge(&s);
        th.set(Symbol::intern("x3"), vec![0]).unwrap();
        assert_eq!(depth_coabelian(&s.direct_product(), &th).unwrap(), 2);
        let s = KnmrSpec::new(4, 2, 2).unwrap();
        assert_eq!(depth_coabelian(&s.direct_product(), &knmr_charge(&s)).unwrap(), 1);
    }

    #[test]
    fn fiber_generators_examples() {
        let sy = Symbol::intern;
        let abelian = |names: &[&str], sign: i64| {
            let mut c = ChargeMap::new(1);
            for n in names {
                c.set(sy(n), vec![sign]).unwrap();
            }
            FiberMap { generators: names.iter().map(|n| sy(n)).collect(), images: c }
        };
        let q = Presentation::from_strs(&["q"], &[]);
        let qi = ChargeMap::new(1).with(sy("q"), vec![1]).unwrap();
        let g = fiber_generators(&abelian(&["fa1", "fb1"], 1), &abelian(&["fa2", "fb2"], 1), &q, &qi).unwrap();
        assert_eq!(g.x_bar.len(), 4);
        assert!(g.a_bar.is_empty() && g.r_bar.is_empty());

        let s = KnmrSpec::new(3, 2, 1).unwrap();
        let th = knmr_charge(&s);
        let p1 = FiberMap { generators: s.factors()[0].clone(), images: th.clone() };
        let mut neg = ChargeMap::new(1);
        for f in &s.factors()[1..] {
            for &g in f {
                neg.set(g, vec![-th.of_symbol(g).unwrap()[0]]).unwrap();
            }
        }
        let p2 = FiberMap { generators: s.factors()[1..].concat(), images: neg };
        let g = fiber_generators(&p1, &p2, &q, &qi).unwrap();
        let words = g.words();
        assert_eq!(words, vec![w("x1 x2'"), w("x1 x3'"), w("y1"), w("y2"), w("y3")]);
        for wd in &words {
            assert_eq!(th.charge(wd).unwrap(), vec![0]);
        }

        let q2 = Presentation::from_strs(&["q", "r"], &["q r q' r'"]);
        let qi2 = ChargeMap::new(2).with(sy("q"), vec![1, 0]).unwrap().with(sy("r"), vec![0, 1]).unwrap();
        let two = |names: &[&str]| {
            let mut c = ChargeMap::new(2);
            c.set(sy(names[0]), vec![1, 0]).unwrap();
            c.set(sy(names[1]), vec![0, 1]).unwrap();
            FiberMap { generators: names.iter().map(|n| sy(n)).collect(), images: c }
        };
        let g = fiber_generators(&two(&["ga1", "gb1"]), &two(&["ga2", "gb2"]), &q2, &qi2).unwrap();
        assert_eq!(g.r_bar, vec![w("ga1 gb1 ga1' gb1'")]);
        let bad = FiberMap { generators: vec![sy("ga2")], images: ChargeMap::new(2).with(sy("ga2"), vec![2, 0]).unwrap() };
        assert!(matches!(fiber_generators(&two(&["ga1", "gb1"]), &bad, &q2, &qi2), Err(ConstructError::ImagesNotMatched(_))));
    }

    fn toy_fiber() -> FiberSpec {
        let sy = Symbol::intern;
        let mut conj = HashMap::new();
        conj.insert((sy("fa"), sy("fx"), 1), w("fa"));
        conj.insert((sy("fa"), sy("fx"), -1), w("fa"));
        FiberSpec {
            x1: vec![sy("fx")],
            a1: vec![sy("fa")],
            x2: vec![sy("gx")],
            a2: vec![sy("ga"), sy("gb")],
            quotient: Presentation::from_strs(&["q"], &[]),
            conj_words: conj,
            quotient_relator_words: vec![],
            r3: vec![],
            r4: vec![],
            gamma2_relator_words: vec![],
        }
    }

    #[test]
    fn fiber_presentation_counts() {
        let spec = toy_fiber();
        let p = fiber_presentation(&spec, None).unwrap();
        assert_eq!(p.family_sizes, [2, 2, 0, 0, 0, 0]);
        assert!(!p.complete);
        assert_eq!(p.presentation.relators()[0], w("fa_L ga_R fa_L' ga_R'"));
        assert_eq!(p.presentation.relators()[2], w("fx_gx fa_L fx_gx' fa_L'"));
        let mut bad = toy_fiber();
        bad.conj_words.clear();
        assert!(matches!(fiber_presentation(&bad, None), Err(ConstructError::MissingChoiceWords(_))));
    }

    #[test]
    fn peiffer_words_conjugate_through_choices() {
        let sy = Symbol::intern;
        let mut spec = toy_fiber();
        spec.quotient = Presentation::from_strs(&["q"], &["q q'"]);
        spec.quotient_relator_words = vec![w("fa")];
        spec.conj_words.insert((sy("fa"), sy("fx"), 1), w("fa fa"));
        let z = spec.peiffer_word(&PeifferSequence(vec![(w("q q"), 0), (w("1"), 0)])).unwrap();
        assert_eq!(z, w("fa fa fa fa fa"));
        let p = fiber_presentation(&spec, Some(&[PeifferSequence(vec![(w("q"), 0)])])).unwrap();
        assert!(p.complete);
        assert_eq!(p.family_sizes[3], 1);
        assert_eq!(p.presentation.relators().last().unwrap(), &w("fa_L fa_L"));
    }

    #[test]
    fn cyclic_presentation_indices() {
        let data = k32_normal_form_data();
        let zero = cyclic_infinite_presentation(&data, 0).unwrap();
        assert_eq!(zero.len(), 10);
        assert!(zero.iter().all(|r| r.index == 0));
        let s_alpha = zero.iter().find(|r| r.tag == RelatorFamily::S { letter: "alpha1".into(), k: 0 }).unwrap();
        assert_eq!(s_alpha.word, w("beta2 alpha1 beta2'").concat(&w("beta2 alpha1 beta2'").inverse()));
        let two = cyclic_infinite_presentation(&data, 2).unwrap();
        let mut seen = std::collections::HashSet::new();
        for r in &two {
            assert!(seen.insert(r.word.clone()));
            assert!(r.index <= 2);
        }
        let mut nominus = data.clone();
        nominus.w_minus = None;
        assert!(cyclic_infinite_presentation(&nominus, 0).is_ok());
        assert!(matches!(cyclic_infinite_presentation(&nominus, 1), Err(ConstructError::NegativeIndexRequiresWMinus(_))));
    }

    #[test]
    fn cyclic_relators_are_kernel_identities() {
        let data = k32_normal_form_data();
        let dp = KnmrSpec::new(3, 2, 2).unwrap().direct_product();
        for r in cyclic_infinite_presentation(&data, 2).unwrap() {
            let amb = r.word.substitute(|s| k32_embedding(s).unwrap());
            assert!(dp_equal(&dp, &amb, &Word::empty()).unwrap(), "{:?}", r.tag);
        }
    }

    #[test]
    fn k32_relators_hold_and_have_charge_zero() {
        let k = k32_presentations();
        assert_eq!(k.q1.relators().len(), 6);
        assert_eq!(k.q2.relators().len(), 7);
        let (e2, e1) = k32_cross_relators();
        assert_eq!((e2.len(), e1.len()), (4, 3));
        let dp = KnmrSpec::new(3, 2, 1).unwrap().direct_product();
        let th1 = knmr_charge(&KnmrSpec::new(3, 2, 1).unwrap());
        let th2 = knmr_charge(&KnmrSpec::new(3, 2, 2).unwrap());
        for (name, p) in [("p1", &k.p1), ("p2", &k.p2), ("p3", &k.p3), ("q1", &k.q1), ("q2", &k.q2)] {
            for g in p.generators() {
                let amb = k32_embedding(*g).unwrap();
                assert_eq!(th1.charge(&amb).unwrap(), vec![0], "{name}");
                if name.starts_with('q') {
                    assert_eq!(th2.charge(&amb).unwrap(), vec![0, 0]);
                }
            }
            for r in p.relators() {
                let amb = r.substitute(|s| k32_embedding(s).unwrap());
                assert!(dp_equal(&dp, &amb, &Word::empty()).unwrap(), "{name}: {r}");
            }
        }
    }

    #[test]
    fn witness_lengths_and_amalgam_relators() {
        for l in 1..=3 {
            assert_eq!(k32_witness(l, l).ambient.len(), 16 * l as usize);
        }
        assert!(witness_word(&w("x1 y1"), &w("y2"), &w("x2"), 0).is_freely_trivial());
        let dp = DirectProductSpec::from_names(&[&["x1", "y1"], &["x2", "y2"]]);
        for r in amalgam_presentation().relators() {
            assert!(dp_equal(&dp, &r.substitute(amalgam_embedding), &Word::empty()).unwrap(), "{r}");
        }
        let wt = k32_witness(2, 1);
        assert!(dp_equal(&dp, &wt.word.substitute(amalgam_embedding), &wt.ambient).unwrap());
        assert!(dp_equal(&dp, &wt.ambient, &Word::empty()).unwrap());
    }
}

#[cfg(test)]
mod depth_props {
    use super::*;
    use proptest::prelude::*;

    fn det(m: &[Vec<i64>]) -> i64 {
        if m.is_empty() {
            return 1;
        }
        (0..m.len())
            .map(|c| {
                let minor: Vec<Vec<i64>> =
                    m[1..].iter().map(|r| r.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, &x)| x).collect()).collect();
                let s = if c % 2 == 0 { 1 } else { -1 };
                s * m[0][c] * det(&minor)
            })
            .sum()
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0u32..1 << n).filter(|m| m.count_ones() as usize == k).map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect()).collect()
    }

    // Rank as the size of the largest nonzero minor.
    fn minor_rank(rows: &[Vec<i64>], cols: usize) -> usize {
        (1..=rows.len().min(cols))
            .rev()
            .find(|&r| {
                subsets(rows.len(), r).iter().any(|rs| {
                    subsets(cols, r).iter().any(|cs| {
                        let m: Vec<Vec<i64>> = rs.iter().map(|&i| cs.iter().map(|&j| rows[i][j]).collect()).collect();
                        det(&m) != 0
                    })
                })
            })
            .unwrap_or(0)
    }

    fn brute_depth(factors: &[Vec<Vec<i64>>], rank: usize) -> usize {
        let n = factors.len();
        let rows = |s: &[usize]| -> Vec<Vec<i64>> { s.iter().flat_map(|&i| factors[i].iter().cloned()).collect() };
        let full = minor_rank(&rows(&(0..n).collect::<Vec<_>>()), rank);
        (0..=n).find(|&j| subsets(n, j).iter().all(|s| minor_rank(&rows(s), rank) == full)).unwrap()
    }

    fn build(factors: &[Vec<Vec<i64>>], rank: usize) -> (DirectProductSpec, ChargeMap) {
        let mut theta = ChargeMap::new(rank);
        let mut spec = Vec::new();
        for (i, f) in factors.iter().enumerate() {
            let mut gens = Vec::new();
            for (j, c) in f.iter().enumerate() {
                let s = Symbol::intern(&format!("g{j}f{i}"));
                theta.set(s, c.clone()).unwrap();
                gens.push(s);
            }
            spec.push(gens);
        }
        (DirectProductSpec::new(spec).unwrap(), theta)
    }

    fn factors() -> impl Strategy<Value = (usize, Vec<Vec<Vec<i64>>>)> {
        (1usize..=2).prop_flat_map(|rank| {
            (Just(rank), prop::collection::vec(prop::collection::vec(prop::collection::vec(-2i64..=2, rank), 1..=2), 1..=4))
        })
    }

    proptest! {
        #[test]
        fn depth_matches_minor_rank_oracle((rank, f) in factors()) {
            let (spec, theta) = build(&f, rank);
            let d = depth_coabelian(&spec, &theta).unwrap();
            prop_assert_eq!(d, brute_depth(&f, rank));
            prop_assert!(d <= f.len());
        }

        #[test]
        fn zero_factor_raises_depth((rank, mut f) in factors()) {
            let (spec, theta) = build(&f, rank);
            let d = depth_coabelian(&spec, &theta).unwrap();
            let nontrivial = f.iter().flatten().any(|c| c.iter().any(|&x| x != 0));
            f.push(vec![vec![0; rank]]);
            let (spec, theta) = build(&f, rank);
            let e = depth_coabelian(&spec, &theta).unwrap();
            prop_assert_eq!(e, if nontrivial { d + 1 } else { d });
        }
    }
}
