//! Height reduction for direct products of free groups `D = F(X_1) × … × F(X_n)`
//! carrying a charge map `θ: D → Z^r` that is onto on every factor.
//!
//! Every factor holds exactly one generator `a_k^(i)` of charge `t_k` per
//! direction; all other generators have charge 0. The letters
//! `e_k = a_k^(1)`, `f_k = a_k^(2)`, `g_k = a_k^(3)` drive the transforms.
//! Directions `k` are 0-based throughout.

use thiserror::Error;

use crate::oracle::{dp_equal, DirectProductSpec, OracleError};
use crate::rewriting::{
    invert_sequence, realize_scheme, realize_scheme_with, replay_sequence, reverse_sequence, sequence_to_expression, validate_expression, Expression,
    Presentation, RealizedScheme, RewriteError, Scheme, SchemeRow, SeqBuilder, Sequence,
};
use crate::words::{ChargeMap, HeightVector, Letter, Symbol, Word, WordError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PulldownError {
    #[error("direction {k} out of range (rank {rank})")]
    DirectionOutOfRange { k: usize, rank: usize },
    #[error("need at least {need} factors, have {have}")]
    TooFewFactors { need: usize, have: usize },
    #[error("invalid charge map: {0}")]
    BadCharges(String),
    #[error("word has nonzero charge {0:?}")]
    NonzeroCharge(Vec<i64>),
    #[error("`{0}` is not a cross-factor commutator")]
    UnsupportedRelator(Word),
    #[error("word is not null-homotopic")]
    NotNullHomotopic,
    #[error("invalid expression: {0}")]
    InvalidExpression(String),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Word(#[from] WordError),
}

type Result<T> = std::result::Result<T, PulldownError>;

/// Area constant for the per-direction pulldown.
pub const C_A: u64 = 7;
/// Height constant for the per-direction pulldown.
pub const C_H: u64 = 2;

#[derive(Clone, Debug)]
pub struct PulldownContext {
    spec: DirectProductSpec,
    theta: ChargeMap,
    pres: Presentation,
    /// `a[i][k]` is the generator of factor `i` with charge `t_k`.
    a: Vec<Vec<Symbol>>,
}

fn unit_direction(c: &[i64]) -> Option<Option<usize>> {
    match c.iter().filter(|&&x| x != 0).count() {
        0 => Some(None),
        1 => {
            let k = c.iter().position(|&x| x != 0)?;
            (c[k] == 1).then_some(Some(k))
        }
        _ => None,
    }
}

impl PulldownContext {
    pub fn new(spec: DirectProductSpec) -> Result<PulldownContext> {
        let theta = spec.theta().cloned().ok_or_else(|| PulldownError::BadCharges("no charge map".into()))?;
        if spec.factor_count() < 2 {
            return Err(PulldownError::TooFewFactors { need: 2, have: spec.factor_count() });
        }
        let r = theta.rank();
        let mut a = Vec::new();
        for (i, f) in spec.factors().iter().enumerate() {
            let mut row: Vec<Option<Symbol>> = vec![None; r];
            for &s in f {
                let c = theta.of_symbol(s)?;
                match unit_direction(c) {
                    None => return Err(PulldownError::BadCharges(format!("`{s}` has charge {c:?}, not 0 or a basis vector"))),
                    Some(None) => {}
                    Some(Some(k)) => {
                        if row[k].is_some() {
                            return Err(PulldownError::BadCharges(format!("factor {} has two generators of charge t{}", i + 1, k + 1)));
                        }
                        row[k] = Some(s);
                    }
                }
            }
            let row = row
                .into_iter()
                .enumerate()
                .map(|(k, s)| s.ok_or_else(|| PulldownError::BadCharges(format!("factor {} misses charge t{}", i + 1, k + 1))))
                .collect::<Result<Vec<_>>>()?;
            a.push(row);
        }
        let pres = spec.presentation();
        Ok(PulldownContext { spec, theta, pres, a })
    }

    pub fn spec(&self) -> &DirectProductSpec {
        &self.spec
    }

    pub fn theta(&self) -> &ChargeMap {
        &self.theta
    }

    pub fn presentation(&self) -> &Presentation {
        &self.pres
    }

    pub fn rank(&self) -> usize {
        self.theta.rank()
    }

    /// The generator of factor `i` with charge `t_k`.
    pub fn a(&self, i: usize, k: usize) -> Symbol {
        self.a[i][k]
    }

    pub fn commutes(&self, x: Letter, y: Letter) -> bool {
        self.spec.commutes(x, y)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k >= self.rank() {
            return Err(PulldownError::DirectionOutOfRange { k, rank: self.rank() });
        }
        Ok(())
    }

    fn e(&self, k: usize) -> Word {
        Word::letter(self.a[0][k].letter())
    }

    fn f(&self, k: usize) -> Word {
        Word::letter(self.a[1][k].letter())
    }

    fn g(&self, k: usize) -> Result<Word> {
        match self.a.get(2) {
            Some(row) => Ok(Word::letter(row[k].letter())),
            None => Err(PulldownError::TooFewFactors { need: 3, have: self.a.len() }),
        }
    }

    /// `e_k f_k⁻¹`.
    fn eps(&self, k: usize) -> Word {
        self.e(k).concat(&self.f(k).inverse())
    }

    pub fn theta_k(&self, s: Symbol, k: usize) -> i64 {
        self.theta.of_symbol(s).map(|c| c[k]).unwrap_or(0)
    }

    fn factor(&self, s: Symbol) -> Result<usize> {
        self.spec.factor_of(s).ok_or_else(|| PulldownError::Oracle(OracleError::AlphabetMismatch(s.name().into())))
    }

    fn phi_letter(&self, k: usize, l: Letter, h: i64) -> Result<Word> {
        let x = Word::letter(l.gen().letter());
        let t = self.theta_k(l.gen(), k);
        let eps = self.eps(k);
        let first = self.factor(l.gen())? == 0;
        Ok(match (l.is_inverse(), first) {
            (false, true) => cat(&[eps.pow(h), x, self.f(k).pow(-t), eps.pow(-h - t)]),
            (false, false) => cat(&[x, self.e(k).pow(-t)]),
            (true, true) => cat(&[eps.pow(h), self.f(k).pow(t), x.inverse(), eps.pow(-h + t)]),
            (true, false) => cat(&[self.e(k).pow(t), x.inverse()]),
        })
    }

    /// `Φ_k(w, h) = Π Φ_k(w(j), θ_k(w, j−1) + h)`.
    pub fn phi(&self, k: usize, w: &Word, h: i64) -> Result<Word> {
        self.check_k(k)?;
        let mut out = Vec::new();
        let mut cur = h;
        for &l in w.letters() {
            out.extend(self.phi_letter(k, l, cur)?.into_letters());
            cur += self.theta.letter_charge(l, k)?;
        }
        Ok(Word::from_letters(out))
    }

    /// `e_k^h w e_k^(−h−θ_k(w))`.
    pub fn conjugation_target(&self, k: usize, w: &Word, h: i64) -> Result<Word> {
        let t = self.theta.charge(w)?[k];
        Ok(cat(&[self.e(k).pow(h), w.clone(), self.e(k).pow(-h - t)]))
    }

    /// Evaluates the six identities satisfied by `Φ_k`:
    /// group equality with the conjugation target, the length bound, the
    /// height bounds, the inversion and concatenation identities as literal
    /// words, and preservation of free equality (vacuous unless `w =fr w2`).
    pub fn check_phi_properties(&self, k: usize, w: &Word, w2: &Word, h: i64) -> Result<[bool; 6]> {
        let p = self.phi(k, w, h)?;
        let tw = self.theta.charge(w)?[k];
        let hw = self.theta.heights(w)?;
        let c1 = dp_equal(&self.spec, &p, &self.conjugation_target(k, w, h)?)?;
        let c2 = (p.len() as u64) <= 4 * w.len() as u64 * (hw.get(k) + h.unsigned_abs() + 1);
        let hp = self.theta.heights(&p)?;
        let c3 = (0..self.rank()).all(|i| if i == k { hp.get(i) <= 1 } else { hp.get(i) <= hw.get(i) });
        let c4 = p.inverse() == self.phi(k, &w.inverse(), tw + h)?;
        let c5 = self.phi(k, &w.concat(w2), h)? == p.concat(&self.phi(k, w2, tw + h)?);
        let c6 = w.free_reduce() != w2.free_reduce() || p.free_reduce() == self.phi(k, w2, h)?.free_reduce();
        Ok([c1, c2, c3, c4, c5, c6])
    }

    /// `Φ_r(… Φ_1(w, 0) …, 0)`: a word equal to `w` in `D` with every height at most 1.
    pub fn flatten_word(&self, w: &Word) -> Result<Word> {
        let c = self.theta.charge(w)?;
        if c.iter().any(|&x| x != 0) {
            return Err(PulldownError::NonzeroCharge(c));
        }
        let mut cur = w.clone();
        for k in 0..self.rank() {
            cur = self.phi(k, &cur, 0)?;
        }
        Ok(cur)
    }

    /// Scheme converting `Φ_k(x, h)` to `e_k^h x e_k^(−h−θ_k(x))` for a single letter.
    pub fn letter_scheme(&self, k: usize, l: Letter, h: i64) -> Result<Scheme> {
        self.check_k(k)?;
        if l.is_inverse() {
            let x = l.inverse();
            let s = self.letter_scheme(k, x, h - self.theta_k(x.gen(), k))?;
            return Ok(invert_rows(&s));
        }
        let x = Word::letter(l);
        let t = self.theta_k(l.gen(), k);
        let (e, f, eps) = (self.e(k), self.f(k), self.eps(k));
        let m = h.unsigned_abs();
        let target = self.conjugation_target(k, &x, h)?;
        let rows = if self.factor(l.gen())? == 0 {
            let ehfh = cat(&[e.pow(h), f.pow(-h)]);
            vec![
                row(cat(&[eps.pow(h), x.clone(), f.pow(-t), eps.pow(-h - t)]), m * (m + 1) / 2),
                row(cat(&[ehfh.clone(), x.clone(), f.pow(-t), eps.pow(-h - t)]), (m + 1) * (m + 2) / 2),
                row(cat(&[ehfh.clone(), x.clone(), f.pow(-t), f.pow(h + t), e.pow(-h - t)]), 0),
                row(cat(&[ehfh.clone(), x.clone(), f.pow(h), e.pow(-h - t)]), m),
                row(cat(&[ehfh, f.pow(h), x.clone(), e.pow(-h - t)]), 0),
            ]
        } else {
            vec![
                row(cat(&[x.clone(), e.pow(-t)]), 0),
                row(cat(&[e.pow(h), e.pow(-h), x.clone(), e.pow(-t)]), m),
                row(cat(&[e.pow(h), x.clone(), e.pow(-h), e.pow(-t)]), 0),
            ]
        };
        Ok(Scheme { rows, target })
    }

    /// Sequence realizing [`letter_scheme`](Self::letter_scheme).
    pub fn letter_sequence(&self, k: usize, l: Letter, h: i64) -> Result<RealizedScheme> {
        let s = self.letter_scheme(k, l, h)?;
        Ok(realize_scheme(&self.pres, &s, &|a, b| self.commutes(a, b))?)
    }

    /// Sequence converting `Φ_k(w, h)` to `e_k^h w e_k^(−h−θ_k(w))`: one letter
    /// scheme per letter, then free moves.
    pub fn conjugation_scheme(&self, k: usize, w: &Word, h: i64) -> Result<Sequence> {
        let start = self.phi(k, w, h)?;
        let mut b = SeqBuilder::new(&self.pres, &start);
        let mut offset = 0;
        let mut cur = h;
        for &l in w.letters() {
            let r = self.letter_sequence(k, l, cur)?;
            b.embed(offset, &r.sequence)?;
            offset += r.scheme.target.len();
            cur += self.theta.letter_charge(l, k)?;
        }
        b.free_to(&self.conjugation_target(k, w, h)?)?;
        Ok(b.finish())
    }

    /// Splits a commutator relator into `(x, y, inverted)` with `s = [x, y]^(±1)`
    /// and `x` in an earlier factor than `y`.
    fn split_relator(&self, s: &Word) -> Result<(Letter, Letter, bool)> {
        let bad = || PulldownError::UnsupportedRelator(s.clone());
        let l = s.letters();
        if l.len() != 4 || l[0].is_inverse() || l[1].is_inverse() || l[2] != l[0].inverse() || l[3] != l[1].inverse() {
            return Err(bad());
        }
        let (i0, i1) = (self.factor(l[0].gen())?, self.factor(l[1].gen())?);
        match i0.cmp(&i1) {
            std::cmp::Ordering::Less => Ok((l[0], l[1], false)),
            std::cmp::Ordering::Greater => Ok((l[1], l[0], true)),
            std::cmp::Ordering::Equal => Err(bad()),
        }
    }

    /// Null scheme for `Φ_k(s, h)` where `s` is a commutator relator `[x, y]`
    /// of generators from different factors, or its inverse.
    pub fn relator_scheme(&self, k: usize, s: &Word, h: i64) -> Result<Scheme> {
        self.check_k(k)?;
        let (x, y, inv) = self.split_relator(s)?;
        let (fwd, _) = self.forward_relator_scheme(k, x, y, h)?;
        Ok(if inv { invert_rows(&fwd) } else { fwd })
    }

    fn forward_relator_scheme(&self, k: usize, x: Letter, y: Letter, h: i64) -> Result<(Scheme, Vec<Option<Merge>>)> {
        let s = crate::words::commutator(&Word::letter(x), &Word::letter(y));
        let bad = || PulldownError::UnsupportedRelator(s.clone());
        let (i0, i1) = (self.factor(x.gen())?, self.factor(y.gen())?);
        let l = [x, y];
        let mut merges = Vec::new();
        let (x, y) = (Word::letter(l[0]), Word::letter(l[1]));
        let (xi, yi) = (x.inverse(), y.inverse());
        let (tx, ty) = (self.theta_k(l[0].gen(), k), self.theta_k(l[1].gen(), k));
        let (e, f, eps) = (self.e(k), self.f(k), self.eps(k));
        let m = h.unsigned_abs();
        let rows = match (i0, i1, tx, ty) {
            (i, _, _, _) if i >= 1 => vec![
                row(cat(&[x.clone(), e.pow(-tx), y.clone(), e.pow(-ty), e.pow(tx), xi.clone(), e.pow(ty), yi.clone()]), 1),
                row(cat(&[x.clone(), e.pow(-tx), e.pow(tx), y.clone(), e.pow(-ty), xi.clone(), e.pow(ty), yi.clone()]), 0),
                row(cat(&[x.clone(), y.clone(), e.pow(-ty), xi.clone(), e.pow(ty), yi.clone()]), 1),
                row(cat(&[x.clone(), y.clone(), e.pow(-ty), e.pow(ty), xi.clone(), yi.clone()]), 0),
                row(cat(&[x, y, xi, yi]), 1),
            ],
            (_, _, 1, _) | (_, 1, 0, 1) => vec![row(self.phi(k, &s, h)?, 0)],
            (_, j, 0, 0) if j >= 2 => vec![
                row(cat(&[eps.pow(h), x.clone(), eps.pow(-h), y.clone(), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), 2 * m),
                row(cat(&[eps.pow(h), x.clone(), y.clone(), eps.pow(-h), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), 0),
                row(cat(&[eps.pow(h), x.clone(), y.clone(), xi.clone(), eps.pow(-h), yi.clone()]), 2 * m),
                row(cat(&[eps.pow(h), x, y, xi, yi, eps.pow(-h)]), 1),
                row(cat(&[eps.pow(h), eps.pow(-h)]), 0),
            ],
            (_, j, 0, 1) if j >= 2 => {
                let ei = e.inverse();
                vec![
                    row(
                        cat(&[eps.pow(h), x.clone(), eps.pow(-h), y.clone(), ei.clone(), eps.pow(h + 1), xi.clone(), eps.pow(-h - 1), e.clone(), yi.clone()]),
                        3 * m,
                    ),
                    row(
                        cat(&[eps.pow(h), x.clone(), y.clone(), ei.clone(), eps.pow(-h), eps.pow(h + 1), xi.clone(), eps.pow(-h - 1), e.clone(), yi.clone()]),
                        0,
                    ),
                    row(cat(&[eps.pow(h), x.clone(), y.clone(), ei.clone(), eps.clone(), xi.clone(), eps.pow(-h - 1), e.clone(), yi.clone()]), 3 * m),
                    row(
                        cat(&[eps.pow(h), x.clone(), y.clone(), ei, eps.clone(), xi.clone(), eps.inverse(), e, yi.clone(), eps.pow(-h)]),
                        0,
                    ),
                    row(cat(&[eps.pow(h), x, y, f.inverse(), xi, f, yi, eps.pow(-h)]), 2),
                    row(cat(&[eps.pow(h), eps.pow(-h)]), 0),
                ]
            }
            (_, 1, 0, 0) => {
                let g = self.g(k)?;
                let ge = g.concat(&e.inverse());
                let gf = g.concat(&f.inverse());
                let eg = e.concat(&g.inverse());
                let tri = 3 * m * (m + 1) / 2;
                let n = 2 * m as usize;
                merges = vec![
                    None,
                    None,
                    Some(Merge { pos: n + 1, u: eps.clone(), v: ge.clone(), w: gf.clone(), n: -h }),
                    Some(Merge { pos: 2 * n + 2, u: ge.clone(), v: eps.clone(), w: gf.clone(), n: h }),
                    None,
                    None,
                    Some(Merge { pos: 0, u: eps.clone(), v: gf.inverse(), w: eg.clone(), n: h }),
                    Some(Merge { pos: n + 3, u: gf.clone(), v: eps.inverse(), w: ge.clone(), n: h }),
                    None,
                    None,
                    None,
                ];
                vec![
                    row(cat(&[eps.pow(h), x.clone(), eps.pow(-h), y.clone(), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), 0),
                    row(
                        cat(&[eps.pow(h), x.clone(), eps.pow(-h), ge.pow(-h), ge.pow(h), y.clone(), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]),
                        2 * m,
                    ),
                    row(
                        cat(&[eps.pow(h), x.clone(), eps.pow(-h), ge.pow(-h), y.clone(), ge.pow(h), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]),
                        tri,
                    ),
                    row(cat(&[eps.pow(h), x.clone(), gf.pow(-h), y.clone(), ge.pow(h), eps.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), tri),
                    row(cat(&[eps.pow(h), x.clone(), gf.pow(-h), y.clone(), gf.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), 2 * m),
                    row(cat(&[eps.pow(h), gf.pow(-h), x.clone(), y.clone(), gf.pow(h), xi.clone(), eps.pow(-h), yi.clone()]), 2 * m),
                    row(cat(&[eps.pow(h), gf.pow(-h), x.clone(), y.clone(), xi.clone(), gf.pow(h), eps.pow(-h), yi.clone()]), tri),
                    row(cat(&[eg.pow(h), x.clone(), y.clone(), xi.clone(), gf.pow(h), eps.pow(-h), yi.clone()]), tri),
                    row(cat(&[eg.pow(h), x.clone(), y.clone(), xi.clone(), ge.pow(h), yi.clone()]), 2 * m),
                    row(cat(&[eg.pow(h), x, y, xi, yi, ge.pow(h)]), 1),
                    row(cat(&[eg.pow(h), ge.pow(h)]), 0),
                ]
            }
            _ => return Err(bad()),
        };
        Ok((Scheme { rows, target: Word::empty() }, merges))
    }

    /// Null sequence for `Φ_k(s, h)` realizing [`relator_scheme`](Self::relator_scheme).
    /// Inverse relators reuse the forward filling, mirrored.
    pub fn relator_filling(&self, k: usize, s: &Word, h: i64) -> Result<RealizedScheme> {
        self.check_k(k)?;
        let (x, y, inv) = self.split_relator(s)?;
        let (sc, merges) = self.forward_relator_scheme(k, x, y, h)?;
        let commutes = |a: Letter, b: Letter| self.commutes(a, b);
        let fwd = realize_scheme_with(&self.pres, &sc, &|b, i, next| match merges.get(i).cloned().flatten() {
            Some(mg) => merge_blocks(b, &mg, &commutes),
            None => {
                let n = b.len();
                b.commute_transition(0, n, next, &commutes)
            }
        })?;
        if !inv {
            return Ok(fwd);
        }
        Ok(RealizedScheme {
            scheme: invert_rows(&fwd.scheme),
            sequence: invert_sequence(&self.pres, &fwd.sequence)?,
            row_costs: fwd.row_costs,
        })
    }

    fn check_expression(&self, e: &Expression, w: &Word) -> Result<()> {
        validate_expression(&self.pres, e, w, None).map_err(|err| PulldownError::InvalidExpression(err.to_string()))?;
        Ok(())
    }

    /// Rebuilds an expression for `w` whose conjugators have height at most
    /// [`C_H`] in direction `k`, at the cost of a factor `C_A (height_k + 1)²`
    /// in area plus a correction for `w` itself.
    pub fn pulldown_expression(&self, k: usize, e: &Expression, w: &Word) -> Result<Expression> {
        self.check_k(k)?;
        if self.spec.factor_count() < 3 {
            return Err(PulldownError::TooFewFactors { need: 3, have: self.spec.factor_count() });
        }
        self.check_expression(e, w)?;
        let mut lifted = Expression::default();
        for t in &e.terms {
            let s = self.pres.signed_relator(t.rel, t.sign);
            let h = self.theta.charge(&t.conj)?[k];
            let filling = self.relator_filling(k, &s, h)?;
            let ej = sequence_to_expression(&self.pres, &filling.sequence)?;
            lifted = lifted.concat(&ej.conjugated(&self.phi(k, &t.conj, 0)?));
        }
        let to_w = self.conjugation_scheme(k, w, 0)?;
        let from_w = reverse_sequence(&self.pres, &to_w)?;
        let correction = sequence_to_expression(&self.pres, &from_w)?;
        let out = correction.concat(&lifted);
        self.check_expression(&out, w)?;
        Ok(out)
    }

    /// Applies [`pulldown_expression`](Self::pulldown_expression) in every direction in turn.
    pub fn flatten_expression(&self, e: &Expression, w: &Word) -> Result<Expression> {
        let mut cur = e.clone();
        for k in 0..self.rank() {
            cur = self.pulldown_expression(k, &cur, w)?;
        }
        Ok(cur)
    }

    /// Filling for a null-homotopic `w`: sort letters by factor with one
    /// commutator per swap, then cancel freely.
    pub fn base_filling(&self, w: &Word) -> Result<Expression> {
        if !dp_equal(&self.spec, w, &Word::empty())? {
            return Err(PulldownError::NotNullHomotopic);
        }
        let mut b = SeqBuilder::new(&self.pres, w);
        for i in 1..b.len() {
            let mut j = i;
            while j > 0 && self.factor(b.letter_at(j - 1).gen())? > self.factor(b.letter_at(j).gen())? {
                b.swap(j - 1)?;
                j -= 1;
            }
        }
        b.free_to(&Word::empty())?;
        Ok(sequence_to_expression(&self.pres, &b.finish())?)
    }

    /// Area and heights of a sequence, replayed against the product presentation.
    pub fn measure(&self, seq: &Sequence) -> Result<(u64, HeightVector)> {
        let acc = replay_sequence(&self.pres, seq, Some(&self.theta))?;
        let h = acc.heights.unwrap_or_else(|| HeightVector::zeros(self.rank()));
        Ok((acc.area, h))
    }

    /// `C_A (|E| (height_k(E)+1)²) + 2|w|(height_k(w)+1)²`.
    pub fn pulldown_area_bound(&self, k: usize, e: &Expression, w: &Word) -> Result<u64> {
        let he = e.heights(&self.theta)?.get(k);
        let hw = self.theta.heights(w)?.get(k);
        Ok(C_A * e.area() * (he + 1).pow(2) + 2 * w.len() as u64 * (hw + 1).pow(2))
    }

    /// Height bounds after pulling down in direction `k`.
    pub fn pulldown_height_bound(&self, k: usize, e: &Expression, w: &Word) -> Result<HeightVector> {
        let he = e.heights(&self.theta)?;
        let hw = self.theta.heights(w)?;
        Ok(HeightVector(
            (0..self.rank())
                .map(|i| {
                    let base = (hw.get(i) + 1).max(C_H);
                    if i == k {
                        base
                    } else {
                        base.max(he.get(i))
                    }
                })
                .collect(),
        ))
    }

    /// `C_A'' = C_A^(r−1) max(C_A, 2r)`.
    pub fn flatten_area_constant(&self) -> u64 {
        let r = self.rank() as u64;
        if r == 0 {
            return 1;
        }
        C_A.pow(r as u32 - 1) * C_A.max(2 * r)
    }

    /// `C_A'' (|E| + |w|) Π ζ_j²` with `ζ_j = max(height_j(w)+1, height_j(E)+1, C_H)`.
    pub fn flatten_area_bound(&self, e: &Expression, w: &Word) -> Result<u64> {
        let he = e.heights(&self.theta)?;
        let hw = self.theta.heights(w)?;
        let mut prod = 1u64;
        for j in 0..self.rank() {
            let z = (hw.get(j) + 1).max(he.get(j) + 1).max(C_H);
            prod = prod.saturating_mul(z * z);
        }
        Ok(self.flatten_area_constant().saturating_mul(e.area() + w.len() as u64).saturating_mul(prod))
    }

    /// `max(height_i(w) + 1, C_H)` in every direction.
    pub fn flatten_height_bound(&self, w: &Word) -> Result<HeightVector> {
        let hw = self.theta.heights(w)?;
        Ok(HeightVector((0..self.rank()).map(|i| (hw.get(i) + 1).max(C_H)).collect()))
    }
}

/// A transition `u^n v^n → w^n` between powers of two-letter blocks with
/// `u v = w` in an abelian subgroup, located at `pos`.
#[derive(Clone, Debug)]
struct Merge {
    pos: usize,
    u: Word,
    v: Word,
    w: Word,
    n: i64,
}

/// Fuses the innermost `u v` into `w`, shifts `w` to the front and recurses.
fn merge_blocks(b: &mut SeqBuilder, mg: &Merge, commutes: &dyn Fn(Letter, Letter) -> bool) -> std::result::Result<(), RewriteError> {
    let sg = mg.n.signum();
    let (u, v, w) = (mg.u.pow(sg), mg.v.pow(sg), mg.w.pow(sg));
    let m = mg.n.unsigned_abs() as usize;
    for j in (1..=m).rev() {
        let offset = mg.pos + w.len() * (m - j);
        let inner = offset + u.len() * (j - 1);
        b.commute_transition(inner, inner + u.len() + v.len(), &w, commutes)?;
        let moved = w.concat(&u.pow(j as i64 - 1));
        b.commute_transition(offset, inner + w.len(), &moved, commutes)?;
    }
    Ok(())
}

fn cat(parts: &[Word]) -> Word {
    let mut v = Vec::new();
    for p in parts {
        v.extend_from_slice(p.letters());
    }
    Word::from_letters(v)
}

fn row(word: Word, area: u64) -> SchemeRow {
    SchemeRow { word, area, heights: None }
}

/// Inverts every word of a scheme, keeping the claims.
fn invert_rows(s: &Scheme) -> Scheme {
    Scheme {
        rows: s.rows.iter().map(|r| SchemeRow { word: r.word.inverse(), area: r.area, heights: r.heights.clone() }).collect(),
        target: s.target.inverse(),
    }
}

/// `F(X_1) × … × F(X_n)` with `m` generators per factor named `<letter><factor>`,
/// the first `r` of each factor carrying charges `t_1 … t_r`.
pub fn standard_product(n: usize, m: usize, r: usize) -> Result<PulldownContext> {
    const NAMES: &[&str] = &["a", "b", "c", "d", "p", "q", "s", "u", "v", "z"];
    if m > NAMES.len() || r > m {
        return Err(PulldownError::BadCharges(format!("unsupported shape m={m}, r={r}")));
    }
    let mut factors = Vec::new();
    let mut theta = ChargeMap::new(r);
    for i in 1..=n {
        let mut f = Vec::new();
        for (j, name) in NAMES.iter().take(m).enumerate() {
            let s = Symbol::new(&format!("{name}{i}"))?;
            let mut c = vec![0; r];
            if j < r {
                c[j] = 1;
            }
            theta.set(s, c)?;
            f.push(s);
        }
        factors.push(f);
    }
    PulldownContext::new(DirectProductSpec::new(factors)?.with_theta(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::w;

    fn ctx(n: usize, r: usize) -> PulldownContext {
        standard_product(n, 2, r).unwrap()
    }

    #[test]
    fn phi_letter_cases() {
        let c = ctx(3, 1);
        assert_eq!(c.phi(0, &w("b2"), 5).unwrap(), w("b2"));
        assert_eq!(c.phi(0, &w("a2"), 3).unwrap(), w("a2 a1'"));
        assert_eq!(c.phi(0, &w("a1"), 1).unwrap(), w("a1 a2' a1 a2' a2 a1' a2 a1'"));
    }

    #[test]
    fn context_rejects_bad_charges() {
        let spec = DirectProductSpec::from_names(&[&["x1"], &["x2"]]);
        let theta = ChargeMap::new(1).with(Symbol::intern("x1"), vec![2]).unwrap().with(Symbol::intern("x2"), vec![1]).unwrap();
        assert!(matches!(PulldownContext::new(spec.with_theta(theta)), Err(PulldownError::BadCharges(_))));
        assert!(matches!(ctx(3, 1).phi(1, &w("a1"), 0), Err(PulldownError::DirectionOutOfRange { .. })));
    }

    #[test]
    fn phi_properties_on_examples() {
        let c = ctx(3, 2);
        for (a, b) in [("a1 b2 a3", "b1"), ("", ""), ("a1' a1 b3 a2", "a1' a1 b3 a2")] {
            for h in -2..=2 {
                for k in 0..2 {
                    assert_eq!(c.check_phi_properties(k, &w(a), &w(b), h).unwrap(), [true; 6], "{a} {b} {h} {k}");
                }
            }
        }
    }

    #[test]
    fn flatten_word_commutator() {
        let c = ctx(3, 1);
        let x = w("a1 a1 b1 b1 a1' a1' b1' b1'");
        let f = c.flatten_word(&x).unwrap();
        assert!(dp_equal(c.spec(), &f, &x).unwrap());
        assert!(c.theta().heights(&f).unwrap().max() <= 1);
        assert!(f.len() <= 512);
        assert!(matches!(c.flatten_word(&w("a1")), Err(PulldownError::NonzeroCharge(_))));
    }

    #[test]
    fn letter_schemes_within_bounds() {
        let c = ctx(3, 1);
        for l in ["a1", "b1", "a2", "b3", "a1'", "b1'", "a2'", "b2'"] {
            let x = w(l).letters()[0];
            for h in -3..=3i64 {
                let r = c.letter_sequence(0, x, h).unwrap();
                let (area, hv) = c.measure(&r.sequence).unwrap();
                let hh = if x.is_inverse() { h.abs().max((h - c.theta_k(x.gen(), 0)).abs()) } else { h.abs() } as u64;
                assert!(area <= 2 * (hh + 1).pow(2), "{l} h={h} area {area}");
                assert!(hv.get(0) <= hh + 1, "{l} h={h} height {hv:?}");
                assert!(r.overruns().is_empty(), "{l} h={h} {:?}", r.row_costs);
            }
        }
    }

    #[test]
    fn conjugation_scheme_bound() {
        let c = ctx(3, 1);
        let x = w("a1 b2 a2' b1");
        let s = c.conjugation_scheme(0, &x, 1).unwrap();
        assert_eq!(s.end(c.presentation()).unwrap(), c.conjugation_target(0, &x, 1).unwrap());
        let (area, _) = c.measure(&s).unwrap();
        assert!(area <= 72, "{area}");
    }

    #[test]
    fn relator_fillings_all_cases() {
        let c = standard_product(3, 3, 1).unwrap();
        let rels = c.spec().commutator_relators();
        for s in &rels {
            for s in [s.clone(), s.inverse()] {
                for h in -3..=3i64 {
                    let r = c.relator_filling(0, &s, h).unwrap();
                    let (area, hv) = c.measure(&r.sequence).unwrap();
                    assert!(r.sequence.end(c.presentation()).unwrap().is_empty());
                    assert!(area <= r.scheme.total(), "{s} h={h}: {area} > {} {:?} {:?}", r.scheme.total(), r.row_costs, r.scheme.rows.iter().map(|x| x.area).collect::<Vec<_>>());
                    assert!(area <= 7 * (h.unsigned_abs() + 1).pow(2));
                    assert!(hv.max() <= 2, "{s} h={h}: heights {hv:?}");
                    assert!(r.overruns().is_empty(), "{s} h={h}: {:?}", r.row_costs);
                }
            }
        }
    }

    #[test]
    fn relator_case_totals() {
        let c = ctx(3, 1);
        let total = |s: &str, h| c.relator_scheme(0, &w(s), h).unwrap().total();
        assert_eq!(total("a2 b3 a2' b3'", 2), 3);
        assert_eq!(total("a1 b2 a1' b2'", 2), 0);
        assert_eq!(total("b1 a2 b1' a2'", 2), 0);
        assert_eq!(total("b1 b2 b1' b2'", 2), 53);
        assert_eq!(total("b1 b3 b1' b3'", 2), 9);
        assert_eq!(total("b1 a3 b1' a3'", 2), 14);
        assert!(c.relator_scheme(0, &w("a1 b1 a1' b1'"), 0).is_err());
    }

    #[test]
    fn base_filling_and_pulldown() {
        let c = ctx(3, 1);
        let x = w("a1 b2 a3 a1' b2' a3'");
        let e = c.base_filling(&x).unwrap();
        assert!(e.area() <= 36);
        let out = c.pulldown_expression(0, &e, &x).unwrap();
        assert!(out.area() <= c.pulldown_area_bound(0, &e, &x).unwrap());
        assert!(out.heights(c.theta()).unwrap().dominated_by(&c.pulldown_height_bound(0, &e, &x).unwrap()));
        let one = c.base_filling(&w("a1 b2 a1' b2'")).unwrap();
        assert_eq!(one.area(), 1);
    }
}
