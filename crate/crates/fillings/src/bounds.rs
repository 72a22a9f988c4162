//! Closed-form bound expressions in `l` and the composition rules for
//! isoperimetric bounds.
//!
//! Grammar: integers, `l`, `+`, `*`, `^` (constant exponent), `max(a,b)`
//! and composition `f@g`, meaning `f(g(l))`. Precedence from loosest:
//! `@`, `+`, `*`, `^`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundsError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("{kind} takes {expected} inputs, got {got}")]
    ArityMismatch { kind: String, expected: usize, got: usize },
    #[error("exponent `{0}` is not a constant")]
    NonConstantExponent(String),
    #[error("unknown bound kind `{0}`")]
    UnknownKind(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BoundExpr {
    Const(u128),
    L,
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Mul(Box<BoundExpr>, Box<BoundExpr>),
    Pow(Box<BoundExpr>, u32),
    Max(Box<BoundExpr>, Box<BoundExpr>),
    Compose(Box<BoundExpr>, Box<BoundExpr>),
}

impl BoundExpr {
    pub fn parse(s: &str) -> Result<BoundExpr, BoundsError> {
        let mut p = Parser { s: s.as_bytes(), pos: 0 };
        let e = p.compose()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }

    pub fn l() -> BoundExpr {
        BoundExpr::L
    }

    pub fn constant(c: u128) -> BoundExpr {
        BoundExpr::Const(c)
    }

    pub fn add(self, o: BoundExpr) -> BoundExpr {
        BoundExpr::Add(Box::new(self), Box::new(o))
    }

    pub fn mul(self, o: BoundExpr) -> BoundExpr {
        BoundExpr::Mul(Box::new(self), Box::new(o))
    }

    pub fn pow(self, k: u32) -> BoundExpr {
        BoundExpr::Pow(Box::new(self), k)
    }

    pub fn max(self, o: BoundExpr) -> BoundExpr {
        BoundExpr::Max(Box::new(self), Box::new(o))
    }

    /// `self ∘ inner`.
    pub fn compose(self, inner: BoundExpr) -> BoundExpr {
        BoundExpr::Compose(Box::new(self), Box::new(inner))
    }

    /// Value at `l`; `None` on overflow.
    pub fn eval(&self, l: u128) -> Option<u128> {
        Some(match self {
            BoundExpr::Const(c) => *c,
            BoundExpr::L => l,
            BoundExpr::Add(a, b) => a.eval(l)?.checked_add(b.eval(l)?)?,
            BoundExpr::Mul(a, b) => a.eval(l)?.checked_mul(b.eval(l)?)?,
            BoundExpr::Pow(a, k) => a.eval(l)?.checked_pow(*k)?,
            BoundExpr::Max(a, b) => a.eval(l)?.max(b.eval(l)?),
            BoundExpr::Compose(f, g) => f.eval(g.eval(l)?)?,
        })
    }

    pub fn is_constant(&self) -> bool {
        match self {
            BoundExpr::Const(_) => true,
            BoundExpr::L => false,
            BoundExpr::Add(a, b) | BoundExpr::Mul(a, b) | BoundExpr::Max(a, b) => a.is_constant() && b.is_constant(),
            BoundExpr::Pow(a, _) => a.is_constant(),
            BoundExpr::Compose(f, g) => f.is_constant() || g.is_constant(),
        }
    }

    /// Polynomial degree of growth; `None` for the zero function.
    pub fn degree(&self) -> Option<u64> {
        if self.is_constant() {
            return if self.eval(0)? == 0 { None } else { Some(0) };
        }
        match self {
            BoundExpr::Const(_) => unreachable!(),
            BoundExpr::L => Some(1),
            BoundExpr::Add(a, b) | BoundExpr::Max(a, b) => match (a.degree(), b.degree()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
            BoundExpr::Mul(a, b) => Some(a.degree()? + b.degree()?),
            BoundExpr::Pow(a, k) => {
                if *k == 0 {
                    Some(0)
                } else {
                    Some(a.degree()? * *k as u64)
                }
            }
            BoundExpr::Compose(f, g) => Some(f.degree()? * g.degree()?),
        }
    }

    /// Canonical form up to the usual equivalence of growth functions:
    /// `0`, `1`, `l` or `l^d`.
    pub fn canonical(&self) -> String {
        match self.degree() {
            None => "0".into(),
            Some(0) => "1".into(),
            Some(1) => "l".into(),
            Some(d) => format!("l^{d}"),
        }
    }
}

impl fmt::Display for BoundExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundExpr::Const(c) => write!(f, "{c}"),
            BoundExpr::L => write!(f, "l"),
            BoundExpr::Add(a, b) => write!(f, "({a} + {b})"),
            BoundExpr::Mul(a, b) => write!(f, "({a} * {b})"),
            BoundExpr::Pow(a, k) => write!(f, "{a}^{k}"),
            BoundExpr::Max(a, b) => write!(f, "max({a}, {b})"),
            BoundExpr::Compose(a, b) => write!(f, "({a} @ {b})"),
        }
    }
}

impl FromStr for BoundExpr {
    type Err = BoundsError;
    fn from_str(s: &str) -> Result<BoundExpr, BoundsError> {
        BoundExpr::parse(s)
    }
}

impl Serialize for BoundExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BoundExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<BoundExpr, D::Error> {
        let s = String::deserialize(d)?;
        BoundExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> BoundsError {
        BoundsError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn compose(&mut self) -> Result<BoundExpr, BoundsError> {
        let f = self.sum()?;
        if self.eat(b'@') {
            Ok(f.compose(self.compose()?))
        } else {
            Ok(f)
        }
    }

    fn sum(&mut self) -> Result<BoundExpr, BoundsError> {
        let mut e = self.product()?;
        while self.eat(b'+') {
            e = e.add(self.product()?);
        }
        Ok(e)
    }

    fn product(&mut self) -> Result<BoundExpr, BoundsError> {
        let mut e = self.power()?;
        while self.eat(b'*') {
            e = e.mul(self.power()?);
        }
        Ok(e)
    }

    fn power(&mut self) -> Result<BoundExpr, BoundsError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let start = self.pos;
            let exp = self.power()?;
            if !exp.is_constant() {
                return Err(BoundsError::NonConstantExponent(
                    String::from_utf8_lossy(&self.s[start..self.pos]).trim().to_string(),
                ));
            }
            let k = exp.eval(0).and_then(|k| u32::try_from(k).ok()).ok_or_else(|| self.err("exponent too large"))?;
            Ok(base.pow(k))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<BoundExpr, BoundsError> {
        self.skip_ws();
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"max") {
            self.pos += 3;
            if !self.eat(b'(') {
                return Err(self.err("expected `(` after max"));
            }
            let a = self.compose()?;
            if !self.eat(b',') {
                return Err(self.err("expected `,`"));
            }
            let b = self.compose()?;
            if !self.eat(b')') {
                return Err(self.err("expected `)`"));
            }
            return Ok(a.max(b));
        }
        match rest.first() {
            Some(b'l') => {
                self.pos += 1;
                Ok(BoundExpr::L)
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.compose()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let txt = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii digits");
                txt.parse().map(BoundExpr::Const).map_err(|_| self.err("integer too large"))
            }
            _ => Err(self.err("expected integer, `l`, `max` or `(`")),
        }
    }
}

/// Composition rules for isoperimetric bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// `[α, ρ, r]` ↦ `ρ^{2r} α`.
    AreaRadius,
    /// `[β₁, β₂]` ↦ `l β₁(l²) + β₂(l)`.
    Split,
    /// `[α, π, RArea]` ↦ `α · RArea(π)`.
    Penetration,
    /// `[β₁, β₂, Δ]` ↦ `l β₁(Δ(l)) + β₂(l)`.
    SplitDistortion,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::AreaRadius => "area-radius",
            BoundKind::Split => "split",
            BoundKind::Penetration => "penetration",
            BoundKind::SplitDistortion => "split-distortion",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            BoundKind::Split => 2,
            _ => 3,
        }
    }
}

impl FromStr for BoundKind {
    type Err = BoundsError;
    fn from_str(s: &str) -> Result<BoundKind, BoundsError> {
        Ok(match s {
            "area-radius" => BoundKind::AreaRadius,
            "split" => BoundKind::Split,
            "penetration" => BoundKind::Penetration,
            "split-distortion" => BoundKind::SplitDistortion,
            _ => return Err(BoundsError::UnknownKind(s.into())),
        })
    }
}

pub fn compose_bounds(kind: BoundKind, inputs: &[BoundExpr]) -> Result<BoundExpr, BoundsError> {
    if inputs.len() != kind.arity() {
        return Err(BoundsError::ArityMismatch { kind: kind.name().into(), expected: kind.arity(), got: inputs.len() });
    }
    let i = |k: usize| inputs[k].clone();
    Ok(match kind {
        BoundKind::AreaRadius => {
            let r = &inputs[2];
            if !r.is_constant() {
                return Err(BoundsError::NonConstantExponent(r.to_string()));
            }
            let r = r.eval(0).and_then(|r| u32::try_from(r).ok()).unwrap_or(u32::MAX / 2);
            i(1).pow(2 * r).mul(i(0))
        }
        BoundKind::Split => BoundExpr::L.mul(i(0).compose(BoundExpr::L.pow(2))).add(i(1)),
        BoundKind::Penetration => i(0).mul(i(2).compose(i(1))),
        BoundKind::SplitDistortion => BoundExpr::L.mul(i(0).compose(i(2))).add(i(1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(s: &str) -> BoundExpr {
        BoundExpr::parse(s).unwrap()
    }

    #[test]
    fn parse_and_eval() {
        assert_eq!(b("l^2").eval(3), Some(9));
        assert_eq!(b("2*l + 1").eval(3), Some(7));
        assert_eq!(b("max(l, 5)").eval(3), Some(5));
        assert_eq!(b("l^2 @ l+1").eval(2), Some(9));
        assert_eq!(b("l^2^2").eval(2), Some(16));
        assert!(BoundExpr::parse("l^l").is_err());
        assert!(BoundExpr::parse("l +").is_err());
        assert_eq!(b("l^100").eval(10), None);
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(b("3*l^2 + l + 7").canonical(), "l^2");
        assert_eq!(b("0").canonical(), "0");
        assert_eq!(b("5").canonical(), "1");
        assert_eq!(b("l^2 @ l^3").canonical(), "l^6");
        assert_eq!(b("max(l^2, l)").canonical(), "l^2");
        assert_eq!(b("l^2 @ 0").canonical(), "0");
        assert_eq!(b("l*0 + l").canonical(), "l");
    }

    #[test]
    fn composition_kinds() {
        let c = |k, v: &[&str]| compose_bounds(k, &v.iter().map(|s| b(s)).collect::<Vec<_>>()).unwrap().canonical();
        assert_eq!(c(BoundKind::AreaRadius, &["l^2", "l", "1"]), "l^4");
        assert_eq!(c(BoundKind::Split, &["l^2", "l^2"]), "l^5");
        assert_eq!(c(BoundKind::Penetration, &["l^2", "l", "l^2"]), "l^4");
        assert_eq!(c(BoundKind::SplitDistortion, &["l^2", "l", "l^2"]), "l^5");
        assert!(matches!(
            compose_bounds(BoundKind::Split, &[b("l")]),
            Err(BoundsError::ArityMismatch { expected: 2, got: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn area_radius_matches_formula(l in 0u128..200, r in 0u32..3) {
            let alpha = b("3*l^2 + 1");
            let rho = b("l + 2");
            let e = compose_bounds(BoundKind::AreaRadius, &[alpha.clone(), rho.clone(), BoundExpr::Const(r as u128)]).unwrap();
            prop_assert_eq!(e.eval(l), Some(rho.eval(l).unwrap().pow(2 * r) * alpha.eval(l).unwrap()));
        }

        #[test]
        fn display_round_trips(l in 0u128..50) {
            let e = b("max(l^2 @ (l + 1), 2 * l) + 3");
            prop_assert_eq!(b(&e.to_string()).eval(l), e.eval(l));
        }
    }
}
