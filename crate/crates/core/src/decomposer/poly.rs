//! Canonical sum-of-products form used for order-insensitive equality.
//!
//! Addends are keyed by their monomial in a sorted map and factors are kept
//! sorted, so two expressions that differ only by commutativity or
//! associativity of `+` and `*` compare equal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::abstraction::ElementId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AtomKind {
    /// Decision variable.
    Var,
    /// Parameter that is a function of decision variables (capacity under power control).
    Derived,
    /// Fixed parameter.
    Param,
    /// Dual coefficient.
    Dual,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub kind: AtomKind,
    pub name: String,
    /// Instance index; `None` in lifted templates means "the owning entity".
    pub index: Option<u32>,
    /// Lifted dual sums: the virtual element the coefficients range over.
    pub over: Option<ElementId>,
}

impl Atom {
    pub fn new(kind: AtomKind, name: impl Into<String>, index: Option<u32>) -> Self {
        Atom {
            kind,
            name: name.into(),
            index,
            over: None,
        }
    }

    pub fn var(name: &str, index: u32) -> Self {
        Atom::new(AtomKind::Var, name, Some(index))
    }

    pub fn derived(name: &str, index: u32) -> Self {
        Atom::new(AtomKind::Derived, name, Some(index))
    }

    pub fn param(name: &str, index: Option<u32>) -> Self {
        Atom::new(AtomKind::Param, name, index)
    }

    pub fn dual(family: &str, index: u32) -> Self {
        Atom::new(AtomKind::Dual, family, Some(index))
    }

    pub fn is_dual(&self) -> bool {
        self.kind == AtomKind::Dual
    }

    /// Decision-dependent atoms: variables and derived parameters.
    pub fn is_decision(&self) -> bool {
        matches!(self.kind, AtomKind::Var | AtomKind::Derived)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.over, self.index) {
            (Some(e), _) => write!(f, "sum({}[{e}])", self.name),
            (None, Some(i)) => write!(f, "{}_{i:02}", self.name),
            (None, None) => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    Atom(Atom),
    Log(Box<Poly>),
    Sqrt(Box<Poly>),
    Recip(Box<Poly>),
}

impl Factor {
    fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        match self {
            Factor::Atom(a) => f(a),
            Factor::Log(p) | Factor::Sqrt(p) | Factor::Recip(p) => p.visit_atoms(f),
        }
    }

    fn is_nonlinear(&self) -> bool {
        !matches!(self, Factor::Atom(_))
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Atom(a) => write!(f, "{a}"),
            Factor::Log(p) => write!(f, "log({p})"),
            Factor::Sqrt(p) => write!(f, "sqrt({p})"),
            Factor::Recip(p) => write!(f, "1/({p})"),
        }
    }
}

/// Product of factors, sorted; repeated factors are powers.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial(pub Vec<Factor>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn from_factors(mut factors: Vec<Factor>) -> Self {
        factors.sort();
        Monomial(factors)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.0
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        Monomial::from_factors(v)
    }

    /// Top-level dual-coefficient factors.
    pub fn dual_part(&self) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter(|f| matches!(f, Factor::Atom(a) if a.is_dual()))
                .cloned()
                .collect(),
        )
    }

    pub fn primal_part(&self) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter(|f| !matches!(f, Factor::Atom(a) if a.is_dual()))
                .cloned()
                .collect(),
        )
    }

    pub fn atoms(&self) -> BTreeSet<&Atom> {
        let mut out = BTreeSet::new();
        for f in &self.0 {
            f.visit_atoms(&mut |a| {
                out.insert(a);
            });
        }
        out
    }

    /// True when a dual coefficient sits inside a nonlinear factor.
    pub fn has_nested_dual(&self) -> bool {
        self.0
            .iter()
            .filter(|f| f.is_nonlinear())
            .any(|f| {
                let mut found = false;
                f.visit_atoms(&mut |a| found |= a.is_dual());
                found
            })
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for (i, fac) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            write!(f, "{fac}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Poly(BTreeMap<Monomial, OrderedFloat<f64>>);

impl Poly {
    pub fn zero() -> Self {
        Poly(BTreeMap::new())
    }

    pub fn constant(c: f64) -> Self {
        Poly::term(c, Monomial::one())
    }

    pub fn atom(a: Atom) -> Self {
        Poly::term(1.0, Monomial(vec![Factor::Atom(a)]))
    }

    pub fn term(c: f64, m: Monomial) -> Self {
        let mut p = Poly::zero();
        p.add_term(c, m);
        p
    }

    fn factor(f: Factor) -> Self {
        Poly::term(1.0, Monomial(vec![f]))
    }

    pub fn add_term(&mut self, c: f64, m: Monomial) {
        if c == 0.0 {
            return;
        }
        let e = self.0.entry(m.clone()).or_insert(OrderedFloat(0.0));
        e.0 += c;
        if e.0 == 0.0 {
            self.0.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.0.iter().map(|(m, c)| (m, c.0))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.0.len() {
            0 => Some(0.0),
            1 => self.0.get(&Monomial::one()).map(|c| c.0),
            _ => None,
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(c, m.clone());
        }
        out
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            out.add_term(c * k, m.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        self.scale(-1.0)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                out.add_term(ca * cb, ma.mul(mb));
            }
        }
        out
    }

    pub fn log(&self) -> Poly {
        match self.as_constant() {
            Some(c) if c > 0.0 => Poly::constant(c.ln()),
            _ => Poly::factor(Factor::Log(Box::new(self.clone()))),
        }
    }

    pub fn sqrt(&self) -> Poly {
        match self.as_constant() {
            Some(c) if c >= 0.0 => Poly::constant(c.sqrt()),
            _ => Poly::factor(Factor::Sqrt(Box::new(self.clone()))),
        }
    }

    pub fn recip(&self) -> Poly {
        match self.as_constant() {
            Some(c) if c != 0.0 => Poly::constant(1.0 / c),
            _ => {
                // Pull a common scalar out so 1/(2x) and 0.5/x agree.
                if self.len() == 1 {
                    let (m, c) = self.terms().next().unwrap();
                    return Poly::factor(Factor::Recip(Box::new(Poly::term(1.0, m.clone())))).scale(1.0 / c);
                }
                Poly::factor(Factor::Recip(Box::new(self.clone())))
            }
        }
    }

    pub fn sum<'a>(polys: impl IntoIterator<Item = &'a Poly>) -> Poly {
        polys.into_iter().fold(Poly::zero(), |acc, p| acc.add(p))
    }

    pub fn atoms(&self) -> BTreeSet<&Atom> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a| {
            out.insert(a);
        });
        out
    }

    fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        for m in self.0.keys() {
            for fac in &m.0 {
                fac.visit_atoms(f);
            }
        }
    }

    /// Rebuilds the polynomial with every atom replaced.
    pub fn map_atoms(&self, f: &impl Fn(&Atom) -> Atom) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            let mut acc = Poly::constant(c);
            for fac in &m.0 {
                let p = match fac {
                    Factor::Atom(a) => Poly::atom(f(a)),
                    Factor::Log(p) => p.map_atoms(f).log(),
                    Factor::Sqrt(p) => p.map_atoms(f).sqrt(),
                    Factor::Recip(p) => p.map_atoms(f).recip(),
                };
                acc = acc.mul(&p);
            }
            out = out.add(&acc);
        }
        out
    }

    pub fn eval(&self, value: &impl Fn(&Atom) -> f64) -> f64 {
        self.eval_dual(&|a| (value(a), 0.0)).0
    }

    /// Forward-mode evaluation: each atom supplies (value, derivative).
    pub fn eval_dual(&self, value: &impl Fn(&Atom) -> (f64, f64)) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        for (m, c) in self.terms() {
            let mut pv = c;
            let mut pd = 0.0;
            for fac in &m.0 {
                let (fv, fd) = match fac {
                    Factor::Atom(a) => value(a),
                    Factor::Log(p) => {
                        let (x, dx) = p.eval_dual(value);
                        (x.ln(), dx / x)
                    }
                    Factor::Sqrt(p) => {
                        let (x, dx) = p.eval_dual(value);
                        let s = x.sqrt();
                        (s, if s > 0.0 { dx / (2.0 * s) } else { f64::INFINITY * dx.signum() })
                    }
                    Factor::Recip(p) => {
                        let (x, dx) = p.eval_dual(value);
                        (1.0 / x, -dx / (x * x))
                    }
                };
                pd = pd * fv + pv * fd;
                pv *= fv;
            }
            v += pv;
            d += pd;
        }
        (v, d)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms().enumerate() {
            let neg = c < 0.0;
            let mag = c.abs();
            match (i, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{mag}*{m}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: u32) -> Poly {
        Poly::atom(Atom::var("sesrate", i))
    }

    fn l(i: u32) -> Poly {
        Poly::atom(Atom::dual("lbd", i))
    }

    #[test]
    fn order_insensitive() {
        let a = x(1).add(&x(2)).mul(&l(0));
        let b = l(0).mul(&x(2)).add(&l(0).mul(&x(1)));
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn cancellation_drops_terms() {
        let p = x(1).add(&l(0)).sub(&x(1));
        assert_eq!(p, l(0));
        assert!(x(3).sub(&x(3)).is_zero());
    }

    #[test]
    fn constants_fold_through_functions() {
        assert_eq!(Poly::constant(1.0).log(), Poly::zero());
        assert_eq!(Poly::constant(4.0).sqrt(), Poly::constant(2.0));
        assert_eq!(x(0).scale(2.0).recip(), x(0).recip().scale(0.5));
    }

    #[test]
    fn display_is_stable() {
        let p = x(4).sub(&x(4).mul(&l(9).add(&l(11))));
        assert_eq!(p.to_string(), "sesrate_04 - sesrate_04*lbd_09 - sesrate_04*lbd_11");
        assert_eq!(x(0).log().to_string(), "log(sesrate_00)");
    }

    #[test]
    fn dual_number_derivative() {
        // d/dx [3 log x - x*y + sqrt(x)] at x=2, y=0.5
        let p = x(0)
            .log()
            .scale(3.0)
            .sub(&x(0).mul(&Poly::atom(Atom::param("y", None))))
            .add(&x(0).sqrt());
        let f = |a: &Atom| match a.kind {
            AtomKind::Var => (2.0, 1.0),
            _ => (0.5, 0.0),
        };
        let (v, d) = p.eval_dual(&f);
        assert!((v - (3.0 * 2f64.ln() - 1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((d - (1.5 - 0.5 + 0.5 / 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn split_parts() {
        let m = x(1).mul(&l(2)).terms().next().unwrap().0.clone();
        assert_eq!(m.dual_part().to_string(), "lbd_02");
        assert_eq!(m.primal_part().to_string(), "sesrate_01");
        assert!(!m.has_nested_dual());
        let nested = x(1).add(&l(2)).log().terms().next().unwrap().0.clone();
        assert!(nested.has_nested_dual());
    }
}
