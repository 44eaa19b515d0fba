//! Truncated multivariate formal power series over the Gaussian rationals.
//!
//! A series is stored sparsely as a map from exponent vectors to nonzero
//! coefficients, together with a variable count `m` and a truncation cap `D`:
//! every identity produced by this crate is asserted "up to total degree D".
//! Values are immutable after construction and all operations are pure.

use crate::scalar::GaussianRational;
use std::cmp::Ordering;
use std::ops::Neg;
use std::collections::BTreeMap;
use std::fmt;

/// A cap value large enough that no arithmetic at desk scale ever truncates.
/// Used where exact polynomial arithmetic is required (rank computations).
pub const NO_CAP: usize = usize::MAX / 4;

/// Multi-index of nonnegative integer exponents, ordered graded-lexicographically.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Exponent(pub Vec<u32>);

impl Exponent {
    pub fn zero(m: usize) -> Self {
        Exponent(vec![0; m])
    }

    pub fn unit(m: usize, i: usize) -> Self {
        let mut v = vec![0; m];
        v[i] = 1;
        Exponent(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// Weighted degree with one positive weight per variable.
    pub fn weighted_degree(&self, weights: &[usize]) -> usize {
        assert_eq!(weights.len(), self.0.len());
        self.0
            .iter()
            .zip(weights)
            .map(|(&e, &w)| e as usize * w)
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn add(&self, other: &Exponent) -> Exponent {
        Exponent(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Componentwise difference; None if any entry would go negative.
    pub fn checked_sub(&self, other: &Exponent) -> Option<Exponent> {
        let mut v = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            if a < b {
                return None;
            }
            v.push(a - b);
        }
        Some(Exponent(v))
    }
}

impl Ord for Exponent {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => self.0.cmp(&other.0),
            o => o,
        }
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Sparse truncated power series in `m` variables, capped at total degree `cap`.
///
/// Invariants: no stored zero coefficients; every stored exponent has total
/// degree at most `cap`. Two series compare equal when their variable counts
/// match and all coefficients up to the smaller cap agree.
#[derive(Clone)]
pub struct TruncatedSeries {
    pub m: usize,
    pub cap: usize,
    pub terms: BTreeMap<Exponent, GaussianRational>,
}

impl TruncatedSeries {
    pub fn zero(m: usize, cap: usize) -> Self {
        TruncatedSeries {
            m,
            cap,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: usize, cap: usize, c: GaussianRational) -> Self {
        let mut s = Self::zero(m, cap);
        if !c.is_zero() {
            s.terms.insert(Exponent::zero(m), c);
        }
        s
    }

    pub fn one(m: usize, cap: usize) -> Self {
        Self::constant(m, cap, GaussianRational::one())
    }

    /// The `i`-th coordinate variable as a series.
    pub fn var(m: usize, cap: usize, i: usize) -> Self {
        assert!(i < m);
        let mut s = Self::zero(m, cap);
        if cap >= 1 {
            s.terms.insert(Exponent::unit(m, i), GaussianRational::one());
        }
        s
    }

    pub fn monomial(m: usize, cap: usize, exp: Exponent, c: GaussianRational) -> Self {
        assert_eq!(exp.len(), m);
        let mut s = Self::zero(m, cap);
        if !c.is_zero() && exp.degree() <= cap {
            s.terms.insert(exp, c);
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exp: &Exponent) -> GaussianRational {
        self.terms.get(exp).cloned().unwrap_or_else(GaussianRational::zero)
    }

    /// Constant term, i.e. the value at the origin.
    pub fn eval_at_zero(&self) -> GaussianRational {
        self.coeff(&Exponent::zero(self.m))
    }

    /// Lowest total degree of a nonzero term; None for the zero series.
    pub fn valuation(&self) -> Option<usize> {
        self.terms.keys().map(|e| e.degree()).min()
    }

    /// Highest total degree of a stored term (0 for the zero series).
    pub fn max_degree(&self) -> usize {
        self.terms.keys().map(|e| e.degree()).max().unwrap_or(0)
    }

    /// Highest exponent of variable `i` over all stored terms.
    pub fn max_degree_in_var(&self, i: usize) -> u32 {
        self.terms.keys().map(|e| e.0[i]).max().unwrap_or(0)
    }

    /// True when variable `i` does not occur.
    pub fn is_free_of(&self, i: usize) -> bool {
        self.terms.keys().all(|e| e.0[i] == 0)
    }

    fn insert_add(terms: &mut BTreeMap<Exponent, GaussianRational>, exp: Exponent, c: GaussianRational) {
        if c.is_zero() {
            return;
        }
        match terms.entry(exp) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += &c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &TruncatedSeries) -> TruncatedSeries {
        assert_eq!(self.m, other.m, "variable-count mismatch");
        let cap = self.cap.min(other.cap);
        let mut terms = BTreeMap::new();
        for (e, c) in self.terms.iter().chain(other.terms.iter()) {
            if e.degree() <= cap {
                Self::insert_add(&mut terms, e.clone(), c.clone());
            }
        }
        TruncatedSeries { m: self.m, cap, terms }
    }

    pub fn sub(&self, other: &TruncatedSeries) -> TruncatedSeries {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> TruncatedSeries {
        TruncatedSeries {
            m: self.m,
            cap: self.cap,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), c.clone().neg()))
                .collect(),
        }
    }

    pub fn scale(&self, c: &GaussianRational) -> TruncatedSeries {
        if c.is_zero() {
            return Self::zero(self.m, self.cap);
        }
        TruncatedSeries {
            m: self.m,
            cap: self.cap,
            terms: self.terms.iter().map(|(e, k)| (e.clone(), k * c)).collect(),
        }
    }

    pub fn mul(&self, other: &TruncatedSeries) -> TruncatedSeries {
        assert_eq!(self.m, other.m, "variable-count mismatch");
        let cap = self.cap.min(other.cap);
        let mut terms = BTreeMap::new();
        for (ea, ca) in &self.terms {
            let da = ea.degree();
            if da > cap {
                continue;
            }
            for (eb, cb) in &other.terms {
                if da + eb.degree() > cap {
                    continue;
                }
                Self::insert_add(&mut terms, ea.add(eb), ca * cb);
            }
        }
        TruncatedSeries { m: self.m, cap, terms }
    }

    /// Partial derivative in variable `i`; the result cap drops by one.
    pub fn derivative(&self, i: usize) -> TruncatedSeries {
        assert!(i < self.m);
        let cap = self.cap.saturating_sub(1);
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            if e.0[i] == 0 {
                continue;
            }
            let mut v = e.0.clone();
            let k = v[i];
            v[i] -= 1;
            let exp = Exponent(v);
            if exp.degree() > cap {
                continue;
            }
            Self::insert_add(&mut terms, exp, c * &GaussianRational::from_int(k as i64));
        }
        TruncatedSeries { m: self.m, cap, terms }
    }

    /// Coefficientwise complex conjugation.
    pub fn conjugate(&self) -> TruncatedSeries {
        TruncatedSeries {
            m: self.m,
            cap: self.cap,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c.conj())).collect(),
        }
    }

    /// Reinterpret variables through the permutation `perm`: variable `i` of
    /// `self` becomes variable `perm[i]` of the result.
    pub fn permute_vars(&self, perm: &[usize]) -> TruncatedSeries {
        assert_eq!(perm.len(), self.m);
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            let mut v = vec![0u32; self.m];
            for (i, &p) in perm.iter().enumerate() {
                v[p] += e.0[i];
            }
            terms.insert(Exponent(v), c.clone());
        }
        TruncatedSeries { m: self.m, cap: self.cap, terms }
    }

    /// Move this series into a ring with `m_new` variables, sending variable
    /// `i` to variable `offset_map[i]`.
    pub fn embed(&self, m_new: usize, offset_map: &[usize]) -> TruncatedSeries {
        assert_eq!(offset_map.len(), self.m);
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            let mut v = vec![0u32; m_new];
            for (i, &p) in offset_map.iter().enumerate() {
                v[p] += e.0[i];
            }
            terms.insert(Exponent(v), c.clone());
        }
        TruncatedSeries { m: m_new, cap: self.cap, terms }
    }

    /// Drop all terms of total degree above `cap`.
    pub fn truncate(&self, cap: usize) -> TruncatedSeries {
        TruncatedSeries {
            m: self.m,
            cap,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.degree() <= cap)
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Same terms, larger stated cap. Only valid when the caller knows the
    /// series is exact (a polynomial) rather than a truncation.
    pub fn with_cap(&self, cap: usize) -> TruncatedSeries {
        assert!(cap >= self.max_degree());
        TruncatedSeries {
            m: self.m,
            cap,
            terms: self.terms.clone(),
        }
    }

    /// The homogeneous part of total degree `deg`.
    pub fn homogeneous_part(&self, deg: usize) -> TruncatedSeries {
        TruncatedSeries {
            m: self.m,
            cap: self.cap,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.degree() == deg)
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Substitute `subs[i]` for variable `i`. All substituted series share a
    /// ring; an entry may carry a nonzero constant term only where `self` is
    /// polynomial in that variable (finitely many powers occur), otherwise the
    /// result would not be degree-local. The result is exact up to the minimum
    /// cap involved.
    pub fn compose(&self, subs: &[TruncatedSeries]) -> TruncatedSeries {
        assert_eq!(subs.len(), self.m, "substitution arity mismatch");
        if self.terms.is_empty() {
            let (m_new, cap_sub) = if subs.is_empty() {
                (0, NO_CAP)
            } else {
                (subs[0].m, subs.iter().map(|s| s.cap).min().unwrap())
            };
            return TruncatedSeries::zero(m_new, self.cap.min(cap_sub));
        }
        let m_new = if subs.is_empty() { 0 } else { subs[0].m };
        for s in subs {
            assert_eq!(s.m, m_new, "substitution entries must share a ring");
        }
        let cap = if subs.is_empty() {
            self.cap
        } else {
            self.cap.min(subs.iter().map(|s| s.cap).min().unwrap())
        };
        // Entries with a constant term must only be raised to finitely many
        // powers; `self` must be stored exactly in those variables.
        for (i, s) in subs.iter().enumerate() {
            if !s.eval_at_zero().is_zero() {
                debug_assert!(
                    (self.max_degree_in_var(i) as usize) <= self.cap,
                    "constant-bearing substitution into a truncated variable"
                );
            }
        }
        // Memoize powers of each substituted entry.
        let mut powers: Vec<Vec<TruncatedSeries>> = subs
            .iter()
            .map(|s| vec![TruncatedSeries::one(m_new, cap), s.truncate(cap)])
            .collect();
        let mut acc = TruncatedSeries::zero(m_new, cap);
        for (e, c) in &self.terms {
            // Terms whose zero-constant-variable degrees exceed the cap cannot
            // contribute.
            let mut vanishing_val = 0usize;
            for (i, s) in subs.iter().enumerate() {
                if s.eval_at_zero().is_zero() {
                    vanishing_val += e.0[i] as usize;
                }
            }
            if vanishing_val > cap {
                continue;
            }
            let mut term = TruncatedSeries::constant(m_new, cap, c.clone());
            for i in 0..self.m {
                let k = e.0[i] as usize;
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k {
                    let next = powers[i].last().unwrap().mul(&powers[i][1]);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][k]);
                if term.is_zero() {
                    break;
                }
            }
            acc = acc.add(&term);
        }
        acc
    }

    /// Multiplicative inverse of a unit (nonzero constant term).
    pub fn invert_unit(&self) -> TruncatedSeries {
        let c0 = self.eval_at_zero();
        assert!(!c0.is_zero(), "series is not a unit");
        let c0_inv = c0.inv();
        // self = c0 (1 - r) with val(r) >= 1; 1/self = (1/c0) sum r^k.
        let mut r = self.scale(&c0_inv).neg();
        Self::insert_add(&mut r.terms, Exponent::zero(self.m), GaussianRational::one());
        let mut acc = TruncatedSeries::one(self.m, self.cap);
        let mut pow = TruncatedSeries::one(self.m, self.cap);
        for _ in 0..self.cap {
            pow = pow.mul(&r);
            if pow.is_zero() {
                break;
            }
            acc = acc.add(&pow);
        }
        acc.scale(&c0_inv)
    }

    /// Exact division of polynomials: returns `self / divisor` when the
    /// division is exact in the polynomial ring, None otherwise. Caps are
    /// ignored; both operands are treated as exact polynomials.
    pub fn exact_div(&self, divisor: &TruncatedSeries) -> Option<TruncatedSeries> {
        assert_eq!(self.m, divisor.m);
        assert!(!divisor.is_zero(), "division by zero polynomial");
        let (lead_e, lead_c) = divisor.terms.iter().next_back().unwrap();
        let mut rem = self.clone();
        rem.cap = NO_CAP;
        let mut quot = TruncatedSeries::zero(self.m, NO_CAP);
        while !rem.is_zero() {
            let (re, rc) = {
                let (e, c) = rem.terms.iter().next_back().unwrap();
                (e.clone(), c.clone())
            };
            let qe = re.checked_sub(lead_e)?;
            let qc = rc / lead_c.clone();
            Self::insert_add(&mut quot.terms, qe.clone(), qc.clone());
            // rem -= (qc * x^qe) * divisor
            for (e, c) in &divisor.terms {
                Self::insert_add(&mut rem.terms, qe.add(e), (&qc * c).neg());
            }
        }
        Some(quot)
    }

    /// Render with the given variable names, terms in graded-lex order.
    pub fn format_with(&self, names: &[String]) -> String {
        assert_eq!(names.len(), self.m);
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut parts = Vec::new();
        for (e, c) in &self.terms {
            let mut factors = Vec::new();
            if !c.is_one() || e.is_zero() {
                factors.push(format!("{c}"));
            }
            for (i, &k) in e.0.iter().enumerate() {
                if k == 1 {
                    factors.push(names[i].clone());
                } else if k > 1 {
                    factors.push(format!("{}^{}", names[i], k));
                }
            }
            parts.push(factors.join("*"));
        }
        parts.join(" + ")
    }
}

impl PartialEq for TruncatedSeries {
    fn eq(&self, other: &Self) -> bool {
        if self.m != other.m {
            return false;
        }
        let cap = self.cap.min(other.cap);
        let a = self.terms.iter().filter(|(e, _)| e.degree() <= cap);
        let b = other.terms.iter().filter(|(e, _)| e.degree() <= cap);
        a.eq(b)
    }
}

impl Eq for TruncatedSeries {}

impl fmt::Debug for TruncatedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (0..self.m).map(|i| format!("x{i}")).collect();
        write!(f, "[m={},D={}] {}", self.m, self.cap, self.format_with(&names))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::GaussianRational as Q;

    fn var(m: usize, cap: usize, i: usize) -> TruncatedSeries {
        TruncatedSeries::var(m, cap, i)
    }

    #[test]
    fn poly_identity_mul() {
        // (1+z)(1-z) = 1 - z^2 at D = 4
        let z = var(1, 4, 0);
        let one = TruncatedSeries::one(1, 4);
        let p = one.add(&z).mul(&one.sub(&z));
        let expect = one.sub(&z.mul(&z));
        assert_eq!(p, expect);
    }

    #[test]
    fn derivative_basic() {
        // d/dz (z^2 w) = 2 z w
        let z = var(2, 6, 0);
        let w = var(2, 6, 1);
        let f = z.mul(&z).mul(&w);
        let df = f.derivative(0);
        let expect = z.mul(&w).scale(&Q::from_int(2));
        assert_eq!(df, expect);
        assert_eq!(df.cap, 5);
    }

    #[test]
    fn eval_at_zero_of_linear() {
        // tau + 2 i z chi has no constant term
        let m = 3;
        let z = var(m, 5, 0);
        let chi = var(m, 5, 1);
        let tau = var(m, 5, 2);
        let f = tau.add(&z.mul(&chi).scale(&Q::from_parts(0, 1, 2, 1)));
        assert!(f.eval_at_zero().is_zero());
    }

    #[test]
    fn compose_binomial() {
        // f = w^2, w := tau + 2 i z chi  ->  tau^2 + 4 i z chi tau - 4 z^2 chi^2
        let cap = 6;
        let f = {
            let w = var(1, cap, 0);
            w.mul(&w)
        };
        let m = 3;
        let z = var(m, cap, 0);
        let chi = var(m, cap, 1);
        let tau = var(m, cap, 2);
        let two_i = Q::from_parts(0, 1, 2, 1);
        let g = tau.add(&z.mul(&chi).scale(&two_i));
        let composed = f.compose(&[g.clone()]);
        let expect = g.mul(&g);
        assert_eq!(composed, expect);
        let zchi = z.mul(&chi);
        let hand = tau
            .mul(&tau)
            .add(&zchi.mul(&tau).scale(&Q::from_parts(0, 1, 4, 1)))
            .add(&zchi.mul(&zchi).scale(&Q::from_int(-4)));
        assert_eq!(composed, hand);
    }

    #[test]
    fn compose_zero_vector() {
        let cap = 5;
        let z = var(1, cap, 0);
        let f = z.mul(&z).add(&z);
        let zero = TruncatedSeries::zero(2, cap);
        let c = f.compose(&[zero]);
        assert!(c.is_zero());
    }

    #[test]
    fn invert_geometric() {
        // 1/(1+z) = 1 - z + z^2 - z^3 ...
        let cap = 5;
        let z = var(1, cap, 0);
        let u = TruncatedSeries::one(1, cap).add(&z);
        let inv = u.invert_unit();
        let mut expect = TruncatedSeries::zero(1, cap);
        for k in 0..=cap {
            let sign = if k % 2 == 0 { 1 } else { -1 };
            expect = expect.add(&TruncatedSeries::monomial(
                1,
                cap,
                Exponent(vec![k as u32]),
                Q::from_int(sign),
            ));
        }
        assert_eq!(inv, expect);
        assert!(u.mul(&inv).eq(&TruncatedSeries::one(1, cap)));
    }

    #[test]
    fn exact_division() {
        // (x^2 - y^2) / (x - y) = x + y
        let x = var(2, NO_CAP, 0);
        let y = var(2, NO_CAP, 1);
        let num = x.mul(&x).sub(&y.mul(&y));
        let den = x.sub(&y);
        let q = num.exact_div(&den).unwrap();
        assert_eq!(q, x.add(&y));
        assert!(x.exact_div(&y).is_none());
    }

    #[test]
    fn graded_lex_order() {
        let a = Exponent(vec![0, 2]);
        let b = Exponent(vec![1, 0]);
        assert!(b < a); // degree 1 < degree 2
        let c = Exponent(vec![1, 1]);
        let d = Exponent(vec![2, 0]);
        assert!(c < d); // same degree, lex
    }
}
