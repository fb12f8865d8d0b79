//! Noncommutative differential polynomials in a matrix potential `Q`.
//!
//! A monomial is a rational multiple of a word `Q^(d₁)·Q^(d₂)⋯Q^(d_m)`, stored
//! as the list of derivative orders `(d₁,…,d_m)`; the empty word is the
//! identity endomorphism. Every factor `Q^(d)` has weight `d + 2`, so the
//! heat-kernel coefficient `[a_k]` is homogeneous of weight `2k`.
//!
//! Polynomials are kept in canonical form: equal words merged, zero
//! coefficients dropped, words ordered by length and then lexicographically.
//! Two polynomials are equal iff their canonical term lists are identical,
//! which is what makes exact comparison of the two coefficient recursions
//! possible.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::periodic::{self, PeriodicFunction};

pub type Rational = BigRational;

/// Shorthand for the rational `num/den`.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Ordered list of derivative orders. Ordered by length, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Word(Vec<u32>);

impl Word {
    pub fn new(orders: Vec<u32>) -> Self {
        Word(orders)
    }

    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn orders(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Σ (d_i + 2)`; the identity has weight 0.
    pub fn weight(&self) -> u32 {
        self.0.iter().map(|d| d + 2).sum()
    }

    /// Total number of derivatives `Σ d_i`.
    pub fn derivative_count(&self) -> u32 {
        self.0.iter().sum()
    }

    fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Which quotient of the free algebra the polynomial lives in.
///
/// `Commutative` is the image of the noncommutative ring under the map that
/// forgets factor order (words are stored sorted in descending order). It is
/// what a scalar potential sees; it is never used for matrix potentials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Ring {
    #[default]
    Noncommutative,
    Commutative,
}

impl Ring {
    fn normalize(self, mut w: Vec<u32>) -> Word {
        if self == Ring::Commutative {
            w.sort_unstable_by(|a, b| b.cmp(a));
        }
        Word(w)
    }
}

/// A single term `coeff · word`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffMonomial {
    pub coeff: Rational,
    pub word: Word,
}

impl DiffMonomial {
    pub fn weight(&self) -> u32 {
        self.word.weight()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DiffPoly {
    terms: BTreeMap<Word, Rational>,
}

impl DiffPoly {
    pub fn zero() -> Self {
        DiffPoly::default()
    }

    /// The identity endomorphism `𝕀` (empty word).
    pub fn identity() -> Self {
        Self::monomial(Rational::one(), Word::identity())
    }

    /// The single factor `Q^(order)`.
    pub fn q(order: u32) -> Self {
        Self::monomial(Rational::one(), Word(vec![order]))
    }

    pub fn monomial(coeff: Rational, word: Word) -> Self {
        let mut p = DiffPoly::zero();
        p.add_term(word, coeff);
        p
    }

    /// Checked constructor from signed derivative orders.
    pub fn make(coeff: Rational, word: &[i64]) -> Result<Self> {
        let orders = word
            .iter()
            .map(|&d| {
                u32::try_from(d).map_err(|_| {
                    Error::Input(format!("derivative order must be non-negative, got {d}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::monomial(coeff, Word(orders)))
    }

    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (Rational, Vec<u32>)>,
    {
        let mut p = DiffPoly::zero();
        for (c, w) in terms {
            p.add_term(Word(w), c);
        }
        p
    }

    fn add_term(&mut self, word: Word, coeff: Rational) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(word) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += coeff;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Rational)> {
        self.terms.iter()
    }

    pub fn monomials(&self) -> Vec<DiffMonomial> {
        self.terms
            .iter()
            .map(|(w, c)| DiffMonomial {
                coeff: c.clone(),
                word: w.clone(),
            })
            .collect()
    }

    pub fn coeff(&self, word: &[u32]) -> Rational {
        self.terms
            .get(&Word(word.to_vec()))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    /// Greatest term in the canonical order.
    pub fn leading(&self) -> Option<(&Word, &Rational)> {
        self.terms.iter().next_back()
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return DiffPoly::zero();
        }
        DiffPoly {
            terms: self
                .terms
                .iter()
                .map(|(w, v)| (w.clone(), v * c))
                .collect(),
        }
    }

    /// Image in the given ring (identity for the noncommutative ring).
    pub fn reduce(&self, ring: Ring) -> Self {
        match ring {
            Ring::Noncommutative => self.clone(),
            Ring::Commutative => {
                let mut p = DiffPoly::zero();
                for (w, c) in &self.terms {
                    p.add_term(ring.normalize(w.0.clone()), c.clone());
                }
                p
            }
        }
    }

    /// Noncommutative product: words concatenate, coefficients multiply.
    pub fn mul_in(&self, other: &DiffPoly, ring: Ring) -> Self {
        let mut p = DiffPoly::zero();
        for (wa, ca) in &self.terms {
            for (wb, cb) in &other.terms {
                let w = wa.concat(wb);
                p.add_term(ring.normalize(w.0), ca * cb);
            }
        }
        p
    }

    /// Leibniz rule: `D(Q^(d₁)⋯Q^(d_m)) = Σ_i Q^(d₁)⋯Q^(d_i+1)⋯Q^(d_m)`.
    pub fn differentiate_in(&self, ring: Ring) -> Self {
        let mut p = DiffPoly::zero();
        for (w, c) in &self.terms {
            for i in 0..w.0.len() {
                let mut v = w.0.clone();
                v[i] += 1;
                p.add_term(ring.normalize(v), c.clone());
            }
        }
        p
    }

    pub fn differentiate(&self) -> Self {
        self.differentiate_in(Ring::Noncommutative)
    }

    /// `D^n p`.
    pub fn differentiate_n(&self, n: u32, ring: Ring) -> Self {
        (0..n).fold(self.clone(), |p, _| p.differentiate_in(ring))
    }

    pub fn antiderivative(&self) -> Result<Self> {
        self.antiderivative_in(Ring::Noncommutative)
    }

    /// Inverse of [`differentiate_in`](Self::differentiate_in) on its image,
    /// with the constant of integration fixed to zero.
    ///
    /// The map `u ↦ leading term of D(u)` is strictly increasing and sends
    /// `(e₁,…,e_m)` to `(e₁+1,e₂,…,e_m)`, so the leading term of an exact
    /// derivative determines the leading word of its antiderivative. Peeling
    /// leading terms either empties the polynomial or exposes a leading term
    /// that no derivative can produce.
    pub fn antiderivative_in(&self, ring: Ring) -> Result<Self> {
        let mut rest = self.reduce(ring);
        let mut result = DiffPoly::zero();
        while let Some((lead, c)) = rest.leading() {
            let lead = lead.clone();
            let c = c.clone();
            let not_exact = || Error::NotExactDerivative(format_term(&c, &lead));
            if lead.0.first().copied().unwrap_or(0) == 0 {
                return Err(not_exact());
            }
            let mut u = lead.0.clone();
            u[0] -= 1;
            let u = ring.normalize(u);
            let du = DiffPoly::monomial(Rational::one(), u.clone()).differentiate_in(ring);
            let (du_lead, du_c) = du.leading().ok_or_else(not_exact)?;
            if *du_lead != lead {
                return Err(not_exact());
            }
            let factor = &c / du_c;
            rest -= &du.scale(&factor);
            result.add_term(u, factor);
        }
        Ok(result)
    }

    /// `Ad_Q p = Q·p − p·Q`.
    pub fn ad_q(&self, ring: Ring) -> Self {
        let q = DiffPoly::q(0);
        &q.mul_in(self, ring) - &self.mul_in(&q, ring)
    }

    /// Reverse every word; for Hermitian `Q` this is the adjoint.
    pub fn reversed(&self) -> Self {
        let mut p = DiffPoly::zero();
        for (w, c) in &self.terms {
            let mut v = w.0.clone();
            v.reverse();
            p.add_term(Word(v), c.clone());
        }
        p
    }

    /// `∂p/∂Q^(order)`, treating the letters as commuting variables.
    pub fn partial(&self, order: u32) -> Self {
        let mut p = DiffPoly::zero();
        for (w, c) in &self.terms {
            let m = w.0.iter().filter(|&&d| d == order).count();
            if m == 0 {
                continue;
            }
            let pos = w.0.iter().position(|&d| d == order).expect("counted above");
            let mut v = w.0.clone();
            v.remove(pos);
            p.add_term(Word(v), c * Rational::from_integer(BigInt::from(m)));
        }
        p
    }

    /// Terms whose word has exactly `len` factors.
    pub fn part_of_degree(&self, len: usize) -> Self {
        DiffPoly {
            terms: self
                .terms
                .iter()
                .filter(|(w, _)| w.len() == len)
                .map(|(w, c)| (w.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn is_homogeneous(&self, weight: u32) -> bool {
        self.terms.keys().all(|w| w.weight() == weight)
    }

    pub fn max_word_len(&self) -> usize {
        self.terms.keys().map(Word::len).max().unwrap_or(0)
    }

    pub fn max_order(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|w| w.0.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Pointwise evaluation of a scalar (commuting) potential from samples of
    /// its derivatives: `derivs[d][j] = Q^(d)(x_j)`.
    pub fn evaluate_scalar_samples(&self, derivs: &[Vec<f64>]) -> Vec<f64> {
        let npts = derivs.first().map_or(0, Vec::len);
        let mut out = vec![0.0; npts];
        for (w, c) in &self.terms {
            let c = c.to_f64().unwrap_or(f64::NAN);
            for (j, o) in out.iter_mut().enumerate() {
                let mut v = c;
                for &d in &w.0 {
                    v *= derivs[d as usize][j];
                }
                *o += v;
            }
        }
        out
    }

    /// Pointwise evaluation of a matrix potential from samples of its
    /// derivatives; products are ordered as in the word.
    pub fn evaluate_matrix_samples(
        &self,
        derivs: &[Vec<DMatrix<Complex64>>],
        dim: usize,
    ) -> Vec<DMatrix<Complex64>> {
        let npts = derivs.first().map_or(0, Vec::len);
        let coeffs: Vec<(&Word, f64)> = self
            .terms
            .iter()
            .map(|(w, c)| (w, c.to_f64().unwrap_or(f64::NAN)))
            .collect();
        (0..npts)
            .map(|j| {
                let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
                for (w, c) in &coeffs {
                    let mut m = DMatrix::<Complex64>::identity(dim, dim);
                    for &d in &w.0 {
                        m = &m * &derivs[d as usize][j];
                    }
                    acc += m * Complex64::new(*c, 0.0);
                }
                acc
            })
            .collect()
    }

    /// Evaluates the polynomial on a band-limited potential. Products are
    /// formed pointwise on `grid` samples, which must be fine enough to hold
    /// the product bandwidth without aliasing; the grid is never silently
    /// truncated.
    pub fn evaluate(&self, q: &PeriodicFunction, grid: usize) -> Result<PeriodicFunction> {
        let out_band = self.max_word_len() * q.bandwidth();
        let required = 2 * out_band + 1;
        if grid < required {
            return Err(Error::Aliasing {
                grid,
                bandwidth: out_band,
                required,
            });
        }
        let dim = q.dim();
        let derivs: Vec<Vec<DMatrix<Complex64>>> = (0..=self.max_order())
            .map(|d| q.derivative(d).samples(grid))
            .collect();
        let values = self.evaluate_matrix_samples(&derivs, dim);
        Ok(periodic::PeriodicFunction::from_samples(q.radius(), dim, &values, out_band))
    }

    /// Exact zero Fourier mode (circle average) for a scalar potential with
    /// exact complex-rational modes `q_n = modes[n] = (re, im)`; derivatives
    /// carry `(i n / a)^d` with `1/a = inv_radius`.
    pub fn zero_mode_exact(
        &self,
        modes: &BTreeMap<i64, (Rational, Rational)>,
        inv_radius: &Rational,
    ) -> (Rational, Rational) {
        let mut total = CRat::zero();
        for (w, c) in &self.terms {
            // partial sums of Fourier indices → accumulated coefficient
            let mut dp: BTreeMap<i64, CRat> = BTreeMap::new();
            dp.insert(0, CRat::one());
            for &d in &w.0 {
                let mut next: BTreeMap<i64, CRat> = BTreeMap::new();
                for (s, acc) in &dp {
                    for (n, (re, im)) in modes {
                        let k = Rational::from_integer(BigInt::from(*n)) * inv_radius;
                        let factor = CRat::new(re.clone(), im.clone()).mul(&CRat::i_pow(d).scale(&pow(&k, d)));
                        let e = next.entry(s + n).or_insert_with(CRat::zero);
                        *e = e.add(&acc.mul(&factor));
                    }
                }
                dp = next;
            }
            if let Some(v) = dp.get(&0) {
                total = total.add(&v.scale(c));
            }
        }
        (total.re, total.im)
    }
}

fn pow(x: &Rational, n: u32) -> Rational {
    (0..n).fold(Rational::one(), |acc, _| acc * x)
}

#[derive(Clone, Debug)]
struct CRat {
    re: Rational,
    im: Rational,
}

impl CRat {
    fn new(re: Rational, im: Rational) -> Self {
        CRat { re, im }
    }
    fn zero() -> Self {
        CRat::new(Rational::zero(), Rational::zero())
    }
    fn one() -> Self {
        CRat::new(Rational::one(), Rational::zero())
    }
    fn i_pow(d: u32) -> Self {
        match d % 4 {
            0 => CRat::new(Rational::one(), Rational::zero()),
            1 => CRat::new(Rational::zero(), Rational::one()),
            2 => CRat::new(-Rational::one(), Rational::zero()),
            _ => CRat::new(Rational::zero(), -Rational::one()),
        }
    }
    fn add(&self, o: &CRat) -> CRat {
        CRat::new(&self.re + &o.re, &self.im + &o.im)
    }
    fn mul(&self, o: &CRat) -> CRat {
        CRat::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }
    fn scale(&self, c: &Rational) -> CRat {
        CRat::new(&self.re * c, &self.im * c)
    }
}

impl Add for &DiffPoly {
    type Output = DiffPoly;
    fn add(self, rhs: &DiffPoly) -> DiffPoly {
        let mut p = self.clone();
        p += rhs;
        p
    }
}

impl Sub for &DiffPoly {
    type Output = DiffPoly;
    fn sub(self, rhs: &DiffPoly) -> DiffPoly {
        let mut p = self.clone();
        p -= rhs;
        p
    }
}

impl Add for DiffPoly {
    type Output = DiffPoly;
    fn add(mut self, rhs: DiffPoly) -> DiffPoly {
        self += &rhs;
        self
    }
}

impl Sub for DiffPoly {
    type Output = DiffPoly;
    fn sub(mut self, rhs: DiffPoly) -> DiffPoly {
        self -= &rhs;
        self
    }
}

impl AddAssign<&DiffPoly> for DiffPoly {
    fn add_assign(&mut self, rhs: &DiffPoly) {
        for (w, c) in &rhs.terms {
            self.add_term(w.clone(), c.clone());
        }
    }
}

impl SubAssign<&DiffPoly> for DiffPoly {
    fn sub_assign(&mut self, rhs: &DiffPoly) {
        for (w, c) in &rhs.terms {
            self.add_term(w.clone(), -c.clone());
        }
    }
}

impl Neg for &DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        self.scale(&-Rational::one())
    }
}

impl Mul for &DiffPoly {
    type Output = DiffPoly;
    fn mul(self, rhs: &DiffPoly) -> DiffPoly {
        self.mul_in(rhs, Ring::Noncommutative)
    }
}

impl Mul for DiffPoly {
    type Output = DiffPoly;
    fn mul(self, rhs: DiffPoly) -> DiffPoly {
        self.mul_in(&rhs, Ring::Noncommutative)
    }
}

fn factor_name(d: u32) -> String {
    match d {
        0 => "Q".to_string(),
        1..=3 => format!("Q{}", "'".repeat(d as usize)),
        _ => format!("Q^({d})"),
    }
}

fn format_word(w: &Word) -> String {
    if w.is_empty() {
        return "I".to_string();
    }
    let mut parts = Vec::new();
    let mut i = 0;
    let o = &w.0;
    while i < o.len() {
        let mut j = i;
        while j < o.len() && o[j] == o[i] {
            j += 1;
        }
        let run = j - i;
        let name = factor_name(o[i]);
        parts.push(match (run, o[i]) {
            (1, _) => name,
            (r, 0) => format!("{name}^{r}"),
            (r, _) => format!("({name})^{r}"),
        });
        i = j;
    }
    parts.join(" ")
}

fn format_term(c: &Rational, w: &Word) -> String {
    let word = format_word(w);
    if c.is_one() {
        word
    } else if (-c).is_one() {
        format!("-{word}")
    } else {
        format!("{c} {word}")
    }
}

impl fmt::Display for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (w, c)) in self.terms.iter().enumerate() {
            let abs = c.abs();
            let body = if abs.is_one() {
                format_word(w)
            } else {
                format!("{abs} {}", format_word(w))
            };
            match (i, c.is_negative()) {
                (0, false) => write!(f, "{body}")?,
                (0, true) => write!(f, "-{body}")?,
                (_, false) => write!(f, " + {body}")?,
                (_, true) => write!(f, " - {body}")?,
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    coeff: String,
    word: Vec<u32>,
}

impl Serialize for DiffPoly {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let reprs: Vec<TermRepr> = self
            .terms
            .iter()
            .map(|(w, c)| TermRepr {
                coeff: c.to_string(),
                word: w.0.clone(),
            })
            .collect();
        reprs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiffPoly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let reprs = Vec::<TermRepr>::deserialize(deserializer)?;
        let mut p = DiffPoly::zero();
        for t in reprs {
            let c: Rational = t
                .coeff
                .parse()
                .map_err(|e| serde::de::Error::custom(format!("bad coefficient {:?}: {e}", t.coeff)))?;
            p.add_term(Word(t.word), c);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(d: u32) -> DiffPoly {
        DiffPoly::q(d)
    }

    #[test]
    fn make_examples() {
        assert_eq!(DiffPoly::make(rat(1, 1), &[0]).unwrap(), q(0));
        assert!(DiffPoly::make(rat(0, 1), &[2]).unwrap().is_zero());
        let t = DiffPoly::make(rat(-1, 3), &[2]).unwrap();
        assert_eq!(t.coeff(&[2]), rat(-1, 3));
        assert_eq!(t.to_string(), "-1/3 Q''");
        assert!(matches!(DiffPoly::make(rat(1, 1), &[0, -1]), Err(Error::Input(_))));
    }

    #[test]
    fn products_are_noncommutative() {
        assert_eq!((&q(0) * &q(0)).coeff(&[0, 0]), rat(1, 1));
        let a = &q(0) * &q(2);
        let b = &q(2) * &q(0);
        assert_ne!(a, b);
        assert_eq!(a.coeff(&[0, 2]), rat(1, 1));
        assert_eq!(b.coeff(&[2, 0]), rat(1, 1));
        // the quadratic part of [a₃] up to its -1/2
        let s = &(&a + &b) + &(&q(1) * &q(1));
        assert_eq!(s.len(), 3);
        assert!(s.terms().all(|(_, c)| c.is_one()));
    }

    #[test]
    fn leibniz_examples() {
        assert_eq!(q(0).differentiate(), q(1));
        let q2 = &q(0) * &q(0);
        assert_eq!(q2.differentiate(), &(&q(0) * &q(1)) + &(&q(1) * &q(0)));
        let a2 = &q2 - &q(2).scale(&rat(1, 3));
        let expected = &(&(&q(0) * &q(1)) + &(&q(1) * &q(0))) - &q(3).scale(&rat(1, 3));
        assert_eq!(a2.differentiate(), expected);
        assert!(DiffPoly::identity().differentiate().is_zero());
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(q(1).antiderivative().unwrap(), q(0));
        let qq = &q(0) * &q(0);
        let p = &q(3) - &(&(&q(0) * &q(1)) + &(&q(1) * &q(0))).scale(&rat(3, 1));
        let expected = &q(2) - &qq.scale(&rat(3, 1));
        assert_eq!(p.antiderivative().unwrap(), expected);
        assert!(matches!(q(0).antiderivative(), Err(Error::NotExactDerivative(_))));
        // QQ' alone is exact only in the commutative image
        let qq1 = &q(0) * &q(1);
        assert!(qq1.antiderivative().is_err());
        assert_eq!(
            qq1.antiderivative_in(Ring::Commutative).unwrap(),
            qq.scale(&rat(1, 2))
        );
        assert!((&q(1) * &q(1)).antiderivative_in(Ring::Commutative).is_err());
        assert!(DiffPoly::identity().antiderivative().is_err());
    }

    #[test]
    fn display_forms() {
        let a3 = &(&(&q(0) * &q(0)) * &q(0)) + &q(4).scale(&rat(1, 10));
        assert_eq!(a3.to_string(), "1/10 Q^(4) + Q^3");
        assert_eq!(q(0).to_string(), "Q");
        assert_eq!((&q(1) * &q(1)).to_string(), "(Q')^2");
        assert_eq!(DiffPoly::identity().to_string(), "I");
        assert_eq!(DiffPoly::zero().to_string(), "0");
        let p = &q(0) - &(&q(0) * &q(2)).scale(&rat(1, 2));
        assert_eq!(p.to_string(), "Q - 1/2 Q Q''");
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = &(&q(0) * &q(2)).scale(&rat(-7, 12)) + &q(4).scale(&rat(1, 10));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"[{"coeff":"1/10","word":[4]},{"coeff":"-7/12","word":[0,2]}]"#);
        let back: DiffPoly = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    #[test]
    fn scalar_evaluation_of_a2() {
        // Q = cos x: Q'' = -cos x, so Q² − Q''/3 = cos²x + cos x / 3
        let a2 = &(&q(0) * &q(0)) - &q(2).scale(&rat(1, 3));
        let xs: Vec<f64> = (0..16).map(|j| j as f64 * 0.4).collect();
        let derivs = vec![
            xs.iter().map(|x| x.cos()).collect(),
            xs.iter().map(|x| -x.sin()).collect(),
            xs.iter().map(|x| -x.cos()).collect(),
        ];
        let v = a2.evaluate_scalar_samples(&derivs);
        for (x, v) in xs.iter().zip(v) {
            assert!((v - (x.cos().powi(2) + x.cos() / 3.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mode_exact_of_cosine_powers() {
        // Q = cos x: mean(Q²) = 1/2, mean(Q Q'') = -1/2, mean(Q'Q') = 1/2
        let modes: BTreeMap<i64, (Rational, Rational)> =
            [(-1, (rat(1, 2), rat(0, 1))), (1, (rat(1, 2), rat(0, 1)))].into_iter().collect();
        let one = rat(1, 1);
        assert_eq!((&q(0) * &q(0)).zero_mode_exact(&modes, &one).0, rat(1, 2));
        assert_eq!((&q(0) * &q(2)).zero_mode_exact(&modes, &one).0, rat(-1, 2));
        assert_eq!((&q(1) * &q(1)).zero_mode_exact(&modes, &one).0, rat(1, 2));
        assert_eq!(q(0).zero_mode_exact(&modes, &one).0, rat(0, 1));
        assert_eq!(DiffPoly::identity().zero_mode_exact(&modes, &one).0, rat(1, 1));
    }

    fn arb_word() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..4, 1..4)
    }

    fn arb_poly() -> impl Strategy<Value = DiffPoly> {
        prop::collection::vec((-5i64..6, 1i64..4, arb_word()), 0..6).prop_map(|ts| {
            DiffPoly::from_terms(ts.into_iter().map(|(n, d, w)| (rat(n, d), w)))
        })
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(p in arb_poly()) {
            let again = DiffPoly::from_terms(p.monomials().into_iter().map(|m| (m.coeff, m.word.orders().to_vec())));
            prop_assert_eq!(&again, &p);
            prop_assert_eq!(p.reduce(Ring::Commutative).reduce(Ring::Commutative), p.reduce(Ring::Commutative));
        }

        #[test]
        fn antiderivative_inverts_differentiate(p in arb_poly()) {
            for ring in [Ring::Noncommutative, Ring::Commutative] {
                let p = p.reduce(ring);
                let dp = p.differentiate_in(ring);
                let back = dp.antiderivative_in(ring).unwrap();
                prop_assert_eq!(back.differentiate_in(ring), dp);
                // no constant term and nothing else in the kernel
                prop_assert_eq!(back, p.clone());
            }
        }

        #[test]
        fn grading_is_additive(p in arb_poly(), r in arb_poly()) {
            let prod = &p * &r;
            let sums: std::collections::BTreeSet<u32> = p.terms()
                .flat_map(|(a, _)| r.terms().map(move |(b, _)| a.weight() + b.weight()))
                .collect();
            prop_assert!(prod.terms().all(|(w, _)| sums.contains(&w.weight())));
            let weights: std::collections::BTreeSet<u32> = p.terms().map(|(w, _)| w.weight() + 1).collect();
            prop_assert!(p.differentiate().terms().all(|(w, _)| weights.contains(&w.weight())));
        }
    }
}
