//! Heat-kernel coefficients of `L = −D² + Q`.
//!
//! Two independent routes to the diagonal values `[a_k]`:
//!
//! * the Taylor table `⟨n|a_k⟩ = k/(k+n) Σ_m ⟨n|L|m⟩⟨m|a_{k−1}⟩`, with
//!   `⟨n|L|m⟩ = −δ_{m,n+2} + C(n,m) Q^(n−m)`, the authoritative definition;
//! * the diagonal recursion `[a_k] = k/(2(2k−1)) A[a_{k−1}]`, `A = −D⁻¹E`,
//!   with `E p = D³p − 2Q Dp − 2D(Qp) + Ad_Q Dp + D Ad_Q p + Ad_Q D⁻¹ Ad_Q p`.
//!
//! Scalar potentials are handled in the commutative image of the ring, which
//! is much smaller and gives the same values on commuting inputs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffpoly::{rat, DiffPoly, Rational, Ring, Word};
use crate::error::{Error, Result};
use crate::periodic::PeriodicFunction;

fn binomial(n: u32, k: u32) -> Rational {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    Rational::from_integer(c)
}

/// `⟨m|L|n⟩` in the Taylor basis at a base point.
pub fn matrix_element(m: u32, n: u32) -> DiffPoly {
    if n == m + 2 {
        -&DiffPoly::identity()
    } else if n <= m {
        DiffPoly::monomial(binomial(m, n), Word::new(vec![m - n]))
    } else {
        DiffPoly::zero()
    }
}

/// Memoized `⟨n|a_k⟩`, built level by level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaylorTable {
    ring: Ring,
    #[serde(with = "entries_as_list")]
    entries: BTreeMap<(u32, u32), DiffPoly>,
}

mod entries_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        k: u32,
        n: u32,
        poly: DiffPoly,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(u32, u32), DiffPoly>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|(&(k, n), p)| Entry { k, n, poly: p.clone() })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<(u32, u32), DiffPoly>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.k, e.n), e.poly)).collect())
    }
}

impl Serialize for Ring {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Ring::Noncommutative => "noncommutative",
            Ring::Commutative => "commutative",
        })
    }
}

impl<'de> Deserialize<'de> for Ring {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "noncommutative" => Ok(Ring::Noncommutative),
            "commutative" => Ok(Ring::Commutative),
            other => Err(serde::de::Error::custom(format!("unknown ring {other:?}"))),
        }
    }
}

impl TaylorTable {
    pub fn new(ring: Ring) -> Self {
        TaylorTable {
            ring,
            entries: BTreeMap::new(),
        }
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    /// Highest `k` for which `[a_k]` is stored.
    pub fn max_k(&self) -> Option<u32> {
        self.entries.keys().filter(|(_, n)| *n == 0).map(|(k, _)| *k).max()
    }

    /// Fills in every entry that `⟨n|a_k⟩` depends on. Entries of one level
    /// are independent given the previous level and are built in parallel.
    pub fn ensure(&mut self, k: u32, n: u32) {
        for level in 0..=k {
            let top = n + 2 * (k - level);
            let missing: Vec<u32> = (0..=top)
                .filter(|m| !self.entries.contains_key(&(level, *m)))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let ring = self.ring;
            let computed: Vec<(u32, DiffPoly)> = missing
                .par_iter()
                .map(|&m| (m, self.compute(level, m, ring)))
                .collect();
            for (m, p) in computed {
                self.entries.insert((level, m), p);
            }
        }
    }

    fn compute(&self, k: u32, n: u32, ring: Ring) -> DiffPoly {
        if k == 0 {
            return if n == 0 { DiffPoly::identity() } else { DiffPoly::zero() };
        }
        let mut acc = DiffPoly::zero();
        for m in 0..=n + 2 {
            let l = matrix_element(n, m);
            if l.is_zero() {
                continue;
            }
            let prev = &self.entries[&(k - 1, m)];
            if prev.is_zero() {
                continue;
            }
            acc += &l.mul_in(prev, ring);
        }
        acc.scale(&rat(k as i64, (k + n) as i64))
    }

    /// `⟨n|a_k⟩`.
    pub fn get(&mut self, k: u32, n: u32) -> &DiffPoly {
        self.ensure(k, n);
        &self.entries[&(k, n)]
    }

    /// `[a_k] = ⟨0|a_k⟩`.
    pub fn diagonal(&mut self, k: u32) -> DiffPoly {
        self.get(k, 0).clone()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a persisted table, or starts an empty one if the file is absent.
    pub fn load_or_new(path: &std::path::Path, ring: Ring) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(s) => {
                let t = Self::from_json(&s)?;
                if t.ring != ring {
                    return Err(Error::Input(format!(
                        "table at {} is for the {:?} ring, expected {:?}",
                        path.display(),
                        t.ring,
                        ring
                    )));
                }
                Ok(t)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new(ring)),
            Err(e) => Err(e.into()),
        }
    }
}

/// `⟨n|a_k⟩` from a fresh table.
pub fn taylor_coefficient(k: u32, n: u32, ring: Ring) -> DiffPoly {
    TaylorTable::new(ring).get(k, n).clone()
}

/// The operator `E` acting on a differential polynomial.
pub fn apply_e(p: &DiffPoly, ring: Ring) -> Result<DiffPoly> {
    let q = DiffPoly::q(0);
    let dp = p.differentiate_in(ring);
    let mut out = dp.differentiate_n(2, ring);
    out -= &q.mul_in(&dp, ring).scale(&rat(2, 1));
    out -= &q.mul_in(p, ring).differentiate_in(ring).scale(&rat(2, 1));
    if ring == Ring::Noncommutative {
        let ad_p = p.ad_q(ring);
        out += &dp.ad_q(ring);
        out += &ad_p.differentiate_in(ring);
        out += &ad_p.antiderivative_in(ring)?.ad_q(ring);
    }
    Ok(out)
}

/// `A p = −D⁻¹ E p`.
pub fn apply_a(p: &DiffPoly, ring: Ring) -> Result<DiffPoly> {
    Ok(-&apply_e(p, ring)?.antiderivative_in(ring)?)
}

/// `[a_k]` by the diagonal recursion, starting from `[a₀] = 𝕀`.
pub fn diagonal_coefficient_recursive(k: u32, ring: Ring) -> Result<DiffPoly> {
    let mut p = DiffPoly::identity();
    for j in 1..=k {
        p = apply_a(&p, ring)?.scale(&rat(j as i64, 2 * (2 * j as i64 - 1)));
    }
    Ok(p)
}

/// `W_k = 2⟨1|a_k⟩ − D[a_k]`, which satisfies `D W_k = Ad_Q [a_k]`.
pub fn w_coefficient(table: &mut TaylorTable, k: u32) -> DiffPoly {
    let ring = table.ring();
    let one = table.get(k, 1).scale(&rat(2, 1));
    let d = table.get(k, 0).differentiate_in(ring);
    one - d
}

/// `k!(k−1)!/(2k−1)!`, the prefactor of `[a_k] = c_k A^{k−1} Q`.
pub fn resummation_prefactor(k: u32) -> Rational {
    assert!(k >= 1);
    let fact = |n: u32| (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i));
    Rational::new(fact(k) * fact(k - 1), fact(2 * k - 1))
}

/// Linear and quadratic parts of `[a_k]` modulo total derivatives, in the
/// normal form `(coefficient of Q^(2k−2), coefficient of Q·Q^(2k−4))`.
///
/// Integration by parts moves all derivatives of the first factor onto the
/// second: `Q^(a) Q^(b) ≡ (−1)^a Q Q^(a+b)`. Under the trace, commutators
/// vanish as well, so the quadratic part reduces to a single number.
pub fn leading_derivative_normal_form(p: &DiffPoly, k: u32) -> (Rational, Rational) {
    let lin = p.coeff(&[2 * k - 2]);
    let mut quad = Rational::zero();
    for (w, c) in p.part_of_degree(2).terms() {
        let a = w.orders()[0];
        if a % 2 == 0 {
            quad += c;
        } else {
            quad -= c;
        }
    }
    (lin, quad)
}

/// The leading-derivative prediction for the same normal form:
/// `c_k {(−D²)^{k−1}Q + (2k−1) Q (−D²)^{k−2} Q}`.
pub fn leading_derivative_prediction(k: u32) -> (Rational, Rational) {
    assert!(k >= 2);
    let c = resummation_prefactor(k);
    let sign = |e: u32| if e.is_multiple_of(2) { Rational::one() } else { -Rational::one() };
    let lin = &c * sign(k - 1);
    let quad = &c * rat(2 * k as i64 - 1, 1) * sign(k - 2);
    (lin, quad)
}

/// `A_k = ∫_{S¹} tr [a_k] dx` for a given potential.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalInvariant {
    pub k: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DiffPoly>,
    pub value: f64,
}

/// Smallest power of two that holds products of the given bandwidth.
pub fn dealiased_grid(max_len: usize, bandwidth: usize) -> usize {
    (2 * max_len * bandwidth + 1).next_power_of_two().max(8)
}

/// Source of `[a_k]` for both rings, built on demand.
#[derive(Clone, Debug)]
pub struct HeatCoefficients {
    scalar: TaylorTable,
    matrix: TaylorTable,
}

impl Default for HeatCoefficients {
    fn default() -> Self {
        HeatCoefficients {
            scalar: TaylorTable::new(Ring::Commutative),
            matrix: TaylorTable::new(Ring::Noncommutative),
        }
    }
}

impl HeatCoefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tables(scalar: TaylorTable, matrix: TaylorTable) -> Self {
        HeatCoefficients { scalar, matrix }
    }

    pub fn table(&mut self, ring: Ring) -> &mut TaylorTable {
        match ring {
            Ring::Commutative => &mut self.scalar,
            Ring::Noncommutative => &mut self.matrix,
        }
    }

    /// `[a_k]` in the ring appropriate to a bundle of dimension `dim`.
    pub fn diagonal_for(&mut self, k: u32, dim: usize) -> DiffPoly {
        let ring = if dim == 1 { Ring::Commutative } else { Ring::Noncommutative };
        self.table(ring).diagonal(k)
    }

    pub fn global_invariant(&mut self, k: u32, q: &PeriodicFunction) -> Result<GlobalInvariant> {
        let density = self.diagonal_for(k, q.dim());
        let value = integrate_trace(&density, q)?;
        Ok(GlobalInvariant {
            k,
            density: Some(density),
            value,
        })
    }

    /// `A_0, …, A_kmax` as plain numbers.
    pub fn global_invariants(&mut self, kmax: u32, q: &PeriodicFunction) -> Result<Vec<f64>> {
        (0..=kmax)
            .map(|k| self.global_invariant(k, q).map(|g| g.value))
            .collect()
    }
}

/// `∫_{S¹} tr p(Q) dx`, from the exact zero Fourier mode of a dealiased
/// evaluation.
pub fn integrate_trace(p: &DiffPoly, q: &PeriodicFunction) -> Result<f64> {
    if p.is_zero() {
        return Ok(0.0);
    }
    let grid = dealiased_grid(p.max_word_len(), q.bandwidth());
    let v = p.evaluate(q, grid)?;
    Ok(2.0 * PI * q.radius() * v.mode(0).trace().re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn a2() -> DiffPoly {
        DiffPoly::make(rat(1, 1), &[0, 0]).unwrap() + DiffPoly::make(rat(-1, 3), &[2]).unwrap()
    }

    fn a3() -> DiffPoly {
        let mut p = DiffPoly::make(rat(1, 1), &[0, 0, 0]).unwrap();
        for w in [[0i64, 2], [2, 0], [1, 1]] {
            p += &DiffPoly::make(rat(-1, 2), &w).unwrap();
        }
        p + DiffPoly::make(rat(1, 10), &[4]).unwrap()
    }

    #[test]
    fn matrix_elements() {
        assert_eq!(matrix_element(0, 2), -&DiffPoly::identity());
        assert_eq!(matrix_element(3, 1), DiffPoly::make(rat(3, 1), &[2]).unwrap());
        assert!(matrix_element(2, 3).is_zero());
        assert!(matrix_element(1, 5).is_zero());
        assert_eq!(matrix_element(4, 4), DiffPoly::q(0));
    }

    #[test]
    fn low_order_diagonals() {
        let mut t = TaylorTable::new(Ring::Noncommutative);
        assert_eq!(t.diagonal(0), DiffPoly::identity());
        assert_eq!(t.diagonal(1), DiffPoly::q(0));
        assert_eq!(t.diagonal(2), a2());
        assert_eq!(t.diagonal(3), a3());
    }

    #[test]
    fn taylor_invariants() {
        let mut t = TaylorTable::new(Ring::Noncommutative);
        for n in 1..6 {
            assert!(t.get(0, n).is_zero());
        }
        for k in 1..=4 {
            for n in 0..4 {
                assert!(t.get(k, n).is_homogeneous(2 * k + n), "k={k} n={n}");
            }
        }
        assert_eq!(t.get(1, 1).clone(), DiffPoly::make(rat(1, 2), &[1]).unwrap());
    }

    #[test]
    fn e_on_identity_and_q() {
        let nc = Ring::Noncommutative;
        assert_eq!(
            apply_e(&DiffPoly::identity(), nc).unwrap(),
            DiffPoly::make(rat(-2, 1), &[1]).unwrap()
        );
        // scalar: Q''' − 2QQ' − 2(Q²)' = Q''' − 6QQ'
        let e = apply_e(&DiffPoly::q(0), Ring::Commutative).unwrap();
        let want = DiffPoly::make(rat(1, 1), &[3]).unwrap() + DiffPoly::make(rat(-6, 1), &[1, 0]).unwrap();
        assert_eq!(e, want);
        // scalar: A Q = 3Q² − Q''
        let aq = apply_a(&DiffPoly::q(0), Ring::Commutative).unwrap();
        let want = DiffPoly::make(rat(3, 1), &[0, 0]).unwrap() + DiffPoly::make(rat(-1, 1), &[2]).unwrap();
        assert_eq!(aq, want);
    }

    #[test]
    fn recursion_consistency_low_k() {
        let nc = Ring::Noncommutative;
        let mut t = TaylorTable::new(nc);
        for k in 2..=3u32 {
            let lhs = apply_e(&t.diagonal(k - 1), nc)
                .unwrap()
                .scale(&rat(-(k as i64), 2 * (2 * k as i64 - 1)));
            assert_eq!(lhs, t.diagonal(k).differentiate());
        }
        for k in 1..=3 {
            assert_eq!(diagonal_coefficient_recursive(k, nc).unwrap(), t.diagonal(k));
        }
    }

    #[test]
    fn adjoint_symmetry() {
        let mut t = TaylorTable::new(Ring::Noncommutative);
        for k in 0..=4 {
            let p = t.diagonal(k);
            assert_eq!(p.reversed(), p, "k = {k}");
        }
    }

    #[test]
    fn w_vanishes_at_k1_and_satisfies_identity() {
        let mut t = TaylorTable::new(Ring::Noncommutative);
        assert!(w_coefficient(&mut t, 1).is_zero());
        for k in 1..=3 {
            let w = w_coefficient(&mut t, k);
            assert_eq!(w.differentiate(), t.diagonal(k).ad_q(Ring::Noncommutative));
        }
        let mut s = TaylorTable::new(Ring::Commutative);
        for k in 1..=4 {
            assert!(w_coefficient(&mut s, k).is_zero());
        }
    }

    #[test]
    fn leading_derivatives() {
        let mut t = TaylorTable::new(Ring::Noncommutative);
        for k in 2..=5 {
            assert_eq!(
                leading_derivative_normal_form(&t.diagonal(k), k),
                leading_derivative_prediction(k),
                "k = {k}"
            );
        }
    }

    #[test]
    fn invariants_of_simple_potentials() {
        let mut h = HeatCoefficients::new();
        let zero = PeriodicFunction::scalar(1.0, &[]).unwrap();
        assert!((h.global_invariant(0, &zero).unwrap().value - 2.0 * PI).abs() < 1e-14);

        let c = 0.7;
        let a = 1.3;
        let constant = PeriodicFunction::scalar(a, &[(0, Complex64::new(c, 0.0))]).unwrap();
        for k in 0..=6 {
            let v = h.global_invariant(k, &constant).unwrap().value;
            let want = 2.0 * PI * a * c.powi(k as i32);
            assert!((v - want).abs() < 1e-13 * want.abs().max(1.0), "k = {k}");
        }

        let cos = PeriodicFunction::scalar_cosine_series(1.0, 0.0, &[(1, 0.5)]).unwrap();
        assert!((h.global_invariant(2, &cos).unwrap().value - PI).abs() < 1e-13);
    }

    #[test]
    fn table_json_round_trip() {
        let mut t = TaylorTable::new(Ring::Commutative);
        t.ensure(3, 1);
        let back = TaylorTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.ring(), Ring::Commutative);
        assert_eq!(back.entries, t.entries);
    }

    #[test]
    fn prefactor_values() {
        assert_eq!(resummation_prefactor(1), rat(1, 1));
        assert_eq!(resummation_prefactor(2), rat(1, 3));
        assert_eq!(resummation_prefactor(3), rat(1, 10));
    }
}
