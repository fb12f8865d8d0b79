//! Double-double heat traces for real tridiagonal (single-harmonic) potentials.
//!
//! The small-`t` residual `Ω(t) − Σ_{k≤K} (−t)^k/k! A_k` falls to `~t^{K+1}`,
//! far below double precision at `t = 10⁻³`. For `Q = q₀ + 2q₁ cos(x/a)` the
//! plane-wave matrix is tridiagonal, so its eigenvalues can be refined to
//! ~32 digits by Sturm-count bisection, and the trace summed in the same
//! arithmetic.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use twofloat::TwoFloat;

use crate::diffpoly::Rational;

pub fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `a / b` to double-double accuracy. The division operator of `TwoFloat`
/// is only good to about 1e-17, so the quotient is rebuilt from three
/// correction steps using its (accurate) multiplication.
pub fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// `e^x` to full double-double accuracy: `x = k ln2 + r`, Taylor series on
/// `r/64`, then six squarings.
pub fn exp(x: TwoFloat) -> TwoFloat {
    if x.hi() < -740.0 {
        return dd(0.0);
    }
    let ln2 = twofloat::consts::LN_2;
    let k = (x.hi() / ln2.hi()).round();
    let r = (x - ln2 * k) * (1.0 / 64.0);
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for n in 1..28 {
        term = div(term * r, dd(n as f64));
        sum += term;
        if term.hi().abs() < 1e-36 {
            break;
        }
    }
    for _ in 0..6 {
        sum = sum * sum;
    }
    // scale in two steps so that 2^k never overflows on its own
    let half = (k / 2.0).trunc();
    sum * 2f64.powi(half as i32) * 2f64.powi((k - half) as i32)
}

/// Nearest double-double to an exact rational.
pub fn from_rational(r: &Rational) -> TwoFloat {
    let hi = r.to_f64().unwrap_or(f64::NAN);
    if !hi.is_finite() || hi == 0.0 {
        return dd(hi);
    }
    let hi_exact = Rational::from_float(hi).expect("finite");
    let lo = (r - hi_exact).to_f64().unwrap_or(0.0);
    TwoFloat::new_add(hi, lo)
}

pub fn pi() -> TwoFloat {
    twofloat::consts::PI
}

/// Symmetric tridiagonal matrix with double-double entries.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    pub diag: Vec<TwoFloat>,
    pub off: Vec<TwoFloat>,
}

impl Tridiagonal {
    /// Plane-wave matrix of `q₀ + 2q₁ cos(x/a)`: diagonal `n²/a² + q₀`,
    /// off-diagonal `q₁`.
    pub fn harmonic(a: &Rational, q0: &Rational, q1: &Rational, n_max: usize) -> Self {
        let inv_a2 = {
            let a2 = a * a;
            Rational::from_integer(BigInt::from(1)) / a2
        };
        let nm = n_max as i64;
        let diag = (-nm..=nm)
            .map(|n| from_rational(&(Rational::from_integer(BigInt::from(n * n)) * &inv_a2 + q0)))
            .collect();
        let off = vec![from_rational(q1); 2 * n_max];
        Tridiagonal { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: TwoFloat) -> usize {
        let tiny = dd(1e-300);
        let mut count = 0;
        let mut d = self.diag[0] - x;
        for i in 0..self.len() {
            if i > 0 {
                let b = self.off[i - 1];
                d = self.diag[i] - x - div(b * b, d);
            }
            if d.hi() == 0.0 {
                d = tiny;
            }
            if d.hi() < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// All eigenvalues, ascending: double-precision estimates refined by
    /// bisection on the Sturm count.
    pub fn eigenvalues(&self) -> Vec<TwoFloat> {
        let n = self.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i].hi();
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i].hi();
                m[(i + 1, i)] = self.off[i].hi();
            }
        }
        let mut est: Vec<f64> = DVector::from(m.symmetric_eigenvalues()).iter().copied().collect();
        est.sort_by(f64::total_cmp);
        est.par_iter()
            .enumerate()
            .map(|(j, &e)| self.refine(j, e))
            .collect()
    }

    fn refine(&self, j: usize, estimate: f64) -> TwoFloat {
        let mut width = 1e-9 * estimate.abs().max(1.0);
        let (mut lo, mut hi);
        loop {
            lo = dd(estimate - width);
            hi = dd(estimate + width);
            if self.count_below(lo) <= j && self.count_below(hi) > j {
                break;
            }
            width *= 16.0;
        }
        for _ in 0..200 {
            let mid = (lo + hi) * 0.5;
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
            let gap = (hi - lo).hi();
            if gap <= 1e-31 * mid.hi().abs().max(1.0) {
                break;
            }
        }
        (lo + hi) * 0.5
    }
}

/// `Ω(t) = (4πt)^{1/2} Σ e^{−tλ_j}` in double-double arithmetic.
pub fn omega(eigenvalues: &[TwoFloat], t: TwoFloat) -> TwoFloat {
    let mut sum = dd(0.0);
    for &l in eigenvalues {
        sum += exp(-(t * l));
    }
    (pi() * t * 4.0).sqrt() * sum
}

/// Cutoff `n_max` at which plane waves beyond it weigh less than `e^{−80}`
/// at time `t` (relative to `a`).
pub fn cutoff_for(t: f64, a: f64) -> usize {
    (a * (80.0 / t).sqrt()).ceil() as usize + 4
}

/// `Σ_{k≤K} (−t)^k/k! A_k` with exact-rational `A_k / (2πa)` inputs.
pub fn omega_series(zero_modes: &[Rational], two_pi_a: TwoFloat, t: TwoFloat) -> TwoFloat {
    let mut sum = dd(0.0);
    let mut term = dd(1.0);
    for (k, r) in zero_modes.iter().enumerate() {
        if k > 0 {
            term = -div(term * t, dd(k as f64));
        }
        if !r.is_zero() {
            sum += term * from_rational(r);
        }
    }
    sum * two_pi_a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpoly::rat;

    #[test]
    fn exp_matches_known_digits() {
        // e = 2.71828182845904523536028747135266249775724709...
        let e = exp(dd(1.0));
        assert_eq!(e.hi(), std::f64::consts::E);
        let err = (e - TwoFloat::new_add(std::f64::consts::E, 1.4456468917292502e-16)).hi().abs();
        assert!(err < 1e-30, "{err}");
        // e^{-40} · e^{40} = 1
        let p = exp(dd(-40.0)) * exp(dd(40.0)) - 1.0;
        assert!(p.hi().abs() < 1e-30);
        assert_eq!(exp(dd(-800.0)).hi(), 0.0);
    }

    #[test]
    fn rational_conversion() {
        let third = from_rational(&rat(1, 3));
        let err = third * 3.0 - 1.0;
        assert!((div(dd(1.0), dd(3.0)) * 3.0 - 1.0).hi().abs() < 1e-31);
        assert!(err.hi().abs() < 1e-31);
    }

    #[test]
    fn free_spectrum_is_exact() {
        let t = Tridiagonal::harmonic(&rat(1, 1), &rat(0, 1), &rat(0, 1), 5);
        let ev = t.eigenvalues();
        let want = [0.0, 1.0, 1.0, 4.0, 4.0, 9.0, 9.0];
        for (e, w) in ev.iter().zip(want) {
            assert!((*e - w).hi().abs() < 1e-28);
        }
    }

    #[test]
    fn harmonic_eigenvalues_agree_with_double() {
        let t = Tridiagonal::harmonic(&rat(1, 1), &rat(0, 1), &rat(1, 2), 20);
        let ev = t.eigenvalues();
        // ground state of −D² + cos x: Mathieu a₀(q = −1)/4 ...
        // here checked only against the double-precision solve and ordering
        assert!(ev.windows(2).all(|w| (w[0] - w[1]).hi() <= 1e-28 * w[1].hi().abs()));
        assert!(ev[0].hi() < 0.0 && ev[0].hi() > -0.5);
        // sum of eigenvalues = trace
        let tr: TwoFloat = t.diag.iter().fold(dd(0.0), |a, b| a + *b);
        let s: TwoFloat = ev.iter().fold(dd(0.0), |a, b| a + *b);
        let rel = ((tr - s) / tr).hi().abs();
        assert!(rel < 1e-28, "{rel:e} {:?}", &ev[..4]);
    }
}
