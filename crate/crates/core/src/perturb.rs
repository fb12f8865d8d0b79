//! Second-order spectral forms of the heat trace and the determinant.
//!
//! Expanding `e^{−tL}` to second order in `Q` and diagonalising the free
//! propagator in plane waves gives
//!
//! ```text
//! Ω(t) = θ(τ) 2πa (N − t tr q₀) + πa t² Σ_{k∈ℤ} |q_k|² β_k(τ) + O(ε³),   τ = t/a²,
//! ```
//!
//! and, through the Mellin transform, `B_q(λ) ≈ 2πaN(−λ)^q + b_q(λ)` with
//! `log Det(L − λ) ≈ 2πaN(−λ)^{1/2} + γ(λ)`. These forms are asymptotic: the
//! outputs carry the scale parameters (`τ`, `ε`, `a(−λ)^{1/2}`) that say how
//! far from the regime of validity an evaluation sits.
//!
//! Mode sums run over all of `ℤ`, `n = 0` included, so that `γ` is exactly
//! the `q = 1/2` case of `b_q` (see [`gamma`]). [`gamma_half_line`] keeps
//! the variant that sums `n ≥ 1` only.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{HeatInvariants, Oracle, SpectralProblem};
use crate::specfun;

/// Gaussian factors below this are dropped from lattice sums.
pub const GAUSSIAN_CUTOFF: f64 = 1e-16;

const QUAD_TOL: f64 = 1e-13;

/// Scale parameters locating an evaluation relative to the asymptotic regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    /// `t/a²`; the expansions need `τ ≪ 1` only for the resummed series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Relative size of the potential: `t·max|q_n|` or `max|q_n|/(−λ)`.
    pub epsilon: f64,
    /// `a(−λ)^{1/2}`; the determinant forms are asymptotic as it grows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_sqrt_shift: Option<f64>,
}

/// One Fourier mode's share of a spectral sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeContribution {
    pub n: i64,
    /// `|q_n|² = tr q_n q_n†`.
    pub norm_sq: f64,
    pub term: f64,
}

/// A perturbative value with its ingredients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeTrace {
    /// `t` or `λ`, depending on the quantity.
    pub argument: f64,
    pub value: f64,
    /// Highest power of `Q` retained.
    pub order: u32,
    pub contributions: Vec<ModeContribution>,
    pub validity: Validity,
}

/// `β_k(t) = ∫₀¹ dξ Σ_n exp(−t(1−ξ²)k²/4 − π²n²/t − ikn(1+ξ)π)`.
///
/// Small `t` uses this form (the `n ≠ 0` terms are Gaussian-small); large `t`
/// uses its Poisson dual `(t/π)^{1/2} ∫ dξ Σ_n exp(−t[(n − c)² + (1−ξ²)k²/4])`
/// with `c = (1+ξ)k/2`.
pub fn beta_k(k: i64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("β_k needs t > 0, got {t}")));
    }
    let kf = k as f64;
    let cut = -GAUSSIAN_CUTOFF.ln();
    let v = if t <= PI {
        let n_max = (t * cut).sqrt() / PI;
        let n_max = n_max.ceil() as i64;
        specfun::integrate(
            |xi| {
                let mut s = 1.0;
                for n in 1..=n_max {
                    let nf = n as f64;
                    s += 2.0 * (-PI * PI * nf * nf / t).exp() * (kf * nf * (1.0 + xi) * PI).cos();
                }
                (-t * (1.0 - xi * xi) * kf * kf / 4.0).exp() * s
            },
            0.0,
            1.0,
            QUAD_TOL,
        )
    } else {
        let half_width = (cut / t).sqrt();
        (t / PI).sqrt()
            * specfun::integrate(
                |xi| {
                    let c = (1.0 + xi) * kf / 2.0;
                    let lo = (c - half_width).floor() as i64;
                    let hi = (c + half_width).ceil() as i64;
                    let s: f64 = (lo..=hi).map(|n| (-t * (n as f64 - c).powi(2)).exp()).sum();
                    (-t * (1.0 - xi * xi) * kf * kf / 4.0).exp() * s
                },
                0.0,
                1.0,
                QUAD_TOL,
            )
    };
    Ok(v)
}

fn potential_scale(problem: &SpectralProblem) -> f64 {
    problem.potential().max_abs_mode()
}

/// `Ω(t)` through second order in `Q`. Exact in the mode sum for
/// band-limited potentials.
pub fn omega_exact2(problem: &SpectralProblem, t: f64) -> Result<PerturbativeTrace> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("Ω needs t > 0, got {t}")));
    }
    let q = problem.potential();
    let a = q.radius();
    let tau = t / (a * a);
    let dim = problem.dim() as f64;
    let theta = specfun::theta(tau)?;
    let b = q.bandwidth() as i64;
    let contributions = (-b..=b)
        .into_par_iter()
        .map(|n| {
            let norm_sq = q.mode_norm_sq(n);
            let term = if norm_sq == 0.0 {
                0.0
            } else {
                PI * a * t * t * norm_sq * beta_k(n, tau)?
            };
            Ok(ModeContribution { n, norm_sq, term })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = theta * 2.0 * PI * a * (dim - t * q.mode(0).trace().re);
    let value = first + contributions.iter().map(|c| c.term).sum::<f64>();
    Ok(PerturbativeTrace {
        argument: t,
        value,
        order: 2,
        contributions,
        validity: Validity {
            tau: Some(tau),
            epsilon: t * potential_scale(problem),
            a_sqrt_shift: None,
        },
    })
}

fn check_shift(lambda: f64) -> Result<()> {
    if !(lambda < 0.0) {
        return Err(Error::Domain(format!("the spectral forms need λ < 0, got {lambda}")));
    }
    Ok(())
}

fn shift_validity(problem: &SpectralProblem, lambda: f64) -> Validity {
    Validity {
        tau: None,
        epsilon: potential_scale(problem) / -lambda,
        a_sqrt_shift: Some(problem.radius() * (-lambda).sqrt()),
    }
}

/// `b_q(λ) = 2πa q(−λ)^{q−1} tr q₀ + q(q−1)πa(−λ)^{q−2} Σ_{n∈ℤ} |q_n|² f_{q−2}(−n²/(λa²))`.
pub fn b_q(problem: &SpectralProblem, q: f64, lambda: f64) -> Result<PerturbativeTrace> {
    b_q_with(problem, q, lambda, specfun::f_q)
}

fn b_q_with<F>(problem: &SpectralProblem, q: f64, lambda: f64, f: F) -> Result<PerturbativeTrace>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    check_shift(lambda)?;
    let pot = problem.potential();
    let a = pot.radius();
    let m = -lambda;
    let b = pot.bandwidth() as i64;
    let pref = q * (q - 1.0) * PI * a * m.powf(q - 2.0);
    let contributions = (-b..=b)
        .map(|n| {
            let norm_sq = pot.mode_norm_sq(n);
            let z = (n * n) as f64 / (m * a * a);
            let term = if norm_sq == 0.0 || pref == 0.0 {
                0.0
            } else {
                pref * norm_sq * f(q - 2.0, z)?
            };
            Ok(ModeContribution { n, norm_sq, term })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = 2.0 * PI * a * q * m.powf(q - 1.0) * pot.mode(0).trace().re;
    Ok(PerturbativeTrace {
        argument: lambda,
        value: first + contributions.iter().map(|c| c.term).sum::<f64>(),
        order: 2,
        contributions,
        validity: shift_validity(problem, lambda),
    })
}

/// `γ(λ) = πa tr q₀/(−λ)^{1/2} − πa³/(−λ)^{1/2} Σ_{n∈ℤ} |q_n|²/(n² − 4λa²)`.
pub fn gamma(problem: &SpectralProblem, lambda: f64) -> Result<PerturbativeTrace> {
    gamma_over(problem, lambda, false)
}

/// The same expression with the mode sum restricted to `n ≥ 1`. It agrees
/// with [`gamma`] only when `q₀ = 0` and only up to a factor 2 in the
/// quadratic part; kept for comparison.
pub fn gamma_half_line(problem: &SpectralProblem, lambda: f64) -> Result<PerturbativeTrace> {
    gamma_over(problem, lambda, true)
}

fn gamma_over(problem: &SpectralProblem, lambda: f64, half_line: bool) -> Result<PerturbativeTrace> {
    check_shift(lambda)?;
    let pot = problem.potential();
    let a = pot.radius();
    let root = (-lambda).sqrt();
    let b = pot.bandwidth() as i64;
    let lo = if half_line { 1 } else { -b };
    let contributions: Vec<ModeContribution> = (lo..=b)
        .map(|n| {
            let norm_sq = pot.mode_norm_sq(n);
            let term = -PI * a.powi(3) / root * norm_sq / ((n * n) as f64 - 4.0 * lambda * a * a);
            ModeContribution { n, norm_sq, term }
        })
        .collect();
    let first = PI * a * pot.mode(0).trace().re / root;
    Ok(PerturbativeTrace {
        argument: lambda,
        value: first + contributions.iter().map(|c| c.term).sum::<f64>(),
        order: 2,
        contributions,
        validity: shift_validity(problem, lambda),
    })
}

/// `(b_q, γ)` at one shift. Fails if `γ` and the `q = 1/2` case of the
/// general formula (with `f_{−3/2}` by quadrature) disagree beyond 1e−12.
pub fn bq_gamma(problem: &SpectralProblem, q: f64, lambda: f64) -> Result<(PerturbativeTrace, PerturbativeTrace)> {
    let bq = b_q(problem, q, lambda)?;
    let g = gamma(problem, lambda)?;
    let half = gamma_consistency(problem, lambda)?;
    if (half - g.value).abs() > 1e-12 * g.value.abs().max(1e-300) + 1e-300 {
        return Err(Error::Domain(format!(
            "γ = {} disagrees with b_(1/2) = {half}",
            g.value
        )));
    }
    Ok((bq, g))
}

/// `b_{1/2}(λ)` from the general formula with `f_{−3/2}` evaluated by
/// quadrature rather than by its closed form.
pub fn gamma_consistency(problem: &SpectralProblem, lambda: f64) -> Result<f64> {
    let sf = specfun::SpecialFunctions::default();
    b_q_with(problem, 0.5, lambda, |order, z| Ok(sf.f_q_quadrature(order, z))).map(|t| t.value)
}

/// `Σ_{k ≤ K} (−t)^k/k! A_k`; meaningful as `τ → 0`.
pub fn resummed_omega(problem: &SpectralProblem, invariants: &HeatInvariants, t: f64, order: usize) -> Result<PerturbativeTrace> {
    if order > invariants.order() {
        return Err(Error::Input(format!(
            "resummation to K = {order} needs A_k up to k = {order}, have {}",
            invariants.order()
        )));
    }
    let a = problem.radius();
    Ok(PerturbativeTrace {
        argument: t,
        value: invariants.omega_series(t, order),
        order: order as u32,
        contributions: Vec::new(),
        validity: Validity {
            tau: Some(t / (a * a)),
            epsilon: t * potential_scale(problem),
            a_sqrt_shift: None,
        },
    })
}

/// One row of the trace comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub omega_oracle: f64,
    pub omega_pert: f64,
    pub omega_resummed: f64,
}

/// One row of the determinant comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetRow {
    pub lambda: f64,
    pub log_det_oracle: f64,
    pub weyl: f64,
    pub gamma: f64,
}

pub fn trace_rows(oracle: &Oracle, ts: &[f64], order: usize) -> Result<Vec<TraceRow>> {
    ts.par_iter()
        .map(|&t| {
            Ok(TraceRow {
                t,
                omega_oracle: oracle.omega(t)?,
                omega_pert: omega_exact2(&oracle.problem, t)?.value,
                omega_resummed: resummed_omega(&oracle.problem, &oracle.invariants, t, order)?.value,
            })
        })
        .collect()
}

pub fn det_rows(oracle: &Oracle, lambdas: &[f64]) -> Result<Vec<DetRow>> {
    let a = oracle.problem.radius();
    let dim = oracle.problem.dim() as f64;
    lambdas
        .par_iter()
        .map(|&lambda| {
            Ok(DetRow {
                lambda,
                log_det_oracle: oracle.log_det(lambda)?,
                weyl: 2.0 * PI * a * dim * (-lambda).sqrt(),
                gamma: gamma(&oracle.problem, lambda)?.value,
            })
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "t,omega_oracle,omega_pert,omega_resummed")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.omega_oracle, r.omega_pert, r.omega_resummed)?;
    }
    Ok(())
}

pub fn write_det_csv<W: Write>(mut w: W, rows: &[DetRow]) -> Result<()> {
    writeln!(w, "lambda,log_det_oracle,weyl,gamma")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", r.lambda, r.log_det_oracle, r.weyl, r.gamma)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_zero_is_theta() {
        for t in [0.01, 0.1, 1.0, 3.0, 4.0, 10.0] {
            let b = beta_k(0, t).unwrap();
            let th = specfun::theta(t).unwrap();
            assert!((b - th).abs() < 1e-10, "t = {t}: {b} vs {th}");
        }
    }

    #[test]
    fn beta_forms_meet_at_crossover() {
        // evaluate both sides of the switch
        for k in [1, 3, 7] {
            let lo = beta_k(k, PI).unwrap();
            let hi = beta_k(k, PI * (1.0 + 1e-12)).unwrap();
            assert!((lo - hi).abs() < 1e-10, "k = {k}: {lo} vs {hi}");
        }
        assert!(beta_k(1, 1.0).unwrap() > 0.0);
        assert!(beta_k(1, 0.0).is_err());
    }

    #[test]
    fn beta_tends_to_alpha() {
        let mut last = f64::INFINITY;
        let mut tau = 1.0;
        for _ in 0..8 {
            let d = (beta_k(2, tau).unwrap() - specfun::alpha(4.0 * tau)).abs();
            // the gap is ~e^{−π²/τ}, so it hits roundoff after a few halvings
            assert!(d <= last || d < 1e-14, "τ = {tau}: {d}");
            last = d;
            tau /= 2.0;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn free_and_constant_traces() {
        let free = SpectralProblem::free(2.0, 3).unwrap();
        let t = 0.7;
        let w = omega_exact2(&free, t).unwrap();
        let want = 2.0 * PI * 2.0 * 3.0 * specfun::theta(t / 4.0).unwrap();
        assert!((w.value - want).abs() < 1e-12);

        // Q = c: the quadratic part is πa t² N c² θ, the t² term of e^{−tc}
        let c = 0.1;
        let p = SpectralProblem::constant(1.0, 1, c).unwrap();
        let w = omega_exact2(&p, t).unwrap();
        let th = specfun::theta(t).unwrap();
        let want = th * 2.0 * PI * (1.0 - t * c + t * t * c * c / 2.0);
        assert!((w.value - want).abs() < 1e-12, "{} vs {want}", w.value);
    }

    #[test]
    fn gamma_for_constant_potential() {
        // q₀ = c alone: the quadratic part is −πa c²/(4(−λ)^{3/2})
        let p = SpectralProblem::constant(1.5, 1, 0.2).unwrap();
        let lambda = -4.0;
        let g = gamma(&p, lambda).unwrap();
        let want = PI * 1.5 * 0.2 / 2.0 - PI * 1.5 * 0.04 / (4.0 * 8.0);
        assert!((g.value - want).abs() < 1e-14);
        assert!(gamma(&p, 0.0).is_err());
        assert!(b_q(&p, 0.5, 1.0).is_err());
    }

    #[test]
    fn gamma_is_the_half_order_case() {
        let p = SpectralProblem::scalar_cosines(2.0, 0.3, &[(1, 0.2), (3, 0.05)]).unwrap();
        for lambda in [-0.5, -3.0, -40.0] {
            let (_, g) = bq_gamma(&p, 1.5, lambda).unwrap();
            let b = b_q(&p, 0.5, lambda).unwrap();
            assert!((g.value - b.value).abs() < 1e-12 * g.value.abs());
        }
    }

    #[test]
    fn half_line_variant_differs() {
        let p = SpectralProblem::scalar_cosines(1.0, 0.0, &[(1, 0.2)]).unwrap();
        let full = gamma(&p, -9.0).unwrap().value;
        let half = gamma_half_line(&p, -9.0).unwrap().value;
        assert!((full - 2.0 * half).abs() < 1e-15);
    }

    #[test]
    fn integer_b_orders() {
        // b_1 = 2πa tr q₀: the ε-linear part of A_1 − λA_0
        let p = SpectralProblem::scalar_cosines(1.0, 0.4, &[(2, 0.3)]).unwrap();
        let b1 = b_q(&p, 1.0, -2.0).unwrap();
        assert!((b1.value - 2.0 * PI * 0.4).abs() < 1e-14);
        // b_2 = 4πa(−λ) tr q₀ + A_2's quadratic part 2πa Σ|q_n|²
        let b2 = b_q(&p, 2.0, -2.0).unwrap();
        let want = 4.0 * PI * 2.0 * 0.4 + 2.0 * PI * (0.16 + 2.0 * 0.09);
        assert!((b2.value - want).abs() < 1e-12, "{} vs {want}", b2.value);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![TraceRow {
            t: 0.5,
            omega_oracle: 1.0,
            omega_pert: 2.0,
            omega_resummed: 3.0,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "t,omega_oracle,omega_pert,omega_resummed\n5.0000000000000000e-1,1.0000000000000000e0,2.0000000000000000e0,3.0000000000000000e0\n"
        );
    }
}
