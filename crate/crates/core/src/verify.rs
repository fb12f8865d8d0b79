//! Named cross-validation checks, one per acceptance criterion.
//!
//! Every check recomputes its inputs from scratch, measures the quantity it
//! is about, and compares it with a pinned tolerance. A failing check still
//! returns its measurements; nothing here panics on a numerical miss.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffpoly::{rat, DiffPoly, Ring};
use crate::error::Result;
use crate::heatcoeffs::{diagonal_coefficient_recursive, integrate_trace, w_coefficient, HeatCoefficients, TaylorTable};
use crate::kdvflow::{self, FlowConfig, Functional, Integrator};
use crate::oracle::{self, precise, Oracle, SpectralProblem, TRACE_TOL};
use crate::periodic::{CMatrix, PeriodicFunction};
use crate::perturb;
use crate::specfun::{self, SpecialFunctions};

/// One measured quantity of a check.
#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub label: String,
    pub value: f64,
    /// Human-readable acceptance window, if this value is gated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    pub measurements: Vec<Measurement>,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary
        )
    }
}

struct Builder {
    id: u32,
    name: &'static str,
    start: Instant,
    measurements: Vec<Measurement>,
    passed: bool,
}

impl Builder {
    fn new(id: u32, name: &'static str) -> Self {
        Builder {
            id,
            name,
            start: Instant::now(),
            measurements: Vec::new(),
            passed: true,
        }
    }

    fn info(&mut self, label: impl Into<String>, value: f64) {
        self.measurements.push(Measurement {
            label: label.into(),
            value,
            limit: None,
        });
    }

    /// Records `value` and folds `ok` into the verdict.
    fn gate(&mut self, label: impl Into<String>, value: f64, limit: impl Into<String>, ok: bool) {
        self.passed &= ok;
        self.measurements.push(Measurement {
            label: label.into(),
            value,
            limit: Some(limit.into()),
        });
    }

    fn at_most(&mut self, label: impl Into<String>, value: f64, max: f64) {
        self.gate(label, value, format!("≤ {max:e}"), value <= max);
    }

    fn fail(&mut self, label: impl Into<String>, err: impl fmt::Display) -> &mut Self {
        self.passed = false;
        self.measurements.push(Measurement {
            label: format!("{}: {err}", label.into()),
            value: f64::NAN,
            limit: None,
        });
        self
    }

    fn finish(self, summary: String) -> CheckResult {
        CheckResult {
            id: self.id,
            name: self.name,
            passed: self.passed,
            summary,
            measurements: self.measurements,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `[a₁]`, `[a₂]`, `[a₃]` in their textbook form.
pub fn reference_diagonals() -> [DiffPoly; 3] {
    let q = |d| DiffPoly::q(d);
    let nc = Ring::Noncommutative;
    let a1 = q(0);
    let a2 = q(0).mul_in(&q(0), nc) - q(2).scale(&rat(1, 3));
    let a3 = q(0).mul_in(&q(0), nc).mul_in(&q(0), nc)
        - (q(0).mul_in(&q(2), nc) + q(2).mul_in(&q(0), nc) + q(1).mul_in(&q(1), nc)).scale(&rat(1, 2))
        + q(4).scale(&rat(1, 10));
    [a1, a2, a3]
}

/// Check 1: `[a₁]`, `[a₂]`, `[a₃]` from a fresh table equal the textbook forms.
pub fn symbolic_ground_truth() -> CheckResult {
    let mut b = Builder::new(1, "symbolic_ground_truth");
    let mut table = TaylorTable::new(Ring::Noncommutative);
    let mut equal = 0;
    for (k, want) in (1..=3).zip(reference_diagonals()) {
        let got = table.diagonal(k);
        let same = got == want;
        equal += same as u32;
        b.gate(format!("[a_{k}] matches"), same as u32 as f64, "= 1", same);
    }
    let secs = b.start.elapsed().as_secs_f64();
    b.at_most("runtime (s)", secs, 1.0);
    b.finish(format!("{equal}/3 coefficients equal, runtime within 1 s: {}", secs <= 1.0))
}

/// Check 2: the Taylor-table and diagonal recursions agree: scalar `k ≤ 8`,
/// matrix `k ≤ 5`.
pub fn recursion_cross_validation() -> CheckResult {
    let mut b = Builder::new(2, "recursion_cross_validation");
    let cases: Vec<(Ring, u32)> = (1..=8)
        .map(|k| (Ring::Commutative, k))
        .chain((1..=5).map(|k| (Ring::Noncommutative, k)))
        .collect();
    let results: Vec<(Ring, u32, bool)> = [Ring::Commutative, Ring::Noncommutative]
        .par_iter()
        .flat_map(|&ring| {
            let mut table = TaylorTable::new(ring);
            cases
                .iter()
                .filter(|(r, _)| *r == ring)
                .map(|&(_, k)| {
                    let ok = diagonal_coefficient_recursive(k, ring).is_ok_and(|rec| rec == table.diagonal(k));
                    (ring, k, ok)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut agree = 0;
    for (ring, k, ok) in &results {
        agree += *ok as u32;
        let tag = if *ring == Ring::Commutative { "scalar" } else { "matrix" };
        b.gate(format!("{tag} k = {k} agrees"), *ok as u32 as f64, "= 1", *ok);
    }
    let secs = b.start.elapsed().as_secs_f64();
    b.at_most("runtime (s)", secs, 60.0);
    b.finish(format!("{agree}/{} cases agree, runtime within 60 s: {}", results.len(), secs <= 60.0))
}

/// Check 3: the free oracle trace equals `2πaN (4πt)^{−1/2} θ(t/a²)`.
pub fn free_trace_identity() -> CheckResult {
    let mut b = Builder::new(3, "free_trace_identity");
    let mut worst: f64 = 0.0;
    for (a, dim) in [(1.0, 1), (2.5, 2)] {
        let run = || -> Result<f64> {
            let p = SpectralProblem::free(a, dim)?;
            let t_min = 0.01 * a * a;
            let eigen = p.eigen(p.cutoff_for(t_min, TRACE_TOL))?;
            let mut w: f64 = 0.0;
            for tau in logspace(0.01, 10.0, 25) {
                let t = tau * a * a;
                let got = eigen.heat_trace(t)?;
                let want = oracle::free_heat_trace(a, dim, t)?;
                w = w.max((got - want).abs() / want);
            }
            Ok(w)
        };
        match run() {
            Ok(w) => {
                b.info(format!("a = {a}, N = {dim}: max relative error"), w);
                worst = worst.max(w);
            }
            Err(e) => {
                b.fail(format!("a = {a}, N = {dim}"), e);
            }
        }
    }
    b.at_most("max relative error", worst, 1e-10);
    b.finish(format!("max relative error {worst:.2e} over t/a² ∈ [0.01, 10]"))
}

/// Exact `A_k/(2πa)` for `Q = 2q₁ cos(x/a)` with rational `a`, `q₁`.
fn exact_zero_modes(a: (i64, i64), q1: (i64, i64), kmax: u32) -> Vec<crate::diffpoly::Rational> {
    let mut table = TaylorTable::new(Ring::Commutative);
    let mut modes = BTreeMap::new();
    modes.insert(1i64, (rat(q1.0, q1.1), rat(0, 1)));
    modes.insert(-1i64, (rat(q1.0, q1.1), rat(0, 1)));
    let inv_a = rat(a.1, a.0);
    (0..=kmax)
        .map(|k| table.diagonal(k).zero_mode_exact(&modes, &inv_a).0)
        .collect()
}

/// Check 4: For `Q = cos x`, `a = 1`: `|Ω − Σ_{k≤6} (−t)^k/k! A_k|` has log-log
/// slope `7 ± 0.3` on `t ∈ [10⁻³, 10⁻¹]`. Both sides in double-double.
pub fn small_t_asymptotics() -> CheckResult {
    let mut b = Builder::new(4, "small_t_asymptotics");
    let zero_modes = exact_zero_modes((1, 1), (1, 2), 6);
    let tri = precise::Tridiagonal::harmonic(&rat(1, 1), &rat(0, 1), &rat(1, 2), precise::cutoff_for(1e-3, 1.0));
    let eigs = tri.eigenvalues();
    let two_pi_a = precise::pi() * 2.0;
    let ts = logspace(1e-3, 1e-1, 9);
    let points: Vec<(f64, f64)> = ts
        .par_iter()
        .map(|&t| {
            let t2 = precise::dd(t);
            let r = (precise::omega(&eigs, t2) - precise::omega_series(&zero_modes, two_pi_a, t2)).hi().abs();
            (t, r)
        })
        .collect();
    for (t, r) in &points {
        b.info(format!("residual at t = {t:.3e}"), *r);
    }
    let a7 = exact_zero_modes((1, 1), (1, 2), 7)[7].clone();
    b.info("A_7/(2πa)", num_traits::ToPrimitive::to_f64(&a7).unwrap_or(f64::NAN));
    let slope = log_log_slope(&points);
    b.gate("slope", slope, "7 ± 0.3", (slope - 7.0).abs() <= 0.3);
    b.finish(format!("residual slope {slope:.3} (target 7 ± 0.3)"))
}

/// Check 5: `log Det(−D² + 1)` on the unit circle from `B_{1/2}` against
/// `2 log(2 sinh π)`.
pub fn determinant_benchmark() -> CheckResult {
    let mut b = Builder::new(5, "determinant_benchmark");
    let want = 2.0 * (2.0 * PI.sinh()).ln();
    let run = || -> Result<f64> {
        let o = Oracle::build(SpectralProblem::constant(1.0, 1, 1.0)?, 1e-2, 6, &mut HeatCoefficients::new())?;
        o.log_det(0.0)
    };
    let summary = match run() {
        Ok(got) => {
            b.info("log Det (Mellin)", got);
            b.info("2 log(2 sinh π)", want);
            let err = (got - want).abs();
            b.at_most("absolute error", err, 1e-6);
            format!("error {err:.2e}")
        }
        Err(e) => {
            b.fail("log Det", &e);
            format!("refused: {e}")
        }
    };
    let secs = b.start.elapsed().as_secs_f64();
    b.at_most("runtime (s)", secs, 30.0);
    b.finish(format!("{summary}, runtime within 30 s: {}", secs <= 30.0))
}

/// Errors of the second-order forms for `Q = 2ε Σ cos(jx/a)`.
struct ScalingErrors {
    omega: Vec<(f64, f64)>,
    gamma: Vec<(f64, f64)>,
}

fn perturbative_errors(harmonics: &[u32], epsilons: &[f64]) -> Result<ScalingErrors> {
    // Ω at a = 1, t = 1; γ at a = 5, λ = −36, so a(−λ)^{1/2} = 30
    let (a_omega, t) = (1.0, 1.0);
    let (a_gamma, lambda): (f64, f64) = (5.0, -36.0);
    let rows: Vec<(f64, f64, f64)> = epsilons
        .par_iter()
        .map(|&eps| {
            let h: Vec<(u32, f64)> = harmonics.iter().map(|&j| (j, eps)).collect();
            let mut coeffs = HeatCoefficients::new();
            let p = SpectralProblem::scalar_cosines(a_omega, 0.0, &h)?;
            let o = Oracle::build(p.clone(), 1e-2, 6, &mut coeffs)?;
            let e_omega = (o.omega(t)? - perturb::omega_exact2(&p, t)?.value).abs();
            let p = SpectralProblem::scalar_cosines(a_gamma, 0.0, &h)?;
            let o = Oracle::build(p.clone(), 1e-2 * a_gamma * a_gamma, 6, &mut coeffs)?;
            let weyl = 2.0 * PI * a_gamma * (-lambda).sqrt();
            let e_gamma = (o.log_det(lambda)? - weyl - perturb::gamma(&p, lambda)?.value).abs();
            Ok((eps, e_omega, e_gamma))
        })
        .collect::<Result<_>>()?;
    Ok(ScalingErrors {
        omega: rows.iter().map(|r| (r.0, r.1)).collect(),
        gamma: rows.iter().map(|r| (r.0, r.2)).collect(),
    })
}

/// Check 6: Errors of the second-order `Ω` and `γ` for `Q = 2ε cos(x/a)` scale
/// with slope `3 ± 0.3` over `ε ∈ {0.1, 0.05, 0.025}`.
///
/// For a single cosine the cubic term vanishes (no three of `±1` sum to
/// zero), so the error is quartic and this check is expected to fail; the
/// two-harmonic control `cos + cos 2x` has a cubic term and is reported
/// alongside.
pub fn perturbative_scaling() -> CheckResult {
    let mut b = Builder::new(6, "perturbative_scaling");
    let eps = [0.1, 0.05, 0.025];
    let summary = match perturbative_errors(&[1], &eps) {
        Ok(e) => {
            for ((x, eo), (_, eg)) in e.omega.iter().zip(&e.gamma) {
                b.info(format!("ε = {x}: Ω error"), *eo);
                b.info(format!("ε = {x}: γ error"), *eg);
            }
            let so = log_log_slope(&e.omega);
            let sg = log_log_slope(&e.gamma);
            b.gate("Ω error slope", so, "3 ± 0.3", (so - 3.0).abs() <= 0.3);
            b.gate("γ error slope", sg, "3 ± 0.3", (sg - 3.0).abs() <= 0.3);
            format!("slopes Ω {so:.3}, γ {sg:.3} (target 3 ± 0.3)")
        }
        Err(e) => {
            b.fail("cosine potential", &e);
            format!("refused: {e}")
        }
    };
    let control = match perturbative_errors(&[1, 2], &eps) {
        Ok(e) => {
            let so = log_log_slope(&e.omega);
            let sg = log_log_slope(&e.gamma);
            b.info("control cos + cos 2x: Ω error slope", so);
            b.info("control cos + cos 2x: γ error slope", sg);
            format!("; control cos + cos 2x: Ω {so:.3}, γ {sg:.3}")
        }
        Err(e) => format!("; control refused: {e}"),
    };
    b.finish(summary + &control)
}

/// Check 7: `f_{−3/2}` by quadrature equals `4/(z+4)`; `α` satisfies its ODE;
/// both `θ` series agree.
pub fn special_function_identities() -> CheckResult {
    let mut b = Builder::new(7, "special_function_identities");
    let sf = SpecialFunctions::default();
    let f_err = (0..=400)
        .map(|i| {
            let z = 100.0 * i as f64 / 400.0;
            (sf.f_q_quadrature(-1.5, z) - specfun::f_minus_three_halves(z)).abs()
        })
        .fold(0.0, f64::max);
    let ode = logspace(1e-3, 1e3, 121)
        .into_iter()
        .map(|z| sf.alpha_ode_residual(z).abs())
        .fold(0.0, f64::max);
    let theta = logspace(1e-2, 10.0, 61)
        .into_iter()
        .map(|t| (specfun::theta_direct(t, 1e-17) - specfun::theta_dual(t, 1e-17)).abs())
        .fold(0.0, f64::max);
    b.at_most("f_{-3/2} max error on [0, 100]", f_err, 1e-10);
    b.at_most("α ODE max residual on [1e-3, 1e3]", ode, 1e-10);
    b.at_most("θ duality max gap on [1e-2, 10]", theta, 1e-12);
    b.finish(format!("f_(-3/2) {f_err:.1e}, α ODE {ode:.1e}, θ duality {theta:.1e}"))
}

/// Real scalar potential with random modes `|n| ≤ band`, amplitudes
/// falling like `1/(1+n)`.
pub fn random_scalar_potential(rng: &mut ChaCha8Rng, radius: f64, band: i64, amp: f64) -> Result<PeriodicFunction> {
    let mut modes = vec![(0, Complex64::new(amp * rng.gen_range(-1.0..1.0), 0.0))];
    for n in 1..=band {
        let s = amp / (1.0 + n as f64);
        let z = Complex64::new(s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0));
        modes.push((n, z));
        modes.push((-n, z.conj()));
    }
    PeriodicFunction::scalar(radius, &modes)
}

/// Hermitian `N × N` potential with random modes `|n| ≤ band`.
pub fn random_matrix_potential(rng: &mut ChaCha8Rng, radius: f64, dim: usize, band: i64, amp: f64) -> Result<PeriodicFunction> {
    let mut random = |s: f64| CMatrix::from_fn(dim, dim, |_, _| Complex64::new(s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0)));
    let m0 = random(amp);
    let mut modes = vec![(0, (&m0 + m0.adjoint()) * Complex64::new(0.5, 0.0))];
    for n in 1..=band {
        let m = random(amp / (1.0 + n as f64));
        modes.push((-n, m.adjoint()));
        modes.push((n, m));
    }
    PeriodicFunction::new(radius, dim, &modes)
}

/// `∫ tr(φ X) dx` from Fourier modes.
pub fn pairing(phi: &PeriodicFunction, x: &PeriodicFunction) -> f64 {
    let b = phi.bandwidth() as i64;
    let s: Complex64 = (-b..=b).map(|n| (phi.mode(-n) * x.mode(n)).trace()).sum();
    2.0 * PI * phi.radius() * s.re
}

/// Relative gap between the central difference of `A_k` along `φ` and the
/// pairing of `φ` with `δA_k/δQ`.
pub fn variational_gap(k: u32, q: &PeriodicFunction, phi: &PeriodicFunction, h: f64, coeffs: &mut HeatCoefficients) -> Result<f64> {
    let density = coeffs.diagonal_for(k, q.dim());
    let plus = integrate_trace(&density, &q.add(&phi.scale(h)))?;
    let minus = integrate_trace(&density, &q.add(&phi.scale(-h)))?;
    let fd = (plus - minus) / (2.0 * h);
    let grad = kdvflow::variational_derivative(k, q, coeffs)?;
    let exact = pairing(phi, &grad);
    Ok((fd - exact).abs() / exact.abs().max(1e-300))
}

/// Check 8: Central differences of `A_k` at `h = 10⁻⁵` match `∫ φ k[a_{k−1}]` to
/// `10⁻⁶` for `k ≤ 4`, on seeded random band-limited scalar `Q` and `φ`.
pub fn variational_derivative() -> CheckResult {
    let mut b = Builder::new(8, "variational_derivative");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut coeffs = HeatCoefficients::new();
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let draw = |rng: &mut ChaCha8Rng| -> Result<(PeriodicFunction, PeriodicFunction)> {
            Ok((random_scalar_potential(rng, 1.3, 3, 0.8)?, random_scalar_potential(rng, 1.3, 3, 1.0)?))
        };
        let (q, phi) = match draw(&mut rng) {
            Ok(v) => v,
            Err(e) => {
                b.fail("random potential", e);
                continue;
            }
        };
        for k in 1..=4 {
            match variational_gap(k, &q, &phi, 1e-5, &mut coeffs) {
                Ok(g) => {
                    b.info(format!("trial {trial}, k = {k}: relative gap"), g);
                    worst = worst.max(g);
                }
                Err(e) => {
                    b.fail(format!("trial {trial}, k = {k}"), e);
                }
            }
        }
    }
    b.at_most("max relative gap", worst, 1e-6);
    b.finish(format!("max relative gap {worst:.2e} for k ≤ 4"))
}

/// Step counts used by the conservation check at grid 256, `s_end = 1`.
pub fn conservation_steps(k: u32) -> usize {
    match k {
        1 => 64,
        2 => 4096,
        _ => 3200,
    }
}

/// Check 9: Flow 2 from `cos x` conserves `A₂ … A₅`; each flow `k ≤ 3` conserves
/// every `I_m`, `m ≤ 3`; halving the flow-2 step cuts its drift ~16×.
pub fn conservation_involution() -> CheckResult {
    let mut b = Builder::new(9, "conservation_involution");
    let run = || -> Result<(f64, Vec<kdvflow::CrossDrift>, f64, f64)> {
        let q0 = PeriodicFunction::scalar_cosine_series(1.0, 0.0, &[(1, 0.5)])?;
        let heat: Vec<Functional> = (2..=5).map(Functional::Heat).collect();
        let base = HeatCoefficients::new();
        let flow2 = |steps: usize| -> Result<f64> {
            let mut c = base.clone();
            let cfg = FlowConfig {
                grid: 256,
                s_end: 1.0,
                steps,
                records: 16,
                integrator: Some(Integrator::Etdrk4),
            };
            let traj = kdvflow::integrate_flow(2, &q0, &cfg, &mut c)?;
            Ok(kdvflow::conservation_report(&traj, &heat, &mut c)?.max_drift())
        };
        let ((d1, d2), cross) = rayon::join(
            || rayon::join(|| flow2(conservation_steps(2)), || flow2(2 * conservation_steps(2))),
            || kdvflow::cross_conservation(&[1, 2, 3], &[1, 2, 3], &q0, 256, 1.0, conservation_steps, &base),
        );
        let (d1, d2) = (d1?, d2?);
        Ok((d1, cross?, d1, d2))
    };
    let summary = match run() {
        Ok((heat_drift, cross, coarse, fine)) => {
            b.at_most("flow 2: max drift of A_2..A_5", heat_drift, 1e-6);
            let mut worst: f64 = 0.0;
            for c in &cross {
                b.at_most(format!("drift of I_{} under flow {}", c.m, c.k), c.drift, 1e-6);
                worst = worst.max(c.drift);
            }
            let ratio = coarse / fine;
            b.gate("step-halving drift ratio", ratio, "16 × 2^(±0.5)", (ratio.log2() - 4.0).abs() <= 0.5);
            format!("A_2..A_5 drift {heat_drift:.1e}, max cross drift {worst:.1e}, halving ratio {ratio:.1}")
        }
        Err(e) => {
            b.fail("flows", &e);
            format!("failed: {e}")
        }
    };
    b.finish(summary)
}

/// Check 10: `D W_k = Ad_Q [a_k]` exactly for `k ≤ 4` (matrix); `W_k` vanishes for
/// scalar potentials.
pub fn w_identity() -> CheckResult {
    let mut b = Builder::new(10, "w_identity");
    let mut table = TaylorTable::new(Ring::Noncommutative);
    let mut scalar = TaylorTable::new(Ring::Commutative);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = random_scalar_potential(&mut rng, 1.0, 2, 0.7);
    let mut ok_count = 0;
    for k in 1..=4 {
        let w = w_coefficient(&mut table, k);
        let ok = w.differentiate() == table.diagonal(k).ad_q(Ring::Noncommutative);
        ok_count += ok as u32;
        b.gate(format!("k = {k}: D W_k = Ad_Q [a_k]"), ok as u32 as f64, "= 1", ok);
        let ws = w_coefficient(&mut scalar, k);
        b.gate(format!("k = {k}: scalar W_k is zero"), ws.is_zero() as u32 as f64, "= 1", ws.is_zero());
        // the matrix W_k evaluated on a scalar potential
        let value = q
            .as_ref()
            .map_err(|e| e.to_string())
            .and_then(|q| {
                let g = crate::heatcoeffs::dealiased_grid(w.max_word_len().max(1), q.bandwidth());
                w.evaluate(q, g).map_err(|e| e.to_string())
            })
            .map(|f| f.max_abs_mode());
        match value {
            Ok(v) => b.at_most(format!("k = {k}: max |W_k| on scalar Q"), v, 1e-12),
            Err(e) => {
                b.fail(format!("k = {k}: scalar evaluation"), e);
            }
        }
    }
    b.finish(format!("{ok_count}/4 identities hold; scalar W_k vanish"))
}

pub type Check = fn() -> CheckResult;

/// Every check with its name, in order.
pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("symbolic_ground_truth", symbolic_ground_truth),
        ("recursion_cross_validation", recursion_cross_validation),
        ("free_trace_identity", free_trace_identity),
        ("small_t_asymptotics", small_t_asymptotics),
        ("determinant_benchmark", determinant_benchmark),
        ("perturbative_scaling", perturbative_scaling),
        ("special_function_identities", special_function_identities),
        ("variational_derivative", variational_derivative),
        ("conservation_involution", conservation_involution),
        ("w_identity", w_identity),
    ]
}

/// All checks, in order.
pub fn run_all() -> Vec<CheckResult> {
    checks().iter().map(|(_, c)| c()).collect()
}

/// Checks specific to one problem: heat trace against its invariants,
/// agreement of the two zeta routes, and, for a constant scalar potential,
/// the closed-form determinant.
pub fn problem_checks(problem: &SpectralProblem) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let a = problem.radius();
    let mut b = Builder::new(1, "problem_oracle");
    let built = Oracle::build(problem.clone(), 1e-2 * a * a, 6, &mut HeatCoefficients::new());
    let o = match built {
        Ok(o) => o,
        Err(e) => {
            b.fail("oracle", &e);
            out.push(b.finish(format!("refused: {e}")));
            return out;
        }
    };
    b.info("n_max", o.eigen.n_max as f64);
    b.info("lowest eigenvalue", o.eigen.lowest());
    b.info("split point t*", o.plan.split);
    out.push(b.finish(format!("n_max {}, λ₁ = {:.6e}", o.eigen.n_max, o.eigen.lowest())));

    let lambda = (o.eigen.lowest() - 1.0).min(-1.0);
    let mut b = Builder::new(2, "problem_zeta_routes");
    let mut worst: f64 = 0.0;
    for s in [1.0, 1.5, 2.0] {
        match (o.zeta(s, lambda), o.zeta_mellin(s, lambda)) {
            (Ok(d), Ok(m)) => worst = worst.max((d - m).abs() / d.abs()),
            (Err(e), _) | (_, Err(e)) => {
                b.fail(format!("s = {s}"), e);
            }
        }
    }
    b.at_most("max relative gap, s ∈ {1, 1.5, 2}", worst, 1e-8);
    out.push(b.finish(format!("direct vs Mellin ζ at λ = {lambda}: {worst:.1e}")));

    if let Some(c) = constant_scalar_value(problem) {
        let mut b = Builder::new(3, "problem_determinant_benchmark");
        let want = oracle::constant_log_det(a, c);
        match o.log_det(0.0) {
            Ok(got) => {
                b.info("log Det", got);
                b.info("2 log(2 sinh(πa√c))", want);
                b.at_most("absolute error", (got - want).abs(), 1e-6);
                out.push(b.finish(format!("log Det {got:.12e}, closed form {want:.12e}")));
            }
            Err(e) => {
                b.fail("log Det", &e);
                out.push(b.finish(format!("refused: {e}")));
            }
        }
    }
    out
}

fn constant_scalar_value(problem: &SpectralProblem) -> Option<f64> {
    let q = problem.potential();
    if q.dim() != 1 || !q.is_real_scalar(1e-14) {
        return None;
    }
    let c = q.mode(0)[(0, 0)].re;
    let rest = q.modes().filter(|(n, _)| *n != 0).all(|(_, m)| m.norm() == 0.0);
    (rest && c > 0.0).then_some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&e: &f64| (e, 3.0 * e.powi(3))).collect();
        assert!((log_log_slope(&pts) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reference_forms_are_self_adjoint() {
        for p in reference_diagonals() {
            assert_eq!(p.reversed(), p);
        }
    }

    #[test]
    fn fast_checks_pass() {
        for c in [symbolic_ground_truth(), special_function_identities(), w_identity()] {
            assert!(c.passed, "{c}\n{:#?}", c.measurements);
        }
    }

    #[test]
    fn registry_names_match() {
        let c = checks();
        assert_eq!(c.len(), 10);
        let r = c.iter().find(|(n, _)| *n == "w_identity").unwrap().1();
        assert_eq!(r.name, "w_identity");
        assert_eq!(r.id, 10);
    }

    #[test]
    fn random_potentials_are_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_scalar_potential(&mut rng, 1.0, 3, 1.0).unwrap().is_real_scalar(0.0));
        assert!(random_matrix_potential(&mut rng, 1.0, 2, 3, 1.0).unwrap().is_hermitian(0.0));
    }
}
