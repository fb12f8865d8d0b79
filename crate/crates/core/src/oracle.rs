//! Brute-force spectral truth for `L = −D² + Q` on the circle of radius `a`.
//!
//! `L` is truncated to plane waves `|n| ≤ n_max`, where its matrix is
//! `(n²/a²) δ_nm 𝕀 + q_{n−m}`. From the eigenvalues we build the heat trace
//! `Θ(t) = Σ e^{−tλ_j}`, `Ω(t) = (4πt)^{1/2} Θ(t)`, the zeta function and the
//! modified Mellin transform
//!
//! ```text
//! B_q(λ) = 1/Γ(−q) ∫₀^∞ dt t^{−q−1} e^{tλ} Ω(t),    log Det(L − λ) = B_{1/2}(λ).
//! ```

pub mod precise;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::heatcoeffs::HeatCoefficients;
use crate::periodic::{CMatrix, PeriodicFunction};
use crate::quad;
use crate::specfun::recip_gamma;

/// Truncation tolerance for heat-trace sums.
pub const TRACE_TOL: f64 = 1e-15;

/// Largest plane-wave cutoff [`Oracle::build`] grows to on its own.
pub const MAX_CUTOFF: usize = 1500;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProblem {
    potential: PeriodicFunction,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    a: f64,
    #[serde(rename = "N")]
    n: usize,
    modes: Vec<ModeEntry>,
}

#[derive(Serialize, Deserialize)]
struct ModeEntry {
    n: i64,
    /// Row-major `[re, im]` pairs.
    matrix: Vec<[f64; 2]>,
}

impl SpectralProblem {
    /// Wraps a potential after checking `q_{−n} = q_n†`.
    pub fn new(potential: PeriodicFunction) -> Result<Self> {
        let scale = potential.max_abs_mode().max(1.0);
        if !potential.is_hermitian(1e-12 * scale) {
            return Err(Error::Input("potential is not Hermitian (q_{-n} != q_n^†)".into()));
        }
        Ok(SpectralProblem { potential })
    }

    pub fn free(a: f64, dim: usize) -> Result<Self> {
        Self::new(PeriodicFunction::new(a, dim, &[])?)
    }

    /// `Q = c 𝕀`.
    pub fn constant(a: f64, dim: usize, c: f64) -> Result<Self> {
        let m = CMatrix::identity(dim, dim) * Complex64::new(c, 0.0);
        Self::new(PeriodicFunction::new(a, dim, &[(0, m)])?)
    }

    /// Scalar `Q = q₀ + 2 Σ c_k cos(kx/a)`.
    pub fn scalar_cosines(a: f64, q0: f64, harmonics: &[(u32, f64)]) -> Result<Self> {
        Self::new(PeriodicFunction::scalar_cosine_series(a, q0, harmonics)?)
    }

    pub fn potential(&self) -> &PeriodicFunction {
        &self.potential
    }

    pub fn radius(&self) -> f64 {
        self.potential.radius()
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn bandwidth(&self) -> usize {
        self.potential.bandwidth()
    }

    /// Reads the JSON problem format. Modes with negative `n` that are
    /// missing are filled in as adjoints of their positive partners.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(s)?;
        let dim = file.n;
        if dim == 0 {
            return Err(Error::Input("N must be at least 1".into()));
        }
        let mut modes: Vec<(i64, CMatrix)> = Vec::new();
        for e in &file.modes {
            if e.matrix.len() != dim * dim {
                return Err(Error::Input(format!(
                    "mode {} has {} entries, expected N² = {}",
                    e.n,
                    e.matrix.len(),
                    dim * dim
                )));
            }
            if modes.iter().any(|(n, _)| *n == e.n) {
                return Err(Error::Input(format!("mode {} listed twice", e.n)));
            }
            let data: Vec<Complex64> = e.matrix.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
            modes.push((e.n, CMatrix::from_row_slice(dim, dim, &data)));
        }
        let present: Vec<i64> = modes.iter().map(|(n, _)| *n).collect();
        let mirrored: Vec<(i64, CMatrix)> = modes
            .iter()
            .filter(|(n, _)| *n > 0 && !present.contains(&-n))
            .map(|(n, m)| (-n, m.adjoint()))
            .collect();
        modes.extend(mirrored);
        Self::new(PeriodicFunction::new(file.a, dim, &modes)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let dim = self.dim();
        let modes = self
            .potential
            .modes()
            .filter(|(_, m)| m.iter().any(|z| *z != Complex64::new(0.0, 0.0)))
            .map(|(n, m)| ModeEntry {
                n,
                matrix: (0..dim * dim)
                    .map(|i| {
                        let z = m[(i / dim, i % dim)];
                        [z.re, z.im]
                    })
                    .collect(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&ProblemFile {
            a: self.radius(),
            n: dim,
            modes,
        })?)
    }

    /// Plane-wave matrix of size `(2 n_max + 1) N`, ordered by `n` ascending.
    pub fn assemble(&self, n_max: usize) -> Result<CMatrix> {
        let b = self.bandwidth();
        if n_max < b {
            return Err(Error::Resolution {
                reason: format!("cutoff {n_max} is below the potential bandwidth {b}"),
                needed: b,
            });
        }
        let dim = self.dim();
        let a = self.radius();
        let size = (2 * n_max + 1) * dim;
        let mut h = CMatrix::zeros(size, size);
        let nm = n_max as i64;
        for (i, n) in (-nm..=nm).enumerate() {
            for (j, m) in (-nm..=nm).enumerate() {
                let diff = n - m;
                if diff.unsigned_abs() as usize > b && n != m {
                    continue;
                }
                let mut block = self.potential.mode(diff);
                if n == m {
                    for d in 0..dim {
                        block[(d, d)] += Complex64::new((n * n) as f64 / (a * a), 0.0);
                    }
                }
                h.view_mut((i * dim, j * dim), (dim, dim)).copy_from(&block);
            }
        }
        Ok(h)
    }

    /// Sorted eigenvalues of the truncated operator.
    pub fn eigen(&self, n_max: usize) -> Result<EigenData> {
        let h = self.assemble(n_max)?;
        let real = h.iter().all(|z| z.im == 0.0);
        let mut values: Vec<f64> = if real {
            let r: DMatrix<f64> = h.map(|z| z.re);
            r.symmetric_eigenvalues().iter().copied().collect()
        } else {
            h.symmetric_eigenvalues().iter().copied().collect()
        };
        values.sort_by(f64::total_cmp);
        let reliable_levels = n_max.saturating_sub(2 * self.bandwidth());
        Ok(EigenData {
            n_max,
            reliable_levels,
            radius: self.radius(),
            dim: self.dim(),
            potential_norm: self.potential_norm(),
            eigenvalues: values,
        })
    }

    /// Cutoff at which `Θ(t)` for all `t ≥ t_min` is resolved to `tol`.
    pub fn cutoff_for(&self, t_min: f64, tol: f64) -> usize {
        let a = self.radius();
        let levels = (a * ((-tol.ln() + 5.0) / t_min + self.potential_norm()).sqrt()).ceil() as usize;
        levels + 2 * self.bandwidth() + 1
    }

    /// Crude bound on `‖Q(x)‖`: the sum of mode norms.
    pub fn potential_norm(&self) -> f64 {
        self.potential.modes().map(|(_, m)| m.norm()).sum()
    }
}

/// Eigenvalues of the truncated operator. Only the lowest
/// `N (2 reliable_levels + 1)` of them are treated as converged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenData {
    pub n_max: usize,
    pub reliable_levels: usize,
    pub radius: f64,
    pub dim: usize,
    pub potential_norm: f64,
    pub eigenvalues: Vec<f64>,
}

impl EigenData {
    pub fn lowest(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Converged eigenvalues, ascending.
    pub fn reliable(&self) -> &[f64] {
        let count = self.dim * (2 * self.reliable_levels + 1);
        &self.eigenvalues[..count.min(self.eigenvalues.len())]
    }

    /// Estimated relative weight of the discarded spectrum in `Θ(t)`.
    fn truncation_weight(&self, t: f64) -> f64 {
        let a = self.radius;
        let n = (self.reliable_levels + 1) as f64;
        let floor = n * n / (a * a) - self.potential_norm;
        let lead = (-t * floor).exp();
        // Gaussian tail: Σ_{m ≥ n} e^{−t m²/a²} ≤ e^{−t n²/a²} (1 + a √(π/4t))
        2.0 * self.dim as f64 * lead * (1.0 + a * (PI / (4.0 * t)).sqrt())
    }

    /// Refuses when `t` is too small for the cutoff, reporting the cutoff
    /// that would suffice.
    pub fn check_trace(&self, t: f64, tol: f64) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("heat trace needs t > 0, got {t}")));
        }
        let theta = self.sum_exp(t);
        if self.truncation_weight(t) > tol * theta {
            let a = self.radius;
            let levels = (a * ((-(tol).ln() + 5.0) / t + self.potential_norm).sqrt()).ceil() as usize;
            return Err(Error::Resolution {
                reason: format!("cutoff {} cannot resolve the heat trace at t = {t}", self.n_max),
                needed: levels + (self.n_max - self.reliable_levels) + 1,
            });
        }
        Ok(())
    }

    fn sum_exp(&self, t: f64) -> f64 {
        let l0 = self.lowest();
        // shift by λ₁ for accuracy, restore afterwards
        let s: f64 = self.reliable().iter().map(|l| (-t * (l - l0)).exp()).sum();
        s * (-t * l0).exp()
    }

    /// `Θ(t) = Σ e^{−tλ_j}`.
    pub fn heat_trace(&self, t: f64) -> Result<f64> {
        self.check_trace(t, TRACE_TOL)?;
        Ok(self.sum_exp(t))
    }

    /// `Ω(t) = (4πt)^{1/2} Θ(t)`.
    pub fn omega(&self, t: f64) -> Result<f64> {
        Ok((4.0 * PI * t).sqrt() * self.heat_trace(t)?)
    }

    fn check_shift(&self, lambda: f64) -> Result<()> {
        if !(lambda < self.lowest()) {
            return Err(Error::Domain(format!(
                "λ = {lambda} is not below the lowest eigenvalue {}",
                self.lowest()
            )));
        }
        Ok(())
    }

    /// `ζ(s, λ) = Σ (λ_j − λ)^{−s}` for `s > 1/2`: converged eigenvalues summed
    /// directly, the rest replaced by the free spectrum shifted by the mean
    /// of `tr Q / N`.
    pub fn zeta(&self, s: f64, lambda: f64, mean_shift: f64) -> Result<f64> {
        self.check_shift(lambda)?;
        if !(s > 0.5) {
            return Err(Error::Domain(format!("the direct zeta sum needs s > 1/2, got {s}")));
        }
        let direct: f64 = self.reliable().iter().map(|l| (l - lambda).powf(-s)).sum();
        let a = self.radius;
        let tail = 2.0 * self.dim as f64 * shifted_free_tail(s, a, mean_shift - lambda, self.reliable_levels + 1);
        Ok(direct + tail)
    }
}

/// `Σ_{n ≥ n0} (n²/a² + c)^{−s}`: a direct sum for a while, then the integral
/// with Euler–Maclaurin corrections.
pub fn shifted_free_tail(s: f64, a: f64, c: f64, n0: usize) -> f64 {
    let f = |n: f64| (n * n / (a * a) + c).powf(-s);
    let direct_terms = 4000;
    let mut sum = 0.0;
    for n in n0..n0 + direct_terms {
        sum += f(n as f64);
    }
    let m = (n0 + direct_terms) as f64;
    // ∫_m^∞ a^{2s} (n² + b²)^{−s} dn by the binomial series in b²/n²
    let b2 = a * a * c;
    let mut integral = 0.0;
    let mut binom = 1.0;
    for j in 0..60 {
        let jf = j as f64;
        if j > 0 {
            binom *= (-s - jf + 1.0) / jf;
        }
        let term = binom * b2.powi(j) * m.powf(1.0 - 2.0 * s - 2.0 * jf) / (2.0 * s + 2.0 * jf - 1.0);
        integral += term;
        if term.abs() < 1e-18 * integral.abs() {
            break;
        }
    }
    integral *= a.powf(2.0 * s);
    // f(m)/2 − f′(m)/12 with f′ by the chain rule
    let fm = f(m);
    let dfm = -s * (m * m / (a * a) + c).powf(-s - 1.0) * 2.0 * m / (a * a);
    sum + integral + fm / 2.0 - dfm / 12.0
}

/// `A_0 … A_K` for a problem, plus the Taylor coefficients of `e^{tλ}Ω(t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatInvariants {
    pub values: Vec<f64>,
}

impl HeatInvariants {
    pub fn compute(problem: &SpectralProblem, kmax: u32, coeffs: &mut HeatCoefficients) -> Result<Self> {
        Ok(HeatInvariants {
            values: coeffs.global_invariants(kmax, problem.potential())?,
        })
    }

    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    /// `B_k(λ) = Σ_j C(k,j) (−λ)^j A_{k−j}`.
    pub fn taylor_b(&self, k: usize, lambda: f64) -> Result<f64> {
        if k > self.order() {
            return Err(Error::Input(format!("B_{k} needs A_k up to k = {k}, have {}", self.order())));
        }
        let mut binom = 1.0;
        let mut sum = 0.0;
        for j in 0..=k {
            if j > 0 {
                binom *= (k - j + 1) as f64 / j as f64;
            }
            sum += binom * (-lambda).powi(j as i32) * self.values[k - j];
        }
        Ok(sum)
    }

    /// `Σ_{k ≤ K} (−t)^k/k! A_k`.
    pub fn omega_series(&self, t: f64, order: usize) -> f64 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for (k, a) in self.values.iter().enumerate().take(order + 1) {
            if k > 0 {
                term *= -t / k as f64;
            }
            sum += term * a;
        }
        sum
    }
}

/// Configuration of the split Mellin integral.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MellinPlan {
    /// `t*`: the small-`t` series is used on `(0, t*)`, eigenvalues beyond.
    pub split: f64,
    /// Order `K` of the small-`t` series.
    pub order: usize,
    /// Relative tolerance of the tail quadrature.
    pub tail_tol: f64,
    /// Allowed relative mismatch between series and eigen-sum at `t*`.
    pub match_tol: f64,
}

impl MellinPlan {
    /// `t* = a²/4`, `K = 6`.
    pub fn for_problem(problem: &SpectralProblem) -> Self {
        let a = problem.radius();
        MellinPlan {
            split: a * a / 4.0,
            order: 6,
            tail_tol: 1e-13,
            match_tol: 1e-8,
        }
    }

    /// Shrinks `t*` until the series reproduces the eigen-sum at the split.
    pub fn tuned(problem: &SpectralProblem, eigen: &EigenData, inv: &HeatInvariants) -> Result<Self> {
        let mut plan = Self::for_problem(problem);
        plan.order = plan.order.min(inv.order());
        for _ in 0..30 {
            eigen.check_trace(plan.split, TRACE_TOL)?;
            if plan.series_mismatch(eigen, inv)? <= plan.match_tol {
                return Ok(plan);
            }
            plan.split /= 2.0;
        }
        Err(Error::Resolution {
            reason: "no split point where the small-t series matches the eigenvalue sum".into(),
            needed: eigen.n_max * 2,
        })
    }

    fn series_mismatch(&self, eigen: &EigenData, inv: &HeatInvariants) -> Result<f64> {
        let exact = eigen.omega(self.split)?;
        let series = inv.omega_series(self.split, self.order);
        Ok((exact - series).abs() / exact.abs().max(1e-300))
    }

    pub fn validate(&self, inv: &HeatInvariants) -> Result<()> {
        if !(self.split > 0.0) {
            return Err(Error::Input(format!("split point must be positive, got {}", self.split)));
        }
        if self.order > inv.order() {
            return Err(Error::Input(format!(
                "series order {} exceeds the {} available invariants",
                self.order,
                inv.order()
            )));
        }
        Ok(())
    }
}

/// `∫₀^T t^{s−1} e^{−μt} dt`, continued analytically in `s` (any real `s`
/// that is not a non-positive integer).
pub fn lower_incomplete(s: f64, mu: f64, big_t: f64) -> f64 {
    let x = mu * big_t;
    big_t.powf(s) * scaled_lower_gamma(s, x)
}

/// `g(s, x) = x^{−s} γ(s, x)`, entire in `x`.
fn scaled_lower_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        // Σ_m (−x)^m / (m! (s + m)): positive terms once m > −s
        let y = -x;
        let mut term = 1.0;
        let mut sum = 1.0 / s;
        for m in 1..2000 {
            term *= y / m as f64;
            let v = term / (s + m as f64);
            sum += v;
            if v.abs() <= 1e-17 * sum.abs() && m as f64 > y {
                break;
            }
        }
        sum
    } else if x < 60.0 {
        // e^{−x} Σ_n x^n / (s (s+1) ⋯ (s+n))
        let mut term = 1.0 / s;
        let mut sum = term;
        for n in 1..2000 {
            term *= x / (s + n as f64);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() && n as f64 > x {
                break;
            }
        }
        (-x).exp() * sum
    } else {
        x.powf(-s) * (gamma(s) - upper_gamma_cf(s, x))
    }
}

/// `Γ(s, x)` by the Lentz continued fraction, for `x` well above `s`.
fn upper_gamma_cf(s: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + s * x.ln()).exp() * h
}

/// `B_q(λ)` by the split Mellin integral.
///
/// On `(0, t*)` the series `Σ_k (−t)^k/k! A_k` is integrated against
/// `t^{−q−1} e^{tλ}` in closed form (incomplete gamma functions); on
/// `(t*, ∞)` the eigenvalue sum is integrated by adaptive quadrature over
/// geometrically growing panels. Non-negative integer `q` uses the Taylor
/// coefficients directly.
pub fn b_function(eigen: &EigenData, inv: &HeatInvariants, q: f64, lambda: f64, plan: &MellinPlan) -> Result<f64> {
    eigen.check_shift(lambda)?;
    plan.validate(inv)?;
    if q >= 0.0 && q.fract() == 0.0 {
        return inv.taylor_b(q as usize, lambda);
    }
    eigen.check_trace(plan.split, TRACE_TOL)?;
    let mismatch = plan.series_mismatch(eigen, inv)?;
    if mismatch > plan.match_tol {
        return Err(Error::Resolution {
            reason: format!(
                "small-t series and eigenvalue sum differ by {mismatch:.3e} at t* = {}",
                plan.split
            ),
            needed: eigen.n_max,
        });
    }
    let rg = recip_gamma(-q);
    Ok(rg * (series_piece(inv, q, lambda, plan) + tail_piece(eigen, q, lambda, plan)))
}

fn series_piece(inv: &HeatInvariants, q: f64, lambda: f64, plan: &MellinPlan) -> f64 {
    let mut fact = 1.0;
    let mut sum = 0.0;
    for k in 0..=plan.order {
        if k > 0 {
            fact *= k as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * inv.values[k] / fact * lower_incomplete(k as f64 - q, -lambda, plan.split);
    }
    sum
}

fn tail_piece(eigen: &EigenData, q: f64, lambda: f64, plan: &MellinPlan) -> f64 {
    let l0 = eigen.lowest();
    let gap = l0 - lambda;
    let reliable = eigen.reliable();
    let prefactor = (4.0 * PI).sqrt();
    // t^{−q−1/2} Σ_j e^{−t(λ_j − λ)}, factored as e^{−t·gap} × (sum relative to λ₁)
    let integrand = |t: f64| {
        let s: f64 = reliable.iter().map(|l| (-t * (l - l0)).exp()).sum();
        prefactor * t.powf(-q - 0.5) * (-t * gap).exp() * s
    };
    let mut total = 0.0;
    let mut lo = plan.split;
    loop {
        let hi = lo + lo.max(1.0 / gap).min(20.0 / gap);
        let piece = quad::integrate(&integrand, lo, hi, plan.tail_tol, 0.0);
        total += piece;
        lo = hi;
        if piece.abs() <= 1e-18 * total.abs() || (lo - plan.split) * gap > 800.0 {
            break;
        }
    }
    total
}

/// `log Det(L − λ) = B_{1/2}(λ)`.
pub fn log_det(eigen: &EigenData, inv: &HeatInvariants, lambda: f64, plan: &MellinPlan) -> Result<f64> {
    b_function(eigen, inv, 0.5, lambda, plan)
}

/// `ζ(s, λ) = (4π)^{−1/2} Γ(s − 1/2)/Γ(s) · B_{1/2−s}(λ)`.
pub fn zeta_mellin(eigen: &EigenData, inv: &HeatInvariants, s: f64, lambda: f64, plan: &MellinPlan) -> Result<f64> {
    let rg = recip_gamma(s);
    if rg == 0.0 {
        eigen.check_shift(lambda)?;
        return Ok(0.0);
    }
    let b = b_function(eigen, inv, 0.5 - s, lambda, plan)?;
    Ok((4.0 * PI).powf(-0.5) * gamma(s - 0.5) * rg * b)
}

/// Everything needed to evaluate spectral functions of one problem.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub problem: SpectralProblem,
    pub eigen: EigenData,
    pub invariants: HeatInvariants,
    pub plan: MellinPlan,
}

impl Oracle {
    /// Builds an oracle resolving heat traces down to `t_min`, with `K`
    /// small-`t` invariants.
    pub fn build(problem: SpectralProblem, t_min: f64, order: u32, coeffs: &mut HeatCoefficients) -> Result<Self> {
        let plan_t = MellinPlan::for_problem(&problem).split;
        if !(t_min > 0.0) {
            return Err(Error::Domain(format!("t_min must be positive, got {t_min}")));
        }
        let mut n_max = problem.cutoff_for(t_min.min(plan_t / 16.0), TRACE_TOL);
        if n_max > MAX_CUTOFF {
            return Err(Error::Resolution {
                reason: format!("t_min = {t_min:e} needs more plane waves than the dense solver allows ({MAX_CUTOFF})"),
                needed: n_max,
            });
        }
        let invariants = HeatInvariants::compute(&problem, order, coeffs)?;
        // a strong potential may push the split point below what the first
        // cutoff resolves; grow the cutoff a few times before giving up
        for attempt in 0..6 {
            let eigen = problem.eigen(n_max)?;
            match MellinPlan::tuned(&problem, &eigen, &invariants) {
                Ok(plan) => {
                    return Ok(Oracle {
                        problem,
                        eigen,
                        invariants,
                        plan,
                    })
                }
                Err(Error::Resolution { needed, .. }) if attempt < 5 && needed <= MAX_CUTOFF => {
                    n_max = needed.max(n_max + n_max / 2);
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("the last attempt returns")
    }

    pub fn mean_shift(&self) -> f64 {
        self.problem.potential().trace_mean() / self.problem.dim() as f64
    }

    pub fn omega(&self, t: f64) -> Result<f64> {
        self.eigen.omega(t)
    }

    pub fn zeta(&self, s: f64, lambda: f64) -> Result<f64> {
        self.eigen.zeta(s, lambda, self.mean_shift())
    }

    pub fn zeta_mellin(&self, s: f64, lambda: f64) -> Result<f64> {
        zeta_mellin(&self.eigen, &self.invariants, s, lambda, &self.plan)
    }

    pub fn b_function(&self, q: f64, lambda: f64) -> Result<f64> {
        b_function(&self.eigen, &self.invariants, q, lambda, &self.plan)
    }

    pub fn log_det(&self, lambda: f64) -> Result<f64> {
        log_det(&self.eigen, &self.invariants, lambda, &self.plan)
    }

    /// `log Det` over a grid of shifts, evaluated in parallel.
    pub fn log_det_grid(&self, lambdas: &[f64]) -> Vec<Result<f64>> {
        lambdas.par_iter().map(|&l| self.log_det(l)).collect()
    }
}

/// Free heat trace `2πaN (4πt)^{−1/2} θ(t/a²)`.
pub fn free_heat_trace(a: f64, dim: usize, t: f64) -> Result<f64> {
    let theta = crate::specfun::theta(t / (a * a))?;
    Ok(2.0 * PI * a * dim as f64 * (4.0 * PI * t).powf(-0.5) * theta)
}

/// `2 log(2 sinh(πa√c))`, the determinant of `−D² + c` at `λ = 0`.
pub fn constant_log_det(a: f64, c: f64) -> f64 {
    let x = PI * a * c.sqrt();
    // log(2 sinh x) = x + log(1 − e^{−2x})
    2.0 * (x + (-(-2.0 * x).exp()).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn free_matrix_is_diagonal() {
        let p = SpectralProblem::free(1.0, 1).unwrap();
        let h = p.assemble(2).unwrap();
        let d: Vec<f64> = (0..5).map(|i| h[(i, i)].re).collect();
        assert_eq!(d, vec![4.0, 1.0, 0.0, 1.0, 4.0]);
        assert!(p.assemble(2).unwrap().iter().filter(|z| z.norm() > 0.0).count() == 4);
    }

    #[test]
    fn constant_shift() {
        let p = SpectralProblem::constant(2.0, 2, 0.3).unwrap();
        let e = p.eigen(3).unwrap();
        assert!(close(e.eigenvalues[0], 0.3, 1e-14));
        assert!(close(e.eigenvalues[2], 0.25 + 0.3, 1e-14));
        assert_eq!(e.eigenvalues.len(), 14);
    }

    #[test]
    fn mathieu_structure() {
        let p = SpectralProblem::scalar_cosines(1.0, 0.0, &[(1, 0.2)]).unwrap();
        let h = p.assemble(3).unwrap();
        for i in 0..7usize {
            for j in 0..7usize {
                let want = if i == j {
                    ((i as f64) - 3.0).powi(2)
                } else if i.abs_diff(j) == 1 {
                    0.2
                } else {
                    0.0
                };
                assert_eq!(h[(i, j)].re, want);
            }
        }
        assert!(p.assemble(0).is_err());
    }

    #[test]
    fn free_trace_identity() {
        let p = SpectralProblem::free(1.5, 1).unwrap();
        let e = p.eigen(p.cutoff_for(0.01 * 2.25, TRACE_TOL)).unwrap();
        for t in [0.0225, 0.3, 2.0, 22.5] {
            let a = e.heat_trace(t).unwrap();
            let b = free_heat_trace(1.5, 1, t).unwrap();
            assert!(close(a, b, 1e-12), "t = {t}: {a} vs {b}");
        }
    }

    #[test]
    fn trace_refuses_small_t() {
        let p = SpectralProblem::free(1.0, 1).unwrap();
        let e = p.eigen(10).unwrap();
        match e.heat_trace(1e-3) {
            Err(Error::Resolution { needed, .. }) => {
                let e2 = p.eigen(needed).unwrap();
                assert!(e2.heat_trace(1e-3).is_ok());
            }
            other => panic!("expected a refusal, got {other:?}"),
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn incomplete_gamma_continuation() {
        // (x, γ(3/2, x), γ(−1/2, x)) to 17 digits
        let table = [
            (0.1, 0.019860967741930696, -6.9466770385026473),
            (2.0, 0.65451037345177732, -3.5750064589112185),
            (30.0, 0.88622692545223707, -3.5449077018110326),
            (90.0, 0.88622692545275801, -3.5449077018110321),
        ];
        for (x, g32, gm) in table {
            assert!(close(lower_incomplete(1.5, 1.0, x), g32, 1e-14), "x = {x}");
            assert!(close(lower_incomplete(-0.5, 1.0, x), gm, 1e-14), "x = {x}");
            // same integral with μ and T traded: ∫₀^{x/2} t^{s−1} e^{−2t} dt = 2^{−s} γ(s, x)
            assert!(close(lower_incomplete(1.5, 2.0, x / 2.0), g32 * 2f64.powf(-1.5), 1e-14));
        }
        // negative μ: ∫₀^1 t^{−1/2} e^{t} dt = 2 Σ 1/(m!(2m+1))
        let want: f64 = (0..30).map(|m| 2.0 / (gamma(m as f64 + 1.0) * (2 * m + 1) as f64)).sum();
        assert!(close(lower_incomplete(0.5, -1.0, 1.0), want, 1e-14));
    }

    #[test]
    fn json_round_trip_and_mirroring() {
        let s = r#"{"a": 1.0, "N": 1, "modes": [{"n": 1, "matrix": [[0.5, 0.25]]}]}"#;
        let p = SpectralProblem::from_json(s).unwrap();
        assert_eq!(p.potential().mode(-1)[(0, 0)], Complex64::new(0.5, -0.25));
        let back = SpectralProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"a": 1.0, "N": 1, "modes": [{"n": 1, "matrix": [[0.5, 0]]}, {"n": -1, "matrix": [[0.4, 0]]}]}"#;
        assert!(SpectralProblem::from_json(bad).is_err());
        let wrong_size = r#"{"a": 1.0, "N": 2, "modes": [{"n": 0, "matrix": [[1, 0]]}]}"#;
        assert!(SpectralProblem::from_json(wrong_size).is_err());
    }
}
