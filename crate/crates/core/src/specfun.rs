//! Special functions of the free and leading-derivative heat traces:
//! the theta function `θ(t)`, `α(z)`, and the family `f_q(z)`.
//!
//! ```text
//! θ(t)   = Σ_n exp(−π²n²/t) = (t/π)^{1/2} Σ_n exp(−t n²)
//! α(z)   = ∫₀¹ exp(−(1−ξ²) z/4) dξ = Σ_k k!/(2k+1)! (−z)^k
//! f_q(z) = ∫₀¹ (1 + (1−ξ²) z/4)^q dξ
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quad::{self, PairedRule};

#[derive(Clone, Debug)]
pub struct SpecialFunctionConfig {
    /// Relative truncation tolerance for series and adaptive quadrature.
    pub tolerance: f64,
    /// Gauss–Legendre nodes per panel (the check rule uses twice as many).
    pub nodes: usize,
    /// `θ(t)` uses the `exp(−π²n²/t)` series below this value of `t` and the
    /// dual `exp(−tn²)` series above it.
    pub theta_crossover: f64,
    /// `α(z)` uses its power series for `|z| ≤ alpha_switch`.
    pub alpha_switch: f64,
}

impl Default for SpecialFunctionConfig {
    fn default() -> Self {
        SpecialFunctionConfig {
            tolerance: 1e-15,
            nodes: 16,
            theta_crossover: PI,
            alpha_switch: 2.0,
        }
    }
}

impl SpecialFunctionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Input(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.nodes < 16 {
            return Err(Error::Input(format!("need at least 16 quadrature nodes, got {}", self.nodes)));
        }
        if !(self.theta_crossover > 0.0) {
            return Err(Error::Input("theta crossover must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluator bound to a configuration.
#[derive(Clone, Debug)]
pub struct SpecialFunctions {
    config: SpecialFunctionConfig,
    rule: PairedRule,
}

impl Default for SpecialFunctions {
    fn default() -> Self {
        SpecialFunctions::new(SpecialFunctionConfig::default()).expect("default config is valid")
    }
}

impl SpecialFunctions {
    pub fn new(config: SpecialFunctionConfig) -> Result<Self> {
        config.validate()?;
        let rule = PairedRule::new(config.nodes);
        Ok(SpecialFunctions { config, rule })
    }

    pub fn config(&self) -> &SpecialFunctionConfig {
        &self.config
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        self.rule.integrate(&f, a, b, self.config.tolerance, 0.0)
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("theta needs t > 0, got {t}")));
        }
        Ok(if t <= self.config.theta_crossover {
            theta_direct(t, self.config.tolerance)
        } else {
            theta_dual(t, self.config.tolerance)
        })
    }

    pub fn alpha(&self, z: f64) -> f64 {
        if z.abs() <= self.config.alpha_switch {
            alpha_series(z)
        } else {
            self.integrate(|xi| (-(1.0 - xi * xi) * z / 4.0).exp(), 0.0, 1.0)
        }
    }

    /// `α′(z) = −¼ ∫₀¹ (1−ξ²) exp(−(1−ξ²) z/4) dξ`.
    pub fn alpha_derivative(&self, z: f64) -> f64 {
        if z.abs() <= self.config.alpha_switch {
            alpha_derivative_series(z)
        } else {
            -0.25
                * self.integrate(
                    |xi| {
                        let u = 1.0 - xi * xi;
                        u * (-u * z / 4.0).exp()
                    },
                    0.0,
                    1.0,
                )
        }
    }

    /// `z·(4α′ + α) + 2α − 2`, the differential equation
    /// `(4∂ + 1 + 2/z) α = 2/z` multiplied through by `z`.
    pub fn alpha_ode_residual(&self, z: f64) -> f64 {
        let a = self.alpha(z);
        z * (4.0 * self.alpha_derivative(z) + a) + 2.0 * a - 2.0
    }

    /// `α` applied to a real symmetric matrix through its eigen-decomposition.
    pub fn alpha_symmetric(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let eig = m.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|z| self.alpha(z)));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    pub fn f_q(&self, q: f64, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(Error::Domain(format!("f_q needs z ≥ 0, got {z}")));
        }
        if z == 0.0 {
            return Ok(1.0);
        }
        if q == -1.5 {
            return Ok(f_minus_three_halves(z));
        }
        if q == -0.5 {
            return Ok(f_minus_half(z));
        }
        if q >= 0.0 && q.fract() == 0.0 && q <= 170.0 {
            return Ok(f_q_polynomial(q as u32, z));
        }
        Ok(self.f_q_quadrature(q, z))
    }

    /// Direct quadrature of the defining integral, with no closed-form dispatch.
    pub fn f_q_quadrature(&self, q: f64, z: f64) -> f64 {
        self.integrate(|xi| (1.0 + (1.0 - xi * xi) * z / 4.0).powf(q), 0.0, 1.0)
    }
}

/// `Σ_n exp(−π²n²/t)`.
pub fn theta_direct(t: f64, tol: f64) -> f64 {
    1.0 + 2.0 * positive_tail(|n| (-PI * PI * n * n / t).exp(), tol)
}

/// `(t/π)^{1/2} Σ_n exp(−t n²)`.
pub fn theta_dual(t: f64, tol: f64) -> f64 {
    (t / PI).sqrt() * (1.0 + 2.0 * positive_tail(|n| (-t * n * n).exp(), tol))
}

/// `Σ_{n ≥ 1} term(n)` for monotonically decreasing positive terms.
fn positive_tail<F: Fn(f64) -> f64>(term: F, tol: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 1.0;
    loop {
        let v = term(n);
        sum += v;
        if v <= tol * 1e-3 * (1.0 + sum) || n > 1e7 {
            return sum;
        }
        n += 1.0;
    }
}

pub fn theta(t: f64) -> Result<f64> {
    SpecialFunctions::default().theta(t)
}

pub fn alpha(z: f64) -> f64 {
    SpecialFunctions::default().alpha(z)
}

pub fn f_q(q: f64, z: f64) -> Result<f64> {
    SpecialFunctions::default().f_q(q, z)
}

/// `Σ_k k!/(2k+1)! (−z)^k`, summed until the terms stop mattering.
pub fn alpha_series(z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        // c_k / c_{k-1} = k / ((2k)(2k+1))
        term *= -z * kf / ((2.0 * kf) * (2.0 * kf + 1.0));
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

fn alpha_derivative_series(z: f64) -> f64 {
    // d/dz Σ c_k (−z)^k = −Σ_{k≥1} k c_k (−z)^{k−1}
    let mut c = 1.0;
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        c *= kf / ((2.0 * kf) * (2.0 * kf + 1.0));
        let term = -kf * c * pow;
        sum += term;
        pow *= -z;
        if term.abs() <= 1e-18 * sum.abs() && k > 2 {
            break;
        }
    }
    sum
}

/// `f_{−3/2}(z) = 4/(z + 4)`.
pub fn f_minus_three_halves(z: f64) -> f64 {
    4.0 / (z + 4.0)
}

/// `f_{−1/2}(z) = (2/√z) arcsin((1 + 4/z)^{−1/2})`.
pub fn f_minus_half(z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    2.0 / z.sqrt() * (1.0 + 4.0 / z).powf(-0.5).asin()
}

/// Terminating series for non-negative integer `q`:
/// `Σ_j q! j! / ((q−j)! (2j+1)!) z^j`.
pub fn f_q_polynomial(q: u32, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut c = 1.0;
    let mut zp = 1.0;
    for j in 0..=q {
        if j > 0 {
            let jf = j as f64;
            c *= (q - j + 1) as f64 * jf / ((2.0 * jf) * (2.0 * jf + 1.0));
            zp *= z;
        }
        sum += c * zp;
    }
    sum
}

/// Leading large-`z` coefficient `Γ(q+1)²/Γ(2q+2)` of `f_q(z) ~ C z^q`,
/// valid for `q > −1/2`.
pub fn f_q_asymptotic_coefficient(q: f64) -> f64 {
    (2.0 * ln_gamma(q + 1.0) - ln_gamma(2.0 * q + 2.0)).exp()
}

/// `1/Γ(x)`, zero at the poles `x = 0, −1, −2, …`.
pub fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x.fract() == 0.0 {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// Shared default-rule quadrature for callers outside this module.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    quad::integrate(&f, a, b, rel_tol, 0.0)
}
