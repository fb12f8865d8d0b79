//! Matrix-valued functions on the circle of radius `a`, stored as truncated
//! Fourier modes: `Q(x) = Σ_{|n| ≤ B} q_n e^{inx/a}`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicFunction {
    radius: f64,
    dim: usize,
    bandwidth: usize,
    /// `modes[n + bandwidth] = q_n`
    modes: Vec<CMatrix>,
}

impl PeriodicFunction {
    pub fn new(radius: f64, dim: usize, modes: &[(i64, CMatrix)]) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Input(format!("radius must be positive, got {radius}")));
        }
        if dim == 0 {
            return Err(Error::Input("bundle dimension must be at least 1".into()));
        }
        let bandwidth = modes.iter().map(|(n, _)| n.unsigned_abs() as usize).max().unwrap_or(0);
        let mut f = PeriodicFunction::zero(radius, dim, bandwidth);
        for (n, m) in modes {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Input(format!(
                    "mode {n} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let idx = (*n + bandwidth as i64) as usize;
            f.modes[idx] += m;
        }
        Ok(f)
    }

    pub fn zero(radius: f64, dim: usize, bandwidth: usize) -> Self {
        PeriodicFunction {
            radius,
            dim,
            bandwidth,
            modes: vec![CMatrix::zeros(dim, dim); 2 * bandwidth + 1],
        }
    }

    /// Scalar function from its Fourier modes.
    pub fn scalar(radius: f64, modes: &[(i64, Complex64)]) -> Result<Self> {
        let m: Vec<(i64, CMatrix)> = modes
            .iter()
            .map(|(n, c)| (*n, CMatrix::from_element(1, 1, *c)))
            .collect();
        Self::new(radius, 1, &m)
    }

    /// `q₀ + 2 Σ_k c_k cos(kx/a)` for real coefficients, as a scalar.
    pub fn scalar_cosine_series(radius: f64, q0: f64, harmonics: &[(u32, f64)]) -> Result<Self> {
        let mut modes = vec![(0, Complex64::new(q0, 0.0))];
        for &(k, c) in harmonics {
            modes.push((k as i64, Complex64::new(c, 0.0)));
            modes.push((-(k as i64), Complex64::new(c, 0.0)));
        }
        Self::scalar(radius, &modes)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn mode(&self, n: i64) -> CMatrix {
        if n.unsigned_abs() as usize > self.bandwidth {
            CMatrix::zeros(self.dim, self.dim)
        } else {
            self.modes[(n + self.bandwidth as i64) as usize].clone()
        }
    }

    /// `(n, q_n)` for every stored mode, `n` ascending.
    pub fn modes(&self) -> impl Iterator<Item = (i64, &CMatrix)> {
        let b = self.bandwidth as i64;
        self.modes.iter().enumerate().map(move |(i, m)| (i as i64 - b, m))
    }

    /// `|q_n|² = tr q_n q_n†`.
    pub fn mode_norm_sq(&self, n: i64) -> f64 {
        self.mode(n).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn trace_mean(&self) -> f64 {
        self.mode(0).trace().re
    }

    /// `∫_{S¹} tr Q dx = 2πa tr q₀`.
    pub fn integral_trace(&self) -> f64 {
        2.0 * PI * self.radius * self.trace_mean()
    }

    /// `q_{-n} = q_n†` for all `n`, to tolerance.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let b = self.bandwidth as i64;
        (-b..=b).all(|n| {
            let diff = self.mode(-n) - self.mode(n).adjoint();
            diff.iter().all(|z| z.norm() <= tol)
        })
    }

    pub fn is_real_scalar(&self, tol: f64) -> bool {
        self.dim == 1 && self.is_hermitian(tol)
    }

    pub fn max_abs_mode(&self) -> f64 {
        self.modes
            .iter()
            .flat_map(|m| m.iter().map(|z| z.norm()))
            .fold(0.0, f64::max)
    }

    /// `D^d Q`, i.e. `q_n ↦ (in/a)^d q_n`.
    pub fn derivative(&self, d: u32) -> Self {
        let mut out = self.clone();
        for (i, m) in out.modes.iter_mut().enumerate() {
            let n = i as f64 - self.bandwidth as f64;
            let factor = Complex64::new(0.0, n / self.radius).powu(d);
            *m *= factor;
        }
        out
    }

    /// Values at `x_j = 2πa j / grid`, `j = 0..grid`.
    pub fn samples(&self, grid: usize) -> Vec<CMatrix> {
        let fft = FftPlanner::new().plan_fft_inverse(grid);
        let mut out = vec![CMatrix::zeros(self.dim, self.dim); grid];
        let mut buf = vec![Complex64::new(0.0, 0.0); grid];
        for r in 0..self.dim {
            for c in 0..self.dim {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for (n, m) in self.modes() {
                    buf[n.rem_euclid(grid as i64) as usize] += m[(r, c)];
                }
                fft.process(&mut buf);
                for (o, z) in out.iter_mut().zip(&buf) {
                    o[(r, c)] = *z;
                }
            }
        }
        out
    }

    /// Real samples of a scalar function.
    pub fn scalar_samples(&self, grid: usize) -> Vec<f64> {
        self.samples(grid).iter().map(|m| m[(0, 0)].re).collect()
    }

    /// Inverse of [`samples`](Self::samples), keeping modes `|n| ≤ bandwidth`.
    pub fn from_samples(radius: f64, dim: usize, values: &[CMatrix], bandwidth: usize) -> Self {
        let grid = values.len();
        let fft = FftPlanner::new().plan_fft_forward(grid);
        let mut out = PeriodicFunction::zero(radius, dim, bandwidth);
        let mut buf = vec![Complex64::new(0.0, 0.0); grid];
        for r in 0..dim {
            for c in 0..dim {
                for (b, v) in buf.iter_mut().zip(values) {
                    *b = v[(r, c)];
                }
                fft.process(&mut buf);
                for n in -(bandwidth as i64)..=(bandwidth as i64) {
                    let z = buf[n.rem_euclid(grid as i64) as usize] / grid as f64;
                    out.modes[(n + bandwidth as i64) as usize][(r, c)] = z;
                }
            }
        }
        out
    }

    pub fn from_scalar_samples(radius: f64, values: &[f64], bandwidth: usize) -> Self {
        let m: Vec<CMatrix> = values
            .iter()
            .map(|v| CMatrix::from_element(1, 1, Complex64::new(*v, 0.0)))
            .collect();
        Self::from_samples(radius, 1, &m, bandwidth)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.modes.iter_mut().for_each(|m| *m *= Complex64::new(c, 0.0));
        out
    }

    /// Pointwise sum, padding the narrower bandwidth with zeros.
    pub fn add(&self, other: &Self) -> Self {
        let b = self.bandwidth.max(other.bandwidth) as i64;
        let modes: Vec<(i64, CMatrix)> = (-b..=b)
            .map(|n| (n, self.mode(n) + other.mode(n)))
            .collect();
        let mut f = PeriodicFunction::zero(self.radius, self.dim, b as usize);
        for (n, m) in modes {
            f.modes[(n + b) as usize] = m;
        }
        f
    }
}

/// Cached forward/inverse transforms for repeated work on a fixed scalar grid.
#[derive(Clone)]
pub struct GridFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GridFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        GridFft {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed wavenumber of FFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Normalized modes `c_n` with `u(x_j) = Σ c_n e^{i n x_j / a}`.
    pub fn to_modes(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }

    /// Real part of the inverse transform of normalized modes.
    pub fn to_values(&self, modes: &[Complex64]) -> Vec<f64> {
        let mut buf = modes.to_vec();
        self.inverse.process(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }
}
