//! Periodic spatial grid, Fourier conventions and spatial Sobolev norms.
//!
//! Coefficients follow `f̂(ξ) = ∫ e^{-ixξ} f(x) dx`, discretised as a
//! `dx`-weighted DFT on the torus `[0, L)`. The inverse is
//! `f(x_j) = (1/L) Σ_k f̂(ξ_k) e^{i x_j ξ_k}`, so that
//! `Σ_k |f̂(ξ_k)|² / L = ∫ |f|² dx` holds exactly on grid functions.
//!
//! Coefficient vectors are stored in FFT order: indices `0..N/2` carry the
//! modes `0..N/2-1`, indices `N/2..N` carry `-N/2..-1`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalised forward DFT, `X_k = Σ_j x_j e^{-2πi jk/N}`.
pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// In-place unnormalised inverse DFT, `x_j = Σ_k X_k e^{+2πi jk/N}`.
pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
}

/// `⟨ξ⟩ = (1 + ξ²)^{1/2}`.
#[inline]
pub fn bracket(xi: f64) -> f64 {
    (1.0 + xi * xi).sqrt()
}

/// Signed mode number stored at FFT index `idx` for a transform of length `n`.
#[inline]
pub(crate) fn signed_mode(idx: usize, n: usize) -> i64 {
    if idx < n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n_modes: usize,
    length: f64,
}

impl GridSpec {
    pub fn new(n_modes: usize, length: f64) -> Result<Self> {
        if n_modes < 8 || n_modes % 2 != 0 {
            return Err(Error::invalid(format!(
                "n_modes must be an even integer >= 8, got {n_modes}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n_modes, length })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_modes as f64
    }

    /// Frequency spacing `Δξ = 2π/L`.
    pub fn dxi(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Signed mode number `k` stored at FFT index `idx`.
    pub fn mode(&self, idx: usize) -> i64 {
        signed_mode(idx, self.n_modes)
    }

    /// FFT index holding signed mode `k`, if it is on the grid.
    pub fn index_of_mode(&self, k: i64) -> Option<usize> {
        let half = (self.n_modes / 2) as i64;
        if k < -half || k >= half {
            return None;
        }
        Some(if k >= 0 {
            k as usize
        } else {
            (k + self.n_modes as i64) as usize
        })
    }

    /// `ξ_k = 2πk/L` at FFT index `idx`.
    pub fn frequency(&self, idx: usize) -> f64 {
        self.mode(idx) as f64 * self.dxi()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_modes).map(|i| self.frequency(i)).collect()
    }

    /// Largest resolved `|ξ|`, attained by the unmatched `-N/2` mode.
    pub fn max_frequency(&self) -> f64 {
        (self.n_modes / 2) as f64 * self.dxi()
    }

    pub fn points(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_modes).map(|j| j as f64 * dx).collect()
    }

    /// FFT index of the conjugate partner `-k` (the `-N/2` mode is its own partner).
    pub(crate) fn conjugate_index(&self, idx: usize) -> usize {
        (self.n_modes - idx) % self.n_modes
    }

    /// Largest `|k|` kept by the 2/3 dealiasing rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n_modes / 3) as i64
    }
}

/// Fourier coefficients of a function on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n_modes],
        }
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n_modes {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                grid.n_modes,
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// Field whose only nonzero coefficient is `value` at signed mode `k`.
    pub fn single_mode(grid: GridSpec, k: i64, value: Complex64) -> Result<Self> {
        let idx = grid
            .index_of_mode(k)
            .ok_or_else(|| Error::invalid(format!("mode {k} is not on the grid")))?;
        let mut f = Self::zeros(grid);
        f.coeffs[idx] = value;
        Ok(f)
    }

    /// Transform of real samples.
    pub fn from_real_samples(grid: GridSpec, samples: &[f64]) -> Result<Self> {
        let c: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        forward_transform(&c, grid)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn to_physical(&self) -> Vec<Complex64> {
        inverse_transform(self)
    }

    pub fn ensure_same_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        sobolev_norm(self, s)
    }

    pub fn l2_norm(&self) -> f64 {
        sobolev_norm(self, 0.0)
    }

    /// Coefficients of the pointwise complex conjugate, `conj(f̂(-ξ))`.
    pub fn conj(&self) -> SpectralField {
        let coeffs = (0..self.grid.n_modes)
            .map(|i| self.coeffs[self.grid.conjugate_index(i)].conj())
            .collect();
        Self {
            grid: self.grid,
            coeffs,
        }
    }

    /// Modewise multiplication by `symbol(ξ_k)`.
    pub fn apply_symbol(&self, symbol: impl Fn(f64) -> Complex64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * symbol(self.grid.frequency(i)))
            .collect();
        Self {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn scale(&self, a: Complex64) -> SpectralField {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `self += a * other`; the caller guarantees matching grids.
    pub fn axpy(&mut self, a: Complex64, other: &SpectralField) {
        debug_assert_eq!(self.grid, other.grid);
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Zero every mode with `|k| > N/3`.
    pub fn dealias(&mut self) {
        let cut = self.grid.dealias_cutoff();
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if signed_mode(i, self.grid.n_modes).abs() > cut {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealiased(mut self) -> SpectralField {
        self.dealias();
        self
    }

    /// Largest coefficient modulus, used for quick "is zero" checks.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field addition");
        SpectralField {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field subtraction");
        SpectralField {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

pub fn forward_transform(samples: &[Complex64], grid: GridSpec) -> Result<SpectralField> {
    if samples.len() != grid.n_modes {
        return Err(Error::invalid(format!(
            "expected {} samples, got {}",
            grid.n_modes,
            samples.len()
        )));
    }
    let mut buf = samples.to_vec();
    fft_forward(&mut buf);
    let dx = grid.dx();
    for c in &mut buf {
        *c *= dx;
    }
    Ok(SpectralField { grid, coeffs: buf })
}

pub fn inverse_transform(field: &SpectralField) -> Vec<Complex64> {
    let mut buf = field.coeffs.clone();
    fft_inverse(&mut buf);
    let inv_l = 1.0 / field.grid.length;
    for c in &mut buf {
        *c *= inv_l;
    }
    buf
}

/// Discrete `H^s` norm `(Σ_k ⟨ξ_k⟩^{2s} |f̂(ξ_k)|² Δξ/2π)^{1/2}`.
pub fn sobolev_norm(field: &SpectralField, s: f64) -> f64 {
    let grid = &field.grid;
    let sum: f64 = field
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let w = if s == 0.0 {
                1.0
            } else {
                bracket(grid.frequency(i)).powf(2.0 * s)
            };
            w * c.norm_sqr()
        })
        .sum();
    (sum / grid.length).sqrt()
}
