//! Smoothing kernels, the discrete cylindrical Wiener process and the
//! Hilbert-Schmidt bookkeeping behind the Itô correction.
//!
//! The orthonormal basis is the family of normalised cell indicators
//! `e_c = 𝟙_{cell c}/√dx`. Applying a kernel to it gives a shifted copy,
//! `(𝔎 e_c)(x_i) = 𝔨(x_i - x_c)·√dx`, which keeps every Parseval sum literal.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{bracket, forward_transform, GridSpec, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseKernel {
    kernel: SpectralField,
    samples: Vec<f64>,
    sobolev_reg: f64,
}

impl NoiseKernel {
    /// Kernel from real physical-space samples `𝔨(x_j)`.
    pub fn from_samples(grid: GridSpec, samples: &[f64], sobolev_reg: f64) -> Result<Self> {
        if samples.len() != grid.n_modes() {
            return Err(Error::invalid(format!(
                "kernel needs {} samples, got {}",
                grid.n_modes(),
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("kernel sample {bad} is not finite")));
        }
        Ok(Self {
            kernel: SpectralField::from_real_samples(grid, samples)?,
            samples: samples.to_vec(),
            sobolev_reg,
        })
    }

    pub fn zero(grid: GridSpec) -> Self {
        Self {
            kernel: SpectralField::zeros(grid),
            samples: vec![0.0; grid.n_modes()],
            sobolev_reg: f64::INFINITY,
        }
    }

    /// Periodised Gaussian `amp·exp(-d²/2w²)` centred at the origin.
    pub fn gaussian(grid: GridSpec, width: f64, amp: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("gaussian kernel width must be positive"));
        }
        let l = grid.length();
        let samples: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| {
                let d = x.min(l - x);
                amp * (-d * d / (2.0 * width * width)).exp()
            })
            .collect();
        // smooth, so any finite regularity is declared
        Self::from_samples(grid, &samples, 2.0)
    }

    /// Band-limited kernel whose transform equals `amp` for `|ξ| ≤ cutoff`.
    pub fn sinc(grid: GridSpec, cutoff: f64, amp: f64) -> Result<Self> {
        if !(cutoff >= 0.0 && cutoff.is_finite()) {
            return Err(Error::invalid("sinc kernel cutoff must be nonnegative"));
        }
        let n = grid.n_modes();
        let coeffs = (0..n)
            .map(|i| {
                // the unmatched Nyquist mode would make the kernel complex
                if i != n / 2 && grid.frequency(i).abs() <= cutoff {
                    Complex64::new(amp, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let field = SpectralField::from_coeffs(grid, coeffs)?;
        let samples: Vec<f64> = field.to_physical().iter().map(|z| z.re).collect();
        Self::from_samples(grid, &samples, 2.0)
    }

    pub fn from_csv(grid: GridSpec, text: &str, sobolev_reg: f64) -> Result<Self> {
        let samples = parse_kernel_csv(text)?;
        Self::from_samples(grid, &samples, sobolev_reg)
    }

    pub fn grid(&self) -> &GridSpec {
        self.kernel.grid()
    }

    pub fn spectral(&self) -> &SpectralField {
        &self.kernel
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sobolev_reg(&self) -> f64 {
        self.sobolev_reg
    }

    pub fn declared_norm(&self) -> f64 {
        if self.sobolev_reg.is_finite() {
            self.kernel.sobolev_norm(self.sobolev_reg)
        } else {
            self.kernel.l2_norm()
        }
    }

    /// `‖𝔨‖_{L²}` by spatial quadrature.
    pub fn l2_norm(&self) -> f64 {
        (self.grid().dx() * self.samples.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }

    /// Physical samples of `𝔎 e_c` for basis cell `c`.
    pub fn applied_to_cell(&self, cell: usize) -> Vec<f64> {
        let n = self.samples.len();
        let sq = self.grid().dx().sqrt();
        (0..n)
            .map(|i| self.samples[(i + n - cell % n) % n] * sq)
            .collect()
    }
}

/// Parse a kernel sample file: real numbers separated by commas or
/// whitespace, `#` starting a comment that runs to the end of the line.
pub fn parse_kernel_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| {
                Error::invalid(format!(
                    "kernel file line {}: cannot parse `{tok}` as a number",
                    lineno + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "kernel file line {}: non-finite value",
                    lineno + 1
                )));
            }
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("kernel file contains no samples"));
    }
    Ok(out)
}

/// Retained cells of the indicator basis. With `K < N` the cells
/// `⌊jN/K⌋` are kept, which truncates the cylindrical process.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBasis {
    grid: GridSpec,
    cells: Vec<usize>,
}

impl NoiseBasis {
    pub fn new(grid: GridSpec, n_basis: usize) -> Result<Self> {
        let n = grid.n_modes();
        if n_basis == 0 || n_basis > n {
            return Err(Error::invalid(format!(
                "basis size must lie in 1..={n}, got {n_basis}"
            )));
        }
        let cells = (0..n_basis).map(|j| j * n / n_basis).collect();
        Ok(Self { grid, cells })
    }

    pub fn complete(grid: GridSpec) -> Self {
        Self {
            grid,
            cells: (0..grid.n_modes()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Spatially averaged relative defect of `Σ_k (𝔎e_k(x))²` against
    /// `‖𝔨‖²`, namely `1 - K/N`.
    pub fn defect(&self) -> f64 {
        1.0 - self.cells.len() as f64 / self.grid.n_modes() as f64
    }

    /// Basis coefficients `⟨f, e_k⟩ = f(x_{c_k})·√dx`.
    pub fn project(&self, samples: &[Complex64]) -> Vec<Complex64> {
        let sq = self.grid.dx().sqrt();
        self.cells.iter().map(|&c| samples[c] * sq).collect()
    }
}

/// `½‖𝔨₁‖²_{L²}`, the drift produced by converting Stratonovich to Itô.
pub fn ito_correction(k1: &NoiseKernel) -> f64 {
    let l2 = k1.l2_norm();
    0.5 * l2 * l2
}

/// `convolve(𝔨, f) = 𝔨 ∗ f`, computed as `𝔨̂ f̂`.
pub fn convolve(k: &NoiseKernel, f: &SpectralField) -> Result<SpectralField> {
    k.spectral().ensure_same_grid(f)?;
    let coeffs = k
        .spectral()
        .coeffs()
        .iter()
        .zip(f.coeffs())
        .map(|(a, b)| a * b)
        .collect();
    SpectralField::from_coeffs(*f.grid(), coeffs)
}

/// Hilbert-Schmidt norm of `g ↦ v·𝔎g`, summed explicitly over the complete
/// indicator basis.
pub fn hs_norm_multiplication(v: &SpectralField, k: &NoiseKernel) -> Result<f64> {
    k.spectral().ensure_same_grid(v)?;
    let grid = *v.grid();
    let n = grid.n_modes();
    let dx = grid.dx();
    let vs: Vec<f64> = v.to_physical().iter().map(|z| z.norm_sqr()).collect();
    let ks = k.samples();
    let mut total = 0.0;
    for c in 0..n {
        // ‖v·𝔎e_c‖² = Σ_i |v_i|² 𝔨(x_i - x_c)² dx · dx
        let mut col = 0.0;
        for (i, &vi) in vs.iter().enumerate() {
            let kv = ks[(i + n - c) % n];
            col += vi * kv * kv;
        }
        total += col * dx * dx;
    }
    Ok(total.sqrt())
}

/// Gaussian increments `dW_k` for every retained basis mode and time step.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrements {
    n_basis: usize,
    n_steps: usize,
    dt: f64,
    increments: Vec<f64>,
    seed: u64,
}

impl WienerIncrements {
    pub fn zeros(n_basis: usize, n_steps: usize, dt: f64) -> Self {
        Self {
            n_basis,
            n_steps,
            dt,
            increments: vec![0.0; n_basis * n_steps],
            seed: 0,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.increments
    }

    /// Increments of step `step`, one per basis mode.
    pub fn column(&self, step: usize) -> &[f64] {
        &self.increments[step * self.n_basis..(step + 1) * self.n_basis]
    }

    /// Sum groups of `factor` consecutive steps, giving the same Brownian
    /// path sampled at `factor·dt`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.n_steps
            )));
        }
        let k = self.n_basis;
        let steps = self.n_steps / factor;
        let mut inc = vec![0.0; k * steps];
        for s in 0..self.n_steps {
            let dst = (s / factor) * k;
            for (o, v) in inc[dst..dst + k].iter_mut().zip(self.column(s)) {
                *o += v;
            }
        }
        Ok(Self {
            n_basis: k,
            n_steps: steps,
            dt: self.dt * factor as f64,
            increments: inc,
            seed: self.seed,
        })
    }
}

pub fn sample_increments(seed: u64, n_basis: usize, n_steps: usize, dt: f64) -> Result<WienerIncrements> {
    if n_basis == 0 || n_steps == 0 {
        return Err(Error::invalid("increments need at least one mode and one step"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = dt.sqrt();
    let increments = (0..n_basis * n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    Ok(WienerIncrements {
        n_basis,
        n_steps,
        dt,
        increments,
        seed,
    })
}

/// Physical samples of `a(x) = Σ_k (𝔎e_k)(x) dW_k`.
pub fn noise_field(k: &NoiseKernel, dw: &[f64], basis: &NoiseBasis) -> Result<Vec<f64>> {
    if dw.len() != basis.len() {
        return Err(Error::invalid(format!(
            "noise column has {} entries for a basis of {}",
            dw.len(),
            basis.len()
        )));
    }
    let grid = *basis.grid();
    if *k.grid() != grid {
        return Err(Error::GridMismatch("kernel and basis grids differ".into()));
    }
    if k.is_zero() || dw.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; grid.n_modes()]);
    }
    // a = 𝔨 ∗ g with g = dW_k/√dx on cell c_k
    let inv = 1.0 / grid.dx().sqrt();
    let mut g = vec![Complex64::new(0.0, 0.0); grid.n_modes()];
    for (&c, &w) in basis.cells().iter().zip(dw) {
        g[c] += Complex64::new(w * inv, 0.0);
    }
    let gf = forward_transform(&g, grid)?;
    Ok(convolve(k, &gf)?.to_physical().iter().map(|z| z.re).collect())
}

/// Spectral coefficients of `ψ(x)·Σ_k (𝔎₁e_k)(x) dW_k`.
pub fn noise_increment_dirac(
    psi_other: &SpectralField,
    k1: &NoiseKernel,
    dw: &[f64],
    basis: &NoiseBasis,
) -> Result<SpectralField> {
    k1.spectral().ensure_same_grid(psi_other)?;
    let a = noise_field(k1, dw, basis)?;
    let prod: Vec<Complex64> = psi_other
        .to_physical()
        .iter()
        .zip(&a)
        .map(|(p, &w)| p * w)
        .collect();
    forward_transform(&prod, *psi_other.grid())
}

/// Spectral coefficients of `½⟨D⟩⁻¹(φ·Σ_k (𝔎₂e_k) dW_k)` for real `φ`.
pub fn noise_increment_kg(
    phi: &SpectralField,
    k2: &NoiseKernel,
    dw: &[f64],
    basis: &NoiseBasis,
) -> Result<SpectralField> {
    let prod = noise_increment_dirac(phi, k2, dw, basis)?;
    Ok(prod.apply_symbol(|xi| Complex64::new(0.5 / bracket(xi), 0.0)))
}
