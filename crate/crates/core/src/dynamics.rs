//! Truncated mild dynamics: bilinear terms, Picard sweeps on subintervals,
//! the frequency regulariser and trajectory assembly.
//!
//! Each time step of length `dt` is an exponential implicit midpoint rule in
//! the interaction picture with an explicit Itô noise increment:
//!
//! ```text
//! u_{n+1} = S(dt)(u_n + η_n) + dt·S(dt/2) F(ū_n)
//! ū_n     = ½ (S(dt/2)(u_n + η_n) + S(-dt/2) u_{n+1})
//! ```
//!
//! The midpoint rule keeps the charge exactly invariant when the noise is
//! off (it preserves every quadratic invariant of the interaction-picture
//! flow), provided all products are dealiased and the data lie in the
//! dealiased range. On a subinterval the implicit relations are solved by
//! Jacobi sweeps of the discrete mild map, which is the Picard iteration of
//! the truncated system with the noise term lagged one sweep.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bourgain::{stopping_time, theta_cutoff, theta_profile, CutoffSpec, RunningModifiedNorm};
use crate::error::{Error, Result};
use crate::grid::{bracket, fft_forward, fft_inverse, forward_transform, GridSpec, SpectralField};
use crate::model::{DispersionSymbol, SplitState};
use crate::noise::{ito_correction, noise_field, sample_increments, NoiseBasis, NoiseKernel, WienerIncrements};

/// Dispersion symbols of `(ψ₊, ψ₋, φ₊)`.
pub const SYMBOLS: [DispersionSymbol; 3] = [
    DispersionSymbol::PlusXi,
    DispersionSymbol::MinusXi,
    DispersionSymbol::PlusBracket,
];

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub dt: f64,
    pub horizon: f64,
    pub delta: f64,
    pub truncation: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub kernel1: NoiseKernel,
    pub kernel2: NoiseKernel,
    pub n_basis: usize,
    pub dirac_mass: f64,
    pub s: f64,
    pub r: f64,
    pub b: f64,
    pub mu: Option<f64>,
    pub seed: u64,
    /// Switches the bilinear terms; off gives the linear test dynamics.
    pub nonlinear: bool,
    /// Switches the Itô drift `-M_𝔎 ψ`; off is a fault-injection mode.
    pub ito_drift: bool,
}

impl SolverConfig {
    /// Defaults: `dt = 2⁻⁸`, `T = 1`, `δ = 8dt`, noise off.
    pub fn new(grid: GridSpec) -> Self {
        let dt = 1.0 / 256.0;
        Self {
            grid,
            dt,
            horizon: 1.0,
            delta: 8.0 * dt,
            truncation: 16.0,
            picard_tol: 1e-10,
            picard_max_iters: 50,
            kernel1: NoiseKernel::zero(grid),
            kernel2: NoiseKernel::zero(grid),
            n_basis: grid.n_modes(),
            dirac_mass: 1.0,
            s: 0.0,
            r: 1.0 / 3.0,
            b: 0.3,
            mu: None,
            seed: 0,
            nonlinear: true,
            ito_drift: true,
        }
    }

    fn ratio(a: f64, b: f64) -> Option<usize> {
        let q = a / b;
        let r = q.round();
        if r >= 1.0 && (q - r).abs() <= 1e-9 * r {
            Some(r as usize)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if Self::ratio(self.delta, self.dt).is_none() {
            return Err(Error::invalid(format!(
                "delta = {} is not a positive integer multiple of dt = {}",
                self.delta, self.dt
            )));
        }
        if Self::ratio(self.horizon, self.delta).is_none() {
            return Err(Error::invalid(format!(
                "horizon = {} is not a positive integer multiple of delta = {}",
                self.horizon, self.delta
            )));
        }
        if !(self.b > 0.0 && self.b < 0.5) {
            return Err(Error::invalid("b must lie in (0, 1/2)"));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::invalid("truncation R must be positive"));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iters == 0 {
            return Err(Error::invalid("Picard tolerance and iteration cap must be positive"));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 1.0) {
                return Err(Error::invalid(format!("mu must be >= 1, got {mu}")));
            }
        }
        if !(self.dirac_mass >= 0.0 && self.dirac_mass.is_finite()) {
            return Err(Error::invalid("dirac mass must be nonnegative"));
        }
        if *self.kernel1.grid() != self.grid || *self.kernel2.grid() != self.grid {
            return Err(Error::GridMismatch("kernels must live on the solver grid".into()));
        }
        NoiseBasis::new(self.grid, self.n_basis)?;
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        Self::ratio(self.horizon, self.dt).unwrap_or(0)
    }

    pub fn steps_per_subinterval(&self) -> usize {
        Self::ratio(self.delta, self.dt).unwrap_or(0)
    }

    pub fn noise_active(&self) -> bool {
        !(self.kernel1.is_zero() && self.kernel2.is_zero())
    }

    /// Sobolev index of each component in the running norms.
    pub fn indices(&self) -> [f64; 3] {
        [self.s, self.s, self.r]
    }

    /// Increments of the configured seed for the whole horizon.
    pub fn increments(&self) -> Result<WienerIncrements> {
        if self.noise_active() {
            sample_increments(self.seed, self.n_basis, self.n_steps(), self.dt)
        } else {
            Ok(WienerIncrements::zeros(self.n_basis, self.n_steps(), self.dt))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardReport {
    pub subinterval: usize,
    pub start: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl PicardReport {
    /// Ratios of consecutive residuals.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<SplitState>,
    pub charge: Vec<f64>,
    pub cutoff_value: Vec<f64>,
    /// Running `X̃²` on `(0, t)` of `ψ₊`, `ψ₋`, `φ₊`.
    pub running_norms: [Vec<f64>; 3],
    pub tau_r: f64,
    pub picard_reports: Vec<PicardReport>,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn norm_sum(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| self.running_norms.iter().map(|n| n[i]).sum())
            .collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.picard_reports.iter().map(|p| p.iterations).sum()
    }

    /// `sup_t |Q(t) - Q(0)| / Q(0)`, or 0 for zero charge.
    pub fn relative_charge_drift(&self) -> f64 {
        let q0 = self.charge[0];
        if q0 == 0.0 {
            return 0.0;
        }
        self.charge
            .iter()
            .map(|q| (q - q0).abs() / q0)
            .fold(0.0, f64::max)
    }
}

/// `P(φψ)` with `φ = φ₊ + conj(φ₊)` real.
pub fn bilinear_dirac(phi_plus: &SpectralField, psi: &SpectralField) -> Result<SpectralField> {
    phi_plus.ensure_same_grid(psi)?;
    let grid = *psi.grid();
    let phi = phi_plus.to_physical();
    let p = psi.to_physical();
    let prod: Vec<Complex64> = phi.iter().zip(&p).map(|(f, q)| q * (2.0 * f.re)).collect();
    Ok(forward_transform(&prod, grid)?.dealiased())
}

/// `⟨D⟩⁻¹ P(Re(conj(ψ₊) ψ₋))`.
pub fn bilinear_kg(psi_plus: &SpectralField, psi_minus: &SpectralField) -> Result<SpectralField> {
    psi_plus.ensure_same_grid(psi_minus)?;
    let grid = *psi_plus.grid();
    let a = psi_plus.to_physical();
    let b = psi_minus.to_physical();
    let prod: Vec<Complex64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| Complex64::new((x.conj() * y).re, 0.0))
        .collect();
    let f = forward_transform(&prod, grid)?.dealiased();
    Ok(f.apply_symbol(|xi| Complex64::new(1.0 / bracket(xi), 0.0)))
}

/// Frequency regulariser `P_μ`: multiplication by `θ(ξ/μ)`.
pub fn regularize(field: &SpectralField, mu: f64) -> Result<SpectralField> {
    if !(mu >= 1.0) {
        return Err(Error::invalid(format!("mu must be >= 1, got {mu}")));
    }
    Ok(field.apply_symbol(|xi| Complex64::new(theta_profile(xi / mu), 0.0)))
}

type Tri = [Vec<Complex64>; 3];

fn zeros_tri(n: usize) -> Tri {
    let z = vec![Complex64::new(0.0, 0.0); n];
    [z.clone(), z.clone(), z]
}

/// Precomputed multipliers for one configuration.
struct Stepper<'a> {
    cfg: &'a SolverConfig,
    n: usize,
    full: [Vec<Complex64>; 3],
    half: [Vec<Complex64>; 3],
    back: [Vec<Complex64>; 3],
    inv_bracket: Vec<f64>,
    keep: Vec<bool>,
    reg: Option<Vec<f64>>,
    ito: f64,
    basis: NoiseBasis,
    cutoff: CutoffSpec,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        let n = grid.n_modes();
        let freqs = grid.frequencies();
        let phase = |t: f64| -> [Vec<Complex64>; 3] {
            SYMBOLS.map(|h| {
                freqs
                    .iter()
                    .map(|&xi| Complex64::from_polar(1.0, -t * h.evaluate(xi)))
                    .collect()
            })
        };
        let cut = grid.dealias_cutoff();
        Ok(Self {
            cfg,
            n,
            full: phase(cfg.dt),
            half: phase(0.5 * cfg.dt),
            back: phase(-0.5 * cfg.dt),
            inv_bracket: freqs.iter().map(|&xi| 1.0 / bracket(xi)).collect(),
            keep: (0..n).map(|i| grid.mode(i).abs() <= cut).collect(),
            reg: cfg
                .mu
                .map(|mu| freqs.iter().map(|&xi| theta_profile(xi / mu)).collect()),
            ito: if cfg.ito_drift { ito_correction(&cfg.kernel1) } else { 0.0 },
            basis: NoiseBasis::new(grid, cfg.n_basis)?,
            cutoff: CutoffSpec::new(cfg.truncation)?,
        })
    }

    fn physical(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut buf = c.to_vec();
        fft_inverse(&mut buf);
        let s = 1.0 / self.cfg.grid.length();
        for v in &mut buf {
            *v *= s;
        }
        buf
    }

    /// Dealiased spectral coefficients of physical samples.
    fn spectral(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        fft_forward(&mut buf);
        let dx = self.cfg.grid.dx();
        for (v, &k) in buf.iter_mut().zip(&self.keep) {
            *v = if k { *v * dx } else { Complex64::new(0.0, 0.0) };
        }
        buf
    }

    fn dealias(&self, c: &mut [Complex64]) {
        for (v, &k) in c.iter_mut().zip(&self.keep) {
            if !k {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    fn apply_reg(&self, u: &Tri) -> Option<Tri> {
        self.reg.as_ref().map(|w| {
            u.clone().map(|mut c| {
                for (v, &m) in c.iter_mut().zip(w) {
                    *v *= m;
                }
                c
            })
        })
    }

    fn reg_in_place(&self, u: &mut Tri) {
        if let Some(w) = &self.reg {
            for c in u.iter_mut() {
                for (v, &m) in c.iter_mut().zip(w) {
                    *v *= m;
                }
            }
        }
    }

    fn apply(mult: &[Vec<Complex64>; 3], u: &Tri) -> Tri {
        let mut out = u.clone();
        for (o, m) in out.iter_mut().zip(mult) {
            for (v, w) in o.iter_mut().zip(m) {
                *v *= w;
            }
        }
        out
    }

    /// Itô noise increment `η` of one step.
    fn eta(&self, u: &Tri, a1: &[f64], a2: &[f64]) -> Tri {
        if a1.is_empty() && a2.is_empty() {
            return zeros_tri(self.n);
        }
        let regged = self.apply_reg(u);
        let u = regged.as_ref().unwrap_or(u);
        let i = Complex64::i();
        let mut out = zeros_tri(self.n);
        if !a1.is_empty() {
            let pp = self.physical(&u[0]);
            let pm = self.physical(&u[1]);
            let m1 = self.spectral(pm.iter().zip(a1).map(|(p, &a)| i * p * a).collect());
            let m2 = self.spectral(pp.iter().zip(a1).map(|(p, &a)| i * p * a).collect());
            out[0] = m1;
            out[1] = m2;
        }
        if !a2.is_empty() {
            let phi = self.physical(&u[2]);
            let mut k = self.spectral(
                phi.iter()
                    .zip(a2)
                    .map(|(p, &a)| Complex64::new(2.0 * p.re * a, 0.0))
                    .collect(),
            );
            for (v, &w) in k.iter_mut().zip(&self.inv_bracket) {
                *v *= 0.5 * i * w;
            }
            out[2] = k;
        }
        self.reg_in_place(&mut out);
        out
    }

    /// Drift `F(u)` with the cutoff value `theta`.
    fn force(&self, u: &Tri, theta: f64) -> Tri {
        let regged = self.apply_reg(u);
        let u = regged.as_ref().unwrap_or(u);
        let i = Complex64::i();
        let m = self.cfg.dirac_mass;
        let mut out = zeros_tri(self.n);
        for k in 0..self.n {
            out[0][k] = -i * m * u[1][k] - self.ito * u[0][k];
            out[1][k] = -i * m * u[0][k] - self.ito * u[1][k];
        }
        if self.cfg.nonlinear && theta != 0.0 {
            let t2 = theta * theta;
            let pp = self.physical(&u[0]);
            let pm = self.physical(&u[1]);
            let phi: Vec<f64> = self.physical(&u[2]).iter().map(|z| 2.0 * z.re).collect();
            let a = self.spectral(pm.iter().zip(&phi).map(|(p, &f)| p * f).collect());
            let b = self.spectral(pp.iter().zip(&phi).map(|(p, &f)| p * f).collect());
            let c = self.spectral(
                pp.iter()
                    .zip(&pm)
                    .map(|(x, y)| Complex64::new((x.conj() * y).re, 0.0))
                    .collect(),
            );
            for k in 0..self.n {
                out[0][k] += i * t2 * a[k];
                out[1][k] += i * t2 * b[k];
                out[2][k] = i * t2 * self.inv_bracket[k] * c[k];
            }
        }
        self.reg_in_place(&mut out);
        out
    }

    /// Increment `S(dt)η + dt·S(dt/2)F(ū)` of one step, from the iterate.
    fn increment(&self, v0: &Tri, v1: &Tri, eta: &Tri, theta_mid: f64) -> Tri {
        let mut w = v0.clone();
        for (a, e) in w.iter_mut().zip(eta) {
            for (x, y) in a.iter_mut().zip(e) {
                *x += y;
            }
        }
        let sw = Self::apply(&self.half, &w);
        let sb = Self::apply(&self.back, v1);
        let mut mid = sw;
        for (a, b) in mid.iter_mut().zip(&sb) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = 0.5 * (*x + y);
            }
        }
        let f = self.force(&mid, theta_mid);
        let mut out = Self::apply(&self.full, eta);
        let sf = Self::apply(&self.half, &f);
        let dt = self.cfg.dt;
        for (a, b) in out.iter_mut().zip(&sf) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += dt * y;
            }
        }
        out
    }

    fn noise_fields(&self, dw: &WienerIncrements, step: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let col = dw.column(step);
        let a1 = if self.cfg.kernel1.is_zero() {
            Vec::new()
        } else {
            noise_field(&self.cfg.kernel1, col, &self.basis)?
        };
        let a2 = if self.cfg.kernel2.is_zero() {
            Vec::new()
        } else {
            noise_field(&self.cfg.kernel2, col, &self.basis)?
        };
        Ok((a1, a2))
    }

    fn theta_of(&self, arg: f64) -> f64 {
        theta_cutoff(arg, &self.cutoff)
    }

    /// Cutoff values at the extra nodes of a subinterval.
    fn thetas(&self, norms: &mut [RunningModifiedNorm; 3], extra: &[Tri]) -> Vec<f64> {
        let grid = self.cfg.grid;
        let per: Vec<Vec<f64>> = norms
            .par_iter_mut()
            .enumerate()
            .map(|(c, acc)| {
                let slices: Vec<SpectralField> = extra
                    .iter()
                    .map(|u| SpectralField::from_coeffs(grid, u[c].clone()).expect("grid length"))
                    .collect();
                acc.evaluate_extension(&slices)
            })
            .collect();
        (0..extra.len())
            .map(|j| self.theta_of(per.iter().map(|p| p[j]).sum()))
            .collect()
    }

    /// One Jacobi sweep of the mild map on a subinterval.
    fn sweep(
        &self,
        v: &[Tri],
        thetas: &[f64],
        noise: &[(Vec<f64>, Vec<f64>)],
    ) -> Vec<Tri> {
        let m = v.len() - 1;
        let incr: Vec<Tri> = (0..m)
            .into_par_iter()
            .map(|j| {
                let eta = self.eta(&v[j], &noise[j].0, &noise[j].1);
                let th = 0.5 * (thetas[j] + thetas[j + 1]);
                self.increment(&v[j], &v[j + 1], &eta, th)
            })
            .collect();
        let mut out = Vec::with_capacity(v.len());
        out.push(v[0].clone());
        for (j, inc) in incr.iter().enumerate() {
            let mut next = Self::apply(&self.full, &out[j]);
            for (a, b) in next.iter_mut().zip(inc) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            out.push(next);
        }
        out
    }

    /// `X̃` distance of two subinterval paths, summed over components.
    fn distance(&self, a: &[Tri], b: &[Tri], t0: f64) -> f64 {
        let grid = self.cfg.grid;
        let idx = self.cfg.indices();
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = RunningModifiedNorm::new(&grid, idx[c], self.cfg.b, SYMBOLS[c], t0, self.cfg.dt);
            for (x, y) in a.iter().zip(b) {
                let d: Vec<Complex64> = x[c].iter().zip(&y[c]).map(|(p, q)| p - q).collect();
                acc.push(&SpectralField::from_coeffs(grid, d).expect("grid length"));
            }
            total += acc.value();
        }
        total.sqrt()
    }

    fn new_norms(&self) -> [RunningModifiedNorm; 3] {
        let idx = self.cfg.indices();
        let g = self.cfg.grid;
        [0, 1, 2].map(|c| RunningModifiedNorm::new(&g, idx[c], self.cfg.b, SYMBOLS[c], 0.0, self.cfg.dt))
    }

    fn commit(&self, norms: &mut [RunningModifiedNorm; 3], u: &Tri) -> [f64; 3] {
        let grid = self.cfg.grid;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = norms[c].push(&SpectralField::from_coeffs(grid, u[c].clone()).expect("grid length"));
        }
        out
    }

    fn to_state(&self, template: &SplitState, u: &Tri) -> SplitState {
        let g = self.cfg.grid;
        let f = |c: &Vec<Complex64>| SpectralField::from_coeffs(g, c.clone()).expect("grid length");
        template.with_fields(f(&u[0]), f(&u[1]), f(&u[2]))
    }

    fn prepare_initial(&self, initial: &SplitState) -> Result<Tri> {
        initial.validate()?;
        if *initial.grid() != self.cfg.grid {
            return Err(Error::GridMismatch("initial data and solver grids differ".into()));
        }
        let mut u: Tri = [
            initial.psi_plus.coeffs().to_vec(),
            initial.psi_minus.coeffs().to_vec(),
            initial.phi_plus.coeffs().to_vec(),
        ];
        for c in u.iter_mut() {
            self.dealias(c);
        }
        self.reg_in_place(&mut u);
        Ok(u)
    }
}

fn tri_of(state: &SplitState) -> Tri {
    [
        state.psi_plus.coeffs().to_vec(),
        state.psi_minus.coeffs().to_vec(),
        state.phi_plus.coeffs().to_vec(),
    ]
}

fn charge_of(u: &Tri, length: f64) -> f64 {
    let q: f64 = u[0].iter().chain(&u[1]).map(|c| c.norm_sqr()).sum();
    q / length
}

/// Solve on the whole horizon with increments sampled from `cfg.seed`.
pub fn solve_trajectory(cfg: &SolverConfig, initial: &SplitState) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let dw = cfg.increments()?;
    solve_with_increments(cfg, initial, &dw)
}

/// Solve on the whole horizon with the given Brownian increments.
pub fn solve_with_increments(
    cfg: &SolverConfig,
    initial: &SplitState,
    dw: &WienerIncrements,
) -> Result<TrajectoryRecord> {
    let st = Stepper::new(cfg)?;
    let n_steps = cfg.n_steps();
    check_increments(cfg, dw)?;
    let m = cfg.steps_per_subinterval();
    let length = cfg.grid.length();
    let u0 = st.prepare_initial(initial)?;

    let mut norms = st.new_norms();
    let first = st.commit(&mut norms, &u0);
    let mut rec = TrajectoryRecord {
        times: vec![0.0],
        states: vec![st.to_state(initial, &u0)],
        charge: vec![charge_of(&u0, length)],
        cutoff_value: vec![st.theta_of(first.iter().sum())],
        running_norms: first.map(|v| vec![v]),
        tau_r: cfg.horizon,
        picard_reports: Vec::new(),
        seed: dw.seed(),
    };
    let mut current = u0;

    for (sub, n0) in (0..n_steps).step_by(m).enumerate() {
        let t_start = n0 as f64 * cfg.dt;
        let noise: Vec<(Vec<f64>, Vec<f64>)> = (n0..n0 + m)
            .map(|j| st.noise_fields(dw, j))
            .collect::<Result<_>>()?;
        // free evolution as the initial guess
        let mut v: Vec<Tri> = Vec::with_capacity(m + 1);
        v.push(current.clone());
        for j in 0..m {
            let next = Stepper::apply(&st.full, &v[j]);
            v.push(next);
        }
        let theta0 = *rec.cutoff_value.last().expect("nonempty");
        let mut residuals = Vec::new();
        loop {
            let mut thetas = vec![theta0];
            if cfg.nonlinear {
                thetas.extend(st.thetas(&mut norms, &v[1..]));
            } else {
                // the cutoff multiplies only the nonlinearity
                thetas.resize(m + 1, 1.0);
            }
            let next = st.sweep(&v, &thetas, &noise);
            let res = st.distance(&next, &v, t_start);
            residuals.push(res);
            v = next;
            if res < cfg.picard_tol {
                break;
            }
            if !res.is_finite() || residuals.len() >= cfg.picard_max_iters {
                return Err(Error::SubintervalDivergence {
                    subinterval: sub,
                    start: t_start,
                    iterations: residuals.len(),
                    residuals,
                });
            }
        }
        rec.picard_reports.push(PicardReport {
            subinterval: sub,
            start: t_start,
            iterations: residuals.len(),
            residuals,
        });
        for (j, u) in v.iter().enumerate().skip(1) {
            let vals = st.commit(&mut norms, u);
            rec.times.push((n0 + j) as f64 * cfg.dt);
            rec.states.push(st.to_state(initial, u));
            rec.charge.push(charge_of(u, length));
            rec.cutoff_value.push(st.theta_of(vals.iter().sum()));
            for c in 0..3 {
                rec.running_norms[c].push(vals[c]);
            }
        }
        current = v.pop().expect("nonempty");
    }
    rec.tau_r = stopping_time(&rec.times, &rec.norm_sum(), cfg.truncation, cfg.horizon)?;
    Ok(rec)
}

/// Reference integrator for the linear Dirac pair with Stratonovich noise:
/// the same exponential midpoint rule, with the noise also taken at the
/// midpoint and no Itô drift. Returns the state at the horizon.
pub fn solve_stratonovich_linear(
    cfg: &SolverConfig,
    initial: &SplitState,
    dw: &WienerIncrements,
) -> Result<SplitState> {
    if cfg.nonlinear || !cfg.kernel2.is_zero() {
        return Err(Error::invalid(
            "the Stratonovich reference needs the nonlinearity and the Klein-Gordon noise off",
        ));
    }
    let mut lin = cfg.clone();
    lin.ito_drift = false;
    let st = Stepper::new(&lin)?;
    check_increments(cfg, dw)?;
    let mut u = st.prepare_initial(initial)?;
    let i = Complex64::i();
    let dt = cfg.dt;
    for step in 0..cfg.n_steps() {
        let (a1, _) = st.noise_fields(dw, step)?;
        let base = Stepper::apply(&st.full, &u);
        let sw = Stepper::apply(&st.half, &u);
        let mut next = base.clone();
        for _ in 0..200 {
            let sb = Stepper::apply(&st.back, &next);
            let mut mid = sw.clone();
            for (a, b) in mid.iter_mut().zip(&sb) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = 0.5 * (*x + y);
                }
            }
            let mut g = st.force(&mid, 1.0);
            for c in g.iter_mut() {
                for v in c.iter_mut() {
                    *v *= dt;
                }
            }
            if !a1.is_empty() {
                let pp = st.physical(&mid[0]);
                let pm = st.physical(&mid[1]);
                let n0 = st.spectral(pm.iter().zip(&a1).map(|(p, &a)| i * p * a).collect());
                let n1 = st.spectral(pp.iter().zip(&a1).map(|(p, &a)| i * p * a).collect());
                for (v, w) in g[0].iter_mut().zip(&n0) {
                    *v += w;
                }
                for (v, w) in g[1].iter_mut().zip(&n1) {
                    *v += w;
                }
            }
            let sg = Stepper::apply(&st.half, &g);
            let mut cand = base.clone();
            let mut change = 0.0;
            let mut size = 0.0;
            for ((a, b), old) in cand.iter_mut().zip(&sg).zip(&next) {
                for ((x, y), o) in a.iter_mut().zip(b).zip(old) {
                    *x += y;
                    change += (*x - o).norm_sqr();
                    size += x.norm_sqr();
                }
            }
            next = cand;
            if change <= 1e-28 * size.max(1e-300) {
                break;
            }
        }
        u = next;
    }
    Ok(st.to_state(initial, &u))
}

fn check_increments(cfg: &SolverConfig, dw: &WienerIncrements) -> Result<()> {
    if dw.n_steps() != cfg.n_steps() || dw.n_basis() != cfg.n_basis {
        return Err(Error::invalid(format!(
            "increments have {} steps x {} modes, the solver needs {} x {}",
            dw.n_steps(),
            dw.n_basis(),
            cfg.n_steps(),
            cfg.n_basis
        )));
    }
    if (dw.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::invalid("increment step differs from dt"));
    }
    Ok(())
}

/// Largest `H^s × H^s × H^r` defect between the stored states and one
/// application of the truncated mild map, restarted from the stored state
/// at the start of every subinterval.
pub fn mild_residual(record: &TrajectoryRecord, cfg: &SolverConfig, dw: &WienerIncrements) -> Result<f64> {
    let st = Stepper::new(cfg)?;
    check_increments(cfg, dw)?;
    let n_steps = cfg.n_steps();
    if record.states.len() != n_steps + 1 {
        return Err(Error::invalid(format!(
            "record has {} states, expected {}",
            record.states.len(),
            n_steps + 1
        )));
    }
    let m = cfg.steps_per_subinterval();
    let path: Vec<Tri> = record.states.iter().map(tri_of).collect();
    let mut norms = st.new_norms();
    let first = st.commit(&mut norms, &path[0]);
    let mut theta0 = st.theta_of(first.iter().sum());
    let idx = cfg.indices();
    let grid = cfg.grid;
    let mut worst: f64 = 0.0;
    for n0 in (0..n_steps).step_by(m) {
        let noise: Vec<(Vec<f64>, Vec<f64>)> = (n0..n0 + m)
            .map(|j| st.noise_fields(dw, j))
            .collect::<Result<_>>()?;
        let v = &path[n0..=n0 + m];
        let mut thetas = vec![theta0];
        thetas.extend(st.thetas(&mut norms, &v[1..]));
        let image = st.sweep(v, &thetas, &noise);
        for (a, b) in image.iter().zip(v) {
            let mut sq = 0.0;
            for c in 0..3 {
                let d: Vec<Complex64> = a[c].iter().zip(&b[c]).map(|(x, y)| x - y).collect();
                let n = SpectralField::from_coeffs(grid, d)?.sobolev_norm(idx[c]);
                sq += n * n;
            }
            worst = worst.max(sq.sqrt());
        }
        let mut last = 0.0;
        for u in &v[1..] {
            last = st.commit(&mut norms, u).iter().sum();
        }
        theta0 = st.theta_of(last);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::group_apply;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(32, 4.0 * PI).unwrap()
    }

    fn smooth_field(rng: &mut ChaCha8Rng, g: GridSpec, amp: f64) -> SpectralField {
        let coeffs = (0..g.n_modes())
            .map(|i| {
                let k = g.mode(i).abs();
                if k <= 4 {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp / (1.0 + k as f64)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        SpectralField::from_coeffs(g, coeffs).unwrap()
    }

    fn random_state(seed: u64, g: GridSpec, amp: f64, mass: f64) -> SplitState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = smooth_field(&mut rng, g, amp);
        let phi_real = SpectralField::from_real_samples(
            g,
            &phi.to_physical().iter().map(|z| z.re).collect::<Vec<_>>(),
        )
        .unwrap();
        SplitState {
            psi_plus: smooth_field(&mut rng, g, amp),
            psi_minus: smooth_field(&mut rng, g, amp),
            phi_plus: phi_real.scale(Complex64::new(0.5, 0.0)),
            ..SplitState::zeros(g, mass, 0.0, 1.0 / 3.0)
        }
    }

    fn short_cfg(g: GridSpec) -> SolverConfig {
        let mut cfg = SolverConfig::new(g);
        cfg.horizon = 0.25;
        cfg.dt = 1.0 / 64.0;
        cfg.delta = 8.0 * cfg.dt;
        cfg.picard_tol = 1e-12;
        cfg
    }

    #[test]
    fn validation_catches_grid_ratios() {
        let mut cfg = short_cfg(grid());
        cfg.delta = 1.5 * cfg.dt;
        assert!(cfg.validate().is_err());
        let mut cfg = short_cfg(grid());
        cfg.horizon = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = short_cfg(grid());
        cfg.b = 0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bilinear_examples() {
        let g = grid();
        let psi = SpectralField::single_mode(g, 2, Complex64::new(1.0, 0.0)).unwrap();
        let zero = SpectralField::zeros(g);
        assert_eq!(bilinear_dirac(&zero, &psi).unwrap().max_abs(), 0.0);
        // φ ≡ 3 means φ₊ has zero mode 1.5·L
        let phi_plus = SpectralField::single_mode(g, 0, Complex64::new(1.5 * g.length(), 0.0)).unwrap();
        let out = bilinear_dirac(&phi_plus, &psi).unwrap();
        assert!((&out - &(&psi * 3.0)).max_abs() < 1e-12);
        assert_eq!(bilinear_kg(&zero, &psi).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bilinear_kg_two_mode_and_real() {
        let g = grid();
        let k = 3;
        // ψ₊ = ψ₋ = cos(ξx) gives Re = cos² = ½ + ½cos(2ξx)
        let xi = k as f64 * g.dxi();
        let c: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new((xi * x).cos(), 0.0)).collect();
        let f = forward_transform(&c, g).unwrap();
        let out = bilinear_kg(&f, &f).unwrap();
        let l = g.length();
        let i0 = g.index_of_mode(0).unwrap();
        let i2 = g.index_of_mode(2 * k).unwrap();
        let im2 = g.index_of_mode(-2 * k).unwrap();
        assert!((out.coeffs()[i0] - 0.5 * l).norm() < 1e-10);
        let want = 0.25 * l / bracket(2.0 * xi);
        assert!((out.coeffs()[i2] - want).norm() < 1e-10);
        assert!((out.coeffs()[im2] - want).norm() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = smooth_field(&mut rng, g, 1.0);
        let b = smooth_field(&mut rng, g, 1.0);
        let out = bilinear_kg(&a, &b).unwrap();
        assert!(out.to_physical().iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn regularizer_examples() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = smooth_field(&mut rng, g, 1.0);
        let id = regularize(&f, g.max_frequency()).unwrap();
        assert!((&id - &f).max_abs() < 1e-15);
        let k = 6;
        let mode = SpectralField::single_mode(g, k, Complex64::new(1.0, 0.0)).unwrap();
        let mu = k as f64 * g.dxi() / 3.0;
        assert_eq!(regularize(&mode, mu.max(1.0)).unwrap().max_abs(), 0.0);
        assert!(regularize(&f, 0.5).is_err());
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let g = grid();
        let mut cfg = short_cfg(g);
        cfg.dirac_mass = 0.0;
        let rec = solve_trajectory(&cfg, &SplitState::zeros(g, 0.0, 0.0, 0.0)).unwrap();
        assert!(rec.charge.iter().all(|&q| q == 0.0));
        assert!(rec.states.iter().all(|s| s.psi_plus.max_abs() == 0.0 && s.phi_plus.max_abs() == 0.0));
        assert_eq!(rec.tau_r, cfg.horizon);
        assert!(rec.picard_reports.iter().all(|p| p.iterations == 1));
    }

    #[test]
    fn linear_massless_flow_is_free_evolution() {
        let g = grid();
        let mut cfg = short_cfg(g);
        cfg.nonlinear = false;
        cfg.dirac_mass = 0.0;
        let init = random_state(3, g, 1.0, 0.0);
        let rec = solve_trajectory(&cfg, &init).unwrap();
        for (t, s) in rec.times.iter().zip(&rec.states) {
            for (c, h) in SYMBOLS.iter().enumerate() {
                let want = group_apply(*h, *t, init.fields()[c]);
                assert!((&want - s.fields()[c]).max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn charge_conserved_without_noise() {
        let g = grid();
        let cfg = short_cfg(g);
        let init = random_state(4, g, 0.5, 1.0);
        let rec = solve_trajectory(&cfg, &init).unwrap();
        assert!(rec.relative_charge_drift() < 1e-10, "{}", rec.relative_charge_drift());
        let mut lin = cfg.clone();
        lin.nonlinear = false;
        let rec = solve_trajectory(&lin, &init).unwrap();
        assert!(rec.relative_charge_drift() < 1e-10);
    }

    #[test]
    fn noisy_runs_are_deterministic_and_self_consistent() {
        let g = grid();
        let mut cfg = short_cfg(g);
        cfg.kernel1 = NoiseKernel::gaussian(g, 1.0, 0.5).unwrap();
        cfg.kernel2 = NoiseKernel::gaussian(g, 1.0, 0.5).unwrap();
        cfg.seed = 9;
        let init = random_state(5, g, 0.5, 1.0);
        let a = solve_trajectory(&cfg, &init).unwrap();
        let b = solve_trajectory(&cfg, &init).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.charge, b.charge);
        let dw = cfg.increments().unwrap();
        let res = mild_residual(&a, &cfg, &dw).unwrap();
        assert!(res < 10.0 * cfg.picard_tol, "{res}");
        for p in &a.picard_reports {
            assert!(p.ratios().iter().all(|&r| r < 0.9), "{:?}", p.residuals);
        }
        let mut bad = a.clone();
        let idx = bad.states.len() / 2;
        let one = SpectralField::single_mode(g, 0, Complex64::new(g.length(), 0.0)).unwrap();
        bad.states[idx].psi_plus = &bad.states[idx].psi_plus + &one;
        assert!(mild_residual(&bad, &cfg, &dw).unwrap() > 0.5);
    }

    #[test]
    fn divergence_reports_residuals() {
        let g = grid();
        let mut cfg = short_cfg(g);
        cfg.picard_max_iters = 2;
        let init = random_state(6, g, 1.0, 1.0);
        match solve_trajectory(&cfg, &init) {
            Err(Error::SubintervalDivergence { residuals, iterations, .. }) => {
                assert_eq!(residuals.len(), iterations);
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.tau_r)),
        }
    }
}
