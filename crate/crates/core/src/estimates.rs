//! Empirical probes of the bilinear and cutoff estimates, charge
//! diagnostics, growth monitors for ensembles and the Itô/Stratonovich
//! weak-consistency check.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bourgain::{
    hb_norm_sharp_cutoff, modified_norm, running_modified_sq, theta_cutoff, xsb_norm, CutoffSpec, NormSpec,
    SpaceTimePath,
};
use crate::dynamics::{solve_stratonovich_linear, solve_with_increments, SolverConfig, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::{bracket, fft_forward, fft_inverse, SpectralField};
use crate::model::{DispersionSymbol, SplitState};
use crate::noise::sample_increments;

/// `∫ |ψ₊|² + |ψ₋|² dx`.
pub fn charge(state: &SplitState) -> f64 {
    let a = state.psi_plus.l2_norm();
    let b = state.psi_minus.l2_norm();
    a * a + b * b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateId {
    /// `‖φψ‖_{X^{s,-b}_{+ξ}} ≲ ‖φ‖_{X^{r,b}_{⟨ξ⟩}} ‖ψ‖_{X^{s,b}_{-ξ}}`
    MPlus,
    /// `‖φψ‖_{X^{s,-b}_{-ξ}} ≲ ‖φ‖_{X^{r,b}_{⟨ξ⟩}} ‖ψ‖_{X^{s,b}_{+ξ}}`
    MMinus,
    /// `‖ψ̄ψ'‖_{X^{r-1,-b}_{±⟨ξ⟩}} ≲ ‖ψ‖_{X^{s,b}_{+ξ}} ‖ψ'‖_{X^{s,b}_{-ξ}}`
    NBound,
    /// `‖φψ‖_{X^{0,-b}_{+ξ}} ≲ ‖φ‖_{X^{r,b}_{⟨ξ⟩}} ‖ψ‖^μ_{X^{0,b}_{-ξ}} ‖ψ‖^{1-μ}_{L²}`
    NullCorollary,
}

impl FromStr for EstimateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m-plus" => Ok(Self::MPlus),
            "m-minus" => Ok(Self::MMinus),
            "n-bound" => Ok(Self::NBound),
            "null-corollary" => Ok(Self::NullCorollary),
            other => Err(Error::invalid(format!(
                "unknown estimate `{other}` (expected m-plus, m-minus, n-bound or null-corollary)"
            ))),
        }
    }
}

impl fmt::Display for EstimateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MPlus => "m-plus",
            Self::MMinus => "m-minus",
            Self::NBound => "n-bound",
            Self::NullCorollary => "null-corollary",
        })
    }
}

/// Interpolation exponent `μ` with `½ - r = μb`.
pub fn interpolation_exponent(r: f64, b: f64) -> f64 {
    (0.5 - r) / b
}

/// Parameter range in which an estimate is claimed.
pub fn check_admissible(id: EstimateId, s: f64, r: f64, b: f64) -> Result<()> {
    let fail = |what: &str| Err(Error::invalid(format!("{id}: parameters (s={s}, r={r}, b={b}) violate {what}")));
    if id == EstimateId::NullCorollary {
        if !(0.0 < r && r < b && b < 0.5) {
            return fail("0 < r < b < 1/2");
        }
        let mu = interpolation_exponent(r, b);
        if !(0.0 < mu && mu < 1.0) {
            return fail("0 < mu < 1");
        }
        return Ok(());
    }
    if !(s > -0.25) {
        return fail("s > -1/4");
    }
    if !(s.abs() <= r && r <= s + 1.0) {
        return fail("|s| <= r <= s + 1");
    }
    if !(0.0 < r && r < 1.0 + 2.0 * s) {
        return fail("0 < r < 1 + 2s");
    }
    if !(b > 0.25 && b < 0.5) {
        return fail("1/4 < b < 1/2");
    }
    match id {
        EstimateId::NBound => {
            if !(2.0 * s + b >= 0.0 && 1.0 - r + s >= 0.0 && 1.0 - r + 2.0 * s + b > 0.5) {
                return fail("2s + b >= 0, 1 - r + s >= 0, 1 - r + 2s + b > 1/2");
            }
        }
        _ => {
            if !(r + b > 0.5 && r - s >= 0.0 && r + s >= 0.0) {
                return fail("r + b > 1/2, r - s >= 0, r + s >= 0");
            }
        }
    }
    Ok(())
}

/// Periodic space-time box on which probe fields are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeMesh {
    pub nx: usize,
    pub lx: f64,
    pub tw: f64,
    pub nt: usize,
}

impl ProbeMesh {
    pub fn coarse() -> Self {
        Self {
            nx: 128,
            lx: 8.0 * PI,
            tw: 16.0,
            nt: 256,
        }
    }

    /// Same box, twice the resolution in both directions.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx,
            nt: 2 * self.nt,
            ..*self
        }
    }

    fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    fn dt(&self) -> f64 {
        self.tw / self.nt as f64
    }

    fn xi(&self, k: usize) -> f64 {
        crate::grid::signed_mode(k, self.nx) as f64 * 2.0 * PI / self.lx
    }

    fn tau(&self, m: usize) -> f64 {
        crate::grid::signed_mode(m, self.nt) as f64 * 2.0 * PI / self.tw
    }
}

/// A continuum field `env(t) Σ_j a_j e^{i(ξ_j x - ω_j t)}`.
#[derive(Clone, Debug)]
struct ProbeField {
    xi: Vec<f64>,
    omega: Vec<f64>,
    amp: Vec<Complex64>,
}

const PROBE_TERMS: usize = 24;
const PROBE_MAX_XI: f64 = 4.0;
const PROBE_MAX_LAMBDA: f64 = 4.0;

impl ProbeField {
    /// Terms concentrated near `τ = -h(ξ)`, with weights `⟨ξ⟩⁻¹⟨λ⟩⁻¹(1 + U)`.
    fn draw(rng: &mut ChaCha8Rng, h: DispersionSymbol, lx: f64) -> Self {
        let dxi = 2.0 * PI / lx;
        let kmax = (PROBE_MAX_XI / dxi).floor() as i64;
        let mut f = Self {
            xi: Vec::new(),
            omega: Vec::new(),
            amp: Vec::new(),
        };
        for _ in 0..PROBE_TERMS {
            let xi = rng.gen_range(-kmax..=kmax) as f64 * dxi;
            let lambda = rng.gen_range(-PROBE_MAX_LAMBDA..PROBE_MAX_LAMBDA);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let w = (1.0 + rng.gen::<f64>()) / (bracket(xi) * bracket(lambda));
            f.xi.push(xi);
            f.omega.push(h.evaluate(xi) + lambda);
            f.amp.push(Complex64::new(re, im) * (w / 2f64.sqrt()));
        }
        f
    }

    fn sample(&self, mesh: &ProbeMesh) -> Vec<Complex64> {
        let sigma = mesh.tw / 14.0;
        let centre = 0.5 * mesh.tw;
        let xs: Vec<f64> = (0..mesh.nx).map(|j| j as f64 * mesh.dx()).collect();
        let space: Vec<Vec<Complex64>> = self
            .xi
            .iter()
            .map(|&xi| xs.iter().map(|&x| Complex64::from_polar(1.0, xi * x)).collect())
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); mesh.nx * mesh.nt];
        for (m, row) in out.chunks_mut(mesh.nx).enumerate() {
            let t = m as f64 * mesh.dt();
            let env = (-(t - centre).powi(2) / (2.0 * sigma * sigma)).exp();
            for ((a, &om), sp) in self.amp.iter().zip(&self.omega).zip(&space) {
                let c = a * Complex64::from_polar(env, -om * t);
                for (o, e) in row.iter_mut().zip(sp) {
                    *o += c * e;
                }
            }
        }
        out
    }
}

/// `ũ(τ, ξ) = ∫∫ e^{-i(tτ + xξ)} u dx dt` on the mesh, row-major in `τ`.
fn spacetime_spectrum(u: &[Complex64], mesh: &ProbeMesh) -> Vec<Complex64> {
    let (nx, nt) = (mesh.nx, mesh.nt);
    let mut buf = u.to_vec();
    for row in buf.chunks_mut(nx) {
        fft_forward(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); nt];
    let w = mesh.dx() * mesh.dt();
    for k in 0..nx {
        for m in 0..nt {
            col[m] = buf[m * nx + k];
        }
        fft_forward(&mut col);
        for m in 0..nt {
            buf[m * nx + k] = col[m] * w;
        }
    }
    buf
}

fn spacetime_inverse(spec: &[Complex64], mesh: &ProbeMesh) -> Vec<Complex64> {
    let (nx, nt) = (mesh.nx, mesh.nt);
    let mut buf = spec.to_vec();
    let mut col = vec![Complex64::new(0.0, 0.0); nt];
    for k in 0..nx {
        for m in 0..nt {
            col[m] = buf[m * nx + k];
        }
        fft_inverse(&mut col);
        for m in 0..nt {
            buf[m * nx + k] = col[m];
        }
    }
    let w = 1.0 / (mesh.lx * mesh.tw);
    for row in buf.chunks_mut(nx) {
        fft_inverse(row);
        for v in row.iter_mut() {
            *v *= w;
        }
    }
    buf
}

fn weight_table(mesh: &ProbeMesh, s: f64, b: f64, h: DispersionSymbol) -> Vec<f64> {
    let mut w = vec![0.0; mesh.nx * mesh.nt];
    for m in 0..mesh.nt {
        let tau = mesh.tau(m);
        for k in 0..mesh.nx {
            let xi = mesh.xi(k);
            w[m * mesh.nx + k] = bracket(xi).powf(2.0 * s) * bracket(tau + h.evaluate(xi)).powf(2.0 * b);
        }
    }
    w
}

/// Whole-line `X^{s,b}_h` norm of a field given by its space-time spectrum.
fn whole_line_norm(spec: &[Complex64], mesh: &ProbeMesh, s: f64, b: f64, h: DispersionSymbol) -> f64 {
    let w = weight_table(mesh, s, b, h);
    let sum: f64 = spec.iter().zip(&w).map(|(c, w)| c.norm_sqr() * w).sum();
    (sum / (mesh.lx * mesh.tw)).sqrt()
}

/// `X^{s,b}_h` norm of sampled space-time data on the probe mesh.
pub fn probe_xsb_norm(u: &[Complex64], mesh: &ProbeMesh, s: f64, b: f64, h: DispersionSymbol) -> Result<f64> {
    if u.len() != mesh.nx * mesh.nt {
        return Err(Error::invalid("field size does not match the probe mesh"));
    }
    Ok(whole_line_norm(&spacetime_spectrum(u, mesh), mesh, s, b, h))
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Fields of one trial, drawn from a seed that does not depend on mesh or `b`.
fn trial_fields(id: EstimateId, seed: u64, lx: f64) -> (ProbeField, ProbeField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h1, h2) = match id {
        EstimateId::MPlus | EstimateId::NullCorollary => (DispersionSymbol::PlusBracket, DispersionSymbol::MinusXi),
        EstimateId::MMinus => (DispersionSymbol::PlusBracket, DispersionSymbol::PlusXi),
        EstimateId::NBound => (DispersionSymbol::PlusXi, DispersionSymbol::MinusXi),
    };
    let a = ProbeField::draw(&mut rng, h1, lx);
    let b = ProbeField::draw(&mut rng, h2, lx);
    (a, b)
}

/// Quotient l.h.s./r.h.s. of an estimate for sampled fields `f` and `g`.
pub fn probe_ratio(
    id: EstimateId,
    f: &[Complex64],
    g: &[Complex64],
    mesh: &ProbeMesh,
    s: f64,
    r: f64,
    b: f64,
) -> Result<f64> {
    let n = mesh.nx * mesh.nt;
    if f.len() != n || g.len() != n {
        return Err(Error::invalid("field size does not match the probe mesh"));
    }
    let fs = spacetime_spectrum(f, mesh);
    let gs = spacetime_spectrum(g, mesh);
    use DispersionSymbol::*;
    Ok(match id {
        EstimateId::MPlus | EstimateId::MMinus => {
            let (hp, hq) = if id == EstimateId::MPlus { (PlusXi, MinusXi) } else { (MinusXi, PlusXi) };
            let prod: Vec<Complex64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
            let num = whole_line_norm(&spacetime_spectrum(&prod, mesh), mesh, s, -b, hp);
            let den = whole_line_norm(&fs, mesh, r, b, PlusBracket) * whole_line_norm(&gs, mesh, s, b, hq);
            ratio(num, den)
        }
        EstimateId::NBound => {
            let prod: Vec<Complex64> = f.iter().zip(g).map(|(a, b)| a.conj() * b).collect();
            let ps = spacetime_spectrum(&prod, mesh);
            let num = whole_line_norm(&ps, mesh, r - 1.0, -b, PlusBracket)
                .max(whole_line_norm(&ps, mesh, r - 1.0, -b, MinusBracket));
            let den = whole_line_norm(&fs, mesh, s, b, PlusXi) * whole_line_norm(&gs, mesh, s, b, MinusXi);
            ratio(num, den)
        }
        EstimateId::NullCorollary => {
            let mu = interpolation_exponent(r, b);
            let prod: Vec<Complex64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
            let num = whole_line_norm(&spacetime_spectrum(&prod, mesh), mesh, 0.0, -b, PlusXi);
            let l2 = whole_line_norm(&gs, mesh, 0.0, 0.0, MinusXi);
            let den = whole_line_norm(&fs, mesh, r, b, PlusBracket)
                * whole_line_norm(&gs, mesh, 0.0, b, MinusXi).powf(mu)
                * l2.powf(1.0 - mu);
            ratio(num, den)
        }
    })
}

/// The `M±` quotient through duality: pair `φψ` with the representer
/// `ψ'` whose spectrum is `⟨ξ⟩^{2s}⟨τ+h⟩^{-2b}(φψ)~`, integrate in physical
/// space and divide by `‖ψ'‖_{X^{-s,b}_h}`.
pub fn probe_ratio_dual(
    id: EstimateId,
    f: &[Complex64],
    g: &[Complex64],
    mesh: &ProbeMesh,
    s: f64,
    r: f64,
    b: f64,
) -> Result<f64> {
    use DispersionSymbol::*;
    let (hp, hq) = match id {
        EstimateId::MPlus => (PlusXi, MinusXi),
        EstimateId::MMinus => (MinusXi, PlusXi),
        _ => return Err(Error::invalid("the duality route is defined for m-plus and m-minus")),
    };
    let prod: Vec<Complex64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    let ps = spacetime_spectrum(&prod, mesh);
    let w = weight_table(mesh, s, -b, hp);
    let rep: Vec<Complex64> = ps.iter().zip(&w).map(|(c, w)| c * w).collect();
    let psi_dual = spacetime_inverse(&rep, mesh);
    let pairing: Complex64 = prod
        .iter()
        .zip(&psi_dual)
        .map(|(a, b)| a * b.conj())
        .sum::<Complex64>()
        * (mesh.dx() * mesh.dt());
    let dual_norm = probe_xsb_norm(&psi_dual, mesh, -s, b, hp)?;
    if dual_norm == 0.0 {
        return Ok(0.0);
    }
    let num = pairing.norm() / dual_norm;
    let den = probe_xsb_norm(f, mesh, r, b, PlusBracket)? * probe_xsb_norm(g, mesh, s, b, hq)?;
    Ok(ratio(num, den))
}

pub const QUANTILE_LEVELS: [f64; 4] = [0.1, 0.5, 0.9, 0.99];

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub estimate_id: EstimateId,
    pub s: f64,
    pub r: f64,
    pub b: f64,
    pub mu: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub forced: bool,
    pub max_ratio: f64,
    pub quantile_levels: Vec<f64>,
    pub ratio_quantiles: Vec<f64>,
    /// Largest ratio on the coarse mesh and on the refined mesh.
    pub mesh_refinement_trend: Vec<f64>,
    pub relative_mesh_change: f64,
    pub meshes: Vec<ProbeMesh>,
}

fn quantiles(sorted: &[f64]) -> Vec<f64> {
    QUANTILE_LEVELS
        .iter()
        .map(|q| {
            if sorted.is_empty() {
                return 0.0;
            }
            let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
            sorted[i]
        })
        .collect()
}

fn trial_ratios(id: EstimateId, s: f64, r: f64, b: f64, n_trials: usize, seed: u64, mesh: &ProbeMesh) -> Result<Vec<f64>> {
    (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let (a, c) = trial_fields(id, seed.wrapping_add(t as u64), mesh.lx);
            probe_ratio(id, &a.sample(mesh), &c.sample(mesh), mesh, s, r, b)
        })
        .collect()
}

/// Random trials of one estimate on the coarse mesh and its refinement.
pub fn probe_bilinear(
    id: EstimateId,
    s: f64,
    r: f64,
    b: f64,
    n_trials: usize,
    seed: u64,
    force: bool,
) -> Result<ProbeReport> {
    if !force {
        check_admissible(id, s, r, b)?;
    }
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be positive"));
    }
    let coarse = ProbeMesh::coarse();
    let fine = coarse.refined();
    let mut a = trial_ratios(id, s, r, b, n_trials, seed, &coarse)?;
    let f = trial_ratios(id, s, r, b, n_trials, seed, &fine)?;
    if a.iter().chain(&f).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{id}: a probe ratio is not finite")));
    }
    a.sort_by(f64::total_cmp);
    let max_c = *a.last().expect("n_trials > 0");
    let max_f = f.iter().copied().fold(0.0, f64::max);
    let change = if max_c == 0.0 { 0.0 } else { (max_f - max_c).abs() / max_c };
    Ok(ProbeReport {
        estimate_id: id,
        s,
        r,
        b,
        mu: interpolation_exponent(r, b),
        n_trials,
        seed,
        forced: force,
        max_ratio: max_c,
        quantile_levels: QUANTILE_LEVELS.to_vec(),
        ratio_quantiles: quantiles(&a),
        mesh_refinement_trend: vec![max_c, max_f],
        relative_mesh_change: change,
        meshes: vec![coarse, fine],
    })
}

/// Sampled fields of one trial, for external checks.
pub fn probe_trial_fields(id: EstimateId, seed: u64, mesh: &ProbeMesh) -> (Vec<Complex64>, Vec<Complex64>) {
    let (a, b) = trial_fields(id, seed, mesh.lx);
    (a.sample(mesh), b.sample(mesh))
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffProbeReport {
    pub b: f64,
    pub t0: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub r_ladder: Vec<f64>,
    pub n_times: Vec<usize>,
    /// `max ‖Θ_R U‖_{X̃(0,T₀)} / √R`, one entry per mesh.
    pub bound1: Vec<f64>,
    /// `max ‖Θ^U U - Θ^V V‖ / ‖U - V‖`, one entry per mesh.
    pub bound2: Vec<f64>,
    pub relative_change: Vec<f64>,
}

const CUTOFF_MODES: usize = 3;
const CUTOFF_TERMS: usize = 6;

/// Smooth random vector path `U_k(t) = A Σ_m c_km (e^{iω_km t} - 1)`, started
/// from rest so that the running norm crosses every radius at a resolved time.
#[derive(Clone, Debug)]
struct CutoffPath {
    omega: Vec<Vec<f64>>,
    amp: Vec<Vec<Complex64>>,
}

impl CutoffPath {
    fn draw(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let mut omega = Vec::new();
        let mut amp = Vec::new();
        for _ in 0..CUTOFF_MODES {
            let mut o = Vec::new();
            let mut a = Vec::new();
            for _ in 0..CUTOFF_TERMS {
                let w = rng.gen_range(-20.0..20.0);
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                o.push(w);
                a.push(Complex64::new(re, im) * (scale / bracket(w)));
            }
            omega.push(o);
            amp.push(a);
        }
        Self { omega, amp }
    }

    fn sample(&self, t0: f64, n: usize) -> Vec<Vec<Complex64>> {
        let dt = t0 / n as f64;
        self.omega
            .iter()
            .zip(&self.amp)
            .map(|(o, a)| {
                (0..=n)
                    .map(|j| {
                        let t = j as f64 * dt;
                        o.iter().zip(a).map(|(w, c)| c * (Complex64::from_polar(1.0, w * t) - 1.0)).sum()
                    })
                    .collect()
            })
            .collect()
    }
}

fn truncate(u: &[Vec<Complex64>], theta: &[f64]) -> Vec<Vec<Complex64>> {
    u.iter()
        .map(|s| s.iter().zip(theta).map(|(c, t)| c * *t).collect())
        .collect()
}

fn final_norm(u: &[Vec<Complex64>], dt: f64, b: f64) -> Result<f64> {
    Ok(running_modified_sq(u, dt, b)?.last().copied().unwrap_or(0.0).sqrt())
}

fn cutoff_trial(seed: u64, b: f64, t0: f64, ladder: &[f64], n: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 2f64.powf(rng.gen_range(-1.0..3.0));
    let u_path = CutoffPath::draw(&mut rng, scale);
    let eps = 10f64.powf(rng.gen_range(-2.0..0.0));
    let z_path = CutoffPath::draw(&mut rng, scale * eps);
    let dt = t0 / n as f64;
    let u = u_path.sample(t0, n);
    let z = z_path.sample(t0, n);
    let v: Vec<Vec<Complex64>> = u
        .iter()
        .zip(&z)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let run_u = running_modified_sq(&u, dt, b)?;
    let run_v = running_modified_sq(&v, dt, b)?;
    let dz = final_norm(&z, dt, b)?;
    let (mut b1, mut b2) = (0.0f64, 0.0f64);
    for &r in ladder {
        let spec = CutoffSpec::new(r)?;
        let tu: Vec<f64> = run_u.iter().map(|&x| theta_cutoff(x, &spec)).collect();
        let tv: Vec<f64> = run_v.iter().map(|&x| theta_cutoff(x, &spec)).collect();
        let wu = truncate(&u, &tu);
        let wv = truncate(&v, &tv);
        b1 = b1.max(final_norm(&wu, dt, b)? / r.sqrt());
        let diff: Vec<Vec<Complex64>> = wu
            .iter()
            .zip(&wv)
            .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x - y).collect())
            .collect();
        if dz > 0.0 {
            b2 = b2.max(final_norm(&diff, dt, b)? / dz);
        }
    }
    Ok((b1, b2))
}

/// Empirical constants of the two cutoff bounds on random smooth paths,
/// evaluated on several time meshes of `(0, T₀)`.
pub fn cutoff_probes(
    n_paths: usize,
    b: f64,
    t0: f64,
    r_ladder: &[f64],
    n_times: &[usize],
    seed: u64,
) -> Result<CutoffProbeReport> {
    if !(b > 0.0 && b < 0.5) {
        return Err(Error::invalid("b must lie in (0, 1/2)"));
    }
    if n_paths == 0 || r_ladder.is_empty() || n_times.is_empty() || !(t0 > 0.0) {
        return Err(Error::invalid("cutoff probes need paths, radii, meshes and T0 > 0"));
    }
    let mut bound1 = Vec::new();
    let mut bound2 = Vec::new();
    for &n in n_times {
        let res: Vec<(f64, f64)> = (0..n_paths)
            .into_par_iter()
            .map(|p| cutoff_trial(seed.wrapping_add(p as u64), b, t0, r_ladder, n))
            .collect::<Result<_>>()?;
        bound1.push(res.iter().map(|x| x.0).fold(0.0, f64::max));
        bound2.push(res.iter().map(|x| x.1).fold(0.0, f64::max));
    }
    let rel = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(0.0, f64::max);
        if hi == 0.0 { 0.0 } else { (hi - lo) / hi }
    };
    Ok(CutoffProbeReport {
        b,
        t0,
        n_paths,
        seed,
        r_ladder: r_ladder.to_vec(),
        n_times: n_times.to_vec(),
        relative_change: vec![rel(&bound1), rel(&bound2)],
        bound1,
        bound2,
    })
}

/// Completed trajectories of one truncation radius.
#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub truncation: f64,
    pub records: Vec<TrajectoryRecord>,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusStats {
    pub truncation: f64,
    pub completed: usize,
    pub failures: usize,
    /// Mean of `‖φ₊‖²_{X^{r,b}(0,T)}`.
    pub phi_plus_mean_square: f64,
    /// Means of `‖ψ±‖_{X^{0,b}(0,T)}`.
    pub psi_plus_mean: f64,
    pub psi_minus_mean: f64,
    pub charge_initial_mean: f64,
    pub charge_final_mean: f64,
    pub charge_final_std: f64,
    pub charge_drift_max: f64,
    /// Counts of `τ_R` in ten equal bins of `(0, T]`.
    pub tau_r_histogram: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub n_trajectories: usize,
    pub failures: usize,
    pub r: f64,
    pub b: f64,
    pub mu: f64,
    /// Lebesgue exponent `p` used for data sampling.
    pub p_exponent: f64,
    pub per_radius: Vec<RadiusStats>,
    /// Least-squares slope of `log` statistic against `log R`.
    pub phi_trend_slope: f64,
    pub psi_trend_slope: f64,
    /// `(max - min)/max` of the `φ₊` statistic across the ladder.
    pub phi_relative_spread: f64,
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 { 0.0 } else { sxy / sxx }
}

/// Least-squares order of `err ~ dt^q`.
pub fn fitted_order(dts: &[f64], errs: &[f64]) -> f64 {
    slope(dts, errs)
}

fn component_path(rec: &TrajectoryRecord, c: usize) -> Result<SpaceTimePath> {
    let slices = rec.states.iter().map(|s| s.fields()[c].clone()).collect();
    SpaceTimePath::from_times(&rec.times, slices)
}

/// Growth statistics of ensembles over a ladder of truncation radii.
pub fn monitor_global_bounds(runs: &[EnsembleRun], s: f64, r: f64, b: f64) -> Result<EnsembleStats> {
    if s != 0.0 || !(0.25 < r && r < 0.5) || !(r.max(1.0 - 2.0 * r) < b && b < 0.5) {
        return Err(Error::invalid(format!(
            "global bounds need s = 0, 1/4 < r < 1/2 and max(r, 1 - 2r) < b < 1/2 (got s={s}, r={r}, b={b})"
        )));
    }
    let mut per_radius = Vec::new();
    for run in runs {
        let per: Vec<(f64, f64, f64)> = run
            .records
            .par_iter()
            .map(|rec| {
                let horizon = *rec.times.last().expect("nonempty record");
                let mut out = [0.0; 3];
                for (c, (idx, h)) in [
                    (0.0, DispersionSymbol::PlusXi),
                    (0.0, DispersionSymbol::MinusXi),
                    (r, DispersionSymbol::PlusBracket),
                ]
                .into_iter()
                .enumerate()
                {
                    let path = component_path(rec, c)?;
                    out[c] = xsb_norm(&path, &NormSpec::new(idx, b, h, (0.0, horizon))?)?;
                }
                Ok((out[2] * out[2], out[0], out[1]))
            })
            .collect::<Result<_>>()?;
        let n = per.len().max(1) as f64;
        let q0: Vec<f64> = run.records.iter().map(|r| r.charge[0]).collect();
        let q1: Vec<f64> = run.records.iter().map(|r| *r.charge.last().expect("nonempty")).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let m1 = mean(&q1);
        let std = (q1.iter().map(|q| (q - m1).powi(2)).sum::<f64>() / n).sqrt();
        let mut hist = vec![0usize; 10];
        for rec in &run.records {
            let horizon = *rec.times.last().expect("nonempty");
            let bin = ((rec.tau_r / horizon) * 10.0).ceil() as usize;
            hist[bin.clamp(1, 10) - 1] += 1;
        }
        per_radius.push(RadiusStats {
            truncation: run.truncation,
            completed: run.records.len(),
            failures: run.failures,
            phi_plus_mean_square: per.iter().map(|p| p.0).sum::<f64>() / n,
            psi_plus_mean: per.iter().map(|p| p.1).sum::<f64>() / n,
            psi_minus_mean: per.iter().map(|p| p.2).sum::<f64>() / n,
            charge_initial_mean: mean(&q0),
            charge_final_mean: m1,
            charge_final_std: std,
            charge_drift_max: run
                .records
                .iter()
                .map(|r| r.relative_charge_drift())
                .fold(0.0, f64::max),
            tau_r_histogram: hist,
        });
    }
    let radii: Vec<f64> = per_radius.iter().map(|p| p.truncation).collect();
    let phi: Vec<f64> = per_radius.iter().map(|p| p.phi_plus_mean_square).collect();
    let psi: Vec<f64> = per_radius.iter().map(|p| p.psi_plus_mean + p.psi_minus_mean).collect();
    let hi = phi.iter().copied().fold(0.0, f64::max);
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EnsembleStats {
        n_trajectories: runs.iter().map(|r| r.records.len() + r.failures).sum(),
        failures: runs.iter().map(|r| r.failures).sum(),
        r,
        b,
        mu: interpolation_exponent(r, b),
        p_exponent: 4f64.max((2.0 * b + 2.0 * r - 1.0) / (b + 2.0 * r - 1.0)),
        per_radius,
        phi_trend_slope: slope(&radii, &phi),
        psi_trend_slope: slope(&radii, &psi),
        phi_relative_spread: if hi == 0.0 { 0.0 } else { (hi - lo) / hi },
    })
}

fn density(state: &SplitState) -> Vec<f64> {
    let a = state.psi_plus.to_physical();
    let b = state.psi_minus.to_physical();
    a.iter().zip(&b).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).collect()
}

fn check_linear(cfg: &SolverConfig) -> Result<()> {
    if cfg.nonlinear {
        return Err(Error::invalid("the Itô/Stratonovich check needs the nonlinearity off"));
    }
    if !cfg.kernel2.is_zero() {
        return Err(Error::invalid("the Itô/Stratonovich check needs the Klein-Gordon noise off"));
    }
    Ok(())
}

/// Discrepancy between ensemble-mean densities of the Itô solver and the
/// Stratonovich reference, on coupled Brownian paths sampled at `fine_dt`
/// and summed up to `cfg.dt`.
fn ito_discrepancy_at(
    cfg: &SolverConfig,
    initial: &SplitState,
    n_trajectories: usize,
    base_seed: u64,
    refine: usize,
) -> Result<f64> {
    check_linear(cfg)?;
    if cfg.kernel1.is_zero() {
        // no noise and no correction: both integrators are the same
        // deterministic midpoint rule
        return Ok(0.0);
    }
    let n_steps = cfg.n_steps();
    let fine_dt = cfg.dt / refine as f64;
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let fine = sample_increments(seed, cfg.n_basis, n_steps * refine, fine_dt)?;
            let dw = fine.coarsen(refine)?;
            let ito = solve_with_increments(cfg, initial, &dw)?;
            let strat = solve_stratonovich_linear(cfg, initial, &dw)?;
            Ok((density(ito.states.last().expect("nonempty")), density(&strat)))
        })
        .collect::<Result<_>>()?;
    let n = cfg.grid.n_modes();
    let mut diff = vec![0.0; n];
    for (a, b) in &sums {
        for j in 0..n {
            diff[j] += a[j] - b[j];
        }
    }
    let scale = 1.0 / n_trajectories.max(1) as f64;
    let sq: f64 = diff.iter().map(|d| (d * scale).powi(2)).sum::<f64>() * cfg.grid.dx();
    Ok(sq.sqrt())
}

/// Weak discrepancy at `cfg.dt` over `n_trajectories` coupled paths.
pub fn ito_stratonovich_consistency(
    cfg: &SolverConfig,
    initial: &SplitState,
    n_trajectories: usize,
    base_seed: u64,
) -> Result<f64> {
    ito_discrepancy_at(cfg, initial, n_trajectories, base_seed, 1)
}

#[derive(Clone, Debug, Serialize)]
pub struct ItoStudy {
    pub dts: Vec<f64>,
    pub discrepancies: Vec<f64>,
    pub order: f64,
    pub n_trajectories: usize,
    pub ito_drift: bool,
}

/// Discrepancy at `cfg.dt` and `halvings` successive halvings, with the
/// Brownian paths of every level summed from the finest one.
pub fn ito_convergence_study(
    cfg: &SolverConfig,
    initial: &SplitState,
    n_trajectories: usize,
    base_seed: u64,
    halvings: usize,
) -> Result<ItoStudy> {
    check_linear(cfg)?;
    let mut dts = Vec::new();
    let mut disc = Vec::new();
    for j in 0..=halvings {
        let mut c = cfg.clone();
        c.dt = cfg.dt / 2f64.powi(j as i32);
        c.delta = cfg.delta / 2f64.powi(j as i32);
        let refine = 1usize << (halvings - j);
        dts.push(c.dt);
        disc.push(ito_discrepancy_at(&c, initial, n_trajectories, base_seed, refine)?);
    }
    Ok(ItoStudy {
        order: fitted_order(&dts, &disc),
        dts,
        discrepancies: disc,
        n_trajectories,
        ito_drift: cfg.ito_drift,
    })
}

/// Relative error of `‖S_h(·)f‖_{X̃^{s,b}(0,T)} = T^{1/2-b}‖f‖_{H^s}` on `n_steps` cells.
pub fn free_evolution_identity_error(
    f: &SpectralField,
    h: DispersionSymbol,
    s: f64,
    b: f64,
    horizon: f64,
    n_steps: usize,
) -> Result<f64> {
    let path = SpaceTimePath::free_evolution(f, h, 0.0, horizon / n_steps as f64, n_steps)?;
    let lhs = modified_norm(&path, &NormSpec::new(s, b, h, (0.0, horizon))?)?;
    let rhs = horizon.powf(0.5 - b) * f.sobolev_norm(s);
    Ok(if rhs == 0.0 { lhs } else { (lhs - rhs).abs() / rhs })
}

/// `‖𝟙_{(0,T)}‖_{H^b} / T^{1/2-b}` for `T = 2^{-e}`, one entry per exponent.
pub fn indicator_scaling(b: f64, exponents: &[i32], n_cells: usize) -> Result<Vec<f64>> {
    exponents
        .iter()
        .map(|&e| {
            let t = 2f64.powi(-e);
            let ones = vec![Complex64::new(1.0, 0.0); n_cells + 1];
            Ok(hb_norm_sharp_cutoff(&ones, t / n_cells as f64, b)? / t.powf(0.5 - b))
        })
        .collect()
}

/// Trajectories with seeds `base_seed + i`, in seed order. Divergent
/// trajectories are counted, not returned.
pub fn run_ensemble(
    cfg: &SolverConfig,
    initial: &SplitState,
    n_trajectories: usize,
    base_seed: u64,
) -> Result<(Vec<TrajectoryRecord>, usize)> {
    let out: Vec<Result<TrajectoryRecord>> = (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = base_seed.wrapping_add(i as u64);
            crate::dynamics::solve_trajectory(&c, initial)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = 0;
    for r in out {
        match r {
            Ok(rec) => records.push(rec),
            Err(Error::SubintervalDivergence { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((records, failures))
}

#[derive(Clone, Debug, Serialize)]
pub struct ChargeStudy {
    pub dts: Vec<f64>,
    /// Root mean square over seeds of the relative charge drift, with noise.
    pub rms_drift: Vec<f64>,
    pub order: f64,
    /// Relative charge drift of the noise-free run at each `dt`.
    pub noise_free_drift: Vec<f64>,
    pub n_seeds: usize,
    pub picard_max_ratio: f64,
    pub picard_median_ratio: f64,
    pub picard_subintervals: usize,
}

/// Charge drift at `cfg.dt` and `halvings` halvings, on Brownian paths
/// summed from the finest level, together with the noise-free drift and
/// the Picard contraction ratios of every noisy run.
pub fn charge_drift_study(
    cfg: &SolverConfig,
    initial: &SplitState,
    n_seeds: usize,
    base_seed: u64,
    halvings: usize,
) -> Result<ChargeStudy> {
    if n_seeds == 0 {
        return Err(Error::invalid("the charge study needs at least one seed"));
    }
    let levels: Vec<SolverConfig> = (0..=halvings)
        .map(|j| {
            let mut c = cfg.clone();
            c.dt = cfg.dt / 2f64.powi(j as i32);
            c.delta = cfg.delta / 2f64.powi(j as i32);
            c
        })
        .collect();
    let finest = levels.last().expect("at least one level");
    let mut sq = vec![0.0; levels.len()];
    let mut ratios = Vec::new();
    let mut subintervals = 0;
    for i in 0..n_seeds {
        let seed = base_seed.wrapping_add(i as u64);
        let fine = if finest.noise_active() {
            sample_increments(seed, finest.n_basis, finest.n_steps(), finest.dt)?
        } else {
            crate::noise::WienerIncrements::zeros(finest.n_basis, finest.n_steps(), finest.dt)
        };
        for (j, c) in levels.iter().enumerate() {
            let dw = fine.coarsen(1 << (halvings - j))?;
            let rec = solve_with_increments(c, initial, &dw)?;
            sq[j] += rec.relative_charge_drift().powi(2);
            subintervals += rec.picard_reports.len();
            ratios.extend(rec.picard_reports.iter().flat_map(|p| p.ratios()));
        }
    }
    let rms: Vec<f64> = sq.iter().map(|v| (v / n_seeds as f64).sqrt()).collect();
    let noise_free = levels
        .iter()
        .map(|c| {
            let mut q = c.clone();
            q.kernel1 = crate::noise::NoiseKernel::zero(c.grid);
            q.kernel2 = crate::noise::NoiseKernel::zero(c.grid);
            Ok(crate::dynamics::solve_trajectory(&q, initial)?.relative_charge_drift())
        })
        .collect::<Result<Vec<f64>>>()?;
    ratios.sort_by(f64::total_cmp);
    let dts: Vec<f64> = levels.iter().map(|c| c.dt).collect();
    Ok(ChargeStudy {
        order: fitted_order(&dts, &rms),
        dts,
        rms_drift: rms,
        noise_free_drift: noise_free,
        n_seeds,
        picard_max_ratio: ratios.last().copied().unwrap_or(0.0),
        picard_median_ratio: if ratios.is_empty() { 0.0 } else { ratios[ratios.len() / 2] },
        picard_subintervals: subintervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::group_apply;

    #[test]
    fn charge_examples() {
        let g = GridSpec::new(16, 2.0 * PI).unwrap();
        assert_eq!(charge(&SplitState::zeros(g, 1.0, 0.0, 0.0)), 0.0);
        let mut st = SplitState::zeros(g, 1.0, 0.0, 0.0);
        st.psi_plus = SpectralField::single_mode(g, 2, Complex64::new(g.length(), 0.0)).unwrap();
        assert!((charge(&st) - g.length()).abs() < 1e-12);
        st.psi_minus = SpectralField::single_mode(g, -1, Complex64::new(0.3, 0.1)).unwrap();
        let q = charge(&st);
        st.psi_plus = group_apply(DispersionSymbol::PlusXi, 0.7, &st.psi_plus);
        st.psi_minus = group_apply(DispersionSymbol::MinusXi, 0.7, &st.psi_minus);
        assert!((charge(&st) - q).abs() < 1e-12 * q);
    }

    #[test]
    fn admissibility() {
        assert!(check_admissible(EstimateId::NBound, 0.0, 1.0 / 3.0, 0.3).is_ok());
        assert!(check_admissible(EstimateId::MPlus, 0.0, 1.0 / 3.0, 0.3).is_ok());
        assert!(check_admissible(EstimateId::MPlus, 0.0, 1.0 / 3.0, 0.2).is_err());
        assert!(check_admissible(EstimateId::NBound, -0.3, 0.3, 0.3).is_err());
        assert!(check_admissible(EstimateId::NullCorollary, 0.0, 0.25, 0.3).is_ok());
        assert!(check_admissible(EstimateId::NullCorollary, 0.0, 1.0 / 3.0, 0.3).is_err());
        assert!(probe_bilinear(EstimateId::MPlus, 0.0, 0.1, 0.3, 1, 0, false).is_err());
        assert!("m-plus".parse::<EstimateId>().is_ok());
        assert!("bogus".parse::<EstimateId>().is_err());
    }

    #[test]
    fn zero_field_ratio_is_zero() {
        let mesh = ProbeMesh::coarse();
        let (f, _) = probe_trial_fields(EstimateId::NBound, 1, &mesh);
        let z = vec![Complex64::new(0.0, 0.0); f.len()];
        assert_eq!(probe_ratio(EstimateId::NBound, &f, &z, &mesh, 0.0, 1.0 / 3.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn spacetime_transform_inverts() {
        let mesh = ProbeMesh { nx: 16, lx: 2.0 * PI, tw: 4.0, nt: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<Complex64> = (0..128).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
        let back = spacetime_inverse(&spacetime_spectrum(&u, &mesh), &mesh);
        assert!(u.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 0.5, 0.25];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.7)).collect();
        assert!((fitted_order(&x, &y) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn monitor_rejects_bad_hypotheses() {
        assert!(monitor_global_bounds(&[], 0.0, 0.2, 0.45).is_err());
        assert!(monitor_global_bounds(&[], 0.0, 0.3, 0.35).is_err());
        let ok = monitor_global_bounds(&[], 0.0, 0.35, 0.4).unwrap();
        assert_eq!(ok.n_trajectories, 0);
        assert!((ok.mu - 0.375).abs() < 1e-12);
    }
}
