//! Time-Sobolev and Bourgain restriction norms, the modified (Slobodeckij)
//! norm, smooth cutoffs and stopping times.
//!
//! Space-time paths are sampled on a uniform time grid. For the sharp-cutoff
//! `H^b` norm a sampled series is read as a piecewise-constant function whose
//! cell values are averages of neighbouring samples; its Fourier transform is
//! then known in closed form, so the only discretisation left is the
//! periodic quadrature in `τ`, whose weight is summed over all aliases.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bracket, fft_forward, GridSpec, SpectralField};
use crate::model::DispersionSymbol;

/// Number of explicit alias terms on each side in the `τ` weight.
const ALIAS_TERMS: i64 = 32;
/// Extra padding, in time units, past the end of the series. The kernel of
/// `⟨τ⟩^{2b}` decays like `e^{-|t|}`, so 40 units leave aliasing near `1e-17`.
const PAD_TIME: f64 = 40.0;
/// Minimal zero-padding factor relative to the series length.
const PAD_FACTOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub s: f64,
    pub b: f64,
    pub symbol: DispersionSymbol,
    pub interval: (f64, f64),
}

impl NormSpec {
    pub fn new(s: f64, b: f64, symbol: DispersionSymbol, interval: (f64, f64)) -> Result<Self> {
        if !(b > 0.0 && b < 0.5) {
            return Err(Error::invalid(format!("b must lie in (0, 1/2), got {b}")));
        }
        let (a, t) = interval;
        if !(a >= 0.0 && t > a && t.is_finite()) {
            return Err(Error::invalid(format!(
                "interval ({a}, {t}) must satisfy 0 <= S < T"
            )));
        }
        if !s.is_finite() {
            return Err(Error::invalid("s must be finite"));
        }
        Ok(Self {
            s,
            b,
            symbol,
            interval,
        })
    }

    pub fn length(&self) -> f64 {
        self.interval.1 - self.interval.0
    }
}

/// Spatial slices of `u(t, ·)` on a uniform time grid `t₀ + j·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimePath {
    grid: GridSpec,
    t0: f64,
    dt: f64,
    slices: Vec<SpectralField>,
}

impl SpaceTimePath {
    pub fn new(t0: f64, dt: f64, slices: Vec<SpectralField>) -> Result<Self> {
        let grid = *slices
            .first()
            .ok_or_else(|| Error::invalid("a path needs at least one slice"))?
            .grid();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        for s in &slices {
            if *s.grid() != grid {
                return Err(Error::GridMismatch("path slices live on different grids".into()));
            }
        }
        Ok(Self {
            grid,
            t0,
            dt,
            slices,
        })
    }

    /// Build from explicit times, which must be uniformly spaced.
    pub fn from_times(times: &[f64], slices: Vec<SpectralField>) -> Result<Self> {
        if times.len() != slices.len() {
            return Err(Error::invalid("one slice per time is required"));
        }
        if times.len() < 2 {
            return Self::new(times.first().copied().unwrap_or(0.0), 1.0, slices);
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(Error::invalid("time samples are not uniformly spaced"));
            }
        }
        Self::new(times[0], dt, slices)
    }

    /// `S_h(t) f` sampled at `t₀ + j·dt`, `j = 0..=n_steps`.
    pub fn free_evolution(
        f: &SpectralField,
        h: DispersionSymbol,
        t0: f64,
        dt: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let slices = (0..=n_steps)
            .map(|j| crate::model::group_apply(h, t0 + j as f64 * dt, f))
            .collect();
        Self::new(t0, dt, slices)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[SpectralField] {
        &self.slices
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.slices.len()).map(|j| self.time(j)).collect()
    }

    /// Multiply every slice at time `t` by `m(t)`.
    pub fn map_time(&self, m: impl Fn(f64) -> Complex64) -> Self {
        let slices = self
            .slices
            .iter()
            .enumerate()
            .map(|(j, f)| f.scale(m(self.time(j))))
            .collect();
        Self {
            slices,
            ..self.clone()
        }
    }

    /// Indices `(i, j)` of the nodes at `S` and `T`; both must be nodes.
    pub fn node_range(&self, interval: (f64, f64)) -> Result<(usize, usize)> {
        let locate = |t: f64| -> Result<usize> {
            let x = (t - self.t0) / self.dt;
            let r = x.round();
            if (x - r).abs() > 1e-7 || r < 0.0 || r as usize >= self.slices.len() {
                return Err(Error::invalid(format!(
                    "time {t} is not a node of the path on [{}, {}]",
                    self.t0,
                    self.time(self.slices.len().saturating_sub(1))
                )));
            }
            Ok(r as usize)
        };
        let (i, j) = (locate(interval.0)?, locate(interval.1)?);
        if j <= i {
            return Err(Error::invalid("interval must contain at least two nodes"));
        }
        Ok((i, j))
    }

    /// Sub-path on the nodes `i..=j`.
    pub fn window(&self, i: usize, j: usize) -> Result<Self> {
        if j < i || j >= self.slices.len() {
            return Err(Error::invalid("window out of range"));
        }
        Self::new(self.time(i), self.dt, self.slices[i..=j].to_vec())
    }
}

/// Quadrature weights for the sharp-cutoff `H^b` norm of series with a fixed
/// number of cells, step and index.
#[derive(Clone, Debug)]
pub struct HbEvaluator {
    n_cells: usize,
    dt: f64,
    b: f64,
    n_pad: usize,
    weights: Vec<f64>,
}

impl HbEvaluator {
    pub fn new(n_cells: usize, dt: f64, b: f64) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::invalid("need at least two samples"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if !(b.abs() < 0.5) {
            return Err(Error::invalid(format!("b must satisfy |b| < 1/2, got {b}")));
        }
        let want = (PAD_FACTOR * n_cells).max(n_cells + (PAD_TIME / dt).ceil() as usize);
        let n_pad = want.next_power_of_two();
        let omega = 2.0 * PI / dt;
        let half = n_pad / 2;
        let head: Vec<f64> = (0..=half)
            .into_par_iter()
            .map(|k| alias_weight(k as f64 * omega / n_pad as f64, dt, b, omega))
            .collect();
        // w(Ω - τ) = w(τ)
        let mut weights = vec![0.0; n_pad];
        weights[..=half].copy_from_slice(&head);
        for k in half + 1..n_pad {
            weights[k] = head[n_pad - k];
        }
        Ok(Self {
            n_cells,
            dt,
            b,
            n_pad,
            weights,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn padded_len(&self) -> usize {
        self.n_pad
    }

    /// Squared norm of a series of `n_cells + 1` samples.
    pub fn norm_sq(&self, series: &[Complex64]) -> Result<f64> {
        if series.len() != self.n_cells + 1 {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                self.n_cells + 1,
                series.len()
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_pad];
        for (m, w) in series.windows(2).enumerate() {
            buf[m] = 0.5 * (w[0] + w[1]);
        }
        if buf.iter().all(|c| c.norm_sqr() == 0.0) {
            return Ok(0.0);
        }
        fft_forward(&mut buf);
        let sum: f64 = buf
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| c.norm_sqr() * w)
            .sum();
        Ok(sum / (self.n_pad as f64 * self.dt))
    }
}

/// `Σ_j ⟨τ₀+jΩ⟩^{2b} |2 sin((τ₀+jΩ)dt/2)/(τ₀+jΩ)|²`, explicit for `|j| ≤ J`
/// plus a midpoint Euler-Maclaurin tail.
fn alias_weight(tau0: f64, dt: f64, b: f64, omega: f64) -> f64 {
    let half_sin = (0.5 * tau0 * dt).sin();
    let s2 = 4.0 * half_sin * half_sin;
    let centre = if tau0 == 0.0 {
        dt * dt
    } else {
        s2 * (1.0 + tau0 * tau0).powf(b) / (tau0 * tau0)
    };
    let mut sum = 0.0;
    for j in 1..=ALIAS_TERMS {
        for t in [tau0 + j as f64 * omega, tau0 - j as f64 * omega] {
            sum += (1.0 + t * t).powf(b) / (t * t);
        }
    }
    let jh = ALIAS_TERMS as f64 + 0.5;
    // (1+τ²)^b/τ² ≈ τ^p + b·τ^{p-2} with p = 2b-2, summed at a+(j+½)Ω
    let p = 2.0 * b - 2.0;
    let tail = |a: f64| {
        let lead = a.powf(p + 1.0) / (omega * -(p + 1.0))
            + omega * p * a.powf(p - 1.0) / 24.0
            - 7.0 * omega.powi(3) * p * (p - 1.0) * (p - 2.0) * a.powf(p - 3.0) / 5760.0;
        let corr = b * a.powf(p - 1.0) / (omega * -(p - 1.0));
        lead + corr
    };
    sum += tail(tau0 + jh * omega) + tail(jh * omega - tau0);
    centre + s2 * sum
}

/// `‖𝟙_{(S,T)} φ‖_{H^b(ℝ)}` for samples `φ(S + j·dt)`, `j = 0..=M`.
pub fn hb_norm_sharp_cutoff(phi: &[Complex64], dt: f64, b: f64) -> Result<f64> {
    if phi.len() < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let ev = HbEvaluator::new(phi.len() - 1, dt, b)?;
    Ok(ev.norm_sq(phi)?.sqrt())
}

/// Like [`hb_norm_sharp_cutoff`] but with explicit, possibly nonuniform,
/// sample times.
pub fn hb_norm_sampled(times: &[f64], phi: &[Complex64], b: f64) -> Result<f64> {
    if times.len() != phi.len() || times.len() < 2 {
        return Err(Error::invalid("need matching times and at least two samples"));
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs() {
            return Err(Error::invalid("time samples are not uniformly spaced"));
        }
    }
    hb_norm_sharp_cutoff(phi, dt, b)
}

/// Bourgain restriction norm `X^{s,b}_h(S,T)` through its sharp-cutoff form.
pub fn xsb_norm(path: &SpaceTimePath, spec: &NormSpec) -> Result<f64> {
    let sym = spec.symbol;
    xsb_norm_with(path, spec.s, spec.b, spec.interval, &|xi| sym.evaluate(xi))
}

/// [`xsb_norm`] for an arbitrary dispersion relation.
pub fn xsb_norm_with(
    path: &SpaceTimePath,
    s: f64,
    b: f64,
    interval: (f64, f64),
    h: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<f64> {
    let (i0, i1) = path.node_range(interval)?;
    let ev = HbEvaluator::new(i1 - i0, path.dt, b)?;
    let grid = path.grid;
    let per_mode: Vec<Result<f64>> = (0..grid.n_modes())
        .into_par_iter()
        .map(|k| {
            let xi = grid.frequency(k);
            let hk = h(xi);
            let series: Vec<Complex64> = (i0..=i1)
                .map(|j| path.slices[j].coeffs()[k] * Complex64::from_polar(1.0, path.time(j) * hk))
                .collect();
            Ok(bracket(xi).powf(2.0 * s) * ev.norm_sq(&series)?)
        })
        .collect();
    let mut total = 0.0;
    for v in per_mode {
        total += v?;
    }
    Ok((total / grid.length()).sqrt())
}

/// Modified norm `X̃^{s,b}_h(S,T)`: the scaled `L²` term plus the Slobodeckij
/// double sum, per frequency.
pub fn modified_norm(path: &SpaceTimePath, spec: &NormSpec) -> Result<f64> {
    let (i0, i1) = path.node_range(spec.interval)?;
    let grid = path.grid;
    let dt = path.dt;
    let m = i1 - i0;
    let kern = slobodeckij_weights(m, dt, spec.b);
    let len = spec.length();
    let per_mode: Vec<f64> = (0..grid.n_modes())
        .into_par_iter()
        .map(|k| {
            let xi = grid.frequency(k);
            let hk = spec.symbol.evaluate(xi);
            let series: Vec<Complex64> = (i0..=i1)
                .map(|j| path.slices[j].coeffs()[k] * Complex64::from_polar(1.0, path.time(j) * hk))
                .collect();
            let l2 = trapezoid_sq(&series, dt);
            let d = slobodeckij_sum(&series, &kern);
            bracket(xi).powf(2.0 * spec.s) * (len.powf(-2.0 * spec.b) * l2 + d)
        })
        .collect();
    Ok((per_mode.iter().sum::<f64>() / grid.length()).sqrt())
}

fn trapezoid_sq(series: &[Complex64], dt: f64) -> f64 {
    let n = series.len();
    let inner: f64 = series.iter().map(|c| c.norm_sqr()).sum();
    dt * (inner - 0.5 * series[0].norm_sqr() - 0.5 * series[n - 1].norm_sqr())
}

/// `w(n) = dt² / (n·dt)^{1+2b}` for `n = 0..=m` (with `w(0) = 0`).
fn slobodeckij_weights(m: usize, dt: f64, b: f64) -> Vec<f64> {
    (0..=m)
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                dt * dt / (n as f64 * dt).powf(1.0 + 2.0 * b)
            }
        })
        .collect()
}

fn slobodeckij_sum(series: &[Complex64], kern: &[f64]) -> f64 {
    let mut d = 0.0;
    for j in 1..series.len() {
        for i in 0..j {
            d += kern[j - i] * (series[j] - series[i]).norm_sqr();
        }
    }
    2.0 * d
}

/// Slobodeckij seminorm of a uniformly sampled series, midpoint rule on the
/// off-diagonal cells.
pub fn slobodeckij_seminorm(phi: &[Complex64], dt: f64, b: f64) -> Result<f64> {
    if phi.len() < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let kern = slobodeckij_weights(phi.len() - 1, dt, b);
    Ok(slobodeckij_sum(phi, &kern).sqrt())
}

/// Running `X̃²` on `(0, t_n)` for every node of a vector of time series
/// already in `U` form (one series per frequency, unit frequency measure).
pub fn running_modified_sq(u: &[Vec<Complex64>], dt: f64, b: f64) -> Result<Vec<f64>> {
    let m = u.first().map(|s| s.len()).unwrap_or(0);
    if m == 0 || u.iter().any(|s| s.len() != m) {
        return Err(Error::invalid("series must be nonempty and of equal length"));
    }
    let kern = slobodeckij_weights(m - 1, dt, b);
    let mut out = vec![0.0; m];
    let mut mass_sum = 0.0;
    let mut double = 0.0;
    let first: f64 = u.iter().map(|s| s[0].norm_sqr()).sum();
    for n in 0..m {
        let mass: f64 = u.iter().map(|s| s[n].norm_sqr()).sum();
        mass_sum += mass;
        for i in 0..n {
            let diff: f64 = u.iter().map(|s| (s[n] - s[i]).norm_sqr()).sum();
            double += 2.0 * kern[n - i] * diff;
        }
        if n > 0 {
            let t = n as f64 * dt;
            let l2 = dt * (mass_sum - 0.5 * first - 0.5 * mass);
            out[n] = t.powf(-2.0 * b) * l2 + double;
        }
    }
    Ok(out)
}

/// Incremental `X̃²` of one component on `(t₀, t_n)` as nodes are appended.
///
/// Each push costs `O(n·N)`, so a whole run costs `O(N·M²)` rather than
/// recomputing the double sum from scratch at every node.
#[derive(Clone, Debug)]
pub struct RunningModifiedNorm {
    weight: Vec<f64>,
    phase_rate: Vec<f64>,
    length: f64,
    t0: f64,
    dt: f64,
    b: f64,
    history: Vec<Vec<Complex64>>,
    mass: Vec<f64>,
    mass_sum: f64,
    double_sum: f64,
    kern: Vec<f64>,
}

impl RunningModifiedNorm {
    pub fn new(grid: &GridSpec, s: f64, b: f64, symbol: DispersionSymbol, t0: f64, dt: f64) -> Self {
        let freqs = grid.frequencies();
        Self {
            weight: freqs.iter().map(|&xi| bracket(xi).powf(s)).collect(),
            phase_rate: freqs.iter().map(|&xi| symbol.evaluate(xi)).collect(),
            length: grid.length(),
            t0,
            dt,
            b,
            history: Vec::new(),
            mass: Vec::new(),
            mass_sum: 0.0,
            double_sum: 0.0,
            kern: vec![0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    fn transform(&self, node: usize, f: &SpectralField) -> Vec<Complex64> {
        let t = self.t0 + node as f64 * self.dt;
        f.coeffs()
            .iter()
            .zip(&self.weight)
            .zip(&self.phase_rate)
            .map(|((c, w), h)| c * Complex64::from_polar(*w, t * h))
            .collect()
    }

    fn kern_at(&mut self, n: usize) -> f64 {
        while self.kern.len() <= n {
            let m = self.kern.len() as f64;
            self.kern
                .push(self.dt * self.dt / (m * self.dt).powf(1.0 + 2.0 * self.b));
        }
        self.kern[n]
    }

    fn increment(&self, u: &[Complex64], history: &[Vec<Complex64>], extra: &[Vec<Complex64>]) -> f64 {
        let n = history.len() + extra.len();
        let mut d = 0.0;
        for (i, prev) in history.iter().chain(extra).enumerate() {
            let diff: f64 = u.iter().zip(prev).map(|(a, b)| (a - b).norm_sqr()).sum();
            d += self.kern[n - i] * diff;
        }
        2.0 * d
    }

    fn value_from(&self, n_nodes: usize, mass_sum: f64, first: f64, last: f64, double: f64) -> f64 {
        if n_nodes < 2 {
            return 0.0;
        }
        let t = (n_nodes - 1) as f64 * self.dt;
        let l2 = self.dt * (mass_sum - 0.5 * first - 0.5 * last);
        (t.powf(-2.0 * self.b) * l2 + double) / self.length
    }

    /// Append the slice for the next node and return the updated `X̃²`.
    pub fn push(&mut self, f: &SpectralField) -> f64 {
        let n = self.history.len();
        let u = self.transform(n, f);
        self.kern_at(n);
        let inc = self.increment(&u, &self.history, &[]);
        let m: f64 = u.iter().map(|c| c.norm_sqr()).sum();
        self.double_sum += inc;
        self.mass_sum += m;
        self.mass.push(m);
        self.history.push(u);
        self.value()
    }

    /// `X̃²` on `(t₀, t_last)`; zero with fewer than two nodes.
    pub fn value(&self) -> f64 {
        let n = self.history.len();
        if n < 2 {
            return 0.0;
        }
        self.value_from(n, self.mass_sum, self.mass[0], self.mass[n - 1], self.double_sum)
    }

    /// `X̃²` after each of the tentative extra slices, without committing them.
    pub fn evaluate_extension(&mut self, extra: &[SpectralField]) -> Vec<f64> {
        let base = self.history.len();
        self.kern_at(base + extra.len());
        let mut staged: Vec<Vec<Complex64>> = Vec::with_capacity(extra.len());
        let mut mass_sum = self.mass_sum;
        let mut double = self.double_sum;
        let mut out = Vec::with_capacity(extra.len());
        for (e, f) in extra.iter().enumerate() {
            let u = self.transform(base + e, f);
            double += self.increment(&u, &self.history, &staged);
            let m: f64 = u.iter().map(|c| c.norm_sqr()).sum();
            mass_sum += m;
            let first = self.mass.first().copied().unwrap_or(m);
            out.push(self.value_from(base + e + 1, mass_sum, first, m, double));
            staged.push(u);
        }
        out
    }
}

/// Smooth bump `θ_R(x) = θ(x/R)` with `θ = 1` on `[-1, 1]` and support in `[-2, 2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    r: f64,
}

/// `‖θ'‖_∞` of the quintic taper.
pub const THETA_LIPSCHITZ: f64 = 1.875;
/// `‖θ''‖_∞` of the quintic taper, `10/√3`.
pub const THETA_SECOND: f64 = 5.773_502_691_896_258;

impl CutoffSpec {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0) || r.is_nan() {
            return Err(Error::invalid(format!("truncation radius must be positive, got {r}")));
        }
        Ok(Self { r })
    }

    pub fn radius(&self) -> f64 {
        self.r
    }
}

/// Profile `θ`: 1 on `[0,1]`, quintic smoothstep down to 0 on `[1,2]`.
pub fn theta_profile(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let u = a - 1.0;
        1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

pub fn theta_cutoff(x: f64, spec: &CutoffSpec) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    theta_profile(x / spec.r)
}

/// `Θ = θ_R(Σ_i ‖u_i‖²_{X̃})` over the components of a path.
pub fn theta_state_cutoff(
    components: &[SpaceTimePath],
    spec: &CutoffSpec,
    norms: &[NormSpec],
) -> Result<f64> {
    if components.is_empty() || components.len() != norms.len() {
        return Err(Error::invalid("one norm spec per nonempty component is required"));
    }
    let mut arg = 0.0;
    for (p, ns) in components.iter().zip(norms) {
        if p.len() < 2 {
            continue;
        }
        let n = modified_norm(p, ns)?;
        arg += n * n;
    }
    Ok(theta_cutoff(arg, spec))
}

/// First time at which `f` reaches `r`, refined by linear interpolation, or
/// `horizon` if it never does.
pub fn stopping_time(times: &[f64], f: &[f64], r: f64, horizon: f64) -> Result<f64> {
    if times.len() != f.len() || times.is_empty() {
        return Err(Error::invalid("need matching, nonempty time and value series"));
    }
    if f[0] != 0.0 {
        return Err(Error::invalid(format!("series must start at 0, got {}", f[0])));
    }
    for j in 1..f.len() {
        if f[j] >= r {
            let (a, b) = (f[j - 1], f[j]);
            let frac = if b > a { (r - a) / (b - a) } else { 1.0 };
            let t = times[j - 1] + frac.clamp(0.0, 1.0) * (times[j] - times[j - 1]);
            return Ok(t.min(horizon));
        }
    }
    Ok(horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(n: usize) -> Vec<Complex64> {
        vec![Complex64::new(1.0, 0.0); n]
    }

    #[test]
    fn norm_spec_rejects_bad_b() {
        assert!(NormSpec::new(0.0, 0.5, DispersionSymbol::PlusXi, (0.0, 1.0)).is_err());
        assert!(NormSpec::new(0.0, 0.0, DispersionSymbol::PlusXi, (0.0, 1.0)).is_err());
        assert!(NormSpec::new(0.0, 0.3, DispersionSymbol::PlusXi, (1.0, 1.0)).is_err());
    }

    #[test]
    fn hb_of_zero_is_zero() {
        let z = vec![Complex64::new(0.0, 0.0); 17];
        assert_eq!(hb_norm_sharp_cutoff(&z, 0.1, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn hb_indicator_at_b_zero_is_sqrt_length() {
        // at b = 0 the norm is the L² norm, here √T
        for (m, t) in [(8, 1.0), (32, 0.25)] {
            let v = hb_norm_sharp_cutoff(&ones(m + 1), t / m as f64, 0.0).unwrap();
            assert!((v - t.sqrt()).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn hb_matches_series_with_sample_count() {
        // the piecewise-constant reading makes φ ≡ 1 exact at any resolution
        let a = hb_norm_sharp_cutoff(&ones(9), 1.0 / 8.0, 0.3).unwrap();
        let b = hb_norm_sharp_cutoff(&ones(65), 1.0 / 64.0, 0.3).unwrap();
        assert!((a - b).abs() < 1e-7 * a, "{a} {b}");
    }

    #[test]
    fn nonuniform_times_rejected() {
        let t = [0.0, 0.1, 0.25];
        assert!(hb_norm_sampled(&t, &ones(3), 0.3).is_err());
    }

    #[test]
    fn theta_profile_shape() {
        let c = CutoffSpec::new(4.0).unwrap();
        assert_eq!(theta_cutoff(2.0, &c), 1.0);
        assert_eq!(theta_cutoff(12.0, &c), 0.0);
        assert_eq!(theta_cutoff(-4.0, &c), 1.0);
        let mut lip: f64 = 0.0;
        let mut sec: f64 = 0.0;
        let h = 1e-4;
        let mut x = 0.0;
        while x <= 2.5 {
            let d1 = (theta_profile(x + h) - theta_profile(x - h)) / (2.0 * h);
            let d2 = (theta_profile(x + h) - 2.0 * theta_profile(x) + theta_profile(x - h)) / (h * h);
            lip = lip.max(d1.abs());
            sec = sec.max(d2.abs());
            x += 1e-4;
        }
        assert!((lip - THETA_LIPSCHITZ).abs() < 1e-6);
        assert!((sec - THETA_SECOND).abs() < 1e-3);
    }

    #[test]
    fn stopping_time_examples() {
        let times: Vec<f64> = (0..=10).map(|j| j as f64 / 10.0).collect();
        let zeros = vec![0.0; 11];
        assert_eq!(stopping_time(&times, &zeros, 1.0, 1.0).unwrap(), 1.0);
        let lin: Vec<f64> = times.clone();
        assert!((stopping_time(&times, &lin, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((stopping_time(&times, &lin, 0.55, 1.0).unwrap() - 0.55).abs() < 1e-12);
        assert!(stopping_time(&times, &[1.0; 11], 0.5, 1.0).is_err());
    }

    #[test]
    fn slobodeckij_homogeneous_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<Complex64> = (0..40)
            .map(|_| Complex64::new(rng.gen(), rng.gen()))
            .collect();
        let c = Complex64::new(-2.0, 1.5);
        let scaled: Vec<Complex64> = phi.iter().map(|p| p * c).collect();
        let a = slobodeckij_seminorm(&phi, 0.1, 0.3).unwrap();
        let b = slobodeckij_seminorm(&scaled, 0.1, 0.3).unwrap();
        assert!((b - c.norm() * a).abs() < 1e-12 * b);
        assert_eq!(slobodeckij_seminorm(&ones(10), 0.1, 0.3).unwrap(), 0.0);
        assert!(slobodeckij_seminorm(&ones(1), 0.1, 0.3).is_err());
    }

    #[test]
    fn running_norm_matches_batch() {
        let g = GridSpec::new(16, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 0.05;
        let slices: Vec<SpectralField> = (0..12)
            .map(|_| {
                let c = (0..16)
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                SpectralField::from_coeffs(g, c).unwrap()
            })
            .collect();
        let path = SpaceTimePath::new(0.0, dt, slices.clone()).unwrap();
        let mut acc = RunningModifiedNorm::new(&g, 0.5, 0.3, DispersionSymbol::MinusXi, 0.0, dt);
        for s in &slices[..5] {
            acc.push(s);
        }
        let ext = acc.evaluate_extension(&slices[5..]);
        for (j, v) in ext.iter().enumerate() {
            let n = j + 5;
            let spec = NormSpec::new(0.5, 0.3, DispersionSymbol::MinusXi, (0.0, n as f64 * dt)).unwrap();
            let batch = modified_norm(&path, &spec).unwrap();
            assert!((v - batch * batch).abs() < 1e-10 * v.max(1.0));
        }
        for s in &slices[5..] {
            acc.push(s);
        }
        assert!((acc.value() - ext.last().unwrap()).abs() < 1e-12 * acc.value());
    }
}
