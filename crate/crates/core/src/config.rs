//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Reals accept a `pi`
//! factor (`32pi`, `2*pi`, `pi`). Lists are comma separated. Unknown and
//! repeated keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::SolverConfig;
use crate::error::{Error, Result};
use crate::estimates::EstimateId;
use crate::grid::{forward_transform, GridSpec, SpectralField};
use crate::model::{split, SplitState};
use crate::noise::NoiseKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Ensemble,
    ProbeBilinear,
    CheckNorms,
    CheckIto,
    CheckCharge,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Ensemble,
        Command::ProbeBilinear,
        Command::CheckNorms,
        Command::CheckIto,
        Command::CheckCharge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::ProbeBilinear => "probe-bilinear",
            Command::CheckNorms => "check-norms",
            Command::CheckIto => "check-ito",
            Command::CheckCharge => "check-charge",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelSpec {
    Zero,
    Gaussian { width: f64, amp: f64 },
    Sinc { cutoff: f64, amp: f64 },
    File { path: String },
}

impl KernelSpec {
    pub fn build(&self, grid: GridSpec) -> Result<NoiseKernel> {
        match self {
            KernelSpec::Zero => Ok(NoiseKernel::zero(grid)),
            KernelSpec::Gaussian { width, amp } => NoiseKernel::gaussian(grid, *width, *amp),
            KernelSpec::Sinc { cutoff, amp } => NoiseKernel::sinc(grid, *cutoff, *amp),
            KernelSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                NoiseKernel::from_csv(grid, &text, 0.0)
            }
        }
    }
}

/// Initial data presets. `ψ₊`, `ψ₋` and `φ` share the profile; `φ̇ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialSpec {
    Zero,
    /// `A e^{-(x-c)²/(2w²)}`, shifted by `e^{±iξ₀x}` in `ψ±`.
    GaussianWavepacket { center: Option<f64>, width: f64, shift: f64, amp: f64 },
    SingleMode { mode: i64, amp: f64 },
    /// Random coefficients on modes `|k| ≤ max_mode`, decaying like `⟨k⟩⁻¹`.
    BandLimited { max_mode: i64, amp: f64, seed: u64 },
    /// Whitespace separated rows `re(ψ₊) im(ψ₊) re(ψ₋) im(ψ₋) φ φ̇` per grid point.
    File { path: String },
}

impl InitialSpec {
    pub fn build(&self, grid: GridSpec, dirac_mass: f64, s: f64, r: f64) -> Result<SplitState> {
        let zero = SpectralField::zeros(grid);
        let (pp, pm, phi, dphi) = match self {
            InitialSpec::Zero => return Ok(SplitState::zeros(grid, dirac_mass, s, r)),
            InitialSpec::GaussianWavepacket { center, width, shift, amp } => {
                let c = center.unwrap_or(0.5 * grid.length());
                let env: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&x| amp * (-(x - c).powi(2) / (2.0 * width * width)).exp())
                    .collect();
                let wave = |sign: f64| -> Result<SpectralField> {
                    let samples: Vec<Complex64> = grid
                        .points()
                        .iter()
                        .zip(&env)
                        .map(|(&x, &e)| Complex64::from_polar(e, sign * shift * x))
                        .collect();
                    forward_transform(&samples, grid)
                };
                (wave(1.0)?, wave(-1.0)?, SpectralField::from_real_samples(grid, &env)?, zero)
            }
            InitialSpec::SingleMode { mode, amp } => {
                let v = Complex64::new(amp * grid.length(), 0.0);
                let f = SpectralField::single_mode(grid, *mode, v)?;
                let real = f.to_physical().iter().map(|c| c.re).collect::<Vec<_>>();
                (f.clone(), f, SpectralField::from_real_samples(grid, &real)?, zero)
            }
            InitialSpec::BandLimited { max_mode, amp, seed } => band_limited(grid, *max_mode, *amp, *seed)?,
            InitialSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                initial_from_text(grid, &text)?
            }
        };
        let mut st = split((pp, pm), &phi, &dphi, dirac_mass)?;
        st.s_index = s;
        st.r_index = r;
        Ok(st)
    }
}

fn band_limited(
    grid: GridSpec,
    max_mode: i64,
    amp: f64,
    seed: u64,
) -> Result<(SpectralField, SpectralField, SpectralField, SpectralField)> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    if max_mode < 0 || grid.index_of_mode(max_mode).is_none() {
        return Err(Error::invalid(format!("max_mode {max_mode} is outside the grid")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |real: bool| -> Result<SpectralField> {
        let mut f = SpectralField::zeros(grid);
        for k in -max_mode..=max_mode {
            let idx = grid.index_of_mode(k).expect("checked range");
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let w = amp * grid.length() / (1.0 + (k * k) as f64).sqrt();
            f.coeffs_mut()[idx] = Complex64::new(re, im) * w;
        }
        if real {
            let samples: Vec<f64> = f.to_physical().iter().map(|c| c.re).collect();
            f = SpectralField::from_real_samples(grid, &samples)?;
        }
        Ok(f)
    };
    let pp = draw(false)?;
    let pm = draw(false)?;
    let phi = draw(true)?;
    let dphi = draw(true)?;
    Ok((pp, pm, phi, dphi))
}

fn initial_from_text(grid: GridSpec, text: &str) -> Result<(SpectralField, SpectralField, SpectralField, SpectralField)> {
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("initial data line {}: {e}", ln + 1)))?;
        if vals.len() != 6 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("initial data line {}: expected 6 finite numbers", ln + 1)));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    if cols[0].len() != grid.n_modes() {
        return Err(Error::GridMismatch(format!(
            "initial data has {} rows, grid has {} points",
            cols[0].len(),
            grid.n_modes()
        )));
    }
    let cplx = |re: &[f64], im: &[f64]| -> Vec<Complex64> { re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect() };
    Ok((
        forward_transform(&cplx(&cols[0], &cols[1]), grid)?,
        forward_transform(&cplx(&cols[2], &cols[3]), grid)?,
        SpectralField::from_real_samples(grid, &cols[4])?,
        SpectralField::from_real_samples(grid, &cols[5])?,
    ))
}

/// Everything a run needs; see [`parse_config`] for the keys.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub n_modes: usize,
    pub length: f64,
    pub dt: f64,
    pub horizon: f64,
    pub delta: f64,
    pub truncation: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub kernel1: KernelSpec,
    pub kernel2: KernelSpec,
    pub n_basis: Option<usize>,
    pub dirac_mass: f64,
    pub kg_mass: f64,
    pub s: f64,
    pub r: f64,
    pub b: f64,
    pub mu: Option<f64>,
    pub seed: u64,
    pub nonlinear: bool,
    pub ito_drift: bool,
    pub initial: InitialSpec,
    pub output_path: Option<String>,
    pub output_format: OutputFormat,
    pub n_trajectories: usize,
    pub base_seed: u64,
    pub truncation_ladder: Vec<f64>,
    pub estimate: EstimateId,
    pub n_trials: usize,
    pub halvings: usize,
    pub fault_check: bool,
    pub cutoff_paths: usize,
    pub cutoff_radii: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            n_modes: 256,
            length: 32.0 * PI,
            dt: 1.0 / 256.0,
            horizon: 1.0,
            delta: 1.0 / 32.0,
            truncation: 16.0,
            picard_tol: 1e-10,
            picard_max_iters: 50,
            kernel1: KernelSpec::Zero,
            kernel2: KernelSpec::Zero,
            n_basis: None,
            dirac_mass: 1.0,
            kg_mass: 1.0,
            s: 0.0,
            r: 1.0 / 3.0,
            b: 0.3,
            mu: None,
            seed: 0,
            nonlinear: true,
            ito_drift: true,
            initial: InitialSpec::GaussianWavepacket {
                center: None,
                width: 2.0,
                shift: 1.0,
                amp: 1.0,
            },
            output_path: None,
            output_format: OutputFormat::Csv,
            n_trajectories: 8,
            base_seed: 0,
            truncation_ladder: Vec::new(),
            estimate: EstimateId::NBound,
            n_trials: 200,
            halvings: 2,
            fault_check: false,
            cutoff_paths: 100,
            cutoff_radii: vec![1.0, 4.0, 16.0, 64.0],
        }
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

fn parse_real(field: &str, v: &str) -> Result<f64> {
    let bad = || cfg_err(field, format!("`{v}` is not a real number"));
    let t = v.trim();
    let x = if let Some(head) = t.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*').trim();
        let f = if head.is_empty() { 1.0 } else { head.parse::<f64>().map_err(|_| bad())? };
        f * PI
    } else {
        t.parse::<f64>().map_err(|_| bad())?
    };
    if !x.is_finite() {
        return Err(cfg_err(field, format!("`{v}` is not finite")));
    }
    Ok(x)
}

fn parse_uint<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| cfg_err(field, format!("`{v}` is not a nonnegative integer")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(field, format!("`{v}` is not true or false"))),
    }
}

fn parse_list(field: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_real(field, x)).collect()
}

fn parse_opt_real(field: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_real(field, v).map(Some)
    }
}

const KEYS: &[&str] = &[
    "command",
    "n_modes",
    "length",
    "dt",
    "horizon",
    "delta",
    "truncation",
    "picard_tol",
    "picard_max_iters",
    "kernel1",
    "kernel1_width",
    "kernel1_amp",
    "kernel1_cutoff",
    "kernel1_file",
    "kernel2",
    "kernel2_width",
    "kernel2_amp",
    "kernel2_cutoff",
    "kernel2_file",
    "n_basis",
    "dirac_mass",
    "kg_mass",
    "s",
    "r",
    "b",
    "mu",
    "seed",
    "nonlinear",
    "ito_drift",
    "initial",
    "initial_center",
    "initial_width",
    "initial_shift",
    "initial_amp",
    "initial_mode",
    "initial_max_mode",
    "initial_seed",
    "initial_file",
    "output_path",
    "output_format",
    "n_trajectories",
    "base_seed",
    "truncation_ladder",
    "estimate",
    "n_trials",
    "halvings",
    "fault_check",
    "cutoff_paths",
    "cutoff_radii",
];

fn kernel_from(map: &mut BTreeMap<String, String>, prefix: &str) -> Result<KernelSpec> {
    let kind = map.remove(prefix);
    let width = map.remove(&format!("{prefix}_width"));
    let amp = map.remove(&format!("{prefix}_amp"));
    let cutoff = map.remove(&format!("{prefix}_cutoff"));
    let file = map.remove(&format!("{prefix}_file"));
    let real = |key: &str, v: Option<String>, default: f64| -> Result<f64> {
        v.map_or(Ok(default), |v| parse_real(&format!("{prefix}_{key}"), &v))
    };
    let stray = |present: bool, key: &str, kind: &str| -> Result<()> {
        if present {
            Err(cfg_err(&format!("{prefix}_{key}"), format!("not used by a `{kind}` kernel")))
        } else {
            Ok(())
        }
    };
    Ok(match kind.as_deref().unwrap_or("zero") {
        "zero" => {
            stray(width.is_some(), "width", "zero")?;
            stray(amp.is_some(), "amp", "zero")?;
            stray(cutoff.is_some(), "cutoff", "zero")?;
            stray(file.is_some(), "file", "zero")?;
            KernelSpec::Zero
        }
        "gaussian" => {
            stray(cutoff.is_some(), "cutoff", "gaussian")?;
            stray(file.is_some(), "file", "gaussian")?;
            KernelSpec::Gaussian {
                width: real("width", width, 2.0)?,
                amp: real("amp", amp, 0.5)?,
            }
        }
        "sinc" => {
            stray(width.is_some(), "width", "sinc")?;
            stray(file.is_some(), "file", "sinc")?;
            KernelSpec::Sinc {
                cutoff: real("cutoff", cutoff, 4.0)?,
                amp: real("amp", amp, 0.5)?,
            }
        }
        "file" => {
            stray(width.is_some(), "width", "file")?;
            stray(amp.is_some(), "amp", "file")?;
            stray(cutoff.is_some(), "cutoff", "file")?;
            KernelSpec::File {
                path: file.ok_or_else(|| cfg_err(&format!("{prefix}_file"), "required for a file kernel"))?,
            }
        }
        other => {
            return Err(cfg_err(
                prefix,
                format!("unknown kernel `{other}` (expected zero, gaussian, sinc or file)"),
            ))
        }
    })
}

fn initial_from(map: &mut BTreeMap<String, String>) -> Result<InitialSpec> {
    let kind = map.remove("initial");
    let mut take = |k: &str| map.remove(k).map(|v| (k.to_string(), v));
    let center = take("initial_center");
    let width = take("initial_width");
    let shift = take("initial_shift");
    let amp = take("initial_amp");
    let mode = take("initial_mode");
    let max_mode = take("initial_max_mode");
    let seed = take("initial_seed");
    let file = take("initial_file");
    let kind = kind.unwrap_or_else(|| "gaussian-wavepacket".into());
    let allowed: &[&str] = match kind.as_str() {
        "zero" => &[],
        "gaussian-wavepacket" => &["initial_center", "initial_width", "initial_shift", "initial_amp"],
        "single-mode" => &["initial_mode", "initial_amp"],
        "band-limited" => &["initial_max_mode", "initial_amp", "initial_seed"],
        "file" => &["initial_file"],
        other => {
            return Err(cfg_err(
                "initial",
                format!("unknown preset `{other}` (expected zero, gaussian-wavepacket, single-mode, band-limited or file)"),
            ))
        }
    };
    for (k, _) in [&center, &width, &shift, &amp, &mode, &max_mode, &seed, &file].into_iter().flatten() {
        if !allowed.contains(&k.as_str()) {
            return Err(cfg_err(k, format!("not used by the `{kind}` preset")));
        }
    }
    let real = |v: &Option<(String, String)>, d: f64| v.as_ref().map_or(Ok(d), |(k, v)| parse_real(k, v));
    Ok(match kind.as_str() {
        "zero" => InitialSpec::Zero,
        "gaussian-wavepacket" => InitialSpec::GaussianWavepacket {
            center: center.as_ref().map(|(k, v)| parse_real(k, v)).transpose()?,
            width: real(&width, 2.0)?,
            shift: real(&shift, 1.0)?,
            amp: real(&amp, 1.0)?,
        },
        "single-mode" => InitialSpec::SingleMode {
            mode: mode.as_ref().map_or(Ok(1), |(k, v)| {
                v.parse::<i64>().map_err(|_| cfg_err(k, format!("`{v}` is not an integer")))
            })?,
            amp: real(&amp, 1.0)?,
        },
        "band-limited" => InitialSpec::BandLimited {
            max_mode: max_mode.as_ref().map_or(Ok(8), |(k, v)| parse_uint::<i64>(k, v))?,
            amp: real(&amp, 0.1)?,
            seed: seed.as_ref().map_or(Ok(0), |(k, v)| parse_uint(k, v))?,
        },
        _ => InitialSpec::File {
            path: file.map(|(_, v)| v).ok_or_else(|| cfg_err("initial_file", "required for the file preset"))?,
        },
    })
}

/// Parse and validate a configuration document, applying defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err("line", format!("line {}: expected `key = value`", ln + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(cfg_err(k, "unknown key"));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(cfg_err(k, "key given more than once"));
        }
    }
    let mut c = RunConfig::default();
    c.kernel1 = kernel_from(&mut map, "kernel1")?;
    c.kernel2 = kernel_from(&mut map, "kernel2")?;
    c.initial = initial_from(&mut map)?;
    for (k, v) in &map {
        let v = v.as_str();
        match k.as_str() {
            "command" => c.command = Some(v.parse().map_err(|e: String| cfg_err(k, e))?),
            "n_modes" => c.n_modes = parse_uint(k, v)?,
            "length" => c.length = parse_real(k, v)?,
            "dt" => c.dt = parse_real(k, v)?,
            "horizon" => c.horizon = parse_real(k, v)?,
            "delta" => c.delta = parse_real(k, v)?,
            "truncation" => c.truncation = parse_real(k, v)?,
            "picard_tol" => c.picard_tol = parse_real(k, v)?,
            "picard_max_iters" => c.picard_max_iters = parse_uint(k, v)?,
            "n_basis" => c.n_basis = Some(parse_uint(k, v)?),
            "dirac_mass" => c.dirac_mass = parse_real(k, v)?,
            "kg_mass" => c.kg_mass = parse_real(k, v)?,
            "s" => c.s = parse_real(k, v)?,
            "r" => c.r = parse_real(k, v)?,
            "b" => c.b = parse_real(k, v)?,
            "mu" => c.mu = parse_opt_real(k, v)?,
            "seed" => c.seed = parse_uint(k, v)?,
            "nonlinear" => c.nonlinear = parse_bool(k, v)?,
            "ito_drift" => c.ito_drift = parse_bool(k, v)?,
            "output_path" => c.output_path = if v.is_empty() { None } else { Some(v.to_string()) },
            "output_format" => {
                c.output_format = match v {
                    "csv" => OutputFormat::Csv,
                    "jsonl" => OutputFormat::Jsonl,
                    _ => return Err(cfg_err(k, format!("`{v}` is not csv or jsonl"))),
                }
            }
            "n_trajectories" => c.n_trajectories = parse_uint(k, v)?,
            "base_seed" => c.base_seed = parse_uint(k, v)?,
            "truncation_ladder" => c.truncation_ladder = parse_list(k, v)?,
            "estimate" => c.estimate = v.parse().map_err(|e: Error| cfg_err(k, e.to_string()))?,
            "n_trials" => c.n_trials = parse_uint(k, v)?,
            "halvings" => c.halvings = parse_uint(k, v)?,
            "fault_check" => c.fault_check = parse_bool(k, v)?,
            "cutoff_paths" => c.cutoff_paths = parse_uint(k, v)?,
            "cutoff_radii" => c.cutoff_radii = parse_list(k, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

fn multiple(a: f64, b: f64) -> bool {
    let q = a / b;
    let r = q.round();
    r >= 1.0 && (q - r).abs() <= 1e-9 * r
}

impl RunConfig {
    /// Field-level checks; solver-level consistency is checked again when
    /// the solver configuration is built.
    pub fn validate(&self) -> Result<()> {
        if self.n_modes < 8 || self.n_modes % 2 != 0 {
            return Err(cfg_err("n_modes", "must be an even integer >= 8"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(cfg_err(name, format!("must be positive, got {v}")))
            }
        };
        positive("length", self.length)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        positive("delta", self.delta)?;
        positive("truncation", self.truncation)?;
        positive("picard_tol", self.picard_tol)?;
        if self.picard_max_iters == 0 {
            return Err(cfg_err("picard_max_iters", "must be positive"));
        }
        if !(self.b > 0.0 && self.b < 0.5) {
            return Err(cfg_err("b", format!("b must lie in (0, 1/2), got {}", self.b)));
        }
        if self.kg_mass != 1.0 {
            return Err(cfg_err("kg_mass", format!("the Klein-Gordon mass is fixed to 1, got {}", self.kg_mass)));
        }
        if !(self.dirac_mass >= 0.0) {
            return Err(cfg_err("dirac_mass", "must be nonnegative"));
        }
        if !multiple(self.delta, self.dt) {
            return Err(cfg_err(
                "delta",
                format!("delta = {} must be an integer multiple of dt = {}", self.delta, self.dt),
            ));
        }
        if !multiple(self.horizon, self.delta) {
            return Err(cfg_err(
                "horizon",
                format!("horizon = {} must be an integer multiple of delta = {}", self.horizon, self.delta),
            ));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 1.0) {
                return Err(cfg_err("mu", format!("must be >= 1 or none, got {mu}")));
            }
        }
        if let Some(k) = self.n_basis {
            if k == 0 || k > self.n_modes {
                return Err(cfg_err("n_basis", format!("must lie in 1..={}", self.n_modes)));
            }
        }
        for (name, k) in [("kernel1", &self.kernel1), ("kernel2", &self.kernel2)] {
            match k {
                KernelSpec::Gaussian { width, amp } => {
                    positive(&format!("{name}_width"), *width)?;
                    if !(*amp >= 0.0) {
                        return Err(cfg_err(&format!("{name}_amp"), "must be nonnegative"));
                    }
                }
                KernelSpec::Sinc { cutoff, amp } => {
                    positive(&format!("{name}_cutoff"), *cutoff)?;
                    if !(*amp >= 0.0) {
                        return Err(cfg_err(&format!("{name}_amp"), "must be nonnegative"));
                    }
                }
                _ => {}
            }
        }
        if self.truncation_ladder.iter().any(|r| !(*r > 0.0)) {
            return Err(cfg_err("truncation_ladder", "radii must be positive"));
        }
        if self.cutoff_radii.is_empty() || self.cutoff_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(cfg_err("cutoff_radii", "need at least one positive radius"));
        }
        if let InitialSpec::GaussianWavepacket { width, .. } = &self.initial {
            positive("initial_width", *width)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n_modes, self.length)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let grid = self.grid()?;
        let mut c = SolverConfig::new(grid);
        c.dt = self.dt;
        c.horizon = self.horizon;
        c.delta = self.delta;
        c.truncation = self.truncation;
        c.picard_tol = self.picard_tol;
        c.picard_max_iters = self.picard_max_iters;
        c.kernel1 = self.kernel1.build(grid)?;
        c.kernel2 = self.kernel2.build(grid)?;
        c.n_basis = self.n_basis.unwrap_or(self.n_modes);
        c.dirac_mass = self.dirac_mass;
        c.s = self.s;
        c.r = self.r;
        c.b = self.b;
        c.mu = self.mu;
        c.seed = self.seed;
        c.nonlinear = self.nonlinear;
        c.ito_drift = self.ito_drift;
        c.validate()?;
        Ok(c)
    }

    pub fn initial_state(&self) -> Result<SplitState> {
        self.initial.build(self.grid()?, self.dirac_mass, self.s, self.r)
    }

    /// Radii of an ensemble run; the single `truncation` when no ladder is set.
    pub fn ladder(&self) -> Vec<f64> {
        if self.truncation_ladder.is_empty() {
            vec![self.truncation]
        } else {
            self.truncation_ladder.clone()
        }
    }
}

fn real_str(x: f64) -> String {
    format!("{x:?}")
}

fn list_str(v: &[f64]) -> String {
    v.iter().map(|x| real_str(*x)).collect::<Vec<_>>().join(",")
}

/// The canonical document: every key, in a fixed order, that parses back
/// to the same configuration.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        if let Some(c) = self.command {
            kv("command", c.name().into());
        }
        kv("n_modes", self.n_modes.to_string());
        kv("length", real_str(self.length));
        kv("dt", real_str(self.dt));
        kv("horizon", real_str(self.horizon));
        kv("delta", real_str(self.delta));
        kv("truncation", real_str(self.truncation));
        kv("picard_tol", real_str(self.picard_tol));
        kv("picard_max_iters", self.picard_max_iters.to_string());
        for (name, k) in [("kernel1", &self.kernel1), ("kernel2", &self.kernel2)] {
            match k {
                KernelSpec::Zero => kv(name, "zero".into()),
                KernelSpec::Gaussian { width, amp } => {
                    kv(name, "gaussian".into());
                    kv(&format!("{name}_width"), real_str(*width));
                    kv(&format!("{name}_amp"), real_str(*amp));
                }
                KernelSpec::Sinc { cutoff, amp } => {
                    kv(name, "sinc".into());
                    kv(&format!("{name}_cutoff"), real_str(*cutoff));
                    kv(&format!("{name}_amp"), real_str(*amp));
                }
                KernelSpec::File { path } => {
                    kv(name, "file".into());
                    kv(&format!("{name}_file"), path.clone());
                }
            }
        }
        if let Some(k) = self.n_basis {
            kv("n_basis", k.to_string());
        }
        kv("dirac_mass", real_str(self.dirac_mass));
        kv("kg_mass", real_str(self.kg_mass));
        kv("s", real_str(self.s));
        kv("r", real_str(self.r));
        kv("b", real_str(self.b));
        kv("mu", self.mu.map_or("none".into(), real_str));
        kv("seed", self.seed.to_string());
        kv("nonlinear", self.nonlinear.to_string());
        kv("ito_drift", self.ito_drift.to_string());
        match &self.initial {
            InitialSpec::Zero => kv("initial", "zero".into()),
            InitialSpec::GaussianWavepacket { center, width, shift, amp } => {
                kv("initial", "gaussian-wavepacket".into());
                if let Some(c) = center {
                    kv("initial_center", real_str(*c));
                }
                kv("initial_width", real_str(*width));
                kv("initial_shift", real_str(*shift));
                kv("initial_amp", real_str(*amp));
            }
            InitialSpec::SingleMode { mode, amp } => {
                kv("initial", "single-mode".into());
                kv("initial_mode", mode.to_string());
                kv("initial_amp", real_str(*amp));
            }
            InitialSpec::BandLimited { max_mode, amp, seed } => {
                kv("initial", "band-limited".into());
                kv("initial_max_mode", max_mode.to_string());
                kv("initial_amp", real_str(*amp));
                kv("initial_seed", seed.to_string());
            }
            InitialSpec::File { path } => {
                kv("initial", "file".into());
                kv("initial_file", path.clone());
            }
        }
        if let Some(p) = &self.output_path {
            kv("output_path", p.clone());
        }
        kv(
            "output_format",
            match self.output_format {
                OutputFormat::Csv => "csv".into(),
                OutputFormat::Jsonl => "jsonl".into(),
            },
        );
        kv("n_trajectories", self.n_trajectories.to_string());
        kv("base_seed", self.base_seed.to_string());
        kv("truncation_ladder", list_str(&self.truncation_ladder));
        kv("estimate", self.estimate.to_string());
        kv("n_trials", self.n_trials.to_string());
        kv("halvings", self.halvings.to_string());
        kv("fault_check", self.fault_check.to_string());
        kv("cutoff_paths", self.cutoff_paths.to_string());
        kv("cutoff_radii", list_str(&self.cutoff_radii));
        f.write_str(&o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.n_modes, 256);
        assert!((c.length - 32.0 * PI).abs() < 1e-12);
        assert_eq!((c.b, c.r, c.s), (0.3, 1.0 / 3.0, 0.0));
        assert_eq!(parse_config(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn rejections_name_fields() {
        let e = parse_config("b = 0.6").unwrap_err();
        assert!(e.to_string().contains("b must lie in (0, 1/2)"));
        assert_eq!(field_of(e), "b");
        let e = parse_config("dt = 0.01\ndelta = 0.015").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("delta") && msg.contains("dt"), "{msg}");
        assert_eq!(field_of(parse_config("kg_mass = 2").unwrap_err()), "kg_mass");
        assert_eq!(field_of(parse_config("colour = red").unwrap_err()), "colour");
        assert_eq!(field_of(parse_config("s = 1\ns = 2").unwrap_err()), "s");
        assert_eq!(field_of(parse_config("kernel1 = zero\nkernel1_amp = 1").unwrap_err()), "kernel1_amp");
        assert_eq!(field_of(parse_config("initial_mode = 3").unwrap_err()), "initial_mode");
    }

    #[test]
    fn pi_and_lists() {
        let c = parse_config("length = 2*pi\ntruncation_ladder = 4, 16,64\nmu = 8").unwrap();
        assert!((c.length - 2.0 * PI).abs() < 1e-15);
        assert_eq!(c.truncation_ladder, vec![4.0, 16.0, 64.0]);
        assert_eq!(c.mu, Some(8.0));
        assert!(parse_config("length = pi").is_ok());
    }

    #[test]
    fn presets_build() {
        for extra in ["initial = zero", "initial = single-mode\ninitial_mode = 3", "initial = band-limited", ""] {
            let c = parse_config(&format!("n_modes = 64\n{extra}")).unwrap();
            let st = c.initial_state().unwrap();
            st.validate().unwrap();
            c.solver_config().unwrap();
        }
    }
}
