//! Command-line front end: `sdkg <command> --config <path> [--jobs N] [--output <path>] [--force]`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, Command, OutputFormat, RunConfig};
use crate::dynamics::{solve_trajectory, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::estimates::{
    charge_drift_study, check_admissible, cutoff_probes, free_evolution_identity_error, indicator_scaling,
    ito_convergence_study, monitor_global_bounds, probe_bilinear, run_ensemble, EnsembleRun,
};
use crate::model::DispersionSymbol;

#[derive(Parser, Debug)]
#[command(name = "sdkg", version, about = "Stochastic Dirac-Klein-Gordon simulator and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// One trajectory, written as a time series.
    Simulate(RunArgs),
    /// Trajectories over seeds and truncation radii, with growth statistics.
    Ensemble(RunArgs),
    /// Empirical constants of a bilinear estimate.
    ProbeBilinear(RunArgs),
    /// Norm identities, indicator scaling and cutoff probes.
    CheckNorms(RunArgs),
    /// Weak Itô/Stratonovich consistency of the linear Dirac pair.
    CheckIto(RunArgs),
    /// Charge drift against the time step, and Picard contraction.
    CheckCharge(RunArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides `output_path` from the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Run outside the parameter ranges where estimates are claimed.
    #[arg(long)]
    pub force: bool,
}

impl CliCommand {
    fn split(&self) -> (Command, &RunArgs) {
        match self {
            CliCommand::Simulate(a) => (Command::Simulate, a),
            CliCommand::Ensemble(a) => (Command::Ensemble, a),
            CliCommand::ProbeBilinear(a) => (Command::ProbeBilinear, a),
            CliCommand::CheckNorms(a) => (Command::CheckNorms, a),
            CliCommand::CheckIto(a) => (Command::CheckIto, a),
            CliCommand::CheckCharge(a) => (Command::CheckCharge, a),
        }
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, args) = cli.command.split();
    match execute(command, args) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("sdkg {}: {e}", command.name());
            1
        }
    }
}

struct Outcome {
    summary: String,
    passed: bool,
}

fn execute(command: Command, args: &RunArgs) -> Result<Outcome> {
    let mut cfg = load_config(&args.config)?;
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::config(
                "command",
                format!("config is for `{}`, invoked as `{}`", c.name(), command.name()),
            ));
        }
    }
    cfg.command = Some(command);
    if let Some(o) = &args.output {
        cfg.output_path = Some(o.display().to_string());
    }
    if args.jobs == Some(0) {
        return Err(Error::invalid("--jobs must be positive"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Simulate => simulate(&cfg),
        Command::Ensemble => ensemble(&cfg, args.force),
        Command::ProbeBilinear => probe(&cfg, args.force),
        Command::CheckNorms => check_norms(&cfg),
        Command::CheckIto => check_ito(&cfg),
        Command::CheckCharge => check_charge(&cfg),
    })
}

fn output_path(cfg: &RunConfig, ext: &str) -> PathBuf {
    match &cfg.output_path {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("sdkg-{}.{ext}", cfg.command.map_or("run", |c| c.name()))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Columns of the time-series output, in file order.
pub const COLUMNS: [&str; 10] = [
    "time",
    "charge",
    "cutoff_value",
    "xt2_psi_plus",
    "xt2_psi_minus",
    "xt2_phi_plus",
    "hs_psi_plus",
    "hs_psi_minus",
    "hr_phi_plus",
    "before_tau_r",
];

#[derive(Serialize)]
struct OutputRow {
    time: f64,
    charge: f64,
    cutoff_value: f64,
    xt2_psi_plus: f64,
    xt2_psi_minus: f64,
    xt2_phi_plus: f64,
    hs_psi_plus: f64,
    hs_psi_minus: f64,
    hr_phi_plus: f64,
    before_tau_r: u8,
}

fn rows(rec: &TrajectoryRecord) -> Vec<OutputRow> {
    rec.times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let st = &rec.states[i];
            OutputRow {
                time: t,
                charge: rec.charge[i],
                cutoff_value: rec.cutoff_value[i],
                xt2_psi_plus: rec.running_norms[0][i],
                xt2_psi_minus: rec.running_norms[1][i],
                xt2_phi_plus: rec.running_norms[2][i],
                hs_psi_plus: st.psi_plus.sobolev_norm(st.s_index),
                hs_psi_minus: st.psi_minus.sobolev_norm(st.s_index),
                hr_phi_plus: st.phi_plus.sobolev_norm(st.r_index),
                before_tau_r: u8::from(t <= rec.tau_r),
            }
        })
        .collect()
}

fn write_series(path: &Path, cfg: &RunConfig, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "# sdkg {} {}", cfg.command.map_or("run", |c| c.name()), env!("CARGO_PKG_VERSION")).map_err(io)?;
    for line in cfg.to_string().lines() {
        writeln!(w, "# {line}").map_err(io)?;
    }
    writeln!(w, "# trajectory_seed = {}", rec.seed).map_err(io)?;
    let rows = rows(rec);
    match cfg.output_format {
        OutputFormat::Csv => {
            writeln!(w, "{}", COLUMNS.join(",")).map_err(io)?;
            for r in &rows {
                writeln!(
                    w,
                    "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                    r.time,
                    r.charge,
                    r.cutoff_value,
                    r.xt2_psi_plus,
                    r.xt2_psi_minus,
                    r.xt2_phi_plus,
                    r.hs_psi_plus,
                    r.hs_psi_minus,
                    r.hr_phi_plus,
                    r.before_tau_r
                )
                .map_err(io)?;
            }
        }
        OutputFormat::Jsonl => {
            for r in &rows {
                writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    passed: bool,
    config: &'a RunConfig,
    report: T,
}

fn write_report<T: Serialize>(cfg: &RunConfig, passed: bool, report: T) -> Result<PathBuf> {
    let path = output_path(cfg, "json");
    let doc = Report {
        command: cfg.command.map_or("run", |c| c.name()),
        version: env!("CARGO_PKG_VERSION"),
        passed,
        config: cfg,
        report,
    };
    let mut w = create(&path)?;
    let text = serde_json::to_string_pretty(&doc)?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let solver = cfg.solver_config()?;
    let initial = cfg.initial_state()?;
    let rec = solve_trajectory(&solver, &initial)?;
    let ext = match cfg.output_format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    };
    let path = output_path(cfg, ext);
    write_series(&path, cfg, &rec)?;
    Ok(Outcome {
        summary: format!(
            "simulate: charge_drift={:e} tau_R={} iterations={} output={}",
            rec.relative_charge_drift(),
            rec.tau_r,
            rec.total_iterations(),
            path.display()
        ),
        passed: true,
    })
}

#[derive(Serialize)]
struct TrajectorySummary {
    truncation: f64,
    seed: u64,
    charge_drift: f64,
    tau_r: f64,
    iterations: usize,
}

fn ensemble(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let initial = cfg.initial_state()?;
    let mut runs = Vec::new();
    let mut trajectories = Vec::new();
    for r in cfg.ladder() {
        let mut c = cfg.clone();
        c.truncation = r;
        let solver = c.solver_config()?;
        let (records, failures) = run_ensemble(&solver, &initial, cfg.n_trajectories, cfg.base_seed)?;
        trajectories.extend(records.iter().map(|rec| TrajectorySummary {
            truncation: r,
            seed: rec.seed,
            charge_drift: rec.relative_charge_drift(),
            tau_r: rec.tau_r,
            iterations: rec.total_iterations(),
        }));
        runs.push(EnsembleRun {
            truncation: r,
            records,
            failures,
        });
    }
    let stats = match monitor_global_bounds(&runs, cfg.s, cfg.r, cfg.b) {
        Ok(s) => Some(s),
        Err(_) if force => None,
        Err(e) => return Err(e),
    };
    let failures: usize = runs.iter().map(|r| r.failures).sum();
    #[derive(Serialize)]
    struct Body<T> {
        stats: Option<T>,
        trajectories: Vec<TrajectorySummary>,
    }
    let slope = stats.as_ref().map(|s| s.phi_trend_slope);
    let path = write_report(cfg, failures == 0, Body { stats, trajectories })?;
    Ok(Outcome {
        summary: format!(
            "ensemble: radii={} trajectories={} failures={failures} phi_trend_slope={} output={}",
            runs.len(),
            runs.iter().map(|r| r.records.len()).sum::<usize>(),
            slope.map_or("n/a".into(), |s| format!("{s:.4}")),
            path.display()
        ),
        passed: failures == 0,
    })
}

fn probe(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let report = probe_bilinear(cfg.estimate, cfg.s, cfg.r, cfg.b, cfg.n_trials, cfg.seed, force)?;
    let admissible = check_admissible(cfg.estimate, cfg.s, cfg.r, cfg.b).is_ok();
    let summary = format!(
        "probe-bilinear: estimate={} max_ratio={:.6} mesh_change={:.3e}{}",
        report.estimate_id,
        report.max_ratio,
        report.relative_mesh_change,
        if admissible { "" } else { " (forced)" }
    );
    let path = write_report(cfg, true, &report)?;
    Ok(Outcome {
        summary: format!("{summary} output={}", path.display()),
        passed: true,
    })
}

const IDENTITY_TOL: f64 = 1e-10;
const INDICATOR_BRACKET: f64 = 3.0;
const CUTOFF_MESH_TOL: f64 = 0.15;

fn check_norms(cfg: &RunConfig) -> Result<Outcome> {
    let f = {
        let mut c = cfg.clone();
        c.initial = crate::config::InitialSpec::BandLimited {
            max_mode: 8.min(cfg.n_modes as i64 / 2 - 1),
            amp: 1.0,
            seed: cfg.seed,
        };
        c.initial_state()?.psi_plus
    };
    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut identity = Vec::new();
    for h in [DispersionSymbol::PlusXi, DispersionSymbol::MinusXi, DispersionSymbol::PlusBracket] {
        identity.push(free_evolution_identity_error(&f, h, cfg.s, cfg.b, cfg.horizon, n_steps)?);
    }
    let exps: Vec<i32> = (2..=8).collect();
    let indicator = indicator_scaling(cfg.b, &exps, 64)?;
    let lo = indicator.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = indicator.iter().copied().fold(0.0, f64::max);
    let cutoff = cutoff_probes(cfg.cutoff_paths, cfg.b, cfg.horizon, &cfg.cutoff_radii, &[256, 512], cfg.seed)?;
    let id_max = identity.iter().copied().fold(0.0, f64::max);
    let cut_ok = cutoff
        .bound1
        .iter()
        .chain(&cutoff.bound2)
        .all(|v| v.is_finite())
        && cutoff.relative_change.iter().all(|c| *c < CUTOFF_MESH_TOL);
    let passed = id_max < IDENTITY_TOL && hi / lo < INDICATOR_BRACKET && cut_ok;
    #[derive(Serialize)]
    struct Body<'a> {
        free_evolution_relative_error: Vec<f64>,
        indicator_exponents: Vec<i32>,
        indicator_ratios: Vec<f64>,
        indicator_spread: f64,
        cutoff: &'a crate::estimates::CutoffProbeReport,
    }
    let path = write_report(
        cfg,
        passed,
        Body {
            free_evolution_relative_error: identity,
            indicator_exponents: exps,
            indicator_ratios: indicator,
            indicator_spread: hi / lo,
            cutoff: &cutoff,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "check-norms: {} identity_error={id_max:.2e} indicator_spread={:.3} cutoff_mesh_change={:.3}/{:.3} output={}",
            if passed { "PASS" } else { "FAIL" },
            hi / lo,
            cutoff.relative_change[0],
            cutoff.relative_change[1],
            path.display()
        ),
        passed,
    })
}

/// Discrepancies below this count as exact agreement.
const ITO_ZERO: f64 = 1e-12;
const ITO_MIN_ORDER: f64 = 0.5;
/// A fault run whose fitted order stays below this has failed to converge.
const ITO_FAULT_ORDER: f64 = 0.25;

fn check_ito(cfg: &RunConfig) -> Result<Outcome> {
    let solver = cfg.solver_config()?;
    let initial = cfg.initial_state()?;
    let study = ito_convergence_study(&solver, &initial, cfg.n_trajectories, cfg.base_seed, cfg.halvings)?;
    let exact = study.discrepancies.iter().all(|d| *d <= ITO_ZERO);
    let mut passed = exact || study.order >= ITO_MIN_ORDER;
    let fault = if cfg.fault_check {
        let mut f = solver.clone();
        f.ito_drift = false;
        let fs = ito_convergence_study(&f, &initial, cfg.n_trajectories, cfg.base_seed, cfg.halvings)?;
        passed &= exact || fs.order < ITO_FAULT_ORDER;
        Some(fs)
    } else {
        None
    };
    let fault_order = fault.as_ref().map(|f| f.order);
    #[derive(Serialize)]
    struct Body<T> {
        study: T,
        fault_study: Option<T>,
    }
    let path = write_report(cfg, passed, Body { study: &study, fault_study: fault.as_ref() })?;
    Ok(Outcome {
        summary: format!(
            "check-ito: {} discrepancy={:e} order={:.3}{} output={}",
            if passed { "PASS" } else { "FAIL" },
            study.discrepancies[0],
            study.order,
            fault_order.map_or(String::new(), |o| format!(" fault_order={o:.3}")),
            path.display()
        ),
        passed,
    })
}

const CHARGE_NOISE_FREE_TOL: f64 = 1e-9;
const CHARGE_MIN_ORDER: f64 = 0.5;
const PICARD_MAX_RATIO: f64 = 0.9;
const PICARD_MEDIAN_RATIO: f64 = 0.5;

fn check_charge(cfg: &RunConfig) -> Result<Outcome> {
    let solver = cfg.solver_config()?;
    let initial = cfg.initial_state()?;
    let study = charge_drift_study(&solver, &initial, cfg.n_trajectories, cfg.base_seed, cfg.halvings)?;
    let quiet = study.noise_free_drift.iter().all(|d| *d < CHARGE_NOISE_FREE_TOL);
    let converges = !solver.noise_active() || study.order >= CHARGE_MIN_ORDER;
    let contracts = study.picard_max_ratio < PICARD_MAX_RATIO && study.picard_median_ratio < PICARD_MEDIAN_RATIO;
    let passed = quiet && converges && contracts;
    let path = write_report(cfg, passed, &study)?;
    Ok(Outcome {
        summary: format!(
            "check-charge: {} drift={:?} order={:.3} noise_free_max={:.2e} picard_max={:.3} picard_median={:.3} output={}",
            if passed { "PASS" } else { "FAIL" },
            study.rms_drift,
            study.order,
            study.noise_free_drift.iter().copied().fold(0.0, f64::max),
            study.picard_max_ratio,
            study.picard_median_ratio,
            path.display()
        ),
        passed,
    })
}
