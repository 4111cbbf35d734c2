//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::process::Command as Proc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdkg::bourgain::stopping_time;
use sdkg::config::{parse_config, RunConfig};
use sdkg::dynamics::{solve_trajectory, TrajectoryRecord};
use sdkg::estimates::{
    charge_drift_study, cutoff_probes, free_evolution_identity_error, indicator_scaling, ito_convergence_study,
    probe_bilinear, ChargeStudy, EstimateId,
};
use sdkg::model::DispersionSymbol;
use sdkg::noise::{hs_norm_multiplication, ito_correction, NoiseBasis, NoiseKernel};
use sdkg::{GridSpec, SpectralField};

struct Outcome {
    passed: bool,
    detail: String,
}

fn ok(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_field(g: GridSpec, rng: &mut ChaCha8Rng, kmax: i64) -> SpectralField {
    let mut f = SpectralField::zeros(g);
    for k in -kmax..=kmax {
        let i = g.index_of_mode(k).unwrap();
        let w = g.length() / (1.0 + (k * k) as f64);
        f.coeffs_mut()[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
    }
    f
}

fn random_kernel(g: GridSpec, rng: &mut ChaCha8Rng) -> NoiseKernel {
    let samples: Vec<f64> = (0..g.n_modes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    NoiseKernel::from_samples(g, &samples, 0.0).unwrap()
}

fn c1() -> Outcome {
    let g = GridSpec::new(64, 10.0).unwrap();
    let basis = NoiseBasis::complete(g);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = random_kernel(g, &mut rng);
        let mut sum = vec![0.0; g.n_modes()];
        for &c in basis.cells() {
            for (s, v) in sum.iter_mut().zip(k.applied_to_cell(c)) {
                *s += 0.5 * v * v;
            }
        }
        let m = ito_correction(&k);
        worst = sum.iter().map(|s| (s - m).abs() / m).fold(worst, f64::max);
    }
    ok(worst < 1e-8, format!("max relative error {worst:.2e} over 20 kernels"))
}

fn c2() -> Outcome {
    let g = GridSpec::new(64, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = random_kernel(g, &mut rng);
        let v = random_field(g, &mut rng, 20);
        let hs = hs_norm_multiplication(&v, &k).unwrap();
        let want = v.l2_norm() * k.l2_norm();
        worst = worst.max((hs - want).abs() / want);
    }
    ok(worst < 1e-8, format!("max relative error {worst:.2e} over 50 pairs"))
}

fn c3() -> Outcome {
    let g = GridSpec::new(64, 2.0 * std::f64::consts::PI).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let symbols = [DispersionSymbol::PlusXi, DispersionSymbol::MinusXi, DispersionSymbol::PlusBracket];
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let f = random_field(g, &mut rng, 16);
        let t = rng.gen_range(0.05..=1.0);
        let b = [0.1, 0.3, 0.45][i % 3];
        let s = rng.gen_range(-0.5..1.0);
        let e = free_evolution_identity_error(&f, symbols[i % 3], s, b, t, 64).unwrap();
        worst = worst.max(e);
    }
    ok(worst < 1e-10, format!("max relative error {worst:.2e} over 20 draws"))
}

fn c4() -> Outcome {
    let exps: Vec<i32> = (2..=8).collect();
    let r = indicator_scaling(0.3, &exps, 64).unwrap();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(0.0, f64::max);
    ok(hi / lo < 3.0, format!("ratios in [{lo:.4}, {hi:.4}], max/min {:.4}", hi / lo))
}

const WAVEPACKET: &str = "
n_modes = 256
length = 32pi
s = 0
horizon = 1
dt = 0.00390625
delta = 0.03125
picard_tol = 1e-12
truncation = 1e6
initial = gaussian-wavepacket
initial_width = 2
initial_shift = 1
initial_amp = 1
kernel1 = gaussian
kernel1_width = 2
kernel1_amp = 0.5
kernel2 = gaussian
kernel2_width = 2
kernel2_amp = 0.5
";

fn charge_study() -> ChargeStudy {
    let cfg = parse_config(WAVEPACKET).unwrap();
    let solver = cfg.solver_config().unwrap();
    let initial = cfg.initial_state().unwrap();
    charge_drift_study(&solver, &initial, 6, 0, 2).unwrap()
}

fn c5(st: &ChargeStudy) -> Outcome {
    let quiet = st.noise_free_drift.iter().all(|d| *d < 1e-9);
    let dec = st.rms_drift.windows(2).all(|w| w[1] < w[0]);
    ok(
        quiet && dec && st.order >= 0.5,
        format!(
            "rms drift {:.3e}/{:.3e}/{:.3e}, order {:.3}, noise-free max {:.2e}",
            st.rms_drift[0],
            st.rms_drift[1],
            st.rms_drift[2],
            st.order,
            st.noise_free_drift.iter().copied().fold(0.0, f64::max)
        ),
    )
}

fn c7(st: &ChargeStudy) -> Outcome {
    ok(
        st.picard_max_ratio < 0.9 && st.picard_median_ratio < 0.5,
        format!(
            "{} subintervals, max ratio {:.3}, median {:.3}",
            st.picard_subintervals, st.picard_max_ratio, st.picard_median_ratio
        ),
    )
}

fn sup_distance(a: &TrajectoryRecord, b: &TrajectoryRecord, until: f64) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .zip(&a.times)
        .filter(|(_, t)| **t <= until)
        .map(|((x, y), _)| {
            let p = (&x.psi_plus - &y.psi_plus).l2_norm();
            let m = (&x.psi_minus - &y.psi_minus).l2_norm();
            let f = (&x.phi_plus - &y.phi_plus).l2_norm();
            (p * p + m * m + f * f).sqrt()
        })
        .fold(0.0, f64::max)
}

fn c6() -> Outcome {
    let mut cfg = parse_config(WAVEPACKET).unwrap();
    cfg.seed = 11;
    let initial = cfg.initial_state().unwrap();
    let run = |r: f64, cfg: &mut RunConfig| {
        cfg.truncation = r;
        solve_trajectory(&cfg.solver_config().unwrap(), &initial).unwrap()
    };
    let a = run(4.0, &mut cfg);
    let b = run(16.0, &mut cfg);
    let tau4 = stopping_time(&a.times, &a.norm_sum(), 4.0, cfg.horizon).unwrap();
    let d = sup_distance(&a, &b, tau4);
    let after = sup_distance(&a, &b, cfg.horizon);
    ok(
        d < 1e-8 && tau4 > 0.0,
        format!("tau_4 = {tau4:.4}, sup distance before {d:.2e}, over the horizon {after:.2e}"),
    )
}

fn c8() -> Outcome {
    let mut cfg = parse_config(
        "n_modes = 256
length = 2pi
dt = 0.00390625
delta = 0.03125
truncation = 1e6
initial = band-limited
initial_max_mode = 8
initial_amp = 0.1
kernel1 = gaussian
kernel1_width = 0.3
kernel1_amp = 0.5
kernel2 = gaussian
kernel2_width = 0.3
kernel2_amp = 0.5
seed = 3",
    )
    .unwrap();
    let initial = cfg.initial_state().unwrap();
    let base = solve_trajectory(&cfg.solver_config().unwrap(), &initial).unwrap();
    let mut dist = Vec::new();
    for mu in [8.0, 16.0, 32.0, 64.0] {
        cfg.mu = Some(mu);
        let r = solve_trajectory(&cfg.solver_config().unwrap(), &initial).unwrap();
        dist.push(sup_distance(&r, &base, cfg.horizon));
    }
    let mono = dist.windows(2).all(|w| w[1] <= w[0]);
    ok(
        mono && dist[3] < 1e-3,
        format!("distances {:?}", dist.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()),
    )
}

fn c9() -> Outcome {
    let r = probe_bilinear(EstimateId::NBound, 0.0, 1.0 / 3.0, 0.3, 200, 9, false).unwrap();
    ok(
        r.max_ratio.is_finite() && r.relative_mesh_change < 0.1,
        format!(
            "max ratio {:.5} (coarse) / {:.5} (fine), change {:.2e}",
            r.mesh_refinement_trend[0], r.mesh_refinement_trend[1], r.relative_mesh_change
        ),
    )
}

fn c10() -> Outcome {
    let r = cutoff_probes(100, 0.3, 1.0, &[1.0, 4.0, 16.0, 64.0], &[256, 512], 10).unwrap();
    let finite = r.bound1.iter().chain(&r.bound2).all(|v| v.is_finite());
    ok(
        finite && r.relative_change.iter().all(|c| *c < 0.15),
        format!(
            "C1 {:.4}/{:.4}, C2 {:.4}/{:.4}, changes {:.3}/{:.3}",
            r.bound1[0], r.bound1[1], r.bound2[0], r.bound2[1], r.relative_change[0], r.relative_change[1]
        ),
    )
}

const ITO: &str = "
n_modes = 64
length = 16pi
dt = 0.0625
delta = 0.5
horizon = 1
nonlinear = false
picard_tol = 1e-12
kernel1 = gaussian
kernel1_width = 2
kernel1_amp = 0.7
initial = gaussian-wavepacket
initial_width = 2
initial_shift = 1
";

fn c11() -> Outcome {
    let cfg = parse_config(ITO).unwrap();
    let solver = cfg.solver_config().unwrap();
    let initial = cfg.initial_state().unwrap();
    let study = ito_convergence_study(&solver, &initial, 512, 100, 3).unwrap();
    let mut fault = solver.clone();
    fault.ito_drift = false;
    let bad = ito_convergence_study(&fault, &initial, 512, 100, 3).unwrap();
    let fmt = |v: &[f64]| v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join("/");
    ok(
        study.order >= 0.5 && bad.order < 0.25,
        format!(
            "discrepancy {} order {:.3}; fault {} order {:.3}",
            fmt(&study.discrepancies),
            study.order,
            fmt(&bad.discrepancies),
            bad.order
        ),
    )
}

fn c12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "n_modes = 64\nlength = 16pi\ndt = 0.015625\ndelta = 0.125\nhorizon = 0.5\nkernel1 = gaussian\nkernel2 = gaussian\nseed = 5\nn_trajectories = 4\nr = 0.35\nb = 0.4\ntruncation_ladder = 4,16\n",
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_sdkg");
    let mut outputs = Vec::new();
    let mut statuses = true;
    for cmd in ["simulate", "ensemble"] {
        for (i, jobs) in ["1", "1", "4"].iter().enumerate() {
            // the header echoes the output path, so every run uses the same one
            let cwd = dir.path().join(format!("{cmd}-{i}"));
            std::fs::create_dir(&cwd).unwrap();
            let st = Proc::new(exe)
                .current_dir(&cwd)
                .args([cmd, "--config"])
                .arg(&cfg_path)
                .args(["--jobs", jobs, "--output", "run.out"])
                .output()
                .unwrap();
            statuses &= st.status.success();
            outputs.push((cmd, std::fs::read(cwd.join("run.out")).unwrap_or_default()));
        }
    }
    let same = outputs.chunks(3).all(|c| !c[0].1.is_empty() && c[0].1 == c[1].1 && c[0].1 == c[2].1);
    ok(
        statuses && same,
        format!("simulate and ensemble outputs identical across repeats and --jobs 1/4: {same}"),
    )
}

fn main() {
    let mut all = true;
    let mut report = |name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let el = t.elapsed();
        let pass = o.passed && el <= budget;
        all &= pass;
        println!(
            "[{}] {name}: {} ({:.1}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            budget.as_secs()
        );
    };
    let s = Duration::from_secs;
    report("C1 Ito correction identity", s(10), &mut c1);
    report("C2 Hilbert-Schmidt identity", s(10), &mut c2);
    report("C3 free-evolution modified norm", s(10), &mut c3);
    report("C4 indicator scaling", s(5), &mut c4);
    let t = Instant::now();
    let study = charge_study();
    let charge_time = t.elapsed();
    report("C5 charge conservation", s(300), &mut || {
        let mut o = c5(&study);
        o.detail.push_str(&format!(", study {:.1}s", charge_time.as_secs_f64()));
        o.passed &= charge_time <= s(300);
        o
    });
    report("C6 truncation consistency", s(120), &mut c6);
    report("C7 Picard contraction", s(300), &mut || c7(&study));
    report("C8 regularizer convergence", s(180), &mut c8);
    report("C9 bilinear probe stability", s(300), &mut c9);
    report("C10 cutoff probes", s(300), &mut c10);
    report("C11 Ito-Stratonovich consistency", s(600), &mut c11);
    report("C12 determinism", s(60), &mut c12);
    if !all {
        std::process::exit(1);
    }
}
