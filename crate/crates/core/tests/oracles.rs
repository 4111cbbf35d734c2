//! Independent reference computations for the derived quantities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdkg::bourgain::{hb_norm_sharp_cutoff, modified_norm, stopping_time, NormSpec, SpaceTimePath};
use sdkg::dynamics::{solve_trajectory, SolverConfig};
use sdkg::grid::forward_transform;
use sdkg::model::{split, unsplit, DispersionSymbol, SplitState};
use sdkg::noise::{ito_correction, NoiseKernel};
use sdkg::{GridSpec, SpectralField};

/// `f̂(ξ_k) = Σ_j f(x_j) e^{-iξ_k x_j} dx`, by direct summation.
fn naive_transform(samples: &[Complex64], g: GridSpec) -> Vec<Complex64> {
    let x = g.points();
    (0..g.n_modes())
        .map(|k| {
            let xi = g.frequency(k);
            samples
                .iter()
                .zip(&x)
                .map(|(f, &x)| f * Complex64::from_polar(g.dx(), -xi * x))
                .sum()
        })
        .collect()
}

#[test]
fn transform_matches_direct_sum() {
    let g = GridSpec::new(48, 7.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u: Vec<Complex64> = (0..48).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
    let fast = forward_transform(&u, g).unwrap();
    for (a, b) in fast.coeffs().iter().zip(naive_transform(&u, g)) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn ito_correction_is_half_kernel_energy() {
    let g = GridSpec::new(64, 12.0).unwrap();
    let k = NoiseKernel::gaussian(g, 1.3, 0.8).unwrap();
    let energy: f64 = k.samples().iter().map(|v| v * v).sum::<f64>() * g.dx();
    assert!((ito_correction(&k) - 0.5 * energy).abs() < 1e-12 * energy);
}

/// `‖𝟙_{(0,T)}‖²_{H^b} = (1/2π) ∫ ⟨τ⟩^{2b} 4 sin²(τT/2)/τ² dτ` by midpoint
/// quadrature on `|τ| < X` plus the averaged tail `(2/π) X^{2b-1}/(1-2b)`.
fn indicator_oracle(t: f64, b: f64) -> f64 {
    let x = 4000.0;
    let n = 4_000_000;
    let h = x / n as f64;
    let mut s = 0.0;
    for j in 0..n {
        let tau = (j as f64 + 0.5) * h;
        let w = (1.0 + tau * tau).powf(b);
        s += w * 4.0 * (tau * t / 2.0).sin().powi(2) / (tau * tau);
    }
    let inner = 2.0 * s * h / (2.0 * PI);
    let tail = 2.0 / PI * x.powf(2.0 * b - 1.0) / (1.0 - 2.0 * b);
    (inner + tail).sqrt()
}

#[test]
fn indicator_norm_matches_quadrature() {
    for (t, b) in [(0.5, 0.3), (0.125, 0.1), (1.0, 0.45)] {
        let ones = vec![Complex64::new(1.0, 0.0); 33];
        let got = hb_norm_sharp_cutoff(&ones, t / 32.0, b).unwrap();
        let want = indicator_oracle(t, b);
        assert!((got - want).abs() < 2e-3 * want, "T={t} b={b}: {got} vs {want}");
    }
}

#[test]
fn single_mode_modified_norm_closed_form() {
    // a free mode has |U| constant, so only the scaled L² term survives
    let g = GridSpec::new(16, 2.0 * PI).unwrap();
    let c = Complex64::new(0.3, -0.4);
    let f = SpectralField::single_mode(g, 3, c).unwrap();
    let (t, b, s) = (0.7, 0.3, 0.5);
    let path = SpaceTimePath::free_evolution(&f, DispersionSymbol::MinusXi, 0.0, t / 20.0, 20).unwrap();
    let got = modified_norm(&path, &NormSpec::new(s, b, DispersionSymbol::MinusXi, (0.0, t)).unwrap()).unwrap();
    let want = t.powf(0.5 - b) * c.norm() * (1.0 + 9.0f64).powf(s / 2.0) / g.length().sqrt();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn stopping_time_interpolates() {
    let t = [0.0, 0.5, 1.0];
    let f = [0.0, 2.0, 6.0];
    assert!((stopping_time(&t, &f, 4.0, 1.0).unwrap() - 0.75).abs() < 1e-15);
    assert_eq!(stopping_time(&t, &f, 10.0, 1.0).unwrap(), 1.0);
}

#[test]
fn massless_linear_run_is_free_transport() {
    let g = GridSpec::new(32, 2.0 * PI).unwrap();
    let mut cfg = SolverConfig::new(g);
    cfg.nonlinear = false;
    cfg.dirac_mass = 0.0;
    cfg.horizon = 0.25;
    cfg.delta = 8.0 * cfg.dt;
    let mut st = SplitState::zeros(g, 0.0, 0.0, 1.0 / 3.0);
    st.psi_plus = SpectralField::single_mode(g, 2, Complex64::new(1.0, 0.0)).unwrap();
    let rec = solve_trajectory(&cfg, &st).unwrap();
    let last = rec.states.last().unwrap();
    // ψ₊ solves ∂_t ψ = -∂_x ψ, so its mode-2 coefficient picks up e^{-2it}
    let want = Complex64::from_polar(1.0, -2.0 * 0.25);
    let i = g.index_of_mode(2).unwrap();
    assert!((last.psi_plus.coeffs()[i] - want).norm() < 1e-10);
}

#[test]
fn split_recovers_physical_fields() {
    let g = GridSpec::new(32, 5.0).unwrap();
    let x = g.points();
    let phi: Vec<f64> = x.iter().map(|x| (2.0 * PI * x / 5.0).cos()).collect();
    let dphi: Vec<f64> = x.iter().map(|x| (4.0 * PI * x / 5.0).sin()).collect();
    let phi = SpectralField::from_real_samples(g, &phi).unwrap();
    let dphi = SpectralField::from_real_samples(g, &dphi).unwrap();
    let z = SpectralField::zeros(g);
    let st = split((z.clone(), z), &phi, &dphi, 1.0).unwrap();
    let back = unsplit(&st);
    assert!((&back.phi - &phi).max_abs() < 1e-12);
    assert!((&back.phi_dot - &dphi).max_abs() < 1e-12);
}
