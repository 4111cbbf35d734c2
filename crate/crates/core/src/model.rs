//! Split variables, dispersion groups and Duhamel integrals.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bracket, GridSpec, SpectralField};

/// Dispersion relation `h(ξ)` of a linear group `S_h(t) = e^{-ith(D)}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionSymbol {
    PlusXi,
    MinusXi,
    PlusBracket,
    MinusBracket,
}

impl DispersionSymbol {
    #[inline]
    pub fn evaluate(self, xi: f64) -> f64 {
        match self {
            DispersionSymbol::PlusXi => xi,
            DispersionSymbol::MinusXi => -xi,
            DispersionSymbol::PlusBracket => bracket(xi),
            DispersionSymbol::MinusBracket => -bracket(xi),
        }
    }

    /// Values of `h` at every FFT index of `grid`.
    pub fn table(self, grid: &GridSpec) -> Vec<f64> {
        grid.frequencies()
            .into_iter()
            .map(|xi| self.evaluate(xi))
            .collect()
    }
}

/// One time slice `(ψ₊, ψ₋, φ₊)` of the split system.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitState {
    pub psi_plus: SpectralField,
    pub psi_minus: SpectralField,
    pub phi_plus: SpectralField,
    pub dirac_mass: f64,
    pub kg_mass: f64,
    pub s_index: f64,
    pub r_index: f64,
}

impl SplitState {
    pub fn zeros(grid: GridSpec, dirac_mass: f64, s_index: f64, r_index: f64) -> Self {
        Self {
            psi_plus: SpectralField::zeros(grid),
            psi_minus: SpectralField::zeros(grid),
            phi_plus: SpectralField::zeros(grid),
            dirac_mass,
            kg_mass: 1.0,
            s_index,
            r_index,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.psi_plus.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.psi_plus.ensure_same_grid(&self.psi_minus)?;
        self.psi_plus.ensure_same_grid(&self.phi_plus)?;
        if !(self.dirac_mass >= 0.0 && self.dirac_mass.is_finite()) {
            return Err(Error::invalid("dirac mass must be nonnegative"));
        }
        if self.kg_mass != 1.0 {
            return Err(Error::invalid("Klein-Gordon mass must equal 1"));
        }
        Ok(())
    }

    /// Same masses and indices, new fields.
    pub fn with_fields(
        &self,
        psi_plus: SpectralField,
        psi_minus: SpectralField,
        phi_plus: SpectralField,
    ) -> Self {
        Self {
            psi_plus,
            psi_minus,
            phi_plus,
            ..self.clone()
        }
    }

    pub fn fields(&self) -> [&SpectralField; 3] {
        [&self.psi_plus, &self.psi_minus, &self.phi_plus]
    }

    /// Physical-space samples of the real scalar field `φ = φ₊ + conj(φ₊)`.
    pub fn phi_samples(&self) -> Vec<f64> {
        self.phi_plus
            .to_physical()
            .iter()
            .map(|z| 2.0 * z.re)
            .collect()
    }
}

/// Spinor pair and Klein-Gordon data in unsplit form.
#[derive(Clone, Debug, PartialEq)]
pub struct UnsplitFields {
    pub psi: (SpectralField, SpectralField),
    pub phi: SpectralField,
    pub phi_dot: SpectralField,
}

/// `φ₊ = ½(φ + i⟨D⟩⁻¹φ̇)` with the spinor components passed through.
pub fn split(
    psi: (SpectralField, SpectralField),
    phi: &SpectralField,
    phi_dot: &SpectralField,
    dirac_mass: f64,
) -> Result<SplitState> {
    psi.0.ensure_same_grid(&psi.1)?;
    psi.0.ensure_same_grid(phi)?;
    phi.ensure_same_grid(phi_dot)?;
    let grid = *phi.grid();
    let coeffs = phi
        .coeffs()
        .iter()
        .zip(phi_dot.coeffs())
        .enumerate()
        .map(|(i, (p, q))| {
            let w = bracket(grid.frequency(i));
            0.5 * (p + Complex64::i() * q / w)
        })
        .collect();
    let phi_plus = SpectralField::from_coeffs(grid, coeffs)?;
    let state = SplitState {
        psi_plus: psi.0,
        psi_minus: psi.1,
        phi_plus,
        dirac_mass,
        kg_mass: 1.0,
        s_index: 0.0,
        r_index: 0.0,
    };
    state.validate()?;
    Ok(state)
}

/// Inverse of [`split`]: `φ = φ₊ + conj(φ₊)`, `φ̇ = -i⟨D⟩(φ₊ - conj(φ₊))`.
pub fn unsplit(state: &SplitState) -> UnsplitFields {
    let grid = *state.grid();
    let pc = state.phi_plus.conj();
    let phi = &state.phi_plus + &pc;
    let diff = &state.phi_plus - &pc;
    let phi_dot = diff.apply_symbol(|xi| Complex64::new(0.0, -bracket(xi)));
    debug_assert_eq!(*phi.grid(), grid);
    UnsplitFields {
        psi: (state.psi_plus.clone(), state.psi_minus.clone()),
        phi,
        phi_dot,
    }
}

/// `S_h(t) f`, i.e. modewise multiplication by `e^{-ith(ξ)}`.
pub fn group_apply(h: DispersionSymbol, t: f64, f: &SpectralField) -> SpectralField {
    if t == 0.0 {
        return f.clone();
    }
    f.apply_symbol(|xi| Complex64::from_polar(1.0, -t * h.evaluate(xi)))
}

/// Trapezoidal approximation of `∫_{t₀}^{t} S_h(t-σ)F(σ) dσ` with exact phases.
///
/// `forcing[j]` is sampled at `t₀ + j·dt`; `t` must be one of those nodes.
pub fn duhamel(
    h: DispersionSymbol,
    forcing: &[SpectralField],
    t0: f64,
    dt: f64,
    t: f64,
) -> Result<SpectralField> {
    let first = forcing
        .first()
        .ok_or_else(|| Error::invalid("duhamel needs at least one forcing slice"))?;
    if !(dt > 0.0) {
        return Err(Error::invalid("duhamel needs dt > 0"));
    }
    let steps_f = (t - t0) / dt;
    let steps = steps_f.round();
    if steps < 0.0 || (steps_f - steps).abs() > 1e-9 {
        return Err(Error::invalid(format!("t = {t} is not on the time grid")));
    }
    let j = steps as usize;
    if j >= forcing.len() {
        return Err(Error::invalid(format!(
            "t = {t} lies beyond the forcing samples"
        )));
    }
    let grid = *first.grid();
    let hs = h.table(&grid);
    let mut out = SpectralField::zeros(grid);
    if j == 0 {
        return Ok(out);
    }
    for (i, f) in forcing.iter().enumerate().take(j + 1) {
        first.ensure_same_grid(f)?;
        let w = if i == 0 || i == j { 0.5 * dt } else { dt };
        let lag = (j - i) as f64 * dt;
        for ((o, c), &hk) in out.coeffs_mut().iter_mut().zip(f.coeffs()).zip(&hs) {
            *o += c * Complex64::from_polar(w, -lag * hk);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(32, 2.0 * PI * 2.0).unwrap()
    }

    fn real_field(rng: &mut ChaCha8Rng, g: GridSpec) -> SpectralField {
        let v: Vec<f64> = (0..g.n_modes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpectralField::from_real_samples(g, &v).unwrap()
    }

    fn complex_field(rng: &mut ChaCha8Rng, g: GridSpec) -> SpectralField {
        let c = (0..g.n_modes())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        SpectralField::from_coeffs(g, c).unwrap()
    }

    #[test]
    fn symbols_evaluate_exactly() {
        assert_eq!(DispersionSymbol::PlusXi.evaluate(2.5), 2.5);
        assert_eq!(DispersionSymbol::MinusXi.evaluate(2.5), -2.5);
        assert_eq!(DispersionSymbol::PlusBracket.evaluate(0.0), 1.0);
        assert_eq!(DispersionSymbol::MinusBracket.evaluate(0.0), -1.0);
    }

    #[test]
    fn split_with_zero_velocity_halves_phi() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = real_field(&mut rng, g);
        let z = SpectralField::zeros(g);
        let st = split((z.clone(), z.clone()), &phi, &z, 1.0).unwrap();
        let d = &st.phi_plus - &(&phi * 0.5);
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn split_unsplit_round_trip_and_conjugate() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = real_field(&mut rng, g);
        let phi_dot = real_field(&mut rng, g);
        let z = SpectralField::zeros(g);
        let st = split((z.clone(), z), &phi, &phi_dot, 0.5).unwrap();
        let back = unsplit(&st);
        assert!((&back.phi - &phi).max_abs() < 1e-12 * phi.max_abs().max(1.0));
        assert!((&back.phi_dot - &phi_dot).max_abs() < 1e-12 * phi_dot.max_abs().max(1.0));
        // conj(φ₊) = ½(φ - i⟨D⟩⁻¹φ̇)
        let minus = SpectralField::from_coeffs(
            g,
            phi.coeffs()
                .iter()
                .zip(phi_dot.coeffs())
                .enumerate()
                .map(|(i, (p, q))| 0.5 * (p - Complex64::i() * q / bracket(g.frequency(i))))
                .collect(),
        )
        .unwrap();
        assert!((&st.phi_plus.conj() - &minus).max_abs() < 1e-12);
        assert!(st.phi_samples().iter().zip(phi.to_physical()).all(|(a, b)| (a - b.re).abs() < 1e-10));
    }

    #[test]
    fn unsplit_single_mode_hand_formula() {
        let g = grid();
        let k = 3;
        let st = SplitState {
            phi_plus: SpectralField::single_mode(g, k, Complex64::new(g.length(), 0.0)).unwrap(),
            ..SplitState::zeros(g, 0.0, 0.0, 0.0)
        };
        let out = unsplit(&st);
        let xi = k as f64 * g.dxi();
        let w = bracket(xi);
        // φ̇(x) = -i⟨ξ⟩(e^{iξx} - e^{-iξx}) = 2⟨ξ⟩ sin(ξx)
        for (x, v) in g.points().iter().zip(out.phi_dot.to_physical()) {
            assert!((v - Complex64::new(2.0 * w * (xi * x).sin(), 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_state_unsplits_to_zero() {
        let st = SplitState::zeros(grid(), 1.0, 0.0, 0.0);
        let out = unsplit(&st);
        assert_eq!(out.phi.max_abs(), 0.0);
        assert_eq!(out.phi_dot.max_abs(), 0.0);
    }

    #[test]
    fn group_translation_and_properties() {
        let g = grid();
        let f = SpectralField::single_mode(g, 2, Complex64::new(1.0, 0.0)).unwrap();
        let t = 0.37;
        let out = group_apply(DispersionSymbol::PlusXi, t, &f);
        let idx = g.index_of_mode(2).unwrap();
        let xi = g.frequency(idx);
        assert!((out.coeffs()[idx] - Complex64::from_polar(1.0, -t * xi)).norm() < 1e-15);
        assert_eq!(group_apply(DispersionSymbol::PlusBracket, 0.0, &f), f);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let f = complex_field(&mut rng, g);
            let s = rng.gen_range(-2.0..2.0);
            let t1 = rng.gen_range(-3.0..3.0);
            let t2 = rng.gen_range(-3.0..3.0);
            for h in [
                DispersionSymbol::PlusXi,
                DispersionSymbol::MinusXi,
                DispersionSymbol::PlusBracket,
                DispersionSymbol::MinusBracket,
            ] {
                let a = group_apply(h, t1 + t2, &f);
                let b = group_apply(h, t1, &group_apply(h, t2, &f));
                assert!((&a - &b).max_abs() < 1e-12);
                let n0 = f.sobolev_norm(s);
                assert!((a.sobolev_norm(s) - n0).abs() <= 1e-12 * n0);
            }
        }
    }

    #[test]
    fn duhamel_zero_and_resonant_mode() {
        let g = grid();
        let dt = 0.01;
        let zero = vec![SpectralField::zeros(g); 11];
        let out = duhamel(DispersionSymbol::PlusXi, &zero, 0.0, dt, 0.1).unwrap();
        assert_eq!(out.max_abs(), 0.0);

        let c = Complex64::new(0.3, -0.7);
        let f = SpectralField::single_mode(g, 0, c).unwrap();
        let forcing = vec![f; 11];
        let out = duhamel(DispersionSymbol::PlusXi, &forcing, 0.0, dt, 0.1).unwrap();
        assert!((out.coeffs()[0] - c * 0.1).norm() < 1e-15);
        assert!(duhamel(DispersionSymbol::PlusXi, &forcing, 0.0, dt, 0.105).is_err());
    }

    #[test]
    fn duhamel_second_order_against_antiderivative() {
        let g = grid();
        let k = 5;
        let idx = g.index_of_mode(k).unwrap();
        let hk = DispersionSymbol::PlusBracket.evaluate(g.frequency(idx));
        let c = Complex64::new(1.0, 0.5);
        let t = 1.0;
        // ∫₀ᵗ e^{-i(t-σ)h} c dσ = c (1 - e^{-ith}) / (ih)
        let exact = c * (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -t * hk))
            / Complex64::new(0.0, hk);
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let dt = t / n as f64;
            let forcing = vec![SpectralField::single_mode(g, k, c).unwrap(); n + 1];
            let out = duhamel(DispersionSymbol::PlusBracket, &forcing, 0.0, dt, t).unwrap();
            errs.push((out.coeffs()[idx] - exact).norm());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }
}
