// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Fluorescence spectra from the steady-state field correlation.
//!
//! Normalisation: with jump operators C_k = √A_k |l⟩⟨u|,
//!
//! ```text
//! G(τ) = Σ_k ⟨C_k†(0) C_k(τ)⟩ = Σ_k tr[C_k e^{Lτ}(ρ_ss C_k†)]
//! ```
//!
//! so G(0) is the photon emission rate. The spectrum splits into a δ-peak of
//! weight G(∞) = Σ_k |tr C_k ρ_ss|² at the laser frequency and the density
//!
//! ```text
//! S_inc(Δ) = (1/π) Re ∫₀^T [G(τ) − G(∞)] e^{iΔτ} dτ,   Δ = ω − ω_L,
//! ```
//!
//! with ∫ S_inc dΔ + G(∞) = G(0) for T = ∞.
//!
//! The fluctuation G(τ) − G(∞) = Σ_k tr[C_k e^{Lτ} v_k], v_k = vec(δY_k),
//! δY_k = ρ_ss C_k† − tr(ρ_ss C_k†) ρ_ss, is integrated exactly: the τ
//! integral over [0, T] telescopes to
//!
//! ```text
//! Σ_k tr[C_k (L + iΔ)⁻¹ (e^{iΔT} e^{LT} v_k − v_k)]
//! ```
//!
//! i.e. the resolvent at the lower end plus an endpoint term at T, which
//! vanishes for T = ∞. Because each v_k is traceless, (L + iΔ) may be
//! replaced by L + iΔ + |ρ_ss⟩⟨1|, which stays invertible at Δ = 0. Any Δ
//! grid is allowed and there is no discretisation error in τ.

use std::io::Write;

use serde::Serialize;

pub use fit::{decompose_line_center, PeakDecomposition, MAX_RELATIVE_RESIDUAL, NARROW_RATIO};
pub use mollow::{mollow_oracle, two_level_steady_state};

use crate::atom::{AtomModel, VSystemParams};
use crate::dynamics::jump_operators;
use crate::error::{Error, Result};
use crate::linalg::{trace, vectorize, CMatrix, CVector, C64};
use crate::master::{build_liouvillian, regression, steady_state_of, Superoperator};

mod fit;
mod mollow;

/// |G(T) − G(∞)| allowed relative to G(0) for a finite upper limit T.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub delta_grid: Vec<f64>,
    pub incoherent: Vec<f64>,
    pub coherent_weight: f64,
    pub total_power: f64,
    /// End of the correlation quadrature.
    pub tau_max: f64,
    /// |G(τ_max) − G(∞)| / G(0).
    pub correlation_residual: f64,
}

impl SpectrumResult {
    pub fn min_incoherent(&self) -> f64 {
        self.incoherent.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoidal ∫ S_inc dΔ over the grid plus 1/Δ² tails beyond its ends.
    pub fn integrated_incoherent(&self) -> f64 {
        let (d, s) = (&self.delta_grid, &self.incoherent);
        if d.len() < 2 {
            return 0.0;
        }
        let inner: f64 = d.windows(2).zip(s.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
        let n = d.len() - 1;
        let tail = |x: f64, y: f64| if x != 0.0 { y * x.abs() } else { 0.0 };
        let lo = if d[0] < 0.0 { tail(d[0], s[0]) } else { 0.0 };
        let hi = if d[n] > 0.0 { tail(d[n], s[n]) } else { 0.0 };
        inner + lo + hi
    }

    /// |∫S_inc + coherent − total| / total.
    pub fn sum_rule_error(&self) -> f64 {
        if self.total_power == 0.0 {
            return 0.0;
        }
        ((self.integrated_incoherent() + self.coherent_weight - self.total_power) / self.total_power).abs()
    }

    /// Grid positions of local maxima above 1e-3 of the largest value.
    pub fn local_maxima(&self) -> Vec<f64> {
        let s = &self.incoherent;
        let top = s.iter().copied().fold(0.0, f64::max);
        (1..s.len().saturating_sub(1))
            .filter(|&i| s[i] > s[i - 1] && s[i] >= s[i + 1] && s[i] > 1e-3 * top)
            .map(|i| self.delta_grid[i])
            .collect()
    }

    /// Value at the grid point nearest to Δ = 0.
    pub fn center_value(&self) -> f64 {
        let k = self
            .delta_grid
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.incoherent.get(k).copied().unwrap_or(0.0)
    }

    /// Two-column CSV with `#` header lines carrying the scalar results and
    /// any extra `key = value` pairs.
    pub fn write_csv<W: Write>(&self, mut out: W, extra: &[(String, String)]) -> Result<()> {
        writeln!(out, "# coherent_weight = {}", self.coherent_weight)?;
        writeln!(out, "# total_power = {}", self.total_power)?;
        writeln!(out, "# tau_max = {}", self.tau_max)?;
        for (k, v) in extra {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "delta,incoherent_density")?;
        for (d, s) in self.delta_grid.iter().zip(&self.incoherent) {
            writeln!(out, "{d},{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SpectrumOptions {
    /// Upper limit T of the τ integral; `None` integrates to infinity.
    pub tau_max: Option<f64>,
    /// Decay channels whose light is collected; all if `None`.
    pub channels: Option<Vec<usize>>,
}

fn collected_operators(atom: &AtomModel, channels: Option<&[usize]>) -> Result<Vec<CMatrix>> {
    if let Some(ch) = channels {
        if let Some(&bad) = ch.iter().find(|&&k| k >= atom.decay_channels.len()) {
            return Err(Error::InvalidArgument(format!("no decay channel {bad}")));
        }
    }
    Ok(jump_operators(atom)?
        .into_iter()
        .filter(|op| channels.map_or(true, |ch| op.channels.iter().any(|k| ch.contains(k))))
        .map(|op| op.matrix)
        .collect())
}

/// Steady-state field source: generator, collected operators and the
/// traceless fluctuation vectors they act on.
#[derive(Debug, Clone)]
pub struct FieldSource {
    l: Superoperator,
    ops: Vec<CMatrix>,
    /// vec(C_kᵀ), so that tr[C_k X] = vec(C_kᵀ) · vec(X).
    readout: Vec<CVector>,
    /// One column per collected operator.
    fluctuation: CMatrix,
    /// L + |ρ_ss⟩⟨1|.
    regular: CMatrix,
    rho: CMatrix,
    pub g0: f64,
    pub g_inf: f64,
}

impl FieldSource {
    pub fn new(atom: &AtomModel, channels: Option<&[usize]>) -> Result<Self> {
        if !atom.has_emission() {
            return Err(Error::NoEmission);
        }
        let ops = collected_operators(atom, channels)?;
        let l = build_liouvillian(atom)?;
        let rho = steady_state_of(&l)?;
        let n = atom.n_levels;
        let g0 = ops.iter().map(|cop| trace(&(cop.adjoint() * cop * &rho)).re).sum();
        let g_inf = ops.iter().map(|cop| trace(&(cop * &rho)).norm_sqr()).sum();
        let mut fluctuation = CMatrix::zeros(n * n, ops.len());
        for (k, cop) in ops.iter().enumerate() {
            let y = &rho * cop.adjoint();
            let dy = &y - &rho * trace(&y);
            fluctuation.set_column(k, &vectorize(&dy));
        }
        let one = vectorize(&CMatrix::identity(n, n));
        let regular = &l.liouvillian + vectorize(&rho) * one.transpose();
        Ok(Self {
            readout: ops.iter().map(|cop| vectorize(&cop.transpose())).collect(),
            l,
            ops,
            fluctuation,
            regular,
            rho,
            g0,
            g_inf,
        })
    }

    pub fn liouvillian(&self) -> &Superoperator {
        &self.l
    }

    fn read(&self, cols: &CMatrix) -> C64 {
        self.readout.iter().enumerate().map(|(k, r)| r.dot(&cols.column(k))).sum()
    }

    /// Σ_k tr[C_k (L + iΔ)⁻¹ X_k] for traceless columns X_k.
    fn resolvent(&self, delta: f64, cols: &CMatrix) -> Result<C64> {
        let m = self.regular.nrows();
        let a = &self.regular + CMatrix::identity(m, m) * C64::new(0.0, delta);
        let x = a
            .lu()
            .solve(cols)
            .ok_or_else(|| Error::StepFailure(format!("singular resolvent at Δ = {delta}")))?;
        Ok(self.read(&x))
    }

    /// Columns e^{LT} v_k.
    fn evolved(&self, t: f64) -> CMatrix {
        self.l.propagator(t) * &self.fluctuation
    }

    /// G(τ) − G(∞) on an increasing τ grid.
    pub fn fluctuation_correlation(&self, taus: &[f64]) -> Result<Vec<C64>> {
        let n = self.l.n_levels();
        let mut out = vec![C64::new(0.0, 0.0); taus.len()];
        for (k, cop) in self.ops.iter().enumerate() {
            let x = crate::linalg::unvectorize(&self.fluctuation.column(k).into_owned(), n);
            for (o, v) in out.iter_mut().zip(regression(&self.l, cop, &x, taus)?) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Incoherent density on `delta_grid` for the upper limit `tau_max`.
    pub fn spectrum(&self, delta_grid: &[f64], tau_max: Option<f64>) -> Result<SpectrumResult> {
        let pi = std::f64::consts::PI;
        if self.g0 <= 0.0 {
            return Ok(SpectrumResult {
                delta_grid: delta_grid.to_vec(),
                incoherent: vec![0.0; delta_grid.len()],
                coherent_weight: 0.0,
                total_power: 0.0,
                tau_max: tau_max.unwrap_or(f64::INFINITY),
                correlation_residual: 0.0,
            });
        }
        let (end, residual) = match tau_max {
            None => (None, 0.0),
            Some(t) => {
                if !(t > 0.0) || !t.is_finite() {
                    return Err(Error::InvalidArgument(format!("tau_max must be positive, got {t}")));
                }
                let cols = self.evolved(t);
                let r = self.read(&cols).norm();
                if r > CONVERGENCE_TOLERANCE * self.g0 {
                    return Err(Error::CorrelationNotConverged {
                        tau: t,
                        residual: r,
                        g0: self.g0,
                    });
                }
                (Some((t, cols)), r / self.g0)
            }
        };
        let incoherent = delta_grid
            .iter()
            .map(|&d| {
                let mut acc = -self.resolvent(d, &self.fluctuation)?;
                if let Some((t, cols)) = &end {
                    acc += C64::from_polar(1.0, d * t) * self.resolvent(d, cols)?;
                }
                Ok(acc.re / pi)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(SpectrumResult {
            delta_grid: delta_grid.to_vec(),
            incoherent,
            coherent_weight: self.g_inf,
            total_power: self.g0,
            tau_max: tau_max.unwrap_or(f64::INFINITY),
            correlation_residual: residual,
        })
    }

    pub fn steady_state(&self) -> &CMatrix {
        &self.rho
    }
}

/// Emission spectrum of all decay channels.
pub fn emission_spectrum(atom: &AtomModel, delta_grid: &[f64], tau_max: Option<f64>) -> Result<SpectrumResult> {
    emission_spectrum_with(
        atom,
        delta_grid,
        &SpectrumOptions {
            tau_max,
            channels: None,
        },
    )
}

pub fn emission_spectrum_with(atom: &AtomModel, delta_grid: &[f64], opts: &SpectrumOptions) -> Result<SpectrumResult> {
    FieldSource::new(atom, opts.channels.as_deref())?.spectrum(delta_grid, opts.tau_max)
}

/// Symmetric grid `scale · sinh(u)` with `u` uniform: spacing ≈ `scale` at the
/// centre, growing exponentially out to ±`half_width`. `n` is forced odd so
/// that Δ = 0 is a grid point.
pub fn sinh_grid(half_width: f64, scale: f64, n: usize) -> Vec<f64> {
    let n = n.max(3) | 1;
    let umax = (half_width / scale).asinh();
    let mid = n / 2;
    (0..n)
        .map(|k| {
            if k == mid {
                0.0
            } else {
                let u = umax * (k as f64 - mid as f64) / mid as f64;
                scale * u.sinh()
            }
        })
        .collect()
}

/// Evenly spaced grid on [lo, hi].
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Default grid for the shelving-atom line centre.
pub fn dehmelt_grid(params: &VSystemParams) -> Vec<f64> {
    sinh_grid(4.0 * params.a_strong, 1e-6 * params.a_strong, 1601)
}

/// Fit window of the line-centre decomposition for the shelving atom.
pub fn dehmelt_fit_window(params: &VSystemParams) -> f64 {
    0.5 * params.a_strong
}

/// Complete spectrum of the light scattered on the strong transition,
/// with the line centre decomposed into broad, narrow and δ parts.
pub fn dehmelt_complete_spectrum(
    params: &VSystemParams,
    delta_grid: &[f64],
) -> Result<(SpectrumResult, PeakDecomposition)> {
    let atom = AtomModel::dehmelt_v(params);
    let opts = SpectrumOptions {
        tau_max: None,
        channels: Some(vec![0]),
    };
    let spec = emission_spectrum_with(&atom, delta_grid, &opts)?;
    let mut dec = decompose_line_center(&spec, dehmelt_fit_window(params))?;
    dec.slow_rate = slowest_rate(&build_liouvillian(&atom)?);
    Ok((spec, dec))
}

/// Long-light-period limit: the strong-transition two-level subsystem with
/// the metastable level removed. This approximates the light-period
/// (conditional) spectrum; it does not model residual modulation within
/// light periods.
pub fn light_period_spectrum(
    params: &VSystemParams,
    delta_grid: &[f64],
) -> Result<(SpectrumResult, PeakDecomposition)> {
    let atom = AtomModel::two_level(params.rabi_strong, params.a_strong, params.detuning_strong);
    let spec = emission_spectrum(&atom, delta_grid, None)?;
    let mut dec = decompose_line_center(&spec, dehmelt_fit_window(params))?;
    dec.slow_rate = slowest_rate(&build_liouvillian(&atom)?);
    Ok((spec, dec))
}

/// −Re λ of the slowest decaying Liouvillian mode.
pub fn slowest_rate(l: &Superoperator) -> Option<f64> {
    let mut rates: Vec<f64> = l.eigenvalues().iter().map(|z| -z.re).collect();
    rates.sort_by(f64::total_cmp);
    let scale = rates.last().copied().unwrap_or(0.0).abs().max(1.0);
    rates.into_iter().find(|&r| r > 1e-12 * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mollow_grid() -> Vec<f64> {
        uniform_grid(-20.0, 20.0, 801)
    }

    #[test]
    fn fluctuation_starts_at_incoherent_power_and_decays() {
        let atom = AtomModel::two_level(1.0, 1.0, 0.0);
        let src = FieldSource::new(&atom, None).unwrap();
        let taus: Vec<f64> = (0..=60).map(|k| 0.5 * k as f64).collect();
        let dg = src.fluctuation_correlation(&taus).unwrap();
        assert!((dg[0].re - (src.g0 - src.g_inf)).abs() < 1e-14);
        // slowest rate A/2
        assert!(dg.last().unwrap().norm() < 1e-5 * src.g0);
    }

    #[test]
    fn finite_upper_limit_converges_to_infinite() {
        let atom = AtomModel::two_level(3.0, 1.0, 0.5);
        let grid = uniform_grid(-8.0, 8.0, 161);
        let inf = emission_spectrum(&atom, &grid, None).unwrap();
        let fin = emission_spectrum(&atom, &grid, Some(60.0)).unwrap();
        for (a, b) in inf.incoherent.iter().zip(&fin.incoherent) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(fin.correlation_residual < 1e-10);
    }

    #[test]
    fn spectrum_is_transform_of_sampled_correlation() {
        // Simpson quadrature of the sampled correlation at a few Δ.
        let atom = AtomModel::two_level(2.0, 1.0, 0.3);
        let src = FieldSource::new(&atom, None).unwrap();
        let m = 8000;
        let h = 40.0 / m as f64;
        let taus: Vec<f64> = (0..=m).map(|k| h * k as f64).collect();
        let dg = src.fluctuation_correlation(&taus).unwrap();
        let s = src.spectrum(&[0.0, 1.3, -2.5], None).unwrap();
        for (k, &d) in [0.0, 1.3, -2.5].iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, (&t, &g)) in taus.iter().zip(&dg).enumerate() {
                let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += g * C64::from_polar(w, d * t);
            }
            let quad = (acc * (h / 3.0)).re / std::f64::consts::PI;
            assert!((quad - s.incoherent[k]).abs() < 1e-8, "Δ = {d}: {quad} vs {}", s.incoherent[k]);
        }
    }

    #[test]
    fn two_level_matches_mollow_oracle() {
        for &(om, det) in &[(0.1, 0.0), (1.0, 0.0), (10.0, 0.0), (2.0, 1.5)] {
            let atom = AtomModel::two_level(om, 1.0, det);
            let grid = mollow_grid();
            let num = emission_spectrum(&atom, &grid, None).unwrap();
            let ora = mollow_oracle(om, 1.0, det, &grid).unwrap();
            let peak = ora.incoherent.iter().copied().fold(0.0, f64::max);
            for (k, (x, y)) in num.incoherent.iter().zip(&ora.incoherent).enumerate() {
                assert!((x - y).abs() <= 1e-3 * peak, "Ω = {om}, Δ = {}: {x} vs {y}", grid[k]);
            }
            assert!((num.coherent_weight - ora.coherent_weight).abs() < 1e-12);
            assert!((num.total_power - ora.total_power).abs() < 1e-12);
        }
    }

    #[test]
    fn detuned_sidebands_at_generalized_rabi_frequency() {
        let atom = AtomModel::two_level(0.3, 0.2, 2.0);
        let grid = uniform_grid(-4.0, 4.0, 1601);
        let s = emission_spectrum(&atom, &grid, None).unwrap();
        let side = (2.0f64 * 2.0 + 0.3 * 0.3).sqrt();
        let maxima = s.local_maxima();
        let near = |x: f64| maxima.iter().any(|&d| (d - x).abs() <= 0.01);
        assert!(near(-side) && near(side), "{maxima:?}");
    }

    #[test]
    fn sum_rule_and_nonnegativity() {
        let atom = AtomModel::two_level(3.0, 1.0, 0.5);
        let grid = sinh_grid(2000.0, 0.02, 4001);
        let s = emission_spectrum(&atom, &grid, None).unwrap();
        assert!(s.min_incoherent() >= -1e-10);
        assert!(s.sum_rule_error() < 1e-3, "{}", s.sum_rule_error());
    }

    #[test]
    fn short_tau_max_is_rejected() {
        let atom = AtomModel::two_level(1.0, 1.0, 0.0);
        let err = emission_spectrum(&atom, &[0.0], Some(2.0)).unwrap_err();
        assert!(matches!(err, Error::CorrelationNotConverged { .. }));
        assert!(emission_spectrum(&atom, &[0.0], Some(40.0)).is_ok());
    }

    #[test]
    fn no_decay_channel_is_refused() {
        let atom = AtomModel::two_level(1.0, 0.0, 0.0);
        assert!(matches!(emission_spectrum(&atom, &[0.0], None), Err(Error::NoEmission)));
    }

    #[test]
    fn undriven_atom_has_empty_spectrum() {
        let atom = AtomModel::two_level(0.0, 1.0, 0.0);
        let s = emission_spectrum(&atom, &[-1.0, 0.0, 1.0], None).unwrap();
        assert_eq!(s.total_power, 0.0);
        assert!(s.incoherent.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sinh_grid_shape() {
        let g = sinh_grid(10.0, 0.01, 100);
        assert_eq!(g.len(), 101);
        assert_eq!(g[50], 0.0);
        assert!((g[100] - 10.0).abs() < 1e-9 && (g[0] + 10.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn csv_header_lines() {
        let s = mollow_oracle(1.0, 1.0, 0.0, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &[("maxima".into(), "0".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# coherent_weight = "));
        assert_eq!(lines[3], "# maxima = 0");
        assert_eq!(lines[4], "delta,incoherent_density");
        assert_eq!(lines.len(), 7);
    }

    fn shelving(rabi_weak: f64) -> VSystemParams {
        VSystemParams {
            a_strong: 1.0,
            a_weak: 1e-4,
            rabi_strong: 0.5,
            rabi_weak,
            detuning_strong: 0.0,
            detuning_weak: 0.0,
        }
    }

    #[test]
    fn shelving_line_centre_has_narrow_component() {
        let p = shelving(5e-3);
        let (spec, dec) = dehmelt_complete_spectrum(&p, &dehmelt_grid(&p)).unwrap();
        assert!(dec.narrow_present, "{dec:?}");
        assert!(dec.narrow_width < NARROW_RATIO * dec.broad_width);
        let slow = dec.slow_rate.unwrap();
        assert!((dec.narrow_width / (2.0 * slow) - 1.0).abs() < 0.05, "{dec:?}");
        assert!(spec.min_incoherent() >= -1e-10);
        assert!(spec.sum_rule_error() < 1e-3);
    }

    #[test]
    fn no_narrow_component_without_shelving_drive() {
        let p = shelving(0.0);
        let (_, dec) = dehmelt_complete_spectrum(&p, &dehmelt_grid(&p)).unwrap();
        assert!(!dec.narrow_present, "{dec:?}");
        let p = shelving(5e-3);
        let (spec, dec) = light_period_spectrum(&p, &dehmelt_grid(&p)).unwrap();
        assert!(!dec.narrow_present, "{dec:?}");
        let oracle = mollow_oracle(0.5, 1.0, 0.0, &spec.delta_grid).unwrap();
        assert!((spec.total_power - oracle.total_power).abs() < 1e-12);
        for (x, y) in spec.incoherent.iter().zip(&oracle.incoherent) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn narrow_width_grows_with_shelving_rate() {
        let widths: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|k| {
                let p = shelving(5e-3 * k);
                dehmelt_complete_spectrum(&p, &dehmelt_grid(&p)).unwrap().1.narrow_width
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] >= w[0]), "{widths:?}");
    }

    #[test]
    fn decomposition_is_stable_under_grid_refinement() {
        let p = shelving(5e-3);
        let (_, a) = dehmelt_complete_spectrum(&p, &dehmelt_grid(&p)).unwrap();
        let (_, b) = dehmelt_complete_spectrum(&p, &sinh_grid(4.0, 5e-7, 3201)).unwrap();
        assert!((a.narrow_width / b.narrow_width - 1.0).abs() < 5e-3);
        assert!((a.broad_width / b.broad_width - 1.0).abs() < 5e-3);
    }
}
