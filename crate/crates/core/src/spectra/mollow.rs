// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Closed-form resonance-fluorescence spectrum of a driven two-level atom.
//!
//! Derivation (ħ = 1, rotating frame, H = −Δ|e⟩⟨e| + (Ω/2)(|e⟩⟨g| + |g⟩⟨e|),
//! decay rate A, real Ω). With s = ⟨σ⁻⟩ and p = ⟨σ_ee⟩ the Bloch vector
//! w = (s, s*, p) obeys dw/dt = M w + b with
//!
//! ```text
//!     ⎡ iΔ − A/2      0        iΩ  ⎤        ⎡ −iΩ/2 ⎤
//! M = ⎢    0      −iΔ − A/2   −iΩ  ⎥,   b = ⎢  iΩ/2 ⎥
//!     ⎣  iΩ/2      −iΩ/2      −A   ⎦        ⎣   0   ⎦
//! ```
//!
//! Steady state: p = (Ω²/4)/(Δ² + A²/4 + Ω²/2), s = iΩ(p − ½)/(A/2 − iΔ).
//!
//! By quantum regression, g(τ) = ⟨σ⁺(0)σ⁻(τ)⟩ is the first component of a
//! vector obeying the same equation, started from ρσ⁺. Its fluctuation
//! δg(τ) = g(τ) − |s|² evolves with M alone from
//!
//! ```text
//! δw(0) = (p − |s|², −s*², −s* p)
//! ```
//!
//! (using σ⁺σ⁺ = 0 and σ⁺σ_ee = 0), so
//!
//! ```text
//! S_inc(Δ') = (A/π) Re[ e₀ᵀ (−iΔ' − M)⁻¹ δw(0) ]
//! ```
//!
//! evaluated below by Cramer's rule. The coherent weight is A|s|² and the
//! total power A p.

use super::SpectrumResult;
use crate::error::{Error, Result};
use crate::linalg::C64;

/// Steady-state (⟨σ⁻⟩, ⟨σ_ee⟩).
pub fn two_level_steady_state(rabi: f64, a: f64, detuning: f64) -> (C64, f64) {
    let p = (rabi * rabi / 4.0) / (detuning * detuning + a * a / 4.0 + rabi * rabi / 2.0);
    let s = C64::new(0.0, rabi) * (p - 0.5) / C64::new(a / 2.0, -detuning);
    (s, p)
}

type M3 = [[C64; 3]; 3];

fn det3(m: &M3) -> C64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Incoherent density and coherent weight of the two-level spectrum.
pub fn mollow_oracle(rabi: f64, a: f64, detuning: f64, delta_grid: &[f64]) -> Result<SpectrumResult> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("decay rate must be positive, got {a}")));
    }
    let (s, p) = two_level_steady_state(rabi, a, detuning);
    let i = C64::new(0.0, 1.0);
    let zero = C64::new(0.0, 0.0);
    let m: M3 = [
        [i * detuning - a / 2.0, zero, i * rabi],
        [zero, -i * detuning - a / 2.0, -i * rabi],
        [i * rabi / 2.0, -i * rabi / 2.0, C64::new(-a, 0.0)],
    ];
    let dw = [C64::new(p - s.norm_sqr(), 0.0), -(s.conj() * s.conj()), -s.conj() * p];
    let incoherent = delta_grid
        .iter()
        .map(|&d| {
            let mut k = [[zero; 3]; 3];
            for r in 0..3 {
                for col in 0..3 {
                    k[r][col] = -m[r][col];
                }
                k[r][r] -= i * d;
            }
            let den = det3(&k);
            let mut k0 = k;
            for (r, row) in k0.iter_mut().enumerate() {
                row[0] = dw[r];
            }
            a / std::f64::consts::PI * (det3(&k0) / den).re
        })
        .collect();
    Ok(SpectrumResult {
        delta_grid: delta_grid.to_vec(),
        incoherent,
        coherent_weight: a * s.norm_sqr(),
        total_power: a * p,
        tau_max: f64::INFINITY,
        correlation_residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_drive_is_mostly_coherent() {
        let r = mollow_oracle(0.1, 1.0, 0.0, &[0.0]).unwrap();
        // coherent / total = 1 / (1 + s), s = 2Ω²/A²
        let sat = 2.0 * 0.01;
        assert!((r.coherent_weight / r.total_power - 1.0 / (1.0 + sat)).abs() < 1e-12);
    }

    #[test]
    fn vanishing_drive_leaves_only_the_coherent_limit() {
        let grid: Vec<f64> = (-50..=50).map(|k| 0.1 * k as f64).collect();
        let r = mollow_oracle(1e-4, 1.0, 0.0, &grid).unwrap();
        assert!(r.incoherent.iter().all(|&x| x.abs() < 1e-15));
        assert!((r.coherent_weight / r.total_power - 1.0).abs() < 1e-7);
    }

    #[test]
    fn resonant_spectrum_is_symmetric() {
        let grid: Vec<f64> = (0..400).map(|k| 0.05 * k as f64).collect();
        let neg: Vec<f64> = grid.iter().map(|d| -d).collect();
        let a = mollow_oracle(10.0, 1.0, 0.0, &grid).unwrap();
        let b = mollow_oracle(10.0, 1.0, 0.0, &neg).unwrap();
        for (x, y) in a.incoherent.iter().zip(&b.incoherent) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn strong_drive_centre_line() {
        // Strong-drive centre line: Lorentzian of half width A/2 carrying half
        // of the incoherent power A/2.
        let a = 1.0;
        let r = mollow_oracle(200.0, a, 0.0, &[0.0]).unwrap();
        let centre = (a / 4.0) / (std::f64::consts::PI * a / 2.0);
        assert!((r.incoherent[0] - centre).abs() < 1e-3 * centre);
    }

    #[test]
    fn steady_state_matches_bloch_fixed_point() {
        let (om, a, d) = (1.7, 0.9, 0.4);
        let (s, p) = two_level_steady_state(om, a, d);
        let i = C64::new(0.0, 1.0);
        let ds = (i * d - a / 2.0) * s + i * om * p - i * om / 2.0;
        let dp = i * om / 2.0 * s - i * om / 2.0 * s.conj() - a * p;
        assert!(ds.norm() < 1e-14 && dp.norm() < 1e-14);
    }
}
