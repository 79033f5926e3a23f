// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Conditional (no-photon) evolution and quantum trajectories.
//!
//! Between photon detections the atom is described by a non-normalised state
//! |ψ(t)⟩ = U_cond(t) |ψ(0)⟩ with U_cond = exp(−i H_cond t); its squared norm is
//! the probability that no photon has been emitted by time `t`. A detection
//! happens at a random time with density w₁(t) = −d‖ψ‖²/dt = 2⟨ψ|Γ|ψ⟩, after
//! which the state is reset through one of the jump operators C_k and the
//! conditional evolution starts afresh.

mod batch;
mod propagator;
mod trajectory;

pub use batch::{par_map, run_batch, seed_for, splitmix64};
pub use propagator::{ConditionalPropagator, Crossing, SamplerSettings};
pub use trajectory::{
    read_jump_record, reset_state, sample_jump, simulate_trajectory, JumpEvent, JumpRecordHeader,
    StateSample, Trajectory, TrajectoryOptions, TrajectorySimulator,
};

use crate::atom::{build_h_cond, AtomModel};
use crate::error::{Error, Result};
use crate::linalg::{c, norm_sqr, propagator, trace, CMatrix, CVector};

/// Growth of ‖ψ‖² tolerated before the evolution is declared non-contractive.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalState {
    pub amplitudes: CVector,
    pub t: f64,
}

impl ConditionalState {
    pub fn new(amplitudes: CVector, t: f64) -> Self {
        Self { amplitudes, t }
    }

    /// Level `k` of an `n`-level atom at time zero.
    pub fn level(n: usize, k: usize) -> Self {
        Self::new(crate::linalg::basis(n, k), 0.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self::new(&self.amplitudes / c(n), self.t)
    }
}

/// Probability ‖ψ‖² that no photon has been detected, clamped to [0, 1].
pub fn no_photon_probability(state: &ConditionalState) -> f64 {
    state.norm_sqr().clamp(0.0, 1.0)
}

/// Jump operator C = Σ √A_iα |α⟩⟨i| for one lower level α.
///
/// Without cross damping there is one operator per decay channel. With cross
/// damping, channels sharing a lower level are merged into one operator so
/// that ½ Σ C†C still reproduces the damping matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpOperator {
    /// Indices into `AtomModel::decay_channels`.
    pub channels: Vec<usize>,
    pub lower: usize,
    pub matrix: CMatrix,
}

pub fn jump_operators(atom: &AtomModel) -> Result<Vec<JumpOperator>> {
    atom.validate()?;
    let n = atom.n_levels;
    let mut ops: Vec<JumpOperator> = Vec::new();
    for (k, ch) in atom.decay_channels.iter().enumerate() {
        let amp = c(ch.a_coeff.sqrt());
        let merge = if atom.cross_damping {
            ops.iter_mut().find(|op| op.lower == ch.lower)
        } else {
            None
        };
        match merge {
            Some(op) => {
                op.channels.push(k);
                op.matrix[(ch.lower, ch.upper)] += amp;
            }
            None => {
                let mut matrix = CMatrix::zeros(n, n);
                matrix[(ch.lower, ch.upper)] = amp;
                ops.push(JumpOperator {
                    channels: vec![k],
                    lower: ch.lower,
                    matrix,
                });
            }
        }
    }
    Ok(ops)
}

/// Propagate a conditional state to `t1` with U_cond = exp(−i H_cond (t1 − t)).
///
/// The exponential is checked against two half steps; a mismatch above `tol`
/// (relative to ‖ψ‖) is reported as a step failure.
pub fn evolve_cond(
    state: &ConditionalState,
    h_cond: &CMatrix,
    t1: f64,
    tol: f64,
) -> Result<ConditionalState> {
    let dt = t1 - state.t;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cannot evolve from t = {} to t = {t1}",
            state.t
        )));
    }
    let full = propagator(h_cond, dt) * &state.amplitudes;
    let half = propagator(h_cond, 0.5 * dt);
    let twice = &half * (&half * &state.amplitudes);
    let scale = state.amplitudes.norm().max(f64::MIN_POSITIVE);
    let err = (&full - &twice).norm() / scale;
    if !err.is_finite() || err > tol.max(1e-13) {
        return Err(Error::StepFailure(format!(
            "exponential mismatch {err:.3e} over dt = {dt}"
        )));
    }
    let before = state.norm_sqr();
    let after = norm_sqr(&full);
    if after > before * (1.0 + NORM_TOLERANCE) + f64::EPSILON || after > 1.0 + NORM_TOLERANCE {
        return Err(Error::NonContractive { before, after });
    }
    Ok(ConditionalState::new(full, t1))
}

/// Waiting-time density w₁(t) = 2⟨ψ(t)|Γ|ψ(t)⟩ for the first detection, on an
/// increasing time grid starting from `psi0` at t = 0.
pub fn waiting_density(atom: &AtomModel, psi0: &CVector, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let prop = ConditionalPropagator::new(&build_h_cond(atom)?)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut psi = psi0.clone();
    let mut t = 0.0;
    for &tg in t_grid {
        if tg < t {
            return Err(Error::InvalidArgument("time grid must be increasing".into()));
        }
        psi = prop.propagate(&psi, tg - t)?;
        t = tg;
        out.push((tg, prop.decay_rate(&psi)));
    }
    Ok(out)
}

/// Conditional density matrix ρ⁰(t) of the sub-ensemble with no detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensity {
    pub rho0: CMatrix,
    pub t: f64,
}

impl ConditionalDensity {
    /// tr ρ⁰(t), the no-photon probability.
    pub fn no_photon_probability(&self) -> f64 {
        trace(&self.rho0).re
    }
}

/// ρ⁰(t) = U_cond(t) ρ U_cond(t)†.
pub fn evolve_conditional_density(rho0: &CMatrix, h_cond: &CMatrix, t: f64) -> Result<ConditionalDensity> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot evolve to t = {t}")));
    }
    let tr0 = trace(rho0);
    if tr0.re > 1.0 + NORM_TOLERANCE || tr0.im.abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("initial trace {tr0} exceeds one")));
    }
    let u = propagator(h_cond, t);
    let rho = &u * rho0 * u.adjoint();
    let tr = trace(&rho).re;
    if tr > tr0.re * (1.0 + NORM_TOLERANCE) + f64::EPSILON {
        return Err(Error::NonContractive { before: tr0.re, after: tr });
    }
    Ok(ConditionalDensity { rho0: rho, t })
}
