// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Quantum jump / Monte-Carlo wave-function simulation of laser-driven
//! few-level atoms.
//!
//! The crate is organised around the objects a single fluorescing atom is
//! described by:
//!
//! * [`atom`]: levels, decay channels and laser drives, from which the damping
//!   matrix and the non-Hermitian conditional Hamiltonian are built.
//! * [`dynamics`]: conditional (no-photon) evolution, jump-time sampling,
//!   resets and full quantum trajectories, plus seeded batch runs.
//! * [`master`]: the ensemble description (Lindblad master equation), steady
//!   states and two-time correlations, used as an independent oracle.
//! * [`periods`]: photon-record analytics (light/dark periods, waiting times,
//!   ergodicity).
//! * [`spectra`]: resonance-fluorescence spectra and peak decomposition.
//! * [`experiment`]: JSON experiment configurations and the batch runner
//!   behind the `qjump` binary.
//!
//! Units: ħ = 1 and every rate, Rabi frequency and detuning is expressed in a
//! common reference rate (usually the largest Einstein coefficient). Times are
//! in the inverse of that rate.

pub mod atom;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod master;
pub mod periods;
pub mod presets;
pub mod spectra;

pub use atom::{AtomModel, DampingMatrix, DecayChannel, DriveField, VSystemParams};
pub use dynamics::{ConditionalState, JumpOperator, Trajectory, TrajectorySimulator};
pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
