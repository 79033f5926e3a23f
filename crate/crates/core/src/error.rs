// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("level index {index} out of range for a {n_levels}-level atom")]
    IndexOutOfRange { index: usize, n_levels: usize },

    #[error("negative Einstein coefficient {a} on channel {upper}->{lower}")]
    NegativeRate { upper: usize, lower: usize, a: f64 },

    #[error("invalid atom model: {0}")]
    InvalidModel(String),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("propagation failed: {0}")]
    StepFailure(String),

    #[error("conditional norm grew from {before} to {after}")]
    NonContractive { before: f64, after: f64 },

    #[error("no decay channel can act on the pre-jump state")]
    NoDecayPath,

    #[error("steady state is not unique ({multiplicity} zero modes)")]
    DegenerateSteadyState { multiplicity: usize },

    #[error("atom has no radiating decay channel")]
    NoEmission,

    #[error("correlation not converged at tau = {tau}: |g - g_inf| = {residual:.3e} (g(0) = {g0:.3e})")]
    CorrelationNotConverged { tau: f64, residual: f64, g0: f64 },

    #[error("peak decomposition residual {residual:.3e} exceeds 5% of center height {height:.3e}")]
    FitFailure { residual: f64, height: f64 },

    #[error("photon record not strictly increasing at index {index}")]
    UnsortedRecord { index: usize },

    #[error("need at least two detections, got {0}")]
    TooFewDetections(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
