// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Ensemble description: the optical Bloch (Lindblad) equation
//!
//! ```text
//! dρ/dt = −i[H_A, ρ] + Σ_k ( C_k ρ C_k† − ½{C_k†C_k, ρ} )
//! ```
//!
//! in dense vectorised form (column stacking, `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`).
//! The anticommutator part together with the commutator is exactly the
//! no-jump generator ρ ↦ −i(H_cond ρ − ρ H_cond†), so this module is an
//! independent check on the trajectory engine rather than a reuse of it.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::atom::{build_h_cond, AtomModel};
use crate::dynamics::{jump_operators, run_batch, TrajectoryOptions, TrajectorySimulator};
use crate::error::{Error, Result};
use crate::linalg::{
    c, expm, hermitian_deviation, kron, min_eigenvalue, projector, trace, trace_distance, unvectorize,
    vectorize, CMatrix, CVector, C64,
};

/// Trace drift tolerated along a master-equation solution.
pub const TRACE_TOLERANCE: f64 = 1e-9;
/// Most negative eigenvalue tolerated in a density matrix.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: CMatrix,
    pub t: f64,
}

impl DensityMatrix {
    pub fn trace(&self) -> f64 {
        trace(&self.rho).re
    }

    pub fn population(&self, level: usize) -> f64 {
        self.rho[(level, level)].re
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.rho)
    }
}

/// Lindblad generator acting on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    pub liouvillian: CMatrix,
    n_levels: usize,
}

impl Superoperator {
    /// Build from a Hermitian Hamiltonian and jump operators.
    pub fn lindblad(h: &CMatrix, jumps: &[CMatrix]) -> Self {
        let n = h.nrows();
        let id = CMatrix::identity(n, n);
        let mut l = (kron(&id, h) - kron(&h.transpose(), &id)) * C64::new(0.0, -1.0);
        for cop in jumps {
            let cdc = cop.adjoint() * cop;
            l += kron(&cop.conjugate(), cop);
            l -= (kron(&id, &cdc) + kron(&cdc.transpose(), &id)) * c(0.5);
        }
        Self {
            liouvillian: l,
            n_levels: n,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        unvectorize(&(&self.liouvillian * vectorize(rho)), self.n_levels)
    }

    /// `exp(L t)` on vectorised density matrices.
    pub fn propagator(&self, t: f64) -> CMatrix {
        expm(&(&self.liouvillian * c(t)))
    }

    /// ‖vec(1)† L‖: zero for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let tr = vectorize(&CMatrix::identity(self.n_levels, self.n_levels));
        (tr.adjoint() * &self.liouvillian).norm()
    }

    /// Eigenvalues of the generator.
    pub fn eigenvalues(&self) -> Vec<C64> {
        crate::linalg::eigenvalues(&self.liouvillian)
    }
}

/// Jump operators as plain matrices.
fn jump_matrices(atom: &AtomModel) -> Result<Vec<CMatrix>> {
    Ok(jump_operators(atom)?.into_iter().map(|op| op.matrix).collect())
}

pub fn build_liouvillian(atom: &AtomModel) -> Result<Superoperator> {
    Ok(Superoperator::lindblad(&atom.h_atomic()?, &jump_matrices(atom)?))
}

/// Generator of the no-jump part of the evolution, ρ ↦ −i(H_cond ρ − ρ H_cond†).
pub fn no_jump_generator(atom: &AtomModel) -> Result<CMatrix> {
    let h = build_h_cond(atom)?;
    let id = CMatrix::identity(atom.n_levels, atom.n_levels);
    Ok((kron(&id, &h) - kron(&h.conjugate(), &id)) * C64::new(0.0, -1.0))
}

fn check_density(rho: &CMatrix, what: &str) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::InvalidArgument(format!("{what} is not square")));
    }
    if hermitian_deviation(rho) > 1e-10 {
        return Err(Error::InvalidArgument(format!("{what} is not Hermitian")));
    }
    let tr = trace(rho).re;
    if (tr - 1.0).abs() > TRACE_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} has trace {tr}")));
    }
    if min_eigenvalue(rho) < -POSITIVITY_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} is not positive")));
    }
    Ok(())
}

/// Integrate the master equation from `rho0` (at t = 0) onto an increasing
/// time grid.
///
/// Each step is an exact matrix exponential of the generator; propagators
/// are cached per distinct step length. `tol` bounds the trace drift and
/// Hermiticity loss along the solution.
pub fn solve_master(
    atom: &AtomModel,
    rho0: &CMatrix,
    t_grid: &[f64],
    tol: f64,
) -> Result<Vec<DensityMatrix>> {
    let l = build_liouvillian(atom)?;
    solve_with(&l, rho0, t_grid, tol)
}

pub fn solve_with(
    l: &Superoperator,
    rho0: &CMatrix,
    t_grid: &[f64],
    tol: f64,
) -> Result<Vec<DensityMatrix>> {
    let n = l.n_levels();
    if rho0.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "density matrix has dimension {}, atom has {n} levels",
            rho0.nrows()
        )));
    }
    check_density(rho0, "initial density matrix")?;
    let tol = tol.max(TRACE_TOLERANCE);
    let mut cache: HashMap<u64, CMatrix> = HashMap::new();
    let mut v = vectorize(rho0);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &tg in t_grid {
        let dt = tg - t;
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument("time grid must be increasing and start at t ≥ 0".into()));
        }
        if dt > 0.0 {
            let u = cache.entry(dt.to_bits()).or_insert_with(|| l.propagator(dt));
            v = &*u * &v;
        }
        t = tg;
        let rho = unvectorize(&v, n);
        let tr = trace(&rho);
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol || hermitian_deviation(&rho) > tol {
            return Err(Error::StepFailure(format!(
                "master solution lost trace or Hermiticity at t = {tg} (trace {tr})"
            )));
        }
        out.push(DensityMatrix { rho, t: tg });
    }
    Ok(out)
}

/// Unique stationary state of the master equation.
pub fn steady_state(atom: &AtomModel) -> Result<DensityMatrix> {
    let l = build_liouvillian(atom)?;
    Ok(DensityMatrix {
        rho: steady_state_of(&l)?,
        t: f64::INFINITY,
    })
}

/// Null vector of `L` normalised to unit trace. Fails if the null space is
/// degenerate.
pub fn steady_state_of(l: &Superoperator) -> Result<CMatrix> {
    let n = l.n_levels();
    let m = &l.liouvillian;
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max).max(1.0);
    let zeros = svd.singular_values.iter().filter(|&&s| s <= 1e-10 * smax).count();
    if zeros != 1 {
        return Err(Error::DegenerateSteadyState { multiplicity: zeros });
    }
    // Replace the (0,0) row, which is linearly dependent on the others through
    // trace preservation, by the trace functional.
    let mut a = m.clone();
    for col in 0..n * n {
        a[(0, col)] = if col % (n + 1) == 0 { c(1.0) } else { c(0.0) };
    }
    let mut rhs = CVector::zeros(n * n);
    rhs[0] = c(1.0);
    let v = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::StepFailure("steady-state system is singular".into()))?;
    let rho = unvectorize(&v, n);
    let rho = (&rho + rho.adjoint()) * c(0.5);
    let residual = (m * vectorize(&rho)).norm();
    if residual > 1e-10 * smax {
        return Err(Error::StepFailure(format!("steady-state residual {residual:.3e}")));
    }
    Ok(rho)
}

/// Photon emission rate Σ_k tr[C_k†C_k ρ].
pub fn emission_rate(atom: &AtomModel, rho: &CMatrix) -> Result<f64> {
    Ok(jump_matrices(atom)?
        .iter()
        .map(|cop| trace(&(cop.adjoint() * cop * rho)).re)
        .sum())
}

/// Two-time correlation g(τ) = tr[A e^{Lτ}(B ρ_ss)] = ⟨A(τ) B(0)⟩ in the steady
/// state (quantum regression), on an increasing grid of τ ≥ 0.
pub fn two_time_correlation(
    atom: &AtomModel,
    a: &CMatrix,
    b: &CMatrix,
    tau_grid: &[f64],
) -> Result<Vec<C64>> {
    let l = build_liouvillian(atom)?;
    let rho = steady_state_of(&l)?;
    Ok(regression(&l, a, &(b * &rho), tau_grid)?)
}

/// tr[A e^{Lτ} X] on an increasing τ grid.
pub fn regression(l: &Superoperator, a: &CMatrix, x: &CMatrix, tau_grid: &[f64]) -> Result<Vec<C64>> {
    let n = l.n_levels();
    let mut cache: HashMap<u64, CMatrix> = HashMap::new();
    let mut v = vectorize(x);
    let mut tau = 0.0;
    let mut out = Vec::with_capacity(tau_grid.len());
    for &tg in tau_grid {
        let dt = tg - tau;
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument("tau grid must be increasing from 0".into()));
        }
        if dt > 0.0 {
            let u = cache.entry(dt.to_bits()).or_insert_with(|| l.propagator(dt));
            v = &*u * &v;
        }
        tau = tg;
        out.push(trace(&(a * unvectorize(&v, n))));
    }
    Ok(out)
}

/// Trajectory average versus master equation on a common time grid.
#[derive(Debug, Clone, Serialize)]
pub struct UnravelingReport {
    pub t_grid: Vec<f64>,
    pub n_traj: usize,
    /// Trace distance between the trajectory average and the master solution.
    pub trace_distance: Vec<f64>,
    /// Monte-Carlo error estimate ½√n · sqrt(Σ_ij Var(ρ_ij) / n_traj).
    pub mc_error: Vec<f64>,
    pub max_trace_distance: f64,
    pub max_mc_error: f64,
    #[serde(skip)]
    pub averaged: Vec<CMatrix>,
    /// Sample variance of each matrix element over trajectories.
    #[serde(skip)]
    pub element_variance: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub master: Vec<DensityMatrix>,
}

impl UnravelingReport {
    /// Standard error of the population of `level` at grid index `k`.
    pub fn population_std_error(&self, k: usize, level: usize) -> f64 {
        (self.element_variance[k][(level, level)] / self.n_traj as f64).sqrt()
    }

    pub fn within(&self, factor: f64) -> bool {
        self.max_trace_distance <= factor * self.max_mc_error
    }
}

/// Average normalised trajectory projectors over `n_traj` trajectories and
/// compare with the master-equation solution started from |ψ0⟩⟨ψ0|.
pub fn compare_unraveling(
    atom: &AtomModel,
    psi0: &CVector,
    t_grid: &[f64],
    n_traj: usize,
    seed0: u64,
) -> Result<UnravelingReport> {
    compare_unraveling_jobs(atom, psi0, t_grid, n_traj, seed0, rayon::current_num_threads())
}

pub fn compare_unraveling_jobs(
    atom: &AtomModel,
    psi0: &CVector,
    t_grid: &[f64],
    n_traj: usize,
    seed0: u64,
    jobs: usize,
) -> Result<UnravelingReport> {
    if n_traj < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trajectories, got {n_traj}")));
    }
    let n = atom.n_levels;
    let t_end = t_grid.last().copied().unwrap_or(0.0);
    let sim = TrajectorySimulator::new(atom)?;
    let opts = TrajectoryOptions::sampled(t_grid.to_vec());
    let trajs = run_batch(&sim, psi0, t_end, n_traj, seed0, jobs, &opts)?;

    let m = t_grid.len();
    let mut sum = vec![CMatrix::zeros(n, n); m];
    let mut sum_sq = vec![DMatrix::<f64>::zeros(n, n); m];
    for traj in &trajs {
        if traj.samples.len() != m {
            return Err(Error::StepFailure("trajectory missed a sample time".into()));
        }
        for (k, s) in traj.samples.iter().enumerate() {
            let p = projector(&s.amplitudes);
            sum_sq[k] += p.map(|z| z.norm_sqr());
            sum[k] += p;
        }
    }
    let nt = n_traj as f64;
    let averaged: Vec<CMatrix> = sum.iter().map(|s| s / c(nt)).collect();
    let element_variance: Vec<DMatrix<f64>> = averaged
        .iter()
        .zip(&sum_sq)
        .map(|(mean, sq)| {
            DMatrix::from_fn(n, n, |i, j| {
                ((sq[(i, j)] / nt - mean[(i, j)].norm_sqr()) * nt / (nt - 1.0)).max(0.0)
            })
        })
        .collect();
    let master = solve_master(atom, &projector(psi0), t_grid, 1e-8)?;
    let trace_distance: Vec<f64> = averaged
        .iter()
        .zip(&master)
        .map(|(avg, dm)| trace_distance(avg, &dm.rho))
        .collect();
    let mc_error: Vec<f64> = element_variance
        .iter()
        .map(|var| 0.5 * (n as f64).sqrt() * (var.sum() / nt).sqrt())
        .collect();
    Ok(UnravelingReport {
        t_grid: t_grid.to_vec(),
        n_traj,
        max_trace_distance: trace_distance.iter().copied().fold(0.0, f64::max),
        max_mc_error: mc_error.iter().copied().fold(0.0, f64::max),
        trace_distance,
        mc_error,
        averaged,
        element_variance,
        master,
    })
}

/// CSV of selected density-matrix elements: `t, rho_ij_re, rho_ij_im, ...`.
pub fn write_density_csv<W: Write>(states: &[DensityMatrix], pairs: &[(usize, usize)], mut out: W) -> Result<()> {
    let mut head = vec!["t".to_string()];
    for &(i, j) in pairs {
        head.push(format!("rho_{i}{j}_re"));
        head.push(format!("rho_{i}{j}_im"));
    }
    writeln!(out, "{}", head.join(","))?;
    for dm in states {
        let mut row = vec![dm.t.to_string()];
        for &(i, j) in pairs {
            if i >= dm.rho.nrows() || j >= dm.rho.ncols() {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    n_levels: dm.rho.nrows(),
                });
            }
            row.push(dm.rho[(i, j)].re.to_string());
            row.push(dm.rho[(i, j)].im.to_string());
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
