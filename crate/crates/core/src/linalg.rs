// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra used throughout the crate.
//!
//! Everything here works on small matrices (n ≤ ~10 levels, n² ≤ ~100 for
//! superoperators), so plain dense `nalgebra` storage is used everywhere.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `exp(m)` by scaling and squaring with a Padé approximant.
pub fn expm(m: &CMatrix) -> CMatrix {
    if m.nrows() == 0 {
        return m.clone();
    }
    m.exp()
}

/// `exp(-i h t)` for a (possibly non-Hermitian) generator `h`.
pub fn propagator(h: &CMatrix, t: f64) -> CMatrix {
    expm(&(h * C64::new(0.0, -t)))
}

/// Unit vector `|k⟩` in dimension `n`.
pub fn basis(n: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[k] = ONE;
    v
}

/// `|i⟩⟨j|` in dimension `n`.
pub fn ket_bra(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = ONE;
    m
}

/// `|ψ⟩⟨ψ|`.
pub fn projector(psi: &CVector) -> CMatrix {
    psi * psi.adjoint()
}

pub fn norm_sqr(psi: &CVector) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

/// `⟨ψ|m|ψ⟩`.
pub fn expectation(m: &CMatrix, psi: &CVector) -> C64 {
    psi.dotc(&(m * psi))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().sum()
}

/// Largest entrywise deviation of `m` from its adjoint.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// Eigenvalues (ascending) of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Trace distance ½‖a − b‖₁ between two Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

/// Frobenius norm.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Column-stacking vectorisation: `vec(ρ)[i + n j] = ρ[i, j]`.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Eigenvalues of a general complex matrix, via the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Vec<C64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let schur = nalgebra::Schur::new(m.clone());
    let (_, t) = schur.unpack();
    t.diagonal().iter().copied().collect()
}
