// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Line-centre decomposition into a broad and a narrow Lorentzian.
//!
//! Both Lorentzians are centred at Δ = 0 and have unit area, so the model
//! S(Δ) ≈ a_b L(Δ; w_b) + a_n L(Δ; w_n) is linear in the non-negative areas.
//! The areas are eliminated by least squares for given widths (variable
//! projection) and the two log-widths are optimised by a grid scan followed
//! by Nelder–Mead.

use serde::Serialize;

use super::SpectrumResult;
use crate::error::{Error, Result};

/// Relative residual above which the decomposition is rejected.
pub const MAX_RELATIVE_RESIDUAL: f64 = 0.05;
/// A narrow component must be at least this much narrower than the broad one.
pub const NARROW_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakDecomposition {
    /// Full width at half maximum of the broad component.
    pub broad_width: f64,
    pub broad_area: f64,
    /// Full width at half maximum of the narrow component.
    pub narrow_width: f64,
    pub narrow_area: f64,
    /// Weight of the δ-peak, copied from the spectrum.
    pub coherent_weight: f64,
    pub center_height: f64,
    /// Largest |model − data| inside the window.
    pub max_residual: f64,
    /// `max_residual / center_height`.
    pub relative_residual: f64,
    pub narrow_present: bool,
    pub window: f64,
    /// Slowest Liouvillian decay rate, when known; the narrow component of a
    /// telegraph-modulated line has FWHM ≈ 2 × this.
    pub slow_rate: Option<f64>,
}

impl PeakDecomposition {
    pub fn narrow_height(&self) -> f64 {
        if self.narrow_area > 0.0 {
            self.narrow_area * lorentzian(0.0, self.narrow_width)
        } else {
            0.0
        }
    }
}

/// Unit-area Lorentzian with full width `w`.
pub fn lorentzian(d: f64, w: f64) -> f64 {
    let g = 0.5 * w;
    g / (std::f64::consts::PI * (d * d + g * g))
}

/// Non-negative least squares for two columns: (areas, residual sum of squares).
fn nnls2(x0: &[f64], x1: &[f64], y: &[f64]) -> ([f64; 2], f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let (a00, a01, a11) = (dot(x0, x0), dot(x0, x1), dot(x1, x1));
    let (b0, b1) = (dot(x0, y), dot(x1, y));
    let yy = dot(y, y);
    // SSR of coefficients c: yy − 2 c·b + cᵀ A c
    let ssr = |c0: f64, c1: f64| yy - 2.0 * (c0 * b0 + c1 * b1) + c0 * c0 * a00 + 2.0 * c0 * c1 * a01 + c1 * c1 * a11;
    let mut best = ([0.0, 0.0], yy);
    let det = a00 * a11 - a01 * a01;
    if det > 1e-14 * a00 * a11 {
        let c0 = (b0 * a11 - b1 * a01) / det;
        let c1 = (a00 * b1 - a01 * b0) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            return ([c0, c1], ssr(c0, c1).max(0.0));
        }
    }
    if a00 > 0.0 {
        let c0 = (b0 / a00).max(0.0);
        let v = ssr(c0, 0.0);
        if v < best.1 {
            best = ([c0, 0.0], v);
        }
    }
    if a11 > 0.0 {
        let c1 = (b1 / a11).max(0.0);
        let v = ssr(0.0, c1);
        if v < best.1 {
            best = ([0.0, c1], v);
        }
    }
    (best.0, best.1.max(0.0))
}

struct Problem<'a> {
    d: &'a [f64],
    s: &'a [f64],
}

impl Problem<'_> {
    fn columns(&self, w: f64) -> Vec<f64> {
        self.d.iter().map(|&x| lorentzian(x, w)).collect()
    }

    /// (areas ordered broad, narrow; SSR) for log-widths `p`.
    fn solve(&self, p: [f64; 2]) -> ([f64; 2], f64, [f64; 2]) {
        let (wa, wb) = (p[0].exp(), p[1].exp());
        let (broad, narrow) = if wa >= wb { (wa, wb) } else { (wb, wa) };
        let (areas, ssr) = nnls2(&self.columns(broad), &self.columns(narrow), self.s);
        (areas, ssr, [broad, narrow])
    }
}

/// Nelder–Mead on two parameters.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: f64, iters: usize) -> [f64; 2] {
    let mut simplex = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut vals = simplex.map(&f);
    for _ in 0..iters {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|k| simplex[k]);
        vals = idx.map(|k| vals[k]);
        let size = (simplex[1][0] - simplex[0][0]).abs().max((simplex[2][0] - simplex[0][0]).abs())
            + (simplex[1][1] - simplex[0][1]).abs().max((simplex[2][1] - simplex[0][1]).abs());
        if size < 1e-10 {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let refl = along(-1.0);
        let fr = f(refl);
        if fr < vals[0] {
            let exp = along(-2.0);
            let fe = f(exp);
            if fe < fr {
                simplex[2] = exp;
                vals[2] = fe;
            } else {
                simplex[2] = refl;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = refl;
            vals[2] = fr;
        } else {
            let con = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fc = f(con);
            if fc < vals[2].min(fr) {
                simplex[2] = con;
                vals[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    vals[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    simplex[best]
}

/// Fit the incoherent density on |Δ| ≤ `window`.
pub fn decompose_line_center(spec: &SpectrumResult, window: f64) -> Result<PeakDecomposition> {
    if !(window > 0.0) {
        return Err(Error::InvalidArgument(format!("fit window must be positive, got {window}")));
    }
    let (d, s): (Vec<f64>, Vec<f64>) = spec
        .delta_grid
        .iter()
        .zip(&spec.incoherent)
        .filter(|(x, _)| x.abs() <= window)
        .map(|(x, y)| (*x, *y))
        .unzip();
    if d.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "only {} grid points inside the fit window",
            d.len()
        )));
    }
    let center_height = spec.center_value();
    if !(center_height > 0.0) {
        return Err(Error::FitFailure {
            residual: f64::NAN,
            height: center_height,
        });
    }
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let min_spacing = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min);
    let lo = (0.5 * min_spacing).ln();
    let hi = (20.0 * window).ln();
    let problem = Problem { d: &d, s: &s };
    let objective = |p: [f64; 2]| problem.solve(p).1;

    let n = 48;
    let grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let mut best = ([grid[0], grid[0]], f64::INFINITY);
    for (i, &a) in grid.iter().enumerate() {
        for &b in &grid[..=i] {
            let v = objective([a, b]);
            if v < best.1 {
                best = ([a, b], v);
            }
        }
    }
    let step = (hi - lo) / (n - 1) as f64;
    let p = nelder_mead(objective, best.0, step, 2000);
    let (mut areas, _, [mut broad_width, mut narrow_width]) = problem.solve(p);
    // A lone component is reported as the broad one.
    if areas[0] == 0.0 && areas[1] > 0.0 {
        areas = [areas[1], 0.0];
        broad_width = narrow_width;
    }
    let max_residual = d
        .iter()
        .zip(&s)
        .map(|(&x, &y)| (areas[0] * lorentzian(x, broad_width) + areas[1] * lorentzian(x, narrow_width) - y).abs())
        .fold(0.0, f64::max);
    let relative_residual = max_residual / center_height;
    if relative_residual > MAX_RELATIVE_RESIDUAL {
        return Err(Error::FitFailure {
            residual: max_residual,
            height: center_height,
        });
    }
    let narrow_height = areas[1] * lorentzian(0.0, narrow_width);
    if areas[1] == 0.0 {
        narrow_width = 0.0;
    }
    Ok(PeakDecomposition {
        broad_width,
        broad_area: areas[0],
        narrow_width,
        narrow_area: areas[1],
        coherent_weight: spec.coherent_weight,
        center_height,
        max_residual,
        relative_residual,
        narrow_present: areas[1] > 0.0 && narrow_width < NARROW_RATIO * broad_width && narrow_height > max_residual,
        window,
        slow_rate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::sinh_grid;

    fn synthetic(grid: &[f64], parts: &[(f64, f64)]) -> SpectrumResult {
        SpectrumResult {
            delta_grid: grid.to_vec(),
            incoherent: grid
                .iter()
                .map(|&x| parts.iter().map(|&(a, w)| a * lorentzian(x, w)).sum())
                .collect(),
            coherent_weight: 0.0,
            total_power: parts.iter().map(|p| p.0).sum(),
            tau_max: 0.0,
            correlation_residual: 0.0,
        }
    }

    #[test]
    fn recovers_two_known_lorentzians() {
        let grid = sinh_grid(2.0, 1e-5, 801);
        let spec = synthetic(&grid, &[(0.05, 0.9), (0.02, 1e-3)]);
        let dec = decompose_line_center(&spec, 0.5).unwrap();
        assert!((dec.broad_width / 0.9 - 1.0).abs() < 1e-4, "{dec:?}");
        assert!((dec.narrow_width / 1e-3 - 1.0).abs() < 1e-4, "{dec:?}");
        assert!((dec.narrow_area / 0.02 - 1.0).abs() < 1e-4);
        assert!(dec.narrow_present);
    }

    #[test]
    fn single_lorentzian_has_no_narrow_part() {
        let grid = sinh_grid(2.0, 1e-5, 801);
        let spec = synthetic(&grid, &[(0.05, 0.9)]);
        let dec = decompose_line_center(&spec, 0.5).unwrap();
        assert!(!dec.narrow_present, "{dec:?}");
        assert!((dec.broad_area + dec.narrow_area - 0.05).abs() < 1e-6);
        if dec.narrow_area == 0.0 {
            assert_eq!(dec.narrow_width, 0.0);
            assert!((dec.broad_width / 0.9 - 1.0).abs() < 1e-4, "{dec:?}");
        }
        assert!(dec.relative_residual < 1e-4);
    }

    #[test]
    fn gaussian_line_is_rejected() {
        let grid = sinh_grid(2.0, 1e-3, 401);
        let mut spec = synthetic(&grid, &[(1.0, 1.0)]);
        spec.incoherent = grid.iter().map(|x| (-x * x / 0.02).exp()).collect();
        assert!(matches!(decompose_line_center(&spec, 1.0), Err(Error::FitFailure { .. })));
    }

    #[test]
    fn nnls_respects_signs() {
        let x0 = [1.0, 0.0, 0.0];
        let x1 = [0.0, 1.0, 0.0];
        let (c, ssr) = nnls2(&x0, &x1, &[2.0, -1.0, 0.0]);
        assert_eq!(c, [2.0, 0.0]);
        assert!((ssr - 1.0).abs() < 1e-12);
    }
}
