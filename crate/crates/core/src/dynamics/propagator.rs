// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::linalg::{c, expectation, norm_sqr, propagator, CMatrix, CVector, C64};

/// Finest dyadic step is 2^MIN_LEVEL, the coarsest at most 2^MAX_LEVEL.
const MIN_LEVEL: i32 = -36;
const MAX_LEVEL: i32 = 40;
/// Coarsest rung keeps ‖H‖·step below this, so rounding in `exp` stays far
/// below the norm tolerance.
const MAX_PHASE: f64 = 1e4;
/// Searches with an unbounded horizon give up after this much time.
const SEARCH_LIMIT: f64 = 1e15;

/// Tolerances of the jump-time sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    /// Allowed growth of ‖ψ‖² per step before the evolution is declared
    /// non-contractive.
    pub norm_tolerance: f64,
    /// Absolute time resolution of the jump-time search.
    pub time_resolution: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            norm_tolerance: super::NORM_TOLERANCE,
            time_resolution: (MIN_LEVEL as f64).exp2(),
        }
    }
}

/// Outcome of a search for the time at which ‖ψ(t)‖² falls to a threshold.
#[derive(Debug, Clone)]
pub struct Crossing {
    /// Time elapsed from the starting state.
    pub elapsed: f64,
    /// Conditional (non-normalised) state at `elapsed`.
    pub state: CVector,
    /// `false` if the horizon was reached with the norm still above threshold.
    pub jumped: bool,
}

/// Propagator of the conditional evolution for a time-independent H_cond.
///
/// Holds `exp(−i H_cond 2^k)` for a ladder of dyadic steps. Because ‖ψ(t)‖² is
/// non-increasing, the crossing time of any threshold is found by a binary
/// search that tries each rung once, coarsest first.
#[derive(Debug, Clone)]
pub struct ConditionalPropagator {
    h_cond: CMatrix,
    gamma: CMatrix,
    /// (step, exp(−i H step)), ascending in step.
    ladder: Vec<(f64, CMatrix)>,
    settings: SamplerSettings,
}

impl ConditionalPropagator {
    pub fn new(h_cond: &CMatrix) -> Result<Self> {
        Self::with_settings(h_cond, SamplerSettings::default())
    }

    pub fn with_settings(h_cond: &CMatrix, settings: SamplerSettings) -> Result<Self> {
        if !h_cond.is_square() {
            return Err(Error::InvalidArgument("H_cond must be square".into()));
        }
        if !(settings.time_resolution > 0.0 && settings.time_resolution < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "time resolution must lie in (0, 1), got {}",
                settings.time_resolution
            )));
        }
        // Γ = (i/2)(H − H†)
        let gamma = (h_cond - h_cond.adjoint()) * C64::new(0.0, 0.5);
        let finest = settings.time_resolution.log2().floor() as i32;
        let h_norm = h_cond.iter().map(|z| z.norm()).sum::<f64>();
        let coarsest = if h_norm > 0.0 {
            ((MAX_PHASE / h_norm).log2().floor() as i32).clamp(finest, MAX_LEVEL)
        } else {
            MAX_LEVEL
        };
        let mut ladder = Vec::with_capacity((coarsest - finest + 1) as usize);
        for k in finest..=coarsest {
            let dt = (k as f64).exp2();
            let u = propagator(h_cond, dt);
            if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::StepFailure(format!("non-finite propagator at step {dt}")));
            }
            ladder.push((dt, u));
        }
        Ok(Self {
            h_cond: h_cond.clone(),
            gamma,
            ladder,
            settings,
        })
    }

    pub fn h_cond(&self) -> &CMatrix {
        &self.h_cond
    }

    pub fn gamma(&self) -> &CMatrix {
        &self.gamma
    }

    pub fn settings(&self) -> SamplerSettings {
        self.settings
    }

    pub fn dim(&self) -> usize {
        self.h_cond.nrows()
    }

    fn finest(&self) -> f64 {
        self.ladder[0].0
    }

    /// No-photon emission density 2⟨ψ|Γ|ψ⟩ = −d‖ψ‖²/dt.
    pub fn decay_rate(&self, psi: &CVector) -> f64 {
        2.0 * expectation(&self.gamma, psi).re
    }

    /// Second-order Taylor step, only used below the finest rung.
    fn short_step(&self, psi: &CVector, dt: f64) -> CVector {
        if dt == 0.0 {
            return psi.clone();
        }
        let k1 = (&self.h_cond * psi) * C64::new(0.0, -dt);
        let k2 = (&self.h_cond * &k1) * C64::new(0.0, -dt);
        psi + k1 + k2 * c(0.5)
    }

    fn check_contractive(&self, before: f64, after: f64) -> Result<()> {
        if after > before * (1.0 + self.settings.norm_tolerance) + f64::EPSILON {
            Err(Error::NonContractive { before, after })
        } else {
            Ok(())
        }
    }

    /// `U_cond(dt) ψ` for any `dt ≥ 0`.
    pub fn propagate(&self, psi: &CVector, dt: f64) -> Result<CVector> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot propagate by {dt}")));
        }
        let mut out = psi.clone();
        let mut rem = dt;
        let mut norm = norm_sqr(&out);
        for (step, u) in self.ladder.iter().rev() {
            while rem >= *step {
                out = u * &out;
                rem -= step;
                let n = norm_sqr(&out);
                self.check_contractive(norm, n)?;
                norm = n;
            }
        }
        let out = self.short_step(&out, rem);
        self.check_contractive(norm, norm_sqr(&out))?;
        Ok(out)
    }

    /// Find the first time, within `horizon`, at which ‖ψ(t)‖² ≤ `threshold`.
    ///
    /// With an infinite horizon the search stops, reporting no crossing, once
    /// the norm has plateaued (a dark state) or after an astronomically long
    /// time.
    pub fn find_crossing(&self, psi: &CVector, threshold: f64, horizon: f64) -> Result<Crossing> {
        let mut norm = norm_sqr(psi);
        if norm <= threshold {
            return Ok(Crossing {
                elapsed: 0.0,
                state: psi.clone(),
                jumped: true,
            });
        }
        let mut cur = psi.clone();
        let mut cand = psi.clone();
        let mut elapsed = 0.0;
        loop {
            let pass_start = (elapsed, norm);
            for (step, u) in self.ladder.iter().rev() {
                if elapsed + step > horizon {
                    continue;
                }
                u.mul_to(&cur, &mut cand);
                let n = norm_sqr(&cand);
                self.check_contractive(norm, n)?;
                if n > threshold {
                    std::mem::swap(&mut cur, &mut cand);
                    norm = n;
                    elapsed += step;
                }
            }
            let finest = self.finest();
            if elapsed + finest > horizon {
                break;
            }
            let next = &self.ladder[0].1 * &cur;
            let n = norm_sqr(&next);
            if n <= threshold {
                // Interpolate within the rejected finest step; its exact end
                // state is reused because a Taylor re-evaluation may land on
                // the other side of the threshold by round-off.
                self.check_contractive(norm, n)?;
                let s = if norm > n {
                    (finest * (norm - threshold) / (norm - n)).clamp(0.0, finest)
                } else {
                    finest
                };
                let state = if s == finest { next } else { self.short_step(&cur, s) };
                return Ok(Crossing {
                    elapsed: elapsed + s,
                    state,
                    jumped: true,
                });
            }
            // Every rung was accepted: the crossing lies beyond this pass.
            let stalled = norm >= pass_start.1 * (1.0 - 1e-12);
            if horizon.is_infinite() && (stalled || elapsed > SEARCH_LIMIT) {
                return Ok(Crossing {
                    elapsed,
                    state: cur,
                    jumped: false,
                });
            }
        }
        // The horizon lies within one finest step.
        let rem = (horizon - elapsed).min(self.finest()).max(0.0);
        let end = self.short_step(&cur, rem);
        let n_end = norm_sqr(&end);
        self.check_contractive(norm, n_end)?;
        if n_end > threshold {
            return Ok(Crossing {
                elapsed: elapsed + rem,
                state: end,
                jumped: false,
            });
        }
        let s = if norm > n_end {
            (rem * (norm - threshold) / (norm - n_end)).clamp(0.0, rem)
        } else {
            rem
        };
        Ok(Crossing {
            elapsed: elapsed + s,
            state: self.short_step(&cur, s),
            jumped: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{build_h_cond, AtomModel};
    use crate::linalg::basis;

    #[test]
    fn propagate_matches_direct_exponential() {
        let h = build_h_cond(&AtomModel::two_level(3.0, 1.0, 0.4)).unwrap();
        let p = ConditionalPropagator::new(&h).unwrap();
        let psi = basis(2, 0);
        for &t in &[0.0, 1e-12, 0.3, 1.7, 12.345] {
            let a = p.propagate(&psi, t).unwrap();
            let b = propagator(&h, t) * &psi;
            assert!((a - b).norm() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn crossing_of_pure_decay() {
        let h = build_h_cond(&AtomModel::two_level(0.0, 2.0, 0.0)).unwrap();
        let p = ConditionalPropagator::new(&h).unwrap();
        let cr = p.find_crossing(&basis(2, 1), 0.25, f64::INFINITY).unwrap();
        assert!(cr.jumped);
        let exact = (4.0f64).ln() / 2.0;
        assert!((cr.elapsed - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn horizon_stops_the_search() {
        let h = build_h_cond(&AtomModel::two_level(0.0, 1.0, 0.0)).unwrap();
        let p = ConditionalPropagator::new(&h).unwrap();
        let cr = p.find_crossing(&basis(2, 1), 0.1, 1.0).unwrap();
        assert!(!cr.jumped);
        assert!((cr.elapsed - 1.0).abs() < 1e-15);
        assert!((norm_sqr(&cr.state) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn anti_damping_is_rejected() {
        let mut h = CMatrix::zeros(1, 1);
        h[(0, 0)] = C64::new(0.0, 0.5);
        // Coarse rungs overflow outright.
        assert!(ConditionalPropagator::new(&h).is_err());
    }

    #[test]
    fn crossing_on_a_nearly_flat_norm() {
        // Shelving atom: after the fast initial drop the norm decays at ~1e-4,
        // so one finest step changes it by less than round-off.
        let p = crate::atom::VSystemParams {
            a_strong: 1.0,
            a_weak: 1e-4,
            rabi_strong: 0.5,
            rabi_weak: 5e-3,
            detuning_strong: 0.0,
            detuning_weak: 0.0,
        };
        let prop = ConditionalPropagator::new(&build_h_cond(&AtomModel::dehmelt_v(&p)).unwrap()).unwrap();
        for r in [3.176891746845947e-4, 2.4345701032045725e-4, 1.1681285603078913e-4] {
            let cr = prop.find_crossing(&basis(3, 0), r, 1e6).unwrap();
            assert!(cr.jumped, "threshold {r}");
            assert!((norm_sqr(&cr.state) / r - 1.0).abs() < 1e-6);
        }
    }
}
