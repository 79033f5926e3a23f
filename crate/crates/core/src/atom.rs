// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Few-level atom models: levels, spontaneous decay channels and laser drives.
//!
//! # Conventions
//!
//! All dynamics happen in the frame rotating with the lasers, after the
//! rotating-wave approximation, with ħ = 1. A drive on the transition
//! `lower → upper` with complex Rabi frequency Ω and detuning
//! Δ_L = ω_L − ω_transition contributes
//!
//! ```text
//! H_A += (Ω/2) |upper⟩⟨lower| + (Ω*/2) |lower⟩⟨upper|
//! ```
//!
//! and shifts the frame energy of `upper` by −Δ_L relative to `lower`. For a
//! two-level atom or a V-system sharing a ground state this is simply −Δ_L on
//! the driven upper-level diagonal. Frame energies of chains and Λ-systems are
//! accumulated along the drive graph, rooted at the lowest level index of
//! each connected component.
//!
//! A decay channel `upper → lower` with Einstein coefficient A contributes
//! ½A to the damping matrix Γ at `(upper, upper)`. With `cross_damping`
//! enabled, two channels `i → α` and `j → α` into the same lower level also
//! contribute ½√(A_iα A_jα) at `(i, j)` and `(j, i)` (parallel dipoles), and the
//! conditional Hamiltonian is H_cond = H_A − iΓ.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_deviation, min_eigenvalue, CMatrix, C64};

/// Lower edge of the admissible coarse-graining interval, in seconds.
pub const COARSE_DT_MIN: f64 = 1e-13;
/// Upper edge of the admissible coarse-graining interval, in seconds.
pub const COARSE_DT_MAX: f64 = 1e-10;
/// `dt · max A` must not exceed this for `dt` to be short against lifetimes.
pub const COARSE_LIFETIME_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayChannel {
    pub upper: usize,
    pub lower: usize,
    /// Einstein coefficient A, in reference-rate units.
    pub a_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveField {
    pub upper: usize,
    pub lower: usize,
    pub rabi: C64,
    /// Δ_L = ω_L − ω_transition.
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    #[default]
    RotatingWave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomModel {
    pub n_levels: usize,
    pub level_labels: Vec<String>,
    pub decay_channels: Vec<DecayChannel>,
    pub drives: Vec<DriveField>,
    pub frame: Frame,
    /// Include Γ_{iααj} terms between upper levels sharing a lower level.
    pub cross_damping: bool,
    /// A closed model is allowed to have no positive decay channel.
    pub closed: bool,
    /// Value of one internal rate unit in s⁻¹.
    pub rate_unit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampingMatrix {
    pub gamma: CMatrix,
}

/// Parameters of the Dehmelt V-system: ground level 1 strongly driven to the
/// short-lived level 2 and weakly driven to the metastable level 2′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VSystemParams {
    pub a_strong: f64,
    pub a_weak: f64,
    pub rabi_strong: f64,
    pub rabi_weak: f64,
    #[serde(default)]
    pub detuning_strong: f64,
    #[serde(default)]
    pub detuning_weak: f64,
}

impl AtomModel {
    /// Levels labelled by their indices, no channels, no drives.
    pub fn with_levels(n_levels: usize) -> Self {
        Self::with_labels((0..n_levels).map(|i| i.to_string()).collect())
    }

    pub fn with_labels(level_labels: Vec<String>) -> Self {
        Self {
            n_levels: level_labels.len(),
            level_labels,
            decay_channels: Vec::new(),
            drives: Vec::new(),
            frame: Frame::RotatingWave,
            cross_damping: false,
            closed: false,
            rate_unit: 1.0,
        }
    }

    pub fn channel(mut self, upper: usize, lower: usize, a_coeff: f64) -> Self {
        self.decay_channels.push(DecayChannel { upper, lower, a_coeff });
        self
    }

    pub fn drive(mut self, upper: usize, lower: usize, rabi: C64, detuning: f64) -> Self {
        self.drives.push(DriveField { upper, lower, rabi, detuning });
        self
    }

    pub fn closed(mut self) -> Self {
        self.closed = true;
        self
    }

    pub fn cross_damping(mut self, on: bool) -> Self {
        self.cross_damping = on;
        self
    }

    /// Two-level atom (ground 0, excited 1) with real Rabi frequency.
    ///
    /// With `a == 0` the model is marked closed.
    pub fn two_level(rabi: f64, a: f64, detuning: f64) -> Self {
        let m = Self::with_labels(vec!["g".into(), "e".into()])
            .channel(1, 0, a)
            .drive(1, 0, c(rabi), detuning);
        if a == 0.0 {
            m.closed()
        } else {
            m
        }
    }

    /// Dehmelt V-system: levels `1`, `2`, `2'` at indices 0, 1, 2. Channel 0 is
    /// the strong line 2 → 1, channel 1 the weak line 2′ → 1.
    pub fn dehmelt_v(p: &VSystemParams) -> Self {
        Self::with_labels(vec!["1".into(), "2".into(), "2'".into()])
            .channel(1, 0, p.a_strong)
            .channel(2, 0, p.a_weak)
            .drive(1, 0, c(p.rabi_strong), p.detuning_strong)
            .drive(2, 0, c(p.rabi_weak), p.detuning_weak)
    }

    /// Λ-system: excited level 2 decaying to ground levels 0 and 1.
    pub fn lambda(a0: f64, a1: f64) -> Self {
        Self::with_labels(vec!["g0".into(), "g1".into(), "e".into()])
            .channel(2, 0, a0)
            .channel(2, 1, a1)
    }

    pub fn max_rate(&self) -> f64 {
        self.decay_channels
            .iter()
            .map(|ch| ch.a_coeff)
            .fold(0.0, f64::max)
    }

    pub fn has_emission(&self) -> bool {
        self.decay_channels.iter().any(|ch| ch.a_coeff > 0.0)
    }

    /// Rescale all rates so that `reference` (default: the largest A) becomes 1.
    ///
    /// Rabi frequencies and detunings are rescaled alike and `rate_unit` grows
    /// by the same factor, so physical rates are unchanged.
    pub fn normalized(&self, reference: Option<f64>) -> Result<Self> {
        let r = reference.unwrap_or_else(|| self.max_rate());
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference rate must be positive, got {r}"
            )));
        }
        let mut m = self.clone();
        for ch in &mut m.decay_channels {
            ch.a_coeff /= r;
        }
        for d in &mut m.drives {
            d.rabi /= r;
            d.detuning /= r;
        }
        m.rate_unit *= r;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 {
            return Err(Error::InvalidModel("atom needs at least one level".into()));
        }
        if self.level_labels.len() != self.n_levels {
            return Err(Error::InvalidModel(format!(
                "{} labels for {} levels",
                self.level_labels.len(),
                self.n_levels
            )));
        }
        if !(self.rate_unit.is_finite() && self.rate_unit > 0.0) {
            return Err(Error::InvalidModel("rate_unit must be positive".into()));
        }
        let n = self.n_levels;
        let check = |index: usize| {
            if index < n {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange { index, n_levels: n })
            }
        };
        for (k, ch) in self.decay_channels.iter().enumerate() {
            check(ch.upper)?;
            check(ch.lower)?;
            if ch.upper == ch.lower {
                return Err(Error::InvalidModel(format!(
                    "channel {k} decays level {} into itself",
                    ch.upper
                )));
            }
            if ch.a_coeff.is_nan() || ch.a_coeff < 0.0 {
                return Err(Error::NegativeRate {
                    upper: ch.upper,
                    lower: ch.lower,
                    a: ch.a_coeff,
                });
            }
            if !ch.a_coeff.is_finite() {
                return Err(Error::InvalidModel(format!("channel {k} has infinite rate")));
            }
            if self.decay_channels[..k]
                .iter()
                .any(|o| o.upper == ch.upper && o.lower == ch.lower)
            {
                return Err(Error::InvalidModel(format!(
                    "duplicate channel {}->{}",
                    ch.upper, ch.lower
                )));
            }
        }
        for (k, d) in self.drives.iter().enumerate() {
            check(d.upper)?;
            check(d.lower)?;
            if d.upper == d.lower {
                return Err(Error::InvalidModel(format!("drive {k} couples a level to itself")));
            }
            if !(d.rabi.re.is_finite() && d.rabi.im.is_finite() && d.detuning.is_finite()) {
                return Err(Error::InvalidModel(format!("drive {k} has non-finite entries")));
            }
        }
        if !self.closed && !self.has_emission() {
            return Err(Error::InvalidModel(
                "no decay channel with A > 0; mark the model closed if intended".into(),
            ));
        }
        Ok(())
    }

    /// Diagonal of H_A in the rotating frame (detuning bookkeeping only).
    fn frame_energies(&self) -> Result<Vec<f64>> {
        let n = self.n_levels;
        let mut energy: Vec<Option<f64>> = vec![None; n];
        for root in 0..n {
            if energy[root].is_some() {
                continue;
            }
            energy[root] = Some(0.0);
            let mut queue = VecDeque::from([root]);
            while let Some(level) = queue.pop_front() {
                let e = energy[level].unwrap_or(0.0);
                for d in &self.drives {
                    let (other, e_other) = if d.lower == level {
                        (d.upper, e - d.detuning)
                    } else if d.upper == level {
                        (d.lower, e + d.detuning)
                    } else {
                        continue;
                    };
                    match energy[other] {
                        None => {
                            energy[other] = Some(e_other);
                            queue.push_back(other);
                        }
                        Some(prev) => {
                            let scale = 1.0 + prev.abs().max(e_other.abs());
                            if (prev - e_other).abs() > 1e-12 * scale {
                                return Err(Error::InvalidModel(
                                    "drive loop has no time-independent rotating frame".into(),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(energy.into_iter().map(|e| e.unwrap_or(0.0)).collect())
    }

    /// Hermitian atomic Hamiltonian H_A (rotating frame, ħ = 1).
    pub fn h_atomic(&self) -> Result<CMatrix> {
        self.validate()?;
        let n = self.n_levels;
        let mut h = CMatrix::zeros(n, n);
        for (i, e) in self.frame_energies()?.into_iter().enumerate() {
            h[(i, i)] = c(e);
        }
        for d in &self.drives {
            h[(d.upper, d.lower)] += d.rabi * 0.5;
            h[(d.lower, d.upper)] += d.rabi.conj() * 0.5;
        }
        Ok(h)
    }

    /// Load from the JSON atom schema (see `docs/atom-schema.md`).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(value)
    }

    /// Schema errors name the offending key as a dotted path.
    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: AtomDoc = serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        doc.into_model()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let label = |i: usize| LevelRef::Label(self.level_labels[i].clone());
        let doc = AtomDoc {
            levels: self.level_labels.clone(),
            channels: self
                .decay_channels
                .iter()
                .map(|ch| ChannelDoc {
                    upper: label(ch.upper),
                    lower: label(ch.lower),
                    a: ch.a_coeff,
                })
                .collect(),
            drives: self
                .drives
                .iter()
                .map(|d| DriveDoc {
                    upper: label(d.upper),
                    lower: label(d.lower),
                    rabi_re: d.rabi.re,
                    rabi_im: d.rabi.im,
                    detuning: d.detuning,
                })
                .collect(),
            cross_damping: self.cross_damping,
            closed: self.closed,
            rate_unit: self.rate_unit,
        };
        serde_json::to_value(doc).expect("atom document serializes")
    }
}

/// Damping matrix Γ = Σ_α Γ_{iααj} |i⟩⟨j| assembled from the declared channels.
pub fn build_gamma(atom: &AtomModel) -> Result<DampingMatrix> {
    atom.validate()?;
    let n = atom.n_levels;
    let mut gamma = CMatrix::zeros(n, n);
    for ch in &atom.decay_channels {
        gamma[(ch.upper, ch.upper)] += c(0.5 * ch.a_coeff);
    }
    if atom.cross_damping {
        for (k, a) in atom.decay_channels.iter().enumerate() {
            for b in &atom.decay_channels[k + 1..] {
                if a.lower == b.lower && a.upper != b.upper {
                    let g = c(0.5 * (a.a_coeff * b.a_coeff).sqrt());
                    gamma[(a.upper, b.upper)] += g;
                    gamma[(b.upper, a.upper)] += g;
                }
            }
        }
    }
    Ok(DampingMatrix { gamma })
}

/// Conditional Hamiltonian H_cond = H_A − iΓ.
pub fn build_h_cond(atom: &AtomModel) -> Result<CMatrix> {
    let h = atom.h_atomic()?;
    let gamma = build_gamma(atom)?.gamma;
    Ok(h - gamma * C64::new(0.0, 1.0))
}

impl DampingMatrix {
    pub fn is_hermitian(&self) -> bool {
        let scale = self.gamma.iter().map(|z| z.norm()).fold(0.0, f64::max);
        hermitian_deviation(&self.gamma) <= 1e-12 * scale.max(f64::MIN_POSITIVE)
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        let scale = self.gamma.iter().map(|z| z.norm()).fold(0.0, f64::max);
        min_eigenvalue(&self.gamma) >= -1e-12 * scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseGrainingReport {
    pub dt: f64,
    /// Largest Einstein coefficient in s⁻¹.
    pub max_rate: f64,
    pub dt_times_rate: f64,
    pub in_window: bool,
    pub short_vs_lifetime: bool,
    pub pass: bool,
}

/// Check a physical coarse-graining interval against the admissible window
/// `[1e-13, 1e-10] s` and against the shortest lifetime (`dt · max A ≤ 0.01`).
///
/// Purely advisory; the trajectory engine works in continuous time.
pub fn validate_coarse_graining(atom: &AtomModel, dt_physical: f64) -> CoarseGrainingReport {
    let max_rate = atom.max_rate() * atom.rate_unit;
    let dt_times_rate = dt_physical * max_rate;
    let in_window = (COARSE_DT_MIN..=COARSE_DT_MAX).contains(&dt_physical);
    let short_vs_lifetime = dt_physical > 0.0 && dt_times_rate <= COARSE_LIFETIME_RATIO;
    CoarseGrainingReport {
        dt: dt_physical,
        max_rate,
        dt_times_rate,
        in_window,
        short_vs_lifetime,
        pass: in_window && short_vs_lifetime,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum LevelRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    upper: LevelRef,
    lower: LevelRef,
    #[serde(rename = "A")]
    a: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriveDoc {
    upper: LevelRef,
    lower: LevelRef,
    rabi_re: f64,
    #[serde(default)]
    rabi_im: f64,
    #[serde(default)]
    detuning: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomDoc {
    levels: Vec<String>,
    #[serde(default)]
    channels: Vec<ChannelDoc>,
    #[serde(default)]
    drives: Vec<DriveDoc>,
    #[serde(default)]
    cross_damping: bool,
    #[serde(default)]
    closed: bool,
    #[serde(default = "default_rate_unit")]
    rate_unit: f64,
}

fn default_rate_unit() -> f64 {
    1.0
}

impl AtomDoc {
    fn into_model(self) -> Result<AtomModel> {
        let n = self.levels.len();
        for (i, l) in self.levels.iter().enumerate() {
            if self.levels[..i].contains(l) {
                return Err(Error::InvalidModel(format!("duplicate level label {l:?}")));
            }
        }
        let resolve = |r: &LevelRef| -> Result<usize> {
            match r {
                LevelRef::Index(i) if *i < n => Ok(*i),
                LevelRef::Index(i) => Err(Error::IndexOutOfRange { index: *i, n_levels: n }),
                LevelRef::Label(s) => self
                    .levels
                    .iter()
                    .position(|l| l == s)
                    .ok_or_else(|| Error::InvalidModel(format!("unknown level label {s:?}"))),
            }
        };
        let mut model = AtomModel::with_labels(self.levels.clone());
        for ch in &self.channels {
            model = model.channel(resolve(&ch.upper)?, resolve(&ch.lower)?, ch.a);
        }
        for d in &self.drives {
            model = model.drive(
                resolve(&d.upper)?,
                resolve(&d.lower)?,
                C64::new(d.rabi_re, d.rabi_im),
                d.detuning,
            );
        }
        model.cross_damping = self.cross_damping;
        model.closed = self.closed;
        model.rate_unit = self.rate_unit;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_part;
    use proptest::prelude::*;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-14
    }

    #[test]
    fn two_level_gamma_is_half_einstein_coefficient() {
        let g = build_gamma(&AtomModel::two_level(0.0, 3.0, 0.0)).unwrap().gamma;
        assert!(close(g[(0, 0)], c(0.0)));
        assert!(close(g[(1, 1)], c(1.5)));
        assert!(close(g[(0, 1)], c(0.0)));
    }

    #[test]
    fn no_channels_gives_zero_gamma() {
        let g = build_gamma(&AtomModel::with_levels(3).closed()).unwrap().gamma;
        assert!(g.iter().all(|z| *z == c(0.0)));
    }

    #[test]
    fn v_system_gamma_is_diagonal_without_cross_damping() {
        let p = VSystemParams {
            a_strong: 1.0,
            a_weak: 1e-4,
            rabi_strong: 0.5,
            rabi_weak: 5e-3,
            detuning_strong: 0.0,
            detuning_weak: 0.0,
        };
        let g = build_gamma(&AtomModel::dehmelt_v(&p)).unwrap().gamma;
        let expected = [0.0, 0.5, 0.5e-4];
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { expected[i] } else { 0.0 };
                assert!(close(g[(i, j)], c(want)), "({i},{j})");
            }
        }
    }

    #[test]
    fn cross_damping_couples_upper_levels_with_shared_lower() {
        let atom = AtomModel::with_levels(3)
            .channel(1, 0, 1.0)
            .channel(2, 0, 4.0)
            .cross_damping(true);
        let g = build_gamma(&atom).unwrap().gamma;
        assert!(close(g[(1, 2)], c(1.0)));
        assert!(close(g[(2, 1)], c(1.0)));
        assert!(close(g[(2, 2)], c(2.0)));
    }

    #[test]
    fn channel_errors() {
        let bad = AtomModel::with_levels(2).channel(2, 0, 1.0);
        assert!(matches!(build_gamma(&bad), Err(Error::IndexOutOfRange { index: 2, .. })));
        let neg = AtomModel::with_levels(2).channel(1, 0, -1.0);
        assert!(matches!(build_gamma(&neg), Err(Error::NegativeRate { .. })));
        let open = AtomModel::with_levels(2).channel(1, 0, 0.0);
        assert!(matches!(build_gamma(&open), Err(Error::InvalidModel(_))));
        let dup = AtomModel::with_levels(2).channel(1, 0, 1.0).channel(1, 0, 2.0);
        assert!(matches!(build_gamma(&dup), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn h_cond_two_level_resonant() {
        let (om, a) = (2.0, 0.7);
        let h = build_h_cond(&AtomModel::two_level(om, a, 0.0)).unwrap();
        assert!(close(h[(0, 0)], c(0.0)));
        assert!(close(h[(0, 1)], c(om / 2.0)));
        assert!(close(h[(1, 0)], c(om / 2.0)));
        assert!(close(h[(1, 1)], C64::new(0.0, -a / 2.0)));
    }

    #[test]
    fn h_cond_without_damping_is_detuning_diagonal() {
        let h = build_h_cond(&AtomModel::two_level(0.0, 0.0, 0.3)).unwrap();
        assert!(close(h[(1, 1)], c(-0.3)));
        assert!(hermitian_deviation(&h) == 0.0);
    }

    #[test]
    fn dehmelt_h_cond_assembly() {
        let p = VSystemParams {
            a_strong: 1.0,
            a_weak: 0.0,
            rabi_strong: 0.5,
            rabi_weak: 5e-3,
            detuning_strong: 0.0,
            detuning_weak: 0.0,
        };
        let h = build_h_cond(&AtomModel::dehmelt_v(&p)).unwrap();
        assert!(close(h[(1, 1)], C64::new(0.0, -0.5)));
        assert!(close(h[(2, 2)], c(0.0)));
        assert!(close(h[(0, 1)], c(0.25)));
        assert!(close(h[(0, 2)], c(2.5e-3)));
        assert!(close(h[(1, 2)], c(0.0)));
    }

    #[test]
    fn lambda_detunings_accumulate_along_drive_graph() {
        let atom = AtomModel::with_levels(3)
            .channel(2, 0, 1.0)
            .drive(2, 0, c(1.0), 0.2)
            .drive(2, 1, c(1.0), 0.5);
        let h = atom.h_atomic().unwrap();
        assert!(close(h[(2, 2)], c(-0.2)));
        assert!(close(h[(1, 1)], c(0.3)));
    }

    #[test]
    fn inconsistent_drive_loop_is_rejected() {
        let atom = AtomModel::with_levels(3)
            .channel(1, 0, 1.0)
            .drive(1, 0, c(1.0), 0.1)
            .drive(2, 1, c(1.0), 0.1)
            .drive(2, 0, c(1.0), 0.0);
        assert!(matches!(atom.h_atomic(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn coarse_graining_report() {
        let atom = AtomModel::two_level(1.0, 1e8, 0.0);
        let r = validate_coarse_graining(&atom, 1e-11);
        assert!(r.pass);
        assert!((r.dt_times_rate - 1e-3).abs() < 1e-15);
        assert!(!validate_coarse_graining(&atom, 1e-9).in_window);
        let fast = AtomModel::two_level(1.0, 1e9, 0.0);
        let r = validate_coarse_graining(&fast, 1e-10);
        assert!(r.in_window && !r.short_vs_lifetime && !r.pass);
    }

    #[test]
    fn normalized_rescales_rates() {
        let atom = AtomModel::two_level(2e8, 1e8, 5e7).normalized(None).unwrap();
        assert_eq!(atom.decay_channels[0].a_coeff, 1.0);
        assert_eq!(atom.drives[0].rabi, c(2.0));
        assert_eq!(atom.rate_unit, 1e8);
        assert!(validate_coarse_graining(&atom, 1e-11).pass);
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let text = r#"{
            "levels": ["g", "e"],
            "channels": [{"upper": "e", "lower": "g", "A": 1.0}],
            "drives": [{"upper": 1, "lower": 0, "rabi_re": 3.0, "rabi_im": 0.5, "detuning": -0.2}]
        }"#;
        let atom = AtomModel::from_json_str(text).unwrap();
        assert_eq!(atom.drives[0].rabi, C64::new(3.0, 0.5));
        assert_eq!(AtomModel::from_json_value(atom.to_json_value()).unwrap(), atom);

        let typo = r#"{"levels": ["g"], "closed": true, "omega": 1.0}"#;
        let err = AtomModel::from_json_str(typo).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(err.to_string().contains("omega"), "{err}");
        let nested = r#"{"levels": ["g","e"], "drives": [{"upper": 1, "lower": 0, "rabi": 1}]}"#;
        match AtomModel::from_json_str(nested).unwrap_err() {
            Error::Schema { path, message } => {
                assert!(path.starts_with("drives[0]"), "{path}");
                assert!(message.contains("rabi"), "{message}");
            }
            other => panic!("{other}"),
        }
        let bad_label = r#"{"levels": ["g","e"], "channels": [{"upper": "x", "lower": "g", "A": 1}]}"#;
        assert!(AtomModel::from_json_str(bad_label).is_err());
    }

    fn random_atom() -> impl Strategy<Value = AtomModel> {
        (2usize..6)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    prop::collection::vec((0..n, 0..n, 0.0f64..5.0), 1..8),
                    prop::collection::vec((0..n, 0..n, -3.0f64..3.0, -3.0f64..3.0, -2.0f64..2.0), 0..4),
                    any::<bool>(),
                )
            })
            .prop_map(|(n, chans, drives, cross)| {
                let mut m = AtomModel::with_levels(n).closed().cross_damping(cross);
                for (u, l, a) in chans {
                    if u != l && !m.decay_channels.iter().any(|c| c.upper == u && c.lower == l) {
                        m = m.channel(u, l, a);
                    }
                }
                // Drives restricted to a star around level 0 so every model has a rotating frame.
                for (u, _, re, im, det) in drives {
                    if u != 0 && !m.drives.iter().any(|d| d.upper == u) {
                        m = m.drive(u, 0, C64::new(re, im), det);
                    }
                }
                m
            })
    }

    proptest! {
        #[test]
        fn gamma_hermitian_psd(atom in random_atom()) {
            let g = build_gamma(&atom).unwrap();
            prop_assert!(g.is_hermitian());
            prop_assert!(g.is_positive_semidefinite());
        }

        #[test]
        fn anti_hermitian_part_of_h_cond_is_minus_i_gamma(atom in random_atom()) {
            let h = build_h_cond(&atom).unwrap();
            let g = build_gamma(&atom).unwrap().gamma;
            let anti = (&h - h.adjoint()) * c(0.5);
            let diff = anti + g * C64::new(0.0, 1.0);
            prop_assert!(diff.iter().all(|z| z.norm() < 1e-14));
            prop_assert!(hermitian_deviation(&hermitian_part(&h)) == 0.0);
        }

        #[test]
        fn zero_rate_channel_changes_nothing(atom in random_atom()) {
            let n = atom.n_levels;
            let free = (0..n).flat_map(|u| (0..n).map(move |l| (u, l)))
                .find(|&(u, l)| u != l && !atom.decay_channels.iter().any(|c| c.upper == u && c.lower == l));
            if let Some((u, l)) = free {
                let extended = atom.clone().channel(u, l, 0.0);
                prop_assert_eq!(build_gamma(&atom).unwrap(), build_gamma(&extended).unwrap());
                prop_assert_eq!(build_h_cond(&atom).unwrap(), build_h_cond(&extended).unwrap());
            }
        }
    }
}
