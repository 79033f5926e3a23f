// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment presets shipped with the repository under `presets/`.
//!
//! The JSON files are the single source of truth; they are embedded at build
//! time so the binary works from any directory.

/// (name, JSON text), sorted by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("compare-unraveling", include_str!("../../../presets/compare-unraveling.json")),
    ("dehmelt-spectrum", include_str!("../../../presets/dehmelt-spectrum.json")),
    ("dehmelt-v", include_str!("../../../presets/dehmelt-v.json")),
    ("ergodicity", include_str!("../../../presets/ergodicity.json")),
    ("light-period", include_str!("../../../presets/light-period.json")),
    ("mollow-strong", include_str!("../../../presets/mollow-strong.json")),
    ("mollow-weak", include_str!("../../../presets/mollow-weak.json")),
    ("two-level-trajectories", include_str!("../../../presets/two-level-trajectories.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
