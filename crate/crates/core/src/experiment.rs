// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, execution and run manifests.
//!
//! A config is a JSON object
//!
//! ```json
//! {
//!   "preset": "dehmelt-v",
//!   "experiment": "periods",
//!   "atom": { "v_system": { ... } },
//!   "params": { "t_end": 1e6 },
//!   "output_dir": "out/run"
//! }
//! ```
//!
//! `preset` is optional. When present, the named preset is the base document:
//! top-level keys of the config replace the preset's, except `params`, whose
//! keys are merged one by one. `atom` is one of
//!
//! - a string: path of an atom JSON file, relative to the config file;
//! - `{"two_level": {"rabi", "a", "detuning"}}`;
//! - `{"v_system": {"a_strong", "a_weak", "rabi_strong", "rabi_weak",
//!   "detuning_strong", "detuning_weak"}}`;
//! - an inline atom document (see `docs/atom-schema.md`).
//!
//! Stochastic experiments require `params.seed0`; trajectory `i` uses
//! `splitmix64(seed0 ^ i)` (see [`crate::dynamics::seed_for`]).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::atom::{AtomModel, VSystemParams};
use crate::dynamics::{jump_operators, par_map, run_batch, seed_for, TrajectoryOptions, TrajectorySimulator};
use crate::error::Error;
use crate::linalg::basis;
use crate::master::compare_unraveling_jobs;
use crate::periods::{
    classify_periods, ergodicity_check, histogram, ks_distance, pooled_period_stats, Bins, PhotonRecord,
};
use crate::presets::preset_text;
use crate::spectra::{
    decompose_line_center, emission_spectrum_with, light_period_spectrum, sinh_grid, slowest_rate, uniform_grid,
    SpectrumOptions,
};

/// Name of the environment variable overriding `params.seed0`.
pub const SEED_ENV: &str = "QJUMP_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {message}")]
    Range { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Numeric { context: String, source: Error },
    #[error("{path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl RunError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(ConfigError::Schema { .. }) => "CONFIG_SCHEMA",
            RunError::Config(ConfigError::Range { .. }) => "CONFIG_RANGE",
            RunError::Config(ConfigError::Io { .. }) => "CONFIG_IO",
            RunError::Numeric { .. } => "NUMERIC",
            RunError::Output { .. } => "OUTPUT_IO",
        }
    }

    /// Process exit code: 2 for configuration and output problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn range(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        path: path.into(),
        message: message.into(),
    }
}

fn numeric(context: &str) -> impl FnOnce(Error) -> RunError + '_ {
    move |source| match source {
        Error::Io(e) => RunError::Output {
            path: context.to_string(),
            source: e,
        },
        source => RunError::Numeric {
            context: context.to_string(),
            source,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Trajectories,
    CompareUnraveling,
    Periods,
    Spectrum,
    LightPeriodSpectrum,
    Ergodicity,
}

impl ExperimentKind {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, ExperimentKind::Spectrum | ExperimentKind::LightPeriodSpectrum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelParams {
    pub rabi: f64,
    pub a: f64,
    #[serde(default)]
    pub detuning: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomSource {
    File(PathBuf),
    TwoLevel(TwoLevelParams),
    VSystem(VSystemParams),
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Uniform { min: f64, max: f64, n: usize },
    /// `scale · sinh(u)` on a uniform u grid reaching `half_width`; dense near 0.
    Sinh { half_width: f64, scale: f64, n: usize },
    List { values: Vec<f64> },
}

impl GridSpec {
    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        match self {
            GridSpec::Uniform { min, max, n } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(range(path, format!("need finite min < max, got {min}, {max}")));
                }
                if *n < 2 {
                    return Err(range(format!("{path}.n"), "need at least 2 points"));
                }
            }
            GridSpec::Sinh { half_width, scale, n } => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(range(format!("{path}.half_width"), "must be positive"));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(range(format!("{path}.scale"), "must be positive"));
                }
                if *n < 3 || n % 2 == 0 {
                    return Err(range(format!("{path}.n"), "must be odd and at least 3"));
                }
            }
            GridSpec::List { values } => {
                if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
                    return Err(range(format!("{path}.values"), "need finite values"));
                }
                if values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(range(format!("{path}.values"), "must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Uniform { min, max, n } => uniform_grid(*min, *max, *n),
            GridSpec::Sinh { half_width, scale, n } => sinh_grid(*half_width, *scale, *n),
            GridSpec::List { values } => values.clone(),
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_mc_factor() -> f64 {
    4.0
}

fn default_n_sigma() -> f64 {
    3.0
}

fn default_bins() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub t_end: f64,
    pub n_traj: usize,
    pub seed0: u64,
    #[serde(default)]
    pub initial_level: usize,
    /// Store normalised states every `sample_dt` in a CSV per trajectory.
    #[serde(default)]
    pub sample_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareParams {
    pub t_end: f64,
    pub n_points: usize,
    pub n_traj: usize,
    pub seed0: u64,
    #[serde(default)]
    pub initial_level: usize,
    /// Pass if max trace distance ≤ mc_factor × max MC error.
    #[serde(default = "default_mc_factor")]
    pub mc_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodsParams {
    pub t_end: f64,
    #[serde(default = "default_one")]
    pub n_traj: usize,
    pub seed0: u64,
    #[serde(default)]
    pub initial_level: usize,
    pub t0: f64,
    #[serde(default)]
    pub t_min: f64,
    /// Decay channels counted as detections; all if absent.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    /// Require mean dark duration ≥ this × mean gap inside light periods.
    #[serde(default)]
    pub min_separation: Option<f64>,
    /// Require KS distance of dark durations to the fitted exponential ≤ this.
    #[serde(default)]
    pub max_dark_ks: Option<f64>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Also write the full jump record of every trajectory.
    #[serde(default)]
    pub write_records: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub grid: GridSpec,
    #[serde(default)]
    pub tau_max: Option<f64>,
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    /// Decompose the line centre on |Δ| ≤ fit_window.
    #[serde(default)]
    pub fit_window: Option<f64>,
    #[serde(default)]
    pub expect_maxima: Option<usize>,
    #[serde(default)]
    pub min_coherent_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightPeriodParams {
    pub grid: GridSpec,
    /// Defaults to half the strong decay rate.
    #[serde(default)]
    pub fit_window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicityParams {
    pub t_long: f64,
    pub seed0: u64,
    #[serde(default)]
    pub initial_level: usize,
    #[serde(default = "default_n_sigma")]
    pub n_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Experiment {
    Trajectories(TrajectoryParams),
    CompareUnraveling(CompareParams),
    Periods(PeriodsParams),
    Spectrum(SpectrumParams),
    LightPeriodSpectrum(LightPeriodParams),
    Ergodicity(ErgodicityParams),
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Trajectories(_) => ExperimentKind::Trajectories,
            Experiment::CompareUnraveling(_) => ExperimentKind::CompareUnraveling,
            Experiment::Periods(_) => ExperimentKind::Periods,
            Experiment::Spectrum(_) => ExperimentKind::Spectrum,
            Experiment::LightPeriodSpectrum(_) => ExperimentKind::LightPeriodSpectrum,
            Experiment::Ergodicity(_) => ExperimentKind::Ergodicity,
        }
    }

    pub fn seed0(&self) -> Option<u64> {
        match self {
            Experiment::Trajectories(p) => Some(p.seed0),
            Experiment::CompareUnraveling(p) => Some(p.seed0),
            Experiment::Periods(p) => Some(p.seed0),
            Experiment::Ergodicity(p) => Some(p.seed0),
            Experiment::Spectrum(_) | Experiment::LightPeriodSpectrum(_) => None,
        }
    }

    fn set_seed0(&mut self, seed: u64) {
        match self {
            Experiment::Trajectories(p) => p.seed0 = seed,
            Experiment::CompareUnraveling(p) => p.seed0 = seed,
            Experiment::Periods(p) => p.seed0 = seed,
            Experiment::Ergodicity(p) => p.seed0 = seed,
            Experiment::Spectrum(_) | Experiment::LightPeriodSpectrum(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub atom_source: AtomSource,
    pub atom: AtomModel,
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    /// Name of the preset this config was expanded from.
    pub preset: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    atom: Value,
    #[serde(default = "empty_object")]
    params: Value,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn traced<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        schema(path, e.inner().to_string())
    })
}

/// Expand `preset` into a full document; returns (document, preset name).
fn expand(text: &str) -> Result<(Value, Option<String>), ConfigError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema(".", e.to_string()))?;
    let Value::Object(mut user) = doc else {
        return Err(schema(".", "config must be a JSON object"));
    };
    let Some(name) = user.remove("preset") else {
        return Ok((Value::Object(user), None));
    };
    let name = name
        .as_str()
        .ok_or_else(|| schema("preset", "must be a string"))?
        .to_string();
    let base_text = preset_text(&name).ok_or_else(|| schema("preset", format!("unknown preset {name:?}")))?;
    let Value::Object(mut base) = serde_json::from_str(base_text).map_err(|e| schema("preset", e.to_string()))?
    else {
        return Err(schema("preset", "preset is not a JSON object"));
    };
    for (key, value) in user {
        match (key.as_str(), base.get_mut(&key), value) {
            ("params", Some(Value::Object(bp)), Value::Object(up)) => bp.extend(up),
            (_, _, value) => {
                base.insert(key, value);
            }
        }
    }
    Ok((Value::Object(base), Some(name)))
}

fn parse_atom(value: Value, base_dir: &Path) -> Result<(AtomSource, AtomModel), ConfigError> {
    let model_error = |e: Error| match e {
        Error::Schema { path, message } => schema(format!("atom.{path}"), message),
        Error::Io(source) => ConfigError::Io {
            path: "atom".into(),
            source,
        },
        Error::Json(e) => schema("atom", e.to_string()),
        other => range("atom", other.to_string()),
    };
    match value {
        Value::String(file) => {
            let path = base_dir.join(&file);
            let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                path: format!("atom ({})", path.display()),
                source,
            })?;
            let model = AtomModel::from_json_str(&text).map_err(model_error)?;
            Ok((AtomSource::File(PathBuf::from(file)), model))
        }
        Value::Object(mut map) if map.len() == 1 && map.contains_key("two_level") => {
            let p: TwoLevelParams = traced(map.remove("two_level").unwrap_or_default(), "atom.two_level")?;
            for (name, v) in [("rabi", p.rabi), ("a", p.a), ("detuning", p.detuning)] {
                if !v.is_finite() {
                    return Err(range(format!("atom.two_level.{name}"), "must be finite"));
                }
            }
            if p.a < 0.0 {
                return Err(range("atom.two_level.a", "must be non-negative"));
            }
            let model = AtomModel::two_level(p.rabi, p.a, p.detuning);
            Ok((AtomSource::TwoLevel(p), model))
        }
        Value::Object(mut map) if map.len() == 1 && map.contains_key("v_system") => {
            let p: VSystemParams = traced(map.remove("v_system").unwrap_or_default(), "atom.v_system")?;
            let fields = [
                ("a_strong", p.a_strong),
                ("a_weak", p.a_weak),
                ("rabi_strong", p.rabi_strong),
                ("rabi_weak", p.rabi_weak),
                ("detuning_strong", p.detuning_strong),
                ("detuning_weak", p.detuning_weak),
            ];
            for (name, v) in fields {
                if !v.is_finite() {
                    return Err(range(format!("atom.v_system.{name}"), "must be finite"));
                }
            }
            if !(p.a_strong > 0.0) {
                return Err(range("atom.v_system.a_strong", "must be positive"));
            }
            if p.a_weak < 0.0 {
                return Err(range("atom.v_system.a_weak", "must be non-negative"));
            }
            let model = AtomModel::dehmelt_v(&p);
            Ok((AtomSource::VSystem(p), model))
        }
        value @ Value::Object(_) => {
            let model = AtomModel::from_json_value(value).map_err(model_error)?;
            Ok((AtomSource::Inline, model))
        }
        _ => Err(schema("atom", "expected a file path or an object")),
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(range(path, format!("must be positive and finite, got {v}")))
    }
}

fn check_level(atom: &AtomModel, level: usize) -> Result<(), ConfigError> {
    if level < atom.n_levels {
        Ok(())
    } else {
        Err(range(
            "params.initial_level",
            format!("level {level} out of range for a {}-level atom", atom.n_levels),
        ))
    }
}

fn check_channels(atom: &AtomModel, channels: &Option<Vec<usize>>) -> Result<(), ConfigError> {
    if let Some(ch) = channels {
        if ch.is_empty() {
            return Err(range("params.channels", "must not be empty"));
        }
        if let Some(&bad) = ch.iter().find(|&&k| k >= atom.decay_channels.len()) {
            return Err(range(
                "params.channels",
                format!("no decay channel {bad} (atom has {})", atom.decay_channels.len()),
            ));
        }
    }
    Ok(())
}

fn parse_params(kind: ExperimentKind, params: Value, atom: &AtomModel, source: &AtomSource) -> Result<Experiment, ConfigError> {
    let needs_emission = || {
        if atom.has_emission() {
            Ok(())
        } else {
            Err(range("atom", "experiment needs at least one decay channel with A > 0"))
        }
    };
    Ok(match kind {
        ExperimentKind::Trajectories => {
            let p: TrajectoryParams = traced(params, "params")?;
            positive("params.t_end", p.t_end)?;
            if p.n_traj == 0 {
                return Err(range("params.n_traj", "must be at least 1"));
            }
            if let Some(dt) = p.sample_dt {
                positive("params.sample_dt", dt)?;
            }
            check_level(atom, p.initial_level)?;
            Experiment::Trajectories(p)
        }
        ExperimentKind::CompareUnraveling => {
            let p: CompareParams = traced(params, "params")?;
            positive("params.t_end", p.t_end)?;
            positive("params.mc_factor", p.mc_factor)?;
            if p.n_traj < 100 {
                return Err(range("params.n_traj", "must be at least 100"));
            }
            if p.n_points < 2 {
                return Err(range("params.n_points", "must be at least 2"));
            }
            check_level(atom, p.initial_level)?;
            Experiment::CompareUnraveling(p)
        }
        ExperimentKind::Periods => {
            let p: PeriodsParams = traced(params, "params")?;
            positive("params.t_end", p.t_end)?;
            positive("params.t0", p.t0)?;
            if !(p.t_min >= 0.0 && p.t_min.is_finite()) {
                return Err(range("params.t_min", "must be non-negative"));
            }
            if p.n_traj == 0 {
                return Err(range("params.n_traj", "must be at least 1"));
            }
            if p.histogram_bins == 0 {
                return Err(range("params.histogram_bins", "must be at least 1"));
            }
            if let Some(s) = p.min_separation {
                positive("params.min_separation", s)?;
            }
            if let Some(k) = p.max_dark_ks {
                positive("params.max_dark_ks", k)?;
            }
            check_level(atom, p.initial_level)?;
            check_channels(atom, &p.channels)?;
            needs_emission()?;
            Experiment::Periods(p)
        }
        ExperimentKind::Spectrum => {
            let p: SpectrumParams = traced(params, "params")?;
            p.grid.validate("params.grid")?;
            if let Some(t) = p.tau_max {
                positive("params.tau_max", t)?;
            }
            if let Some(w) = p.fit_window {
                positive("params.fit_window", w)?;
            }
            if let Some(f) = p.min_coherent_fraction {
                if !(0.0..=1.0).contains(&f) {
                    return Err(range("params.min_coherent_fraction", "must lie in [0, 1]"));
                }
            }
            check_channels(atom, &p.channels)?;
            needs_emission()?;
            Experiment::Spectrum(p)
        }
        ExperimentKind::LightPeriodSpectrum => {
            if !matches!(source, AtomSource::VSystem(_)) {
                return Err(range("atom", "light_period_spectrum needs a v_system atom"));
            }
            let p: LightPeriodParams = traced(params, "params")?;
            p.grid.validate("params.grid")?;
            if let Some(w) = p.fit_window {
                positive("params.fit_window", w)?;
            }
            Experiment::LightPeriodSpectrum(p)
        }
        ExperimentKind::Ergodicity => {
            let p: ErgodicityParams = traced(params, "params")?;
            positive("params.t_long", p.t_long)?;
            positive("params.n_sigma", p.n_sigma)?;
            check_level(atom, p.initial_level)?;
            needs_emission()?;
            Experiment::Ergodicity(p)
        }
    })
}

/// Parse a config whose relative atom paths resolve against the current
/// directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_at(text, Path::new("."))
}

pub fn parse_config_at(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let (doc, preset) = expand(text)?;
    let raw: RawConfig = traced(doc, "")?;
    let (atom_source, atom) = parse_atom(raw.atom, base_dir)?;
    let experiment = parse_params(raw.experiment, raw.params, &atom, &atom_source)?;
    Ok(ExperimentConfig {
        atom_source,
        atom,
        experiment,
        output_dir: raw.output_dir,
        preset,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_at(&text, path.parent().unwrap_or(Path::new(".")))
}

impl ExperimentConfig {
    /// Resolved config with all defaults filled and the atom written out,
    /// excluding `output_dir`.
    pub fn canonical(&self) -> Value {
        json!({
            "experiment": self.experiment.kind(),
            "atom": self.atom.to_json_value(),
            "params": self.experiment,
        })
    }

    /// SHA-256 of the compact canonical JSON (object keys sorted).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    /// Replaces the config's `output_dir`.
    pub out_dir: Option<PathBuf>,
    /// Replaces `params.seed0` of stochastic experiments.
    pub seed_override: Option<u64>,
}

impl RunOptions {
    /// `jobs` threads, seed override read from `QJUMP_SEED`.
    pub fn from_env(jobs: usize, out_dir: Option<PathBuf>) -> Result<Self, ConfigError> {
        let seed_override = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| range(SEED_ENV, format!("not an unsigned 64-bit integer: {s:?}")))?,
            ),
            Err(std::env::VarError::NotPresent) => None,
            Err(e) => return Err(range(SEED_ENV, e.to_string())),
        };
        Ok(Self {
            jobs,
            out_dir,
            seed_override,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub preset: Option<String>,
    pub experiment: ExperimentKind,
    pub seed0: Option<u64>,
    /// `"config"` or the name of the environment variable.
    pub seed_source: Option<String>,
    pub seeding_rule: Option<String>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<Check>,
    pub results: Value,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, RunError> {
        fs::create_dir_all(&dir).map_err(|source| RunError::Output {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self { dir, files: Vec::new() })
    }

    /// Write a file through `f` and record its digest.
    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> crate::error::Result<()>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let io_err = |source| RunError::Output {
            path: path.display().to_string(),
            source,
        };
        let mut buf = Vec::new();
        f(&mut buf).map_err(numeric(name))?;
        let mut file = BufWriter::new(File::create(&path).map_err(io_err)?);
        file.write_all(&buf).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        self.files.push(OutputFile {
            path: name.to_string(),
            bytes: buf.len() as u64,
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), RunError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}

struct Run {
    seeds: Vec<u64>,
    checks: Vec<Check>,
    results: Value,
}

/// Execute the experiment, write its outputs and `manifest.json`.
///
/// Failed statistical checks do not make this an error; inspect
/// [`RunManifest::passed`].
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let start = Instant::now();
    let jobs = opts.jobs.max(1);
    let mut experiment = config.experiment.clone();
    let seed_source = experiment.seed0().map(|_| match opts.seed_override {
        Some(seed) => {
            experiment.set_seed0(seed);
            SEED_ENV.to_string()
        }
        None => "config".to_string(),
    });
    let dir = opts.out_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    let mut out = Outputs::new(dir)?;
    let atom = &config.atom;
    let run = match &experiment {
        Experiment::Trajectories(p) => run_trajectories(atom, p, jobs, &mut out)?,
        Experiment::CompareUnraveling(p) => run_compare(atom, p, jobs, &mut out)?,
        Experiment::Periods(p) => run_periods(atom, p, jobs, &mut out)?,
        Experiment::Spectrum(p) => run_spectrum(atom, p, &mut out)?,
        Experiment::LightPeriodSpectrum(p) => {
            let AtomSource::VSystem(v) = &config.atom_source else {
                return Err(range("atom", "light_period_spectrum needs a v_system atom").into());
            };
            run_light_period(v, p, &mut out)?
        }
        Experiment::Ergodicity(p) => run_ergodicity(atom, p, &mut out)?,
    };
    let manifest = RunManifest {
        tool: "qjump".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        preset: config.preset.clone(),
        experiment: experiment.kind(),
        seed0: experiment.seed0(),
        seed_source,
        seeding_rule: experiment.seed0().map(|_| "seed_i = splitmix64(seed0 ^ i)".to_string()),
        seeds: run.seeds,
        jobs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: out.files.clone(),
        checks: run.checks,
        results: run.results,
    };
    let path = out.dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|source| RunError::Output {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

/// Jump-operator indices whose channels intersect the selected decay channels.
fn operator_indices(atom: &AtomModel, channels: &Option<Vec<usize>>) -> Result<Option<Vec<usize>>, RunError> {
    let Some(ch) = channels else {
        return Ok(None);
    };
    let ops = jump_operators(atom).map_err(numeric("jump operators"))?;
    Ok(Some(
        ops.iter()
            .enumerate()
            .filter(|(_, op)| op.channels.iter().any(|k| ch.contains(k)))
            .map(|(i, _)| i)
            .collect(),
    ))
}

fn run_trajectories(atom: &AtomModel, p: &TrajectoryParams, jobs: usize, out: &mut Outputs) -> Result<Run, RunError> {
    let sim = TrajectorySimulator::new(atom).map_err(numeric("trajectory setup"))?;
    let psi0 = basis(atom.n_levels, p.initial_level);
    let topts = match p.sample_dt {
        Some(dt) => {
            let n = (p.t_end / dt).floor() as usize;
            TrajectoryOptions::sampled((0..=n).map(|k| k as f64 * dt).collect())
        }
        None => TrajectoryOptions::default(),
    };
    let trajs = run_batch(&sim, &psi0, p.t_end, p.n_traj, p.seed0, jobs, &topts).map_err(numeric("trajectories"))?;
    let mut counts = Vec::with_capacity(trajs.len());
    for (i, tr) in trajs.iter().enumerate() {
        out.write(&format!("traj_{i:05}.jsonl"), |w| tr.write_jsonl(atom, w))?;
        if p.sample_dt.is_some() {
            out.write(&format!("traj_{i:05}_samples.csv"), |w| tr.write_samples_csv(w))?;
        }
        counts.push(tr.jumps.len());
    }
    let total: usize = counts.iter().sum();
    Ok(Run {
        seeds: trajs.iter().map(|t| t.seed).collect(),
        checks: Vec::new(),
        results: json!({
            "n_traj": p.n_traj,
            "jumps_per_trajectory": counts,
            "mean_emission_rate": total as f64 / (p.t_end * p.n_traj as f64),
        }),
    })
}

fn run_compare(atom: &AtomModel, p: &CompareParams, jobs: usize, out: &mut Outputs) -> Result<Run, RunError> {
    let psi0 = basis(atom.n_levels, p.initial_level);
    let grid = uniform_grid(0.0, p.t_end, p.n_points);
    let report = compare_unraveling_jobs(atom, &psi0, &grid, p.n_traj, p.seed0, jobs)
        .map_err(numeric("compare_unraveling"))?;
    out.write("unraveling.csv", |w| {
        writeln!(w, "t,trace_distance,mc_error")?;
        for ((t, d), e) in report.t_grid.iter().zip(&report.trace_distance).zip(&report.mc_error) {
            writeln!(w, "{t},{d},{e}")?;
        }
        Ok(())
    })?;
    let summary = json!({
        "n_traj": report.n_traj,
        "max_trace_distance": report.max_trace_distance,
        "max_mc_error": report.max_mc_error,
        "mc_factor": p.mc_factor,
    });
    out.write_json("report.json", &summary)?;
    Ok(Run {
        seeds: (0..p.n_traj as u64).map(|i| seed_for(p.seed0, i)).collect(),
        checks: vec![Check::at_most(
            "trace_distance_within_mc_error",
            report.max_trace_distance,
            p.mc_factor * report.max_mc_error,
        )],
        results: summary,
    })
}

fn run_periods(atom: &AtomModel, p: &PeriodsParams, jobs: usize, out: &mut Outputs) -> Result<Run, RunError> {
    let sim = TrajectorySimulator::new(atom).map_err(numeric("trajectory setup"))?;
    let psi0 = basis(atom.n_levels, p.initial_level);
    let ops = operator_indices(atom, &p.channels)?;
    let write_records = p.write_records;
    // Classify inside the workers so that only segments are kept.
    let per_traj = par_map(jobs, p.n_traj, |i| {
        let seed = seed_for(p.seed0, i as u64);
        let tr = sim.run(&psi0, p.t_end, seed, &TrajectoryOptions::default())?;
        let record = PhotonRecord::from_trajectory(&tr, ops.as_deref())?;
        let seg = classify_periods(&record, p.t0, p.t_min)?;
        let mut jsonl = Vec::new();
        if write_records {
            tr.write_jsonl(atom, &mut jsonl)?;
        }
        Ok((seed, record.len(), seg, jsonl))
    })
    .map_err(numeric("periods"))?;
    for (i, (_, _, seg, jsonl)) in per_traj.iter().enumerate() {
        out.write(&format!("segments_{i:05}.csv"), |w| seg.write_csv(w))?;
        if write_records {
            out.write(&format!("traj_{i:05}.jsonl"), |w| Ok(w.write_all(jsonl)?))?;
        }
    }
    let segs: Vec<_> = per_traj.iter().map(|(_, _, s, _)| s.clone()).collect();
    let stats = pooled_period_stats(&segs);
    let mut checks = Vec::new();
    let ks = stats
        .mean_dark
        .map(|m| ks_distance(&stats.dark_durations, |t| 1.0 - (-t / m).exp()));
    if !stats.dark_durations.is_empty() {
        let h = histogram(&stats.dark_durations, &Bins::Count(p.histogram_bins)).map_err(numeric("histogram"))?;
        out.write("dark_durations.csv", |w| {
            writeln!(w, "bin_start,bin_end,count,density")?;
            for k in 0..h.counts.len() {
                writeln!(w, "{},{},{},{}", h.edges[k], h.edges[k + 1], h.counts[k], h.density[k])?;
            }
            Ok(())
        })?;
    }
    let separation = match (stats.mean_dark, stats.mean_light_gap) {
        (Some(d), Some(g)) if g > 0.0 => Some(d / g),
        _ => None,
    };
    if let Some(min) = p.min_separation {
        checks.push(Check::at_least("dark_to_light_gap_ratio", separation.unwrap_or(f64::NAN), min));
    }
    if let Some(max) = p.max_dark_ks {
        checks.push(Check::at_most("dark_duration_exponential_ks", ks.unwrap_or(f64::NAN), max));
    }
    let summary = json!({
        "n_traj": p.n_traj,
        "t0": p.t0,
        "t_min": p.t_min,
        "n_detections": per_traj.iter().map(|t| t.1).sum::<usize>(),
        "n_dark": stats.n_dark,
        "n_light": stats.n_light,
        "mean_dark": stats.mean_dark,
        "mean_light": stats.mean_light,
        "mean_light_gap": stats.mean_light_gap,
        "dark_fraction": stats.dark_fraction,
        "dark_to_light_gap_ratio": separation,
        "dark_duration_exponential_ks": ks,
    });
    out.write_json("stats.json", &summary)?;
    Ok(Run {
        seeds: per_traj.iter().map(|t| t.0).collect(),
        checks,
        results: summary,
    })
}

fn run_spectrum(atom: &AtomModel, p: &SpectrumParams, out: &mut Outputs) -> Result<Run, RunError> {
    let grid = p.grid.points();
    let sopts = SpectrumOptions {
        tau_max: p.tau_max,
        channels: p.channels.clone(),
    };
    let spec = emission_spectrum_with(atom, &grid, &sopts).map_err(numeric("spectrum"))?;
    let maxima = spec.local_maxima();
    let mut results = json!({
        "coherent_weight": spec.coherent_weight,
        "total_power": spec.total_power,
        "coherent_fraction": spec.coherent_weight / spec.total_power,
        "sum_rule_error": spec.sum_rule_error(),
        "min_incoherent": spec.min_incoherent(),
        "maxima": maxima,
    });
    let mut extra = vec![("maxima".to_string(), maxima.len().to_string())];
    if let Some(window) = p.fit_window {
        let mut dec = decompose_line_center(&spec, window).map_err(numeric("line-centre decomposition"))?;
        let l = crate::master::build_liouvillian(atom).map_err(numeric("liouvillian"))?;
        dec.slow_rate = slowest_rate(&l);
        extra.extend(decomposition_header(&dec));
        results["decomposition"] = serde_json::to_value(&dec).expect("decomposition serializes");
        out.write_json("decomposition.json", &dec)?;
    }
    out.write("spectrum.csv", |w| spec.write_csv(w, &extra))?;
    let mut checks = Vec::new();
    if let Some(n) = p.expect_maxima {
        let mut c = Check::at_least("maxima_count", maxima.len() as f64, n as f64);
        c.passed = maxima.len() == n;
        checks.push(c);
    }
    if let Some(f) = p.min_coherent_fraction {
        checks.push(Check::at_least("coherent_fraction", spec.coherent_weight / spec.total_power, f));
    }
    Ok(Run {
        seeds: Vec::new(),
        checks,
        results,
    })
}

fn decomposition_header(dec: &crate::spectra::PeakDecomposition) -> Vec<(String, String)> {
    vec![
        ("broad_width".into(), dec.broad_width.to_string()),
        ("broad_area".into(), dec.broad_area.to_string()),
        ("narrow_width".into(), dec.narrow_width.to_string()),
        ("narrow_area".into(), dec.narrow_area.to_string()),
        ("narrow_present".into(), dec.narrow_present.to_string()),
        ("fit_relative_residual".into(), dec.relative_residual.to_string()),
    ]
}

fn run_light_period(v: &VSystemParams, p: &LightPeriodParams, out: &mut Outputs) -> Result<Run, RunError> {
    let grid = p.grid.points();
    let (spec, mut dec) = light_period_spectrum(v, &grid).map_err(numeric("light-period spectrum"))?;
    if let Some(window) = p.fit_window {
        let slow = dec.slow_rate;
        dec = decompose_line_center(&spec, window).map_err(numeric("line-centre decomposition"))?;
        dec.slow_rate = slow;
    }
    let mut extra = vec![("maxima".to_string(), spec.local_maxima().len().to_string())];
    extra.extend(decomposition_header(&dec));
    out.write("spectrum.csv", |w| spec.write_csv(w, &extra))?;
    out.write_json("decomposition.json", &dec)?;
    Ok(Run {
        seeds: Vec::new(),
        checks: Vec::new(),
        results: json!({
            "coherent_weight": spec.coherent_weight,
            "total_power": spec.total_power,
            "decomposition": dec,
        }),
    })
}

fn run_ergodicity(atom: &AtomModel, p: &ErgodicityParams, out: &mut Outputs) -> Result<Run, RunError> {
    let psi0 = basis(atom.n_levels, p.initial_level);
    let report = ergodicity_check(atom, &psi0, p.t_long, p.seed0).map_err(numeric("ergodicity"))?;
    out.write_json("ergodicity.json", &report)?;
    Ok(Run {
        seeds: vec![report.seed],
        checks: vec![Check::at_most("ergodicity_z_score", report.z_score.abs(), p.n_sigma)],
        results: serde_json::to_value(&report).expect("report serializes"),
    })
}
