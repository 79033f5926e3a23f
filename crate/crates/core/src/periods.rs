// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Photon-record analytics: light/dark segmentation, dark-period statistics,
//! waiting-time histograms and the single-trajectory ergodicity check.
//!
//! Segmentation rules, with threshold `T0` and minimum light length `T`:
//!
//! * detections separated by less than `T0` belong to the same light period;
//! * a light period starts at its first detection and closes `T0` after its
//!   last one, where the following dark period begins;
//! * light periods shorter than `T` (tail included) are flagged `discarded`;
//! * the interval before the first detection is a dark segment, and the
//!   segment reaching `t_end` is clipped there; both are flagged `truncated`.

use std::io::Write;

use serde::Serialize;

use crate::atom::AtomModel;
use crate::dynamics::{Trajectory, TrajectoryOptions, TrajectorySimulator};
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::master::{emission_rate, steady_state};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotonRecord {
    pub detection_times: Vec<f64>,
    pub t_end: f64,
}

impl PhotonRecord {
    pub fn new(detection_times: Vec<f64>, t_end: f64) -> Result<Self> {
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidArgument(format!("t_end must be finite and ≥ 0, got {t_end}")));
        }
        for (i, w) in detection_times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::UnsortedRecord { index: i + 1 });
            }
        }
        if let Some(&first) = detection_times.first() {
            if !(first >= 0.0) {
                return Err(Error::UnsortedRecord { index: 0 });
            }
        }
        if let Some(&last) = detection_times.last() {
            if last > t_end {
                return Err(Error::InvalidArgument(format!("detection at {last} after t_end = {t_end}")));
            }
        }
        Ok(Self { detection_times, t_end })
    }

    /// Detections on the given channels, or on all channels if `channels` is
    /// `None`.
    pub fn from_trajectory(traj: &Trajectory, channels: Option<&[usize]>) -> Result<Self> {
        let times = match channels {
            Some(ch) => traj.jump_times_for(ch),
            None => traj.jump_times(),
        };
        Self::new(times, traj.t_end)
    }

    pub fn len(&self) -> usize {
        self.detection_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detection_times.is_empty()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.detection_times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Light,
    Dark,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Light => "light",
            SegmentKind::Dark => "dark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub t_start: f64,
    pub t_end: f64,
    pub n_detections: usize,
    pub discarded: bool,
    pub truncated: bool,
    /// Time of the last detection of a light segment.
    #[serde(skip)]
    pub last_detection: Option<f64>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn is_light(&self) -> bool {
        self.kind == SegmentKind::Light
    }

    pub fn is_dark(&self) -> bool {
        self.kind == SegmentKind::Dark
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodSegmentation {
    pub t0_threshold: f64,
    pub min_light_length: f64,
    pub t_end: f64,
    pub segments: Vec<Segment>,
}

impl PeriodSegmentation {
    pub fn light(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_light())
    }

    pub fn dark(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_dark())
    }

    /// CSV: `kind,t_start,t_end,n_detections,discarded,truncated`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,t_start,t_end,n_detections,discarded,truncated")?;
        for s in &self.segments {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.kind.as_str(),
                s.t_start,
                s.t_end,
                s.n_detections,
                s.discarded,
                s.truncated
            )?;
        }
        Ok(())
    }
}

pub fn classify_periods(record: &PhotonRecord, t0: f64, t_min: f64) -> Result<PeriodSegmentation> {
    if !(t0 > 0.0) || !t0.is_finite() {
        return Err(Error::InvalidArgument(format!("T0 must be positive, got {t0}")));
    }
    if !(t_min >= 0.0) {
        return Err(Error::InvalidArgument(format!("T must be ≥ 0, got {t_min}")));
    }
    // Re-validate: the fields are public.
    let record = PhotonRecord::new(record.detection_times.clone(), record.t_end)?;
    let t_end = record.t_end;
    let times = &record.detection_times;
    let mut segments = Vec::new();
    let dark = |t_start: f64, t_stop: f64, truncated: bool| Segment {
        kind: SegmentKind::Dark,
        t_start,
        t_end: t_stop,
        n_detections: 0,
        discarded: false,
        truncated,
        last_detection: None,
    };
    if times.is_empty() {
        segments.push(dark(0.0, t_end, true));
    } else {
        if times[0] > 0.0 {
            segments.push(dark(0.0, times[0], true));
        }
        let mut start = 0;
        while start < times.len() {
            let mut stop = start;
            while stop + 1 < times.len() && times[stop + 1] - times[stop] < t0 {
                stop += 1;
            }
            let first = times[start];
            let last = times[stop];
            let close = last + t0;
            let clipped = close >= t_end;
            let light_end = if clipped { t_end } else { close };
            // A run that begins within T0 of the origin may have started earlier.
            let truncated = clipped || (start == 0 && first < t0);
            segments.push(Segment {
                kind: SegmentKind::Light,
                t_start: first,
                t_end: light_end,
                n_detections: stop - start + 1,
                discarded: light_end - first < t_min,
                truncated,
                last_detection: Some(last),
            });
            if stop + 1 < times.len() {
                segments.push(dark(close, times[stop + 1], false));
            } else if !clipped {
                segments.push(dark(close, t_end, true));
            }
            start = stop + 1;
        }
    }
    Ok(PeriodSegmentation {
        t0_threshold: t0,
        min_light_length: t_min,
        t_end,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DarkPeriodStats {
    /// Mean over complete dark segments, absent if there are none.
    pub mean_dark: Option<f64>,
    /// Mean over complete light segments (tail included).
    pub mean_light: Option<f64>,
    /// Total dark time over total classified time.
    pub dark_fraction: f64,
    /// Mean gap between consecutive detections inside light segments.
    pub mean_light_gap: Option<f64>,
    pub n_dark: usize,
    pub n_light: usize,
    pub dark_durations: Vec<f64>,
    pub light_durations: Vec<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn dark_period_stats(seg: &PeriodSegmentation) -> DarkPeriodStats {
    pooled_period_stats(std::slice::from_ref(seg))
}

/// Statistics over several independent records, as if concatenated; segments
/// truncated at a record boundary are excluded as usual.
pub fn pooled_period_stats(segs: &[PeriodSegmentation]) -> DarkPeriodStats {
    let complete = |s: &&Segment| !s.truncated;
    let mut dark_durations = Vec::new();
    let mut light_durations = Vec::new();
    let (mut dark_time, mut total_time, mut span, mut gaps) = (0.0, 0.0, 0.0, 0usize);
    for seg in segs {
        dark_durations.extend(seg.dark().filter(complete).map(Segment::duration));
        light_durations.extend(seg.light().filter(complete).map(Segment::duration));
        dark_time += seg.dark().map(Segment::duration).sum::<f64>();
        total_time += seg.t_end;
        for s in seg.light().filter(|s| s.n_detections > 1) {
            span += s.last_detection.unwrap_or(s.t_start) - s.t_start;
            gaps += s.n_detections - 1;
        }
    }
    DarkPeriodStats {
        mean_dark: mean(&dark_durations),
        mean_light: mean(&light_durations),
        dark_fraction: if total_time > 0.0 { dark_time / total_time } else { 0.0 },
        mean_light_gap: (gaps > 0).then(|| span / gaps as f64),
        n_dark: dark_durations.len(),
        n_light: light_durations.len(),
        dark_durations,
        light_durations,
    }
}

#[derive(Debug, Clone)]
pub enum Bins {
    /// Equal-width bins on [0, largest gap].
    Count(usize),
    /// Explicit increasing edges.
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalised so that Σ density·width = 1 over the gaps inside the range.
    pub density: Vec<f64>,
    pub n_samples: usize,
}

pub fn waiting_time_histogram(record: &PhotonRecord, bins: &Bins) -> Result<Histogram> {
    if record.len() < 2 {
        return Err(Error::TooFewDetections(record.len()));
    }
    histogram(&record.gaps(), bins)
}

pub fn histogram(samples: &[f64], bins: &Bins) -> Result<Histogram> {
    let edges = match bins {
        Bins::Count(0) => return Err(Error::InvalidArgument("need at least one bin".into())),
        Bins::Count(n) => {
            let hi = samples.iter().copied().fold(0.0, f64::max);
            let hi = if hi > 0.0 { hi } else { 1.0 };
            (0..=*n).map(|k| hi * k as f64 / *n as f64).collect::<Vec<_>>()
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument("bin edges must be increasing".into()));
            }
            e.clone()
        }
    };
    let nb = edges.len() - 1;
    let mut counts = vec![0u64; nb];
    for &x in samples {
        if x < edges[0] || x > edges[nb] {
            continue;
        }
        // upper edge inclusive for the last bin
        let k = edges.partition_point(|&e| e <= x).saturating_sub(1).min(nb - 1);
        counts[k] += 1;
    }
    let total: u64 = counts.iter().sum();
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&n, w)| if total > 0 { n as f64 / (total as f64 * (w[1] - w[0])) } else { 0.0 })
        .collect();
    Ok(Histogram {
        edges,
        counts,
        density,
        n_samples: samples.len(),
    })
}

/// One-sample Kolmogorov–Smirnov distance of `samples` against `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub t_long: f64,
    pub seed: u64,
    pub n_jumps: usize,
    /// n_jumps / t_long.
    pub time_average_rate: f64,
    /// Σ_k tr[C_k†C_k ρ_ss].
    pub ensemble_rate: f64,
    pub ratio: f64,
    /// Poisson standard error √n / t_long of the time average.
    pub sigma: f64,
    /// Deviation in units of `sigma`.
    pub z_score: f64,
}

impl ErgodicityReport {
    pub fn within(&self, n_sigma: f64) -> bool {
        (self.time_average_rate - self.ensemble_rate).abs() <= n_sigma * self.sigma
    }
}

pub fn ergodicity_check(atom: &AtomModel, psi0: &CVector, t_long: f64, seed: u64) -> Result<ErgodicityReport> {
    if !(t_long > 0.0) || !t_long.is_finite() {
        return Err(Error::InvalidArgument(format!("t_long must be positive, got {t_long}")));
    }
    let ensemble_rate = emission_rate(atom, &steady_state(atom)?.rho)?;
    let sim = TrajectorySimulator::new(atom)?;
    let traj = sim.run(psi0, t_long, seed, &TrajectoryOptions::default())?;
    let n = traj.jumps.len();
    let time_average_rate = n as f64 / t_long;
    let sigma = (n as f64).sqrt() / t_long;
    let diff = time_average_rate - ensemble_rate;
    Ok(ErgodicityReport {
        t_long,
        seed,
        n_jumps: n,
        time_average_rate,
        ensemble_rate,
        ratio: if ensemble_rate > 0.0 {
            time_average_rate / ensemble_rate
        } else if n == 0 {
            1.0
        } else {
            f64::INFINITY
        },
        sigma,
        z_score: if sigma > 0.0 {
            diff / sigma
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
    })
}
