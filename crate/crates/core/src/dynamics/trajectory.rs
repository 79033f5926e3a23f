// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, Write};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::propagator::{ConditionalPropagator, SamplerSettings};
use super::{jump_operators, ConditionalState, JumpOperator};
use crate::atom::{build_h_cond, AtomModel};
use crate::error::{Error, Result};
use crate::linalg::{c, norm_sqr, CVector};

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    /// Index into the simulator's jump operators.
    pub channel: usize,
    /// Normalised post-jump state, if recorded.
    pub state: Option<CVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub amplitudes: CVector,
    /// Samples are stored as normalised copies of the conditional state.
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub psi0: CVector,
    pub t_end: f64,
    pub jumps: Vec<JumpEvent>,
    pub samples: Vec<StateSample>,
}

impl Trajectory {
    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|j| j.t).collect()
    }

    /// Detection times restricted to the given jump-operator indices.
    pub fn jump_times_for(&self, channels: &[usize]) -> Vec<f64> {
        self.jumps
            .iter()
            .filter(|j| channels.contains(&j.channel))
            .map(|j| j.t)
            .collect()
    }

    /// JSON-lines export: one header record, then `{"t": .., "channel": ..}`
    /// per jump.
    pub fn write_jsonl<W: Write>(&self, atom: &AtomModel, mut out: W) -> Result<()> {
        let header = JumpRecordHeader {
            record: "header".into(),
            seed: self.seed,
            t_end: self.t_end,
            n_levels: self.psi0.len(),
            psi0: self.psi0.iter().map(|z| [z.re, z.im]).collect(),
            n_jumps: self.jumps.len(),
            atom: atom.to_json_value(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for j in &self.jumps {
            serde_json::to_writer(&mut out, &JumpLine { t: j.t, channel: j.channel })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Dense-sample CSV: `t, re_0, im_0, ..., norm2`.
    pub fn write_samples_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.psi0.len();
        let mut head = vec!["t".to_string()];
        for k in 0..n {
            head.push(format!("re_{k}"));
            head.push(format!("im_{k}"));
        }
        head.push("norm2".into());
        writeln!(out, "{}", head.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            for z in s.amplitudes.iter() {
                row.push(z.re.to_string());
                row.push(z.im.to_string());
            }
            row.push(norm_sqr(&s.amplitudes).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecordHeader {
    pub record: String,
    pub seed: u64,
    pub t_end: f64,
    pub n_levels: usize,
    pub psi0: Vec<[f64; 2]>,
    pub n_jumps: usize,
    pub atom: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpLine {
    t: f64,
    channel: usize,
}

/// Parse a JSON-lines jump record back into its header and `(t, channel)`
/// pairs.
pub fn read_jump_record<R: BufRead>(input: R) -> Result<(JumpRecordHeader, Vec<(f64, usize)>)> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty jump record".into()))??;
    let header: JumpRecordHeader = serde_json::from_str(&first)?;
    let mut jumps = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: JumpLine = serde_json::from_str(&line)?;
        jumps.push((j.t, j.channel));
    }
    Ok((header, jumps))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryOptions {
    /// Times at which normalised copies of the state are stored.
    pub sample_times: Vec<f64>,
    /// Store the post-jump state of every jump.
    pub keep_states: bool,
    /// Stop after this many jumps even if `t_end` has not been reached.
    pub max_jumps: Option<usize>,
}

impl TrajectoryOptions {
    pub fn with_states() -> Self {
        Self {
            keep_states: true,
            ..Self::default()
        }
    }

    pub fn sampled(times: Vec<f64>) -> Self {
        Self {
            sample_times: times,
            ..Self::default()
        }
    }
}

/// Draw a jump time from the conditional evolution of `state`.
///
/// Draws r ∈ (0, 1) and returns the first time at which ‖ψ(t)‖² = r, or `None`
/// if the norm is still above r at `t_max`. The returned state is the
/// non-normalised conditional state at the jump (or at `t_max`).
pub fn sample_jump<R: Rng + ?Sized>(
    state: &ConditionalState,
    prop: &ConditionalPropagator,
    rng: &mut R,
    t_max: f64,
) -> Result<(Option<f64>, ConditionalState)> {
    let r: f64 = rng.sample(Open01);
    let cr = prop.find_crossing(&state.amplitudes, r, t_max - state.t)?;
    let t = state.t + cr.elapsed;
    let out = ConditionalState::new(cr.state, t);
    Ok((cr.jumped.then_some(t), out))
}

/// Pick a decay channel with probability ∝ ‖C_k ψ‖² and return the
/// normalised post-jump state C_k ψ / ‖C_k ψ‖.
pub fn reset_state<R: Rng + ?Sized>(
    pre_jump: &ConditionalState,
    ops: &[JumpOperator],
    rng: &mut R,
) -> Result<(usize, ConditionalState)> {
    let images: Vec<CVector> = ops.iter().map(|op| &op.matrix * &pre_jump.amplitudes).collect();
    let weights: Vec<f64> = images.iter().map(norm_sqr).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoDecayPath);
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        chosen = Some(k);
        if u < acc {
            break;
        }
    }
    let k = chosen.ok_or(Error::NoDecayPath)?;
    let post = &images[k] / c(weights[k].sqrt());
    Ok((k, ConditionalState::new(post, pre_jump.t)))
}

/// Everything derived from an atom model that a trajectory needs; build once
/// and share between threads.
#[derive(Debug, Clone)]
pub struct TrajectorySimulator {
    n_levels: usize,
    propagator: ConditionalPropagator,
    ops: Vec<JumpOperator>,
}

impl TrajectorySimulator {
    pub fn new(atom: &AtomModel) -> Result<Self> {
        Self::with_settings(atom, SamplerSettings::default())
    }

    pub fn with_settings(atom: &AtomModel, settings: SamplerSettings) -> Result<Self> {
        let h = build_h_cond(atom)?;
        Ok(Self {
            n_levels: atom.n_levels,
            propagator: ConditionalPropagator::with_settings(&h, settings)?,
            ops: jump_operators(atom)?,
        })
    }

    pub fn propagator(&self) -> &ConditionalPropagator {
        &self.propagator
    }

    pub fn jump_operators(&self) -> &[JumpOperator] {
        &self.ops
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Run one trajectory from the unit vector `psi0` over `[0, t_end]`.
    ///
    /// Identical inputs and seed give bit-identical output.
    pub fn run(
        &self,
        psi0: &CVector,
        t_end: f64,
        seed: u64,
        opts: &TrajectoryOptions,
    ) -> Result<Trajectory> {
        if psi0.len() != self.n_levels {
            return Err(Error::InvalidArgument(format!(
                "initial state has dimension {}, atom has {} levels",
                psi0.len(),
                self.n_levels
            )));
        }
        if (norm_sqr(psi0) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("initial state must be normalised".into()));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid t_end {t_end}")));
        }
        if opts.sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sample times must be sorted".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traj = Trajectory {
            seed,
            psi0: psi0.clone(),
            t_end,
            jumps: Vec::new(),
            samples: Vec::with_capacity(opts.sample_times.len()),
        };
        let mut samples = opts
            .sample_times
            .iter()
            .copied()
            .skip_while(|&t| t < 0.0)
            .take_while(|&t| t <= t_end)
            .peekable();
        let mut state = ConditionalState::new(psi0.clone(), 0.0);
        loop {
            if opts.max_jumps.is_some_and(|m| traj.jumps.len() >= m) {
                break;
            }
            let (jump, pre) = sample_jump(&state, &self.propagator, &mut rng, t_end)?;
            let segment_end = jump.unwrap_or(f64::INFINITY);
            while let Some(&ts) = samples.peek() {
                if ts >= segment_end {
                    break;
                }
                let psi = self.propagator.propagate(&state.amplitudes, ts - state.t)?;
                let norm = norm_sqr(&psi).sqrt();
                traj.samples.push(StateSample {
                    t: ts,
                    amplitudes: psi / c(norm),
                    normalized: true,
                });
                samples.next();
            }
            let Some(t_jump) = jump else {
                break;
            };
            let (channel, post) = reset_state(&pre, &self.ops, &mut rng)?;
            traj.jumps.push(JumpEvent {
                t: t_jump,
                channel,
                state: opts.keep_states.then(|| post.amplitudes.clone()),
            });
            state = post;
        }
        Ok(traj)
    }
}

/// One trajectory of `atom` from `psi0` up to `t_end`, with post-jump states
/// recorded.
pub fn simulate_trajectory(atom: &AtomModel, psi0: &CVector, t_end: f64, seed: u64) -> Result<Trajectory> {
    TrajectorySimulator::new(atom)?.run(psi0, t_end, seed, &TrajectoryOptions::with_states())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::basis;
    use rand::rngs::mock::StepRng;

    /// Constant-output generator: `gen::<f64>()` and `Open01` both yield ≈ `x`.
    fn fixed(x: f64) -> StepRng {
        StepRng::new((x * (1u64 << 53) as f64) as u64 * (1 << 11), 0)
    }

    #[test]
    fn sample_jump_inverts_exponential_survival() {
        let a = 1.0;
        let sim = TrajectorySimulator::new(&AtomModel::two_level(0.0, a, 0.0)).unwrap();
        let s = ConditionalState::level(2, 1);
        let (t, pre) = sample_jump(&s, sim.propagator(), &mut fixed(0.5), f64::INFINITY).unwrap();
        let t = t.unwrap();
        assert!((t - (2.0f64).ln() / a).abs() < 1e-8);
        assert!((pre.norm_sqr() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ground_state_never_jumps() {
        let sim = TrajectorySimulator::new(&AtomModel::two_level(0.0, 1.0, 0.0)).unwrap();
        let s = ConditionalState::level(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (t, _) = sample_jump(&s, sim.propagator(), &mut rng, f64::INFINITY).unwrap();
            assert!(t.is_none());
            let (t, end) = sample_jump(&s, sim.propagator(), &mut rng, 50.0).unwrap();
            assert!(t.is_none());
            assert_eq!(end.t, 50.0);
        }
    }

    #[test]
    fn two_level_reset_is_ground_state() {
        let atom = AtomModel::two_level(1.0, 1.0, 0.0);
        let ops = jump_operators(&atom).unwrap();
        let pre = ConditionalState::new(CVector::from_vec(vec![c(0.3), c(0.4)]), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, post) = reset_state(&pre, &ops, &mut rng).unwrap();
        assert_eq!(k, 0);
        assert_eq!(post.amplitudes, basis(2, 0));
        assert_eq!(post.t, 2.0);
    }

    #[test]
    fn reset_follows_available_channel() {
        let atom = AtomModel::with_levels(3).channel(1, 0, 1.0).channel(2, 0, 1e-3);
        let ops = jump_operators(&atom).unwrap();
        let pre = ConditionalState::new(CVector::from_vec(vec![c(0.5), c(0.5), c(0.0)]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(reset_state(&pre, &ops, &mut rng).unwrap().0, 0);
        }
        let dark = ConditionalState::level(3, 0);
        assert!(matches!(reset_state(&dark, &ops, &mut rng), Err(Error::NoDecayPath)));
    }

    #[test]
    fn lambda_branching_ratio() {
        let ops = jump_operators(&AtomModel::lambda(1.0, 1.0)).unwrap();
        let pre = ConditionalState::level(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| reset_state(&pre, &ops, &mut rng).unwrap().0 == 0)
            .count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first as f64 - n as f64 / 2.0).abs() < 3.0 * sigma, "{first}");
    }

    #[test]
    fn single_decay_then_quiescent() {
        let atom = AtomModel::two_level(0.0, 1.0, 0.0);
        for seed in 0..20 {
            let traj = simulate_trajectory(&atom, &basis(2, 1), 1e4, seed).unwrap();
            assert_eq!(traj.jumps.len(), 1);
            assert_eq!(traj.jumps[0].state.as_ref().unwrap(), &basis(2, 0));
        }
    }

    #[test]
    fn degenerate_start_gives_jump_free_trajectory() {
        let atom = AtomModel::with_levels(3).channel(1, 0, 1.0);
        let traj = simulate_trajectory(&atom, &basis(3, 2), 100.0, 5).unwrap();
        assert!(traj.jumps.is_empty());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let atom = AtomModel::two_level(3.0, 1.0, 0.5);
        let a = simulate_trajectory(&atom, &basis(2, 0), 200.0, 42).unwrap();
        let b = simulate_trajectory(&atom, &basis(2, 0), 200.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&atom, &basis(2, 0), 200.0, 43).unwrap();
        assert_ne!(a.jumps, c.jumps);
    }

    #[test]
    fn trajectory_invariants() {
        let atom = AtomModel::two_level(2.0, 1.0, 0.0);
        let sim = TrajectorySimulator::new(&atom).unwrap();
        let times: Vec<f64> = (0..=500).map(|k| 0.1 * k as f64).collect();
        let opts = TrajectoryOptions {
            sample_times: times.clone(),
            keep_states: true,
            max_jumps: None,
        };
        let traj = sim.run(&basis(2, 0), 50.0, 7, &opts).unwrap();
        assert!(traj.jumps.windows(2).all(|w| w[0].t < w[1].t));
        for j in &traj.jumps {
            assert!((norm_sqr(j.state.as_ref().unwrap()) - 1.0).abs() < 1e-12);
        }
        assert_eq!(traj.samples.len(), times.len());
        for s in &traj.samples {
            assert!(s.normalized && (norm_sqr(&s.amplitudes) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let atom = AtomModel::two_level(3.0, 1.0, 0.0);
        let traj = simulate_trajectory(&atom, &basis(2, 0), 20.0, 1).unwrap();
        let mut buf = Vec::new();
        traj.write_jsonl(&atom, &mut buf).unwrap();
        let (header, jumps) = read_jump_record(&buf[..]).unwrap();
        assert_eq!(header.seed, 1);
        assert_eq!(header.n_jumps, traj.jumps.len());
        assert_eq!(AtomModel::from_json_value(header.atom).unwrap(), atom);
        let expected: Vec<(f64, usize)> = traj.jumps.iter().map(|j| (j.t, j.channel)).collect();
        assert_eq!(jumps, expected);
    }
}
