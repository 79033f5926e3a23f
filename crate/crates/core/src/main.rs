// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! `qjump` command-line front end.
//!
//! Errors print one line `error: <CODE>: <message>` on stderr. Exit codes:
//! 0 ok, 2 configuration or usage error, 3 numerical failure, 4 failed
//! statistical check.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qjump::experiment::{load_config, run_experiment, RunError, RunOptions};
use qjump::periods::{classify_periods, PhotonRecord};
use qjump::presets::{preset_names, preset_text};

#[derive(Parser)]
#[command(name = "qjump", version, about = "Quantum-jump simulator for few-level atoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its outputs and manifest.
    Run {
        config: PathBuf,
        /// Worker threads for independent trajectories.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory, replacing the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List or print the shipped presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Classify a JSON-lines jump record into light and dark periods (CSV on stdout).
    Segment {
        record: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long, default_value_t = 0.0)]
        t_min: f64,
        /// Comma-separated jump-operator indices counted as detections.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<usize>>,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

struct Failure {
    code: &'static str,
    message: String,
    exit: u8,
}

impl Failure {
    fn new(code: &'static str, message: impl ToString, exit: u8) -> Self {
        Self {
            code,
            message: message.to_string(),
            exit,
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self::new(e.code(), &e, e.exit_code() as u8)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let body: Vec<&str> = text.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            eprintln!("error: USAGE: {}", one_line(body.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, one_line(&f.message));
            ExitCode::from(f.exit)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, jobs, out } => {
            if jobs == 0 {
                return Err(Failure::new("USAGE", "--jobs must be at least 1", 2));
            }
            let cfg = load_config(&config).map_err(RunError::from)?;
            let opts = RunOptions::from_env(jobs, out).map_err(RunError::from)?;
            let manifest = run_experiment(&cfg, &opts)?;
            let dir = opts.out_dir.unwrap_or(cfg.output_dir);
            println!(
                "{} outputs written to {} (config {}, {:.2} s)",
                manifest.outputs.len(),
                dir.display(),
                &manifest.config_hash[..12],
                manifest.wall_clock_seconds
            );
            for c in &manifest.checks {
                println!(
                    "check {}: {} (value {}, threshold {})",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.value,
                    c.threshold
                );
            }
            if let Some(c) = manifest.failed_checks().next() {
                return Err(Failure::new(
                    "CHECK_FAILED",
                    format!("{}: value {} against threshold {}", c.name, c.value, c.threshold),
                    4,
                ));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config).map_err(RunError::from)?;
            println!("ok: {:?} experiment, config {}", cfg.experiment.kind(), cfg.hash());
            Ok(())
        }
        Command::Preset { action } => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            let io_err = |e: io::Error| Failure::new("OUTPUT_IO", e, 2);
            match action {
                PresetAction::List => {
                    for name in preset_names() {
                        writeln!(out, "{name}").map_err(io_err)?;
                    }
                }
                PresetAction::Show { name } => {
                    let text = preset_text(&name)
                        .ok_or_else(|| Failure::new("CONFIG_SCHEMA", format!("unknown preset {name:?}"), 2))?;
                    out.write_all(text.as_bytes()).map_err(io_err)?;
                }
            }
            Ok(())
        }
        Command::Segment {
            record,
            t0,
            t_min,
            channels,
        } => {
            let file = File::open(&record).map_err(|e| Failure::new("CONFIG_IO", format!("{}: {e}", record.display()), 2))?;
            let (header, jumps) = qjump::dynamics::read_jump_record(BufReader::new(file))
                .map_err(|e| Failure::new("CONFIG_SCHEMA", format!("{}: {e}", record.display()), 2))?;
            let times = jumps
                .iter()
                .filter(|(_, ch)| channels.as_ref().map_or(true, |c| c.contains(ch)))
                .map(|(t, _)| *t)
                .collect();
            let rec = PhotonRecord::new(times, header.t_end).map_err(|e| Failure::new("NUMERIC", e, 3))?;
            let seg = classify_periods(&rec, t0, t_min).map_err(|e| Failure::new("CONFIG_RANGE", e, 2))?;
            seg.write_csv(io::stdout().lock()).map_err(|e| Failure::new("OUTPUT_IO", e, 2))?;
            Ok(())
        }
    }
}
