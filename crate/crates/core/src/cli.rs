// SPDX-License-Identifier: Apache-2.0
//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage, validation or I/O errors, 2 when a
//! run detects a delivery mismatch or a broken forwarding invariant.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::harness::{emit_csv, emit_delivery_csv, run, Mode, RunError, Scenario};
use crate::topogen::{self, TopologyKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DELIVERY: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fwdstate", version, about = "Forwarding-state scaling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a scenario and write state.csv, delivery.csv and schedule.txt.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the workload seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of flat, mapencap, mpls, stateful_mcast, bier.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
    },
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Write a scenario with a synthetic topology and default settings.
    GenTopology {
        #[arg(long)]
        kind: TopologyKind,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run { scenario, out, seed, modes } => cmd_run(scenario, out, seed, modes),
        Command::Validate { scenario } => match Scenario::load(&scenario).and_then(|s| s.prepare().map(|_| ())) {
            Ok(()) => {
                println!("{}: ok", scenario.display());
                EXIT_OK
            }
            Err(e) => fail(&e),
        },
        Command::GenTopology { kind, size, out } => {
            let sc = Scenario::new(topogen::generate(kind, size));
            match fs::write(&out, sc.to_json() + "\n") {
                Ok(()) => EXIT_OK,
                Err(e) => fail(&RunError::Io(out, e.to_string())),
            }
        }
    }
}

fn fail(e: &RunError) -> i32 {
    eprintln!("error: {e}");
    EXIT_INVALID
}

fn cmd_run(path: PathBuf, out: PathBuf, seed: Option<u64>, modes: Option<Vec<Mode>>) -> i32 {
    let mut sc = match Scenario::load(&path) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(seed) = seed {
        sc.workload.seed = seed;
    }
    if let Some(m) = modes {
        sc.modes = m;
    }
    let result = match run(&sc) {
        Ok(r) => r,
        // a replay error means a module rejected an event the schedule deemed valid
        Err(e @ RunError::Replay { .. }) => {
            eprintln!("error: {e}");
            return EXIT_DELIVERY;
        }
        Err(e) => return fail(&e),
    };
    if !result.all_ok() {
        for row in result.delivery.failures() {
            eprintln!(
                "delivery mismatch: tick {} group {} mode {}: delivered {:?} expected {:?}{}",
                row.tick,
                row.group,
                row.mode,
                row.delivered.iter().map(|r| r.0).collect::<Vec<_>>(),
                row.expected.iter().map(|r| r.0).collect::<Vec<_>>(),
                row.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
        }
        for f in &result.unicast.failures {
            eprintln!("unicast mismatch: {f}");
        }
        if let Err(e) = emit_delivery_csv(&result.delivery, &out) {
            eprintln!("error: {e}");
        }
        return EXIT_DELIVERY;
    }
    if let Err(e) = emit_csv(&result.snapshots, &result.delivery, &out) {
        return fail(&e);
    }
    let sched = out.join("schedule.txt");
    if let Err(e) = fs::write(&sched, result.schedule.to_text()) {
        return fail(&RunError::Io(sched, e.to_string()));
    }
    EXIT_OK
}
