//! Command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wfl_alloc_core::Scheme;

use crate::checks::{self, CheckPlan};
use crate::error::{Error, Result};
use crate::montecarlo::{allocate_scheme, run_sweep, run_trials, trial_instance, write_montecarlo_csv, write_sweep_csv};
use crate::parallel::configured_threads;
use crate::scenario::Scenario;
use crate::toy::{run_flsim, write_trace_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Resource allocation for MC-NOMA wireless federated learning.
#[derive(Debug, Parser)]
#[command(name = "wfl-alloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Allocate one realization with one scheme and print the result as JSON.
    Allocate {
        #[command(flatten)]
        common: Common,
        /// Realization index under the seed.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Mean WGPTM per scheme over the scenario's sweep values (CSV).
    Sweep(Common),
    /// Per-trial WGPTM of every scheme for a fixed scenario (CSV).
    Montecarlo(Common),
    /// Toy federated training; writes a per-round trace CSV.
    Flsim(Common),
    /// Run the oracle and property checks.
    Selftest {
        #[arg(long)]
        seed: Option<u64>,
        /// Monte-Carlo trials for the statistical checks.
        #[arg(long)]
        trials: Option<usize>,
        /// Acceptance-size counts instead of the quick defaults.
        #[arg(long)]
        full: bool,
        /// Comma-separated check ids (1-10); all when absent.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=10))]
        only: Vec<u8>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON scenario file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of trials (or toy seeds for `flsim`).
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// A scheme name or `all`.
    #[arg(long, value_parser = parse_scheme_selection)]
    scheme: Option<SchemeSelection>,
}

#[derive(Debug, Clone, PartialEq)]
enum SchemeSelection {
    All,
    One(Scheme),
}

fn parse_scheme_selection(s: &str) -> std::result::Result<SchemeSelection, String> {
    if s == "all" {
        return Ok(SchemeSelection::All);
    }
    s.parse().map(SchemeSelection::One).map_err(|_| {
        let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
        format!("unknown scheme `{s}`; valid: all, {}", names.join(", "))
    })
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::load(&self.config)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(trials) = self.trials {
            if trials == 0 {
                return Err(Error::Config("--trials must be at least 1".into()));
            }
            s.num_trials = trials;
            s.flsim.num_seeds = trials;
        }
        match &self.scheme {
            Some(SchemeSelection::One(scheme)) => {
                s.schemes = vec![*scheme];
                s.flsim.schemes = vec![*scheme];
            }
            Some(SchemeSelection::All) => {
                s.schemes = Scheme::ALL.to_vec();
                s.flsim.schemes = Scheme::ALL.to_vec();
            }
            None => {}
        }
        Ok(s)
    }
}

fn open_out<'a>(out: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    })
}

fn run_command(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let threads = configured_threads();
    match cli.command {
        Command::Allocate { common, trial } => {
            let scenario = common.scenario()?;
            let scheme = match common.scheme {
                None => Scheme::Joint,
                Some(SchemeSelection::One(s)) => s,
                Some(SchemeSelection::All) => return Err(Error::Config("allocate takes a single --scheme".into())),
            };
            let (users, assignment) = trial_instance(&scenario, trial)?;
            let result = allocate_scheme(&scenario, scheme, &assignment, &users)?;
            let mut out = open_out(common.out.as_deref(), stdout)?;
            serde_json::to_writer_pretty(&mut out, &result)?;
            writeln!(out)?;
            out.flush()?;
        }
        Command::Sweep(common) => {
            let scenario = common.scenario()?;
            let sweep = scenario.sweep.clone().ok_or_else(|| Error::Config("scenario has no `sweep` block".into()))?;
            let rows = run_sweep(&scenario, sweep.param, &sweep.values, threads)?;
            write_sweep_csv(&rows, open_out(common.out.as_deref(), stdout)?)?;
        }
        Command::Montecarlo(common) => {
            let scenario = common.scenario()?;
            let outcomes = run_trials(&scenario, threads)?;
            write_montecarlo_csv(&scenario, &outcomes, open_out(common.out.as_deref(), stdout)?)?;
        }
        Command::Flsim(common) => {
            let scenario = common.scenario()?;
            let report = run_flsim(&scenario, scenario.seed, threads)?;
            write_trace_csv(&report.traces, open_out(common.out.as_deref(), stdout)?)?;
            match &report.correlation {
                Ok(r) => writeln!(stderr, "spearman(wgptm, loss decrease) over early rounds: {r:.4}")?,
                Err(e) => writeln!(stderr, "spearman undefined: {e}")?,
            }
            for (label, m) in &report.median_rounds {
                writeln!(stderr, "median rounds to threshold {label}: {m}")?;
            }
        }
        Command::Selftest { seed, trials, full, only } => {
            let mut plan = if full { CheckPlan::full() } else { CheckPlan::quick() };
            plan.threads = threads;
            if let Some(seed) = seed {
                plan.seed = seed;
            }
            if let Some(t) = trials {
                plan.dominance_trials = t;
                plan.affine_trials = t;
                plan.equalization_trials = t;
            }
            let mut all_passed = true;
            let outcomes = if only.is_empty() { checks::run_all(&plan) } else { checks::run_selected(&plan, &only) };
            for outcome in outcomes {
                writeln!(stdout, "{outcome}")?;
                all_passed &= outcome.passed;
            }
            return Ok(if all_passed { EXIT_OK } else { EXIT_NUMERIC });
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on usage or configuration errors,
/// 2 on numeric or output failures.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match run_command(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_NUMERIC,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_selection_parsing() {
        assert_eq!(parse_scheme_selection("all"), Ok(SchemeSelection::All));
        assert_eq!(parse_scheme_selection("sync-oma"), Ok(SchemeSelection::One(Scheme::SyncOma)));
        let err = parse_scheme_selection("magic").unwrap_err();
        assert!(err.contains("joint") && err.contains("sync-full-power"), "{err}");
    }

    #[test]
    fn usage_errors_exit_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["wfl-alloc", "allocate"], &mut out, &mut err), EXIT_USAGE);
        assert!(String::from_utf8_lossy(&err).contains("--config"));
        assert_eq!(run(["wfl-alloc", "frobnicate"], &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["wfl-alloc", "--help"], &mut out, &mut err), EXIT_OK);
    }
}
