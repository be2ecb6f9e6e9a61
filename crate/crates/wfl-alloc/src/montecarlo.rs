//! Monte-Carlo trials, sweeps and their CSV tables.

use std::io::Write;

use serde::Serialize;
use wfl_alloc_core::baselines::{self, OrderSearch};
use wfl_alloc_core::{allocate, AllocationResult, Assignment, Scheme, SolverStatus, UserProfile};

use crate::error::Result;
use crate::parallel::map_trials;
use crate::scenario::{clustering_seed, generate_realization, Scenario, SweepParam};

/// Runs `scheme`, honoring the scenario's TDMA order search policy.
pub fn allocate_scheme(
    scenario: &Scenario,
    scheme: Scheme,
    assignment: &Assignment,
    users: &[UserProfile],
) -> wfl_alloc_core::Result<AllocationResult> {
    let config = &scenario.round;
    match (scheme, scenario.order_search) {
        (Scheme::Oma, OrderSearch::WithFallback) => baselines::allocate_oma_flexible_with(assignment, users, config, OrderSearch::WithFallback),
        (Scheme::SyncOma, OrderSearch::WithFallback) => baselines::allocate_sync_oma_with(assignment, users, config, OrderSearch::WithFallback),
        _ => allocate(scheme, assignment, users, config),
    }
}

/// Users and assignment of one trial.
pub fn trial_instance(scenario: &Scenario, trial: u64) -> wfl_alloc_core::Result<(Vec<UserProfile>, Assignment)> {
    let users = generate_realization(scenario, trial);
    let assignment = scenario.clustering.assign(&users, scenario.round.num_subchannels, clustering_seed(scenario.seed, trial))?;
    Ok((users, assignment))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub wgptm: f64,
    pub status: SolverStatus,
    pub heuristic_order: bool,
}

/// Per-scheme results of one trial; a failed allocation keeps its message.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub results: Vec<std::result::Result<SchemeOutcome, String>>,
}

pub fn run_trial(scenario: &Scenario, trial: u64) -> TrialOutcome {
    let instance = trial_instance(scenario, trial);
    let results = scenario
        .schemes
        .iter()
        .map(|&scheme| {
            let (users, assignment) = instance.as_ref().map_err(|e| e.to_string())?;
            allocate_scheme(scenario, scheme, assignment, users)
                .map(|r| SchemeOutcome { scheme, wgptm: r.objective, status: r.status, heuristic_order: r.heuristic_order })
                .map_err(|e| e.to_string())
        })
        .collect();
    TrialOutcome { trial, results }
}

pub fn run_trials(scenario: &Scenario, threads: usize) -> Result<Vec<TrialOutcome>> {
    map_trials(scenario.num_trials, threads, |t| run_trial(scenario, t as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub mean_wgptm: f64,
    /// Sample standard deviation (0 for a single trial).
    pub std_wgptm: f64,
    pub trials: usize,
    pub failed: usize,
}

pub fn summarize(scenario: &Scenario, outcomes: &[TrialOutcome]) -> Vec<SchemeSummary> {
    scenario
        .schemes
        .iter()
        .enumerate()
        .map(|(i, &scheme)| {
            let values: Vec<f64> = outcomes.iter().filter_map(|o| o.results[i].as_ref().ok().map(|r| r.wgptm)).collect();
            let n = values.len();
            let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SchemeSummary { scheme, mean_wgptm: mean, std_wgptm: std, trials: n, failed: outcomes.len() - n }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    #[serde(flatten)]
    pub summary: SchemeSummary,
}

/// Mean WGPTM of every scheme at every value of `param`.
pub fn run_sweep(scenario: &Scenario, param: SweepParam, values: &[f64], threads: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &value in values {
        let s = scenario.with_param(param, value)?;
        let outcomes = run_trials(&s, threads)?;
        rows.extend(summarize(&s, &outcomes).into_iter().map(|summary| SweepRow { param: value, summary }));
    }
    Ok(rows)
}

pub const SWEEP_HEADER: [&str; 5] = ["param", "scheme", "mean_wgptm", "std_wgptm", "trials"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.summary.scheme.to_string(),
            r.summary.mean_wgptm.to_string(),
            r.summary.std_wgptm.to_string(),
            r.summary.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const MONTECARLO_HEADER: [&str; 6] = ["trial", "scheme", "wgptm", "status", "heuristic_order", "error"];

fn status_name(s: SolverStatus) -> &'static str {
    match s {
        SolverStatus::Optimal => "optimal",
        SolverStatus::Clipped => "clipped",
        SolverStatus::Infeasible => "infeasible",
    }
}

/// One row per trial and scheme.
pub fn write_montecarlo_csv<W: Write>(scenario: &Scenario, outcomes: &[TrialOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MONTECARLO_HEADER)?;
    for o in outcomes {
        for (scheme, r) in scenario.schemes.iter().zip(&o.results) {
            let row = match r {
                Ok(r) => [
                    o.trial.to_string(),
                    scheme.to_string(),
                    r.wgptm.to_string(),
                    status_name(r.status).to_string(),
                    r.heuristic_order.to_string(),
                    String::new(),
                ],
                Err(e) => [o.trial.to_string(), scheme.to_string(), String::new(), "error".into(), String::new(), e.clone()],
            };
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(())
}
