//! Toy federated training experiment driven by a scenario's `flsim` block.

use std::io::Write;

use rand::Rng;
use wfl_alloc_core::flsim::{self, make_toy_task_with, run_async_oma, run_training, ToyTask, TrainingSetup, TrainingTrace};
use wfl_alloc_core::Scheme;

use crate::error::Result;
use crate::montecarlo::allocate_scheme;
use crate::parallel::map_trials;
use crate::scenario::{trial_rng, Scenario};

/// Label of the asynchronous baseline in traces.
pub const ASYNC_LABEL: &str = "async-oma";

/// Mini-batch counts of the toy users, drawn from the scenario's dataset
/// size range with the task seed.
pub fn toy_minibatch_counts(scenario: &Scenario) -> Vec<u32> {
    let mut rng = trial_rng(scenario.flsim.task_seed, u64::MAX);
    (0..scenario.flsim.num_users)
        .map(|_| {
            let samples = rng.random_range(scenario.dataset_size_min..=scenario.dataset_size_max);
            ((f64::from(samples) / f64::from(scenario.minibatch_size)).round() as u32).max(1)
        })
        .collect()
}

pub fn build_task(scenario: &Scenario) -> Result<ToyTask> {
    Ok(make_toy_task_with(&toy_minibatch_counts(scenario), &scenario.flsim.task, scenario.flsim.task_seed)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlSimReport {
    pub traces: Vec<TrainingTrace>,
    pub optimal_loss: f64,
    pub threshold: f64,
    /// Spearman correlation over the early window, or why it is undefined.
    pub correlation: std::result::Result<f64, String>,
    /// Median rounds to the threshold per label; runs that never reach it
    /// count as `num_rounds + 1`.
    pub median_rounds: Vec<(String, f64)>,
}

impl FlSimReport {
    pub fn median_rounds_of(&self, label: &str) -> Option<f64> {
        self.median_rounds.iter().find(|(l, _)| l == label).map(|(_, m)| *m)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Trains every configured scheme (and the asynchronous baseline) for
/// seeds `base_seed .. base_seed + num_seeds` on one task.
pub fn run_flsim(scenario: &Scenario, base_seed: u64, threads: usize) -> Result<FlSimReport> {
    let fl = &scenario.flsim;
    let task = build_task(scenario)?;
    let mut labels: Vec<Option<Scheme>> = fl.schemes.iter().copied().map(Some).collect();
    if fl.include_async {
        labels.push(None);
    }
    let jobs = fl.num_seeds * labels.len();
    let alloc_scenario = Scenario { round: fl.round, ..scenario.clone() };
    let traces = map_trials(jobs, threads, |j| {
        let seed = base_seed.wrapping_add((j / labels.len()) as u64);
        let setup = TrainingSetup { config: fl.round, clustering: scenario.clustering, num_rounds: fl.num_rounds, seed };
        match labels[j % labels.len()] {
            Some(scheme) => run_training(&task, &setup, scheme.name(), |a, u, _| allocate_scheme(&alloc_scenario, scheme, a, u), &fl.channel),
            None => run_async_oma(&task, &setup, &fl.channel),
        }
    })?
    .into_iter()
    .collect::<wfl_alloc_core::Result<Vec<_>>>()?;

    let optimal_loss = task.global_loss(&task.global_optimum()?);
    let initial = traces.first().map_or(optimal_loss, |t| t.initial_loss);
    let threshold = optimal_loss + fl.threshold_fraction * (initial - optimal_loss);
    let flexible: Vec<TrainingTrace> = traces.iter().filter(|t| t.label != ASYNC_LABEL).cloned().collect();
    let correlation = flsim::early_round_correlation(&flexible).map_err(|e| e.to_string());
    let median_rounds = labels
        .iter()
        .map(|l| {
            let label = l.map_or(ASYNC_LABEL, Scheme::name);
            let rounds = traces
                .iter()
                .filter(|t| t.label == label)
                .map(|t| t.rounds_to_reach(threshold).unwrap_or(fl.num_rounds + 1) as f64)
                .collect();
            (label.to_string(), median(rounds))
        })
        .collect();
    Ok(FlSimReport { traces, optimal_loss, threshold, correlation, median_rounds })
}

/// One row per trace and round: label, seed, round (1-based), loss,
/// WGPTM, round length and every user's trained mini-batches.
pub fn write_trace_csv<W: Write>(traces: &[TrainingTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let users = traces.first().and_then(|t| t.minibatches.first()).map_or(0, Vec::len);
    let mut header: Vec<String> = ["label", "seed", "round", "loss", "wgptm", "round_duration_s"].iter().map(|s| s.to_string()).collect();
    header.extend((0..users).map(|k| format!("phi_{k}")));
    w.write_record(&header)?;
    for t in traces {
        for r in 0..t.losses.len() {
            let mut row = vec![
                t.label.clone(),
                t.seed.to_string(),
                (r + 1).to_string(),
                t.losses[r].to_string(),
                t.wgptm[r].to_string(),
                t.round_duration_s[r].to_string(),
            ];
            row.extend(t.minibatches[r].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
