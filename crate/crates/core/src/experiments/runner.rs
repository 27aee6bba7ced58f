//! Monte Carlo density sweeps.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;

use crate::orchestrator::{run, RunLog};
use crate::{Error, Result};

use super::report::{rows_from_log, summarize, write_raw_file, AggregateReport, RawRow, RunFailure, RAW_FILE};
use super::scenario::{build_scenario, run_seed};
use super::ExperimentConfig;

/// One run of one density, fully determined by the config seed.
pub fn run_single(cfg: &ExperimentConfig, density: usize, run_index: usize) -> Result<RunLog> {
    let (scene, fleet) = build_scenario(cfg, density, run_index)?;
    run(
        &scene,
        &fleet,
        &cfg.noise,
        &cfg.estimator,
        cfg.slots,
        run_seed(cfg, density, run_index),
    )
}

/// Rows of every successful run, plus the failures.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(Vec<RawRow>, Vec<RunFailure>)> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .density_list
        .iter()
        .flat_map(|&d| (0..cfg.runs).map(move |r| (d, r)))
        .collect();
    let work = || -> Vec<(usize, usize, Result<RunLog>)> {
        jobs.par_iter()
            .map(|&(d, r)| (d, r, run_single(cfg, d, r)))
            .collect()
    };
    let results = if cfg.parallel == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (density, run, result) in results {
        match result {
            Ok(log) => rows.extend(rows_from_log(density, run, &log)),
            Err(e) => {
                warn!("density {density} run {run} failed: {e}");
                failures.push(RunFailure {
                    density,
                    run,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((rows, failures))
}

/// Runs the sweep and, with `out_dir`, writes the raw and aggregate CSVs.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<AggregateReport> {
    let (rows, failures) = simulate(cfg)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("all {} runs failed", failures.len())));
    }
    let mut report = summarize(&rows)?;
    let mut incomplete: Vec<usize> = failures.iter().map(|f| f.density).collect();
    incomplete.sort_unstable();
    incomplete.dedup();
    report.incomplete = incomplete;
    report.failures = failures;
    if let Some(dir) = out_dir {
        write_raw_file(&dir.join(RAW_FILE), &rows)?;
        report.write_aggregates(dir)?;
        info!("wrote {} raw rows to {}", rows.len(), dir.display());
    }
    Ok(report)
}
