use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use coop_channel_slam::experiments::{
    read_raw_file, report::RAW_FILE, run_experiment, summarize, AggregateReport, ExperimentConfig,
};
use coop_channel_slam::orchestrator::EntityKind;
use coop_channel_slam::Result;

#[derive(Parser)]
#[command(version, about = "Cooperative multipath SLAM simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full density sweep
    Run(Common),
    /// One run with a verbose log
    Single(Common),
    /// Recompute the aggregate CSVs from a raw run log
    Summarize {
        /// Raw CSV; defaults to <out-dir>/raw_runs.csv
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated vehicle densities
    #[arg(long, value_delimiter = ',')]
    density: Option<Vec<usize>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    /// Worker threads, 0 for all cores
    #[arg(long)]
    parallel: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.density {
            cfg.density_list = d.clone();
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.slots {
            cfg.slots = s;
        }
        if let Some(p) = self.parallel {
            cfg.parallel = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(report: &AggregateReport) {
    println!("density  vehicle_err  cvt_err  improvement_pct");
    for r in &report.error_vs_density {
        println!(
            "{:>7}  {:>11.3}  {:>7.3}  {:>15.1}",
            r.density, r.mean_vehicle_err, r.mean_cvt_err, r.improvement_pct
        );
    }
    for f in &report.failures {
        println!("failed: density {} run {}: {}", f.density, f.run, f.message);
    }
    if !report.incomplete.is_empty() {
        println!("incomplete densities: {:?}", report.incomplete);
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let report = run_experiment(&cfg, Some(&common.out_dir))?;
            print_summary(&report);
        }
        Command::Single(common) => {
            let mut cfg = common.config()?;
            cfg.runs = 1;
            cfg.density_list.truncate(1);
            let density = cfg.density_list[0];
            let log = coop_channel_slam::experiments::run_single(&cfg, density, 0)?;
            for slot in 0..=cfg.slots {
                let v = log.mean_error(slot, EntityKind::Vehicle).unwrap_or(f64::NAN);
                let c = log.mean_error(slot, EntityKind::Cvt).unwrap_or(f64::NAN);
                let n = log.slot_records(slot, EntityKind::Cvt).count();
                println!("slot {slot:>3}: vehicle {v:.3} m, {n} CVTs, cvt {c:.3} m");
            }
            for e in &log.events {
                log::debug!("{e:?}");
            }
            let report = run_experiment(&cfg, Some(&common.out_dir))?;
            print_summary(&report);
        }
        Command::Summarize { input, out_dir } => {
            let input = input.unwrap_or_else(|| out_dir.join(RAW_FILE));
            let report = summarize(&read_raw_file(&input)?)?;
            report.write_aggregates(&out_dir)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.command {
        Command::Single(_) => "debug",
        _ => "info",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
