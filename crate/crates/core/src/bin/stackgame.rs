use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use stackgame::config::{fmt_f64, parse_scenario, render};
use stackgame::engine::{run_aggregate, run_device_level, RunOutcome, Scenario};
use stackgame::output::emit_records;
use stackgame::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stackgame",
    version,
    about = "Incentive design with utility learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single consumer observed through the meter.
    RunAggregate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// One learning loop per device on disaggregated consumption.
    RunDevices {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Device-level runs over several noise bounds and seeds.
    SweepEpsilon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        /// Seeds per noise bound, counting up from the scenario seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        force: bool,
    },
}

enum Status {
    Completed,
    EarlyStop,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Completed) => ExitCode::SUCCESS,
        Ok(Status::EarlyStop) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::RunAggregate {
            config,
            out,
            seed,
            iters,
            force,
        } => {
            let mut scenario = load(&config)?;
            override_scenario(&mut scenario, seed, iters, None)?;
            let outcome = run_aggregate(&scenario)?;
            finish_single(&outcome, &scenario, &out, force)
        }
        Command::RunDevices {
            config,
            out,
            epsilon,
            seed,
            iters,
            force,
        } => {
            let mut scenario = load(&config)?;
            override_scenario(&mut scenario, seed, iters, epsilon)?;
            let outcome = run_device_level(&scenario)?;
            finish_single(&outcome, &scenario, &out, force)
        }
        Command::SweepEpsilon {
            config,
            out,
            epsilons,
            seeds,
            force,
        } => {
            let scenario = load(&config)?;
            sweep(&scenario, &out, &epsilons, seeds, force)
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_scenario(&text)
}

fn override_scenario(
    scenario: &mut Scenario,
    seed: Option<u64>,
    iters: Option<usize>,
    epsilon: Option<f64>,
) -> Result<()> {
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(iters) = iters {
        scenario.max_iters = iters;
    }
    if let Some(eps) = epsilon {
        scenario.epsilon = eps;
    }
    scenario.validate()
}

fn finish_single(
    outcome: &RunOutcome,
    scenario: &Scenario,
    out: &Path,
    force: bool,
) -> Result<Status> {
    emit_records(outcome, scenario, out, force)?;
    println!("{}", outcome.stop);
    Ok(if outcome.stop.is_early() {
        Status::EarlyStop
    } else {
        Status::Completed
    })
}

fn sweep(base: &Scenario, out: &Path, epsilons: &[f64], seeds: u64, force: bool) -> Result<Status> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let mut scenarios = Vec::new();
    for &eps in epsilons {
        let mut s = base.clone();
        s.epsilon = eps;
        s.validate()?;
        scenarios.push(s);
    }

    let jobs: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|e| (0..seeds).map(move |k| (e, k)))
        .collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(e, k)| {
            let mut s = scenarios[e].clone();
            s.seed = base.seed.wrapping_add(k);
            run_device_level(&s)
        })
        .collect::<Result<_>>()?;

    let mut early = false;
    for (e, scenario) in scenarios.iter().enumerate() {
        let runs = &outcomes[e * seeds as usize..(e + 1) * seeds as usize];
        let dir = out.join(format!("eps_{}", fmt_f64(scenario.epsilon)));
        emit_records(&runs[0], scenario, &dir, force)?;
        write_new(&dir.join("scenario.cfg"), &render(scenario), force)?;
        write_new(
            &dir.join("median_relerr.csv"),
            &median_relerr_csv(runs)?,
            force,
        )?;
        early |= runs.iter().any(|r| r.stop.is_early());
        println!(
            "epsilon {}: {} seeds, first run {}",
            fmt_f64(scenario.epsilon),
            seeds,
            runs[0].stop
        );
    }
    Ok(if early {
        Status::EarlyStop
    } else {
        Status::Completed
    })
}

/// Median over runs of each relative coefficient error, per round and device.
fn median_relerr_csv(runs: &[RunOutcome]) -> Result<String> {
    let rounds = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let devices = runs
        .iter()
        .flat_map(|r| r.records.first())
        .map(|r| r.devices.len())
        .max()
        .unwrap_or(0);
    let width = runs
        .iter()
        .flat_map(|r| &r.records)
        .flat_map(|r| &r.devices)
        .filter_map(|d| d.rel_errors.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);

    let mut header = vec!["iter".to_string(), "device".into(), "runs".into()];
    header.extend((0..width).map(|i| format!("median_relerr_alpha_{i}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for iter in 0..rounds {
        for l in 0..devices {
            let errs: Vec<&Vec<f64>> = runs
                .iter()
                .filter_map(|r| r.records.get(iter))
                .filter_map(|r| r.devices.get(l).and_then(|d| d.rel_errors.as_ref()))
                .collect();
            if errs.is_empty() {
                continue;
            }
            let mut row = vec![iter.to_string(), l.to_string(), errs.len().to_string()];
            for c in 0..width {
                let mut col: Vec<f64> = errs.iter().filter_map(|e| e.get(c).copied()).collect();
                row.push(median(&mut col).map(fmt_f64).unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn write_new(path: &Path, contents: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Io {
            path: path.to_path_buf(),
            message: "already exists; pass --force to overwrite".into(),
        });
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
