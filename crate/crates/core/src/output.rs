//! Run artifacts: per-round CSV, plot series and a text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::fmt_f64;
use crate::engine::{RunOutcome, Scenario};
use crate::error::{Error, Result};
use crate::model::Satisfaction;

pub const ITERATIONS_CSV: &str = "iterations.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const RELERR_CSV: &str = "plotdata_relerr.csv";
pub const SATISFACTION_CSV: &str = "plotdata_satisfaction.csv";

pub const OUTPUT_FILES: [&str; 4] = [ITERATIONS_CSV, SUMMARY_TXT, RELERR_CSV, SATISFACTION_CSV];

/// Satisfaction curves are sampled on `[0, ybar / 10]` at this many intervals.
const SATISFACTION_SAMPLES: usize = 1000;

/// Write the full file set into `out_dir`, creating it if needed.
///
/// Existing output files are only replaced when `force` is set.
pub fn emit_records(
    outcome: &RunOutcome,
    scenario: &Scenario,
    out_dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    if outcome.records.is_empty() {
        return Err(Error::Precondition("no iteration records to write".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let paths: Vec<PathBuf> = OUTPUT_FILES.iter().map(|f| out_dir.join(f)).collect();
    if !force {
        if let Some(existing) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Io {
                path: existing.clone(),
                message: "already exists; pass --force to overwrite".into(),
            });
        }
    }
    write_file(&paths[0], &iterations_csv(outcome)?)?;
    write_file(&paths[1], &summary(outcome, scenario))?;
    write_file(&paths[2], &relerr_csv(outcome)?)?;
    write_file(&paths[3], &satisfaction_csv(outcome, scenario)?)?;
    Ok(paths)
}

/// Per-round, per-device rows. Coefficient and error columns are padded to
/// the widest fit in the run.
pub fn iterations_csv(outcome: &RunOutcome) -> Result<String> {
    let n_alpha = widest(outcome, |d| d.fit.as_ref().map(|f| f.alpha.alpha().len()));
    let n_err = widest(outcome, |d| d.rel_errors.as_ref().map(Vec::len));

    let mut header = vec![
        "iter".to_string(),
        "device".into(),
        "xi1".into(),
        "xi2".into(),
        "y_true".into(),
        "y_hat".into(),
    ];
    header.extend((0..n_alpha).map(|i| format!("alpha_{i}")));
    header.extend(["fit_method", "fit_residual", "v_d", "y_d", "J_L_true"].map(String::from));
    header.extend((0..n_err).map(|i| format!("relerr_alpha_{i}")));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for rec in &outcome.records {
        for (l, d) in rec.devices.iter().enumerate() {
            let mut row = vec![
                rec.iter.to_string(),
                l.to_string(),
                fmt_f64(d.incentive.xi1),
                fmt_f64(d.incentive.xi2),
                fmt_f64(d.y_true),
                fmt_f64(d.y_hat),
            ];
            let alpha = d.fit.as_ref().map(|f| f.alpha.alpha()).unwrap_or(&[]);
            row.extend(padded(alpha, n_alpha));
            match &d.fit {
                Some(f) => {
                    row.push(f.method.as_str().into());
                    row.push(fmt_f64(f.residual));
                }
                None => row.extend([String::new(), String::new()]),
            }
            match &d.desired {
                Some(dp) => {
                    row.push(fmt_f64(dp.v_d));
                    row.push(fmt_f64(dp.y_d));
                }
                None => row.extend([String::new(), String::new()]),
            }
            row.push(fmt_f64(d.leader_value));
            row.extend(padded(d.rel_errors.as_deref().unwrap_or(&[]), n_err));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Relative coefficient errors per round, for rounds that have them.
pub fn relerr_csv(outcome: &RunOutcome) -> Result<String> {
    let n_err = widest(outcome, |d| d.rel_errors.as_ref().map(Vec::len));
    let mut header = vec!["iter".to_string(), "device".into()];
    header.extend((0..n_err).map(|i| format!("relerr_alpha_{i}")));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for rec in &outcome.records {
        for (l, d) in rec.devices.iter().enumerate() {
            if let Some(errs) = &d.rel_errors {
                let mut row = vec![rec.iter.to_string(), l.to_string()];
                row.extend(padded(errs, n_err));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

/// True satisfaction against the first and last estimates on `[0, ybar / 10]`.
pub fn satisfaction_csv(outcome: &RunOutcome, scenario: &Scenario) -> Result<String> {
    let upper = scenario.params.ybar / 10.0;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["y", "device", "f", "fhat_first", "fhat_last"])
        .map_err(csv_err)?;
    for (l, device) in scenario.devices.iter().enumerate() {
        let mut fits = outcome
            .records
            .iter()
            .filter_map(|r| r.devices.get(l).and_then(|d| d.fit.as_ref()));
        let first = fits.next();
        let last = fits.next_back().or(first);
        for k in 0..=SATISFACTION_SAMPLES {
            let y = upper * k as f64 / SATISFACTION_SAMPLES as f64;
            let estimate = |fit: Option<&crate::estimator::EstimationResult>| {
                fit.map(|f| fmt_f64(f.alpha.value(y))).unwrap_or_default()
            };
            w.write_record([
                fmt_f64(y),
                l.to_string(),
                fmt_f64(device.satisfaction.value(y)),
                estimate(first),
                estimate(last),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Human-readable termination reason, final estimates and any rounds whose
/// hypotheses failed.
pub fn summary(outcome: &RunOutcome, scenario: &Scenario) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", outcome.stop);
    let _ = writeln!(s, "rounds recorded: {}", outcome.records.len());
    let _ = writeln!(s, "devices: {}", scenario.devices.len());
    if let Some(last) = outcome.records.last() {
        let _ = writeln!(
            s,
            "final aggregate consumption: {}",
            fmt_f64(last.aggregate_y)
        );
        let _ = writeln!(s, "final leader payoff: {}", fmt_f64(last.leader_value));
    }
    if let Some(fit) = &outcome.stop_fit {
        let alpha: Vec<String> = fit.alpha.alpha().iter().map(|a| fmt_f64(*a)).collect();
        let _ = writeln!(
            s,
            "stopping fit: alpha = [{}] ({}, order {}, residual {}, rank {} of {}x{}{})",
            alpha.join(", "),
            fit.method.as_str(),
            fit.order_j,
            fmt_f64(fit.residual),
            fit.rank,
            fit.shape.0,
            fit.shape.1,
            if fit.rank_deficient() {
                ", rank deficient"
            } else {
                ""
            }
        );
    }
    for l in 0..scenario.devices.len() {
        let last_fit = outcome
            .records
            .iter()
            .rev()
            .find_map(|r| r.devices.get(l).and_then(|d| d.fit.as_ref()));
        if let Some(fit) = last_fit {
            let alpha: Vec<String> = fit.alpha.alpha().iter().map(|a| fmt_f64(*a)).collect();
            let _ = writeln!(
                s,
                "device {l}: alpha = [{}] ({}, order {}, residual {})",
                alpha.join(", "),
                fit.method.as_str(),
                fit.order_j,
                fmt_f64(fit.residual)
            );
        }
    }
    for rec in &outcome.records {
        for (l, d) in rec.devices.iter().enumerate() {
            let Some(h) = d.hypotheses.filter(|h| !h.all_hold()) else {
                continue;
            };
            let failed: Vec<&str> = [
                (h.responses_interior, "responses_interior"),
                (h.data_consistent, "data_consistent"),
                (h.full_rank, "full_rank"),
                (h.target_interior, "target_interior"),
                (h.induces_target, "induces_target"),
            ]
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, name)| name)
            .collect();
            let _ = writeln!(
                s,
                "iteration {} device {l}: hypotheses failed: {}",
                rec.iter,
                failed.join(", ")
            );
        }
    }
    s
}

fn widest(outcome: &RunOutcome, f: impl Fn(&crate::engine::DeviceRound) -> Option<usize>) -> usize {
    outcome
        .records
        .iter()
        .flat_map(|r| r.devices.iter())
        .filter_map(f)
        .max()
        .unwrap_or(0)
}

fn padded(values: &[f64], width: usize) -> impl Iterator<Item = String> + '_ {
    (0..width).map(move |i| values.get(i).map(|v| fmt_f64(*v)).unwrap_or_default())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}
