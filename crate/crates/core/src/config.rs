//! Line-oriented scenario files.
//!
//! ```text
//! # comments start with '#'
//! p = 1
//! ybar = 100
//! vbar = 100
//! beta = 0.75
//! objective = revdecoup        # or demresp:<yref>
//! max_iters = 20
//! epsilon = 0
//! seed = 0
//! fit_tol = 1e-8
//! tol = 1e-6
//!
//! [device]
//! sat = log:10                 # or poly:a0,a1,...
//! gamma0 = 10,-1
//! gamma1 = (15,-1)
//! ```
//!
//! `beta` is required; every other global key has a default. Each `[device]`
//! block needs all three of its keys.

use std::fmt::Write as _;

use crate::engine::{DeviceSpec, Scenario};
use crate::error::{Error, Result};
use crate::estimator::DEFAULT_FIT_TOL;
use crate::follower::DEFAULT_TOL;
use crate::model::{GameParams, LeaderObjective, QuadraticIncentive, TrueSatisfaction};

#[derive(Default)]
struct DeviceDraft {
    header_line: usize,
    sat: Option<TrueSatisfaction>,
    gamma0: Option<QuadraticIncentive>,
    gamma1: Option<QuadraticIncentive>,
}

impl DeviceDraft {
    fn finish(self) -> Result<DeviceSpec> {
        let missing = |key: &str| Error::Parse {
            line: self.header_line,
            message: format!("device block is missing '{key}'"),
        };
        Ok(DeviceSpec {
            satisfaction: self.sat.clone().ok_or_else(|| missing("sat"))?,
            gamma0: self.gamma0.ok_or_else(|| missing("gamma0"))?,
            gamma1: self.gamma1.ok_or_else(|| missing("gamma1"))?,
        })
    }
}

/// Parse and validate a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut price = 1.0;
    let mut ybar = 100.0;
    let mut vbar = 100.0;
    let mut beta = None;
    let mut objective = LeaderObjective::RevenueDecoupling;
    let mut max_iters = Scenario::DEFAULT_MAX_ITERS;
    let mut epsilon = 0.0;
    let mut seed = 0;
    let mut fit_tol = DEFAULT_FIT_TOL;
    let mut tol = DEFAULT_TOL;
    let mut devices = Vec::new();
    let mut current: Option<DeviceDraft> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if content != "[device]" {
                return Err(parse_err(line, format!("unknown section '{content}'")));
            }
            if let Some(done) = current.take() {
                devices.push(done.finish()?);
            }
            current = Some(DeviceDraft {
                header_line: line,
                ..DeviceDraft::default()
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| parse_err(line, format!("expected 'key = value', got '{content}'")))?;

        if let Some(device) = current.as_mut() {
            match key {
                "sat" => device.sat = Some(parse_satisfaction(value, line)?),
                "gamma0" => device.gamma0 = Some(parse_incentive(value, line)?),
                "gamma1" => device.gamma1 = Some(parse_incentive(value, line)?),
                _ => return Err(parse_err(line, format!("unknown device key '{key}'"))),
            }
            continue;
        }
        match key {
            "p" => price = parse_f64(value, line)?,
            "ybar" => ybar = parse_f64(value, line)?,
            "vbar" => vbar = parse_f64(value, line)?,
            "beta" => beta = Some(parse_f64(value, line)?),
            "objective" => objective = parse_objective(value, line)?,
            "max_iters" => max_iters = parse_int(value, line)? as usize,
            "epsilon" => {
                epsilon = parse_f64(value, line)?;
                if epsilon < 0.0 {
                    return Err(parse_err(
                        line,
                        format!("epsilon must be non-negative, got {epsilon}"),
                    ));
                }
            }
            "seed" => seed = parse_int(value, line)?,
            "fit_tol" => fit_tol = parse_f64(value, line)?,
            "tol" => tol = parse_f64(value, line)?,
            _ => return Err(parse_err(line, format!("unknown key '{key}'"))),
        }
    }
    if let Some(done) = current.take() {
        devices.push(done.finish()?);
    }
    if devices.is_empty() {
        return Err(parse_err(
            last_line,
            "no [device] block; at least one device is required".into(),
        ));
    }
    let beta = beta.ok_or_else(|| parse_err(last_line, "missing required key 'beta'".into()))?;

    let params = GameParams::new(price, ybar, vbar, beta)?;
    let scenario = Scenario {
        params,
        objective,
        devices,
        max_iters,
        epsilon,
        seed,
        fit_tol,
        tol,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Inverse of [`parse_scenario`].
pub fn render(scenario: &Scenario) -> String {
    let p = &scenario.params;
    let mut out = String::new();
    let objective = match scenario.objective {
        LeaderObjective::RevenueDecoupling => "revdecoup".to_string(),
        LeaderObjective::DemandResponse { yref } => format!("demresp:{}", fmt_f64(yref)),
    };
    let _ = writeln!(out, "p = {}", fmt_f64(p.price));
    let _ = writeln!(out, "ybar = {}", fmt_f64(p.ybar));
    let _ = writeln!(out, "vbar = {}", fmt_f64(p.vbar));
    let _ = writeln!(out, "beta = {}", fmt_f64(p.beta));
    let _ = writeln!(out, "objective = {objective}");
    let _ = writeln!(out, "max_iters = {}", scenario.max_iters);
    let _ = writeln!(out, "epsilon = {}", fmt_f64(scenario.epsilon));
    let _ = writeln!(out, "seed = {}", scenario.seed);
    let _ = writeln!(out, "fit_tol = {}", fmt_f64(scenario.fit_tol));
    let _ = writeln!(out, "tol = {}", fmt_f64(scenario.tol));
    for d in &scenario.devices {
        let sat = match &d.satisfaction {
            TrueSatisfaction::Log { scale } => format!("log:{}", fmt_f64(*scale)),
            TrueSatisfaction::Poly(poly) => format!(
                "poly:{}",
                poly.alpha()
                    .iter()
                    .map(|a| fmt_f64(*a))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        };
        let _ = writeln!(out, "\n[device]");
        let _ = writeln!(out, "sat = {sat}");
        let _ = writeln!(
            out,
            "gamma0 = {},{}",
            fmt_f64(d.gamma0.xi1),
            fmt_f64(d.gamma0.xi2)
        );
        let _ = writeln!(
            out,
            "gamma1 = {},{}",
            fmt_f64(d.gamma1.xi1),
            fmt_f64(d.gamma1.xi2)
        );
    }
    out
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

fn parse_f64(value: &str, line: usize) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("expected a number, got '{value}'")))
}

fn parse_int(value: &str, line: usize) -> Result<u64> {
    value.parse::<u64>().map_err(|_| {
        parse_err(
            line,
            format!("expected a non-negative integer, got '{value}'"),
        )
    })
}

fn parse_list(value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_f64(v.trim(), line))
        .collect()
}

fn parse_incentive(value: &str, line: usize) -> Result<QuadraticIncentive> {
    let inner = value
        .strip_prefix('(')
        .and_then(|v| v.strip_suffix(')'))
        .unwrap_or(value);
    match parse_list(inner, line)?.as_slice() {
        [xi1, xi2] => Ok(QuadraticIncentive::new(*xi1, *xi2)),
        _ => Err(parse_err(
            line,
            format!("expected 'xi1,xi2', got '{value}'"),
        )),
    }
}

fn parse_satisfaction(value: &str, line: usize) -> Result<TrueSatisfaction> {
    let (kind, args) = value.split_once(':').ok_or_else(|| {
        parse_err(
            line,
            format!("expected 'log:a' or 'poly:a0,a1,...', got '{value}'"),
        )
    })?;
    let located = |e: Error| parse_err(line, e.to_string());
    match kind.trim() {
        "log" => TrueSatisfaction::log(parse_f64(args.trim(), line)?).map_err(located),
        "poly" => TrueSatisfaction::poly(parse_list(args, line)?).map_err(located),
        other => Err(parse_err(
            line,
            format!("unknown satisfaction form '{other}'"),
        )),
    }
}

fn parse_objective(value: &str, line: usize) -> Result<LeaderObjective> {
    if value == "revdecoup" {
        return Ok(LeaderObjective::RevenueDecoupling);
    }
    match value.split_once(':') {
        Some(("demresp", yref)) => Ok(LeaderObjective::DemandResponse {
            yref: parse_f64(yref.trim(), line)?,
        }),
        _ => Err(parse_err(
            line,
            format!("expected 'revdecoup' or 'demresp:<yref>', got '{value}'"),
        )),
    }
}
