//! The closed loop: issue incentives, observe (possibly disaggregated)
//! consumption, re-estimate each device's satisfaction and design the next
//! incentive.
//!
//! Rounds 0 and 1 issue the scenario's bootstrap incentives. From round 2 on
//! every device is fitted on all of its past observations, the leader picks a
//! desired point under the fit and the designed incentive is issued. The run
//! stops after `max_iters` rounds, or earlier when a fit is inconsistent with
//! the data or a desired point falls on the boundary of the decision set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{
    self, kkt_fit, minimal_order_fit, CoeffBox, EstimationResult, KktConfig, ObservationHistory,
    DEFAULT_MAX_ORDER,
};
use crate::follower::{self, BestResponse};
use crate::leader::{self, DesiredPoint};
use crate::model::{
    leader_payoff, GameParams, LeaderObjective, QuadraticIncentive, TrueSatisfaction,
};

/// A penalty at or below this counts as an exact KKT fit.
pub const KKT_EXACT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub satisfaction: TrueSatisfaction,
    pub gamma0: QuadraticIncentive,
    pub gamma1: QuadraticIncentive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: GameParams,
    pub objective: LeaderObjective,
    pub devices: Vec<DeviceSpec>,
    pub max_iters: usize,
    /// Bound on the disaggregation error per device.
    pub epsilon: f64,
    pub seed: u64,
    pub fit_tol: f64,
    pub tol: f64,
}

impl Scenario {
    pub const DEFAULT_MAX_ITERS: usize = 20;

    pub fn new(params: GameParams, objective: LeaderObjective, devices: Vec<DeviceSpec>) -> Self {
        Self {
            params,
            objective,
            devices,
            max_iters: Self::DEFAULT_MAX_ITERS,
            epsilon: 0.0,
            seed: 0,
            fit_tol: estimator::DEFAULT_FIT_TOL,
            tol: follower::DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.objective.validate(&self.params)?;
        if self.devices.is_empty() {
            return Err(Error::InvalidScenario(
                "at least one device is required".into(),
            ));
        }
        if self.max_iters < 2 {
            return Err(Error::InvalidScenario(format!(
                "max_iters must be at least 2, got {}",
                self.max_iters
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.fit_tol > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidScenario(
                "fit_tol and tol must be positive".into(),
            ));
        }
        for (l, d) in self.devices.iter().enumerate() {
            for g in [d.gamma0, d.gamma1] {
                if !(g.xi1.is_finite() && g.xi2.is_finite()) {
                    return Err(Error::InvalidScenario(format!(
                        "device {l}: bootstrap incentive {g:?} is not finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Simulated disaggregation: true device consumption plus bounded uniform
/// noise, clipped to the decision set.
#[derive(Debug, Clone)]
pub struct Disaggregator {
    epsilon: f64,
    ybar: f64,
    rng: ChaCha8Rng,
}

impl Disaggregator {
    pub fn new(epsilon: f64, ybar: f64, seed: u64) -> Self {
        Self {
            epsilon,
            ybar,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn disaggregate(&mut self, true_device_responses: &[f64]) -> Vec<f64> {
        if self.epsilon == 0.0 {
            return true_device_responses.to_vec();
        }
        true_device_responses
            .iter()
            .map(|y| {
                let u = self.rng.gen_range(-self.epsilon..=self.epsilon);
                (y + u).clamp(0.0, self.ybar)
            })
            .collect()
    }
}

/// Identifiability and design hypotheses checked on each fitted round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypotheses {
    pub responses_interior: bool,
    pub data_consistent: bool,
    /// Responses so far are distinct enough, at the range-test tolerance, to
    /// determine a polynomial with one coefficient per observation. Fails
    /// routinely once responses have settled on the desired point.
    pub full_rank: bool,
    pub target_interior: bool,
    pub induces_target: bool,
}

impl Hypotheses {
    pub fn all_hold(&self) -> bool {
        self.responses_interior
            && self.data_consistent
            && self.full_rank
            && self.target_interior
            && self.induces_target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRound {
    pub incentive: QuadraticIncentive,
    pub y_true: f64,
    pub y_hat: f64,
    /// Fit the incentive was designed from; `None` for bootstrap rounds.
    pub fit: Option<EstimationResult>,
    pub desired: Option<DesiredPoint>,
    pub hypotheses: Option<Hypotheses>,
    /// True leader payoff for this device at the observed consumption.
    pub leader_value: f64,
    /// `|α̂_i - α_i| / |α_i|` per coefficient (absolute error where `α_i = 0`);
    /// only when the true satisfaction is polynomial and a fit exists.
    pub rel_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub devices: Vec<DeviceRound>,
    pub aggregate_y: f64,
    pub leader_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxIters,
    /// No polynomial order up to the cap explains the observations.
    FitInconsistent {
        iter: usize,
        device: usize,
    },
    /// The leader's desired consumption is on the boundary of the decision set.
    DesiredPointNotInterior {
        iter: usize,
        device: usize,
        y_d: f64,
    },
}

impl StopReason {
    pub fn is_early(&self) -> bool {
        !matches!(self, Self::MaxIters)
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MaxIters => write!(f, "completed: iteration budget reached"),
            Self::FitInconsistent { iter, device } => write!(
                f,
                "terminated at iteration {iter}: device {device} observations admit no polynomial fit within tolerance"
            ),
            Self::DesiredPointNotInterior { iter, device, y_d } => write!(
                f,
                "terminated at iteration {iter}: device {device} desired consumption y_d = {y_d} is not interior"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Fit computed in the round that stopped the run early, if any.
    pub stop_fit: Option<EstimationResult>,
}

/// Aggregate game: a single consumer observed through the meter directly.
pub fn run_aggregate(scenario: &Scenario) -> Result<RunOutcome> {
    if scenario.devices.len() != 1 {
        return Err(Error::InvalidScenario(format!(
            "aggregate run needs exactly one device, got {}",
            scenario.devices.len()
        )));
    }
    run_loop(scenario, 0.0)
}

/// Device-level game with `epsilon`-bounded disaggregation error.
pub fn run_device_level(scenario: &Scenario) -> Result<RunOutcome> {
    run_loop(scenario, scenario.epsilon)
}

fn run_loop(scenario: &Scenario, epsilon: f64) -> Result<RunOutcome> {
    scenario.validate()?;
    let params = &scenario.params;
    let tol = scenario.tol;
    let mut disaggregator = Disaggregator::new(epsilon, params.ybar, scenario.seed);
    let mut histories: Vec<ObservationHistory> = scenario
        .devices
        .iter()
        .map(|_| ObservationHistory::new(*params))
        .collect();
    let fitter = Fitter::new(scenario, epsilon);
    let mut records = Vec::with_capacity(scenario.max_iters);

    for iter in 0..scenario.max_iters {
        let mut plans = Vec::with_capacity(scenario.devices.len());
        for (l, device) in scenario.devices.iter().enumerate() {
            let plan = match iter {
                0 => Plan::bootstrap(device.gamma0),
                1 => Plan::bootstrap(device.gamma1),
                _ => match plan_device(&fitter, &histories[l], device, scenario)? {
                    Planned::Issue(plan) => plan,
                    Planned::Stop(stop, fit) => {
                        return Ok(RunOutcome {
                            records,
                            stop: stop.at(iter, l),
                            stop_fit: Some(fit),
                        })
                    }
                },
            };
            plans.push(plan);
        }

        let incentives: Vec<_> = plans.iter().map(|p| p.incentive).collect();
        let truths: Vec<_> = scenario
            .devices
            .iter()
            .map(|d| d.satisfaction.clone())
            .collect();
        let (responses, aggregate_y) =
            follower::device_best_responses(&incentives, &truths, params, tol)?;
        let y_true: Vec<f64> = responses.iter().map(|r: &BestResponse| r.y_star).collect();
        let y_hat = disaggregator.disaggregate(&y_true);

        let mut devices = Vec::with_capacity(plans.len());
        for (l, plan) in plans.into_iter().enumerate() {
            histories[l].push(plan.incentive, y_hat[l])?;
            let truth = &scenario.devices[l].satisfaction;
            let leader_value = leader_payoff(
                &scenario.objective,
                truth,
                params.beta,
                plan.incentive.payment(y_true[l]),
                y_true[l],
            );
            let rel_errors = match (&plan.fit, truth.as_poly()) {
                (Some(fit), Some(poly)) => Some(relative_errors(fit.alpha.alpha(), poly.alpha())),
                _ => None,
            };
            devices.push(DeviceRound {
                incentive: plan.incentive,
                y_true: y_true[l],
                y_hat: y_hat[l],
                fit: plan.fit,
                desired: plan.desired,
                hypotheses: plan.hypotheses,
                leader_value,
                rel_errors,
            });
        }
        let leader_value = devices.iter().map(|d| d.leader_value).sum();
        records.push(IterationRecord {
            iter,
            devices,
            aggregate_y,
            leader_value,
        });
    }
    Ok(RunOutcome {
        records,
        stop: StopReason::MaxIters,
        stop_fit: None,
    })
}

struct Plan {
    incentive: QuadraticIncentive,
    fit: Option<EstimationResult>,
    desired: Option<DesiredPoint>,
    hypotheses: Option<Hypotheses>,
}

impl Plan {
    fn bootstrap(incentive: QuadraticIncentive) -> Self {
        Self {
            incentive,
            fit: None,
            desired: None,
            hypotheses: None,
        }
    }
}

enum Planned {
    Issue(Plan),
    Stop(PendingStop, EstimationResult),
}

enum PendingStop {
    Fit,
    Boundary(f64),
}

impl PendingStop {
    fn at(self, iter: usize, device: usize) -> StopReason {
        match self {
            Self::Fit => StopReason::FitInconsistent { iter, device },
            Self::Boundary(y_d) => StopReason::DesiredPointNotInterior { iter, device, y_d },
        }
    }
}

fn plan_device(
    fitter: &Fitter,
    history: &ObservationHistory,
    device: &DeviceSpec,
    scenario: &Scenario,
) -> Result<Planned> {
    let params = &scenario.params;
    let true_order = device.satisfaction.as_poly().map(|p| p.order());
    let responses_interior = history.all_interior(scenario.tol);
    let fit = fitter.fit(history, true_order)?;
    let data_consistent = match fit.method {
        estimator::FitMethod::RangeTest => fit.within_tol,
        estimator::FitMethod::KktResidual => fit.residual <= KKT_EXACT,
    };
    if !data_consistent && !fitter.noisy {
        return Ok(Planned::Stop(PendingStop::Fit, fit));
    }

    let desired = leader::desired_point(&fit.alpha, &scenario.objective, params, scenario.tol)?;
    if !desired.interior {
        return Ok(Planned::Stop(PendingStop::Boundary(desired.y_d), fit));
    }
    let designed = leader::design_incentive(&fit.alpha, &desired, params, scenario.tol)?;
    let hypotheses = Hypotheses {
        responses_interior,
        data_consistent,
        full_rank: !fit.rank_deficient()
            && estimator::responses_identifiable(history, DEFAULT_MAX_ORDER, fitter.fit_tol),
        target_interior: desired.interior,
        induces_target: designed.induces_target,
    };
    Ok(Planned::Issue(Plan {
        incentive: designed.incentive,
        fit: Some(fit),
        desired: Some(desired),
        hypotheses: Some(hypotheses),
    }))
}

/// Chooses between the range test and the KKT residual fit for one device.
struct Fitter {
    noisy: bool,
    fit_tol: f64,
    tol: f64,
    kkt: KktConfig,
}

impl Fitter {
    fn new(scenario: &Scenario, epsilon: f64) -> Self {
        let noisy = epsilon > 0.0;
        Self {
            noisy,
            // Disaggregation error leaves residuals on the order of epsilon.
            fit_tol: if noisy {
                scenario.fit_tol.max(epsilon)
            } else {
                scenario.fit_tol
            },
            tol: scenario.tol,
            kkt: KktConfig::default(),
        }
    }

    fn fit(
        &self,
        history: &ObservationHistory,
        true_order: Option<usize>,
    ) -> Result<EstimationResult> {
        let max_order = match (self.noisy, true_order) {
            (true, Some(order)) => order,
            _ => DEFAULT_MAX_ORDER,
        };
        if history.all_interior(self.tol) {
            let fit = minimal_order_fit(history, self.fit_tol, max_order)?;
            if fit.within_tol || !self.noisy {
                return Ok(fit);
            }
            return kkt_fit(
                history,
                true_order.unwrap_or(fit.order_j),
                &CoeffBox::unbounded(),
                &self.kkt,
            );
        }
        if let (true, Some(order)) = (self.noisy, true_order) {
            return kkt_fit(history, order, &CoeffBox::unbounded(), &self.kkt);
        }
        // Lowest order whose residual penalty vanishes, else the best one.
        let top = max_order.min(history.len() - 1).max(1);
        let mut best: Option<EstimationResult> = None;
        for j in 1..=top {
            let fit = kkt_fit(history, j, &CoeffBox::unbounded(), &self.kkt)?;
            if fit.residual <= KKT_EXACT {
                return Ok(fit);
            }
            if best.as_ref().is_none_or(|b| fit.residual < b.residual) {
                best = Some(fit);
            }
        }
        Ok(best.expect("at least one order is tried"))
    }
}

pub(crate) fn relative_errors(fitted: &[f64], truth: &[f64]) -> Vec<f64> {
    (0..fitted.len().max(truth.len()))
        .map(|i| {
            let a = fitted.get(i).copied().unwrap_or(0.0);
            let t = truth.get(i).copied().unwrap_or(0.0);
            if t == 0.0 {
                a.abs()
            } else {
                (a - t).abs() / t.abs()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_scenario() -> Scenario {
        Scenario::new(
            GameParams::new(1.0, 100.0, 100.0, 0.75).unwrap(),
            LeaderObjective::RevenueDecoupling,
            vec![DeviceSpec {
                satisfaction: TrueSatisfaction::log(10.0).unwrap(),
                gamma0: QuadraticIncentive::new(10.0, -1.0),
                gamma1: QuadraticIncentive::new(15.0, -1.0),
            }],
        )
    }

    #[test]
    fn exact_disaggregation_is_identity() {
        let mut d = Disaggregator::new(0.0, 100.0, 7);
        let ys = vec![0.0, 0.05, 3.2, 100.0];
        assert_eq!(d.disaggregate(&ys), ys);
    }

    #[test]
    fn clipping_near_zero() {
        let mut d = Disaggregator::new(0.15, 100.0, 3);
        for _ in 0..1000 {
            let y = d.disaggregate(&[0.05])[0];
            assert!((0.0..=0.2).contains(&y));
        }
    }

    proptest! {
        #[test]
        fn noise_respects_bound(seed in any::<u64>(), eps in 0.0f64..1.0,
                                ys in prop::collection::vec(0.0f64..100.0, 1..12)) {
            let mut d = Disaggregator::new(eps, 100.0, seed);
            let out = d.disaggregate(&ys);
            for (a, b) in out.iter().zip(&ys) {
                prop_assert!((a - b).abs() <= eps);
                prop_assert!((0.0..=100.0).contains(a));
            }
        }
    }

    #[test]
    fn relative_errors_pad_and_guard_zero() {
        let e = relative_errors(&[2.0, -0.5], &[4.0, -0.5, 0.1]);
        assert_eq!(e, vec![0.5, 0.0, 1.0]);
        assert_eq!(relative_errors(&[0.3], &[0.0]), vec![0.3]);
    }

    #[test]
    fn scenario_validation() {
        let mut s = log_scenario();
        assert!(s.validate().is_ok());
        s.epsilon = -0.1;
        assert!(s.validate().is_err());
        let mut s = log_scenario();
        s.devices.clear();
        assert!(s.validate().is_err());
        let mut s = log_scenario();
        s.max_iters = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn aggregate_requires_single_device() {
        let mut s = log_scenario();
        s.devices.push(s.devices[0].clone());
        assert!(run_aggregate(&s).is_err());
    }

    #[test]
    fn log_consumer_second_round() {
        let out = run_aggregate(&log_scenario()).unwrap();
        let r = &out.records;
        assert!((r[0].devices[0].y_true - 5.29).abs() < 0.01);
        assert!((r[1].devices[0].y_true - 7.58).abs() < 0.01);
        let d2 = &r[2].devices[0];
        let alpha = d2.fit.as_ref().unwrap().alpha.alpha();
        assert!((alpha[0] - 2.57).abs() < 0.02);
        assert!((alpha[1] + 0.093).abs() < 0.002);
        assert!((d2.incentive.xi1 - 0.33).abs() < 0.01);
        assert!((d2.incentive.xi2 + 0.05).abs() < 0.005);
        assert!((d2.y_true - 6.56).abs() < 0.02);
    }
}
