//! The myopic consumer: best response to a single issued incentive.

use crate::error::{Error, Result};
use crate::model::{follower_payoff, GameParams, QuadraticIncentive, Satisfaction};
use crate::search::{self, ScalarObjective};

pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Interior,
    LowerBound,
    UpperBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub y_star: f64,
    pub objective_value: f64,
    pub boundary: Boundary,
}

impl BestResponse {
    pub fn is_interior(&self) -> bool {
        self.boundary == Boundary::Interior
    }
}

struct FollowerObjective<'a, F> {
    gamma: &'a QuadraticIncentive,
    f: &'a F,
    price: f64,
}

impl<F: Satisfaction> ScalarObjective for FollowerObjective<'_, F> {
    fn value(&self, y: f64) -> f64 {
        follower_payoff(self.gamma, self.f, self.price, y)
    }

    fn slope(&self, y: f64) -> f64 {
        -self.price + self.gamma.slope(y) + self.f.slope(y)
    }

    fn curvature(&self, y: f64) -> f64 {
        2.0 * self.gamma.xi2 + self.f.curvature(y)
    }
}

pub(crate) fn classify(y: f64, params: &GameParams, tol: f64) -> Boundary {
    if params.is_interior(y, tol) {
        Boundary::Interior
    } else if y <= tol {
        Boundary::LowerBound
    } else {
        Boundary::UpperBound
    }
}

/// Global maximizer of the consumer payoff over `[0, ybar]`.
///
/// When the payoff is exactly quadratic in `y` the clipped stationary point is
/// returned directly; otherwise a grid scan followed by golden-section and
/// Newton refinement is used.
pub fn best_response(
    gamma: &QuadraticIncentive,
    f: &impl Satisfaction,
    params: &GameParams,
    tol: f64,
) -> Result<BestResponse> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let max = match f.as_quadratic() {
        Some((a1, a2)) => {
            search::maximize_quadratic(-params.price + gamma.xi1 + a1, gamma.xi2 + a2, params.ybar)?
        }
        None => search::maximize(
            &FollowerObjective {
                gamma,
                f,
                price: params.price,
            },
            params.ybar,
            tol,
        )?,
    };
    Ok(BestResponse {
        y_star: max.x,
        objective_value: max.value,
        boundary: classify(max.x, params, tol),
    })
}

/// Same search without the quadratic shortcut; used to cross-check it.
pub fn best_response_by_search(
    gamma: &QuadraticIncentive,
    f: &impl Satisfaction,
    params: &GameParams,
    tol: f64,
) -> Result<BestResponse> {
    let max = search::maximize(
        &FollowerObjective {
            gamma,
            f,
            price: params.price,
        },
        params.ybar,
        tol,
    )?;
    Ok(BestResponse {
        y_star: max.x,
        objective_value: max.value,
        boundary: classify(max.x, params, tol),
    })
}

/// Per-device responses; the consumer payoff is a sum over devices so each
/// device is maximized on its own. Returns the responses and their total.
pub fn device_best_responses<F: Satisfaction>(
    gammas: &[QuadraticIncentive],
    fs: &[F],
    params: &GameParams,
    tol: f64,
) -> Result<(Vec<BestResponse>, f64)> {
    if gammas.len() != fs.len() {
        return Err(Error::Config(format!(
            "{} incentives issued for {} devices",
            gammas.len(),
            fs.len()
        )));
    }
    if fs.is_empty() {
        return Err(Error::Config("at least one device is required".into()));
    }
    let responses = gammas
        .iter()
        .zip(fs)
        .map(|(gamma, f)| best_response(gamma, f, params, tol))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = responses.iter().map(|r| r.y_star).sum();
    Ok((responses, aggregate))
}
