//! Incentive design for the utility company.
//!
//! The leader first picks the operating point it would like most under its
//! current estimate of the consumer, then solves for the quadratic incentive
//! whose first-order condition puts the consumer exactly there at exactly the
//! chosen payment.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::follower::{self, Boundary};
use crate::model::{
    GameParams, LeaderObjective, QuadraticIncentive, Satisfaction, SatisfactionPoly,
};
use crate::search::{self, ScalarObjective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredPoint {
    pub v_d: f64,
    pub y_d: f64,
    pub interior: bool,
}

struct LeaderValue<'a, F> {
    obj: &'a LeaderObjective,
    f: &'a F,
    beta: f64,
}

impl<F: Satisfaction> ScalarObjective for LeaderValue<'_, F> {
    fn value(&self, y: f64) -> f64 {
        self.obj.value(y) + self.beta * self.f.value(y)
    }

    fn slope(&self, y: f64) -> f64 {
        self.obj.slope(y) + self.beta * self.f.slope(y)
    }

    fn curvature(&self, y: f64) -> f64 {
        self.obj.curvature() + self.beta * self.f.curvature(y)
    }
}

/// Maximizer of `g(y) - v + β·f(y)` over `[0, vbar] × [0, ybar]`.
///
/// The payoff falls strictly in `v`, so `v_d = 0`. Accepts the estimate `f̂`
/// or, for reference runs, the true satisfaction.
pub fn desired_point(
    f_hat: &impl Satisfaction,
    obj: &LeaderObjective,
    params: &GameParams,
    tol: f64,
) -> Result<DesiredPoint> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let max = match f_hat.as_quadratic() {
        Some((a1, a2)) => {
            let (g1, g2) = obj.quadratic_coefficients();
            search::maximize_quadratic(g1 + params.beta * a1, g2 + params.beta * a2, params.ybar)?
        }
        None => search::maximize(
            &LeaderValue {
                obj,
                f: f_hat,
                beta: params.beta,
            },
            params.ybar,
            tol,
        )?,
    };
    Ok(DesiredPoint {
        v_d: 0.0,
        y_d: max.x,
        interior: params.is_interior(max.x, tol),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignedIncentive {
    pub incentive: QuadraticIncentive,
    /// Consumer's best response to the incentive under the estimate `f̂`.
    pub induced_y: f64,
    /// `induced_y` agrees with the target; false means the target is only a
    /// stationary point of the estimated consumer payoff.
    pub induces_target: bool,
}

/// Solve `[[1, 2y_d], [y_d, y_d²]]·ξ = [p - f̂'(y_d), v_d]`.
///
/// The first row places a stationary point of the estimated consumer payoff at
/// `y_d`; the second fixes the payment there. The result is checked against
/// the follower's global best response and flagged, not rejected, when the
/// target is not the induced optimum.
pub fn design_incentive(
    f_hat: &SatisfactionPoly,
    target: &DesiredPoint,
    params: &GameParams,
    tol: f64,
) -> Result<DesignedIncentive> {
    if !target.interior || !params.is_interior(target.y_d, tol) {
        return Err(Error::NonInteriorTarget { y_d: target.y_d });
    }
    let y = target.y_d;
    let a = Matrix2::new(1.0, 2.0 * y, y, y * y);
    let rhs = Vector2::new(params.price - f_hat.slope(y), target.v_d);
    let xi = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonInteriorTarget { y_d: y })?;
    let incentive = QuadraticIncentive::new(xi[0], xi[1]);

    let induced = follower::best_response(&incentive, f_hat, params, tol)?;
    let induces_target =
        induced.boundary == Boundary::Interior && (induced.y_star - y).abs() <= 10.0 * tol;
    Ok(DesignedIncentive {
        incentive,
        induced_y: induced.y_star,
        induces_target,
    })
}
