//! Domain types shared by every player: satisfaction functions, quadratic
//! incentives, game parameters and the two payoff functions.
//!
//! Consumption `y` and payments `v` are abstract units. The consumer's payoff
//! for consuming `y` under incentive `γ` is `-p·y + γ(y) + f(y)`; the utility
//! company's payoff is `g(y) - v + β·f(y)`.

use crate::error::{Error, Result};

/// Anything that can act as a consumer satisfaction function on `y ≥ 0`.
pub trait Satisfaction {
    fn value(&self, y: f64) -> f64;
    fn slope(&self, y: f64) -> f64;
    fn curvature(&self, y: f64) -> f64;

    /// `(a1, a2)` such that the function is exactly `a1·y + a2·y²`, when it is.
    fn as_quadratic(&self) -> Option<(f64, f64)>;
}

/// Polynomial through the origin, `Σ_i alpha[i]·y^(i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionPoly {
    alpha: Vec<f64>,
}

impl SatisfactionPoly {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidParams(
                "satisfaction polynomial needs at least one coefficient".into(),
            ));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite satisfaction coefficient in {alpha:?}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Index of the highest coefficient, `j`; the polynomial degree is `j + 1`.
    pub fn order(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn degree(&self) -> usize {
        self.alpha.len()
    }

    /// Fitted curvature is non-positive on `[0, upper]`, checked at the ends
    /// and on a coarse grid.
    pub fn is_concave_on(&self, upper: f64) -> bool {
        (0..=64).all(|i| self.curvature(upper * i as f64 / 64.0) <= 0.0)
    }
}

impl Satisfaction for SatisfactionPoly {
    fn value(&self, y: f64) -> f64 {
        // Horner on Σ α_i y^i, then one more factor of y.
        self.alpha.iter().rev().fold(0.0, |acc, a| acc * y + a) * y
    }

    fn slope(&self, y: f64) -> f64 {
        self.alpha
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, a)| acc * y + (i as f64 + 1.0) * a)
    }

    fn curvature(&self, y: f64) -> f64 {
        self.alpha
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, a)| acc * y + (i as f64 + 1.0) * i as f64 * a)
    }

    fn as_quadratic(&self) -> Option<(f64, f64)> {
        if self.alpha.iter().skip(2).any(|a| *a != 0.0) {
            return None;
        }
        Some((self.alpha[0], self.alpha.get(1).copied().unwrap_or(0.0)))
    }
}

/// The consumer's true (private) satisfaction function.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueSatisfaction {
    /// `a·ln(y + 1)`
    Log {
        scale: f64,
    },
    Poly(SatisfactionPoly),
}

impl TrueSatisfaction {
    pub fn log(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "log satisfaction scale must be positive, got {scale}"
            )));
        }
        Ok(Self::Log { scale })
    }

    pub fn poly(alpha: Vec<f64>) -> Result<Self> {
        SatisfactionPoly::new(alpha).map(Self::Poly)
    }

    pub fn as_poly(&self) -> Option<&SatisfactionPoly> {
        match self {
            Self::Poly(p) => Some(p),
            Self::Log { .. } => None,
        }
    }
}

impl Satisfaction for TrueSatisfaction {
    fn value(&self, y: f64) -> f64 {
        match self {
            Self::Log { scale } => scale * y.ln_1p(),
            Self::Poly(p) => p.value(y),
        }
    }

    fn slope(&self, y: f64) -> f64 {
        match self {
            Self::Log { scale } => scale / (y + 1.0),
            Self::Poly(p) => p.slope(y),
        }
    }

    fn curvature(&self, y: f64) -> f64 {
        match self {
            Self::Log { scale } => -scale / ((y + 1.0) * (y + 1.0)),
            Self::Poly(p) => p.curvature(y),
        }
    }

    fn as_quadratic(&self) -> Option<(f64, f64)> {
        match self {
            Self::Log { .. } => None,
            Self::Poly(p) => p.as_quadratic(),
        }
    }
}

/// Quadratic incentive through the origin, `γ(y) = xi1·y + xi2·y²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticIncentive {
    pub xi1: f64,
    pub xi2: f64,
}

impl QuadraticIncentive {
    pub const ZERO: Self = Self { xi1: 0.0, xi2: 0.0 };

    pub fn new(xi1: f64, xi2: f64) -> Self {
        Self { xi1, xi2 }
    }

    pub fn payment(&self, y: f64) -> f64 {
        (self.xi1 + self.xi2 * y) * y
    }

    pub fn slope(&self, y: f64) -> f64 {
        self.xi1 + 2.0 * self.xi2 * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeaderObjective {
    /// `g(y) = -y`
    RevenueDecoupling,
    /// `g(y) = -(y - yref)²`
    DemandResponse { yref: f64 },
}

impl LeaderObjective {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Self::RevenueDecoupling => -y,
            Self::DemandResponse { yref } => -(y - yref) * (y - yref),
        }
    }

    pub fn slope(&self, y: f64) -> f64 {
        match *self {
            Self::RevenueDecoupling => -1.0,
            Self::DemandResponse { yref } => -2.0 * (y - yref),
        }
    }

    pub fn curvature(&self) -> f64 {
        match self {
            Self::RevenueDecoupling => 0.0,
            Self::DemandResponse { .. } => -2.0,
        }
    }

    /// Linear and quadratic coefficients of `g`, dropping the constant.
    pub fn quadratic_coefficients(&self) -> (f64, f64) {
        match *self {
            Self::RevenueDecoupling => (-1.0, 0.0),
            Self::DemandResponse { yref } => (2.0 * yref, -1.0),
        }
    }

    pub fn validate(&self, params: &GameParams) -> Result<()> {
        match *self {
            Self::RevenueDecoupling => Ok(()),
            Self::DemandResponse { yref } if (0.0..=params.ybar).contains(&yref) => Ok(()),
            Self::DemandResponse { yref } => Err(Error::InvalidParams(format!(
                "demand response reference {yref} outside [0, {}]",
                params.ybar
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub price: f64,
    pub ybar: f64,
    pub vbar: f64,
    pub beta: f64,
}

impl Default for GameParams {
    fn default() -> Self {
        Self {
            price: 1.0,
            ybar: 100.0,
            vbar: 100.0,
            beta: 0.0,
        }
    }
}

impl GameParams {
    pub fn new(price: f64, ybar: f64, vbar: f64, beta: f64) -> Result<Self> {
        let params = Self {
            price,
            ybar,
            vbar,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("price", self.price)?;
        positive("ybar", self.ybar)?;
        positive("vbar", self.vbar)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// `tol < y < ybar - tol`
    pub fn is_interior(&self, y: f64, tol: f64) -> bool {
        y > tol && y < self.ybar - tol
    }

    fn check_consumption(&self, y: f64) -> Result<()> {
        if (0.0..=self.ybar).contains(&y) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                name: "y",
                value: y,
                lo: 0.0,
                hi: self.ybar,
            })
        }
    }

    fn check_payment(&self, v: f64) -> Result<()> {
        if (0.0..=self.vbar).contains(&v) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                name: "v",
                value: v,
                lo: 0.0,
                hi: self.vbar,
            })
        }
    }
}

pub fn eval_satisfaction(f: &impl Satisfaction, y: f64) -> f64 {
    f.value(y)
}

/// Consumer payoff `-p·y + γ(y) + f(y)`.
pub fn eval_follower_objective(
    gamma: &QuadraticIncentive,
    f: &impl Satisfaction,
    params: &GameParams,
    y: f64,
) -> Result<f64> {
    params.check_consumption(y)?;
    Ok(follower_payoff(gamma, f, params.price, y))
}

/// Utility-company payoff `g(y) - v + β·f(y)`.
pub fn eval_leader_objective(
    obj: &LeaderObjective,
    f: &impl Satisfaction,
    params: &GameParams,
    v: f64,
    y: f64,
) -> Result<f64> {
    params.check_payment(v)?;
    params.check_consumption(y)?;
    Ok(leader_payoff(obj, f, params.beta, v, y))
}

pub(crate) fn follower_payoff(
    gamma: &QuadraticIncentive,
    f: &impl Satisfaction,
    price: f64,
    y: f64,
) -> f64 {
    -price * y + gamma.payment(y) + f.value(y)
}

/// Unchecked leader payoff; the loop logs it for payments outside `[0, vbar]` too.
pub(crate) fn leader_payoff(
    obj: &LeaderObjective,
    f: &impl Satisfaction,
    beta: f64,
    v: f64,
    y: f64,
) -> f64 {
    obj.value(y) - v + beta * f.value(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_params(beta: f64) -> GameParams {
        GameParams::new(1.0, 100.0, 100.0, beta).unwrap()
    }

    #[test]
    fn log_satisfaction_values() {
        let f = TrueSatisfaction::log(10.0).unwrap();
        assert_eq!(eval_satisfaction(&f, 0.0), 0.0);
        assert!((eval_satisfaction(&f, 6.5) - 20.149_030_205_422_65).abs() < 1e-9);
    }

    #[test]
    fn poly_satisfaction_value_and_derivatives() {
        let f = SatisfactionPoly::new(vec![2.57, -0.093]).unwrap();
        assert!((f.value(1.0) - 2.477).abs() < 1e-12);
        assert!((f.slope(2.0) - (2.57 - 0.372)).abs() < 1e-12);
        assert!((f.curvature(5.0) + 0.186).abs() < 1e-12);

        let cubic = SatisfactionPoly::new(vec![1.0, -2.0, 0.5]).unwrap();
        // 1·y - 2y² + 0.5y³ at y = 2: 2 - 8 + 4
        assert!((cubic.value(2.0) + 2.0).abs() < 1e-12);
        // 1 - 4y + 1.5y² at y = 2
        assert!((cubic.slope(2.0) + 1.0).abs() < 1e-12);
        // -4 + 3y at y = 2
        assert!((cubic.curvature(2.0) - 2.0).abs() < 1e-12);
        assert_eq!(cubic.as_quadratic(), None);
        assert_eq!(cubic.order(), 2);
        assert_eq!(cubic.degree(), 3);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(SatisfactionPoly::new(vec![]).is_err());
        assert!(TrueSatisfaction::log(0.0).is_err());
        assert!(TrueSatisfaction::log(-1.0).is_err());
        assert!(GameParams::new(0.0, 100.0, 100.0, 0.5).is_err());
        assert!(GameParams::new(1.0, 100.0, 100.0, -0.1).is_err());
        let params = unit_params(0.0);
        assert!(LeaderObjective::DemandResponse { yref: 101.0 }
            .validate(&params)
            .is_err());
        assert!(LeaderObjective::DemandResponse { yref: 5.0 }
            .validate(&params)
            .is_ok());
    }

    #[test]
    fn follower_objective_examples() {
        let params = unit_params(0.0);
        let f = TrueSatisfaction::log(10.0).unwrap();
        let gamma = QuadraticIncentive::new(10.0, -1.0);
        let v = eval_follower_objective(&gamma, &f, &params, 5.29).unwrap();
        let expected = -5.29 + 52.9 - 27.9841 + 10.0 * 6.29f64.ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 38.01).abs() < 0.01);

        let zero = TrueSatisfaction::poly(vec![0.0]).unwrap();
        let v = eval_follower_objective(&QuadraticIncentive::ZERO, &zero, &params, 3.0).unwrap();
        assert_eq!(v, -3.0);
        assert_eq!(
            eval_follower_objective(&QuadraticIncentive::ZERO, &f, &params, 0.0).unwrap(),
            0.0
        );
        assert!(eval_follower_objective(&gamma, &f, &params, 100.5).is_err());
        assert!(eval_follower_objective(&gamma, &f, &params, -0.5).is_err());
    }

    #[test]
    fn leader_objective_examples() {
        let f = TrueSatisfaction::log(10.0).unwrap();
        let params = unit_params(0.75);
        let v = eval_leader_objective(&LeaderObjective::RevenueDecoupling, &f, &params, 0.0, 6.5)
            .unwrap();
        assert!((v - (-6.5 + 7.5 * 7.5f64.ln())).abs() < 1e-12);
        assert!((v - 8.61).abs() < 0.01);

        let params = unit_params(0.0);
        let dr = LeaderObjective::DemandResponse { yref: 5.0 };
        assert_eq!(
            eval_leader_objective(&dr, &f, &params, 0.0, 5.0).unwrap(),
            0.0
        );
        assert_eq!(
            eval_leader_objective(&dr, &f, &params, 0.0, 7.0).unwrap(),
            dr.value(7.0)
        );
        assert!(eval_leader_objective(&dr, &f, &params, -1.0, 7.0).is_err());
        assert!(eval_leader_objective(&dr, &f, &params, 101.0, 7.0).is_err());
    }

    proptest! {
        #[test]
        fn no_constant_terms(alpha in prop::collection::vec(-10.0f64..10.0, 1..6),
                             xi1 in -10.0f64..10.0, xi2 in -10.0f64..10.0) {
            let f = SatisfactionPoly::new(alpha).unwrap();
            prop_assert_eq!(f.value(0.0), 0.0);
            prop_assert_eq!(QuadraticIncentive::new(xi1, xi2).payment(0.0), 0.0);
        }

        #[test]
        fn follower_objective_is_sum_of_parts(xi1 in -20.0f64..20.0, xi2 in -2.0f64..2.0,
                                              a in 0.1f64..20.0, y in 0.0f64..100.0) {
            let params = unit_params(0.0);
            let f = TrueSatisfaction::log(a).unwrap();
            let gamma = QuadraticIncentive::new(xi1, xi2);
            let total = eval_follower_objective(&gamma, &f, &params, y).unwrap();
            let parts = -params.price * y + (xi1 * y + xi2 * y * y) + a * (1.0 + y).ln();
            prop_assert!((total - parts).abs() <= 1e-9 * (1.0 + parts.abs()));
        }

        #[test]
        fn log_follower_objective_strictly_concave(xi2 in -5.0f64..=0.0, a in 0.01f64..50.0,
                                                   y in 0.0f64..100.0) {
            let f = TrueSatisfaction::log(a).unwrap();
            prop_assert!(2.0 * xi2 + f.curvature(y) < 0.0);
        }

        #[test]
        fn poly_slope_matches_finite_difference(alpha in prop::collection::vec(-3.0f64..3.0, 1..5),
                                                y in 0.5f64..4.0) {
            let f = SatisfactionPoly::new(alpha).unwrap();
            let h = 1e-5;
            let fd = (f.value(y + h) - f.value(y - h)) / (2.0 * h);
            prop_assert!((fd - f.slope(y)).abs() <= 1e-5 * (1.0 + f.slope(y).abs()));
            let fd2 = (f.slope(y + h) - f.slope(y - h)) / (2.0 * h);
            prop_assert!((fd2 - f.curvature(y)).abs() <= 1e-5 * (1.0 + f.curvature(y).abs()));
        }
    }
}
