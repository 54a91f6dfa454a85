//! Utility learning: recover the consumer's satisfaction coefficients from the
//! incentives issued and the responses observed.
//!
//! Every interior observation `y_i` made under `γ_i = (ξ1, ξ2)` satisfies the
//! first-order condition `-p + ξ1 + 2ξ2·y_i + f'(y_i) = 0`. With the
//! polynomial ansatz `f(y) = Σ α_c y^(c+1)` this is one linear equation per
//! observation, `[1, 2y_i, …, (j+1)y_i^j]·α = p - ξ1 - 2ξ2·y_i`.
//! [`minimal_order_fit`] finds the smallest `j` for which the stacked system is
//! consistent. Observations on the boundary need the multiplier-aware fit in
//! [`kkt`].

mod kkt;
mod lstsq;

pub use kkt::{kkt_fit, CoeffBox, KktConfig};
pub use lstsq::{lstsq, numerical_rank, LeastSquares};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{GameParams, QuadraticIncentive, SatisfactionPoly};

pub const DEFAULT_FIT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub incentive: QuadraticIncentive,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    records: Vec<Observation>,
    params: GameParams,
}

impl ObservationHistory {
    pub fn new(params: GameParams) -> Self {
        Self {
            records: Vec::new(),
            params,
        }
    }

    pub fn from_records(params: GameParams, records: Vec<Observation>) -> Result<Self> {
        let mut history = Self::new(params);
        for r in records {
            history.push(r.incentive, r.y)?;
        }
        Ok(history)
    }

    pub fn push(&mut self, incentive: QuadraticIncentive, y: f64) -> Result<()> {
        if !(0.0..=self.params.ybar).contains(&y) {
            return Err(Error::OutOfBounds {
                name: "observed y",
                value: y,
                lo: 0.0,
                hi: self.params.ybar,
            });
        }
        self.records.push(Observation { incentive, y });
        Ok(())
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn params(&self) -> &GameParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_interior(&self, tol: f64) -> bool {
        self.records
            .iter()
            .all(|r| self.params.is_interior(r.y, tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    RangeTest,
    KktResidual,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RangeTest => "range_test",
            Self::KktResidual => "kkt_residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub alpha: SatisfactionPoly,
    pub order_j: usize,
    pub method: FitMethod,
    /// Range test: `‖Yα - b‖`. KKT fit: the attained penalty `φ`.
    pub residual: f64,
    /// Range test: `‖Yα - b‖ / max(‖b‖, 1)`. KKT fit: same as `residual`.
    pub relative_residual: f64,
    /// Whether the fit met its tolerance (range test) or the solver converged (KKT).
    pub within_tol: bool,
    /// Numerical rank of the stacked design matrix.
    pub rank: usize,
    /// Rows and columns of the stacked system.
    pub shape: (usize, usize),
    /// `(λ1, λ2)` per observation, KKT fit only.
    pub lambdas: Option<Vec<[f64; 2]>>,
    /// Largest primal infeasibility `(g_ℓ)_+` over the history, KKT fit only.
    pub r_ineq: f64,
    pub iterations: usize,
}

impl EstimationResult {
    /// Fewer independent equations than unknowns or repeated equations.
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.shape.0.min(self.shape.1)
    }
}

/// `b_i = p - ξ1_i - 2ξ2_i·y_i`, using the observed responses.
pub fn build_rhs(history: &ObservationHistory) -> DVector<f64> {
    let p = history.params.price;
    DVector::from_iterator(
        history.len(),
        history
            .records
            .iter()
            .map(|r| p - r.incentive.xi1 - 2.0 * r.incentive.xi2 * r.y),
    )
}

/// Row `i` is `[1, 2y_i, 3y_i², …, (j+1)y_i^j]`.
pub fn build_design_matrix(history: &ObservationHistory, order_j: usize) -> DMatrix<f64> {
    let cols = order_j + 1;
    DMatrix::from_fn(history.len(), cols, |i, c| {
        (c as f64 + 1.0) * history.records[i].y.powi(c as i32)
    })
}

/// Whether the observed responses can pin down a polynomial with as many
/// coefficients as there are observations: the square stacked design (capped
/// at `max_order`) must have full numerical rank at relative threshold `rtol`.
pub fn responses_identifiable(history: &ObservationHistory, max_order: usize, rtol: f64) -> bool {
    if history.is_empty() {
        return false;
    }
    let order = (history.len() - 1).clamp(1, max_order.max(1));
    let y = build_design_matrix(history, order);
    numerical_rank(&y, rtol) == y.nrows().min(y.ncols())
}

/// Lowest-order polynomial estimate consistent with the history.
///
/// Tries `j = 1, 2, …` up to `min(max_order, k)` (at least once) and accepts
/// the first whose relative least-squares residual is within `fit_tol`. When
/// none passes, the best-residual fit is returned with `within_tol = false`.
pub fn minimal_order_fit(
    history: &ObservationHistory,
    fit_tol: f64,
    max_order: usize,
) -> Result<EstimationResult> {
    if history.is_empty() {
        return Err(Error::Precondition("cannot fit an empty history".into()));
    }
    if let Some((index, r)) = history
        .records
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.y > 0.0 && r.y < history.params.ybar))
    {
        return Err(Error::NonInteriorResponse { index, y: r.y });
    }

    let b = build_rhs(history);
    let b_scale = b.norm().max(1.0);
    let top = max_order.min(history.len() - 1).max(1);

    let mut best: Option<EstimationResult> = None;
    for j in 1..=top {
        let y = build_design_matrix(history, j);
        let sol = lstsq(&y, &b);
        let residual = (&y * &sol.x - &b).norm();
        let result = EstimationResult {
            alpha: SatisfactionPoly::new(sol.x.iter().copied().collect())?,
            order_j: j,
            method: FitMethod::RangeTest,
            residual,
            relative_residual: residual / b_scale,
            within_tol: residual / b_scale <= fit_tol,
            rank: sol.rank,
            shape: (y.nrows(), y.ncols()),
            lambdas: None,
            r_ineq: 0.0,
            iterations: 1,
        };
        if result.within_tol {
            return Ok(result);
        }
        if best
            .as_ref()
            .is_none_or(|b| result.relative_residual < b.relative_residual)
        {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one order is tried"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::{best_response, DEFAULT_TOL};
    use crate::model::{Satisfaction, TrueSatisfaction};
    use proptest::prelude::*;

    pub(super) fn unit_params() -> GameParams {
        GameParams::new(1.0, 100.0, 100.0, 0.75).unwrap()
    }

    fn history(obs: &[((f64, f64), f64)]) -> ObservationHistory {
        ObservationHistory::from_records(
            unit_params(),
            obs.iter()
                .map(|&((xi1, xi2), y)| Observation {
                    incentive: QuadraticIncentive::new(xi1, xi2),
                    y,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rhs_uses_observed_response() {
        let h = history(&[
            ((10.0, -1.0), 5.29),
            ((0.0, 0.0), 42.0),
            ((15.0, -1.0), 7.58),
        ]);
        let b = build_rhs(&h);
        assert!((b[0] - 1.58).abs() < 1e-12);
        assert_eq!(b[1], 1.0);
        assert!((b[2] - 1.16).abs() < 1e-12);
    }

    #[test]
    fn design_matrix_rows() {
        let h = history(&[((10.0, -1.0), 5.29), ((15.0, -1.0), 7.58)]);
        let y = build_design_matrix(&h, 1);
        assert_eq!(y.shape(), (2, 2));
        assert_eq!(y[(0, 0)], 1.0);
        assert!((y[(0, 1)] - 10.58).abs() < 1e-12);
        assert!((y[(1, 1)] - 15.16).abs() < 1e-12);

        let h0 = ObservationHistory::from_records(
            unit_params(),
            vec![Observation {
                incentive: QuadraticIncentive::ZERO,
                y: 0.0,
            }],
        )
        .unwrap();
        let y = build_design_matrix(&h0, 3);
        assert_eq!(
            y.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0, 0.0]
        );

        let dup = history(&[((1.0, -1.0), 3.0), ((1.0, -1.0), 3.0)]);
        assert_eq!(
            lstsq(&build_design_matrix(&dup, 1), &build_rhs(&dup)).rank,
            1
        );
    }

    #[test]
    fn history_rejects_out_of_range_response() {
        let mut h = ObservationHistory::new(unit_params());
        assert!(h.push(QuadraticIncentive::ZERO, 100.5).is_err());
        assert!(h.push(QuadraticIncentive::ZERO, -0.1).is_err());
        assert!(h.push(QuadraticIncentive::ZERO, 100.0).is_ok());
    }

    #[test]
    fn log_consumer_example_fit() {
        let h = history(&[((10.0, -1.0), 5.29), ((15.0, -1.0), 7.58)]);
        let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(fit.order_j, 1);
        assert_eq!(fit.method, FitMethod::RangeTest);
        assert!(fit.within_tol);
        let a = fit.alpha.alpha();
        assert!((a[0] - 2.57).abs() < 0.02, "{a:?}");
        assert!((a[1] + 0.093).abs() < 0.002, "{a:?}");
    }

    #[test]
    fn exact_recovery_from_follower_data() {
        let truth = TrueSatisfaction::poly(vec![3.0, -0.2]).unwrap();
        let p = unit_params();
        let mut h = ObservationHistory::new(p);
        for g in [
            QuadraticIncentive::new(1.0, -0.5),
            QuadraticIncentive::new(4.0, -0.25),
        ] {
            let r = best_response(&g, &truth, &p, DEFAULT_TOL).unwrap();
            assert!(r.is_interior());
            h.push(g, r.y_star).unwrap();
        }
        let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(fit.order_j, 1);
        assert!((fit.alpha.alpha()[0] - 3.0).abs() < 1e-8);
        assert!((fit.alpha.alpha()[1] + 0.2).abs() < 1e-8);
    }

    #[test]
    fn single_record_gives_minimum_norm_solution() {
        let h = history(&[((2.0, -0.5), 3.0)]);
        let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER).unwrap();
        // Pseudoinverse of the row r = [1, 6]: α = r·b / (r·r).
        let b = 1.0 - 2.0 + 2.0 * 0.5 * 3.0;
        let r = [1.0, 6.0];
        let rr = r[0] * r[0] + r[1] * r[1];
        assert!((fit.alpha.alpha()[0] - r[0] * b / rr).abs() < 1e-12);
        assert!((fit.alpha.alpha()[1] - r[1] * b / rr).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(!fit.rank_deficient());
        assert_eq!(fit.shape, (1, 2));
    }

    #[test]
    fn boundary_response_redirects_to_kkt() {
        let h = history(&[((2.0, -0.5), 3.0), ((0.0, 0.0), 0.0)]);
        assert!(matches!(
            minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER),
            Err(Error::NonInteriorResponse { index: 1, .. })
        ));
    }

    #[test]
    fn inconsistent_history_reports_best_fit() {
        // Three points whose slopes cannot come from a quadratic, with j capped at 1.
        let h = history(&[((2.0, -0.5), 1.0), ((2.0, -0.5), 2.0), ((5.0, -0.5), 3.0)]);
        let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, 1).unwrap();
        assert!(!fit.within_tol);
        assert!(fit.relative_residual > DEFAULT_FIT_TOL);
        assert_eq!(fit.order_j, 1);
    }

    #[test]
    fn order_grows_to_match_cubic() {
        let truth = SatisfactionPoly::new(vec![6.0, -0.4, -0.02]).unwrap();
        let p = unit_params();
        let mut h = ObservationHistory::new(p);
        for y in [1.0, 2.5, 4.0, 5.5] {
            // Pick xi1 so that y is stationary under xi2 = -0.5.
            let xi2 = -0.5;
            let xi1 = p.price - 2.0 * xi2 * y - truth.slope(y);
            h.push(QuadraticIncentive::new(xi1, xi2), y).unwrap();
        }
        let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(fit.order_j, 2);
        for (a, t) in fit.alpha.alpha().iter().zip(truth.alpha()) {
            assert!((a - t).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn never_exceeds_sufficient_order(a0 in 2.0f64..8.0, a1 in -0.5f64..-0.01,
                                          ys in prop::collection::btree_set(10u32..900, 3..7)) {
            // Exact quadratic data: j = 1 is always sufficient.
            let truth = SatisfactionPoly::new(vec![a0, a1]).unwrap();
            let p = unit_params();
            let mut h = ObservationHistory::new(p);
            for y in ys {
                let y = y as f64 / 100.0;
                let xi2 = -0.3;
                h.push(QuadraticIncentive::new(p.price - 2.0 * xi2 * y - truth.slope(y), xi2), y).unwrap();
            }
            let fit = minimal_order_fit(&h, DEFAULT_FIT_TOL, DEFAULT_MAX_ORDER).unwrap();
            prop_assert_eq!(fit.order_j, 1);
            prop_assert!(fit.within_tol);
        }
    }
}
