//! Fit by minimizing KKT residuals of the observed responses.
//!
//! For each observation with multipliers `λ1, λ2 ≥ 0` on `-y ≤ 0` and
//! `y - ybar ≤ 0`:
//!
//! ```text
//! r_stat   = -p + ξ1 + 2ξ2·y + f̂'(y; α) - λ1 + λ2
//! r_comp,1 = λ1·(-y)
//! r_comp,2 = λ2·(y - ybar)
//! ```
//!
//! The penalty is the sum of squares of all three, minimized over `α` in a box
//! and `λ ≥ 0` by projected gradient descent with Armijo backtracking.
//! Multipliers are rescaled by the column norms of the residual Jacobian. With
//! an unbounded box the coefficients are whitened through the SVD of the design
//! matrix; otherwise they get the same diagonal rescaling. The trial step is the
//! Barzilai-Borwein step.

use nalgebra::{DMatrix, DVector};

use super::{
    build_design_matrix, build_rhs, lstsq, EstimationResult, FitMethod, ObservationHistory,
};
use crate::error::{Error, Result};
use crate::model::SatisfactionPoly;

/// Per-coefficient bounds on `α`; coefficients without an entry are free.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoeffBox {
    pub bounds: Vec<(f64, f64)>,
}

impl CoeffBox {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn uniform(lower: f64, upper: f64, len: usize) -> Self {
        Self {
            bounds: vec![(lower, upper); len],
        }
    }

    fn bound(&self, c: usize) -> (f64, f64) {
        self.bounds
            .get(c)
            .copied()
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktConfig {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the penalty by less than this
    /// fraction of its previous value.
    pub min_decrease: f64,
}

impl Default for KktConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            min_decrease: 1e-12,
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

struct Problem {
    design: DMatrix<f64>,
    rhs: DVector<f64>,
    y: Vec<f64>,
    ybar: f64,
    n_alpha: usize,
    /// `α = alpha_map · w_α` for the optimization variables `w_α`.
    alpha_map: DMatrix<f64>,
    /// Column norms of the residual Jacobian, one per multiplier.
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem {
    fn new(history: &ObservationHistory, order_j: usize, coeffs: &CoeffBox) -> Self {
        let design = build_design_matrix(history, order_j);
        let rhs = build_rhs(history);
        let y: Vec<f64> = history.records().iter().map(|r| r.y).collect();
        let ybar = history.params().ybar;
        let n_alpha = order_j + 1;
        let n = y.len();

        let mut scale = Vec::with_capacity(2 * n);
        for &yi in &y {
            scale.push(nonzero((1.0 + yi * yi).sqrt()));
            scale.push(nonzero((1.0 + (yi - ybar) * (yi - ybar)).sqrt()));
        }

        let mut lower = Vec::with_capacity(n_alpha + 2 * n);
        let mut upper = Vec::with_capacity(n_alpha + 2 * n);
        let bounded = (0..n_alpha).any(|c| {
            let (lo, hi) = coeffs.bound(c);
            lo.is_finite() || hi.is_finite()
        });
        let alpha_map = if bounded {
            let col_scale: Vec<f64> = design.column_iter().map(|c| nonzero(c.norm())).collect();
            for (c, s) in col_scale.iter().enumerate() {
                let (lo, hi) = coeffs.bound(c);
                lower.push(lo * s);
                upper.push(hi * s);
            }
            DMatrix::from_diagonal(&DVector::from_iterator(
                n_alpha,
                col_scale.iter().map(|s| 1.0 / s),
            ))
        } else {
            lower.resize(n_alpha, f64::NEG_INFINITY);
            upper.resize(n_alpha, f64::INFINITY);
            whitening(&design)
        };
        lower.resize(n_alpha + 2 * n, 0.0);
        upper.resize(n_alpha + 2 * n, f64::INFINITY);

        Self {
            design,
            rhs,
            y,
            ybar,
            n_alpha,
            alpha_map,
            scale,
            lower,
            upper,
        }
    }

    fn len(&self) -> usize {
        self.lower.len()
    }

    fn unscale(&self, w: &[f64]) -> Vec<f64> {
        let alpha = &self.alpha_map * DVector::from_column_slice(&w[..self.n_alpha]);
        alpha
            .iter()
            .copied()
            .chain(
                w[self.n_alpha..]
                    .iter()
                    .zip(&self.scale)
                    .map(|(v, s)| v / s),
            )
            .collect()
    }

    fn project(&self, w: &mut [f64]) {
        for ((v, lo), hi) in w.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Stationarity residuals for the unscaled point `z`.
    fn stationarity(&self, z: &[f64]) -> Vec<f64> {
        let alpha = &z[..self.n_alpha];
        (0..self.y.len())
            .map(|i| {
                let fitted: f64 = self
                    .design
                    .row(i)
                    .iter()
                    .zip(alpha)
                    .map(|(a, b)| a * b)
                    .sum();
                fitted - self.rhs[i] - z[self.n_alpha + 2 * i] + z[self.n_alpha + 2 * i + 1]
            })
            .collect()
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        let z = self.unscale(w);
        let stat = self.stationarity(&z);
        stat.iter()
            .enumerate()
            .map(|(i, r)| {
                let c1 = z[self.n_alpha + 2 * i] * self.y[i];
                let c2 = z[self.n_alpha + 2 * i + 1] * (self.y[i] - self.ybar);
                r * r + c1 * c1 + c2 * c2
            })
            .sum()
    }

    /// Gradient with respect to the scaled variables.
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let z = self.unscale(w);
        let stat = self.stationarity(&z);
        let mut g = vec![0.0; w.len()];
        let g_alpha = self.alpha_map.transpose()
            * (self.design.transpose() * DVector::from_vec(stat.clone()));
        for (gc, v) in g.iter_mut().zip(g_alpha.iter()) {
            *gc = 2.0 * v;
        }
        for (i, r) in stat.iter().enumerate() {
            let l1 = self.n_alpha + 2 * i;
            let l2 = l1 + 1;
            let yi = self.y[i];
            let gap = yi - self.ybar;
            g[l1] = 2.0 * (-r + yi * yi * z[l1]);
            g[l2] = 2.0 * (r + gap * gap * z[l2]);
        }
        for (gk, s) in g[self.n_alpha..].iter_mut().zip(&self.scale) {
            *gk /= s;
        }
        g
    }
}

/// `V·Σ⁺` from the SVD of `design`, so that `design · V·Σ⁺` has orthonormal
/// columns on the numerical range; null directions map to zero.
fn whitening(design: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = design.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let smax = svd.singular_values.max();
    let n = design.ncols();
    let mut map = DMatrix::zeros(n, n);
    for (k, &sk) in svd.singular_values.iter().enumerate() {
        if sk > smax * 1e-12 {
            for c in 0..n {
                map[(c, k)] = v_t[(k, c)] / sk;
            }
        }
    }
    map
}

fn nonzero(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize the KKT residual penalty at polynomial order `order_j`.
pub fn kkt_fit(
    history: &ObservationHistory,
    order_j: usize,
    coeffs: &CoeffBox,
    cfg: &KktConfig,
) -> Result<EstimationResult> {
    kkt_fit_traced(history, order_j, coeffs, cfg).map(|(fit, _)| fit)
}

/// As [`kkt_fit`], also returning the penalty after every accepted step.
pub fn kkt_fit_traced(
    history: &ObservationHistory,
    order_j: usize,
    coeffs: &CoeffBox,
    cfg: &KktConfig,
) -> Result<(EstimationResult, Vec<f64>)> {
    if history.is_empty() {
        return Err(Error::Precondition("cannot fit an empty history".into()));
    }
    if order_j < 1 {
        return Err(Error::Precondition(
            "polynomial order must be at least 1".into(),
        ));
    }
    let problem = Problem::new(history, order_j, coeffs);

    let mut w = vec![0.0; problem.len()];
    problem.project(&mut w);
    let mut phi = problem.penalty(&w);
    let mut g = problem.gradient(&w);
    let mut trace = vec![phi];
    let mut step = 0.5;
    let mut converged = false;
    let mut iterations = 0;
    // Penalty level at which the residuals are pure rounding noise.
    let floor = (f64::EPSILON * problem.rhs.norm().max(1.0)).powi(2);

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = w.iter().zip(&g).map(|(v, gk)| v - t * gk).collect();
            problem.project(&mut trial);
            let d: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
            let slope = dot(&g, &d);
            if slope >= 0.0 {
                // Projected gradient vanishes: first-order optimal.
                break;
            }
            let phi_trial = problem.penalty(&trial);
            if phi_trial <= phi + ARMIJO * slope {
                accepted = Some((trial, phi_trial));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, phi_new)) = accepted else {
            converged = true;
            break;
        };

        let g_new = problem.gradient(&w_new);
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-10, 1e10)
        } else {
            0.5
        };

        let decrease = phi - phi_new;
        w = w_new;
        g = g_new;
        phi = phi_new;
        trace.push(phi);
        if decrease <= cfg.min_decrease * (phi + decrease) || phi <= floor {
            converged = true;
            break;
        }
    }

    let z = problem.unscale(&w);
    let alpha = SatisfactionPoly::new(z[..problem.n_alpha].to_vec())?;
    let lambdas = z[problem.n_alpha..]
        .chunks_exact(2)
        .map(|c| [c[0], c[1]])
        .collect();
    let r_ineq = problem
        .y
        .iter()
        .map(|&y| (-y).max(y - problem.ybar).max(0.0))
        .fold(0.0, f64::max);
    let rank = lstsq(&problem.design, &problem.rhs).rank;

    Ok((
        EstimationResult {
            alpha,
            order_j,
            method: FitMethod::KktResidual,
            residual: phi,
            relative_residual: phi,
            within_tol: converged,
            rank,
            shape: (problem.design.nrows(), problem.design.ncols()),
            lambdas: Some(lambdas),
            r_ineq,
            iterations,
        },
        trace,
    ))
}
