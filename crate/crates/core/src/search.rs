//! Bounded scalar maximization on `[0, upper]`.
//!
//! A uniform grid locates the best cell, golden-section search narrows it to
//! the requested width and a few safeguarded Newton steps on the derivative
//! polish the interior optimum to machine precision. Ties resolve to the
//! smallest argument.

use crate::error::{Error, Result};

/// Number of grid cells across the domain.
pub const GRID_CELLS: usize = 1000;

const INV_PHI: f64 = 0.618_033_988_749_894_8;
const NEWTON_STEPS: usize = 8;

/// A smooth scalar objective with analytic first and second derivatives.
pub trait ScalarObjective {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    fn curvature(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
}

fn finite(x: f64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidScenario(format!(
            "objective is not finite at y = {x}"
        )))
    }
}

/// Maximize `c1·x + c2·x²` over `[0, upper]`.
pub fn maximize_quadratic(c1: f64, c2: f64, upper: f64) -> Result<Maximum> {
    let eval = |x: f64| (c1 + c2 * x) * x;
    let x = if c2 < 0.0 {
        (-c1 / (2.0 * c2)).clamp(0.0, upper)
    } else if eval(upper) > 0.0 {
        upper
    } else {
        0.0
    } + 0.0;
    let value = finite(x, eval(x))?;
    // Boundary values can still beat a clipped vertex only through rounding.
    if x > 0.0 && finite(0.0, eval(0.0))? >= value {
        return Ok(Maximum { x: 0.0, value: 0.0 });
    }
    Ok(Maximum { x, value })
}

/// Global maximum of `obj` over `[0, upper]`, located to within `tol`.
pub fn maximize(obj: &impl ScalarObjective, upper: f64, tol: f64) -> Result<Maximum> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let h = upper / GRID_CELLS as f64;
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for i in 0..=GRID_CELLS {
        let x = grid_point(i, h, upper);
        let v = finite(x, obj.value(x))?;
        if v > best_value {
            best = i;
            best_value = v;
        }
    }

    let lo = grid_point(best.saturating_sub(1), h, upper);
    let hi = grid_point((best + 1).min(GRID_CELLS), h, upper);
    let golden = golden_section(obj, lo, hi, tol);
    let polished = newton_polish(obj, golden, lo, hi);

    let mut candidates = [lo, grid_point(best, h, upper), golden, polished, hi];
    candidates.sort_by(f64::total_cmp);
    let mut out = Maximum {
        x: candidates[0],
        value: finite(candidates[0], obj.value(candidates[0]))?,
    };
    for &x in &candidates[1..] {
        let v = finite(x, obj.value(x))?;
        if v > out.value {
            out = Maximum { x, value: v };
        }
    }
    // Near an interior optimum the values are flat to rounding; the polished
    // point is the one with the vanishing derivative.
    let polished_value = obj.value(polished);
    if polished != out.x
        && polished_value >= out.value - 8.0 * f64::EPSILON * (1.0 + out.value.abs())
        && obj.slope(polished).abs() < obj.slope(out.x).abs()
    {
        out = Maximum {
            x: polished,
            value: polished_value,
        };
    }
    Ok(out)
}

fn grid_point(i: usize, h: f64, upper: f64) -> f64 {
    if i == GRID_CELLS {
        upper
    } else {
        i as f64 * h
    }
}

fn golden_section(obj: &impl ScalarObjective, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = obj.value(c);
    let mut fd = obj.value(d);
    while b - a > tol {
        // `>=` keeps the left piece on ties.
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = obj.value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = obj.value(d);
        }
    }
    0.5 * (a + b)
}

fn newton_polish(obj: &impl ScalarObjective, start: f64, lo: f64, hi: f64) -> f64 {
    let mut x = start;
    let mut g = obj.slope(x);
    for _ in 0..NEWTON_STEPS {
        let c = obj.curvature(x);
        if !(c < 0.0) || g == 0.0 {
            break;
        }
        let next = x - g / c;
        if !(next > lo && next < hi) {
            break;
        }
        let g_next = obj.slope(next);
        if !(g_next.abs() < g.abs()) {
            break;
        }
        x = next;
        g = g_next;
    }
    x
}
