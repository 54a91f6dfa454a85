use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff for the numerical rank.
const RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub x: DVector<f64>,
    pub rank: usize,
}

/// Least-squares solution of `a·x ≈ b`; minimum-norm when `a` lacks full column rank.
///
/// Full-column-rank systems are solved on the column-equilibrated matrix,
/// which matters for the power-of-`y` columns of the design matrix.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let (scaled, scales) = equilibrate(a);
    let (x, rank) = svd_solve(scaled, b);
    if rank == a.ncols() {
        let x = DVector::from_iterator(x.len(), x.iter().zip(&scales).map(|(v, s)| v / s));
        return LeastSquares { x, rank };
    }
    let (x, _) = svd_solve(a.clone(), b);
    LeastSquares { x, rank }
}

/// Rank of the column-equilibrated matrix, counting singular values above
/// `rtol` times the largest.
pub fn numerical_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    let (scaled, _) = equilibrate(a);
    let sv = scaled.singular_values();
    let cutoff = sv.max() * rtol;
    sv.iter().filter(|s| **s > cutoff).count()
}

fn equilibrate(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let scales: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (mut col, s) in scaled.column_iter_mut().zip(&scales) {
        col /= *s;
    }
    (scaled, scales)
}

fn svd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * RANK_RTOL).max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let x = svd
        .solve(b, eps)
        .expect("both singular vector sets were computed");
    (x, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DVector::from_vec(vec![5.0, 6.0]);
        let sol = lstsq(&a, &b);
        assert_eq!(sol.rank, 2);
        assert!((&a * &sol.x - &b).norm() < 1e-12);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 2.5, 2.9, 4.2]);
        let sol = lstsq(&a, &b);
        let normal = (a.transpose() * &a)
            .lu()
            .solve(&(a.transpose() * &b))
            .unwrap();
        assert!((sol.x - normal).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_minimum_norm() {
        // Duplicate rows: x lies on the line x0 + 3x1 = 2; the shortest such x is (0.2, 0.6).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let sol = lstsq(&a, &b);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 0.2).abs() < 1e-12);
        assert!((sol.x[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn near_duplicate_rows_lose_rank_at_loose_threshold() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0 + 1e-9]);
        assert_eq!(numerical_rank(&a, 1e-12), 2);
        assert_eq!(numerical_rank(&a, 1e-8), 1);
    }
}
