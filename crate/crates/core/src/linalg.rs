//! Small dense least-squares solves on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

const REFINEMENT_STEPS: usize = 2;

/// Minimum-norm least-squares solution of `a·x ≈ b`.
///
/// Columns are scaled to unit max-magnitude before the SVD so that features
/// spanning many orders of magnitude do not swamp the rank cutoff; all-zero
/// columns get a zero coefficient. Singular values below
/// `max(rows, cols)·ε·σ_max` are treated as zero. Returns `None` when the
/// solve produces non-finite values.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (rows, cols) = a.shape();
    let maxabs: Vec<f64> = (0..cols)
        .map(|j| a.column(j).iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
        .collect();
    let scales: Vec<f64> = maxabs.iter().map(|&m| if m > 0.0 { m } else { 1.0 }).collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = scaled.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    if smax == 0.0 {
        return Some(DVector::zeros(cols));
    }
    let eps = rows.max(cols) as f64 * f64::EPSILON * smax;
    let mut x = svd.solve(b, eps).ok()?;
    // Iterative refinement; corrections stay in the row space, so the
    // result is still the minimum-norm solution.
    for _ in 0..REFINEMENT_STEPS {
        let r = b - &scaled * &x;
        x += svd.solve(&r, eps).ok()?;
    }
    for (j, s) in scales.iter().enumerate() {
        x[j] = if maxabs[j] == 0.0 { 0.0 } else { x[j] / s };
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Numerical rank of `a` after the same column scaling as [`lstsq_min_norm`].
pub fn scaled_rank(a: &DMatrix<f64>) -> usize {
    let (rows, cols) = a.shape();
    let mut scaled = a.clone();
    for j in 0..cols {
        let m = scaled.column(j).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if m > 0.0 {
            scaled.column_mut(j).scale_mut(1.0 / m);
        }
    }
    let sv = scaled.singular_values();
    let smax = sv.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    let eps = rows.max(cols) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|v| **v > eps).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_line() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_row_slice(&[2.0, 5.0, 8.0]);
        let x = lstsq_min_norm(&a, &b).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_column_gets_zero_weight() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let b = DVector::from_row_slice(&[2.0, 4.0, 6.0]);
        let x = lstsq_min_norm(&a, &b).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert_eq!(x[1], 0.0);
        assert_eq!(scaled_rank(&a), 1);
    }

    #[test]
    fn duplicated_column_splits_weight() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_row_slice(&[2.0, 4.0, 6.0]);
        let x = lstsq_min_norm(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
