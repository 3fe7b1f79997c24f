//! Small dense symmetric linear algebra for the ridge posterior.

/// In-place Cholesky of a symmetric positive definite matrix (row-major,
/// d x d). Returns the lower factor L with A = L L^T, or None if a pivot
/// is not positive.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solve A x = b given the lower Cholesky factor of A.
pub fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    // forward: L y = b
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * y[k];
        }
        y[i] = sum / l[i * d + i];
    }
    // backward: L^T x = y
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * x[k];
        }
        x[i] = sum / l[i * d + i];
    }
    x
}

/// Full inverse via d Cholesky solves against unit vectors.
pub fn chol_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for col in 0..d {
        e[col] = 1.0;
        let x = chol_solve(l, d, &e);
        for row in 0..d {
            inv[row * d + col] = x[row];
        }
        e[col] = 0.0;
    }
    inv
}

pub fn quadratic_form(sigma: &[f64], d: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += sigma[i * d + j] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solve_round_trip() {
        // A = [[4,2],[2,3]], b = [1, 2] -> x = A^{-1} b
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let x = chol_solve(&l, 2, &[1.0, 2.0]);
        // A x should be b
        assert!((4.0 * x[0] + 2.0 * x[1] - 1.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_matches_hand_computation() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let inv = chol_inverse(&l, 2);
        // det = 8; inverse = [[3,-2],[-2,4]]/8
        let want = [3.0 / 8.0, -2.0 / 8.0, -2.0 / 8.0, 4.0 / 8.0];
        for (g, w) in inv.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn non_pd_matrix_is_rejected() {
        let a = [1.0, 2.0, 2.0, 1.0]; // indefinite
        assert!(cholesky(&a, 2).is_none());
    }
}
