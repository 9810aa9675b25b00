//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves `h x = b` for symmetric positive (semi)definite `h`.
///
/// Tries a plain Cholesky factorization first, then once more with a ridge
/// of `ridge_rel * trace(h)` on the diagonal. Returns `None` when both fail.
pub fn solve_spd(h: &DMatrix<f64>, b: &DVector<f64>, ridge_rel: f64) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let ridge = ridge_rel * h.trace().abs().max(f64::MIN_POSITIVE);
    let mut hr = h.clone();
    for i in 0..hr.nrows() {
        hr[(i, i)] += ridge;
    }
    let x = hr.cholesky()?.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Per-column mean and population standard deviation of a row-major matrix.
pub fn column_moments(data: &[f64], ncols: usize) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() / ncols;
    let mut mean = vec![0.0; ncols];
    for row in data.chunks_exact(ncols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; ncols];
    for row in data.chunks_exact(ncols) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_and_ridge_fallback() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_spd(&h, &b, 1e-10).unwrap();
        assert!((&h * &x - &b).norm() < 1e-14);

        // singular: second row duplicates the first
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let x = solve_spd(&h, &b, 1e-10).unwrap();
        assert!((&h * &x - &b).norm() < 1e-6);
    }

    #[test]
    fn moments() {
        let (m, s) = column_moments(&[1.0, 10.0, 3.0, 10.0], 2);
        assert_eq!(m, vec![2.0, 10.0]);
        assert_eq!(s, vec![1.0, 0.0]);
    }
}
