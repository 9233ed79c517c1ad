//! Small dense solvers for the handful of least-squares problems in this crate.

/// Solves `a x = b` for a row-major `n x n` matrix by Gaussian elimination
/// with partial pivoting. Returns `None` when a pivot underflows `1e-12`
/// relative to the largest entry.
pub fn solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[pivot * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        let tail: f64 = (col + 1..n).map(|k| m[col * n + k] * x[k]).sum();
        x[col] = (x[col] - tail) / m[col * n + col];
    }
    Some(x)
}

/// Weighted least squares `min Σ w_i (y_i - f_iᵀβ)² + ridge·|β|²`, with the
/// design given row by row. Falls back to a slightly larger ridge when the
/// normal equations are singular.
pub fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let p = rows.first()?.len();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for ((f, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for a in 0..p {
            xty[a] += wi * f[a] * yi;
            for b in 0..p {
                xtx[a * p + b] += wi * f[a] * f[b];
            }
        }
    }
    let trace = (0..p).map(|a| xtx[a * p + a]).sum::<f64>().max(f64::MIN_POSITIVE);
    for jitter in [ridge, 1e-10 * trace, 1e-6 * trace] {
        let mut reg = xtx.clone();
        for a in 0..p {
            reg[a * p + a] += jitter;
        }
        if let Some(beta) = solve(&reg, &xty) {
            return Some(beta);
        }
    }
    None
}
