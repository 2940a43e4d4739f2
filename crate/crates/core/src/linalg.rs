//! Small dense symmetric solvers used by the ridge oracle and latent recovery.

use crate::error::{Error, Result};

/// Cholesky factorization of a symmetric positive-definite matrix (row-major,
/// n x n), in place into the lower triangle.
fn cholesky(n: usize, a: &mut [f64]) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "matrix not positive definite at pivot {j}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solve `A X = B` for SPD `A` (n x n) and `B` given as `m` right-hand-side
/// columns flattened row-major `[n, m]`. Returns `X` in the same layout.
pub fn solve_spd(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() % n != 0 {
        return Err(Error::shape("solve_spd", format!("a {} b {}", a.len(), b.len())));
    }
    let m = b.len() / n;
    let mut l = a.to_vec();
    cholesky(n, &mut l)?;
    let mut x = b.to_vec();
    // forward solve L y = b (per column)
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            for c in 0..m {
                x[i * m + c] -= lik * x[k * m + c];
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    // backward solve L^T x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[k * n + i];
            for c in 0..m {
                x[i * m + c] -= lki * x[k * m + c];
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Ok(x)
}

/// Least squares `argmin_x ||A x - b||` via normal equations with a small
/// ridge; `a` is `[rows, cols]` row-major, `b` has `rows` entries.
pub fn lstsq(rows: usize, cols: usize, a: &[f64], b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if a.len() != rows * cols || b.len() != rows {
        return Err(Error::shape("lstsq", format!("a {} b {}", a.len(), b.len())));
    }
    let mut ata = vec![0.0; cols * cols];
    let mut atb = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let ai = row[i];
            if ai == 0.0 {
                continue;
            }
            for (j, &aj) in row.iter().enumerate() {
                ata[i * cols + j] += ai * aj;
            }
            atb[i] += ai * b[r];
        }
    }
    for i in 0..cols {
        ata[i * cols + i] += ridge;
    }
    solve_spd(cols, &ata, &atb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_known_spd_system() {
        // A = [[4,2],[2,3]], b = [10, 8] -> x = [1.75, 1.5]
        let x = solve_spd(2, &[4.0, 2.0, 2.0, 3.0], &[10.0, 8.0]).unwrap();
        assert!((x[0] - 1.75).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn multi_rhs_columns_solve_independently() {
        let a = [4.0, 2.0, 2.0, 3.0];
        // columns: [10,8] and [4,3] interleaved row-major [n=2, m=2]
        let b = [10.0, 4.0, 8.0, 3.0];
        let x = solve_spd(2, &a, &b).unwrap();
        assert!((x[0] - 1.75).abs() < 1e-12 && (x[2] - 1.5).abs() < 1e-12);
        assert!((x[1] - 0.75).abs() < 1e-12 && (x[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrices() {
        assert!(solve_spd(2, &[1.0, 2.0, 2.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lstsq_recovers_planted_coefficients() {
        let mut rng = crate::rng::stream(31, "lstsq", &[]);
        use rand::Rng;
        let (rows, cols) = (60, 3);
        let coef = [2.0, -1.0, 0.5];
        let mut a = vec![0.0; rows * cols];
        let mut b = vec![0.0; rows];
        for r in 0..rows {
            for c in 0..cols {
                a[r * cols + c] = rng.gen_range(-1.0..1.0);
            }
            b[r] = (0..cols).map(|c| coef[c] * a[r * cols + c]).sum();
        }
        let x = lstsq(rows, cols, &a, &b, 1e-9).unwrap();
        for c in 0..cols {
            assert!((x[c] - coef[c]).abs() < 1e-6);
        }
    }
}
