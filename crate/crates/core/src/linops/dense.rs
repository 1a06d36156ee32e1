//! Small dense factorizations: LU with partial pivoting, Cholesky, and the
//! matrix exponential.

use super::{matmul, LinalgError, Matrix};

/// LU factorization `P A = L U` of a square matrix, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes the `n x n` row-major matrix `a`. Fails when a pivot falls
    /// below `pivot_tol` times the largest entry of its column.
    pub fn factor(n: usize, mut a: Vec<f64>, pivot_tol: f64) -> Result<Self, LinalgError> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pmax <= pivot_tol * scale {
                return Err(LinalgError::Singular { pivot: k });
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in (k + 1)..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solves `A^T y = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        // U^T w = c, then L^T v = w, then y = P^T v.
        let mut w = c.to_vec();
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s -= self.lu[j * n + i] * w[j];
            }
            w[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in (i + 1)..n {
                s -= self.lu[j * n + i] * w[j];
            }
            w[i] = s;
        }
        let mut y = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            y[p] = w[k];
        }
        y
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "cholesky",
            expected: (n, n),
            found: a.shape(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The argument is scaled so its infinity norm is below 1/2; 20 Taylor terms
/// then leave a truncation error far below double precision.
pub fn expm(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "expm",
            expected: (n, n),
            found: a.shape(),
        });
    }
    let norm = (0..n)
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a.scale(1.0 / f64::from(2u32.pow(squarings.min(31))));
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=20 {
        term = matmul(&term, &scaled)?.scale(1.0 / k as f64);
        result = result.add(&term)?;
    }
    for _ in 0..squarings {
        result = matmul(&result, &result)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_both_orientations() {
        let a = vec![4.0, 3.0, 0.0, 6.0, 3.0, 1.0, 0.0, 2.0, 5.0];
        let lu = Lu::factor(3, a.clone(), 1e-12).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let y = lu.solve_transpose(&[1.0, -1.0, 2.0]);
        for j in 0..3 {
            let r: f64 = (0..3).map(|i| a[i * 3 + j] * y[i]).sum();
            assert!((r - [1.0, -1.0, 2.0][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_detects_singular() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(matches!(
            Lu::factor(2, a, 1e-12),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let back = matmul(&l, &l.transpose()).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-14);
        assert!(cholesky(&Matrix::diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn expm_of_nilpotent_and_rotation() {
        let n = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let e = expm(&n.scale(3.0)).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 3.0, 0.0, 1.0]);

        let t = 2.5;
        let r = Matrix::from_rows(&[[0.0, -t], [t, 0.0]]).unwrap();
        let e = expm(&r).unwrap();
        let want = [t.cos(), -t.sin(), t.sin(), t.cos()];
        for (x, y) in e.as_slice().iter().zip(want) {
            assert!((x - y).abs() < 1e-13, "{x} vs {y}");
        }
    }
}
