//! Dense matrices of modest size and a symmetric eigensolver.
//!
//! Field interaction matrices have a few dozen rows, so everything here is a
//! plain row-major `Vec<f64>` with straightforward loops. The eigensolver is
//! a cyclic Jacobi iteration with a deterministic sweep order; eigenpairs are
//! returned sorted by descending eigenvalue magnitude, which is the order a
//! rank truncation consumes them in.

use crate::error::{Error, Result};

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data has {} entries, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("matrix entries must be finite".into()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest |a_ij - a_ji| over all pairs; zero for a symmetric matrix.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Standard matrix product; accumulation happens in `f64` throughout.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for l in 0..a.cols {
            let ail = a.get(i, l);
            if ail == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += ail * b.get(l, j);
            }
        }
    }
    Ok(out)
}

/// Frobenius inner product `sum_ij A_ij * B_ij = trace(A^T B)`.
pub fn frob_inner(a: &Mat, b: &Mat) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "frobenius inner product needs equal shapes, got {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Trace of a square matrix.
pub fn trace(a: &Mat) -> Result<f64> {
    if a.rows != a.cols {
        return Err(Error::Dimension(format!("trace needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    Ok((0..a.rows).map(|i| a.get(i, i)).sum())
}

/// `trace(A^T Q A)` for `A` of shape m×k and `Q` of shape m×m, evaluated as
/// the Frobenius inner product of `A A^T` with `Q`.
///
/// This equals the double sum over row inner products
/// `sum_ij <A_i, A_j> Q_ij`, which is how the pairwise interaction scores
/// elsewhere in the crate are defined.
pub fn trace_form(a: &Mat, q: &Mat) -> Result<f64> {
    if q.rows != q.cols {
        return Err(Error::Dimension(format!("Q must be square, got {}x{}", q.rows, q.cols)));
    }
    if a.rows != q.rows {
        return Err(Error::Dimension(format!(
            "A has {} rows but Q is {}x{}",
            a.rows, q.rows, q.cols
        )));
    }
    // Row Gram entries on the fly: sum_ij <A_i,A_j> Q_ij without storing A A^T.
    let mut acc = 0.0f64;
    for i in 0..a.rows {
        for j in 0..a.rows {
            let qij = q.get(i, j);
            if qij == 0.0 {
                continue;
            }
            let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            acc += dot * qij;
        }
    }
    Ok(acc)
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted by descending magnitude and `eigenvectors` holds
/// the matching orthonormal eigenvectors in its columns, so the input equals
/// `Q * diag(lambda) * Q^T`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
}

const SYMMETRY_REL_TOL: f64 = 1e-12;
const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition for symmetric matrices.
///
/// Sweeps annihilate the strictly upper pairs in row-major order until the
/// off-diagonal Frobenius norm drops below `1e-12 * ||S||_F`. The fixed sweep
/// order keeps results reproducible across runs.
pub fn sym_eig(s: &Mat) -> Result<SymEig> {
    if s.rows != s.cols {
        return Err(Error::Dimension(format!("eigensolver needs a square matrix, got {}x{}", s.rows, s.cols)));
    }
    let n = s.rows;
    let norm = s.frobenius_norm();
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_REL_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { max_asym: asym, tol: SYMMETRY_REL_TOL * norm });
    }

    // Work on the symmetrized copy so the iteration sees an exactly symmetric
    // matrix even when the input is only symmetric to tolerance.
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    let mut q = Mat::identity(n);

    let off_norm = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
        (2.0 * acc).sqrt()
    };

    let threshold = JACOBI_REL_TOL * norm;
    let mut converged = off_norm(&a) <= threshold;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for r in (p + 1)..n {
                let apr = a[p * n + r];
                if apr == 0.0 {
                    continue;
                }
                let theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apr);
                // tan of the rotation angle, with the smaller-magnitude root.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a[p * n + p] -= t * apr;
                a[r * n + r] += t * apr;
                a[p * n + r] = 0.0;
                a[r * n + p] = 0.0;
                for i in 0..n {
                    if i == p || i == r {
                        continue;
                    }
                    let aip = a[i * n + p];
                    let air = a[i * n + r];
                    let new_ip = aip - sn * (air + tau * aip);
                    let new_ir = air + sn * (aip - tau * air);
                    a[i * n + p] = new_ip;
                    a[p * n + i] = new_ip;
                    a[i * n + r] = new_ir;
                    a[r * n + i] = new_ir;
                }
                for i in 0..n {
                    let qip = q.get(i, p);
                    let qir = q.get(i, r);
                    q.set(i, p, qip - sn * (qir + tau * qip));
                    q.set(i, r, qir + sn * (qip - tau * qir));
                }
            }
        }
        converged = off_norm(&a) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .abs()
            .partial_cmp(&a[i * n + i].abs())
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, new_col, q.get(i, old_col));
        }
    }
    Ok(SymEig { eigenvalues, eigenvectors: vectors })
}

/// Singular values of a symmetric matrix: `|lambda_i|` in descending order.
pub fn sym_singular_values(s: &Mat) -> Result<Vec<f64>> {
    let eig = sym_eig(s)?;
    Ok(eig.eigenvalues.iter().map(|l| l.abs()).collect())
}
