//! Small dense linear algebra: just enough for stacked first-order systems.
//!
//! Everything here targets matrices of a few dozen entries, so the
//! implementations favor clarity and determinism over speed: a cyclic Jacobi
//! eigensolver for symmetric matrices (singular values, numerical rank,
//! pseudo-inverse least squares) and Gaussian elimination for the damped
//! normal equations.

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let v = self.get(r, k);
                if v == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += v * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Aᵀ x` without forming the transpose.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.get(r, c) * x[r];
            }
        }
        out
    }

    /// `AᵀA`, symmetric by construction.
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.cols, self.cols);
        for i in 0..self.cols {
            for j in i..self.cols {
                let mut s = 0.0;
                for r in 0..self.rows {
                    s += self.get(r, i) * self.get(r, j);
                }
                g.set(i, j, s);
                g.set(j, i, s);
            }
        }
        g
    }

    /// Appends `col` as an extra column (used for the augmented rank test).
    pub fn augmented(&self, col: &[f64]) -> Mat {
        assert_eq!(self.rows, col.len(), "dimension mismatch");
        let mut out = Mat::zeros(self.rows, self.cols + 1);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c));
            }
            out.set(r, self.cols, col[r]);
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of the returned matrix.
pub fn jacobi_eigen_sym(m: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(m.rows, m.cols, "matrix must be square");
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Mat::identity(n);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off <= 1e-300 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_col, v.get(r, old_col));
        }
    }
    (values, vectors)
}

/// One-sided Jacobi SVD: orthogonalizes the columns of `a` by plane
/// rotations. Returns singular values in descending order and the matching
/// right singular vectors as columns.
///
/// Working on `a` directly (rather than `AᵀA`) keeps small singular values
/// at full precision, which the rank test's 1e-10 relative threshold needs.
pub fn svd_jacobi(a: &Mat) -> (Vec<f64>, Mat) {
    let m = a.rows;
    let n = a.cols;
    let mut u = a.clone();
    let mut v = Mat::identity(n);

    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut aii = 0.0;
                let mut ajj = 0.0;
                let mut aij = 0.0;
                for r in 0..m {
                    let x = u.get(r, i);
                    let y = u.get(r, j);
                    aii += x * x;
                    ajj += y * y;
                    aij += x * y;
                }
                if aij.abs() <= 1e-15 * (aii * ajj).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (ajj - aii) / (2.0 * aij);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let x = u.get(r, i);
                    let y = u.get(r, j);
                    u.set(r, i, c * x - s * y);
                    u.set(r, j, s * x + c * y);
                }
                for r in 0..n {
                    let x = v.get(r, i);
                    let y = v.get(r, j);
                    v.set(r, i, c * x - s * y);
                    v.set(r, j, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut norms: Vec<f64> = (0..n)
        .map(|c| (0..m).map(|r| u.get(r, c).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_col, v.get(r, old_col));
        }
    }
    norms.sort_by(|x, y| y.partial_cmp(x).unwrap());
    (norms, vectors)
}

/// Singular values of `a` in descending order.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    svd_jacobi(a).0
}

/// Numerical rank: number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &Mat, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if sigma_max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * sigma_max).count()
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for (near-)singular systems.
pub fn solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(a.rows, a.cols, "matrix must be square");
    assert_eq!(a.rows, b.len(), "dimension mismatch");
    let n = a.rows;
    let mut m = a.clone();
    let mut rhs = b.to_vec();

    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m.get(r, col).abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
        if pivot < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(pivot_row, c));
                m.set(pivot_row, c, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        let diag = m.get(col, col);
        for r in (col + 1)..n {
            let factor = m.get(r, col) / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m.get(r, c) - factor * m.get(col, c);
                m.set(r, c, v);
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for c in (r + 1)..n {
            s -= m.get(r, c) * x[c];
        }
        x[r] = s / m.get(r, r);
    }
    Some(x)
}

/// Minimum-norm least-squares solution of `a x ≈ b` through the SVD
/// pseudo-inverse; singular values below `rel_tol * sigma_max` are dropped.
pub fn lstsq_min_norm(a: &Mat, b: &[f64], rel_tol: f64) -> Vec<f64> {
    let (sigma, v) = svd_jacobi(a);
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = rel_tol * sigma_max;
    let n = a.cols;
    let atb = a.t_matvec(b);

    // x = sum_k (v_kᵀ Aᵀ b / sigma_k^2) v_k over the retained spectrum.
    let mut x = vec![0.0; n];
    for (idx, &s) in sigma.iter().enumerate() {
        if s <= cutoff || s <= 0.0 {
            continue;
        }
        let mut proj = 0.0;
        for r in 0..n {
            proj += v.get(r, idx) * atb[r];
        }
        let scale = proj / (s * s);
        for r in 0..n {
            x[r] += scale * v.get(r, idx);
        }
    }
    x
}
