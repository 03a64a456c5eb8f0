//! Dense symmetric positive semi-definite factorization for small systems.

/// Cholesky factorization with diagonal pivoting of an equilibrated matrix.
///
/// The input is first scaled to unit diagonal, so the rank test looks at
/// linear dependence between columns rather than at their magnitudes.
pub(crate) struct PivotedCholesky {
    n: usize,
    /// Lower factor of the scaled, permuted matrix, row-major.
    l: Vec<f64>,
    perm: Vec<usize>,
    /// 1 / sqrt(diag) of the original matrix.
    scale: Vec<f64>,
}

impl PivotedCholesky {
    /// Factors the row-major `n x n` matrix `a`.
    ///
    /// Returns the original index of the first column whose pivot falls below
    /// `rel_tol` times the largest pivot.
    pub(crate) fn factor(a: &[f64], n: usize, rel_tol: f64) -> Result<Self, usize> {
        debug_assert_eq!(a.len(), n * n);
        let mut scale = vec![0.0; n];
        for i in 0..n {
            let d = a[i * n + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(i);
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut m: Vec<f64> = (0..n * n)
            .map(|idx| a[idx] * scale[idx / n] * scale[idx % n])
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut largest = 0.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]))
                .expect("non-empty range");
            let pivot = m[p * n + p];
            if k == 0 {
                largest = pivot;
            }
            if !(pivot > rel_tol * largest) {
                return Err(perm[p]);
            }
            if p != k {
                for c in 0..n {
                    m.swap(k * n + c, p * n + c);
                }
                for r in 0..n {
                    m.swap(r * n + k, r * n + p);
                }
                perm.swap(k, p);
            }
            let lkk = pivot.sqrt();
            m[k * n + k] = lkk;
            for i in k + 1..n {
                m[i * n + k] /= lkk;
            }
            for j in k + 1..n {
                let ljk = m[j * n + k];
                for i in j..n {
                    let v = m[i * n + j] - m[i * n + k] * ljk;
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
        }
        // Keep only the lower triangle.
        for i in 0..n {
            for j in i + 1..n {
                m[i * n + j] = 0.0;
            }
        }
        Ok(PivotedCholesky { n, l: m, perm, scale })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Scaled system: (S A S) (S^-1 x) = S b, permuted by P.
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i] * self.scale[i]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.l[i * n + j] * y[j];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.l[j * n + i] * y[j];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k] * self.scale[i];
        }
        x
    }

    /// Full inverse, row-major.
    pub(crate) fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        // Symmetrize away rounding noise.
        for r in 0..n {
            for c in r + 1..n {
                let v = 0.5 * (inv[r * n + c] + inv[c * n + r]);
                inv[r * n + c] = v;
                inv[c * n + r] = v;
            }
        }
        inv
    }
}
