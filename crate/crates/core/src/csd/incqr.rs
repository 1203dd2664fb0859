//! Incremental thin QR factorization over a growing/shrinking column set.
//!
//! The Lawson-Hanson iteration changes its passive set by one column at a
//! time; refactorizing from scratch makes every step O(n p^2). Maintaining
//! Q (n x p, orthonormal) and R (p x p, upper triangular) with
//! Gram-Schmidt appends and Givens-rotation removals keeps each step at
//! O(n p).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct IncrementalQr {
    n: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    /// Caller-side label of each column (constraint index).
    labels: Vec<usize>,
}

impl IncrementalQr {
    pub fn new(n: usize) -> Self {
        Self { n, q: DMatrix::zeros(n, 0), r: DMatrix::zeros(0, 0), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Appends a column. Returns `false` (leaving the factorization
    /// unchanged) when the column is numerically dependent on the current
    /// set.
    pub fn push(&mut self, label: usize, col: &DVector<f64>) -> bool {
        debug_assert_eq!(col.len(), self.n);
        let p = self.len();
        let mut t = DVector::zeros(p);
        let mut u = col.clone();
        // Classical Gram-Schmidt, twice for numerical safety.
        for _ in 0..2 {
            for j in 0..p {
                let proj = self.q.column(j).dot(&u);
                t[j] += proj;
                u -= self.q.column(j) * proj;
            }
        }
        let norm = u.norm();
        if norm <= 1e-10 * col.norm().max(f64::MIN_POSITIVE) {
            return false;
        }
        u /= norm;

        let mut q = DMatrix::zeros(self.n, p + 1);
        q.view_mut((0, 0), (self.n, p)).copy_from(&self.q);
        q.set_column(p, &u);
        let mut r = DMatrix::zeros(p + 1, p + 1);
        r.view_mut((0, 0), (p, p)).copy_from(&self.r);
        for j in 0..p {
            r[(j, p)] = t[j];
        }
        r[(p, p)] = norm;
        self.q = q;
        self.r = r;
        self.labels.push(label);
        true
    }

    /// Removes the column at position `k`, restoring the triangular shape
    /// with Givens rotations.
    pub fn remove(&mut self, k: usize) {
        let p = self.len();
        debug_assert!(k < p);
        // Drop column k of R: the remaining columns form an upper-Hessenberg
        // block from row k on.
        let mut r = DMatrix::zeros(p, p - 1);
        for (jj, j) in (0..p).filter(|&j| j != k).enumerate() {
            for i in 0..p {
                r[(i, jj)] = self.r[(i, j)];
            }
        }
        let mut q = self.q.clone();
        for i in k..(p - 1) {
            // Rotate rows (i, i+1) to eliminate r[(i+1, i)].
            let a = r[(i, i)];
            let b = r[(i + 1, i)];
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let c = a / rho;
            let s = b / rho;
            for j in i..(p - 1) {
                let x = r[(i, j)];
                let y = r[(i + 1, j)];
                r[(i, j)] = c * x + s * y;
                r[(i + 1, j)] = -s * x + c * y;
            }
            // Q absorbs the transpose rotation to keep Q R invariant.
            for row in 0..self.n {
                let x = q[(row, i)];
                let y = q[(row, i + 1)];
                q[(row, i)] = c * x + s * y;
                q[(row, i + 1)] = -s * x + c * y;
            }
        }
        self.q = q.view((0, 0), (self.n, p - 1)).into_owned();
        self.r = r.view((0, 0), (p - 1, p - 1)).into_owned();
        self.labels.remove(k);
    }

    /// Least-squares coefficients for the current columns against `y`,
    /// ordered like `labels()`.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.len();
        let mut z = self.q.transpose() * y;
        for i in (0..p).rev() {
            let mut acc = z[i];
            for j in (i + 1)..p {
                acc -= self.r[(i, j)] * z[j];
            }
            z[i] = acc / self.r[(i, i)];
        }
        z
    }
}
