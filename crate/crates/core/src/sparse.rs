//! Compressed sparse row matrices over mesh vertices.
//!
//! All matrices assembled from the same mesh share the vertex-adjacency
//! sparsity pattern (including the diagonal), which makes sums and
//! column scalings pattern-preserving.

use std::sync::Arc;

/// Shared CSR sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl Pattern {
    /// Diagonal-only pattern.
    pub fn diagonal(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
        }
    }

    /// Build from an adjacency list; each row's columns are sorted and the
    /// diagonal is always included.
    pub fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Self {
        let n = neighbors.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, mut cols) in neighbors.into_iter().enumerate() {
            cols.push(i);
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx }
    }
}

/// Square CSR matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<Pattern>, symmetric: bool) -> Self {
        let nnz = pattern.col_idx.len();
        Self {
            pattern,
            values: vec![0.0; nnz],
            symmetric,
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn set_symmetric(&mut self, symmetric: bool) {
        self.symmetric = symmetric;
    }

    /// Add `v` to entry (i, j); panics if (i, j) is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let start = self.pattern.row_ptr[i];
        let end = self.pattern.row_ptr[i + 1];
        let cols = &self.pattern.col_idx[start..end];
        let k = cols
            .binary_search(&j)
            .unwrap_or_else(|_| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[start + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let start = self.pattern.row_ptr[i];
        let end = self.pattern.row_ptr[i + 1];
        match self.pattern.col_idx[start..end].binary_search(&j) {
            Ok(k) => self.values[start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n());
        debug_assert_eq!(y.len(), self.n());
        for i in 0..self.n() {
            let mut acc = 0.0;
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                acc += self.values[k] * x[self.pattern.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.matvec(x, &mut y);
        y
    }

    /// Residual b - Ax evaluated with FMA two-products and compensated
    /// summation, so the result is accurate to roundoff in the residual
    /// itself rather than in the (much larger) products. Iterative
    /// refinement restarted from this residual can reach true residuals
    /// below the plain-double evaluation noise of b - Ax.
    pub fn residual_accurate(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n());
        debug_assert_eq!(b.len(), self.n());
        fn add(sum: &mut f64, comp: &mut f64, v: f64) {
            let t = *sum + v;
            if sum.abs() >= v.abs() {
                *comp += (*sum - t) + v;
            } else {
                *comp += (v - t) + *sum;
            }
            *sum = t;
        }
        let mut r = vec![0.0; self.n()];
        for i in 0..self.n() {
            let mut sum = b[i];
            let mut comp = 0.0;
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let a = self.values[k];
                let xk = x[self.pattern.col_idx[k]];
                let hi = a * xk;
                let lo = a.mul_add(xk, -hi);
                add(&mut sum, &mut comp, -hi);
                add(&mut sum, &mut comp, -lo);
            }
            r[i] = sum + comp;
        }
        r
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n()];
        for i in 0..self.n() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                sums[i] += self.values[k];
            }
        }
        sums
    }

    /// Entrywise `self + scale * other`; both matrices must share a pattern.
    pub fn add_scaled(&self, other: &SparseMatrix, scale: f64) -> SparseMatrix {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || *self.pattern == *other.pattern,
            "pattern mismatch in matrix sum"
        );
        let mut out = self.clone();
        for (v, &w) in out.values.iter_mut().zip(&other.values) {
            *v += scale * w;
        }
        out.symmetric = self.symmetric && other.symmetric;
        out
    }

    /// `self * diag(d)` (scales column j by d[j]).
    pub fn column_scaled(&self, d: &[f64]) -> SparseMatrix {
        debug_assert_eq!(d.len(), self.n());
        let mut out = self.clone();
        for i in 0..self.n() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                out.values[k] = self.values[k] * d[self.pattern.col_idx[k]];
            }
        }
        out.symmetric = false;
        out
    }

    /// Add `d[i]` to each diagonal entry in place.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.n());
        for i in 0..self.n() {
            let start = self.pattern.row_ptr[i];
            let end = self.pattern.row_ptr[i + 1];
            let k = self.pattern.col_idx[start..end]
                .binary_search(&i)
                .expect("pattern must contain the diagonal");
            self.values[start + k] += d[i];
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                dense[i][self.pattern.col_idx[k]] = self.values[k];
            }
        }
        dense
    }

    /// Build from a dense matrix, keeping all entries (tests only).
    pub fn from_dense(rows: &[Vec<f64>], symmetric: bool) -> SparseMatrix {
        let n = rows.len();
        let neighbors: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
        let pattern = Arc::new(Pattern::from_neighbors(neighbors));
        let mut m = SparseMatrix::zeros(pattern, symmetric);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    /// Largest symmetry defect max |A_ij - A_ji|.
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for i in 0..self.n() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let j = self.pattern.col_idx[k];
                defect = defect.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        defect
    }
}
