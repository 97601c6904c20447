//! Compressed-row sparse matrices with deterministic assembly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed-row matrix. Column indices are sorted within each row and
/// duplicates are summed at build time, so identical inputs produce
/// bit-identical matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Set when the producer guarantees symmetry; checked by solvers that
    /// require it.
    pub symmetric: bool,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
        y
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[i];
            }
        }
        y
    }

    /// A * X for a dense right factor, column by column.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols, "mul_dense dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for j in 0..x.ncols() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let y = self.mul_vec(&col);
            out.set_column(j, &nalgebra::DVector::from_vec(y));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[(i, *c)] = *v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A - A^T| entry, for the symmetry invariant check.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(*c, i)).abs());
            }
        }
        m
    }

    /// Sum of scaled matrices with merged sparsity patterns.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let (nrows, ncols) = {
            let first = terms.first().expect("at least one term");
            (first.1.nrows, first.1.ncols)
        };
        for (_, m) in terms {
            if m.nrows != nrows || m.ncols != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "linear_combination: {}x{} vs {nrows}x{ncols}",
                    m.nrows, m.ncols
                )));
            }
        }
        let mut builder = CooBuilder::new(nrows, ncols);
        for (coef, m) in terms {
            for i in 0..nrows {
                let (cols, vals) = m.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    builder.add(i, *c, coef * v);
                }
            }
        }
        let symmetric = terms.iter().all(|(_, m)| m.symmetric);
        Ok(builder.build(symmetric))
    }
}

/// Triplet accumulator; `build` sorts and sums duplicates deterministically.
#[derive(Debug, Clone)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self, symmetric: bool) -> CsrMatrix {
        // Stable sort keeps the insertion order of duplicates, so the
        // floating-point summation order is reproducible.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
            symmetric,
        }
    }
}

/// Identity, handy in tests and for trivially constrained systems.
pub fn identity(n: usize) -> CsrMatrix {
    let mut b = CooBuilder::new(n, n);
    for i in 0..n {
        b.add(i, i, 1.0);
    }
    b.build(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_sums_duplicates_and_sorts() {
        let mut b = CooBuilder::new(2, 3);
        b.add(1, 2, 1.0);
        b.add(0, 1, 2.0);
        b.add(0, 1, 3.0);
        b.add(0, 0, 1.0);
        let m = b.build(false);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 2), 1.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut b = CooBuilder::new(3, 3);
        b.add(0, 0, 2.0);
        b.add(0, 2, -1.0);
        b.add(1, 1, 3.0);
        b.add(2, 0, 4.0);
        let m = b.build(false);
        let x = vec![1.0, 2.0, 3.0];
        let y = m.mul_vec(&x);
        assert_eq!(y, vec![-1.0, 6.0, 4.0]);
        let yt = m.mul_transpose_vec(&x);
        assert_eq!(yt, vec![2.0 + 12.0, 6.0, -1.0]);
    }

    #[test]
    fn linear_combination_merges_patterns() {
        let mut a = CooBuilder::new(2, 2);
        a.add(0, 0, 1.0);
        let a = a.build(true);
        let mut b = CooBuilder::new(2, 2);
        b.add(1, 1, 1.0);
        b.add(0, 0, 1.0);
        let b = b.build(true);
        let c = CsrMatrix::linear_combination(&[(2.0, &a), (3.0, &b)]).unwrap();
        assert_eq!(c.get(0, 0), 5.0);
        assert_eq!(c.get(1, 1), 3.0);
        assert!(c.symmetric);
    }
}
