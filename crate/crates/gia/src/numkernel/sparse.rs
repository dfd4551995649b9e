//! Compressed sparse row matrices for adjacency operators.

use crate::error::{Error, Result};
use crate::numkernel::tensor::Tensor;

/// CSR matrix with 64-bit float values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from CSR arrays, enforcing the structural invariants.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(Error::Validation(format!(
                "row pointer length {} != rows+1 ({})",
                row_ptr.len(),
                rows + 1
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("row pointer not monotone nondecreasing".into()));
        }
        if *row_ptr.last().unwrap() != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Validation("CSR arrays have inconsistent lengths".into()));
        }
        if col_idx.iter().any(|&c| c >= cols) {
            return Err(Error::Validation("column index out of range".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in sparse matrix".into()));
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    /// Build from (row, col, value) triplets; entries are sorted and must be unique.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        if entries.windows(2).any(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Validation("duplicate entry in sparse triplets".into()));
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            if r >= rows {
                return Err(Error::Validation(format!("row index {} out of range {}", r, rows)));
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row, in ascending column order.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Sparse-dense product `S · X`.
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.shape().len() != 2 || dense.shape()[0] != self.cols {
            return Err(Error::Dimension {
                op: "sparse_matmul",
                detail: format!("sparse {}x{} vs dense {:?}", self.rows, self.cols, dense.shape()),
            });
        }
        let d = dense.shape()[1];
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let o = &mut out[r * d..(r + 1) * d];
            for (&c, &v) in cols.iter().zip(vals) {
                let src = dense.row(c);
                for j in 0..d {
                    o[j] += v * src[j];
                }
            }
        }
        Ok(Tensor::from_raw(vec![self.rows, d], out))
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                entries.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, entries).expect("transpose preserves validity")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.data_mut()[r * self.cols + c] = v;
            }
        }
        t
    }

    /// Frobenius norm of the difference of two equally sized sparse matrices.
    pub fn diff_frobenius(&self, other: &SparseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                op: "diff_frobenius",
                detail: format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut acc = 0.0;
        for r in 0..self.rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let d = match (ca.get(i), cb.get(j)) {
                    (Some(&a), Some(&b)) if a == b => {
                        let d = va[i] - vb[j];
                        i += 1;
                        j += 1;
                        d
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        let d = va[i];
                        i += 1;
                        d
                    }
                    (Some(_), Some(_)) | (None, Some(_)) => {
                        let d = -vb[j];
                        j += 1;
                        d
                    }
                    (Some(_), None) => {
                        let d = va[i];
                        i += 1;
                        d
                    }
                    (None, None) => unreachable!(),
                };
                acc += d * d;
            }
        }
        Ok(acc.sqrt())
    }

    /// Largest singular value estimate by power iteration on `SᵀS`.
    pub fn spectral_norm(&self, iterations: usize) -> f64 {
        let mut x = Tensor::filled(&[self.cols, 1], 1.0 / (self.cols as f64).sqrt());
        let st = self.transpose();
        let mut norm = 0.0;
        for _ in 0..iterations {
            let y = self.matmul(&x).expect("shape fixed");
            let z = st.matmul(&y).expect("shape fixed");
            norm = z.frobenius_norm().sqrt();
            let zn = z.frobenius_norm();
            if zn == 0.0 {
                return 0.0;
            }
            x = z.scale(1.0 / zn);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_matches_example() {
        // 2x2 adjacency {(0,1):1,(1,0):1} applied to [[5],[7]] swaps the rows.
        let s = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let x = Tensor::new(vec![2, 1], vec![5.0, 7.0]).unwrap();
        let y = s.matmul(&x).unwrap();
        assert_eq!(y.data(), &[7.0, 5.0]);
    }

    #[test]
    fn spmm_equals_densified_matmul_bitwise() {
        let s = SparseMatrix::from_triplets(
            3,
            4,
            vec![(0, 1, 0.25), (0, 3, -2.0), (1, 0, 1.5), (2, 2, 0.125), (2, 3, 3.0)],
        )
        .unwrap();
        let x = Tensor::new(
            vec![4, 2],
            vec![0.3, -1.1, 2.4, 0.7, -0.2, 5.5, 1.0, 0.01],
        )
        .unwrap();
        let sparse = s.matmul(&x).unwrap();
        let dense = s.to_dense().matmul(&x).unwrap();
        assert_eq!(sparse.data(), dense.data());
    }

    #[test]
    fn invalid_row_ptr_rejected() {
        let err = SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn diff_frobenius_matches_dense() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 3.0), (1, 1, 1.0)]).unwrap();
        let sparse = a.diff_frobenius(&b).unwrap();
        let dense = a.to_dense().sub(&b.to_dense()).unwrap().frobenius_norm();
        assert!((sparse - dense).abs() < 1e-15);
    }
}
