//! Compressed sparse row matrices.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// A CSR matrix. Column indices inside each row are strictly increasing,
/// which fixes the accumulation order of every product.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn try_new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::InvalidSparse(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(Error::InvalidSparse(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if values.len() != col_indices.len() {
            return Err(Error::InvalidSparse(format!(
                "{} values for {} column indices",
                values.len(),
                col_indices.len()
            )));
        }
        for i in 0..rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::InvalidSparse(format!(
                    "row_offsets decreases at row {i}"
                )));
            }
            let row = &col_indices[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSparse(format!(
                    "column indices of row {i} are not strictly increasing"
                )));
            }
            if let Some(&c) = row.last() {
                if c >= cols {
                    return Err(Error::IndexOutOfRange {
                        what: "columns",
                        index: c,
                        len: cols,
                    });
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; repeated
    /// coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "rows",
                    index: r,
                    len: rows,
                });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange {
                    what: "columns",
                    index: c,
                    len: cols,
                });
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let triplets = (0..m.rows()).flat_map(|i| {
            (0..m.cols()).filter_map(move |j| {
                let v = m.get(i, j);
                (v != 0.0).then_some((i, j, v))
            })
        });
        Self::from_triplets(m.rows(), m.cols(), triplets).expect("indices in range")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.rows).flat_map(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (j, i, v))
        });
        Self::from_triplets(self.cols, self.rows, triplets).expect("indices in range")
    }

    /// True when the pattern and values are exactly symmetric.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Sparse-dense product `self · x`. Each output row accumulates its
    /// terms in ascending column order.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != x.rows() {
            return Err(Error::Shape(format!(
                "spmm: {}x{} sparse times {}x{} dense",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, x.cols());
        self.spmm_into(x, &mut out);
        Ok(out)
    }

    /// Accumulates `self · x` into `out` (`out += self · x`).
    pub fn spmm_acc(&self, x: &DenseMatrix, out: &mut DenseMatrix) {
        assert_eq!(self.cols, x.rows(), "spmm_acc: inner dimensions differ");
        assert_eq!(out.shape(), (self.rows, x.cols()), "spmm_acc: output shape");
        self.spmm_into(x, out);
    }

    fn spmm_into(&self, x: &DenseMatrix, out: &mut DenseMatrix) {
        let width = x.cols();
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let dst = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let src = x.row(j);
                for c in 0..width {
                    dst[c] += v * src[c];
                }
            }
        }
    }

    /// The sub-matrix `B[i][j] = self[row_ids[i]][col_ids[j]]`.
    pub fn extract_block(&self, row_ids: &[usize], col_ids: &[usize]) -> Result<SparseMatrix> {
        let mut col_map = vec![usize::MAX; self.cols];
        for (local, &c) in col_ids.iter().enumerate() {
            if c >= self.cols {
                return Err(Error::IndexOutOfRange {
                    what: "block columns",
                    index: c,
                    len: self.cols,
                });
            }
            if col_map[c] != usize::MAX {
                return Err(Error::DuplicateIndex {
                    what: "block columns",
                    index: c,
                });
            }
            col_map[c] = local;
        }
        let mut seen_rows = vec![false; self.rows];
        let mut row_offsets = Vec::with_capacity(row_ids.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for &r in row_ids {
            if r >= self.rows {
                return Err(Error::IndexOutOfRange {
                    what: "block rows",
                    index: r,
                    len: self.rows,
                });
            }
            if std::mem::replace(&mut seen_rows[r], true) {
                return Err(Error::DuplicateIndex {
                    what: "block rows",
                    index: r,
                });
            }
            scratch.clear();
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let local = col_map[c];
                if local != usize::MAX {
                    scratch.push((local, v));
                }
            }
            scratch.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            rows: row_ids.len(),
            cols: col_ids.len(),
            row_offsets,
            col_indices,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::relative_error;

    #[test]
    fn rejects_unsorted_columns() {
        let err = SparseMatrix::try_new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::InvalidSparse(_))));
    }

    #[test]
    fn rejects_column_out_of_range() {
        let err = SparseMatrix::try_new(1, 2, vec![0, 1], vec![2], vec![1.0]);
        assert!(matches!(err, Err(Error::IndexOutOfRange { index: 2, .. })));
    }

    #[test]
    fn identity_times_x_is_x() {
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i as f64) - 0.5 * j as f64);
        assert_eq!(SparseMatrix::identity(4).spmm(&x).unwrap(), x);
    }

    #[test]
    fn zero_times_x_is_zero() {
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        assert_eq!(
            SparseMatrix::zeros(2, 4).spmm(&x).unwrap(),
            DenseMatrix::zeros(2, 3)
        );
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let x = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            SparseMatrix::identity(4).spmm(&x),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn extract_block_reports_offending_index() {
        let m = SparseMatrix::identity(3);
        assert!(matches!(
            m.extract_block(&[0, 5], &[0]),
            Err(Error::IndexOutOfRange { index: 5, .. })
        ));
        assert!(matches!(
            m.extract_block(&[0], &[1, 1]),
            Err(Error::DuplicateIndex { index: 1, .. })
        ));
    }

    #[test]
    fn extract_block_permutes_columns() {
        let d = DenseMatrix::from_fn(3, 3, |i, j| (3 * i + j + 1) as f64);
        let m = SparseMatrix::from_dense(&d);
        let b = m.extract_block(&[2, 0], &[1, 0]).unwrap();
        let expect = DenseMatrix::from_rows(&[vec![8.0, 7.0], vec![2.0, 1.0]]).unwrap();
        assert!(relative_error(&b.to_dense(), &expect) == 0.0);
    }
}
