use super::Tensor;

/// Constant compressed-sparse-row matrix used for pooling and neighbour means.
///
/// Entries inside a row are kept sorted by column so products are independent
/// of the order in which entries were supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` entries. Duplicate columns in a
    /// row are summed.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for entries in rows {
            let mut sorted = entries.clone();
            sorted.sort_by_key(|&(c, _)| c);
            for (c, v) in sorted {
                assert!(c < cols, "column {c} out of range {cols}");
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Row-normalised indicator matrix: row `i` averages the columns in `sets[i]`.
    /// Empty rows stay empty (their product is the zero vector).
    pub fn row_means(cols: usize, sets: &[Vec<usize>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = sets
            .iter()
            .map(|s| {
                let w = 1.0 / s.len().max(1) as f64;
                s.iter().map(|&c| (c, w)).collect()
            })
            .collect();
        Self::from_rows(cols, &rows)
    }

    /// Matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &r in rows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            col_idx.extend_from_slice(&self.col_idx[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
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

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · x`
    pub fn matmul(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(self.cols, x.rows());
        let m = x.cols();
        let mut out = Tensor::zeros(self.rows, m);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for (c, v) in self.row_entries(r) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`
    pub fn matmul_transposed(&self, g: &Tensor) -> Tensor {
        debug_assert_eq!(self.rows, g.rows());
        let m = g.cols();
        let mut out = Tensor::zeros(self.cols, m);
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row_entries(r) {
                for (o, &gv) in out.row_mut(c).iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
        out
    }
}
