use crate::error::{Error, Result};

/// Compressed-sparse-row matrix with ascending column indices within each row.
/// Rows are patches of the dependent frame, columns patches of the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        WeightMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(col, value)` lists. Columns are sorted and
    /// duplicates summed; zero-valued entries are dropped.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let n = rows.len();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::invalid(format!("column {c} out of range {cols}")));
                }
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            // drop exact zeros, keeping the row slice contiguous
            let start = *row_ptr.last().unwrap();
            let mut keep = start;
            for k in start..col_idx.len() {
                if values[k] != 0.0 {
                    col_idx[keep] = col_idx[k];
                    values[keep] = values[k];
                    keep += 1;
                }
            }
            col_idx.truncate(keep);
            values.truncate(keep);
            row_ptr.push(col_idx.len());
        }
        Ok(WeightMatrix {
            rows: n,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Co-located weight-1 matrix.
    pub fn identity(n: usize) -> Self {
        WeightMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Raw CSR arrays. Structure (pointer monotonicity, sorted in-range
    /// columns) is checked; values are not.
    pub fn from_raw_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = WeightMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.check_structure()?;
        Ok(m)
    }

    pub(crate) fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::format(format!("CSR structure: {msg}")));
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return bad("row pointer length/start".into());
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len() || self.col_idx.len() != self.values.len() {
            return bad("nnz mismatch".into());
        }
        for r in 0..self.rows {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if a > b {
                return bad(format!("row {r} pointers decrease"));
            }
            let cols = &self.col_idx[a..b];
            if cols.iter().any(|&c| c >= self.cols) {
                return bad(format!("row {r} column out of range"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {r} columns not strictly ascending"));
            }
        }
        Ok(())
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

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// All `(row, col, value)` entries in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `y = self * x`, accumulating each row in ascending column order.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.rows) {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &w) in cols.iter().zip(vals) {
                acc += w * x[c];
            }
            *out = acc;
        }
    }
}
