//! Compressed sparse row matrices of non-negative (or signed, for intermediate
//! arithmetic) weights.
//!
//! Column indices are sorted within each row, there are no duplicate
//! coordinates and no explicitly stored zeros. Products are computed row by row
//! with a dense accumulator, so the output of every row depends only on that
//! row's inputs and the result is bitwise independent of the thread count.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Rows below this size are not worth a rayon split.
const PAR_ROWS: usize = 256;

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and resulting zeros are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Shape(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            rows[r].push((c, v));
        }
        Ok(Self::from_row_lists(n_rows, n_cols, rows))
    }

    fn from_row_lists(n_rows: usize, n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut acc = 0.0;
                while i < row.len() && row[i].0 == c {
                    acc += row[i].1;
                    i += 1;
                }
                if acc != 0.0 {
                    indices.push(c);
                    values.push(acc);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    /// Assembles a matrix from already-sorted, zero-free rows.
    fn from_sorted_rows(n_rows: usize, n_cols: usize, rows: Vec<(Vec<usize>, Vec<f64>)>) -> Self {
        let nnz = rows.iter().map(|r| r.0.len()).sum();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (c, v) in rows {
            indices.extend(c);
            values.extend(v);
            indptr.push(indices.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let rows = (0..n_rows)
            .map(|r| {
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                for c in 0..n_cols {
                    let v = dense[[r, c]];
                    if v != 0.0 {
                        cols.push(c);
                        vals.push(v);
                    }
                }
                (cols, vals)
            })
            .collect();
        Self::from_sorted_rows(n_rows, n_cols, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so each output row stays sorted
        for (r, c, v) in self.iter() {
            let slot = next[c];
            indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    fn map_rows<F>(&self, f: F) -> Vec<(Vec<usize>, Vec<f64>)>
    where
        F: Fn(usize) -> (Vec<usize>, Vec<f64>) + Sync + Send,
    {
        if self.n_rows >= PAR_ROWS {
            (0..self.n_rows).into_par_iter().map(f).collect()
        } else {
            (0..self.n_rows).map(f).collect()
        }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let rows = self.map_rows(|r| {
            let mut acc = vec![0.0; other.n_cols];
            let mut touched = Vec::new();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    if acc[c] == 0.0 {
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let mut out_c = Vec::with_capacity(touched.len());
            let mut out_v = Vec::with_capacity(touched.len());
            for c in touched {
                if acc[c] != 0.0 {
                    out_c.push(c);
                    out_v.push(acc[c]);
                }
            }
            (out_c, out_v)
        });
        Ok(Self::from_sorted_rows(self.n_rows, other.n_cols, rows))
    }

    /// Computes `(self * other) ∘ mask` without storing the unmasked product:
    /// each product row is accumulated densely and read back only at the
    /// mask's nonzero positions.
    pub fn matmul_masked(&self, other: &SparseMatrix, mask: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_cols != other.n_rows || mask.shape() != (self.n_rows, other.n_cols) {
            return Err(Error::Shape(format!(
                "masked product {}x{} * {}x{} with mask {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols, mask.n_rows, mask.n_cols
            )));
        }
        let rows = self.map_rows(|r| {
            let (mcols, mvals) = mask.row(r);
            if mcols.is_empty() {
                return (Vec::new(), Vec::new());
            }
            let mut acc = vec![0.0; other.n_cols];
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    acc[c] += a * b;
                }
            }
            let mut out_c = Vec::new();
            let mut out_v = Vec::new();
            for (&c, &m) in mcols.iter().zip(mvals) {
                let v = acc[c] * m;
                if v != 0.0 {
                    out_c.push(c);
                    out_v.push(v);
                }
            }
            (out_c, out_v)
        });
        Ok(Self::from_sorted_rows(self.n_rows, other.n_cols, rows))
    }

    /// Elementwise combination of two equally-shaped matrices by sorted merge.
    /// `f(a, b)` is applied over the union of stored positions.
    fn merge_with(
        &self,
        other: &SparseMatrix,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let rows = (0..self.n_rows)
            .map(|r| {
                let (ac, av) = self.row(r);
                let (bc, bv) = other.row(r);
                let (mut i, mut j) = (0, 0);
                let mut out_c = Vec::new();
                let mut out_v = Vec::new();
                while i < ac.len() || j < bc.len() {
                    let (c, v) = if j >= bc.len() || (i < ac.len() && ac[i] < bc[j]) {
                        i += 1;
                        (ac[i - 1], f(av[i - 1], 0.0))
                    } else if i >= ac.len() || bc[j] < ac[i] {
                        j += 1;
                        (bc[j - 1], f(0.0, bv[j - 1]))
                    } else {
                        i += 1;
                        j += 1;
                        (ac[i - 1], f(av[i - 1], bv[j - 1]))
                    };
                    if v != 0.0 {
                        out_c.push(c);
                        out_v.push(v);
                    }
                }
                (out_c, out_v)
            })
            .collect();
        Ok(Self::from_sorted_rows(self.n_rows, self.n_cols, rows))
    }

    /// Hadamard product by sorted-merge intersection.
    pub fn hadamard(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "hadamard of {}x{} and {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let rows = (0..self.n_rows)
            .map(|r| {
                let (ac, av) = self.row(r);
                let (bc, bv) = other.row(r);
                let (mut i, mut j) = (0, 0);
                let mut out_c = Vec::new();
                let mut out_v = Vec::new();
                while i < ac.len() && j < bc.len() {
                    match ac[i].cmp(&bc[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            let v = av[i] * bv[j];
                            if v != 0.0 {
                                out_c.push(ac[i]);
                                out_v.push(v);
                            }
                            i += 1;
                            j += 1;
                        }
                    }
                }
                (out_c, out_v)
            })
            .collect();
        Ok(Self::from_sorted_rows(self.n_rows, self.n_cols, rows))
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.merge_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.merge_with(other, |a, b| a - b)
    }

    fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> SparseMatrix {
        let rows = (0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let mut out_c = Vec::with_capacity(cols.len());
                let mut out_v = Vec::with_capacity(cols.len());
                for (&c, &v) in cols.iter().zip(vals) {
                    let w = f(r, c, v);
                    if w != 0.0 {
                        out_c.push(c);
                        out_v.push(w);
                    }
                }
                (out_c, out_v)
            })
            .collect();
        Self::from_sorted_rows(self.n_rows, self.n_cols, rows)
    }

    pub fn scale(&self, factor: f64) -> SparseMatrix {
        self.map_values(|_, _, v| v * factor)
    }

    /// Every stored value becomes 1 (stored values are nonzero by construction,
    /// negative entries included).
    pub fn binarize(&self) -> SparseMatrix {
        self.map_values(|_, _, _| 1.0)
    }

    pub fn clamp_min_zero(&self) -> SparseMatrix {
        self.map_values(|_, _, v| v.max(0.0))
    }

    pub fn zero_diagonal(&self) -> SparseMatrix {
        self.map_values(|r, c, v| if r == c { 0.0 } else { v })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (_, c, v) in self.iter() {
            out[c] += v;
        }
        out
    }

    /// Multiplies each row by the corresponding factor.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<SparseMatrix> {
        if factors.len() != self.n_rows {
            return Err(Error::Shape(format!(
                "{} row factors for {} rows",
                factors.len(),
                self.n_rows
            )));
        }
        Ok(self.map_values(|r, _, v| v * factors[r]))
    }

    /// `D⁻¹A`: every nonzero row sums to one, empty rows stay empty.
    pub fn row_normalize(&self) -> Result<SparseMatrix> {
        if let Some(v) = self.values.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!(
                "row normalization needs non-negative weights, found {v}"
            )));
        }
        let inv: Vec<f64> = self
            .row_sums()
            .into_iter()
            .map(|s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        self.scale_rows(&inv)
    }

    /// Indices of rows with no stored entries.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n_rows)
            .filter(|&r| self.indptr[r] == self.indptr[r + 1])
            .collect()
    }

    /// Adds `value` on the diagonal at the given rows.
    pub fn with_diagonal_at(&self, rows: &[usize], value: f64) -> Result<SparseMatrix> {
        let diag = SparseMatrix::from_triplets(
            self.n_rows,
            self.n_cols,
            rows.iter().map(|&r| (r, r, value)),
        )?;
        self.add(&diag)
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.transpose() == *self
    }

    /// Restricts to the given rows and columns (in the order given).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_pos = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            col_pos[c] = k;
        }
        let lists = rows
            .iter()
            .map(|&r| {
                let (rc, rv) = self.row(r);
                rc.iter()
                    .zip(rv)
                    .filter(|(c, _)| col_pos[**c] != usize::MAX)
                    .map(|(c, v)| (col_pos[*c], *v))
                    .collect()
            })
            .collect();
        SparseMatrix::from_row_lists(rows.len(), cols.len(), lists)
    }

    /// Sparse-times-dense product `self * dense`.
    pub fn mul_dense(&self, dense: &Array2<f64>) -> Result<Array2<f64>> {
        if self.n_cols != dense.nrows() {
            return Err(Error::Shape(format!(
                "cannot multiply sparse {}x{} by dense {}x{}",
                self.n_rows,
                self.n_cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let d = dense.ncols();
        let mut out = Array2::zeros((self.n_rows, d));
        let fill = |r: usize, mut out_row: ndarray::ArrayViewMut1<f64>| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(c));
            }
        };
        if self.n_rows >= PAR_ROWS {
            out.axis_iter_mut(ndarray::Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(r, row)| fill(r, row));
        } else {
            for (r, row) in out.axis_iter_mut(ndarray::Axis(0)).enumerate() {
                fill(r, row);
            }
        }
        Ok(out)
    }
}
