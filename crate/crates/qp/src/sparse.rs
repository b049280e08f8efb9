//! Compressed sparse column storage.

/// A real sparse matrix in compressed sparse column form.
///
/// Row indices inside each column are strictly increasing and explicit
/// zeros are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed and entries that end up exactly zero are dropped.
    ///
    /// Panics if an index is out of bounds.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            assert!(
                i < nrows && j < ncols,
                "triplet ({i}, {j}) outside {nrows}x{ncols}"
            );
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let slot = next[j];
            rows[slot] = i;
            vals[slot] = v;
            next[j] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((counts[j]..counts[j + 1]).map(|k| (rows[k], vals[k])));
            scratch.sort_by_key(|&(i, _)| i);
            let mut k = 0;
            while k < scratch.len() {
                let row = scratch[k].0;
                let mut acc = 0.0;
                while k < scratch.len() && scratch[k].0 == row {
                    acc += scratch[k].1;
                    k += 1;
                }
                if acc != 0.0 {
                    row_idx.push(row);
                    values.push(acc);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Builds a matrix from a dense row-major slice, dropping zeros.
    pub fn from_dense_row_major(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        let triplets: Vec<_> = (0..nrows)
            .flat_map(|i| (0..ncols).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = data[i * ncols + j];
                (v != 0.0).then_some((i, j, v))
            })
            .collect();
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over `(row, value)` pairs of column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Iterates over all stored `(row, col, value)` entries, column by column.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| self.col(j).map(move |(i, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.row_idx[range.clone()].binary_search(&i) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    /// `out = selfᵀ * y`
    pub fn tr_mul_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.values[k] * y[self.row_idx[k]];
            }
            *o = acc;
        }
    }

    /// `out = S * x` where `self` holds the upper triangle of the symmetric `S`.
    pub fn sym_upper_mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(self.nrows, self.ncols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.ncols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                let v = self.values[k];
                out[i] += v * x[j];
                if i != j {
                    out[j] += v * x[i];
                }
            }
        }
    }

    /// Keeps only entries with `row <= col`.
    pub fn upper_triangle(&self) -> Self {
        let triplets: Vec<_> = self.triplets().filter(|&(i, j, _)| i <= j).collect();
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Scales rows by `left` and columns by `right`: `diag(left) * self * diag(right)`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for j in 0..self.ncols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                self.values[k] *= left[self.row_idx[k]] * right[j];
            }
        }
    }

    /// Infinity norm of every column.
    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(0.0f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Infinity norm of every row.
    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.nrows];
        for (i, _, v) in self.triplets() {
            norms[i] = norms[i].max(v.abs());
        }
        norms
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &SparseMatrix) -> Self {
        assert_eq!(self.ncols, other.ncols);
        let triplets: Vec<_> = self
            .triplets()
            .chain(other.triplets().map(|(i, j, v)| (i + self.nrows, j, v)))
            .collect();
        Self::from_triplets(self.nrows + other.nrows, self.ncols, &triplets)
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.nrows];
        for (new, &old) in rows.iter().enumerate() {
            map[old] = new;
        }
        let triplets: Vec<_> = self
            .triplets()
            .filter(|&(i, _, _)| map[i] != usize::MAX)
            .map(|(i, j, v)| (map[i], j, v))
            .collect();
        Self::from_triplets(rows.len(), self.ncols, &triplets)
    }
}
