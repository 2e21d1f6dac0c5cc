//! Compressed-row sparsity patterns.
//!
//! The pattern (row offsets, column indices) is immutable and shared through
//! an [`Arc`]; edge values live either in a plain vector
//! ([`SparseAdjacency`]) or on a tape ([`crate::tensor::SparseVar`]).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrPattern {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    // entry -> row, cached for backward passes
    entry_rows: Vec<usize>,
}

impl CsrPattern {
    /// Builds a pattern from coordinates. Entries may arrive in any order and
    /// may repeat; repeats collapse onto one slot.
    ///
    /// Returns the pattern and, for every input coordinate, the slot it was
    /// coalesced into.
    pub fn coalesce(
        n_rows: usize,
        n_cols: usize,
        coords: &[(usize, usize)],
    ) -> Result<(Self, Vec<usize>)> {
        for &(r, c) in coords {
            if r >= n_rows || c >= n_cols {
                return Err(Error::config(format!(
                    "coordinate ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| coords[k]);

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(coords.len());
        let mut entry_rows = Vec::with_capacity(coords.len());
        let mut slot = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let rc = coords[k];
            if last != Some(rc) {
                col_indices.push(rc.1);
                entry_rows.push(rc.0);
                row_offsets[rc.0 + 1] += 1;
                last = Some(rc);
            }
            slot[k] = col_indices.len() - 1;
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok((
            Self {
                n_rows,
                n_cols,
                row_offsets,
                col_indices,
                entry_rows,
            },
            slot,
        ))
    }

    /// Square pattern, convenience over [`CsrPattern::coalesce`].
    pub fn square(n: usize, coords: &[(usize, usize)]) -> Result<(Self, Vec<usize>)> {
        Self::coalesce(n, n, coords)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn entry_rows(&self) -> &[usize] {
        &self.entry_rows
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Slot of `(i, j)`, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.col_indices[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    /// Iterates `(row, col)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entry_rows
            .iter()
            .copied()
            .zip(self.col_indices.iter().copied())
    }
}

/// Weighted sparse matrix with a shared pattern and plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency<T> {
    pattern: Arc<CsrPattern>,
    values: Vec<T>,
}

impl<T: Scalar> SparseAdjacency<T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Shape {
                op: "sparse_adjacency",
                left: vec![pattern.nnz()],
                right: vec![values.len()],
            });
        }
        Ok(Self { pattern, values })
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let coords: Vec<_> = (0..n).map(|i| (i, i)).collect();
        let (pattern, _) = CsrPattern::square(n, &coords).expect("diagonal in range");
        Self {
            pattern: Arc::new(pattern),
            values: vec![T::one(); n],
        }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.pattern.n_rows()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern
            .find(i, j)
            .map_or_else(T::zero, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let (r, c) = (self.pattern.n_rows(), self.pattern.n_cols());
        let mut data = vec![T::zero(); r * c];
        for (k, (i, j)) in self.pattern.entries().enumerate() {
            data[i * c + j] = self.values[k];
        }
        Tensor::from_vec(vec![r, c], data).expect("dense shape")
    }

    /// Number of stored off-diagonal entries.
    pub fn off_diagonal_count(&self) -> usize {
        self.pattern.entries().filter(|(i, j)| i != j).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coalesce_sorts_and_merges() {
        let (p, slot) = CsrPattern::square(3, &[(2, 0), (0, 2), (0, 1), (0, 2)]).unwrap();
        assert_eq!(p.row_offsets(), &[0, 2, 2, 3]);
        assert_eq!(p.col_indices(), &[1, 2, 0]);
        assert_eq!(slot, vec![2, 1, 0, 1]);
        assert_eq!(p.find(0, 2), Some(1));
        assert_eq!(p.find(1, 1), None);
    }

    #[test]
    fn out_of_range_coordinate_rejected() {
        assert!(CsrPattern::square(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn identity_to_dense() {
        let a = SparseAdjacency::<f64>::identity(2);
        assert_eq!(a.to_dense().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.off_diagonal_count(), 0);
    }
}
