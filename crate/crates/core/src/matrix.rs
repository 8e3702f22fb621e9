//! Minimal sparse matrix support for model data and solver internals.
//!
//! Row-major adjacency is the storage of record; column views are built on
//! demand where a solver needs them. Sizes here are desk scale, so clarity
//! wins over cache tricks.

use serde::{Deserialize, Serialize};

/// Sparse matrix stored row-wise as `(col, value)` pairs.
///
/// Entries within a row are kept sorted by column and deduplicated; zeros are
/// dropped on construction so iteration order is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMat {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMat {
    /// Empty matrix of the given shape.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMat {
            nrows,
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    /// Builds from triplets, summing duplicates and dropping exact zeros.
    ///
    /// Returns `None` if any index is out of range.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Option<Self> {
        let mut m = SparseMat::zeros(nrows, ncols);
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return None;
            }
            m.rows[r].push((c, v));
        }
        for row in &mut m.rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|&(_, v)| v != 0.0);
            *row = merged;
        }
        Some(m)
    }

    /// Builds from a dense row-major slice of slices.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        SparseMat::from_triplets(nrows, ncols, &triplets).expect("dense indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Sorted `(col, value)` entries of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// All entries as triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out.push((i, c, v));
            }
        }
        out
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in mul_vec");
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    /// y = Aᵀ x (x has one entry per row).
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "dimension mismatch in mul_transpose_vec");
        let mut out = vec![0.0; self.ncols];
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[c] += v * x[i];
            }
        }
        out
    }

    /// Inner product of row `i` with `x`.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c]).sum()
    }

    /// Matrix with every entry negated.
    pub fn negated(&self) -> SparseMat {
        let mut m = self.clone();
        for row in &mut m.rows {
            for e in row.iter_mut() {
                e.1 = -e.1;
            }
        }
        m
    }

    /// Column-wise copy: per column, sorted `(row, value)` entries.
    pub fn to_columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.ncols];
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                cols[c].push((i, v));
            }
        }
        cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_and_drop_zeros() {
        let m = SparseMat::from_triplets(2, 3, &[(0, 1, 2.0), (0, 1, 3.0), (1, 2, 0.0)]).unwrap();
        assert_eq!(m.row(0), &[(1, 5.0)]);
        assert!(m.row(1).is_empty());
        assert_eq!(m.triplets(), vec![(0, 1, 5.0)]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(SparseMat::from_triplets(1, 1, &[(0, 1, 1.0)]).is_none());
        assert!(SparseMat::from_triplets(1, 1, &[(1, 0, 1.0)]).is_none());
    }

    #[test]
    fn products_match_dense() {
        let m = SparseMat::from_dense(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, -1.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0, -1.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 1.0, 1.0]), vec![4.0, 5.0]);
        assert_eq!(m.row_dot(1, &[2.0, 0.5]), 8.0);
    }
}
