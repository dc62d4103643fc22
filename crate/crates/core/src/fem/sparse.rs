use std::fmt::Write as _;
use std::path::Path;

use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)))
    }

    /// Builds a matrix from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = entries.into_iter().collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < n_rows && c < n_cols, "entry ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.indptr[r]..self.indptr[r + 1];
        match self.indices[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y^T A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, self.triplets().map(|(r, c, v)| (c, r, v)))
    }

    pub fn scale(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `sum_k alpha_k A_k` over matrices of equal shape.
    pub fn linear_combination(terms: &[(&CsrMatrix, f64)]) -> Result<CsrMatrix> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| Error::Precondition("empty linear combination".into()))?;
        for (m, _) in terms {
            if m.n_rows != first.n_rows || m.n_cols != first.n_cols {
                return Err(Error::DimensionMismatch {
                    expected: first.n_rows,
                    actual: m.n_rows,
                });
            }
        }
        Ok(CsrMatrix::from_triplets(
            first.n_rows,
            first.n_cols,
            terms
                .iter()
                .flat_map(|(m, a)| m.triplets().map(move |(r, c, v)| (r, c, a * v))),
        ))
    }

    /// Sums rows and columns into a smaller index space; `None` drops the entry.
    pub fn fold(&self, map: &[Option<usize>], n: usize) -> CsrMatrix {
        assert_eq!(map.len(), self.n_rows);
        assert_eq!(map.len(), self.n_cols);
        CsrMatrix::from_triplets(
            n,
            n,
            self.triplets()
                .filter_map(|(r, c, v)| Some((map[r]?, map[c]?, v))),
        )
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &trips)
            .map_err(|e| Error::SingularMatrix(format!("cannot build sparse matrix: {e:?}")))
    }

    /// Coordinate text dump, one `row col value` per line.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for (r, c, v) in self.triplets() {
            let _ = writeln!(out, "{r} {c} {v}");
        }
        out
    }

    pub fn write_coordinate(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_coordinate_text())?;
        Ok(())
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn fold_sums_identified_rows() {
        let a = CsrMatrix::from_triplets(3, 3, [(0, 0, 1.0), (2, 2, 1.0), (0, 2, 5.0), (1, 1, 7.0)]);
        let f = a.fold(&[Some(0), None, Some(0)], 1);
        assert_eq!(f.get(0, 0), 7.0);
    }

    #[test]
    fn transpose_and_asymmetry() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, -1.0)]);
        assert_eq!(a.transpose().get(0, 1), -1.0);
        assert!((a.asymmetry() - 2.0).abs() < 1e-15);
        assert_eq!(CsrMatrix::identity(3).asymmetry(), 0.0);
    }
}
