use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Rows at or above this count use a parallel matrix-vector product. Each
/// row is still summed sequentially, so results do not depend on threads.
const PAR_ROWS: usize = 32_768;

/// Compressed sparse row matrix intended to hold symmetric positive
/// (semi-)definite operators. When assembled on a grid, rows are grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpdMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    grid: Option<Grid>,
}

impl SparseSpdMatrix {
    pub(crate) fn from_csr(
        n: usize,
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
        grid: Option<Grid>,
    ) -> SparseSpdMatrix {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(cols.len(), vals.len());
        SparseSpdMatrix {
            n,
            row_ptr,
            cols,
            vals,
            grid,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseSpdMatrix> {
        if triplets.iter().any(|&(i, j, _)| i >= n || j >= n) {
            return Err(Error::invalid("triplet index out of range"));
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(j as u32);
            vals.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseSpdMatrix::from_csr(n, row_ptr, cols, vals, None))
    }

    pub fn identity(n: usize) -> SparseSpdMatrix {
        SparseSpdMatrix::from_csr(
            n,
            (0..=n).collect(),
            (0..n as u32).collect(),
            vec![1.0; n],
            None,
        )
    }

    pub fn diagonal_matrix(diag: &[f64], grid: Option<Grid>) -> SparseSpdMatrix {
        let n = diag.len();
        SparseSpdMatrix::from_csr(
            n,
            (0..=n).collect(),
            (0..n as u32).collect(),
            diag.to_vec(),
            grid,
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&(j as u32)) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let mut s = 0.0;
        for k in a..b {
            s += self.vals[k] * x[self.cols[k] as usize];
        }
        s
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        if self.n >= PAR_ROWS {
            y.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
                let base = c * 4096;
                for (k, yi) in chunk.iter_mut().enumerate() {
                    *yi = self.row_dot(base + k, x);
                }
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.apply(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Returns `A + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseSpdMatrix {
        assert_eq!(d.len(), self.n);
        let mut out = self.clone();
        let mut extra = Vec::new();
        for (i, &di) in d.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            let (a, b) = (out.row_ptr[i], out.row_ptr[i + 1]);
            match out.cols[a..b].binary_search(&(i as u32)) {
                Ok(k) => out.vals[a + k] += di,
                Err(_) => extra.push((i, i, di)),
            }
        }
        if extra.is_empty() {
            return out;
        }
        let mut triplets = out.triplets();
        triplets.extend(extra);
        let mut merged = SparseSpdMatrix::from_triplets(self.n, &triplets).expect("indices valid");
        merged.grid = self.grid.clone();
        merged
    }

    pub fn scaled(&self, c: f64) -> SparseSpdMatrix {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Principal submatrix on `rows`, renumbered by `pos` (`u32::MAX` marks
    /// rows that are dropped).
    pub(crate) fn principal_submatrix(&self, rows: &[usize], pos: &[u32]) -> SparseSpdMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &r in rows {
            for (c, v) in self.row(r) {
                let p = pos[c];
                if p != u32::MAX {
                    cols.push(p);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseSpdMatrix::from_csr(rows.len(), row_ptr, cols, vals, None)
    }

    /// Sorted `(row, col, value)` entries.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// Writes one `row col value` line per stored entry, sorted.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let w = self.get(j, i);
                let scale = v.abs().max(w.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((v - w).abs() / scale);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseSpdMatrix::from_triplets(
            3,
            &[(2, 2, 1.0), (0, 0, 2.0), (0, 1, -1.0), (0, 0, 1.0), (1, 0, -1.0)],
        )
        .unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(
            m.triplets(),
            vec![(0, 0, 3.0), (0, 1, -1.0), (1, 0, -1.0), (2, 2, 1.0)]
        );
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("0 0 3.0"));
    }

    #[test]
    fn add_diagonal_inserts_missing_entries() {
        let m = SparseSpdMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let d = m.add_diagonal(&[2.0, 3.0]);
        assert_eq!(d.diagonal(), vec![2.0, 3.0]);
        assert_eq!(d.get(0, 1), 1.0);
    }
}
