//! Row-stochastic probability tables shared by the transition and observation
//! functions.
//!
//! A table has one row per `(source, action)` pair and one column per target
//! (successor state or observation). Small tables are stored densely; above a
//! configurable size the rows are kept as sorted `(column, probability)` lists,
//! which is the natural shape for gridworld transitions with at most two
//! successors per action.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Tolerance used when checking that a row sums to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Storage {
    Dense(Vec<f64>),
    Sparse(Vec<Vec<(usize, f64)>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticTable {
    n_rows: usize,
    n_cols: usize,
    storage: Storage,
}

/// Failure reported by [`StochasticTable::from_sparse_rows`].
#[derive(Debug, Clone, PartialEq)]
pub enum RowDefect {
    Negative { row: usize, col: usize, value: f64 },
    ColumnOutOfRange { row: usize, col: usize },
    Sum { row: usize, sum: f64 },
}

impl StochasticTable {
    /// Builds a table from sparse rows, validating every row and renormalizing
    /// away float drift. Duplicate columns within a row are summed.
    pub fn from_sparse_rows(
        n_cols: usize,
        rows: Vec<Vec<(usize, f64)>>,
        dense: bool,
    ) -> Result<Self, RowDefect> {
        let n_rows = rows.len();
        let mut clean = Vec::with_capacity(n_rows);
        for (r, mut row) in rows.into_iter().enumerate() {
            for &(c, p) in &row {
                if c >= n_cols {
                    return Err(RowDefect::ColumnOutOfRange { row: r, col: c });
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(RowDefect::Negative { row: r, col: c, value: p });
                }
            }
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, p) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += p,
                    _ => merged.push((c, p)),
                }
            }
            merged.retain(|&(_, p)| p > 0.0);
            let sum: f64 = merged.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(RowDefect::Sum { row: r, sum });
            }
            for entry in &mut merged {
                entry.1 /= sum;
            }
            clean.push(merged);
        }
        let storage = if dense {
            let mut flat = vec![0.0; n_rows * n_cols];
            for (r, row) in clean.iter().enumerate() {
                for &(c, p) in row {
                    flat[r * n_cols + c] = p;
                }
            }
            Storage::Dense(flat)
        } else {
            Storage::Sparse(clean)
        };
        Ok(Self { n_rows, n_cols, storage })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn prob(&self, row: usize, col: usize) -> f64 {
        match &self.storage {
            Storage::Dense(flat) => flat[row * self.n_cols + col],
            Storage::Sparse(rows) => rows[row]
                .binary_search_by_key(&col, |&(c, _)| c)
                .map(|i| rows[row][i].1)
                .unwrap_or(0.0),
        }
    }

    /// Nonzero entries of a row in increasing column order.
    pub fn row(&self, row: usize) -> RowIter<'_> {
        match &self.storage {
            Storage::Dense(flat) => RowIter::Dense {
                slice: &flat[row * self.n_cols..(row + 1) * self.n_cols],
                next: 0,
            },
            Storage::Sparse(rows) => RowIter::Sparse(rows[row].iter()),
        }
    }

    /// Draws a column by inverse-CDF sampling over the row.
    pub fn sample<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (c, p) in self.row(row) {
            acc += p;
            last = c;
            if u < acc {
                return c;
            }
        }
        // u landed in the rounding gap above the accumulated mass
        last
    }
}

pub enum RowIter<'a> {
    Dense { slice: &'a [f64], next: usize },
    Sparse(std::slice::Iter<'a, (usize, f64)>),
}

impl Iterator for RowIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            RowIter::Dense { slice, next } => {
                while *next < slice.len() {
                    let c = *next;
                    *next += 1;
                    if slice[c] > 0.0 {
                        return Some((c, slice[c]));
                    }
                }
                None
            }
            RowIter::Sparse(it) => it.next().copied(),
        }
    }
}
