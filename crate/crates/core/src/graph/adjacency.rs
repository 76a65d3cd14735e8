use ndarray::{Array2, ArrayView2};

use super::Graph;
use crate::gnn::Arch;

/// Compressed sparse row matrix, square, used as the aggregation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists; columns must be sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (j, v) in row {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `self · x`
    pub fn matmul(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, x.ncols()));
        for i in 0..self.n {
            let mut out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                out_row.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    /// `selfᵀ · x`
    pub fn transpose_matmul(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, x.ncols()));
        for i in 0..self.n {
            let x_row = x.row(i);
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &x_row);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }
}

/// Aggregation operator for `arch`.
///
/// * GCN: `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the degree matrix of `A + I`.
/// * GraphSAGE: row-normalised `A` (neighbour mean, no self-loop). Isolated
///   nodes get an empty row.
/// * GAT: the support pattern of `A + I` with unit values; attention
///   coefficients are computed inside the layer.
pub fn normalize_adjacency(g: &Graph, arch: Arch) -> SparseMatrix {
    let neighbors = g.neighbors();
    match arch {
        Arch::Gcn => {
            let deg: Vec<usize> = neighbors.iter().map(|nb| nb.len() + 1).collect();
            let rows = neighbors
                .iter()
                .enumerate()
                .map(|(i, nb)| {
                    with_self(i, nb)
                        .map(|j| (j, 1.0 / ((deg[i] * deg[j]) as f64).sqrt()))
                        .collect()
                })
                .collect();
            SparseMatrix::from_rows(rows)
        }
        Arch::Sage => {
            let rows = neighbors
                .iter()
                .map(|nb| {
                    let w = 1.0 / nb.len().max(1) as f64;
                    nb.iter().map(|&j| (j, w)).collect()
                })
                .collect();
            SparseMatrix::from_rows(rows)
        }
        Arch::Gat => {
            let rows = neighbors
                .iter()
                .enumerate()
                .map(|(i, nb)| with_self(i, nb).map(|j| (j, 1.0)).collect())
                .collect();
            SparseMatrix::from_rows(rows)
        }
    }
}

/// Sorted neighbour list with `i` merged in.
fn with_self<'a>(i: usize, nb: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    let split = nb.partition_point(|&j| j < i);
    nb[..split]
        .iter()
        .copied()
        .chain(std::iter::once(i))
        .chain(nb[split..].iter().copied())
}
