use std::collections::BTreeMap;

use super::eigen::symmetric_eigen;
use super::{check_k, knn_graph, require_connected, DistanceMatrix, Reduction2D, ReductionMethod};
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    /// Rows scaled by `D^{-1/2}`.
    pub rows: Vec<[f64; 2]>,
    /// The three smallest Laplacian eigenvalues, ascending.
    pub smallest: [f64; 3],
    /// Eigenvectors of the 2nd and 3rd smallest eigenvalues, unscaled.
    pub vectors: [Vec<f64>; 2],
    /// Eigenvector of the smallest eigenvalue.
    pub null_vector: Vec<f64>,
}

/// Embedding from the symmetric normalised Laplacian
/// `L = I - D^{-1/2} A D^{-1/2}` of a binary, symmetric adjacency.
pub fn spectral_from_adjacency(adj: &[Vec<usize>]) -> Result<SpectralResult> {
    let n = adj.len();
    if n < 3 {
        return Err(Error::Size(format!("spectral embedding needs at least 3 nodes, got {n}")));
    }
    require_connected(adj)?;
    let inv_sqrt: Vec<f64> = adj.iter().map(|l| 1.0 / (l.len() as f64).sqrt()).collect();
    let mut lap = vec![vec![0.0; n]; n];
    for (i, list) in adj.iter().enumerate() {
        lap[i][i] = 1.0;
        for &j in list {
            if j != i {
                lap[i][j] = -inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    let e = symmetric_eigen(&lap)?;
    let at = |k: usize| n - 1 - k;
    let rows = (0..n)
        .map(|i| [e.vectors[at(1)][i] * inv_sqrt[i], e.vectors[at(2)][i] * inv_sqrt[i]])
        .collect();
    Ok(SpectralResult {
        rows,
        smallest: [e.values[at(0)], e.values[at(1)], e.values[at(2)]],
        vectors: [e.vectors[at(1)].clone(), e.vectors[at(2)].clone()],
        null_vector: e.vectors[at(0)].clone(),
    })
}

/// Spectral embedding of the symmetrised `k_neighbors`-NN graph of `vectors`.
pub fn spectral_embedding(vectors: &EmbeddingSet, k_neighbors: usize) -> Result<Reduction2D> {
    let euclid = DistanceMatrix::euclidean(vectors);
    check_k(euclid.len(), k_neighbors)?;
    let adj = knn_graph(euclid.entries(), k_neighbors);
    let s = spectral_from_adjacency(&adj)?;
    let diag = BTreeMap::from([
        ("lambda_0".into(), s.smallest[0]),
        ("lambda_1".into(), s.smallest[1]),
        ("lambda_2".into(), s.smallest[2]),
        ("k_neighbors".into(), k_neighbors as f64),
    ]);
    Reduction2D::from_rows(ReductionMethod::Spectral, euclid.ids(), &s.rows, diag)
}
