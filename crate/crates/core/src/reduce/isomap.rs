use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::mds::classical_rows;
use super::{check_k, knn_graph, require_connected, DistanceMatrix, Reduction2D, ReductionMethod};
use crate::embed::EmbeddingSet;
use crate::error::Result;

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Dist(f64);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest-path lengths from `source` over `adj` weighted by `dist`.
fn dijkstra(adj: &[Vec<usize>], dist: &[Vec<f64>], source: usize) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; adj.len()];
    best[source] = 0.0;
    let mut heap = BinaryHeap::from([Reverse((Dist(0.0), source))]);
    while let Some(Reverse((Dist(d), v))) = heap.pop() {
        if d > best[v] {
            continue;
        }
        for &u in &adj[v] {
            let nd = d + dist[v][u];
            if nd < best[u] {
                best[u] = nd;
                heap.push(Reverse((Dist(nd), u)));
            }
        }
    }
    best
}

/// Classical MDS on geodesic distances through the symmetrised
/// `k_neighbors`-NN graph of `vectors`.
pub fn isomap(vectors: &EmbeddingSet, k_neighbors: usize) -> Result<Reduction2D> {
    let euclid = DistanceMatrix::euclidean(vectors);
    let n = euclid.len();
    check_k(n, k_neighbors)?;
    let adj = knn_graph(euclid.entries(), k_neighbors);
    require_connected(&adj)?;
    let mut geo: Vec<Vec<f64>> = (0..n).map(|s| dijkstra(&adj, euclid.entries(), s)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = geo[i][j].min(geo[j][i]);
            geo[i][j] = m;
            geo[j][i] = m;
        }
    }
    let (rows, mut diag) = classical_rows(&geo)?;
    diag.insert("k_neighbors".into(), k_neighbors as f64);
    Reduction2D::from_rows(ReductionMethod::Isomap, euclid.ids(), &rows, diag)
}
