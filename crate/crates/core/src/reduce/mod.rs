//! Two-dimensional reductions of embedding sets.
//!
//! [`mds_classical`], [`isomap`] and [`spectral_embedding`] are
//! deterministic and share the Jacobi eigensolver in [`symmetric_eigen`];
//! [`tsne`] is the exact O(n²) algorithm and is deterministic for a
//! given seed.

mod eigen;
mod isomap;
mod mds;
mod spectral;
mod tsne;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::graph::{NodeId, PropertyGraph};

pub use eigen::{canonical_sign, inf_norm, symmetric_eigen, Eigen};
pub use isomap::isomap;
pub use mds::{mds, mds_classical};
pub use spectral::{spectral_embedding, spectral_from_adjacency, SpectralResult};
pub use tsne::{tsne, TsneParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMethod {
    Tsne,
    Isomap,
    Mds,
    Spectral,
}

impl ReductionMethod {
    pub const ALL: [ReductionMethod; 4] = [
        ReductionMethod::Tsne,
        ReductionMethod::Isomap,
        ReductionMethod::Mds,
        ReductionMethod::Spectral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReductionMethod::Tsne => "tsne",
            ReductionMethod::Isomap => "isomap",
            ReductionMethod::Mds => "mds",
            ReductionMethod::Spectral => "spectral",
        }
    }
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReductionMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown reduction method `{s}`")))
    }
}

/// Symmetric, zero-diagonal, nonnegative distances between `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<NodeId>,
    entries: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// Rows are identified as `0..n`.
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..entries.len() as NodeId).collect();
        Self::with_ids(ids, entries)
    }

    pub fn with_ids(ids: Vec<NodeId>, entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if ids.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("distance matrix must be {n}×{n} with {n} ids")));
        }
        let scale = entries.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            if entries[i][i] != 0.0 {
                return Err(Error::Validation(format!("distance diagonal entry {i} is {}", entries[i][i])));
            }
            for j in 0..n {
                let d = entries[i][j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::Validation(format!("distance ({i}, {j}) is {d}")));
                }
                let dev = (d - entries[j][i]).abs();
                if dev > 1e-9 * scale {
                    return Err(Error::Symmetry { max_deviation: dev });
                }
            }
        }
        Ok(Self { ids, entries })
    }

    /// Euclidean distances between the vectors of `set`, in id order.
    pub fn euclidean(set: &EmbeddingSet) -> Self {
        let (ids, points) = points_of(set);
        let entries = pairwise(&points, |a, b| squared(a, b).sqrt());
        Self { ids, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }
}

/// A 2-D layout keyed by node id, with method-specific diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction2D {
    pub method: ReductionMethod,
    pub coordinates: BTreeMap<NodeId, [f64; 2]>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Reduction2D {
    fn from_rows(method: ReductionMethod, ids: &[NodeId], rows: &[[f64; 2]], diagnostics: BTreeMap<String, f64>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| !r[0].is_finite() || !r[1].is_finite()) {
            return Err(Error::Validation(format!("{method} produced a non-finite coordinate for node {}", ids[i])));
        }
        Ok(Self {
            method,
            coordinates: ids.iter().copied().zip(rows.iter().copied()).collect(),
            diagnostics,
        })
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    /// CSV with header `node_id,label,class,x,y`. `classes` defaults to
    /// the node label for ids it does not mention.
    pub fn to_csv(&self, graph: &PropertyGraph, classes: &BTreeMap<NodeId, String>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["node_id", "label", "class", "x", "y"])?;
        for (&id, &[x, y]) in &self.coordinates {
            let label = graph.node(id)?.label.clone();
            let class = classes.get(&id).cloned().unwrap_or_else(|| label.clone());
            w.write_record([id.to_string(), label, class, x.to_string(), y.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn default_k() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub method: ReductionMethod,
    /// Neighbour count for Isomap and spectral embedding.
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default)]
    pub tsne: TsneParams,
}

impl ReduceConfig {
    pub fn new(method: ReductionMethod) -> Self {
        Self {
            method,
            k_neighbors: default_k(),
            tsne: TsneParams::default(),
        }
    }
}

pub fn reduce(vectors: &EmbeddingSet, cfg: &ReduceConfig) -> Result<Reduction2D> {
    match cfg.method {
        ReductionMethod::Mds => mds(vectors),
        ReductionMethod::Isomap => isomap(vectors, cfg.k_neighbors),
        ReductionMethod::Spectral => spectral_embedding(vectors, cfg.k_neighbors),
        ReductionMethod::Tsne => tsne(vectors, &cfg.tsne),
    }
}

fn points_of(set: &EmbeddingSet) -> (Vec<NodeId>, Vec<&[f64]>) {
    set.iter().unzip()
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise(points: &[&[f64]], f: impl Fn(&[f64], &[f64]) -> f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = f(points[i], points[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

/// Symmetrised k-nearest-neighbour graph under `dist` (ties by index).
/// Lists are ascending.
fn knn_graph(dist: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Connected component sizes, largest first.
fn component_sizes(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

fn require_connected(adj: &[Vec<usize>]) -> Result<()> {
    let sizes = component_sizes(adj);
    if sizes.len() > 1 {
        return Err(Error::Connectivity { components: sizes });
    }
    Ok(())
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("k_neighbors must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::Size(format!("{n} points cannot have {k} neighbours each")));
    }
    Ok(())
}
