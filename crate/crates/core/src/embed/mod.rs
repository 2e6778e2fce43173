//! Node embeddings over a [`ProjectedGraph`].
//!
//! Three methods are provided: [`node2vec`] (biased second-order walks plus
//! skip-gram with negative sampling), [`fastrp`] (sparse random projection
//! with iterated neighbour averaging) and [`graphsage`] (mean-aggregator
//! GraphSAGE trained with an unsupervised co-occurrence loss). Results are
//! [`EmbeddingSet`]s that can be written back onto the graph as
//! `{method}_embedding` node properties.

mod fastrp;
mod graphsage;
mod node2vec;
mod sampling;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, PropertyGraph, PropertyValue};
use crate::projection::ProjectedGraph;

pub use fastrp::{base_vector, fastrp};
pub use graphsage::{build_features, graphsage, graphsage_with_trace, Matrix, SageModel, SageTrace};
pub use node2vec::{node2vec, node2vec_with_stats, random_walks, window_pair_count, Node2VecStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Node2vec,
    Graphsage,
    Fastrp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Node2vec, Method::Graphsage, Method::Fastrp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Node2vec => "node2vec",
            Method::Graphsage => "graphsage",
            Method::Fastrp => "fastrp",
        }
    }

    /// Node property the method's vectors are stored under.
    pub fn property_name(self) -> &'static str {
        match self {
            Method::Node2vec => "node2vec_embedding",
            Method::Graphsage => "graphsage_embedding",
            Method::Fastrp => "fastRP_embedding",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown embedding method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Node2VecParams {
    /// Return parameter `p`.
    pub return_factor: f64,
    /// In-out parameter `q`.
    pub in_out_factor: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
}

impl Default for Node2VecParams {
    fn default() -> Self {
        Self {
            return_factor: 1.0,
            in_out_factor: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 10,
            negative_samples: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 0.0001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastRpParams {
    pub iteration_weights: Vec<f64>,
    /// Base vectors are scaled by `degree^normalization_strength`.
    pub normalization_strength: f64,
}

impl Default for FastRpParams {
    fn default() -> Self {
        Self {
            iteration_weights: vec![0.0, 1.0, 1.0],
            normalization_strength: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSageParams {
    pub layers: usize,
    /// Width of hidden layers; the output dimension when unset.
    pub hidden_dimension: Option<usize>,
    /// Per-layer neighbour caps; full neighbourhoods when unset.
    pub sample_sizes: Option<Vec<usize>>,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Length of the short walks that define co-occurring pairs.
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Use `[ln(1 + degree)]` for labels without numeric properties.
    pub degree_fallback: bool,
}

impl Default for GraphSageParams {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dimension: None,
            sample_sizes: None,
            negative_samples: 5,
            epochs: 30,
            learning_rate: 0.01,
            walk_length: 5,
            walks_per_node: 2,
            degree_fallback: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub method: Method,
    pub dimension: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Multi-threaded kernels. FastRP stays bit-identical; the other
    /// methods currently always run sequentially.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub node2vec: Node2VecParams,
    #[serde(default)]
    pub fastrp: FastRpParams,
    #[serde(default)]
    pub graphsage: GraphSageParams,
}

fn default_seed() -> u64 {
    42
}

impl EmbeddingConfig {
    pub fn new(method: Method, dimension: usize, seed: u64) -> Self {
        Self {
            method,
            dimension,
            seed,
            parallel: false,
            node2vec: Node2VecParams::default(),
            fastrp: FastRpParams::default(),
            graphsage: GraphSageParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dimension < 2 {
            return bad(format!("dimension must be at least 2, got {}", self.dimension));
        }
        match self.method {
            Method::Node2vec => {
                let p = &self.node2vec;
                for (name, v) in [("return_factor", p.return_factor), ("in_out_factor", p.in_out_factor)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return bad(format!("node2vec {name} must be > 0, got {v}"));
                    }
                }
                if p.walk_length < 2 {
                    return bad("node2vec walk_length must be at least 2".into());
                }
                for (name, v) in [
                    ("walks_per_node", p.walks_per_node),
                    ("window", p.window),
                    ("negative_samples", p.negative_samples),
                    ("epochs", p.epochs),
                ] {
                    if v < 1 {
                        return bad(format!("node2vec {name} must be at least 1"));
                    }
                }
                if !(p.learning_rate > 0.0) || p.min_learning_rate < 0.0 {
                    return bad("node2vec learning rates must be positive".into());
                }
            }
            Method::Fastrp => {
                let w = &self.fastrp.iteration_weights;
                if w.is_empty() {
                    return bad("fastrp iteration_weights must not be empty".into());
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return bad("fastrp iteration_weights must be finite".into());
                }
                if w.iter().all(|&x| x == 0.0) {
                    return bad("fastrp iteration_weights are all zero".into());
                }
                if !self.fastrp.normalization_strength.is_finite() {
                    return bad("fastrp normalization_strength must be finite".into());
                }
            }
            Method::Graphsage => {
                let p = &self.graphsage;
                for (name, v) in [
                    ("layers", p.layers),
                    ("negative_samples", p.negative_samples),
                    ("epochs", p.epochs),
                    ("walks_per_node", p.walks_per_node),
                ] {
                    if v < 1 {
                        return bad(format!("graphsage {name} must be at least 1"));
                    }
                }
                if p.walk_length < 2 {
                    return bad("graphsage walk_length must be at least 2".into());
                }
                if p.hidden_dimension == Some(0) {
                    return bad("graphsage hidden_dimension must be positive".into());
                }
                if let Some(s) = &p.sample_sizes {
                    if s.len() != p.layers || s.contains(&0) {
                        return bad("graphsage sample_sizes needs one positive cap per layer".into());
                    }
                }
                if !(p.learning_rate > 0.0) {
                    return bad("graphsage learning_rate must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub projection: String,
    pub method: Method,
    pub dimension: usize,
    pub seed: u64,
    /// False when a run used a kernel whose output depends on scheduling.
    pub deterministic: bool,
}

impl Provenance {
    /// `{projection}_{method}_{dimension}`; used for artifact names.
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.projection, self.method, self.dimension)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    provenance: Provenance,
    vectors: BTreeMap<NodeId, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(provenance: Provenance, vectors: BTreeMap<NodeId, Vec<f64>>) -> Result<Self> {
        for (id, v) in &vectors {
            if v.len() != provenance.dimension {
                return Err(Error::Dimension(format!(
                    "node {id} has a {}-vector, expected {}",
                    v.len(),
                    provenance.dimension
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("node {id} has a non-finite entry")));
            }
        }
        Ok(Self { provenance, vectors })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn id(&self) -> String {
        self.provenance.id()
    }

    pub fn dimension(&self) -> usize {
        self.provenance.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.vectors.get(&node).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.vectors.iter().map(|(&id, v)| (id, v.as_slice()))
    }

    pub fn vectors(&self) -> &BTreeMap<NodeId, Vec<f64>> {
        &self.vectors
    }

    /// Keeps only the nodes for which `keep` returns true.
    pub fn filtered(&self, mut keep: impl FnMut(NodeId) -> bool) -> EmbeddingSet {
        EmbeddingSet {
            provenance: self.provenance.clone(),
            vectors: self
                .vectors
                .iter()
                .filter(|(&id, _)| keep(id))
                .map(|(&id, v)| (id, v.clone()))
                .collect(),
        }
    }

    /// CSV with header `node_id,label,v0..v{d-1}`; values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self, graph: &PropertyGraph) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node_id".to_owned(), "label".to_owned()];
        header.extend((0..self.dimension()).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (&id, v) in &self.vectors {
            let mut record = vec![id.to_string(), graph.node(id)?.label.clone()];
            record.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses [`EmbeddingSet::to_csv`] output; returns the set and node labels.
    pub fn from_csv(text: &str, provenance: Provenance) -> Result<(Self, BTreeMap<NodeId, String>)> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let dim = header.len().saturating_sub(2);
        if header.get(0) != Some("node_id") || header.get(1) != Some("label") {
            return Err(Error::Parse("embedding CSV must start with node_id,label".into()));
        }
        if dim != provenance.dimension {
            return Err(Error::Dimension(format!(
                "CSV has {dim} value columns, provenance says {}",
                provenance.dimension
            )));
        }
        let mut vectors = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let at = |what: &str| Error::Parse(format!("line {}: bad {what}", line + 2));
            let id: NodeId = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| at("node_id"))?;
            let label = record.get(1).ok_or_else(|| at("label"))?.to_owned();
            let v = record
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>().map_err(|_| at("value")))
                .collect::<Result<Vec<f64>>>()?;
            vectors.insert(id, v);
            labels.insert(id, label);
        }
        Ok((Self::new(provenance, vectors)?, labels))
    }
}

/// Stores every vector of `set` under the method's property name.
pub fn write_embeddings(graph: &mut PropertyGraph, set: &EmbeddingSet) -> Result<()> {
    let stale: Vec<NodeId> = set
        .vectors
        .keys()
        .copied()
        .filter(|&id| !graph.contains_node(id))
        .collect();
    if !stale.is_empty() {
        return Err(Error::Lookup {
            kind: "nodes",
            key: format!("{stale:?}"),
        });
    }
    let name = set.provenance.method.property_name();
    for (&id, v) in &set.vectors {
        graph.set_node_property(id, name, PropertyValue::Vector(v.clone()))?;
    }
    Ok(())
}

/// Runs the configured method on `view`.
pub fn embed(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<EmbeddingSet> {
    match cfg.method {
        Method::Node2vec => node2vec(view, cfg),
        Method::Fastrp => fastrp(view, cfg),
        Method::Graphsage => graphsage(view, cfg),
    }
}

fn check_method(cfg: &EmbeddingConfig, expected: Method) -> Result<()> {
    if cfg.method != expected {
        return Err(Error::Config(format!(
            "config is for {}, not {expected}",
            cfg.method
        )));
    }
    cfg.validate()
}

fn provenance(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig, deterministic: bool) -> Provenance {
    Provenance {
        projection: view.name().to_owned(),
        method: cfg.method,
        dimension: cfg.dimension,
        seed: cfg.seed,
        deterministic,
    }
}

fn collect_rows(view: &ProjectedGraph<'_>, flat: &[f64], dim: usize) -> BTreeMap<NodeId, Vec<f64>> {
    view.nodes()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, flat[i * dim..(i + 1) * dim].to_vec()))
        .collect()
}
