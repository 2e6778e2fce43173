//! In-memory property graph store.
//!
//! Nodes carry a label and edges a relationship type; both hold a map of
//! named [`PropertyValue`]s. Label, type and adjacency indices are kept in
//! lockstep with the node and edge sets; [`PropertyGraph::audit`] checks that.

mod dump;
mod ingest;
mod query;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dump::GraphDump;
pub use ingest::{
    ingest_csv, CleaningReport, ColumnProperty, DatasetKind, EdgeRule, Ingestor, NodeKey, NodeRule,
    SchemaMap, ValueKind, HEART_COLUMNS,
};
pub use query::{movie_embeddings_by_genre, GenreEmbeddingRow};

pub type NodeId = u64;
pub type EdgeId = u64;

pub type Properties = BTreeMap<String, PropertyValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyValue {
    Integer(i64),
    Real(f64),
    Text(String),
    Vector(Vec<f64>),
}

impl PropertyValue {
    pub fn validate(&self) -> Result<()> {
        match self {
            PropertyValue::Real(x) if !x.is_finite() => {
                Err(Error::Validation(format!("non-finite real value {x}")))
            }
            PropertyValue::Vector(v) if v.is_empty() => {
                Err(Error::Validation("empty vector value".into()))
            }
            PropertyValue::Vector(v) => match v.iter().position(|x| !x.is_finite()) {
                Some(i) => Err(Error::Validation(format!(
                    "non-finite entry {} at index {i}",
                    v[i]
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Numeric scalar view; integers widen to reals.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            PropertyValue::Integer(i) => Some(i as f64),
            PropertyValue::Real(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            PropertyValue::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            PropertyValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, PropertyValue::Integer(_) | PropertyValue::Real(_))
    }

    /// Text key used to match natural keys (`userId`, `movieId`, ...).
    pub fn key_string(&self) -> Option<String> {
        match self {
            PropertyValue::Integer(i) => Some(i.to_string()),
            PropertyValue::Text(s) => Some(s.clone()),
            PropertyValue::Real(x) => Some(x.to_string()),
            PropertyValue::Vector(_) => None,
        }
    }
}

impl From<f64> for PropertyValue {
    fn from(x: f64) -> Self {
        PropertyValue::Real(x)
    }
}

impl From<i64> for PropertyValue {
    fn from(i: i64) -> Self {
        PropertyValue::Integer(i)
    }
}

impl From<&str> for PropertyValue {
    fn from(s: &str) -> Self {
        PropertyValue::Text(s.to_owned())
    }
}

impl From<String> for PropertyValue {
    fn from(s: String) -> Self {
        PropertyValue::Text(s)
    }
}

impl From<Vec<f64>> for PropertyValue {
    fn from(v: Vec<f64>) -> Self {
        PropertyValue::Vector(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    #[serde(default)]
    pub properties: Properties,
}

impl Node {
    pub fn property(&self, name: &str) -> Option<&PropertyValue> {
        self.properties.get(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    #[serde(rename = "type")]
    pub rel_type: String,
    pub source: NodeId,
    pub target: NodeId,
    #[serde(default)]
    pub properties: Properties,
}

impl Edge {
    pub fn property(&self, name: &str) -> Option<&PropertyValue> {
        self.properties.get(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    Undirected,
}

type Adjacency = BTreeMap<NodeId, BTreeMap<String, Vec<EdgeId>>>;

#[derive(Clone, Debug, Default)]
pub struct PropertyGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeId, Edge>,
    by_label: BTreeMap<String, BTreeSet<NodeId>>,
    by_type: BTreeMap<String, BTreeSet<EdgeId>>,
    outgoing: Adjacency,
    incoming: Adjacency,
    next_node: NodeId,
    next_edge: EdgeId,
}

impl PropertyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, label: impl Into<String>, properties: Properties) -> Result<NodeId> {
        let id = self.next_node;
        self.insert_node(Node {
            id,
            label: label.into(),
            properties,
        })?;
        Ok(id)
    }

    /// Inserts a node with a caller-chosen id.
    pub fn insert_node(&mut self, node: Node) -> Result<()> {
        if node.label.is_empty() {
            return Err(Error::Validation(format!("node {} has an empty label", node.id)));
        }
        if self.nodes.contains_key(&node.id) {
            return Err(Error::Validation(format!("duplicate node id {}", node.id)));
        }
        for value in node.properties.values() {
            value.validate()?;
        }
        self.next_node = self.next_node.max(node.id + 1);
        self.by_label
            .entry(node.label.clone())
            .or_default()
            .insert(node.id);
        self.nodes.insert(node.id, node);
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        rel_type: impl Into<String>,
        source: NodeId,
        target: NodeId,
        properties: Properties,
    ) -> Result<EdgeId> {
        let id = self.next_edge;
        self.insert_edge(Edge {
            id,
            rel_type: rel_type.into(),
            source,
            target,
            properties,
        })?;
        Ok(id)
    }

    pub fn insert_edge(&mut self, edge: Edge) -> Result<()> {
        if edge.rel_type.is_empty() {
            return Err(Error::Validation(format!("edge {} has an empty type", edge.id)));
        }
        if self.edges.contains_key(&edge.id) {
            return Err(Error::Validation(format!("duplicate edge id {}", edge.id)));
        }
        for end in [edge.source, edge.target] {
            if !self.nodes.contains_key(&end) {
                return Err(Error::lookup("node", end));
            }
        }
        for value in edge.properties.values() {
            value.validate()?;
        }
        self.next_edge = self.next_edge.max(edge.id + 1);
        self.by_type
            .entry(edge.rel_type.clone())
            .or_default()
            .insert(edge.id);
        self.outgoing
            .entry(edge.source)
            .or_default()
            .entry(edge.rel_type.clone())
            .or_default()
            .push(edge.id);
        self.incoming
            .entry(edge.target)
            .or_default()
            .entry(edge.rel_type.clone())
            .or_default()
            .push(edge.id);
        self.edges.insert(edge.id, edge);
        Ok(())
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Result<Edge> {
        let edge = self
            .edges
            .remove(&id)
            .ok_or_else(|| Error::lookup("edge", id))?;
        if let Some(ids) = self.by_type.get_mut(&edge.rel_type) {
            ids.remove(&id);
            if ids.is_empty() {
                self.by_type.remove(&edge.rel_type);
            }
        }
        detach(&mut self.outgoing, edge.source, &edge.rel_type, id);
        detach(&mut self.incoming, edge.target, &edge.rel_type, id);
        Ok(edge)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(&id).ok_or_else(|| Error::lookup("node", id))
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge> {
        self.edges.get(&id).ok_or_else(|| Error::lookup("edge", id))
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.by_label.keys().map(String::as_str)
    }

    pub fn edge_types(&self) -> impl Iterator<Item = &str> {
        self.by_type.keys().map(String::as_str)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.by_label.contains_key(label)
    }

    pub fn has_edge_type(&self, rel_type: &str) -> bool {
        self.by_type.contains_key(rel_type)
    }

    /// Node ids carrying `label`, ascending.
    pub fn nodes_with_label<'a>(&'a self, label: &str) -> impl Iterator<Item = NodeId> + 'a {
        self.by_label
            .get(label)
            .into_iter()
            .flat_map(|ids| ids.iter().copied())
    }

    pub fn edges_of_type<'a>(&'a self, rel_type: &str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.by_type
            .get(rel_type)
            .into_iter()
            .flat_map(move |ids| ids.iter().map(move |id| &self.edges[id]))
    }

    /// Edges of `rel_type` incident to `node` in `direction`, ascending by edge id.
    pub fn incident_edges(
        &self,
        node: NodeId,
        rel_type: &str,
        direction: Direction,
    ) -> Result<Vec<&Edge>> {
        if !self.nodes.contains_key(&node) {
            return Err(Error::lookup("node", node));
        }
        let pick = |adj: &Adjacency| -> Vec<EdgeId> {
            adj.get(&node)
                .and_then(|m| m.get(rel_type))
                .cloned()
                .unwrap_or_default()
        };
        let mut ids = match direction {
            Direction::Out => pick(&self.outgoing),
            Direction::In => pick(&self.incoming),
            Direction::Undirected => {
                let mut ids = pick(&self.outgoing);
                ids.extend(pick(&self.incoming));
                ids
            }
        };
        ids.sort_unstable();
        ids.dedup();
        Ok(ids.iter().map(|id| &self.edges[id]).collect())
    }

    /// Distinct neighbours of `node` over edges of `rel_type`, ascending by id.
    pub fn neighbors(
        &self,
        node: NodeId,
        rel_type: &str,
        direction: Direction,
    ) -> Result<Vec<NodeId>> {
        let mut out: Vec<NodeId> = self
            .incident_edges(node, rel_type, direction)?
            .into_iter()
            .map(|e| if e.source == node { e.target } else { e.source })
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Upserts a node property, returning the previous value.
    pub fn set_node_property(
        &mut self,
        node: NodeId,
        name: impl Into<String>,
        value: PropertyValue,
    ) -> Result<Option<PropertyValue>> {
        value.validate()?;
        let node = self
            .nodes
            .get_mut(&node)
            .ok_or_else(|| Error::lookup("node", node))?;
        Ok(node.properties.insert(name.into(), value))
    }

    pub fn set_edge_property(
        &mut self,
        edge: EdgeId,
        name: impl Into<String>,
        value: PropertyValue,
    ) -> Result<Option<PropertyValue>> {
        value.validate()?;
        let edge = self
            .edges
            .get_mut(&edge)
            .ok_or_else(|| Error::lookup("edge", edge))?;
        Ok(edge.properties.insert(name.into(), value))
    }

    /// Maps the text form of `property` to node id for every `label` node holding it.
    pub fn key_index(&self, label: &str, property: &str) -> HashMap<String, NodeId> {
        self.nodes_with_label(label)
            .filter_map(|id| {
                self.nodes[&id]
                    .property(property)
                    .and_then(PropertyValue::key_string)
                    .map(|k| (k, id))
            })
            .collect()
    }

    /// Checks that the label, type and adjacency indices agree with the
    /// node and edge sets. Returns one message per violation.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();

        for node in self.nodes.values() {
            if !self
                .by_label
                .get(&node.label)
                .is_some_and(|s| s.contains(&node.id))
            {
                problems.push(format!("node {} missing from label index", node.id));
            }
        }
        for (label, ids) in &self.by_label {
            for id in ids {
                match self.nodes.get(id) {
                    Some(n) if &n.label == label => {}
                    _ => problems.push(format!("label index {label} has stale node {id}")),
                }
            }
        }

        for edge in self.edges.values() {
            if !self.nodes.contains_key(&edge.source) || !self.nodes.contains_key(&edge.target) {
                problems.push(format!("edge {} has a dangling endpoint", edge.id));
            }
            if !self
                .by_type
                .get(&edge.rel_type)
                .is_some_and(|s| s.contains(&edge.id))
            {
                problems.push(format!("edge {} missing from type index", edge.id));
            }
            let listed = |adj: &Adjacency, n: NodeId| {
                adj.get(&n)
                    .and_then(|m| m.get(&edge.rel_type))
                    .is_some_and(|v| v.iter().filter(|&&e| e == edge.id).count() == 1)
            };
            if !listed(&self.outgoing, edge.source) {
                problems.push(format!("edge {} missing from outgoing index", edge.id));
            }
            if !listed(&self.incoming, edge.target) {
                problems.push(format!("edge {} missing from incoming index", edge.id));
            }
        }
        for (rel_type, ids) in &self.by_type {
            for id in ids {
                match self.edges.get(id) {
                    Some(e) if &e.rel_type == rel_type => {}
                    _ => problems.push(format!("type index {rel_type} has stale edge {id}")),
                }
            }
        }
        for (name, adj, outgoing) in [("outgoing", &self.outgoing, true), ("incoming", &self.incoming, false)] {
            for (node, by_type) in adj {
                for (rel_type, ids) in by_type {
                    for id in ids {
                        let ok = self.edges.get(id).is_some_and(|e| {
                            &e.rel_type == rel_type
                                && if outgoing { e.source == *node } else { e.target == *node }
                        });
                        if !ok {
                            problems.push(format!("{name} index of node {node} has stale edge {id}"));
                        }
                    }
                }
            }
        }
        problems
    }
}

fn detach(adj: &mut Adjacency, node: NodeId, rel_type: &str, edge: EdgeId) {
    if let Some(by_type) = adj.get_mut(&node) {
        if let Some(ids) = by_type.get_mut(rel_type) {
            ids.retain(|&e| e != edge);
            if ids.is_empty() {
                by_type.remove(rel_type);
            }
        }
        if by_type.is_empty() {
            adj.remove(&node);
        }
    }
}

/// Builds a property map from `(name, value)` pairs.
pub fn props<I, K, V>(pairs: I) -> Properties
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<PropertyValue>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}
