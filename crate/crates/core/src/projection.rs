//! Filtered subgraph views consumed by the embedding methods.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetKind, EdgeId, NodeId, PropertyGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Natural,
    Reverse,
    #[default]
    Undirected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Full,
    Strict,
    StrictExtended,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] = [
        ProjectionKind::Full,
        ProjectionKind::Strict,
        ProjectionKind::StrictExtended,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Full => "full",
            ProjectionKind::Strict => "strict",
            ProjectionKind::StrictExtended => "strict_extended",
        }
    }
}

impl std::str::FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProjectionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown projection kind `{s}`")))
    }
}

/// Declarative selection of labels (with their feature properties) and
/// relationship types (with traversal orientation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub name: String,
    pub nodes: BTreeMap<String, Vec<String>>,
    pub relationships: BTreeMap<String, Orientation>,
}

impl ProjectionSpec {
    fn from_parts(name: &str, nodes: &[(&str, &[&str])], rels: &[&str]) -> Self {
        ProjectionSpec {
            name: name.to_owned(),
            nodes: nodes
                .iter()
                .map(|(l, ps)| (l.to_string(), ps.iter().map(|p| p.to_string()).collect()))
                .collect(),
            relationships: rels
                .iter()
                .map(|r| (r.to_string(), Orientation::Undirected))
                .collect(),
        }
    }
}

const HEART_NODES: [(&str, &[&str]); 6] = [
    ("Person", &["age", "gender"]),
    ("PersonState", &["cp", "thal"]),
    ("FS", &["type", "value"]),
    ("HeartExames", &["ca", "exang", "oldpeak", "restecg", "slope"]),
    ("HeartMeasures", &["thalach", "trestbps"]),
    ("DiseaseResult", &["target"]),
];

fn heart_nodes(labels: &[&str]) -> Vec<(&'static str, &'static [&'static str])> {
    HEART_NODES
        .iter()
        .copied()
        .filter(|(l, _)| labels.contains(l))
        .collect()
}

/// The built-in full / strict / strict-extended projections for a dataset.
pub fn builtin_projection(kind: ProjectionKind, dataset: DatasetKind) -> ProjectionSpec {
    let name = kind.name();
    match (dataset, kind) {
        (DatasetKind::Movielens, ProjectionKind::Full)
        | (DatasetKind::Movielens, ProjectionKind::StrictExtended) => ProjectionSpec::from_parts(
            name,
            &[("User", &[]), ("Movie", &[]), ("Genre", &[])],
            &["RATED", "OF_GENRE"],
        ),
        (DatasetKind::Movielens, ProjectionKind::Strict) => {
            ProjectionSpec::from_parts(name, &[("User", &[]), ("Movie", &[])], &["RATED"])
        }
        (_, ProjectionKind::Full) => ProjectionSpec::from_parts(
            name,
            &HEART_NODES,
            &["hasDisease", "hasFS", "hasHeartExames", "hasHeartMesures", "hasState"],
        ),
        (_, ProjectionKind::Strict) => ProjectionSpec::from_parts(
            name,
            &heart_nodes(&["Person", "DiseaseResult"]),
            &["hasDisease"],
        ),
        (_, ProjectionKind::StrictExtended) => ProjectionSpec::from_parts(
            name,
            &heart_nodes(&["Person", "HeartMeasures", "DiseaseResult"]),
            &["hasHeartMesures", "hasDisease"],
        ),
    }
}

/// Immutable view over a [`PropertyGraph`].
///
/// Nodes are indexed densely `0..n` in ascending node-id order; `adjacency`
/// lists distinct neighbour indices per node after applying each
/// relationship's orientation.
#[derive(Clone, Debug)]
pub struct ProjectedGraph<'g> {
    graph: &'g PropertyGraph,
    spec: ProjectionSpec,
    nodes: Vec<NodeId>,
    edges: Vec<EdgeId>,
    index: HashMap<NodeId, usize>,
    adjacency: Vec<Vec<usize>>,
    feature_schema: BTreeMap<String, Vec<String>>,
    warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDump {
    pub spec: ProjectionSpec,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub feature_schema: BTreeMap<String, Vec<String>>,
}

pub fn project<'g>(graph: &'g PropertyGraph, spec: &ProjectionSpec) -> Result<ProjectedGraph<'g>> {
    build(graph, spec, None)
}

fn build<'g>(
    graph: &'g PropertyGraph,
    spec: &ProjectionSpec,
    within: Option<(&BTreeSet<NodeId>, &BTreeSet<EdgeId>)>,
) -> Result<ProjectedGraph<'g>> {
    if spec.nodes.is_empty() {
        return Err(Error::Projection(format!("{}: no node labels selected", spec.name)));
    }
    for label in spec.nodes.keys() {
        if !graph.has_label(label) {
            return Err(Error::Projection(format!("label `{label}` not present in graph")));
        }
    }
    for rel in spec.relationships.keys() {
        if !graph.has_edge_type(rel) {
            return Err(Error::Projection(format!(
                "relationship type `{rel}` not present in graph"
            )));
        }
    }

    let node_ok = |id: NodeId| within.is_none_or(|(ns, _)| ns.contains(&id));
    let edge_ok = |id: EdgeId| within.is_none_or(|(_, es)| es.contains(&id));

    let mut nodes: Vec<NodeId> = spec
        .nodes
        .keys()
        .flat_map(|l| graph.nodes_with_label(l))
        .filter(|&id| node_ok(id))
        .collect();
    nodes.sort_unstable();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (rel, orientation) in &spec.relationships {
        for edge in graph.edges_of_type(rel) {
            if !edge_ok(edge.id) {
                continue;
            }
            for end in [edge.source, edge.target] {
                let label = &graph.node(end)?.label;
                if !spec.nodes.contains_key(label) {
                    return Err(Error::Projection(format!(
                        "relationship `{rel}` reaches label `{label}`, which is not selected"
                    )));
                }
            }
            let (Some(&s), Some(&t)) = (index.get(&edge.source), index.get(&edge.target)) else {
                continue;
            };
            edges.push(edge.id);
            match orientation {
                Orientation::Natural => adjacency[s].push(t),
                Orientation::Reverse => adjacency[t].push(s),
                Orientation::Undirected => {
                    adjacency[s].push(t);
                    adjacency[t].push(s);
                }
            }
        }
    }
    edges.sort_unstable();
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }

    let mut warnings = Vec::new();
    let mut feature_schema = BTreeMap::new();
    for (label, declared) in &spec.nodes {
        let mut kept = Vec::new();
        for prop in declared {
            let mut seen = false;
            let mut numeric = true;
            for id in graph.nodes_with_label(label) {
                if let Some(v) = graph.node(id)?.property(prop) {
                    seen = true;
                    numeric &= v.is_numeric();
                }
            }
            if seen && numeric {
                kept.push(prop.clone());
            } else {
                warnings.push(format!("{label}.{prop} is not a numeric property; left out of features"));
            }
        }
        feature_schema.insert(label.clone(), kept);
    }
    if nodes.is_empty() || edges.is_empty() {
        warnings.push(format!(
            "projection {} retained {} nodes and {} edges",
            spec.name,
            nodes.len(),
            edges.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(ProjectedGraph {
        graph,
        spec: spec.clone(),
        nodes,
        edges,
        index,
        adjacency,
        feature_schema,
        warnings,
    })
}

impl<'g> ProjectedGraph<'g> {
    pub fn graph(&self) -> &'g PropertyGraph {
        self.graph
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Retained node ids, ascending. Position equals the dense index.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn neighbors(&self, index: usize) -> &[usize] {
        &self.adjacency[index]
    }

    pub fn degree(&self, index: usize) -> usize {
        self.adjacency[index].len()
    }

    pub fn label_of(&self, index: usize) -> &'g str {
        &self.graph.node(self.nodes[index]).expect("retained node").label
    }

    /// Ordered numeric feature properties per label.
    pub fn feature_schema(&self) -> &BTreeMap<String, Vec<String>> {
        &self.feature_schema
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Applies `spec` again, restricted to what this view retains.
    pub fn reproject(&self, spec: &ProjectionSpec) -> Result<ProjectedGraph<'g>> {
        let ns: BTreeSet<NodeId> = self.nodes.iter().copied().collect();
        let es: BTreeSet<EdgeId> = self.edges.iter().copied().collect();
        build(self.graph, spec, Some((&ns, &es)))
    }

    pub fn to_dump(&self) -> ProjectionDump {
        ProjectionDump {
            spec: self.spec.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            feature_schema: self.feature_schema.clone(),
        }
    }

    /// Rebuilds a view from its dump, checking the graph still yields the
    /// same node and edge sets.
    pub fn from_dump(graph: &'g PropertyGraph, dump: &ProjectionDump) -> Result<Self> {
        let view = project(graph, &dump.spec)?;
        if view.nodes != dump.nodes || view.edges != dump.edges {
            return Err(Error::Projection(format!(
                "graph no longer matches projection {}: {} nodes / {} edges now, {} / {} recorded",
                dump.spec.name,
                view.nodes.len(),
                view.edges.len(),
                dump.nodes.len(),
                dump.edges.len()
            )));
        }
        Ok(view)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic_heart_csv;
    use crate::graph::{ingest_csv, SchemaMap};

    fn heart(rows: usize) -> PropertyGraph {
        ingest_csv(synthetic_heart_csv(rows, 11).as_bytes(), &SchemaMap::heart())
            .unwrap()
            .0
    }

    fn label_set(spec: &ProjectionSpec) -> BTreeSet<&str> {
        spec.nodes.keys().map(String::as_str).collect()
    }

    fn type_set(spec: &ProjectionSpec) -> BTreeSet<&str> {
        spec.relationships.keys().map(String::as_str).collect()
    }

    #[test]
    fn heart_full_keeps_everything() {
        let g = heart(10);
        let spec = builtin_projection(ProjectionKind::Full, DatasetKind::Heart);
        assert_eq!(spec.nodes.len(), 6);
        assert_eq!(spec.relationships.len(), 5);
        let view = project(&g, &spec).unwrap();
        assert_eq!(view.node_count(), 60);
        assert_eq!(view.edges().len(), 50);
        assert_eq!(view.feature_schema()["HeartExames"].len(), 5);
        assert!(view.warnings().is_empty(), "{:?}", view.warnings());
    }

    #[test]
    fn strict_on_three_people() {
        let g = heart(3);
        let spec = builtin_projection(ProjectionKind::Strict, DatasetKind::Heart);
        assert_eq!((spec.nodes.len(), spec.relationships.len()), (2, 1));
        let view = project(&g, &spec).unwrap();
        assert_eq!(view.node_count(), 6);
        assert_eq!(view.edges().len(), 3);
        for i in 0..view.node_count() {
            assert_eq!(view.degree(i), 1);
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let g = heart(3);
        let mut spec = builtin_projection(ProjectionKind::Strict, DatasetKind::Heart);
        spec.nodes.insert("Hospital".into(), vec![]);
        match project(&g, &spec) {
            Err(Error::Projection(msg)) => assert!(msg.contains("Hospital")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relationship_reaching_unselected_label_is_an_error() {
        let g = heart(3);
        let mut spec = builtin_projection(ProjectionKind::Strict, DatasetKind::Heart);
        spec.relationships.insert("hasFS".into(), Orientation::Undirected);
        assert!(matches!(project(&g, &spec), Err(Error::Projection(_))));
    }

    #[test]
    fn builtins_are_nested() {
        for dataset in [DatasetKind::Heart, DatasetKind::Movielens] {
            let s = builtin_projection(ProjectionKind::Strict, dataset);
            let e = builtin_projection(ProjectionKind::StrictExtended, dataset);
            let f = builtin_projection(ProjectionKind::Full, dataset);
            assert_eq!(s.nodes.len(), 2);
            assert_eq!(s.relationships.len(), 1);
            assert!(e.nodes.len() > 2 && e.relationships.len() > 1);
            assert!(label_set(&s).is_subset(&label_set(&e)));
            assert!(label_set(&e).is_subset(&label_set(&f)));
            assert!(type_set(&s).is_subset(&type_set(&e)));
            assert!(type_set(&e).is_subset(&type_set(&f)));
        }
        let ml = builtin_projection(ProjectionKind::StrictExtended, DatasetKind::Movielens);
        assert_eq!((ml.nodes.len(), ml.relationships.len()), (3, 2));
    }

    #[test]
    fn retained_edges_are_closed_and_reprojection_is_identity() {
        let g = heart(12);
        for kind in ProjectionKind::ALL {
            let spec = builtin_projection(kind, DatasetKind::Heart);
            let view = project(&g, &spec).unwrap();
            let kept: BTreeSet<NodeId> = view.nodes().iter().copied().collect();
            for &e in view.edges() {
                let edge = g.edge(e).unwrap();
                assert!(kept.contains(&edge.source) && kept.contains(&edge.target));
            }
            let again = view.reproject(&spec).unwrap();
            assert_eq!(again.to_dump(), view.to_dump());
            assert_eq!(again.adjacency(), view.adjacency());
        }
    }

    #[test]
    fn orientation_controls_adjacency() {
        let g = heart(2);
        let mut spec = builtin_projection(ProjectionKind::Strict, DatasetKind::Heart);
        spec.relationships.insert("hasDisease".into(), Orientation::Natural);
        let view = project(&g, &spec).unwrap();
        for (i, &id) in view.nodes().iter().enumerate() {
            let expected = usize::from(g.node(id).unwrap().label == "Person");
            assert_eq!(view.degree(i), expected);
        }
        spec.relationships.insert("hasDisease".into(), Orientation::Reverse);
        let view = project(&g, &spec).unwrap();
        for (i, &id) in view.nodes().iter().enumerate() {
            let expected = usize::from(g.node(id).unwrap().label == "DiseaseResult");
            assert_eq!(view.degree(i), expected);
        }
    }

    #[test]
    fn text_properties_are_left_out_of_features() {
        let (g, _) = ingest_csv(
            "userId,movieId,rating\n1,2,4\n".as_bytes(),
            &SchemaMap::movielens_ratings(),
        )
        .unwrap();
        let mut spec = builtin_projection(ProjectionKind::Strict, DatasetKind::Movielens);
        spec.nodes.insert("User".into(), vec!["userId".into()]);
        let view = project(&g, &spec).unwrap();
        assert!(view.feature_schema()["User"].is_empty());
        assert_eq!(view.warnings().len(), 1);
    }

    #[test]
    fn dump_round_trip_and_staleness() {
        let mut g = heart(4);
        let spec = builtin_projection(ProjectionKind::Full, DatasetKind::Heart);
        let dump = project(&g, &spec).unwrap().to_dump();
        let text = serde_json::to_string(&dump).unwrap();
        let parsed: ProjectionDump = serde_json::from_str(&text).unwrap();
        assert_eq!(ProjectedGraph::from_dump(&g, &parsed).unwrap().to_dump(), dump);
        let p = g.nodes_with_label("Person").next().unwrap();
        let d = g.nodes_with_label("DiseaseResult").last().unwrap();
        g.add_edge("hasDisease", p, d, Default::default()).unwrap();
        assert!(ProjectedGraph::from_dump(&g, &parsed).is_err());
    }
}
