//! Vector similarity and k-nearest-neighbour edges.
//!
//! [`knn_write`] finds, for every in-scope node, its `topK` most similar
//! other nodes and materialises one scored edge per pair. Scores live in
//! `[0, 1]`: cosine `c` maps to `(c + 1) / 2`, euclidean distance `d` to
//! `1 / (1 + d)`. Rankings break ties by ascending node id.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, PropertyGraph, PropertyValue};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    #[default]
    Exact,
    Approximate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct KnnConfig {
    pub top_k: usize,
    pub node_property: String,
    pub metric: Metric,
    /// Score cutoff in exact mode; convergence fraction in approximate mode.
    pub delta_threshold: f64,
    pub random_seed: u64,
    pub write_relationship_type: String,
    pub write_property: String,
    pub mode: KnnMode,
    pub label_filter: Option<String>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            node_property: "graphsage_embedding".into(),
            metric: Metric::Cosine,
            delta_threshold: 0.7,
            random_seed: 42,
            write_relationship_type: "SIMILAR".into(),
            write_property: "score".into(),
            mode: KnnMode::Exact,
            label_filter: None,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Config("topK must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.delta_threshold) {
            return Err(Error::Config(format!(
                "deltaThreshold must lie in [0, 1], got {}",
                self.delta_threshold
            )));
        }
        if self.write_relationship_type.is_empty() || self.write_property.is_empty() {
            return Err(Error::Config("write type and property must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KnnStats {
    pub nodes_compared: usize,
    pub relationships_written: usize,
    /// Mean of written scores; 0 when nothing was written.
    pub mean_similarity: f64,
}

/// Raw cosine in `[-1, 1]` or euclidean distance.
pub fn similarity(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    match metric {
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::UndefinedSimilarity);
            }
            Ok(cosine_with_norms(a, b, na, nb))
        }
        Metric::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()),
    }
}

/// Maps a raw [`similarity`] value into `[0, 1]`, higher meaning closer.
pub fn score(raw: f64, metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => (raw + 1.0) / 2.0,
        Metric::Euclidean => 1.0 / (1.0 + raw),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Vectors of the in-scope nodes with their norms, ascending by id.
struct Scope {
    ids: Vec<NodeId>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
    metric: Metric,
}

impl Scope {
    fn collect(graph: &PropertyGraph, cfg: &KnnConfig) -> Result<Self> {
        let candidates: Vec<NodeId> = match &cfg.label_filter {
            Some(label) => graph.nodes_with_label(label).collect(),
            None => graph
                .nodes()
                .filter(|n| n.property(&cfg.node_property).is_some())
                .map(|n| n.id)
                .collect(),
        };
        let mut missing = Vec::new();
        let mut ids = Vec::with_capacity(candidates.len());
        let mut vectors = Vec::with_capacity(candidates.len());
        for id in candidates {
            match graph.node(id)?.property(&cfg.node_property) {
                Some(PropertyValue::Vector(v)) => {
                    ids.push(id);
                    vectors.push(v.clone());
                }
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "node {id}: `{}` is not a vector",
                        cfg.node_property
                    )))
                }
                None => missing.push(id),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingProperty {
                property: cfg.node_property.clone(),
                nodes: missing,
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(i) = vectors.iter().position(|v| v.len() != first.len()) {
                return Err(Error::Dimension(format!(
                    "node {} has a {}-vector, node {} a {}-vector",
                    ids[0],
                    first.len(),
                    ids[i],
                    vectors[i].len()
                )));
            }
        }
        let norms: Vec<f64> = vectors.iter().map(|v| norm(v)).collect();
        if cfg.metric == Metric::Cosine {
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                log::error!("node {} has a zero `{}` vector", ids[i], cfg.node_property);
                return Err(Error::UndefinedSimilarity);
            }
        }
        Ok(Self {
            ids,
            vectors,
            norms,
            metric: cfg.metric,
        })
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn score(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.vectors[i], &self.vectors[j]);
        let raw = match self.metric {
            Metric::Cosine => cosine_with_norms(a, b, self.norms[i], self.norms[j]),
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
        };
        score(raw, self.metric)
    }
}

/// Higher score first, then lower index (indices follow node-id order).
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn exact_lists(scope: &Scope, k: usize, parallel: bool) -> Vec<Vec<(f64, usize)>> {
    let n = scope.len();
    let row = |i: usize| {
        let mut all: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (scope.score(i, j), j)).collect();
        all.sort_by(rank);
        all.truncate(k);
        all
    };
    if parallel {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    }
}

/// Inserts `(s, j)` into the sorted list `list` of capacity `k`; true if it changed.
fn offer(list: &mut Vec<(f64, usize)>, k: usize, s: f64, j: usize) -> bool {
    if list.iter().any(|&(_, x)| x == j) {
        return false;
    }
    let entry = (s, j);
    let pos = list.partition_point(|e| rank(e, &entry) == Ordering::Less);
    if pos >= k {
        return false;
    }
    list.insert(pos, entry);
    list.truncate(k);
    true
}

const MAX_ROUNDS: usize = 100;

/// Neighbour-list descent: every node's current neighbours and reverse
/// neighbours are joined pairwise each round. Lists are kept at twice the
/// requested length and truncated at the end.
fn descent_lists(scope: &Scope, top_k: usize, delta: f64, seed: u64) -> Vec<Vec<(f64, usize)>> {
    let n = scope.len();
    let k = 2 * top_k;
    if n <= k + 1 {
        return exact_lists(scope, top_k, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists: Vec<Vec<(f64, usize)>> = (0..n)
        .map(|i| {
            let mut list = Vec::with_capacity(k);
            for j in rand::seq::index::sample(&mut rng, n - 1, k) {
                let j = if j >= i { j + 1 } else { j };
                offer(&mut list, k, scope.score(i, j), j);
            }
            list
        })
        .collect();

    let stop_below = (1.0 - delta) * (n * k) as f64;
    for round in 0..MAX_ROUNDS {
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, list) in lists.iter().enumerate() {
            for &(_, j) in list {
                reverse[j].push(i);
            }
        }
        let mut updates = 0usize;
        for v in 0..n {
            let mut pool: BTreeSet<usize> = lists[v].iter().map(|&(_, j)| j).collect();
            pool.extend(reverse[v].iter().copied());
            let pool: Vec<usize> = pool.into_iter().collect();
            for (x, &a) in pool.iter().enumerate() {
                for &b in &pool[x + 1..] {
                    let s = scope.score(a, b);
                    updates += usize::from(offer(&mut lists[a], k, s, b));
                    updates += usize::from(offer(&mut lists[b], k, s, a));
                }
            }
        }
        log::debug!("knn descent round {round}: {updates} updates");
        if (updates as f64) < stop_below || updates == 0 {
            break;
        }
    }
    lists.iter_mut().for_each(|l| l.truncate(top_k));
    lists
}

fn neighbour_lists(scope: &Scope, cfg: &KnnConfig) -> Vec<Vec<(f64, usize)>> {
    match cfg.mode {
        KnnMode::Exact => exact_lists(scope, cfg.top_k, true)
            .into_iter()
            .map(|list| list.into_iter().filter(|&(s, _)| s >= cfg.delta_threshold).collect())
            .collect(),
        KnnMode::Approximate => descent_lists(scope, cfg.top_k, cfg.delta_threshold, cfg.random_seed),
    }
}

/// Ranked `(neighbour, score)` lists per in-scope node, without writing.
pub fn knn(graph: &PropertyGraph, cfg: &KnnConfig) -> Result<Vec<(NodeId, Vec<(NodeId, f64)>)>> {
    cfg.validate()?;
    let scope = Scope::collect(graph, cfg)?;
    Ok(neighbour_lists(&scope, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, list)| (scope.ids[i], list.into_iter().map(|(s, j)| (scope.ids[j], s)).collect()))
        .collect())
}

/// Replaces the in-scope nodes' outgoing `writeRelationshipType` edges with
/// fresh KNN edges carrying `writeProperty`.
pub fn knn_write(graph: &mut PropertyGraph, cfg: &KnnConfig) -> Result<KnnStats> {
    let lists = knn(graph, cfg)?;
    let sources: BTreeSet<NodeId> = lists.iter().map(|(id, _)| *id).collect();
    let stale: Vec<_> = graph
        .edges_of_type(&cfg.write_relationship_type)
        .filter(|e| sources.contains(&e.source))
        .map(|e| e.id)
        .collect();
    for id in stale {
        graph.remove_edge(id)?;
    }
    let mut written = 0usize;
    let mut total = 0.0;
    for (source, list) in &lists {
        for &(target, s) in list {
            let props = [(cfg.write_property.clone(), PropertyValue::Real(s))].into_iter().collect();
            graph.add_edge(cfg.write_relationship_type.clone(), *source, target, props)?;
            written += 1;
            total += s;
        }
    }
    Ok(KnnStats {
        nodes_compared: lists.len(),
        relationships_written: written,
        mean_similarity: if written == 0 { 0.0 } else { total / written as f64 },
    })
}

/// The `k` nodes most cosine-similar to `anchor` (scores in `[0, 1]`),
/// ties by ascending id. Candidates lacking `property` are skipped.
pub fn top_k_similar(
    graph: &PropertyGraph,
    anchor: NodeId,
    k: usize,
    property: &str,
    label_filter: Option<&str>,
) -> Result<Vec<(NodeId, f64)>> {
    let a = match graph.node(anchor)?.property(property) {
        Some(PropertyValue::Vector(v)) => v,
        _ => {
            return Err(Error::MissingProperty {
                property: property.into(),
                nodes: vec![anchor],
            })
        }
    };
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut ranked = Vec::new();
    for node in graph.nodes() {
        if node.id == anchor || label_filter.is_some_and(|l| node.label != l) {
            continue;
        }
        let Some(PropertyValue::Vector(b)) = node.property(property) else {
            continue;
        };
        if b.len() != a.len() {
            return Err(Error::Dimension(format!(
                "node {} has a {}-vector, anchor {anchor} a {}-vector",
                node.id,
                b.len(),
                a.len()
            )));
        }
        ranked.push((score(similarity(a, b, Metric::Cosine)?, Metric::Cosine), node.id));
    }
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(ranked.into_iter().take(k).map(|(s, id)| (id, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::props;
    use proptest::prelude::*;

    fn graph_with(vectors: &[Vec<f64>], label: &str) -> PropertyGraph {
        let mut g = PropertyGraph::new();
        for v in vectors {
            g.add_node(label, props([("emb", v.clone())])).unwrap();
        }
        g
    }

    fn cfg() -> KnnConfig {
        KnnConfig {
            node_property: "emb".into(),
            ..Default::default()
        }
    }

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect()
    }

    #[test]
    fn metric_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((similarity(&v, &v, Metric::Cosine).unwrap() - 1.0).abs() < 1e-15);
        let c = similarity(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap();
        assert_eq!((c, score(c, Metric::Cosine)), (0.0, 0.5));
        let d = similarity(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0], Metric::Euclidean).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(score(d, Metric::Euclidean), 1.0 / 6.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(similarity(&[1.0], &[1.0, 2.0], Metric::Cosine), Err(Error::Dimension(_))));
        assert!(matches!(
            similarity(&[0.0, 0.0], &[1.0, 2.0], Metric::Cosine),
            Err(Error::UndefinedSimilarity)
        ));
        assert_eq!(similarity(&[0.0, 0.0], &[0.0, 0.0], Metric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn six_nodes_give_complete_digraph() {
        let mut g = graph_with(&random_vectors(6, 4, 1), "N");
        let stats = knn_write(
            &mut g,
            &KnnConfig {
                delta_threshold: 0.0,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(stats.relationships_written, 30);
        assert_eq!(stats.nodes_compared, 6);
        for a in 0..6 {
            assert_eq!(g.neighbors(a, "SIMILAR", crate::Direction::Out).unwrap().len(), 5);
        }
    }

    #[test]
    fn exact_mode_matches_brute_force() {
        let vectors = random_vectors(20, 10, 7);
        let mut g = graph_with(&vectors, "N");
        let c = KnnConfig {
            delta_threshold: 0.5,
            ..cfg()
        };
        knn_write(&mut g, &c).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            let mut oracle: Vec<(f64, usize)> = vectors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, w)| {
                    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                    let cos = dot / (v.iter().map(|a| a * a).sum::<f64>().sqrt() * w.iter().map(|a| a * a).sum::<f64>().sqrt());
                    ((cos + 1.0) / 2.0, j)
                })
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<_> = oracle.into_iter().take(5).filter(|p| p.0 >= 0.5).collect();
            let got: Vec<_> = g
                .incident_edges(i as u64, "SIMILAR", crate::Direction::Out)
                .unwrap()
                .into_iter()
                .map(|e| (e.property("score").unwrap().as_f64().unwrap(), e.target as usize))
                .collect();
            assert_eq!(got.len(), expected.len());
            for (a, b) in got.iter().zip(&expected) {
                assert_eq!(a.1, b.1);
                assert!((a.0 - b.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn approximate_mode_recalls_exact_neighbours() {
        let vectors = random_vectors(200, 10, 3);
        let g = graph_with(&vectors, "N");
        let exact = knn(&g, &KnnConfig { delta_threshold: 0.0, ..cfg() }).unwrap();
        let approx = knn(
            &g,
            &KnnConfig {
                mode: KnnMode::Approximate,
                delta_threshold: 0.999,
                ..cfg()
            },
        )
        .unwrap();
        let mut hits = 0;
        for ((_, e), (_, a)) in exact.iter().zip(&approx) {
            let truth: BTreeSet<_> = e.iter().map(|p| p.0).collect();
            hits += a.iter().filter(|p| truth.contains(&p.0)).count();
        }
        let recall = hits as f64 / (200 * 5) as f64;
        assert!(recall >= 0.9, "recall {recall}");
    }

    #[test]
    fn rewriting_replaces_previous_edges() {
        let mut g = graph_with(&random_vectors(10, 4, 2), "N");
        let c = KnnConfig { delta_threshold: 0.0, ..cfg() };
        knn_write(&mut g, &c).unwrap();
        let stats = knn_write(&mut g, &KnnConfig { top_k: 2, ..c }).unwrap();
        assert_eq!(stats.relationships_written, 20);
        assert_eq!(g.edges_of_type("SIMILAR").count(), 20);
    }

    #[test]
    fn scope_errors() {
        let mut g = graph_with(&random_vectors(3, 4, 2), "N");
        g.add_node("N", Default::default()).unwrap();
        let with_label = KnnConfig {
            label_filter: Some("N".into()),
            ..cfg()
        };
        match knn_write(&mut g, &with_label) {
            Err(Error::MissingProperty { nodes, .. }) => assert_eq!(nodes, vec![3]),
            other => panic!("{other:?}"),
        }
        // Without a label filter the bare node is simply out of scope.
        assert_eq!(knn_write(&mut g, &cfg()).unwrap().nodes_compared, 3);
        g.add_node("N", props([("emb", vec![1.0, 2.0])])).unwrap();
        assert!(matches!(knn_write(&mut g, &cfg()), Err(Error::Dimension(_))));
    }

    #[test]
    fn label_filter_limits_scope() {
        let mut g = graph_with(&random_vectors(4, 3, 5), "A");
        for v in random_vectors(3, 3, 6) {
            g.add_node("B", props([("emb", v)])).unwrap();
        }
        let stats = knn_write(
            &mut g,
            &KnnConfig {
                label_filter: Some("B".into()),
                delta_threshold: 0.0,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!((stats.nodes_compared, stats.relationships_written), (3, 6));
        assert!(g.edges_of_type("SIMILAR").all(|e| e.source >= 4 && e.target >= 4));
    }

    #[test]
    fn top_k_similar_examples() {
        let vectors = random_vectors(12, 5, 9);
        let mut g = graph_with(&vectors[..6], "User");
        for v in &vectors[6..] {
            g.add_node("Movie", props([("emb", v.clone())])).unwrap();
        }
        let anchor = 8;
        assert!(top_k_similar(&g, anchor, 0, "emb", None).unwrap().is_empty());
        let all = top_k_similar(&g, anchor, 50, "emb", None).unwrap();
        assert_eq!(all.len(), 11);
        assert!(all.iter().all(|&(id, _)| id != anchor));
        let best = top_k_similar(&g, anchor, 1, "emb", Some("User")).unwrap();
        let argmax = (0..6u64)
            .max_by(|&a, &b| {
                let sa = similarity(&vectors[8], &vectors[a as usize], Metric::Cosine).unwrap();
                let sb = similarity(&vectors[8], &vectors[b as usize], Metric::Cosine).unwrap();
                sa.total_cmp(&sb)
            })
            .unwrap();
        assert_eq!(best[0].0, argmax);
    }

    #[test]
    fn top_k_similar_errors() {
        let mut g = graph_with(&random_vectors(3, 4, 2), "N");
        let bare = g.add_node("N", Default::default()).unwrap();
        assert!(matches!(
            top_k_similar(&g, bare, 2, "emb", None),
            Err(Error::MissingProperty { .. })
        ));
        let odd = g.add_node("N", props([("emb", vec![1.0])])).unwrap();
        match top_k_similar(&g, 0, 2, "emb", None) {
            Err(Error::Dimension(msg)) => assert!(msg.contains(&format!("node {odd}"))),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn written_scores_respect_threshold_and_symmetry(
            seed in 0u64..1000,
            n in 2usize..25,
            k in 1usize..8,
            delta in 0.0f64..1.0,
        ) {
            let mut g = graph_with(&random_vectors(n, 6, seed), "N");
            let stats = knn_write(&mut g, &KnnConfig { top_k: k, delta_threshold: delta, ..cfg() }).unwrap();
            prop_assert!(stats.relationships_written <= stats.nodes_compared * k);
            let mut seen = std::collections::HashMap::new();
            for e in g.edges_of_type("SIMILAR") {
                let s = e.property("score").unwrap().as_f64().unwrap();
                prop_assert!(s >= delta && s <= 1.0);
                seen.insert((e.source, e.target), s);
            }
            for (&(a, b), &s) in &seen {
                if let Some(&back) = seen.get(&(b, a)) {
                    prop_assert_eq!(s, back);
                }
            }
            if stats.relationships_written > 0 {
                prop_assert!((0.0..=1.0).contains(&stats.mean_similarity));
            }
        }

        #[test]
        fn cosine_ranking_is_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let vectors = random_vectors(15, 8, seed);
            let g = graph_with(&vectors, "N");
            let scaled: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let h = graph_with(&scaled, "N");
            for anchor in 0..15 {
                let a: Vec<_> = top_k_similar(&g, anchor, 14, "emb", None).unwrap().into_iter().map(|p| p.0).collect();
                let b: Vec<_> = top_k_similar(&h, anchor, 14, "emb", None).unwrap().into_iter().map(|p| p.0).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
