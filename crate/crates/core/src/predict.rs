//! Predictive queries over an embedded graph: rating prediction through
//! similar users, healthy/sick separation of patient embeddings, and a
//! coverage-based quality index computed before any prediction runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::graph::{Direction, NodeId, PropertyGraph};

pub const USER: &str = "User";
pub const MOVIE: &str = "Movie";
pub const RATED: &str = "RATED";
pub const SIMILAR: &str = "SIMILAR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub movie_id: String,
    pub title: String,
    /// Absent when no similar user rated the movie.
    pub prediction_rating: Option<f64>,
    pub real_rating: Option<f64>,
    /// `real_rating - prediction_rating`, unrounded.
    pub difference: Option<f64>,
}

impl PredictionRow {
    pub fn new(
        user_id: impl Into<String>,
        movie_id: impl Into<String>,
        title: impl Into<String>,
        prediction: Option<f64>,
        real: Option<f64>,
    ) -> Self {
        Self {
            user_id: user_id.into(),
            movie_id: movie_id.into(),
            title: title.into(),
            prediction_rating: prediction,
            real_rating: real,
            difference: prediction.zip(real).map(|(p, r)| r - p),
        }
    }

    pub fn covered(&self) -> bool {
        self.prediction_rating.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub rows: Vec<PredictionRow>,
    pub threshold: f64,
    pub count_abs_diff_ge_threshold: usize,
    /// Rows with `|difference| < 0.005`.
    pub exact_matches: usize,
    /// Over rows with a difference; `None` when there are none.
    pub mean_abs_difference: Option<f64>,
    pub uncovered: usize,
}

/// Two-decimal rendering, half away from zero. Values within a few ulps
/// of a half-cent boundary round outward, so `4.125` gives `"4.13"`.
pub fn render_rating(x: f64) -> String {
    let scaled = x.abs() * 100.0;
    let cents = (scaled + 0.5 + 1e-9 * scaled.max(1.0)).floor();
    if cents == 0.0 {
        return "0.00".into();
    }
    let sign = if x < 0.0 { "-" } else { "" };
    format!("{sign}{}.{:02}", (cents / 100.0).floor() as u64, (cents % 100.0) as u64)
}

fn user_and_movie_index(graph: &PropertyGraph) -> (BTreeMap<String, NodeId>, BTreeMap<String, NodeId>) {
    (
        graph.key_index(USER, "userId").into_iter().collect(),
        graph.key_index(MOVIE, "movieId").into_iter().collect(),
    )
}

fn resolve(index: &BTreeMap<String, NodeId>, ids: &[impl AsRef<str>], kind: &'static str) -> Result<Vec<NodeId>> {
    ids.iter()
        .map(|id| index.get(id.as_ref()).copied().ok_or_else(|| Error::lookup(kind, id.as_ref())))
        .collect()
}

/// Distinct User nodes `u` points at through SIMILAR edges.
fn similar_users(graph: &PropertyGraph, user: NodeId) -> Result<BTreeSet<NodeId>> {
    let mut out = BTreeSet::new();
    for e in graph.incident_edges(user, SIMILAR, Direction::Out)? {
        if graph.node(e.target)?.label == USER {
            out.insert(e.target);
        }
    }
    Ok(out)
}

/// Rating on the lowest-id RATED edge `user -> movie`.
fn rating_of(graph: &PropertyGraph, user: NodeId, movie: NodeId) -> Result<Option<f64>> {
    Ok(graph
        .incident_edges(user, RATED, Direction::Out)?
        .into_iter()
        .find(|e| e.target == movie)
        .and_then(|e| e.property("rating"))
        .and_then(|v| v.as_f64()))
}

fn has_rated(graph: &PropertyGraph, user: NodeId, movie: NodeId) -> Result<bool> {
    Ok(graph
        .incident_edges(user, RATED, Direction::Out)?
        .into_iter()
        .any(|e| e.target == movie))
}

/// One row per `(user, movie)` in the cross product, users outermost.
/// The prediction is the mean rating of `movie` over the distinct users
/// `u` is SIMILAR to; each similar user counts once.
pub fn predict_ratings(
    graph: &PropertyGraph,
    user_ids: &[impl AsRef<str>],
    movie_ids: &[impl AsRef<str>],
) -> Result<Vec<PredictionRow>> {
    let (users, movies) = user_and_movie_index(graph);
    let user_nodes = resolve(&users, user_ids, "userId")?;
    let movie_nodes = resolve(&movies, movie_ids, "movieId")?;
    let mut rows = Vec::with_capacity(user_nodes.len() * movie_nodes.len());
    for (uid, &u) in user_ids.iter().zip(&user_nodes) {
        let peers = similar_users(graph, u)?;
        for (mid, &m) in movie_ids.iter().zip(&movie_nodes) {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &peer in &peers {
                if let Some(r) = rating_of(graph, peer, m)? {
                    sum += r;
                    count += 1;
                }
            }
            let prediction = (count > 0).then(|| sum / count as f64);
            let title = graph
                .node(m)?
                .property("title")
                .and_then(|v| v.as_text())
                .unwrap_or_default();
            rows.push(PredictionRow::new(
                uid.as_ref(),
                mid.as_ref(),
                title,
                prediction,
                rating_of(graph, u, m)?,
            ));
        }
    }
    Ok(rows)
}

pub fn prediction_report(rows: &[PredictionRow], threshold: f64) -> PredictionReport {
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.difference).collect();
    PredictionReport {
        rows: rows.to_vec(),
        threshold,
        count_abs_diff_ge_threshold: diffs.iter().filter(|d| d.abs() >= threshold).count(),
        exact_matches: diffs.iter().filter(|d| d.abs() < 0.005).count(),
        mean_abs_difference: (!diffs.is_empty()).then(|| diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64),
        uncovered: rows.iter().filter(|r| !r.covered()).count(),
    }
}

/// CSV with columns `userId,movie,title,prediction_rating,real_rating,difference`;
/// numbers use [`render_rating`], absent values are empty.
pub fn predictions_to_csv(rows: &[PredictionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["userId", "movie", "title", "prediction_rating", "real_rating", "difference"])?;
    let cell = |x: Option<f64>| x.map(render_rating).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.user_id.clone(),
            r.movie_id.clone(),
            r.title.clone(),
            cell(r.prediction_rating),
            cell(r.real_rating),
            cell(r.difference),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `target` of the DiseaseResult each Person points at via `hasDisease`.
pub fn heart_targets(graph: &PropertyGraph) -> Result<BTreeMap<NodeId, u8>> {
    let mut out = BTreeMap::new();
    for person in graph.nodes_with_label("Person") {
        let Some(edge) = graph.incident_edges(person, "hasDisease", Direction::Out)?.into_iter().next() else {
            continue;
        };
        let value = graph
            .node(edge.target)?
            .property("target")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::MissingProperty {
                property: "target".into(),
                nodes: vec![edge.target],
            })?;
        if value != 0.0 && value != 1.0 {
            return Err(Error::Class(format!("node {} has target {value}", edge.target)));
        }
        out.insert(person, value as u8);
    }
    Ok(out)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette over `points` with class labels `classes`, euclidean.
pub fn silhouette(points: &[&[f64]], classes: &[u8]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mut same, mut ns, mut other, mut no) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclidean(points[i], points[j]);
            if classes[i] == classes[j] {
                same += d;
                ns += 1;
            } else {
                other += d;
                no += 1;
            }
        }
        let a = same / ns.max(1) as f64;
        let b = other / no.max(1) as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Mean silhouette of the two target classes in embedding space. Every
/// node in `targets` must be embedded; other embedded nodes are ignored.
pub fn disease_separation(embeddings: &EmbeddingSet, targets: &BTreeMap<NodeId, u8>) -> Result<f64> {
    let mut points = Vec::with_capacity(targets.len());
    let mut classes = Vec::with_capacity(targets.len());
    let mut missing = Vec::new();
    for (&id, &class) in targets {
        if class > 1 {
            return Err(Error::Class(format!("node {id} has class {class}; expected 0 or 1")));
        }
        match embeddings.get(id) {
            Some(v) => {
                points.push(v);
                classes.push(class);
            }
            None => missing.push(id),
        }
    }
    if !missing.is_empty() {
        return Err(Error::lookup("embedded nodes", format!("{missing:?}")));
    }
    let ones = classes.iter().filter(|&&c| c == 1).count();
    let zeros = classes.len() - ones;
    if ones == 0 || zeros == 0 {
        return Err(Error::Class("separation needs both classes".into()));
    }
    if ones < 2 || zeros < 2 {
        return Err(Error::Size(format!("classes have {zeros} and {ones} points; need at least 2 each")));
    }
    Ok(silhouette(&points, &classes))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingQuery {
    pub user_ids: Vec<String>,
    pub movie_ids: Vec<String>,
}

/// Fraction of `(user, movie)` targets where some SIMILAR neighbour of the
/// user has rated the movie. Reads graph structure only, never ratings.
pub fn query_quality(graph: &PropertyGraph, query: &RatingQuery) -> Result<f64> {
    if query.user_ids.is_empty() || query.movie_ids.is_empty() {
        return Err(Error::DegenerateQuery("the query has no (user, movie) targets".into()));
    }
    let (users, movies) = user_and_movie_index(graph);
    let user_nodes = resolve(&users, &query.user_ids, "userId")?;
    let movie_nodes = resolve(&movies, &query.movie_ids, "movieId")?;
    let mut covered = 0usize;
    for &u in &user_nodes {
        let peers = similar_users(graph, u)?;
        for &m in &movie_nodes {
            let mut hit = false;
            for &p in &peers {
                if has_rated(graph, p, m)? {
                    hit = true;
                    break;
                }
            }
            covered += usize::from(hit);
        }
    }
    Ok(covered as f64 / (user_nodes.len() * movie_nodes.len()) as f64)
}
