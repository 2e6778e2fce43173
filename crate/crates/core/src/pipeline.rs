//! Config-driven runs over every stage, and the per-stage entry points the
//! command-line front end calls one at a time.
//!
//! Stages run in a fixed order: ingest, queries, project, embed, knn,
//! reduce (with plots), predict. A stage with nothing configured is skipped
//! and left out of the manifest. Every stage writes under one output
//! directory using fixed relative names, so running the stages by hand
//! produces the same files as [`run_pipeline`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{embed, write_embeddings, EmbeddingConfig, EmbeddingSet, FastRpParams, GraphSageParams, Method, Node2VecParams, Provenance};
use crate::error::{Error, Result};
use crate::graph::{CleaningReport, DatasetKind, Ingestor, NodeId, PropertyGraph, SchemaMap};
use crate::io;
use crate::predict::{self, RatingQuery, SIMILAR};
use crate::projection::{builtin_projection, project, ProjectedGraph, ProjectionDump, ProjectionKind, ProjectionSpec};
use crate::reduce::{reduce, ReduceConfig, Reduction2D};
use crate::similarity::{knn_write, KnnConfig, KnnStats};
use crate::viz::{points_from_reduction_csv, scatter_svg, ScatterSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const CLEANING_FILE: &str = "cleaning_report.json";
pub const QUERIES_FILE: &str = "queries.json";
pub const SIMILAR_GRAPH_FILE: &str = "graph_similar.json";
pub const KNN_STATS_FILE: &str = "knn_stats.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Queries,
    Project,
    Embed,
    Knn,
    Reduce,
    Predict,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Queries,
        Stage::Project,
        Stage::Embed,
        Stage::Knn,
        Stage::Reduce,
        Stage::Predict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Queries => "queries",
            Stage::Project => "project",
            Stage::Embed => "embed",
            Stage::Knn => "knn",
            Stage::Reduce => "reduce",
            Stage::Predict => "predict",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// A built-in schema name or an inline map. Unknown names are read as a
/// path to a JSON schema map, relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Named(String),
    Inline(SchemaMap),
}

impl SchemaRef {
    pub fn resolve(&self, base: &Path) -> Result<SchemaMap> {
        match self {
            SchemaRef::Inline(map) => Ok(map.clone()),
            SchemaRef::Named(name) => match name.as_str() {
                "heart" => Ok(SchemaMap::heart()),
                "heart_shared" => Ok(SchemaMap::heart_shared()),
                "movielens_ratings" => Ok(SchemaMap::movielens_ratings()),
                "movielens_movies" => Ok(SchemaMap::movielens_movies()),
                path => io::read_json(base.join(path)),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub path: PathBuf,
    pub schema: SchemaRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub sources: Vec<Source>,
}

fn default_threshold() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    42
}

/// Queries are declared up front and evaluated by the last stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Query {
    RatingPrediction {
        user_ids: Vec<String>,
        movie_ids: Vec<String>,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Silhouette of healthy vs sick Person nodes, next to the score of a
    /// seeded permutation of the same targets.
    DiseaseSeparation {
        embedding: String,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Quality {
        user_ids: Vec<String>,
        movie_ids: Vec<String>,
    },
}

/// A built-in projection kind or an inline spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProjectionRef {
    Kind(ProjectionKind),
    Spec(ProjectionSpec),
}

impl ProjectionRef {
    pub fn name(&self) -> &str {
        match self {
            ProjectionRef::Kind(k) => k.name(),
            ProjectionRef::Spec(s) => &s.name,
        }
    }

    pub fn spec(&self, dataset: DatasetKind) -> ProjectionSpec {
        match self {
            ProjectionRef::Kind(k) => builtin_projection(*k, dataset),
            ProjectionRef::Spec(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub projection: String,
    #[serde(flatten)]
    pub config: EmbeddingConfig,
}

impl EmbeddingEntry {
    /// `{projection}_{method}_{dimension}`.
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.projection, self.config.method, self.config.dimension)
    }
}

/// Cross product of projections, methods and dimensions sharing one seed
/// and one parameter set per method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingGrid {
    pub projections: Vec<String>,
    pub methods: Vec<Method>,
    pub dimensions: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub node2vec: Node2VecParams,
    #[serde(default)]
    pub fastrp: FastRpParams,
    #[serde(default)]
    pub graphsage: GraphSageParams,
}

impl EmbeddingGrid {
    pub fn entries(&self) -> Vec<EmbeddingEntry> {
        let mut out = Vec::new();
        for p in &self.projections {
            for &m in &self.methods {
                for &d in &self.dimensions {
                    let mut config = EmbeddingConfig::new(m, d, self.seed);
                    config.node2vec = self.node2vec.clone();
                    config.fastrp = self.fastrp.clone();
                    config.graphsage = self.graphsage.clone();
                    out.push(EmbeddingEntry {
                        projection: p.clone(),
                        config,
                    });
                }
            }
        }
        out
    }
}

/// The node property is always the embedding method's property name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnStage {
    pub embedding: String,
    #[serde(flatten)]
    pub params: KnnConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorBy {
    #[default]
    Label,
    /// `healthy` / `sick` for Person nodes with a disease result.
    Disease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionEntry {
    /// Embedding ids to reduce; empty means all.
    #[serde(default)]
    pub embeddings: Vec<String>,
    #[serde(flatten)]
    pub config: ReduceConfig,
    /// Keep only nodes with this label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_filter: Option<String>,
    #[serde(default)]
    pub color_by: ColorBy,
}

impl ReductionEntry {
    /// `{embedding id}_{method}`, plus `_{label}` when filtered.
    pub fn artifact_name(&self, embedding_id: &str) -> String {
        match &self.node_filter {
            Some(label) => format!("{embedding_id}_{}_{label}", self.config.method),
            None => format!("{embedding_id}_{}", self.config.method),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub queries: Vec<Query>,
    #[serde(default)]
    pub projections: Vec<ProjectionRef>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_grid: Option<EmbeddingGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnStage>,
    #[serde(default)]
    pub reductions: Vec<ReductionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: PipelineConfig = io::read_json(path).map_err(|e| match e {
            Error::Parse(msg) => Error::Config(msg),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Explicit entries followed by the expanded grid.
    pub fn embedding_entries(&self) -> Vec<EmbeddingEntry> {
        let mut out = self.embeddings.clone();
        if let Some(grid) = &self.embedding_grid {
            out.extend(grid.entries());
        }
        out
    }

    pub fn projection(&self, name: &str) -> Option<&ProjectionRef> {
        self.projections.iter().find(|p| p.name() == name)
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        for e in &mut self.embeddings {
            e.config.seed = seed;
        }
        if let Some(g) = &mut self.embedding_grid {
            g.seed = seed;
        }
        if let Some(k) = &mut self.knn {
            k.params.random_seed = seed;
        }
        for r in &mut self.reductions {
            r.config.tsne.seed = seed;
        }
        for q in &mut self.queries {
            if let Query::DiseaseSeparation { seed: s, .. } = q {
                *s = seed;
            }
        }
    }

    /// Turns off multi-threaded embedding kernels.
    pub fn force_sequential(&mut self) {
        for e in &mut self.embeddings {
            e.config.parallel = false;
        }
    }

    /// Checks every cross-reference and parameter before any work runs.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.dataset.sources.is_empty() {
            return bad("dataset.sources".into(), "at least one source is required".into());
        }

        let mut projections = BTreeSet::new();
        for (i, p) in self.projections.iter().enumerate() {
            if !projections.insert(p.name()) {
                return bad(format!("projections[{i}]"), format!("duplicate projection `{}`", p.name()));
            }
        }

        let entries = self.embedding_entries();
        let mut embeddings = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            let field = if i < self.embeddings.len() {
                format!("embeddings[{i}]")
            } else {
                "embedding_grid".to_owned()
            };
            if !projections.contains(e.projection.as_str()) {
                return bad(format!("{field}.projection"), format!("unknown projection `{}`", e.projection));
            }
            e.config.validate().or_else(|err| bad(field.clone(), err.to_string()))?;
            if embeddings.insert(e.id(), e.config.method).is_some() {
                return bad(field, format!("duplicate embedding `{}`", e.id()));
            }
        }
        let known = |field: String, id: &str| {
            if embeddings.contains_key(id) {
                Ok(())
            } else {
                bad(field, format!("unknown embedding `{id}`"))
            }
        };

        if let Some(k) = &self.knn {
            known("knn.embedding".into(), &k.embedding)?;
            k.params.validate().or_else(|err| bad("knn".into(), err.to_string()))?;
        }

        let mut names = BTreeSet::new();
        for (i, r) in self.reductions.iter().enumerate() {
            for id in &r.embeddings {
                known(format!("reductions[{i}].embeddings"), id)?;
            }
            if r.config.k_neighbors == 0 {
                return bad(format!("reductions[{i}].k_neighbors"), "must be at least 1".into());
            }
            let targets: Vec<&String> = if r.embeddings.is_empty() {
                embeddings.keys().collect()
            } else {
                r.embeddings.iter().collect()
            };
            for id in targets {
                if !names.insert(r.artifact_name(id)) {
                    return bad(format!("reductions[{i}]"), format!("duplicate plot `{}`", r.artifact_name(id)));
                }
            }
        }

        for (i, q) in self.queries.iter().enumerate() {
            match q {
                Query::RatingPrediction { user_ids, movie_ids, threshold } => {
                    if user_ids.is_empty() || movie_ids.is_empty() {
                        return bad(format!("queries[{i}]"), "needs user_ids and movie_ids".into());
                    }
                    if !(*threshold >= 0.0) {
                        return bad(format!("queries[{i}].threshold"), "must be non-negative".into());
                    }
                }
                Query::Quality { user_ids, movie_ids } => {
                    if user_ids.is_empty() || movie_ids.is_empty() {
                        return bad(format!("queries[{i}]"), "needs user_ids and movie_ids".into());
                    }
                }
                Query::DiseaseSeparation { embedding, .. } => known(format!("queries[{i}].embedding"), embedding)?,
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Artifact names

pub fn projection_file(name: &str) -> String {
    format!("projections/{name}.json")
}

pub fn embedding_file(id: &str) -> String {
    format!("embeddings/{id}.csv")
}

pub fn reduction_file(name: &str) -> String {
    format!("reductions/{name}.csv")
}

pub fn plot_file(name: &str) -> String {
    format!("plots/{name}.svg")
}

pub fn prediction_file(index: usize) -> String {
    format!("predictions/q{index}.csv")
}

/// Splits `{projection}_{method}_{dimension}`; the projection may itself
/// contain underscores.
pub fn parse_embedding_id(id: &str) -> Result<(String, Method, usize)> {
    let bad = || Error::Parse(format!("`{id}` is not of the form projection_method_dimension"));
    let mut parts = id.rsplitn(3, '_');
    let dim = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let method = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let projection = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
    Ok((projection.to_owned(), method, dim))
}

// ---------------------------------------------------------------------------
// Stage functions

fn write(out: &Path, rel: &str, contents: &str) -> Result<String> {
    io::write_text(out.join(rel), contents)?;
    Ok(rel.to_owned())
}

fn write_json<T: Serialize>(out: &Path, rel: &str, value: &T) -> Result<String> {
    io::write_json(out.join(rel), value)?;
    Ok(rel.to_owned())
}

/// Reads every source into one graph, merging nodes that share a key.
pub fn ingest_dataset(dataset: &DatasetConfig, base: &Path) -> Result<(PropertyGraph, CleaningReport)> {
    let mut ingestor = Ingestor::new();
    let mut report = CleaningReport::default();
    for source in &dataset.sources {
        let map = source.schema.resolve(base)?;
        let path = base.join(&source.path);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        report.merge(ingestor.ingest(std::io::BufReader::new(file), &map)?);
    }
    Ok((ingestor.finish(), report))
}

/// Writes the graph dump and cleaning report.
pub fn write_ingest(out: &Path, graph: &PropertyGraph, report: &CleaningReport) -> Result<Vec<String>> {
    Ok(vec![write(out, GRAPH_FILE, &graph.to_json())?, write_json(out, CLEANING_FILE, report)?])
}

pub fn write_queries(out: &Path, queries: &[Query]) -> Result<Vec<String>> {
    Ok(vec![write_json(out, QUERIES_FILE, &queries)?])
}

pub fn project_stage<'g>(graph: &'g PropertyGraph, spec: &ProjectionSpec, out: &Path) -> Result<(ProjectedGraph<'g>, String)> {
    let view = project(graph, spec)?;
    for w in view.warnings() {
        log::warn!("projection {}: {w}", spec.name);
    }
    let rel = write_json(out, &projection_file(&spec.name), &view.to_dump())?;
    Ok((view, rel))
}

pub fn load_projection<'g>(graph: &'g PropertyGraph, path: &Path) -> Result<ProjectedGraph<'g>> {
    let dump: ProjectionDump = io::read_json(path)?;
    ProjectedGraph::from_dump(graph, &dump)
}

pub fn write_embedding(out: &Path, graph: &PropertyGraph, set: &EmbeddingSet) -> Result<String> {
    write(out, &embedding_file(&set.id()), &set.to_csv(graph)?)
}

/// Reads an embedding CSV named after its id.
pub fn load_embedding(path: &Path) -> Result<EmbeddingSet> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parse(format!("{}: no file name", path.display())))?;
    let (projection, method, dimension) = parse_embedding_id(stem)?;
    let provenance = Provenance {
        projection,
        method,
        dimension,
        seed: 0,
        deterministic: true,
    };
    let text = io::read_text(path)?;
    let (set, _) = EmbeddingSet::from_csv(&text, provenance).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(set)
}

/// Stores `set` on the graph, writes similarity edges, and saves the
/// updated graph with the run statistics.
pub fn knn_stage(graph: &mut PropertyGraph, set: &EmbeddingSet, params: &KnnConfig, out: &Path) -> Result<(KnnStats, Vec<String>)> {
    write_embeddings(graph, set)?;
    let mut params = params.clone();
    params.node_property = set.provenance().method.property_name().to_owned();
    let stats = knn_write(graph, &params)?;
    let files = vec![write(out, SIMILAR_GRAPH_FILE, &graph.to_json())?, write_json(out, KNN_STATS_FILE, &stats)?];
    Ok((stats, files))
}

/// Class per node for plots: node labels, or healthy/sick for Persons.
pub fn plot_classes(graph: &PropertyGraph, color_by: ColorBy) -> Result<BTreeMap<NodeId, String>> {
    match color_by {
        ColorBy::Label => Ok(BTreeMap::new()),
        ColorBy::Disease => Ok(predict::heart_targets(graph)?
            .into_iter()
            .map(|(id, t)| (id, if t == 1 { "sick" } else { "healthy" }.to_owned()))
            .collect()),
    }
}

/// Applies the entry's node filter and reduces to two dimensions.
pub fn reduce_embedding(graph: &PropertyGraph, set: &EmbeddingSet, entry: &ReductionEntry) -> Result<Reduction2D> {
    let subset = match &entry.node_filter {
        Some(label) => set.filtered(|id| graph.node(id).is_ok_and(|n| &n.label == label)),
        None => set.clone(),
    };
    reduce(&subset, &entry.config)
}

pub fn write_reduction(
    out: &Path,
    graph: &PropertyGraph,
    name: &str,
    reduction: &Reduction2D,
    classes: &BTreeMap<NodeId, String>,
) -> Result<String> {
    write(out, &reduction_file(name), &reduction.to_csv(graph, classes)?)
}

/// Renders a reduction CSV as `plots/{name}.svg`, titled with the name.
pub fn plot_stage(reduction_csv: &Path, out: &Path) -> Result<String> {
    let name = reduction_csv
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parse(format!("{}: no file name", reduction_csv.display())))?;
    let points = points_from_reduction_csv(&io::read_text(reduction_csv)?)?;
    let svg = scatter_svg(&ScatterSpec::new(name, points))?;
    write(out, &plot_file(name), &svg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueryResult {
    RatingPrediction {
        index: usize,
        artifact: String,
        rows: usize,
        uncovered: usize,
        threshold: f64,
        count_abs_diff_ge_threshold: usize,
        exact_matches: usize,
        mean_abs_difference: Option<f64>,
    },
    DiseaseSeparation {
        index: usize,
        embedding: String,
        score: f64,
        permuted_score: f64,
    },
    Quality {
        index: usize,
        score: f64,
        warning: Option<String>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub results: Vec<QueryResult>,
}

/// Query quality, with a warning when the graph has no SIMILAR edges yet.
pub fn quality_with_warning(graph: &PropertyGraph, query: &RatingQuery) -> Result<(f64, Option<String>)> {
    let score = predict::query_quality(graph, query)?;
    let warning = (graph.edges_of_type(SIMILAR).next().is_none())
        .then(|| format!("no {SIMILAR} edges exist; run knn first"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok((score, warning))
}

/// Targets with their values shuffled by `seed`.
pub fn permuted_targets(targets: &BTreeMap<NodeId, u8>, seed: u64) -> BTreeMap<NodeId, u8> {
    let mut values: Vec<u8> = targets.values().copied().collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    targets.keys().copied().zip(values).collect()
}

/// Evaluates every query, writing one prediction CSV per rating query and
/// the combined `report.json`.
pub fn report_stage(
    graph: &PropertyGraph,
    queries: &[Query],
    embeddings: &BTreeMap<String, EmbeddingSet>,
    out: &Path,
) -> Result<(QueryReport, Vec<String>)> {
    let mut report = QueryReport::default();
    let mut files = Vec::new();
    for (index, q) in queries.iter().enumerate() {
        let result = match q {
            Query::RatingPrediction { user_ids, movie_ids, threshold } => {
                let rows = predict::predict_ratings(graph, user_ids, movie_ids)?;
                let artifact = write(out, &prediction_file(index), &predict::predictions_to_csv(&rows)?)?;
                files.push(artifact.clone());
                let r = predict::prediction_report(&rows, *threshold);
                QueryResult::RatingPrediction {
                    index,
                    artifact,
                    rows: rows.len(),
                    uncovered: r.uncovered,
                    threshold: r.threshold,
                    count_abs_diff_ge_threshold: r.count_abs_diff_ge_threshold,
                    exact_matches: r.exact_matches,
                    mean_abs_difference: r.mean_abs_difference,
                }
            }
            Query::DiseaseSeparation { embedding, seed } => {
                let set = embeddings.get(embedding).ok_or_else(|| Error::lookup("embedding", embedding))?;
                let targets = predict::heart_targets(graph)?;
                QueryResult::DiseaseSeparation {
                    index,
                    embedding: embedding.clone(),
                    score: predict::disease_separation(set, &targets)?,
                    permuted_score: predict::disease_separation(set, &permuted_targets(&targets, *seed))?,
                }
            }
            Query::Quality { user_ids, movie_ids } => {
                let query = RatingQuery {
                    user_ids: user_ids.clone(),
                    movie_ids: movie_ids.clone(),
                };
                let (score, warning) = quality_with_warning(graph, &query)?;
                QueryResult::Quality { index, score, warning }
            }
        };
        report.results.push(result);
    }
    files.push(write_json(out, REPORT_FILE, &report)?);
    Ok((report, files))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub stage: Option<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub seed_override: Option<u64>,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Every file under the output directory except the manifest.
    pub artifacts: Vec<ArtifactRecord>,
    pub cleaning: Option<CleaningReport>,
    pub embeddings: Vec<Provenance>,
    pub stats: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Completed)
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the config's output directory.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Stop after this stage.
    pub until: Option<Stage>,
    pub threads: Option<usize>,
    pub deterministic: bool,
}

/// Sizes the global worker pool; call once, before any parallel work.
pub fn install_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::Config("threads: must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("threads: {e}")))
}

/// Relative paths of all files under `root`, sorted.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(dir: &Path, prefix: &str, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
            let path = entry.path();
            if path.is_dir() {
                walk(&path, &rel, out)?;
            } else {
                out.push(rel);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if root.is_dir() {
        walk(root, "", &mut out)?;
    }
    out.sort();
    Ok(out)
}

/// Removes the files a previous run recorded; refuses foreign files.
fn prepare_output(out: &Path) -> Result<()> {
    let manifest = out.join(MANIFEST_FILE);
    if manifest.is_file() {
        let old: RunManifest = io::read_json(&manifest)?;
        for a in &old.artifacts {
            let p = out.join(&a.path);
            if p.is_file() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
    }
    let leftover = list_files(out)?;
    if !leftover.is_empty() {
        return Err(Error::Config(format!(
            "output: {} holds files not written by a previous run (e.g. {})",
            out.display(),
            leftover[0]
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

struct Run<'a> {
    out: &'a Path,
    until: Option<Stage>,
    records: Vec<StageRecord>,
    stats: BTreeMap<String, f64>,
}

impl Run<'_> {
    /// False once the run-until stage has passed.
    fn wants(&self, stage: Stage) -> bool {
        self.until.is_none_or(|u| stage <= u)
    }

    fn stage<T>(&mut self, stage: Stage, body: impl FnOnce(&mut BTreeMap<String, f64>) -> Result<(T, Vec<String>)>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {stage}");
        let result = body(&mut self.stats);
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((value, artifacts)) => {
                self.records.push(StageRecord {
                    stage,
                    status: StageStatus::Completed,
                    seconds,
                    artifacts,
                    error: None,
                });
                Ok(value)
            }
            Err(e) => {
                let cause = e.to_string();
                self.records.push(StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    seconds,
                    artifacts: Vec::new(),
                    error: Some(cause.clone()),
                });
                Err(Error::Stage {
                    stage: stage.name().to_owned(),
                    cause,
                })
            }
        }
    }
}

fn artifact_records(out: &Path, records: &[StageRecord]) -> Result<Vec<ArtifactRecord>> {
    let owner: BTreeMap<&str, Stage> = records
        .iter()
        .flat_map(|r| r.artifacts.iter().map(move |a| (a.as_str(), r.stage)))
        .collect();
    let failed = records.iter().find(|r| r.status == StageStatus::Failed).map(|r| r.stage);
    list_files(out)?
        .into_iter()
        .filter(|p| p != MANIFEST_FILE)
        .map(|path| {
            let full = out.join(&path);
            let bytes = fs::metadata(&full).map_err(|e| Error::io(&full, e))?.len();
            Ok(ArtifactRecord {
                sha256: io::file_sha256(&full)?,
                bytes,
                stage: owner.get(path.as_str()).copied().or(failed),
                path,
            })
        })
        .collect()
}

/// The output directory from the options, else the config.
pub fn output_dir(config: &PipelineConfig, opts: &RunOptions) -> Result<PathBuf> {
    opts.out
        .clone()
        .or_else(|| config.output.as_ref().map(|p| config.resolve(p)))
        .ok_or_else(|| Error::Config("output: no output directory given".into()))
}

/// Validates `config`, runs every configured stage and writes
/// `manifest.json`. A failed stage stops the run; the manifest is still
/// written and the error names the stage.
pub fn run_pipeline(config: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.override_seed(seed);
    }
    if opts.deterministic {
        config.force_sequential();
    }
    config.validate()?;
    let out = output_dir(&config, opts)?;
    if opts.threads == Some(0) {
        return Err(Error::Config("threads: must be at least 1".into()));
    }
    prepare_output(&out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("threads: {e}")))?;
    let mut run = Run {
        out: &out,
        until: opts.until,
        records: Vec::new(),
        stats: BTreeMap::new(),
    };
    let mut cleaning = None;
    let mut provenance = Vec::new();
    let outcome = pool.install(|| execute(&config, opts.deterministic, &mut run, &mut cleaning, &mut provenance));

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        deterministic: opts.deterministic || config.embedding_entries().iter().all(|e| !e.config.parallel),
        threads: opts.threads,
        seed_override: opts.seed,
        artifacts: artifact_records(&out, &run.records)?,
        config,
        stages: run.records,
        cleaning,
        embeddings: provenance,
        stats: run.stats,
    };
    io::write_json(out.join(MANIFEST_FILE), &manifest)?;
    outcome.map(|()| manifest)
}

fn execute(
    config: &PipelineConfig,
    sequential: bool,
    run: &mut Run<'_>,
    cleaning: &mut Option<CleaningReport>,
    provenance: &mut Vec<Provenance>,
) -> Result<()> {
    let out = run.out;

    let mut graph = run.stage(Stage::Ingest, |stats| {
        let (graph, report) = ingest_dataset(&config.dataset, &config.base_dir)?;
        log::info!("ingest: {report}");
        stats.insert("graph.nodes".into(), graph.node_count() as f64);
        stats.insert("graph.edges".into(), graph.edge_count() as f64);
        let files = write_ingest(out, &graph, &report)?;
        *cleaning = Some(report);
        Ok((graph, files))
    })?;

    if !config.queries.is_empty() && run.wants(Stage::Queries) {
        run.stage(Stage::Queries, |_| Ok(((), write_queries(out, &config.queries)?)))?;
    }

    let entries = config.embedding_entries();
    let mut sets: BTreeMap<String, EmbeddingSet> = BTreeMap::new();
    if !config.projections.is_empty() && run.wants(Stage::Project) {
        let views = run.stage(Stage::Project, |stats| {
            let mut views = BTreeMap::new();
            let mut files = Vec::new();
            for p in &config.projections {
                let (view, file) = project_stage(&graph, &p.spec(config.dataset.kind), out)?;
                stats.insert(format!("projection.{}.nodes", p.name()), view.node_count() as f64);
                stats.insert(format!("projection.{}.edges", p.name()), view.edges().len() as f64);
                files.push(file);
                views.insert(p.name().to_owned(), view);
            }
            Ok((views, files))
        })?;

        if !entries.is_empty() && run.wants(Stage::Embed) {
            sets = run.stage(Stage::Embed, |_| {
                let cell = |e: &EmbeddingEntry| embed(&views[&e.projection], &e.config);
                let computed: Vec<EmbeddingSet> = if sequential {
                    entries.iter().map(cell).collect::<Result<_>>()?
                } else {
                    entries.par_iter().map(cell).collect::<Result<_>>()?
                };
                let mut files = Vec::new();
                let mut sets = BTreeMap::new();
                for set in computed {
                    files.push(write_embedding(out, &graph, &set)?);
                    provenance.push(set.provenance().clone());
                    sets.insert(set.id(), set);
                }
                Ok((sets, files))
            })?;
        }
    }

    if let Some(k) = config.knn.as_ref().filter(|_| !sets.is_empty() && run.wants(Stage::Knn)) {
        run.stage(Stage::Knn, |stats| {
            let (s, files) = knn_stage(&mut graph, &sets[&k.embedding], &k.params, out)?;
            stats.insert("knn.nodes_compared".into(), s.nodes_compared as f64);
            stats.insert("knn.relationships_written".into(), s.relationships_written as f64);
            stats.insert("knn.mean_similarity".into(), s.mean_similarity);
            Ok(((), files))
        })?;
    }

    if !config.reductions.is_empty() && !sets.is_empty() && run.wants(Stage::Reduce) {
        run.stage(Stage::Reduce, |stats| {
            let mut jobs = Vec::new();
            for entry in &config.reductions {
                let ids: Vec<&String> = if entry.embeddings.is_empty() {
                    sets.keys().collect()
                } else {
                    entry.embeddings.iter().collect()
                };
                jobs.extend(ids.into_iter().map(|id| (entry, &sets[id])));
            }
            let job = |&(entry, set): &(&ReductionEntry, &EmbeddingSet)| reduce_embedding(&graph, set, entry);
            let reduced: Vec<Reduction2D> = if sequential {
                jobs.iter().map(job).collect::<Result<_>>()?
            } else {
                jobs.par_iter().map(job).collect::<Result<_>>()?
            };
            let mut files = Vec::new();
            let mut classes = BTreeMap::new();
            for ((entry, set), reduction) in jobs.iter().zip(&reduced) {
                let name = entry.artifact_name(&set.id());
                if !classes.contains_key(&entry.color_by) {
                    classes.insert(entry.color_by, plot_classes(&graph, entry.color_by)?);
                }
                let csv = write_reduction(out, &graph, &name, reduction, &classes[&entry.color_by])?;
                files.push(plot_stage(&out.join(&csv), out)?);
                files.push(csv);
                for (k, v) in &reduction.diagnostics {
                    stats.insert(format!("reduction.{name}.{k}"), *v);
                }
            }
            Ok(((), files))
        })?;
    }

    if !config.queries.is_empty() && run.wants(Stage::Predict) {
        run.stage(Stage::Predict, |stats| {
            let (report, files) = report_stage(&graph, &config.queries, &sets, out)?;
            for r in &report.results {
                match r {
                    QueryResult::RatingPrediction { index, count_abs_diff_ge_threshold, .. } => {
                        stats.insert(format!("query.{index}.count_abs_diff_ge_threshold"), *count_abs_diff_ge_threshold as f64);
                    }
                    QueryResult::DiseaseSeparation { index, score, permuted_score, .. } => {
                        stats.insert(format!("query.{index}.score"), *score);
                        stats.insert(format!("query.{index}.permuted_score"), *permuted_score);
                    }
                    QueryResult::Quality { index, score, .. } => {
                        stats.insert(format!("query.{index}.score"), *score);
                    }
                }
            }
            Ok(((), files))
        })?;
    }
    Ok(())
}
