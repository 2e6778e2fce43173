//! CSV ingestion driven by a declarative [`SchemaMap`].
//!
//! Each data row is validated against every column the map references. Rows
//! with a missing, unparseable or out-of-range value are dropped and counted
//! in the [`CleaningReport`]; nothing is imputed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{NodeId, Properties, PropertyGraph, PropertyValue};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Movielens,
    Heart,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Real,
    Text,
}

/// A CSV column copied into a node or edge property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnProperty {
    pub column: String,
    /// Property name; defaults to the column name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    pub kind: ValueKind,
    /// Inclusive accepted range for numeric values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

impl ColumnProperty {
    pub fn new(column: &str, kind: ValueKind) -> Self {
        Self {
            column: column.to_owned(),
            property: None,
            kind,
            range: None,
        }
    }

    pub fn renamed(column: &str, property: &str, kind: ValueKind) -> Self {
        Self {
            property: Some(property.to_owned()),
            ..Self::new(column, kind)
        }
    }

    pub fn within(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some([lo, hi]);
        self
    }

    pub fn name(&self) -> &str {
        self.property.as_deref().unwrap_or(&self.column)
    }

    fn parse(&self, raw: &str) -> std::result::Result<PropertyValue, &'static str> {
        if raw.is_empty() {
            return Err("missing");
        }
        let value = match self.kind {
            ValueKind::Text => return Ok(PropertyValue::Text(raw.to_owned())),
            ValueKind::Integer => match raw.parse::<i64>() {
                Ok(i) => PropertyValue::Integer(i),
                Err(_) => match raw.parse::<f64>() {
                    Ok(x) if x.is_finite() && x.fract() == 0.0 && x.abs() < 9.0e15 => {
                        PropertyValue::Integer(x as i64)
                    }
                    _ => return Err("unparseable"),
                },
            },
            ValueKind::Real => match raw.parse::<f64>() {
                Ok(x) if x.is_finite() => PropertyValue::Real(x),
                _ => return Err("unparseable"),
            },
        };
        if let (Some([lo, hi]), Some(x)) = (self.range, value.as_f64()) {
            if x < lo || x > hi {
                return Err("out of range");
            }
        }
        Ok(value)
    }
}

/// How a row's node is identified, so repeated keys merge into one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKey {
    /// One node per data row.
    Row,
    /// Natural key built from the listed columns.
    Columns(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRule {
    pub label: String,
    pub key: NodeKey,
    /// Splits a single key column into several nodes (e.g. `Action|Comedy`).
    /// Properties read from the key column receive the individual part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default)]
    pub properties: Vec<ColumnProperty>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRule {
    pub source: String,
    #[serde(rename = "type")]
    pub rel_type: String,
    pub target: String,
    #[serde(default)]
    pub properties: Vec<ColumnProperty>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaMap {
    pub kind: DatasetKind,
    pub nodes: Vec<NodeRule>,
    #[serde(default)]
    pub edges: Vec<EdgeRule>,
}

pub const HEART_COLUMNS: [&str; 14] = [
    "age", "sex", "cp", "trestbps", "chol", "fbs", "restecg", "thalach", "exang", "oldpeak",
    "slope", "ca", "thal", "target",
];

impl SchemaMap {
    /// `ratings.csv`: users, movies and `RATED` edges carrying the rating.
    pub fn movielens_ratings() -> Self {
        use ValueKind::*;
        SchemaMap {
            kind: DatasetKind::Movielens,
            nodes: vec![
                NodeRule {
                    label: "User".into(),
                    key: NodeKey::Columns(vec!["userId".into()]),
                    split: None,
                    properties: vec![ColumnProperty::new("userId", Text)],
                },
                NodeRule {
                    label: "Movie".into(),
                    key: NodeKey::Columns(vec!["movieId".into()]),
                    split: None,
                    properties: vec![ColumnProperty::new("movieId", Text)],
                },
            ],
            edges: vec![EdgeRule {
                source: "User".into(),
                rel_type: "RATED".into(),
                target: "Movie".into(),
                properties: vec![ColumnProperty::new("rating", Real).within(0.5, 5.0)],
            }],
        }
    }

    /// `movies.csv`: movie titles plus one `Genre` node per `|`-separated genre.
    pub fn movielens_movies() -> Self {
        use ValueKind::*;
        SchemaMap {
            kind: DatasetKind::Movielens,
            nodes: vec![
                NodeRule {
                    label: "Movie".into(),
                    key: NodeKey::Columns(vec!["movieId".into()]),
                    split: None,
                    properties: vec![
                        ColumnProperty::new("movieId", Text),
                        ColumnProperty::new("title", Text),
                    ],
                },
                NodeRule {
                    label: "Genre".into(),
                    key: NodeKey::Columns(vec!["genres".into()]),
                    split: Some("|".into()),
                    properties: vec![ColumnProperty::renamed("genres", "name", Text)],
                },
            ],
            edges: vec![EdgeRule {
                source: "Movie".into(),
                rel_type: "OF_GENRE".into(),
                target: "Genre".into(),
                properties: vec![],
            }],
        }
    }

    /// Heart-disease rows: one `Person` plus five satellite nodes per row.
    pub fn heart() -> Self {
        Self::heart_with(|_| NodeKey::Row)
    }

    /// Heart-disease variant where satellites with identical property values
    /// are shared between persons. `DiseaseResult` stays per row.
    pub fn heart_shared() -> Self {
        Self::heart_with(|rule| {
            if rule.label == "Person" || rule.label == "DiseaseResult" {
                NodeKey::Row
            } else {
                NodeKey::Columns(rule.properties.iter().map(|p| p.column.clone()).collect())
            }
        })
    }

    fn heart_with(key: impl Fn(&NodeRule) -> NodeKey) -> Self {
        use ValueKind::*;
        let node = |label: &str, properties: Vec<ColumnProperty>| NodeRule {
            label: label.into(),
            key: NodeKey::Row,
            split: None,
            properties,
        };
        let mut nodes = vec![
            node(
                "Person",
                vec![
                    ColumnProperty::new("age", Integer),
                    ColumnProperty::renamed("sex", "gender", Integer),
                ],
            ),
            node(
                "PersonState",
                vec![ColumnProperty::new("cp", Integer), ColumnProperty::new("thal", Integer)],
            ),
            node(
                "HeartMeasures",
                vec![
                    ColumnProperty::new("thalach", Integer),
                    ColumnProperty::new("trestbps", Integer),
                ],
            ),
            node(
                "HeartExames",
                vec![
                    ColumnProperty::new("ca", Integer),
                    ColumnProperty::new("exang", Integer),
                    ColumnProperty::new("oldpeak", Real),
                    ColumnProperty::new("restecg", Integer),
                    ColumnProperty::new("slope", Integer),
                ],
            ),
            node(
                "FS",
                vec![
                    ColumnProperty::renamed("fbs", "type", Integer),
                    ColumnProperty::renamed("chol", "value", Integer),
                ],
            ),
            node(
                "DiseaseResult",
                vec![ColumnProperty::new("target", Integer).within(0.0, 1.0)],
            ),
        ];
        for rule in &mut nodes {
            rule.key = key(rule);
        }
        let edge = |rel_type: &str, target: &str| EdgeRule {
            source: "Person".into(),
            rel_type: rel_type.into(),
            target: target.into(),
            properties: vec![],
        };
        SchemaMap {
            kind: DatasetKind::Heart,
            nodes,
            edges: vec![
                edge("hasState", "PersonState"),
                edge("hasHeartMesures", "HeartMeasures"),
                edge("hasHeartExames", "HeartExames"),
                edge("hasFS", "FS"),
                edge("hasDisease", "DiseaseResult"),
            ],
        }
    }

    /// Checks the map against a CSV header.
    pub fn validate(&self, header: &[String]) -> Result<()> {
        let mut labels = Vec::new();
        for rule in &self.nodes {
            if rule.label.is_empty() {
                return Err(Error::Schema("node rule with empty label".into()));
            }
            if rule.split.is_some() && !matches!(&rule.key, NodeKey::Columns(c) if c.len() == 1) {
                return Err(Error::Schema(format!(
                    "label {}: split requires exactly one key column",
                    rule.label
                )));
            }
            labels.push(rule.label.as_str());
        }
        for rule in &self.edges {
            for end in [&rule.source, &rule.target] {
                if !labels.contains(&end.as_str()) {
                    return Err(Error::Schema(format!(
                        "edge rule {} references undeclared label {end}",
                        rule.rel_type
                    )));
                }
            }
        }
        for column in self.referenced_columns() {
            if !header.iter().any(|h| h == column) {
                return Err(Error::Schema(format!("missing column `{column}`")));
            }
        }
        Ok(())
    }

    fn referenced_columns(&self) -> Vec<&str> {
        let mut cols = Vec::new();
        for rule in &self.nodes {
            if let NodeKey::Columns(keys) = &rule.key {
                cols.extend(keys.iter().map(String::as_str));
            }
            cols.extend(rule.properties.iter().map(|p| p.column.as_str()));
        }
        for rule in &self.edges {
            cols.extend(rule.properties.iter().map(|p| p.column.as_str()));
        }
        let mut seen = Vec::new();
        for c in cols {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    /// Drop counts keyed by `column: reason`.
    pub drop_reasons: BTreeMap<String, usize>,
    pub nodes_created: usize,
    pub edges_created: usize,
    pub warnings: Vec<String>,
}

impl CleaningReport {
    pub fn merge(&mut self, other: CleaningReport) {
        self.rows_read += other.rows_read;
        self.rows_kept += other.rows_kept;
        self.rows_dropped += other.rows_dropped;
        for (k, v) in other.drop_reasons {
            *self.drop_reasons.entry(k).or_default() += v;
        }
        self.nodes_created += other.nodes_created;
        self.edges_created += other.edges_created;
        self.warnings.extend(other.warnings);
    }
}

impl fmt::Display for CleaningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rows ({} kept, {} dropped); {} nodes, {} edges created",
            self.rows_read, self.rows_kept, self.rows_dropped, self.nodes_created, self.edges_created
        )
    }
}

/// Accumulates one graph from several CSV sources, merging nodes that share
/// a natural key across sources.
#[derive(Debug, Default)]
pub struct Ingestor {
    graph: PropertyGraph,
    registry: HashMap<(String, String), NodeId>,
    sources: usize,
}

impl Ingestor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn graph(&self) -> &PropertyGraph {
        &self.graph
    }

    pub fn finish(self) -> PropertyGraph {
        self.graph
    }

    pub fn ingest<R: Read>(&mut self, source: R, map: &SchemaMap) -> Result<CleaningReport> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_owned())
            .collect();
        map.validate(&header)?;
        let column_of: HashMap<&str, usize> = header
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), i))
            .collect();

        let source_no = self.sources;
        self.sources += 1;
        let mut report = CleaningReport::default();

        for (row_no, record) in reader.records().enumerate() {
            report.rows_read += 1;
            let record = match record {
                Ok(r) => r,
                Err(_) => {
                    report.rows_dropped += 1;
                    *report.drop_reasons.entry("row: malformed".into()).or_default() += 1;
                    continue;
                }
            };
            let field = |col: &str| record.get(column_of[col]).unwrap_or("");

            match self.parse_row(map, &field) {
                Err(reason) => {
                    report.rows_dropped += 1;
                    *report.drop_reasons.entry(reason).or_default() += 1;
                }
                Ok(parsed) => {
                    report.rows_kept += 1;
                    self.insert_row(map, parsed, &format!("{source_no}:{row_no}"), &mut report)?;
                }
            }
        }
        if report.rows_kept == 0 {
            let msg = format!("no usable rows ({} read); graph is empty", report.rows_read);
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
        Ok(report)
    }

    fn parse_row<'a>(
        &self,
        map: &SchemaMap,
        field: &dyn Fn(&str) -> &'a str,
    ) -> std::result::Result<ParsedRow, String> {
        let parse_props = |props: &[ColumnProperty]| -> std::result::Result<Properties, String> {
            props
                .iter()
                .map(|p| {
                    p.parse(field(&p.column))
                        .map(|v| (p.name().to_owned(), v))
                        .map_err(|why| format!("{}: {why}", p.column))
                })
                .collect()
        };

        let mut nodes = Vec::with_capacity(map.nodes.len());
        for rule in &map.nodes {
            let props = parse_props(&rule.properties)?;
            let instances = match (&rule.key, &rule.split) {
                (NodeKey::Row, _) => vec![(None, props)],
                (NodeKey::Columns(cols), Some(sep)) => {
                    let raw = field(&cols[0]);
                    if raw.is_empty() {
                        return Err(format!("{}: missing", cols[0]));
                    }
                    raw.split(sep.as_str())
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|part| {
                            let mut p = props.clone();
                            for cp in rule.properties.iter().filter(|cp| cp.column == cols[0]) {
                                p.insert(cp.name().to_owned(), PropertyValue::Text(part.to_owned()));
                            }
                            (Some(part.to_owned()), p)
                        })
                        .collect()
                }
                (NodeKey::Columns(cols), None) => {
                    let mut parts = Vec::with_capacity(cols.len());
                    for c in cols {
                        let raw = field(c);
                        if raw.is_empty() {
                            return Err(format!("{c}: missing"));
                        }
                        parts.push(raw);
                    }
                    vec![(Some(parts.join("\u{1f}")), props)]
                }
            };
            nodes.push((rule.label.clone(), instances));
        }

        let mut edges = Vec::with_capacity(map.edges.len());
        for rule in &map.edges {
            edges.push(parse_props(&rule.properties)?);
        }
        Ok(ParsedRow { nodes, edges })
    }

    fn insert_row(
        &mut self,
        map: &SchemaMap,
        row: ParsedRow,
        row_key: &str,
        report: &mut CleaningReport,
    ) -> Result<()> {
        let mut row_nodes: HashMap<String, Vec<NodeId>> = HashMap::new();
        for (label, instances) in row.nodes {
            for (key, props) in instances {
                let key = key.unwrap_or_else(|| format!("row:{row_key}"));
                let id = match self.registry.get(&(label.clone(), key.clone())) {
                    Some(&id) => {
                        for (name, value) in props {
                            self.graph.set_node_property(id, name, value)?;
                        }
                        id
                    }
                    None => {
                        let id = self.graph.add_node(label.clone(), props)?;
                        self.registry.insert((label.clone(), key), id);
                        report.nodes_created += 1;
                        id
                    }
                };
                let ids = row_nodes.entry(label.clone()).or_default();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        for (rule, props) in map.edges.iter().zip(row.edges) {
            let sources = row_nodes.get(&rule.source).cloned().unwrap_or_default();
            let targets = row_nodes.get(&rule.target).cloned().unwrap_or_default();
            for &s in &sources {
                for &t in &targets {
                    self.graph.add_edge(rule.rel_type.clone(), s, t, props.clone())?;
                    report.edges_created += 1;
                }
            }
        }
        Ok(())
    }
}

struct ParsedRow {
    /// Per node rule: label and `(natural key, properties)` instances.
    nodes: Vec<(String, Vec<(Option<String>, Properties)>)>,
    edges: Vec<Properties>,
}

/// Ingests one CSV source into a fresh graph.
pub fn ingest_csv<R: Read>(source: R, map: &SchemaMap) -> Result<(PropertyGraph, CleaningReport)> {
    let mut ingestor = Ingestor::new();
    let report = ingestor.ingest(source, map)?;
    Ok((ingestor.finish(), report))
}
