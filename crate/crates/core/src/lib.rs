//! Property graphs built from tabular data, node embeddings over graph
//! projections, and the predictive queries answered on top of them.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`graph`] holds the in-memory property graph and CSV ingestion.
//! * [`projection`] selects labelled subgraph views.
//! * [`embed`] produces Node2Vec, FastRP and GraphSAGE embeddings.
//! * [`similarity`] computes vector similarity and KNN edges.
//! * [`predict`] answers rating, separation and query-quality questions.
//! * [`reduce`] maps embeddings to 2-D with MDS, Isomap, spectral embedding and t-SNE.
//! * [`viz`] renders scatter plots as SVG and CSV.
//! * [`pipeline`] drives all of the above from one config file.

pub mod datasets;
pub mod embed;
pub mod error;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod predict;
pub mod projection;
pub mod reduce;
pub mod similarity;
pub mod viz;

pub use error::{Error, Result};
pub use graph::{Direction, Edge, Node, NodeId, PropertyGraph, PropertyValue};
