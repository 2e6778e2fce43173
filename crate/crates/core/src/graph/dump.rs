use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, Node, PropertyGraph};
use crate::error::Result;
use crate::io;

/// JSON document form of a [`PropertyGraph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PropertyGraph {
    pub fn to_dump(&self) -> GraphDump {
        GraphDump {
            nodes: self.nodes().cloned().collect(),
            edges: self.edges().cloned().collect(),
        }
    }

    pub fn from_dump(dump: GraphDump) -> Result<Self> {
        let mut graph = PropertyGraph::new();
        for node in dump.nodes {
            graph.insert_node(node)?;
        }
        for edge in dump.edges {
            graph.insert_edge(edge)?;
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_dump()).expect("graph dump serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_dump(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_text(path, &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&io::read_text(path)?)
    }
}
