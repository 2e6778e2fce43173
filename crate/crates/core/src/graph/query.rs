use super::{Direction, PropertyGraph};
use crate::error::Result;

/// One `(title, embedding, genre)` row of a genre-filtered embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct GenreEmbeddingRow {
    pub title: String,
    pub embedding: Vec<f64>,
    pub genre: String,
}

/// Embeddings stored under `property` for movies linked by `OF_GENRE` to one
/// of `genres`. Movies without the property are skipped. Rows come out in
/// ascending movie id, then genre id.
pub fn movie_embeddings_by_genre(
    graph: &PropertyGraph,
    property: &str,
    genres: &[&str],
) -> Result<Vec<GenreEmbeddingRow>> {
    let mut rows = Vec::new();
    for movie in graph.nodes_with_label("Movie") {
        let node = graph.node(movie)?;
        let Some(embedding) = node.property(property).and_then(|v| v.as_vector()) else {
            continue;
        };
        let title = node
            .property("title")
            .and_then(|v| v.as_text())
            .unwrap_or_default();
        for genre in graph.neighbors(movie, "OF_GENRE", Direction::Out)? {
            let g = graph.node(genre)?;
            if g.label != "Genre" {
                continue;
            }
            if let Some(name) = g.property("name").and_then(|v| v.as_text()) {
                if genres.contains(&name) {
                    rows.push(GenreEmbeddingRow {
                        title: title.to_owned(),
                        embedding: embedding.to_vec(),
                        genre: name.to_owned(),
                    });
                }
            }
        }
    }
    Ok(rows)
}
