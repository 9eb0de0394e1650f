use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Record;
use crate::{Error, Result};

/// Per-corpus counts in the shape of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_sentences: usize,
    /// Directed relation labels plus `self`: `2 × distinct relations + 1`.
    pub num_edge_types: usize,
    pub num_genres: usize,
    pub avg_nodes_per_sentence: f64,
    /// Directed non-self edges: two per non-root arc.
    pub avg_edges_per_sentence: f64,
    pub avg_genres_per_sentence: f64,
    pub spoiler_ratio: f64,
}

pub fn corpus_stats(records: &[Record]) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = records.len() as f64;
    let mut relations = BTreeSet::new();
    let mut genres = BTreeSet::new();
    let (mut nodes, mut edges, mut genre_total, mut positives) = (0usize, 0usize, 0usize, 0usize);
    for r in records {
        nodes += r.tokens.len();
        for a in r.arcs.iter().filter(|a| !a.is_root()) {
            edges += 2;
            relations.insert(a.relation.as_str());
        }
        genre_total += r.genres.len();
        genres.extend(r.genres.iter().map(String::as_str));
        positives += usize::from(r.label);
    }
    Ok(CorpusStats {
        num_sentences: records.len(),
        num_edge_types: 2 * relations.len() + 1,
        num_genres: genres.len(),
        avg_nodes_per_sentence: nodes as f64 / n,
        avg_edges_per_sentence: edges as f64 / n,
        avg_genres_per_sentence: genre_total as f64 / n,
        spoiler_ratio: positives as f64 / n,
    })
}
