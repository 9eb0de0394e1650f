//! Corpus ingestion: CoNLL-U parses, line-delimited JSON records, word
//! vectors, vocabularies, corpus statistics, and the synthetic twin corpus.

mod conllu;
mod dataset;
mod stats;
mod synth;
mod vectors;
mod vocab;

pub use conllu::{parse_conllu, write_conllu, ParsedSentence};
pub use dataset::{
    load_dataset, load_unlabeled, parse_dataset, parse_unlabeled, record_to_json, write_dataset, LoadReport,
    RecordError,
};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{synth_corpus, SYNTH_GENRES};
pub use vectors::{load_word_vectors, parse_word_vectors, EmbeddingMatrix};
pub use vocab::{build_vocabs, GenreVocab, RelationVocab, Vocab, Vocabs, PAD, SELF_RELATION, UNK};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Lowercased surface form, used for vocabulary lookup.
    pub normalized: String,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let normalized = surface.to_lowercase();
        Token { surface, normalized }
    }
}

/// A dependency arc. Positions are 1-based; `head == 0` marks the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arc {
    pub head: usize,
    pub dependent: usize,
    pub relation: String,
}

impl Arc {
    pub fn new(head: usize, dependent: usize, relation: impl Into<String>) -> Self {
        Arc { head, dependent, relation: relation.into() }
    }

    pub fn is_root(&self) -> bool {
        self.head == 0
    }
}

/// One labeled sentence: tokens, its parse, the genres of the work it
/// belongs to, and the spoiler label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub tokens: Vec<Token>,
    pub arcs: Vec<Arc>,
    pub genres: Vec<String>,
    pub label: u8,
}

impl Record {
    /// Checks label range, token forms, arc ranges and the single-head
    /// property.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Record { id: self.id.clone(), message });
        if self.label > 1 {
            return fail(format!("label {} outside {{0, 1}}", self.label));
        }
        if self.tokens.is_empty() {
            return fail("no tokens".into());
        }
        if let Some(i) = self.tokens.iter().position(|t| t.normalized.is_empty()) {
            return fail(format!("token {} is empty", i + 1));
        }
        let n = self.tokens.len();
        let mut seen = vec![false; n + 1];
        for arc in &self.arcs {
            if arc.dependent == 0 || arc.dependent > n {
                return fail(format!("arc dependent {} outside [1, {n}]", arc.dependent));
            }
            if arc.head > n {
                return fail(format!("arc head {} outside [0, {n}]", arc.head));
            }
            if arc.head == arc.dependent {
                return fail(format!("arc head equals dependent ({})", arc.head));
            }
            if std::mem::replace(&mut seen[arc.dependent], true) {
                return fail(format!("token {} has more than one head", arc.dependent));
            }
        }
        Ok(())
    }
}
