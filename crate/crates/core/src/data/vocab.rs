use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Record;
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SELF_RELATION: &str = "self";

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Sorts `(item, count)` by count descending, then item ascending.
fn ranked(counts: HashMap<&str, usize>) -> Vec<String> {
    let mut items: Vec<(&str, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    items.into_iter().map(|(s, _)| s.to_owned()).collect()
}

fn index_of(items: &[String]) -> HashMap<String, usize> {
    items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Word vocabulary over normalized forms; ids 0 and 1 are PAD and UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_freq: usize,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab { index: index_of(&r.tokens), tokens: r.tokens, min_freq: r.min_freq }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { min_freq: v.min_freq, tokens: v.tokens }
    }
}

impl Vocab {
    pub fn from_tokens(kept: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(kept);
        Vocab { index: index_of(&tokens), tokens, min_freq }
    }

    /// Id of a normalized form; unseen forms map to [`UNK`].
    pub fn lookup(&self, normalized: &str) -> usize {
        match self.index.get(normalized) {
            Some(&id) if id > UNK => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Kept tokens with their ids (PAD and UNK excluded).
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().enumerate().skip(2).map(|(i, s)| (i, s.as_str()))
    }
}

/// Directed relation labels (`rel:fwd`, `rel:bwd`) plus `self`.
///
/// `rel:fwd` is received by the dependent from its head; `rel:bwd` by the head
/// from its dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct RelationVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for RelationVocab {
    fn from(labels: Vec<String>) -> Self {
        RelationVocab { index: index_of(&labels), labels }
    }
}

impl From<RelationVocab> for Vec<String> {
    fn from(v: RelationVocab) -> Self {
        v.labels
    }
}

impl RelationVocab {
    /// `self` first, then a `fwd`/`bwd` pair per base relation, in the given
    /// order.
    pub fn from_base_relations<S: AsRef<str>>(bases: &[S]) -> Self {
        let mut labels = vec![SELF_RELATION.to_owned()];
        for b in bases {
            labels.push(Self::forward(b.as_ref()));
            labels.push(Self::backward(b.as_ref()));
        }
        RelationVocab::from(labels)
    }

    pub fn forward(relation: &str) -> String {
        format!("{relation}:fwd")
    }

    pub fn backward(relation: &str) -> String {
        format!("{relation}:bwd")
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn self_id(&self) -> usize {
        self.index[SELF_RELATION]
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct GenreVocab {
    genres: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for GenreVocab {
    fn from(genres: Vec<String>) -> Self {
        GenreVocab { index: index_of(&genres), genres }
    }
}

impl From<GenreVocab> for Vec<String> {
    fn from(v: GenreVocab) -> Self {
        v.genres
    }
}

impl GenreVocab {
    pub fn id(&self, genre: &str) -> Option<usize> {
        self.index.get(genre).copied()
    }

    pub fn genre(&self, id: usize) -> Option<&str> {
        self.genres.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.genres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genres.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    pub words: Vocab,
    pub relations: RelationVocab,
    pub genres: GenreVocab,
}

/// Builds word, relation and genre vocabularies. Ids are assigned by
/// frequency (descending) and then lexicographically; root arcs contribute no
/// relation.
pub fn build_vocabs(records: &[Record], min_freq: usize) -> Result<Vocabs> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut words: HashMap<&str, usize> = HashMap::new();
    let mut relations: HashMap<&str, usize> = HashMap::new();
    let mut genres: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for t in &r.tokens {
            *words.entry(&t.normalized).or_default() += 1;
        }
        for a in r.arcs.iter().filter(|a| !a.is_root()) {
            *relations.entry(&a.relation).or_default() += 1;
        }
        for g in &r.genres {
            *genres.entry(g).or_default() += 1;
        }
    }
    words.retain(|_, c| *c >= min_freq.max(1));
    Ok(Vocabs {
        words: Vocab::from_tokens(ranked(words), min_freq),
        relations: RelationVocab::from_base_relations(&ranked(relations)),
        genres: GenreVocab::from(ranked(genres)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arc, Token};

    fn record(words: &[&str], arcs: &[(usize, usize, &str)], genres: &[&str]) -> Record {
        Record {
            id: "t".into(),
            tokens: words.iter().map(|w| Token::new(*w)).collect(),
            arcs: arcs.iter().map(|&(h, d, r)| Arc::new(h, d, r)).collect(),
            genres: genres.iter().map(|g| g.to_string()).collect(),
            label: 0,
        }
    }

    #[test]
    fn relation_inventory_enumeration() {
        let recs = vec![record(&["Kim", "ate", "rice"], &[(2, 1, "nsubj"), (0, 2, "root"), (2, 3, "dobj")], &["x"])];
        let v = build_vocabs(&recs, 1).unwrap();
        assert_eq!(v.relations.labels(), &["self", "dobj:fwd", "dobj:bwd", "nsubj:fwd", "nsubj:bwd"]);
        assert_eq!(v.relations.len(), 5);
        assert_eq!(v.relations.self_id(), 0);
    }

    #[test]
    fn forty_one_relations_give_83_labels() {
        let n = 42;
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let rels: Vec<String> = (1..n).map(|i| format!("rel{i}")).collect();
        let mut arcs = vec![(0, 1, "root")];
        for (i, r) in rels.iter().enumerate() {
            arcs.push((1, i + 2, r.as_str()));
        }
        let w: Vec<&str> = words.iter().map(String::as_str).collect();
        let v = build_vocabs(&[record(&w, &arcs, &[])], 1).unwrap();
        assert_eq!(v.relations.len(), 83);
        assert_eq!(v.relations.len() % 2, 1);
    }

    #[test]
    fn word_vocab_frequency_and_unk() {
        let recs = vec![record(&["The", "cat"], &[], &[]), record(&["the", "dog"], &[], &[])];
        let all = build_vocabs(&recs, 1).unwrap();
        assert_eq!(all.words.len(), 2 + 3);
        assert_eq!(all.words.token(2), Some("the"));
        assert_eq!(all.words.lookup("cat"), 3);
        assert_eq!(all.words.lookup("zebra"), UNK);
        assert_eq!(all.words.lookup("<pad>"), UNK);

        let frequent = build_vocabs(&recs, 2).unwrap();
        assert_eq!(frequent.words.len(), 3);
        assert_eq!(frequent.words.lookup("dog"), UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocabs(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn serde_round_trip() {
        let recs = vec![record(&["a", "b"], &[(0, 1, "root"), (1, 2, "amod")], &["g1", "g2"])];
        let v = build_vocabs(&recs, 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabs = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
