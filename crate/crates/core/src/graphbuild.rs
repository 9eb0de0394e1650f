//! Records to labeled dependency graphs and padded batches.
//!
//! Each node `u` stores the `(neighbor, relation)` pairs it aggregates from.
//! An arc `head → dependent` with relation `r` gives the dependent a neighbor
//! `head` under `r:fwd` and the head a neighbor `dependent` under `r:bwd`.
//! Every node also receives from itself under `self`. Root arcs add nothing.

use std::rc::Rc;

use crate::data::{Record, RelationVocab, Vocabs};
use crate::numcore::Rng;
use crate::{Error, Result};

/// Maximum sentence length in tokens.
pub const MAX_LEN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub receiver: usize,
    pub neighbor: usize,
    pub relation: usize,
}

/// Edges grouped by receiver, CSR-style.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepGraph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
}

impl DepGraph {
    /// Groups `edges` by receiver, keeping their relative order.
    pub fn new(n: usize, mut edges: Vec<Edge>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| e.receiver >= n || e.neighbor >= n) {
            return Err(Error::Config(format!("edge {e:?} outside graph of {n} nodes")));
        }
        edges.sort_by_key(|e| e.receiver);
        let mut offsets = vec![0; n + 1];
        for e in &edges {
            offsets[e.receiver + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(DepGraph { n, edges, offsets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Segment boundaries: edges of receiver `u` are `offsets[u]..offsets[u+1]`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn incoming(&self, u: usize) -> &[Edge] {
        &self.edges[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn receivers(&self) -> Rc<[usize]> {
        self.edges.iter().map(|e| e.receiver).collect()
    }

    pub fn senders(&self) -> Rc<[usize]> {
        self.edges.iter().map(|e| e.neighbor).collect()
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { receiver: perm[e.receiver], neighbor: perm[e.neighbor], relation: e.relation })
            .collect();
        DepGraph::new(self.n, edges)
    }

    /// Sorted `(receiver, neighbor, relation)` triples.
    pub fn canonical_edges(&self) -> Vec<Edge> {
        let mut e = self.edges.clone();
        e.sort();
        e
    }
}

/// Builds the graph of a record truncated to its first `max_len` tokens.
/// Arcs touching a dropped token are dropped.
pub fn build_graph(record: &Record, relations: &RelationVocab, max_len: usize) -> Result<DepGraph> {
    let n = record.tokens.len().min(max_len);
    let self_id = relations
        .id(crate::data::SELF_RELATION)
        .ok_or_else(|| Error::Vocab("relation vocabulary lacks `self`".into()))?;
    let lookup = |label: String| {
        relations.id(&label).ok_or_else(|| Error::Vocab(format!("record {}: unknown relation {label}", record.id)))
    };

    let mut edges: Vec<Edge> = (0..n).map(|u| Edge { receiver: u, neighbor: u, relation: self_id }).collect();
    let mut has_head = vec![false; record.tokens.len() + 1];
    for arc in &record.arcs {
        if arc.dependent < has_head.len() && std::mem::replace(&mut has_head[arc.dependent], true) {
            return Err(Error::Record {
                id: record.id.clone(),
                message: format!("token {} has more than one head", arc.dependent),
            });
        }
        if arc.is_root() || arc.head > n || arc.dependent > n {
            continue;
        }
        let (h, d) = (arc.head - 1, arc.dependent - 1);
        edges.push(Edge { receiver: d, neighbor: h, relation: lookup(RelationVocab::forward(&arc.relation))? });
        edges.push(Edge { receiver: h, neighbor: d, relation: lookup(RelationVocab::backward(&arc.relation))? });
    }
    DepGraph::new(n, edges)
}

/// Padded, model-ready group of sentences.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub n_max: usize,
    /// `size × n_max` word ids, PAD beyond each sentence.
    pub token_ids: Vec<usize>,
    /// `size × n_max`, true exactly at real tokens.
    pub mask: Vec<bool>,
    pub graphs: Vec<DepGraph>,
    pub genre_ids: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn len_of(&self, b: usize) -> usize {
        self.graphs[b].n()
    }

    /// Word ids of the real tokens of sentence `b`.
    pub fn tokens(&self, b: usize) -> &[usize] {
        &self.token_ids[b * self.n_max..b * self.n_max + self.len_of(b)]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.n_max..(b + 1) * self.n_max]
    }
}

/// Batches `records` in the given order. Genres missing from the vocabulary
/// are ignored.
pub fn make_batch(records: &[&Record], vocabs: &Vocabs, max_len: usize) -> Result<Batch> {
    let max_len = max_len.min(MAX_LEN);
    let graphs = records.iter().map(|r| build_graph(r, &vocabs.relations, max_len)).collect::<Result<Vec<_>>>()?;
    let n_max = graphs.iter().map(DepGraph::n).max().unwrap_or(0);
    let mut token_ids = vec![crate::data::PAD; records.len() * n_max];
    let mut mask = vec![false; records.len() * n_max];
    for (b, (r, g)) in records.iter().zip(&graphs).enumerate() {
        for (i, t) in r.tokens.iter().take(g.n()).enumerate() {
            token_ids[b * n_max + i] = vocabs.words.lookup(&t.normalized);
            mask[b * n_max + i] = true;
        }
    }
    Ok(Batch {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        n_max,
        token_ids,
        mask,
        graphs,
        genre_ids: records.iter().map(|r| r.genres.iter().filter_map(|g| vocabs.genres.id(g)).collect()).collect(),
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// Splits `records` into batches of `batch_size`, shuffled by `shuffle_seed`
/// when given. The last batch may be smaller.
pub fn make_batches(
    records: &[Record],
    vocabs: &Vocabs,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    max_len: usize,
) -> Result<Vec<Batch>> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<&Record> = records.iter().collect();
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    order.chunks(batch_size).map(|chunk| make_batch(chunk, vocabs, max_len)).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::{build_vocabs, synth_corpus, Arc, Token};
    use crate::numcore::Rng;

    fn record(n: usize, arcs: &[(usize, usize, &str)]) -> Record {
        Record {
            id: format!("len{n}"),
            tokens: (0..n).map(|i| Token::new(format!("w{i}"))).collect(),
            arcs: arcs.iter().map(|&(h, d, r)| Arc::new(h, d, r)).collect(),
            genres: vec!["g".into()],
            label: 0,
        }
    }

    #[test]
    fn chain_of_three() {
        let r = record(3, &[(2, 1, "nsubj"), (0, 2, "root"), (2, 3, "dobj")]);
        let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
        let g = build_graph(&r, &v.relations, MAX_LEN).unwrap();
        assert_eq!(g.num_edges(), 7);
        let rel = |l: &str| v.relations.id(l).unwrap();
        assert_eq!(
            g.incoming(1),
            &[
                Edge { receiver: 1, neighbor: 1, relation: rel("self") },
                Edge { receiver: 1, neighbor: 0, relation: rel("nsubj:bwd") },
                Edge { receiver: 1, neighbor: 2, relation: rel("dobj:bwd") },
            ]
        );
        assert_eq!(g.incoming(2)[1], Edge { receiver: 2, neighbor: 1, relation: rel("dobj:fwd") });
    }

    #[test]
    fn single_token_self_loop_only() {
        let r = record(1, &[(0, 1, "root")]);
        let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
        let g = build_graph(&r, &v.relations, MAX_LEN).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn truncation_drops_far_arcs() {
        let mut arcs = vec![(0, 1, "root")];
        for d in 2..=59 {
            arcs.push((d - 1, d, "dep"));
        }
        arcs.push((2, 60, "far"));
        let r = record(60, &arcs);
        let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
        let g = build_graph(&r, &v.relations, MAX_LEN).unwrap();
        assert_eq!(g.n(), 50);
        // self loops + 49 in-range chain arcs in both directions
        assert_eq!(g.num_edges(), 50 + 2 * 49);
        assert!(g.edges().iter().all(|e| e.receiver < 50 && e.neighbor < 50));
    }

    #[test]
    fn duplicate_dependent_rejected() {
        let r = record(2, &[(0, 1, "root"), (1, 2, "a"), (0, 2, "b")]);
        let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
        assert!(matches!(build_graph(&r, &v.relations, MAX_LEN), Err(Error::Record { .. })));
    }

    #[test]
    fn batching_sizes_order_and_padding() {
        let recs = synth_corpus(5, 1);
        let v = build_vocabs(&recs, 1).unwrap();
        let sizes: Vec<usize> = make_batches(&recs, &v, 2, Some(4), MAX_LEN).unwrap().iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let order = |seed| -> Vec<String> {
            make_batches(&recs, &v, 2, Some(seed), MAX_LEN).unwrap().iter().flat_map(|b| b.ids.clone()).collect()
        };
        assert_eq!(order(9), order(9));
        let plain: Vec<String> =
            make_batches(&recs, &v, 2, None, MAX_LEN).unwrap().iter().flat_map(|b| b.ids.clone()).collect();
        assert_eq!(plain, recs.iter().map(|r| r.id.clone()).collect::<Vec<_>>());

        let short = record(3, &[(0, 1, "root"), (1, 2, "dep"), (1, 3, "dep")]);
        let long = record(7, &[(0, 1, "root")]);
        let v = build_vocabs(&[short.clone(), long.clone()], 1).unwrap();
        let b = make_batch(&[&short, &long], &v, MAX_LEN).unwrap();
        assert_eq!(b.n_max, 7);
        assert_eq!(b.mask_row(0).iter().filter(|&&m| m).count(), 3);
        assert_eq!(&b.token_ids[3..7], &[0, 0, 0, 0]);
        assert_eq!(b.tokens(1).len(), 7);
    }

    fn random_tree(parents: &[usize]) -> Record {
        // parents[i] in 0..=i picks the head of token i+2 among earlier tokens
        let n = parents.len() + 1;
        let mut arcs = vec![(0, 1, "root".to_string())];
        for (i, &p) in parents.iter().enumerate() {
            arcs.push((p % (i + 1) + 1, i + 2, format!("r{}", p % 3)));
        }
        Record {
            id: "tree".into(),
            tokens: (0..n).map(|i| Token::new(format!("t{i}"))).collect(),
            arcs: arcs.iter().map(|(h, d, r)| Arc::new(*h, *d, r.as_str())).collect(),
            genres: vec![],
            label: 1,
        }
    }

    proptest! {
        #[test]
        fn tree_edge_count_and_invariants(parents in prop::collection::vec(0usize..100, 0..30)) {
            let r = random_tree(&parents);
            let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
            let g = build_graph(&r, &v.relations, MAX_LEN).unwrap();
            let n = r.tokens.len();
            prop_assert_eq!(g.num_edges(), 2 * (n - 1) + n);
            let self_id = v.relations.self_id();
            for u in 0..n {
                let selfs = g.incoming(u).iter().filter(|e| e.neighbor == u && e.relation == self_id).count();
                prop_assert_eq!(selfs, 1);
            }
            for e in g.edges().iter().filter(|e| e.relation != self_id) {
                let label = v.relations.label(e.relation).unwrap();
                let mirror = label.strip_suffix(":fwd").map(|b| format!("{b}:bwd"))
                    .or_else(|| label.strip_suffix(":bwd").map(|b| format!("{b}:fwd"))).unwrap();
                let m = v.relations.id(&mirror).unwrap();
                prop_assert!(g.incoming(e.neighbor).iter().any(|x| x.neighbor == e.receiver && x.relation == m));
            }
        }

        #[test]
        fn permutation_gives_isomorphic_graph(parents in prop::collection::vec(0usize..100, 1..20), seed in 0u64..1000) {
            let r = random_tree(&parents);
            let v = build_vocabs(std::slice::from_ref(&r), 1).unwrap();
            let g = build_graph(&r, &v.relations, MAX_LEN).unwrap();
            let mut perm: Vec<usize> = (0..g.n()).collect();
            Rng::new(seed).shuffle(&mut perm);
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() { inverse[p] = i; }
            let back = g.permuted(&perm).unwrap().permuted(&inverse).unwrap();
            prop_assert_eq!(back.canonical_edges(), g.canonical_edges());
        }
    }
}
