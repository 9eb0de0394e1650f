//! Plain-Rust side of the demo. Everything here runs natively too, which is
//! how it is tested.

use serde::Serialize;

use sdgnn::data::{build_vocabs, synth_corpus, Record, RelationVocab, Vocabs};
use sdgnn::eval::auroc;
use sdgnn::graphbuild::{make_batch, DepGraph, Edge};
use sdgnn::model::{Mode, Sdgnn, SdgnnConfig};
use sdgnn::numcore::{ParamStore, Rng, Tape, Tensor};
use sdgnn::train::{predict, train_epoch, AdamState, TrainConfig};

pub type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const BASES: [&str; 3] = ["nsubj", "dobj", "amod"];
const D: usize = 8;

#[derive(Debug, Serialize)]
pub struct MechanismComparison {
    /// Relation label of each edge into the centre node, self-loop included.
    pub relations: Vec<String>,
    pub attention: Vec<f64>,
    pub gating: Vec<f64>,
    pub attention_sum: f64,
    pub gating_sum: f64,
}

fn scaled_model(mode: Mode, relations: &RelationVocab, scale: f64, seed: u64) -> DemoResult<(Sdgnn, ParamStore)> {
    let cfg = SdgnnConfig {
        d: D,
        d_word: D,
        k: 1,
        num_relations: mode.relation_count(relations),
        vocab_size: 2,
        num_genres: 1,
        dropout: 0.0,
        mode,
        ..SdgnnConfig::default()
    };
    let (net, mut store) = Sdgnn::init(cfg, mode.relation_map(relations), None, &mut Rng::new(seed)).map_err(err)?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.normal(0.0, scale);
        }
    }
    Ok((net, store))
}

/// Edge weights into the centre of a star graph under relation attention and
/// under the gating baseline, from the same random node features. Attention
/// always sums to one per receiver; gates need not.
pub fn compare_mechanisms(seed: u64, neighbors: usize, scale: f64) -> DemoResult<MechanismComparison> {
    if neighbors == 0 || neighbors > 12 {
        return Err("neighbors must be between 1 and 12".into());
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err("scale must be positive".into());
    }
    let vocab = RelationVocab::from_base_relations(&BASES);
    let mut rng = Rng::new(seed);
    let n = neighbors + 1;
    let mut edges: Vec<Edge> = (0..n).map(|u| Edge { receiver: u, neighbor: u, relation: vocab.self_id() }).collect();
    for v in 1..n {
        edges.push(Edge { receiver: 0, neighbor: v, relation: 1 + rng.below(vocab.len() - 1) });
    }
    let graph = DepGraph::new(n, edges).map_err(err)?;
    let h: Vec<f64> = (0..n * D).map(|_| rng.normal(0.0, 1.0)).collect();
    let h = Tensor::new(vec![n, D], h).map_err(err)?;

    let weights = |mode: Mode| -> DemoResult<Vec<f64>> {
        let (net, store) = scaled_model(mode, &vocab, scale, seed)?;
        let mut tape = Tape::new(&store);
        let hv = tape.constant(h.clone());
        let tables = net.relation_tables(&mut tape, 0).map_err(err)?;
        let w = match mode {
            Mode::Gating => net.gating_scores(&mut tape, hv, &graph, &tables),
            _ => net
                .relation_attention(&mut tape, hv, &graph, &tables)
                .and_then(|raw| Sdgnn::normalize_attention(&mut tape, raw, &graph)),
        }
        .map_err(err)?;
        Ok(tape.value(w).data()[graph.offsets()[0]..graph.offsets()[1]].to_vec())
    };
    let attention = weights(Mode::Attention)?;
    let gating = weights(Mode::Gating)?;
    let relations = graph.incoming(0).iter().map(|e| vocab.label(e.relation).unwrap_or("?").to_owned()).collect();
    Ok(MechanismComparison {
        relations,
        attention_sum: attention.iter().sum(),
        gating_sum: gating.iter().sum(),
        attention,
        gating,
    })
}

#[derive(Debug, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub test_auroc: f64,
}

/// Trains one model on the synthetic twin corpus, an epoch per call.
pub struct SynthRun {
    net: Sdgnn,
    store: ParamStore,
    adam: AdamState,
    rng: Rng,
    vocabs: Vocabs,
    config: TrainConfig,
    train: Vec<Record>,
    test: Vec<Record>,
    epoch: usize,
}

#[derive(Debug, Serialize)]
pub struct EdgeView {
    pub head: usize,
    pub dependent: usize,
    pub relation: String,
    /// Attention on the head→dependent edge, one value per layer.
    pub weights: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TwinView {
    pub id: String,
    pub label: u8,
    pub y_hat: f64,
    pub tokens: Vec<String>,
    pub pooling: Vec<f64>,
    pub arcs: Vec<EdgeView>,
    /// Index into `arcs` of the edge that differs between the twins.
    pub key_arc: usize,
}

impl SynthRun {
    pub fn new(mode: Mode, seed: u64, n_train: usize, lr: f64) -> DemoResult<SynthRun> {
        if !(20..=400).contains(&n_train) {
            return Err("training set size must be between 20 and 400".into());
        }
        let train = synth_corpus(n_train, seed);
        let test = synth_corpus(100, seed + 1);
        let vocabs = build_vocabs(&train, 1).map_err(err)?;
        let cfg =
            SdgnnConfig { d: 16, d_word: 16, k: 2, dropout: 0.0, mode, ..SdgnnConfig::default() }.with_vocabs(&vocabs);
        let (net, store) =
            Sdgnn::init(cfg, mode.relation_map(&vocabs.relations), None, &mut Rng::new(seed)).map_err(err)?;
        let config = TrainConfig { lr, batch_size: 32, seed, ..TrainConfig::default() };
        config.validate().map_err(err)?;
        Ok(SynthRun {
            adam: AdamState::new(&store),
            rng: Rng::new(seed),
            net,
            store,
            vocabs,
            config,
            train,
            test,
            epoch: 0,
        })
    }

    pub fn step(&mut self) -> DemoResult<EpochReport> {
        self.epoch += 1;
        let loss = train_epoch(
            &self.net,
            &mut self.store,
            &mut self.adam,
            &mut self.rng,
            &self.vocabs,
            &self.train,
            &self.config,
            self.epoch,
        )
        .map_err(err)?;
        let probs = predict(&self.net, &self.store, &self.vocabs, &self.test).map_err(err)?;
        let labels: Vec<u8> = self.test.iter().map(|r| r.label).collect();
        Ok(EpochReport { epoch: self.epoch, loss, test_auroc: auroc(&probs, &labels).map_err(err)? })
    }

    pub fn pairs(&self) -> usize {
        self.test.len() / 2
    }

    /// The positive record of test pair `pair` and its negative twin.
    pub fn twins(&self, pair: usize) -> DemoResult<[TwinView; 2]> {
        if pair >= self.pairs() {
            return Err(format!("pair {pair} out of range, {} pairs", self.pairs()));
        }
        let pos = &self.test[2 * pair];
        let neg = &self.test[2 * pair + 1];
        let key_arc =
            pos.arcs.iter().zip(&neg.arcs).position(|(a, b)| a.relation != b.relation).ok_or("twins do not differ")?;
        Ok([self.view(pos, key_arc)?, self.view(neg, key_arc)?])
    }

    fn view(&self, record: &Record, key_arc: usize) -> DemoResult<TwinView> {
        let batch = make_batch(&[record], &self.vocabs, self.net.config().max_len).map_err(err)?;
        let out = self.net.forward(&self.store, &batch).map_err(err)?;
        let graph = &batch.graphs[0];
        let arcs = record
            .arcs
            .iter()
            .filter(|a| !a.is_root())
            .map(|a| {
                // the forward edge: the dependent receives from its head
                let idx = graph
                    .edges()
                    .iter()
                    .position(|e| e.receiver + 1 == a.dependent && e.neighbor + 1 == a.head)
                    .expect("every arc has a forward edge");
                EdgeView {
                    head: a.head,
                    dependent: a.dependent,
                    relation: a.relation.clone(),
                    weights: out.edge_weights[0].iter().map(|l| l[idx]).collect(),
                }
            })
            .collect::<Vec<_>>();
        let non_root_before = record.arcs[..key_arc].iter().filter(|a| !a.is_root()).count();
        Ok(TwinView {
            id: record.id.clone(),
            label: record.label,
            y_hat: out.probs[0],
            tokens: record.tokens.iter().map(|t| t.surface.clone()).collect(),
            pooling: out.pooling[0].clone(),
            arcs,
            key_arc: non_root_before,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_normalizes_and_gating_does_not() {
        let c = compare_mechanisms(3, 5, 1.5).unwrap();
        assert_eq!(c.relations.len(), 6);
        assert_eq!(c.relations[0], "self");
        assert!((c.attention_sum - 1.0).abs() < 1e-12);
        assert!(c.gating.iter().all(|&g| g > 0.0 && g < 1.0));
        assert!((c.gating_sum - 1.0).abs() > 1e-3);
        assert!(compare_mechanisms(3, 0, 1.0).is_err());
        assert!(compare_mechanisms(3, 2, -1.0).is_err());
    }

    #[test]
    fn stepping_is_deterministic() {
        let run = || {
            let mut r = SynthRun::new(Mode::Attention, 4, 40, 0.003).unwrap();
            (0..2).map(|_| r.step().unwrap().loss).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|l| l.is_finite() && *l > 0.0));
    }

    #[test]
    fn twins_differ_only_at_the_key_arc() {
        let run = SynthRun::new(Mode::Attention, 2, 40, 0.001).unwrap();
        let [pos, neg] = run.twins(0).unwrap();
        assert_eq!((pos.label, neg.label), (1, 0));
        assert_eq!(pos.tokens, neg.tokens);
        assert_eq!(pos.arcs[pos.key_arc].relation, "dobj");
        assert_eq!(neg.arcs[neg.key_arc].relation, "nsubj");
        assert!((pos.pooling.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pos.arcs.iter().all(|a| a.weights.len() == 2));
        assert!(run.twins(run.pairs()).is_err());
    }
}
