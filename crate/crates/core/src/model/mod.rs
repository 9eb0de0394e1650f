//! The spoiler classifier: word embeddings, a bi-directional LSTM, `k`
//! relation-aware attention layers over the dependency graph, genre-aware
//! pooling, and a logistic output.
//!
//! Two comparison variants share the same code path:
//! - `gating`: each edge gets an unnormalized sigmoid gate from the inner
//!   product of the receiver's feature and a relation embedding, over only
//!   three relations (forward, backward, self).
//! - `collapsed`: attention as usual, but every non-self relation maps to one
//!   label, leaving topology and removing relation type.

mod forward;

use serde::{Deserialize, Serialize};

pub use forward::{ForwardOutput, RelationTables, TapeOutput};

use crate::data::{EmbeddingMatrix, RelationVocab, Vocabs, SELF_RELATION};
use crate::numcore::{ParamId, ParamStore, Rng, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Attention,
    Gating,
    Collapsed,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Mode::Attention),
            "gating" => Ok(Mode::Gating),
            "collapsed" | "collapsed-relations" => Ok(Mode::Collapsed),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected attention, gating or collapsed)"))),
        }
    }
}

impl Mode {
    /// Maps relation-vocabulary ids to the ids this mode's parameters use.
    pub fn relation_map(self, relations: &RelationVocab) -> Vec<usize> {
        relations
            .labels()
            .iter()
            .enumerate()
            .map(|(id, label)| match self {
                Mode::Attention => id,
                Mode::Collapsed => usize::from(label != SELF_RELATION),
                Mode::Gating if label == SELF_RELATION => 0,
                Mode::Gating if label.ends_with(":fwd") => 1,
                Mode::Gating => 2,
            })
            .collect()
    }

    /// Number of relation slots this mode's parameters hold.
    pub fn relation_count(self, relations: &RelationVocab) -> usize {
        match self {
            Mode::Attention => relations.len(),
            Mode::Collapsed => 2,
            Mode::Gating => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdgnnConfig {
    /// Hidden size; each LSTM direction gets `d / 2`.
    pub d: usize,
    pub d_word: usize,
    /// Number of graph layers.
    pub k: usize,
    /// Relation slots (`|L|`) in the parameters.
    pub num_relations: usize,
    pub vocab_size: usize,
    pub num_genres: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub mode: Mode,
    pub max_len: usize,
    /// One set of relation embeddings and biases for all layers instead of one
    /// per layer.
    #[serde(default)]
    pub share_relations: bool,
}

impl Default for SdgnnConfig {
    fn default() -> Self {
        SdgnnConfig {
            d: 64,
            d_word: 100,
            k: 2,
            num_relations: 1,
            vocab_size: 2,
            num_genres: 0,
            dropout: 0.5,
            leaky_slope: 0.01,
            mode: Mode::Attention,
            max_len: crate::graphbuild::MAX_LEN,
            share_relations: false,
        }
    }
}

impl SdgnnConfig {
    /// Fills the vocabulary-dependent sizes from `vocabs`.
    pub fn with_vocabs(mut self, vocabs: &Vocabs) -> Self {
        self.num_relations = self.mode.relation_count(&vocabs.relations);
        self.vocab_size = vocabs.words.len();
        self.num_genres = vocabs.genres.len();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d must be even and positive, got {}", self.d));
        }
        if self.d_word == 0 {
            return bad("d_word must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.num_relations == 0 {
            return bad("need at least one relation".into());
        }
        if self.vocab_size < 2 {
            return bad("vocabulary must hold PAD and UNK".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky slope must be finite".into());
        }
        if self.max_len == 0 || self.max_len > crate::graphbuild::MAX_LEN {
            return bad(format!("max_len must be in 1..={}", crate::graphbuild::MAX_LEN));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.d / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// `U(-√(1/fan_in), √(1/fan_in))`
    Uniform(usize),
    Zeros,
    /// `N(0, 0.1²)`
    Normal,
    /// `N(0, 1)` with a zero PAD row; used when no pretrained vectors are given.
    Word,
    /// Zeros except the forget-gate slice of an LSTM bias, which is one.
    ForgetBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize], decay: bool, init: Init) -> Self {
        ParamSpec { name: name.into(), shape: shape.to_vec(), decay, init }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

fn layer_rel_prefix(config: &SdgnnConfig, layer: usize) -> String {
    if config.share_relations {
        "gnn.shared".into()
    } else {
        format!("gnn.{layer}")
    }
}

/// Every trainable array the configuration implies, in creation order.
pub fn param_specs(config: &SdgnnConfig) -> Vec<ParamSpec> {
    let (d, h, l) = (config.d, config.hidden(), config.num_relations);
    let mut specs = vec![ParamSpec::new("embed.word", &[config.vocab_size, config.d_word], false, Init::Word)];
    for dir in ["fwd", "bwd"] {
        specs.push(ParamSpec::new(
            format!("lstm.{dir}.w_ih"),
            &[config.d_word, 4 * h],
            true,
            Init::Uniform(config.d_word),
        ));
        specs.push(ParamSpec::new(format!("lstm.{dir}.w_hh"), &[h, 4 * h], true, Init::Uniform(h)));
        specs.push(ParamSpec::new(format!("lstm.{dir}.b"), &[4 * h], false, Init::ForgetBias));
    }
    for layer in 0..config.k {
        specs.push(ParamSpec::new(format!("gnn.{layer}.w"), &[d, d], true, Init::Uniform(d)));
        specs.push(ParamSpec::new(format!("gnn.{layer}.b"), &[d], false, Init::Zeros));
        if config.mode != Mode::Gating {
            specs.push(ParamSpec::new(format!("gnn.{layer}.w_att"), &[d, d], true, Init::Uniform(d)));
        }
        if !config.share_relations || layer == 0 {
            let prefix = layer_rel_prefix(config, layer);
            specs.push(ParamSpec::new(format!("{prefix}.rel_emb"), &[l, d], false, Init::Normal));
            specs.push(ParamSpec::new(format!("{prefix}.rel_bias"), &[l], false, Init::Zeros));
        }
    }
    specs.push(ParamSpec::new("genre.emb", &[config.num_genres, d], false, Init::Normal));
    specs.push(ParamSpec::new("pool.w", &[d, d], true, Init::Uniform(d)));
    specs.push(ParamSpec::new("cls.w", &[d, 1], true, Init::Uniform(d)));
    specs.push(ParamSpec::new("cls.b", &[1], false, Init::Zeros));
    specs
}

/// Exact trainable-parameter counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    /// Per named array, in creation order.
    pub groups: Vec<(String, usize)>,
    /// Graph-layer arrays whose size does not involve `|L|` (`W`, `b`, `W_att`).
    pub gnn_relation_independent: usize,
    /// Graph-layer arrays sized by `|L|` (relation embeddings and biases).
    pub gnn_relation_dependent: usize,
}

impl ParamCount {
    pub fn group(&self, name: &str) -> Option<usize> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

pub fn param_count(config: &SdgnnConfig) -> ParamCount {
    let specs = param_specs(config);
    let mut count = ParamCount {
        total: 0,
        groups: Vec::with_capacity(specs.len()),
        gnn_relation_independent: 0,
        gnn_relation_dependent: 0,
    };
    for s in &specs {
        let n = s.size();
        count.total += n;
        if s.name.starts_with("gnn.") {
            if s.name.ends_with(".rel_emb") || s.name.ends_with(".rel_bias") {
                count.gnn_relation_dependent += n;
            } else {
                count.gnn_relation_independent += n;
            }
        }
        count.groups.push((s.name.clone(), n));
    }
    count
}

#[derive(Clone, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct LayerIds {
    w: ParamId,
    b: ParamId,
    w_att: Option<ParamId>,
    rel_emb: ParamId,
    rel_bias: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    word_emb: ParamId,
    lstm: [LstmIds; 2],
    layers: Vec<LayerIds>,
    genre_emb: ParamId,
    pool_w: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// Network structure bound to parameter ids in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sdgnn {
    config: SdgnnConfig,
    relation_map: Vec<usize>,
    ids: ParamIds,
}

impl Sdgnn {
    /// Fresh parameters. Word embeddings come from `embeddings` when given.
    pub fn init(
        config: SdgnnConfig,
        relation_map: Vec<usize>,
        embeddings: Option<&EmbeddingMatrix>,
        rng: &mut Rng,
    ) -> Result<(Sdgnn, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        for spec in param_specs(&config) {
            let value = if let Some(m) = embeddings.filter(|_| spec.name == "embed.word") {
                if m.values.shape() != spec.shape.as_slice() {
                    return Err(Error::Shape {
                        op: "word embeddings",
                        left: m.values.shape().to_vec(),
                        right: spec.shape.clone(),
                    });
                }
                m.values.clone()
            } else {
                init_value(&spec, &config, rng)
            };
            store.add(spec.name, value, spec.decay);
        }
        let net = Sdgnn::bind(config, relation_map, &store)?;
        Ok((net, store))
    }

    /// Binds to an existing store (e.g. one loaded from a checkpoint),
    /// checking every expected array is present with the right shape.
    pub fn bind(config: SdgnnConfig, relation_map: Vec<usize>, store: &ParamStore) -> Result<Sdgnn> {
        config.validate()?;
        if let Some(&bad) = relation_map.iter().find(|&&r| r >= config.num_relations) {
            return Err(Error::RelationId { id: bad, count: config.num_relations });
        }
        for spec in param_specs(&config) {
            let id = store.find(&spec.name).ok_or_else(|| Error::Config(format!("missing parameter {}", spec.name)))?;
            if store.value(id).shape() != spec.shape.as_slice() {
                return Err(Error::Shape { op: "bind", left: store.value(id).shape().to_vec(), right: spec.shape });
            }
        }
        let id = |name: &str| store.find(name).expect("checked above");
        let lstm = |dir: &str| LstmIds {
            w_ih: id(&format!("lstm.{dir}.w_ih")),
            w_hh: id(&format!("lstm.{dir}.w_hh")),
            b: id(&format!("lstm.{dir}.b")),
        };
        let layers = (0..config.k)
            .map(|l| {
                let prefix = layer_rel_prefix(&config, l);
                LayerIds {
                    w: id(&format!("gnn.{l}.w")),
                    b: id(&format!("gnn.{l}.b")),
                    w_att: (config.mode != Mode::Gating).then(|| id(&format!("gnn.{l}.w_att"))),
                    rel_emb: id(&format!("{prefix}.rel_emb")),
                    rel_bias: id(&format!("{prefix}.rel_bias")),
                }
            })
            .collect();
        let ids = ParamIds {
            word_emb: id("embed.word"),
            lstm: [lstm("fwd"), lstm("bwd")],
            layers,
            genre_emb: id("genre.emb"),
            pool_w: id("pool.w"),
            cls_w: id("cls.w"),
            cls_b: id("cls.b"),
        };
        Ok(Sdgnn { config, relation_map, ids })
    }

    pub fn config(&self) -> &SdgnnConfig {
        &self.config
    }

    pub fn relation_map(&self) -> &[usize] {
        &self.relation_map
    }
}

fn init_value(spec: &ParamSpec, config: &SdgnnConfig, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(&spec.shape);
    match spec.init {
        Init::Zeros => {}
        Init::Uniform(fan_in) => {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        }
        Init::Normal => t.data_mut().iter_mut().for_each(|v| *v = rng.normal(0.0, 0.1)),
        Init::Word => {
            t.data_mut().iter_mut().for_each(|v| *v = rng.normal(0.0, 1.0));
            let cols = spec.shape[1];
            t.data_mut()[crate::data::PAD * cols..(crate::data::PAD + 1) * cols].fill(0.0);
        }
        Init::ForgetBias => {
            let h = config.hidden();
            t.data_mut()[h..2 * h].fill(1.0);
        }
    }
    t
}
