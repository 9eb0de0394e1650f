use super::{Arc, Record, Token};
use crate::numcore::Rng;

pub const SYNTH_GENRES: [&str; 4] = ["fantasy", "romance", "mystery", "horror"];

const SUBJECTS: &[&str] = &[
    "knight",
    "queen",
    "detective",
    "captain",
    "wizard",
    "stranger",
    "doctor",
    "pilot",
    "sister",
    "king",
    "thief",
    "general",
];
const OBJECTS: &[&str] = &[
    "dragon", "mother", "letter", "ship", "village", "traitor", "child", "crown", "ghost", "soldier", "witness",
    "prince",
];
const VERBS: &[&str] = &[
    "killed",
    "saved",
    "betrayed",
    "found",
    "married",
    "poisoned",
    "rescued",
    "followed",
    "destroyed",
    "forgave",
    "trapped",
    "chased",
];
const ADVERBS: &[&str] = &["eventually", "suddenly", "viciously", "quietly", "finally", "secretly"];
const ADJECTIVES: &[&str] = &["old", "young", "brave", "cruel", "silent", "lost"];
const DETERMINERS: &[&str] = &["the", "a", "her", "his"];

/// Relation on the verb→patient arc of positive records.
pub(crate) const POSITIVE_RELATION: &str = "dobj";
/// Relation on the same arc of the negative twin.
pub(crate) const NEGATIVE_RELATION: &str = "nsubj";

struct Builder {
    tokens: Vec<Token>,
    arcs: Vec<Arc>,
}

impl Builder {
    fn word(&mut self, w: &str) -> usize {
        self.tokens.push(Token::new(w));
        self.tokens.len()
    }

    /// Optional determiner and adjective, then the noun; returns the noun's
    /// position.
    fn noun_phrase(&mut self, rng: &mut Rng, noun: &str) -> usize {
        let det = self.word(rng.choose(DETERMINERS));
        let adj = rng.bernoulli(0.5).then(|| self.word(rng.choose(ADJECTIVES)));
        let head = self.word(noun);
        self.arcs.push(Arc::new(head, det, "det"));
        if let Some(adj) = adj {
            self.arcs.push(Arc::new(head, adj, "amod"));
        }
        head
    }
}

/// Twin-pair corpus: each pair shares tokens, arc topology and genres, and
/// differs only in the relation on the verb→patient arc (`dobj` for the
/// spoiler, `nsubj` for its twin). Token sequences alone carry no label
/// information.
///
/// Records alternate positive, negative; an odd `n_records` drops the last
/// negative.
pub fn synth_corpus(n_records: usize, seed: u64) -> Vec<Record> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(n_records);
    let mut pair = 0;
    while out.len() < n_records {
        let mut b = Builder { tokens: Vec::new(), arcs: Vec::new() };
        let subject_noun = *rng.choose(SUBJECTS);
        let subject = b.noun_phrase(&mut rng, subject_noun);
        let adverb = rng.bernoulli(0.5).then(|| b.word(rng.choose(ADVERBS)));
        let verb = b.word(rng.choose(VERBS));
        let object_noun = *rng.choose(OBJECTS);
        let object = b.noun_phrase(&mut rng, object_noun);
        let period = b.word(".");

        b.arcs.push(Arc::new(verb, subject, "nsubj"));
        if let Some(adv) = adverb {
            b.arcs.push(Arc::new(verb, adv, "advmod"));
        }
        b.arcs.push(Arc::new(0, verb, "root"));
        b.arcs.push(Arc::new(verb, period, "punct"));
        let key_arc = b.arcs.len();
        b.arcs.push(Arc::new(verb, object, POSITIVE_RELATION));
        b.arcs.sort_by_key(|a| a.dependent);
        let key_arc = b.arcs.iter().position(|a| a.dependent == object && a.head == verb).unwrap_or(key_arc);

        let mut genres: Vec<String> = Vec::new();
        let count = 1 + rng.below(2);
        while genres.len() < count {
            let g = rng.choose(&SYNTH_GENRES).to_string();
            if !genres.contains(&g) {
                genres.push(g);
            }
        }

        let positive =
            Record { id: format!("synth-{seed}-{pair:05}-pos"), tokens: b.tokens, arcs: b.arcs, genres, label: 1 };
        let mut negative = positive.clone();
        negative.id = format!("synth-{seed}-{pair:05}-neg");
        negative.label = 0;
        negative.arcs[key_arc].relation = NEGATIVE_RELATION.to_owned();

        out.push(positive);
        if out.len() < n_records {
            out.push(negative);
        }
        pair += 1;
    }
    out
}
