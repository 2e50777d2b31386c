//! Planted-cue synthetic relation corpus.
//!
//! Every relation has a cue word group from the bundled synonym table: a dominant cue,
//! rarer seen variants and one held-out variant that never appears in generated text.
//! Entity names come from the bundled pools; a configurable share of mentions is drawn
//! from a label-specific slice of each pool, so names carry some label signal too.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Dataset, EntityMention, Instance, LabelSpace, ProvenanceEntry, Span};
use crate::error::Result;
use crate::lexicon::Lexicon;
use crate::oracle::derive_seed;

pub const NA: &str = "NA";

struct Relation {
    label: &'static str,
    types: &'static [(&'static str, &'static str)],
    /// Dominant cue first, then seen variants; the last entry is held out.
    cues: &'static [&'static [&'static str]],
}

/// Cue groups shared by two relations with different entity types; only the entity
/// names tell them apart.
const SHARED_CUES: &[(&[&str], [&str; 2])] = &[
    (&["resident", "inhabitant", "dweller", "occupant"], ["place_of_birth", "spouse"]),
    (&["says", "states", "declares", "tells"], ["cities_of_residence", "employee_of"]),
    (&["port", "harbor", "harbour", "dock"], ["place_served_by_transport_hub", "org_founded_by"]),
];

/// Relations whose label-specific names are sometimes borrowed from each other.
const SIBLINGS: &[[&str; 2]] = &[["place_of_birth", "cities_of_residence"], ["employee_of", "org_founded_by"]];

fn sibling(label: &str) -> Option<&'static str> {
    SIBLINGS.iter().find_map(|[a, b]| match label {
        l if l == *a => Some(*b),
        l if l == *b => Some(*a),
        _ => None,
    })
}

const RELATIONS: &[Relation] = &[
    Relation {
        label: "place_of_birth",
        types: &[("PERSON", "LOCATION")],
        cues: &[&["birthplace", "hometown", "cradle"]],
    },
    Relation {
        label: "cities_of_residence",
        types: &[("PERSON", "LOCATION")],
        cues: &[&["lives", "resides", "stays", "dwells"]],
    },
    Relation {
        label: "employee_of",
        types: &[("PERSON", "ORGANIZATION")],
        cues: &[&["employee", "worker", "staffer", "hand"]],
    },
    Relation {
        label: "org_founded_by",
        types: &[("ORGANIZATION", "PERSON")],
        cues: &[&["founding", "establishing", "creating", "starting"]],
    },
    Relation {
        label: "spouse",
        types: &[("PERSON", "PERSON")],
        cues: &[&["married", "wedded", "wed"]],
    },
    Relation {
        label: "place_served_by_transport_hub",
        types: &[("LOCATION", "LOCATION")],
        cues: &[&["airport", "airfield", "airstrip", "aerodrome"]],
    },
    Relation {
        label: NA,
        types: &[
            ("PERSON", "LOCATION"),
            ("PERSON", "PERSON"),
            ("PERSON", "ORGANIZATION"),
            ("ORGANIZATION", "PERSON"),
            ("LOCATION", "LOCATION"),
        ],
        cues: &[&["met", "saw", "greeted", "encountered"], &["visited", "toured", "attended"]],
    },
];

/// Label-neutral content words, all with synonyms in the bundled table.
const FILLERS: &[&str] = &[
    "popular", "young", "late", "north", "film", "family", "friend", "career", "book", "river", "church", "game",
    "building", "teacher", "government", "village",
];

const FUNCTION_WORDS: &[&str] = &["the", "of", "in", "a", "was", "is", "and", "with"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_per_label: usize,
    pub test_per_label: usize,
    /// Probability that a mention is drawn from its label's slice of the pool.
    pub specific_name_prob: f64,
    /// Probability that a cue is one of the seen variants rather than the dominant one.
    pub variant_prob: f64,
    /// Share of each pool reserved for names used by every label.
    pub shared_fraction: f64,
    /// Probability that a relation with a shared cue group uses it.
    pub shared_cue_prob: f64,
    /// NA instances generated per relation instance.
    pub na_ratio: usize,
    /// Probability that a label-specific mention uses the sibling relation's names.
    pub sibling_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            train_per_label: 200,
            test_per_label: 80,
            specific_name_prob: 0.95,
            variant_prob: 0.15,
            shared_fraction: 0.3,
            shared_cue_prob: 0.4,
            na_ratio: 3,
            sibling_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub test: Dataset,
}

/// Relation labels with their held-out cue variants.
pub fn held_out_cues() -> BTreeMap<&'static str, Vec<&'static str>> {
    RELATIONS
        .iter()
        .map(|r| {
            let groups = r.cues.iter().chain(shared_groups(r.label));
            (r.label, groups.map(|g| *g.last().expect("non-empty group")).collect())
        })
        .collect()
}

/// Dominant cue word per relation label.
pub fn dominant_cues() -> BTreeMap<&'static str, Vec<&'static str>> {
    RELATIONS.iter().map(|r| (r.label, r.cues.iter().map(|g| g[0]).collect())).collect()
}

fn shared_groups(label: &str) -> impl Iterator<Item = &'static &'static [&'static str]> + '_ {
    SHARED_CUES.iter().filter(move |(_, labels)| labels.contains(&label)).map(|(g, _)| g)
}

struct NameSlices {
    /// type -> (shared names, label -> names)
    by_type: BTreeMap<String, (Vec<String>, BTreeMap<&'static str, Vec<String>>)>,
}

impl NameSlices {
    fn new(lex: &Lexicon, config: &SynthConfig) -> Self {
        let mut by_type = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synth-names", 0));
        for etype in ["PERSON", "LOCATION", "ORGANIZATION"] {
            let labels: Vec<&'static str> = RELATIONS
                .iter()
                .filter(|r| r.label != NA && r.types.iter().any(|(h, t)| *h == etype || *t == etype))
                .map(|r| r.label)
                .collect();
            let mut names: Vec<String> = lex.pools.pool(etype).into_iter().cloned().collect();
            names.shuffle(&mut rng);
            let shared_n = ((names.len() as f64) * config.shared_fraction).round() as usize;
            let shared = names[..shared_n].to_vec();
            let rest = &names[shared_n..];
            let per = (rest.len() / labels.len()).max(1);
            let mut slices = BTreeMap::new();
            for (k, label) in labels.iter().enumerate() {
                let lo = (k * per).min(rest.len());
                let hi = ((k + 1) * per).min(rest.len());
                slices.insert(*label, rest[lo..hi].to_vec());
            }
            by_type.insert(etype.to_string(), (shared, slices));
        }
        NameSlices { by_type }
    }

    fn draw(&self, etype: &str, label: &'static str, specific: bool, rng: &mut ChaCha8Rng) -> String {
        let (shared, slices) = &self.by_type[etype];
        let pool = match slices.get(label) {
            Some(s) if specific && !s.is_empty() => s,
            _ => shared,
        };
        pool[rng.gen_range(0..pool.len())].clone()
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn sentence(rel: &Relation, names: &NameSlices, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (htype, ttype) = rel.types[rng.gen_range(0..rel.types.len())];
    let draw = |etype: &str, rng: &mut ChaCha8Rng| {
        let label = match sibling(rel.label) {
            Some(s) if rng.gen_bool(config.sibling_prob) => s,
            _ => rel.label,
        };
        names.draw(etype, label, rng.gen_bool(config.specific_name_prob), rng)
    };
    let head = draw(htype, rng);
    let mut tail = draw(ttype, rng);
    while tail.to_lowercase() == head.to_lowercase() {
        tail = draw(ttype, rng);
    }
    let group = match shared_groups(rel.label).next() {
        Some(g) if rng.gen_bool(config.shared_cue_prob) => *g,
        _ => rel.cues[rng.gen_range(0..rel.cues.len())],
    };
    let seen = &group[..group.len() - 1];
    let cue = if seen.len() > 1 && rng.gen_bool(config.variant_prob) {
        seen[rng.gen_range(1..seen.len())]
    } else {
        seen[0]
    };

    let mut middle: Vec<String> = vec![cue.to_string()];
    for _ in 0..rng.gen_range(1..=2) {
        middle.push(FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())].to_string());
    }
    for _ in 0..rng.gen_range(0..=1) {
        middle.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
    }
    middle.shuffle(rng);

    let mut tokens: Vec<String> = Vec::new();
    if rng.gen_bool(0.4) {
        tokens.extend(words(&format!("In {} ,", rng.gen_range(1900..2021))));
    }
    let head_first = rng.gen_bool(0.75);
    let (first, second) = if head_first { (&head, &tail) } else { (&tail, &head) };
    let first_span = Span::new(tokens.len(), tokens.len() + words(first).len());
    tokens.extend(words(first));
    tokens.extend(middle);
    let second_span = Span::new(tokens.len(), tokens.len() + words(second).len());
    tokens.extend(words(second));
    for _ in 0..rng.gen_range(0..=2) {
        tokens.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
    }
    tokens.push(".".into());
    let (hspan, tspan) = if head_first { (first_span, second_span) } else { (second_span, first_span) };
    Instance::new(
        tokens,
        EntityMention::new(head, hspan, htype),
        EntityMention::new(tail, tspan, ttype),
        rel.label,
    )
}

/// Generates the train and test splits.
pub fn generate(lex: &Lexicon, config: &SynthConfig) -> Result<SynthCorpus> {
    let names = NameSlices::new(lex, config);
    let mut labels: Vec<String> = RELATIONS.iter().map(|r| r.label.to_string()).collect();
    labels.sort();
    let space = LabelSpace::new(labels, Some(NA.to_string()))?;
    let split = |name: &str, per_label: usize| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, name, 0));
        let mut instances = Vec::with_capacity(per_label * RELATIONS.len());
        for _ in 0..per_label {
            for rel in RELATIONS {
                let copies = if rel.label == NA { config.na_ratio } else { 1 };
                for _ in 0..copies {
                    instances.push(sentence(rel, &names, config, &mut rng)?);
                }
            }
        }
        instances.shuffle(&mut rng);
        let mut ds = Dataset::new(instances, space.clone())?;
        ds.provenance.push(ProvenanceEntry::new("synthetic", json!({"split": name, "config": config})));
        Ok(ds)
    };
    let train = split("synth-train", config.train_per_label)?;
    let test = split("synth-test", config.test_per_label)?;
    Ok(SynthCorpus { train, test })
}
