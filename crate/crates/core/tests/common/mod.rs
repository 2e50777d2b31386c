#![allow(dead_code)]

use std::sync::OnceLock;

use diagnose_re::corpus::{Dataset, EntityMention, Instance, LabelSpace, Span};
use diagnose_re::lexicon::Lexicon;
use diagnose_re::oracle::{train_reference, OracleHandle, ReferenceModel, TrainConfig};
use diagnose_re::synth::{generate, SynthConfig, SynthCorpus};
use proptest::prelude::*;

pub const WORDS: &[&str] = &[
    "the", "station", "lived", "in", "airport", "Penn", "city", "worked", "for", "and", "river", "small", "major",
    "was", "born", "a", "of", "road", "Smith", "york", "hub", ",", ".", "married", "founded",
];

pub const TYPES: &[&str] = &["PERSON", "LOCATION", "ORGANIZATION", "CITY", "UNKNOWN"];

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Instances with random lengths, gaps and entity order.
pub fn instance_strategy(labels: &'static [&'static str]) -> impl Strategy<Value = Instance> {
    (0usize..4, 1usize..4, 0usize..5, 1usize..4, 0usize..4, any::<bool>())
        .prop_flat_map(move |(pre, a, mid, b, post, head_first)| {
            let n = pre + a + mid + b + post;
            (
                prop::collection::vec(prop::sample::select(WORDS), n),
                prop::sample::select(TYPES),
                prop::sample::select(TYPES),
                prop::sample::select(labels),
                Just((pre, a, mid, b, head_first)),
            )
        })
        .prop_map(|(toks, ht, tt, label, (pre, a, mid, b, head_first))| {
            let tokens: Vec<String> = toks.into_iter().map(str::to_string).collect();
            let first = Span::new(pre, pre + a);
            let second = Span::new(pre + a + mid, pre + a + mid + b);
            let (hs, ts) = if head_first { (first, second) } else { (second, first) };
            let mention = |s: Span, t: &str| EntityMention::new(tokens[s.range()].join(" "), s, t);
            Instance::new(tokens.clone(), mention(hs, ht), mention(ts, tt), label).expect("valid by construction")
        })
}

pub fn dataset_strategy(labels: &'static [&'static str], max: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(instance_strategy(labels), 0..max).prop_map(|instances| {
        let mut labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        labels.sort();
        let na = labels.iter().find(|l| *l == "NA").cloned();
        let space = LabelSpace::new(labels, na).unwrap();
        Dataset::new(instances, space).unwrap()
    })
}

pub fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(Lexicon::bundled)
}

pub fn corpus() -> &'static SynthCorpus {
    static CORPUS: OnceLock<SynthCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate(lexicon(), &SynthConfig::default()).expect("synthetic corpus"))
}

pub fn model() -> &'static ReferenceModel {
    static MODEL: OnceLock<ReferenceModel> = OnceLock::new();
    MODEL.get_or_init(|| train_reference(&corpus().train, &TrainConfig::default()).expect("training"))
}

pub fn oracle() -> OracleHandle {
    OracleHandle::new(model().clone())
}
