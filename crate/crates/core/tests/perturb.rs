mod common;

use std::collections::BTreeMap;

use common::*;
use diagnose_re::corpus::{apply_edits, Instance, LabelSpace};
use diagnose_re::error::Result;
use diagnose_re::lexicon::{EntityPool, Lexicon};
use diagnose_re::oracle::{CapabilitySet, Handshake, OracleHandle, Transport, PROTOCOL_VERSION};
use diagnose_re::perturb::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LABELS: &[&str] = &["NA", "spouse"];

/// Fill-mask double that echoes the original token, punctuation and duplicates.
struct Filler {
    fills: Vec<String>,
}

impl Transport for Filler {
    fn handshake(&self) -> Result<Handshake> {
        Ok(Handshake {
            protocol: PROTOCOL_VERSION,
            label_space: LabelSpace::new(vec!["NA".into(), "spouse".into()], Some("NA".into())).unwrap(),
            capabilities: CapabilitySet { fill_mask: true, ..CapabilitySet::default() },
        })
    }

    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|_| vec![0.5, 0.5]).collect())
    }

    fn fill_mask(&self, _tokens: &[String], _position: usize, top: usize) -> Result<Vec<String>> {
        Ok(self.fills.iter().take(top).cloned().collect())
    }
}

fn replay_holds(source: &Instance, p: &PerturbedInstance) -> bool {
    apply_edits(&source.tokens, &p.edits).is_ok_and(|t| t == p.instance.tokens)
        && p.instance.label == source.label
        && p.instance.validate().is_ok()
}

#[test]
fn every_robust_instance_replays_and_keeps_label_and_types() {
    let lex = lexicon();
    let test = &corpus().test;
    let set = build_robust_set(test, PerturbMode::All, lex, None, &PerturbConfig { rate: 0.5, ..Default::default() }).unwrap();
    assert_eq!(set.robust.len(), set.report.entity.produced + set.report.context.produced);
    assert_eq!(set.robust.len(), set.perturbed.len());
    for p in &set.perturbed {
        let src = &test.instances[p.source_index];
        assert!(replay_holds(src, p), "replay failed for {}", p.source_index);
        assert_eq!(p.instance.head.etype, src.head.etype);
        assert_eq!(p.instance.tail.etype, src.tail.etype);
    }
    assert_eq!(set.audit.len(), 200);
}

#[test]
fn robust_sets_are_deterministic() {
    let lex = lexicon();
    let build = || {
        let s = build_robust_set(&corpus().test, PerturbMode::All, lex, None, &PerturbConfig::default()).unwrap();
        serde_json::to_string(&(s.robust, s.audit, s.report)).unwrap()
    };
    assert_eq!(build(), build());
}

#[test]
fn rate_zero_is_identity() {
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for inst in corpus().test.instances.iter().take(100) {
        let p = context_permute(inst, lex, None, &mut rng, 0.0).unwrap();
        assert!(p.edits.is_empty());
        assert_eq!(&p.instance, inst);
    }
}

#[test]
fn new_york_mask_fill_draws_from_the_lm_candidates() {
    let fills = ["small", "major", "port", "large"].map(String::from).to_vec();
    let o = OracleHandle::new(Filler { fills: fills.clone() });
    let tokens = words("New York is a big city in the United States");
    let got = mask_fill_candidates(&o, &tokens, 4, 2).unwrap();
    assert_eq!(got.len(), 2);
    assert!(got.iter().all(|c| fills.contains(c)));
    assert!(mask_fill_candidates(&o, &tokens, 4, 0).unwrap().is_empty());
}

fn name_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&["Ann", "Lee", "Van", "Der", "Berg", "Kim"][..]), 1..4)
        .prop_map(|v| v.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn context_edits_stay_strictly_between_entities(inst in instance_strategy(LABELS), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = context_permute(&inst, lexicon(), None, &mut rng, 1.0).unwrap();
        let between = inst.between_entities();
        for e in &p.edits {
            prop_assert!(between.contains(&e.position) && !inst.in_entity(e.position));
            prop_assert_ne!(&e.old, &e.new);
        }
        prop_assert!(replay_holds(&inst, &p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn entity_permutation_recomputes_spans(inst in instance_strategy(LABELS), names in prop::collection::vec(name_strategy(), 2..6), seed in any::<u64>()) {
        let mut inst = inst;
        inst.head.etype = "PERSON".into();
        inst.tail.etype = "CITY".into();
        let pools = EntityPool::from_pools(BTreeMap::from([
            ("PERSON".to_string(), names.clone()),
            ("CITY".to_string(), names),
        ])).unwrap();
        let lex = Lexicon { pools, ..lexicon().clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match entity_permute(&inst, &lex, &mut rng) {
            Ok(p) => {
                prop_assert!(replay_holds(&inst, &p));
                let out = &p.instance;
                prop_assert_eq!(out.tokens[out.head.span.range()].join(" "), out.head.name.clone());
                prop_assert_eq!(out.tokens[out.tail.span.range()].join(" "), out.tail.name.clone());
                prop_assert_eq!(&out.head.etype, "PERSON");
                prop_assert_eq!(&out.tail.etype, "CITY");
                // spans shift by the summed length change of edits that precede them
                for (old, new) in [(&inst.head, &out.head), (&inst.tail, &out.tail)] {
                    let shift: isize = p.edits.iter()
                        .filter(|e| e.position < old.span.start)
                        .map(|e| e.new.len() as isize - e.old.len() as isize)
                        .sum();
                    prop_assert_eq!(new.span.start as isize, old.span.start as isize + shift);
                }
            }
            Err(e) => prop_assert!(e.to_string().contains("pool"), "{}", e),
        }
    }

    #[test]
    fn mask_fill_never_returns_the_original(tokens in prop::collection::vec(prop::sample::select(WORDS), 1..12), pos_seed in any::<usize>(), top in 0usize..5) {
        let tokens: Vec<String> = tokens.into_iter().map(String::from).collect();
        let pos = pos_seed % tokens.len();
        let original = tokens[pos].clone();
        let fills = vec![original.clone(), ",".into(), original.to_uppercase(), "harbor".into(), "Harbor".into(), "...".into(), "depot".into(), "terminal".into()];
        let o = OracleHandle::new(Filler { fills });
        let got = mask_fill_candidates(&o, &tokens, pos, top).unwrap();
        prop_assert!(got.len() <= top);
        for c in &got {
            prop_assert!(!c.eq_ignore_ascii_case(&original));
            prop_assert!(c.chars().any(char::is_alphanumeric));
        }
    }
}
