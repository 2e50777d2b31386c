mod common;

use std::collections::BTreeSet;

use common::*;
use diagnose_re::corpus::{mark_instance, LabelSpace, UNUSED_TOKEN};
use diagnose_re::counterfactual::*;
use diagnose_re::error::Result;
use diagnose_re::oracle::{CapabilitySet, Handshake, OracleHandle, Transport, PROTOCOL_VERSION};
use diagnose_re::synth::{dominant_cues, NA};
use proptest::prelude::*;

/// `P(first label) = c + sum_i m_i a_i`: exactly linear in the mask.
struct MaskLinear {
    c: f64,
    a: Vec<f64>,
}

impl MaskLinear {
    fn p(&self, mask: &[f64]) -> f64 {
        self.c + mask.iter().zip(&self.a).map(|(m, a)| m * a).sum::<f64>()
    }
}

impl Transport for MaskLinear {
    fn handshake(&self) -> Result<Handshake> {
        Ok(Handshake {
            protocol: PROTOCOL_VERSION,
            label_space: LabelSpace::new(vec!["yes".into(), "no".into()], None).unwrap(),
            capabilities: CapabilitySet { masked_forward: true, ..CapabilitySet::default() },
        })
    }

    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|t| self.masked_predict(t, &vec![1.0; t.len()]).unwrap()).collect())
    }

    fn masked_predict(&self, _tokens: &[String], mask: &[f64]) -> Result<Vec<f64>> {
        let p = self.p(mask);
        Ok(vec![p, 1.0 - p])
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mask_linear_models_are_attributed_exactly(a in prop::collection::vec(-0.04f64..0.04, 1..12), steps in 1usize..300) {
        let n = a.len();
        let o = OracleHandle::new(MaskLinear { c: 0.5, a: a.clone() });
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let map = integrated_gradients(&o, &tokens, "yes", steps, AttributionMode::MaskPath).unwrap();
        for (got, want) in map.scores.iter().zip(&a) {
            prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
        }
        let (f1, f0) = path_endpoints(&o, &tokens, "yes").unwrap();
        prop_assert!((map.total() - (f1 - f0)).abs() <= 1e-9);
    }
}

fn brute_top_k(scores: &[f64], k: usize, excl: &BTreeSet<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left: Vec<usize> = (0..scores.len()).filter(|i| !excl.contains(i)).collect();
    for _ in 0..k {
        let mut best = 0;
        for j in 1..left.len() {
            if scores[left[j]] > scores[left[best]] {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn top_k_matches_brute_force(scores in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.25, 0.5, 0.9, 2.0]), 1..15), k_seed in any::<usize>(), excl in prop::collection::btree_set(0usize..15, 0..4)) {
        let excl: BTreeSet<usize> = excl.into_iter().filter(|&i| i < scores.len()).collect();
        let avail = scores.len() - excl.len();
        let k = k_seed % (avail + 1);
        prop_assert_eq!(select_top_k(&scores, k, &excl).unwrap(), brute_top_k(&scores, k, &excl));
        prop_assert!(select_top_k(&scores, avail + 1, &excl).is_err());
    }
}

#[test]
fn completeness_gap_is_small_and_shrinks_with_steps() {
    let o = oracle();
    let steps = [10, 20, 40, 80, 100];
    let (mut gaps, mut delta) = ([0.0; 5], 0.0);
    for inst in corpus().test.instances.iter().take(200) {
        let tokens = mark_instance(inst).tokens;
        let target = o.predict(&tokens).unwrap().label;
        let (f1, f0) = path_endpoints(&o, &tokens, &target).unwrap();
        for (g, s) in gaps.iter_mut().zip(steps) {
            *g += (integrated_gradients(&o, &tokens, &target, s, AttributionMode::MaskPath).unwrap().total() - (f1 - f0)).abs();
        }
        delta += (f1 - f0).abs();
    }
    let relative: Vec<f64> = gaps.iter().map(|g| g / delta).collect();
    assert!(relative[..4].windows(2).all(|w| w[1] < w[0]), "{relative:?}");
    assert!(relative[4] < 0.01, "aggregate relative gap {}", relative[4]);
}

#[test]
fn planted_cues_get_the_top_attribution() {
    let o = oracle();
    let lex = lexicon();
    let cues = dominant_cues();
    let test = &corpus().test;
    let (out_set, out) = contrast_set(test, &o, &lex.stopwords, &CdaConfig::default()).unwrap();
    assert_eq!(out_set.len(), out.records.len());
    let (mut hit, mut total) = (0, 0);
    for r in &out.records {
        let inst = &test.instances[r.source_index];
        let Some(own) = cues.get(inst.label.as_str()) else { continue };
        if !inst.tokens.iter().any(|t| own.contains(&t.as_str())) {
            continue;
        }
        total += 1;
        if own.contains(&inst.tokens[r.positions[0]].as_str()) {
            hit += 1;
        }
    }
    assert!(total > 100);
    assert!(hit as f64 >= 0.9 * total as f64, "{hit}/{total}");
}

#[test]
fn cda_doubles_the_data_and_masks_exactly_k_context_tokens() {
    let o = oracle();
    let lex = lexicon();
    let train = &corpus().test;
    let cases = [(1, true), (2, false)];
    for (k, exclude_stopwords) in cases {
        let cfg = CdaConfig { k, exclude_stopwords, ..CdaConfig::default() };
        let (aug, out) = cda_augment(train, &o, &lex.stopwords, &cfg).unwrap();
        assert!(out.failures.is_empty(), "k={k}: {:?}", &out.failures[..out.failures.len().min(3)]);
        assert_eq!(aug.len(), 2 * train.len());
        assert!(aug.label_space.contains(NA));
        for (src, masked) in train.instances.iter().zip(&aug.instances[train.len()..]) {
            assert_eq!(masked.label, NA);
            assert_eq!(masked.tokens.len(), src.tokens.len());
            assert_eq!((masked.head.clone(), masked.tail.clone()), (src.head.clone(), src.tail.clone()));
            let changed: Vec<usize> = (0..src.tokens.len()).filter(|&i| masked.tokens[i] != src.tokens[i]).collect();
            assert_eq!(changed.len(), k);
            assert!(changed.iter().all(|&i| masked.tokens[i] == UNUSED_TOKEN && !src.in_entity(i)));
            if exclude_stopwords {
                assert!(changed.iter().all(|&i| !lex.stopwords.contains(&src.tokens[i])));
            }
        }
    }
}

#[test]
fn too_few_eligible_tokens_are_counted_failures() {
    let o = oracle();
    let lex = lexicon();
    let test = &corpus().test;
    let (aug, out) = cda_augment(test, &o, &lex.stopwords, &CdaConfig { k: 2, ..CdaConfig::default() }).unwrap();
    assert!(!out.failures.is_empty());
    assert_eq!(aug.len(), 2 * test.len() - out.failures.len());
    for f in &out.failures {
        assert!(f.reason.contains("top 2") && f.reason.contains("only 1"), "{}", f.reason);
    }
}

#[test]
fn masking_refuses_entity_positions_and_handles_empty_sets() {
    let inst = &corpus().test.instances[0];
    assert!(contrastive_mask(inst, &[inst.head.span.start], NA).is_err());
    let same = contrastive_mask(inst, &[], NA).unwrap();
    assert_eq!(same.tokens, inst.tokens);
    assert_eq!(same.label, NA);
}
