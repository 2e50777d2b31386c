mod common;

use std::collections::{BTreeMap, HashMap};

use common::*;
use diagnose_re::bias::*;
use diagnose_re::corpus::{is_marker, Dataset, LabelSpace, ENTITY_TOKEN, UNUSED_TOKEN};
use diagnose_re::error::Result;
use diagnose_re::lexicon::token_stats;
use diagnose_re::oracle::{CapabilitySet, Handshake, OracleHandle, Transport, PROTOCOL_VERSION};
use diagnose_re::report::{evaluate, EvalOptions};
use diagnose_re::synth::{generate, SynthConfig};
use proptest::prelude::*;

/// Predicts one fixed label for every input.
struct Constant {
    space: LabelSpace,
    label: String,
}

impl Transport for Constant {
    fn handshake(&self) -> Result<Handshake> {
        Ok(Handshake { protocol: PROTOCOL_VERSION, label_space: self.space.clone(), capabilities: CapabilitySet::default() })
    }

    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let k = self.space.index_of(&self.label).unwrap();
        Ok(batch.iter().map(|_| (0..self.space.len()).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect())
    }
}

fn constant(label: &str) -> OracleHandle {
    OracleHandle::new(Constant { space: corpus().test.label_space.clone(), label: label.into() })
}

/// label -> lower-cased token -> count, counted by hand.
fn hand_counts(ds: &Dataset) -> HashMap<String, HashMap<String, u64>> {
    let stop = &lexicon().stopwords;
    let mut out: HashMap<String, HashMap<String, u64>> = HashMap::new();
    for inst in &ds.instances {
        for t in &inst.tokens {
            if !stop.contains(t) && !is_marker(t) {
                *out.entry(inst.label.clone()).or_default().entry(t.to_lowercase()).or_default() += 1;
            }
        }
    }
    out
}

fn nearest_rank(mut v: Vec<u64>, q: f64) -> u64 {
    v.sort();
    let mut rank = 1;
    while (rank as f64) < q * v.len() as f64 {
        rank += 1;
    }
    v[rank - 1]
}

#[test]
fn selection_bias_replacements_pass_an_independent_audit() {
    let lex = lexicon();
    let (train, test) = (&corpus().train, &corpus().test);
    let stats = token_stats(train, &lex.stopwords);
    let cfg = BiasConfig::default();
    let (out, audit) = selection_bias_set(test, &stats, lex, &cfg).unwrap();
    let counts = hand_counts(train);
    let threshold = nearest_rank(counts.values().flat_map(|m| m.values().copied()).collect(), cfg.freq_quantile);
    assert_eq!(audit.threshold, threshold);
    assert!(!audit.replacements.is_empty());
    let count = |label: &str, tok: &str| counts.get(label).and_then(|m| m.get(&tok.to_lowercase())).copied().unwrap_or(0);

    let mut replaced: BTreeMap<(usize, usize), &Replacement> = BTreeMap::new();
    let mut violations = 0;
    for r in &audit.replacements {
        let src = &test.instances[r.source_index];
        if src.in_entity(r.position)
            || src.tokens[r.position] != r.old
            || out.instances[r.source_index].tokens[r.position] != r.new
            || count(&r.label, &r.old) != r.old_count
            || count(&r.label, &r.new) != r.new_count
            || r.old_count <= threshold
            || r.new_count > threshold
            || !lex.synonyms.synonyms(&r.old).iter().any(|s| s.eq_ignore_ascii_case(&r.new))
        {
            violations += 1;
        }
        replaced.insert((r.source_index, r.position), r);
    }
    assert_eq!(violations, 0);

    let mut unchanged = 0;
    for (i, (src, got)) in test.instances.iter().zip(&out.instances).enumerate() {
        assert_eq!(got.label, src.label);
        assert_eq!((&got.head, &got.tail), (&src.head, &src.tail));
        assert_eq!(got.tokens.len(), src.tokens.len());
        for p in 0..src.tokens.len() {
            if !replaced.contains_key(&(i, p)) {
                assert_eq!(got.tokens[p], src.tokens[p]);
            }
        }
        unchanged += usize::from(got.tokens == src.tokens);
    }
    assert_eq!(audit.unchanged, unchanged);
}

#[test]
fn frequency_masking_touches_only_frequent_context_tokens() {
    let lex = lexicon();
    let train = &corpus().train;
    let stats = token_stats(train, &lex.stopwords);
    let cfg = BiasConfig { mask_prob: 1.0, ..BiasConfig::default() };
    let threshold = label_frequency_threshold(&stats, cfg.freq_quantile);
    let (out, counts) = frequency_mask_train(train, &stats, lex, &cfg).unwrap();
    assert_eq!(counts.masked, counts.eligible);
    let mut masked = 0;
    for (src, got) in train.instances.iter().zip(&out.instances) {
        assert_eq!(got.label, src.label);
        for p in 0..src.tokens.len() {
            if got.tokens[p] != src.tokens[p] {
                masked += 1;
                assert_eq!(got.tokens[p], UNUSED_TOKEN);
                assert!(!src.in_entity(p) && !lex.stopwords.contains(&src.tokens[p]));
                assert!(stats.label_count(&src.label, &src.tokens[p]) > threshold);
            }
        }
    }
    assert_eq!(masked, counts.masked);
    let (none, zero) = frequency_mask_train(train, &stats, lex, &BiasConfig { mask_prob: 0.0, ..cfg }).unwrap();
    assert_eq!(zero.masked, 0);
    assert_eq!(none.instances, train.instances);
}

fn count_masked_mentions(ds: &Dataset) -> usize {
    ds.instances
        .iter()
        .map(|i| usize::from(i.head.name == ENTITY_TOKEN) + usize::from(i.tail.name == ENTITY_TOKEN))
        .sum()
}

#[test]
fn percent_entity_masking_hits_its_rate() {
    let cfg = SynthConfig { train_per_label: 800, test_per_label: 1, ..SynthConfig::default() };
    let train = generate(lexicon(), &cfg).unwrap().train;
    let mentions = 2 * train.len();
    assert!(mentions >= 10_000, "{mentions} mentions");
    let stats = token_stats(&train, &lexicon().stopwords);
    for k in [10.0, 25.0, 50.0, 80.0] {
        let (out, counts) = selective_entity_mask(&train, EntityMaskMode::Percent(k), &stats, 42).unwrap();
        let rate = count_masked_mentions(&out) as f64 / mentions as f64;
        assert!((rate - k / 100.0).abs() <= 0.02, "K={k}: rate {rate}");
        assert_eq!(counts.masked, count_masked_mentions(&out));
        assert!(out.instances.iter().zip(&train.instances).all(|(a, b)| a.label == b.label));
    }
}

#[test]
fn percent_extremes_are_identity_and_full_masking() {
    let train = &corpus().train;
    let stats = token_stats(train, &lexicon().stopwords);
    let (none, _) = selective_entity_mask(train, EntityMaskMode::Percent(0.0), &stats, 1).unwrap();
    assert_eq!(none.instances, train.instances);
    let (all, _) = selective_entity_mask(train, EntityMaskMode::Percent(100.0), &stats, 1).unwrap();
    assert_eq!(all.instances, masked_entity_set(train).instances);
    assert!(selective_entity_mask(train, EntityMaskMode::Percent(101.0), &stats, 1).is_err());
}

#[test]
fn frequency_entity_masking_picks_exactly_the_frequent_pairs() {
    let train = &corpus().train;
    let stats = token_stats(train, &lexicon().stopwords);
    let mut pairs: HashMap<(String, String), u64> = HashMap::new();
    for i in &train.instances {
        *pairs.entry((i.head.name.to_lowercase(), i.tail.name.to_lowercase())).or_default() += 1;
    }
    let tau = 0.9;
    let threshold = nearest_rank(pairs.values().copied().collect(), tau);
    let (out, counts) = selective_entity_mask(train, EntityMaskMode::Frequency(tau), &stats, 1).unwrap();
    let mut expected = 0;
    for (src, got) in train.instances.iter().zip(&out.instances) {
        let frequent = pairs[&(src.head.name.to_lowercase(), src.tail.name.to_lowercase())] > threshold;
        expected += 2 * usize::from(frequent);
        if frequent {
            assert_eq!(got, &to_masked_entity(src));
        } else {
            assert_eq!(got, src);
        }
    }
    assert!(expected > 0);
    assert_eq!(counts.masked, expected);
}

#[test]
fn oe_debiased_set_reconciles_with_evaluation() {
    let o = oracle();
    let test = &corpus().test;
    let oe = only_entity_set(test);
    let report = evaluate(&o, &oe, &EvalOptions::default()).unwrap();
    let kept = oe_debiased_set(test, &o).unwrap();
    assert_eq!(kept.len(), report.count - report.correct);
    assert!(!kept.is_empty() && kept.len() < test.len());

    let na = test.label_space.na_label.clone().unwrap();
    let always_na = oe_debiased_set(test, &constant(&na)).unwrap();
    assert!(always_na.instances.iter().all(|i| i.label != na));
    assert_eq!(always_na.len(), test.instances.iter().filter(|i| i.label != na).count());
    let other = test.label_space.labels.iter().find(|l| **l != na).unwrap();
    let kept = oe_debiased_set(test, &constant(other)).unwrap();
    assert_eq!(kept.len(), test.instances.iter().filter(|i| &i.label != other).count());
}

#[test]
fn every_emitter_keeps_labels() {
    let lex = lexicon();
    let test = &corpus().test;
    let stats = token_stats(&corpus().train, &lex.stopwords);
    let sets = [
        selection_bias_set(test, &stats, lex, &BiasConfig::default()).unwrap().0,
        frequency_mask_train(test, &stats, lex, &BiasConfig::default()).unwrap().0,
        masked_entity_set(test),
        only_entity_set(test),
        selective_entity_mask(test, EntityMaskMode::Percent(50.0), &stats, 3).unwrap().0,
    ];
    for set in &sets {
        assert_eq!(set.len(), test.len());
        for (a, b) in set.instances.iter().zip(&test.instances) {
            assert_eq!(a.label, b.label);
            a.validate().unwrap();
        }
    }
}

const LABELS: &[&str] = &["NA", "spouse", "employee_of"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn entity_views_are_idempotent(inst in instance_strategy(LABELS)) {
        let me = to_masked_entity(&inst);
        prop_assert_eq!(&to_masked_entity(&me), &me);
        prop_assert_eq!(me.tokens.iter().filter(|t| *t == ENTITY_TOKEN).count(), 2);
        prop_assert_eq!(&me.label, &inst.label);
        let oe = to_only_entity(&inst);
        prop_assert_eq!(&to_only_entity(&oe), &oe);
        prop_assert_eq!(oe.tokens.len(), inst.head.span.len() + inst.tail.span.len());
        prop_assert_eq!(&oe.label, &inst.label);
        prop_assert!(me.validate().is_ok() && oe.validate().is_ok());
    }
}
