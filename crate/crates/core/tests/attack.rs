mod common;

use common::*;
use diagnose_re::attack::*;
use diagnose_re::corpus::{apply_edits, mark_instance, Dataset, Instance};
use diagnose_re::lexicon::match_case;
use diagnose_re::oracle::{GradientMode, GradientRecords, OracleHandle};
use proptest::prelude::*;

fn subset(n: usize) -> Dataset {
    let test = &corpus().test;
    test.derive(test.instances[..n].to_vec(), diagnose_re::corpus::ProvenanceEntry::new("subset", serde_json::json!({})))
}

fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Re-checks a success from scratch: replay, fresh predictions, own similarity.
fn independently_valid(o: &OracleHandle, src: &Instance, r: &AttackResult, eps: f64) -> bool {
    let Some(adv) = &r.adversarial else { return false };
    let Ok(replayed) = apply_edits(&src.tokens, &r.edits) else { return false };
    let before = o.predict(&mark_instance(src).tokens).unwrap();
    let after = o.predict(&mark_instance(adv).tokens).unwrap();
    let sim = 1.0 - edit_distance(&src.tokens, &adv.tokens) as f64 / src.tokens.len().max(adv.tokens.len()) as f64;
    replayed == adv.tokens
        && before.argmax != after.argmax
        && sim >= eps
        && adv.label == src.label
        && r.edits.iter().all(|e| !src.in_entity(e.position))
}

fn recomputed_h(o: &OracleHandle, src: &Instance, step: &TraceStep) -> f64 {
    let y = o.label_index(&src.label).unwrap();
    let marked = mark_instance(src);
    let base = o.predict(&marked.tokens).unwrap().probs[y];
    let eligible: Vec<usize> = (0..src.tokens.len()).filter(|&i| !src.in_entity(i)).collect();
    let s: Vec<f64> = eligible.iter().map(|&p| base - o.predict(&marked.without(p)).unwrap().probs[y]).collect();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
    let k = eligible.iter().position(|&p| p == step.position).unwrap();
    let weight = (s[k] - max).exp() / z;
    weight * (base - o.predict(&marked.with(step.position, &step.new)).unwrap().probs[y])
}

#[test]
fn pwws_successes_pass_an_independent_checker_and_h_never_increases() {
    let o = oracle();
    let lex = lexicon();
    let ds = subset(150);
    let cfg = AttackConfig::default();
    let run = attack_dataset(&o, &ds, AttackMethod::Pwws, lex, FlipUnit::Word, &cfg).unwrap();
    assert!(run.summary.successes > 0);
    let mut violations = 0;
    for r in &run.results {
        let src = &ds.instances[r.source_index];
        assert_eq!(r.success, independently_valid(&o, src, r, cfg.epsilon), "instance {}", r.source_index);
        let hs: Vec<f64> = r.trace.iter().map(|s| recomputed_h(&o, src, s)).collect();
        for (h, s) in hs.iter().zip(&r.trace) {
            assert!((h - s.score).abs() <= 1e-12, "H {h} vs traced {}", s.score);
        }
        violations += hs.windows(2).filter(|w| w[1] > w[0] + 1e-15).count();
    }
    assert_eq!(violations, 0);
}

#[test]
fn pwws_picks_the_brute_force_best_substitute() {
    let o = oracle();
    let lex = lexicon();
    let cfg = AttackConfig::default();
    for src in corpus().test.instances.iter().take(60) {
        let r = pwws_attack(&o, src, lex, &cfg).unwrap();
        let Some(first) = r.trace.first() else { continue };
        let y = o.label_index(&src.label).unwrap();
        let marked = mark_instance(src);
        let word = &src.tokens[first.position];
        let mut cands: Vec<String> = lex.synonyms.synonyms(word).iter().map(|s| match_case(word, s)).collect();
        cands.extend(lex.pools.fill_ins(word).into_iter().take(cfg.max_fill_ins).map(|s| match_case(word, s)));
        cands.retain(|c| c != word);
        let best = cands
            .iter()
            .map(|c| (o.predict(&marked.with(first.position, c)).unwrap().probs[y], c))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)))
            .unwrap();
        assert_eq!(&first.new, best.1);
    }
}

#[test]
fn query_counts_equal_counter_deltas() {
    let o = oracle();
    let ds = subset(40);
    let before = o.queries();
    let run = attack_dataset(&o, &ds, AttackMethod::Pwws, lexicon(), FlipUnit::Word, &AttackConfig::default()).unwrap();
    let spent: u64 = run.results.iter().map(|r| r.queries).sum();
    assert_eq!(o.queries() - before, ds.len() as u64 + spent);
}

#[test]
fn hotflip_single_flip_matches_exhaustive_search_over_its_pool() {
    let o = oracle();
    let m = model();
    let vocab = FlipVocabulary::from_oracle(&o).unwrap();
    let cfg = AttackConfig { beam_width: 1, max_flips: 1, ..AttackConfig::default() };
    let vocab_words = m.content_vocabulary();
    let (mut agree, mut total) = (0, 0);
    for src in corpus().test.instances.iter().take(80) {
        let marked = mark_instance(src);
        let y = o.label_index(&src.label).unwrap();
        if o.predict(&marked.tokens).unwrap().argmax != y {
            continue;
        }
        total += 1;
        let r = hotflip_attack(&o, src, FlipUnit::Word, Some(&vocab), &cfg).unwrap();
        let GradientRecords::Word(g) = o.input_gradient(&marked.tokens, &src.label, GradientMode::Word).unwrap() else {
            unreachable!()
        };
        let base = o.predict(&marked.tokens).unwrap().probs[y];
        let mut best: Option<(f64, usize, String)> = None;
        for p in (0..src.tokens.len()).filter(|&p| !src.in_entity(p)) {
            let gi = &g[marked.marked_index(p).unwrap()];
            let own = m.embedding(&src.tokens[p]);
            let mut scored: Vec<(f64, &String)> = vocab_words
                .iter()
                .filter(|v| !v.eq_ignore_ascii_case(&src.tokens[p]))
                .map(|v| (gi.iter().zip(m.embedding(v).iter().zip(&own)).map(|(a, (e, u))| a * (e - u)).sum(), v))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            for (_, v) in scored.into_iter().take(cfg.candidate_pool) {
                let p_true = o.predict(&marked.with(p, v)).unwrap().probs[y];
                if p_true < base && best.as_ref().is_none_or(|b| (p_true, p, v) < (b.0, b.1, &b.2)) {
                    best = Some((p_true, p, v.clone()));
                }
            }
        }
        let chosen = r.trace.first().map(|t| (t.position, t.new.clone()));
        if chosen == best.map(|b| (b.1, b.2)) {
            agree += 1;
        }
    }
    assert!(total >= 60);
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn adversarial_training_set_reconciles() {
    let o = oracle();
    let ds = subset(60);
    let run = attack_dataset(&o, &ds, AttackMethod::Pwws, lexicon(), FlipUnit::Word, &AttackConfig::default()).unwrap();
    let train = emit_adversarial_train(&ds, &run, AttackMethod::Pwws, "reference");
    assert_eq!(train.len(), ds.len() + run.summary.successes);
    for (adv, r) in train.instances[ds.len()..].iter().zip(run.results.iter().filter(|r| r.success)) {
        assert_eq!(adv.label, ds.instances[r.source_index].label);
    }
    let robust = adversarial_set(&ds, &run, AttackMethod::Pwws, "reference");
    assert_eq!(robust.len(), ds.len());

    let none = attack_dataset(&o, &ds, AttackMethod::Pwws, lexicon(), FlipUnit::Word, &AttackConfig { epsilon: 1.0, ..Default::default() }).unwrap();
    assert_eq!(none.summary.successes, 0);
    assert_eq!(emit_adversarial_train(&ds, &none, AttackMethod::Pwws, "reference").instances, ds.instances);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn similarity_is_normalised_edit_similarity(a in prop::collection::vec(prop::sample::select(WORDS), 0..12), b in prop::collection::vec(prop::sample::select(WORDS), 0..12)) {
        let a: Vec<String> = a.into_iter().map(String::from).collect();
        let b: Vec<String> = b.into_iter().map(String::from).collect();
        let n = a.len().max(b.len());
        let expected = if n == 0 { 1.0 } else { 1.0 - edit_distance(&a, &b) as f64 / n as f64 };
        prop_assert!((similarity(&a, &b) - expected).abs() < 1e-12);
        prop_assert!((similarity(&a, &b) - similarity(&b, &a)).abs() < 1e-12);
    }
}
