//! Adversarial example generation: PWWS and HotFlip under the similarity constraint
//! `Sim(x_adv, x) >= epsilon`, plus adversarial-training set emission.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{mark_instance, Dataset, Edit, Instance, ProvenanceEntry};
use crate::error::{Error, Result};
use crate::lexicon::{match_case, Lexicon};
use crate::oracle::{GradientMode, GradientRecords, OracleHandle, Prediction};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    /// PWWS substitution budget; `None` allows every eligible word.
    pub max_replacements: Option<usize>,
    pub beam_width: usize,
    pub max_flips: usize,
    /// Gradient-ranked substitutes kept per position before realized-loss scoring.
    pub candidate_pool: usize,
    pub protect_entities: bool,
    /// Entity fill-ins offered to PWWS per position, after synonyms.
    pub max_fill_ins: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.8,
            max_replacements: None,
            beam_width: 10,
            max_flips: 10,
            candidate_pool: 20,
            protect_entities: true,
            max_fill_ins: 10,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.candidate_pool == 0 {
            return Err(Error::Config("candidate_pool must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Pwws,
    Hotflip,
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwws" => Ok(AttackMethod::Pwws),
            "hotflip" => Ok(AttackMethod::Hotflip),
            other => Err(Error::Config(format!("unknown attack method `{other}`"))),
        }
    }
}

/// One step of an attack trace: the substitution and the score that ranked it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub position: usize,
    pub old: String,
    pub new: String,
    /// PWWS: the H score; HotFlip: the first-order flip score.
    pub score: f64,
    /// True-label probability after this step.
    pub true_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub source_index: usize,
    pub method: AttackMethod,
    pub success: bool,
    pub adversarial: Option<Instance>,
    pub edits: Vec<Edit>,
    pub trace: Vec<TraceStep>,
    pub similarity: f64,
    pub queries: u64,
    pub original_pred: Prediction,
    pub adversarial_pred: Option<Prediction>,
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - editdistance / max(len)` over tokens.
pub fn similarity(x: &[String], x_adv: &[String]) -> f64 {
    let n = x.len().max(x_adv.len());
    if n == 0 {
        return 1.0;
    }
    1.0 - levenshtein(x, x_adv) as f64 / n as f64
}

/// Character-level variant over the space-joined sentences.
pub fn char_similarity(x: &[String], x_adv: &[String]) -> f64 {
    let a: Vec<char> = x.join(" ").chars().collect();
    let b: Vec<char> = x_adv.join(" ").chars().collect();
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / n as f64
}

/// Positions an attack may edit.
pub fn eligible_positions(instance: &Instance, protect_entities: bool) -> Vec<usize> {
    (0..instance.tokens.len()).filter(|&i| !(protect_entities && instance.in_entity(i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub positions: Vec<usize>,
    pub scores: Vec<f64>,
    pub base: Prediction,
}

/// `P(y|x) - P(y|x without w_i)` for every eligible position, in one batched call.
pub fn word_saliency(oracle: &OracleHandle, instance: &Instance, protect_entities: bool) -> Result<Saliency> {
    let y = oracle.label_index(&instance.label)?;
    let marked = mark_instance(instance);
    let positions = eligible_positions(instance, protect_entities);
    let mut batch = vec![marked.tokens.clone()];
    batch.extend(positions.iter().map(|&p| marked.without(p)));
    let mut preds = oracle.predict_batch(&batch)?;
    let base = preds.remove(0);
    let scores = preds.iter().map(|p| base.probs[y] - p.probs[y]).collect();
    Ok(Saliency { positions, scores, base })
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn substitute(instance: &Instance, pos: usize, token: &str) -> Instance {
    let mut out = instance.clone();
    out.tokens[pos] = token.to_string();
    out
}

fn pwws_candidates(word: &str, lex: &Lexicon, max_fill_ins: usize) -> Vec<(String, &'static str)> {
    let mut out: Vec<(String, &'static str)> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in lex.synonyms.synonyms(word) {
        let c = match_case(word, s);
        if c != word && seen.insert(c.clone()) {
            out.push((c, "synonym"));
        }
    }
    for s in lex.pools.fill_ins(word).into_iter().take(max_fill_ins) {
        let c = match_case(word, s);
        if c != word && seen.insert(c.clone()) {
            out.push((c, "fill-in"));
        }
    }
    out
}

fn finish(
    oracle: &OracleHandle,
    source_index: usize,
    method: AttackMethod,
    instance: &Instance,
    current: Option<(Instance, Prediction)>,
    edits: Vec<Edit>,
    trace: Vec<TraceStep>,
    sim: fn(&[String], &[String]) -> f64,
    epsilon: f64,
    original_pred: Prediction,
) -> AttackResult {
    let (success, adversarial, adversarial_pred, similarity) = match current {
        Some((adv, pred)) => {
            let s = sim(&instance.tokens, &adv.tokens);
            let ok = pred.argmax != original_pred.argmax && s >= epsilon && !edits.is_empty();
            (ok, ok.then_some(adv), Some(pred), s)
        }
        None => (false, None, None, 1.0),
    };
    AttackResult {
        source_index,
        method,
        success,
        adversarial,
        edits,
        trace,
        similarity,
        queries: oracle.queries(),
        original_pred,
        adversarial_pred,
    }
}

/// Probability weighted word saliency attack.
///
/// Each eligible word gets its best substitute `w*` (largest true-label drop); positions
/// are ordered by `H = softmax(S)_i * (P(y|x) - P(y|x_i*))` with the softmax over eligible
/// positions, and substitutions are applied greedily until the prediction flips.
pub fn pwws_attack(oracle: &OracleHandle, instance: &Instance, lex: &Lexicon, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let oracle = oracle.scoped();
    let y = oracle.label_index(&instance.label)?;
    let sal = word_saliency(&oracle, instance, config.protect_entities)?;
    let base = sal.base.clone();
    let p_true = base.probs[y];
    let weights = softmax(&sal.scores);

    // best substitute per position, all candidates scored in one batch
    let mut jobs: Vec<(usize, usize, String, &'static str)> = Vec::new();
    for (k, &pos) in sal.positions.iter().enumerate() {
        for (cand, gen) in pwws_candidates(&instance.tokens[pos], lex, config.max_fill_ins) {
            jobs.push((k, pos, cand, gen));
        }
    }
    let batch: Vec<Vec<String>> =
        jobs.iter().map(|(_, pos, cand, _)| mark_instance(&substitute(instance, *pos, cand)).tokens).collect();
    let preds = oracle.predict_batch(&batch)?;
    // (k, pos, cand, gen, delta)
    let mut best: Vec<Option<(usize, String, &'static str, f64)>> = vec![None; sal.positions.len()];
    for ((k, pos, cand, gen), pred) in jobs.into_iter().zip(&preds) {
        let delta = p_true - pred.probs[y];
        let better = match &best[k] {
            None => true,
            Some((_, c, _, d)) => delta > *d || (delta == *d && cand < *c),
        };
        if better {
            best[k] = Some((pos, cand, gen, delta));
        }
    }
    let mut order: Vec<(usize, String, &'static str, f64, f64)> = best
        .into_iter()
        .enumerate()
        .filter_map(|(k, b)| b.map(|(pos, cand, gen, delta)| (pos, cand, gen, delta, weights[k] * delta)))
        .collect();
    order.sort_by(|a, b| b.4.total_cmp(&a.4).then(a.0.cmp(&b.0)));
    let budget = config.max_replacements.unwrap_or(usize::MAX);

    let mut current = instance.clone();
    let mut state: Option<(Instance, Prediction)> = None;
    let mut edits = Vec::new();
    let mut trace = Vec::new();
    for (pos, cand, gen, _delta, h) in order {
        if edits.len() >= budget {
            break;
        }
        let next = substitute(&current, pos, &cand);
        if similarity(&instance.tokens, &next.tokens) < config.epsilon {
            break;
        }
        let pred = oracle.predict(&mark_instance(&next).tokens)?;
        edits.push(Edit { position: pos, old: vec![instance.tokens[pos].clone()], new: vec![cand.clone()], generator: gen.into() });
        trace.push(TraceStep { position: pos, old: instance.tokens[pos].clone(), new: cand, score: h, true_prob: pred.probs[y] });
        current = next;
        let flipped = pred.argmax != base.argmax;
        state = Some((current.clone(), pred));
        if flipped {
            break;
        }
    }
    Ok(finish(&oracle, 0, AttackMethod::Pwws, instance, state, edits, trace, similarity, config.epsilon, base))
}

/// Substitution vocabulary for word-level HotFlip.
#[derive(Debug, Clone)]
pub struct FlipVocabulary {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl FlipVocabulary {
    /// Fetches the oracle's content vocabulary and its embeddings.
    pub fn from_oracle(oracle: &OracleHandle) -> Result<Self> {
        let tokens = oracle.vocabulary()?;
        let vectors = oracle.embed(&tokens)?;
        if vectors.len() != tokens.len() {
            return Err(Error::LengthMismatch { expected: tokens.len(), actual: vectors.len() });
        }
        Ok(FlipVocabulary { tokens, vectors })
    }
}

/// Ranked candidate substitutions for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipCandidate {
    pub position: usize,
    pub token: String,
    pub score: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-`pool` word substitutions at each position by `grad_i . (e_v - e_u)`.
pub fn word_flip_candidates(
    grads: &[Vec<f64>],
    marked_index: &[usize],
    current: &[String],
    positions: &[usize],
    vocab: &FlipVocabulary,
    own: &[Vec<f64>],
    pool: usize,
) -> Vec<FlipCandidate> {
    let mut out = Vec::new();
    for (k, &pos) in positions.iter().enumerate() {
        let g = &grads[marked_index[k]];
        let base = dot(g, &own[k]);
        let lower = current[pos].to_lowercase();
        let mut scored: Vec<(f64, &String)> = vocab
            .tokens
            .iter()
            .zip(&vocab.vectors)
            .filter(|(t, _)| t.to_lowercase() != lower)
            .map(|(t, v)| (dot(g, v) - base, t))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        out.extend(scored.into_iter().take(pool).map(|(s, t)| FlipCandidate { position: pos, token: t.clone(), score: s }));
    }
    out
}

fn char_flip_candidates(
    grads: &[Vec<Vec<f64>>],
    marked_index: &[usize],
    current: &[String],
    positions: &[usize],
    alphabet: &[char],
    pool: usize,
) -> Vec<FlipCandidate> {
    let mut out = Vec::new();
    for (k, &pos) in positions.iter().enumerate() {
        let word: Vec<char> = current[pos].chars().collect();
        let g = &grads[marked_index[k]];
        let mut scored: Vec<(f64, String)> = Vec::new();
        for (j, c) in word.iter().enumerate() {
            let Some(gj) = g.get(j) else { continue };
            let own = alphabet.iter().position(|a| a == c).map_or(0.0, |i| gj[i]);
            for (a_idx, a) in alphabet.iter().enumerate() {
                if a == c {
                    continue;
                }
                let mut w = word.clone();
                w[j] = *a;
                scored.push((gj[a_idx] - own, w.into_iter().collect()));
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.extend(scored.into_iter().take(pool).map(|(s, t)| FlipCandidate { position: pos, token: t, score: s }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipUnit {
    Word,
    Char,
}

#[derive(Clone)]
struct BeamState {
    instance: Instance,
    edits: Vec<Edit>,
    trace: Vec<TraceStep>,
    pred: Prediction,
    touched: BTreeSet<usize>,
}

/// Gradient-guided substitution attack with beam search over flip sequences.
///
/// Word mode needs `vocab`; char mode uses the oracle's declared alphabet. Each beam
/// state is expanded with the top `candidate_pool` first-order flips per position, and
/// expansions are ranked by the realized true-label probability. Only strict decreases
/// of that probability are kept.
pub fn hotflip_attack(
    oracle: &OracleHandle,
    instance: &Instance,
    unit: FlipUnit,
    vocab: Option<&FlipVocabulary>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let oracle = oracle.scoped();
    let caps = oracle.capabilities()?;
    let (mode, sim): (GradientMode, fn(&[String], &[String]) -> f64) = match unit {
        FlipUnit::Word => {
            if !caps.word_gradient {
                return Err(Error::CapabilityMissing("word_gradient"));
            }
            if vocab.is_none() {
                return Err(Error::Config("word-level HotFlip needs a substitution vocabulary".into()));
            }
            (GradientMode::Word, similarity)
        }
        FlipUnit::Char => {
            if !caps.char_gradient {
                return Err(Error::CapabilityMissing("char_gradient"));
            }
            (GradientMode::Char, char_similarity)
        }
    };
    let alphabet = caps.alphabet.clone().unwrap_or_default();
    let y = oracle.label_index(&instance.label)?;
    let base = oracle.predict(&mark_instance(instance).tokens)?;
    let positions = eligible_positions(instance, config.protect_entities);

    let mut beam = vec![BeamState {
        instance: instance.clone(),
        edits: Vec::new(),
        trace: Vec::new(),
        pred: base.clone(),
        touched: BTreeSet::new(),
    }];
    let mut best: Option<BeamState> = None;
    for _ in 0..config.max_flips {
        let mut expansions: Vec<(BeamState, FlipCandidate)> = Vec::new();
        for state in &beam {
            let marked = mark_instance(&state.instance);
            let free: Vec<usize> = positions.iter().copied().filter(|p| !state.touched.contains(p)).collect();
            let idx: Vec<usize> = free.iter().map(|&p| marked.marked_index(p).expect("marked")).collect();
            let cands = match oracle.input_gradient(&marked.tokens, &instance.label, mode)? {
                GradientRecords::Word(g) => {
                    let v = vocab.expect("checked above");
                    let own = oracle.embed(&free.iter().map(|&p| state.instance.tokens[p].clone()).collect::<Vec<_>>())?;
                    word_flip_candidates(&g, &idx, &state.instance.tokens, &free, v, &own, config.candidate_pool)
                }
                GradientRecords::Char(g) => {
                    char_flip_candidates(&g, &idx, &state.instance.tokens, &free, &alphabet, config.candidate_pool)
                }
            };
            for c in cands {
                let next = substitute(&state.instance, c.position, &c.token);
                if sim(&instance.tokens, &next.tokens) < config.epsilon {
                    continue;
                }
                let mut s = state.clone();
                s.instance = next;
                expansions.push((s, c));
            }
        }
        if expansions.is_empty() {
            break;
        }
        let batch: Vec<Vec<String>> = expansions.iter().map(|(s, _)| mark_instance(&s.instance).tokens).collect();
        let preds = oracle.predict_batch(&batch)?;
        let mut scored: Vec<(BeamState, f64)> = Vec::new();
        for ((mut s, c), pred) in expansions.into_iter().zip(preds) {
            let p = pred.probs[y];
            if p >= s.pred.probs[y] {
                continue;
            }
            s.edits.push(Edit {
                position: c.position,
                old: vec![instance.tokens[c.position].clone()],
                new: vec![c.token.clone()],
                generator: "hotflip".into(),
            });
            s.trace.push(TraceStep {
                position: c.position,
                old: instance.tokens[c.position].clone(),
                new: c.token,
                score: c.score,
                true_prob: p,
            });
            s.touched.insert(c.position);
            s.pred = pred;
            scored.push((s, p));
        }
        if scored.is_empty() {
            break;
        }
        // lowest true-label probability first; ties by edit sequence
        scored.sort_by(|a, b| {
            a.1.total_cmp(&b.1).then_with(|| {
                let ka: Vec<(usize, &String)> = a.0.trace.iter().map(|t| (t.position, &t.new)).collect();
                let kb: Vec<(usize, &String)> = b.0.trace.iter().map(|t| (t.position, &t.new)).collect();
                ka.cmp(&kb)
            })
        });
        if let Some((s, _)) = scored.iter().find(|(s, _)| s.pred.argmax != base.argmax) {
            best = Some(s.clone());
            break;
        }
        beam = scored.into_iter().take(config.beam_width).map(|(s, _)| s).collect();
        best = Some(beam[0].clone());
    }
    let (state, edits, trace) = match best {
        Some(s) => (Some((s.instance, s.pred)), s.edits, s.trace),
        None => (None, Vec::new(), Vec::new()),
    };
    Ok(finish(&oracle, 0, AttackMethod::Hotflip, instance, state, edits, trace, sim, config.epsilon, base))
}

/// Independent re-check of the success clauses: the adversarial prediction differs from
/// the original, similarity clears epsilon, and edits replay onto the source.
pub fn verify_success(oracle: &OracleHandle, original: &Instance, result: &AttackResult, epsilon: f64, sim: fn(&[String], &[String]) -> f64) -> Result<bool> {
    let Some(adv) = &result.adversarial else { return Ok(false) };
    let replayed = crate::corpus::apply_edits(&original.tokens, &result.edits)?;
    if replayed != adv.tokens || adv.label != original.label {
        return Ok(false);
    }
    let before = oracle.predict(&mark_instance(original).tokens)?;
    let after = oracle.predict(&mark_instance(adv).tokens)?;
    Ok(before.argmax != after.argmax && sim(&original.tokens, &adv.tokens) >= epsilon)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub instances: usize,
    /// Instances the oracle already got wrong; they are not attacked.
    pub skipped_misclassified: usize,
    pub attacked: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_queries: f64,
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub results: Vec<AttackResult>,
    pub summary: AttackSummary,
}

/// Attacks every correctly classified instance of `dataset` in parallel.
pub fn attack_dataset(
    oracle: &OracleHandle,
    dataset: &Dataset,
    method: AttackMethod,
    lex: &Lexicon,
    unit: FlipUnit,
    config: &AttackConfig,
) -> Result<AttackRun> {
    config.validate()?;
    oracle.ensure_covers(&dataset.label_space)?;
    let vocab = match method {
        AttackMethod::Hotflip if unit == FlipUnit::Word => Some(FlipVocabulary::from_oracle(oracle)?),
        _ => None,
    };
    let batch: Vec<Vec<String>> = dataset.instances.iter().map(|i| mark_instance(i).tokens).collect();
    let preds = oracle.predict_batch(&batch)?;
    let outcomes: Vec<Option<AttackResult>> = dataset
        .instances
        .par_iter()
        .zip(preds.par_iter())
        .enumerate()
        .map(|(i, (inst, pred))| {
            if pred.label != inst.label {
                return Ok(None);
            }
            let mut r = match method {
                AttackMethod::Pwws => pwws_attack(oracle, inst, lex, config)?,
                AttackMethod::Hotflip => hotflip_attack(oracle, inst, unit, vocab.as_ref(), config)?,
            };
            r.source_index = i;
            Ok(Some(r))
        })
        .collect::<Result<_>>()?;
    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let results: Vec<AttackResult> = outcomes.into_iter().flatten().collect();
    let successes = results.iter().filter(|r| r.success).count();
    let attacked = results.len();
    let summary = AttackSummary {
        instances: dataset.len(),
        skipped_misclassified: skipped,
        attacked,
        successes,
        success_rate: if attacked == 0 { 0.0 } else { successes as f64 / attacked as f64 },
        mean_queries: if attacked == 0 { 0.0 } else { results.iter().map(|r| r.queries as f64).sum::<f64>() / attacked as f64 },
    };
    Ok(AttackRun { results, summary })
}

/// The robust test set: `dataset` with every successful adversarial example substituted
/// for its source instance.
pub fn adversarial_set(dataset: &Dataset, run: &AttackRun, method: AttackMethod, generator: &str) -> Dataset {
    let mut instances = dataset.instances.clone();
    for r in &run.results {
        if let Some(adv) = &r.adversarial {
            instances[r.source_index] = adv.clone();
        }
    }
    dataset.derive(
        instances,
        ProvenanceEntry::new(
            "adversarial-set",
            json!({
                "method": method,
                "generated_by": generator,
                "attacked": run.summary.attacked,
                "successes": run.summary.successes,
                "success_rate": run.summary.success_rate,
            }),
        ),
    )
}

/// Adversarial training set: `train` followed by every successful adversarial example
/// under its original gold label.
pub fn emit_adversarial_train(train: &Dataset, run: &AttackRun, method: AttackMethod, generator: &str) -> Dataset {
    let mut instances = train.instances.clone();
    instances.extend(run.results.iter().filter_map(|r| r.adversarial.clone()));
    train.derive(
        instances,
        ProvenanceEntry::new(
            "adversarial-train",
            json!({
                "method": method,
                "generated_by": generator,
                "successes": run.summary.successes,
                "success_rate": run.summary.success_rate,
                "mean_queries": run.summary.mean_queries,
            }),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn similarity_cases() {
        let a = t("a b c d e f g h i j");
        assert_eq!(similarity(&a, &a), 1.0);
        assert_eq!(similarity(&t("a b c"), &t("x y z")), 0.0);
        let mut b = a.clone();
        b[4] = "z".into();
        assert!((similarity(&a, &b) - 0.9).abs() < 1e-12);
        assert_eq!(similarity(&[], &[]), 1.0);
        assert!((char_similarity(&t("abcd"), &t("abxd")) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn levenshtein_hand_cases() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(levenshtein(&[1, 2, 3], &[3, 2, 1]), 2);
        assert_eq!(levenshtein::<u8>(&[], &[1, 2]), 2);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { beam_width: 0, ..Default::default() }.validate().is_err());
    }
}
