//! Selection-bias and semantic-bias test sets and the matching de-biasing emitters.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{is_marker, mark_instance, Dataset, Instance, ProvenanceEntry, ENTITY_TOKEN, UNUSED_TOKEN};
use crate::error::{Error, Result};
use crate::lexicon::{match_case, quantile, FrequencyTable, Lexicon, StopWords};
use crate::oracle::{derive_seed, OracleHandle};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasConfig {
    pub freq_quantile: f64,
    pub mask_prob: f64,
    /// Percentage of entity mentions masked in percent mode.
    pub mask_pct: f64,
    pub pair_freq_quantile: f64,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig { freq_quantile: 0.9, mask_prob: 0.5, mask_pct: 50.0, pair_freq_quantile: 0.9, seed: 42 }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("freq_quantile", self.freq_quantile), ("pair_freq_quantile", self.pair_freq_quantile)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!("{name} {q} outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} outside [0, 1]", self.mask_prob)));
        }
        if !(0.0..=100.0).contains(&self.mask_pct) {
            return Err(Error::Config(format!("mask percentage {} outside [0, 100]", self.mask_pct)));
        }
        Ok(())
    }
}

/// Threshold over every non-zero label-conditional token count.
pub fn label_frequency_threshold(stats: &FrequencyTable, q: f64) -> u64 {
    let counts: Vec<u64> = stats.label_token_count.values().flat_map(|m| m.values().copied()).collect();
    quantile(&counts, q).unwrap_or(0)
}

fn countable(inst: &Instance, pos: usize, stopwords: &StopWords) -> bool {
    let tok = &inst.tokens[pos];
    !inst.in_entity(pos) && !is_marker(tok) && !stopwords.contains(tok) && tok != UNUSED_TOKEN
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub source_index: usize,
    pub position: usize,
    pub label: String,
    pub old: String,
    pub new: String,
    pub old_count: u64,
    pub new_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub threshold: u64,
    pub replacements: Vec<Replacement>,
    /// Instances passed through without any replacement.
    pub unchanged: usize,
    /// Frequent tokens left in place for lack of a rarer synonym.
    pub no_synonym: usize,
}

/// Replaces label-frequent context tokens with their rarest synonym.
pub fn selection_bias_set(test: &Dataset, stats: &FrequencyTable, lex: &Lexicon, config: &BiasConfig) -> Result<(Dataset, SelectionAudit)> {
    config.validate()?;
    let threshold = label_frequency_threshold(stats, config.freq_quantile);
    let per: Vec<(Instance, Vec<Replacement>, usize)> = test
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut out = inst.clone();
            let mut reps = Vec::new();
            let mut missing = 0;
            for pos in 0..inst.tokens.len() {
                if !countable(inst, pos, &lex.stopwords) {
                    continue;
                }
                let word = &inst.tokens[pos];
                let count = stats.label_count(&inst.label, word);
                if count <= threshold {
                    continue;
                }
                let best = lex
                    .synonyms
                    .synonyms(word)
                    .iter()
                    .filter(|s| !s.contains(' '))
                    .map(|s| (stats.label_count(&inst.label, s), stats.count(s), s))
                    .filter(|(c, _, _)| *c <= threshold)
                    .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
                match best {
                    Some((c, _, s)) => {
                        let new = match_case(word, s);
                        reps.push(Replacement {
                            source_index: i,
                            position: pos,
                            label: inst.label.clone(),
                            old: word.clone(),
                            new: new.clone(),
                            old_count: count,
                            new_count: c,
                        });
                        out.tokens[pos] = new;
                    }
                    None => missing += 1,
                }
            }
            (out, reps, missing)
        })
        .collect();
    let mut audit = SelectionAudit { threshold, ..Default::default() };
    let mut instances = Vec::with_capacity(per.len());
    for (inst, reps, missing) in per {
        if reps.is_empty() {
            audit.unchanged += 1;
        }
        audit.no_synonym += missing;
        audit.replacements.extend(reps);
        instances.push(inst);
    }
    let ds = test.derive(
        instances,
        ProvenanceEntry::new(
            "selection-bias",
            json!({
                "freq_quantile": config.freq_quantile,
                "threshold": threshold,
                "replacements": audit.replacements.len(),
                "unchanged": audit.unchanged,
                "no_synonym": audit.no_synonym,
            }),
        ),
    );
    Ok((ds, audit))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub eligible: usize,
    pub masked: usize,
}

/// De-biased training set: each label-frequent context token is masked with probability `p`.
pub fn frequency_mask_train(train: &Dataset, stats: &FrequencyTable, lex: &Lexicon, config: &BiasConfig) -> Result<(Dataset, MaskCounts)> {
    config.validate()?;
    let threshold = label_frequency_threshold(stats, config.freq_quantile);
    let per: Vec<(Instance, usize, usize)> = train
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "frequency-mask", i as u64));
            let mut out = inst.clone();
            let (mut eligible, mut masked) = (0, 0);
            for pos in 0..inst.tokens.len() {
                if !countable(inst, pos, &lex.stopwords) || stats.label_count(&inst.label, &inst.tokens[pos]) <= threshold {
                    continue;
                }
                eligible += 1;
                if rng.gen_bool(config.mask_prob) {
                    out.tokens[pos] = UNUSED_TOKEN.to_string();
                    masked += 1;
                }
            }
            (out, eligible, masked)
        })
        .collect();
    let mut counts = MaskCounts::default();
    let instances = per
        .into_iter()
        .map(|(inst, e, m)| {
            counts.eligible += e;
            counts.masked += m;
            inst
        })
        .collect();
    let ds = train.derive(
        instances,
        ProvenanceEntry::new(
            "frequency-mask",
            json!({
                "freq_quantile": config.freq_quantile,
                "threshold": threshold,
                "mask_prob": config.mask_prob,
                "seed": config.seed,
                "eligible": counts.eligible,
                "masked": counts.masked,
            }),
        ),
    );
    Ok((ds, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Head,
    Tail,
}

fn mask_mention(inst: &Instance, role: Role) -> Instance {
    let span = match role {
        Role::Head => inst.head.span,
        Role::Tail => inst.tail.span,
    };
    inst.splice(span.start, span.end, &[ENTITY_TOKEN.to_string()]).expect("span-aligned splice")
}

/// Masked-entity setting: each mention collapses to one reserved entity token.
pub fn to_masked_entity(instance: &Instance) -> Instance {
    let (first, second) = if instance.head.span.start > instance.tail.span.start {
        (Role::Head, Role::Tail)
    } else {
        (Role::Tail, Role::Head)
    };
    mask_mention(&mask_mention(instance, first), second)
}

/// Only-entity setting: tokens are the head tokens followed by the tail tokens, so the
/// marked form is `[E1] head [/E1] [E2] tail [/E2]` between the sentinels.
pub fn to_only_entity(instance: &Instance) -> Instance {
    let head: Vec<String> = instance.tokens[instance.head.span.range()].to_vec();
    let tail: Vec<String> = instance.tokens[instance.tail.span.range()].to_vec();
    let (h, t) = (head.len(), tail.len());
    let mut tokens = head;
    tokens.extend(tail);
    let mut out = instance.clone();
    out.tokens = tokens;
    out.head.span = crate::corpus::Span::new(0, h);
    out.tail.span = crate::corpus::Span::new(h, h + t);
    out
}

pub fn masked_entity_set(test: &Dataset) -> Dataset {
    test.derive(test.instances.iter().map(to_masked_entity).collect(), ProvenanceEntry::new("masked-entity", json!({})))
}

pub fn only_entity_set(test: &Dataset) -> Dataset {
    test.derive(test.instances.iter().map(to_only_entity).collect(), ProvenanceEntry::new("only-entity", json!({})))
}

/// The instances whose only-entity form the oracle misclassifies.
pub fn oe_debiased_set(test: &Dataset, oracle: &OracleHandle) -> Result<Dataset> {
    oracle.ensure_covers(&test.label_space)?;
    let batch: Vec<Vec<String>> = test.instances.iter().map(|i| mark_instance(&to_only_entity(i)).tokens).collect();
    let preds = oracle.predict_batch(&batch)?;
    let kept: Vec<Instance> = test
        .instances
        .iter()
        .zip(&preds)
        .filter(|(inst, p)| p.label != inst.label)
        .map(|(inst, _)| inst.clone())
        .collect();
    let n = kept.len();
    Ok(test.derive(kept, ProvenanceEntry::new("oe-debiased", json!({"kept": n, "source": test.len()}))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum EntityMaskMode {
    /// Mask exactly `round(K% * mentions)` uniformly chosen mentions.
    Percent(f64),
    /// Mask both mentions of every instance whose pair count exceeds the quantile.
    Frequency(f64),
}

/// Selective entity masking for training.
pub fn selective_entity_mask(train: &Dataset, mode: EntityMaskMode, stats: &FrequencyTable, seed: u64) -> Result<(Dataset, MaskCounts)> {
    let n = train.len();
    let mut chosen = vec![[false; 2]; n];
    let params = match mode {
        EntityMaskMode::Percent(k) => {
            if !(0.0..=100.0).contains(&k) {
                return Err(Error::Config(format!("mask percentage {k} outside [0, 100]")));
            }
            let total = 2 * n;
            let amount = ((k / 100.0) * total as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "entity-mask", 0));
            for m in sample(&mut rng, total, amount.min(total)) {
                chosen[m / 2][m % 2] = true;
            }
            json!({"mode": "percent", "k": k, "seed": seed})
        }
        EntityMaskMode::Frequency(tau) => {
            if !stats.has_pairs() {
                return Err(Error::Config("frequency-mode entity masking needs entity-pair statistics".into()));
            }
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!("pair quantile {tau} outside (0, 1)")));
            }
            let counts: Vec<u64> = stats.pair_count.values().flat_map(|m| m.values().copied()).collect();
            let threshold = quantile(&counts, tau).unwrap_or(0);
            for (i, inst) in train.instances.iter().enumerate() {
                if stats.pair(&inst.head.name, &inst.tail.name) > threshold {
                    chosen[i] = [true, true];
                }
            }
            json!({"mode": "frequency", "tau": tau, "threshold": threshold})
        }
    };
    let mut counts = MaskCounts { eligible: 2 * n, masked: 0 };
    let instances = train
        .instances
        .iter()
        .zip(&chosen)
        .map(|(inst, [h, t])| {
            counts.masked += usize::from(*h) + usize::from(*t);
            let mut out = inst.clone();
            // right-most mention first so the other span stays valid
            let order = if inst.head.span.start > inst.tail.span.start {
                [(Role::Head, *h), (Role::Tail, *t)]
            } else {
                [(Role::Tail, *t), (Role::Head, *h)]
            };
            for (role, on) in order {
                if on {
                    out = mask_mention(&out, role);
                }
            }
            out
        })
        .collect();
    let mut params = params;
    params["masked"] = json!(counts.masked);
    Ok((train.derive(instances, ProvenanceEntry::new("selective-entity-mask", params)), counts))
}
