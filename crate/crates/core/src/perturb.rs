//! Randomization tests: label-preserving entity and context permutations, masked-LM
//! fill candidates, robust-set construction and augmentation emitters.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{mark_instance, Dataset, Edit, Instance, ProvenanceEntry};
use crate::error::{Error, Result};
use crate::lexicon::{match_case, Lexicon};
use crate::oracle::{derive_seed, OracleHandle};

pub const GEN_ENTITY: &str = "entity";
pub const GEN_SYNONYM: &str = "synonym";
pub const GEN_FILL_IN: &str = "fill-in";
pub const GEN_LM_MASK: &str = "lm-mask";

/// Token shown to a masked LM at the position being filled.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    pub instance: Instance,
    pub source_index: usize,
    pub edits: Vec<Edit>,
}

fn toks(name: &str) -> Vec<String> {
    name.split_whitespace().map(str::to_string).collect()
}

/// Start positions of `needle` in `hay` outside `blocked`, left to right, non-overlapping.
fn occurrences(hay: &[String], needle: &[String], blocked: &mut Vec<(usize, usize)>) -> Vec<usize> {
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > hay.len() {
        return out;
    }
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        let end = i + needle.len();
        let free = blocked.iter().all(|&(s, e)| end <= s || i >= e);
        if free && hay[i..end] == *needle {
            out.push(i);
            blocked.push((i, end));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// Replaces head and/or tail with a same-type name from `pools`; other occurrences of a
/// replaced mention are rewritten consistently.
///
/// Fails with [`Error::EmptyPool`] when neither mention has an alternative.
pub fn entity_permute<R: Rng + ?Sized>(instance: &Instance, lex: &Lexicon, rng: &mut R) -> Result<PerturbedInstance> {
    let head_new = lex.pools.sample_entity(&instance.head.etype, rng, Some(&instance.head.name));
    let tail_new = lex.pools.sample_entity(&instance.tail.etype, rng, Some(&instance.tail.name));
    if let (Err(e), Err(_)) = (&head_new, &tail_new) {
        return Err(Error::EmptyPool(match e {
            Error::EmptyPool(t) => t.clone(),
            other => other.to_string(),
        }));
    }
    let shared = instance.head.name.to_lowercase() == instance.tail.name.to_lowercase();
    let mut blocked = vec![
        (instance.head.span.start, instance.head.span.end),
        (instance.tail.span.start, instance.tail.span.end),
    ];
    let mut edits = Vec::new();
    for (mention, new) in [(&instance.head, head_new), (&instance.tail, tail_new)] {
        let Ok(new) = new else { continue };
        let old = instance.tokens[mention.span.range()].to_vec();
        let new = toks(&new);
        edits.push(Edit { position: mention.span.start, old: old.clone(), new: new.clone(), generator: GEN_ENTITY.into() });
        if !shared {
            for pos in occurrences(&instance.tokens, &old, &mut blocked) {
                edits.push(Edit { position: pos, old: old.clone(), new: new.clone(), generator: GEN_ENTITY.into() });
            }
        }
    }
    edits.sort_by_key(|e| e.position);
    let mut out = instance.clone();
    for e in edits.iter().rev() {
        out = out.splice(e.position, e.position + e.old.len(), &e.new)?;
    }
    Ok(PerturbedInstance { instance: out, source_index: 0, edits })
}

/// Top `top_n` masked-LM fills for `position` of `tokens`, excluding punctuation-only
/// tokens and the original token.
pub fn mask_fill_candidates(
    oracle: &OracleHandle,
    tokens: &[String],
    position: usize,
    top_n: usize,
) -> Result<Vec<String>> {
    if top_n == 0 {
        return Ok(Vec::new());
    }
    if position >= tokens.len() {
        return Err(Error::LengthMismatch { expected: tokens.len(), actual: position });
    }
    let original = tokens[position].to_lowercase();
    let mut masked = tokens.to_vec();
    masked[position] = MASK_TOKEN.to_string();
    let raw = oracle.fill_mask(&masked, position, top_n + 8)?;
    let mut out: Vec<String> = Vec::new();
    for cand in raw {
        let c = cand.trim();
        if c.is_empty()
            || !c.chars().any(char::is_alphanumeric)
            || c.to_lowercase() == original
            || out.iter().any(|o| o.eq_ignore_ascii_case(c))
        {
            continue;
        }
        out.push(c.to_string());
        if out.len() == top_n {
            break;
        }
    }
    Ok(out)
}

/// Substitutes inter-entity, non-stopword tokens with probability `rate`, drawing
/// candidates from synonyms, then entity fill-ins, then masked-LM fills.
pub fn context_permute<R: Rng + ?Sized>(
    instance: &Instance,
    lex: &Lexicon,
    oracle: Option<&OracleHandle>,
    rng: &mut R,
    rate: f64,
) -> Result<PerturbedInstance> {
    let mut edits = Vec::new();
    let mut tokens = instance.tokens.clone();
    let marked = mark_instance(instance);
    for pos in instance.between_entities() {
        let word = &instance.tokens[pos];
        if instance.in_entity(pos) || lex.stopwords.contains(word) || !word.chars().any(char::is_alphanumeric) {
            continue;
        }
        if rate <= 0.0 || !rng.gen_bool(rate.min(1.0)) {
            continue;
        }
        let syns = lex.synonyms.synonyms(word);
        let (cands, generator): (Vec<String>, &str) = if !syns.is_empty() {
            (syns.to_vec(), GEN_SYNONYM)
        } else {
            let fills = lex.pools.fill_ins(word);
            if !fills.is_empty() {
                (fills.into_iter().cloned().collect(), GEN_FILL_IN)
            } else if let Some(o) = oracle {
                let at = marked.marked_index(pos).expect("source position is marked");
                (mask_fill_candidates(o, &marked.tokens, at, 2)?, GEN_LM_MASK)
            } else {
                (Vec::new(), GEN_SYNONYM)
            }
        };
        if cands.is_empty() {
            continue;
        }
        let pick = match_case(word, &cands[rng.gen_range(0..cands.len())]);
        edits.push(Edit { position: pos, old: vec![word.clone()], new: vec![pick.clone()], generator: generator.into() });
        tokens[pos] = pick;
    }
    let mut out = instance.clone();
    out.tokens = tokens;
    Ok(PerturbedInstance { instance: out, source_index: 0, edits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Entity,
    Context,
    All,
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(PerturbMode::Entity),
            "context" => Ok(PerturbMode::Context),
            "all" => Ok(PerturbMode::All),
            other => Err(Error::Config(format!("unknown perturbation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub rate: f64,
    pub seed: u64,
    pub audit_size: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { rate: 0.15, seed: 42, audit_size: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub source_index: usize,
    pub generator: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorCounts {
    pub attempted: usize,
    pub produced: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub sources: usize,
    pub entity: GeneratorCounts,
    pub context: GeneratorCounts,
    pub skips: Vec<Skip>,
}

impl SkipReport {
    /// Skips caused by missing alternatives (entity pools too small). Context skips only
    /// mean that no position was sampled and are not failures.
    pub fn failures(&self) -> usize {
        self.skips.iter().filter(|s| s.generator == GEN_ENTITY).count()
    }
}

/// One original/perturbed pair for human review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub source_index: usize,
    pub label: String,
    pub original: String,
    pub perturbed: String,
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone)]
pub struct RobustSet {
    pub robust: Dataset,
    pub perturbed: Vec<PerturbedInstance>,
    pub audit: Vec<AuditRecord>,
    pub report: SkipReport,
}

fn run_generator(
    dataset: &Dataset,
    lex: &Lexicon,
    oracle: Option<&OracleHandle>,
    config: &PerturbConfig,
    stream: &str,
) -> Result<Vec<std::result::Result<PerturbedInstance, Skip>>> {
    dataset
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream, i as u64));
            let generated = if stream == GEN_ENTITY {
                entity_permute(inst, lex, &mut rng)
            } else {
                context_permute(inst, lex, oracle, &mut rng, config.rate)
            };
            match generated {
                Ok(p) if p.edits.is_empty() => Ok(Err(Skip {
                    source_index: i,
                    generator: stream.into(),
                    reason: "no position was perturbed".into(),
                })),
                Ok(mut p) => {
                    p.source_index = i;
                    Ok(Ok(p))
                }
                Err(Error::EmptyPool(t)) => Ok(Err(Skip {
                    source_index: i,
                    generator: stream.into(),
                    reason: format!("entity pool for `{t}` has no alternative name"),
                })),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Builds the entity, context or combined robust set plus an audit sample.
pub fn build_robust_set(
    dataset: &Dataset,
    mode: PerturbMode,
    lex: &Lexicon,
    oracle: Option<&OracleHandle>,
    config: &PerturbConfig,
) -> Result<RobustSet> {
    if !(0.0..=1.0).contains(&config.rate) {
        return Err(Error::Config(format!("rate {} outside [0, 1]", config.rate)));
    }
    let oracle = match oracle {
        Some(o) if o.capabilities()?.fill_mask => Some(o),
        _ => None,
    };
    let mut report = SkipReport { sources: dataset.len(), ..Default::default() };
    let mut perturbed = Vec::new();
    let streams: &[&str] = match mode {
        PerturbMode::Entity => &[GEN_ENTITY],
        PerturbMode::Context => &["context"],
        PerturbMode::All => &[GEN_ENTITY, "context"],
    };
    for stream in streams {
        let counts = if *stream == GEN_ENTITY { &mut report.entity } else { &mut report.context };
        for r in run_generator(dataset, lex, oracle, config, stream)? {
            counts.attempted += 1;
            match r {
                Ok(p) => {
                    counts.produced += 1;
                    perturbed.push(p);
                }
                Err(s) => {
                    counts.skipped += 1;
                    report.skips.push(s);
                }
            }
        }
    }
    let instances: Vec<Instance> = perturbed.iter().map(|p| p.instance.clone()).collect();
    let robust = dataset.derive(
        instances,
        ProvenanceEntry::new(
            "robust-set",
            json!({
                "mode": mode,
                "rate": config.rate,
                "seed": config.seed,
                "entity_produced": report.entity.produced,
                "context_produced": report.context.produced,
                "skipped": report.skips.len(),
                "unknown_type_fallback": dataset.instances.iter().any(|i| !lex.pools.has_pool(&i.head.etype) || !lex.pools.has_pool(&i.tail.etype)),
            }),
        ),
    );
    let audit = audit_sample(dataset, &perturbed, config.audit_size, config.seed);
    Ok(RobustSet { robust, perturbed, audit, report })
}

/// Uniform random subset of `perturbed`, in robust-set order.
pub fn audit_sample(source: &Dataset, perturbed: &[PerturbedInstance], size: usize, seed: u64) -> Vec<AuditRecord> {
    let n = perturbed.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "audit", 0));
    let mut picked = sample(&mut rng, n, size.min(n)).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let p = &perturbed[i];
            AuditRecord {
                source_index: p.source_index,
                label: p.instance.label.clone(),
                original: source.instances[p.source_index].tokens.join(" "),
                perturbed: p.instance.tokens.join(" "),
                edits: p.edits.clone(),
            }
        })
        .collect()
}

/// Data augmentation: the original training set followed by its perturbed copies.
pub fn augment(train: &Dataset, perturbed: &[PerturbedInstance], mode: PerturbMode) -> Dataset {
    let mut instances = train.instances.clone();
    instances.extend(perturbed.iter().map(|p| p.instance.clone()));
    train.derive(
        instances,
        ProvenanceEntry::new("augment", json!({"mode": mode, "added": perturbed.len()})),
    )
}
