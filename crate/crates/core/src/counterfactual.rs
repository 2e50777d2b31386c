//! Integrated-gradients attribution along the token-mask path, informative-token
//! selection, contrastive masking and counterfactual data augmentation.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{mark_instance, Dataset, Instance, ProvenanceEntry, UNUSED_TOKEN};
use crate::error::{Error, Result};
use crate::lexicon::StopWords;
use crate::oracle::OracleHandle;

/// Step used for central differences through `masked_forward`.
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionMode {
    /// Riemann sum over the per-token mask path from all-zeros to all-ones.
    MaskPath,
    /// Head-level interactions computed by the oracle, summed per token.
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// The sequence the scores refer to (marker-inserted).
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub steps: usize,
    pub baseline: String,
    pub target_label: String,
    pub mode: AttributionMode,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

fn mask_derivative(oracle: &OracleHandle, tokens: &[String], mask: &[f64], target: &str, y: usize) -> Result<Vec<f64>> {
    if let Some(g) = oracle.mask_gradient(tokens, mask, target)? {
        if g.len() != tokens.len() {
            return Err(Error::LengthMismatch { expected: tokens.len(), actual: g.len() });
        }
        return Ok(g);
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut probe = mask.to_vec();
    for j in 0..tokens.len() {
        let hi = (mask[j] + FD_STEP).min(1.0);
        let lo = (mask[j] - FD_STEP).max(0.0);
        probe[j] = hi;
        let f_hi = oracle.masked_forward(tokens, &probe)?.probs[y];
        probe[j] = lo;
        let f_lo = oracle.masked_forward(tokens, &probe)?.probs[y];
        probe[j] = mask[j];
        out.push((f_hi - f_lo) / (hi - lo));
    }
    Ok(out)
}

/// Attribution of every position of `tokens` toward `target_label`.
///
/// Mask-path mode: `Atr = (m - m') * sum_{i=1..s} dF(m' + i/s (m - m'))/dm / s` with
/// `m` all ones, `m'` all zeros and `F` the target probability.
pub fn integrated_gradients(
    oracle: &OracleHandle,
    tokens: &[String],
    target_label: &str,
    steps: usize,
    mode: AttributionMode,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    let y = oracle.label_index(target_label)?;
    let n = tokens.len();
    let scores = match mode {
        AttributionMode::MaskPath => {
            let mut acc = vec![0.0; n];
            for i in 1..=steps {
                let alpha = i as f64 / steps as f64;
                let g = mask_derivative(oracle, tokens, &vec![alpha; n], target_label, y)?;
                for (a, d) in acc.iter_mut().zip(g) {
                    *a += d;
                }
            }
            acc.into_iter().map(|a| a / steps as f64).collect::<Vec<_>>()
        }
        AttributionMode::Head => {
            let heads = oracle.attention_attribution(tokens, target_label, steps)?;
            let mut acc = vec![0.0; n];
            for head in &heads {
                if head.len() != n || head.iter().any(|r| r.len() != n) {
                    return Err(Error::LengthMismatch { expected: n, actual: head.len() });
                }
                for (i, row) in head.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        acc[i] += v;
                        if i != j {
                            acc[j] += v;
                        }
                    }
                }
            }
            acc
        }
    };
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("attribution at position {bad} of `{}`", tokens.join(" "))));
    }
    Ok(AttributionMap {
        tokens: tokens.to_vec(),
        scores,
        steps,
        baseline: "zero-mask".into(),
        target_label: target_label.to_string(),
        mode,
    })
}

/// `F(all ones) - F(all zeros)` for the completeness check.
pub fn path_endpoints(oracle: &OracleHandle, tokens: &[String], target_label: &str) -> Result<(f64, f64)> {
    let y = oracle.label_index(target_label)?;
    let one = oracle.masked_forward(tokens, &vec![1.0; tokens.len()])?.probs[y];
    let zero = oracle.masked_forward(tokens, &vec![0.0; tokens.len()])?.probs[y];
    Ok((one, zero))
}

/// The `k` highest scores outside `exclusions`, best first; ties go to the lower index.
pub fn select_top_k(scores: &[f64], k: usize, exclusions: &BTreeSet<usize>) -> Result<Vec<usize>> {
    let mut cands: Vec<usize> = (0..scores.len()).filter(|i| !exclusions.contains(i)).collect();
    if k > cands.len() {
        return Err(Error::TopKTooLarge { k, available: cands.len() });
    }
    cands.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    cands.truncate(k);
    Ok(cands)
}

/// Source positions never selected for masking: entity spans and stop words.
pub fn protected_positions(instance: &Instance, stopwords: Option<&StopWords>) -> BTreeSet<usize> {
    (0..instance.tokens.len())
        .filter(|&i| instance.in_entity(i) || stopwords.is_some_and(|s| s.contains(&instance.tokens[i])))
        .collect()
}

/// Replaces `positions` with the reserved unused token and relabels to `na_label`.
pub fn contrastive_mask(instance: &Instance, positions: &[usize], na_label: &str) -> Result<Instance> {
    let mut out = instance.clone();
    for &p in positions {
        if p >= out.tokens.len() {
            return Err(Error::LengthMismatch { expected: out.tokens.len(), actual: p });
        }
        if instance.in_entity(p) {
            return Err(Error::ProtectedPosition(p));
        }
        out.tokens[p] = UNUSED_TOKEN.to_string();
    }
    out.label = na_label.to_string();
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdaConfig {
    pub k: usize,
    pub steps: usize,
    /// Label used when the dataset has none.
    pub na_label: String,
    pub exclude_stopwords: bool,
}

impl Default for CdaConfig {
    fn default() -> Self {
        CdaConfig { k: 1, steps: 20, na_label: "NA".into(), exclude_stopwords: true }
    }
}

/// Per-instance record of what was masked and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub source_index: usize,
    /// Source positions, best first.
    pub positions: Vec<usize>,
    pub attribution: AttributionMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdaFailure {
    pub source_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CdaOutput {
    /// Masked copies relabeled NA, in source order.
    pub masked: Vec<Instance>,
    pub records: Vec<MaskRecord>,
    pub failures: Vec<CdaFailure>,
    pub na_label: String,
    pub na_added: bool,
}

fn mask_one(
    oracle: &OracleHandle,
    inst: &Instance,
    index: usize,
    stopwords: Option<&StopWords>,
    config: &CdaConfig,
    na: &str,
) -> Result<(Instance, MaskRecord)> {
    let marked = mark_instance(inst);
    let attr = integrated_gradients(oracle, &marked.tokens, &inst.label, config.steps, AttributionMode::MaskPath)?;
    let protected = protected_positions(inst, stopwords);
    // exclusions in marked coordinates: markers plus protected source positions
    let exclusions: BTreeSet<usize> = marked
        .source
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none_or(|p| protected.contains(&p)))
        .map(|(i, _)| i)
        .collect();
    let top = select_top_k(&attr.scores, config.k, &exclusions)?;
    let positions: Vec<usize> = top.iter().map(|&i| marked.source[i].expect("not a marker")).collect();
    let masked = contrastive_mask(inst, &positions, na)?;
    Ok((masked, MaskRecord { source_index: index, positions, attribution: attr }))
}

/// Attributes, selects the top `k` context tokens and masks them, for every instance
/// whose label passes `include`.
pub fn contrastive_masks(
    dataset: &Dataset,
    oracle: &OracleHandle,
    stopwords: &StopWords,
    config: &CdaConfig,
    include: impl Fn(&Instance) -> bool + Sync,
) -> Result<CdaOutput> {
    oracle.ensure_covers(&dataset.label_space)?;
    let (na, na_added) = match &dataset.label_space.na_label {
        Some(na) => (na.clone(), false),
        None => (config.na_label.clone(), true),
    };
    let stop = config.exclude_stopwords.then_some(stopwords);
    let outcomes: Vec<Option<std::result::Result<(Instance, MaskRecord), CdaFailure>>> = dataset
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            if !include(inst) {
                return Ok(None);
            }
            match mask_one(oracle, inst, i, stop, config, &na) {
                Ok(v) => Ok(Some(Ok(v))),
                Err(e @ (Error::TopKTooLarge { .. } | Error::NonFinite(_))) => {
                    Ok(Some(Err(CdaFailure { source_index: i, reason: e.to_string() })))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut out = CdaOutput { masked: Vec::new(), records: Vec::new(), failures: Vec::new(), na_label: na, na_added };
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok((m, r)) => {
                out.masked.push(m);
                out.records.push(r);
            }
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

/// Counterfactual data augmentation: the dataset followed by one masked NA copy of each
/// instance. NA is added to the label space when missing.
pub fn cda_augment(dataset: &Dataset, oracle: &OracleHandle, stopwords: &StopWords, config: &CdaConfig) -> Result<(Dataset, CdaOutput)> {
    let out = contrastive_masks(dataset, oracle, stopwords, config, |_| true)?;
    let (label_space, _) = dataset.label_space.with_na(&out.na_label);
    let mut instances = dataset.instances.clone();
    instances.extend(out.masked.iter().cloned());
    let mut augmented = dataset.derive(
        instances,
        ProvenanceEntry::new(
            "cda",
            json!({
                "k": config.k,
                "steps": config.steps,
                "na_label": out.na_label,
                "na_added": out.na_added,
                "masked": out.masked.len(),
                "failures": out.failures.len(),
            }),
        ),
    );
    augmented.label_space = label_space;
    Ok((augmented, out))
}

/// Contrast set: masked NA copies of the non-NA instances only.
pub fn contrast_set(dataset: &Dataset, oracle: &OracleHandle, stopwords: &StopWords, config: &CdaConfig) -> Result<(Dataset, CdaOutput)> {
    let space = &dataset.label_space;
    let out = contrastive_masks(dataset, oracle, stopwords, config, |i| !space.is_na(&i.label))?;
    Ok((contrast_from(dataset, &out, config), out))
}

/// Contrast set assembled from an existing masking pass, keeping only the copies whose
/// source instance is not NA.
pub fn contrast_from(dataset: &Dataset, out: &CdaOutput, config: &CdaConfig) -> Dataset {
    let space = &dataset.label_space;
    let masked: Vec<Instance> = out
        .records
        .iter()
        .zip(&out.masked)
        .filter(|(r, _)| !space.is_na(&dataset.instances[r.source_index].label))
        .map(|(_, m)| m.clone())
        .collect();
    let failures = out.failures.iter().filter(|f| !space.is_na(&dataset.instances[f.source_index].label)).count();
    let (label_space, _) = space.with_na(&out.na_label);
    let mut set = dataset.derive(
        masked,
        ProvenanceEntry::new(
            "contrast-set",
            json!({
                "contrast": true,
                "k": config.k,
                "steps": config.steps,
                "na_label": out.na_label,
                "na_added": out.na_added,
                "failures": failures,
            }),
        ),
    );
    set.label_space = label_space;
    set
}
