//! Bag-of-embeddings reference classifier.
//!
//! `P(y | x, m) = softmax(W · h + b)` with `h = Σᵢ mᵢ·E[xᵢ] / n`, where `n` counts the
//! non-padding tokens of `x` and `m` is a per-token scaling mask (all ones for plain
//! prediction). Tokens of the form `[unusedN]` map to the padding id, which has a zero
//! embedding and is excluded from `n`. Out-of-vocabulary tokens map to a zero `[UNK]`
//! embedding that still counts towards `n`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CapabilitySet, GradientMode, GradientRecords, Handshake, Transport, PROTOCOL_VERSION};
use crate::corpus::{insert_entity_markers, Dataset, LabelSpace, ENTITY_TOKEN};
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
const PAD_ID: usize = 0;
const UNK_ID: usize = 1;

fn is_unused(token: &str) -> bool {
    token == PAD_TOKEN
        || token
            .strip_prefix("[unused")
            .and_then(|rest| rest.strip_suffix(']'))
            .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// L2 penalty on all parameters; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { dim: 8, epochs: 50, learning_rate: 1.0, batch_size: 32, weight_decay: 2e-4, seed: 42 }
    }
}

/// A trained, frozen reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    labels: LabelSpace,
    /// Token strings indexed by id; id 0 is padding, id 1 is unknown.
    vocab: Vec<String>,
    dim: usize,
    /// `vocab.len() × dim`, row-major.
    embeddings: Vec<f64>,
    /// `labels.len() × dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

struct Forward {
    ids: Vec<usize>,
    n: f64,
    #[allow(dead_code)]
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ReferenceModel {
    /// Assembles a model from explicit parameters (used by tests and tooling).
    pub fn from_parts(
        labels: LabelSpace,
        vocab: Vec<String>,
        dim: usize,
        embeddings: Vec<f64>,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut full = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        full.extend(vocab.into_iter().map(|t| t.to_lowercase()));
        if embeddings.len() != (full.len() - 2) * dim {
            return Err(Error::LengthMismatch { expected: (full.len() - 2) * dim, actual: embeddings.len() });
        }
        if weights.len() != labels.len() * dim || bias.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: labels.len() * dim, actual: weights.len() });
        }
        let mut emb = vec![0.0; 2 * dim];
        emb.extend(embeddings);
        let mut model = ReferenceModel { labels, vocab: full, dim, embeddings: emb, weights, bias, index: HashMap::new() };
        model.rebuild_index();
        Ok(model)
    }

    fn rebuild_index(&mut self) {
        self.index = self.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        if is_unused(token) {
            return PAD_ID;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK_ID)
    }

    pub fn is_padding(&self, token: &str) -> bool {
        self.token_id(token) == PAD_ID
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn embedding(&self, token: &str) -> Vec<f64> {
        self.row(self.token_id(token)).to_vec()
    }

    /// Returns a copy with every class weight multiplied by `factor`.
    pub fn scale_weights(&self, factor: f64) -> ReferenceModel {
        let mut m = self.clone();
        m.weights.iter_mut().for_each(|w| *w *= factor);
        m
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.labels.len())
            .map(|c| self.bias[c] + self.weight_row(c).iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>())
            .collect()
    }

    fn forward(&self, tokens: &[String], mask: Option<&[f64]>) -> Forward {
        let ids: Vec<usize> = tokens.iter().map(|t| self.token_id(t)).collect();
        let n = ids.iter().filter(|&&id| id != PAD_ID).count() as f64;
        let mut hidden = vec![0.0; self.dim];
        if n > 0.0 {
            for (i, &id) in ids.iter().enumerate() {
                if id == PAD_ID {
                    continue;
                }
                let m = mask.map_or(1.0, |m| m[i]);
                for (h, e) in hidden.iter_mut().zip(self.row(id)) {
                    *h += m * e / n;
                }
            }
        }
        let probs = softmax(&self.logits(&hidden));
        Forward { ids, n, hidden, probs }
    }

    /// Distribution for a marker-inserted token sequence.
    pub fn predict_tokens(&self, tokens: &[String]) -> Vec<f64> {
        self.forward(tokens, None).probs
    }

    pub fn masked_probs(&self, tokens: &[String], mask: &[f64]) -> Vec<f64> {
        self.forward(tokens, Some(mask)).probs
    }

    /// Distribution computed from explicit per-position vectors in place of embedding
    /// lookups; the divisor still follows the padding pattern of `tokens`.
    pub fn probs_from_vectors(&self, tokens: &[String], vectors: &[Vec<f64>]) -> Vec<f64> {
        let ids: Vec<usize> = tokens.iter().map(|t| self.token_id(t)).collect();
        let n = ids.iter().filter(|&&id| id != PAD_ID).count() as f64;
        let mut hidden = vec![0.0; self.dim];
        if n > 0.0 {
            for (i, &id) in ids.iter().enumerate() {
                if id == PAD_ID {
                    continue;
                }
                for (h, e) in hidden.iter_mut().zip(&vectors[i]) {
                    *h += e / n;
                }
            }
        }
        softmax(&self.logits(&hidden))
    }

    /// Gradient of `-log P(target)` with respect to each position's embedding.
    pub fn embedding_gradient(&self, tokens: &[String], target: usize) -> Vec<Vec<f64>> {
        let f = self.forward(tokens, None);
        let delta: Vec<f64> = f.probs.iter().enumerate().map(|(c, p)| p - if c == target { 1.0 } else { 0.0 }).collect();
        let dh = self.back_to_hidden(&delta);
        f.ids
            .iter()
            .map(|&id| if id == PAD_ID { vec![0.0; self.dim] } else { dh.iter().map(|g| g / f.n).collect() })
            .collect()
    }

    /// `d P(target) / d mᵢ` at `mask`.
    pub fn mask_gradient_at(&self, tokens: &[String], mask: &[f64], target: usize) -> Vec<f64> {
        let f = self.forward(tokens, Some(mask));
        let pt = f.probs[target];
        let dz: Vec<f64> =
            f.probs.iter().enumerate().map(|(c, p)| pt * (if c == target { 1.0 } else { 0.0 } - p)).collect();
        let dh = self.back_to_hidden(&dz);
        f.ids
            .iter()
            .map(|&id| {
                if id == PAD_ID || f.n == 0.0 {
                    0.0
                } else {
                    self.row(id).iter().zip(&dh).map(|(e, g)| e * g).sum::<f64>() / f.n
                }
            })
            .collect()
    }

    fn back_to_hidden(&self, dz: &[f64]) -> Vec<f64> {
        let mut dh = vec![0.0; self.dim];
        for (c, d) in dz.iter().enumerate() {
            for (h, w) in dh.iter_mut().zip(self.weight_row(c)) {
                *h += d * w;
            }
        }
        dh
    }

    /// Vocabulary without padding, unknown, marker and reserved tokens.
    pub fn content_vocabulary(&self) -> Vec<String> {
        self.vocab.iter().skip(2).filter(|t| !(t.starts_with('[') && t.ends_with(']'))).cloned().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: ReferenceModel = serde_json::from_str(&text)?;
        model.rebuild_index();
        Ok(model)
    }
}

impl Transport for ReferenceModel {
    fn handshake(&self) -> Result<Handshake> {
        Ok(Handshake {
            protocol: PROTOCOL_VERSION,
            label_space: self.labels.clone(),
            capabilities: CapabilitySet {
                masked_forward: true,
                word_gradient: true,
                embeddings: true,
                ..CapabilitySet::default()
            },
        })
    }

    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|t| self.predict_tokens(t)).collect())
    }

    fn masked_predict(&self, tokens: &[String], mask: &[f64]) -> Result<Vec<f64>> {
        Ok(self.masked_probs(tokens, mask))
    }

    fn gradient(&self, tokens: &[String], target: &str, mode: GradientMode) -> Result<GradientRecords> {
        if mode == GradientMode::Char {
            return Err(Error::CapabilityMissing("char_gradient"));
        }
        let t = self.labels.index_of(target).ok_or_else(|| Error::UnknownLabel(target.to_string()))?;
        Ok(GradientRecords::Word(self.embedding_gradient(tokens, t)))
    }

    fn mask_gradient(&self, tokens: &[String], mask: &[f64], target: &str) -> Result<Option<Vec<f64>>> {
        let t = self.labels.index_of(target).ok_or_else(|| Error::UnknownLabel(target.to_string()))?;
        Ok(Some(self.mask_gradient_at(tokens, mask, t)))
    }

    fn vocabulary(&self) -> Result<Vec<String>> {
        Ok(self.content_vocabulary())
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(tokens.iter().map(|t| self.embedding(t)).collect())
    }
}

/// Trains the reference model by mini-batch SGD on cross-entropy over
/// marker-inserted instances. Deterministic for a fixed seed.
pub fn train_reference(dataset: &Dataset, config: &TrainConfig) -> Result<ReferenceModel> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if config.dim == 0 || config.batch_size == 0 {
        return Err(Error::Config("dim and batch_size must be positive".into()));
    }
    let labels = dataset.label_space.clone();
    let examples: Vec<(Vec<String>, usize)> = dataset
        .instances
        .iter()
        .map(|inst| {
            let y = labels.index_of(&inst.label).ok_or_else(|| Error::UnknownLabel(inst.label.clone()))?;
            Ok((insert_entity_markers(inst), y))
        })
        .collect::<Result<_>>()?;

    // vocabulary in first-seen order, lower-cased
    let mut vocab: Vec<String> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let marker_tokens = ["[CLS]", "[SEP]", "[E1]", "[/E1]", "[E2]", "[/E2]", ENTITY_TOKEN];
    for tok in marker_tokens.iter().map(|s| s.to_string()).chain(examples.iter().flat_map(|(t, _)| t.iter().cloned())) {
        if is_unused(&tok) {
            continue;
        }
        let key = tok.to_lowercase();
        if seen.insert(key.clone(), ()).is_none() {
            vocab.push(key);
        }
    }

    let dim = config.dim;
    let classes = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb_init = Normal::new(0.0, 0.1).expect("valid normal");
    let w_init = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
    let embeddings: Vec<f64> = (0..vocab.len() * dim).map(|_| emb_init.sample(&mut rng)).collect();
    let weights: Vec<f64> = (0..classes * dim).map(|_| w_init.sample(&mut rng)).collect();
    let mut model = ReferenceModel::from_parts(labels, vocab, dim, embeddings, weights, vec![0.0; classes])?;

    let encoded: Vec<(Vec<usize>, usize)> =
        examples.iter().map(|(t, y)| (t.iter().map(|tok| model.token_id(tok)).collect(), *y)).collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let lr = config.learning_rate;
    let decay = config.weight_decay;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = lr / batch.len() as f64;
            let mut g_w = vec![0.0; classes * dim];
            let mut g_b = vec![0.0; classes];
            let mut g_e: HashMap<usize, Vec<f64>> = HashMap::new();
            for &ex in batch {
                let (ids, y) = &encoded[ex];
                let n = ids.iter().filter(|&&id| id != PAD_ID).count() as f64;
                let mut hidden = vec![0.0; dim];
                if n > 0.0 {
                    for &id in ids.iter().filter(|&&id| id != PAD_ID) {
                        for (h, e) in hidden.iter_mut().zip(model.row(id)) {
                            *h += e / n;
                        }
                    }
                }
                let probs = softmax(&model.logits(&hidden));
                epoch_loss -= probs[*y].max(f64::MIN_POSITIVE).ln();
                let delta: Vec<f64> =
                    probs.iter().enumerate().map(|(c, p)| p - if c == *y { 1.0 } else { 0.0 }).collect();
                for c in 0..classes {
                    g_b[c] += delta[c];
                    for k in 0..dim {
                        g_w[c * dim + k] += delta[c] * hidden[k];
                    }
                }
                if n > 0.0 {
                    let dh = model.back_to_hidden(&delta);
                    for &id in ids.iter().filter(|&&id| id != PAD_ID) {
                        let acc = g_e.entry(id).or_insert_with(|| vec![0.0; dim]);
                        for k in 0..dim {
                            acc[k] += dh[k] / n;
                        }
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&g_w) {
                *w -= scale * g + lr * decay * *w;
            }
            for (b, g) in model.bias.iter_mut().zip(&g_b) {
                *b -= scale * g;
            }
            let mut touched: Vec<usize> = g_e.keys().copied().collect();
            touched.sort_unstable();
            for id in touched {
                if id == UNK_ID {
                    continue;
                }
                let g = &g_e[&id];
                let row = &mut model.embeddings[id * dim..(id + 1) * dim];
                for k in 0..dim {
                    row[k] -= scale * g[k] + lr * decay * row[k];
                }
            }
        }
        let mean_loss = epoch_loss / encoded.len() as f64;
        if !mean_loss.is_finite() || model.weights.iter().chain(&model.embeddings).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, detail: format!("mean loss {mean_loss}, lr {lr}") });
        }
        tracing::debug!(epoch, mean_loss, "reference model epoch");
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, Instance, Span};
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn inst(words: &str, label: &str) -> Instance {
        let t = toks(words);
        let n = t.len();
        Instance::new(
            t.clone(),
            EntityMention::new(t[0].clone(), Span::new(0, 1), "PERSON"),
            EntityMention::new(t[n - 1].clone(), Span::new(n - 1, n), "LOCATION"),
            label,
        )
        .unwrap()
    }

    /// Two labels told apart only by a trigger word.
    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fillers = ["the", "quiet", "old", "river", "year", "town", "bright", "morning"];
        let mut out = Vec::new();
        for i in 0..n {
            let (label, trigger) = if i % 2 == 0 { ("born", "birthed") } else { ("works", "employed") };
            let mut words = vec!["Ann".to_string()];
            for _ in 0..rng.gen_range(1..4) {
                words.push(fillers[rng.gen_range(0..fillers.len())].to_string());
            }
            words.push(trigger.to_string());
            words.push("Paris".to_string());
            out.push(inst(&words.join(" "), label));
        }
        Dataset::from_instances(out)
    }

    fn central_diff_check(model: &ReferenceModel, tokens: &[String], target: usize) -> f64 {
        let analytic = model.embedding_gradient(tokens, target);
        let base: Vec<Vec<f64>> = tokens.iter().map(|t| model.embedding(t)).collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..tokens.len() {
            for k in 0..model.dim() {
                let mut plus = base.clone();
                plus[i][k] += h;
                let mut minus = base.clone();
                minus[i][k] -= h;
                let lp = -model.probs_from_vectors(tokens, &plus)[target].ln();
                let lm = -model.probs_from_vectors(tokens, &minus)[target].ln();
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic[i][k];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn separable_corpus_trains_to_full_accuracy() {
        let ds = separable(200, 3);
        let model = train_reference(&ds, &TrainConfig { epochs: 20, ..TrainConfig::default() }).unwrap();
        let correct = ds
            .instances
            .iter()
            .filter(|i| {
                let p = model.predict_tokens(&insert_entity_markers(i));
                model.labels().labels[super::super::argmax(&p)] == i.label
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99, "train accuracy {correct}/{}", ds.len());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable(60, 5);
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let a = serde_json::to_string(&train_reference(&ds, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&train_reference(&ds, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_label_dataset_is_certain() {
        let ds = Dataset::from_instances(vec![inst("Ann lived Paris", "only"), inst("Bob met Rome", "only")]);
        let model = train_reference(&ds, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        for t in [toks("[CLS] anything at all [SEP]"), toks("zzz")] {
            assert!(model.predict_tokens(&t)[0] > 0.99);
        }
    }

    #[test]
    fn empty_dataset_and_divergence_are_errors() {
        assert!(train_reference(&Dataset::default(), &TrainConfig::default()).is_err());
        let ds = separable(40, 1);
        let err = train_reference(&ds, &TrainConfig { learning_rate: 1e308, epochs: 3, ..TrainConfig::default() });
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ds = separable(80, 7);
        let model = train_reference(&ds, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let inst = &ds.instances[rng.gen_range(0..ds.len())];
            let target = rng.gen_range(0..model.labels().len());
            let err = central_diff_check(&model, &insert_entity_markers(inst), target);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn padding_positions_have_zero_gradient() {
        let ds = separable(20, 2);
        let model = train_reference(&ds, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
        let tokens = toks("[CLS] Ann [unused5] Paris [SEP]");
        let g = model.embedding_gradient(&tokens, 0);
        assert!(g[2].iter().all(|v| *v == 0.0));
        assert!(g[1].iter().any(|v| *v != 0.0));
        assert_eq!(model.mask_gradient_at(&tokens, &[1.0; 5], 0)[2], 0.0);
    }

    #[test]
    fn doubled_weights_gradient_recomputes_softmax() {
        let ds = separable(40, 9);
        let model = train_reference(&ds, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        let doubled = model.scale_weights(2.0);
        let tokens = insert_entity_markers(&ds.instances[0]);
        let target = 1;
        let g2 = doubled.embedding_gradient(&tokens, target);
        // recompute d(-log p)/de_i = (2W)^T (p2 - onehot) / n with p2 from the doubled model
        let p2 = doubled.predict_tokens(&tokens);
        let n = tokens.len() as f64;
        for k in 0..model.dim() {
            let expected: f64 = (0..model.labels().len())
                .map(|c| 2.0 * model.weights[c * model.dim() + k] * (p2[c] - if c == target { 1.0 } else { 0.0 }))
                .sum::<f64>()
                / n;
            assert!((g2[1][k] - expected).abs() < 1e-12);
        }
        // and it is not simply twice the original gradient
        let g1 = model.embedding_gradient(&tokens, target);
        assert!((0..model.dim()).any(|k| (g2[1][k] - 2.0 * g1[1][k]).abs() > 1e-9));
    }

    #[test]
    fn masks_behave_as_documented() {
        let ds = separable(60, 4);
        let model = train_reference(&ds, &TrainConfig { epochs: 4, ..TrainConfig::default() }).unwrap();
        let tokens = insert_entity_markers(&ds.instances[1]);
        let ones = vec![1.0; tokens.len()];
        assert_eq!(model.masked_probs(&tokens, &ones), model.predict_tokens(&tokens));
        let zeros = vec![0.0; tokens.len()];
        assert_eq!(model.masked_probs(&tokens, &zeros), softmax(&model.bias));
        // logits are linear in a uniform mask scale
        let half = vec![0.5; tokens.len()];
        let f = model.forward(&tokens, Some(&half));
        let z_half = model.logits(&f.hidden);
        let z0 = model.bias.clone();
        let z1 = model.logits(&model.forward(&tokens, None).hidden);
        for c in 0..z0.len() {
            let (lo, hi) = if z0[c] <= z1[c] { (z0[c], z1[c]) } else { (z1[c], z0[c]) };
            assert!(lo - 1e-12 <= z_half[c] && z_half[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn unused_tokens_map_to_padding() {
        let ds = separable(10, 1);
        let model = train_reference(&ds, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
        assert!(model.is_padding("[unused5]"));
        assert!(model.is_padding("[unused0]"));
        assert!(!model.is_padding("[unused]"));
        assert_eq!(model.token_id("never-seen"), UNK_ID);
        assert!(!model.content_vocabulary().iter().any(|t| t.starts_with('[')));
    }

    #[test]
    fn save_load_round_trip() {
        let ds = separable(30, 8);
        let model = train_reference(&ds, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = ReferenceModel::load(&path).unwrap();
        let t = insert_entity_markers(&ds.instances[3]);
        assert_eq!(loaded.predict_tokens(&t), model.predict_tokens(&t));
        assert_eq!(loaded, model);
    }
}
