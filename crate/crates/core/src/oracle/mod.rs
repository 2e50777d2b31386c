//! Classifier oracles behind one capability-negotiated contract.
//!
//! An [`OracleHandle`] wraps a [`Transport`] (the in-process [`ReferenceModel`], a wire
//! connection, or a test double), caches its handshake and counts every query.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};

pub mod conformance;
pub mod reference;
pub mod wire;

pub use reference::{train_reference, ReferenceModel, TrainConfig};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySet {
    pub predict: bool,
    pub masked_forward: bool,
    pub word_gradient: bool,
    pub char_gradient: bool,
    pub attention_attribution: bool,
    /// Masked-LM candidate generation (an adapter-level op).
    pub fill_mask: bool,
    /// `vocab` and `embed` ops, needed for word-level HotFlip over the wire.
    pub embeddings: bool,
    /// Character alphabet; required when `char_gradient` is set.
    pub alphabet: Option<Vec<char>>,
}

impl Default for CapabilitySet {
    fn default() -> Self {
        CapabilitySet {
            predict: true,
            masked_forward: false,
            word_gradient: false,
            char_gradient: false,
            attention_attribution: false,
            fill_mask: false,
            embeddings: false,
            alphabet: None,
        }
    }
}

impl CapabilitySet {
    pub fn validate(&self) -> Result<()> {
        if self.char_gradient && self.alphabet.as_ref().is_none_or(|a| a.is_empty()) {
            return Err(Error::Protocol("char_gradient declared without an alphabet".into()));
        }
        Ok(())
    }
}

/// What an oracle says about itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub protocol: u32,
    pub label_space: LabelSpace,
    pub capabilities: CapabilitySet,
}

/// A distribution over the oracle's label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub argmax: usize,
    pub label: String,
}

impl Prediction {
    /// Validates `probs` (non-negative, finite, sums to 1 within 1e-6) and takes the argmax,
    /// lowest index on ties.
    pub fn from_probs(probs: Vec<f64>, labels: &LabelSpace) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: labels.len(), actual: probs.len() });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite(format!("invalid probability vector {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Oracle(format!("probabilities sum to {sum}")));
        }
        let argmax = argmax(&probs);
        Ok(Prediction { label: labels.labels[argmax].clone(), probs, argmax })
    }

    pub fn prob_of(&self, index: usize) -> f64 {
        self.probs.get(index).copied().unwrap_or(0.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-position input gradients of the target-label loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GradientRecords {
    /// One embedding-sized vector per token position.
    Word(Vec<Vec<f64>>),
    /// Per token, per character, one entry per alphabet symbol.
    Char(Vec<Vec<Vec<f64>>>),
}

impl GradientRecords {
    pub fn len(&self) -> usize {
        match self {
            GradientRecords::Word(g) => g.len(),
            GradientRecords::Char(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_finite(&self) -> Result<()> {
        let finite = match self {
            GradientRecords::Word(g) => g.iter().flatten().all(|x| x.is_finite()),
            GradientRecords::Char(g) => g.iter().flatten().flatten().all(|x| x.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("oracle returned non-finite gradients".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Word,
    Char,
}

/// The raw operations an oracle backend implements. Optional operations default to
/// a capability-missing error.
pub trait Transport: Send + Sync {
    fn handshake(&self) -> Result<Handshake>;

    /// Probability vectors, one per input sequence.
    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>>;

    fn masked_predict(&self, _tokens: &[String], _mask: &[f64]) -> Result<Vec<f64>> {
        Err(Error::CapabilityMissing("masked_forward"))
    }

    fn gradient(&self, _tokens: &[String], _target: &str, _mode: GradientMode) -> Result<GradientRecords> {
        Err(Error::CapabilityMissing("word_gradient"))
    }

    /// Analytic d P(target) / d mask, when the backend can produce it.
    fn mask_gradient(&self, _tokens: &[String], _mask: &[f64], _target: &str) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    /// Ranked masked-LM fills for `position` (already replaced by a mask token).
    fn fill_mask(&self, _tokens: &[String], _position: usize, _top: usize) -> Result<Vec<String>> {
        Err(Error::CapabilityMissing("fill_mask"))
    }

    fn vocabulary(&self) -> Result<Vec<String>> {
        Err(Error::CapabilityMissing("embeddings"))
    }

    fn embed(&self, _tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        Err(Error::CapabilityMissing("embeddings"))
    }

    /// Head-level integrated-gradient interactions, `[head][from][to]`.
    fn attention_attribution(&self, _tokens: &[String], _target: &str, _steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        Err(Error::CapabilityMissing("attention_attribution"))
    }
}

struct Shared {
    transport: Arc<dyn Transport>,
    handshake: OnceLock<Handshake>,
}

/// A classifier with cached capabilities and an exact query counter.
///
/// Cloning shares the counter; [`OracleHandle::scoped`] creates a child whose counter
/// also feeds its parents.
#[derive(Clone)]
pub struct OracleHandle {
    shared: Arc<Shared>,
    counters: Vec<Arc<AtomicU64>>,
    retries: usize,
}

impl std::fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleHandle").field("queries", &self.queries()).finish()
    }
}

impl OracleHandle {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self::from_arc(Arc::new(transport))
    }

    pub fn from_arc(transport: Arc<dyn Transport>) -> Self {
        OracleHandle {
            shared: Arc::new(Shared { transport, handshake: OnceLock::new() }),
            counters: vec![Arc::new(AtomicU64::new(0))],
            retries: 2,
        }
    }

    /// A handle over the same oracle with a fresh counter that also feeds this one.
    pub fn scoped(&self) -> OracleHandle {
        let mut counters = vec![Arc::new(AtomicU64::new(0))];
        counters.extend(self.counters.iter().cloned());
        OracleHandle { shared: self.shared.clone(), counters, retries: self.retries }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.shared.transport
    }

    pub fn queries(&self) -> u64 {
        self.counters[0].load(Ordering::SeqCst)
    }

    fn count(&self, n: usize) {
        for c in &self.counters {
            c.fetch_add(n as u64, Ordering::SeqCst);
        }
    }

    fn retrying<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    tracing::warn!(attempt, error = %e, "retrying oracle request");
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn handshake(&self) -> Result<&Handshake> {
        if let Some(h) = self.shared.handshake.get() {
            return Ok(h);
        }
        let h = self.retrying(|| self.shared.transport.handshake())?;
        if h.protocol != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "protocol version {} not supported (expected {PROTOCOL_VERSION})",
                h.protocol
            )));
        }
        h.capabilities.validate()?;
        Ok(self.shared.handshake.get_or_init(|| h))
    }

    pub fn capabilities(&self) -> Result<CapabilitySet> {
        Ok(self.handshake()?.capabilities.clone())
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        Ok(self.handshake()?.label_space.clone())
    }

    /// Refuses evaluation when the dataset has labels the oracle cannot produce.
    pub fn ensure_covers(&self, labels: &LabelSpace) -> Result<()> {
        let own = &self.handshake()?.label_space;
        let missing: Vec<&String> = labels.labels.iter().filter(|l| !own.contains(l)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::LabelSpaceMismatch(format!("oracle lacks labels {missing:?}")))
        }
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.handshake()?.label_space.index_of(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn require(&self, flag: fn(&CapabilitySet) -> bool, name: &'static str) -> Result<()> {
        if flag(&self.handshake()?.capabilities) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing(name))
        }
    }

    pub fn predict_batch(&self, batch: &[Vec<String>]) -> Result<Vec<Prediction>> {
        if batch.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInstance("empty token sequence in batch".into()));
        }
        let labels = &self.handshake()?.label_space;
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self.retrying(|| self.shared.transport.predict(batch))?;
        self.count(batch.len());
        if raw.len() != batch.len() {
            return Err(Error::LengthMismatch { expected: batch.len(), actual: raw.len() });
        }
        raw.into_iter().map(|p| Prediction::from_probs(p, labels)).collect()
    }

    pub fn predict(&self, tokens: &[String]) -> Result<Prediction> {
        Ok(self.predict_batch(&[tokens.to_vec()])?.remove(0))
    }

    pub fn masked_forward(&self, tokens: &[String], mask: &[f64]) -> Result<Prediction> {
        self.require(|c| c.masked_forward, "masked_forward")?;
        if mask.len() != tokens.len() {
            return Err(Error::LengthMismatch { expected: tokens.len(), actual: mask.len() });
        }
        let labels = &self.handshake()?.label_space;
        let raw = self.retrying(|| self.shared.transport.masked_predict(tokens, mask))?;
        self.count(1);
        Prediction::from_probs(raw, labels)
    }

    pub fn input_gradient(&self, tokens: &[String], target: &str, mode: GradientMode) -> Result<GradientRecords> {
        match mode {
            GradientMode::Word => self.require(|c| c.word_gradient, "word_gradient")?,
            GradientMode::Char => self.require(|c| c.char_gradient, "char_gradient")?,
        }
        self.label_index(target)?;
        let g = self.retrying(|| self.shared.transport.gradient(tokens, target, mode))?;
        self.count(1);
        if g.len() != tokens.len() {
            return Err(Error::LengthMismatch { expected: tokens.len(), actual: g.len() });
        }
        g.check_finite()?;
        Ok(g)
    }

    /// Analytic mask gradient if the backend offers one.
    pub fn mask_gradient(&self, tokens: &[String], mask: &[f64], target: &str) -> Result<Option<Vec<f64>>> {
        self.require(|c| c.masked_forward, "masked_forward")?;
        let out = self.retrying(|| self.shared.transport.mask_gradient(tokens, mask, target))?;
        if out.is_some() {
            self.count(1);
        }
        Ok(out)
    }

    pub fn fill_mask(&self, tokens: &[String], position: usize, top: usize) -> Result<Vec<String>> {
        self.require(|c| c.fill_mask, "fill_mask")?;
        let out = self.retrying(|| self.shared.transport.fill_mask(tokens, position, top))?;
        self.count(1);
        Ok(out)
    }

    pub fn vocabulary(&self) -> Result<Vec<String>> {
        self.require(|c| c.embeddings, "embeddings")?;
        self.retrying(|| self.shared.transport.vocabulary())
    }

    pub fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        self.require(|c| c.embeddings, "embeddings")?;
        self.retrying(|| self.shared.transport.embed(tokens))
    }

    pub fn attention_attribution(&self, tokens: &[String], target: &str, steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        self.require(|c| c.attention_attribution, "attention_attribution")?;
        let out = self.retrying(|| self.shared.transport.attention_attribution(tokens, target, steps))?;
        self.count(1);
        Ok(out)
    }
}

/// Stable per-item seed derivation: identical regardless of worker count or order.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // splitmix64 over (seed, stream hash, index)
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn counter_tracks_batch_size_and_scopes() {
        let h = OracleHandle::new(ConstantOracle { labels: labels(&["a", "b"]), probs: vec![0.25, 0.75] });
        let batch = vec![toks("x y"); 8];
        let preds = h.predict_batch(&batch).unwrap();
        assert_eq!(preds.len(), 8);
        assert!(preds.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(h.queries(), 8);
        let child = h.scoped();
        child.predict(&toks("z")).unwrap();
        child.masked_forward(&toks("z"), &[1.0]).unwrap();
        assert_eq!(child.queries(), 2);
        assert_eq!(h.queries(), 10);
    }

    #[test]
    fn missing_capabilities_are_refused() {
        struct PredictOnly(LabelSpace);
        impl Transport for PredictOnly {
            fn handshake(&self) -> Result<Handshake> {
                Ok(Handshake { protocol: 1, label_space: self.0.clone(), capabilities: CapabilitySet::default() })
            }
            fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
                Ok(batch.iter().map(|_| vec![1.0]).collect())
            }
        }
        let h = OracleHandle::new(PredictOnly(labels(&["a"])));
        assert!(matches!(h.masked_forward(&toks("x"), &[1.0]), Err(Error::CapabilityMissing("masked_forward"))));
        assert!(matches!(
            h.input_gradient(&toks("x"), "a", GradientMode::Word),
            Err(Error::CapabilityMissing("word_gradient"))
        ));
        assert!(matches!(h.fill_mask(&toks("x"), 0, 2), Err(Error::CapabilityMissing("fill_mask"))));
    }

    #[test]
    fn length_mismatch_and_label_checks() {
        let h = OracleHandle::new(ConstantOracle { labels: labels(&["a", "b"]), probs: vec![0.5, 0.5] });
        assert!(matches!(h.masked_forward(&toks("x y"), &[1.0]), Err(Error::LengthMismatch { .. })));
        assert!(h.ensure_covers(&labels(&["a"])).is_ok());
        assert!(matches!(h.ensure_covers(&labels(&["a", "c"])), Err(Error::LabelSpaceMismatch(_))));
        // ties resolve to the lowest index
        assert_eq!(h.predict(&toks("x")).unwrap().label, "a");
    }

    #[test]
    fn protocol_version_and_alphabet_are_checked() {
        struct Bad(u32, CapabilitySet);
        impl Transport for Bad {
            fn handshake(&self) -> Result<Handshake> {
                Ok(Handshake { protocol: self.0, label_space: labels(&["a"]), capabilities: self.1.clone() })
            }
            fn predict(&self, _: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
                unreachable!()
            }
        }
        let v2 = OracleHandle::new(Bad(2, CapabilitySet::default()));
        assert!(matches!(v2.capabilities(), Err(Error::Protocol(_))));
        let no_alpha = OracleHandle::new(Bad(1, CapabilitySet { char_gradient: true, ..Default::default() }));
        assert!(matches!(no_alpha.capabilities(), Err(Error::Protocol(_))));
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        assert_eq!(derive_seed(42, "entity", 3), derive_seed(42, "entity", 3));
        assert_ne!(derive_seed(42, "entity", 3), derive_seed(42, "context", 3));
        assert_ne!(derive_seed(42, "entity", 3), derive_seed(42, "entity", 4));
        assert_ne!(derive_seed(42, "entity", 3), derive_seed(43, "entity", 3));
    }
}
