//! Reusable protocol conformance checks, runnable against any oracle.

use serde::Serialize;

use super::{GradientMode, GradientRecords, OracleHandle};
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn check(checks: &mut Vec<Check>, name: &str, passed: bool, detail: impl Into<String>) {
    checks.push(Check { name: name.to_string(), passed, detail: detail.into() });
}

/// Exercises every advertised capability on `samples` (token sequences).
pub fn run(oracle: &OracleHandle, samples: &[Vec<String>]) -> Result<ConformanceReport> {
    let mut checks = Vec::new();
    let caps = oracle.capabilities()?;
    let labels = oracle.label_space()?;
    check(&mut checks, "handshake-cached", oracle.capabilities()? == caps, "second handshake identical");
    check(&mut checks, "labels-nonempty", !labels.is_empty(), format!("{} labels", labels.len()));

    let first = oracle.predict_batch(samples)?;
    let second = oracle.predict_batch(samples)?;
    check(&mut checks, "predict-deterministic", first == second, "two identical batches");
    let singles: Vec<_> = samples.iter().map(|s| oracle.predict(s)).collect::<Result<_>>()?;
    let batch_invariant =
        first.iter().zip(&singles).all(|(a, b)| a.probs.iter().zip(&b.probs).all(|(x, y)| (x - y).abs() <= 1e-9));
    check(&mut checks, "predict-batch-invariant", batch_invariant, "batched equals one-by-one");

    if caps.masked_forward {
        let mut worst: f64 = 0.0;
        for (tokens, pred) in samples.iter().zip(&first) {
            let masked = oracle.masked_forward(tokens, &vec![1.0; tokens.len()])?;
            for (a, b) in masked.probs.iter().zip(&pred.probs) {
                worst = worst.max((a - b).abs());
            }
        }
        check(&mut checks, "all-ones-mask-equals-predict", worst <= 1e-6, format!("max deviation {worst:.3e}"));
    }

    if caps.word_gradient {
        let mut ok = true;
        let mut detail = String::from("one record per token");
        for (tokens, pred) in samples.iter().zip(&first) {
            match oracle.input_gradient(tokens, &pred.label, GradientMode::Word)? {
                GradientRecords::Word(g) => {
                    let dim = g.first().map_or(0, Vec::len);
                    if dim == 0 || g.iter().any(|r| r.len() != dim) {
                        ok = false;
                        detail = "ragged or empty gradient records".into();
                    }
                }
                GradientRecords::Char(_) => {
                    ok = false;
                    detail = "word request answered with char records".into();
                }
            }
        }
        check(&mut checks, "word-gradient-shape", ok, detail);
    }

    if caps.char_gradient {
        let width = caps.alphabet.as_ref().map_or(0, Vec::len);
        let mut ok = true;
        for (tokens, pred) in samples.iter().zip(&first) {
            match oracle.input_gradient(tokens, &pred.label, GradientMode::Char)? {
                GradientRecords::Char(g) => {
                    for (tok, rec) in tokens.iter().zip(&g) {
                        ok &= rec.len() == tok.chars().count() && rec.iter().all(|c| c.len() == width);
                    }
                }
                GradientRecords::Word(_) => ok = false,
            }
        }
        check(&mut checks, "char-gradient-shape", ok, format!("alphabet of {width}"));
    }

    if caps.embeddings {
        let vocab = oracle.vocabulary()?;
        let probe: Vec<String> = vocab.iter().take(4).cloned().collect();
        let vectors = oracle.embed(&probe)?;
        let ok = vectors.len() == probe.len() && vectors.windows(2).all(|w| w[0].len() == w[1].len());
        check(&mut checks, "embeddings-shape", ok, format!("{} vocabulary entries", vocab.len()));
    }

    Ok(ConformanceReport { checks })
}
