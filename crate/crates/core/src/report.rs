//! Micro-F1 with and without NA, oracle evaluation, and comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{mark_instance, write_json, Dataset};
use crate::error::{Error, Result};
use crate::oracle::OracleHandle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions and no positive golds: reported as 0.
    pub undefined: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(tp: usize, pred_pos: usize, gold_pos: usize) -> F1Score {
    let precision = ratio(tp, pred_pos);
    let recall = ratio(tp, gold_pos);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    F1Score { precision, recall, f1, undefined: pred_pos == 0 && gold_pos == 0 }
}

/// Micro-averaged F1. Excluding NA, NA counts as neither a positive prediction nor a
/// positive gold; including NA, every label is a class and the score equals accuracy.
pub fn micro_f1<S: AsRef<str>>(preds: &[S], golds: &[S], include_na: bool, na_label: Option<&str>) -> Result<F1Score> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch { expected: golds.len(), actual: preds.len() });
    }
    let is_pos = |l: &str| include_na || na_label != Some(l);
    let (mut tp, mut pred_pos, mut gold_pos) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if is_pos(p) {
            pred_pos += 1;
            if p == g {
                tp += 1;
            }
        }
        if is_pos(g) {
            gold_pos += 1;
        }
    }
    Ok(f1_from(tp, pred_pos, gold_pos))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub digest: String,
    pub count: usize,
    pub correct: usize,
    pub micro_f1: F1Score,
    pub micro_f1_with_na: F1Score,
    pub per_label: BTreeMap<String, LabelMetrics>,
    /// gold -> predicted -> count
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub predictions: Vec<String>,
    pub queries: u64,
    pub wall_time_ms: u64,
}

impl EvalReport {
    /// The report without its wall-clock field, for determinism comparisons.
    pub fn timeless(&self) -> EvalReport {
        EvalReport { wall_time_ms: 0, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub name: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { batch_size: 64, name: "dataset".into() }
    }
}

/// Scores `oracle` on `dataset` (marker-inserted inputs, batched, parallel over batches).
pub fn evaluate(oracle: &OracleHandle, dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    let start = Instant::now();
    oracle.ensure_covers(&dataset.label_space)?;
    let scoped = oracle.scoped();
    let inputs: Vec<Vec<String>> = dataset.instances.iter().map(|i| mark_instance(i).tokens).collect();
    let chunks: Vec<Vec<String>> = inputs
        .par_chunks(options.batch_size.max(1))
        .map(|chunk| Ok(scoped.predict_batch(chunk)?.into_iter().map(|p| p.label).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<String> = chunks.into_iter().flatten().collect();
    let golds: Vec<&str> = dataset.instances.iter().map(|i| i.label.as_str()).collect();
    let preds: Vec<&str> = predictions.iter().map(String::as_str).collect();
    let na = dataset.label_space.na_label.as_deref();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (g, p) in golds.iter().zip(&preds) {
        *confusion.entry(g.to_string()).or_default().entry(p.to_string()).or_default() += 1;
    }
    let mut per_label = BTreeMap::new();
    for label in &dataset.label_space.labels {
        let tp = confusion.get(label).and_then(|m| m.get(label)).copied().unwrap_or(0);
        let support = golds.iter().filter(|g| *g == label).count();
        let predicted = preds.iter().filter(|p| *p == label).count();
        let s = f1_from(tp, predicted, support);
        per_label.insert(label.clone(), LabelMetrics { precision: s.precision, recall: s.recall, f1: s.f1, support, predicted });
    }
    Ok(EvalReport {
        dataset: options.name.clone(),
        digest: dataset.digest(),
        count: dataset.len(),
        correct: golds.iter().zip(&preds).filter(|(g, p)| g == p).count(),
        micro_f1: micro_f1(&preds, &golds, false, na)?,
        micro_f1_with_na: micro_f1(&preds, &golds, true, na)?,
        per_label,
        confusion,
        predictions,
        queries: scoped.queries(),
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Randomization,
    Adversarial,
    Counterfactual,
    Selection,
    Semantic,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "randomization" => Ok(Layout::Randomization),
            "adversarial" => Ok(Layout::Adversarial),
            "counterfactual" => Ok(Layout::Counterfactual),
            "selection" => Ok(Layout::Selection),
            "semantic" => Ok(Layout::Semantic),
            other => Err(Error::Config(format!("unknown table layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    ExcludingNa,
    IncludingNa,
}

struct Column {
    key: &'static str,
    header: &'static str,
    metric: Metric,
    /// Rendered as `value/origin`.
    paired: bool,
}

const fn col(key: &'static str, header: &'static str, metric: Metric, paired: bool) -> Column {
    Column { key, header, metric, paired }
}

impl Layout {
    fn columns(&self) -> Vec<Column> {
        use Metric::*;
        match self {
            Layout::Randomization => vec![
                col("origin", "Origin", ExcludingNa, false),
                col("entity", "Entity", ExcludingNa, false),
                col("context", "Context", ExcludingNa, false),
                col("all", "All", ExcludingNa, false),
            ],
            Layout::Adversarial => vec![
                col("pwws", "PWWS/Origin", ExcludingNa, true),
                col("hotflip", "HotFlip/Origin", ExcludingNa, true),
            ],
            Layout::Counterfactual => vec![
                col("origin", "Origin", ExcludingNa, false),
                col("contrast-k1", "Contrast k=1", IncludingNa, false),
                col("contrast-k2", "Contrast k=2", IncludingNa, false),
            ],
            Layout::Selection => vec![
                col("origin", "Origin", ExcludingNa, false),
                col("debiased", "De-biased/Origin", ExcludingNa, true),
            ],
            Layout::Semantic => vec![
                col("origin", "Origin", ExcludingNa, false),
                col("me", "ME", ExcludingNa, false),
                col("oe", "OE", ExcludingNa, false),
                col("debiased", "De-biased", ExcludingNa, false),
            ],
        }
    }
}

/// One table cell in full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub model: String,
    pub column: String,
    pub metric: String,
    pub value: Option<f64>,
    pub origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub axis: String,
    pub origin: f64,
    pub evaluation: Option<f64>,
    pub improved: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub layout: Layout,
    pub models: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<TableCell>,
    pub plot: Vec<PlotRow>,
}

fn metric_value(r: &EvalReport, m: Metric) -> f64 {
    match m {
        Metric::ExcludingNa => r.micro_f1.f1,
        Metric::IncludingNa => r.micro_f1_with_na.f1,
    }
}

/// Builds the table for `layout` from reports named `model/column`. Every model needs
/// an `origin` report.
pub fn build_table(reports: &BTreeMap<String, EvalReport>, layout: Layout) -> Result<Table> {
    let mut models: Vec<String> = Vec::new();
    for name in reports.keys() {
        let model = name.split_once('/').map(|(m, _)| m).unwrap_or(name).to_string();
        if !models.contains(&model) {
            models.push(model);
        }
    }
    if models.is_empty() {
        return Err(Error::MissingReport("origin".into()));
    }
    // base models first, "+" variants after their base
    models.sort_by(|a, b| a.split('+').next().cmp(&b.split('+').next()).then(a.len().cmp(&b.len())).then(a.cmp(b)));
    let columns = layout.columns();
    let mut cells = Vec::new();
    for model in &models {
        let origin = reports
            .get(&format!("{model}/origin"))
            .ok_or_else(|| Error::MissingReport(format!("{model}/origin")))?;
        for c in &columns {
            let value = reports.get(&format!("{model}/{}", c.key)).map(|r| metric_value(r, c.metric));
            cells.push(TableCell {
                model: model.clone(),
                column: c.key.to_string(),
                metric: match c.metric {
                    Metric::ExcludingNa => "micro_f1".into(),
                    Metric::IncludingNa => "micro_f1_with_na".into(),
                },
                value,
                origin: metric_value(origin, Metric::ExcludingNa),
            });
        }
    }
    let cell = |m: &str, c: &str| cells.iter().find(|x| x.model == m && x.column == c).and_then(|x| x.value);
    let mut plot = Vec::new();
    for base in models.iter().filter(|m| !m.contains('+')) {
        let improved: Vec<&String> = models.iter().filter(|m| m.starts_with(&format!("{base}+"))).collect();
        for c in columns.iter().filter(|c| c.key != "origin") {
            let origin = metric_value(&reports[&format!("{base}/origin")], Metric::ExcludingNa);
            let evaluation = cell(base, c.key);
            if improved.is_empty() {
                plot.push(PlotRow { axis: c.key.to_string(), origin, evaluation, improved: None });
            }
            for imp in &improved {
                plot.push(PlotRow {
                    axis: format!("{}:{imp}", c.key),
                    origin,
                    evaluation,
                    improved: cell(imp, c.key),
                });
            }
        }
    }
    Ok(Table {
        layout,
        models,
        columns: columns.iter().map(|c| c.header.to_string()).collect(),
        cells,
        plot,
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Fixed-width grid: one row per model, values ×100 at one decimal.
pub fn render_text(table: &Table) -> String {
    let columns = table.layout.columns();
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Model".to_string()).chain(table.columns.iter().cloned()).collect()];
    for model in &table.models {
        let mut row = vec![model.clone()];
        for c in &columns {
            let cell = table.cells.iter().find(|x| &x.model == model && x.column == c.key).expect("cell per column");
            row.push(match (cell.value, c.paired) {
                (None, _) => "-".into(),
                (Some(v), true) => format!("{}/{}", pct(v), pct(cell.origin)),
                (Some(v), false) => pct(v),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TableFiles {
    pub text: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub plot: PathBuf,
}

/// Writes `report.txt`, `report.csv`, `report.json` and `plot.csv` into `dir`.
pub fn emit_tables(reports: &BTreeMap<String, EvalReport>, layout: Layout, dir: &Path) -> Result<TableFiles> {
    let table = build_table(reports, layout)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = TableFiles {
        text: dir.join("report.txt"),
        csv: dir.join("report.csv"),
        json: dir.join("report.json"),
        plot: dir.join("plot.csv"),
    };
    std::fs::write(&files.text, render_text(&table)).map_err(|e| Error::io(&files.text, e))?;
    let mut w = csv::Writer::from_path(&files.csv)?;
    w.write_record(["model", "column", "metric", "value", "origin"])?;
    for c in &table.cells {
        w.write_record([
            c.model.clone(),
            c.column.clone(),
            c.metric.clone(),
            c.value.map(|v| v.to_string()).unwrap_or_default(),
            c.origin.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&files.csv, e))?;
    let mut p = csv::Writer::from_path(&files.plot)?;
    p.write_record(["axis-name", "origin", "evaluation", "improved"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &table.plot {
        p.write_record([r.axis.clone(), r.origin.to_string(), opt(r.evaluation), opt(r.improved)])?;
    }
    p.flush().map_err(|e| Error::io(&files.plot, e))?;
    write_json(&files.json, &serde_json::json!({"table": table, "reports": reports}))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_f1() {
        let golds = ["A", "A", "NA", "NA"];
        let preds = ["A", "NA", "NA", "A"];
        let s = micro_f1(&preds, &golds, false, Some("NA")).unwrap();
        assert!((s.precision - 0.5).abs() < 1e-12 && (s.recall - 0.5).abs() < 1e-12 && (s.f1 - 0.5).abs() < 1e-12);
        let a = micro_f1(&preds, &golds, true, Some("NA")).unwrap();
        assert!((a.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_score_one_and_undefined_is_flagged() {
        let x = ["A", "B", "NA"];
        assert_eq!(micro_f1(&x, &x, false, Some("NA")).unwrap().f1, 1.0);
        assert_eq!(micro_f1(&x, &x, true, Some("NA")).unwrap().f1, 1.0);
        let na = ["NA", "NA"];
        let s = micro_f1(&na, &na, false, Some("NA")).unwrap();
        assert!(s.undefined && s.f1 == 0.0);
        assert!(micro_f1(&x, &na, true, None).is_err());
    }
}
