//! Relation-extraction instances, dataset I/O and entity-marker preprocessing.
//!
//! Spans are token-level half-open ranges. Two on-disk formats are supported:
//!
//! * `opennre-jsonl`: one object per line, `{"token", "h": {"name", "pos"}, "t": {...}, "relation"}`.
//!   An optional `"type"` key on `h`/`t` carries the entity type.
//! * `tacred-json`: a JSON array of objects with inclusive `subj_start`/`subj_end`,
//!   `obj_start`/`obj_end`, `subj_type`/`obj_type` and `relation`.
//!
//! Every written file gets a `<file>.manifest.json` sidecar holding the label space,
//! the provenance trail and the instance count.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, RecordError, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const HEAD_START: &str = "[E1]";
pub const HEAD_END: &str = "[/E1]";
pub const TAIL_START: &str = "[E2]";
pub const TAIL_END: &str = "[/E2]";
/// Reserved token used for contrastive and frequency masking.
pub const UNUSED_TOKEN: &str = "[unused5]";
/// Reserved token standing in for a masked entity mention.
pub const ENTITY_TOKEN: &str = "[ENT]";
/// Entity type used when the source format carries none.
pub const UNKNOWN_TYPE: &str = "UNKNOWN";

/// Labels conventionally meaning "no relation holds".
pub const NA_LABEL_NAMES: &[&str] = &["NA", "no_relation", "NOT_such_relation", "Other"];

pub const TOOL_NAME: &str = "diagnose-re";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// True for the sentinel tokens that [`insert_entity_markers`] adds.
pub fn is_marker(token: &str) -> bool {
    matches!(token, CLS | SEP | HEAD_START | HEAD_END | TAIL_START | TAIL_END)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub name: String,
    pub span: Span,
    pub etype: String,
}

impl EntityMention {
    pub fn new(name: impl Into<String>, span: Span, etype: impl Into<String>) -> Self {
        EntityMention { name: name.into(), span, etype: etype.into() }
    }
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).collect()
}

/// One labeled sentence with head and tail entity spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub head: EntityMention,
    pub tail: EntityMention,
    pub label: String,
}

impl Instance {
    /// Builds an instance and checks its invariants.
    pub fn new(
        tokens: Vec<String>,
        head: EntityMention,
        tail: EntityMention,
        label: impl Into<String>,
    ) -> Result<Self> {
        let inst = Instance { tokens, head, tail, label: label.into() };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::InvalidInstance("empty token sequence".into()));
        }
        for (role, m) in [("head", &self.head), ("tail", &self.tail)] {
            if m.span.is_empty() {
                return Err(Error::InvalidInstance(format!("{role} span {:?} is empty", m.span)));
            }
            if m.span.end > n {
                return Err(Error::InvalidInstance(format!(
                    "{role} span [{}, {}) out of bounds for {n} tokens",
                    m.span.start, m.span.end
                )));
            }
            let surface = self.tokens[m.span.range()].join(" ");
            if squash(&surface) != squash(&m.name) {
                return Err(Error::InvalidInstance(format!(
                    "{role} name `{}` does not match tokens `{surface}`",
                    m.name
                )));
            }
        }
        if self.head.span.overlaps(&self.tail.span) {
            return Err(Error::InvalidInstance(format!(
                "head span {:?} overlaps tail span {:?}",
                self.head.span, self.tail.span
            )));
        }
        Ok(())
    }

    /// True when `pos` falls inside the head or tail span.
    pub fn in_entity(&self, pos: usize) -> bool {
        self.head.span.contains(pos) || self.tail.span.contains(pos)
    }

    /// Positions strictly between the two entity spans.
    pub fn between_entities(&self) -> std::ops::Range<usize> {
        let (first, second) = if self.head.span.start <= self.tail.span.start {
            (self.head.span, self.tail.span)
        } else {
            (self.tail.span, self.head.span)
        };
        first.end..second.start.max(first.end)
    }

    /// Replaces `tokens[start..end]` with `replacement`, shifting entity spans.
    ///
    /// A range equal to an entity span rewrites that mention (name becomes the joined
    /// replacement). Ranges partially overlapping an entity are rejected.
    pub fn splice(&self, start: usize, end: usize, replacement: &[String]) -> Result<Instance> {
        if start > end || end > self.tokens.len() {
            return Err(Error::InvalidInstance(format!("splice range [{start}, {end}) out of bounds")));
        }
        let range = Span::new(start, end);
        let new_len = replacement.len();
        let shift = |m: &EntityMention| -> Result<EntityMention> {
            if m.span == range {
                if new_len == 0 {
                    return Err(Error::InvalidInstance("splice would empty an entity span".into()));
                }
                return Ok(EntityMention {
                    name: replacement.join(" "),
                    span: Span::new(start, start + new_len),
                    etype: m.etype.clone(),
                });
            }
            if !range.is_empty() && range.overlaps(&m.span) {
                return Err(Error::InvalidInstance(format!(
                    "splice [{start}, {end}) partially overlaps entity span {:?}",
                    m.span
                )));
            }
            if m.span.start >= end {
                let s = m.span.start + new_len - range.len();
                Ok(EntityMention { span: Span::new(s, s + m.span.len()), ..m.clone() })
            } else {
                Ok(m.clone())
            }
        };
        let head = shift(&self.head)?;
        let tail = shift(&self.tail)?;
        let mut tokens = Vec::with_capacity(self.tokens.len() + new_len - range.len());
        tokens.extend_from_slice(&self.tokens[..start]);
        tokens.extend_from_slice(replacement);
        tokens.extend_from_slice(&self.tokens[end..]);
        Ok(Instance { tokens, head, tail, label: self.label.clone() })
    }
}

/// Token sequence with entity markers plus the map back to source positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedTokens {
    pub tokens: Vec<String>,
    /// `source[i]` is the original index of `tokens[i]`, or `None` for a marker.
    pub source: Vec<Option<usize>>,
}

impl MarkedTokens {
    /// Index in the marked sequence of original position `pos`.
    pub fn marked_index(&self, pos: usize) -> Option<usize> {
        self.source.iter().position(|s| *s == Some(pos))
    }

    /// Marked sequence with original position `pos` removed.
    pub fn without(&self, pos: usize) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.source)
            .filter(|(_, s)| **s != Some(pos))
            .map(|(t, _)| t.clone())
            .collect()
    }

    /// Marked sequence with original position `pos` replaced by `token`.
    pub fn with(&self, pos: usize, token: &str) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.source)
            .map(|(t, s)| if *s == Some(pos) { token.to_string() } else { t.clone() })
            .collect()
    }
}

/// Marks head and tail spans with `[E1]..[/E1]` and `[E2]..[/E2]`, wrapped in `[CLS]`/`[SEP]`.
///
/// Markers identify the role; their order follows the textual order of the spans.
pub fn mark_instance(instance: &Instance) -> MarkedTokens {
    let n = instance.tokens.len();
    let mut tokens = Vec::with_capacity(n + 6);
    let mut source = Vec::with_capacity(n + 6);
    let push_marker = |tokens: &mut Vec<String>, source: &mut Vec<Option<usize>>, m: &str| {
        tokens.push(m.to_string());
        source.push(None);
    };
    push_marker(&mut tokens, &mut source, CLS);
    for (i, tok) in instance.tokens.iter().enumerate() {
        if i == instance.head.span.start {
            push_marker(&mut tokens, &mut source, HEAD_START);
        }
        if i == instance.tail.span.start {
            push_marker(&mut tokens, &mut source, TAIL_START);
        }
        tokens.push(tok.clone());
        source.push(Some(i));
        if i + 1 == instance.head.span.end {
            push_marker(&mut tokens, &mut source, HEAD_END);
        }
        if i + 1 == instance.tail.span.end {
            push_marker(&mut tokens, &mut source, TAIL_END);
        }
    }
    push_marker(&mut tokens, &mut source, SEP);
    MarkedTokens { tokens, source }
}

/// `[CLS] … [E1] head [/E1] … [E2] tail [/E2] … [SEP]`; length is always `len(tokens) + 6`.
pub fn insert_entity_markers(instance: &Instance) -> Vec<String> {
    mark_instance(instance).tokens
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub labels: Vec<String>,
    pub na_label: Option<String>,
}

impl LabelSpace {
    pub fn new(labels: Vec<String>, na_label: Option<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Config("duplicate labels in label space".into()));
        }
        if let Some(na) = &na_label {
            if !labels.contains(na) {
                return Err(Error::Config(format!("NA label `{na}` is not a member of the label space")));
            }
        }
        Ok(LabelSpace { labels, na_label })
    }

    /// Sorted unique labels; the NA label is detected by conventional name.
    pub fn infer<'a>(observed: impl IntoIterator<Item = &'a str>) -> Self {
        let labels: BTreeSet<&str> = observed.into_iter().collect();
        let na_label = NA_LABEL_NAMES.iter().find(|n| labels.contains(*n)).map(|s| s.to_string());
        LabelSpace { labels: labels.into_iter().map(str::to_string).collect(), na_label }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn is_na(&self, label: &str) -> bool {
        self.na_label.as_deref() == Some(label)
    }

    /// Every label of `other` is present here.
    pub fn covers(&self, other: &LabelSpace) -> bool {
        other.labels.iter().all(|l| self.contains(l))
    }

    /// Returns a copy with `na` appended and designated, if missing.
    pub fn with_na(&self, na: &str) -> (LabelSpace, bool) {
        let mut out = self.clone();
        let added = !out.contains(na);
        if added {
            out.labels.push(na.to_string());
        }
        out.na_label = Some(na.to_string());
        (out, added)
    }

    /// Reads one label per line; a line `*NAME` designates the NA label.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut labels = Vec::new();
        let mut na = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(name) = line.strip_prefix('*') {
                na = Some(name.to_string());
                labels.push(name.to_string());
            } else {
                labels.push(line.to_string());
            }
        }
        LabelSpace::new(labels, na)
    }
}

/// One applied transform in a dataset's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub transform: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl ProvenanceEntry {
    pub fn new(transform: impl Into<String>, params: serde_json::Value) -> Self {
        ProvenanceEntry { transform: transform.into(), params }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub label_space: LabelSpace,
    #[serde(default)]
    pub provenance: Vec<ProvenanceEntry>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, label_space: LabelSpace) -> Result<Self> {
        let ds = Dataset { instances, label_space, provenance: Vec::new() };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset inferring the label space from its instances.
    pub fn from_instances(instances: Vec<Instance>) -> Self {
        let label_space = LabelSpace::infer(instances.iter().map(|i| i.label.as_str()));
        Dataset { instances, label_space, provenance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            inst.validate()?;
            if !self.label_space.contains(&inst.label) {
                return Err(Error::UnknownLabel(inst.label.clone()));
            }
        }
        Ok(())
    }

    /// Same label space and provenance, new instances, one more provenance entry.
    pub fn derive(&self, instances: Vec<Instance>, entry: ProvenanceEntry) -> Dataset {
        let mut provenance = self.provenance.clone();
        provenance.push(entry);
        Dataset { instances, label_space: self.label_space.clone(), provenance }
    }

    /// SHA-256 over the canonical openNRE serialization plus label space.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for inst in &self.instances {
            hasher.update(opennre_line(inst).as_bytes());
            hasher.update(b"\n");
        }
        hasher.update(serde_json::to_string(&self.label_space).unwrap_or_default().as_bytes());
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    #[serde(rename = "opennre-jsonl")]
    OpenNreJsonl,
    #[serde(rename = "tacred-json")]
    TacredJson,
}

impl DatasetFormat {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetFormat::OpenNreJsonl => "opennre-jsonl",
            DatasetFormat::TacredJson => "tacred-json",
        }
    }

    /// Guess from the file extension: `.jsonl` is openNRE, `.json` is TACRED.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("txt") => Some(DatasetFormat::OpenNreJsonl),
            Some("json") => Some(DatasetFormat::TacredJson),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "opennre-jsonl" | "opennre" | "jsonl" => Ok(DatasetFormat::OpenNreJsonl),
            "tacred-json" | "tacred" | "json" => Ok(DatasetFormat::TacredJson),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OpenNreEntity {
    name: String,
    pos: [usize; 2],
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    etype: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OpenNreRecord {
    token: Vec<String>,
    h: OpenNreEntity,
    t: OpenNreEntity,
    relation: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TacredRecord {
    token: Vec<String>,
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    #[serde(default)]
    subj_type: Option<String>,
    #[serde(default)]
    obj_type: Option<String>,
    relation: String,
}

fn etype_or_unknown(t: Option<String>) -> String {
    match t {
        Some(t) if !t.is_empty() => t,
        _ => UNKNOWN_TYPE.to_string(),
    }
}

fn known_etype(t: &str) -> Option<String> {
    (t != UNKNOWN_TYPE).then(|| t.to_string())
}

impl TryFrom<OpenNreRecord> for Instance {
    type Error = Error;

    fn try_from(r: OpenNreRecord) -> Result<Instance> {
        let head = EntityMention::new(r.h.name, Span::new(r.h.pos[0], r.h.pos[1]), etype_or_unknown(r.h.etype));
        let tail = EntityMention::new(r.t.name, Span::new(r.t.pos[0], r.t.pos[1]), etype_or_unknown(r.t.etype));
        Instance::new(r.token, head, tail, r.relation)
    }
}

impl TryFrom<TacredRecord> for Instance {
    type Error = Error;

    fn try_from(r: TacredRecord) -> Result<Instance> {
        let n = r.token.len();
        let mention = |start: usize, end_incl: usize, etype: Option<String>, role: &str| -> Result<EntityMention> {
            if end_incl < start || end_incl >= n {
                return Err(Error::InvalidInstance(format!(
                    "{role} span [{start}, {end_incl}] out of bounds for {n} tokens"
                )));
            }
            Ok(EntityMention::new(
                r.token[start..=end_incl].join(" "),
                Span::new(start, end_incl + 1),
                etype_or_unknown(etype),
            ))
        };
        let head = mention(r.subj_start, r.subj_end, r.subj_type.clone(), "subject")?;
        let tail = mention(r.obj_start, r.obj_end, r.obj_type.clone(), "object")?;
        Instance::new(r.token, head, tail, r.relation)
    }
}

fn opennre_line(inst: &Instance) -> String {
    let rec = OpenNreRecord {
        token: inst.tokens.clone(),
        h: OpenNreEntity {
            name: inst.head.name.clone(),
            pos: [inst.head.span.start, inst.head.span.end],
            etype: known_etype(&inst.head.etype),
        },
        t: OpenNreEntity {
            name: inst.tail.name.clone(),
            pos: [inst.tail.span.start, inst.tail.span.end],
            etype: known_etype(&inst.tail.etype),
        },
        relation: inst.label.clone(),
    };
    serde_json::to_string(&rec).expect("record serialization is infallible")
}

fn tacred_line(inst: &Instance) -> String {
    let rec = TacredRecord {
        token: inst.tokens.clone(),
        subj_start: inst.head.span.start,
        subj_end: inst.head.span.end - 1,
        obj_start: inst.tail.span.start,
        obj_end: inst.tail.span.end - 1,
        subj_type: known_etype(&inst.head.etype),
        obj_type: known_etype(&inst.tail.etype),
        relation: inst.label.clone(),
    };
    serde_json::to_string(&rec).expect("record serialization is infallible")
}

/// Sidecar written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool: String,
    pub version: String,
    pub format: DatasetFormat,
    pub count: usize,
    pub label_space: LabelSpace,
    pub provenance: Vec<ProvenanceEntry>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Label space to validate against instead of inferring one.
    pub label_space: Option<LabelSpace>,
    /// Ignore the `.manifest.json` sidecar even if present.
    pub ignore_manifest: bool,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    load_dataset_with(path, format, &LoadOptions::default())
}

/// Loads and validates a dataset; all malformed records are reported together.
pub fn load_dataset_with(path: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut errors = Vec::new();
    let mut instances = Vec::new();
    match format {
        DatasetFormat::OpenNreJsonl => {
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<OpenNreRecord>(line)
                    .map_err(|e| e.to_string())
                    .and_then(|r| Instance::try_from(r).map_err(|e| e.to_string()));
                match parsed {
                    Ok(inst) => instances.push(inst),
                    Err(reason) => errors.push(RecordError { line: idx + 1, reason }),
                }
            }
        }
        DatasetFormat::TacredJson => {
            if !text.trim().is_empty() {
                let values: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    errors: vec![RecordError { line: e.line(), reason: e.to_string() }],
                })?;
                for (idx, value) in values.into_iter().enumerate() {
                    let parsed = serde_json::from_value::<TacredRecord>(value)
                        .map_err(|e| e.to_string())
                        .and_then(|r| Instance::try_from(r).map_err(|e| e.to_string()));
                    match parsed {
                        Ok(inst) => instances.push(inst),
                        Err(reason) => errors.push(RecordError { line: idx, reason: format!("record {idx}: {reason}") }),
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Malformed { path: path.to_path_buf(), errors });
    }

    let sidecar = if opts.ignore_manifest { None } else { read_manifest(path)? };
    let (label_space, provenance) = match (&opts.label_space, sidecar) {
        (Some(ls), sc) => (ls.clone(), sc.map(|m| m.provenance).unwrap_or_default()),
        (None, Some(m)) => (m.label_space, m.provenance),
        (None, None) => (LabelSpace::infer(instances.iter().map(|i| i.label.as_str())), Vec::new()),
    };
    let unknown: Vec<RecordError> = instances
        .iter()
        .enumerate()
        .filter(|(_, i)| !label_space.contains(&i.label))
        .map(|(idx, i)| RecordError { line: idx + 1, reason: format!("label `{}` not in label space", i.label) })
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Malformed { path: path.to_path_buf(), errors: unknown });
    }
    Ok(Dataset { instances, label_space, provenance })
}

fn read_manifest(path: &Path) -> Result<Option<DatasetManifest>> {
    let mp = manifest_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Writes `dataset` plus its manifest sidecar. Output is byte-stable.
pub fn write_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<usize> {
    let mut body = String::new();
    match format {
        DatasetFormat::OpenNreJsonl => {
            for inst in &dataset.instances {
                body.push_str(&opennre_line(inst));
                body.push('\n');
            }
        }
        DatasetFormat::TacredJson => {
            if !dataset.is_empty() {
                body.push_str("[\n");
                let lines: Vec<String> = dataset.instances.iter().map(tacred_line).collect();
                body.push_str(&lines.join(",\n"));
                body.push_str("\n]\n");
            }
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))?;

    let manifest = DatasetManifest {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        format,
        count: dataset.len(),
        label_space: dataset.label_space.clone(),
        provenance: dataset.provenance.clone(),
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(dataset.len())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A token-range rewrite of a source sequence, in source coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub old: Vec<String>,
    pub new: Vec<String>,
    pub generator: String,
}

/// Applies non-overlapping edits to `source`; edits are given in source coordinates.
pub fn apply_edits(source: &[String], edits: &[Edit]) -> Result<Vec<String>> {
    let mut order: Vec<&Edit> = edits.iter().collect();
    order.sort_by_key(|e| e.position);
    for pair in order.windows(2) {
        if pair[0].position + pair[0].old.len() > pair[1].position {
            return Err(Error::InvalidInstance(format!(
                "overlapping edits at {} and {}",
                pair[0].position, pair[1].position
            )));
        }
    }
    let mut out = source.to_vec();
    for e in order.iter().rev() {
        let end = e.position + e.old.len();
        if end > out.len() || out[e.position..end] != e.old[..] {
            return Err(Error::InvalidInstance(format!("edit at {} does not match source tokens", e.position)));
        }
        out.splice(e.position..end, e.new.iter().cloned());
    }
    Ok(out)
}
