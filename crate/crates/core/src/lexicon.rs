//! Synonym table, entity fill-in pools, stop words and corpus frequency statistics.
//!
//! Resource layout on disk (the bundled copies are compiled in):
//!
//! ```text
//! <dir>/synonyms.tsv        word<TAB>cand1,cand2,...
//! <dir>/entities/<TYPE>.txt one name per line
//! <dir>/stopwords.txt       one word per line
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_marker, Dataset, UNKNOWN_TYPE};
use crate::error::{Error, Result};

const BUNDLED_SYNONYMS: &str = include_str!("../resources/synonyms.tsv");
const BUNDLED_STOPWORDS: &str = include_str!("../resources/stopwords.txt");
const BUNDLED_POOLS: &[(&str, &str)] = &[
    ("COUNTRY", include_str!("../resources/entities/COUNTRY.txt")),
    ("LOCATION", include_str!("../resources/entities/LOCATION.txt")),
    ("ORGANIZATION", include_str!("../resources/entities/ORGANIZATION.txt")),
    ("PERSON", include_str!("../resources/entities/PERSON.txt")),
];

/// Type tags from common NER schemes mapped onto the bundled pool names.
const TYPE_ALIASES: &[(&str, &str)] = &[
    ("PER", "PERSON"),
    ("ORG", "ORGANIZATION"),
    ("LOC", "LOCATION"),
    ("GPE", "LOCATION"),
    ("CITY", "LOCATION"),
    ("STATE_OR_PROVINCE", "LOCATION"),
    ("NATIONALITY", "COUNTRY"),
];

/// Copies the capitalization pattern of `template` onto `word`.
pub fn match_case(template: &str, word: &str) -> String {
    let letters: Vec<char> = template.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return word.to_uppercase();
    }
    match template.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut chars = word.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
        _ => word.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, list) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("synonyms.tsv line {}: missing TAB", idx + 1)))?;
            let word = word.trim().to_lowercase();
            let cands = entries.entry(word.clone()).or_default();
            for c in list.split(',').map(|c| c.trim().to_lowercase()).filter(|c| !c.is_empty()) {
                if c != word && !cands.contains(&c) {
                    cands.push(c);
                }
            }
        }
        Ok(SynonymTable { entries })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        let mut text = String::new();
        for (w, cands) in pairs {
            text.push_str(&format!("{w}\t{}\n", cands.join(",")));
        }
        Self::parse(&text).expect("well-formed pairs")
    }

    /// Case-folded lookup; empty when the word is absent.
    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPool {
    pools: BTreeMap<String, Vec<String>>,
    /// Single-token names (lower-cased) to their type, for context fill-ins.
    by_name: HashMap<String, String>,
}

impl EntityPool {
    pub fn from_pools(pools: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut cleaned = BTreeMap::new();
        for (etype, names) in pools {
            let mut seen = HashSet::new();
            let names: Vec<String> = names
                .into_iter()
                .map(|n| n.split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|n| !n.is_empty() && seen.insert(n.clone()))
                .collect();
            if names.is_empty() {
                return Err(Error::EmptyPool(etype));
            }
            cleaned.insert(etype, names);
        }
        let mut by_name = HashMap::new();
        for (etype, names) in &cleaned {
            for n in names.iter().filter(|n| !n.contains(' ')) {
                by_name.entry(n.to_lowercase()).or_insert_with(|| etype.clone());
            }
        }
        Ok(EntityPool { pools: cleaned, by_name })
    }

    pub fn types(&self) -> impl Iterator<Item = &String> {
        self.pools.keys()
    }

    /// Pool for `etype`, resolving aliases; `UNKNOWN` (or an unmapped type) falls back
    /// to the union of all pools.
    pub fn pool(&self, etype: &str) -> Vec<&String> {
        let upper = etype.to_uppercase();
        let canonical = TYPE_ALIASES.iter().find(|(a, _)| *a == upper).map(|(_, c)| *c).unwrap_or(&upper);
        if let Some(p) = self.pools.get(canonical) {
            return p.iter().collect();
        }
        let mut seen = HashSet::new();
        self.pools.values().flatten().filter(|n| seen.insert(n.as_str())).collect()
    }

    /// True when `etype` has a dedicated pool (not the UNKNOWN fallback).
    pub fn has_pool(&self, etype: &str) -> bool {
        let upper = etype.to_uppercase();
        let canonical = TYPE_ALIASES.iter().find(|(a, _)| *a == upper).map(|(_, c)| *c).unwrap_or(&upper);
        self.pools.contains_key(canonical)
    }

    /// Uniform draw from the pool for `etype`, never returning `exclude`.
    pub fn sample_entity<R: Rng + ?Sized>(&self, etype: &str, rng: &mut R, exclude: Option<&str>) -> Result<String> {
        let excluded = exclude.map(str::to_lowercase);
        let cands: Vec<&String> = self
            .pool(etype)
            .into_iter()
            .filter(|n| excluded.as_deref() != Some(n.to_lowercase().as_str()))
            .collect();
        if cands.is_empty() {
            let label = if etype.is_empty() { UNKNOWN_TYPE } else { etype };
            return Err(Error::EmptyPool(label.to_string()));
        }
        Ok(cands[rng.gen_range(0..cands.len())].clone())
    }

    /// Type of a single-token pool member, if `word` is one.
    pub fn type_of(&self, word: &str) -> Option<&str> {
        self.by_name.get(&word.to_lowercase()).map(String::as_str)
    }

    /// Other single-token names of the same type as `word`, in pool order.
    pub fn fill_ins(&self, word: &str) -> Vec<&String> {
        match self.type_of(word) {
            Some(t) => {
                let lw = word.to_lowercase();
                self.pools[t].iter().filter(|n| !n.contains(' ') && n.to_lowercase() != lw).collect()
            }
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        StopWords(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }
}

/// All static linguistic resources.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub synonyms: SynonymTable,
    pub pools: EntityPool,
    pub stopwords: StopWords,
}

impl Lexicon {
    /// The resources compiled into the crate.
    pub fn bundled() -> Self {
        let pools = BUNDLED_POOLS
            .iter()
            .map(|(t, text)| (t.to_string(), text.lines().map(str::to_string).collect()))
            .collect();
        Lexicon {
            synonyms: SynonymTable::parse(BUNDLED_SYNONYMS).expect("bundled synonyms parse"),
            pools: EntityPool::from_pools(pools).expect("bundled pools are non-empty"),
            stopwords: StopWords::parse(BUNDLED_STOPWORDS),
        }
    }

    /// Loads resources from `dir`; any missing file falls back to the bundled copy.
    pub fn load(dir: &Path) -> Result<Self> {
        let bundled = Lexicon::bundled();
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let syn_path = dir.join("synonyms.tsv");
        let synonyms = if syn_path.exists() { SynonymTable::parse(&read(&syn_path)?)? } else { bundled.synonyms };
        let stop_path = dir.join("stopwords.txt");
        let stopwords = if stop_path.exists() { StopWords::parse(&read(&stop_path)?) } else { bundled.stopwords };
        let ent_dir = dir.join("entities");
        let pools = if ent_dir.is_dir() {
            let mut pools = BTreeMap::new();
            let mut entries: Vec<_> = fs::read_dir(&ent_dir)
                .map_err(|e| Error::io(&ent_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
                .collect();
            entries.sort();
            for p in entries {
                let etype = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_uppercase();
                pools.insert(etype, read(&p)?.lines().map(str::to_string).collect());
            }
            EntityPool::from_pools(pools)?
        } else {
            bundled.pools
        };
        Ok(Lexicon { synonyms, pools, stopwords })
    }
}

/// Corpus token statistics. Counts are case-folded and skip stop words and markers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub token_count: BTreeMap<String, u64>,
    /// label -> token -> count
    pub label_token_count: BTreeMap<String, BTreeMap<String, u64>>,
    /// head name -> tail name -> count
    pub pair_count: BTreeMap<String, BTreeMap<String, u64>>,
    pub total: u64,
}

impl FrequencyTable {
    pub fn count(&self, token: &str) -> u64 {
        self.token_count.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn label_count(&self, label: &str, token: &str) -> u64 {
        self.label_token_count
            .get(label)
            .and_then(|m| m.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }

    pub fn pair(&self, head: &str, tail: &str) -> u64 {
        self.pair_count
            .get(&head.to_lowercase())
            .and_then(|m| m.get(&tail.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }

    pub fn has_pairs(&self) -> bool {
        !self.pair_count.is_empty()
    }
}

pub fn token_stats(dataset: &Dataset, stopwords: &StopWords) -> FrequencyTable {
    let mut table = FrequencyTable::default();
    for inst in &dataset.instances {
        for tok in &inst.tokens {
            if is_marker(tok) || stopwords.contains(tok) {
                continue;
            }
            let key = tok.to_lowercase();
            *table.token_count.entry(key.clone()).or_default() += 1;
            *table.label_token_count.entry(inst.label.clone()).or_default().entry(key).or_default() += 1;
            table.total += 1;
        }
        *table
            .pair_count
            .entry(inst.head.name.to_lowercase())
            .or_default()
            .entry(inst.tail.name.to_lowercase())
            .or_default() += 1;
    }
    table
}

/// Nearest-rank quantile: the smallest value with at least `q` of the mass at or below it.
pub fn quantile(values: &[u64], q: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Words listed by any resource, lower-cased; the default HotFlip vocabulary for oracles
/// that do not expose one.
pub fn lexicon_vocabulary(lex: &Lexicon) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (w, cands) in lex.synonyms.iter() {
        out.insert(w.clone());
        out.extend(cands.iter().cloned());
    }
    out
}
