//! Icon manifests and labelled-group proposals.
//!
//! A manifest is a UTF-8 JSON-lines file with one object per icon:
//!
//! ```text
//! {"app_id":"com.rovio.angrybirds","icon_path":"icons/ab.png","app_name":"Angry Birds","developer":"Rovio","category":"GAME_ARCADE","downloads":100000000}
//! ```
//!
//! Relative `icon_path`s are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IconRecord {
    pub app_id: String,
    pub icon_path: PathBuf,
    pub app_name: String,
    pub developer: String,
    pub category: String,
    pub downloads: u64,
}

/// Ordered set of icon records. Record order defines the row order of every
/// embedding store built from this corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<IconRecord>,
    by_id: HashMap<String, usize>,
    source_manifest: Option<PathBuf>,
}

impl Corpus {
    pub fn from_records(records: Vec<IconRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (row, record) in records.iter().enumerate() {
            if by_id.insert(record.app_id.clone(), row).is_some() {
                return Err(Error::DuplicateAppId(record.app_id.clone()));
            }
        }
        Ok(Corpus {
            records,
            by_id,
            source_manifest: None,
        })
    }

    pub fn records(&self) -> &[IconRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn row_of(&self, app_id: &str) -> Option<usize> {
        self.by_id.get(app_id).copied()
    }

    pub fn get(&self, app_id: &str) -> Option<&IconRecord> {
        self.row_of(app_id).map(|row| &self.records[row])
    }

    pub fn source_manifest(&self) -> Option<&Path> {
        self.source_manifest.as_deref()
    }
}

/// Reads a JSON-lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));

    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut record: IconRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if record.app_id.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "empty app_id".into(),
            });
        }
        if record.icon_path.is_relative() {
            record.icon_path = base.join(&record.icon_path);
        }
        records.push(record);
    }

    let mut corpus = Corpus::from_records(records)?;
    corpus.source_manifest = Some(path.to_path_buf());
    Ok(corpus)
}

/// Writes records as a JSON-lines manifest, one object per line.
pub fn write_manifest(path: impl AsRef<Path>, records: &[IconRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Cosine similarity of lowercase character-unigram frequency vectors.
/// Whitespace counts as a character. Two empty strings are identical (1.0);
/// exactly one empty string gives 0.0.
pub fn char_cosine_similarity(a: &str, b: &str) -> f64 {
    fn counts(s: &str) -> BTreeMap<char, u64> {
        let mut map = BTreeMap::new();
        for c in s.chars().flat_map(char::to_lowercase) {
            *map.entry(c).or_insert(0) += 1;
        }
        map
    }

    let (ca, cb) = (counts(a), counts(b));
    match (ca.is_empty(), cb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }

    let dot: u64 = ca.iter().filter_map(|(c, n)| cb.get(c).map(|m| n * m)).sum();
    let norm_a: u64 = ca.values().map(|n| n * n).sum();
    let norm_b: u64 = cb.values().map(|n| n * n).sum();
    // sqrt of an exact integer product keeps proportional vectors at exactly 1.0
    let sim = dot as f64 / ((norm_a as f64) * (norm_b as f64)).sqrt();
    sim.clamp(0.0, 1.0)
}

/// A base app plus same-developer look-alikes used as retrieval ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledGroup {
    pub base_app_id: String,
    pub member_app_ids: Vec<String>,
}

impl LabelledGroup {
    /// Base first, then members.
    pub fn all_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.base_app_id.as_str()).chain(self.member_app_ids.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub name_threshold: f64,
    pub min_base_downloads: u64,
    pub min_apps_per_developer: usize,
}

impl Default for GroupParams {
    fn default() -> Self {
        GroupParams {
            name_threshold: 0.8,
            min_base_downloads: 500_000,
            min_apps_per_developer: 3,
        }
    }
}

/// Candidate labelled groups: for every developer with at least
/// `min_apps_per_developer` apps whose most-downloaded app reaches
/// `min_base_downloads`, the base is that app and the members are the other
/// apps in the same category whose names are at least `name_threshold`
/// similar to the base name. Empty groups are dropped.
///
/// Groups come out in corpus order of their base app; members keep corpus
/// order. Download ties pick the lexicographically smallest `app_id`.
pub fn propose_labelled_groups(corpus: &Corpus, params: &GroupParams) -> Result<Vec<LabelledGroup>> {
    if !(0.0..=1.0).contains(&params.name_threshold) {
        return Err(Error::InvalidArgument(format!(
            "name_threshold must lie in [0, 1], got {}",
            params.name_threshold
        )));
    }

    let mut by_developer: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, record) in corpus.records().iter().enumerate() {
        by_developer.entry(&record.developer).or_default().push(row);
    }

    let records = corpus.records();
    let mut groups: Vec<(usize, LabelledGroup)> = Vec::new();
    for rows in by_developer.values() {
        if rows.len() < params.min_apps_per_developer {
            continue;
        }
        let base_row = *rows
            .iter()
            .min_by(|&&a, &&b| {
                records[b]
                    .downloads
                    .cmp(&records[a].downloads)
                    .then_with(|| records[a].app_id.cmp(&records[b].app_id))
            })
            .expect("developer has at least one app");
        let base = &records[base_row];
        if base.downloads < params.min_base_downloads {
            continue;
        }

        let members: Vec<String> = rows
            .iter()
            .filter(|&&row| row != base_row)
            .map(|&row| &records[row])
            .filter(|r| r.category == base.category)
            .filter(|r| char_cosine_similarity(&r.app_name, &base.app_name) >= params.name_threshold)
            .map(|r| r.app_id.clone())
            .collect();
        if members.is_empty() {
            continue;
        }
        groups.push((
            base_row,
            LabelledGroup {
                base_app_id: base.app_id.clone(),
                member_app_ids: members,
            },
        ));
    }
    groups.sort_by_key(|(row, _)| *row);
    Ok(groups.into_iter().map(|(_, g)| g).collect())
}
