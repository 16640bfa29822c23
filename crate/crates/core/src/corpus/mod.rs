//! Data model for descriptions, generated candidates and preference pairs,
//! plus the file-backed store that persists them.

mod dataset;
mod store;

pub use dataset::{export_preferences, import_preferences, PreferenceRecord};
pub use store::{ArtifactKind, ArtifactRecord, HeadRecord, ModelOutput, State, Store};

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ids::{BatchId, CandidateId, DescriptionId, PairId, RecordId};

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiDescription {
    pub id: DescriptionId,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiCandidate {
    pub id: CandidateId,
    pub description_id: DescriptionId,
    pub batch_id: BatchId,
    pub batch_index: u32,
    pub html_ref: ContentHash,
    pub screenshot_ref: Option<ContentHash>,
    pub geometry_ref: Option<ContentHash>,
    pub sketch_ref: Option<ContentHash>,
    pub score: Option<f64>,
    /// Set for revisions produced from designer feedback.
    #[serde(default)]
    pub parent: Option<CandidateId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub id: BatchId,
    pub description_id: DescriptionId,
    pub candidate_ids: Vec<CandidateId>,
    pub sampler_seed: u64,
    pub retained_ids: Vec<CandidateId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ranking,
    Commenting,
    Sketching,
    Revising,
    Synthetic,
}

impl Provenance {
    pub const ALL: [Provenance; 5] = [
        Provenance::Ranking,
        Provenance::Commenting,
        Provenance::Sketching,
        Provenance::Revising,
        Provenance::Synthetic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Ranking => "ranking",
            Provenance::Commenting => "commenting",
            Provenance::Sketching => "sketching",
            Provenance::Revising => "revising",
            Provenance::Synthetic => "synthetic",
        }
    }
}

/// One preference triplet: for `description_id`, the image at `chosen_ref`
/// is preferred over the one at `rejected_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: PairId,
    pub description_id: DescriptionId,
    pub chosen_ref: ContentHash,
    pub rejected_ref: ContentHash,
    pub provenance: Provenance,
    pub annotator_id: String,
    /// Annotation record the pair was derived from.
    #[serde(default)]
    pub source_record: Option<RecordId>,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.chosen_ref == self.rejected_ref {
            return Err(Error::Integrity {
                record: self.id.to_string(),
                message: "chosen and rejected refer to the same artifact".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pairs: Vec<PreferencePair>,
    counts: BTreeMap<Provenance, usize>,
}

impl PreferenceDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = PreferencePair>) -> Self {
        let mut ds = Self::new();
        for p in pairs {
            ds.push(p);
        }
        ds
    }

    pub fn push(&mut self, pair: PreferencePair) {
        *self.counts.entry(pair.provenance).or_default() += 1;
        self.pairs.push(pair);
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.counts.get(&provenance).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Provenance, usize> {
        &self.counts
    }
}

/// Description texts unique up to [`normalize_text`], in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionSet {
    keys: IndexSet<String>,
    texts: Vec<String>,
}

impl DescriptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        let mut set = Self::new();
        dedup_merge(&mut set, texts);
        set
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn contains(&self, text: &str) -> bool {
        self.keys.contains(&normalize_text(text))
    }

    pub fn into_texts(self) -> Vec<String> {
        self.texts
    }
}

/// Merges `incoming` into `existing`, skipping blank texts and anything
/// whose normalized form is already present. Returns how many were added.
pub fn dedup_merge<S: AsRef<str>>(existing: &mut DescriptionSet, incoming: impl IntoIterator<Item = S>) -> usize {
    let before = existing.len();
    for text in incoming {
        let text = text.as_ref().trim();
        if text.is_empty() {
            continue;
        }
        if existing.keys.insert(normalize_text(text)) {
            existing.texts.push(text.to_owned());
        }
    }
    existing.len() - before
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapReport {
    pub exact_overlaps: Vec<String>,
}

impl OverlapReport {
    pub fn is_disjoint(&self) -> bool {
        self.exact_overlaps.is_empty()
    }
}

/// Eval texts whose normalized form also occurs in `train`. Near-duplicates
/// in meaning are not flagged.
pub fn split_guard<S: AsRef<str>, T: AsRef<str>>(train: &[S], eval: &[T]) -> OverlapReport {
    let train: HashSet<String> = train.iter().map(|t| normalize_text(t.as_ref())).collect();
    OverlapReport {
        exact_overlaps: eval
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| train.contains(&normalize_text(t)))
            .map(str::to_owned)
            .collect(),
    }
}
