//! Designer feedback: the four annotation record kinds, task scheduling
//! for annotators, transforms into preference pairs and study statistics.

mod schedule;
mod transform;

pub use schedule::{Task, TaskCandidate, TaskScheduler};
pub use transform::{
    ground_items, pairs_from_comments, pairs_from_ranking, pairs_from_revision, pairs_from_sketch, transform_all, TransformFailure,
    TransformReport,
};

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Provenance, State};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::htmlkit::Region;
use crate::ids::{CandidateId, DescriptionId, RecordId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interface {
    Ranking,
    Commenting,
    Sketching,
    Revising,
}

impl Interface {
    pub const ALL: [Interface; 4] = [
        Interface::Ranking,
        Interface::Commenting,
        Interface::Sketching,
        Interface::Revising,
    ];

    pub fn as_str(&self) -> &'static str {
        self.provenance().as_str()
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            Interface::Ranking => Provenance::Ranking,
            Interface::Commenting => Provenance::Commenting,
            Interface::Sketching => Provenance::Sketching,
            Interface::Revising => Provenance::Revising,
        }
    }
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Interface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Interface::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| Error::validation("interface", format!("unknown interface `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingJudgment {
    #[serde(default)]
    pub record_id: RecordId,
    pub description_id: DescriptionId,
    pub left_candidate: CandidateId,
    pub right_candidate: CandidateId,
    pub winner: Side,
    pub annotator_id: String,
    #[serde(default)]
    pub elapsed_secs: f64,
}

impl RankingJudgment {
    pub fn winner_and_loser(&self) -> (&CandidateId, &CandidateId) {
        match self.winner {
            Side::Left => (&self.left_candidate, &self.right_candidate),
            Side::Right => (&self.right_candidate, &self.left_candidate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentSet {
    #[serde(default)]
    pub record_id: RecordId,
    pub candidate_id: CandidateId,
    pub comments: Vec<String>,
    pub annotator_id: String,
    #[serde(default)]
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchItem {
    /// Screenshot pixels, top-left origin.
    pub region: Region,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchSet {
    #[serde(default)]
    pub record_id: RecordId,
    pub candidate_id: CandidateId,
    pub items: Vec<SketchItem>,
    /// Screenshot pixels per CSS pixel.
    #[serde(default = "one")]
    pub scale_factor: f64,
    pub annotator_id: String,
    #[serde(default)]
    pub elapsed_secs: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionRecord {
    #[serde(default)]
    pub record_id: RecordId,
    pub candidate_id: CandidateId,
    pub original_sketch_ref: ContentHash,
    pub revised_sketch_ref: ContentHash,
    pub annotator_id: String,
    #[serde(default)]
    pub elapsed_secs: f64,
}

/// One submitted annotation, tagged by the interface that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "interface", rename_all = "snake_case")]
pub enum AnnotationRecord {
    Ranking(RankingJudgment),
    Commenting(CommentSet),
    Sketching(SketchSet),
    Revising(RevisionRecord),
}

fn non_empty(field: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        return Err(Error::validation(field, "must not be empty"));
    }
    Ok(())
}

impl AnnotationRecord {
    pub fn interface(&self) -> Interface {
        match self {
            AnnotationRecord::Ranking(_) => Interface::Ranking,
            AnnotationRecord::Commenting(_) => Interface::Commenting,
            AnnotationRecord::Sketching(_) => Interface::Sketching,
            AnnotationRecord::Revising(_) => Interface::Revising,
        }
    }

    pub fn record_id(&self) -> &RecordId {
        match self {
            AnnotationRecord::Ranking(r) => &r.record_id,
            AnnotationRecord::Commenting(r) => &r.record_id,
            AnnotationRecord::Sketching(r) => &r.record_id,
            AnnotationRecord::Revising(r) => &r.record_id,
        }
    }

    fn record_id_mut(&mut self) -> &mut RecordId {
        match self {
            AnnotationRecord::Ranking(r) => &mut r.record_id,
            AnnotationRecord::Commenting(r) => &mut r.record_id,
            AnnotationRecord::Sketching(r) => &mut r.record_id,
            AnnotationRecord::Revising(r) => &mut r.record_id,
        }
    }

    pub fn annotator_id(&self) -> &str {
        match self {
            AnnotationRecord::Ranking(r) => &r.annotator_id,
            AnnotationRecord::Commenting(r) => &r.annotator_id,
            AnnotationRecord::Sketching(r) => &r.annotator_id,
            AnnotationRecord::Revising(r) => &r.annotator_id,
        }
    }

    pub fn elapsed_secs(&self) -> f64 {
        match self {
            AnnotationRecord::Ranking(r) => r.elapsed_secs,
            AnnotationRecord::Commenting(r) => r.elapsed_secs,
            AnnotationRecord::Sketching(r) => r.elapsed_secs,
            AnnotationRecord::Revising(r) => r.elapsed_secs,
        }
    }

    /// Candidates the record is about.
    pub fn candidates(&self) -> Vec<&CandidateId> {
        match self {
            AnnotationRecord::Ranking(r) => vec![&r.left_candidate, &r.right_candidate],
            AnnotationRecord::Commenting(r) => vec![&r.candidate_id],
            AnnotationRecord::Sketching(r) => vec![&r.candidate_id],
            AnnotationRecord::Revising(r) => vec![&r.candidate_id],
        }
    }

    /// Assigns a content-derived id when the submitter did not supply one,
    /// so resubmitting the same record is recognized as a duplicate.
    pub fn with_derived_id(mut self) -> Self {
        if self.record_id().as_str().is_empty() {
            let json = serde_json::to_vec(&self).expect("records serialize");
            let hash = ContentHash::of(&json);
            *self.record_id_mut() = RecordId::new(format!("{}-{}", RecordId::PREFIX, &hash.as_str()[..16]));
        }
        self
    }

    /// Checks the record on its own, without consulting stored state.
    pub fn validate_shape(&self) -> Result<()> {
        non_empty("record_id", self.record_id().as_str())?;
        non_empty("annotator_id", self.annotator_id())?;
        let elapsed = self.elapsed_secs();
        if !(elapsed.is_finite() && elapsed >= 0.0) {
            return Err(Error::validation("elapsed_secs", "must be a non-negative number"));
        }
        match self {
            AnnotationRecord::Ranking(r) => {
                if r.left_candidate == r.right_candidate {
                    return Err(Error::validation("right_candidate", "must differ from left_candidate"));
                }
            }
            AnnotationRecord::Commenting(c) => {
                if c.comments.is_empty() {
                    return Err(Error::validation("comments", "at least one comment is required"));
                }
                for (i, comment) in c.comments.iter().enumerate() {
                    non_empty(&format!("comments[{i}]"), comment)?;
                }
            }
            AnnotationRecord::Sketching(s) => {
                if s.items.is_empty() {
                    return Err(Error::validation("items", "at least one item is required"));
                }
                if !(s.scale_factor.is_finite() && s.scale_factor > 0.0) {
                    return Err(Error::validation("scale_factor", "must be positive"));
                }
                for (i, item) in s.items.iter().enumerate() {
                    non_empty(&format!("items[{i}].comment"), &item.comment)?;
                    item.region
                        .validate()
                        .map_err(|e| Error::validation(format!("items[{i}].region"), e.to_string()))?;
                }
            }
            AnnotationRecord::Revising(r) => {
                if r.original_sketch_ref == r.revised_sketch_ref {
                    return Err(Error::validation("revised_sketch_ref", "revised document is identical to the original"));
                }
            }
        }
        Ok(())
    }

    /// Full validation against stored candidates and blobs.
    pub fn validate(&self, state: &State) -> Result<()> {
        self.validate_shape()?;
        match self {
            AnnotationRecord::Ranking(r) => {
                for (field, id) in [("left_candidate", &r.left_candidate), ("right_candidate", &r.right_candidate)] {
                    let c = state.candidate(id)?;
                    if c.description_id != r.description_id {
                        return Err(Error::validation(field, format!("{id} does not belong to {}", r.description_id)));
                    }
                    if c.screenshot_ref.is_none() {
                        return Err(Error::validation(field, format!("{id} has not been rendered")));
                    }
                }
            }
            AnnotationRecord::Commenting(c) => {
                state.candidate(&c.candidate_id)?;
            }
            AnnotationRecord::Sketching(s) => {
                state.candidate(&s.candidate_id)?;
            }
            AnnotationRecord::Revising(r) => {
                let c = state.candidate(&r.candidate_id)?;
                if let Some(served) = &c.sketch_ref {
                    if *served != r.original_sketch_ref {
                        return Err(Error::validation(
                            "original_sketch_ref",
                            "does not match the document served for this candidate",
                        ));
                    }
                }
                for (field, h) in [("original_sketch_ref", &r.original_sketch_ref), ("revised_sketch_ref", &r.revised_sketch_ref)] {
                    if !state.has_blob(h) {
                        return Err(Error::validation(field, format!("document {h} has not been uploaded")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses line-delimited records, checking each one's shape. Records
/// without an id get a content-derived one.
pub fn read_records(input: impl BufRead) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<records>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Integrity {
            record: format!("line {}", n + 1),
            message: e.to_string(),
        })?;
        let record = record.with_derived_id();
        record.validate_shape().map_err(|e| Error::Integrity {
            record: format!("line {}", n + 1),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceStats {
    pub count: usize,
    pub total_elapsed_secs: f64,
    /// Annotations per minute of recorded work.
    pub per_minute: Option<f64>,
    pub mean_minutes_each: Option<f64>,
    /// Comments per UI (commenting) or annotated regions per UI (sketching).
    pub mean_items_per_ui: Option<f64>,
    /// Mean characters per comment.
    pub mean_text_chars: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyStats {
    pub total: usize,
    pub interfaces: BTreeMap<Interface, InterfaceStats>,
}

impl StudyStats {
    pub fn get(&self, interface: Interface) -> &InterfaceStats {
        &self.interfaces[&interface]
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Per-interface counts, rates and text statistics.
pub fn study_stats<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> StudyStats {
    #[derive(Default)]
    struct Acc {
        count: usize,
        elapsed: f64,
        items: usize,
        chars: usize,
    }
    let mut acc: BTreeMap<Interface, Acc> = Interface::ALL.into_iter().map(|i| (i, Acc::default())).collect();
    for r in records {
        let a = acc.get_mut(&r.interface()).expect("all interfaces present");
        a.count += 1;
        a.elapsed += r.elapsed_secs();
        let texts: Vec<&str> = match r {
            AnnotationRecord::Commenting(c) => c.comments.iter().map(String::as_str).collect(),
            AnnotationRecord::Sketching(s) => s.items.iter().map(|i| i.comment.as_str()).collect(),
            _ => Vec::new(),
        };
        a.items += texts.len();
        a.chars += texts.iter().map(|t| t.chars().count()).sum::<usize>();
    }
    let interfaces = acc
        .into_iter()
        .map(|(i, a)| {
            let textual = matches!(i, Interface::Commenting | Interface::Sketching);
            let stats = InterfaceStats {
                count: a.count,
                total_elapsed_secs: a.elapsed,
                per_minute: ratio(a.count as f64, a.elapsed / 60.0),
                mean_minutes_each: ratio(a.elapsed / 60.0, a.count as f64),
                mean_items_per_ui: if textual { ratio(a.items as f64, a.count as f64) } else { None },
                mean_text_chars: if textual { ratio(a.chars as f64, a.items as f64) } else { None },
            };
            (i, stats)
        })
        .collect::<BTreeMap<_, _>>();
    StudyStats {
        total: interfaces.values().map(|s| s.count).sum(),
        interfaces,
    }
}
