use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, CommentSet, Interface, RankingJudgment, RevisionRecord, SketchSet};
use crate::corpus::{ArtifactKind, ArtifactRecord, PreferencePair, Provenance, Store};
use crate::error::{Error, Result};
use crate::gateway::{self, Backends};
use crate::hash::ContentHash;
use crate::htmlkit::{match_annotation, snippet, GeometryMap};
use crate::ids::{PairId, RecordId, CandidateId};

fn transform_err(record: &RecordId, e: impl std::fmt::Display) -> Error {
    Error::Transform {
        record: record.to_string(),
        message: e.to_string(),
    }
}

fn pair(store: &Store, id: &PairId) -> PreferencePair {
    store
        .read()
        .pairs()
        .iter()
        .rev()
        .find(|p| &p.id == id)
        .cloned()
        .expect("pair was just committed")
}

/// The pair already derived from `record`, if any.
fn existing(store: &Store, record: &RecordId) -> Option<PreferencePair> {
    let id = store.read().pair_for_record(record).cloned()?;
    Some(pair(store, &id))
}

fn emit(
    store: &Store,
    record: &RecordId,
    description: &crate::ids::DescriptionId,
    chosen: ContentHash,
    rejected: ContentHash,
    provenance: Provenance,
    annotator: &str,
) -> Result<PreferencePair> {
    let id = store
        .add_pair(description, chosen, rejected, provenance, annotator, Some(record.clone()))
        .map_err(|e| transform_err(record, e))?;
    Ok(pair(store, &id))
}

/// Winner's screenshot is chosen, loser's rejected.
pub fn pairs_from_ranking(store: &Store, j: &RankingJudgment) -> Result<PreferencePair> {
    if let Some(p) = existing(store, &j.record_id) {
        return Ok(p);
    }
    AnnotationRecord::Ranking(j.clone()).validate(&store.read())?;
    let (winner, loser) = j.winner_and_loser();
    let (chosen, rejected) = {
        let state = store.read();
        let shot = |id| state.candidate(id).map(|c| c.screenshot_ref.clone().expect("validated"));
        (shot(winner)?, shot(loser)?)
    };
    emit(store, &j.record_id, &j.description_id, chosen, rejected, Provenance::Ranking, &j.annotator_id)
}

struct Original {
    description_id: crate::ids::DescriptionId,
    screenshot: ContentHash,
    geometry: Option<ContentHash>,
    html: String,
}

fn original(store: &Store, record: &RecordId, candidate: &CandidateId) -> Result<Original> {
    let (description_id, screenshot, geometry) = {
        let state = store.read();
        let c = state.candidate(candidate)?;
        let shot = c
            .screenshot_ref
            .clone()
            .ok_or_else(|| transform_err(record, format!("{candidate} has not been rendered")))?;
        (c.description_id.clone(), shot, c.geometry_ref.clone())
    };
    Ok(Original {
        description_id,
        screenshot,
        geometry,
        html: store.candidate_html(candidate)?,
    })
}

/// Renders `revised` before persisting it, so a failed render leaves no
/// trace; then stores it as a child candidate and returns its screenshot.
fn persist_revision(store: &Store, backends: &Backends, record: &RecordId, parent: &CandidateId, revised: &str) -> Result<ContentHash> {
    let result = gateway::render_page(backends, revised).map_err(|e| transform_err(record, e))?;
    let child = store.put_revision(parent, revised)?;
    let refs = gateway::store_render(store, backends, &child, revised, &result, false)?;
    Ok(refs.screenshot)
}

/// Applies the comments with the edit model, re-renders, and prefers the
/// revision over the original.
pub fn pairs_from_comments(store: &Store, backends: &Backends, c: &CommentSet) -> Result<PreferencePair> {
    if let Some(p) = existing(store, &c.record_id) {
        return Ok(p);
    }
    AnnotationRecord::Commenting(c.clone()).validate(&store.read())?;
    let orig = original(store, &c.record_id, &c.candidate_id)?;
    let revised = gateway::improve_with_comments(backends.llm.as_ref(), &backends.profile, &orig.html, &c.comments)
        .map_err(|e| transform_err(&c.record_id, e))?;
    let chosen = persist_revision(store, backends, &c.record_id, &c.candidate_id, &revised)?;
    emit(store, &c.record_id, &orig.description_id, chosen, orig.screenshot, Provenance::Commenting, &c.annotator_id)
}

/// Grounds each sketch item to the markup of its best-matching element.
/// Returns `(comment, snippet)` in item order.
pub fn ground_items(s: &SketchSet, geometry: &GeometryMap, html: &str) -> Result<Vec<(String, String)>> {
    s.items
        .iter()
        .map(|item| {
            let css = item.region.to_css(s.scale_factor);
            let element = match_annotation(&css, geometry)?;
            Ok((item.comment.clone(), snippet(element, html)?))
        })
        .collect()
}

/// Like [`pairs_from_comments`], with every comment grounded to the
/// element its region points at.
pub fn pairs_from_sketch(store: &Store, backends: &Backends, s: &SketchSet) -> Result<PreferencePair> {
    if let Some(p) = existing(store, &s.record_id) {
        return Ok(p);
    }
    AnnotationRecord::Sketching(s.clone()).validate(&store.read())?;
    let orig = original(store, &s.record_id, &s.candidate_id)?;
    let geometry_ref = orig
        .geometry
        .clone()
        .ok_or_else(|| transform_err(&s.record_id, format!("{} has no geometry", s.candidate_id)))?;
    let geometry = GeometryMap::from_text(&store.blob_text(&geometry_ref)?)?;
    let grounded = ground_items(s, &geometry, &orig.html).map_err(|e| transform_err(&s.record_id, e))?;
    let revised = gateway::improve_with_regions(backends.llm.as_ref(), &backends.profile, &orig.html, &grounded)
        .map_err(|e| transform_err(&s.record_id, e))?;
    let chosen = persist_revision(store, backends, &s.record_id, &s.candidate_id, &revised)?;
    emit(store, &s.record_id, &orig.description_id, chosen, orig.screenshot, Provenance::Sketching, &s.annotator_id)
}

/// Prefers the preview of the designer's revised document over the
/// preview of the original. Both sides are design-tool previews.
pub fn pairs_from_revision(store: &Store, backends: &Backends, r: &RevisionRecord) -> Result<PreferencePair> {
    if let Some(p) = existing(store, &r.record_id) {
        return Ok(p);
    }
    AnnotationRecord::Revising(r.clone()).validate(&store.read())?;
    let description_id = store.read().candidate(&r.candidate_id)?.description_id.clone();
    let mut previews = Vec::with_capacity(2);
    for doc_ref in [&r.revised_sketch_ref, &r.original_sketch_ref] {
        let doc = store.blob(doc_ref)?;
        let png = gateway::with_retry(backends.profile.retry_budget, |_| gateway::preview(backends.sketch.as_ref(), &doc))
            .map_err(|e| transform_err(&r.record_id, e))?;
        let hash = store.put_blob(&png)?;
        store.register_artifact(ArtifactRecord {
            hash: hash.clone(),
            kind: ArtifactKind::SketchPreview,
            description_id: Some(description_id.clone()),
            candidate_id: Some(r.candidate_id.clone()),
        })?;
        previews.push(hash);
    }
    let rejected = previews.pop().expect("two previews");
    let chosen = previews.pop().expect("two previews");
    emit(store, &r.record_id, &description_id, chosen, rejected, Provenance::Revising, &r.annotator_id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformFailure {
    pub record_id: RecordId,
    pub interface: Interface,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransformReport {
    pub transformed: BTreeMap<Interface, usize>,
    /// Records whose pair already existed.
    pub already_done: usize,
    pub failures: Vec<TransformFailure>,
}

impl TransformReport {
    pub fn total_transformed(&self) -> usize {
        self.transformed.values().sum()
    }
}

/// Transforms every stored annotation that has no pair yet. Failures are
/// collected and the record is skipped; re-running is a no-op for records
/// already transformed.
pub fn transform_all(store: &Store, backends: &Backends) -> TransformReport {
    let (records, done): (Vec<AnnotationRecord>, Vec<bool>) = {
        let state = store.read();
        state
            .annotations()
            .map(|r| (r.clone(), state.pair_for_record(r.record_id()).is_some()))
            .unzip()
    };
    let mut report = TransformReport::default();
    for (record, done) in records.into_iter().zip(done) {
        if done {
            report.already_done += 1;
            continue;
        }
        let out = match &record {
            AnnotationRecord::Ranking(j) => pairs_from_ranking(store, j),
            AnnotationRecord::Commenting(c) => pairs_from_comments(store, backends, c),
            AnnotationRecord::Sketching(s) => pairs_from_sketch(store, backends, s),
            AnnotationRecord::Revising(r) => pairs_from_revision(store, backends, r),
        };
        match out {
            Ok(_) => *report.transformed.entry(record.interface()).or_default() += 1,
            Err(e) => {
                log::warn!("transform of {} failed: {e}", record.record_id());
                report.failures.push(TransformFailure {
                    record_id: record.record_id().clone(),
                    interface: record.interface(),
                    message: e.to_string(),
                });
            }
        }
    }
    report
}
